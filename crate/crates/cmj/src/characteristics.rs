//! Scoring rules φ: each individual u contributes φ_u(t − S(u)) to the
//! population score Z_t^φ, where φ may depend on the individual's own
//! reproduction sample (ξ_u, ζ_u) and is evaluated at its current age.
//!
//! Every built-in characteristic carries an exact mean function
//! E[φ](t) as a piecewise exponential-polynomial, which is what the
//! analytic pipeline integrates when it computes expansion coefficients
//! a_λ and the renewal mean of Z_t^φ.
//!
//! The martingale-generating characteristic `PhiLambda(λ, k, i, j)` scores
//! the (i,j) entry of Σ_m 1{age < X_m} exp(λ, age − X_m, k); summing it over
//! the population and multiplying by exp(λ, −t, k) yields exactly the
//! martingale statistics W_t^{(j)}(λ) of the coming generation.

use num_complex::Complex64;

use crate::laws::{LawKind, LifetimeDist, ReproductionLaw, ReproductionSample};
use crate::{Error, Result};

/// Binomial coefficient as f64 (exact for all sizes used here).
pub(crate) fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    let mut value = 1.0;
    for i in 1..=k {
        value = value * (n - k + i) as f64 / i as f64;
    }
    value
}

/// One piece `coeff · t^power · e^{rate·t}` supported on [lo, hi).
#[derive(Debug, Clone, PartialEq)]
pub struct ExpPolyTerm {
    pub coeff: Complex64,
    pub rate: Complex64,
    pub power: u32,
    pub lo: f64,
    /// Right-open end of the support; `f64::INFINITY` for unbounded pieces.
    pub hi: f64,
}

/// A finite sum of exponential-polynomial pieces describing E[φ](t);
/// identically zero left of every piece.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MeanFunction {
    pub terms: Vec<ExpPolyTerm>,
}

impl MeanFunction {
    /// Builds a single-piece mean `coeff · t^power · e^{rate t}` on [lo, hi).
    pub fn piece(coeff: Complex64, rate: Complex64, power: u32, lo: f64, hi: f64) -> Self {
        Self { terms: vec![ExpPolyTerm { coeff, rate, power, lo, hi }] }
    }

    /// The constant-1 indicator of [lo, hi).
    pub fn indicator(lo: f64, hi: f64) -> Self {
        Self::piece(Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0), 0, lo, hi)
    }

    /// Pointwise value (complex in general; real for all scalar built-ins).
    pub fn evaluate(&self, t: f64) -> Complex64 {
        let mut value = Complex64::new(0.0, 0.0);
        for term in &self.terms {
            if t >= term.lo && t < term.hi {
                value += term.coeff * t.powi(term.power as i32) * (term.rate * t).exp();
            }
        }
        value
    }

    /// Real value; meaningful for real-valued characteristics.
    pub fn evaluate_re(&self, t: f64) -> f64 {
        self.evaluate(t).re
    }

    /// Smallest support point and largest right end (∞ if any piece is unbounded).
    pub fn support(&self) -> (f64, f64) {
        let lo = self.terms.iter().map(|t| t.lo).fold(f64::INFINITY, f64::min);
        let hi = self.terms.iter().map(|t| t.hi).fold(f64::NEG_INFINITY, f64::max);
        (lo, hi)
    }

    /// Bilateral Laplace transform ∫ E[φ](x) e^{−zx} dx (Lebesgue case), in
    /// closed form piece by piece. Unbounded pieces require Re(rate − z) < 0.
    pub fn laplace(&self, z: Complex64) -> Result<Complex64> {
        let mut acc = Complex64::new(0.0, 0.0);
        for term in &self.terms {
            let c = term.rate - z;
            if term.hi.is_infinite() && c.re >= 0.0 {
                return Err(Error::Config(format!(
                    "mean transform diverges at z = {z}: unbounded piece with Re(rate - z) = {}",
                    c.re
                )));
            }
            acc += term.coeff * exp_poly_integral(term.power, c, term.lo, term.hi);
        }
        Ok(acc)
    }
}

/// ∫_{lo}^{hi} x^n e^{cx} dx in closed form; hi may be +∞ when Re c < 0.
///
/// Uses the explicit antiderivative e^{cx} Σ_j (−1)^{n−j} (n!/j!) x^j / c^{n−j+1}
/// away from c = 0 and a rapidly convergent Taylor expansion of e^{cx} when
/// |c|·hi is small enough for the antiderivative to cancel badly.
pub(crate) fn exp_poly_integral(n: u32, c: Complex64, lo: f64, hi: f64) -> Complex64 {
    debug_assert!(lo <= hi);
    debug_assert!(hi.is_finite() || c.re < 0.0, "unbounded integral needs Re c < 0");
    if lo == hi {
        return Complex64::new(0.0, 0.0);
    }
    if hi.is_finite() && c.norm() * hi.max(lo.abs()) < 0.5 {
        // Σ_q c^q/q! · (hi^{n+q+1} − lo^{n+q+1})/(n+q+1); geometric-factorial
        // decay makes ~20 terms spare at |c|·hi < 1/2.
        let mut acc = Complex64::new(0.0, 0.0);
        let mut cq = Complex64::new(1.0, 0.0);
        for q in 0..40u32 {
            let p = (n + q + 1) as i32;
            let piece = cq * (hi.powi(p) - lo.powi(p)) / f64::from(n + q + 1);
            acc += piece;
            if piece.norm() <= 1e-17 * acc.norm().max(1e-300) && q > 4 {
                break;
            }
            cq *= c / f64::from(q + 1);
        }
        return acc;
    }
    let anti = |x: f64| -> Complex64 {
        // e^{cx} · Σ_{j=0}^{n} (−1)^{n−j} (n!/j!) x^j / c^{n−j+1}
        let mut sum = Complex64::new(0.0, 0.0);
        let mut factor = Complex64::new(1.0, 0.0) / c; // (n!/j!)/c^{n-j+1} at j = n
        let mut sign = 1.0;
        for j in (0..=n).rev() {
            sum += sign * factor * x.powi(j as i32);
            factor *= f64::from(j) / c;
            sign = -sign;
        }
        (c * x).exp() * sum
    };
    let upper = if hi.is_finite() {
        anti(hi)
    } else {
        Complex64::new(0.0, 0.0) // Re c < 0 ⇒ the antiderivative vanishes at ∞
    };
    upper - anti(lo)
}

/// Precomputed tables for the centering construction χ_f on the lattice:
/// the renewal mean m^f(n) and its convolution (μ∗m^f)(n) for 0 ≤ n ≤ n_max,
/// both zero for n < 0.
#[derive(Debug, Clone, PartialEq)]
pub struct CenteringTable {
    mean: Vec<f64>,
    convolved: Vec<f64>,
}

impl CenteringTable {
    fn mean_at(&self, n: i64) -> f64 {
        if n < 0 {
            0.0
        } else {
            self.mean[n as usize]
        }
    }

    fn convolved_at(&self, n: i64) -> f64 {
        if n < 0 {
            0.0
        } else {
            self.convolved[n as usize]
        }
    }
}

/// A per-individual scoring rule evaluated at the individual's age.
#[derive(Debug, Clone, PartialEq)]
pub enum Characteristic {
    /// 1 while the individual is alive: 1_{[0,ζ)}(age).
    Alive,
    /// 1 from birth on: 1_{[0,∞)}(age); Z counts all individuals born.
    BornCounter,
    /// 1_{[0,a)}(age): individuals born within the trailing window of width a.
    Window { width: f64 },
    /// Lattice generation indicator 1_{[0,1)}(age): at integer times t it
    /// counts exactly the individuals born at t.
    GenerationCounter,
    /// A deterministic function of age.
    Deterministic { f: MeanFunction },
    /// Entry (row, col), 1-based, of the matrix characteristic
    /// Σ_m 1{0 ≤ age < X_m} exp(λ, age − X_m, k). `lambda` must be a root of
    /// 𝓛μ(z) = 1 with multiplicity ≥ k for the martingale identities to hold.
    PhiLambda { lambda: Complex64, k: usize, row: usize, col: usize },
    /// factor · inner.
    Scaled { factor: f64, inner: Box<Characteristic> },
    /// Sum of the parts.
    Sum { parts: Vec<Characteristic> },
    /// The centered characteristic χ_f(age) = Σ_m m^f(age−X_m) − (μ∗m^f)(age)
    /// for a deterministic lattice f; satisfies Z_t^f − m^f(t) = Z_t^{χ_f}
    /// pathwise and E[χ_f(t)] = 0 for every t.
    Centered { table: CenteringTable },
}

impl Characteristic {
    /// Convenience constructor for 1_{[0,width)}.
    pub fn window(width: f64) -> Result<Self> {
        if width > 0.0 && width.is_finite() {
            Ok(Characteristic::Window { width })
        } else {
            Err(Error::Config(format!("window width must be positive and finite (got {width})")))
        }
    }

    /// Complex value of φ(sample, age). Every built-in except `PhiLambda`
    /// with complex λ is real-valued.
    pub fn evaluate_complex(&self, sample: &ReproductionSample, age: f64) -> Complex64 {
        match self {
            Characteristic::Alive => {
                Complex64::new(if age >= 0.0 && age < sample.lifetime { 1.0 } else { 0.0 }, 0.0)
            }
            Characteristic::BornCounter => Complex64::new(if age >= 0.0 { 1.0 } else { 0.0 }, 0.0),
            Characteristic::Window { width } => {
                Complex64::new(if age >= 0.0 && age < *width { 1.0 } else { 0.0 }, 0.0)
            }
            Characteristic::GenerationCounter => {
                Complex64::new(if (0.0..1.0).contains(&age) { 1.0 } else { 0.0 }, 0.0)
            }
            Characteristic::Deterministic { f } => f.evaluate(age),
            Characteristic::PhiLambda { lambda, k, row, col } => {
                debug_assert!(*row >= *col && *row <= *k && *col >= 1);
                let mut value = Complex64::new(0.0, 0.0);
                for &x in &sample.offspring_delays {
                    if age >= 0.0 && age < x {
                        let s = age - x;
                        value += binomial(row - 1, col - 1)
                            * s.powi((row - col) as i32)
                            * (lambda * s).exp();
                    }
                }
                value
            }
            Characteristic::Scaled { factor, inner } => *factor * inner.evaluate_complex(sample, age),
            Characteristic::Sum { parts } => {
                parts.iter().map(|p| p.evaluate_complex(sample, age)).sum()
            }
            Characteristic::Centered { table } => {
                if age < 0.0 {
                    return Complex64::new(0.0, 0.0);
                }
                let n = age.floor() as i64;
                let mut value = 0.0;
                for &x in &sample.offspring_delays {
                    value += table.mean_at(n - x as i64);
                }
                Complex64::new(value - table.convolved_at(n), 0.0)
            }
        }
    }

    /// Real value of φ(sample, age); the real part for matrix entries.
    pub fn evaluate(&self, sample: &ReproductionSample, age: f64) -> f64 {
        self.evaluate_complex(sample, age).re
    }

    /// True when φ(sample, age) does not depend on the sample, so scoring
    /// needs only the ages (enables generation-level fast paths).
    pub fn is_deterministic(&self) -> bool {
        match self {
            Characteristic::BornCounter
            | Characteristic::Window { .. }
            | Characteristic::GenerationCounter
            | Characteristic::Deterministic { .. } => true,
            Characteristic::Scaled { inner, .. } => inner.is_deterministic(),
            Characteristic::Sum { parts } => parts.iter().all(|p| p.is_deterministic()),
            _ => false,
        }
    }

    /// Deterministic value at the given age (for kinds where
    /// [`Self::is_deterministic`] holds).
    pub fn deterministic_value(&self, age: f64) -> f64 {
        const NO_SAMPLE: &ReproductionSample =
            &ReproductionSample { offspring_delays: Vec::new(), lifetime: f64::INFINITY, mark: 0.0 };
        debug_assert!(self.is_deterministic());
        self.evaluate(NO_SAMPLE, age)
    }

    /// Exact mean function E[φ](t) for this characteristic under the law.
    ///
    /// Errors with a configuration error on unsupported pairs: `Centered`
    /// has no closed-form descriptor (its mean is identically 0 by
    /// construction), and `PhiLambda` means are available for lattice laws
    /// only (for absolutely continuous μ the pending-child average is not
    /// exponential-polynomial).
    pub fn mean_function(&self, law: &ReproductionLaw) -> Result<MeanFunction> {
        match self {
            Characteristic::Alive => match law.kind() {
                LawKind::PoissonLifetime { lifetime, .. } => Ok(survival_function(lifetime)),
                // Everyone lives forever: same mean as BornCounter.
                _ => Ok(MeanFunction::indicator(0.0, f64::INFINITY)),
            },
            Characteristic::BornCounter => Ok(MeanFunction::indicator(0.0, f64::INFINITY)),
            Characteristic::Window { width } => Ok(MeanFunction::indicator(0.0, *width)),
            Characteristic::GenerationCounter => Ok(MeanFunction::indicator(0.0, 1.0)),
            Characteristic::Deterministic { f } => Ok(f.clone()),
            Characteristic::PhiLambda { lambda, k, row, col } => {
                phi_lambda_mean(law, *lambda, *k, *row, *col)
            }
            Characteristic::Scaled { factor, inner } => {
                let mut mean = inner.mean_function(law)?;
                for term in &mut mean.terms {
                    term.coeff *= *factor;
                }
                Ok(mean)
            }
            Characteristic::Sum { parts } => {
                let mut mean = MeanFunction::default();
                for part in parts {
                    mean.terms.extend(part.mean_function(law)?.terms);
                }
                Ok(mean)
            }
            Characteristic::Centered { .. } => Err(Error::Config(
                "centered characteristics have mean 0 by construction; no descriptor".into(),
            )),
        }
    }
}

/// P(ζ > t) on [0, ∞) as an exponential-polynomial.
fn survival_function(lifetime: &LifetimeDist) -> MeanFunction {
    let one = Complex64::new(1.0, 0.0);
    match *lifetime {
        LifetimeDist::Exponential { rate } => {
            MeanFunction::piece(one, Complex64::new(-rate, 0.0), 0, 0.0, f64::INFINITY)
        }
        LifetimeDist::Deterministic { value } => MeanFunction::indicator(0.0, value),
        LifetimeDist::Uniform { lo, hi } => MeanFunction {
            terms: vec![
                ExpPolyTerm { coeff: one, rate: Complex64::new(0.0, 0.0), power: 0, lo: 0.0, hi: lo },
                // (hi − t)/(hi − lo) on [lo, hi)
                ExpPolyTerm {
                    coeff: Complex64::new(hi / (hi - lo), 0.0),
                    rate: Complex64::new(0.0, 0.0),
                    power: 0,
                    lo,
                    hi,
                },
                ExpPolyTerm {
                    coeff: Complex64::new(-1.0 / (hi - lo), 0.0),
                    rate: Complex64::new(0.0, 0.0),
                    power: 1,
                    lo,
                    hi,
                },
            ],
        },
    }
}

/// E[φ_λ(i,j)](t): with M(t) := ∫_{[0,t]} exp(λ,−x,k) μ(dx), the pending-child
/// average equals [exp(λ,t,k)(I_k − M(t))]_{i,j}, a polynomial-exponential on
/// each lattice segment [n, n+1). Vanishes beyond the largest atom whenever λ
/// is a root of multiplicity ≥ k, because then M(∞) = I_k.
#[allow(clippy::needless_range_loop)] // l is a 1-based matrix index, not a position
fn phi_lambda_mean(
    law: &ReproductionLaw,
    lambda: Complex64,
    k: usize,
    row: usize,
    col: usize,
) -> Result<MeanFunction> {
    if row < col || row > k || col < 1 {
        return Err(Error::Config(format!(
            "matrix characteristic entry ({row},{col}) outside the lower triangle of size {k}"
        )));
    }
    let atoms: Vec<(u32, f64)> = match law.kind() {
        LawKind::GaltonWatson { .. } => vec![(1, law.mean_offspring())],
        LawKind::LatticeAtoms { atoms, .. } => atoms.clone(),
        _ => {
            return Err(Error::Config(
                "mean of the martingale characteristic is only available for lattice laws".into(),
            ))
        }
    };
    let max_atom = atoms.iter().map(|&(a, _)| a).max().unwrap() as usize;
    // M_n accumulates w · exp(λ, −a, k) over atoms a ≤ n; entry (l, j) of
    // exp(λ, −a, k) is C(l−1, j−1) (−a)^{l−j} e^{−λa}.
    let mut m_col = vec![Complex64::new(0.0, 0.0); k + 1]; // M_n[l][col], 1-based l
    let mut mean = MeanFunction::default();
    for n in 0..max_atom {
        for &(a, w) in atoms.iter().filter(|&&(a, _)| a as usize == n) {
            let e = (-lambda * a as f64).exp();
            for l in col..=k {
                m_col[l] +=
                    w * binomial(l - 1, col - 1) * (-(a as f64)).powi((l - col) as i32) * e;
            }
        }
        // [exp(λ,t,k)(I − M_n)]_{row,col} = Σ_l e^{λt} C(row−1,l−1) t^{row−l} (I−M_n)_{l,col}
        for l in col..=row {
            let identity = if l == col { Complex64::new(1.0, 0.0) } else { Complex64::new(0.0, 0.0) };
            let a_lc = identity - m_col[l];
            if a_lc.norm() == 0.0 {
                continue;
            }
            mean.terms.push(ExpPolyTerm {
                coeff: binomial(row - 1, l - 1) * a_lc,
                rate: lambda,
                power: (row - l) as u32,
                lo: n as f64,
                hi: n as f64 + 1.0,
            });
        }
    }
    Ok(mean)
}

/// Builds the centered characteristic χ_f from a deterministic lattice f and
/// its renewal mean m^f sampled at the integers 0..=n_max (`mean_values`).
/// Scoring χ_f reproduces the pathwise identity Z_t^f − m^f(t) = Z_t^{χ_f}
/// and E[χ_f(t)] = 0 at every age.
pub fn centered_characteristic(
    f: &Characteristic,
    law: &ReproductionLaw,
    mean_values: &[f64],
) -> Result<Characteristic> {
    if !f.is_deterministic() {
        return Err(Error::Config("centering requires a deterministic characteristic".into()));
    }
    let atoms: Vec<(u32, f64)> = match law.kind() {
        LawKind::GaltonWatson { .. } => vec![(1, law.mean_offspring())],
        LawKind::LatticeAtoms { atoms, .. } => atoms.clone(),
        _ => return Err(Error::Config("centering is implemented for lattice laws".into())),
    };
    if mean_values.is_empty() {
        return Err(Error::Config("centering needs the renewal mean m^f on 0..=n_max".into()));
    }
    let mean = mean_values.to_vec();
    let convolved = (0..mean.len())
        .map(|n| {
            atoms
                .iter()
                .map(|&(a, w)| if n >= a as usize { w * mean[n - a as usize] } else { 0.0 })
                .sum()
        })
        .collect();
    Ok(Characteristic::Centered { table: CenteringTable { mean, convolved } })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::laws::ReproductionLaw;
    use crate::rng::RandomStream;

    fn sample_with_delays(delays: Vec<f64>) -> ReproductionSample {
        ReproductionSample { offspring_delays: delays, lifetime: f64::INFINITY, mark: 0.0 }
    }

    #[test]
    fn indicator_characteristics_respect_boundaries() {
        let s = sample_with_delays(vec![1.0]);
        assert_eq!(Characteristic::Alive.evaluate(&s, 5.0), 1.0);
        assert_eq!(Characteristic::Alive.evaluate(&s, -0.5), 0.0);
        let w = Characteristic::window(1.0).unwrap();
        assert_eq!(w.evaluate(&s, 0.0), 1.0);
        assert_eq!(w.evaluate(&s, 1.0), 0.0, "windows are right-open");
        assert_eq!(Characteristic::BornCounter.evaluate(&s, 0.0), 1.0);
        assert_eq!(Characteristic::BornCounter.evaluate(&s, -1e-12), 0.0);
    }

    #[test]
    fn alive_with_finite_lifetime() {
        let mut s = sample_with_delays(vec![]);
        s.lifetime = 2.5;
        assert_eq!(Characteristic::Alive.evaluate(&s, 2.4), 1.0);
        assert_eq!(Characteristic::Alive.evaluate(&s, 2.5), 0.0);
    }

    #[test]
    fn phi_lambda_counts_only_pending_children() {
        let lambda = Complex64::new(0.3, 0.2);
        let phi = Characteristic::PhiLambda { lambda, k: 1, row: 1, col: 1 };
        let s = sample_with_delays(vec![2.0, 3.0]);
        // At age 2.5 only the child at 3 is pending: e^{λ(2.5−3)}.
        let expected = (lambda * (2.5 - 3.0)).exp();
        let got = phi.evaluate_complex(&s, 2.5);
        assert!((got - expected).norm() < 1e-15);
        assert_eq!(phi.evaluate_complex(&s, 3.0).norm(), 0.0);
        // At age 1 both are pending.
        let both = (lambda * (1.0 - 2.0)).exp() + (lambda * (1.0 - 3.0)).exp();
        assert!((phi.evaluate_complex(&s, 1.0) - both).norm() < 1e-15);
    }

    #[test]
    fn mean_functions_match_monte_carlo_averages() {
        let laws = [
            ReproductionLaw::poisson_lifetime(2.0, crate::laws::LifetimeDist::Exponential { rate: 1.0 })
                .unwrap(),
            ReproductionLaw::poisson_lifetime(1.5, crate::laws::LifetimeDist::Uniform { lo: 0.5, hi: 2.0 })
                .unwrap(),
        ];
        let chars = [Characteristic::Alive, Characteristic::BornCounter, Characteristic::window(0.7).unwrap()];
        let n = 100_000;
        for (li, law) in laws.iter().enumerate() {
            for (ci, ch) in chars.iter().enumerate() {
                let mean = ch.mean_function(law).unwrap();
                for &age in &[0.3, 0.9, 1.7] {
                    let mut rng = RandomStream::for_replicate(17, (li * 10 + ci) as u64);
                    let mut sum = 0.0;
                    let mut sum_sq = 0.0;
                    for _ in 0..n {
                        let s = law.sample_reproduction(&mut rng);
                        let v = ch.evaluate(&s, age);
                        sum += v;
                        sum_sq += v * v;
                    }
                    let avg = sum / n as f64;
                    let se = ((sum_sq / n as f64 - avg * avg).max(0.0) / n as f64).sqrt();
                    let exact = mean.evaluate_re(age);
                    assert!(
                        (avg - exact).abs() <= 4.0 * se + 1e-9,
                        "law {li} char {ci} age {age}: MC {avg} ± {se} vs exact {exact}"
                    );
                }
            }
        }
    }

    #[test]
    fn phi_lambda_mean_on_galton_watson_lattice() {
        // GW m=2 at λ = α = log 2, k = 1: E[φ_α](t) = e^{αt} on [0,1) and 0
        // beyond (no child is pending past age 1).
        let law = ReproductionLaw::galton_watson(vec![(2, 1.0)]).unwrap();
        let alpha = 2.0f64.ln();
        let phi = Characteristic::PhiLambda {
            lambda: Complex64::new(alpha, 0.0),
            k: 1,
            row: 1,
            col: 1,
        };
        let mean = phi.mean_function(&law).unwrap();
        assert!((mean.evaluate_re(0.0) - 1.0).abs() < 1e-14);
        assert!((mean.evaluate_re(0.5) - (alpha * 0.5).exp()).abs() < 1e-14);
        assert_eq!(mean.evaluate_re(1.0), 0.0);
        assert_eq!(mean.evaluate_re(7.3), 0.0);
        // And the Monte Carlo average agrees (deterministic here).
        let s = law.sample_reproduction(&mut RandomStream::from_seed(0));
        assert!((phi.evaluate(&s, 0.5) - 2.0 * (alpha * (0.5 - 1.0)).exp()).abs() < 1e-14);
        assert!((phi.evaluate(&s, 0.5) - mean.evaluate_re(0.5)).abs() < 1e-14);
    }

    #[test]
    fn centering_is_mean_zero_and_deterministic_reproduction_centers_to_zero() {
        // N ≡ 2: χ_f(t) = 2 m^f(t−1) − 2 m^f(t−1) = 0 for every sample.
        let law = ReproductionLaw::galton_watson(vec![(2, 1.0)]).unwrap();
        let mean_values: Vec<f64> = (0..=10).map(|n| 2f64.powi(n + 1) - 1.0).collect();
        let chi = centered_characteristic(&Characteristic::BornCounter, &law, &mean_values).unwrap();
        let s = law.sample_reproduction(&mut RandomStream::from_seed(0));
        for age in 0..=9 {
            assert_eq!(chi.evaluate(&s, age as f64), 0.0);
        }

        // N ∈ {1,3}: χ_f(t) = (N−2)·m^f(t−1); the sample average is ≈ 0.
        let law = ReproductionLaw::galton_watson(vec![(1, 0.5), (3, 0.5)]).unwrap();
        let chi = centered_characteristic(&Characteristic::BornCounter, &law, &mean_values).unwrap();
        let mut rng = RandomStream::from_seed(5);
        let age = 6.0;
        let n = 100_000;
        let (mut sum, mut sum_sq) = (0.0, 0.0);
        for _ in 0..n {
            let s = law.sample_reproduction(&mut rng);
            let v = chi.evaluate(&s, age);
            let expected = (s.offspring_delays.len() as f64 - 2.0) * mean_values[5];
            assert_eq!(v, expected, "χ_f(t) = (N−2)·m^f(t−1) for this law");
            sum += v;
            sum_sq += v * v;
        }
        let avg = sum / n as f64;
        let se = ((sum_sq / n as f64 - avg * avg).max(0.0) / n as f64).sqrt();
        assert!(avg.abs() <= 4.0 * se, "centered mean {avg} ± {se}");
    }

    #[test]
    fn zero_characteristic_centers_to_zero() {
        let law = ReproductionLaw::galton_watson(vec![(1, 0.5), (3, 0.5)]).unwrap();
        let zero = Characteristic::Deterministic { f: MeanFunction::default() };
        let chi = centered_characteristic(&zero, &law, &[0.0; 8]).unwrap();
        let s = law.sample_reproduction(&mut RandomStream::from_seed(9));
        for age in 0..=6 {
            assert_eq!(chi.evaluate(&s, age as f64), 0.0);
        }
    }

    #[test]
    fn step_characteristics_are_constant_between_integers() {
        let law = ReproductionLaw::galton_watson(vec![(1, 0.5), (3, 0.5)]).unwrap();
        let s = law.sample_reproduction(&mut RandomStream::from_seed(3));
        let chars = [
            Characteristic::Alive,
            Characteristic::BornCounter,
            Characteristic::window(2.0).unwrap(),
            Characteristic::GenerationCounter,
        ];
        for ch in &chars {
            for age in [-0.7, 0.0, 0.3, 0.99, 1.0, 1.5, 2.2, 5.9] {
                assert_eq!(ch.evaluate(&s, age), ch.evaluate(&s, age.floor()), "{ch:?} at {age}");
            }
        }
    }

    #[test]
    fn combinators_scale_and_add() {
        let s = sample_with_delays(vec![1.0]);
        let scaled = Characteristic::Scaled {
            factor: 3.0,
            inner: Box::new(Characteristic::BornCounter),
        };
        assert_eq!(scaled.evaluate(&s, 2.0), 3.0);
        let sum = Characteristic::Sum {
            parts: vec![Characteristic::BornCounter, Characteristic::GenerationCounter],
        };
        assert_eq!(sum.evaluate(&s, 0.5), 2.0);
        assert_eq!(sum.evaluate(&s, 1.5), 1.0);
        assert!(scaled.is_deterministic() && sum.is_deterministic());
        let law = ReproductionLaw::galton_watson(vec![(2, 1.0)]).unwrap();
        let mean = scaled.mean_function(&law).unwrap();
        assert_eq!(mean.evaluate_re(4.0), 3.0);
    }
}
