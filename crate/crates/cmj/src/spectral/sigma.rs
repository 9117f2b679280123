//! Limit variances of the fluctuation CLTs.
//!
//! With the root expansion subtracted from the renewal mean, the normalized
//! fluctuations of Z_t^φ have variance governed either by
//!
//!   σ² = ∫ Var[φ(x) + (h^φ ∗ ξ)(x)] e^{−αx} ℓ(dx),
//!       h^φ(t) = m_t^φ − Σ_{λ∈Λ≥} e^{λt} Σ_l a_{λ,l} t^l,
//!
//! when no critical-line root carries randomness, or by the ρ_l of the
//! critical-line roots otherwise. σ² can equivalently be computed as a
//! contour integral over the critical line Re z = α/2:
//!
//!   σ² = (1/2π) ∫ Var[𝓛φ(z) + 𝓛ξ(z)·𝓛h^φ(z)] |dz|,
//!       𝓛h^φ(z) = 𝓛(E[φ])(z) / (1 − 𝓛μ(z)),
//!
//! the lattice analogue integrating z = α/2 + iω over one period ω ∈ [−π, π].

use num_complex::Complex64;

use super::coeffs::{coefficient_matrix, expansion_vector, mean_coefficients};
use super::roots::{find_roots, RootSearch};
use super::{Root, SpectralProfile};
use crate::characteristics::{binomial, Characteristic, MeanFunction};
use crate::laws::{LawKind, ReproductionLaw, ReproductionSample};
use crate::rng::RandomStream;
use crate::{Error, Result};

/// A Monte Carlo (or exact) scalar with its standard error (0 when exact).
#[derive(Debug, Clone, Copy)]
pub struct VarianceEstimate {
    pub value: f64,
    pub std_error: f64,
}

/// The remainder h^φ(t) = m_t^φ − Σ_{λ∈Λ≥} e^{λt} Σ_l a_{λ,l} t^l.
///
/// For t < 0 the renewal mean vanishes, so h is exactly the negated
/// expansion. For t ≥ 0 the representation depends on the law: lattice laws
/// get an exact finite table plus the closed-form contribution of the
/// transform's remaining roots (those left of the search strip); non-lattice
/// callers supply a closed-form body.
#[derive(Debug, Clone)]
pub struct HFunction {
    /// (λ, a_λ) pairs subtracted from the renewal mean (the Λ≥ expansion).
    expansion: Vec<(Complex64, Vec<Complex64>)>,
    body: HBody,
}

#[derive(Debug, Clone)]
enum HBody {
    /// h(n) for n = 0..values.len(), then the expansion over the roots left
    /// of the strip plus the constant particular part `tail`.
    Lattice { values: Vec<f64>, extras: Vec<(Complex64, Vec<Complex64>)>, tail: f64 },
    /// Closed form on t ≥ 0.
    ExpPoly(MeanFunction),
}

fn expansion_value(terms: &[(Complex64, Vec<Complex64>)], t: f64) -> f64 {
    let mut acc = Complex64::new(0.0, 0.0);
    for (lambda, a) in terms {
        let mut poly = Complex64::new(0.0, 0.0);
        let mut tp = 1.0;
        for coeff in a {
            poly += coeff * tp;
            tp *= t;
        }
        acc += (lambda * t).exp() * poly;
    }
    debug_assert!(
        acc.im.abs() <= 1e-8 * (1.0 + acc.re.abs()),
        "expansion should be real on its evaluation set (imag = {})",
        acc.im
    );
    acc.re
}

impl HFunction {
    /// Pointwise h(t). Lattice tables are indexed at the nearest integer.
    pub fn value(&self, t: f64) -> f64 {
        if t < 0.0 {
            return -expansion_value(&self.expansion, t);
        }
        match &self.body {
            HBody::Lattice { values, extras, tail } => {
                let n = t.round() as usize;
                debug_assert!((t - n as f64).abs() < 1e-9, "lattice h evaluated off-grid");
                if n < values.len() {
                    values[n]
                } else {
                    tail + expansion_value(extras, n as f64)
                }
            }
            HBody::ExpPoly(mean) => mean.evaluate_re(t),
        }
    }

    /// The root expansion Σ e^{λt} Σ_l a_{λ,l} t^l that h complements.
    pub fn expansion_at(&self, t: f64) -> f64 {
        expansion_value(&self.expansion, t)
    }

    /// True when h vanishes identically on t ≥ 0.
    fn zero_body(&self) -> bool {
        match &self.body {
            HBody::ExpPoly(mean) => mean.terms.is_empty(),
            HBody::Lattice { values, extras, tail } => {
                *tail == 0.0 && extras.is_empty() && values.iter().all(|v| *v == 0.0)
            }
        }
    }

    /// Slowest decay rate of |h(t)|² e^{−αt} as t → +∞, used to size grids.
    fn positive_decay(&self, alpha: f64) -> f64 {
        match &self.body {
            HBody::Lattice { extras, tail, .. } => {
                let mut rate = f64::INFINITY;
                if *tail != 0.0 {
                    rate = alpha; // constant tail ⇒ integrand ~ e^{−αt}
                }
                for (lambda, _) in extras {
                    rate = rate.min(alpha - 2.0 * lambda.re);
                }
                rate
            }
            HBody::ExpPoly(mean) => {
                let mut rate = f64::INFINITY;
                for term in &mean.terms {
                    if term.hi.is_infinite() {
                        rate = rate.min(alpha - 2.0 * term.rate.re);
                    }
                }
                rate
            }
        }
    }
}

/// Builds h^φ for a lattice law exactly.
///
/// The renewal mean is tabulated by its defining recursion over the finite
/// window where the characteristic's mean still varies; past that window the
/// remainder is the closed-form expansion over the transform's roots left of
/// the search strip (recovered by a full root search of the atom polynomial)
/// plus the constant particular term v_∞/(1 − Σ_a w_a) when E[φ] settles at
/// v_∞. Means that do not become constant are rejected, as is a root search
/// that fails to account for the polynomial's full degree.
pub fn h_function_lattice(
    law: &ReproductionLaw,
    profile: &SpectralProfile,
    coeffs_a: &[Vec<Complex64>],
    mean: &MeanFunction,
) -> Result<HFunction> {
    let atoms: Vec<(u32, f64)> = lattice_atom_table(law);
    let degree = atoms.iter().map(|&(a, _)| a).max().expect("non-empty law") as usize;

    // Where does E[φ](n) settle? Finite pieces bound the window; unbounded
    // pieces must be constants and sum to v_∞.
    let mut window_end = 1.0f64; // the table always covers n = 0
    let mut v_inf = 0.0f64;
    for term in &mean.terms {
        if term.hi.is_finite() {
            window_end = window_end.max(term.hi.ceil());
        } else {
            if term.power != 0 || term.rate.norm() > 0.0 {
                return Err(Error::Config(
                    "lattice h needs an eventually constant characteristic mean; \
                     got an unbounded non-constant piece"
                        .into(),
                ));
            }
            v_inf += term.coeff.re;
            window_end = window_end.max(term.lo.ceil());
        }
    }
    let n_table = window_end as usize + 1;
    let total_weight: f64 = atoms.iter().map(|&(_, w)| w).sum();
    let tail = if v_inf == 0.0 { 0.0 } else { v_inf / (1.0 - total_weight) };

    // Full root set of the atom polynomial; everything not in Λ≥ contributes
    // to h's tail through the same expansion-coefficient machinery. A Cauchy
    // bound on the polynomial's roots in s = e^{−z} converts to a real-part
    // floor for the search.
    let lead = atoms.iter().max_by_key(|&&(a, _)| a).map(|&(_, w)| w).expect("non-empty");
    let cauchy = 1.0 + (1.0 + atoms.iter().map(|&(_, w)| w).fold(0.0f64, f64::max)) / lead;
    let all = find_roots(
        law,
        profile.alpha,
        &RootSearch { re_min: -(cauchy.ln()) - 1e-6, im_max: std::f64::consts::PI },
    )?;
    let found: usize = all.iter().map(|r| r.multiplicity).sum();
    if found != degree {
        return Err(Error::Numerical(format!(
            "full lattice root search found total multiplicity {found}, expected {degree}"
        )));
    }
    let extra_roots: Vec<Root> = all
        .iter()
        .filter(|root| {
            !profile
                .roots
                .iter()
                .any(|r| (r.lambda - root.lambda).norm() <= 1e-7 * (1.0 + root.lambda.norm()))
        })
        .cloned()
        .collect();
    let extras: Vec<(Complex64, Vec<Complex64>)> = if extra_roots.is_empty() {
        Vec::new()
    } else {
        let sub_profile = SpectralProfile { roots: extra_roots.clone(), ..profile.clone() };
        let b: Result<Vec<Vec<Complex64>>> = extra_roots
            .iter()
            .map(|r| expansion_vector(&coefficient_matrix(law, r, true)?, r.multiplicity))
            .collect();
        let a = mean_coefficients(&sub_profile, &b?, mean, true)?;
        extra_roots.iter().map(|r| r.lambda).zip(a).collect()
    };

    let expansion: Vec<(Complex64, Vec<Complex64>)> = profile
        .roots
        .iter()
        .map(|r| r.lambda)
        .zip(coeffs_a.iter().cloned())
        .collect();

    // Exact renewal recursion m(n) = E[φ](n) + Σ_a w_a m(n−a) on the window.
    // The window is short, so the e^{αn} error amplification stays harmless.
    let mut renewal = vec![0.0f64; n_table];
    for n in 0..n_table {
        let mut m = mean.evaluate_re(n as f64);
        for &(a, w) in &atoms {
            let a = a as usize;
            if n >= a {
                m += w * renewal[n - a];
            }
        }
        renewal[n] = m;
    }
    let values: Vec<f64> =
        (0..n_table).map(|n| renewal[n] - expansion_value(&expansion, n as f64)).collect();

    Ok(HFunction { expansion, body: HBody::Lattice { values, extras, tail } })
}

/// Wraps a caller-supplied closed form for h on t ≥ 0 (non-lattice laws).
pub fn h_function_from_body(
    profile: &SpectralProfile,
    coeffs_a: &[Vec<Complex64>],
    body: MeanFunction,
) -> HFunction {
    let expansion = profile
        .roots
        .iter()
        .map(|r| r.lambda)
        .zip(coeffs_a.iter().cloned())
        .collect();
    HFunction { expansion, body: HBody::ExpPoly(body) }
}

fn lattice_atom_table(law: &ReproductionLaw) -> Vec<(u32, f64)> {
    match law.kind() {
        LawKind::GaltonWatson { .. } => vec![(1, law.mean_offspring())],
        LawKind::LatticeAtoms { atoms, .. } => atoms.clone(),
        _ => panic!("lattice_atom_table on a non-lattice law"),
    }
}

/// ρ estimates with their Monte Carlo standard errors.
#[derive(Debug, Clone)]
pub struct RhoEstimate {
    /// ρ_0, …, ρ_{k*−1} where k* is the largest critical-line multiplicity.
    pub rho: Vec<f64>,
    /// Largest l with ρ_l > 0 beyond noise, or −1.
    pub n_star: i32,
    /// Standard errors of the ρ_l² estimates (0 where closed forms apply).
    pub std_errors: Vec<f64>,
}

/// The per-root sample statistic
/// R_{λ,l} = Σ_{j=l}^{k−1} a_{λ,j} C(j,l) Σ_m (−X_m)^{j−l} e^{−λ X_m}.
fn r_lambda_l(a: &[Complex64], l: usize, lambda: Complex64, delays: &[f64]) -> Complex64 {
    let mut total = Complex64::new(0.0, 0.0);
    for &x in delays {
        let e = (-lambda * x).exp();
        let mut xm = 1.0; // (−x)^{j−l}
        for (j, aj) in a.iter().enumerate().skip(l) {
            total += aj * (binomial(j, l) * xm) * e;
            xm *= -x;
        }
    }
    total
}

/// Variances Var[R_{λ,l}] over the critical-line roots, combined into
/// ρ_l² = Σ_{λ: k(λ) > l} Var[R_{λ,l}] and ρ_l = √(ρ_l²).
///
/// Exact closed forms cover deterministic lattice laws (variance 0),
/// Galton–Watson laws (X_m ≡ 1, variance |c|² Var[N]) and independent
/// Poisson atom counts (variance Σ_a w_a |c_a|²); anything else is estimated
/// from `samples` (raised to at least 10^5) reproduction draws.
pub fn rho_values(
    law: &ReproductionLaw,
    profile: &SpectralProfile,
    coeffs_a: &[Vec<Complex64>],
    samples: usize,
    seed: u64,
) -> Result<RhoEstimate> {
    assert_eq!(profile.roots.len(), coeffs_a.len());
    let boundary: Vec<(&Root, &Vec<Complex64>)> = profile
        .roots
        .iter()
        .zip(coeffs_a.iter())
        .filter(|(r, _)| r.on_critical_line)
        .collect();
    let k_star = boundary.iter().map(|(r, _)| r.multiplicity).max().unwrap_or(0);
    let mut rho_sq = vec![0.0f64; k_star];
    let mut var_se = vec![0.0f64; k_star];

    for (root, a) in &boundary {
        for l in 0..root.multiplicity {
            let (var, se) = match law.kind() {
                LawKind::GaltonWatson { .. } => {
                    let (_, var_n) = law.offspring_mean_var().expect("finite pmf");
                    let c = r_lambda_l(a, l, root.lambda, &[1.0]);
                    (c.norm_sqr() * var_n, 0.0)
                }
                LawKind::LatticeAtoms { atoms, deterministic } => {
                    if *deterministic {
                        (0.0, 0.0)
                    } else {
                        let var = atoms
                            .iter()
                            .map(|&(age, w)| {
                                w * r_lambda_l(a, l, root.lambda, &[age as f64]).norm_sqr()
                            })
                            .sum();
                        (var, 0.0)
                    }
                }
                _ => monte_carlo_r_variance(law, a, l, root.lambda, samples.max(100_000), seed),
            };
            rho_sq[l] += var;
            var_se[l] = (var_se[l].powi(2) + se * se).sqrt();
        }
    }

    let rho: Vec<f64> = rho_sq.iter().map(|v| v.max(0.0).sqrt()).collect();
    let mut n_star = -1i32;
    for l in (0..k_star).rev() {
        if rho_sq[l] > (4.0 * var_se[l]).max(1e-12) {
            n_star = l as i32;
            break;
        }
    }
    Ok(RhoEstimate { rho, n_star, std_errors: var_se })
}

fn monte_carlo_r_variance(
    law: &ReproductionLaw,
    a: &[Complex64],
    l: usize,
    lambda: Complex64,
    samples: usize,
    seed: u64,
) -> (f64, f64) {
    let mut rng = RandomStream::for_replicate(seed, 0x7c0 + l as u64);
    let mut values = Vec::with_capacity(samples);
    let mut delays = Vec::new();
    for _ in 0..samples {
        law.sample_into(&mut rng, &mut delays);
        values.push(r_lambda_l(a, l, lambda, &delays));
    }
    let mean: Complex64 = values.iter().sum::<Complex64>() / samples as f64;
    let sq: Vec<f64> = values.iter().map(|v| (v - mean).norm_sqr()).collect();
    let var = sq.iter().sum::<f64>() / (samples as f64 - 1.0);
    let var_of_sq = sq.iter().map(|s| (s - var).powi(2)).sum::<f64>() / (samples as f64 - 1.0);
    (var, (var_of_sq / samples as f64).sqrt())
}

/// a_t² = σ² when no critical-line randomness is present (n* = −1), else
/// ρ_{n*}² t^{2n*+1}/(2n*+1), with σ² treated as 0 in that regime.
pub fn fluctuation_scale(sigma_sq: f64, rho: &[f64], n_star: i32, t: f64) -> f64 {
    if n_star >= 0 {
        let n = n_star as usize;
        (rho[n] * rho[n] * t.powi(2 * n_star + 1) / (2.0 * n as f64 + 1.0)).sqrt()
    } else {
        sigma_sq.sqrt()
    }
}

/// σ² by direct integration of Var[φ(x) + Σ_m h(x − X_m)] e^{−αx} over the
/// lattice or the real line. Only meaningful when n* = −1; a critical-line
/// root that carries randomness makes the integrand non-decaying, which is
/// detected and reported as an error.
///
/// Lattice sums use exact per-point variances where the law permits
/// (enumerable offspring, or independent Poisson counts with a deterministic
/// characteristic) and Monte Carlo otherwise. The non-lattice path
/// trapezoid-integrates a grid with per-node variances estimated from
/// independent batches of reproduction draws.
pub fn sigma_squared_direct(
    law: &ReproductionLaw,
    characteristic: &Characteristic,
    profile: &SpectralProfile,
    h: &HFunction,
    samples: usize,
    seed: u64,
) -> Result<VarianceEstimate> {
    if law.is_lattice() {
        sigma_direct_lattice(law, characteristic, profile, h, samples, seed)
    } else {
        sigma_direct_grid(law, characteristic, profile, h, samples, seed)
    }
}

/// Var[φ(x) + Σ_m h(x − X_m)] by exact enumeration when the reproduction
/// sample is determined by the offspring count alone (unit delays).
fn enumerated_variance(
    pmf: &[(u32, f64)],
    characteristic: &Characteristic,
    h: &HFunction,
    x: f64,
) -> f64 {
    let mut mean = 0.0;
    let mut second = 0.0;
    for &(n, p) in pmf {
        let sample = ReproductionSample {
            offspring_delays: vec![1.0; n as usize],
            lifetime: f64::INFINITY,
            mark: 0.0,
        };
        let v = characteristic.evaluate(&sample, x) + n as f64 * h.value(x - 1.0);
        mean += p * v;
        second += p * v * v;
    }
    (second - mean * mean).max(0.0)
}

fn mc_variance_at(
    law: &ReproductionLaw,
    characteristic: &Characteristic,
    h: &HFunction,
    x: f64,
    samples: usize,
    rng: &mut RandomStream,
) -> (f64, f64) {
    let mut values = Vec::with_capacity(samples);
    for _ in 0..samples {
        let sample = law.sample_reproduction(rng);
        let mut v = characteristic.evaluate(&sample, x);
        for &d in &sample.offspring_delays {
            v += h.value(x - d);
        }
        values.push(v);
    }
    let mean = values.iter().sum::<f64>() / samples as f64;
    let sq: Vec<f64> = values.iter().map(|v| (v - mean).powi(2)).collect();
    let var = sq.iter().sum::<f64>() / (samples as f64 - 1.0);
    let var_of_sq = sq.iter().map(|s| (s - var).powi(2)).sum::<f64>() / (samples as f64 - 1.0);
    (var, (var_of_sq / samples as f64).sqrt())
}

enum LatticeVarianceMode {
    /// Deterministic law: the summand has no randomness at all.
    Zero,
    /// Finite offspring pmf with unit delays: enumerate exactly.
    Enumerate(Vec<(u32, f64)>),
    /// Independent Poisson counts per atom with deterministic φ:
    /// Var = Σ_a w_a h(x − a)².
    PoissonAtoms(Vec<(u32, f64)>),
    MonteCarlo,
}

fn sigma_direct_lattice(
    law: &ReproductionLaw,
    characteristic: &Characteristic,
    profile: &SpectralProfile,
    h: &HFunction,
    samples: usize,
    seed: u64,
) -> Result<VarianceEstimate> {
    use LatticeVarianceMode as Mode;
    let alpha = profile.alpha;
    let mode = match law.kind() {
        LawKind::GaltonWatson { pmf } => Mode::Enumerate(pmf.clone()),
        LawKind::LatticeAtoms { atoms, deterministic } => {
            if *deterministic {
                Mode::Zero
            } else if characteristic.is_deterministic() {
                Mode::PoissonAtoms(atoms.clone())
            } else {
                Mode::MonteCarlo
            }
        }
        _ => unreachable!("lattice path on a non-lattice law"),
    };
    if matches!(mode, Mode::Zero) {
        return Ok(VarianceEstimate { value: 0.0, std_error: 0.0 });
    }

    let mut rng = RandomStream::for_replicate(seed, 0x51);
    let mut variance_at = |n: i64| -> (f64, f64) {
        let x = n as f64;
        match &mode {
            Mode::Zero => (0.0, 0.0),
            Mode::Enumerate(pmf) => (enumerated_variance(pmf, characteristic, h, x), 0.0),
            Mode::PoissonAtoms(atoms) => {
                let var = atoms
                    .iter()
                    .map(|&(age, w)| w * h.value(x - age as f64).powi(2))
                    .sum::<f64>();
                (var, 0.0)
            }
            Mode::MonteCarlo => {
                mc_variance_at(law, characteristic, h, x, samples.max(100_000), &mut rng)
            }
        }
    };

    let mut total = 0.0f64;
    let mut se_sq = 0.0f64;
    for direction in [1i64, -1] {
        let mut quiet = 0;
        let start = if direction > 0 { 0 } else { 1 };
        let mut converged = false;
        for step in start..20_000i64 {
            let n = direction * step;
            let (var, se) = variance_at(n);
            let weight = (-alpha * n as f64).exp();
            total += weight * var;
            se_sq += (weight * se).powi(2);
            if weight * var <= 1e-13 * total.max(1e-300) {
                quiet += 1;
                if quiet >= 5 {
                    converged = true;
                    break;
                }
            } else {
                quiet = 0;
            }
            // A critical-line root makes the integrand grow like e^{α|n|}
            // in the negative direction, overflowing long before the step
            // budget runs out; bail out as soon as that shape is evident.
            if !total.is_finite()
                || weight * var > 1e9
                || (step > 2_000 && weight * var > 1e-6 * total)
            {
                break;
            }
        }
        if !converged {
            return Err(Error::Numerical(
                "direct σ² integrand is not decaying; a critical-line root likely \
                 carries randomness (n* ≥ 0), where ρ governs the fluctuations"
                    .into(),
            ));
        }
    }
    Ok(VarianceEstimate { value: total, std_error: se_sq.sqrt() })
}

fn sigma_direct_grid(
    law: &ReproductionLaw,
    characteristic: &Characteristic,
    profile: &SpectralProfile,
    h: &HFunction,
    samples: usize,
    seed: u64,
) -> Result<VarianceEstimate> {
    let alpha = profile.alpha;
    let pos_rate = h.positive_decay(alpha).min(alpha);
    let neg_rate = profile
        .roots
        .iter()
        .map(|r| 2.0 * r.lambda.re - alpha)
        .fold(f64::INFINITY, f64::min);
    if pos_rate <= 1e-9 || neg_rate <= 1e-9 {
        return Err(Error::Numerical(
            "direct σ² integrand does not decay; a critical-line root likely carries \
             randomness (n* ≥ 0), where ρ governs the fluctuations"
                .into(),
        ));
    }
    let x_hi = 30.0 / pos_rate;
    let x_lo = -30.0 / neg_rate;
    let dx = 0.02 / alpha.max(1.0);
    let count = ((x_hi - x_lo) / dx).ceil() as usize + 1;
    let nodes: Vec<f64> = (0..count).map(|i| x_lo + i as f64 * dx).collect();
    let body_zero = h.zero_body();

    // Batched Monte Carlo: each batch draws a fresh sample set, evaluates the
    // whole integral, and the batch spread gives the standard error.
    const BATCHES: usize = 16;
    let per_batch = (samples.max(16_000) / BATCHES).max(1_000);
    let mut batch_values = Vec::with_capacity(BATCHES);
    for batch in 0..BATCHES {
        let mut rng = RandomStream::for_replicate(seed, 0x5d0 + batch as u64);
        let draws: Vec<ReproductionSample> =
            (0..per_batch).map(|_| law.sample_reproduction(&mut rng)).collect();
        let mut integral = 0.0;
        for (i, &x) in nodes.iter().enumerate() {
            let mut mean = 0.0;
            let mut second = 0.0;
            for sample in &draws {
                let mut v = if x >= 0.0 { characteristic.evaluate(sample, x) } else { 0.0 };
                for &d in &sample.offspring_delays {
                    let u = x - d;
                    if u >= 0.0 && body_zero {
                        continue;
                    }
                    v += h.value(u);
                }
                mean += v;
                second += v * v;
            }
            mean /= per_batch as f64;
            second /= per_batch as f64;
            let var =
                (second - mean * mean).max(0.0) * per_batch as f64 / (per_batch as f64 - 1.0);
            let trapezoid = if i == 0 || i == nodes.len() - 1 { 0.5 } else { 1.0 };
            integral += trapezoid * var * (-alpha * x).exp() * dx;
        }
        batch_values.push(integral);
    }
    let value = batch_values.iter().sum::<f64>() / BATCHES as f64;
    let spread =
        batch_values.iter().map(|v| (v - value).powi(2)).sum::<f64>() / (BATCHES as f64 - 1.0);
    Ok(VarianceEstimate { value, std_error: (spread / BATCHES as f64).sqrt() })
}

/// σ² via the critical-line contour formula. Supported pairs: any built-in
/// law except fragmentation with a deterministic characteristic, plus the
/// survival indicator on Poisson-lifetime laws (φ and ξ are then coupled
/// through the lifetime and the joint variance has a closed form). The
/// quadrature is adaptive Simpson — over one period for lattice laws, with a
/// doubling upper limit and a C/ω² tail envelope otherwise.
pub fn sigma_squared_contour(
    law: &ReproductionLaw,
    characteristic: &Characteristic,
    alpha: f64,
) -> Result<f64> {
    let mean = characteristic.mean_function(law)?;
    let lattice = law.is_lattice();

    let coupled_survival = matches!(
        (law.kind(), characteristic),
        (LawKind::PoissonLifetime { .. }, Characteristic::Alive)
    );
    if !characteristic.is_deterministic() && !coupled_survival {
        return Err(Error::Config(
            "contour σ² needs a deterministic characteristic (or the survival \
             indicator on a Poisson-lifetime law)"
                .into(),
        ));
    }
    if matches!(law.kind(), LawKind::Fragmentation { .. }) {
        return Err(Error::Config(
            "contour σ² is not available for the fragmentation law".into(),
        ));
    }

    // Var[𝓛ξ(z)] on the critical line, per law.
    let xi_variance = |z: Complex64| -> f64 {
        match law.kind() {
            LawKind::GaltonWatson { .. } => {
                let (_, var_n) = law.offspring_mean_var().expect("finite pmf");
                var_n * (-alpha).exp()
            }
            LawKind::LatticeAtoms { atoms, deterministic } => {
                if *deterministic {
                    0.0
                } else {
                    atoms.iter().map(|&(a, w)| w * (-alpha * a as f64).exp()).sum()
                }
            }
            LawKind::EpidemicGamma { a, b, r0 } => r0 * (b / (b + alpha)).powf(*a),
            LawKind::PoissonLifetime { b, lifetime } => {
                let l_alpha = lifetime.laplace(Complex64::new(alpha, 0.0)).re;
                let lz = lifetime.laplace(z);
                b * (1.0 - l_alpha) / alpha + (b / z).norm_sqr() * (l_alpha - lz.norm_sqr())
            }
            LawKind::Fragmentation { .. } => unreachable!("rejected above"),
        }
    };

    let mean_transform = |z: Complex64| -> Result<Complex64> {
        if lattice {
            lattice_mean_transform(&mean, z)
        } else {
            mean.laplace(z)
        }
    };

    let integrand = |omega: f64| -> Result<f64> {
        let z = Complex64::new(0.5 * alpha, omega);
        let lmu = law.laplace_derivative(z, 0)?;
        let denom = 1.0 - lmu;
        if denom.norm() < 1e-8 {
            return Err(Error::Numerical(format!(
                "critical-line root at Im z = {omega}: |1 − 𝓛μ| = {:.3e}; \
                 the fluctuations there are governed by ρ, not σ",
                denom.norm()
            )));
        }
        let lh = mean_transform(z)? / denom;
        if coupled_survival {
            let (b, lifetime) = match law.kind() {
                LawKind::PoissonLifetime { b, lifetime } => (*b, lifetime),
                _ => unreachable!(),
            };
            let l_alpha = lifetime.laplace(Complex64::new(alpha, 0.0)).re;
            let lz = lifetime.laplace(z);
            let poisson_part = lh.norm_sqr() * (b * (1.0 - l_alpha) / alpha);
            let lifetime_part = (1.0 / (z * denom)).norm_sqr() * (l_alpha - lz.norm_sqr());
            Ok(poisson_part + lifetime_part)
        } else {
            Ok(lh.norm_sqr() * xi_variance(z))
        }
    };

    if lattice {
        // (1/2π)∫_{−π}^{π} = (1/π)∫_0^π by evenness in ω.
        Ok(adaptive_simpson(&integrand, 0.0, std::f64::consts::PI, 1e-11, 24)?
            / std::f64::consts::PI)
    } else {
        let mut upper = 8.0 * (1.0 + alpha);
        let mut acc = adaptive_simpson(&integrand, 0.0, upper, 1e-11, 24)?;
        loop {
            // C/ω² envelope: the remaining tail is at most ≈ f(Ω)·Ω.
            let tail = integrand(upper)? * upper;
            if tail <= 1e-6 * acc.abs().max(1e-300) {
                break;
            }
            let next = 2.0 * upper;
            acc += adaptive_simpson(&integrand, upper, next, 1e-11, 24)?;
            upper = next;
            if upper > 1e7 {
                return Err(Error::Numerical(
                    "contour σ² tail does not fall off like |Im z|^{-2}".into(),
                ));
            }
        }
        Ok(acc / std::f64::consts::PI)
    }
}

/// Σ_n E[φ](n) e^{−zn}: a finite window plus a geometric tail when E[φ] is
/// eventually constant.
fn lattice_mean_transform(mean: &MeanFunction, z: Complex64) -> Result<Complex64> {
    let mut window_end = 0.0f64;
    let mut v_inf = 0.0f64;
    for term in &mean.terms {
        if term.hi.is_finite() {
            window_end = window_end.max(term.hi.ceil());
        } else {
            if term.power != 0 || term.rate.norm() > 0.0 {
                return Err(Error::Config(
                    "lattice mean transform needs an eventually constant mean".into(),
                ));
            }
            v_inf += term.coeff.re;
            window_end = window_end.max(term.lo.ceil());
        }
    }
    let mut acc = Complex64::new(0.0, 0.0);
    let n_f = window_end as u32;
    for n in 0..n_f {
        acc += mean.evaluate(n as f64) * (-z * n as f64).exp();
    }
    if v_inf != 0.0 {
        let q = (-z).exp();
        acc += v_inf * q.powu(n_f) / (1.0 - q);
    }
    Ok(acc)
}

fn adaptive_simpson(
    f: &dyn Fn(f64) -> Result<f64>,
    lo: f64,
    hi: f64,
    tol: f64,
    depth: u32,
) -> Result<f64> {
    fn simpson(fl: f64, fm: f64, fr: f64, width: f64) -> f64 {
        width / 6.0 * (fl + 4.0 * fm + fr)
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse(
        f: &dyn Fn(f64) -> Result<f64>,
        lo: f64,
        hi: f64,
        fl: f64,
        fm: f64,
        fr: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> Result<f64> {
        let mid = 0.5 * (lo + hi);
        let lm = 0.5 * (lo + mid);
        let rm = 0.5 * (mid + hi);
        let flm = f(lm)?;
        let frm = f(rm)?;
        let left = simpson(fl, flm, fm, mid - lo);
        let right = simpson(fm, frm, fr, hi - mid);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return Ok(left + right + delta / 15.0);
        }
        Ok(recurse(f, lo, mid, fl, flm, fm, left, 0.5 * tol, depth - 1)?
            + recurse(f, mid, hi, fm, frm, fr, right, 0.5 * tol, depth - 1)?)
    }
    let fl = f(lo)?;
    let fm = f(0.5 * (lo + hi))?;
    let fr = f(hi)?;
    let whole = simpson(fl, fm, fr, hi - lo);
    recurse(f, lo, hi, fl, fm, fr, whole, tol.max(1e-14), depth)
}
