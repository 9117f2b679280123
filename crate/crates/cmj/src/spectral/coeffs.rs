//! Coefficient vectors attached to each root of 𝓛μ(z) = 1.
//!
//! For a root λ of multiplicity k, the vector b_λ solves M^λ b_λ = e_k where
//! M^λ is a k×k upper-triangular matrix of transform derivatives at λ (one
//! formula for non-lattice laws, one — via Bernoulli operator polynomials —
//! for lattice laws). The characteristic-dependent vector a_λ is then the
//! integral
//!
//!   a_λ = ∫ exp(λ, −x, k)ᵀ b_λ · E[φ](x) ℓ(dx),
//!
//! i.e. a_{λ,l} = Σ_{p≥l} C(p,l) (−1)^{p−l} b_{λ,p} ∫ x^{p−l} e^{−λx} E[φ](x) ℓ(dx),
//! with ℓ counting measure on ℤ (lattice) or Lebesgue measure (non-lattice).
//! These are the coefficients of the t^l e^{λt} terms in the expansion of the
//! mean E[Z_t^φ].

use num_complex::Complex64;

use super::bernoulli::operator_polynomial;
use super::{Root, SpectralProfile};
use crate::characteristics::{binomial, exp_poly_integral, MeanFunction};
use crate::laws::ReproductionLaw;
use crate::{Error, Result};

fn factorial(n: usize) -> f64 {
    (1..=n).map(|j| j as f64).product()
}

/// The k×k matrix M^λ whose solution against e_k yields b_λ.
///
/// Non-lattice: (M)_{i,j} = −[(j−1)!(k−1)!/((i−1)!(j−i+k)!)]·(𝓛μ)^{(k+j−i)}(λ).
/// Lattice: (M)_{i,j} = C(j−1, i−1)·P_{k,j−i}(d/dz)𝓛μ|_λ, with P_{k,l} the
/// Bernoulli operator polynomial. Both are upper triangular, and both satisfy
/// det(M^λ) = (−𝓛μ^{(k)}(λ)/k)^k at a genuine order-k root.
pub fn coefficient_matrix(
    law: &ReproductionLaw,
    root: &Root,
    lattice: bool,
) -> Result<Vec<Vec<Complex64>>> {
    let k = root.multiplicity;
    let mut m = vec![vec![Complex64::new(0.0, 0.0); k]; k];
    for i in 1..=k {
        for j in i..=k {
            m[i - 1][j - 1] = if lattice {
                let poly = operator_polynomial(k, j - i)?;
                let mut acc = Complex64::new(0.0, 0.0);
                for (order, &c) in poly.iter().enumerate() {
                    if c != 0.0 {
                        acc += c * law.laplace_derivative(root.lambda, order as u32)?;
                    }
                }
                binomial(j - 1, i - 1) * acc
            } else {
                let scale = factorial(j - 1) * factorial(k - 1)
                    / (factorial(i - 1) * factorial(j - i + k));
                -scale * law.laplace_derivative(root.lambda, (k + j - i) as u32)?
            };
        }
    }
    let det: Complex64 = (0..k).map(|i| m[i][i]).product();
    if det.norm() < 1e-12 {
        return Err(Error::Numerical(format!(
            "coefficient matrix at root {} is degenerate (|det| = {:.3e})",
            root.lambda,
            det.norm()
        )));
    }
    Ok(m)
}

/// Determinant of an upper-triangular coefficient matrix.
pub fn matrix_determinant(m: &[Vec<Complex64>]) -> Complex64 {
    (0..m.len()).map(|i| m[i][i]).product()
}

/// Solves M·b = e_k for upper-triangular M by back-substitution and verifies
/// the residual.
pub fn expansion_vector(m: &[Vec<Complex64>], k: usize) -> Result<Vec<Complex64>> {
    assert_eq!(m.len(), k, "matrix must be k x k");
    let mut b = vec![Complex64::new(0.0, 0.0); k];
    for i in (0..k).rev() {
        let rhs = if i == k - 1 { Complex64::new(1.0, 0.0) } else { Complex64::new(0.0, 0.0) };
        let mut acc = rhs;
        for j in i + 1..k {
            acc -= m[i][j] * b[j];
        }
        if m[i][i].norm() == 0.0 {
            return Err(Error::Numerical(format!(
                "coefficient matrix is singular at diagonal entry {}",
                i + 1
            )));
        }
        b[i] = acc / m[i][i];
    }
    let scale = b.iter().map(|v| v.norm()).fold(1.0f64, f64::max);
    for (i, row) in m.iter().enumerate() {
        let want = if i == k - 1 { 1.0 } else { 0.0 };
        let got: Complex64 = row[i..].iter().zip(&b[i..]).map(|(&a, &x)| a * x).sum();
        if (got - want).norm() > 1e-10 * scale {
            return Err(Error::Numerical(format!(
                "back-substitution residual {:.3e} at row {} exceeds 1e-10",
                (got - want).norm(),
                i + 1
            )));
        }
    }
    Ok(b)
}

/// ∫ x^q e^{−λx} E[φ](x) ℓ(dx) over the lattice ℤ or the real line.
fn mean_moment_integral(
    mean: &MeanFunction,
    lambda: Complex64,
    q: u32,
    lattice: bool,
) -> Result<Complex64> {
    if lattice {
        // E[φ] vanishes at negative ages, so the sum starts at 0. Terms decay
        // like e^{−Re(λ)n} (times polynomial growth); the loop stops once the
        // remaining geometric tail is below 1e-12 of the accumulated mass.
        if lambda.re <= 0.0 {
            return Err(Error::Config(format!(
                "mean is not summable against e^{{-λn}} for Re λ = {} <= 0",
                lambda.re
            )));
        }
        let bound = mean.support().1;
        let mut acc = Complex64::new(0.0, 0.0);
        let mut n = 0u32;
        let mut peak = 0.0f64;
        loop {
            let x = n as f64;
            if x >= bound {
                break;
            }
            let value = mean.evaluate_re(x);
            let term = (x.powi(q as i32)) * (-lambda * x).exp() * value;
            acc += term;
            peak = peak.max(term.norm());
            // Geometric envelope for everything past n: once it is negligible
            // relative to the accumulated sum the truncation is certified.
            let ratio = (-lambda.re).exp();
            let tail = term.norm() * ratio / (1.0 - ratio) * (1.0 + q as f64 / (n as f64 + 1.0));
            if n > 4 * (q + 1) && tail <= 1e-13 * acc.norm().max(peak) {
                break;
            }
            if n > 200_000 {
                return Err(Error::Config(
                    "mean does not decay against e^{-λn}; the coefficient integral diverges".into(),
                ));
            }
            n += 1;
        }
        Ok(acc)
    } else {
        let mut acc = Complex64::new(0.0, 0.0);
        for term in &mean.terms {
            let c = term.rate - lambda;
            if term.hi.is_infinite() && c.re >= 0.0 {
                return Err(Error::Config(
                    "mean is not integrable against e^{-λx}; the coefficient integral diverges"
                        .into(),
                ));
            }
            acc += term.coeff * exp_poly_integral(term.power + q, c, term.lo, term.hi);
        }
        Ok(acc)
    }
}

/// The a_λ vector for every root of the profile, from the b_λ vectors and the
/// characteristic's mean E[φ].
pub fn mean_coefficients(
    profile: &SpectralProfile,
    coeffs_b: &[Vec<Complex64>],
    char_mean: &MeanFunction,
    lattice: bool,
) -> Result<Vec<Vec<Complex64>>> {
    assert_eq!(profile.roots.len(), coeffs_b.len(), "one b vector per root");
    let mut out = Vec::with_capacity(profile.roots.len());
    for (root, b) in profile.roots.iter().zip(coeffs_b) {
        let k = root.multiplicity;
        assert_eq!(b.len(), k, "b vector length must match multiplicity");
        let mut moments = Vec::with_capacity(k);
        for q in 0..k as u32 {
            moments.push(mean_moment_integral(char_mean, root.lambda, q, lattice)?);
        }
        let mut a = vec![Complex64::new(0.0, 0.0); k];
        for (l, slot) in a.iter_mut().enumerate() {
            for p in l..k {
                let sign = if (p - l) % 2 == 0 { 1.0 } else { -1.0 };
                *slot += binomial(p, l) * sign * b[p] * moments[p - l];
            }
        }
        out.push(a);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::characteristics::Characteristic;
    use crate::spectral::roots::{find_roots, RootSearch};
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    fn real_root(alpha: f64) -> Root {
        Root { lambda: Complex64::new(alpha, 0.0), multiplicity: 1, on_critical_line: false }
    }

    fn gw2() -> ReproductionLaw {
        ReproductionLaw::galton_watson(vec![(2, 1.0)]).unwrap()
    }

    fn profile_of(law: &ReproductionLaw, alpha: f64, roots: Vec<Root>) -> SpectralProfile {
        let beta = -law.laplace_derivative(Complex64::new(alpha, 0.0), 1).unwrap().re;
        SpectralProfile { alpha, beta, roots, theta: alpha / 4.0, gamma: 0.75 * alpha }
    }

    /// Binary fission: both matrix formulas reduce to M = [−𝓛μ′(α)] = [β] = [1],
    /// so b_α = 1/β = 1.
    #[test]
    fn fission_b_vector_is_inverse_beta() {
        let law = gw2();
        let root = real_root(2.0f64.ln());
        for lattice in [true, false] {
            let m = coefficient_matrix(&law, &root, lattice).unwrap();
            assert_abs_diff_eq!(m[0][0].re, 1.0, epsilon = 1e-12);
            assert_abs_diff_eq!(m[0][0].im, 0.0, epsilon = 1e-12);
            let b = expansion_vector(&m, 1).unwrap();
            assert_abs_diff_eq!(b[0].re, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn back_substitution_oracles() {
        // Synthetic upper-triangular system [[2,1],[0,2]]·b = e_2.
        let m = vec![
            vec![Complex64::new(2.0, 0.0), Complex64::new(1.0, 0.0)],
            vec![Complex64::new(0.0, 0.0), Complex64::new(2.0, 0.0)],
        ];
        let b = expansion_vector(&m, 2).unwrap();
        assert_abs_diff_eq!(b[0].re, -0.25, epsilon = 1e-14);
        assert_abs_diff_eq!(b[1].re, 0.5, epsilon = 1e-14);
        // Identity matrix: b = e_k.
        let eye: Vec<Vec<Complex64>> = (0..3)
            .map(|i| (0..3).map(|j| Complex64::new(f64::from(i == j), 0.0)).collect())
            .collect();
        let b = expansion_vector(&eye, 3).unwrap();
        assert_eq!(b[2], Complex64::new(1.0, 0.0));
        assert_eq!(b[0], Complex64::new(0.0, 0.0));
        // 1x1: M = [−β] gives b = [−1/β].
        let m = vec![vec![Complex64::new(-2.0, 0.0)]];
        assert_abs_diff_eq!(expansion_vector(&m, 1).unwrap()[0].re, -0.5, epsilon = 1e-14);
    }

    /// At the double root ln 2 + iπ of the (1,16,20) atom law the determinant
    /// identity det(M) = (−𝓛μ″(λ)/2)² holds; 𝓛μ″ there equals −7.
    #[test]
    fn determinant_identity_at_a_double_root() {
        let law =
            ReproductionLaw::lattice_atoms(vec![(1, 1.0), (2, 16.0), (3, 20.0)], false).unwrap();
        let alpha = 5.0f64.ln();
        let roots = find_roots(&law, alpha, &RootSearch { re_min: 0.5, im_max: PI }).unwrap();
        let double = roots.iter().find(|r| r.multiplicity == 2).expect("double root present");
        let m = coefficient_matrix(&law, double, true).unwrap();
        let det = matrix_determinant(&m);
        let d2 = law.laplace_derivative(double.lambda, 2).unwrap();
        let expected = (-d2 / 2.0) * (-d2 / 2.0);
        assert_abs_diff_eq!(det.re, expected.re, epsilon = 1e-8 * expected.norm());
        assert_abs_diff_eq!(det.im, expected.im, epsilon = 1e-8 * expected.norm());
        assert_abs_diff_eq!(expected.re, 12.25, epsilon = 1e-6);
        // The b vector solves the system with a clean residual.
        let b = expansion_vector(&m, 2).unwrap();
        assert!(b.iter().all(|v| v.norm().is_finite()));
    }

    /// Generation counting (φ = 1 on [0,1)) has a_α = 1; counting all births
    /// (φ = 1 on [0,∞)) has a_α = m/(m−1) = 2 at m = 2.
    #[test]
    fn fission_mean_coefficients_for_the_worked_characteristics() {
        let law = gw2();
        let alpha = 2.0f64.ln();
        let profile = profile_of(&law, alpha, vec![real_root(alpha)]);
        let m = coefficient_matrix(&law, &profile.roots[0], true).unwrap();
        let b = vec![expansion_vector(&m, 1).unwrap()];

        let generation = Characteristic::window(1.0).unwrap().mean_function(&law).unwrap();
        let a = mean_coefficients(&profile, &b, &generation, true).unwrap();
        assert_abs_diff_eq!(a[0][0].re, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(a[0][0].im, 0.0, epsilon = 1e-12);

        let born = Characteristic::BornCounter.mean_function(&law).unwrap();
        let a = mean_coefficients(&profile, &b, &born, true).unwrap();
        assert_abs_diff_eq!(a[0][0].re, 2.0, epsilon = 1e-10);
    }

    /// Poisson-on-a-lifetime with Exp(1) lifetimes and b = 2: β = 1/2, and the
    /// survival indicator has a_α = 1/(bβ) = 1 (non-lattice integral path).
    #[test]
    fn survival_indicator_mean_coefficient_is_analytic() {
        let law = ReproductionLaw::poisson_lifetime(
            2.0,
            crate::laws::LifetimeDist::Exponential { rate: 1.0 },
        )
        .unwrap();
        let alpha = 1.0;
        let profile = profile_of(&law, alpha, vec![real_root(alpha)]);
        assert_abs_diff_eq!(profile.beta, 0.5, epsilon = 1e-12);
        let m = coefficient_matrix(&law, &profile.roots[0], false).unwrap();
        let b = vec![expansion_vector(&m, 1).unwrap()];
        assert_abs_diff_eq!(b[0][0].re, 2.0, epsilon = 1e-10);
        let alive = Characteristic::Alive.mean_function(&law).unwrap();
        let a = mean_coefficients(&profile, &b, &alive, false).unwrap();
        assert_abs_diff_eq!(a[0][0].re, 1.0, epsilon = 1e-10);
    }

    /// Epidemic law: counting all births has a_α = 1/(αβ).
    #[test]
    fn epidemic_born_counter_coefficient() {
        let law = ReproductionLaw::epidemic_gamma(18.0, 1.0, 10.0).unwrap();
        let alpha = 10.0f64.powf(1.0 / 18.0) - 1.0;
        let beta = -law.laplace_derivative(Complex64::new(alpha, 0.0), 1).unwrap().re;
        let profile = profile_of(&law, alpha, vec![real_root(alpha)]);
        let m = coefficient_matrix(&law, &profile.roots[0], false).unwrap();
        let b = vec![expansion_vector(&m, 1).unwrap()];
        let born = Characteristic::BornCounter.mean_function(&law).unwrap();
        let a = mean_coefficients(&profile, &b, &born, false).unwrap();
        assert_abs_diff_eq!(a[0][0].re, 1.0 / (alpha * beta), epsilon = 1e-9);
    }

    #[test]
    fn zero_characteristic_has_zero_coefficients() {
        let law = gw2();
        let alpha = 2.0f64.ln();
        let profile = profile_of(&law, alpha, vec![real_root(alpha)]);
        let b = vec![vec![Complex64::new(1.0, 0.0)]];
        let zero = MeanFunction::default();
        let a = mean_coefficients(&profile, &b, &zero, true).unwrap();
        assert_eq!(a[0][0], Complex64::new(0.0, 0.0));
    }

    /// Conjugate roots carry conjugate a vectors.
    #[test]
    fn conjugate_roots_have_conjugate_coefficients() {
        let law = ReproductionLaw::epidemic_gamma(18.0, 1.0, 12.0).unwrap();
        let alpha = 12.0f64.powf(1.0 / 18.0) - 1.0;
        let pair = crate::spectral::roots::epidemic_roots_closed_form(18.0, 1.0, 12.0);
        let roots: Vec<Root> = pair[1..3]
            .iter()
            .map(|&z| Root { lambda: z, multiplicity: 1, on_critical_line: false })
            .collect();
        let profile = profile_of(&law, alpha, roots);
        let b: Vec<Vec<Complex64>> = profile
            .roots
            .iter()
            .map(|r| {
                expansion_vector(&coefficient_matrix(&law, r, false).unwrap(), 1).unwrap()
            })
            .collect();
        assert_abs_diff_eq!(b[0][0].re, b[1][0].re, epsilon = 1e-12);
        assert_abs_diff_eq!(b[0][0].im, -b[1][0].im, epsilon = 1e-12);
        let born = Characteristic::BornCounter.mean_function(&law).unwrap();
        let a = mean_coefficients(&profile, &b, &born, false).unwrap();
        assert_abs_diff_eq!(a[0][0].re, a[1][0].re, epsilon = 1e-12);
        assert_abs_diff_eq!(a[0][0].im, -a[1][0].im, epsilon = 1e-12);
    }
}
