//! The analytic side of the simulator: Malthusian parameter α, the mean
//! slope β, the root set Λ≥ of 𝓛μ(z) = 1 with multiplicities, the matrix
//! exponential calculus, the expansion coefficients b_λ and a_λ, and the
//! limit variances σ² and ρ_l.
//!
//! Everything here is a pure function of the reproduction law (and, where a
//! characteristic enters, its mean function); Monte Carlo estimates take an
//! explicit seed so concurrent callers stay reproducible.

mod bernoulli;
pub mod coeffs;
pub mod matrixexp;
pub mod roots;
pub mod sigma;

pub use coeffs::{coefficient_matrix, expansion_vector, mean_coefficients};
pub use matrixexp::{jordan_exp, JordanExp};
pub use roots::{epidemic_roots_closed_form, epidemic_threshold, find_roots, RootSearch};
pub use sigma::{
    fluctuation_scale, h_function_from_body, h_function_lattice, rho_values,
    sigma_squared_contour, sigma_squared_direct, HFunction, RhoEstimate, VarianceEstimate,
};

use num_complex::Complex64;

use crate::characteristics::Characteristic;
use crate::laws::ReproductionLaw;
use crate::{Error, Result};

/// A solution of 𝓛μ(λ) = 1 in the search strip.
#[derive(Debug, Clone, PartialEq)]
pub struct Root {
    pub lambda: Complex64,
    /// Order k(λ): the first nonvanishing derivative of 𝓛μ at λ.
    pub multiplicity: usize,
    /// Re λ = α/2, where the fluctuation regime changes.
    pub on_critical_line: bool,
}

/// The law's spectral data: α, β, the roots Λ≥, and the two auxiliary strip
/// parameters θ ∈ (0, α/2) and γ ∈ (α/2, min Re Λ) used by the expansions.
#[derive(Debug, Clone)]
pub struct SpectralProfile {
    pub alpha: f64,
    /// β = −(𝓛μ)′(α) > 0.
    pub beta: f64,
    /// Roots with Re λ ≥ re_min, sorted by decreasing real part; always
    /// contains α itself (with multiplicity 1).
    pub roots: Vec<Root>,
    pub theta: f64,
    pub gamma: f64,
}

/// Expansion data for a specific characteristic: the law-only vectors b_λ,
/// the characteristic-dependent a_λ, and the critical-line variances ρ_l.
#[derive(Debug, Clone)]
pub struct CoefficientSet {
    /// b_{λ,l}, aligned with `SpectralProfile::roots`; length k(λ) each.
    pub b: Vec<Vec<Complex64>>,
    /// a_{λ,l}, same alignment and lengths.
    pub a: Vec<Vec<Complex64>>,
    /// ρ_0, …, ρ_{k*−1} over the critical-line roots.
    pub rho: Vec<f64>,
    /// Largest l with ρ_l > 0, or −1 when no critical-line randomness.
    pub n_star: i32,
    /// Standard errors of the ρ_l² estimates (0 where closed forms apply).
    pub rho_std_errors: Vec<f64>,
}

/// Solves 𝓛μ(α) = 1 on the real axis by bracketing, bisection, and a Newton
/// polish. The law must be supercritical (mean offspring > 1).
pub fn malthusian(law: &ReproductionLaw) -> Result<f64> {
    let mean = law.mean_offspring();
    if mean.is_nan() || mean <= 1.0 {
        return Err(Error::Domain(format!(
            "law is not supercritical: mean offspring {mean} ≤ 1"
        )));
    }
    let transform = |x: f64| -> Result<f64> {
        Ok(law.laplace_derivative(Complex64::new(x, 0.0), 0)?.re)
    };
    // 𝓛μ is strictly decreasing in x with 𝓛μ(0+) = mean > 1.
    let mut lo = 0.0f64;
    let mut hi = 1e-3f64;
    loop {
        let v = transform(hi)?;
        if v < 1.0 {
            break;
        }
        lo = hi;
        hi *= 2.0;
        if hi > 1e9 {
            return Err(Error::Domain(
                "no Malthusian parameter below 1e9; transform never crosses 1".into(),
            ));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if transform(mid)? > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-16 * (1.0 + hi) {
            break;
        }
    }
    let mut alpha = 0.5 * (lo + hi);
    for _ in 0..6 {
        let f = transform(alpha)? - 1.0;
        let df = law.laplace_derivative(Complex64::new(alpha, 0.0), 1)?.re;
        if df == 0.0 {
            break;
        }
        let step = f / df;
        alpha -= step;
        if step.abs() <= 1e-17 * (1.0 + alpha.abs()) {
            break;
        }
    }
    let residual = (transform(alpha)? - 1.0).abs();
    if residual > 1e-12 {
        return Err(Error::Numerical(format!(
            "Malthusian refinement stalled: |𝓛μ(α) − 1| = {residual:.3e}"
        )));
    }
    Ok(alpha)
}

/// Computes α, β, the roots in the requested strip (default: Re z ≥ α/2 −
/// 1e-9 up to the law's imaginary bound), and the strip parameters.
///
/// θ is max(ϑ + 1e-3, α/2 − gap/2), where ϑ is the transform's abscissa and
/// gap the distance from the critical line to the nearest found root
/// strictly left of it (α/2 − α/4 when none is visible), capped below α/2.
/// γ is the midpoint (α/2 + min Re Λ)/2 over the strictly-interior roots Λ,
/// which degrades to 3α/4 when Λ = {α}.
pub fn spectral_profile(
    law: &ReproductionLaw,
    search: Option<&RootSearch>,
) -> Result<SpectralProfile> {
    let alpha = malthusian(law)?;
    let beta = -law.laplace_derivative(Complex64::new(alpha, 0.0), 1)?.re;
    if beta.is_nan() || beta <= 0.0 {
        return Err(Error::Numerical(format!(
            "β = −𝓛μ′(α) = {beta} is not positive; the law is degenerate"
        )));
    }
    let re_min_default = 0.5 * alpha - 1e-9;
    let default_search = RootSearch {
        re_min: re_min_default,
        im_max: roots::imaginary_root_bound(law, re_min_default),
    };
    let search = search.unwrap_or(&default_search);
    let roots = find_roots(law, alpha, search)?;
    let alpha_present = roots.iter().any(|r| {
        r.multiplicity == 1
            && r.lambda.im == 0.0
            && (r.lambda.re - alpha).abs() <= 1e-9 * (1.0 + alpha)
    });
    if !alpha_present {
        return Err(Error::Numerical(
            "root search did not recover α itself; its strip is misconfigured".into(),
        ));
    }

    let half = 0.5 * alpha;
    let left_nearest = roots
        .iter()
        .filter(|r| !r.on_critical_line && r.lambda.re < half)
        .map(|r| r.lambda.re)
        .fold(f64::NEG_INFINITY, f64::max);
    let gap = if left_nearest.is_finite() { half - left_nearest } else { half };
    let theta = (law.domain_bound() + 1e-3)
        .max(half - 0.5 * gap)
        .min(half * (1.0 - 1e-6));

    let interior_min = roots
        .iter()
        .filter(|r| !r.on_critical_line)
        .map(|r| r.lambda.re)
        .fold(f64::INFINITY, f64::min);
    let gamma = 0.5 * (half + interior_min.min(alpha));

    Ok(SpectralProfile { alpha, beta, roots, theta, gamma })
}

/// Assembles b_λ, a_λ, and the ρ_l for one characteristic. `samples` and
/// `seed` drive the Monte Carlo fallback inside the ρ estimates (laws with
/// closed-form critical-line variances ignore them).
pub fn coefficient_set(
    law: &ReproductionLaw,
    profile: &SpectralProfile,
    characteristic: &Characteristic,
    samples: usize,
    seed: u64,
) -> Result<CoefficientSet> {
    let lattice = law.is_lattice();
    let b: Vec<Vec<Complex64>> = profile
        .roots
        .iter()
        .map(|root| expansion_vector(&coefficient_matrix(law, root, lattice)?, root.multiplicity))
        .collect::<Result<_>>()?;
    let mean = characteristic.mean_function(law)?;
    let a = mean_coefficients(profile, &b, &mean, lattice)?;
    let rho = rho_values(law, profile, &a, samples, seed)?;
    Ok(CoefficientSet {
        b,
        a,
        rho: rho.rho,
        n_star: rho.n_star,
        rho_std_errors: rho.std_errors,
    })
}
