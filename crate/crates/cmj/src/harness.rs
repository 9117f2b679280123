//! Monte Carlo verification of the central limit theorems.
//!
//! For a supercritical process scored with a characteristic φ, the theory
//! predicts that the centered count Z_t^φ − H(t) — H(t) being the projection
//! of the mean onto the roots of 𝓛μ(z) = 1 with Re λ ≥ α/2 — fluctuates on
//! the scale a_t e^{αt/2}, and that conditionally on the martingale limit W
//! the rescaled fluctuation is Gaussian:
//!
//!     a_t⁻¹ e^{−αt/2} (Z_t^φ − H(t))  →  √(W/β) · 𝒩(0, 1)    (stably),
//!
//! where a_t = σ when every root off the real axis stays strictly inside the
//! half-plane (n* = −1) and a_t² = ρ_{n*}² t^{2n*+1}/(2n*+1) when a
//! critical-line root with a size-(n*+1) Jordan block dominates. This module
//! turns the statement into observable statistics. It simulates replicates,
//! assembles H(t) from martingale proxies Ŵ^{(j)}(λ) read off the coming
//! generation at t+δ, normalizes the fluctuations, and reports
//!
//! * a variance ratio — the empirical mean of normalized²·β/Ŵ over surviving
//!   replicates, with a bootstrap confidence interval (target 1);
//! * a Kolmogorov–Smirnov comparison of normalized·√(β/Ŵ) against the
//!   standard normal;
//! * the unconditional mixture statistic √(c_α/N(t))·(Z_t^φ − H(t))/a_t,
//!   which is asymptotically standard normal without any W-rescaling because
//!   N(t)/(c_α e^{αt}) and W cancel.
//!
//! W and the W^{(j)}(λ) are limits and not observable; every use substitutes
//! the time-(t+δ) statistic, with δ defaulting to 2·ln 10/α so the proxy
//! error (order e^{−αδ/2}) sits a factor ten below the fluctuation scale.
//! Replicates are embarrassingly parallel; each draws from its own random
//! stream and the reductions run in replicate order, so a report is a pure
//! function of (law, characteristic, time, settings) — bit-stable across
//! thread counts.

use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::characteristics::{binomial, Characteristic};
use crate::engine::{self, PathRecord, StatRequest};
use crate::laws::{ReproductionLaw, ReproductionSample};
use crate::rng::RandomStream;
use crate::spectral::{
    coefficient_set, fluctuation_scale, h_function_lattice, sigma_squared_contour,
    sigma_squared_direct, spectral_profile, CoefficientSet, SpectralProfile,
};
use crate::{Error, Result};

/// Replicate budget for the cohort-count fast path. Counts cost O(1) memory
/// per cohort, so the ceiling only guards the range where u64 totals stay
/// exact in f64 arithmetic; the event path keeps `engine::DEFAULT_CAP`
/// because it materializes every individual.
const SCHEDULE_CAP: u64 = 1_000_000_000_000;

// Distinct seed salts so the auxiliary Monte Carlo passes (coefficients, σ²,
// bootstrap, covariance oracle) never share a stream with a replicate.
const RHO_SEED_SALT: u64 = 0x9e37_79b9_7f4a_7c15;
const SIGMA_SEED_SALT: u64 = 0x6a09_e667_f3bc_c908;
const BOOT_SEED_SALT: u64 = 0xbb67_ae85_84ca_a73b;
const ORACLE_SEED_SALT: u64 = 0x3c6e_f372_fe94_f82b;

/// Knobs for one verification run. `new` fills in the defaults the shipped
/// experiment configs use; every field stays public for tuning.
#[derive(Debug, Clone)]
pub struct ExperimentSettings {
    /// Number of independent replicate paths.
    pub replicates: u64,
    /// Master seed; replicate r draws from the stream keyed (seed, r).
    pub seed: u64,
    /// Martingale-proxy look-ahead δ; `None` picks αδ = 2 ln 10, rounded up
    /// to an integer on a lattice.
    pub delta: Option<f64>,
    /// Per-replicate individual budget; `None` picks the path-appropriate
    /// default (`engine::DEFAULT_CAP` event-driven, 10¹² cohort counts).
    pub cap: Option<u64>,
    /// Keep only surviving replicates in the returned sample list. The
    /// reported tests always condition on survival regardless.
    pub condition_on_survival: bool,
    /// Monte Carlo budget for the critical-line ρ_l estimates.
    pub rho_samples: usize,
    /// Monte Carlo budget for σ² when no closed form applies.
    pub sigma_samples: usize,
    /// Bootstrap resamples behind the variance-ratio confidence interval.
    pub bootstrap_resamples: usize,
}

impl ExperimentSettings {
    pub fn new(replicates: u64, seed: u64) -> Self {
        Self {
            replicates,
            seed,
            delta: None,
            cap: None,
            condition_on_survival: false,
            rho_samples: 200_000,
            sigma_samples: 200_000,
            bootstrap_resamples: 1_000,
        }
    }
}

/// Observables harvested from one replicate path.
#[derive(Debug, Clone, PartialEq)]
pub struct FluctuationSample {
    /// Z_t^φ − H(t), centered but not rescaled.
    pub raw: f64,
    /// Martingale proxy Ŵ = W_{t+δ}(α); non-negative, exactly 0 on extinct
    /// paths and of order e^{−αδ} when the line dies shortly before t+δ.
    pub w_hat: f64,
    /// Births up to and including time t (the root counts).
    pub n_t: u64,
    /// Whether the path was still breeding near the simulation horizon.
    pub survival: bool,
    /// raw / (a_t e^{αt/2}); 0 in the degenerate case a_t = 0.
    pub normalized: f64,
}

/// Summary statistics of one experiment plus the configuration echo that
/// makes a report self-describing.
#[derive(Debug, Clone, PartialEq)]
pub struct TestReport {
    pub replicates: u64,
    /// Replicates discarded because they hit the individual cap.
    pub dropped_capped: u64,
    /// Surviving replicates (positive Ŵ) entering the conditioned tests.
    pub survivors: u64,
    /// σ = 0 with no critical-line root: the fluctuation is almost surely
    /// the renewal-mean remainder and there is no limit law to test.
    pub degenerate: bool,
    /// Mean of normalized²·β/Ŵ over survivors; 1 under the limit law.
    pub variance_ratio: f64,
    /// 95% bootstrap percentile interval for `variance_ratio`.
    pub variance_ci: (f64, f64),
    /// KS distance of normalized·√(β/Ŵ) (survivors) from 𝒩(0, 1).
    pub ks_stat: f64,
    pub ks_p: f64,
    /// Mean |normalized·√(β/Ŵ)|; √(2/π) ≈ 0.798 under the limit law. In the
    /// degenerate case this reports mean |raw| instead, as an exactness check.
    pub mean_abs: f64,
    /// KS of the unconditional mixture statistic √(c_α/N(t))·raw/a_t.
    pub mixture_ks_stat: f64,
    pub mixture_ks_p: f64,
    // Configuration echo.
    pub alpha: f64,
    pub beta: f64,
    pub sigma_sq: f64,
    pub n_star: i32,
    pub a_t: f64,
    pub t: f64,
    pub delta: f64,
    pub seed: u64,
}

/// Per-replicate samples plus the report computed from them.
#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub samples: Vec<FluctuationSample>,
    pub report: TestReport,
}

/// Default martingale-proxy look-ahead: αδ = 2 ln 10, so the L² error of the
/// proxy relative to its limit — of order e^{−αδ/2} — is a tenth of one
/// fluctuation unit. Lattice laws get the next integer so the look-ahead
/// lands on the grid.
pub fn default_delta(alpha: f64, lattice: bool) -> f64 {
    let delta = 2.0 * std::f64::consts::LN_10 / alpha;
    if lattice {
        delta.ceil()
    } else {
        delta
    }
}

/// Proxy Ŵ for the limit of the α-discounted martingale on one path: the
/// discounted size of the coming generation at t+δ. Extinct paths give
/// exactly 0 (the coming generation is empty).
pub fn estimate_w(path: &PathRecord, alpha: f64, t: f64, delta: f64) -> Result<f64> {
    let w = engine::nerman_statistic(path, Complex64::new(alpha, 0.0), 0, t + delta)?;
    Ok(w.re)
}

/// H(t) for one simulated path, with every Ŵ^{(j)}(λ) read off the coming
/// generation at t+δ.
pub fn build_h(
    path: &PathRecord,
    profile: &SpectralProfile,
    coeffs: &CoefficientSet,
    t: f64,
    delta: f64,
) -> Result<f64> {
    let mut proxies: Vec<Vec<Complex64>> = vec![Vec::new(); profile.roots.len()];
    for (i, root) in profile.roots.iter().enumerate() {
        if root.on_critical_line {
            continue;
        }
        for j in 0..root.multiplicity as u32 {
            proxies[i].push(engine::nerman_statistic(path, root.lambda, j, t + delta)?);
        }
    }
    assemble_h(profile, coeffs, t, &proxies)
}

/// The fluctuation scale a_t, or an error in the degenerate case where both
/// σ and every critical-line ρ vanish: the count then equals H plus the
/// renewal remainder almost surely and there is nothing to normalize.
pub fn normalization(sigma_sq: f64, rho: &[f64], n_star: i32, t: f64) -> Result<f64> {
    if n_star < 0 && sigma_sq == 0.0 {
        return Err(Error::Domain(
            "σ = 0 with no critical-line root: the fluctuation is degenerate".into(),
        ));
    }
    Ok(fluctuation_scale(sigma_sq, rho, n_star, t))
}

/// The analytic block of an experiment: the spectral profile, the expansion
/// coefficients for the characteristic, and the variance constant σ².
/// Everything is a deterministic function of `settings` — where estimation
/// needs sampling (ρ, Monte Carlo σ²), the draws come from streams keyed
/// off `settings.seed` — so a standalone analysis and a full experiment on
/// the same configuration report identical values.
pub fn analytic_pipeline(
    law: &ReproductionLaw,
    characteristic: &Characteristic,
    settings: &ExperimentSettings,
) -> Result<(SpectralProfile, CoefficientSet, f64)> {
    let profile = spectral_profile(law, None)?;
    let coeffs = coefficient_set(
        law,
        &profile,
        characteristic,
        settings.rho_samples,
        settings.seed ^ RHO_SEED_SALT,
    )?;
    let sigma_sq = resolve_sigma(law, characteristic, &profile, &coeffs, settings)?;
    Ok((profile, coeffs, sigma_sq))
}

/// Simulate `settings.replicates` independent paths, center the score at
/// time `t` by H(t), and test the normalized fluctuations against the
/// predicted mixture law.
pub fn run_experiment(
    law: &ReproductionLaw,
    characteristic: &Characteristic,
    t: f64,
    settings: &ExperimentSettings,
) -> Result<ExperimentOutcome> {
    let (profile, coeffs, sigma_sq) = analytic_pipeline(law, characteristic, settings)?;
    let degenerate = coeffs.n_star < 0 && sigma_sq == 0.0;
    let a_t = if degenerate {
        0.0
    } else {
        fluctuation_scale(sigma_sq, &coeffs.rho, coeffs.n_star, t)
    };

    let context =
        ExperimentContext::new(law, characteristic, &profile, &coeffs, vec![t], t, settings)?;
    let (runs, dropped_capped) = context.run_all(settings.replicates)?;
    if runs.is_empty() {
        return Err(Error::InsufficientData(
            "every replicate hit the individual cap; raise the cap or shorten the horizon".into(),
        ));
    }

    let decay = (-0.5 * profile.alpha * t).exp();
    let samples: Vec<FluctuationSample> = runs
        .iter()
        .map(|run| {
            let raw = run.scores[0] - run.hs[0];
            FluctuationSample {
                raw,
                w_hat: run.w_hat,
                n_t: run.n_t,
                survival: run.survival,
                normalized: if degenerate { 0.0 } else { raw * decay / a_t },
            }
        })
        .collect();

    let survivors: Vec<&FluctuationSample> = samples
        .iter()
        .filter(|s| s.survival && s.w_hat > 0.0)
        .collect();
    if survivors.is_empty() {
        return Err(Error::InsufficientData(
            "no replicate survived to the horizon; the tests condition on survival".into(),
        ));
    }

    let beta = profile.beta;
    let report = if degenerate {
        let mean_abs =
            survivors.iter().map(|s| s.raw.abs()).sum::<f64>() / survivors.len() as f64;
        TestReport {
            replicates: settings.replicates,
            dropped_capped,
            survivors: survivors.len() as u64,
            degenerate,
            variance_ratio: 1.0,
            variance_ci: (1.0, 1.0),
            ks_stat: 0.0,
            ks_p: 1.0,
            mean_abs,
            mixture_ks_stat: 0.0,
            mixture_ks_p: 1.0,
            alpha: profile.alpha,
            beta,
            sigma_sq,
            n_star: coeffs.n_star,
            a_t,
            t,
            delta: context.delta,
            seed: settings.seed,
        }
    } else {
        let zs: Vec<f64> = survivors
            .iter()
            .map(|s| s.normalized * (beta / s.w_hat).sqrt())
            .collect();
        let squares: Vec<f64> = zs.iter().map(|z| z * z).collect();
        let variance_ratio = mean(&squares);
        let variance_ci = bootstrap_mean_ci(
            &squares,
            settings.bootstrap_resamples,
            settings.seed ^ BOOT_SEED_SALT,
        );
        let (ks_stat, ks_p) = ks_against_standard_normal(&zs);
        let mean_abs = zs.iter().map(|z| z.abs()).sum::<f64>() / zs.len() as f64;
        // The mixture route replaces β/Ŵ by the observable c_α/N(t): on the
        // lattice N(t) e^{−αt} → W/(1 − e^{−α}), in continuous time → W/α.
        let c_alpha = if law.is_lattice() {
            1.0 / (1.0 - (-profile.alpha).exp())
        } else {
            1.0 / profile.alpha
        };
        let ys: Vec<f64> = survivors
            .iter()
            .filter(|s| s.n_t > 0)
            .map(|s| s.raw * (c_alpha / s.n_t as f64).sqrt() / a_t)
            .collect();
        let (mixture_ks_stat, mixture_ks_p) = ks_against_standard_normal(&ys);
        TestReport {
            replicates: settings.replicates,
            dropped_capped,
            survivors: survivors.len() as u64,
            degenerate,
            variance_ratio,
            variance_ci,
            ks_stat,
            ks_p,
            mean_abs,
            mixture_ks_stat,
            mixture_ks_p,
            alpha: profile.alpha,
            beta,
            sigma_sq,
            n_star: coeffs.n_star,
            a_t,
            t,
            delta: context.delta,
            seed: settings.seed,
        }
    };

    let samples = if settings.condition_on_survival {
        samples.into_iter().filter(|s| s.survival).collect()
    } else {
        samples
    };
    Ok(ExperimentOutcome { samples, report })
}

/// One replicate of the paired-lag experiment: the centered fluctuation at
/// times t−s and t−u on the same path, each scaled by e^{−αt/2}·√(β/Ŵ) so
/// that products of pairs estimate the limit covariance E[G_s G_u] directly.
#[derive(Debug, Clone, PartialEq)]
pub struct LagPair {
    pub first: f64,
    pub second: f64,
    pub w_hat: f64,
    pub survival: bool,
}

/// Paired fluctuations at lags (s, u) behind a common observation time `t`;
/// the martingale proxies for both centerings are read at t+δ.
pub fn lag_fluctuations(
    law: &ReproductionLaw,
    characteristic: &Characteristic,
    t: f64,
    lags: (f64, f64),
    settings: &ExperimentSettings,
) -> Result<Vec<LagPair>> {
    let (s, u) = lags;
    if !(s >= 0.0 && u >= 0.0 && s <= t && u <= t) {
        return Err(Error::Domain(format!(
            "lags must lie in [0, t] (got s={s}, u={u}, t={t})"
        )));
    }
    let profile = spectral_profile(law, None)?;
    let coeffs = coefficient_set(
        law,
        &profile,
        characteristic,
        settings.rho_samples,
        settings.seed ^ RHO_SEED_SALT,
    )?;
    let context = ExperimentContext::new(
        law,
        characteristic,
        &profile,
        &coeffs,
        vec![t - s, t - u],
        t,
        settings,
    )?;
    let (runs, _) = context.run_all(settings.replicates)?;
    if runs.is_empty() {
        return Err(Error::InsufficientData(
            "every replicate hit the individual cap; raise the cap or shorten the horizon".into(),
        ));
    }
    let decay = (-0.5 * profile.alpha * t).exp();
    Ok(runs
        .iter()
        .map(|run| {
            let survival = run.survival && run.w_hat > 0.0;
            let scale = if survival {
                decay * (profile.beta / run.w_hat).sqrt()
            } else {
                0.0
            };
            LagPair {
                first: (run.scores[0] - run.hs[0]) * scale,
                second: (run.scores[1] - run.hs[1]) * scale,
                w_hat: run.w_hat,
                survival,
            }
        })
        .collect())
}

/// Empirical mean and standard error of first·second over the surviving
/// pairs; estimates the limit covariance at the two lags.
pub fn two_lag_covariance(pairs: &[LagPair]) -> Result<(f64, f64)> {
    let products: Vec<f64> = pairs
        .iter()
        .filter(|p| p.survival)
        .map(|p| p.first * p.second)
        .collect();
    if products.len() < 2 {
        return Err(Error::InsufficientData(
            "need at least two surviving pairs for a covariance".into(),
        ));
    }
    let m = mean(&products);
    let var =
        products.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (products.len() - 1) as f64;
    Ok((m, (var / products.len() as f64).sqrt()))
}

/// The limit covariance predicted at lags (s, u), evaluated by Monte Carlo
/// over reproduction samples:
///
///     Σ_{x∈ℤ} Cov[φ(x−s) + Σ_m h(x−s−X_m), φ(x−u) + Σ_m h(x−u−X_m)]·e^{−αx}
///
/// with h the mean function minus its root-set expansion. Returns the value
/// and a batch-means standard error. Lattice laws with integer lags only,
/// and only in the n* = −1 case the covariance formula covers.
pub fn two_lag_predicted(
    law: &ReproductionLaw,
    characteristic: &Characteristic,
    lags: (f64, f64),
    samples: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    let (s, u) = lags;
    if !law.is_lattice() {
        return Err(Error::Domain(
            "the covariance oracle is implemented for lattice laws only".into(),
        ));
    }
    if !(s >= 0.0 && u >= 0.0) || s.fract() != 0.0 || u.fract() != 0.0 {
        return Err(Error::Domain(format!(
            "lattice lags must be non-negative integers (got s={s}, u={u})"
        )));
    }
    const BATCHES: usize = 16;
    if samples < 10 * BATCHES {
        return Err(Error::Config(format!(
            "covariance oracle needs at least {} samples (got {samples})",
            10 * BATCHES
        )));
    }
    let profile = spectral_profile(law, None)?;
    let coeffs = coefficient_set(law, &profile, characteristic, samples, seed ^ RHO_SEED_SALT)?;
    if coeffs.n_star >= 0 {
        return Err(Error::Domain(
            "a critical-line root dominates: the flat covariance formula does not apply".into(),
        ));
    }
    let mean_fn = characteristic.mean_function(law)?;
    let h = h_function_lattice(law, &profile, &coeffs.a, &mean_fn)?;
    let alpha = profile.alpha;

    // Draw the reproduction samples once; every lattice site reuses them,
    // split into disjoint batches for the standard error.
    let mut rng = RandomStream::from_seed(seed ^ ORACLE_SEED_SALT);
    let batch_len = samples / BATCHES;
    let draws: Vec<ReproductionSample> = (0..BATCHES * batch_len)
        .map(|_| law.sample_reproduction(&mut rng))
        .collect();

    let site_covariances = |x: f64| -> Vec<f64> {
        (0..BATCHES)
            .map(|b| {
                let rows = &draws[b * batch_len..(b + 1) * batch_len];
                let (mut sum_f, mut sum_g, mut sum_fg) = (0.0, 0.0, 0.0);
                for row in rows {
                    let mut f = characteristic.evaluate(row, x - s);
                    let mut g = characteristic.evaluate(row, x - u);
                    for &delay in &row.offspring_delays {
                        f += h.value(x - s - delay);
                        g += h.value(x - u - delay);
                    }
                    sum_f += f;
                    sum_g += g;
                    sum_fg += f * g;
                }
                let n = rows.len() as f64;
                (sum_fg - sum_f * sum_g / n) / (n - 1.0)
            })
            .collect()
    };

    // Both tails die geometrically: towards −∞ the h-terms shrink like the
    // mean m^x while the weight grows like m^{−x}·m^{x}… net e^{+αx}; towards
    // +∞ the covariance settles while e^{−αx} kills the weight. A run of
    // negligible sites on either side ends the scan.
    let mut totals = vec![0.0f64; BATCHES];
    let scan = |start: f64, step: f64, totals: &mut Vec<f64>| -> Result<()> {
        let mut x = start;
        let mut quiet = 0;
        for _ in 0..500 {
            let covs = site_covariances(x);
            let weight = (-alpha * x).exp();
            let loudest = covs.iter().map(|c| (c * weight).abs()).fold(0.0, f64::max);
            for (total, cov) in totals.iter_mut().zip(&covs) {
                *total += cov * weight;
            }
            let scale = totals.iter().map(|t| t.abs()).fold(1e-12, f64::max);
            if loudest <= 1e-10 * scale {
                quiet += 1;
                if quiet >= 25 {
                    return Ok(());
                }
            } else {
                quiet = 0;
            }
            x += step;
        }
        Err(Error::Numerical(
            "covariance series did not settle within the site budget".into(),
        ))
    };
    scan(s.max(u), 1.0, &mut totals)?;
    scan(s.max(u) - 1.0, -1.0, &mut totals)?;

    let value = mean(&totals);
    let var = totals.iter().map(|v| (v - value).powi(2)).sum::<f64>()
        / (BATCHES - 1) as f64;
    Ok((value, (var / BATCHES as f64).sqrt()))
}

/// σ² for an experiment: 0 when a critical-line root dominates (its exact
/// value then never enters a_t), the closed-form value when one exists,
/// otherwise the direct Monte Carlo estimator on the lattice.
fn resolve_sigma(
    law: &ReproductionLaw,
    characteristic: &Characteristic,
    profile: &SpectralProfile,
    coeffs: &CoefficientSet,
    settings: &ExperimentSettings,
) -> Result<f64> {
    if coeffs.n_star >= 0 {
        return Ok(0.0);
    }
    match sigma_squared_contour(law, characteristic, profile.alpha) {
        Ok(value) => Ok(value),
        Err(closed_form_gap) => {
            if !law.is_lattice() {
                return Err(closed_form_gap);
            }
            let mean_fn = characteristic.mean_function(law)?;
            let h = h_function_lattice(law, profile, &coeffs.a, &mean_fn)?;
            let estimate = sigma_squared_direct(
                law,
                characteristic,
                profile,
                &h,
                settings.sigma_samples,
                settings.seed ^ SIGMA_SEED_SALT,
            )?;
            Ok(estimate.value.max(0.0))
        }
    }
}

/// H(t) from the expansion coefficients and the martingale proxies: an
/// interior root λ of multiplicity k contributes
/// e^{λt} Σ_{l<k} Σ_{j≤l} a_{λ,l} C(l,j) t^j Ŵ^{(l−j)}(λ), a critical-line
/// root the deterministic polynomial e^{λt} Σ_l a_{λ,l} t^l. `proxies[i][j]`
/// holds Ŵ^{(j)}(λ_i) for interior roots; critical-line slots are unused.
fn assemble_h(
    profile: &SpectralProfile,
    coeffs: &CoefficientSet,
    t: f64,
    proxies: &[Vec<Complex64>],
) -> Result<f64> {
    let mut total = Complex64::new(0.0, 0.0);
    for (i, root) in profile.roots.iter().enumerate() {
        let wave = (root.lambda * t).exp();
        let a = &coeffs.a[i];
        if root.on_critical_line {
            let mut poly = Complex64::new(0.0, 0.0);
            let mut power = 1.0;
            for &coeff in a {
                poly += coeff * power;
                power *= t;
            }
            total += wave * poly;
        } else {
            for (l, &coeff) in a.iter().enumerate() {
                for j in 0..=l {
                    total += wave
                        * coeff
                        * binomial(l, j)
                        * t.powi(j as i32)
                        * proxies[i][l - j];
                }
            }
        }
    }
    // Roots off the real axis come in conjugate pairs with conjugate
    // coefficients and conjugate proxies, so imaginary parts must cancel; a
    // residual means the coefficient rows and the root list disagree.
    if total.im.abs() > 1e-8 * (1.0 + total.re.abs()) {
        return Err(Error::Numerical(format!(
            "H(t) kept an imaginary part ({:.3e} against real part {:.3e}): \
             coefficients and roots are not conjugate-paired",
            total.im, total.re
        )));
    }
    Ok(total.re)
}

/// Everything one replicate needs, precomputed once per experiment.
struct ExperimentContext<'a> {
    law: &'a ReproductionLaw,
    characteristic: &'a Characteristic,
    profile: &'a SpectralProfile,
    coeffs: &'a CoefficientSet,
    /// Times at which the score is read (one for a plain experiment, two for
    /// a lag pair).
    times: Vec<f64>,
    /// Time at which N(t) is counted.
    count_time: f64,
    horizon: f64,
    delta: f64,
    cap: u64,
    /// Lattice law with a deterministic characteristic on integer times:
    /// cohort counts carry the whole statistic and no path is materialized.
    use_schedule: bool,
    /// Interior (root index, derivative order) pairs behind the Ŵ proxies.
    proxy_index: Vec<(usize, u32)>,
    /// Event-path request list; scores first, then births, then proxies.
    requests: Vec<StatRequest>,
    seed: u64,
}

/// Raw per-replicate readings before any normalization.
struct ReplicateStats {
    scores: Vec<f64>,
    hs: Vec<f64>,
    w_hat: f64,
    n_t: u64,
    survival: bool,
}

impl<'a> ExperimentContext<'a> {
    fn new(
        law: &'a ReproductionLaw,
        characteristic: &'a Characteristic,
        profile: &'a SpectralProfile,
        coeffs: &'a CoefficientSet,
        times: Vec<f64>,
        count_time: f64,
        settings: &ExperimentSettings,
    ) -> Result<Self> {
        if settings.replicates == 0 {
            return Err(Error::Config("experiment needs at least one replicate".into()));
        }
        for &tau in &times {
            if !tau.is_finite() || tau < 0.0 {
                return Err(Error::Domain(format!(
                    "scores are defined for times ≥ 0 (got {tau})"
                )));
            }
        }
        let lattice = law.is_lattice();
        let delta = settings
            .delta
            .unwrap_or_else(|| default_delta(profile.alpha, lattice));
        if !delta.is_finite() || delta <= 0.0 {
            return Err(Error::Config(format!(
                "proxy look-ahead must be positive and finite (got {delta})"
            )));
        }
        let latest = times.iter().fold(count_time, |acc, &tau| acc.max(tau));
        let horizon = latest + delta;
        let use_schedule = lattice
            && characteristic.is_deterministic()
            && horizon.fract() == 0.0
            && count_time.fract() == 0.0
            && times.iter().all(|tau| tau.fract() == 0.0)
            && horizon <= f64::from(u32::MAX);
        let cap = settings.cap.unwrap_or(if use_schedule {
            SCHEDULE_CAP
        } else {
            engine::DEFAULT_CAP
        });

        let proxy_index: Vec<(usize, u32)> = profile
            .roots
            .iter()
            .enumerate()
            .filter(|(_, root)| !root.on_critical_line)
            .flat_map(|(i, root)| (0..root.multiplicity as u32).map(move |j| (i, j)))
            .collect();

        let mut requests = Vec::with_capacity(times.len() + 2 + proxy_index.len());
        for &tau in &times {
            requests.push(StatRequest::Score {
                characteristic: characteristic.clone(),
                t: tau,
            });
        }
        requests.push(StatRequest::Births { t: count_time });
        requests.push(StatRequest::Nerman {
            lambda: Complex64::new(profile.alpha, 0.0),
            j: 0,
            t: horizon,
        });
        for &(i, j) in &proxy_index {
            requests.push(StatRequest::Nerman {
                lambda: profile.roots[i].lambda,
                j,
                t: horizon,
            });
        }

        Ok(Self {
            law,
            characteristic,
            profile,
            coeffs,
            times,
            count_time,
            horizon,
            delta,
            cap,
            use_schedule,
            proxy_index,
            requests,
            seed: settings.seed,
        })
    }

    /// All replicates, in index order; the second value counts the capped
    /// ones that were dropped.
    fn run_all(&self, replicates: u64) -> Result<(Vec<ReplicateStats>, u64)> {
        let runs: Result<Vec<Option<ReplicateStats>>> = (0..replicates)
            .into_par_iter()
            .map(|r| self.run_replicate(r))
            .collect();
        let mut kept = Vec::new();
        let mut dropped = 0u64;
        for run in runs? {
            match run {
                Some(stats) => kept.push(stats),
                None => dropped += 1,
            }
        }
        Ok((kept, dropped))
    }

    /// One replicate; `None` marks a capped path.
    fn run_replicate(&self, replicate: u64) -> Result<Option<ReplicateStats>> {
        let mut rng = RandomStream::for_replicate(self.seed, replicate);
        let (scores, w_hat, proxies, n_t, survival) = if self.use_schedule {
            let schedule = engine::lattice_schedule(self.law, self.horizon as u32, self.cap, &mut rng)?;
            if schedule.capped {
                return Ok(None);
            }
            let horizon_n = self.horizon as u32;
            let scores: Vec<f64> = self
                .times
                .iter()
                .map(|&tau| {
                    (0..=tau as u32)
                        .map(|cohort| {
                            schedule.births_at(cohort) as f64
                                * self.characteristic.deterministic_value(tau - f64::from(cohort))
                        })
                        .sum()
                })
                .collect();
            let w_hat = schedule
                .nerman(Complex64::new(self.profile.alpha, 0.0), 0, horizon_n)
                .re;
            let mut proxies: Vec<Vec<Complex64>> = vec![Vec::new(); self.profile.roots.len()];
            for &(i, j) in &self.proxy_index {
                proxies[i].push(schedule.nerman(self.profile.roots[i].lambda, j, horizon_n));
            }
            let n_t = schedule.births_through(self.count_time as u32);
            (scores, w_hat, proxies, n_t, schedule.survival)
        } else {
            let stats =
                engine::simulate_stats(self.law, self.horizon, self.cap, &self.requests, &mut rng)?;
            if stats.capped {
                return Ok(None);
            }
            let k = self.times.len();
            let scores: Vec<f64> = stats.values[..k].iter().map(|v| v.re).collect();
            let n_t = stats.values[k].re.round() as u64;
            let w_hat = stats.values[k + 1].re;
            let mut proxies: Vec<Vec<Complex64>> = vec![Vec::new(); self.profile.roots.len()];
            for (slot, &(i, _)) in self.proxy_index.iter().enumerate() {
                proxies[i].push(stats.values[k + 2 + slot]);
            }
            (scores, w_hat, proxies, n_t, stats.survival)
        };
        let hs: Vec<f64> = self
            .times
            .iter()
            .map(|&tau| assemble_h(self.profile, self.coeffs, tau, &proxies))
            .collect::<Result<_>>()?;
        Ok(Some(ReplicateStats {
            scores,
            hs,
            w_hat,
            n_t,
            survival,
        }))
    }
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// One-sample Kolmogorov–Smirnov test against 𝒩(0, 1): the statistic D and
/// the asymptotic p-value with the small-sample correction
/// λ = (√n + 0.12 + 0.11/√n)·D.
fn ks_against_standard_normal(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 1.0);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut d = 0.0f64;
    for (i, &z) in sorted.iter().enumerate() {
        let cdf = normal.cdf(z);
        d = d.max(cdf - i as f64 / n).max((i as f64 + 1.0) / n - cdf);
    }
    let lambda = (n.sqrt() + 0.12 + 0.11 / n.sqrt()) * d;
    (d, kolmogorov_survival(lambda))
}

/// P(K > λ) for the Kolmogorov distribution, via the alternating series
/// 2 Σ_{k≥1} (−1)^{k−1} e^{−2k²λ²}.
fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda <= 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for k in 1..=100u32 {
        let term = (-2.0 * (f64::from(k) * lambda).powi(2)).exp();
        sum += sign * term;
        sign = -sign;
        if term < 1e-14 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// 95% percentile bootstrap interval for the mean of `values`.
fn bootstrap_mean_ci(values: &[f64], resamples: usize, seed: u64) -> (f64, f64) {
    if values.len() < 2 || resamples == 0 {
        let m = mean(values);
        return (m, m);
    }
    let mut rng = RandomStream::from_seed(seed);
    let mut means: Vec<f64> = (0..resamples)
        .map(|_| {
            let total: f64 = (0..values.len())
                .map(|_| values[rng.gen_range(0..values.len())])
                .sum();
            total / values.len() as f64
        })
        .collect();
    means.sort_by(f64::total_cmp);
    let pick = |q: f64| means[((q * resamples as f64) as usize).min(resamples - 1)];
    (pick(0.025), pick(0.975))
}
