//! End-to-end verification of the shipped configurations at their stated
//! tolerances. Each check prints one verdict line — visible with
//! `cargo test --test acceptance -- --nocapture` — and then asserts it.
//!
//! Two checks are knowingly red and kept that way on purpose:
//! * `poisson_lifetime_variance_follows_the_stated_closed_form` pins the
//!   published constant 2/(αbβ); both an exact contour evaluation and the
//!   Monte Carlo runs land on 2/(αbβ) − 1/b instead, consistently with each
//!   other, so the published constant appears to drop the birth-time
//!   self-term. The verdict line carries both numbers.
//! * `the_renewal_mean_reaches_the_growth_coefficient_by_t_30` pins a 2%
//!   agreement at t = 30; the slowest subdominant root pair of this kernel
//!   decays like e^{−0.069t} and still contributes ≈3–4% there. The same
//!   pipeline is within tolerance once the transient has died (t = 70),
//!   which the verdict line also reports.

use std::time::Instant;

use cmj::characteristics::{centered_characteristic, Characteristic};
use cmj::engine::{
    lattice_schedule, renewal_mean_grid, renewal_mean_lattice, score, simulate, simulate_stats,
    StatRequest,
};
use cmj::harness::{run_experiment, ExperimentSettings};
use cmj::laws::{LifetimeDist, ReproductionLaw};
use cmj::rng::RandomStream;
use cmj::spectral::coeffs::matrix_determinant;
use cmj::spectral::{
    coefficient_matrix, epidemic_roots_closed_form, epidemic_threshold, expansion_vector,
    find_roots, h_function_lattice, malthusian, mean_coefficients, sigma_squared_contour,
    sigma_squared_direct, spectral_profile, RootSearch,
};
use cmj::Complex64;

fn one_or_three() -> ReproductionLaw {
    ReproductionLaw::galton_watson(vec![(1, 0.5), (3, 0.5)]).unwrap()
}

fn epidemic(r0: f64) -> ReproductionLaw {
    ReproductionLaw::epidemic_gamma(18.0, 1.0, r0).unwrap()
}

fn variance(values: &[f64]) -> f64 {
    let m = values.iter().sum::<f64>() / values.len() as f64;
    values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (values.len() - 1) as f64
}

/// Prints the verdict line for one check and returns it for the assert.
fn verdict(slot: usize, pass: bool, detail: &str, started: Instant) -> String {
    let line = format!(
        "[{slot}/9] {} — {detail} ({:.1}s)",
        if pass { "PASS" } else { "FAIL" },
        started.elapsed().as_secs_f64()
    );
    println!("{line}");
    line
}

/// Generation counts of the binary-mean Galton–Watson law: the fluctuation
/// variance Var[m^{T/2}(W_T − Ŵ)] must land on Var[N]/(m² − m) = 1/2 within
/// 10%, and the standardized sample must look normal, at T = 14, δ = 8,
/// 5000 replicates, in under a minute.
#[test]
fn generation_counts_satisfy_the_classical_central_limit_theorem() {
    let started = Instant::now();
    let law = one_or_three();
    let mut settings = ExperimentSettings::new(5000, 0xC1A0);
    settings.delta = Some(8.0);
    let outcome =
        run_experiment(&law, &Characteristic::GenerationCounter, 14.0, &settings).unwrap();
    let report = &outcome.report;

    // m^{T/2}(W_T − Ŵ) = e^{−αT/2}(Z_T − H(T)) since H(T) = m^T·Ŵ here.
    let decay = (-0.5 * report.alpha * 14.0).exp();
    let scaled: Vec<f64> = outcome.samples.iter().map(|s| s.raw * decay).collect();
    let var = variance(&scaled);

    let var_ok = (var / 0.5 - 1.0).abs() <= 0.10;
    let ks_ok = report.ks_p > 0.01;
    let in_time = started.elapsed().as_secs_f64() < 60.0;
    let line = verdict(
        1,
        var_ok && ks_ok && in_time,
        &format!(
            "Var[m^(T/2)(W_T−Ŵ)] = {var:.4} (0.5 ±10%), KS p = {:.3} (> 0.01)",
            report.ks_p
        ),
        started,
    );
    assert!(var_ok && ks_ok && in_time, "{line}");
}

/// Total progeny of the same law: the coefficient pipeline must reproduce
/// a_α = m/(m−1) = 2 and σ² = (m+1)Var[N]/(m−1)³ = 3 to 1e-8, and the Monte
/// Carlo fluctuation variance must land on 3 within 10%, in under 90 s.
#[test]
fn total_progeny_constants_and_variance_match_the_closed_forms() {
    let started = Instant::now();
    let law = one_or_three();
    let profile = spectral_profile(&law, None).unwrap();

    let b: Vec<Vec<Complex64>> = profile
        .roots
        .iter()
        .map(|root| {
            let m = coefficient_matrix(&law, root, true).unwrap();
            expansion_vector(&m, root.multiplicity).unwrap()
        })
        .collect();
    let mean_fn = Characteristic::BornCounter.mean_function(&law).unwrap();
    let a = mean_coefficients(&profile, &b, &mean_fn, true).unwrap();
    let a_alpha = a[0][0];
    let a_ok = (a_alpha.re - 2.0).abs() <= 2.0 * 1e-8 && a_alpha.im.abs() <= 1e-10;

    let h = h_function_lattice(&law, &profile, &a, &mean_fn).unwrap();
    let direct =
        sigma_squared_direct(&law, &Characteristic::BornCounter, &profile, &h, 10_000, 7)
            .unwrap();
    let sigma_ok = (direct.value - 3.0).abs() <= 3.0 * 1e-8;

    let mut settings = ExperimentSettings::new(5000, 0xB0B);
    settings.delta = Some(8.0);
    let outcome = run_experiment(&law, &Characteristic::BornCounter, 14.0, &settings).unwrap();
    let decay = (-0.5 * outcome.report.alpha * 14.0).exp();
    let scaled: Vec<f64> = outcome.samples.iter().map(|s| s.raw * decay).collect();
    let var = variance(&scaled);
    let mc_ok = (var / 3.0 - 1.0).abs() <= 0.10;

    let in_time = started.elapsed().as_secs_f64() < 90.0;
    let line = verdict(
        2,
        a_ok && sigma_ok && mc_ok && in_time,
        &format!(
            "a_α = {:.10} (2 ±1e-8), σ² enumerated = {:.10} (3 ±1e-8), MC Var = {var:.3} (3 ±10%)",
            a_alpha.re, direct.value
        ),
        started,
    );
    assert!(a_ok && sigma_ok && mc_ok && in_time, "{line}");
}

/// The lattice renewal solver must return the total-progeny mean
/// (m^{n+1} − 1)/(m − 1) exactly — not approximately — through n = 30.
#[test]
fn the_lattice_renewal_mean_is_exact_for_total_progeny() {
    let started = Instant::now();
    let law = one_or_three();
    let mean_fn = Characteristic::BornCounter.mean_function(&law).unwrap();
    let means = renewal_mean_lattice(&law, &mean_fn, 30).unwrap();
    let exact = means
        .iter()
        .enumerate()
        .all(|(n, &value)| value == 2f64.powi(n as i32 + 1) - 1.0);
    let in_time = started.elapsed().as_secs_f64() < 1.0;
    let line = verdict(
        3,
        exact && in_time,
        "m_n = 2^(n+1) − 1 exactly for all n ≤ 30",
        started,
    );
    assert!(exact && in_time, "{line}");
}

/// Root location for the Gamma(18) infection kernel: the numeric search must
/// match the closed form to 1e-10 on both sides of the reproduction-number
/// threshold, the first conjugate pair must sit strictly left of the
/// critical line at R0 = 10 and strictly right at R0 = 12, and the closed
/// threshold itself must fall between the two.
#[test]
fn epidemic_roots_match_the_closed_form_on_both_sides_of_the_threshold() {
    let started = Instant::now();
    let mut ok = true;
    let mut details = Vec::new();
    for (r0, pair_inside) in [(10.0, false), (12.0, true)] {
        let law = epidemic(r0);
        let alpha = malthusian(&law).unwrap();
        let found = find_roots(
            &law,
            alpha,
            &RootSearch {
                re_min: 0.0,
                im_max: 1.0,
            },
        )
        .unwrap();
        let closed = epidemic_roots_closed_form(18.0, 1.0, r0);
        let worst = found
            .iter()
            .map(|root| {
                closed
                    .iter()
                    .map(|c| (c - root.lambda).norm())
                    .fold(f64::INFINITY, f64::min)
            })
            .fold(0.0, f64::max);
        ok &= worst <= 1e-10;
        // α and the first conjugate pair are the only roots with Re ≥ 0.
        ok &= found.len() == 3;
        let pair_re = found
            .iter()
            .filter(|r| r.lambda.im.abs() > 1e-6)
            .map(|r| r.lambda.re)
            .fold(f64::NEG_INFINITY, f64::max);
        ok &= (pair_re > alpha / 2.0) == pair_inside;
        details.push(format!(
            "R0={r0}: max |Δλ| = {worst:.1e}, Re λ₁ − α/2 = {:+.1e}",
            pair_re - alpha / 2.0
        ));
    }
    let threshold = epidemic_threshold(18.0);
    ok &= 10.0 < threshold && threshold < 12.0;
    details.push(format!("threshold = {threshold:.4} ∈ (10, 12)"));
    let in_time = started.elapsed().as_secs_f64() < 5.0;
    let line = verdict(4, ok && in_time, &details.join("; "), started);
    assert!(ok && in_time, "{line}");
}

/// Poisson births over an exponential lifetime, counted while alive: the
/// stated variance constant is σ² = 2/(αbβ). Expected red, twice over:
/// the exact contour evaluation gives 2/(αbβ) − 1/b (25% below the stated
/// value), and the Monte Carlo fluctuation variance agrees with the contour
/// value, not the stated one. Also note the stated verify horizon T = 16 is
/// not materializable — E[N] = 1 + (b/α)(e^{αt} − 1) ≈ 1.8·10⁹ per replicate
/// at the proxy horizon — so the run executes at T = 5.
#[test]
fn poisson_lifetime_variance_follows_the_stated_closed_form() {
    let started = Instant::now();
    let law =
        ReproductionLaw::poisson_lifetime(2.0, LifetimeDist::Exponential { rate: 1.0 }).unwrap();
    let profile = spectral_profile(&law, None).unwrap();
    let (alpha, beta, b) = (profile.alpha, profile.beta, 2.0);
    let stated = 2.0 / (alpha * b * beta);
    let contour = sigma_squared_contour(&law, &Characteristic::Alive, alpha).unwrap();
    let closed_ok = ((contour - stated) / stated).abs() <= 1e-4;

    let settings = ExperimentSettings::new(3000, 0x9d);
    let outcome = run_experiment(&law, &Characteristic::Alive, 5.0, &settings).unwrap();
    // Var[e^{−αT/2}(Z_T − H(T))] over all replicates converges to
    // σ²·E[W]/β with E[W] = 1, so β·Var is the empirical σ². (The
    // per-path Ŵ-standardized moment is not usable this shallow: survivors
    // with a near-zero martingale limit blow up its 1/Ŵ factor.)
    let decay = (-0.5 * alpha * 5.0).exp();
    let scaled: Vec<f64> = outcome.samples.iter().map(|s| s.raw * decay).collect();
    let empirical = beta * variance(&scaled);
    let mc_ok = (empirical / stated - 1.0).abs() <= 0.15;
    let against_contour = (empirical / contour - 1.0).abs() <= 0.15;

    let in_time = started.elapsed().as_secs_f64() < 120.0;
    let line = verdict(
        5,
        closed_ok && mc_ok && in_time,
        &format!(
            "contour σ² = {contour:.6} vs stated 2/(αbβ) = {stated:.4} (Δ {:+.1}%); \
             MC σ² = β·Var = {empirical:.3} vs stated (Δ {:+.1}%); \
             MC vs contour Δ {:+.1}% ({}); note 2/(αbβ) − 1/b = {:.4}",
            100.0 * (contour / stated - 1.0),
            100.0 * (empirical / stated - 1.0),
            100.0 * (empirical / contour - 1.0),
            if against_contour { "within 15%" } else { "outside 15%" },
            stated - 1.0 / b
        ),
        started,
    );
    assert!(closed_ok && mc_ok && in_time, "{line}");
}

/// det(M^λ) = (−𝓛μ^{(k)}(λ)/k)^k for every root of every shipped law, plus
/// a synthetic kernel with a genuine double root to exercise k = 2.
#[test]
fn coefficient_determinants_obey_the_derivative_identity() {
    let started = Instant::now();
    let double_root =
        ReproductionLaw::lattice_atoms(vec![(1, 1.0), (2, 16.0), (3, 20.0)], false).unwrap();
    let laws = [
        one_or_three(),
        epidemic(10.0),
        epidemic(12.0),
        ReproductionLaw::poisson_lifetime(2.0, LifetimeDist::Exponential { rate: 1.0 }).unwrap(),
    ];
    let mut worst = 0.0f64;
    let mut count = 0usize;
    let mut check = |law: &ReproductionLaw, roots: &[cmj::spectral::Root]| {
        for root in roots {
            let k = root.multiplicity;
            let m = coefficient_matrix(law, root, law.is_lattice()).unwrap();
            let det = matrix_determinant(&m);
            let deriv = law.laplace_derivative(root.lambda, k as u32).unwrap();
            let target = (-deriv / k as f64).powu(k as u32);
            worst = worst.max((det - target).norm() / target.norm());
            count += 1;
        }
    };
    for law in &laws {
        let profile = spectral_profile(law, None).unwrap();
        check(law, &profile.roots);
    }
    // The double root of this kernel sits below the critical line, so reach
    // for it with an explicit deeper search.
    let alpha = malthusian(&double_root).unwrap();
    let deep = find_roots(
        &double_root,
        alpha,
        &RootSearch {
            re_min: 0.6,
            im_max: 3.2,
        },
    )
    .unwrap();
    assert!(
        deep.iter().any(|r| r.multiplicity == 2),
        "the synthetic kernel must expose its double root"
    );
    check(&double_root, &deep);

    let ok = worst <= 1e-8 && count >= 7;
    let in_time = started.elapsed().as_secs_f64() < 1.0;
    let line = verdict(
        6,
        ok && in_time,
        &format!("{count} roots checked, worst relative determinant error {worst:.1e}"),
        started,
    );
    assert!(ok && in_time, "{line}");
}

/// Martingale suite: E[W_t(α)] = 1 within four standard errors at
/// t ∈ {5, 10, 15} over 10⁴ replicates, for both a lattice and a
/// continuous-time law, and the generation-slice and coming-generation
/// limits identify the same W (correlation > 0.99).
#[test]
fn martingale_means_and_limit_identifications_hold() {
    let started = Instant::now();
    let replicates = 10_000u64;
    let mut ok = true;
    let mut details = Vec::new();

    // Lattice law, cohort counts.
    let gw = one_or_three();
    let alpha = malthusian(&gw).unwrap();
    let lambda = Complex64::new(alpha, 0.0);
    let mut values = [Vec::new(), Vec::new(), Vec::new()];
    for r in 0..replicates {
        let mut rng = RandomStream::for_replicate(0x57A7, r);
        let schedule = lattice_schedule(&gw, 15, 1 << 40, &mut rng).unwrap();
        for (slot, &t) in [5u32, 10, 15].iter().enumerate() {
            values[slot].push(schedule.nerman(lambda, 0, t).re);
        }
    }
    for (slot, &t) in [5u32, 10, 15].iter().enumerate() {
        let (m, se) = mean_and_se(&values[slot]);
        ok &= (m - 1.0).abs() <= 4.0 * se;
        details.push(format!("GW t={t}: {m:.4}±{se:.4}"));
    }

    // Continuous-time law, event paths.
    let epi = epidemic(10.0);
    let epi_alpha = malthusian(&epi).unwrap();
    let requests: Vec<StatRequest> = [5.0, 10.0, 15.0]
        .iter()
        .map(|&t| StatRequest::Nerman {
            lambda: Complex64::new(epi_alpha, 0.0),
            j: 0,
            t,
        })
        .collect();
    let mut values = [Vec::new(), Vec::new(), Vec::new()];
    for r in 0..replicates {
        let mut rng = RandomStream::for_replicate(0x57A8, r);
        let stats = simulate_stats(&epi, 15.0, 1 << 24, &requests, &mut rng).unwrap();
        for (slot, value) in stats.values.iter().enumerate() {
            values[slot].push(value.re);
        }
    }
    for (slot, &t) in [5.0f64, 10.0, 15.0].iter().enumerate() {
        let (m, se) = mean_and_se(&values[slot]);
        ok &= (m - 1.0).abs() <= 4.0 * se;
        details.push(format!("epidemic t={t}: {m:.4}±{se:.4}"));
    }

    // Limit identification: generation slices against the coming generation.
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for r in 0..400u64 {
        let mut rng = RandomStream::for_replicate(0x57A9, r);
        let schedule = lattice_schedule(&gw, 18, 1 << 40, &mut rng).unwrap();
        xs.push(schedule.births_at(12) as f64 * (-alpha * 12.0).exp());
        ys.push(schedule.nerman(lambda, 0, 18).re);
    }
    let corr = correlation(&xs, &ys);
    ok &= corr > 0.99;
    details.push(format!("corr(B₁₂m⁻¹², W₁₈) = {corr:.4}"));

    let in_time = started.elapsed().as_secs_f64() < 120.0;
    let line = verdict(7, ok && in_time, &details.join("; "), started);
    assert!(ok && in_time, "{line}");
}

/// Centering identity: Z_t^f − m_t^f = Z_t^{χ_f} exactly, path by path, on
/// 100 simulated trees at every integer time through 14.
#[test]
fn scores_center_exactly_against_the_renewal_mean() {
    let started = Instant::now();
    let law = one_or_three();
    let f = Characteristic::BornCounter;
    let means = renewal_mean_lattice(&law, &f.mean_function(&law).unwrap(), 14).unwrap();
    let centered = centered_characteristic(&f, &law, &means).unwrap();
    let mut worst = 0.0f64;
    for r in 0..100u64 {
        let mut rng = RandomStream::for_replicate(0xCE27, r);
        let path = simulate(&law, 14.0, 1 << 24, &mut rng).unwrap();
        for (n, &m_n) in means.iter().enumerate() {
            let lhs = score(&path, &centered, n as f64).unwrap();
            let rhs = score(&path, &f, n as f64).unwrap() - m_n;
            worst = worst.max((lhs - rhs).abs());
        }
    }
    let ok = worst <= 1e-9;
    let in_time = started.elapsed().as_secs_f64() < 10.0;
    let line = verdict(
        8,
        ok && in_time,
        &format!("max |[Z_t^f − m_t^f] − Z_t^χ| = {worst:.1e} over 100 paths × 15 times"),
        started,
    );
    assert!(ok && in_time, "{line}");
}

/// Key renewal limit for the Gamma(18) kernel: e^{−αt}·m_t at t = 30 against
/// a_α = 1/(αβ) within 2%, on a dt = 0.005 grid. Expected red: the first
/// conjugate root pair decays like e^{−0.069t} and still holds ≈3–4% at
/// t = 30; the verdict line shows the same pipeline inside tolerance at
/// t = 70, where that transient has died out.
#[test]
fn the_renewal_mean_reaches_the_growth_coefficient_by_t_30() {
    let started = Instant::now();
    let law = epidemic(10.0);
    let profile = spectral_profile(&law, None).unwrap();
    let a_alpha = 1.0 / (profile.alpha * profile.beta);
    let mean_fn = Characteristic::BornCounter.mean_function(&law).unwrap();
    let dt = 0.005;

    let grid = renewal_mean_grid(&law, &mean_fn, 70.0, dt).unwrap();
    let at = |t: f64| grid[(t / dt).round() as usize] * (-profile.alpha * t).exp();
    let rel30 = at(30.0) / a_alpha - 1.0;
    let rel70 = at(70.0) / a_alpha - 1.0;

    let ok = rel30.abs() <= 0.02;
    let in_time = started.elapsed().as_secs_f64() < 30.0;
    let line = verdict(
        9,
        ok && in_time,
        &format!(
            "e^(−αt)m_t vs a_α = {a_alpha:.5}: {:+.2}% at t=30 (need ±2%), {:+.2}% at t=70",
            100.0 * rel30,
            100.0 * rel70
        ),
        started,
    );
    assert!(ok && in_time, "{line}");
}

fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let m = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

fn correlation(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        cov += (x - mx) * (y - my);
        vx += (x - mx).powi(2);
        vy += (y - my).powi(2);
    }
    cov / (vx * vy).sqrt()
}
