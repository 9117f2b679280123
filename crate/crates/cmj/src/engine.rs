//! Event-driven simulation of the branching process and exact renewal
//! solvers for its mean behaviour.
//!
//! The simulator materializes the family tree in birth order with a
//! min-priority queue: pop the earliest scheduled child with birth time
//! within the horizon, draw its reproduction, schedule its children, repeat.
//! Children scheduled past the horizon are retained as *coming generation*
//! entries (birth time known, sample not drawn), which is exactly the set
//! 𝒞_t the martingale statistics
//!
//! ```text
//! W_t^{(j)}(λ) = (−1)^j Σ_{u ∈ 𝒞_t} S(u)^j e^{−λ S(u)}
//! ```
//!
//! sum over. Two consumers share one driver: [`simulate`] materializes a
//! full [`PathRecord`], [`simulate_stats`] folds the requested statistics on
//! the fly without storing the tree. Both draw from the random stream in
//! identical order, so a streamed statistic equals the one recomputed from
//! the materialized path at the same seed.
//!
//! For lattice laws there is additionally [`lattice_schedule`], which
//! simulates whole birth *cohorts* at a time (one multinomial or Poisson
//! draw per time step and atom instead of one draw per individual). It is
//! distributionally exact and makes replicate counts of 10⁵ and horizons of
//! dozens of steps affordable.
//!
//! The renewal solvers compute the mean E[Z_t^φ] = m_t^φ from
//! m = E[φ] + μ∗m — exactly on the integer lattice, and as a
//! trapezoid-discretized iteration (an *oracle with a bias band*, never
//! ground truth) for absolutely continuous laws.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::io::{Read, Write};

use num_complex::Complex64;
use rand_distr::{Binomial, Distribution, Poisson};

use crate::characteristics::{Characteristic, MeanFunction};
use crate::laws::{LawKind, LifetimeDist, ReproductionLaw, ReproductionSample};
use crate::rng::RandomStream;
use crate::{Error, Result};

/// Default cap on materialized individuals per path; replicates that hit it
/// are flagged and excluded from statistics by the harness.
pub const DEFAULT_CAP: u64 = 10_000_000;

/// One row of the family tree.
#[derive(Debug, Clone, PartialEq)]
pub struct IndividualRecord {
    /// Row index; equals the position in [`PathRecord::individuals`].
    pub id: u64,
    /// Parent id; `None` for the ancestor.
    pub parent: Option<u64>,
    /// Birth time S(u); the ancestor is born at 0.
    pub birth_time: f64,
    /// The drawn reproduction (delays and lifetime). `None` for rows that
    /// were never materialized: coming-generation entries past the horizon
    /// and, on capped paths, scheduled-but-unborn children.
    pub sample: Option<ReproductionSample>,
}

/// A simulated family tree up to a horizon.
///
/// Invariants: birth times are non-decreasing in row order, ids equal row
/// indices, every child's birth time is its parent's plus one of the
/// parent's delays, and — unless `capped` — every child of a materialized
/// parent appears (with a sample iff its birth time is within the horizon).
#[derive(Debug, Clone, PartialEq)]
pub struct PathRecord {
    pub individuals: Vec<IndividualRecord>,
    pub horizon: f64,
    /// The cap on materialized individuals was hit; the tree is truncated
    /// and sample-dependent statistics of it are biased.
    pub capped: bool,
    /// A birth occurred in the trailing window (horizon−1, horizon] — the
    /// observable proxy for non-extinction.
    pub survival: bool,
}

impl PathRecord {
    /// Number of materialized individuals (rows carrying a sample).
    pub fn materialized_count(&self) -> usize {
        self.individuals.iter().filter(|r| r.sample.is_some()).count()
    }

    /// Number of coming-generation entries (births past the horizon).
    pub fn coming_count(&self) -> usize {
        self.individuals.iter().filter(|r| r.birth_time > self.horizon).count()
    }
}

/// A child waiting to be born, ordered by (birth time, scheduling sequence)
/// so heap pops are deterministic even on ties.
#[derive(Debug, Clone, Copy)]
struct Scheduled {
    birth: f64,
    seq: u64,
    parent: Option<u64>,
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        self.birth == other.birth && self.seq == other.seq
    }
}

impl Eq for Scheduled {}

impl Ord for Scheduled {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.birth.total_cmp(&other.birth).then(self.seq.cmp(&other.seq))
    }
}

impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

/// Receiver of simulation events, invoked in birth order.
trait Sink {
    /// An individual was materialized (its sample just drawn).
    fn born(&mut self, id: u64, parent: Option<u64>, birth: f64, sample: &ReproductionSample);
    /// A child was scheduled past the horizon.
    fn coming(&mut self, parent: u64, birth: f64);
    /// A child within the horizon went unmaterialized because the cap hit.
    fn pending(&mut self, parent: Option<u64>, birth: f64);
}

/// Shared event loop: identical RNG draw order for every sink.
fn drive(
    law: &ReproductionLaw,
    horizon: f64,
    cap: u64,
    rng: &mut RandomStream,
    sink: &mut dyn Sink,
) -> Result<(bool, bool)> {
    if !horizon.is_finite() || horizon < 0.0 {
        return Err(Error::Domain(format!("horizon must be finite and ≥ 0 (got {horizon})")));
    }
    if cap == 0 {
        return Err(Error::Config("cap must allow at least the ancestor".into()));
    }
    let mut heap = BinaryHeap::new();
    heap.push(Reverse(Scheduled { birth: 0.0, seq: 0, parent: None }));
    let mut seq = 1u64;
    let mut born = 0u64;
    let mut survival = false;
    let mut capped = false;
    while let Some(Reverse(next)) = heap.pop() {
        if born == cap {
            capped = true;
            sink.pending(next.parent, next.birth);
            while let Some(Reverse(rest)) = heap.pop() {
                sink.pending(rest.parent, rest.birth);
            }
            break;
        }
        let id = born;
        born += 1;
        let sample = law.sample_reproduction(rng);
        if next.birth > horizon - 1.0 {
            survival = true;
        }
        for &delay in &sample.offspring_delays {
            let child = next.birth + delay;
            if child <= horizon {
                heap.push(Reverse(Scheduled { birth: child, seq, parent: Some(id) }));
            } else {
                sink.coming(id, child);
            }
            seq += 1;
        }
        sink.born(id, next.parent, next.birth, &sample);
    }
    Ok((capped, survival))
}

/// Simulates one path of the population up to `horizon`.
///
/// All individuals with S(u) ≤ horizon are materialized; children scheduled
/// past the horizon are kept as sample-less coming-generation rows. If more
/// than `cap` individuals would materialize, the record is returned with
/// `capped = true` (not an error) and the scheduled-but-unborn children as
/// additional sample-less rows.
pub fn simulate(
    law: &ReproductionLaw,
    horizon: f64,
    cap: u64,
    rng: &mut RandomStream,
) -> Result<PathRecord> {
    struct Collector {
        rows: Vec<IndividualRecord>,
        pending: Vec<(Option<u64>, f64)>,
        coming: Vec<(u64, f64)>,
    }
    impl Sink for Collector {
        fn born(&mut self, id: u64, parent: Option<u64>, birth: f64, sample: &ReproductionSample) {
            self.rows.push(IndividualRecord {
                id,
                parent,
                birth_time: birth,
                sample: Some(sample.clone()),
            });
        }
        fn coming(&mut self, parent: u64, birth: f64) {
            self.coming.push((parent, birth));
        }
        fn pending(&mut self, parent: Option<u64>, birth: f64) {
            self.pending.push((parent, birth));
        }
    }

    let mut sink =
        Collector { rows: Vec::new(), pending: Vec::new(), coming: Vec::new() };
    let (capped, survival) = drive(law, horizon, cap, rng, &mut sink)?;
    let Collector { mut rows, pending, mut coming } = sink;
    // Pending rows drain from the heap already sorted; coming rows arrive in
    // scheduling order and need sorting by birth (stable, so ties keep the
    // deterministic scheduling order).
    coming.sort_by(|a, b| a.1.total_cmp(&b.1));
    for (parent, birth) in pending {
        let id = rows.len() as u64;
        rows.push(IndividualRecord { id, parent, birth_time: birth, sample: None });
    }
    for (parent, birth) in coming {
        let id = rows.len() as u64;
        rows.push(IndividualRecord { id, parent: Some(parent), birth_time: birth, sample: None });
    }
    Ok(PathRecord { individuals: rows, horizon, capped, survival })
}

/// Widest age support over which the characteristic can be nonzero, when
/// that width is a fixed number (enables windowed scoring).
fn fixed_support_width(characteristic: &Characteristic) -> Option<f64> {
    match characteristic {
        Characteristic::Window { width } => Some(*width),
        Characteristic::GenerationCounter => Some(1.0),
        Characteristic::Deterministic { f } => {
            let (_, hi) = f.support();
            hi.is_finite().then_some(hi)
        }
        Characteristic::Scaled { inner, .. } => fixed_support_width(inner),
        Characteristic::Sum { parts } => {
            let mut widest = 0.0f64;
            for part in parts {
                widest = widest.max(fixed_support_width(part)?);
            }
            Some(widest)
        }
        _ => None,
    }
}

/// Z_t^φ = Σ_u φ_u(t − S(u)) as a complex number (the matrix
/// characteristics are complex-valued; everything else is real).
pub fn score_complex(
    path: &PathRecord,
    characteristic: &Characteristic,
    t: f64,
) -> Result<Complex64> {
    if t > path.horizon {
        return Err(Error::Domain(format!(
            "score queried at t = {t} beyond the simulated horizon {}",
            path.horizon
        )));
    }
    if path.capped {
        return Err(Error::InsufficientData(
            "capped path is truncated; its scores are biased".into(),
        ));
    }
    let hi = path.individuals.partition_point(|r| r.birth_time <= t);
    let lo = match fixed_support_width(characteristic) {
        Some(width) => path.individuals.partition_point(|r| r.birth_time <= t - width),
        None => 0,
    };
    let mut acc = Complex64::new(0.0, 0.0);
    for row in &path.individuals[lo..hi] {
        if let Some(sample) = &row.sample {
            acc += characteristic.evaluate_complex(sample, t - row.birth_time);
        }
    }
    Ok(acc)
}

/// Z_t^φ for real-valued characteristics (the real part in general).
pub fn score(path: &PathRecord, characteristic: &Characteristic, t: f64) -> Result<f64> {
    score_complex(path, characteristic, t).map(|z| z.re)
}

/// N(t): number of individuals born by time t (0 for t < 0). Exact for
/// t ≤ horizon; on capped paths it counts only the known births.
pub fn births_count(path: &PathRecord, t: f64) -> u64 {
    path.individuals.partition_point(|r| r.birth_time <= t) as u64
}

/// W_t^{(j)}(λ) = (−1)^j Σ_{u ∈ 𝒞_t} S(u)^j e^{−λ S(u)}, summed over the
/// coming generation 𝒞_t = {u : S(mother) ≤ t < S(u)} (the ancestor counts
/// as coming for t < 0).
pub fn nerman_statistic(
    path: &PathRecord,
    lambda: Complex64,
    j: u32,
    t: f64,
) -> Result<Complex64> {
    if t > path.horizon {
        return Err(Error::Domain(format!(
            "martingale statistic queried at t = {t} beyond the simulated horizon {}",
            path.horizon
        )));
    }
    if path.capped {
        return Err(Error::InsufficientData(
            "capped path misses part of the coming generation".into(),
        ));
    }
    let sign = if j.is_multiple_of(2) { 1.0 } else { -1.0 };
    let start = path.individuals.partition_point(|r| r.birth_time <= t);
    let mut acc = Complex64::new(0.0, 0.0);
    for row in &path.individuals[start..] {
        let in_coming = match row.parent {
            Some(p) => path.individuals[p as usize].birth_time <= t,
            None => true, // the ancestor's (virtual) mother precedes every t
        };
        if in_coming {
            let s = row.birth_time;
            acc += sign * s.powi(j as i32) * (-lambda * s).exp();
        }
    }
    Ok(acc)
}

/// Z_n(λ) = Σ_{|u|=n} e^{−λ S(u)} over the n-th generation of the tree
/// (all rows, materialized or not). Complete whenever every generation-n
/// individual is born within the horizon — e.g. for lattice laws with unit
/// delays, where generation and birth time coincide.
pub fn generation_slice(path: &PathRecord, generation: u32, lambda: Complex64) -> Complex64 {
    let mut depth = vec![0u32; path.individuals.len()];
    let mut acc = Complex64::new(0.0, 0.0);
    for (i, row) in path.individuals.iter().enumerate() {
        let d = match row.parent {
            Some(p) => depth[p as usize] + 1,
            None => 0,
        };
        depth[i] = d;
        if d == generation {
            acc += (-lambda * row.birth_time).exp();
        }
    }
    acc
}

/// One statistic to fold while streaming a replicate.
#[derive(Debug, Clone)]
pub enum StatRequest {
    /// Z_t^φ.
    Score { characteristic: Characteristic, t: f64 },
    /// W_t^{(j)}(λ); needs t ≥ 0 in streaming mode.
    Nerman { lambda: Complex64, j: u32, t: f64 },
    /// N(t).
    Births { t: f64 },
}

/// Streamed statistics of one replicate.
#[derive(Debug, Clone)]
pub struct StatsResult {
    /// One value per request, in request order (counts as real numbers).
    pub values: Vec<Complex64>,
    pub capped: bool,
    pub survival: bool,
}

/// Simulates one path and folds the requested statistics without
/// materializing the tree. Draws from the stream in exactly the same order
/// as [`simulate`], so for equal seeds the results agree with scoring the
/// materialized path.
pub fn simulate_stats(
    law: &ReproductionLaw,
    horizon: f64,
    cap: u64,
    requests: &[StatRequest],
    rng: &mut RandomStream,
) -> Result<StatsResult> {
    for request in requests {
        let t = match request {
            StatRequest::Score { t, .. } | StatRequest::Births { t } => *t,
            StatRequest::Nerman { t, .. } => {
                if *t < 0.0 {
                    return Err(Error::Domain(
                        "streamed martingale statistics need t ≥ 0".into(),
                    ));
                }
                *t
            }
        };
        if t > horizon {
            return Err(Error::Domain(format!(
                "statistic at t = {t} requested beyond the horizon {horizon}"
            )));
        }
    }

    struct Fold<'a> {
        requests: &'a [StatRequest],
        values: Vec<Complex64>,
    }
    impl Sink for Fold<'_> {
        fn born(&mut self, _id: u64, _parent: Option<u64>, birth: f64, sample: &ReproductionSample) {
            for (value, request) in self.values.iter_mut().zip(self.requests) {
                match request {
                    StatRequest::Score { characteristic, t } => {
                        if birth <= *t {
                            *value += characteristic.evaluate_complex(sample, *t - birth);
                        }
                    }
                    StatRequest::Nerman { lambda, j, t } => {
                        if birth <= *t {
                            let sign = if j.is_multiple_of(2) { 1.0 } else { -1.0 };
                            for &delay in &sample.offspring_delays {
                                let child = birth + delay;
                                if child > *t {
                                    *value +=
                                        sign * child.powi(*j as i32) * (-lambda * child).exp();
                                }
                            }
                        }
                    }
                    StatRequest::Births { t } => {
                        if birth <= *t {
                            *value += 1.0;
                        }
                    }
                }
            }
        }
        fn coming(&mut self, _parent: u64, _birth: f64) {}
        fn pending(&mut self, _parent: Option<u64>, _birth: f64) {}
    }

    let mut sink = Fold { requests, values: vec![Complex64::new(0.0, 0.0); requests.len()] };
    let (capped, survival) = drive(law, horizon, cap, rng, &mut sink)?;
    Ok(StatsResult { values: sink.values, capped, survival })
}

/// Cohort-level simulation of a lattice law: per integer time, the number
/// of children scheduled at each reproduction atom.
#[derive(Debug, Clone)]
pub struct LatticeSchedule {
    atom_ages: Vec<u32>,
    /// counts[n][i] = children with delay `atom_ages[i]` born to the time-n
    /// cohort (recorded even when they arrive past the horizon).
    counts: Vec<Vec<u64>>,
    /// births[n] = cohort size at time n; births[0] = 1 (the ancestor).
    births: Vec<u64>,
    pub capped: bool,
    pub survival: bool,
}

impl LatticeSchedule {
    /// Largest time with complete cohort information.
    pub fn horizon(&self) -> u32 {
        (self.births.len() - 1) as u32
    }

    /// Cohort size at time n.
    pub fn births_at(&self, n: u32) -> u64 {
        assert!(n <= self.horizon(), "cohort {n} beyond the schedule horizon");
        self.births[n as usize]
    }

    /// N(n): total individuals born by time n.
    pub fn births_through(&self, n: u32) -> u64 {
        assert!(n <= self.horizon(), "cohort {n} beyond the schedule horizon");
        self.births[..=n as usize].iter().sum()
    }

    /// W_n^{(j)}(λ) over the coming generation at integer time n.
    pub fn nerman(&self, lambda: Complex64, j: u32, n: u32) -> Complex64 {
        assert!(n <= self.horizon(), "time {n} beyond the schedule horizon");
        let sign = if j.is_multiple_of(2) { 1.0 } else { -1.0 };
        let mut acc = Complex64::new(0.0, 0.0);
        for m in 0..=n {
            for (i, &age) in self.atom_ages.iter().enumerate() {
                let s = (m + age) as f64;
                if s > n as f64 {
                    let c = self.counts[m as usize][i];
                    if c > 0 {
                        acc += (c as f64) * sign * s.powi(j as i32) * (-lambda * s).exp();
                    }
                }
            }
        }
        acc
    }
}

/// Simulates birth cohorts of a lattice law up to integer time `horizon`
/// with one exact multinomial/Poisson draw per (time, atom) instead of one
/// draw per individual. Distributionally identical to [`simulate`] for
/// every statistic measurable from cohort counts.
pub fn lattice_schedule(
    law: &ReproductionLaw,
    horizon: u32,
    cap: u64,
    rng: &mut RandomStream,
) -> Result<LatticeSchedule> {
    enum Cohort {
        /// Offspring pmf; all children at age 1.
        GaltonWatson(Vec<(u32, f64)>),
        /// Exactly weight children per parent at each atom.
        Deterministic(Vec<(u32, u64)>),
        /// Independent Poisson(weight) children per parent at each atom.
        Poisson(Vec<(u32, f64)>),
    }
    let mode = match law.kind() {
        LawKind::GaltonWatson { pmf } => Cohort::GaltonWatson(pmf.clone()),
        LawKind::LatticeAtoms { atoms, deterministic: true } => {
            Cohort::Deterministic(atoms.iter().map(|&(a, w)| (a, w.round() as u64)).collect())
        }
        LawKind::LatticeAtoms { atoms, deterministic: false } => Cohort::Poisson(atoms.clone()),
        _ => {
            return Err(Error::Domain(
                "cohort simulation needs a lattice law (integer birth ages)".into(),
            ))
        }
    };
    if cap == 0 {
        return Err(Error::Config("cap must allow at least the ancestor".into()));
    }
    let atom_ages: Vec<u32> = match &mode {
        Cohort::GaltonWatson(_) => vec![1],
        Cohort::Deterministic(atoms) => atoms.iter().map(|&(a, _)| a).collect(),
        Cohort::Poisson(atoms) => atoms.iter().map(|&(a, _)| a).collect(),
    };
    let max_age = *atom_ages.iter().max().expect("laws have at least one atom") as usize;

    let mut incoming = vec![0u64; horizon as usize + max_age + 1];
    incoming[0] = 1;
    let mut counts = vec![vec![0u64; atom_ages.len()]; horizon as usize + 1];
    let mut total = 0u64;
    let mut capped = false;
    for n in 0..=horizon as usize {
        let parents = incoming[n];
        if parents == 0 {
            continue;
        }
        total = total.saturating_add(parents);
        if total > cap {
            capped = true;
            break;
        }
        match &mode {
            Cohort::GaltonWatson(pmf) => {
                let children = multinomial_offspring(rng, parents, pmf)?;
                counts[n][0] = children;
                incoming[n + 1] += children;
            }
            Cohort::Deterministic(atoms) => {
                for (i, &(age, per_parent)) in atoms.iter().enumerate() {
                    let children = parents * per_parent;
                    counts[n][i] = children;
                    incoming[n + age as usize] += children;
                }
            }
            Cohort::Poisson(atoms) => {
                for (i, &(age, weight)) in atoms.iter().enumerate() {
                    let mean = weight * parents as f64;
                    let children = if mean > 0.0 {
                        let dist = Poisson::new(mean).map_err(|e| {
                            Error::Numerical(format!("Poisson cohort draw failed: {e}"))
                        })?;
                        dist.sample(rng) as u64
                    } else {
                        0
                    };
                    counts[n][i] = children;
                    incoming[n + age as usize] += children;
                }
            }
        }
    }
    let survival = !capped && incoming[horizon as usize] > 0;
    incoming.truncate(horizon as usize + 1);
    Ok(LatticeSchedule { atom_ages, counts, births: incoming, capped, survival })
}

/// Total offspring of `parents` i.i.d. draws from the pmf, via sequential
/// conditional binomials (an exact multinomial split).
fn multinomial_offspring(
    rng: &mut RandomStream,
    parents: u64,
    pmf: &[(u32, f64)],
) -> Result<u64> {
    let mut remaining = parents;
    let mut mass_left = 1.0f64;
    let mut children = 0u64;
    for (idx, &(count, p)) in pmf.iter().enumerate() {
        if remaining == 0 {
            break;
        }
        let share = if idx + 1 == pmf.len() || mass_left <= p {
            remaining
        } else {
            let ratio = (p / mass_left).clamp(0.0, 1.0);
            Binomial::new(remaining, ratio)
                .map_err(|e| Error::Numerical(format!("binomial cohort split failed: {e}")))?
                .sample(rng)
        };
        children += count as u64 * share;
        remaining -= share;
        mass_left -= p;
    }
    Ok(children)
}

/// Exact renewal mean on the integer lattice: m_n = E[φ](n) + Σ_a μ({a}) m_{n−a}
/// solved by forward dynamic programming, starting below the mean function's
/// support. Returns m_0 ..= m_{n_max}.
pub fn renewal_mean_lattice(
    law: &ReproductionLaw,
    mean_fn: &MeanFunction,
    n_max: u32,
) -> Result<Vec<f64>> {
    let atoms: Vec<(u32, f64)> = match law.kind() {
        LawKind::GaltonWatson { .. } => vec![(1, law.mean_offspring())],
        LawKind::LatticeAtoms { atoms, .. } => atoms.clone(),
        _ => {
            return Err(Error::Domain(
                "the integer renewal recursion needs a lattice law".into(),
            ))
        }
    };
    let (support_lo, _) = mean_fn.support();
    if support_lo == f64::NEG_INFINITY {
        return Err(Error::Config(
            "renewal recursion needs a mean function with bounded-below support".into(),
        ));
    }
    let n_lo: i64 = if support_lo.is_finite() { (support_lo.floor() as i64).min(0) } else { 0 };
    let len = (n_max as i64 - n_lo + 1) as usize;
    let mut table = vec![0.0f64; len];
    for idx in 0..len {
        let n = n_lo + idx as i64;
        let mut value = mean_fn.evaluate_re(n as f64);
        for &(age, weight) in &atoms {
            if let Some(k) = idx.checked_sub(age as usize) {
                value += weight * table[k];
            }
        }
        table[idx] = value;
    }
    Ok(table.split_off((-n_lo) as usize))
}

/// Mean reproduction density of an absolutely continuous law (dμ/dx).
fn mean_density(law: &ReproductionLaw) -> Result<Box<dyn Fn(f64) -> f64>> {
    match law.kind() {
        LawKind::EpidemicGamma { a, b, r0 } => {
            let (a, b, r0) = (*a, *b, *r0);
            if a < 1.0 {
                return Err(Error::Config(
                    "grid renewal supports Gamma age shapes ≥ 1 (density bounded at 0)".into(),
                ));
            }
            let log_norm = a * b.ln() - statrs::function::gamma::ln_gamma(a);
            Ok(Box::new(move |x: f64| {
                if x > 0.0 {
                    r0 * (log_norm + (a - 1.0) * x.ln() - b * x).exp()
                } else if x == 0.0 && a == 1.0 {
                    r0 * b
                } else {
                    0.0
                }
            }))
        }
        LawKind::PoissonLifetime { b, lifetime } => {
            let b = *b;
            let lifetime = lifetime.clone();
            Ok(Box::new(move |x: f64| {
                if x < 0.0 {
                    return 0.0;
                }
                let survival = match lifetime {
                    LifetimeDist::Exponential { rate } => (-rate * x).exp(),
                    LifetimeDist::Deterministic { value } => {
                        if x < value {
                            1.0
                        } else {
                            0.0
                        }
                    }
                    LifetimeDist::Uniform { lo, hi } => {
                        if x <= lo {
                            1.0
                        } else if x < hi {
                            (hi - x) / (hi - lo)
                        } else {
                            0.0
                        }
                    }
                };
                b * survival
            }))
        }
        LawKind::Fragmentation { parts } => {
            let power = *parts as i32 - 2;
            let p = *parts as f64;
            Ok(Box::new(move |x: f64| {
                if x >= 0.0 {
                    p * (p - 1.0) * (-x).exp() * (1.0 - (-x).exp()).powi(power)
                } else {
                    0.0
                }
            }))
        }
        LawKind::GaltonWatson { .. } | LawKind::LatticeAtoms { .. } => Err(Error::Domain(
            "lattice laws have no reproduction density; use the integer recursion".into(),
        )),
    }
}

/// Trapezoid-discretized renewal iteration m = E[φ] + μ∗m on the grid
/// 0, dt, …, ⌈t_max/dt⌉·dt for an absolutely continuous law.
///
/// The discretization carries an O(dt) bias — this is a cross-checking
/// oracle with a bias band, never ground truth. Requires dt ≤ 0.01/α and a
/// mean function supported on [0, ∞).
pub fn renewal_mean_grid(
    law: &ReproductionLaw,
    mean_fn: &MeanFunction,
    t_max: f64,
    dt: f64,
) -> Result<Vec<f64>> {
    if law.is_lattice() {
        return Err(Error::Domain(
            "grid renewal iteration needs an absolutely continuous law".into(),
        ));
    }
    if !dt.is_finite() || dt <= 0.0 || !t_max.is_finite() || t_max < 0.0 {
        return Err(Error::Config(format!(
            "grid renewal needs 0 < dt and 0 ≤ t_max (got dt = {dt}, t_max = {t_max})"
        )));
    }
    let alpha = crate::spectral::malthusian(law)?;
    if dt > 0.01 / alpha * (1.0 + 1e-9) {
        return Err(Error::Config(format!(
            "dt = {dt} too coarse: the documented bias band assumes dt ≤ 0.01/α = {}",
            0.01 / alpha
        )));
    }
    let (support_lo, _) = mean_fn.support();
    if support_lo < 0.0 && !mean_fn.terms.is_empty() {
        return Err(Error::Config(
            "grid renewal assumes a mean function supported on [0, ∞)".into(),
        ));
    }
    let density = mean_density(law)?;
    let steps = (t_max / dt).ceil() as usize;
    let f: Vec<f64> = (0..=steps).map(|i| mean_fn.evaluate_re(i as f64 * dt)).collect();
    let g: Vec<f64> = (0..=steps).map(|i| density(i as f64 * dt)).collect();
    let implicit = 1.0 - 0.5 * dt * g[0];
    if implicit <= 0.5 {
        return Err(Error::Numerical(
            "grid too coarse against the density at 0; the implicit trapezoid step is unstable"
                .into(),
        ));
    }
    let mut m = vec![0.0f64; steps + 1];
    m[0] = f[0];
    for i in 1..=steps {
        let mut conv = 0.5 * g[i] * m[0];
        for j in 1..i {
            conv += g[j] * m[i - j];
        }
        m[i] = (f[i] + dt * conv) / implicit;
    }
    Ok(m)
}

const DUMP_MAGIC: &[u8; 8] = b"CMJPATH1";

/// Writes the versioned binary dump of a path: the magic `CMJPATH1`, the
/// horizon, the capped/survival flags, a row count, then one row per
/// individual — id, parent (`u64::MAX` for none), birth time, delay count
/// (`u32::MAX` marks a sample-less row), the delays, and the lifetime
/// (`+∞` for immortal individuals). All numbers little-endian.
pub fn write_path<W: Write>(path: &PathRecord, mut out: W) -> Result<()> {
    out.write_all(DUMP_MAGIC)?;
    out.write_all(&path.horizon.to_le_bytes())?;
    out.write_all(&[u8::from(path.capped) | (u8::from(path.survival) << 1)])?;
    out.write_all(&(path.individuals.len() as u64).to_le_bytes())?;
    for row in &path.individuals {
        out.write_all(&row.id.to_le_bytes())?;
        out.write_all(&row.parent.unwrap_or(u64::MAX).to_le_bytes())?;
        out.write_all(&row.birth_time.to_le_bytes())?;
        match &row.sample {
            Some(sample) => {
                out.write_all(&(sample.offspring_delays.len() as u32).to_le_bytes())?;
                for &delay in &sample.offspring_delays {
                    out.write_all(&delay.to_le_bytes())?;
                }
                out.write_all(&sample.lifetime.to_le_bytes())?;
            }
            None => out.write_all(&u32::MAX.to_le_bytes())?,
        }
    }
    Ok(())
}

/// Reads a binary dump produced by [`write_path`].
pub fn read_path<R: Read>(mut input: R) -> Result<PathRecord> {
    fn read_array<const N: usize>(input: &mut impl Read) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        input.read_exact(&mut buf)?;
        Ok(buf)
    }
    let magic: [u8; 8] = read_array(&mut input)?;
    if &magic != DUMP_MAGIC {
        return Err(Error::Config("not a path dump (bad magic)".into()));
    }
    let horizon = f64::from_le_bytes(read_array(&mut input)?);
    let [flags] = read_array::<1>(&mut input)?;
    let count = u64::from_le_bytes(read_array(&mut input)?);
    let mut individuals = Vec::new();
    for _ in 0..count {
        let id = u64::from_le_bytes(read_array(&mut input)?);
        let parent_raw = u64::from_le_bytes(read_array(&mut input)?);
        let birth_time = f64::from_le_bytes(read_array(&mut input)?);
        let n_delays = u32::from_le_bytes(read_array(&mut input)?);
        let sample = if n_delays == u32::MAX {
            None
        } else {
            let mut offspring_delays = Vec::with_capacity(n_delays.min(1 << 20) as usize);
            for _ in 0..n_delays {
                offspring_delays.push(f64::from_le_bytes(read_array(&mut input)?));
            }
            let lifetime = f64::from_le_bytes(read_array(&mut input)?);
            Some(ReproductionSample { offspring_delays, lifetime, mark: 0.0 })
        };
        individuals.push(IndividualRecord {
            id,
            parent: (parent_raw != u64::MAX).then_some(parent_raw),
            birth_time,
            sample,
        });
    }
    Ok(PathRecord {
        individuals,
        horizon,
        capped: flags & 1 != 0,
        survival: flags & 2 != 0,
    })
}
