//! Locating all solutions of 𝓛μ(z) = 1 in a strip, with multiplicities.
//!
//! The search uses the argument principle: the winding number of 𝓛μ − 1
//! around a rectangle counts the enclosed zeros. Rectangles with nonzero
//! winding are subdivided until small, then polished by multiplicity-aware
//! Newton iteration; multiplicities are confirmed by derivative tests, which
//! are authoritative.
//!
//! Lattice laws are handled in the s = e^{−z} plane, where 𝓛μ(z) becomes a
//! polynomial Σ_a w_a s^a and the strip Re z ≥ re_min becomes the disk
//! |s| ≤ e^{−re_min}. Mapping back through the principal logarithm lands
//! Im z in (−π, π] automatically, so critical-line roots at Im = ±π (interior
//! points of the s-plane negative real axis) need no boundary handling.

use num_complex::Complex64;

use super::Root;
use crate::laws::{LawKind, ReproductionLaw};
use crate::{Error, Result};

/// Search region for [`find_roots`]: the rectangle
/// [re_min, α] × [−im_max, im_max] (im_max is ignored for lattice laws,
/// where the strip Im ∈ (−π, π] is canonical).
#[derive(Debug, Clone, Copy)]
pub struct RootSearch {
    pub re_min: f64,
    pub im_max: f64,
}

#[derive(Debug, Clone, Copy)]
struct Rect {
    re_lo: f64,
    re_hi: f64,
    im_lo: f64,
    im_hi: f64,
}

impl Rect {
    fn center(&self) -> Complex64 {
        Complex64::new(0.5 * (self.re_lo + self.re_hi), 0.5 * (self.im_lo + self.im_hi))
    }

    fn max_side(&self) -> f64 {
        (self.re_hi - self.re_lo).max(self.im_hi - self.im_lo)
    }
}

/// A zero of the integrand was met on (or too close to) a rectangle edge, or
/// the phase could not be tracked; the caller retries on a perturbed region.
struct BoundaryHit {
    at: Complex64,
}

const BOUNDARY_EPS: f64 = 1e-12;

/// Total argument change of f along the directed segment [a, b].
///
/// A segment is accepted only when the endpoint phase difference is below
/// π/2 *and* the segment is short against the logarithmic derivative |f′/f|
/// at both endpoints. The second condition is what rules out aliasing: near
/// a pole of the transform (just outside the search region) the phase spins
/// at |f′/f| radians per unit length, which can exceed a full turn between
/// samples while the endpoint difference looks small.
#[allow(clippy::too_many_arguments)]
fn edge_phase(
    f: &dyn Fn(Complex64) -> Complex64,
    df: &dyn Fn(Complex64) -> Complex64,
    a: Complex64,
    fa: Complex64,
    ra: f64,
    b: Complex64,
    fb: Complex64,
    rb: f64,
    depth: u32,
) -> std::result::Result<f64, BoundaryHit> {
    let delta = (fb / fa).arg();
    let seg = (b - a).norm();
    if delta.abs() < std::f64::consts::FRAC_PI_2 && seg * ra.max(rb) <= 0.9 {
        return Ok(delta);
    }
    if depth >= 48 {
        return Err(BoundaryHit { at: a });
    }
    let mid = 0.5 * (a + b);
    let fmid = f(mid);
    if fmid.norm() <= BOUNDARY_EPS {
        return Err(BoundaryHit { at: mid });
    }
    let rmid = df(mid).norm() / fmid.norm();
    Ok(edge_phase(f, df, a, fa, ra, mid, fmid, rmid, depth + 1)?
        + edge_phase(f, df, mid, fmid, rmid, b, fb, rb, depth + 1)?)
}

/// Winding number of f around the rectangle boundary (counterclockwise).
fn winding_number(
    f: &dyn Fn(Complex64) -> Complex64,
    df: &dyn Fn(Complex64) -> Complex64,
    rect: &Rect,
) -> std::result::Result<i32, BoundaryHit> {
    const SAMPLES_PER_EDGE: usize = 8;
    let corners = [
        Complex64::new(rect.re_lo, rect.im_lo),
        Complex64::new(rect.re_hi, rect.im_lo),
        Complex64::new(rect.re_hi, rect.im_hi),
        Complex64::new(rect.re_lo, rect.im_hi),
    ];
    let mut points = Vec::with_capacity(4 * SAMPLES_PER_EDGE);
    for e in 0..4 {
        let (a, b) = (corners[e], corners[(e + 1) % 4]);
        for i in 0..SAMPLES_PER_EDGE {
            points.push(a + (b - a) * (i as f64 / SAMPLES_PER_EDGE as f64));
        }
    }
    points.push(corners[0]);
    let values: Vec<Complex64> = points.iter().map(|&z| f(z)).collect();
    if let Some(i) = values.iter().position(|v| v.norm() <= BOUNDARY_EPS) {
        return Err(BoundaryHit { at: points[i] });
    }
    let rates: Vec<f64> = points
        .iter()
        .zip(&values)
        .map(|(&z, v)| df(z).norm() / v.norm())
        .collect();
    let mut total = 0.0;
    for i in 0..points.len() - 1 {
        total += edge_phase(
            f,
            df,
            points[i],
            values[i],
            rates[i],
            points[i + 1],
            values[i + 1],
            rates[i + 1],
            0,
        )?;
    }
    let turns = total / (2.0 * std::f64::consts::PI);
    let rounded = turns.round();
    if (turns - rounded).abs() > 0.25 {
        return Err(BoundaryHit { at: corners[0] });
    }
    Ok(rounded as i32)
}

/// Multiplicity-aware Newton polishing: z ← z − m·f(z)/f′(z), started from
/// the center of a cell known (by winding) to contain a zero of order m.
fn newton_polish(
    f: &dyn Fn(Complex64) -> Complex64,
    df: &dyn Fn(Complex64) -> Complex64,
    start: Complex64,
    multiplicity: i32,
    scale: f64,
) -> Complex64 {
    let mut z = start;
    for _ in 0..200 {
        let fz = f(z);
        if fz.norm() <= 1e-16 {
            break;
        }
        let dfz = df(z);
        if dfz.norm() == 0.0 {
            // Exact stationary point: for a multiple root this is already the
            // zero (f and f' vanish together); otherwise nudge off it.
            if fz.norm() <= 1e-13 {
                break;
            }
            z += Complex64::new(scale * 1e-3, scale * 1e-3);
            continue;
        }
        let mut step = multiplicity as f64 * fz / dfz;
        let cap = 8.0 * scale.max(1e-12);
        if step.norm() > cap {
            step *= cap / step.norm();
        }
        z -= step;
        if step.norm() <= 1e-15 * (1.0 + z.norm()) {
            break;
        }
    }
    z
}

fn subdivide(
    f: &dyn Fn(Complex64) -> Complex64,
    df: &dyn Fn(Complex64) -> Complex64,
    rect: Rect,
    depth: u32,
    zeros: &mut Vec<(Complex64, i32)>,
) -> std::result::Result<(), BoundaryHit> {
    let w = winding_number(f, df, &rect)?;
    if w == 0 {
        return Ok(());
    }
    // Stop well above the scale at which a multiple root's neighbourhood of
    // near-zero values (|f| ~ |z - z0|^k) could swallow boundary samples;
    // Newton closes the remaining gap.
    if rect.max_side() <= 1e-4 || depth >= 52 {
        let z = newton_polish(f, df, rect.center(), w, rect.max_side());
        zeros.push((z, w));
        return Ok(());
    }
    let (left, right) = if rect.re_hi - rect.re_lo >= rect.im_hi - rect.im_lo {
        let mid = 0.5 * (rect.re_lo + rect.re_hi);
        (Rect { re_hi: mid, ..rect }, Rect { re_lo: mid, ..rect })
    } else {
        let mid = 0.5 * (rect.im_lo + rect.im_hi);
        (Rect { im_hi: mid, ..rect }, Rect { im_lo: mid, ..rect })
    };
    subdivide(f, df, left, depth + 1, zeros)?;
    subdivide(f, df, right, depth + 1, zeros)
}

/// All zeros (with winding multiplicities) of f in the rectangle, searched on
/// a slightly padded region whose four sides are offset by independent
/// irrational multiples — otherwise the dyadic subdivision midlines inherit
/// the rectangle's symmetry and run straight through real-axis roots. Each
/// retry grows the offsets.
///
/// `max_left_pad` caps the leftward padding so evaluations stay inside the
/// transform's half-plane.
fn locate_zeros(
    f: &dyn Fn(Complex64) -> Complex64,
    df: &dyn Fn(Complex64) -> Complex64,
    rect: Rect,
    max_left_pad: f64,
    what: &str,
) -> Result<Vec<(Complex64, i32)>> {
    let base = rect.max_side();
    let mut last_hit = None;
    for attempt in 1..=6 {
        let t = attempt as f64 * base;
        let region = Rect {
            re_lo: rect.re_lo - (t * 2.9e-4 * 2.0f64.sqrt()).min(max_left_pad),
            re_hi: rect.re_hi + t * 4.3e-4 * 3.0f64.sqrt(),
            im_lo: rect.im_lo - t * 1.7e-4 * 5.0f64.sqrt(),
            im_hi: rect.im_hi + t * 3.1e-4 * 7.0f64.sqrt(),
        };
        let mut zeros = Vec::new();
        match subdivide(f, df, region, 0, &mut zeros) {
            Ok(()) => {
                let mut merged: Vec<(Complex64, i32)> = Vec::new();
                for (z, w) in zeros {
                    match merged.iter_mut().find(|(m, _)| (*m - z).norm() <= 1e-7 * (1.0 + z.norm())) {
                        Some((_, mw)) => *mw = (*mw).max(w),
                        None => merged.push((z, w)),
                    }
                }
                return Ok(merged);
            }
            Err(hit) => last_hit = Some(hit.at),
        }
    }
    Err(Error::Numerical(format!(
        "root search for {what} kept meeting a zero on a cell boundary near {:?} after 6 perturbed retries",
        last_hit.unwrap_or_default()
    )))
}

/// Verifies a polished candidate against the transform and determines its
/// multiplicity from derivative magnitudes (authoritative over winding).
///
/// A zero of order k can be located by plain Newton only to √ε accuracy, so
/// once the tentative multiplicity exceeds one the candidate is re-polished
/// on the (k−1)-th derivative — a simple zero there — restoring machine
/// precision before the consistency checks run.
fn classify_root(law: &ReproductionLaw, z: Complex64, alpha: f64) -> Result<Root> {
    let mut z = z;
    let mut k = tentative_order(law, z)?;
    if k > 1 {
        for _ in 0..100 {
            let g = law.laplace_derivative(z, k as u32 - 1)?;
            let dg = law.laplace_derivative(z, k as u32)?;
            let step = g / dg;
            z -= step;
            if step.norm() <= 1e-15 * (1.0 + z.norm()) {
                break;
            }
        }
        k = tentative_order(law, z)?;
    }
    let value = law.laplace_derivative(z, 0)?;
    if (value - 1.0).norm() > 1e-10 {
        return Err(Error::Numerical(format!(
            "candidate {z} does not satisfy the root equation: |Lmu - 1| = {:.3e}",
            (value - 1.0).norm()
        )));
    }
    let lead = law.laplace_derivative(z, k as u32)?.norm();
    let scale = 1e-8 * lead.max(1.0);
    for j in 1..k {
        let d = law.laplace_derivative(z, j as u32)?.norm();
        if d > scale {
            return Err(Error::Numerical(format!(
                "root {z}: derivative of order {j} is {d:.3e}, neither zero nor clearly nonzero"
            )));
        }
    }
    let on_critical_line = (z.re - 0.5 * alpha).abs() <= 1e-9 * alpha.max(1.0);
    Ok(Root { lambda: z, multiplicity: k, on_critical_line })
}

/// First derivative order with magnitude ≥ 1e-6 (the tentative multiplicity).
fn tentative_order(law: &ReproductionLaw, z: Complex64) -> Result<usize> {
    for j in 1..=8usize {
        if law.laplace_derivative(z, j as u32)?.norm() >= 1e-6 {
            return Ok(j);
        }
    }
    Err(Error::Numerical(format!(
        "root {z}: first eight derivatives all vanish; multiplicity out of range"
    )))
}

/// Upper bound on |Im z| for roots of 𝓛μ(z) = 1 with Re z ≥ re_min, derived
/// from |𝓛μ(z)| decay in the imaginary direction (Riemann–Lebesgue made
/// quantitative per law).
pub(crate) fn imaginary_root_bound(law: &ReproductionLaw, re_min: f64) -> f64 {
    match law.kind() {
        // All roots sit on the circle |b + z| = b·R0^{1/a}.
        LawKind::EpidemicGamma { a, b, r0 } => b * r0.powf(1.0 / a) + 1.0,
        // |𝓛μ| = b|1 − 𝓛ζ(z)|/|z| ≤ b(1 + 𝓛ζ(re_min))/|Im z|.
        LawKind::PoissonLifetime { b, lifetime } => {
            b * (1.0 + lifetime.laplace(Complex64::new(re_min, 0.0)).re) + 1.0
        }
        // |𝓛μ| ≤ b!/|Im z|^{b−1}.
        LawKind::Fragmentation { parts } => {
            let b = *parts as f64;
            let log_fact: f64 = (2..=*parts).map(|j| (j as f64).ln()).sum();
            (log_fact / (b - 1.0)).exp() + 1.0
        }
        _ => std::f64::consts::PI,
    }
}

/// All roots of 𝓛μ(z) = 1 with Re z ∈ [re_min, α] (lattice: Im ∈ (−π, π];
/// non-lattice: |Im| ≤ im_max), with verified multiplicities, sorted by
/// descending real part then ascending imaginary part.
pub fn find_roots(law: &ReproductionLaw, alpha: f64, search: &RootSearch) -> Result<Vec<Root>> {
    if search.re_min <= law.domain_bound() {
        return Err(Error::Domain(format!(
            "search abscissa {} is not inside the transform's half-plane (bound {})",
            search.re_min,
            law.domain_bound()
        )));
    }
    let mut roots = if law.is_lattice() {
        lattice_roots(law, alpha, search.re_min)?
    } else {
        continuous_roots(law, alpha, search)?
    };
    roots.retain(|r| r.lambda.re >= search.re_min - 1e-12 && r.lambda.re <= alpha + 1e-9 * alpha.max(1.0));
    roots.sort_by(|p, q| {
        q.lambda.re.total_cmp(&p.lambda.re).then(p.lambda.im.total_cmp(&q.lambda.im))
    });
    // Conjugate partners come out of independent polishes, so their real
    // parts can disagree in the last few bits; settle the order of each
    // near-equal real-part run by imaginary part alone.
    let mut i = 0;
    while i < roots.len() {
        let mut j = i + 1;
        while j < roots.len()
            && (roots[j].lambda.re - roots[i].lambda.re).abs()
                <= 1e-9 * (1.0 + roots[i].lambda.re.abs())
        {
            j += 1;
        }
        roots[i..j].sort_by(|p, q| p.lambda.im.total_cmp(&q.lambda.im));
        i = j;
    }
    Ok(roots)
}

fn lattice_roots(law: &ReproductionLaw, alpha: f64, re_min: f64) -> Result<Vec<Root>> {
    let atoms: Vec<(f64, f64)> = match law.kind() {
        LawKind::GaltonWatson { .. } => vec![(1.0, law.mean_offspring())],
        LawKind::LatticeAtoms { atoms, .. } => {
            atoms.iter().map(|&(a, w)| (a as f64, w)).collect()
        }
        _ => unreachable!("lattice_roots called on a non-lattice law"),
    };
    let atoms2 = atoms.clone();
    let poly = move |s: Complex64| -> Complex64 {
        atoms.iter().map(|&(a, w)| w * s.powi(a as i32)).sum::<Complex64>() - 1.0
    };
    let dpoly = move |s: Complex64| -> Complex64 {
        atoms2.iter().map(|&(a, w)| a * w * s.powi(a as i32 - 1)).sum()
    };
    let radius = (-re_min).exp() * (1.0 + 1e-9);
    let rect = Rect { re_lo: -radius, re_hi: radius, im_lo: -radius, im_hi: radius };
    let zeros =
        locate_zeros(&poly, &dpoly, rect, f64::INFINITY, "the lattice transform polynomial")?;
    let mut roots = Vec::new();
    for (s, _) in zeros {
        if s.norm() == 0.0 {
            continue;
        }
        let z = -s.ln();
        if z.re < re_min - 1e-9 {
            continue;
        }
        let mut root = classify_root(law, z, alpha)?;
        // Normalise after classification: the multiplicity re-polish can move
        // a half-period root across the Im = ±π branch seam, and real roots
        // keep a rounding-level angle from the s-plane logarithm.
        if root.lambda.im <= -std::f64::consts::PI + 1e-9 {
            root.lambda = Complex64::new(root.lambda.re, std::f64::consts::PI);
        } else if root.lambda.im.abs() <= 1e-9 * (1.0 + root.lambda.re.abs()) {
            root.lambda = Complex64::new(root.lambda.re, 0.0);
        }
        roots.push(root);
    }
    Ok(roots)
}

fn continuous_roots(law: &ReproductionLaw, alpha: f64, search: &RootSearch) -> Result<Vec<Root>> {
    let rect = Rect {
        re_lo: search.re_min,
        re_hi: alpha + 0.25 * alpha.max(1.0),
        im_lo: -search.im_max,
        im_hi: search.im_max,
    };
    let f = |z: Complex64| law.laplace_derivative(z, 0).expect("rectangle inside the domain") - 1.0;
    let df = |z: Complex64| law.laplace_derivative(z, 1).expect("rectangle inside the domain");
    // Keep padded evaluations strictly inside the transform's half-plane.
    let left_margin = 0.5 * (search.re_min - law.domain_bound());
    let zeros = locate_zeros(&f, &df, rect, left_margin, "the reproduction transform")?;
    let mut roots = Vec::new();
    for (z, _) in zeros {
        // Real roots are computed with an O(ε) imaginary part; snap it so the
        // real root α is exactly real (the transform is real on the axis).
        let z = if z.im.abs() <= 1e-9 * (1.0 + z.re.abs()) {
            Complex64::new(z.re, 0.0)
        } else {
            z
        };
        roots.push(classify_root(law, z, alpha)?);
    }
    Ok(roots)
}

/// Closed-form roots for the epidemic law: λ = b(R0^{1/a} e^{−iφ} − 1) for
/// φ ∈ (2π/a)ℤ with cos φ > 0 — the solutions of R0 (b/(b+λ))^a = 1 that lie
/// in the transform's half-plane Re λ > −b. Sorted like [`find_roots`].
pub fn epidemic_roots_closed_form(a: f64, b: f64, r0: f64) -> Vec<Complex64> {
    assert!(a > 0.0 && b > 0.0 && r0 > 1.0);
    let growth = r0.powf(1.0 / a);
    let mut out = vec![Complex64::new(b * (growth - 1.0), 0.0)];
    let mut j = 1.0;
    loop {
        let phi = 2.0 * std::f64::consts::PI * j / a;
        if phi >= std::f64::consts::FRAC_PI_2 {
            break;
        }
        let lambda = b * (growth * Complex64::new(0.0, -phi).exp() - 1.0);
        out.push(lambda.conj());
        out.push(lambda);
        j += 1.0;
    }
    out.sort_by(|p, q| q.re.total_cmp(&p.re).then(p.im.total_cmp(&q.im)));
    out
}

/// The branching threshold R0(a) = (2cos(2π/a) − 1)^{−a} (a > 6) at which the
/// leading complex root pair crosses the critical line Re = α/2.
pub fn epidemic_threshold(a: f64) -> f64 {
    assert!(a > 6.0, "the leading pair reaches the critical line only for a > 6");
    (2.0 * (2.0 * std::f64::consts::PI / a).cos() - 1.0).powf(-a)
}
