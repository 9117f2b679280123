//! Exact rational Bernoulli numbers and the operator polynomials P_{k,l}
//! appearing in the lattice coefficient matrices.
//!
//! P_{k,l}(y) = (−1)^l Σ_{m=1}^{k} C(k−1,m−1) y^{k−m} (B_{l+m}(−y) − B_{l+m}(0))/(l+m)
//!
//! where B_n is the n-th Bernoulli polynomial. Substituting y ↦ d/dz and
//! applying the result to 𝓛μ at a root gives the matrix entries. The
//! polynomial coefficients are assembled in exact i128 rational arithmetic
//! (Bernoulli numbers up to index 24) and converted to f64 at the end, which
//! avoids the cancellation a floating-point recurrence would suffer.

use crate::{Error, Result};

/// Reduced fraction with positive denominator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Rational {
    num: i128,
    den: i128,
}

fn gcd(a: i128, b: i128) -> i128 {
    let (mut a, mut b) = (a.abs(), b.abs());
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a.max(1)
}

impl Rational {
    pub(crate) fn new(num: i128, den: i128) -> Self {
        assert!(den != 0, "zero denominator");
        let sign = if den < 0 { -1 } else { 1 };
        let g = gcd(num, den);
        Self { num: sign * num / g, den: sign * den / g }
    }

    pub(crate) fn zero() -> Self {
        Self { num: 0, den: 1 }
    }

    pub(crate) fn add(self, other: Self) -> Self {
        Self::new(self.num * other.den + other.num * self.den, self.den * other.den)
    }

    pub(crate) fn to_f64(self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

/// (numerator, denominator) of B_0..B_24 with the B_1 = −1/2 convention.
const BERNOULLI: [(i128, i128); 25] = [
    (1, 1),
    (-1, 2),
    (1, 6),
    (0, 1),
    (-1, 30),
    (0, 1),
    (1, 42),
    (0, 1),
    (-1, 30),
    (0, 1),
    (5, 66),
    (0, 1),
    (-691, 2730),
    (0, 1),
    (7, 6),
    (0, 1),
    (-3617, 510),
    (0, 1),
    (43867, 798),
    (0, 1),
    (-174611, 330),
    (0, 1),
    (854513, 138),
    (0, 1),
    (-236364091, 2730),
];

pub(crate) fn bernoulli(n: usize) -> Result<Rational> {
    BERNOULLI
        .get(n)
        .map(|&(num, den)| Rational::new(num, den))
        .ok_or_else(|| Error::Numerical(format!("Bernoulli number B_{n} beyond the exact table")))
}

fn binomial_exact(n: usize, k: usize) -> i128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut value: i128 = 1;
    for i in 1..=k {
        value = value * (n - k + i) as i128 / i as i128;
    }
    value
}

/// Coefficients c_0..c_{k+l} of P_{k,l}(y) = Σ_p c_p y^p, exact.
///
/// Substituting the derivative operator, P_{k,l}(d/dz)𝓛μ|_λ = Σ_p c_p (𝓛μ)^{(p)}(λ).
pub(crate) fn operator_polynomial(k: usize, l: usize) -> Result<Vec<f64>> {
    assert!(k >= 1);
    let mut coeffs = vec![Rational::zero(); k + l + 1];
    let outer_sign = if l.is_multiple_of(2) { 1 } else { -1 };
    for m in 1..=k {
        let n = l + m; // degree of the Bernoulli polynomial involved
        // B_n(−y) − B_n(0) = Σ_{i=1}^{n} C(n,i) b_{n−i} (−1)^i y^i
        for i in 1..=n {
            let b = bernoulli(n - i)?;
            let inner_sign = if i % 2 == 0 { 1 } else { -1 };
            let term = Rational::new(
                outer_sign * inner_sign * binomial_exact(k - 1, m - 1) * binomial_exact(n, i) * b.num,
                b.den * n as i128,
            );
            coeffs[k - m + i] = coeffs[k - m + i].add(term);
        }
    }
    Ok(coeffs.into_iter().map(Rational::to_f64).collect())
}
