//! The lower-triangular matrix exponential exp(γ, s, k): entry (i, j) equals
//! e^{γs} C(i−1, j−1) s^{i−j} for i ≥ j and 0 above the diagonal.
//!
//! It is the exponential of s times a k×k Jordan block with eigenvalue γ and
//! therefore satisfies the semigroup identity
//! exp(γ, s, k)·exp(γ, t, k) = exp(γ, s+t, k).

use num_complex::Complex64;

use crate::characteristics::binomial;

/// exp(γ, s, k) with entries stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct JordanExp {
    pub gamma: Complex64,
    pub s: f64,
    pub k: usize,
    entries: Vec<Complex64>,
}

/// Builds exp(γ, s, k); k ≥ 1.
pub fn jordan_exp(gamma: Complex64, s: f64, k: usize) -> JordanExp {
    assert!(k >= 1, "matrix dimension must be at least 1");
    let scale = (gamma * s).exp();
    let mut entries = vec![Complex64::new(0.0, 0.0); k * k];
    for i in 0..k {
        for j in 0..=i {
            entries[i * k + j] = scale * binomial(i, j) * s.powi((i - j) as i32);
        }
    }
    JordanExp { gamma, s, k, entries }
}

impl JordanExp {
    /// Entry (i, j), 1-based.
    pub fn entry(&self, i: usize, j: usize) -> Complex64 {
        assert!(i >= 1 && i <= self.k && j >= 1 && j <= self.k);
        self.entries[(i - 1) * self.k + (j - 1)]
    }

    /// Plain matrix product, row-major k×k output.
    pub fn matmul(&self, other: &JordanExp) -> Vec<Complex64> {
        assert_eq!(self.k, other.k);
        let k = self.k;
        let mut out = vec![Complex64::new(0.0, 0.0); k * k];
        for i in 0..k {
            for j in 0..k {
                let mut acc = Complex64::new(0.0, 0.0);
                for l in 0..k {
                    acc += self.entries[i * k + l] * other.entries[l * k + j];
                }
                out[i * k + j] = acc;
            }
        }
        out
    }

    /// Left action on a column vector of length k.
    pub fn apply(&self, v: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(v.len(), self.k);
        (0..self.k)
            .map(|i| (0..self.k).map(|j| self.entries[i * self.k + j] * v[j]).sum())
            .collect()
    }
}
