//! Empirical Hilbert-Schmidt independence criterion with RBF kernels.
//!
//! `HSIC(A, B) = (K-1)^-2 tr(K_A C K_B C)` with `C = I - 11ᵀ/K`. The trace is
//! evaluated as the elementwise product of the doubly-centered `K_A` with
//! `K_B`, which is `O(K²)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::matrix::Matrix;
use crate::scalar::{pairwise_sum, Real};

/// Row count above which kernel rows are computed in parallel.
pub const PARALLEL_ROW_THRESHOLD: usize = 256;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum HsicError {
    #[error("need at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("sample count mismatch: {0} vs {1}")]
    SampleMismatch(usize, usize),
    #[error("non-finite sample value at flat index {0}")]
    NonFinite(usize),
    #[error("all pairwise distances are zero")]
    Degenerate,
    #[error("bandwidth must be positive, got {0}")]
    InvalidBandwidth(f64),
}

/// RBF kernel `exp(-γ‖a-b‖²)`; the bandwidth is fixed or picked per sample set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelSpec {
    MedianHeuristic,
    Fixed(f64),
}

impl Default for KernelSpec {
    fn default() -> Self {
        KernelSpec::MedianHeuristic
    }
}

fn check_samples<T: Real>(a: &Matrix<T>) -> Result<(), HsicError> {
    if a.rows() < 2 {
        return Err(HsicError::TooFewSamples(a.rows()));
    }
    if let Some(i) = a.first_non_finite() {
        return Err(HsicError::NonFinite(i));
    }
    Ok(())
}

#[inline]
fn sq_dist<T: Real>(x: &[T], y: &[T]) -> T {
    x.iter().zip(y).map(|(&a, &b)| (a - b) * (a - b)).fold(T::zero(), |s, d| s + d)
}

/// `γ = 1 / (2 m²)` where `m` is the median of the nonzero pairwise distances.
pub fn median_bandwidth<T: Real>(a: &Matrix<T>) -> Result<T, HsicError> {
    check_samples(a)?;
    let k = a.rows();
    let mut d: Vec<T> = Vec::with_capacity(k * (k - 1) / 2);
    for i in 0..k {
        for j in (i + 1)..k {
            let s = sq_dist(a.row(i), a.row(j));
            if s > T::zero() {
                d.push(s.sqrt());
            }
        }
    }
    if d.is_empty() {
        return Err(HsicError::Degenerate);
    }
    d.sort_by(|x, y| x.partial_cmp(y).unwrap_or(std::cmp::Ordering::Equal));
    let n = d.len();
    let m = if n % 2 == 1 { d[n / 2] } else { (d[n / 2 - 1] + d[n / 2]) / T::lit(2.0) };
    Ok(T::one() / (T::lit(2.0) * m * m))
}

/// Resolves a kernel spec against a sample set. Degenerate samples under the
/// median heuristic fall back to `γ = 1`.
pub fn resolve_bandwidth<T: Real>(a: &Matrix<T>, spec: KernelSpec) -> Result<T, HsicError> {
    match spec {
        KernelSpec::Fixed(g) if g > 0.0 && g.is_finite() => Ok(T::lit(g)),
        KernelSpec::Fixed(g) => Err(HsicError::InvalidBandwidth(g)),
        KernelSpec::MedianHeuristic => match median_bandwidth(a) {
            Ok(g) => Ok(g),
            Err(HsicError::Degenerate) => {
                log::warn!("median heuristic: all samples identical, falling back to gamma = 1");
                Ok(T::one())
            }
            Err(e) => Err(e),
        },
    }
}

/// Gram matrix with a resolved bandwidth.
pub fn rbf_gram<T: Real>(a: &Matrix<T>, gamma: T) -> Matrix<T> {
    let k = a.rows();
    let row = |i: usize| -> Vec<T> { (0..k).map(|j| (-gamma * sq_dist(a.row(i), a.row(j))).exp()).collect() };
    let rows: Vec<Vec<T>> =
        if k > PARALLEL_ROW_THRESHOLD { (0..k).into_par_iter().map(row).collect() } else { (0..k).map(row).collect() };
    Matrix::from_vec(k, k, rows.into_iter().flatten().collect()).expect("square gram")
}

/// Kernel matrix `K_ij = exp(-γ‖a_i - a_j‖²)`.
pub fn kernel_matrix<T: Real>(a: &Matrix<T>, spec: KernelSpec) -> Result<Matrix<T>, HsicError> {
    check_samples(a)?;
    let gamma = resolve_bandwidth(a, spec)?;
    Ok(rbf_gram(a, gamma))
}

/// `C K C` for a symmetric `K`.
pub fn double_center<T: Real>(k: &Matrix<T>) -> Matrix<T> {
    let n = k.rows();
    let nf = T::from_count(n);
    let means: Vec<T> = (0..n).map(|i| pairwise_sum(k.row(i)) / nf).collect();
    let grand = pairwise_sum(&means) / nf;
    Matrix::from_fn(n, n, |i, j| k.get(i, j) - means[i] - means[j] + grand)
}

/// Biased HSIC estimate from two precomputed Gram matrices.
pub fn hsic_from_grams<T: Real>(ka: &Matrix<T>, kb: &Matrix<T>) -> Result<T, HsicError> {
    let n = ka.rows();
    if n != kb.rows() {
        return Err(HsicError::SampleMismatch(n, kb.rows()));
    }
    if n < 2 {
        return Err(HsicError::TooFewSamples(n));
    }
    let ca = double_center(ka);
    let row_sums: Vec<T> = (0..n)
        .map(|i| {
            let prod: Vec<T> = ca.row(i).iter().zip(kb.row(i)).map(|(&x, &y)| x * y).collect();
            pairwise_sum(&prod)
        })
        .collect();
    let tr = pairwise_sum(&row_sums);
    let denom = T::from_count(n - 1);
    let v = tr / (denom * denom);
    // The estimator is a trace of a PSD product; tiny negatives are round-off.
    Ok(if v < T::zero() && v > T::lit(-1e-12) { T::zero() } else { v })
}

/// Empirical HSIC between two paired sample sets.
pub fn hsic_estimate<T: Real>(
    a: &Matrix<T>,
    b: &Matrix<T>,
    spec_a: KernelSpec,
    spec_b: KernelSpec,
) -> Result<T, HsicError> {
    if a.rows() != b.rows() {
        return Err(HsicError::SampleMismatch(a.rows(), b.rows()));
    }
    let ka = kernel_matrix(a, spec_a)?;
    let kb = kernel_matrix(b, spec_b)?;
    hsic_from_grams(&ka, &kb)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn col(v: &[f64]) -> Matrix<f64> {
        Matrix::from_vec(v.len(), 1, v.to_vec()).unwrap()
    }

    #[test]
    fn identical_rows_give_ones() {
        let k = kernel_matrix(&col(&[3.0, 3.0]), KernelSpec::MedianHeuristic).unwrap();
        assert_eq!(k.as_slice(), &[1.0; 4]);
    }

    #[test]
    fn analytic_off_diagonal() {
        let k = kernel_matrix(&col(&[0.0, 1.0]), KernelSpec::Fixed(1.0)).unwrap();
        assert_eq!(k.get(0, 0), 1.0);
        assert!((k.get(0, 1) - (-1.0f64).exp()).abs() < 1e-15);
        assert!((k.get(0, 1) - 0.367879).abs() < 1e-6);
    }

    #[test]
    fn three_points_scalar_loop() {
        let pts: [[f64; 2]; 3] = [[0.0, 0.0], [1.0, 0.0], [0.0, 2.0]];
        let a = Matrix::from_rows(&pts.iter().map(|p| p.to_vec()).collect::<Vec<_>>()).unwrap();
        let k = kernel_matrix(&a, KernelSpec::Fixed(0.5)).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let dx = pts[i][0] - pts[j][0];
                let dy = pts[i][1] - pts[j][1];
                let want = (-0.5 * (dx * dx + dy * dy)).exp();
                assert!((k.get(i, j) - want).abs() < 1e-15);
                assert_eq!(k.get(i, j), k.get(j, i));
            }
        }
    }

    #[test]
    fn median_examples() {
        assert_eq!(median_bandwidth(&col(&[0.0, 2.0])).unwrap(), 1.0 / 8.0);
        assert_eq!(median_bandwidth(&col(&[0.0, 1.0, 2.0])).unwrap(), 0.5);
        assert_eq!(median_bandwidth(&col(&[1.0, 1.0, 1.0])), Err(HsicError::Degenerate));
        // Degenerate samples fall back to gamma = 1 in the kernel.
        assert_eq!(resolve_bandwidth(&col(&[1.0, 1.0]), KernelSpec::MedianHeuristic).unwrap(), 1.0);
    }

    #[test]
    fn constant_variable_is_independent() {
        let a = col(&[2.0, 2.0, 2.0, 2.0]);
        let b = col(&[0.1, -3.0, 2.0, 0.7]);
        assert_eq!(hsic_estimate(&a, &b, KernelSpec::MedianHeuristic, KernelSpec::MedianHeuristic).unwrap(), 0.0);
    }

    #[test]
    fn errors() {
        let a = col(&[1.0]);
        assert_eq!(
            hsic_estimate(&a, &a, KernelSpec::Fixed(1.0), KernelSpec::Fixed(1.0)),
            Err(HsicError::TooFewSamples(1))
        );
        let b = col(&[1.0, 2.0, 3.0]);
        let c = col(&[1.0, 2.0]);
        assert_eq!(
            hsic_estimate(&b, &c, KernelSpec::Fixed(1.0), KernelSpec::Fixed(1.0)),
            Err(HsicError::SampleMismatch(3, 2))
        );
        assert!(matches!(kernel_matrix(&b, KernelSpec::Fixed(-1.0)), Err(HsicError::InvalidBandwidth(_))));
    }

    #[test]
    fn f32_agrees_with_f64() {
        let a = col(&[0.0, 1.0, 2.0, 3.0]);
        let h64 = hsic_estimate(&a, &a, KernelSpec::Fixed(1.0), KernelSpec::Fixed(1.0)).unwrap();
        let a32 = a.cast::<f32>();
        let h32 = hsic_estimate(&a32, &a32, KernelSpec::Fixed(1.0), KernelSpec::Fixed(1.0)).unwrap();
        assert!((f64::from(h32) - h64).abs() < 1e-5);
    }
}
