//! Empirical diagonal Fisher information, the action-mixed combination of two
//! loss pathways, and per-element importance weights for scale search.
//!
//! Gradients are consumed as data. For a blend weight `α`, the per-sample
//! gradient is `α g_act + (1-α) g_cls` and
//!
//! ```text
//! F_ii = mean_d (α g_act + (1-α) g_cls)²
//!      = α² F^act_ii + (1-α)² F^cls_ii + 2α(1-α) C_ii,   C_ii = mean_d g_act g_cls
//! ```
//!
//! All means are taken over sorted terms, so reordering samples never changes
//! a single bit of the output.

use crate::matrix::Matrix;
use crate::scalar::{sorted_sum, Real};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FisherError {
    #[error("no gradient samples")]
    Empty,
    #[error("amf_alpha must lie in [0, 1], got {0}")]
    InvalidAlpha(f64),
    #[error("sample {sample} has no categorical gradients but amf_alpha < 1")]
    MissingCls { sample: usize },
    #[error("sample {sample}, tensor {tensor}: gradient length {got}, expected {expected}")]
    LengthMismatch { sample: usize, tensor: usize, expected: usize, got: usize },
    #[error("sample {sample}, tensor {tensor}: non-finite gradient")]
    NonFinite { sample: usize, tensor: usize },
    #[error("geometry mismatch: {0}")]
    Geometry(String),
}

/// Per-sample gradients of the two losses, one flattened vector per tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSample<T> {
    pub id: usize,
    pub act: Vec<Vec<T>>,
    pub cls: Option<Vec<Vec<T>>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FisherDiagonal<T> {
    pub per_tensor: Vec<Vec<T>>,
    pub amf_alpha: T,
    pub samples: usize,
}

impl<T: Real> FisherDiagonal<T> {
    pub fn tensor(&self, i: usize) -> &[T] {
        &self.per_tensor[i]
    }
}

/// Cross-pathway decomposition of the mixed Fisher, per tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition<T> {
    pub f_act: Vec<Vec<T>>,
    pub f_cls: Vec<Vec<T>>,
    pub cross: Vec<Vec<T>>,
    pub reconstructed: Vec<Vec<T>>,
}

fn validate<T: Real>(samples: &[GradientSample<T>], need_cls: bool) -> Result<Vec<usize>, FisherError> {
    let first = samples.first().ok_or(FisherError::Empty)?;
    let lens: Vec<usize> = first.act.iter().map(Vec::len).collect();
    for s in samples {
        let check = |grads: &Vec<Vec<T>>| -> Result<(), FisherError> {
            if grads.len() != lens.len() {
                return Err(FisherError::LengthMismatch {
                    sample: s.id,
                    tensor: grads.len().min(lens.len()),
                    expected: lens.len(),
                    got: grads.len(),
                });
            }
            for (t, (g, &n)) in grads.iter().zip(&lens).enumerate() {
                if g.len() != n {
                    return Err(FisherError::LengthMismatch { sample: s.id, tensor: t, expected: n, got: g.len() });
                }
                if g.iter().any(|x| !x.is_finite()) {
                    return Err(FisherError::NonFinite { sample: s.id, tensor: t });
                }
            }
            Ok(())
        };
        check(&s.act)?;
        if need_cls {
            check(s.cls.as_ref().ok_or(FisherError::MissingCls { sample: s.id })?)?;
        }
    }
    Ok(lens)
}

/// Mean over samples of `f(sample)[tensor][i]`, order-independent.
fn sample_mean<T: Real>(
    samples: &[GradientSample<T>],
    lens: &[usize],
    term: impl Fn(&GradientSample<T>, usize, usize) -> T,
) -> Vec<Vec<T>> {
    let n = T::from_count(samples.len());
    let mut buf = Vec::with_capacity(samples.len());
    lens.iter()
        .enumerate()
        .map(|(t, &len)| {
            (0..len)
                .map(|i| {
                    buf.clear();
                    buf.extend(samples.iter().map(|s| term(s, t, i)));
                    sorted_sum(&mut buf) / n
                })
                .collect()
        })
        .collect()
}

fn check_alpha<T: Real>(alpha: T) -> Result<(), FisherError> {
    if !(alpha >= T::zero() && alpha <= T::one()) {
        return Err(FisherError::InvalidAlpha(alpha.to_f64_lossy()));
    }
    Ok(())
}

/// `F_ii = mean_d (α g_act + (1-α) g_cls)²`. With `α = 1` the categorical
/// gradients are never read and may be absent.
pub fn fisher_diagonal<T: Real>(samples: &[GradientSample<T>], amf_alpha: T) -> Result<FisherDiagonal<T>, FisherError> {
    check_alpha(amf_alpha)?;
    let action_only = amf_alpha == T::one();
    let lens = validate(samples, !action_only)?;
    let per_tensor = if action_only {
        sample_mean(samples, &lens, |s, t, i| s.act[t][i] * s.act[t][i])
    } else {
        let beta = T::one() - amf_alpha;
        sample_mean(samples, &lens, |s, t, i| {
            let cls = s.cls.as_ref().expect("validated");
            let g = amf_alpha * s.act[t][i] + beta * cls[t][i];
            g * g
        })
    };
    Ok(FisherDiagonal { per_tensor, amf_alpha, samples: samples.len() })
}

/// Splits the mixed Fisher into its two single-loss Fishers and the
/// cross-pathway covariance, and reassembles it.
pub fn decompose<T: Real>(samples: &[GradientSample<T>], amf_alpha: T) -> Result<Decomposition<T>, FisherError> {
    check_alpha(amf_alpha)?;
    let lens = validate(samples, true)?;
    let cls = |s: &GradientSample<T>, t: usize, i: usize| s.cls.as_ref().expect("validated")[t][i];
    let f_act = sample_mean(samples, &lens, |s, t, i| s.act[t][i] * s.act[t][i]);
    let f_cls = sample_mean(samples, &lens, |s, t, i| cls(s, t, i) * cls(s, t, i));
    let cross = sample_mean(samples, &lens, |s, t, i| s.act[t][i] * cls(s, t, i));
    let a = amf_alpha;
    let b = T::one() - a;
    let (wa, wb, wc) = (a * a, b * b, T::lit(2.0) * a * b);
    let reconstructed = f_act
        .iter()
        .zip(&f_cls)
        .zip(&cross)
        .map(|((fa, fc), c)| fa.iter().zip(fc).zip(c).map(|((&x, &y), &z)| wa * x + wb * y + wc * z).collect())
        .collect();
    Ok(Decomposition { f_act, f_cls, cross, reconstructed })
}

/// Weight on the cross-pathway term for blend `α`.
pub fn cross_prefactor<T: Real>(alpha: T) -> T {
    T::lit(2.0) * alpha * (T::one() - alpha)
}

/// `ω_{b,i} = F_ii · sqrt(σ_b² + w_i²)` in padded block layout, with `σ_b²`
/// the mean squared weight over the block's real (non-padding) elements.
/// Padding elements get `ω = 0`.
pub fn importance_weights<T: Real>(
    fisher: &[T],
    weights: &Matrix<T>,
    block_size: usize,
) -> Result<Vec<T>, FisherError> {
    if fisher.len() != weights.len() {
        return Err(FisherError::Geometry(format!("{} Fisher entries for {} weights", fisher.len(), weights.len())));
    }
    magnitude_factors(weights, block_size)
        .map(|m| m.iter().enumerate().map(|(i, &f)| if i < fisher.len() { fisher[i] * f } else { T::zero() }).collect())
}

/// The magnitude factor `sqrt(σ_b² + w_i²)` alone, padded layout, padding 0.
pub fn magnitude_factors<T: Real>(weights: &Matrix<T>, block_size: usize) -> Result<Vec<T>, FisherError> {
    if block_size < 2 {
        return Err(FisherError::Geometry(format!("block size {block_size}")));
    }
    let w = weights.as_slice();
    let n = w.len();
    let padded = n.div_ceil(block_size) * block_size;
    let mut out = vec![T::zero(); padded];
    for (b, chunk) in w.chunks(block_size).enumerate() {
        let sigma2 = chunk.iter().map(|&x| x * x).sum::<T>() / T::from_count(chunk.len());
        for (i, &x) in chunk.iter().enumerate() {
            out[b * block_size + i] = (sigma2 + x * x).sqrt();
        }
    }
    Ok(out)
}

/// A differentiable model whose averaged loss can be probed by finite
/// differences.
pub trait LossModel {
    fn params(&self) -> Vec<f64>;
    /// Loss averaged over the probe samples.
    fn mean_loss(&self, params: &[f64]) -> f64;
    /// One flattened gradient per probe sample.
    fn per_sample_grads(&self, params: &[f64]) -> Vec<Vec<f64>>;
}

#[derive(Debug, Clone, Copy)]
pub struct HessianCheckConfig {
    /// `‖∇L‖∞` above this marks the report inconclusive.
    pub grad_tol: f64,
    /// Central-difference step is `step_rel * (1 + |θ_i|)`.
    pub step_rel: f64,
}

impl Default for HessianCheckConfig {
    fn default() -> Self {
        Self { grad_tol: 1e-3, step_rel: 1e-3 }
    }
}

#[derive(Debug, Clone)]
pub struct HessianReport {
    pub indices: Vec<usize>,
    pub fisher: Vec<f64>,
    pub hessian: Vec<f64>,
    pub relative_errors: Vec<f64>,
    pub pearson: f64,
    pub grad_inf_norm: f64,
    pub inconclusive: bool,
}

pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len().min(y.len());
    if n < 2 {
        return f64::NAN;
    }
    let mx = x[..n].iter().sum::<f64>() / n as f64;
    let my = y[..n].iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let (dx, dy) = (x[i] - mx, y[i] - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    sxy / (sxx * syy).sqrt()
}

/// Compares the empirical Fisher diagonal with central-difference second
/// derivatives of the averaged loss at the sampled parameter indices.
pub fn hessian_check<M: LossModel + ?Sized>(model: &M, indices: &[usize], cfg: HessianCheckConfig) -> HessianReport {
    let theta = model.params();
    let grads = model.per_sample_grads(&theta);
    let n = grads.len().max(1) as f64;
    let grad_inf_norm =
        (0..theta.len()).map(|i| (grads.iter().map(|g| g[i]).sum::<f64>() / n).abs()).fold(0.0, f64::max);
    let base = model.mean_loss(&theta);
    let mut fisher = Vec::with_capacity(indices.len());
    let mut hessian = Vec::with_capacity(indices.len());
    let mut probe = theta.clone();
    for &i in indices {
        fisher.push(grads.iter().map(|g| g[i] * g[i]).sum::<f64>() / n);
        let h = cfg.step_rel * (1.0 + theta[i].abs());
        probe[i] = theta[i] + h;
        let up = model.mean_loss(&probe);
        probe[i] = theta[i] - h;
        let down = model.mean_loss(&probe);
        probe[i] = theta[i];
        hessian.push((up - 2.0 * base + down) / (h * h));
    }
    let relative_errors =
        fisher.iter().zip(&hessian).map(|(f, h)| (f - h).abs() / h.abs().max(f64::MIN_POSITIVE)).collect();
    HessianReport {
        indices: indices.to_vec(),
        pearson: pearson(&fisher, &hessian),
        fisher,
        hessian,
        relative_errors,
        grad_inf_norm,
        inconclusive: grad_inf_norm > cfg.grad_tol,
    }
}
