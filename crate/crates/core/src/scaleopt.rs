//! Per-block scale search minimizing `Φ_b = Σ ω_i (w_i - s_b (q_i - z_b))²`.
//!
//! Alternates nearest-code assignment with the closed-form weighted
//! least-squares scale `s = Σ ω w q / Σ ω q²`. Asymmetric types add a third
//! step that picks the best integer zero-point for fixed codes and scale.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::fisher::{importance_weights, magnitude_factors, FisherError};
use crate::matrix::Matrix;
use crate::quantcore::{padded_weights, quant_mse, quantize_rtn, QuantError, QuantType, QuantizedTensor};
use crate::scalar::{pairwise_sum, Real};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ScaleOptError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("importance vector has {got} entries, expected {expected}")]
    Alignment { expected: usize, got: usize },
    #[error("negative or non-finite importance at index {0}")]
    BadImportance(usize),
    #[error(transparent)]
    Quant(#[from] QuantError),
    #[error(transparent)]
    Fisher(#[from] FisherError),
}

/// Source of the per-element importance `ω`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ImportanceMode {
    Uniform,
    Magnitude,
    #[default]
    FisherMagnitude,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScaleOptConfig {
    pub max_iters: usize,
    /// Stop once `(Φ_prev - Φ) <= rel_tol · Φ_prev`.
    pub rel_tol: f64,
    pub importance_mode: ImportanceMode,
}

impl Default for ScaleOptConfig {
    fn default() -> Self {
        Self { max_iters: 20, rel_tol: 1e-8, importance_mode: ImportanceMode::FisherMagnitude }
    }
}

impl ScaleOptConfig {
    pub fn validate(&self) -> Result<(), ScaleOptError> {
        if self.max_iters == 0 {
            return Err(ScaleOptError::Config("max_iters must be >= 1".into()));
        }
        if !(self.rel_tol > 0.0 && self.rel_tol.is_finite()) {
            return Err(ScaleOptError::Config(format!("rel_tol must be positive, got {}", self.rel_tol)));
        }
        Ok(())
    }
}

/// Nearest codebook entry to `w_i / s + z` per element.
pub fn assign_codes<T: Real>(weights: &[T], scale: T, zero: i32, qtype: &QuantType) -> Vec<i32> {
    let z = T::lit(f64::from(zero));
    weights.iter().map(|&w| qtype.nearest_code(w, scale, z)).collect()
}

/// Weighted least-squares scale for fixed codes and zero-point, or `None`
/// when `Σ ω (q - z)² = 0`.
pub fn optimal_scale<T: Real>(weights: &[T], codes: &[i32], zero: i32, omega: &[T]) -> Option<T> {
    let mut num = Vec::with_capacity(weights.len());
    let mut den = Vec::with_capacity(weights.len());
    for ((&w, &q), &o) in weights.iter().zip(codes).zip(omega) {
        if o == T::zero() {
            continue;
        }
        let q = T::lit(f64::from(q - zero));
        num.push(o * w * q);
        den.push(o * q * q);
    }
    let den = pairwise_sum(&den);
    (den > T::zero()).then(|| pairwise_sum(&num) / den)
}

/// Best integer zero-point for fixed codes and scale.
fn optimal_zero<T: Real>(weights: &[T], codes: &[i32], scale: T, omega: &[T], qtype: &QuantType) -> Option<i32> {
    if scale == T::zero() {
        return None;
    }
    let mut num = Vec::with_capacity(weights.len());
    let mut den = Vec::with_capacity(weights.len());
    for ((&w, &q), &o) in weights.iter().zip(codes).zip(omega) {
        if o != T::zero() {
            num.push(o * (T::lit(f64::from(q)) - w / scale));
            den.push(o);
        }
    }
    let den = pairwise_sum(&den);
    if den <= T::zero() {
        return None;
    }
    // Φ is a convex quadratic in z, so rounding and clamping its unconstrained
    // minimizer gives the best integer in range.
    let z = (pairwise_sum(&num) / den).round_half_away().to_i32()?;
    Some(z.clamp(qtype.code_min(), qtype.code_max()))
}

/// `Φ_b`; elements with zero importance are skipped.
pub fn block_objective<T: Real>(weights: &[T], codes: &[i32], scale: T, zero: i32, omega: &[T]) -> T {
    let terms: Vec<T> = weights
        .iter()
        .zip(codes)
        .zip(omega)
        .filter(|(_, &o)| o != T::zero())
        .map(|((&w, &q), &o)| {
            let e = w - scale * T::lit(f64::from(q - zero));
            o * e * e
        })
        .collect();
    pairwise_sum(&terms)
}

/// Absmax parameters computed over the elements with nonzero importance.
pub fn masked_rtn_params<T: Real>(weights: &[T], omega: &[T], qtype: &QuantType) -> (T, i32) {
    let support: Vec<T> = weights.iter().zip(omega).filter(|(_, &o)| o != T::zero()).map(|(&w, _)| w).collect();
    crate::quantcore::rtn_block_params(&support, qtype)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockResult<T> {
    pub scale: T,
    pub zero: i32,
    pub codes: Vec<i32>,
    /// `Φ_b` at initialization followed by its value after each accepted iteration.
    pub trace: Vec<T>,
    pub iterations: usize,
    pub converged: bool,
    /// The scale update hit `Σ ω q² = 0` and kept the previous scale.
    pub degenerate: bool,
}

impl<T: Real> BlockResult<T> {
    pub fn objective(&self) -> T {
        *self.trace.last().expect("trace starts with the initial value")
    }
}

/// Alternating minimization of `Φ_b` from `init` (default: absmax over the
/// elements with nonzero importance). Any step that would raise `Φ_b` is
/// rejected and ends the search, so the trace never increases.
pub fn optimize_block<T: Real>(
    weights: &[T],
    omega: &[T],
    qtype: &QuantType,
    init: Option<(T, i32)>,
    cfg: &ScaleOptConfig,
) -> BlockResult<T> {
    let (mut scale, mut zero) = init.unwrap_or_else(|| masked_rtn_params(weights, omega, qtype));
    let mut codes = assign_codes(weights, scale, zero, qtype);
    let mut phi = block_objective(weights, &codes, scale, zero, omega);
    let mut trace = vec![phi];
    let res = |scale, zero, codes, trace, iterations, converged, degenerate| BlockResult {
        scale,
        zero,
        codes,
        trace,
        iterations,
        converged,
        degenerate,
    };
    if scale == T::zero() || phi == T::zero() {
        return res(scale, zero, codes, trace, 0, true, false);
    }
    let tol = T::lit(cfg.rel_tol);
    for it in 1..=cfg.max_iters {
        let new_codes = assign_codes(weights, scale, zero, qtype);
        let Some(new_scale) = optimal_scale(weights, &new_codes, zero, omega) else {
            return res(scale, zero, codes, trace, it, true, true);
        };
        let new_zero = if qtype.is_symmetric() {
            zero
        } else {
            optimal_zero(weights, &new_codes, new_scale, omega, qtype).unwrap_or(zero)
        };
        let new_phi = block_objective(weights, &new_codes, new_scale, new_zero, omega);
        if !(new_phi <= phi) {
            return res(scale, zero, codes, trace, it, true, false);
        }
        let converged = phi - new_phi <= tol * phi || new_phi == T::zero();
        (scale, zero, codes, phi) = (new_scale, new_zero, new_codes, new_phi);
        trace.push(phi);
        if converged {
            return res(scale, zero, codes, trace, it, true, false);
        }
    }
    res(scale, zero, codes, trace, cfg.max_iters, false, false)
}

/// Per-tensor diagnostics of [`optimize_tensor`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorOptReport {
    pub blocks: usize,
    pub converged_blocks: usize,
    /// Blocks whose importance summed to zero and fell back to magnitude weighting.
    pub magnitude_fallback_blocks: usize,
    pub degenerate_blocks: usize,
    /// The RTN result had the lower weighted error and was kept instead.
    pub kept_rtn: bool,
    pub weighted_error: f64,
    pub rtn_weighted_error: f64,
}

/// Per-element importance in padded block layout for the given mode.
pub fn importance_for_mode<T: Real>(
    weights: &Matrix<T>,
    fisher: Option<&[T]>,
    mode: ImportanceMode,
    block_size: usize,
) -> Result<Vec<T>, ScaleOptError> {
    Ok(match mode {
        ImportanceMode::Uniform => {
            let padded = weights.len().div_ceil(block_size) * block_size;
            (0..padded).map(|i| if i < weights.len() { T::one() } else { T::zero() }).collect()
        }
        ImportanceMode::Magnitude => magnitude_factors(weights, block_size)?,
        ImportanceMode::FisherMagnitude => {
            let f = fisher.ok_or_else(|| ScaleOptError::Alignment { expected: weights.len(), got: 0 })?;
            if f.len() != weights.len() {
                return Err(ScaleOptError::Alignment { expected: weights.len(), got: f.len() });
            }
            importance_weights(f, weights, block_size)?
        }
    })
}

/// Optimizes every block of a tensor independently and packs the result.
///
/// Blocks whose importance sums to zero are optimized with the magnitude
/// factor alone. If plain RTN ends up with a lower importance-weighted error
/// after scale storage, RTN is returned.
pub fn optimize_tensor<T: Real>(
    name: &str,
    weights: &Matrix<T>,
    fisher: Option<&[T]>,
    qtype: QuantType,
    cfg: &ScaleOptConfig,
) -> Result<(QuantizedTensor, TensorOptReport), ScaleOptError> {
    cfg.validate()?;
    let bs = qtype.block_size();
    let omega = importance_for_mode(weights, fisher, cfg.importance_mode, bs)?;
    if let Some(i) = omega.iter().position(|o| !(o.is_finite() && *o >= T::zero())) {
        return Err(ScaleOptError::BadImportance(i));
    }
    let padded = padded_weights(weights, bs)?;
    let magnitude = magnitude_factors(weights, bs)?;
    let effective: Vec<T> = omega
        .chunks(bs)
        .zip(magnitude.chunks(bs))
        .flat_map(|(o, m)| if o.iter().all(|&x| x == T::zero()) { m } else { o }.iter().copied())
        .collect();
    let results: Vec<(BlockResult<T>, bool)> = padded
        .par_chunks(bs)
        .zip(omega.par_chunks(bs))
        .zip(effective.par_chunks(bs))
        .map(|((w, o), e)| (optimize_block(w, e, &qtype, None, cfg), o.iter().all(|&x| x == T::zero())))
        .collect();
    let scales: Vec<f64> = results.iter().map(|(r, _)| r.scale.to_f64_lossy()).collect();
    let zeros: Vec<i32> = results.iter().map(|(r, _)| r.zero).collect();
    let qt = QuantizedTensor::from_block_params(name, weights, qtype, &scales, &zeros)?;
    let rtn = quantize_rtn(name, weights, qtype)?;
    let metric = &effective[..weights.len()];
    let err = quant_mse(weights, &qt, Some(metric))?.to_f64_lossy();
    let rtn_err = quant_mse(weights, &rtn, Some(metric))?.to_f64_lossy();
    let kept_rtn = rtn_err < err;
    let fallback_blocks = results.iter().filter(|(_, f)| *f).count();
    if fallback_blocks > 0 {
        log::warn!("{name}: {fallback_blocks} block(s) had zero importance, used magnitude weighting");
    }
    let report = TensorOptReport {
        blocks: results.len(),
        converged_blocks: results.iter().filter(|(r, _)| r.converged).count(),
        magnitude_fallback_blocks: fallback_blocks,
        degenerate_blocks: results.iter().filter(|(r, _)| r.degenerate).count(),
        kept_rtn,
        weighted_error: err.min(rtn_err),
        rtn_weighted_error: rtn_err,
    };
    Ok((if kept_rtn { rtn } else { qt }, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantcore::Codebook;

    fn sym(b: u8) -> QuantType {
        QuantType::new(b, Codebook::UniformSymmetric, 4, 0).unwrap()
    }

    #[test]
    fn codes_by_hand() {
        assert_eq!(assign_codes(&[0.9, -1.6, 0.2, 0.45], 1.0, 0, &sym(2)), vec![1, -2, 0, 0]);
        let w = [-1.0, -0.5, 0.0, 0.5];
        assert_eq!(assign_codes(&w, 0.5, 0, &sym(2)), vec![-2, -1, 0, 1]);
        let halved: Vec<f64> = w.iter().map(|x| x / 2.0).collect();
        assert_eq!(assign_codes(&w, 1.0, 0, &sym(2)), assign_codes(&halved, 0.5, 0, &sym(2)));
        assert_eq!(assign_codes(&w, 0.0, 0, &sym(2)), vec![0; 4]);
    }

    #[test]
    fn scale_by_hand() {
        assert_eq!(optimal_scale(&[1.0, 2.0], &[1, 2], 0, &[1.0, 3.0]), Some(1.0));
        assert_eq!(optimal_scale(&[0.3, 0.6], &[1, 2], 0, &[1.0, 1.0]), Some((0.3 + 1.2) / 5.0));
        assert_eq!(optimal_scale(&[1.0, 2.0], &[0, 0], 0, &[1.0, 1.0]), None);
        assert_eq!(optimal_scale(&[1.0, 2.0], &[1, 1], 0, &[0.0, 0.0]), None);
    }

    #[test]
    fn block_on_grid_converges_at_once() {
        let w = [-1.0, -0.5, 0.0, 0.5];
        let r = optimize_block(&w, &[1.0; 4], &sym(2), None, &ScaleOptConfig::default());
        assert_eq!(r.objective(), 0.0);
        assert!(r.iterations <= 1 && r.converged);
    }

    #[test]
    fn zero_block() {
        let r = optimize_block(&[0.0; 4], &[1.0; 4], &sym(3), None, &ScaleOptConfig::default());
        assert_eq!((r.scale, r.objective(), r.codes.clone()), (0.0, 0.0, vec![0; 4]));
    }

    #[test]
    fn importance_protects_element() {
        let w = [0.1, -0.3, 0.25, 0.4];
        let cfg = ScaleOptConfig::default();
        let uni = optimize_block(&w, &[1.0; 4], &sym(2), None, &cfg);
        let wtd = optimize_block(&w, &[10.0, 1.0, 1.0, 1.0], &sym(2), None, &cfg);
        let e = |r: &BlockResult<f64>| (w[0] - r.scale * f64::from(r.codes[0])).powi(2) * 10.0;
        assert!(e(&wtd) <= e(&uni));
    }

    #[test]
    fn asymmetric_zero_step() {
        let q = QuantType::new(2, Codebook::UniformAsymmetric, 4, 0).unwrap();
        let w = [0.1, 0.2, 0.3, 0.35];
        let rtn = masked_rtn_params(&w, &[1.0; 4], &q);
        let rtn_phi = block_objective(&w, &assign_codes(&w, rtn.0, rtn.1, &q), rtn.0, rtn.1, &[1.0; 4]);
        let r = optimize_block(&w, &[1.0; 4], &q, None, &ScaleOptConfig::default());
        assert!(r.objective() <= rtn_phi);
        assert!(r.trace.windows(2).all(|p| p[1] <= p[0]));
        assert!(q.contains_code(r.zero));
    }

    #[test]
    fn config_validation() {
        assert!(ScaleOptConfig { max_iters: 0, ..Default::default() }.validate().is_err());
        assert!(ScaleOptConfig { rel_tol: 0.0, ..Default::default() }.validate().is_err());
    }
}
