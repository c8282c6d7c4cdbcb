//! Action-aware per-tensor sensitivity
//! `S = -hsic_alpha · HSIC(X, Z) + hsic_beta · HSIC(Z, Y)`.
//!
//! With `standardize` set, each HSIC term is first divided by its mean over
//! all tensors of the calibration set.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::calibfile::CalibrationSet;
use crate::hsic::{hsic_from_grams, kernel_matrix, HsicError, KernelSpec};
use crate::matrix::Matrix;
use crate::naming::{ModuleTag, NameError, TensorId};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SensitivityError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("no activations for tensor(s): {}", .0.join(", "))]
    MissingTensors(Vec<String>),
    #[error(transparent)]
    Name(#[from] NameError),
    #[error("layer indices must be contiguous from 1, missing layer {0}")]
    LayerGap(usize),
    #[error("hsic: {0}")]
    Hsic(#[from] HsicError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SensitivityConfig {
    /// Weight of the input-redundancy term.
    pub hsic_alpha: f64,
    /// Weight of the action-relevance term.
    pub hsic_beta: f64,
    pub standardize: bool,
    /// `Fixed(γ)` shares one bandwidth across every kernel; the median
    /// heuristic picks one per sample set.
    pub kernel: KernelSpec,
}

impl Default for SensitivityConfig {
    fn default() -> Self {
        Self { hsic_alpha: 1.0, hsic_beta: 1.0, standardize: true, kernel: KernelSpec::MedianHeuristic }
    }
}

impl SensitivityConfig {
    pub fn validate(&self) -> Result<(), SensitivityError> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !ok(self.hsic_alpha) || !ok(self.hsic_beta) {
            return Err(SensitivityError::Config("hsic_alpha and hsic_beta must be finite and >= 0".into()));
        }
        if self.hsic_alpha == 0.0 && self.hsic_beta == 0.0 {
            return Err(SensitivityError::Config("hsic_alpha and hsic_beta are both zero".into()));
        }
        if let KernelSpec::Fixed(g) = self.kernel {
            if !(g > 0.0 && g.is_finite()) {
                return Err(SensitivityError::Config(format!("fixed bandwidth must be positive, got {g}")));
            }
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(serde_json::to_vec(self).expect("config serializes")))
    }
}

/// Raw HSIC terms of one tensor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HsicTerms {
    /// HSIC(X, Z).
    pub redundancy: f64,
    /// HSIC(Z, Y).
    pub relevance: f64,
    /// Z is constant across samples.
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityEntry {
    pub name: String,
    pub layer: usize,
    pub module: ModuleTag,
    pub score: f64,
    pub terms: HsicTerms,
    pub numel: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityTable {
    pub entries: Vec<SensitivityEntry>,
    pub config: SensitivityConfig,
    pub config_hash: String,
    pub calibration_hash: String,
}

impl SensitivityTable {
    pub fn get(&self, name: &str) -> Option<&SensitivityEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn layer_count(&self) -> usize {
        self.entries.iter().map(|e| e.layer).max().unwrap_or(0)
    }
}

/// Hex SHA-256 of the calibration set's AQCB encoding.
pub fn calibration_hash(calib: &CalibrationSet) -> String {
    hex::encode(Sha256::digest(calib.to_bytes()))
}

fn is_constant(z: &Matrix<f64>) -> bool {
    let first = z.row(0);
    (1..z.rows()).all(|i| z.row(i) == first)
}

struct SharedGrams {
    kx: Matrix<f64>,
    ky: Matrix<f64>,
}

impl SharedGrams {
    fn new(calib: &CalibrationSet, kernel: KernelSpec) -> Result<Self, SensitivityError> {
        Ok(Self { kx: kernel_matrix(&calib.x, kernel)?, ky: kernel_matrix(&calib.y, kernel)? })
    }

    fn terms(&self, z: &Matrix<f64>, kernel: KernelSpec) -> Result<HsicTerms, SensitivityError> {
        if is_constant(z) {
            return Ok(HsicTerms { redundancy: 0.0, relevance: 0.0, degenerate: true });
        }
        let kz = kernel_matrix(z, kernel)?;
        Ok(HsicTerms {
            redundancy: hsic_from_grams(&self.kx, &kz)?,
            relevance: hsic_from_grams(&kz, &self.ky)?,
            degenerate: false,
        })
    }
}

/// HSIC(X, Z) and HSIC(Z, Y) for one tensor.
pub fn hsic_terms(calib: &CalibrationSet, tensor: &str, kernel: KernelSpec) -> Result<HsicTerms, SensitivityError> {
    let t = calib.tensor(tensor).ok_or_else(|| SensitivityError::MissingTensors(vec![tensor.to_string()]))?;
    SharedGrams::new(calib, kernel)?.terms(&t.z, kernel)
}

/// Divides each term by its mean over all tensors. A term whose mean is zero
/// is left unchanged.
pub fn standardize_terms(terms: &[HsicTerms]) -> Vec<HsicTerms> {
    let n = terms.len() as f64;
    let mean_r = terms.iter().map(|t| t.redundancy).sum::<f64>() / n;
    let mean_v = terms.iter().map(|t| t.relevance).sum::<f64>() / n;
    let div = |v: f64, m: f64| if m > 0.0 { v / m } else { v };
    terms
        .iter()
        .map(|t| HsicTerms { redundancy: div(t.redundancy, mean_r), relevance: div(t.relevance, mean_v), ..*t })
        .collect()
}

/// `-α·redundancy + β·relevance` on already-standardized (or raw) terms.
pub fn combine(terms: &HsicTerms, cfg: &SensitivityConfig) -> f64 {
    -cfg.hsic_alpha * terms.redundancy + cfg.hsic_beta * terms.relevance
}

/// Score of one tensor. Standardization uses the means over every tensor in
/// the calibration set.
pub fn tensor_sensitivity(
    calib: &CalibrationSet,
    tensor: &str,
    cfg: &SensitivityConfig,
) -> Result<f64, SensitivityError> {
    cfg.validate()?;
    if !cfg.standardize {
        return Ok(combine(&hsic_terms(calib, tensor, cfg.kernel)?, cfg));
    }
    if calib.tensor(tensor).is_none() {
        return Err(SensitivityError::MissingTensors(vec![tensor.to_string()]));
    }
    let table = build_table_for(calib, &calib.tensor_names(), cfg)?;
    Ok(table.get(tensor).expect("tensor present").score)
}

/// Scores every tensor in the calibration set.
pub fn build_table(calib: &CalibrationSet, cfg: &SensitivityConfig) -> Result<SensitivityTable, SensitivityError> {
    build_table_for(calib, &calib.tensor_names(), cfg)
}

/// Scores the named candidate tensors, all of which must have activations.
pub fn build_table_for(
    calib: &CalibrationSet,
    candidates: &[&str],
    cfg: &SensitivityConfig,
) -> Result<SensitivityTable, SensitivityError> {
    cfg.validate()?;
    let missing: Vec<String> = candidates.iter().filter(|n| calib.tensor(n).is_none()).map(|n| n.to_string()).collect();
    if !missing.is_empty() {
        return Err(SensitivityError::MissingTensors(missing));
    }
    let mut ids: Vec<(TensorId, &str)> = Vec::with_capacity(candidates.len());
    for &n in candidates {
        ids.push((n.parse()?, n));
    }
    ids.sort();
    let layers = ids.iter().map(|(id, _)| id.layer).max().unwrap_or(0);
    if let Some(l) = (1..=layers).find(|l| !ids.iter().any(|(id, _)| id.layer == *l)) {
        return Err(SensitivityError::LayerGap(l));
    }
    let grams = SharedGrams::new(calib, cfg.kernel)?;
    let raw: Vec<HsicTerms> = ids
        .par_iter()
        .map(|(_, n)| grams.terms(&calib.tensor(n).expect("checked").z, cfg.kernel))
        .collect::<Result<_, _>>()?;
    for ((_, n), t) in ids.iter().zip(&raw) {
        if t.degenerate {
            log::warn!("tensor {n}: activations constant across samples, score set to 0");
        }
    }
    let used = if cfg.standardize { standardize_terms(&raw) } else { raw.clone() };
    let entries = ids
        .iter()
        .zip(raw.iter().zip(&used))
        .map(|((id, n), (r, u))| SensitivityEntry {
            name: n.to_string(),
            layer: id.layer,
            module: id.module,
            score: if r.degenerate { 0.0 } else { combine(u, cfg) },
            terms: *r,
            numel: calib.tensor(n).expect("checked").numel(),
        })
        .collect();
    Ok(SensitivityTable { entries, config: *cfg, config_hash: cfg.hash(), calibration_hash: calibration_hash(calib) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calibfile::{ActionLoss, TensorActivations};

    fn calib(zs: Vec<(&str, Matrix<f64>)>) -> CalibrationSet {
        let k = 8;
        CalibrationSet {
            x: Matrix::from_fn(k, 2, |i, j| ((i * 7 + j * 3) % 5) as f64),
            y: Matrix::from_fn(k, 1, |i, _| (i as f64).sin()),
            z: zs.into_iter().map(|(n, z)| TensorActivations { name: n.into(), weight_shape: (2, 2), z }).collect(),
            grads: vec![],
            action_loss: ActionLoss::Mse,
        }
    }

    #[test]
    fn constant_z_scores_zero() {
        let c = calib(vec![("1.up", Matrix::from_fn(8, 3, |_, _| 1.5))]);
        let t = build_table(&c, &SensitivityConfig::default()).unwrap();
        assert_eq!(t.entries[0].score, 0.0);
        assert!(t.entries[0].terms.degenerate);
    }

    #[test]
    fn single_tensor_self_normalizes() {
        let c = calib(vec![("1.up", Matrix::from_fn(8, 1, |i, _| (i as f64 * 0.7).cos()))]);
        let cfg = SensitivityConfig { hsic_alpha: 0.3, hsic_beta: 2.0, ..Default::default() };
        let s = tensor_sensitivity(&c, "1.up", &cfg).unwrap();
        assert_eq!(s, -0.3 + 2.0);
    }

    #[test]
    fn missing_and_bad_names() {
        let c = calib(vec![("1.up", Matrix::from_fn(8, 1, |i, _| i as f64))]);
        let cfg = SensitivityConfig::default();
        match build_table_for(&c, &["1.up", "2.up", "3.down"], &cfg) {
            Err(SensitivityError::MissingTensors(v)) => assert_eq!(v, vec!["2.up", "3.down"]),
            other => panic!("{other:?}"),
        }
        let c = calib(vec![("2.up", Matrix::from_fn(8, 1, |i, _| i as f64))]);
        assert_eq!(build_table(&c, &cfg), Err(SensitivityError::LayerGap(1)));
        let bad = SensitivityConfig { hsic_alpha: 0.0, hsic_beta: 0.0, ..cfg };
        assert!(matches!(bad.validate(), Err(SensitivityError::Config(_))));
    }

    #[test]
    fn sorted_by_layer_then_module() {
        let z = |s: f64| Matrix::from_fn(8, 1, move |i, _| (i as f64 * s).sin());
        let c = calib(vec![("2.down", z(0.3)), ("1.down", z(0.5)), ("2.up", z(0.9)), ("1.up", z(1.1))]);
        let t = build_table(&c, &SensitivityConfig::default()).unwrap();
        let names: Vec<&str> = t.entries.iter().map(|e| e.name.as_str()).collect();
        assert_eq!(names, ["1.up", "1.down", "2.up", "2.down"]);
        assert_eq!(t.calibration_hash.len(), 64);
    }

    #[test]
    fn standardizing_twice_is_stable() {
        let terms = vec![
            HsicTerms { redundancy: 0.2, relevance: 0.01, degenerate: false },
            HsicTerms { redundancy: 0.5, relevance: 0.03, degenerate: false },
            HsicTerms { redundancy: 0.0, relevance: 0.0, degenerate: true },
        ];
        let once = standardize_terms(&terms);
        let twice = standardize_terms(&once);
        for (a, b) in once.iter().zip(&twice) {
            assert!((a.redundancy - b.redundancy).abs() <= 1e-15 * a.redundancy.abs().max(1.0));
            assert!((a.relevance - b.relevance).abs() <= 1e-15 * a.relevance.abs().max(1.0));
        }
    }
}
