//! Quantizing a policy's backbone: allocation, Fisher-weighted scale search
//! and the weighted error metric.

use aq_core::allocator::{greedy_allocate, AllocItem, AllocationInstance, Assignment, OverheadModel};
use aq_core::calibfile::CalibrationSet;
use aq_core::fisher::{fisher_diagonal, importance_weights, FisherDiagonal};
use aq_core::quantcore::{dequantize, quantize_rtn, Codebook, QuantType, QuantizedTensor};
use aq_core::scaleopt::{optimize_tensor, ImportanceMode, ScaleOptConfig, TensorOptReport};
use aq_core::sensitivity::{build_table_for, SensitivityConfig, SensitivityTable};
use aq_core::{Matrix, TensorId};
use serde::{Deserialize, Serialize};

use crate::policy::ToyPolicy;
use crate::HarnessError;

/// The default type menu: symmetric codes at 2, 3, 4, 5, 6 and 8 bits with
/// 32-element blocks and 8-block super-blocks.
pub fn default_menu() -> Vec<QuantType> {
    [2, 3, 4, 5, 6, 8]
        .iter()
        .map(|&b| QuantType::new(b, Codebook::UniformSymmetric, 32, 8).expect("valid default type"))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizeConfig {
    pub menu: Vec<QuantType>,
    pub budget: f64,
    pub overhead: OverheadModel,
    pub sensitivity: SensitivityConfig,
    pub amf_alpha: f64,
    pub scaleopt: ScaleOptConfig,
}

impl Default for QuantizeConfig {
    fn default() -> Self {
        Self {
            menu: default_menu(),
            budget: 3.0,
            overhead: OverheadModel::ZeroOverhead,
            sensitivity: SensitivityConfig::default(),
            amf_alpha: 0.5,
            scaleopt: ScaleOptConfig::default(),
        }
    }
}

/// Output of quantizing every backbone candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedModel {
    pub assignment: Assignment,
    pub tensors: Vec<QuantizedTensor>,
    pub reports: Vec<TensorOptReport>,
}

/// Sensitivity table restricted to the policy's quantization candidates.
pub fn sensitivity_table(
    policy: &ToyPolicy,
    calib: &CalibrationSet,
    cfg: &SensitivityConfig,
) -> Result<SensitivityTable, HarnessError> {
    let names = policy.arch.candidates();
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    Ok(build_table_for(calib, &refs, cfg)?)
}

/// Allocation instance in which every candidate has score 1.
pub fn uniform_instance(policy: &ToyPolicy, cfg: &QuantizeConfig) -> Result<AllocationInstance, HarnessError> {
    let items = policy
        .arch
        .candidates()
        .into_iter()
        .map(|name| {
            let id: TensorId = name.parse()?;
            let numel = policy.param(&name).expect("candidate").len();
            Ok(AllocItem { name, layer: id.layer, module: id.module, score: 1.0, numel })
        })
        .collect::<Result<Vec<_>, HarnessError>>()?;
    Ok(AllocationInstance { items, menu: cfg.menu.clone(), budget: cfg.budget, overhead: cfg.overhead })
}

pub fn allocate(instance: &AllocationInstance) -> Result<Assignment, HarnessError> {
    Ok(greedy_allocate(instance)?)
}

/// Fisher diagonal of every candidate, in candidate order.
pub fn candidate_fisher(
    policy: &ToyPolicy,
    calib: &CalibrationSet,
    amf_alpha: f64,
) -> Result<Vec<(String, Vec<f64>)>, HarnessError> {
    let names = calib.gradient_tensor_names();
    let fd: FisherDiagonal<f64> = fisher_diagonal(&calib.gradient_samples(), amf_alpha)?;
    policy
        .arch
        .candidates()
        .into_iter()
        .map(|n| {
            let i = names.iter().position(|m| *m == n).ok_or_else(|| HarnessError::MissingGradients(n.clone()))?;
            Ok((n, fd.per_tensor[i].clone()))
        })
        .collect()
}

fn fisher_of<'a>(fisher: &'a [(String, Vec<f64>)], name: &str) -> Option<&'a [f64]> {
    fisher.iter().find(|(n, _)| n == name).map(|(_, f)| f.as_slice())
}

/// Round-to-nearest quantization of every assigned tensor.
pub fn quantize_rtn_assignment(
    policy: &ToyPolicy,
    assignment: &Assignment,
) -> Result<Vec<QuantizedTensor>, HarnessError> {
    assignment
        .tensors
        .iter()
        .map(|t| {
            let w = policy.param(&t.name).ok_or_else(|| HarnessError::NotCandidate(t.name.clone()))?;
            Ok(quantize_rtn(t.name.clone(), w, t.qtype)?)
        })
        .collect()
}

/// Scale-optimized quantization of every assigned tensor.
pub fn quantize_optimized(
    policy: &ToyPolicy,
    assignment: &Assignment,
    fisher: Option<&[(String, Vec<f64>)]>,
    cfg: &ScaleOptConfig,
) -> Result<(Vec<QuantizedTensor>, Vec<TensorOptReport>), HarnessError> {
    let mut tensors = Vec::with_capacity(assignment.tensors.len());
    let mut reports = Vec::with_capacity(assignment.tensors.len());
    for t in &assignment.tensors {
        let w = policy.param(&t.name).ok_or_else(|| HarnessError::NotCandidate(t.name.clone()))?;
        let f = match (cfg.importance_mode, fisher) {
            (ImportanceMode::FisherMagnitude, Some(fs)) => {
                Some(fisher_of(fs, &t.name).ok_or_else(|| HarnessError::MissingGradients(t.name.clone()))?)
            }
            (ImportanceMode::FisherMagnitude, None) => return Err(HarnessError::MissingGradients(t.name.clone())),
            _ => None,
        };
        let (q, r) = optimize_tensor(&t.name, w, f, t.qtype, cfg)?;
        tensors.push(q);
        reports.push(r);
    }
    Ok((tensors, reports))
}

/// Full pipeline: HSIC sensitivity, greedy allocation, AMF-weighted scale
/// search.
pub fn quantize_full(
    policy: &ToyPolicy,
    calib: &CalibrationSet,
    cfg: &QuantizeConfig,
) -> Result<(SensitivityTable, QuantizedModel), HarnessError> {
    let table = sensitivity_table(policy, calib, &cfg.sensitivity)?;
    let instance = AllocationInstance::from_table(&table, cfg.menu.clone(), cfg.budget, cfg.overhead);
    let assignment = allocate(&instance)?;
    let fisher = candidate_fisher(policy, calib, cfg.amf_alpha)?;
    let (tensors, reports) = quantize_optimized(policy, &assignment, Some(&fisher), &cfg.scaleopt)?;
    Ok((table, QuantizedModel { assignment, tensors, reports }))
}

/// `Σ ω (w − ŵ)² / Σ ω` over all quantized tensors with
/// `ω = F·sqrt(σ_b² + w²)` from the given Fisher diagonal.
pub fn weighted_error(
    policy: &ToyPolicy,
    tensors: &[QuantizedTensor],
    fisher: &[(String, Vec<f64>)],
) -> Result<f64, HarnessError> {
    let (mut num, mut den) = (0.0, 0.0);
    for q in tensors {
        let w = policy.param(&q.name).ok_or_else(|| HarnessError::NotCandidate(q.name.clone()))?;
        let f = fisher_of(fisher, &q.name).ok_or_else(|| HarnessError::MissingGradients(q.name.clone()))?;
        let omega = importance_weights(f, w, q.qtype.block_size())?;
        let back: Matrix<f64> = dequantize(q)?;
        for ((a, b), o) in w.as_slice().iter().zip(back.as_slice()).zip(&omega) {
            num += o * (a - b) * (a - b);
            den += o;
        }
    }
    Ok(if den > 0.0 { num / den } else { 0.0 })
}
