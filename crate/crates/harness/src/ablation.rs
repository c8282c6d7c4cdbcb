//! Five-rung ablation: RTN, magnitude-weighted scales, action-only Fisher,
//! action-mixed Fisher, and HSIC bit allocation on top.

use std::io::Write;

use aq_core::allocator::Assignment;
use aq_core::calibfile::{ActionLoss, CalibrationSet};
use aq_core::quantcore::QuantizedTensor;
use aq_core::scaleopt::{ImportanceMode, ScaleOptConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::calib::gen_calibration;
use crate::policy::ToyPolicy;
use crate::quantize::{
    allocate, candidate_fisher, quantize_full, quantize_optimized, quantize_rtn_assignment, uniform_instance,
    weighted_error, QuantizeConfig,
};
use crate::task::{rollout_success, ReachTask};
use crate::HarnessError;

pub const RUNGS: [&str; 5] = ["rtn", "+magnitude", "+action-fisher", "+amf", "+hsic"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationConfig {
    pub quantize: QuantizeConfig,
    pub calib_samples: usize,
    pub action_loss: ActionLoss,
    pub episodes: usize,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self { quantize: QuantizeConfig::default(), calib_samples: 60, action_loss: ActionLoss::Mse, episodes: 200 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RungResult {
    pub seed: u64,
    pub rung: usize,
    pub name: String,
    pub success: f64,
    /// Action-Fisher weighted reconstruction error.
    pub weighted_error: f64,
    pub achieved_bpw: f64,
    pub bit_widths: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub budget: f64,
    pub full_precision_success: Vec<f64>,
    pub rows: Vec<RungResult>,
}

impl AblationTable {
    /// Mean success of one rung (1-based) over seeds.
    pub fn mean_success(&self, rung: usize) -> f64 {
        let v: Vec<f64> = self.rows.iter().filter(|r| r.rung == rung).map(|r| r.success).collect();
        v.iter().sum::<f64>() / v.len().max(1) as f64
    }

    pub fn write_csv(&self, out: impl Write) -> Result<(), HarnessError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["seed", "rung", "name", "budget", "success", "weighted_error", "achieved_bpw", "bit_widths"])?;
        for r in &self.rows {
            let bits: Vec<String> = r.bit_widths.iter().map(u8::to_string).collect();
            w.write_record([
                r.seed.to_string(),
                r.rung.to_string(),
                r.name.clone(),
                self.budget.to_string(),
                format!("{:.6}", r.success),
                format!("{:.6e}", r.weighted_error),
                format!("{:.6}", r.achieved_bpw),
                bits.join(" "),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Quantized backbones for the five rungs, in rung order. Rungs 1 to 4
/// share the allocation obtained with every sensitivity set to 1; rung 5
/// allocates from the HSIC table.
pub fn ladder_models(
    policy: &ToyPolicy,
    calib: &CalibrationSet,
    q: &QuantizeConfig,
) -> Result<Vec<(Assignment, Vec<QuantizedTensor>)>, HarnessError> {
    let uniform = allocate(&uniform_instance(policy, q)?)?;
    let f_act = candidate_fisher(policy, calib, 1.0)?;
    let f_amf = candidate_fisher(policy, calib, q.amf_alpha)?;
    let mode = |m: ImportanceMode| ScaleOptConfig { importance_mode: m, ..q.scaleopt };

    let mut rungs = Vec::with_capacity(5);
    rungs.push((uniform.clone(), quantize_rtn_assignment(policy, &uniform)?));
    rungs.push((uniform.clone(), quantize_optimized(policy, &uniform, None, &mode(ImportanceMode::Magnitude))?.0));
    let fisher_cfg = mode(ImportanceMode::FisherMagnitude);
    rungs.push((uniform.clone(), quantize_optimized(policy, &uniform, Some(&f_act), &fisher_cfg)?.0));
    rungs.push((uniform.clone(), quantize_optimized(policy, &uniform, Some(&f_amf), &fisher_cfg)?.0));
    let full = QuantizeConfig { scaleopt: fisher_cfg, ..q.clone() };
    let (_, model) = quantize_full(policy, calib, &full)?;
    rungs.push((model.assignment, model.tensors));
    Ok(rungs)
}

/// Runs the five rungs on one calibration set. The weighted error always
/// uses the action-only Fisher so every rung is scored against the same
/// metric.
pub fn ablation_ladder(
    policy: &ToyPolicy,
    task: &ReachTask,
    calib: &CalibrationSet,
    cfg: &AblationConfig,
    seed: u64,
    eval_seed: u64,
) -> Result<Vec<RungResult>, HarnessError> {
    let f_act = candidate_fisher(policy, calib, 1.0)?;
    ladder_models(policy, calib, &cfg.quantize)?
        .into_iter()
        .enumerate()
        .map(|(i, (assignment, tensors))| {
            let qp = policy.with_quantized(&tensors)?;
            Ok(RungResult {
                seed,
                rung: i + 1,
                name: RUNGS[i].to_string(),
                success: rollout_success(&qp, task, cfg.episodes, eval_seed),
                weighted_error: weighted_error(policy, &tensors, &f_act)?,
                achieved_bpw: assignment.achieved_bpw,
                bit_widths: assignment.tensors.iter().map(|t| t.qtype.bit_width()).collect(),
            })
        })
        .collect()
}

/// Calibration and evaluation seeds derived from one ladder seed.
pub fn seed_pair(seed: u64) -> (u64, u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (rng.gen(), rng.gen())
}

/// The ladder repeated over seeds, each with its own calibration set and
/// evaluation episodes.
pub fn ablation_over_seeds(
    policy: &ToyPolicy,
    task: &ReachTask,
    cfg: &AblationConfig,
    seeds: &[u64],
) -> Result<AblationTable, HarnessError> {
    let mut rows = Vec::new();
    let mut fp = Vec::new();
    for &s in seeds {
        let (calib_seed, eval_seed) = seed_pair(s);
        let calib = gen_calibration(policy, task, cfg.calib_samples, calib_seed, cfg.action_loss)?;
        fp.push(rollout_success(policy, task, cfg.episodes, eval_seed));
        rows.extend(ablation_ladder(policy, task, &calib, cfg, s, eval_seed)?);
    }
    Ok(AblationTable { budget: cfg.quantize.budget, full_precision_success: fp, rows })
}
