//! Calibration set generation from on-policy states.

use aq_core::calibfile::{ActionLoss, CalibrationSet, TensorActivations, TensorGradients};
use aq_core::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::policy::{ToyPolicy, ACTION_DIM};
use crate::tape::Tape;
use crate::task::{oracle_action, ReachTask};
use crate::HarnessError;

/// Everything recorded for one calibration input.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    /// Hidden state entering the residual stack.
    pub backbone_input: Vec<f64>,
    /// Candidate outputs in `arch.candidates()` order.
    pub taps: Vec<Vec<f64>>,
    /// Action-loss gradient per candidate matrix, row-major.
    pub g_act: Vec<Vec<f64>>,
    /// Bin cross-entropy gradient per candidate matrix, when the policy has
    /// a categorical head.
    pub g_cls: Option<Vec<Vec<f64>>>,
}

/// One forward and one backward pass per loss for a single observation.
pub fn record_sample(policy: &ToyPolicy, obs: &[f64], loss: ActionLoss) -> Result<SampleRecord, HarnessError> {
    let target = oracle_action(obs);
    let input = Matrix::from_vec(1, obs.len(), obs.to_vec()).map_err(|e| HarnessError::Shape(e.to_string()))?;
    let candidates = policy.arch.candidates();
    let idx: Vec<usize> = candidates.iter().map(|n| policy.param_index(n).expect("candidate")).collect();

    let mut tape = Tape::new();
    let f = policy.forward(&mut tape, input.clone())?;
    let backbone_input = tape.value(f.backbone_input).as_slice().to_vec();
    let taps = f.taps.iter().map(|(_, v)| tape.value(*v).as_slice().to_vec()).collect();
    let y = Matrix::from_vec(1, ACTION_DIM, target.to_vec()).expect("sized");
    let l = match loss {
        ActionLoss::L1 => tape.l1(f.action, y)?,
        ActionLoss::Mse | ActionLoss::Unspecified => tape.mse(f.action, y)?,
    };
    let g = tape.backward(l);
    let g_act = idx.iter().map(|&i| g.param(i).expect("registered").as_slice().to_vec()).collect();

    let g_cls = match f.logits {
        Some(logits) => {
            let bins = target.map(|a| policy.arch.bin_of(a)).to_vec();
            let ce = tape.cross_entropy(logits, ACTION_DIM, bins)?;
            let g = tape.backward(ce);
            Some(idx.iter().map(|&i| g.param(i).expect("registered").as_slice().to_vec()).collect())
        }
        None => None,
    };
    Ok(SampleRecord { backbone_input, taps, g_act, g_cls })
}

/// Observations visited by the policy: each sample starts a seeded episode
/// and stops after a random number of steps in the first half of the horizon.
pub fn calibration_states(policy: &ToyPolicy, task: &ReachTask, k: usize, seed: u64) -> Vec<[f64; 2]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..k)
        .map(|_| {
            let mut s = task.reset(&mut rng);
            let t = rng.gen_range(0..task.horizon.div_ceil(2));
            for _ in 0..t {
                if s.distance() <= task.eps {
                    break;
                }
                s = task.step(&s, policy.act(&s.observation()));
            }
            s.observation()
        })
        .collect()
}

/// Builds a `K`-sample calibration set: backbone input hidden states (X),
/// oracle actions (Y),
/// every candidate's output (Z) and per-sample gradients of both losses.
pub fn gen_calibration(
    policy: &ToyPolicy,
    task: &ReachTask,
    k: usize,
    seed: u64,
    loss: ActionLoss,
) -> Result<CalibrationSet, HarnessError> {
    if k < 2 {
        return Err(HarnessError::TooFewSamples(k));
    }
    policy.validate()?;
    task.validate()?;
    let states = calibration_states(policy, task, k, seed);
    let records = states.iter().map(|o| record_sample(policy, o, loss)).collect::<Result<Vec<_>, _>>()?;
    let candidates = policy.arch.candidates();
    let x = Matrix::from_fn(k, policy.arch.hidden, |r, c| records[r].backbone_input[c]);
    let y = Matrix::from_fn(k, ACTION_DIM, |r, c| oracle_action(&states[r])[c]);
    let stack = |rows: Vec<&Vec<f64>>| {
        let cols = rows[0].len();
        Matrix::from_vec(rows.len(), cols, rows.into_iter().flatten().copied().collect()).expect("equal widths")
    };
    let mut z = Vec::with_capacity(candidates.len());
    let mut grads = Vec::with_capacity(candidates.len());
    for (t, name) in candidates.iter().enumerate() {
        let shape = policy.param(name).expect("candidate").shape();
        z.push(TensorActivations {
            name: name.clone(),
            weight_shape: shape,
            z: stack(records.iter().map(|r| &r.taps[t]).collect()),
        });
        let cls = if records[0].g_cls.is_some() {
            Some(stack(records.iter().map(|r| &r.g_cls.as_ref().expect("all or none")[t]).collect()))
        } else {
            None
        };
        grads.push(TensorGradients {
            name: name.clone(),
            act: stack(records.iter().map(|r| &r.g_act[t]).collect()),
            cls,
        });
    }
    let action_loss = if loss == ActionLoss::Unspecified { ActionLoss::Mse } else { loss };
    let set = CalibrationSet { x, y, z, grads, action_loss };
    set.validate()?;
    Ok(set)
}
