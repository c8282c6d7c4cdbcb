//! Finite-difference probe of the policy's action loss.

use aq_core::calibfile::ActionLoss;
use aq_core::fisher::LossModel;
use aq_core::Matrix;

use crate::policy::{ToyPolicy, ACTION_DIM};
use crate::tape::Tape;
use crate::task::oracle_action;

/// Action loss of a policy averaged over a fixed set of observations.
#[derive(Debug, Clone)]
pub struct PolicyLoss {
    pub policy: ToyPolicy,
    pub inputs: Vec<[f64; 2]>,
    pub loss: ActionLoss,
}

impl PolicyLoss {
    fn sample_loss(&self, p: &ToyPolicy, obs: &[f64; 2]) -> f64 {
        let a = p.act(obs);
        let t = oracle_action(obs);
        let d = [a[0] - t[0], a[1] - t[1]];
        match self.loss {
            ActionLoss::L1 => (d[0].abs() + d[1].abs()) / ACTION_DIM as f64,
            _ => (d[0] * d[0] + d[1] * d[1]) / ACTION_DIM as f64,
        }
    }
}

impl LossModel for PolicyLoss {
    fn params(&self) -> Vec<f64> {
        self.policy.flat_params()
    }

    fn mean_loss(&self, params: &[f64]) -> f64 {
        let p = self.policy.with_flat_params(params).expect("parameter count fixed");
        self.inputs.iter().map(|o| self.sample_loss(&p, o)).sum::<f64>() / self.inputs.len().max(1) as f64
    }

    fn per_sample_grads(&self, params: &[f64]) -> Vec<Vec<f64>> {
        let p = self.policy.with_flat_params(params).expect("parameter count fixed");
        self.inputs
            .iter()
            .map(|o| {
                let mut tape = Tape::new();
                let input = Matrix::from_vec(1, 2, o.to_vec()).expect("1x2");
                let f = p.forward(&mut tape, input).expect("policy shapes are consistent");
                let y = Matrix::from_vec(1, ACTION_DIM, oracle_action(o).to_vec()).expect("1x2");
                let l = match self.loss {
                    ActionLoss::L1 => tape.l1(f.action, y),
                    _ => tape.mse(f.action, y),
                }
                .expect("matching shapes");
                let g = tape.backward(l);
                (0..p.params.len()).flat_map(|i| g.param(i).expect("registered").as_slice().to_vec()).collect()
            })
            .collect()
    }
}
