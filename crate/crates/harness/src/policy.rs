//! Toy reaching policy: a full-precision input embedding, a residual stack
//! of `up`/`down` matrix pairs (the quantization candidates), a continuous
//! action head and an optional binned categorical head.

use aq_core::quantcore::{dequantize, QuantizedTensor};
use aq_core::{Matrix, ModuleTag, TensorId};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::tape::{Tape, TapeError, Var};
use crate::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicyArch {
    pub input_dim: usize,
    pub hidden: usize,
    /// Residual layers, each holding one `up` and one `down` matrix.
    pub layers: usize,
    pub activation: Activation,
    /// Bins per action dimension for the categorical head; 0 disables it.
    pub bins: usize,
    /// Bin range is `[-a_max, a_max]`.
    pub a_max: f64,
}

impl Default for PolicyArch {
    fn default() -> Self {
        Self { input_dim: 2, hidden: 32, layers: 3, activation: Activation::Tanh, bins: 16, a_max: 1.0 }
    }
}

pub const ACTION_DIM: usize = 2;

impl PolicyArch {
    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.input_dim == 0 || self.hidden == 0 || self.layers == 0 {
            return Err(HarnessError::Config("input_dim, hidden and layers must be positive".into()));
        }
        if self.bins == 1 {
            return Err(HarnessError::Config("bins must be 0 (no categorical head) or at least 2".into()));
        }
        if !(self.a_max > 0.0 && self.a_max.is_finite()) {
            return Err(HarnessError::Config(format!("a_max must be positive, got {}", self.a_max)));
        }
        Ok(())
    }

    /// Number of parameter tensors, computed without building their names.
    pub fn tensor_count(&self) -> Option<usize> {
        let heads = if self.bins > 0 { 4 } else { 2 };
        self.layers.checked_mul(4)?.checked_add(2 + heads)
    }

    /// `(name, rows, cols)` of every parameter in storage order.
    pub fn param_shapes(&self) -> Vec<(String, usize, usize)> {
        let h = self.hidden;
        let mut out = vec![("embed.weight".to_string(), h, self.input_dim), ("embed.bias".into(), 1, h)];
        for l in 1..=self.layers {
            for m in ["up", "down"] {
                out.push((format!("{l}.{m}"), h, h));
                out.push((format!("{l}.{m}.bias"), 1, h));
            }
        }
        out.push(("action.weight".into(), ACTION_DIM, h));
        out.push(("action.bias".into(), 1, ACTION_DIM));
        if self.bins > 0 {
            out.push(("lm.weight".into(), ACTION_DIM * self.bins, h));
            out.push(("lm.bias".into(), 1, ACTION_DIM * self.bins));
        }
        out
    }

    /// Names of the backbone matrices eligible for quantization, in layer order.
    pub fn candidates(&self) -> Vec<String> {
        (1..=self.layers)
            .flat_map(|l| [TensorId::new(l, ModuleTag::Up), TensorId::new(l, ModuleTag::Down)])
            .map(|id| id.to_string())
            .collect()
    }

    /// Bin index of one action component.
    pub fn bin_of(&self, a: f64) -> usize {
        let u = (a + self.a_max) / (2.0 * self.a_max);
        ((u * self.bins as f64).floor().max(0.0) as usize).min(self.bins - 1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub value: Matrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyPolicy {
    pub arch: PolicyArch,
    pub params: Vec<NamedTensor>,
}

/// Tape handles produced by one forward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    pub action: Var,
    pub logits: Option<Var>,
    /// Output of every candidate matrix after its nonlinearity (`up`) or
    /// projection (`down`), keyed by tensor name.
    pub taps: Vec<(String, Var)>,
    /// Hidden state entering the residual stack (embedding output).
    pub backbone_input: Var,
    /// Tape variable of every parameter, in storage order.
    pub params: Vec<Var>,
}

impl ToyPolicy {
    /// Random initialization: scaled uniform weights, zero biases. `down`
    /// matrices start small so each residual layer begins near identity.
    pub fn init(arch: PolicyArch, seed: u64) -> Result<Self, HarnessError> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = arch
            .param_shapes()
            .into_iter()
            .map(|(name, r, c)| {
                let value = if name.ends_with(".bias") {
                    Matrix::zeros(r, c)
                } else {
                    let mut lim = (6.0 / (r + c) as f64).sqrt();
                    if name.ends_with(".down") {
                        lim *= 0.5;
                    }
                    Matrix::from_fn(r, c, |_, _| rng.gen_range(-lim..lim))
                };
                NamedTensor { name, value }
            })
            .collect();
        Ok(Self { arch, params })
    }

    pub fn param(&self, name: &str) -> Option<&Matrix<f64>> {
        self.params.iter().find(|p| p.name == name).map(|p| &p.value)
    }

    pub fn param_index(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    pub fn num_params(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn flat_params(&self) -> Vec<f64> {
        self.params.iter().flat_map(|p| p.value.as_slice().iter().copied()).collect()
    }

    pub fn with_flat_params(&self, flat: &[f64]) -> Result<Self, HarnessError> {
        if flat.len() != self.num_params() {
            return Err(HarnessError::Shape(format!("expected {} parameters, got {}", self.num_params(), flat.len())));
        }
        let mut out = self.clone();
        let mut at = 0;
        for p in &mut out.params {
            let n = p.value.len();
            p.value.as_mut_slice().copy_from_slice(&flat[at..at + n]);
            at += n;
        }
        Ok(out)
    }

    /// Checks names and shapes against the architecture.
    pub fn validate(&self) -> Result<(), HarnessError> {
        self.arch.validate()?;
        if self.arch.tensor_count() != Some(self.params.len()) {
            return Err(HarnessError::Shape(format!(
                "architecture expects {:?} tensors, got {}",
                self.arch.tensor_count(),
                self.params.len()
            )));
        }
        let shapes = self.arch.param_shapes();
        for ((name, r, c), p) in shapes.iter().zip(&self.params) {
            if *name != p.name || (*r, *c) != p.value.shape() {
                return Err(HarnessError::Shape(format!(
                    "expected tensor {name} {r}x{c}, got {} {:?}",
                    p.name,
                    p.value.shape()
                )));
            }
            if let Some(i) = p.value.first_non_finite() {
                return Err(HarnessError::NonFinite(format!("{}[{i}]", p.name)));
            }
        }
        Ok(())
    }

    /// Records a forward pass over `input` (`rows x input_dim`).
    pub fn forward(&self, tape: &mut Tape, input: Matrix<f64>) -> Result<Forward, TapeError> {
        let params: Vec<Var> = self.params.iter().enumerate().map(|(i, p)| tape.param(i, p.value.clone())).collect();
        let p = |name: &str| params[self.param_index(name).expect("architecture parameter")];
        let act = |tape: &mut Tape, v: Var| match self.arch.activation {
            Activation::Tanh => tape.tanh(v),
            Activation::Relu => tape.relu(v),
        };
        let x = tape.leaf(input);
        let e = tape.dense(x, p("embed.weight"), Some(p("embed.bias")))?;
        let mut h = act(tape, e);
        let backbone_input = h;
        let mut taps = Vec::with_capacity(2 * self.arch.layers);
        for l in 1..=self.arch.layers {
            let up = format!("{l}.up");
            let down = format!("{l}.down");
            let u = tape.dense(h, p(&up), Some(p(&format!("{up}.bias"))))?;
            let u = act(tape, u);
            let d = tape.dense(u, p(&down), Some(p(&format!("{down}.bias"))))?;
            taps.push((up, u));
            taps.push((down, d));
            h = tape.add(h, d)?;
        }
        let action = tape.dense(h, p("action.weight"), Some(p("action.bias")))?;
        let logits = if self.arch.bins > 0 { Some(tape.dense(h, p("lm.weight"), Some(p("lm.bias")))?) } else { None };
        Ok(Forward { action, logits, backbone_input, taps, params })
    }

    /// Continuous action for one observation without recording a tape.
    pub fn act(&self, obs: &[f64]) -> [f64; ACTION_DIM] {
        let hdim = self.arch.hidden;
        let nonlin = |v: f64| match self.arch.activation {
            Activation::Tanh => v.tanh(),
            Activation::Relu => v.max(0.0),
        };
        let dense = |w: &Matrix<f64>, b: &Matrix<f64>, x: &[f64], out: &mut Vec<f64>| {
            out.clear();
            let (ws, bs, din) = (w.as_slice(), b.as_slice(), w.cols());
            for o in 0..w.rows() {
                let row = &ws[o * din..(o + 1) * din];
                let mut acc = bs[o];
                for i in 0..din {
                    acc += row[i] * x[i];
                }
                out.push(acc);
            }
        };
        let get = |i: usize| &self.params[i].value;
        let mut h = Vec::with_capacity(hdim);
        dense(get(0), get(1), obs, &mut h);
        h.iter_mut().for_each(|v| *v = nonlin(*v));
        let (mut u, mut d) = (Vec::with_capacity(hdim), Vec::with_capacity(hdim));
        for l in 0..self.arch.layers {
            let base = 2 + 4 * l;
            dense(get(base), get(base + 1), &h, &mut u);
            u.iter_mut().for_each(|v| *v = nonlin(*v));
            dense(get(base + 2), get(base + 3), &u, &mut d);
            h.iter_mut().zip(&d).for_each(|(a, b)| *a += b);
        }
        let base = 2 + 4 * self.arch.layers;
        let mut a = Vec::with_capacity(ACTION_DIM);
        dense(get(base), get(base + 1), &h, &mut a);
        [a[0], a[1]]
    }

    /// Copy with the named candidate matrices replaced by their dequantized
    /// reconstructions. Heads and biases can not be replaced.
    pub fn with_quantized(&self, tensors: &[QuantizedTensor]) -> Result<Self, HarnessError> {
        let candidates = self.arch.candidates();
        let mut out = self.clone();
        for qt in tensors {
            if !candidates.contains(&qt.name) {
                return Err(HarnessError::NotCandidate(qt.name.clone()));
            }
            let idx = out.param_index(&qt.name).expect("candidate exists");
            let w: Matrix<f64> = dequantize(qt)?;
            if w.shape() != out.params[idx].value.shape() {
                return Err(HarnessError::Shape(format!(
                    "tensor {}: quantized shape {:?} vs policy {:?}",
                    qt.name,
                    w.shape(),
                    out.params[idx].value.shape()
                )));
            }
            out.params[idx].value = w;
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fast_path_matches_tape() {
        for activation in [Activation::Tanh, Activation::Relu] {
            let arch = PolicyArch { activation, ..Default::default() };
            let p = ToyPolicy::init(arch, 3).unwrap();
            let obs = [0.3, -1.2];
            let mut t = Tape::new();
            let f = p.forward(&mut t, Matrix::from_vec(1, 2, obs.to_vec()).unwrap()).unwrap();
            let fast = p.act(&obs);
            for (a, b) in t.value(f.action).as_slice().iter().zip(fast) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn candidates_and_heads() {
        let arch = PolicyArch::default();
        assert_eq!(arch.candidates(), ["1.up", "1.down", "2.up", "2.down", "3.up", "3.down"]);
        let p = ToyPolicy::init(arch, 1).unwrap();
        p.validate().unwrap();
        assert_eq!(p.param("lm.weight").unwrap().shape(), (32, 32));
    }

    #[test]
    fn bins_cover_range() {
        let arch = PolicyArch::default();
        assert_eq!(arch.bin_of(-1.0), 0);
        assert_eq!(arch.bin_of(1.0), 15);
        assert_eq!(arch.bin_of(0.0), 8);
        assert_eq!(arch.bin_of(-5.0), 0);
    }

    #[test]
    fn deterministic_init() {
        let a = ToyPolicy::init(PolicyArch::default(), 9).unwrap();
        let b = ToyPolicy::init(PolicyArch::default(), 9).unwrap();
        assert_eq!(a, b);
    }
}
