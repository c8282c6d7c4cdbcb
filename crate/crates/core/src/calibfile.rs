//! Calibration sets and the AQCB binary file.
//!
//! All values are stored as little-endian `f32`; in memory they are held as
//! `f64`, which makes `save(load(bytes))` reproduce the input bytes.

use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::fisher::GradientSample;
use crate::matrix::Matrix;

pub const CALIB_MAGIC: &[u8; 4] = b"AQCB";
pub const CALIB_VERSION: u8 = 1;

/// Upper bound on a section or tensor name, in bytes.
const MAX_NAME_LEN: usize = 1024;

#[derive(Debug, thiserror::Error)]
pub enum CalibError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("bad magic: not an AQCB file")]
    BadMagic,
    #[error("unsupported calibration version {0}")]
    UnsupportedVersion(u8),
    #[error("unknown action-loss tag {0}")]
    UnknownLossTag(u8),
    #[error("unknown section kind {0}")]
    UnknownSection(u8),
    #[error("file truncated while reading {0}")]
    Truncated(String),
    #[error("{len} trailing bytes after the last section")]
    TrailingBytes { len: usize },
    #[error("section {field} has {got} samples but {expected_field} has {expected}")]
    SampleMismatch { field: String, got: usize, expected_field: String, expected: usize },
    #[error("section {section}: non-finite value at flat index {index}")]
    NonFinite { section: String, index: usize },
    #[error("missing section {0}")]
    MissingSection(String),
    #[error("duplicate section {0}")]
    DuplicateSection(String),
    #[error("gradient section {name} refers to a tensor with no activations")]
    UnknownTensor { name: String },
    #[error("gradient section {name} has {got} columns, tensor has {expected} elements")]
    GradientWidth { name: String, got: usize, expected: usize },
    #[error("invalid section name: {0}")]
    BadName(String),
    #[error("need at least 2 samples, got {0}")]
    TooFewSamples(usize),
}

/// Which loss produced the action-pathway gradients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActionLoss {
    #[default]
    Unspecified,
    Mse,
    L1,
}

impl ActionLoss {
    fn tag(self) -> u8 {
        match self {
            ActionLoss::Unspecified => 0,
            ActionLoss::Mse => 1,
            ActionLoss::L1 => 2,
        }
    }

    fn from_tag(t: u8) -> Result<Self, CalibError> {
        match t {
            0 => Ok(ActionLoss::Unspecified),
            1 => Ok(ActionLoss::Mse),
            2 => Ok(ActionLoss::L1),
            other => Err(CalibError::UnknownLossTag(other)),
        }
    }
}

/// Output activations of one quantization candidate, one row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorActivations {
    pub name: String,
    /// Shape of the weight matrix that produced the activations.
    pub weight_shape: (usize, usize),
    pub z: Matrix<f64>,
}

impl TensorActivations {
    pub fn numel(&self) -> usize {
        self.weight_shape.0 * self.weight_shape.1
    }
}

/// Per-sample gradients of one tensor, one row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorGradients {
    pub name: String,
    pub act: Matrix<f64>,
    pub cls: Option<Matrix<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationSet {
    pub x: Matrix<f64>,
    pub y: Matrix<f64>,
    pub z: Vec<TensorActivations>,
    pub grads: Vec<TensorGradients>,
    pub action_loss: ActionLoss,
}

const KIND_X: u8 = 0;
const KIND_Y: u8 = 1;
const KIND_Z: u8 = 2;
const KIND_GACT: u8 = 3;
const KIND_GCLS: u8 = 4;

impl CalibrationSet {
    pub fn k(&self) -> usize {
        self.x.rows()
    }

    pub fn tensor(&self, name: &str) -> Option<&TensorActivations> {
        self.z.iter().find(|t| t.name == name)
    }

    pub fn tensor_names(&self) -> Vec<&str> {
        self.z.iter().map(|t| t.name.as_str()).collect()
    }

    pub fn validate(&self) -> Result<(), CalibError> {
        let k = self.k();
        if k < 2 {
            return Err(CalibError::TooFewSamples(k));
        }
        let mismatch = |field: String, got: usize| CalibError::SampleMismatch {
            field,
            got,
            expected_field: "X".into(),
            expected: k,
        };
        let finite = |section: String, m: &Matrix<f64>| match m.first_non_finite() {
            Some(index) => Err(CalibError::NonFinite { section, index }),
            None => Ok(()),
        };
        finite("X".into(), &self.x)?;
        if self.y.rows() != k {
            return Err(mismatch("Y".into(), self.y.rows()));
        }
        finite("Y".into(), &self.y)?;
        for (i, t) in self.z.iter().enumerate() {
            check_name(&t.name)?;
            if self.z[..i].iter().any(|o| o.name == t.name) {
                return Err(CalibError::DuplicateSection(format!("Z:{}", t.name)));
            }
            if t.z.rows() != k {
                return Err(mismatch(format!("Z:{}", t.name), t.z.rows()));
            }
            finite(format!("Z:{}", t.name), &t.z)?;
        }
        for (i, g) in self.grads.iter().enumerate() {
            if self.grads[..i].iter().any(|o| o.name == g.name) {
                return Err(CalibError::DuplicateSection(format!("GACT:{}", g.name)));
            }
            let t = self.tensor(&g.name).ok_or_else(|| CalibError::UnknownTensor { name: g.name.clone() })?;
            let parts = std::iter::once(("GACT", &g.act)).chain(g.cls.iter().map(|c| ("GCLS", c)));
            for (tag, m) in parts {
                let field = format!("{tag}:{}", g.name);
                if m.rows() != k {
                    return Err(mismatch(field, m.rows()));
                }
                if m.cols() != t.numel() {
                    return Err(CalibError::GradientWidth { name: g.name.clone(), got: m.cols(), expected: t.numel() });
                }
                finite(field, m)?;
            }
        }
        Ok(())
    }

    /// Gradients regrouped per sample, tensors in `z` order. Tensors without
    /// gradient sections are skipped.
    pub fn gradient_samples(&self) -> Vec<GradientSample<f64>> {
        let ordered: Vec<&TensorGradients> =
            self.z.iter().filter_map(|t| self.grads.iter().find(|g| g.name == t.name)).collect();
        let has_cls = !ordered.is_empty() && ordered.iter().all(|g| g.cls.is_some());
        (0..self.k())
            .map(|d| GradientSample {
                id: d,
                act: ordered.iter().map(|g| g.act.row(d).to_vec()).collect(),
                cls: has_cls
                    .then(|| ordered.iter().map(|g| g.cls.as_ref().expect("checked").row(d).to_vec()).collect()),
            })
            .collect()
    }

    /// Names of the tensors that carry gradients, in `z` order.
    pub fn gradient_tensor_names(&self) -> Vec<String> {
        self.z.iter().filter(|t| self.grads.iter().any(|g| g.name == t.name)).map(|t| t.name.clone()).collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut sections: Vec<(u8, &str, (usize, usize), &Matrix<f64>)> =
            vec![(KIND_X, "", (0, 0), &self.x), (KIND_Y, "", (0, 0), &self.y)];
        for t in &self.z {
            sections.push((KIND_Z, &t.name, t.weight_shape, &t.z));
        }
        for g in &self.grads {
            sections.push((KIND_GACT, &g.name, (0, 0), &g.act));
            if let Some(c) = &g.cls {
                sections.push((KIND_GCLS, &g.name, (0, 0), c));
            }
        }
        let mut out = Vec::new();
        out.extend_from_slice(CALIB_MAGIC);
        out.push(CALIB_VERSION);
        out.push(self.action_loss.tag());
        out.extend_from_slice(&[0, 0]);
        out.extend_from_slice(&(sections.len() as u32).to_le_bytes());
        for (kind, name, aux, m) in sections {
            out.push(kind);
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            for v in [m.rows(), m.cols(), aux.0, aux.1] {
                out.extend_from_slice(&(v as u32).to_le_bytes());
            }
            for &v in m.as_slice() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CalibError> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(4, "header")? != CALIB_MAGIC {
            return Err(CalibError::BadMagic);
        }
        let version = r.u8("header")?;
        if version != CALIB_VERSION {
            return Err(CalibError::UnsupportedVersion(version));
        }
        let action_loss = ActionLoss::from_tag(r.u8("header")?)?;
        r.take(2, "header")?;
        let count = r.u32("header")? as usize;
        let (mut x, mut y) = (None, None);
        let mut z = Vec::new();
        let mut grads: Vec<TensorGradients> = Vec::new();
        for _ in 0..count {
            let kind = r.u8("section header")?;
            let name_len = r.u16("section header")? as usize;
            let name = std::str::from_utf8(r.take(name_len, "section name")?)
                .map_err(|_| CalibError::BadName("not UTF-8".into()))?
                .to_string();
            let rows = r.u32("section header")? as usize;
            let cols = r.u32("section header")? as usize;
            let aux = (r.u32("section header")? as usize, r.u32("section header")? as usize);
            let label = match kind {
                KIND_X => "X".to_string(),
                KIND_Y => "Y".to_string(),
                KIND_Z => format!("Z:{name}"),
                KIND_GACT => format!("GACT:{name}"),
                KIND_GCLS => format!("GCLS:{name}"),
                other => return Err(CalibError::UnknownSection(other)),
            };
            let n = rows.checked_mul(cols).ok_or_else(|| CalibError::Truncated(label.clone()))?;
            let raw = r.take(n.checked_mul(4).ok_or_else(|| CalibError::Truncated(label.clone()))?, &label)?;
            let data: Vec<f64> =
                raw.chunks_exact(4).map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]]))).collect();
            let m = Matrix::from_vec(rows, cols, data).expect("length checked");
            match kind {
                KIND_X | KIND_Y => {
                    let slot = if kind == KIND_X { &mut x } else { &mut y };
                    if slot.replace(m).is_some() {
                        return Err(CalibError::DuplicateSection(label));
                    }
                }
                KIND_Z => z.push(TensorActivations { name, weight_shape: aux, z: m }),
                KIND_GACT => grads.push(TensorGradients { name, act: m, cls: None }),
                _ => {
                    let g = grads
                        .iter_mut()
                        .find(|g| g.name == name)
                        .ok_or_else(|| CalibError::MissingSection(format!("GACT:{name}")))?;
                    if g.cls.replace(m).is_some() {
                        return Err(CalibError::DuplicateSection(label));
                    }
                }
            }
        }
        if r.pos != bytes.len() {
            return Err(CalibError::TrailingBytes { len: bytes.len() - r.pos });
        }
        let set = CalibrationSet {
            x: x.ok_or_else(|| CalibError::MissingSection("X".into()))?,
            y: y.ok_or_else(|| CalibError::MissingSection("Y".into()))?,
            z,
            grads,
            action_loss,
        };
        set.validate()?;
        Ok(set)
    }
}

fn check_name(name: &str) -> Result<(), CalibError> {
    if name.is_empty() || name.len() > MAX_NAME_LEN {
        return Err(CalibError::BadName(name.chars().take(64).collect()));
    }
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], CalibError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| CalibError::Truncated(what.to_string()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8, CalibError> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16, CalibError> {
        let b = self.take(2, what)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self, what: &str) -> Result<u32, CalibError> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn load_calibration(path: impl AsRef<Path>) -> Result<CalibrationSet, CalibError> {
    CalibrationSet::from_bytes(&std::fs::read(path)?)
}

pub fn save_calibration(calib: &CalibrationSet, path: impl AsRef<Path>) -> Result<(), CalibError> {
    calib.validate()?;
    std::fs::write(path, calib.to_bytes())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: usize, cols: usize, f: impl Fn(usize, usize) -> f64) -> Matrix<f64> {
        Matrix::from_fn(rows, cols, f)
    }

    fn sample() -> CalibrationSet {
        CalibrationSet {
            x: m(3, 2, |i, j| (i * 2 + j) as f64 * 0.5),
            y: m(3, 1, |i, _| i as f64 - 1.0),
            z: vec![TensorActivations { name: "1.up".into(), weight_shape: (2, 2), z: m(3, 2, |i, j| (i + j) as f64) }],
            grads: vec![TensorGradients {
                name: "1.up".into(),
                act: m(3, 4, |i, j| (i * j) as f64 * 0.25),
                cls: Some(m(3, 4, |i, j| i as f64 - j as f64)),
            }],
            action_loss: ActionLoss::Mse,
        }
    }

    #[test]
    fn round_trip_bytes() {
        let c = sample();
        let b = c.to_bytes();
        let back = CalibrationSet::from_bytes(&b).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_bytes(), b);
    }

    #[test]
    fn mismatched_k_names_both_fields() {
        let mut c = sample();
        c.y = m(2, 1, |_, _| 0.0);
        let err = CalibrationSet::from_bytes(&c.to_bytes()).unwrap_err().to_string();
        assert!(err.contains('X') && err.contains('Y'), "{err}");
    }

    #[test]
    fn rejects_garbage() {
        let b = sample().to_bytes();
        assert!(matches!(CalibrationSet::from_bytes(&b[..3]), Err(CalibError::Truncated(_))));
        let mut bad = b.clone();
        bad[0] = b'X';
        assert!(matches!(CalibrationSet::from_bytes(&bad), Err(CalibError::BadMagic)));
        let mut bad = b.clone();
        bad[4] = 9;
        assert!(matches!(CalibrationSet::from_bytes(&bad), Err(CalibError::UnsupportedVersion(9))));
        assert!(matches!(CalibrationSet::from_bytes(&b[..b.len() - 1]), Err(CalibError::Truncated(_))));
        let mut nan = sample();
        nan.x.set(1, 1, f64::NAN);
        assert!(matches!(CalibrationSet::from_bytes(&nan.to_bytes()), Err(CalibError::NonFinite { .. })));
    }

    #[test]
    fn gradient_samples_regroup() {
        let s = sample().gradient_samples();
        assert_eq!(s.len(), 3);
        assert_eq!(s[2].act[0], vec![0.0, 0.5, 1.0, 1.5]);
        assert_eq!(s[1].cls.as_ref().unwrap()[0], vec![1.0, 0.0, -1.0, -2.0]);
    }
}
