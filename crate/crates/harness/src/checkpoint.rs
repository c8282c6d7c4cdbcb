//! `AQTS` policy checkpoints: architecture header plus flat named f64 tensors.

use std::path::Path;

use aq_core::Matrix;

use crate::policy::{Activation, NamedTensor, PolicyArch, ToyPolicy};
use crate::HarnessError;

pub const MAGIC: &[u8; 4] = b"AQTS";
pub const VERSION: u16 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u16),
    #[error("truncated while reading {0}")]
    Truncated(&'static str),
    #[error("unknown activation tag {0}")]
    UnknownActivation(u8),
    #[error("tensor name is not UTF-8")]
    BadUtf8,
    #[error("{0} trailing bytes after last tensor")]
    TrailingBytes(usize),
    #[error("{0} does not fit the on-disk field width")]
    Overflow(String),
}

struct Reader<'a> {
    buf: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], CheckpointError> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or(CheckpointError::Truncated(what))?;
        let s = &self.buf[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u8(&mut self, what: &'static str) -> Result<u8, CheckpointError> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &'static str) -> Result<u16, CheckpointError> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn f64(&mut self, what: &'static str) -> Result<f64, CheckpointError> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}

fn u32_field(v: usize, what: &str) -> Result<u32, CheckpointError> {
    u32::try_from(v).map_err(|_| CheckpointError::Overflow(what.to_string()))
}

pub fn to_bytes(policy: &ToyPolicy) -> Result<Vec<u8>, HarnessError> {
    policy.validate()?;
    let a = &policy.arch;
    let mut out = Vec::with_capacity(64 + 8 * policy.num_params());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(match a.activation {
        Activation::Tanh => 0,
        Activation::Relu => 1,
    });
    out.push(0);
    for (v, what) in [(a.input_dim, "input_dim"), (a.hidden, "hidden"), (a.layers, "layers"), (a.bins, "bins")] {
        out.extend_from_slice(&u32_field(v, what)?.to_le_bytes());
    }
    out.extend_from_slice(&a.a_max.to_le_bytes());
    out.extend_from_slice(&u32_field(policy.params.len(), "tensor count")?.to_le_bytes());
    for p in &policy.params {
        let name = p.name.as_bytes();
        let len = u16::try_from(name.len()).map_err(|_| CheckpointError::Overflow(format!("name {}", p.name)))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name);
        out.extend_from_slice(&u32_field(p.value.rows(), "rows")?.to_le_bytes());
        out.extend_from_slice(&u32_field(p.value.cols(), "cols")?.to_le_bytes());
        for v in p.value.as_slice() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn from_bytes(bytes: &[u8]) -> Result<ToyPolicy, HarnessError> {
    let mut r = Reader { buf: bytes, at: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(CheckpointError::BadMagic.into());
    }
    let version = r.u16("version")?;
    if version != VERSION {
        return Err(CheckpointError::UnsupportedVersion(version).into());
    }
    let activation = match r.u8("activation")? {
        0 => Activation::Tanh,
        1 => Activation::Relu,
        t => return Err(CheckpointError::UnknownActivation(t).into()),
    };
    r.u8("reserved")?;
    let input_dim = r.u32("input_dim")? as usize;
    let hidden = r.u32("hidden")? as usize;
    let layers = r.u32("layers")? as usize;
    let bins = r.u32("bins")? as usize;
    let a_max = r.f64("a_max")?;
    let arch = PolicyArch { input_dim, hidden, layers, activation, bins, a_max };
    arch.validate()?;
    let count = r.u32("tensor count")? as usize;
    if arch.tensor_count() != Some(count) {
        return Err(HarnessError::Shape(format!(
            "architecture expects {:?} tensors, header says {count}",
            arch.tensor_count()
        )));
    }
    let mut params = Vec::new();
    for _ in 0..count {
        let len = r.u16("name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "name")?).map_err(|_| CheckpointError::BadUtf8)?.to_string();
        let rows = r.u32("rows")? as usize;
        let cols = r.u32("cols")? as usize;
        let n = rows.checked_mul(cols).ok_or(CheckpointError::Truncated("tensor data"))?;
        let raw = r.take(n.checked_mul(8).ok_or(CheckpointError::Truncated("tensor data"))?, "tensor data")?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        let value = Matrix::from_vec(rows, cols, data).map_err(|e| HarnessError::Shape(e.to_string()))?;
        params.push(NamedTensor { name, value });
    }
    if r.at != bytes.len() {
        return Err(CheckpointError::TrailingBytes(bytes.len() - r.at).into());
    }
    let policy = ToyPolicy { arch, params };
    policy.validate()?;
    Ok(policy)
}

pub fn save_checkpoint(policy: &ToyPolicy, path: impl AsRef<Path>) -> Result<(), HarnessError> {
    std::fs::write(path, to_bytes(policy)?).map_err(|e| CheckpointError::Io(e).into())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ToyPolicy, HarnessError> {
    let bytes = std::fs::read(path).map_err(CheckpointError::Io)?;
    from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let p = ToyPolicy::init(PolicyArch { activation: Activation::Relu, ..Default::default() }, 4).unwrap();
        let bytes = to_bytes(&p).unwrap();
        assert_eq!(&bytes[..4], MAGIC);
        assert_eq!(from_bytes(&bytes).unwrap(), p);
    }

    #[test]
    fn corruption_is_named() {
        let p = ToyPolicy::init(PolicyArch { hidden: 4, layers: 1, bins: 0, ..Default::default() }, 4).unwrap();
        let bytes = to_bytes(&p).unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(from_bytes(&bad), Err(HarnessError::Checkpoint(CheckpointError::BadMagic))));
        assert!(matches!(
            from_bytes(&bytes[..bytes.len() - 3]),
            Err(HarnessError::Checkpoint(CheckpointError::Truncated(_)))
        ));
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(from_bytes(&long), Err(HarnessError::Checkpoint(CheckpointError::TrailingBytes(1)))));
        for i in 0..bytes.len() {
            let mut m = bytes.clone();
            m[i] ^= 0x80;
            let _ = from_bytes(&m);
        }
    }
}
