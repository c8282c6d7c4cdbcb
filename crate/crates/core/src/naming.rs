//! Tensor identifiers of the form `"<layer>.<module>"`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Module kinds inside one layer, in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModuleTag {
    Q,
    K,
    V,
    O,
    Up,
    Down,
    Gate,
}

impl ModuleTag {
    pub const ALL: [ModuleTag; 7] =
        [ModuleTag::Q, ModuleTag::K, ModuleTag::V, ModuleTag::O, ModuleTag::Up, ModuleTag::Down, ModuleTag::Gate];

    pub fn as_str(&self) -> &'static str {
        match self {
            ModuleTag::Q => "q",
            ModuleTag::K => "k",
            ModuleTag::V => "v",
            ModuleTag::O => "o",
            ModuleTag::Up => "up",
            ModuleTag::Down => "down",
            ModuleTag::Gate => "gate",
        }
    }
}

impl fmt::Display for ModuleTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModuleTag {
    type Err = NameError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ModuleTag::ALL.into_iter().find(|m| m.as_str().eq_ignore_ascii_case(s)).ok_or_else(|| NameError(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("tensor name {0:?} is not of the form <layer>.<module>")]
pub struct NameError(pub String);

/// Layer index (from 1) and module of a quantization candidate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TensorId {
    pub layer: usize,
    pub module: ModuleTag,
}

impl TensorId {
    pub fn new(layer: usize, module: ModuleTag) -> Self {
        Self { layer, module }
    }
}

impl fmt::Display for TensorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.layer, self.module)
    }
}

impl FromStr for TensorId {
    type Err = NameError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || NameError(s.to_string());
        let (layer, module) = s.split_once('.').ok_or_else(err)?;
        let layer: usize = layer.parse().map_err(|_| err())?;
        if layer == 0 {
            return Err(err());
        }
        Ok(Self { layer, module: module.parse().map_err(|_| err())? })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_order() {
        let a: TensorId = "2.down".parse().unwrap();
        let b: TensorId = "2.up".parse().unwrap();
        let c: TensorId = "10.q".parse().unwrap();
        assert!(b < a && a < c);
        assert_eq!(a.to_string(), "2.down");
        assert!("0.up".parse::<TensorId>().is_err());
        assert!("up".parse::<TensorId>().is_err());
        assert!("1.mlp".parse::<TensorId>().is_err());
    }
}
