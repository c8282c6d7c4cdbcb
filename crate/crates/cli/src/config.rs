//! Pipeline configuration (TOML). Every field has a default equal to the
//! corresponding module default, so an empty file runs the canonical pipeline.

use std::path::{Path, PathBuf};

use aq_core::allocator::OverheadModel;
use aq_core::calibfile::ActionLoss;
use aq_core::quantcore::{Codebook, QuantType};
use aq_core::scaleopt::ScaleOptConfig;
use aq_core::sensitivity::SensitivityConfig;
use aq_harness::{PolicyArch, QuantizeConfig, ReachTask, TrainConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{at, CliError, ErrorClass};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub policy: PathBuf,
    pub calibration: PathBuf,
    pub sensitivity: PathBuf,
    pub assignment: PathBuf,
    /// Scale-searched tensors before provenance metadata is attached.
    pub quantized: PathBuf,
    pub pack: PathBuf,
    pub report: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            policy: "policy.aqts".into(),
            calibration: "calibration.aqcb".into(),
            sensitivity: "sensitivity.json".into(),
            assignment: "assignment.json".into(),
            quantized: "quantized.aqpk".into(),
            pack: "model.aqpk".into(),
            report: "report.json".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationSection {
    pub samples: usize,
    pub action_loss: ActionLoss,
}

impl Default for CalibrationSection {
    fn default() -> Self {
        Self { samples: 60, action_loss: ActionLoss::Mse }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuantizeSection {
    /// Target average bits per weight over the backbone.
    pub budget: f64,
    pub amf_alpha: f64,
    /// Bit widths of the type menu; every type shares the geometry below.
    pub bits: Vec<u8>,
    pub codebook: Codebook,
    pub block_size: usize,
    pub superblock_size: usize,
    pub overhead: OverheadModel,
    pub scaleopt: ScaleOptConfig,
}

impl Default for QuantizeSection {
    fn default() -> Self {
        let q = QuantizeConfig::default();
        let t = q.menu[0];
        Self {
            budget: q.budget,
            amf_alpha: q.amf_alpha,
            bits: q.menu.iter().map(QuantType::bit_width).collect(),
            codebook: t.codebook(),
            block_size: t.block_size(),
            superblock_size: t.superblock_size(),
            overhead: q.overhead,
            scaleopt: q.scaleopt,
        }
    }
}

impl QuantizeSection {
    pub fn menu(&self) -> Result<Vec<QuantType>, CliError> {
        let mut bits = self.bits.clone();
        bits.sort_unstable();
        bits.dedup();
        if bits.is_empty() {
            return Err(CliError::config("config", "quantize.bits is empty"));
        }
        bits.iter()
            .map(|&b| QuantType::new(b, self.codebook, self.block_size, self.superblock_size))
            .collect::<Result<_, _>>()
            .map_err(at("config"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub episodes: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self { episodes: 200 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblateSection {
    /// Number of ladder repetitions, each with its own calibration set and
    /// evaluation episodes.
    pub runs: usize,
}

impl Default for AblateSection {
    fn default() -> Self {
        Self { runs: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Master seed; stages draw from named substreams of it.
    pub seed: u64,
    pub paths: Paths,
    pub task: ReachTask,
    pub arch: PolicyArch,
    pub train: TrainConfig,
    pub calibration: CalibrationSection,
    pub sensitivity: SensitivityConfig,
    pub quantize: QuantizeSection,
    pub eval: EvalSection,
    pub ablate: AblateSection,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            paths: Paths::default(),
            task: ReachTask::default(),
            arch: PolicyArch::default(),
            train: TrainConfig::default(),
            calibration: CalibrationSection::default(),
            sensitivity: SensitivityConfig::default(),
            quantize: QuantizeSection::default(),
            eval: EvalSection::default(),
            ablate: AblateSection::default(),
        }
    }
}

/// A parsed configuration and the directory its relative paths resolve
/// against.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub config: PipelineConfig,
    pub base: PathBuf,
}

impl Loaded {
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::config("config", e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Reads a config file; without one, defaults with paths relative to the
    /// working directory.
    pub fn load(path: Option<&Path>) -> Result<Loaded, CliError> {
        let Some(path) = path else {
            return Ok(Loaded { config: Self::default(), base: PathBuf::from(".") });
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::new(ErrorClass::Io, "config", format!("{}: {e}", path.display())))?;
        let config = Self::from_toml(&text)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let base = if base.as_os_str().is_empty() { PathBuf::from(".") } else { base };
        Ok(Loaded { config, base })
    }

    pub fn quantize_config(&self) -> Result<QuantizeConfig, CliError> {
        Ok(QuantizeConfig {
            menu: self.quantize.menu()?,
            budget: self.quantize.budget,
            overhead: self.quantize.overhead,
            sensitivity: self.sensitivity,
            amf_alpha: self.quantize.amf_alpha,
            scaleopt: self.quantize.scaleopt,
        })
    }

    /// Checks values that do not depend on files.
    pub fn validate(&self) -> Result<(), CliError> {
        let cfg = |m: String| CliError::config("config", m);
        self.task.validate().map_err(|e| cfg(e.to_string()))?;
        self.arch.validate().map_err(|e| cfg(e.to_string()))?;
        self.sensitivity.validate().map_err(|e| cfg(e.to_string()))?;
        self.quantize.scaleopt.validate().map_err(|e| cfg(e.to_string()))?;
        let q = &self.quantize;
        if !(0.0..=1.0).contains(&q.amf_alpha) {
            return Err(cfg(format!("quantize.amf_alpha must lie in [0, 1], got {}", q.amf_alpha)));
        }
        let menu = q.menu()?;
        let cheapest = menu.iter().map(|t| q.overhead.effective_bpw(t)).fold(f64::INFINITY, f64::min);
        if !(q.budget.is_finite() && q.budget >= cheapest) {
            return Err(cfg(format!("quantize.budget {} is below the cheapest menu type ({cheapest} bpw)", q.budget)));
        }
        if self.calibration.samples < 2 {
            return Err(cfg(format!("calibration.samples must be >= 2, got {}", self.calibration.samples)));
        }
        if self.eval.episodes == 0 || self.ablate.runs == 0 {
            return Err(cfg("eval.episodes and ablate.runs must be positive".into()));
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(serde_json::to_vec(self).expect("config serializes")))
    }
}

/// Seed of a named substream of the master seed.
pub fn substream_seed(master: u64, name: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update(name.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_matches_module_defaults() {
        let c = PipelineConfig::from_toml("").unwrap();
        assert_eq!(c, PipelineConfig::default());
        assert_eq!(c.quantize_config().unwrap(), QuantizeConfig::default());
        assert_eq!(c.train, TrainConfig::default());
        assert_eq!(c.task, ReachTask::default());
        assert_eq!(c.arch, PolicyArch::default());
        assert_eq!(c.sensitivity, SensitivityConfig::default());
        c.validate().unwrap();
    }

    #[test]
    fn printed_config_parses_back() {
        let mut c = PipelineConfig::default();
        c.sensitivity.kernel = aq_core::hsic::KernelSpec::Fixed(0.25);
        c.quantize.budget = 2.5;
        assert_eq!(PipelineConfig::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(PipelineConfig::from_toml("sead = 3").is_err());
        assert!(PipelineConfig::from_toml("[quantize]\nbudjet = 3").is_err());
    }

    #[test]
    fn infeasible_budget_is_a_config_error() {
        let c = PipelineConfig::from_toml("[quantize]\nbudget = 1.5").unwrap();
        assert_eq!(c.validate().unwrap_err().class, ErrorClass::Config);
        let c = PipelineConfig::from_toml("[quantize]\nbits = [2, 7]").unwrap();
        assert!(c.validate().is_err());
    }

    #[test]
    fn substreams_differ() {
        let a = substream_seed(42, "train");
        assert_eq!(a, substream_seed(42, "train"));
        assert_ne!(a, substream_seed(42, "calib"));
        assert_ne!(a, substream_seed(43, "train"));
    }
}
