//! Pipeline stages. Each stage reads its inputs from the files named in the
//! config and writes one artifact, so `run` and the individual subcommands
//! execute the same code on the same bytes.

use std::collections::BTreeMap;
use std::path::Path;

use aq_core::allocator::{brute_force_allocate, greedy_allocate, AllocationInstance, Assignment};
use aq_core::calibfile::{ActionLoss, CalibrationSet};
use aq_core::container::{model_memory_report, read_pack, write_pack, MemoryReport, PackFile};
use aq_core::quantcore::{Codebook, QuantType};
use aq_core::scaleopt::{ImportanceMode, TensorOptReport};
use aq_core::sensitivity::{build_table, SensitivityTable};
use aq_harness::checkpoint;
use aq_harness::quantize::{candidate_fisher, quantize_optimized};
use aq_harness::{
    ablation_over_seeds, gen_calibration, rollout_success, train_policy, AblationConfig, AblationTable, ToyPolicy,
    TrainReport,
};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{substream_seed, Loaded};
use crate::error::{at, CliError, ErrorClass};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// A file written by a stage, named as in the config.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    pub path: String,
    pub sha256: String,
}

fn write_artifact(l: &Loaded, stage: &'static str, rel: &Path, bytes: &[u8]) -> Result<Artifact, CliError> {
    let path = l.resolve(rel);
    std::fs::write(&path, bytes)
        .map_err(|e| CliError::new(ErrorClass::Io, stage, format!("{}: {e}", path.display())))?;
    Ok(Artifact { path: rel.display().to_string(), sha256: sha256_hex(bytes) })
}

/// Reads a stage input. A missing file is a configuration error: the config
/// names a file that the previous stage has not produced.
fn read_input(l: &Loaded, stage: &'static str, key: &str, rel: &Path) -> Result<Vec<u8>, CliError> {
    let path = l.resolve(rel);
    if !path.exists() {
        return Err(CliError::config(stage, format!("paths.{key}: {} does not exist", path.display())));
    }
    std::fs::read(&path).map_err(|e| CliError::new(ErrorClass::Io, stage, format!("{}: {e}", path.display())))
}

fn to_json<T: Serialize>(v: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(v).expect("serializable");
    out.push(b'\n');
    out
}

fn from_json<T: DeserializeOwned>(stage: &'static str, bytes: &[u8]) -> Result<T, CliError> {
    serde_json::from_slice(bytes).map_err(at(stage))
}

fn load_policy(l: &Loaded, stage: &'static str) -> Result<(ToyPolicy, String), CliError> {
    let bytes = read_input(l, stage, "policy", &l.config.paths.policy)?;
    let policy = checkpoint::from_bytes(&bytes).map_err(at(stage))?;
    Ok((policy, sha256_hex(&bytes)))
}

fn load_calibration(l: &Loaded, stage: &'static str) -> Result<(CalibrationSet, String), CliError> {
    let bytes = read_input(l, stage, "calibration", &l.config.paths.calibration)?;
    let calib = CalibrationSet::from_bytes(&bytes).map_err(at(stage))?;
    Ok((calib, sha256_hex(&bytes)))
}

fn load_table(l: &Loaded, stage: &'static str) -> Result<(SensitivityTable, String), CliError> {
    let bytes = read_input(l, stage, "sensitivity", &l.config.paths.sensitivity)?;
    Ok((from_json(stage, &bytes)?, sha256_hex(&bytes)))
}

fn load_assignment(l: &Loaded, stage: &'static str) -> Result<(Assignment, String), CliError> {
    let bytes = read_input(l, stage, "assignment", &l.config.paths.assignment)?;
    let a: Assignment = from_json(stage, &bytes)?;
    // Deserialization bypasses the type constructor, so re-check every type.
    for t in &a.tensors {
        let q = &t.qtype;
        let checked =
            QuantType::new(q.bit_width(), q.codebook(), q.block_size(), q.superblock_size()).map_err(at(stage))?;
        if checked != *q {
            return Err(CliError::data(stage, format!("invalid quantization type for {}", t.name)));
        }
    }
    Ok((a, sha256_hex(&bytes)))
}

fn load_pack(l: &Loaded, stage: &'static str, key: &str, rel: &Path) -> Result<(PackFile, Vec<u8>), CliError> {
    let bytes = read_input(l, stage, key, rel)?;
    let pack = read_pack(&bytes).map_err(at(stage))?;
    Ok((pack, bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub seed: u64,
    pub policy: Artifact,
    pub report: TrainReport,
}

pub fn train(l: &Loaded) -> Result<TrainSummary, CliError> {
    const STAGE: &str = "train";
    let c = &l.config;
    let seed = substream_seed(c.seed, "train");
    let (policy, report) = train_policy(&c.task, c.arch, &c.train, seed).map_err(at(STAGE))?;
    let bytes = checkpoint::to_bytes(&policy).map_err(at(STAGE))?;
    let policy = write_artifact(l, STAGE, &c.paths.policy, &bytes)?;
    Ok(TrainSummary { seed, policy, report })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrateSummary {
    pub seed: u64,
    pub samples: usize,
    pub action_loss: ActionLoss,
    pub policy_sha256: String,
    pub calibration: Artifact,
}

pub fn calibrate(l: &Loaded) -> Result<CalibrateSummary, CliError> {
    const STAGE: &str = "calibrate";
    let c = &l.config;
    let (policy, policy_sha256) = load_policy(l, STAGE)?;
    let seed = substream_seed(c.seed, "calib");
    let set =
        gen_calibration(&policy, &c.task, c.calibration.samples, seed, c.calibration.action_loss).map_err(at(STAGE))?;
    let calibration = write_artifact(l, STAGE, &c.paths.calibration, &set.to_bytes())?;
    Ok(CalibrateSummary { seed, samples: set.k(), action_loss: set.action_loss, policy_sha256, calibration })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivitySummary {
    pub table: SensitivityTable,
    pub output: Artifact,
}

pub fn sensitivity(l: &Loaded) -> Result<SensitivitySummary, CliError> {
    const STAGE: &str = "sensitivity";
    let (calib, _) = load_calibration(l, STAGE)?;
    let table = build_table(&calib, &l.config.sensitivity).map_err(at(STAGE))?;
    let output = write_artifact(l, STAGE, &l.config.paths.sensitivity, &to_json(&table))?;
    Ok(SensitivitySummary { table, output })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocateSummary {
    pub exact: bool,
    pub budget: f64,
    pub assignment: Assignment,
    pub output: Artifact,
}

pub fn allocate(l: &Loaded, exact: bool) -> Result<AllocateSummary, CliError> {
    const STAGE: &str = "allocate";
    let c = &l.config;
    let (table, _) = load_table(l, STAGE)?;
    let instance = AllocationInstance::from_table(&table, c.quantize.menu()?, c.quantize.budget, c.quantize.overhead);
    let assignment =
        if exact { brute_force_allocate(&instance) } else { greedy_allocate(&instance) }.map_err(at(STAGE))?;
    let output = write_artifact(l, STAGE, &c.paths.assignment, &to_json(&assignment))?;
    Ok(AllocateSummary { exact, budget: c.quantize.budget, assignment, output })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorSearch {
    pub name: String,
    pub bit_width: u8,
    pub report: TensorOptReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizeSummary {
    pub importance_mode: ImportanceMode,
    pub amf_alpha: f64,
    pub tensors: Vec<TensorSearch>,
    pub output: Artifact,
}

pub fn quantize(l: &Loaded) -> Result<QuantizeSummary, CliError> {
    const STAGE: &str = "quantize";
    let c = &l.config;
    let (policy, _) = load_policy(l, STAGE)?;
    let (calib, _) = load_calibration(l, STAGE)?;
    let (assignment, _) = load_assignment(l, STAGE)?;
    for t in &assignment.tensors {
        let w =
            policy.param(&t.name).ok_or_else(|| CliError::data(STAGE, format!("{} is not a policy tensor", t.name)))?;
        if w.len() != t.numel {
            return Err(CliError::data(
                STAGE,
                format!("{}: assignment has {} elements, policy has {}", t.name, t.numel, w.len()),
            ));
        }
    }
    let mode = c.quantize.scaleopt.importance_mode;
    let fisher = match mode {
        ImportanceMode::FisherMagnitude => {
            Some(candidate_fisher(&policy, &calib, c.quantize.amf_alpha).map_err(at(STAGE))?)
        }
        _ => None,
    };
    let (tensors, reports) =
        quantize_optimized(&policy, &assignment, fisher.as_deref(), &c.quantize.scaleopt).map_err(at(STAGE))?;
    let meta = BTreeMap::from([("stage".to_string(), "quantize".to_string())]);
    let bytes = write_pack(&tensors, &meta).map_err(at(STAGE))?;
    let output = write_artifact(l, STAGE, &c.paths.quantized, &bytes)?;
    let tensors = tensors
        .iter()
        .zip(reports)
        .map(|(t, report)| TensorSearch { name: t.name.clone(), bit_width: t.qtype.bit_width(), report })
        .collect();
    Ok(QuantizeSummary { importance_mode: mode, amf_alpha: c.quantize.amf_alpha, tensors, output })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PackSummary {
    pub metadata: BTreeMap<String, String>,
    pub memory: MemoryReport,
    pub output: Artifact,
}

/// Attaches provenance metadata to the quantized tensors and writes the
/// final pack.
pub fn pack(l: &Loaded) -> Result<PackSummary, CliError> {
    const STAGE: &str = "pack";
    let c = &l.config;
    let (quantized, _) = load_pack(l, STAGE, "quantized", &c.paths.quantized)?;
    let (_, policy_sha) = load_policy(l, STAGE)?;
    let (calib, calib_sha) = load_calibration(l, STAGE)?;
    let (table, table_sha) = load_table(l, STAGE)?;
    let (assignment, assignment_sha) = load_assignment(l, STAGE)?;
    let action_loss = match calib.action_loss {
        ActionLoss::L1 => "l1",
        _ => "mse",
    };
    let metadata = BTreeMap::from([
        ("achieved_bpw".to_string(), assignment.achieved_bpw.to_string()),
        ("action_loss".to_string(), action_loss.to_string()),
        ("amf_alpha".to_string(), c.quantize.amf_alpha.to_string()),
        ("assignment.sha256".to_string(), assignment_sha),
        ("budget".to_string(), c.quantize.budget.to_string()),
        ("calibration.sha256".to_string(), calib_sha),
        ("config.sha256".to_string(), c.hash()),
        ("policy.sha256".to_string(), policy_sha),
        ("sensitivity.config_hash".to_string(), table.config_hash.clone()),
        ("sensitivity.sha256".to_string(), table_sha),
    ]);
    let bytes = write_pack(&quantized.tensors, &metadata).map_err(at(STAGE))?;
    let output = write_artifact(l, STAGE, &c.paths.pack, &bytes)?;
    let memory = model_memory_report(&quantized, bytes.len() as u64);
    Ok(PackSummary { metadata, memory, output })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub bit_width: u8,
    pub codebook: Codebook,
    pub block_size: usize,
    pub superblock_size: usize,
    pub blocks: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InspectSummary {
    pub path: String,
    pub sha256: String,
    pub metadata: BTreeMap<String, String>,
    pub tensors: Vec<TensorInfo>,
    pub memory: MemoryReport,
}

pub fn inspect(l: &Loaded, path: Option<&Path>) -> Result<InspectSummary, CliError> {
    const STAGE: &str = "inspect";
    let rel = path.unwrap_or(&l.config.paths.pack);
    let (pack, bytes) = load_pack(l, STAGE, "pack", rel)?;
    let tensors = pack
        .tensors
        .iter()
        .map(|t| TensorInfo {
            name: t.name.clone(),
            rows: t.rows,
            cols: t.cols,
            bit_width: t.qtype.bit_width(),
            codebook: t.qtype.codebook(),
            block_size: t.qtype.block_size(),
            superblock_size: t.qtype.superblock_size(),
            blocks: t.block_count(),
        })
        .collect();
    Ok(InspectSummary {
        path: rel.display().to_string(),
        sha256: sha256_hex(&bytes),
        metadata: pack.metadata.clone(),
        tensors,
        memory: model_memory_report(&pack, bytes.len() as u64),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub seed: u64,
    pub episodes: usize,
    pub pack_sha256: String,
    pub full_precision: f64,
    pub quantized: f64,
    /// `quantized - full_precision` in percentage points.
    pub delta_points: f64,
}

pub fn eval(l: &Loaded, pack_path: Option<&Path>) -> Result<EvalSummary, CliError> {
    const STAGE: &str = "eval";
    let c = &l.config;
    let (policy, _) = load_policy(l, STAGE)?;
    let (pack, bytes) = load_pack(l, STAGE, "pack", pack_path.unwrap_or(&c.paths.pack))?;
    let q = policy.with_quantized(&pack.tensors).map_err(at(STAGE))?;
    let seed = substream_seed(c.seed, "eval");
    let full_precision = rollout_success(&policy, &c.task, c.eval.episodes, seed);
    let quantized = rollout_success(&q, &c.task, c.eval.episodes, seed);
    Ok(EvalSummary {
        seed,
        episodes: c.eval.episodes,
        pack_sha256: sha256_hex(&bytes),
        full_precision,
        quantized,
        delta_points: 100.0 * (quantized - full_precision),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblateSummary {
    pub seeds: Vec<u64>,
    pub table: AblationTable,
    /// Mean success per rung, in rung order.
    pub mean_success: Vec<f64>,
}

pub fn ablate(l: &Loaded, budget: Option<f64>, csv: Option<&Path>) -> Result<AblateSummary, CliError> {
    const STAGE: &str = "ablate";
    let c = &l.config;
    let (policy, _) = load_policy(l, STAGE)?;
    let mut quantize = c.quantize_config()?;
    if let Some(b) = budget {
        quantize.budget = b;
    }
    let cfg = AblationConfig {
        quantize,
        calib_samples: c.calibration.samples,
        action_loss: c.calibration.action_loss,
        episodes: c.eval.episodes,
    };
    let seeds: Vec<u64> = (0..c.ablate.runs).map(|i| substream_seed(c.seed, &format!("ablate{i}"))).collect();
    let table = ablation_over_seeds(&policy, &c.task, &cfg, &seeds).map_err(at(STAGE))?;
    if let Some(p) = csv {
        let mut buf = Vec::new();
        table.write_csv(&mut buf).map_err(at(STAGE))?;
        write_artifact(l, STAGE, p, &buf)?;
    }
    let mean_success = (1..=aq_harness::ablation::RUNGS.len()).map(|r| table.mean_success(r)).collect();
    Ok(AblateSummary { seeds, table, mean_success })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Seeds {
    pub master: u64,
    pub calib: u64,
    pub eval: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config_sha256: String,
    pub seeds: Seeds,
    pub calibrate: CalibrateSummary,
    pub sensitivity: SensitivitySummary,
    pub allocate: AllocateSummary,
    pub quantize: QuantizeSummary,
    pub pack: PackSummary,
    pub eval: EvalSummary,
}

/// Calibrate, score, allocate, quantize, pack and evaluate, then write the
/// JSON report. A failing stage reports the artifacts already written so the
/// pipeline can be resumed from the failed stage.
pub fn run(l: &Loaded) -> Result<RunReport, CliError> {
    let c = &l.config;
    let mut done: Vec<Artifact> = Vec::new();
    let resume = |e: CliError, done: &[Artifact]| {
        if done.is_empty() {
            return e;
        }
        let list: Vec<String> = done.iter().map(|a| format!("{}={}", a.path, a.sha256)).collect();
        CliError { message: format!("{} (completed artifacts: {})", e.message, list.join(", ")), ..e }
    };
    let calibrate = calibrate(l).map_err(|e| resume(e, &done))?;
    done.push(calibrate.calibration.clone());
    let sensitivity = sensitivity(l).map_err(|e| resume(e, &done))?;
    done.push(sensitivity.output.clone());
    let allocate = allocate(l, false).map_err(|e| resume(e, &done))?;
    done.push(allocate.output.clone());
    let quantize = quantize(l).map_err(|e| resume(e, &done))?;
    done.push(quantize.output.clone());
    let pack = pack(l).map_err(|e| resume(e, &done))?;
    done.push(pack.output.clone());
    let eval = eval(l, None).map_err(|e| resume(e, &done))?;
    let report = RunReport {
        config_sha256: c.hash(),
        seeds: Seeds { master: c.seed, calib: calibrate.seed, eval: eval.seed },
        calibrate,
        sensitivity,
        allocate,
        quantize,
        pack,
        eval,
    };
    write_artifact(l, "run", &c.paths.report, &to_json(&report)).map_err(|e| resume(e, &done))?;
    Ok(report)
}
