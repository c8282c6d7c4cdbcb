use std::sync::OnceLock;

use aq_core::allocator::{AllocationInstance, Assignment};
use aq_harness::quantize::quantize_rtn_assignment;
use aq_harness::quantize::{allocate, default_menu, uniform_instance, QuantizeConfig};
use aq_harness::task::{rollout_outcomes, OracleController, ZeroController};
use aq_harness::{
    load_checkpoint, rollout_success, save_checkpoint, train_policy, PolicyArch, ReachTask, ToyPolicy, TrainConfig,
    TrainReport,
};

fn trained() -> &'static (ToyPolicy, TrainReport) {
    static CELL: OnceLock<(ToyPolicy, TrainReport)> = OnceLock::new();
    CELL.get_or_init(|| train_policy(&ReachTask::default(), PolicyArch::default(), &TrainConfig::default(), 1).unwrap())
}

fn eight_bit(policy: &ToyPolicy) -> Assignment {
    let cfg = QuantizeConfig { budget: 8.0, ..Default::default() };
    let inst: AllocationInstance = uniform_instance(policy, &cfg).unwrap();
    allocate(&inst).unwrap()
}

#[test]
fn training_reaches_near_stationary_point() {
    let (_, report) = trained();
    eprintln!("{} steps, grad norm {:.3e} -> {:.3e}", report.steps_run, report.init_grad_norm, report.final_grad_norm);
    assert!(report.final_grad_norm * 10.0 <= report.init_grad_norm);
}

#[test]
fn trained_policy_solves_the_task() {
    let (policy, report) = trained();
    assert!(report.heldout_mse < 1e-3, "held-out mse {}", report.heldout_mse);
    let s = rollout_success(policy, &ReachTask::default(), 500, 11);
    assert!(s >= 0.95, "success {s}");
}

#[test]
fn eight_bit_rtn_is_lossless_in_practice() {
    let (policy, _) = trained();
    let task = ReachTask::default();
    let a = eight_bit(policy);
    assert!(a.tensors.iter().all(|t| t.qtype.bit_width() == 8));
    let q = policy.with_quantized(&quantize_rtn_assignment(policy, &a).unwrap()).unwrap();
    let fp = rollout_success(policy, &task, 500, 21);
    let qs = rollout_success(&q, &task, 500, 21);
    assert!((fp - qs).abs() < 0.02, "fp {fp} vs 8-bit {qs}");
}

#[test]
fn head_and_embedding_stay_bit_identical() {
    let (policy, _) = trained();
    let cfg = QuantizeConfig { budget: 2.0, menu: default_menu(), ..Default::default() };
    let a = allocate(&uniform_instance(policy, &cfg).unwrap()).unwrap();
    let q = policy.with_quantized(&quantize_rtn_assignment(policy, &a).unwrap()).unwrap();
    let candidates = policy.arch.candidates();
    for (orig, new) in policy.params.iter().zip(&q.params) {
        if candidates.contains(&orig.name) {
            assert_ne!(orig.value, new.value, "{} unchanged at 2 bits", orig.name);
        } else {
            assert_eq!(orig, new, "{} was modified", orig.name);
        }
    }
}

#[test]
fn reference_controllers() {
    let task = ReachTask::default();
    assert_eq!(rollout_success(&OracleController, &task, 300, 4), 1.0);
    assert_eq!(rollout_success(&ZeroController, &task, 300, 4), 0.0);
}

#[test]
fn rollouts_are_seeded_per_episode() {
    let (policy, _) = trained();
    let task = ReachTask::default();
    let a = rollout_outcomes(policy, &task, 64, 8);
    assert_eq!(a, rollout_outcomes(policy, &task, 64, 8));
    assert_eq!(&a[..32], &rollout_outcomes(policy, &task, 32, 8)[..]);
}

#[test]
fn checkpoint_file_round_trip() {
    let (policy, _) = trained();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("policy.aqts");
    save_checkpoint(policy, &path).unwrap();
    assert_eq!(&load_checkpoint(&path).unwrap(), policy);
}
