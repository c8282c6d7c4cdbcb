use std::sync::OnceLock;

use aq_core::calibfile::{ActionLoss, CalibrationSet};
use aq_harness::calib::{calibration_states, record_sample};
use aq_harness::{gen_calibration, train_policy, HarnessError, PolicyArch, ReachTask, ToyPolicy, TrainConfig};

fn policy() -> &'static ToyPolicy {
    static CELL: OnceLock<ToyPolicy> = OnceLock::new();
    CELL.get_or_init(|| {
        train_policy(&ReachTask::default(), PolicyArch::default(), &TrainConfig::default(), 1).unwrap().0
    })
}

#[test]
fn default_set_is_reproducible() {
    let task = ReachTask::default();
    let a = gen_calibration(policy(), &task, 60, 42, ActionLoss::Mse).unwrap().to_bytes();
    let b = gen_calibration(policy(), &task, 60, 42, ActionLoss::Mse).unwrap().to_bytes();
    assert_eq!(a, b);
    let c = gen_calibration(policy(), &task, 60, 43, ActionLoss::Mse).unwrap().to_bytes();
    assert_ne!(a, c);
}

#[test]
fn stored_gradients_match_fresh_backward() {
    let task = ReachTask::default();
    let p = policy();
    let set = gen_calibration(p, &task, 60, 42, ActionLoss::Mse).unwrap();
    let read = CalibrationSet::from_bytes(&set.to_bytes()).unwrap();
    let states = calibration_states(p, &task, 60, 42);
    let candidates = p.arch.candidates();
    // The file stores 32-bit floats, so agreement is relative.
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-7 * b.abs().max(1e-30);
    for (k, obs) in states.iter().enumerate() {
        let rec = record_sample(p, obs, ActionLoss::Mse).unwrap();
        for (t, name) in candidates.iter().enumerate() {
            let g = read.grads.iter().find(|g| &g.name == name).unwrap();
            for (j, &fresh) in rec.g_act[t].iter().enumerate() {
                let stored = g.act.row(k)[j];
                assert!(close(stored, fresh), "{name} sample {k} [{j}]: {stored} vs {fresh}");
            }
            let cls = g.cls.as_ref().expect("categorical head present");
            for (j, &fresh) in rec.g_cls.as_ref().unwrap()[t].iter().enumerate() {
                assert!(close(cls.row(k)[j], fresh), "{name} cls sample {k} [{j}]");
            }
        }
    }
}

#[test]
fn set_has_every_candidate() {
    let set = gen_calibration(policy(), &ReachTask::default(), 8, 1, ActionLoss::L1).unwrap();
    assert_eq!(set.k(), 8);
    assert_eq!(set.x.cols(), policy().arch.hidden);
    assert_eq!(set.action_loss, ActionLoss::L1);
    let names: Vec<String> = set.z.iter().map(|t| t.name.clone()).collect();
    assert_eq!(names, policy().arch.candidates());
}

#[test]
fn too_few_samples_is_an_error() {
    assert!(matches!(
        gen_calibration(policy(), &ReachTask::default(), 1, 1, ActionLoss::Mse),
        Err(HarnessError::TooFewSamples(1))
    ));
}
