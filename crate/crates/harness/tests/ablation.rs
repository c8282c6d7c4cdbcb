use std::sync::OnceLock;

use aq_core::calibfile::ActionLoss;
use aq_core::quantcore::quantize_rtn;
use aq_harness::ablation::seed_pair;
use aq_harness::quantize::{allocate, uniform_instance};
use aq_harness::{
    ablation_over_seeds, gen_calibration, ladder_models, train_policy, AblationConfig, PolicyArch, QuantizeConfig,
    ReachTask, ToyPolicy, TrainConfig,
};

fn policy() -> &'static ToyPolicy {
    static CELL: OnceLock<ToyPolicy> = OnceLock::new();
    CELL.get_or_init(|| {
        train_policy(&ReachTask::default(), PolicyArch::default(), &TrainConfig::default(), 1).unwrap().0
    })
}

#[test]
fn rung_one_is_plain_rtn() {
    let p = policy();
    let q = QuantizeConfig { budget: 2.5, ..Default::default() };
    let calib = gen_calibration(p, &ReachTask::default(), 60, seed_pair(1).0, ActionLoss::Mse).unwrap();
    let rungs = ladder_models(p, &calib, &q).unwrap();
    assert_eq!(rungs.len(), 5);
    let uniform = allocate(&uniform_instance(p, &q).unwrap()).unwrap();
    assert_eq!(rungs[0].0, uniform);
    for (t, qt) in uniform.tensors.iter().zip(&rungs[0].1) {
        assert_eq!(qt, &quantize_rtn(t.name.clone(), p.param(&t.name).unwrap(), t.qtype).unwrap());
    }
    for r in &rungs {
        assert!(r.0.achieved_bpw <= 2.5 + 1e-12);
    }
}

#[test]
fn action_fisher_rung_does_not_raise_weighted_error() {
    let cfg = AblationConfig {
        quantize: QuantizeConfig { budget: 2.5, ..Default::default() },
        episodes: 50,
        ..Default::default()
    };
    let table = ablation_over_seeds(policy(), &ReachTask::default(), &cfg, &[1, 2, 3, 4, 5]).unwrap();
    for seed in 1..=5 {
        let err = |rung| table.rows.iter().find(|r| r.seed == seed && r.rung == rung).unwrap().weighted_error;
        assert!(err(3) <= err(2), "seed {seed}: {} > {}", err(3), err(2));
    }
    let mut csv = Vec::new();
    table.write_csv(&mut csv).unwrap();
    assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 1 + 25);
}

#[test]
fn ladder_is_deterministic() {
    let cfg = AblationConfig { episodes: 40, calib_samples: 16, ..Default::default() };
    let a = ablation_over_seeds(policy(), &ReachTask::default(), &cfg, &[7]).unwrap();
    let b = ablation_over_seeds(policy(), &ReachTask::default(), &cfg, &[7]).unwrap();
    assert_eq!(a, b);
}
