use aq_core::quantcore::{quant_mse, quantize_rtn, Codebook, QuantType};
use aq_core::scaleopt::{block_objective, optimize_block, optimize_tensor, ImportanceMode, ScaleOptConfig};
use aq_core::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};

fn sym(b: u8, bs: usize) -> QuantType {
    QuantType::new(b, Codebook::UniformSymmetric, bs, 0).unwrap()
}

#[test]
fn descent_convergence_and_local_optimality() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let cfg = ScaleOptConfig::default();
    let mut converged = 0;
    let total = 1000;
    for n in 0..total {
        let q = sym([2, 3, 4][n % 3], 32);
        let w: Vec<f64> = (0..32).map(|_| rng.sample(StandardNormal)).collect();
        let omega: Vec<f64> = (0..32).map(|_| rng.sample::<f64, _>(Exp1)).collect();
        let r = optimize_block(&w, &omega, &q, None, &cfg);
        assert!(r.trace.windows(2).all(|p| p[1] <= p[0]), "trace rose: {:?}", r.trace);
        if r.converged && r.iterations <= 20 {
            converged += 1;
        }
        let phi = block_objective(&w, &r.codes, r.scale, 0, &omega);
        for f in [0.99, 1.01] {
            assert!(block_objective(&w, &r.codes, r.scale * f, 0, &omega) >= phi);
        }
    }
    assert!(converged * 100 >= 99 * total, "{converged}/{total}");
}

#[test]
fn uniform_importance_never_worse_than_rtn() {
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    for b in [2u8, 3, 4] {
        for _ in 0..200 {
            let w: Vec<f64> = (0..32).map(|_| rng.sample(StandardNormal)).collect();
            let q = sym(b, 32);
            let (s, _) = aq_core::quantcore::rtn_block_params(&w, &q);
            let codes = aq_core::scaleopt::assign_codes(&w, s, 0, &q);
            let rtn_phi = block_objective(&w, &codes, s, 0, &[1.0; 32]);
            let r = optimize_block(&w, &[1.0; 32], &q, None, &ScaleOptConfig::default());
            assert!(r.objective() <= rtn_phi);
        }
    }
}

#[test]
fn zero_importance_elements_are_ignored() {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let q = sym(3, 16);
    for _ in 0..100 {
        let w: Vec<f64> = (0..16).map(|_| rng.sample(StandardNormal)).collect();
        let omega: Vec<f64> = (0..16).map(|i| if i % 3 == 0 { 0.0 } else { rng.gen_range(0.1..2.0) }).collect();
        let mut w2 = w.clone();
        for i in (0..16).step_by(3) {
            w2[i] = rng.gen_range(-50.0..50.0);
        }
        let cfg = ScaleOptConfig::default();
        let a = optimize_block(&w, &omega, &q, None, &cfg);
        let b = optimize_block(&w2, &omega, &q, None, &cfg);
        assert_eq!(a.scale.to_bits(), b.scale.to_bits());
        for i in (0..16).filter(|i| i % 3 != 0) {
            assert_eq!(a.codes[i], b.codes[i]);
        }
    }
}

#[test]
fn tensor_level_dominates_rtn_and_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(34);
    let w = Matrix::from_fn(24, 40, |_, _| rng.sample::<f64, _>(StandardNormal));
    let fisher: Vec<f64> = (0..w.len()).map(|_| rng.sample::<f64, _>(Exp1)).collect();
    for mode in [ImportanceMode::Uniform, ImportanceMode::Magnitude, ImportanceMode::FisherMagnitude] {
        for s in [0usize, 8] {
            let q = QuantType::new(3, Codebook::UniformSymmetric, 32, s).unwrap();
            let cfg = ScaleOptConfig { max_iters: 1, importance_mode: mode, ..Default::default() };
            let (qt, rep) = optimize_tensor("1.up", &w, Some(&fisher), q, &cfg).unwrap();
            assert!(rep.weighted_error <= rep.rtn_weighted_error);
            let (again, _) = optimize_tensor("1.up", &w, Some(&fisher), q, &cfg).unwrap();
            assert_eq!(qt, again);
        }
    }
    // Plain error, uniform weighting, at full scale precision.
    let q = sym(3, 32);
    let cfg = ScaleOptConfig { importance_mode: ImportanceMode::Uniform, ..Default::default() };
    let (qt, _) = optimize_tensor("1.up", &w, None, q, &cfg).unwrap();
    let rtn = quantize_rtn("1.up", &w, q).unwrap();
    assert!(quant_mse(&w, &qt, None).unwrap() <= quant_mse(&w, &rtn, None).unwrap());
}

#[test]
fn zero_fisher_falls_back_to_magnitude() {
    let mut rng = ChaCha8Rng::seed_from_u64(35);
    let w = Matrix::from_fn(8, 16, |_, _| rng.sample::<f64, _>(StandardNormal));
    let q = sym(3, 32);
    let zero = vec![0.0; w.len()];
    let (a, rep) = optimize_tensor("1.up", &w, Some(&zero), q, &ScaleOptConfig::default()).unwrap();
    assert_eq!(rep.magnitude_fallback_blocks, rep.blocks);
    let mag = ScaleOptConfig { importance_mode: ImportanceMode::Magnitude, ..Default::default() };
    let (b, _) = optimize_tensor("1.up", &w, None, q, &mag).unwrap();
    assert_eq!(a, b);
}

#[test]
fn f32_blocks_descend() {
    let mut rng = ChaCha8Rng::seed_from_u64(36);
    for _ in 0..100 {
        let w: Vec<f32> = (0..32).map(|_| rng.sample(StandardNormal)).collect();
        let r = optimize_block(&w, &[1.0f32; 32], &sym(2, 32), None, &ScaleOptConfig::default());
        assert!(r.trace.windows(2).all(|p| p[1] <= p[0]));
    }
}

#[test]
fn asymmetric_blocks_descend() {
    let mut rng = ChaCha8Rng::seed_from_u64(37);
    let q = QuantType::new(3, Codebook::UniformAsymmetric, 32, 0).unwrap();
    for _ in 0..200 {
        let w: Vec<f64> = (0..32).map(|_| rng.sample::<f64, _>(StandardNormal) + 0.5).collect();
        let omega: Vec<f64> = (0..32).map(|_| rng.sample::<f64, _>(Exp1)).collect();
        let r = optimize_block(&w, &omega, &q, None, &ScaleOptConfig::default());
        assert!(r.trace.windows(2).all(|p| p[1] <= p[0]));
        assert!(q.contains_code(r.zero));
    }
}
