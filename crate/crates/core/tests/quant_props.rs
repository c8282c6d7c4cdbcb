use aq_core::quantcore::{dequantize, quant_mse, quantize_rtn, Codebook, QuantType};
use aq_core::Matrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn gaussian(seed: u64, rows: usize, cols: usize) -> Matrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Matrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

#[test]
fn error_shrinks_by_roughly_four_per_bit() {
    let menu = [2u8, 3, 4, 5, 6, 8];
    for seed in 0..3 {
        let w = gaussian(seed, 64, 64);
        for s in [0usize, 8] {
            for cb in [Codebook::UniformSymmetric, Codebook::UniformAsymmetric] {
                let mse = |b: u8| {
                    let q = QuantType::new(b, cb, 32, s).unwrap();
                    quant_mse(&w, &quantize_rtn("1.up", &w, q).unwrap(), None).unwrap()
                };
                for p in menu.windows(2) {
                    let per_bit = (mse(p[0]) / mse(p[1])).powf(1.0 / f64::from(p[1] - p[0]));
                    assert!((2.0..=8.0).contains(&per_bit), "{cb:?} S={s} {}->{}: {per_bit}", p[0], p[1]);
                }
            }
        }
    }
}

#[test]
fn rtn_close_to_scale_oracle() {
    let w = [0.9, -0.4, 0.1, -0.75, 0.33, 0.6, -0.2, 0.05];
    let m = Matrix::from_vec(1, 8, w.to_vec()).unwrap();
    let q = QuantType::new(2, Codebook::UniformSymmetric, 8, 0).unwrap();
    let mse_at = |s: f64| w.iter().map(|&x| (x - s * f64::from(q.nearest_code(x, s, 0.0))).powi(2)).sum::<f64>() / 8.0;
    let amax = w.iter().fold(0.0f64, |a, &x| a.max(x.abs()));
    let oracle = (1..=10_000).map(|i| mse_at(2.0 * amax * i as f64 / 10_000.0)).fold(f64::INFINITY, f64::min);
    let rtn = quant_mse(&m, &quantize_rtn("1.q", &m, q).unwrap(), None).unwrap();
    assert!(rtn <= 1.25 * oracle, "rtn {rtn} oracle {oracle}");
}

#[test]
fn eight_bit_error_bound() {
    let w = gaussian(9, 64, 64);
    let q = QuantType::new(8, Codebook::UniformSymmetric, 32, 0).unwrap();
    let qt = quantize_rtn("1.q", &w, q).unwrap();
    let smax = qt.effective_scales().into_iter().fold(0.0, f64::max);
    assert!(quant_mse(&w, &qt, None).unwrap() <= smax * smax / 4.0);
}

#[test]
fn constant_blocks_round_trip_exactly() {
    for cb in [Codebook::UniformSymmetric, Codebook::UniformAsymmetric] {
        for v in [0.0, 1.25, -3.5] {
            let w = Matrix::from_fn(4, 32, |_, _| v);
            let q = QuantType::new(4, cb, 32, 0).unwrap();
            let back: Matrix<f64> = dequantize(&quantize_rtn("1.v", &w, q).unwrap()).unwrap();
            assert_eq!(back, w, "{cb:?} {v}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn requantizing_is_idempotent(
        seed in any::<u64>(),
        rows in 1usize..6,
        cols in 1usize..70,
        b in prop::sample::select(vec![2u8, 3, 4, 5, 6, 8]),
        asym in any::<bool>(),
        bs in prop::sample::select(vec![8usize, 16, 32]),
    ) {
        let cb = if asym { Codebook::UniformAsymmetric } else { Codebook::UniformSymmetric };
        let q = QuantType::new(b, cb, bs, 0).unwrap();
        let w = gaussian(seed, rows, cols);
        let once: Matrix<f64> = dequantize(&quantize_rtn("1.q", &w, q).unwrap()).unwrap();
        let twice: Matrix<f64> = dequantize(&quantize_rtn("1.q", &once, q).unwrap()).unwrap();
        for (a, c) in once.as_slice().iter().zip(twice.as_slice()) {
            prop_assert!((a - c).abs() <= 1e-12 * a.abs().max(1.0));
        }
    }

    #[test]
    fn error_within_half_step(seed in any::<u64>(), b in prop::sample::select(vec![2u8, 3, 4, 5, 6, 8])) {
        let w = gaussian(seed, 3, 40);
        let q = QuantType::new(b, Codebook::UniformSymmetric, 16, 0).unwrap();
        let qt = quantize_rtn("1.q", &w, q).unwrap();
        let back: Matrix<f64> = dequantize(&qt).unwrap();
        for (i, (x, y)) in w.as_slice().iter().zip(back.as_slice()).enumerate() {
            let s = qt.block_scale(i / 16);
            let (lo, hi) = (s * f64::from(q.code_min()), s * f64::from(q.code_max()));
            if (lo.min(hi)..=lo.max(hi)).contains(x) {
                prop_assert!((x - y).abs() <= s.abs() / 2.0 * (1.0 + 1e-9));
            }
        }
    }
}
