use aq_core::hsic::{hsic_estimate, kernel_matrix, KernelSpec};
use aq_core::Matrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

const MEDIAN: KernelSpec = KernelSpec::MedianHeuristic;

fn gaussian(rng: &mut ChaCha8Rng, k: usize, d: usize) -> Matrix<f64> {
    Matrix::from_fn(k, d, |_, _| rng.sample(StandardNormal))
}

/// Dense `(K-1)^-2 tr(K_A H K_B H)` with explicit matrix products.
fn oracle(a: &Matrix<f64>, b: &Matrix<f64>, ga: f64, gb: f64) -> f64 {
    let k = a.rows();
    let gram = |m: &Matrix<f64>, g: f64| -> Vec<Vec<f64>> {
        (0..k)
            .map(|i| {
                (0..k)
                    .map(|j| {
                        let mut d = 0.0;
                        for c in 0..m.cols() {
                            d += (m.get(i, c) - m.get(j, c)).powi(2);
                        }
                        (-g * d).exp()
                    })
                    .collect()
            })
            .collect()
    };
    let h: Vec<Vec<f64>> =
        (0..k).map(|i| (0..k).map(|j| if i == j { 1.0 } else { 0.0 } - 1.0 / k as f64).collect()).collect();
    let mul = |x: &Vec<Vec<f64>>, y: &Vec<Vec<f64>>| -> Vec<Vec<f64>> {
        (0..k).map(|i| (0..k).map(|j| (0..k).map(|t| x[i][t] * y[t][j]).sum()).collect()).collect()
    };
    let m = mul(&mul(&mul(&gram(a, ga), &h), &gram(b, gb)), &h);
    (0..k).map(|i| m[i][i]).sum::<f64>() / ((k - 1) as f64).powi(2)
}

#[test]
fn matches_dense_trace_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..50 {
        let k = rng.gen_range(2..=20);
        let (da, db) = (rng.gen_range(1..4), rng.gen_range(1..4));
        let a = gaussian(&mut rng, k, da);
        let b = gaussian(&mut rng, k, db);
        let (ga, gb) = (rng.gen_range(0.1..2.0), rng.gen_range(0.1..2.0));
        let got = hsic_estimate(&a, &b, KernelSpec::Fixed(ga), KernelSpec::Fixed(gb)).unwrap();
        let want = oracle(&a, &b, ga, gb);
        assert!((got - want).abs() <= 1e-10 * want.abs().max(1e-300) || (got - want).abs() < 1e-15, "{got} {want}");
    }
}

#[test]
fn spec_four_point_case() {
    let a = Matrix::from_vec(4, 1, vec![0.0, 1.0, 2.0, 3.0]).unwrap();
    let got = hsic_estimate(&a, &a, KernelSpec::Fixed(1.0), KernelSpec::Fixed(1.0)).unwrap();
    assert!((got - oracle(&a, &a, 1.0, 1.0)).abs() < 1e-14);
}

#[test]
fn symmetric_in_arguments() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let a = gaussian(&mut rng, 30, 2);
    let b = gaussian(&mut rng, 30, 3);
    let ab = hsic_estimate(&a, &b, MEDIAN, MEDIAN).unwrap();
    let ba = hsic_estimate(&b, &a, MEDIAN, MEDIAN).unwrap();
    assert!((ab - ba).abs() < 1e-15);
}

#[test]
fn independence_and_dependence() {
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let a = gaussian(&mut rng, 200, 1);
        let b = gaussian(&mut rng, 200, 1);
        let noisy = Matrix::from_fn(200, 1, |i, _| a.get(i, 0) + 0.01 * rng.sample::<f64, _>(StandardNormal));
        let null = hsic_estimate(&a, &b, MEDIAN, MEDIAN).unwrap();
        let dep = hsic_estimate(&a, &noisy, MEDIAN, MEDIAN).unwrap();
        assert!(null < 0.01, "seed {seed}: {null}");
        assert!(dep > null, "seed {seed}");
    }
}

#[test]
fn permutation_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a = gaussian(&mut rng, 40, 2);
    let b = Matrix::from_fn(40, 1, |i, _| a.get(i, 0).sin());
    let mut perm: Vec<usize> = (0..40).collect();
    perm.shuffle(&mut rng);
    let x = hsic_estimate(&a, &b, MEDIAN, MEDIAN).unwrap();
    let y = hsic_estimate(&a.select_rows(&perm), &b.select_rows(&perm), MEDIAN, MEDIAN).unwrap();
    assert!((x - y).abs() < 1e-12);
}

#[test]
fn median_heuristic_is_scale_free() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let a = gaussian(&mut rng, 50, 2);
    let b = Matrix::from_fn(50, 1, |i, _| a.get(i, 1).tanh());
    let x = hsic_estimate(&a, &b, MEDIAN, MEDIAN).unwrap();
    let y = hsic_estimate(&a.scaled(10.0), &b.scaled(10.0), MEDIAN, MEDIAN).unwrap();
    assert!((x - y).abs() < 1e-9);
}

#[test]
fn bias_shrinks_with_sample_count() {
    // Bias is a property of the expected estimate, so each point is a mean
    // over independent replicates.
    const REPS: usize = 32;
    let ks = [50usize, 100, 200, 400];
    let (mut down, mut total) = (0, 0);
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(500 + seed);
        let mut est = |k: usize| {
            let mut sum = 0.0;
            for _ in 0..REPS {
                let a = gaussian(&mut rng, k, 1);
                let b = Matrix::from_fn(k, 1, |i, _| a.get(i, 0).powi(2) + 0.5 * rng.sample::<f64, _>(StandardNormal));
                sum += hsic_estimate(&a, &b, KernelSpec::Fixed(0.5), KernelSpec::Fixed(0.5)).unwrap();
            }
            sum / REPS as f64
        };
        let gaps: Vec<f64> = ks.iter().map(|&k| (est(k) - est(4 * k)).abs()).collect();
        for w in gaps.windows(2) {
            total += 1;
            if w[1] < w[0] {
                down += 1;
            }
        }
    }
    assert!(4 * down >= 3 * total, "{down}/{total} transitions decreased");
}

#[test]
fn kernel_entries_in_unit_interval() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let a = gaussian(&mut rng, 25, 3);
    let k = kernel_matrix(&a, MEDIAN).unwrap();
    for i in 0..25 {
        assert_eq!(k.get(i, i), 1.0);
        for j in 0..25 {
            assert!(k.get(i, j) > 0.0 && k.get(i, j) <= 1.0);
            assert_eq!(k.get(i, j), k.get(j, i));
        }
    }
}

#[test]
fn parallel_rows_match_serial() {
    // Above the parallel threshold the result must not depend on the split.
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let a = gaussian(&mut rng, 300, 2);
    let b = Matrix::from_fn(300, 1, |i, _| a.get(i, 0).cos());
    let x = hsic_estimate(&a, &b, MEDIAN, MEDIAN).unwrap();
    let y = hsic_estimate(&a, &b, MEDIAN, MEDIAN).unwrap();
    assert_eq!(x.to_bits(), y.to_bits());
}
