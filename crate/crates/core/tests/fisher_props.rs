use aq_core::fisher::{cross_prefactor, decompose, fisher_diagonal, GradientSample};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn samples(rng: &mut ChaCha8Rng, n: usize, lens: &[usize]) -> Vec<GradientSample<f64>> {
    (0..n)
        .map(|id| GradientSample {
            id,
            act: lens.iter().map(|&l| (0..l).map(|_| rng.sample(StandardNormal)).collect()).collect(),
            cls: Some(lens.iter().map(|&l| (0..l).map(|_| rng.sample(StandardNormal)).collect()).collect()),
        })
        .collect()
}

#[test]
fn decomposition_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    for n in [1usize, 3, 60] {
        let s = samples(&mut rng, n, &[7, 13]);
        for alpha in [0.0, 0.25, 0.5, 0.75, 1.0] {
            let f = fisher_diagonal(&s, alpha).unwrap();
            let d = decompose(&s, alpha).unwrap();
            for (ft, rt) in f.per_tensor.iter().zip(&d.reconstructed) {
                for (&a, &b) in ft.iter().zip(rt) {
                    assert!((a - b).abs() <= 1e-12 * a.abs().max(f64::MIN_POSITIVE), "{a} vs {b}");
                }
            }
        }
        assert_eq!(fisher_diagonal(&s, 1.0).unwrap().per_tensor, decompose(&s, 1.0).unwrap().f_act);
        assert_eq!(fisher_diagonal(&s, 0.0).unwrap().per_tensor, decompose(&s, 0.0).unwrap().f_cls);
    }
}

#[test]
fn prefactor_peaks_at_half() {
    let grid: Vec<f64> = (0..=100).map(|i| i as f64 / 100.0).collect();
    let best = grid.iter().copied().fold(0.0, |m: f64, a| m.max(cross_prefactor(a)));
    assert_eq!(best, 0.5);
    assert_eq!(cross_prefactor(0.5), 0.5);
}

#[test]
fn order_invariant_nonnegative_and_bounded_cross() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let s = samples(&mut rng, 25, &[11]);
    let mut shuffled = s.clone();
    shuffled.shuffle(&mut rng);
    for alpha in [0.0, 0.3, 0.5, 1.0] {
        let a = fisher_diagonal(&s, alpha).unwrap();
        let b = fisher_diagonal(&shuffled, alpha).unwrap();
        assert_eq!(a.per_tensor, b.per_tensor);
        assert!(a.per_tensor.iter().flatten().all(|&v| v >= 0.0));
    }
    let d = decompose(&s, 0.5).unwrap();
    for ((c, fa), fc) in d.cross[0].iter().zip(&d.f_act[0]).zip(&d.f_cls[0]) {
        assert!(c * c <= fa * fc * (1.0 + 1e-12));
    }
}

#[test]
fn f32_matches_f64() {
    let mut rng = ChaCha8Rng::seed_from_u64(43);
    let s = samples(&mut rng, 10, &[5]);
    let s32: Vec<GradientSample<f32>> = s
        .iter()
        .map(|g| GradientSample {
            id: g.id,
            act: g.act.iter().map(|v| v.iter().map(|&x| x as f32).collect()).collect(),
            cls: g.cls.as_ref().map(|c| c.iter().map(|v| v.iter().map(|&x| x as f32).collect()).collect()),
        })
        .collect();
    let a = fisher_diagonal(&s, 0.5).unwrap();
    let b = fisher_diagonal(&s32, 0.5f32).unwrap();
    for (x, y) in a.per_tensor[0].iter().zip(&b.per_tensor[0]) {
        assert!((x - f64::from(*y)).abs() <= 1e-5 * x.abs().max(1.0));
    }
}
