use hamfd_core::divergence::{
    bregman, dual_bregman, evaluate_j_sir, evaluate_j_skr, pointwise_divergence, threshold_sir, threshold_skr,
    GeneratingFunction,
};
use hamfd_core::signals::{stack_samples, SignalWindow};
use nalgebra::DVector;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn bregman_nonnegative_on_many_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let (q, ne) = (GeneratingFunction::quadratic(), GeneratingFunction::negentropy());
    for _ in 0..10_000 {
        let a = DVector::from_fn(4, |_, _| rng.gen_range(-5.0..5.0));
        let b = DVector::from_fn(4, |_, _| rng.gen_range(-5.0..5.0));
        assert!(bregman(&q, &a, &b).unwrap() >= 0.0);
        assert_eq!(bregman(&q, &a, &a).unwrap(), 0.0);
        let pa = DVector::from_fn(4, |_, _| rng.gen_range(1e-3..5.0));
        let pb = DVector::from_fn(4, |_, _| rng.gen_range(1e-3..5.0));
        assert!(bregman(&ne, &pa, &pb).unwrap() >= -1e-12);
        assert!(bregman(&ne, &pa, &pa).unwrap().abs() < 1e-12);
    }
}

#[test]
fn negentropy_rejects_nonpositive_arguments() {
    let ne = GeneratingFunction::negentropy();
    assert!(bregman(&ne, &DVector::from_vec(vec![0.5, -0.1]), &DVector::from_vec(vec![0.5, 0.5])).is_err());
}

#[test]
fn threshold_floors_and_ranges() {
    let z = stack_samples(&[DVector::zeros(2)]);
    assert_eq!(threshold_sir(0.95, &z).unwrap(), 1e-12);
    assert_eq!(threshold_skr(0.05, &z).unwrap(), 1e-12);
    assert!(threshold_sir(0.3, &z).is_err());
    assert!(threshold_skr(1.5, &z).is_err());
}

fn vecs(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-100.0..100.0f64, n)
}

proptest! {
    #[test]
    fn three_term_identity(a in vecs(5), b in vecs(5)) {
        let (a, b) = (DVector::from_vec(a), DVector::from_vec(b));
        let q = GeneratingFunction::quadratic();
        // quadratic generator: φ×(b×) = ½‖b‖², b× = b
        let three = 0.5 * a.norm_squared() + 0.5 * b.norm_squared() - a.dot(&b);
        let d = bregman(&q, &a, &b).unwrap();
        prop_assert!((d - three).abs() <= 1e-10 * (1.0 + three.abs()));
        prop_assert!((dual_bregman(&q, &b, &a).unwrap() - d).abs() <= 1e-10 * (1.0 + d.abs()));
    }

    #[test]
    fn stacked_and_pointwise_j_agree(z in prop::collection::vec(vecs(2), 1..60), zh in prop::collection::vec(vecs(2), 60)) {
        let z: Vec<_> = z.into_iter().map(DVector::from_vec).collect();
        let zh: Vec<_> = zh.into_iter().take(z.len()).map(DVector::from_vec).collect();
        let w = SignalWindow::from_z(0.0, 0.1, 1, &z).unwrap();
        let j = evaluate_j_sir(&w, &zh).unwrap();
        let mean = pointwise_divergence(&z, &zh).unwrap().series.iter().sum::<f64>() / z.len() as f64;
        let scale = 0.5 * stack_samples(&z).entries.norm_squared();
        prop_assert!((j - mean).abs() <= 1e-12 * scale.max(1.0));
        prop_assert!(evaluate_j_skr(&zh).unwrap() >= 0.0);
    }
}
