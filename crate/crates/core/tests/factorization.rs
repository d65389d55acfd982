use hamfd_core::factorization::{
    lti_factorization, lti_normalized_lcf, lti_normalized_rcf, normalize_sir, sir_inner_defects, skr_coinner_defects,
    verify_annihilation, ProbeBox, StorageFunction,
};
use hamfd_core::linalg::{riccati_residual, spectral_abscissa};
use hamfd_core::lti_oracle::{assemble_factors, block_identity_defect, coinner_defect, inner_defect, log_frequencies};
use hamfd_core::plants::{lti_model, scalar_cubic_model, scalar_lti_model};
use hamfd_core::signals::LatentWindow;
use hamfd_core::systems::{lift_lti, LtiSystem};
use hamfd_core::Error;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_plant(seed: u64, n: usize) -> LtiSystem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = |r, c, s: f64| DMatrix::from_fn(r, c, |_, _| rng.gen_range(-s..s));
    let a = m(n, n, 1.5);
    // shift into the open left half plane
    let shift = (spectral_abscissa(&a) + 0.2).max(0.0);
    let a = a - DMatrix::identity(n, n) * shift;
    LtiSystem::new(a, m(n, 1, 1.0), m(1, n, 1.0), m(1, 1, 0.5)).unwrap()
}

fn dual(sys: &LtiSystem) -> LtiSystem {
    LtiSystem::new(sys.a.transpose(), sys.c.transpose(), sys.b.transpose(), sys.d.transpose()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn filter_riccati_is_dual_of_control_riccati(seed in any::<u64>()) {
        let sys = random_plant(seed, 3);
        let (x, ..) = lti_normalized_rcf(&dual(&sys)).unwrap();
        let (y, ..) = lti_normalized_lcf(&sys).unwrap();
        prop_assert!((&x - &y).amax() <= 1e-9 * (1.0 + x.amax()));
    }

    #[test]
    fn random_plant_factors_are_inner(seed in any::<u64>()) {
        let sys = random_plant(seed, 3);
        let fac = lti_factorization(&sys).unwrap();
        let (i0, k0) = assemble_factors(&fac, &sys);
        let freqs = log_frequencies(1e-2, 1e2, 20);
        prop_assert!(inner_defect(&i0, &freqs).unwrap() < 1e-8);
        prop_assert!(coinner_defect(&k0, &freqs).unwrap() < 1e-8);
        prop_assert!(block_identity_defect(&i0, &k0, &freqs).unwrap() < 1e-8);
        let sa = spectral_abscissa(&(&sys.a + &sys.b * &fac.f));
        prop_assert!(sa < 0.0);
        prop_assert!(fac.residual_x <= 1e-10 * (1.0 + fac.riccati_x.norm()));
    }
}

#[test]
fn riccati_residual_small_and_stabilizing() {
    let sys = random_plant(11, 4);
    let (x, ..) = lti_normalized_rcf(&sys).unwrap();
    let s_inv = (DMatrix::identity(1, 1) + sys.d.transpose() * &sys.d).try_inverse().unwrap();
    let a_bar = &sys.a - &sys.b * &s_inv * sys.d.transpose() * &sys.c;
    let g = &sys.b * &s_inv * sys.b.transpose();
    let r = DMatrix::identity(1, 1) + &sys.d * sys.d.transpose();
    let q = sys.c.transpose() * r.try_inverse().unwrap() * &sys.c;
    assert!(riccati_residual(&a_bar, &g, &q, &x).norm() < 1e-10 * (1.0 + x.norm()));
}

#[test]
fn lifted_random_plant_is_inner_at_probes() {
    let sys = random_plant(3, 2);
    let model = lti_model("random", sys).unwrap();
    let probes = ProbeBox::default().states(2);
    let (a, b, c) = sir_inner_defects(&model.sir().unwrap(), &probes).unwrap();
    assert!(a.max(b).max(c) < 1e-8, "{a:e} {b:e} {c:e}");
    let (a, b, c) = skr_coinner_defects(&model.skr().unwrap(), &probes).unwrap();
    assert!(a.max(b).max(c) < 1e-8, "{a:e} {b:e} {c:e}");
}

#[test]
fn wrong_storage_is_rejected() {
    let base = lift_lti(&LtiSystem::scalar());
    let err = normalize_sir(base, StorageFunction::quadratic(DMatrix::from_element(1, 1, 0.5 * 0.6)));
    assert!(matches!(err, Err(Error::HjeResidualTooLarge { .. })));
}

#[test]
fn annihilation_shrinks_with_step() {
    for model in [scalar_lti_model(), scalar_cubic_model()] {
        let (sir, skr) = (model.sir().unwrap(), model.skr().unwrap());
        let run = |dt: f64| {
            let v = LatentWindow::from_fn(0.0, dt, (5.0 / dt) as usize + 1, |t| DVector::from_element(1, (2.0 * t).sin()))
                .unwrap();
            verify_annihilation(&skr, &sir, &v, &DVector::from_element(1, 0.7)).unwrap()
        };
        let (a, b) = (run(0.1), run(0.05));
        assert!(b < 1e-12 || a / b >= 8.0, "{}: {a:e} -> {b:e}", model.name);
    }
}

/// A − L0 C for this plant sends an uncapped Schur iteration into a cycle.
#[test]
fn eigenvalue_solver_terminates_on_cycling_input() {
    let sys = random_plant(24258u64.wrapping_mul(0x9E37_79B9_7F4A_7C15), 3);
    let (x, ..) = lti_normalized_rcf(&dual(&sys)).unwrap();
    let (y, ..) = lti_normalized_lcf(&sys).unwrap();
    assert!((&x - &y).amax() <= 1e-9 * (1.0 + x.amax()));
}
