//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.

use std::f64::consts::{PI, SQRT_2};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use hamfd_core::divergence::{
    evaluate_j_sir, minimality_check, pointwise_divergence, random_smooth_latent, Verdict,
};
use hamfd_core::estimation::ls_optimality_check;
use hamfd_core::factorization::{
    lti_factorization, lti_normalized_lcf, lti_normalized_rcf, sir_hje_residual, simulate_image, skr_hje_residual,
    verify_annihilation, verify_inner_energy, ProbeBox,
};
use hamfd_core::harness::{detect_sir_windows, run_experiment, run_verify, Scenario, Suite, VerifyOptions};
use hamfd_core::lti_oracle::{
    assemble_factors, coinner_defect, default_padding, inner_defect, log_frequencies, observer_equivalence_check,
    orthogonal_project, pythagoras_check, OracleProjection,
};
use hamfd_core::plants::{lti_model, scalar_cubic_model, scalar_lti_model, PlantModel};
use hamfd_core::projection::{
    hamiltonians_sir, relative_sup_error, sir_project, sir_project_with, skr_project, SirClosure,
};
use hamfd_core::signals::{half_energy, stack_samples, LatentWindow, SignalWindow};
use hamfd_core::systems::{simulate, Grid, LtiSystem};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn one(v: f64) -> DVector<f64> {
    DVector::from_element(1, v)
}

fn plants() -> [PlantModel; 2] {
    [scalar_lti_model(), scalar_cubic_model()]
}

fn sup(z: &[DVector<f64>]) -> f64 {
    z.iter().map(|v| v.amax()).fold(0.0, f64::max)
}

fn within(label: &str, value: f64, tol: f64) -> Outcome {
    if value.is_finite() && value < tol {
        Ok(format!("{label} {value:.2e} < {tol:.0e}"))
    } else {
        Err(format!("{label} {value:.2e} not below {tol:.0e}"))
    }
}

fn all(parts: Vec<Outcome>) -> Outcome {
    let failed: Vec<_> = parts.iter().filter_map(|p| p.as_ref().err().cloned()).collect();
    if failed.is_empty() {
        Ok(parts.into_iter().map(|p| p.unwrap()).collect::<Vec<_>>().join("; "))
    } else {
        Err(failed.join("; "))
    }
}

fn timed(limit: Duration, start: Instant, result: Outcome) -> Outcome {
    let took = start.elapsed();
    let tag = format!("{:.2}s (limit {}s)", took.as_secs_f64(), limit.as_secs());
    match result {
        Ok(s) if took <= limit => Ok(format!("{s}; {tag}")),
        Ok(s) => Err(format!("{s}; runtime {tag}")),
        Err(e) => Err(format!("{e}; {tag}")),
    }
}

/// Nominal plant record under a smooth two-tone input; a sensor bias of
/// `bias` is active on [on, off).
fn record(model: &PlantModel, t_end: f64, dt: f64, bias: f64, on: f64, off: f64) -> SignalWindow {
    let len = (t_end / dt).round() as usize + 1;
    let grid = Grid::new(0.0, dt, len).unwrap();
    let u = LatentWindow::from_fn(0.0, dt, len, |t| one((0.9 * t).sin() + 0.5 * (0.3 * t).cos())).unwrap();
    let (_, data) = simulate(&model.system, &u, &one(0.0), &grid).unwrap();
    let y = data
        .y()
        .iter()
        .enumerate()
        .map(|(k, y)| {
            let t = grid.time(k);
            if t >= on && t < off {
                y.add_scalar(bias)
            } else {
                y.clone()
            }
        })
        .collect();
    SignalWindow::new(0.0, dt, data.u().to_vec(), y).unwrap()
}

/// Off-manifold window with independent random smooth u and y.
fn random_window(rng: &mut ChaCha8Rng, t_end: f64, dt: f64) -> SignalWindow {
    let len = (t_end / dt).round() as usize + 1;
    let u = random_smooth_latent(rng, 0.0, dt, len, 1, 1.0).unwrap();
    let y = random_smooth_latent(rng, 0.0, dt, len, 1, 1.0).unwrap();
    SignalWindow::new(0.0, dt, u.samples().to_vec(), y.samples().to_vec()).unwrap()
}

/// Random smooth window tapered to zero at both ends (finite-energy data for
/// the padded LTI oracle).
fn tapered_window(rng: &mut ChaCha8Rng, t_end: f64, dt: f64) -> SignalWindow {
    let w = random_window(rng, t_end, dt);
    let taper = |k: usize| (PI * k as f64 * dt / t_end).sin().powi(4);
    let u = w.u().iter().enumerate().map(|(k, v)| v * taper(k)).collect();
    let y = w.y().iter().enumerate().map(|(k, v)| v * taper(k)).collect();
    SignalWindow::new(0.0, dt, u, y).unwrap()
}

fn random_stable_plant(rng: &mut ChaCha8Rng) -> LtiSystem {
    loop {
        let a = DMatrix::from_fn(3, 3, |_, _| rng.gen_range(-1.0..1.0)) - DMatrix::identity(3, 3) * 1.5;
        let sys = LtiSystem::new(
            a,
            DMatrix::from_fn(3, 1, |_, _| rng.gen_range(-1.0..1.0)),
            DMatrix::from_fn(1, 3, |_, _| rng.gen_range(-1.0..1.0)),
            DMatrix::from_fn(1, 1, |_, _| rng.gen_range(-0.5..0.5)),
        )
        .unwrap();
        if hamfd_core::linalg::is_hurwitz(&sys.a) {
            return sys;
        }
    }
}

fn c1_riccati_oracle() -> Outcome {
    let start = Instant::now();
    let sys = LtiSystem::scalar();
    let (x, ..) = lti_normalized_rcf(&sys).map_err(|e| e.to_string())?;
    let (y, ..) = lti_normalized_lcf(&sys).map_err(|e| e.to_string())?;
    let r = all(vec![
        within("|X-(sqrt2-1)|", (x[(0, 0)] - (SQRT_2 - 1.0)).abs(), 1e-10),
        within("|Y-(sqrt2-1)|", (y[(0, 0)] - (SQRT_2 - 1.0)).abs(), 1e-10),
    ]);
    timed(Duration::from_secs(1), start, r)
}

fn c2_inner_identities() -> Outcome {
    let start = Instant::now();
    let freqs = log_frequencies(1e-3, 1e3, 50);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut parts = Vec::new();
    for (name, sys) in [("scalar", LtiSystem::scalar()), ("random 3-state", random_stable_plant(&mut rng))] {
        let fac = lti_factorization(&sys).map_err(|e| e.to_string())?;
        let (i0, k0) = assemble_factors(&fac, &sys);
        parts.push(within(&format!("{name} inner"), inner_defect(&i0, &freqs).map_err(|e| e.to_string())?, 1e-8));
        parts.push(within(&format!("{name} co-inner"), coinner_defect(&k0, &freqs).map_err(|e| e.to_string())?, 1e-8));
    }
    timed(Duration::from_secs(5), start, all(parts))
}

fn c3_hje_residuals() -> Outcome {
    let start = Instant::now();
    let probes = ProbeBox::default().states(1);
    let mut parts = Vec::new();
    for m in plants() {
        let (p, v) = (m.sir_storage().unwrap(), m.skr_storage().unwrap());
        let ri = probes.iter().map(|x| sir_hje_residual(&m.system, p, x).abs()).fold(0.0, f64::max);
        let rk = probes.iter().map(|x| skr_hje_residual(&m.system, v, x).abs()).fold(0.0, f64::max);
        parts.push(within(&format!("{} HJE", m.name), ri.max(rk), 1e-10));
        let g = p.gradient_defect(&probes).max(v.gradient_defect(&probes));
        parts.push(within(&format!("{} gradient", m.name), g, 1e-6));
    }
    timed(Duration::from_secs(1), start, all(parts))
}

fn c4_annihilation() -> Outcome {
    let start = Instant::now();
    let mut parts = Vec::new();
    for m in plants() {
        let (sir, skr) = (m.sir().unwrap(), m.skr().unwrap());
        let v = LatentWindow::from_fn(0.0, 1e-3, 10001, |t| one((1.3 * t).sin() + 0.6 * (0.35 * t + 0.2).cos())).unwrap();
        let x0 = one(0.4);
        let scale = sup(&simulate_image(&sir, &v, &x0).unwrap());
        let r = verify_annihilation(&skr, &sir, &v, &x0).map_err(|e| e.to_string())?;
        parts.push(within(&format!("{} residual/scale", m.name), r / scale, 1e-6));
    }
    timed(Duration::from_secs(10), start, all(parts))
}

fn c5_fixed_point_idempotency() -> Outcome {
    let mut parts = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for m in plants() {
        let sir = m.sir().unwrap();
        let v = random_smooth_latent(&mut rng, 0.0, 1e-3, 10001, 1, 1.0).unwrap();
        let z = simulate_image(&sir, &v, &one(0.0)).unwrap();
        let w = SignalWindow::from_z(0.0, 1e-3, 1, &z).unwrap();
        let res = sir_project(&sir, &w, &one(0.0)).map_err(|e| e.to_string())?;
        parts.push(within(&format!("{} fixed point", m.name), relative_sup_error(&res.zhat, &z), 1e-6));
        let mut worst: f64 = 0.0;
        for _ in 0..20 {
            let data = random_window(&mut rng, 10.0, 1e-2);
            let p1 = sir_project(&sir, &data, &one(0.0)).map_err(|e| e.to_string())?;
            let w1 = SignalWindow::from_z(0.0, 1e-2, 1, &p1.zhat).unwrap();
            let p2 = sir_project(&sir, &w1, &one(0.0)).map_err(|e| e.to_string())?;
            worst = worst.max(relative_sup_error(&p2.zhat, &p1.zhat));
        }
        parts.push(within(&format!("{} idempotency (20 windows)", m.name), worst, 1e-4));
    }
    all(parts)
}

fn c6_dual_computation() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst: f64 = 0.0;
    for m in plants() {
        let sir = m.sir().unwrap();
        for _ in 0..10 {
            let data = random_window(&mut rng, 10.0, 1e-2);
            let res = sir_project(&sir, &data, &one(0.0)).map_err(|e| e.to_string())?;
            let z = data.z_samples();
            pointwise_divergence(&z, &res.zhat).map_err(|e| e.to_string())?;
            let (h, _) = hamiltonians_sir(&z, &res.zhat).map_err(|e| e.to_string())?;
            for k in 0..z.len() {
                let h0 = 0.5 * z[k].norm_squared();
                let d = 0.5 * (&z[k] - &res.zhat[k]).norm_squared();
                worst = worst.max(((h0 - h[k]) - d).abs() / (1.0 + z[k].norm_squared()));
            }
        }
    }
    let suite = run_verify(Suite::All, &VerifyOptions::default());
    let failed: Vec<_> = suite.checks.iter().filter(|c| !c.passed).map(|c| c.to_string()).collect();
    all(vec![
        within("max |(H0-H) - D| / (1+|z|^2)", worst, 1e-9),
        if failed.is_empty() {
            Ok(format!("verify all: {} checks, no violations", suite.checks.len()))
        } else {
            Err(format!("verify all failures: {}", failed.join(", ")))
        },
    ])
}

fn scenario(text: &str) -> Scenario {
    Scenario::parse(text).unwrap()
}

fn c7_stacking() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut windows = 0;
    for (plant, fault) in [("scalar_lti", "sensor_bias"), ("scalar_cubic", "actuator_bias")] {
        let sc = scenario(&format!(
            "plant = \"{plant}\"\nwindow = 250\nseed = 7\n[input]\nkind = \"sinusoids\"\namplitudes = [1.0, 0.4]\nfrequencies = [0.1, 0.37]\n[grid]\ndt = 0.01\nsteps = 3000\n[fault]\nkind = \"{fault}\"\nt_on = 12.0\nvector = [0.5]\n[noise]\ny = [0.02]\n"
        ));
        let model = sc.model().unwrap();
        let exp = run_experiment(&sc, &model).map_err(|e| e.to_string())?;
        let (zhat, _) = detect_sir_windows(&sc, &model, &exp.data).map_err(|e| e.to_string())?;
        for (s, l) in sc.windows() {
            let w = exp.data.slice(s, l).unwrap();
            let zh = &zhat[s..s + l];
            let stacked = evaluate_j_sir(&w, zh).map_err(|e| e.to_string())?;
            let pw = pointwise_divergence(&w.z_samples(), zh).map_err(|e| e.to_string())?;
            let mean = pw.series.iter().sum::<f64>() / l as f64;
            let scale = half_energy(&stack_samples(&w.z_samples())).max(1.0);
            worst = worst.max((stacked - mean).abs() / scale);
            windows += 1;
        }
    }
    within(&format!("stacked vs pointwise J over {windows} windows"), worst, 1e-12)
}

fn c8_energy_balance() -> Outcome {
    let sir = scalar_cubic_model().sir().unwrap();
    let drive = |t: f64| (1.7 * t).sin() + 0.8 * (0.45 * t + 0.3).cos();
    let run = |dt: f64| {
        let v = LatentWindow::from_fn(0.0, dt, (10.0 / dt).round() as usize + 1, |t| one(drive(t))).unwrap();
        verify_inner_energy(&sir, &v, &one(0.5)).unwrap()
    };
    let fine = run(1e-3);
    let (a, b) = (run(0.1), run(0.05));
    let ratio = a.defect / b.defect;
    all(vec![
        within("defect/input energy at dt=1e-3", fine.defect / fine.input_energy, 1e-4),
        if ratio >= 8.0 {
            Ok(format!("defect ratio on halving dt {ratio:.1} >= 8"))
        } else {
            Err(format!("defect ratio on halving dt {ratio:.1} < 8"))
        },
    ])
}

/// Twenty padded oracle projections shared by criteria 9 and 14.
fn oracle_windows() -> Vec<OracleProjection> {
    let (sys, fac) = scalar_lti_model().lti.unwrap();
    let (i0, _) = assemble_factors(&fac, &sys);
    let dt = 1e-3;
    let pad = default_padding(&i0, dt, 30.0);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    (0..20).map(|_| orthogonal_project(&i0, &tapered_window(&mut rng, 10.0, dt), pad, pad).unwrap()).collect()
}

fn c9_pythagoras_observer(windows: &[OracleProjection]) -> Outcome {
    let (sys, fac) = scalar_lti_model().lti.unwrap();
    let (_, k0) = assemble_factors(&fac, &sys);
    let mut pyth: f64 = 0.0;
    let mut obs: f64 = 0.0;
    for w in windows {
        pyth = pyth.max(pythagoras_check(&w.z, &w.zhat));
        obs = obs.max(observer_equivalence_check(&k0, &w.z, &w.zhat, w.dt).map_err(|e| e.to_string())?);
    }
    all(vec![within("Pythagoras", pyth, 1e-6), within("observer equivalence", obs, 1e-6)])
}

fn c10_minimality() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut parts = Vec::new();
    for m in plants() {
        let sir = m.sir().unwrap();
        let mut violations = 0;
        let mut min_margin = f64::INFINITY;
        for data in [record(&m, 10.0, 1e-2, 0.5, 5.0, 10.5), random_window(&mut rng, 10.0, 1e-2)] {
            let res = sir_project(&sir, &data, &one(0.0)).map_err(|e| e.to_string())?;
            let rep = minimality_check(&data, &res, &sir, &one(0.0), 200, &mut rng).map_err(|e| e.to_string())?;
            violations += rep.violations;
            min_margin = min_margin.min(rep.min_margin());
        }
        let line = format!("{} violations {violations} (min margin {min_margin:.2e})", m.name);
        parts.push(if violations == 0 { Ok(line) } else { Err(line) });
    }
    timed(Duration::from_secs(60), start, all(parts))
}

fn c11_skr_null_and_fixed_point() -> Outcome {
    let mut parts = Vec::new();
    for m in plants() {
        let skr = m.skr().unwrap();
        let clean = record(&m, 10.0, 1e-3, 0.0, 0.0, 0.0);
        let k = skr_project(&skr, &clean, &one(0.0)).map_err(|e| e.to_string())?;
        let ratio = k.zdelta.iter().map(|v| v.norm_squared()).sum::<f64>()
            / clean.z_samples().iter().map(|v| v.norm_squared()).sum::<f64>();
        parts.push(within(&format!("{} nominal energy ratio", m.name), ratio, 1e-10));
        let faulty = record(&m, 20.0, 1e-3, 0.5, 10.0, 20.5);
        let p1 = skr_project(&skr, &faulty, &one(0.0)).map_err(|e| e.to_string())?;
        let w1 = SignalWindow::from_z(0.0, 1e-3, 1, &p1.zdelta).unwrap();
        let p2 = skr_project(&skr, &w1, &one(0.0)).map_err(|e| e.to_string())?;
        parts.push(within(&format!("{} idempotency", m.name), relative_sup_error(&p2.zdelta, &p1.zdelta), 1e-4));
    }
    all(parts)
}

fn c12_detection_rates() -> Outcome {
    let start = Instant::now();
    let base = "plant = \"scalar_lti\"\nwindow = 500\ngamma = 0.95\nburn_in = 0.5\n[input]\nkind = \"sinusoids\"\namplitudes = [1.0]\nfrequencies = [0.2]\n[grid]\ndt = 0.01\nsteps = 1000\n[noise]\ny = [0.02]\n";
    let faulty = format!("{base}[fault]\nkind = \"sensor_bias\"\nt_on = 7.5\nvector = [0.5]\n");
    let (mut false_alarms, mut detections) = (0, 0);
    for seed in 0..100u64 {
        for (text, hits) in [(base, &mut false_alarms), (faulty.as_str(), &mut detections)] {
            let sc = scenario(text).with_overrides(Some(seed), None);
            let model = sc.model().unwrap();
            let exp = run_experiment(&sc, &model).map_err(|e| e.to_string())?;
            let (_, reps) = detect_sir_windows(&sc, &model, &exp.data).map_err(|e| e.to_string())?;
            if reps.iter().any(|r| r.verdict == Verdict::Faulty) {
                *hits += 1;
            }
        }
    }
    let line = format!("false alarms {false_alarms}/100, detections {detections}/100");
    timed(Duration::from_secs(120), start, if false_alarms == 0 && detections == 100 { Ok(line) } else { Err(line) })
}

fn c13_ls_optimality() -> Outcome {
    let mut parts = Vec::new();
    for m in plants() {
        let skr = m.skr().unwrap();
        let data = record(&m, 20.0, 1e-3, 0.5, 5.0, 10.0);
        let rep = ls_optimality_check(&skr, &[0.8, 0.9, 1.1, 1.2], &data, &one(0.0)).map_err(|e| e.to_string())?;
        let costs: Vec<String> = rep.entries.iter().map(|e| format!("s={} {:.6e}", e.scale, e.cost)).collect();
        let margin_ok = rep.entries.iter().filter(|e| e.scale != 1.0).all(|e| e.cost - rep.nominal_cost > 1e-6 * rep.nominal_cost);
        let line = format!("{} costs [{}]", m.name, costs.join(", "));
        parts.push(if margin_ok { Ok(line) } else { Err(format!("{line}: s=1 is not the strict minimum")) });
    }
    all(parts)
}

fn c14_cross_validation(windows: &[OracleProjection]) -> Outcome {
    let sir = lti_model("lifted_scalar", LtiSystem::scalar()).unwrap().sir().unwrap();
    let mut worst: f64 = 0.0;
    for w in windows {
        let res = sir_project_with(&sir, &w.window().unwrap(), &one(0.0), SirClosure::adjoint()).map_err(|e| e.to_string())?;
        worst = worst.max(relative_sup_error(&res.zhat, &w.zhat));
    }
    within(&format!("max relative deviation over {} windows", windows.len()), worst, 1e-5)
}

fn main() {
    let oracle = std::sync::OnceLock::new();
    let oracle_windows = || oracle.get_or_init(oracle_windows);
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome + '_>)> = vec![
        ("Riccati oracle", Box::new(c1_riccati_oracle)),
        ("inner/co-inner identities", Box::new(c2_inner_identities)),
        ("HJE residuals", Box::new(c3_hje_residuals)),
        ("kernel-image annihilation", Box::new(c4_annihilation)),
        ("fixed point and idempotency", Box::new(c5_fixed_point_idempotency)),
        ("dual computation", Box::new(c6_dual_computation)),
        ("stacking", Box::new(c7_stacking)),
        ("lossless energy balance", Box::new(c8_energy_balance)),
        ("Pythagorean and observer equivalence", Box::new(|| c9_pythagoras_observer(oracle_windows()))),
        ("geodesic minimality", Box::new(c10_minimality)),
        ("SKR nominal null and uncertainty fixed point", Box::new(c11_skr_null_and_fixed_point)),
        ("detection performance", Box::new(c12_detection_rates)),
        ("LS optimality", Box::new(c13_ls_optimality)),
        ("cross-validation against the LTI oracle", Box::new(|| c14_cross_validation(oracle_windows()))),
    ];
    let mut failures = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(detail) => println!("PASS criterion {}: {name}: {detail}", i + 1),
            Err(detail) => {
                failures += 1;
                println!("FAIL criterion {}: {name}: {detail}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failures, criteria.len());
    if failures > 0 {
        std::process::exit(1);
    }
}
