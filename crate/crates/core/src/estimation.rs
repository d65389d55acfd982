//! Uncertainty estimation through the kernel-side projection.

use nalgebra::DVector;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::factorization::SkrRealization;
use crate::linalg::spectral_abscissa;
use crate::projection::{observer_pass, relative_sup_error, skr_adjoint, skr_project};
use crate::signals::SignalWindow;
use crate::systems::fd_jacobian_auto;

#[derive(Debug, Clone)]
pub struct UncertaintyEstimate {
    pub t0: f64,
    pub dt: f64,
    /// (Δû; Δŷ) per sample.
    pub zdelta: Vec<DVector<f64>>,
    pub residual_r: Vec<DVector<f64>>,
    /// Residual of the SKR replayed on zdelta from rest.
    pub replay_r: Vec<DVector<f64>>,
    /// max_k ‖r(k) − r_replay(k)‖
    pub consistency_defect: f64,
    /// consistency_defect / max_k ‖r(k)‖
    pub relative_defect: f64,
}

/// Replay a sequence through the observer from rest and return its residual.
pub fn replay_residual(skr: &SkrRealization, t0: f64, dt: f64, zdelta: &[DVector<f64>]) -> Result<Vec<DVector<f64>>> {
    let w = SignalWindow::from_z(t0, dt, skr.p(), zdelta)?;
    Ok(observer_pass(skr, &w, &DVector::zeros(skr.n()))?.residual_r)
}

pub fn estimate_uncertainty(skr: &SkrRealization, data: &SignalWindow, xhat0: &DVector<f64>) -> Result<UncertaintyEstimate> {
    let proj = skr_project(skr, data, xhat0)?;
    let replay_r = replay_residual(skr, data.t0(), data.dt(), &proj.zdelta)?;
    let consistency_defect = proj
        .residual_r
        .iter()
        .zip(&replay_r)
        .map(|(a, b)| (a - b).norm())
        .fold(0.0, f64::max);
    let relative_defect = relative_sup_error(&replay_r, &proj.residual_r);
    Ok(UncertaintyEstimate {
        t0: data.t0(),
        dt: data.dt(),
        zdelta: proj.zdelta,
        residual_r: proj.residual_r,
        replay_r,
        consistency_defect,
        relative_defect,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GainSweepEntry {
    pub scale: f64,
    /// Spectral abscissa of the linearized observer error dynamics at the origin.
    pub abscissa: f64,
    pub skipped: bool,
    /// ½ Σ ‖r_y‖² dt
    pub cost: f64,
    /// Relative sup-norm mismatch between r and the replay of the gain's own
    /// uncertainty estimate.
    pub replay_defect: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LsOptimalityReport {
    pub nominal_cost: f64,
    pub entries: Vec<GainSweepEntry>,
    /// Scalings whose cost is not above the nominal one.
    pub violations: Vec<f64>,
    pub passed: bool,
}

/// Residual energy of the observer with gain s·L* for each s, compared with s = 1.
pub fn ls_optimality_check(
    skr: &SkrRealization,
    scalings: &[f64],
    window: &SignalWindow,
    xhat0: &DVector<f64>,
) -> Result<LsOptimalityReport> {
    if !skr.is_normalized() {
        return Err(Error::NotNormalized);
    }
    let run = |s: f64| -> Result<GainSweepEntry> {
        let k = skr.with_scaled_gain(s);
        let jac = fd_jacobian_auto(|x| k.a_k(x), &DVector::zeros(k.n()))?;
        let abscissa = spectral_abscissa(&jac);
        if !(abscissa < 0.0) {
            return Ok(GainSweepEntry { scale: s, abscissa, skipped: true, cost: f64::NAN, replay_defect: f64::NAN });
        }
        let fwd = observer_pass(&k, window, xhat0)?;
        let cost = 0.5 * window.dt() * fwd.residual_r.iter().map(|r| r.norm_squared()).sum::<f64>();
        let (zd, _) = skr_adjoint(&k, &fwd.residual_r, &fwd.state_xhat, window)?;
        let replay = replay_residual(&k, window.t0(), window.dt(), &zd)?;
        let replay_defect = relative_sup_error(&replay, &fwd.residual_r);
        Ok(GainSweepEntry { scale: s, abscissa, skipped: false, cost, replay_defect })
    };
    let nominal = run(1.0)?;
    let tol = 1e-9 * nominal.cost.max(1e-300);
    let mut entries = vec![nominal.clone()];
    let mut violations = Vec::new();
    for &s in scalings {
        if s == 1.0 {
            continue;
        }
        let e = run(s)?;
        if !e.skipped && e.cost + tol < nominal.cost {
            violations.push(s);
        }
        entries.push(e);
    }
    Ok(LsOptimalityReport { nominal_cost: nominal.cost, passed: violations.is_empty(), violations, entries })
}
