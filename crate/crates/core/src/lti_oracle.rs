//! Exact LTI reference: normalized coprime factors as state-space systems,
//! frequency responses and the time-domain orthogonal projection I₀I₀^∼.

use nalgebra::{Complex, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::factorization::LtiFactorization;
use crate::linalg::spectral_abscissa;
use crate::ode::{guard, lerp, rk4_step};
use crate::signals::SignalWindow;
use crate::systems::LtiSystem;

type C64 = Complex<f64>;

/// Linear state-space system (A, B, C, D) with frequency-response evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferEvaluator {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
}

fn to_c(m: &DMatrix<f64>) -> DMatrix<C64> {
    m.map(|v| C64::new(v, 0.0))
}

fn spectral_norm(m: &DMatrix<C64>) -> f64 {
    m.clone().singular_values().max()
}

impl TransferEvaluator {
    pub fn inputs(&self) -> usize {
        self.b.ncols()
    }
    pub fn outputs(&self) -> usize {
        self.c.nrows()
    }
    pub fn states(&self) -> usize {
        self.a.nrows()
    }

    /// C (jωI − A)⁻¹ B + D.
    pub fn response(&self, omega: f64) -> Result<DMatrix<C64>> {
        let n = self.states();
        let mut sa = -to_c(&self.a);
        for i in 0..n {
            sa[(i, i)] += C64::new(0.0, omega);
        }
        let x = sa
            .lu()
            .solve(&to_c(&self.b))
            .ok_or_else(|| Error::Singular(format!("pole on the imaginary axis at ω = {omega}")))?;
        Ok(to_c(&self.c) * x + to_c(&self.d))
    }

    /// Forward simulation from x0 with inputs held linearly between samples.
    pub fn simulate(&self, u: &[DVector<f64>], x0: &DVector<f64>, dt: f64) -> Result<Vec<DVector<f64>>> {
        let mut x = x0.clone();
        let mut out = Vec::with_capacity(u.len());
        for k in 0..u.len() {
            out.push(&self.c * &x + &self.d * &u[k]);
            if k + 1 < u.len() {
                let f = |s: f64, x: &DVector<f64>| &self.a * x + &self.b * lerp(&u[k], &u[k + 1], s);
                x = rk4_step(&f, &x, dt);
                guard(&x, k + 1)?;
            }
        }
        Ok(out)
    }

    /// Conjugate system G^∼ = (−Aᵀ, −Cᵀ, Bᵀ, Dᵀ) realized anti-causally:
    /// backward integration with zero terminal co-state.
    pub fn conjugate_apply(&self, w: &[DVector<f64>], dt: f64) -> Result<Vec<DVector<f64>>> {
        let mlen = w.len();
        let mut lam = vec![DVector::zeros(self.states()); mlen];
        let (at, ct) = (self.a.transpose(), self.c.transpose());
        for k in (0..mlen.saturating_sub(1)).rev() {
            // in reversed time s: dλ/ds = Aᵀλ + Cᵀw
            let f = |s: f64, l: &DVector<f64>| &at * l + &ct * lerp(&w[k + 1], &w[k], s);
            lam[k] = rk4_step(&f, &lam[k + 1], dt);
            guard(&lam[k], k)?;
        }
        let (bt, dtt) = (self.b.transpose(), self.d.transpose());
        Ok(lam.iter().zip(w).map(|(l, w)| &bt * l + &dtt * w).collect())
    }
}

/// (I₀, K₀) with I₀ = (M₀; N₀) and K₀ = (−N̂₀, M̂₀).
pub fn assemble_factors(fac: &LtiFactorization, sys: &LtiSystem) -> (TransferEvaluator, TransferEvaluator) {
    let (n, p, m) = (sys.n(), sys.p(), sys.m());
    let af = &sys.a + &sys.b * &fac.f;
    let mut ci = DMatrix::zeros(p + m, n);
    ci.rows_mut(0, p).copy_from(&fac.f);
    ci.rows_mut(p, m).copy_from(&(&sys.c + &sys.d * &fac.f));
    let mut di = DMatrix::zeros(p + m, p);
    di.rows_mut(0, p).copy_from(&fac.v0);
    di.rows_mut(p, m).copy_from(&(&sys.d * &fac.v0));
    let i0 = TransferEvaluator { a: af, b: &sys.b * &fac.v0, c: ci, d: di };

    let ak = &sys.a - &fac.l0 * &sys.c;
    let mut bk = DMatrix::zeros(n, p + m);
    bk.columns_mut(0, p).copy_from(&(&sys.b - &fac.l0 * &sys.d));
    bk.columns_mut(p, m).copy_from(&fac.l0);
    let mut dk = DMatrix::zeros(m, p + m);
    dk.columns_mut(0, p).copy_from(&(-(&fac.w0 * &sys.d)));
    dk.columns_mut(p, m).copy_from(&fac.w0);
    let k0 = TransferEvaluator { a: ak, b: bk, c: -(&fac.w0 * &sys.c), d: dk };
    (i0, k0)
}

/// `count` log-spaced frequencies in [lo, hi].
pub fn log_frequencies(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.log10(), hi.log10());
    (0..count).map(|i| 10f64.powf(a + (b - a) * i as f64 / (count - 1) as f64)).collect()
}

/// max_ω ‖I₀ᴴI₀ − I‖₂.
pub fn inner_defect(i0: &TransferEvaluator, freqs: &[f64]) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for &w in freqs {
        let g = i0.response(w)?;
        let e = g.adjoint() * &g - DMatrix::<C64>::identity(i0.inputs(), i0.inputs());
        worst = worst.max(spectral_norm(&e));
    }
    Ok(worst)
}

/// max_ω ‖K₀K₀ᴴ − I‖₂.
pub fn coinner_defect(k0: &TransferEvaluator, freqs: &[f64]) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for &w in freqs {
        let g = k0.response(w)?;
        let e = &g * g.adjoint() - DMatrix::<C64>::identity(k0.outputs(), k0.outputs());
        worst = worst.max(spectral_norm(&e));
    }
    Ok(worst)
}

/// max_ω ‖[I₀ᴴ; K₀][I₀, K₀ᴴ] − I‖₂.
pub fn block_identity_defect(i0: &TransferEvaluator, k0: &TransferEvaluator, freqs: &[f64]) -> Result<f64> {
    let (p, m) = (i0.inputs(), k0.outputs());
    let mut worst: f64 = 0.0;
    for &w in freqs {
        let (gi, gk) = (i0.response(w)?, k0.response(w)?);
        let mut left = DMatrix::<C64>::zeros(p + m, p + m);
        left.rows_mut(0, p).copy_from(&gi.adjoint());
        left.rows_mut(p, m).copy_from(&gk);
        let mut right = DMatrix::<C64>::zeros(p + m, p + m);
        right.columns_mut(0, p).copy_from(&gi);
        right.columns_mut(p, m).copy_from(&gk.adjoint());
        let e = left * right - DMatrix::<C64>::identity(p + m, p + m);
        worst = worst.max(spectral_norm(&e));
    }
    Ok(worst)
}

/// max_ω ‖K₀ I₀‖₂.
pub fn annihilation_defect(i0: &TransferEvaluator, k0: &TransferEvaluator, freqs: &[f64]) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for &w in freqs {
        worst = worst.max(spectral_norm(&(k0.response(w)? * i0.response(w)?)));
    }
    Ok(worst)
}

/// Data window embedded in zero padding, with its oracle projection.
#[derive(Debug, Clone)]
pub struct OracleProjection {
    pub t0: f64,
    pub dt: f64,
    /// Number of padding samples before the original window.
    pub lead: usize,
    pub p: usize,
    pub z: Vec<DVector<f64>>,
    pub zhat: Vec<DVector<f64>>,
    pub latent_v: Vec<DVector<f64>>,
}

impl OracleProjection {
    pub fn window(&self) -> Result<SignalWindow> {
        SignalWindow::from_z(self.t0, self.dt, self.p, &self.z)
    }
}

/// Padding length (samples) covering `time_constants` slow time constants of I₀.
pub fn default_padding(i0: &TransferEvaluator, dt: f64, time_constants: f64) -> usize {
    let rate = -spectral_abscissa(&i0.a);
    let rate = if rate > 0.0 { rate } else { 1.0 };
    (time_constants / (rate * dt)).ceil() as usize
}

/// Pad a window with `lead` zero samples before and `trail` after.
pub fn pad_window(window: &SignalWindow, lead: usize, trail: usize) -> Result<SignalWindow> {
    let d = window.p() + window.m();
    let mut z = vec![DVector::zeros(d); lead];
    z.extend(window.z_samples());
    z.extend(vec![DVector::zeros(d); trail]);
    SignalWindow::from_z(window.t0() - lead as f64 * window.dt(), window.dt(), window.p(), &z)
}

/// I₀I₀^∼ applied to a window padded with zeros on both sides.
pub fn orthogonal_project(i0: &TransferEvaluator, window: &SignalWindow, lead: usize, trail: usize) -> Result<OracleProjection> {
    let padded = pad_window(window, lead, trail)?;
    orthogonal_project_exact(i0, &padded, lead)
}

/// I₀I₀^∼ applied to the window as given (no extra padding).
pub fn orthogonal_project_exact(i0: &TransferEvaluator, window: &SignalWindow, lead: usize) -> Result<OracleProjection> {
    let z = window.z_samples();
    let v = i0.conjugate_apply(&z, window.dt())?;
    let zhat = i0.simulate(&v, &DVector::zeros(i0.states()), window.dt())?;
    Ok(OracleProjection { t0: window.t0(), dt: window.dt(), lead, p: window.p(), z, zhat, latent_v: v })
}

/// |‖z‖² − ‖ẑ‖² − ‖z − ẑ‖²| / max(‖z‖², floor).
pub fn pythagoras_check(z: &[DVector<f64>], zhat: &[DVector<f64>]) -> f64 {
    let nz: f64 = z.iter().map(|v| v.norm_squared()).sum();
    let nh: f64 = zhat.iter().map(|v| v.norm_squared()).sum();
    let nd: f64 = z.iter().zip(zhat).map(|(a, b)| (a - b).norm_squared()).sum();
    (nz - nh - nd).abs() / nz.max(1e-12)
}

/// |‖z − ẑ‖ − ‖r_y‖| / max(‖z‖, floor) with r_y from the normalized kernel
/// factor started at rest at the first sample.
pub fn observer_equivalence_check(k0: &TransferEvaluator, z: &[DVector<f64>], zhat: &[DVector<f64>], dt: f64) -> Result<f64> {
    let r = k0.simulate(z, &DVector::zeros(k0.states()), dt)?;
    let nz: f64 = z.iter().map(|v| v.norm_squared()).sum::<f64>().sqrt();
    let nd: f64 = z.iter().zip(zhat).map(|(a, b)| (a - b).norm_squared()).sum::<f64>().sqrt();
    let nr: f64 = r.iter().map(|v| v.norm_squared()).sum::<f64>().sqrt();
    Ok((nd - nr).abs() / nz.max(1e-12))
}
