//! Hamiltonian projection systems built on the normalized SIR and SKR.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::factorization::{SirRealization, SkrRealization};
use crate::ode::{guard, lerp, rk4_step};
use crate::signals::SignalWindow;
use crate::systems::{fd_gradient, fd_jacobian_auto};

/// How the SIR co-state is closed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SirClosure {
    /// λ = P_x(x): causal single pass.
    Algebraic,
    /// Backward co-state pass with λ(t1) = 0 alternated with forward state passes.
    Adjoint { max_sweeps: usize, tol: f64 },
}

impl SirClosure {
    pub fn adjoint() -> Self {
        SirClosure::Adjoint { max_sweeps: 50, tol: 1e-11 }
    }
}

/// How the SKR co-state is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SkrCostate {
    /// Backward adjoint pass with λ(t1) = 0.
    Adjoint,
    /// λ = V_x̂(x̂).
    Stationary,
}

#[derive(Debug, Clone)]
pub struct SirProjectionResult {
    pub t0: f64,
    pub dt: f64,
    /// ẑ = (û; ŷ)
    pub zhat: Vec<DVector<f64>>,
    pub latent_v: Vec<DVector<f64>>,
    pub state_x: Vec<DVector<f64>>,
    pub costate: Vec<DVector<f64>>,
    /// ẑᵀz − ½ẑᵀẑ
    pub h_series: Vec<f64>,
    /// ½ẑᵀẑ
    pub hdual_series: Vec<f64>,
    /// H(x, λ, z) evaluated directly from the Hamiltonian function.
    pub h_direct: Vec<f64>,
    pub sweeps: usize,
}

#[derive(Debug, Clone)]
pub struct SkrForward {
    pub residual_r: Vec<DVector<f64>>,
    pub state_xhat: Vec<DVector<f64>>,
}

#[derive(Debug, Clone)]
pub struct SkrProjectionResult {
    pub t0: f64,
    pub dt: f64,
    pub zdelta: Vec<DVector<f64>>,
    pub residual_r: Vec<DVector<f64>>,
    pub costate: Vec<DVector<f64>>,
    pub state_xhat: Vec<DVector<f64>>,
}

/// ½ zᵀD_I D_Iᵀz + c_Iᵀz + λᵀ(a_I + ½ B_I B_Iᵀλ + B_I D_Iᵀ z).
pub fn sir_hamiltonian(sir: &SirRealization, x: &DVector<f64>, lam: &DVector<f64>, z: &DVector<f64>) -> f64 {
    let (bi, di) = (sir.b_i(x), sir.d_i(x));
    let dtz = di.transpose() * z;
    let btl = bi.transpose() * lam;
    0.5 * dtz.dot(&dtz) + sir.c_i(x).dot(z) + lam.dot(&sir.a_i(x)) + 0.5 * btl.dot(&btl) + btl.dot(&dtz)
}

/// ∂H/∂λ of the SIR Hamiltonian.
fn sir_state_field(sir: &SirRealization, x: &DVector<f64>, lam: &DVector<f64>, z: &DVector<f64>) -> DVector<f64> {
    let (bi, di) = (sir.b_i(x), sir.d_i(x));
    sir.a_i(x) + &bi * (bi.transpose() * lam + di.transpose() * z)
}

/// (latent v, output ẑ = ∂H/∂z).
fn sir_outputs(sir: &SirRealization, x: &DVector<f64>, lam: &DVector<f64>, z: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
    let (bi, di) = (sir.b_i(x), sir.d_i(x));
    let v = bi.transpose() * lam + di.transpose() * z;
    let zh = sir.c_i(x) + di * &v;
    (v, zh)
}

/// ∇_x H(x, λ, z) by central differences.
pub fn sir_hamiltonian_gradient(
    sir: &SirRealization,
    x: &DVector<f64>,
    lam: &DVector<f64>,
    z: &DVector<f64>,
) -> Result<DVector<f64>> {
    fd_gradient(|x| sir_hamiltonian(sir, x, lam, z), x)
}

fn check_data(n_expected: usize, data: &SignalWindow, p: usize, m: usize, x0: &DVector<f64>) -> Result<()> {
    if data.p() != p || data.m() != m {
        return Err(Error::GridMismatch(format!(
            "data has (p, m) = ({}, {}), realization expects ({p}, {m})",
            data.p(),
            data.m()
        )));
    }
    if x0.len() != n_expected {
        return Err(Error::DimensionMismatch(format!("initial state has dim {} (expected {n_expected})", x0.len())));
    }
    Ok(())
}

pub fn sir_project(sir: &SirRealization, data: &SignalWindow, x0: &DVector<f64>) -> Result<SirProjectionResult> {
    sir_project_with(sir, data, x0, SirClosure::Algebraic)
}

pub fn sir_project_with(
    sir: &SirRealization,
    data: &SignalWindow,
    x0: &DVector<f64>,
    closure: SirClosure,
) -> Result<SirProjectionResult> {
    if !sir.is_normalized() {
        return Err(Error::NotNormalized);
    }
    let storage = sir.storage().ok_or(Error::NotNormalized)?;
    check_data(sir.n(), data, sir.p(), sir.m(), x0)?;
    let z = data.z_samples();
    let h = data.dt();
    let mlen = z.len();

    let (xs, lams, sweeps) = match closure {
        SirClosure::Algebraic => {
            let mut xs = Vec::with_capacity(mlen);
            let mut x = x0.clone();
            guard(&x, 0)?;
            for k in 0..mlen {
                xs.push(x.clone());
                if k + 1 < mlen {
                    let f = |s: f64, x: &DVector<f64>| sir_state_field(sir, x, &storage.gradient(x), &lerp(&z[k], &z[k + 1], s));
                    x = rk4_step(&f, &x, h);
                    guard(&x, k + 1)?;
                }
            }
            let lams = xs.iter().map(|x| storage.gradient(x)).collect();
            (xs, lams, 0)
        }
        SirClosure::Adjoint { max_sweeps, tol } => {
            let init = sir_project_with(sir, data, x0, SirClosure::Algebraic)?;
            let mut xs = init.state_x;
            let mut sweeps = 0;
            loop {
                sweeps += 1;
                let lams = sir_backward(sir, &xs, &z, h)?;
                let new_xs = sir_forward_given_costate(sir, x0, &lams, &z, h)?;
                let scale = 1.0 + new_xs.iter().map(|x| x.amax()).fold(0.0, f64::max);
                let change = xs.iter().zip(&new_xs).map(|(a, b)| (a - b).amax()).fold(0.0, f64::max);
                xs = new_xs;
                if change <= tol * scale {
                    break (xs, lams, sweeps);
                }
                if sweeps >= max_sweeps {
                    return Err(Error::SweepNotConverged { change, sweeps });
                }
            }
        }
    };

    let mut zhat = Vec::with_capacity(mlen);
    let mut latent_v = Vec::with_capacity(mlen);
    let mut h_direct = Vec::with_capacity(mlen);
    for k in 0..mlen {
        let (v, zh) = sir_outputs(sir, &xs[k], &lams[k], &z[k]);
        h_direct.push(sir_hamiltonian(sir, &xs[k], &lams[k], &z[k]));
        latent_v.push(v);
        zhat.push(zh);
    }
    let (h_series, hdual_series) = hamiltonians_sir(&z, &zhat)?;
    Ok(SirProjectionResult {
        t0: data.t0(),
        dt: h,
        zhat,
        latent_v,
        state_x: xs,
        costate: lams,
        h_series,
        hdual_series,
        h_direct,
        sweeps,
    })
}

/// λ' = −∇_x H along a fixed state trajectory, λ(t1) = 0, integrated backward.
fn sir_backward(sir: &SirRealization, xs: &[DVector<f64>], z: &[DVector<f64>], h: f64) -> Result<Vec<DVector<f64>>> {
    let mlen = xs.len();
    let mut lams = vec![DVector::zeros(sir.n()); mlen];
    for k in (0..mlen.saturating_sub(1)).rev() {
        // s runs from 1 (t_{k+1}) to 0 (t_k)
        let f = |s: f64, lam: &DVector<f64>| {
            let t = 1.0 - s;
            let x = lerp(&xs[k], &xs[k + 1], t);
            let zt = lerp(&z[k], &z[k + 1], t);
            sir_hamiltonian_gradient(sir, &x, lam, &zt).unwrap_or_else(|_| DVector::from_element(lam.len(), f64::NAN))
        };
        // dλ/ds = +∇_x H because s = −t
        lams[k] = rk4_step(&f, &lams[k + 1], h);
        guard(&lams[k], k)?;
    }
    Ok(lams)
}

fn sir_forward_given_costate(
    sir: &SirRealization,
    x0: &DVector<f64>,
    lams: &[DVector<f64>],
    z: &[DVector<f64>],
    h: f64,
) -> Result<Vec<DVector<f64>>> {
    let mlen = z.len();
    let mut xs = Vec::with_capacity(mlen);
    let mut x = x0.clone();
    for k in 0..mlen {
        xs.push(x.clone());
        if k + 1 < mlen {
            let f = |s: f64, x: &DVector<f64>| sir_state_field(sir, x, &lerp(&lams[k], &lams[k + 1], s), &lerp(&z[k], &z[k + 1], s));
            x = rk4_step(&f, &x, h);
            guard(&x, k + 1)?;
        }
    }
    Ok(xs)
}

/// H = ẑᵀz − ½ẑᵀẑ and H× = ½ẑᵀẑ per sample.
pub fn hamiltonians_sir(z: &[DVector<f64>], zhat: &[DVector<f64>]) -> Result<(Vec<f64>, Vec<f64>)> {
    if z.len() != zhat.len() {
        return Err(Error::LengthMismatch { left: z.len(), right: zhat.len() });
    }
    let mut h = Vec::with_capacity(z.len());
    let mut hd = Vec::with_capacity(z.len());
    for (a, b) in z.iter().zip(zhat) {
        if a.len() != b.len() {
            return Err(Error::DimensionMismatch("z and ẑ sample lengths differ".into()));
        }
        let half = 0.5 * b.dot(b);
        h.push(b.dot(a) - half);
        hd.push(half);
    }
    Ok((h, hd))
}

/// max_k |H(k) + H×(k) − ẑᵀz|.
pub fn legendre_consistency_check(result: &SirProjectionResult, data: &SignalWindow) -> f64 {
    (0..data.len())
        .map(|k| (result.h_series[k] + result.hdual_series[k] - result.zhat[k].dot(&data.z(k))).abs())
        .fold(0.0, f64::max)
}

/// max_k |H(x, λ, z) − (ẑᵀz − ½ẑᵀẑ)|: the closed form of the Hamiltonian
/// against its direct evaluation. Zero up to rounding for the algebraic closure.
pub fn hamiltonian_form_defect(result: &SirProjectionResult) -> f64 {
    result.h_direct.iter().zip(&result.h_series).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
}

/// Co-state closure check along an algebraic-closure run: compares
/// d/dt P_x(x(t)) (central differences in time) with −∇_x H(x, P_x(x), z).
/// Returns max |difference| / max |∇_x H|.
pub fn costate_closure_defect(sir: &SirRealization, data: &SignalWindow, result: &SirProjectionResult) -> Result<f64> {
    let storage = sir.storage().ok_or(Error::NotNormalized)?;
    let mlen = result.state_x.len();
    if mlen < 3 {
        return Ok(0.0);
    }
    let lam: Vec<_> = result.state_x.iter().map(|x| storage.gradient(x)).collect();
    let mut worst: f64 = 0.0;
    let mut scale: f64 = 0.0;
    for k in 1..mlen - 1 {
        let dl = (&lam[k + 1] - &lam[k - 1]) / (2.0 * result.dt);
        let rhs = -sir_hamiltonian_gradient(sir, &result.state_x[k], &lam[k], &data.z(k))?;
        worst = worst.max((dl - &rhs).amax());
        scale = scale.max(rhs.amax());
    }
    Ok(if scale > 1e-12 { worst / scale } else { worst })
}

/// ½‖c_K + D_K z‖² + λᵀ(a_K + B_K z).
pub fn skr_hamiltonian(skr: &SkrRealization, x: &DVector<f64>, lam: &DVector<f64>, z: &DVector<f64>) -> f64 {
    let r = skr.c_k(x) + skr.d_k(x) * z;
    0.5 * r.dot(&r) + lam.dot(&(skr.a_k(x) + skr.b_k(x) * z))
}

/// Observer pass. Inside each step the innovation r0 = y − c(x̂) − D u is held
/// linearly between its sample values (implicit in the end value, resolved by
/// fixed-point iteration), so nominal data give r0 ≡ 0 exactly.
pub fn skr_forward(skr: &SkrRealization, data: &SignalWindow, xhat0: &DVector<f64>) -> Result<SkrForward> {
    if !skr.is_normalized() {
        return Err(Error::NotNormalized);
    }
    observer_pass(skr, data, xhat0)
}

/// Observer pass without the normalization precondition (used for gain sweeps).
pub(crate) fn observer_pass(skr: &SkrRealization, data: &SignalWindow, xhat0: &DVector<f64>) -> Result<SkrForward> {
    check_data(skr.n(), data, skr.p(), skr.m(), xhat0)?;
    let base = skr.base();
    let (u, y) = (data.u(), data.y());
    let mlen = data.len();
    let h = data.dt();
    let innovation = |k: usize, x: &DVector<f64>| &y[k] - base.c(x) - base.d(x) * &u[k];

    let mut xs = Vec::with_capacity(mlen);
    let mut r0s = Vec::with_capacity(mlen);
    let mut x = xhat0.clone();
    guard(&x, 0)?;
    let mut r0 = innovation(0, &x);
    for k in 0..mlen {
        xs.push(x.clone());
        r0s.push(r0.clone());
        if k + 1 == mlen {
            break;
        }
        let mut r0_next = DVector::zeros(skr.m());
        let mut x_next = x.clone();
        for _ in 0..50 {
            let f = |s: f64, xh: &DVector<f64>| {
                base.field(xh, &lerp(&u[k], &u[k + 1], s)) + skr.l(xh) * lerp(&r0, &r0_next, s)
            };
            x_next = rk4_step(&f, &x, h);
            guard(&x_next, k + 1)?;
            let updated = innovation(k + 1, &x_next);
            let change = (&updated - &r0_next).amax();
            r0_next = updated;
            if change <= 1e-15 * (1.0 + r0_next.amax()) {
                break;
            }
        }
        x = x_next;
        r0 = r0_next;
    }
    let residual_r = xs.iter().zip(&r0s).map(|(x, r0)| skr.w(x) * r0).collect();
    Ok(SkrForward { residual_r, state_xhat: xs })
}

/// Backward co-state pass λ' = −∇_x̂ H with λ(t1) = 0; returns (ẑ_Δ, λ).
pub fn skr_adjoint(
    skr: &SkrRealization,
    residual_r: &[DVector<f64>],
    state_xhat: &[DVector<f64>],
    data: &SignalWindow,
) -> Result<(Vec<DVector<f64>>, Vec<DVector<f64>>)> {
    let mlen = data.len();
    if residual_r.len() != mlen || state_xhat.len() != mlen {
        return Err(Error::GridMismatch(format!(
            "forward pass has {} samples, data has {mlen}",
            residual_r.len()
        )));
    }
    let z = data.z_samples();
    let h = data.dt();
    let mut lams = vec![DVector::zeros(skr.n()); mlen];
    for k in (0..mlen.saturating_sub(1)).rev() {
        let f = |s: f64, lam: &DVector<f64>| {
            let t = 1.0 - s;
            let x = lerp(&state_xhat[k], &state_xhat[k + 1], t);
            let zt = lerp(&z[k], &z[k + 1], t);
            let rt = lerp(&residual_r[k], &residual_r[k + 1], t);
            skr_costate_gradient(skr, &x, lam, &zt, &rt)
        };
        lams[k] = rk4_step(&f, &lams[k + 1], h);
        guard(&lams[k], k)?;
    }
    let zdelta = (0..mlen).map(|k| skr_output(skr, &state_xhat[k], &lams[k], &residual_r[k])).collect();
    Ok((zdelta, lams))
}

/// (∂(a_K + B_K z)/∂x̂)ᵀ λ + (∂(c_K + D_K z)/∂x̂)ᵀ r: the co-state field with the
/// adjoint port driven by the residual r.
fn skr_costate_gradient(
    skr: &SkrRealization,
    x: &DVector<f64>,
    lam: &DVector<f64>,
    z: &DVector<f64>,
    r: &DVector<f64>,
) -> DVector<f64> {
    let jf = fd_jacobian_auto(|x| skr.a_k(x) + skr.b_k(x) * z, x);
    let jg = fd_jacobian_auto(|x| skr.c_k(x) + skr.d_k(x) * z, x);
    match (jf, jg) {
        (Ok(jf), Ok(jg)) => jf.transpose() * lam + jg.transpose() * r,
        _ => DVector::from_element(x.len(), f64::NAN),
    }
}

fn skr_output(skr: &SkrRealization, x: &DVector<f64>, lam: &DVector<f64>, r: &DVector<f64>) -> DVector<f64> {
    skr.b_k(x).transpose() * lam + skr.d_k(x).transpose() * r
}

pub fn skr_project(skr: &SkrRealization, data: &SignalWindow, xhat0: &DVector<f64>) -> Result<SkrProjectionResult> {
    skr_project_with(skr, data, xhat0, SkrCostate::Adjoint)
}

pub fn skr_project_with(
    skr: &SkrRealization,
    data: &SignalWindow,
    xhat0: &DVector<f64>,
    mode: SkrCostate,
) -> Result<SkrProjectionResult> {
    if data.is_empty() {
        return Err(Error::EmptyWindow);
    }
    let fwd = skr_forward(skr, data, xhat0)?;
    let (zdelta, costate) = match mode {
        SkrCostate::Adjoint => skr_adjoint(skr, &fwd.residual_r, &fwd.state_xhat, data)?,
        SkrCostate::Stationary => {
            let storage = skr.storage().ok_or(Error::NotNormalized)?;
            let lams: Vec<_> = fwd.state_xhat.iter().map(|x| storage.gradient(x)).collect();
            let zd = (0..data.len()).map(|k| skr_output(skr, &fwd.state_xhat[k], &lams[k], &fwd.residual_r[k])).collect();
            (zd, lams)
        }
    };
    Ok(SkrProjectionResult {
        t0: data.t0(),
        dt: data.dt(),
        zdelta,
        residual_r: fwd.residual_r,
        costate,
        state_xhat: fwd.state_xhat,
    })
}

/// Sup-norm relative difference max_k |a_k − b_k| / max_k |b_k| (absolute below 1e-12).
pub fn relative_sup_error(a: &[DVector<f64>], b: &[DVector<f64>]) -> f64 {
    let num = a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max);
    let den = b.iter().map(|y| y.norm()).fold(0.0, f64::max);
    if den > 1e-12 {
        num / den
    } else {
        num
    }
}
