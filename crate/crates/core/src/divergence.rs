//! Bregman divergences, evaluation functions, thresholds and decisions.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factorization::{simulate_image, SirRealization, SkrRealization};
use crate::projection::{hamiltonians_sir, skr_adjoint, SirProjectionResult, SkrProjectionResult};
use crate::signals::{half_energy, stack_samples, LatentWindow, SignalWindow, StackedVector};
use crate::systems::{ScalarFn, VecFn};

/// Smallest threshold used for zero-energy windows.
pub const THRESHOLD_FLOOR: f64 = 1e-12;

/// Strictly convex generator φ with its gradient.
#[derive(Clone)]
pub struct GeneratingFunction {
    value: ScalarFn,
    gradient: VecFn,
}

impl fmt::Debug for GeneratingFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("GeneratingFunction")
    }
}

impl GeneratingFunction {
    pub fn new(value: ScalarFn, gradient: VecFn) -> Self {
        Self { value, gradient }
    }

    /// ½‖a‖².
    pub fn quadratic() -> Self {
        Self::new(Arc::new(|a| 0.5 * a.norm_squared()), Arc::new(|a| a.clone()))
    }

    /// Σ aᵢ ln aᵢ on the positive orthant.
    pub fn negentropy() -> Self {
        Self::new(
            Arc::new(|a| {
                a.iter()
                    .map(|&x| match x {
                        x if x > 0.0 => x * x.ln(),
                        0.0 => 0.0,
                        _ => f64::NAN,
                    })
                    .sum()
            }),
            Arc::new(|a| a.map(|x| x.ln() + 1.0)),
        )
    }

    pub fn value(&self, a: &DVector<f64>) -> f64 {
        (self.value)(a)
    }

    pub fn gradient(&self, a: &DVector<f64>) -> DVector<f64> {
        (self.gradient)(a)
    }

    /// Random midpoint convexity test on `trials` triples drawn by `sample`.
    pub fn convexity_certificate<R: Rng>(&self, rng: &mut R, trials: usize, mut sample: impl FnMut(&mut R) -> DVector<f64>) -> bool {
        (0..trials).all(|_| {
            let (a, b) = (sample(rng), sample(rng));
            let th: f64 = rng.gen();
            let mid = &a * th + &b * (1.0 - th);
            self.value(&mid) <= th * self.value(&a) + (1.0 - th) * self.value(&b) + 1e-12
        })
    }
}

/// φ(a) − φ(b) − ∇φ(b)ᵀ(a − b).
pub fn bregman(phi: &GeneratingFunction, a: &DVector<f64>, b: &DVector<f64>) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch(format!("{} vs {}", a.len(), b.len())));
    }
    let d = phi.value(a) - phi.value(b) - phi.gradient(b).dot(&(a - b));
    if !d.is_finite() {
        return Err(Error::NonFiniteValue("divergence outside the generator's domain".into()));
    }
    Ok(d)
}

/// Divergence of the Legendre dual at the dual coordinates: the argument swap.
pub fn dual_bregman(phi: &GeneratingFunction, a: &DVector<f64>, b: &DVector<f64>) -> Result<f64> {
    bregman(phi, b, a)
}

/// Per-sample divergence ½‖z − ẑ‖², cross-checked against H₀(z) − H.
#[derive(Debug, Clone, PartialEq)]
pub struct PointwiseDivergence {
    pub series: Vec<f64>,
    /// Samples where H₀(z) − H came out negative through rounding.
    pub clamped: usize,
}

pub fn pointwise_divergence(z: &[DVector<f64>], zhat: &[DVector<f64>]) -> Result<PointwiseDivergence> {
    let (h, _) = hamiltonians_sir(z, zhat)?;
    let mut series = Vec::with_capacity(z.len());
    let mut clamped = 0;
    for k in 0..z.len() {
        let h0 = 0.5 * z[k].norm_squared();
        let via_h = h0 - h[k];
        let direct = 0.5 * (&z[k] - &zhat[k]).norm_squared();
        if (via_h - direct).abs() > 1e-9 * (1.0 + z[k].norm_squared()) {
            return Err(Error::FormulaDisagreement(format!(
                "sample {k}: H0 - H = {via_h:e}, half squared distance = {direct:e}"
            )));
        }
        if via_h < 0.0 {
            clamped += 1;
        }
        series.push(direct);
    }
    Ok(PointwiseDivergence { series, clamped })
}

/// J = ½z_Mᵀz_M + ½ẑ_Mᵀẑ_M − ẑ_Mᵀz_M, checked against the pointwise mean.
pub fn evaluate_j_sir(window: &SignalWindow, zhat: &[DVector<f64>]) -> Result<f64> {
    if window.is_empty() || zhat.is_empty() {
        return Err(Error::EmptyWindow);
    }
    let z = window.z_samples();
    if z.len() != zhat.len() {
        return Err(Error::LengthMismatch { left: z.len(), right: zhat.len() });
    }
    let (zm, zhm) = (stack_samples(&z), stack_samples(zhat));
    let j = (half_energy(&zm) + half_energy(&zhm) - zhm.entries.dot(&zm.entries)).max(0.0);
    let pw = pointwise_divergence(&z, zhat)?;
    let mean = pw.series.iter().sum::<f64>() / z.len() as f64;
    if (j - mean).abs() > 1e-12 * half_energy(&zm).max(1.0) {
        return Err(Error::FormulaDisagreement(format!("stacked J {j:e} vs pointwise mean {mean:e}")));
    }
    Ok(j)
}

pub fn evaluate_j_sir_result(window: &SignalWindow, result: &SirProjectionResult) -> Result<f64> {
    evaluate_j_sir(window, &result.zhat)
}

/// J = ½ ẑ_ΔMᵀ ẑ_ΔM.
pub fn evaluate_j_skr(zdelta: &[DVector<f64>]) -> Result<f64> {
    if zdelta.is_empty() {
        return Err(Error::EmptyWindow);
    }
    Ok(half_energy(&stack_samples(zdelta)))
}

pub fn evaluate_j_skr_result(result: &SkrProjectionResult) -> Result<f64> {
    evaluate_j_skr(&result.zdelta)
}

/// J_th = ½(1 − γ) z_Mᵀz_M.
pub fn threshold_sir(gamma: f64, zm: &StackedVector) -> Result<f64> {
    if !(0.5..=1.0).contains(&gamma) {
        return Err(Error::GammaOutOfRange(gamma));
    }
    Ok(((1.0 - gamma) * half_energy(zm)).max(THRESHOLD_FLOOR))
}

/// J_th = (α/2) z_Mᵀz_M.
pub fn threshold_skr(alpha: f64, zm: &StackedVector) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::AlphaOutOfRange(alpha));
    }
    Ok((alpha * half_energy(zm)).max(THRESHOLD_FLOOR))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    FaultFree,
    Faulty,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::FaultFree => "fault_free",
            Verdict::Faulty => "faulty",
        })
    }
}

pub fn decide(j: f64, j_th: f64) -> Verdict {
    if j > j_th {
        Verdict::Faulty
    } else {
        Verdict::FaultFree
    }
}

/// One evaluation window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    #[serde(rename = "J")]
    pub j: f64,
    #[serde(rename = "J_th")]
    pub j_th: f64,
    /// γ for the image-side test, α for the kernel-side test.
    pub gamma: f64,
    pub verdict: Verdict,
    #[serde(rename = "M")]
    pub m: usize,
    pub t_start: f64,
    pub t_end: f64,
    pub half_energy: f64,
    pub clamped_samples: usize,
    pub divergence_series: Vec<f64>,
}

fn zero_energy(zm: &StackedVector) -> bool {
    zm.entries.iter().all(|v| *v == 0.0)
}

/// Image-side detection on one window.
pub fn detect_sir(window: &SignalWindow, zhat: &[DVector<f64>], gamma: f64) -> Result<DetectionReport> {
    let j = evaluate_j_sir(window, zhat)?;
    let z = window.z_samples();
    let zm = stack_samples(&z);
    let j_th = threshold_sir(gamma, &zm)?;
    let pw = pointwise_divergence(&z, zhat)?;
    let verdict = if zero_energy(&zm) { Verdict::FaultFree } else { decide(j, j_th) };
    Ok(DetectionReport {
        j,
        j_th,
        gamma,
        verdict,
        m: window.len(),
        t_start: window.t0(),
        t_end: window.time(window.len() - 1),
        half_energy: half_energy(&zm),
        clamped_samples: pw.clamped,
        divergence_series: pw.series,
    })
}

/// Kernel-side detection on one window.
pub fn detect_skr(window: &SignalWindow, zdelta: &[DVector<f64>], alpha: f64) -> Result<DetectionReport> {
    let j = evaluate_j_skr(zdelta)?;
    if zdelta.len() != window.len() {
        return Err(Error::LengthMismatch { left: window.len(), right: zdelta.len() });
    }
    let zm = stack(window);
    let j_th = threshold_skr(alpha, &zm)?;
    let verdict = if zero_energy(&zm) { Verdict::FaultFree } else { decide(j, j_th) };
    Ok(DetectionReport {
        j,
        j_th,
        gamma: alpha,
        verdict,
        m: window.len(),
        t_start: window.t0(),
        t_end: window.time(window.len() - 1),
        half_energy: half_energy(&zm),
        clamped_samples: 0,
        divergence_series: zdelta.iter().map(|d| 0.5 * d.norm_squared()).collect(),
    })
}

fn stack(window: &SignalWindow) -> StackedVector {
    crate::signals::stack(window)
}

/// Outcome of a randomized geodesic-minimality sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct MinimalityReport {
    /// Divergence of the data from its projection.
    pub d_projection: f64,
    /// D[z:z₀] − D[z:ẑ] per candidate.
    pub margins: Vec<f64>,
    pub violations: usize,
    pub tolerance: f64,
}

impl MinimalityReport {
    pub fn min_margin(&self) -> f64 {
        self.margins.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Random latent: 5 sinusoids, random phases and frequencies in [0.02, 1] Hz,
/// scaled to RMS `rms` per channel.
pub fn random_smooth_latent<R: Rng>(rng: &mut R, t0: f64, dt: f64, len: usize, dim: usize, rms: f64) -> Result<LatentWindow> {
    let comps: Vec<Vec<(f64, f64, f64)>> = (0..dim)
        .map(|_| (0..5).map(|_| (rng.gen_range(0.2..1.0), rng.gen_range(0.02..1.0), rng.gen_range(0.0..2.0 * PI))).collect())
        .collect();
    let raw = LatentWindow::from_fn(t0, dt, len, |t| {
        DVector::from_fn(dim, |i, _| comps[i].iter().map(|(a, f, ph)| a * (2.0 * PI * f * t + ph).sin()).sum())
    })?;
    let cur = (raw.samples().iter().map(|v| v.norm_squared()).sum::<f64>() / (len * dim) as f64).sqrt();
    let scale = if cur > 0.0 { rms / cur } else { 0.0 };
    LatentWindow::new(t0, dt, raw.samples().iter().map(|v| v * scale).collect())
}

/// Stacked three-term divergence ½zᵀz + ½z₀ᵀz₀ − zᵀz₀.
pub fn stacked_divergence(z: &[DVector<f64>], z0: &[DVector<f64>]) -> f64 {
    let (a, b) = (stack_samples(z), stack_samples(z0));
    half_energy(&a) + half_energy(&b) - a.entries.dot(&b.entries)
}

/// Compare D[z:ẑ] against image-manifold candidates z₀ = Σ_I(v₀) from x0.
pub fn minimality_check<R: Rng>(
    window: &SignalWindow,
    result: &SirProjectionResult,
    sir: &SirRealization,
    x0: &DVector<f64>,
    n_candidates: usize,
    rng: &mut R,
) -> Result<MinimalityReport> {
    let z = window.z_samples();
    let d_projection = stacked_divergence(&z, &result.zhat);
    let scale = half_energy(&stack_samples(&z)).max(1e-12);
    let rms = (z.iter().map(|v| v.norm_squared()).sum::<f64>() / (z.len() * sir.p()) as f64).sqrt();
    let tolerance = 1e-8 * scale;
    let mut margins = Vec::with_capacity(n_candidates);
    let mut violations = 0;
    for _ in 0..n_candidates {
        let v0 = random_smooth_latent(rng, window.t0(), window.dt(), window.len(), sir.p(), rms)?;
        let z0 = simulate_image(sir, &v0, x0)?;
        let margin = stacked_divergence(&z, &z0) - d_projection;
        if margin < -tolerance {
            violations += 1;
        }
        margins.push(margin);
    }
    Ok(MinimalityReport { d_projection, margins, violations, tolerance })
}

/// Same as [`minimality_check`] but fails on the first violation.
pub fn assert_minimality<R: Rng>(
    window: &SignalWindow,
    result: &SirProjectionResult,
    sir: &SirRealization,
    x0: &DVector<f64>,
    n_candidates: usize,
    rng: &mut R,
) -> Result<MinimalityReport> {
    let rep = minimality_check(window, result, sir, x0, n_candidates, rng)?;
    if let Some((i, m)) = rep.margins.iter().enumerate().find(|(_, m)| **m < -rep.tolerance) {
        return Err(Error::MinimalityViolated { candidate: i, margin: *m });
    }
    Ok(rep)
}

/// Kernel-side counterpart: candidates Δz₀ are adjoint responses to random
/// residual signals along the same observer trajectory.
pub fn minimality_check_skr<R: Rng>(
    window: &SignalWindow,
    result: &SkrProjectionResult,
    skr: &SkrRealization,
    n_candidates: usize,
    rng: &mut R,
) -> Result<MinimalityReport> {
    let z = window.z_samples();
    let d_projection = stacked_divergence(&z, &result.zdelta);
    let scale = half_energy(&stack_samples(&z)).max(1e-12);
    let rms = (result.residual_r.iter().map(|v| v.norm_squared()).sum::<f64>() / (z.len() * skr.m()) as f64)
        .sqrt()
        .max(1e-6);
    let tolerance = 1e-8 * scale;
    let mut margins = Vec::with_capacity(n_candidates);
    let mut violations = 0;
    for _ in 0..n_candidates {
        let r0 = random_smooth_latent(rng, window.t0(), window.dt(), window.len(), skr.m(), rms)?;
        let (dz0, _) = skr_adjoint(skr, r0.samples(), &result.state_xhat, window)?;
        let margin = stacked_divergence(&z, &dz0) - d_projection;
        if margin < -tolerance {
            violations += 1;
        }
        margins.push(margin);
    }
    Ok(MinimalityReport { d_projection, margins, violations, tolerance })
}
