//! Fixed-step RK4 helpers. Inputs are held first-order between samples: the
//! vector field receives the fractional position `s` in [0, 1] inside a step.

use nalgebra::DVector;

use crate::error::{Error, Result};

pub(crate) const DIVERGENCE_BOUND: f64 = 1e12;

/// One classical RK4 step of length `h` for x' = f(s, x), s the fraction of the step.
pub(crate) fn rk4_step<F>(f: &F, x: &DVector<f64>, h: f64) -> DVector<f64>
where
    F: Fn(f64, &DVector<f64>) -> DVector<f64>,
{
    let k1 = f(0.0, x);
    let k2 = f(0.5, &(x + &k1 * (0.5 * h)));
    let k3 = f(0.5, &(x + &k2 * (0.5 * h)));
    let k4 = f(1.0, &(x + &k3 * h));
    x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
}

pub(crate) fn lerp(a: &DVector<f64>, b: &DVector<f64>, s: f64) -> DVector<f64> {
    if s == 0.0 {
        a.clone()
    } else if s == 1.0 {
        b.clone()
    } else {
        a * (1.0 - s) + b * s
    }
}

pub(crate) fn guard(x: &DVector<f64>, step: usize) -> Result<()> {
    if x.iter().all(|v| v.is_finite() && v.abs() <= DIVERGENCE_BOUND) {
        Ok(())
    } else {
        Err(Error::IntegrationDiverged { step })
    }
}
