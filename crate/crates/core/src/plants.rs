//! Built-in plants bundled with their analytic storage functions.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::Result;
use crate::factorization::{
    lti_factorization, lti_sir, lti_skr, normalize_sir, normalize_skr, LtiFactorization, SirRealization, SkrRealization,
    StorageFunction,
};
use crate::systems::{lift_lti, scalar_cubic, AffineSystem, LtiSystem, MatFn};

/// A plant together with the data needed to normalize its SIR and SKR.
#[derive(Clone)]
pub struct PlantModel {
    pub name: String,
    pub system: AffineSystem,
    pub lti: Option<(LtiSystem, LtiFactorization)>,
    sir_storage: Option<StorageFunction>,
    skr_storage: Option<StorageFunction>,
    skr_gain: Option<MatFn>,
}

impl std::fmt::Debug for PlantModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PlantModel").field("name", &self.name).finish()
    }
}

impl PlantModel {
    pub fn sir(&self) -> Result<SirRealization> {
        match (&self.lti, &self.sir_storage) {
            (_, Some(p)) => normalize_sir(self.system.clone(), p.clone()),
            (Some((sys, fac)), None) => lti_sir(sys, fac),
            (None, None) => unreachable!("every model carries a SIR storage or LTI data"),
        }
    }

    pub fn skr(&self) -> Result<SkrRealization> {
        match (&self.lti, &self.skr_storage, &self.skr_gain) {
            (_, Some(v), Some(l)) => normalize_skr(self.system.clone(), v.clone(), l.clone()),
            (Some((sys, fac)), _, _) => lti_skr(sys, fac),
            _ => unreachable!("every model carries a SKR storage or LTI data"),
        }
    }

    pub fn sir_storage(&self) -> Option<&StorageFunction> {
        self.sir_storage.as_ref()
    }

    pub fn skr_storage(&self) -> Option<&StorageFunction> {
        self.skr_storage.as_ref()
    }

    /// Slowest decay rate of the normalized closed loops near the origin.
    pub fn decay_rate(&self) -> f64 {
        match &self.lti {
            Some((sys, fac)) => {
                let a1 = crate::linalg::spectral_abscissa(&(&sys.a + &sys.b * &fac.f));
                let a2 = crate::linalg::spectral_abscissa(&(&sys.a - &fac.l0 * &sys.c));
                -(a1.max(a2))
            }
            None => std::f64::consts::SQRT_2,
        }
    }
}

const R2: f64 = std::f64::consts::SQRT_2;

/// A = −1, B = C = 1, D = 0 with its closed-form Riccati storages.
pub fn scalar_lti_model() -> PlantModel {
    let sys = LtiSystem::scalar();
    let fac = lti_factorization(&sys).expect("scalar plant factorizes");
    PlantModel {
        name: "scalar_lti".into(),
        system: lift_lti(&sys),
        lti: Some((sys, fac)),
        sir_storage: Some(StorageFunction::new(
            Arc::new(|x| 0.5 * (R2 - 1.0) * x[0] * x[0]),
            Arc::new(|x| x * (R2 - 1.0)),
        )),
        skr_storage: Some(StorageFunction::new(
            Arc::new(|x| 0.5 * (R2 + 1.0) * x[0] * x[0]),
            Arc::new(|x| x * (R2 + 1.0)),
        )),
        skr_gain: Some(Arc::new(|_| DMatrix::from_element(1, 1, R2 - 1.0))),
    }
}

/// s = 1 + x², q = sqrt(s² + 1).
fn sq(x: f64) -> (f64, f64) {
    let s = 1.0 + x * x;
    (s, (s * s + 1.0).sqrt())
}

/// x' = −x − x³ + u, y = x with closed-form HJE solutions.
pub fn scalar_cubic_model() -> PlantModel {
    // P_x = x (q − s) = x / (q + s)
    let p_value = |x: &DVector<f64>| {
        let (s, q) = sq(x[0]);
        let (s1, q1) = sq(0.0);
        0.25 * (s * q + s.asinh() - s * s) - 0.25 * (s1 * q1 + s1.asinh() - s1 * s1)
    };
    let p_grad = |x: &DVector<f64>| {
        let (s, q) = sq(x[0]);
        DVector::from_element(1, x[0] / (q + s))
    };
    // V_x = x (s + q)
    let v_value = |x: &DVector<f64>| {
        let (s, q) = sq(x[0]);
        let (s1, q1) = sq(0.0);
        0.25 * (s * s + s * q + s.asinh()) - 0.25 * (s1 * s1 + s1 * q1 + s1.asinh())
    };
    let v_grad = |x: &DVector<f64>| {
        let (s, q) = sq(x[0]);
        DVector::from_element(1, x[0] * (s + q))
    };
    PlantModel {
        name: "scalar_cubic".into(),
        system: scalar_cubic(),
        lti: None,
        sir_storage: Some(StorageFunction::new(Arc::new(p_value), Arc::new(p_grad))),
        skr_storage: Some(StorageFunction::new(Arc::new(v_value), Arc::new(v_grad))),
        skr_gain: Some(Arc::new(|x| {
            let (s, q) = sq(x[0]);
            DMatrix::from_element(1, 1, 1.0 / (s + q))
        })),
    }
}

/// Arbitrary LTI plant normalized through its Riccati equations.
pub fn lti_model(name: &str, sys: LtiSystem) -> Result<PlantModel> {
    let fac = lti_factorization(&sys)?;
    Ok(PlantModel {
        name: name.into(),
        system: lift_lti(&sys),
        lti: Some((sys, fac)),
        sir_storage: None,
        skr_storage: None,
        skr_gain: None,
    })
}

pub fn builtin(name: &str) -> Option<PlantModel> {
    match name {
        "scalar_lti" => Some(scalar_lti_model()),
        "scalar_cubic" => Some(scalar_cubic_model()),
        _ => None,
    }
}
