//! Stable image/kernel representations, their normalization and verification.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{care, inv_sqrt_sym, is_hurwitz, spectral_abscissa};
use crate::ode::{guard, lerp, rk4_step};
use crate::signals::LatentWindow;
use crate::systems::{fd_gradient, lift_lti, AffineSystem, LtiSystem, MatFn, ScalarFn, VecFn};

/// Box [lo, hi]^n sampled with `points` values per coordinate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeBox {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
}

impl Default for ProbeBox {
    fn default() -> Self {
        Self { lo: -2.0, hi: 2.0, points: 21 }
    }
}

impl ProbeBox {
    /// Full tensor grid while it stays below ~10^4 points, otherwise the
    /// coordinate axes plus the main diagonal.
    pub fn states(&self, n: usize) -> Vec<DVector<f64>> {
        let pts: Vec<f64> = if self.points <= 1 {
            vec![0.5 * (self.lo + self.hi)]
        } else {
            (0..self.points)
                .map(|i| self.lo + (self.hi - self.lo) * i as f64 / (self.points - 1) as f64)
                .collect()
        };
        let total = (pts.len() as f64).powi(n as i32);
        if total <= 10_000.0 {
            let mut out = vec![DVector::zeros(n)];
            for j in 0..n {
                let mut next = Vec::with_capacity(out.len() * pts.len());
                for x in &out {
                    for &v in &pts {
                        let mut y = x.clone();
                        y[j] = v;
                        next.push(y);
                    }
                }
                out = next;
            }
            out
        } else {
            let mut out = Vec::new();
            for j in 0..n {
                for &v in &pts {
                    let mut x = DVector::zeros(n);
                    x[j] = v;
                    out.push(x);
                }
            }
            out.extend(pts.iter().map(|&v| DVector::from_element(n, v)));
            out
        }
    }
}

/// Scalar storage field with its gradient.
#[derive(Clone)]
pub struct StorageFunction {
    value: ScalarFn,
    gradient: VecFn,
}

impl fmt::Debug for StorageFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("StorageFunction")
    }
}

impl StorageFunction {
    pub fn new(value: ScalarFn, gradient: VecFn) -> Self {
        Self { value, gradient }
    }

    /// ½ xᵀ X x.
    pub fn quadratic(x: DMatrix<f64>) -> Self {
        let x2 = x.clone();
        Self {
            value: Arc::new(move |v| 0.5 * v.dot(&(&x * v))),
            gradient: Arc::new(move |v| &x2 * v),
        }
    }

    pub fn value(&self, x: &DVector<f64>) -> f64 {
        (self.value)(x)
    }

    pub fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        (self.gradient)(x)
    }

    /// Same value, gradient multiplied by `scale` (used to corrupt a storage on purpose).
    pub fn with_scaled_gradient(&self, scale: f64) -> Self {
        let g = self.gradient.clone();
        Self { value: self.value.clone(), gradient: Arc::new(move |x| g(x) * scale) }
    }

    /// max |gradient − central differences of value| over the probes.
    pub fn gradient_defect(&self, probes: &[DVector<f64>]) -> f64 {
        probes
            .iter()
            .map(|x| match fd_gradient(|x| self.value(x), x) {
                Ok(fd) => (fd - self.gradient(x)).amax(),
                Err(_) => f64::INFINITY,
            })
            .fold(0.0, f64::max)
    }

    pub fn min_value(&self, probes: &[DVector<f64>]) -> f64 {
        probes.iter().map(|x| self.value(x)).fold(f64::INFINITY, f64::min)
    }
}

/// Image representation x' = a_I + B_I v, z = (u; y) = c_I + D_I v.
#[derive(Clone)]
pub struct SirRealization {
    base: AffineSystem,
    g: VecFn,
    v: MatFn,
    normalized: bool,
    storage: Option<StorageFunction>,
}

/// Kernel representation x̂' = a_K + B_K z, r_y = c_K + D_K z.
#[derive(Clone)]
pub struct SkrRealization {
    base: AffineSystem,
    l: MatFn,
    w: MatFn,
    normalized: bool,
    storage: Option<StorageFunction>,
}

impl fmt::Debug for SirRealization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SirRealization").field("base", &self.base).field("normalized", &self.normalized).finish()
    }
}

impl fmt::Debug for SkrRealization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SkrRealization").field("base", &self.base).field("normalized", &self.normalized).finish()
    }
}

impl SirRealization {
    pub fn base(&self) -> &AffineSystem {
        &self.base
    }
    pub fn is_normalized(&self) -> bool {
        self.normalized
    }
    pub fn storage(&self) -> Option<&StorageFunction> {
        self.storage.as_ref()
    }
    pub fn n(&self) -> usize {
        self.base.n()
    }
    pub fn p(&self) -> usize {
        self.base.p()
    }
    pub fn m(&self) -> usize {
        self.base.m()
    }
    pub fn g(&self, x: &DVector<f64>) -> DVector<f64> {
        (self.g)(x)
    }
    pub fn v(&self, x: &DVector<f64>) -> DMatrix<f64> {
        (self.v)(x)
    }
    pub fn a_i(&self, x: &DVector<f64>) -> DVector<f64> {
        self.base.a(x) + self.base.b(x) * self.g(x)
    }
    pub fn b_i(&self, x: &DVector<f64>) -> DMatrix<f64> {
        self.base.b(x) * self.v(x)
    }
    pub fn c_i(&self, x: &DVector<f64>) -> DVector<f64> {
        let g = self.g(x);
        let y = self.base.c(x) + self.base.d(x) * &g;
        stack2(&g, &y)
    }
    pub fn d_i(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let v = self.v(x);
        let dv = self.base.d(x) * &v;
        stack_rows(&v, &dv)
    }

    /// Replace the storage (keeps g and V). Used to probe corrupted closures.
    pub fn with_storage(&self, storage: StorageFunction) -> Self {
        Self { storage: Some(storage), ..self.clone() }
    }
}

impl SkrRealization {
    pub fn base(&self) -> &AffineSystem {
        &self.base
    }
    pub fn is_normalized(&self) -> bool {
        self.normalized
    }
    pub fn storage(&self) -> Option<&StorageFunction> {
        self.storage.as_ref()
    }
    pub fn n(&self) -> usize {
        self.base.n()
    }
    pub fn p(&self) -> usize {
        self.base.p()
    }
    pub fn m(&self) -> usize {
        self.base.m()
    }
    pub fn l(&self, x: &DVector<f64>) -> DMatrix<f64> {
        (self.l)(x)
    }
    pub fn w(&self, x: &DVector<f64>) -> DMatrix<f64> {
        (self.w)(x)
    }
    pub fn a_k(&self, x: &DVector<f64>) -> DVector<f64> {
        self.base.a(x) - self.l(x) * self.base.c(x)
    }
    pub fn b_k(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let l = self.l(x);
        let left = self.base.b(x) - &l * self.base.d(x);
        stack_cols(&left, &l)
    }
    pub fn c_k(&self, x: &DVector<f64>) -> DVector<f64> {
        -(self.w(x) * self.base.c(x))
    }
    pub fn d_k(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let w = self.w(x);
        let left = -(&w * self.base.d(x));
        stack_cols(&left, &w)
    }

    /// Same storage and W, gain scaled by `s`; the result is not normalized.
    pub fn with_scaled_gain(&self, s: f64) -> Self {
        let l = self.l.clone();
        Self { l: Arc::new(move |x| l(x) * s), normalized: s == 1.0 && self.normalized, ..self.clone() }
    }
}

fn stack2(a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
    let mut out = DVector::zeros(a.len() + b.len());
    out.rows_mut(0, a.len()).copy_from(a);
    out.rows_mut(a.len(), b.len()).copy_from(b);
    out
}

fn stack_rows(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(a.nrows() + b.nrows(), a.ncols());
    out.rows_mut(0, a.nrows()).copy_from(a);
    out.rows_mut(a.nrows(), b.nrows()).copy_from(b);
    out
}

fn stack_cols(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(a.nrows(), a.ncols() + b.ncols());
    out.columns_mut(0, a.ncols()).copy_from(a);
    out.columns_mut(a.ncols(), b.ncols()).copy_from(b);
    out
}

fn condition(m: &DMatrix<f64>) -> f64 {
    let sv = m.clone().singular_values();
    let (mx, mn) = (sv.max(), sv.min());
    if mn > 0.0 {
        mx / mn
    } else {
        f64::INFINITY
    }
}

fn s_matrix(base: &AffineSystem, x: &DVector<f64>) -> DMatrix<f64> {
    let d = base.d(x);
    DMatrix::identity(base.p(), base.p()) + d.transpose() * d
}

fn r_matrix(base: &AffineSystem, x: &DVector<f64>) -> DMatrix<f64> {
    let d = base.d(x);
    DMatrix::identity(base.m(), base.m()) + &d * d.transpose()
}

pub fn build_sir(base: AffineSystem, g: VecFn, v: MatFn) -> Result<SirRealization> {
    build_sir_on(base, g, v, &ProbeBox::default())
}

pub fn build_sir_on(base: AffineSystem, g: VecFn, v: MatFn, probe: &ProbeBox) -> Result<SirRealization> {
    let (n, p) = (base.n(), base.p());
    for x in probe.states(n) {
        let vx = v(&x);
        if g(&x).len() != p || vx.shape() != (p, p) {
            return Err(Error::DimensionMismatch("g must be p-vector, V must be p×p".into()));
        }
        let cond = condition(&vx);
        if !(cond <= 1e12) {
            return Err(Error::SingularV { at: x.iter().copied().collect(), cond });
        }
    }
    Ok(SirRealization { base, g, v, normalized: false, storage: None })
}

pub fn build_skr(base: AffineSystem, l: MatFn, w: MatFn) -> Result<SkrRealization> {
    build_skr_on(base, l, w, &ProbeBox::default())
}

pub fn build_skr_on(base: AffineSystem, l: MatFn, w: MatFn, probe: &ProbeBox) -> Result<SkrRealization> {
    let (n, m) = (base.n(), base.m());
    for x in probe.states(n) {
        let wx = w(&x);
        if l(&x).shape() != (n, m) || wx.shape() != (m, m) {
            return Err(Error::DimensionMismatch("L must be n×m, W must be m×m".into()));
        }
        let cond = condition(&wx);
        if !(cond <= 1e12) {
            return Err(Error::SingularW { at: x.iter().copied().collect(), cond });
        }
    }
    Ok(SkrRealization { base, l, w, normalized: false, storage: None })
}

/// g(x) = −(I + DᵀD)⁻¹ (Bᵀ P_x + Dᵀ c).
fn normalizing_g(base: &AffineSystem, px: &DVector<f64>, x: &DVector<f64>) -> DVector<f64> {
    let (b, c, d) = (base.b(x), base.c(x), base.d(x));
    let rhs = b.transpose() * px + d.transpose() * c;
    let s = s_matrix(base, x);
    -s.lu().solve(&rhs).unwrap_or_else(|| DVector::zeros(base.p()))
}

/// Residual of P_xᵀ a + ½ cᵀc − ½ gᵀ (I + DᵀD) g with g from the storage.
pub fn sir_hje_residual(base: &AffineSystem, storage: &StorageFunction, x: &DVector<f64>) -> f64 {
    let px = storage.gradient(x);
    let g = normalizing_g(base, &px, x);
    let c = base.c(x);
    px.dot(&base.a(x)) + 0.5 * c.dot(&c) - 0.5 * g.dot(&(s_matrix(base, x) * &g))
}

fn skr_hje_terms(base: &AffineSystem, vx: &DVector<f64>, x: &DVector<f64>) -> (f64, DVector<f64>, DMatrix<f64>) {
    let (b, c, d) = (base.b(x), base.c(x), base.d(x));
    let btv = b.transpose() * vx;
    // row vector cᵀ + V_xᵀ B Dᵀ, stored as a column
    let k = c + &d * &btv;
    let rinv = r_matrix(base, x).try_inverse().unwrap_or_else(|| DMatrix::zeros(base.m(), base.m()));
    let res = vx.dot(&base.a(x)) + 0.5 * btv.dot(&btv) - 0.5 * k.dot(&(&rinv * &k));
    (res, k, rinv)
}

/// Residual of the kernel-side HJE at x̂.
pub fn skr_hje_residual(base: &AffineSystem, storage: &StorageFunction, x: &DVector<f64>) -> f64 {
    skr_hje_terms(base, &storage.gradient(x), x).0
}

/// max |V_x̂ᵀ L − (cᵀ + V_x̂ᵀ B Dᵀ)(I + DDᵀ)⁻¹| at x̂.
pub fn skr_gain_residual(base: &AffineSystem, storage: &StorageFunction, l: &DMatrix<f64>, x: &DVector<f64>) -> f64 {
    let vx = storage.gradient(x);
    let (_, k, rinv) = skr_hje_terms(base, &vx, x);
    (l.transpose() * &vx - rinv * k).amax()
}

fn hje_scale(base: &AffineSystem, px: &DVector<f64>, x: &DVector<f64>) -> f64 {
    let c = base.c(x);
    1.0 + px.dot(&base.a(x)).abs() + 0.5 * c.dot(&c)
}

pub fn normalize_sir(base: AffineSystem, storage: StorageFunction) -> Result<SirRealization> {
    normalize_sir_on(base, storage, &ProbeBox::default(), 1e-8)
}

pub fn normalize_sir_on(base: AffineSystem, storage: StorageFunction, probe: &ProbeBox, tol: f64) -> Result<SirRealization> {
    let mut worst = (0.0, Vec::new());
    for x in probe.states(base.n()) {
        let r = sir_hje_residual(&base, &storage, &x).abs() / hje_scale(&base, &storage.gradient(&x), &x);
        if !(r <= worst.0) {
            worst = (r, x.iter().copied().collect());
        }
    }
    if !(worst.0 <= tol) {
        return Err(Error::HjeResidualTooLarge { residual: worst.0, at: worst.1 });
    }
    let (b1, s1) = (base.clone(), storage.clone());
    let g: VecFn = Arc::new(move |x| normalizing_g(&b1, &s1.gradient(x), x));
    let b2 = base.clone();
    let v: MatFn = Arc::new(move |x| inv_sqrt_sym(&s_matrix(&b2, x)).expect("I + DᵀD is positive definite"));
    let mut sir = build_sir_on(base, g, v, probe)?;
    sir.normalized = true;
    sir.storage = Some(storage);
    Ok(sir)
}

pub fn normalize_skr(base: AffineSystem, storage: StorageFunction, l: MatFn) -> Result<SkrRealization> {
    normalize_skr_on(base, storage, l, &ProbeBox::default(), 1e-8, 1e-6)
}

pub fn normalize_skr_on(
    base: AffineSystem,
    storage: StorageFunction,
    l: MatFn,
    probe: &ProbeBox,
    hje_tol: f64,
    gain_tol: f64,
) -> Result<SkrRealization> {
    let mut worst_hje = (0.0, Vec::new());
    let mut worst_gain = (0.0, Vec::new());
    for x in probe.states(base.n()) {
        let vx = storage.gradient(&x);
        let r = skr_hje_residual(&base, &storage, &x).abs() / hje_scale(&base, &vx, &x);
        if !(r <= worst_hje.0) {
            worst_hje = (r, x.iter().copied().collect());
        }
        let gr = skr_gain_residual(&base, &storage, &l(&x), &x) / (1.0 + base.c(&x).amax());
        if !(gr <= worst_gain.0) {
            worst_gain = (gr, x.iter().copied().collect());
        }
    }
    if !(worst_hje.0 <= hje_tol) {
        return Err(Error::HjeResidualTooLarge { residual: worst_hje.0, at: worst_hje.1 });
    }
    if !(worst_gain.0 <= gain_tol) {
        return Err(Error::GainConditionViolated { residual: worst_gain.0, at: worst_gain.1 });
    }
    let b2 = base.clone();
    let w: MatFn = Arc::new(move |x| inv_sqrt_sym(&r_matrix(&b2, x)).expect("I + DDᵀ is positive definite"));
    let mut skr = build_skr_on(base, l, w, probe)?;
    skr.normalized = true;
    skr.storage = Some(storage);
    Ok(skr)
}

/// Defects of the inner conditions for a normalized SIR at the probes:
/// (max |D_IᵀD_I − I|, max |c_IᵀD_I + P_xᵀB_I|, max |P_xᵀa_I + ½|c_I|²|).
pub fn sir_inner_defects(sir: &SirRealization, probes: &[DVector<f64>]) -> Result<(f64, f64, f64)> {
    let storage = sir.storage().ok_or(Error::NotNormalized)?;
    let mut out = (0.0f64, 0.0f64, 0.0f64);
    for x in probes {
        let (di, ci, bi, ai) = (sir.d_i(x), sir.c_i(x), sir.b_i(x), sir.a_i(x));
        let px = storage.gradient(x);
        out.0 = out.0.max((di.transpose() * &di - DMatrix::identity(sir.p(), sir.p())).amax());
        out.1 = out.1.max((di.transpose() * &ci + bi.transpose() * &px).amax());
        out.2 = out.2.max((px.dot(&ai) + 0.5 * ci.dot(&ci)).abs());
    }
    Ok(out)
}

/// Defects of the co-inner conditions for a normalized SKR at the probes:
/// (max |D_K D_Kᵀ − I|, max |c_K + D_K B_Kᵀ V_x|, max |V_xᵀa_K + ½|B_KᵀV_x|²|).
pub fn skr_coinner_defects(skr: &SkrRealization, probes: &[DVector<f64>]) -> Result<(f64, f64, f64)> {
    let mut out = (0.0f64, 0.0f64, 0.0f64);
    for x in probes {
        let dk = skr.d_k(x);
        out.0 = out.0.max((&dk * dk.transpose() - DMatrix::identity(skr.m(), skr.m())).amax());
        if let Some(storage) = skr.storage() {
            let vx = storage.gradient(x);
            let btv = skr.b_k(x).transpose() * &vx;
            out.1 = out.1.max((skr.c_k(x) + &dk * &btv).amax());
            out.2 = out.2.max((vx.dot(&skr.a_k(x)) + 0.5 * btv.dot(&btv)).abs());
        }
    }
    Ok(out)
}

/// Normalized coprime factor data of an LTI plant.
#[derive(Debug, Clone)]
pub struct LtiFactorization {
    pub riccati_x: DMatrix<f64>,
    pub riccati_y: DMatrix<f64>,
    pub f: DMatrix<f64>,
    pub v0: DMatrix<f64>,
    pub l0: DMatrix<f64>,
    pub w0: DMatrix<f64>,
    pub residual_x: f64,
    pub residual_y: f64,
}

fn sr(sys: &LtiSystem) -> (DMatrix<f64>, DMatrix<f64>) {
    let s = DMatrix::identity(sys.p(), sys.p()) + sys.d.transpose() * &sys.d;
    let r = DMatrix::identity(sys.m(), sys.m()) + &sys.d * sys.d.transpose();
    (s, r)
}

fn inv(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    m.clone().try_inverse().ok_or_else(|| Error::Singular("matrix inverse".into()))
}

/// Control-side Riccati: returns (X, F, V0, residual).
pub fn lti_normalized_rcf(sys: &LtiSystem) -> Result<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>, f64)> {
    let (s, r) = sr(sys);
    let (sinv, rinv) = (inv(&s)?, inv(&r)?);
    let abar = &sys.a - &sys.b * &sinv * sys.d.transpose() * &sys.c;
    let g = &sys.b * &sinv * sys.b.transpose();
    let q = sys.c.transpose() * &rinv * &sys.c;
    let sol = care(&abar, &g, &q)?;
    let x = sol.x;
    let f = -(&sinv * (sys.b.transpose() * &x + sys.d.transpose() * &sys.c));
    if !is_hurwitz(&(&sys.a + &sys.b * &f)) {
        return Err(Error::RiccatiNoStabilizingSolution(format!(
            "A + BF has spectral abscissa {}",
            spectral_abscissa(&(&sys.a + &sys.b * &f))
        )));
    }
    Ok((x, f, inv_sqrt_sym(&s)?, sol.residual))
}

/// Filter-side Riccati: returns (Y, L0, W0, residual).
pub fn lti_normalized_lcf(sys: &LtiSystem) -> Result<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>, f64)> {
    let (s, r) = sr(sys);
    let (sinv, rinv) = (inv(&s)?, inv(&r)?);
    let abar = &sys.a - &sys.b * sys.d.transpose() * &rinv * &sys.c;
    // (Ā) Y + Y Āᵀ − Y Cᵀ R⁻¹ C Y + B S⁻¹ Bᵀ = 0 in the transposed standard form
    let g = sys.c.transpose() * &rinv * &sys.c;
    let q = &sys.b * &sinv * sys.b.transpose();
    let sol = care(&abar.transpose(), &g, &q)?;
    let y = sol.x;
    let l0 = (&y * sys.c.transpose() + &sys.b * sys.d.transpose()) * &rinv;
    if !is_hurwitz(&(&sys.a - &l0 * &sys.c)) {
        return Err(Error::RiccatiNoStabilizingSolution(format!(
            "A − L0 C has spectral abscissa {}",
            spectral_abscissa(&(&sys.a - &l0 * &sys.c))
        )));
    }
    Ok((y, l0, inv_sqrt_sym(&r)?, sol.residual))
}

pub fn lti_factorization(sys: &LtiSystem) -> Result<LtiFactorization> {
    let (riccati_x, f, v0, residual_x) = lti_normalized_rcf(sys)?;
    let (riccati_y, l0, w0, residual_y) = lti_normalized_lcf(sys)?;
    Ok(LtiFactorization { riccati_x, riccati_y, f, v0, l0, w0, residual_x, residual_y })
}

/// Normalized SIR of an LTI plant with storage ½ xᵀ X x.
pub fn lti_sir(sys: &LtiSystem, fac: &LtiFactorization) -> Result<SirRealization> {
    normalize_sir(lift_lti(sys), StorageFunction::quadratic(fac.riccati_x.clone()))
}

/// Normalized SKR of an LTI plant with constant gain L0. Storage ½ x̂ᵀ Y⁻¹ x̂ is
/// attached when Y is invertible.
pub fn lti_skr(sys: &LtiSystem, fac: &LtiFactorization) -> Result<SkrRealization> {
    let base = lift_lti(sys);
    let l0 = fac.l0.clone();
    let l: MatFn = Arc::new(move |_| l0.clone());
    let yinv = fac.riccati_y.clone().try_inverse().filter(|_| {
        let ev = fac.riccati_y.clone().symmetric_eigen().eigenvalues;
        ev.min() > 1e-10 * (1.0 + ev.max())
    });
    match yinv {
        Some(yinv) => normalize_skr(base, StorageFunction::quadratic((&yinv + yinv.transpose()) * 0.5), l),
        None => {
            let w0 = fac.w0.clone();
            let mut skr = build_skr(base, l, Arc::new(move |_| w0.clone()))?;
            skr.normalized = true;
            Ok(skr)
        }
    }
}

/// The SIR as a system from latent v to z = (u; y).
pub fn image_system(sir: &SirRealization) -> AffineSystem {
    let (s1, s2, s3, s4) = (sir.clone(), sir.clone(), sir.clone(), sir.clone());
    AffineSystem::new(
        sir.n(),
        sir.p(),
        sir.p() + sir.m(),
        Arc::new(move |x| s1.a_i(x)),
        Arc::new(move |x| s2.b_i(x)),
        Arc::new(move |x| s3.c_i(x)),
        Arc::new(move |x| s4.d_i(x)),
    )
    .expect("SIR maps have consistent shapes")
}

/// The SKR as a system from z = (u; y) to r_y.
pub fn kernel_system(skr: &SkrRealization) -> AffineSystem {
    let (s1, s2, s3, s4) = (skr.clone(), skr.clone(), skr.clone(), skr.clone());
    AffineSystem::new(
        skr.n(),
        skr.p() + skr.m(),
        skr.m(),
        Arc::new(move |x| s1.a_k(x)),
        Arc::new(move |x| s2.b_k(x)),
        Arc::new(move |x| s3.c_k(x)),
        Arc::new(move |x| s4.d_k(x)),
    )
    .expect("SKR maps have consistent shapes")
}

/// Samples of z = Σ_I(v) from x0.
pub fn simulate_image(sir: &SirRealization, v: &LatentWindow, x0: &DVector<f64>) -> Result<Vec<DVector<f64>>> {
    let grid = crate::systems::Grid::new(v.t0(), v.dt(), v.len())?;
    let (_, w) = crate::systems::simulate(&image_system(sir), v, x0, &grid)?;
    Ok(w.y().to_vec())
}

/// Energy balance of the normalized SIR on one simulated run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyBalance {
    /// |P(x(T)) − P(x(0)) − ½∫(vᵀv − ẑᵀẑ)|
    pub defect: f64,
    /// ½∫ vᵀv
    pub input_energy: f64,
}

/// Lossless energy-balance check: the supply rate is integrated as an extra
/// RK4 state alongside the SIR dynamics.
pub fn verify_inner_energy(sir: &SirRealization, v: &LatentWindow, x0: &DVector<f64>) -> Result<EnergyBalance> {
    if !sir.is_normalized() {
        return Err(Error::NotNormalized);
    }
    let storage = sir.storage().ok_or(Error::NotNormalized)?;
    let n = sir.n();
    if v.dim() != sir.p() || x0.len() != n {
        return Err(Error::DimensionMismatch("latent or x0 dimension".into()));
    }
    let vs = v.samples();
    let mut s = DVector::zeros(n + 1);
    s.rows_mut(0, n).copy_from(x0);
    let mut input_energy = 0.0;
    for k in 0..vs.len().saturating_sub(1) {
        let f = |t: f64, s: &DVector<f64>| {
            let x = s.rows(0, n).into_owned();
            let vt = lerp(&vs[k], &vs[k + 1], t);
            let dx = sir.a_i(&x) + sir.b_i(&x) * &vt;
            let zh = sir.c_i(&x) + sir.d_i(&x) * &vt;
            let mut out = DVector::zeros(n + 1);
            out.rows_mut(0, n).copy_from(&dx);
            out[n] = 0.5 * (vt.dot(&vt) - zh.dot(&zh));
            out
        };
        s = rk4_step(&f, &s, v.dt());
        guard(&s, k + 1)?;
        input_energy += 0.25 * v.dt() * (vs[k].norm_squared() + vs[k + 1].norm_squared());
    }
    let xt = s.rows(0, n).into_owned();
    let defect = (storage.value(&xt) - storage.value(x0) - s[n]).abs();
    Ok(EnergyBalance { defect, input_energy })
}

/// Kernel-image cascade K ∘ I driven by v. Returns the residual series.
pub fn annihilation_residuals(
    skr: &SkrRealization,
    sir: &SirRealization,
    v: &LatentWindow,
    x0: &DVector<f64>,
    xhat0: &DVector<f64>,
) -> Result<Vec<DVector<f64>>> {
    let n = sir.n();
    if skr.n() != n || skr.p() != sir.p() || skr.m() != sir.m() {
        return Err(Error::DimensionMismatch("SIR and SKR bases differ".into()));
    }
    if v.dim() != sir.p() || x0.len() != n || xhat0.len() != n {
        return Err(Error::GridMismatch("latent or initial-state dimension".into()));
    }
    let vs = v.samples();
    let split = |s: &DVector<f64>| (s.rows(0, n).into_owned(), s.rows(n, n).into_owned());
    let residual = |x: &DVector<f64>, xh: &DVector<f64>, vt: &DVector<f64>| {
        let z = sir.c_i(x) + sir.d_i(x) * vt;
        (skr.c_k(xh) + skr.d_k(xh) * &z, z)
    };
    let mut s = DVector::zeros(2 * n);
    s.rows_mut(0, n).copy_from(x0);
    s.rows_mut(n, n).copy_from(xhat0);
    let mut out = Vec::with_capacity(vs.len());
    for k in 0..vs.len() {
        let (x, xh) = split(&s);
        out.push(residual(&x, &xh, &vs[k]).0);
        if k + 1 == vs.len() {
            break;
        }
        let f = |t: f64, s: &DVector<f64>| {
            let (x, xh) = split(s);
            let vt = lerp(&vs[k], &vs[k + 1], t);
            let z = sir.c_i(&x) + sir.d_i(&x) * &vt;
            let mut d = DVector::zeros(2 * n);
            d.rows_mut(0, n).copy_from(&(sir.a_i(&x) + sir.b_i(&x) * &vt));
            d.rows_mut(n, n).copy_from(&(skr.a_k(&xh) + skr.b_k(&xh) * z));
            d
        };
        s = rk4_step(&f, &s, v.dt());
        guard(&s, k + 1)?;
    }
    Ok(out)
}

/// max_k |r_y(k)| of the cascade with matched initial states.
pub fn verify_annihilation(skr: &SkrRealization, sir: &SirRealization, v: &LatentWindow, x0: &DVector<f64>) -> Result<f64> {
    let r = annihilation_residuals(skr, sir, v, x0, x0)?;
    Ok(r.iter().map(|r| r.amax()).fold(0.0, f64::max))
}
