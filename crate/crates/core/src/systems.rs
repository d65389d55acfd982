//! Affine nonlinear and LTI plant models, simulation and finite differences.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::ode::{guard, lerp, rk4_step};
use crate::signals::{LatentWindow, SignalWindow};

pub type VecFn = Arc<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;
pub type MatFn = Arc<dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync>;
pub type ScalarFn = Arc<dyn Fn(&DVector<f64>) -> f64 + Send + Sync>;
/// (x, w) -> d(M(x) w)/dx for a matrix-valued map M.
pub type DirFn = Arc<dyn Fn(&DVector<f64>, &DVector<f64>) -> DMatrix<f64> + Send + Sync>;

/// x' = a(x) + B(x) u, y = c(x) + D(x) u.
#[derive(Clone)]
pub struct AffineSystem {
    n: usize,
    p: usize,
    m: usize,
    a: VecFn,
    b: MatFn,
    c: VecFn,
    d: MatFn,
    jac_a: Option<MatFn>,
    jac_c: Option<MatFn>,
    dir_b: Option<DirFn>,
    dir_d: Option<DirFn>,
}

impl fmt::Debug for AffineSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AffineSystem")
            .field("n", &self.n)
            .field("p", &self.p)
            .field("m", &self.m)
            .field("analytic_jacobians", &self.jac_a.is_some())
            .finish()
    }
}

impl AffineSystem {
    /// Shapes are checked once at the origin.
    pub fn new(n: usize, p: usize, m: usize, a: VecFn, b: MatFn, c: VecFn, d: MatFn) -> Result<Self> {
        let x = DVector::zeros(n);
        let bad = |what: &str| Err(Error::DimensionMismatch(format!("{what} has the wrong shape")));
        if a(&x).len() != n {
            return bad("a(x)");
        }
        if b(&x).shape() != (n, p) {
            return bad("B(x)");
        }
        if c(&x).len() != m {
            return bad("c(x)");
        }
        if d(&x).shape() != (m, p) {
            return bad("D(x)");
        }
        Ok(Self { n, p, m, a, b, c, d, jac_a: None, jac_c: None, dir_b: None, dir_d: None })
    }

    pub fn with_jacobians(mut self, jac_a: MatFn, jac_c: MatFn) -> Self {
        self.jac_a = Some(jac_a);
        self.jac_c = Some(jac_c);
        self
    }

    pub fn with_directional(mut self, dir_b: DirFn, dir_d: DirFn) -> Self {
        self.dir_b = Some(dir_b);
        self.dir_d = Some(dir_d);
        self
    }

    pub fn n(&self) -> usize {
        self.n
    }
    pub fn p(&self) -> usize {
        self.p
    }
    pub fn m(&self) -> usize {
        self.m
    }
    pub fn a(&self, x: &DVector<f64>) -> DVector<f64> {
        (self.a)(x)
    }
    pub fn b(&self, x: &DVector<f64>) -> DMatrix<f64> {
        (self.b)(x)
    }
    pub fn c(&self, x: &DVector<f64>) -> DVector<f64> {
        (self.c)(x)
    }
    pub fn d(&self, x: &DVector<f64>) -> DMatrix<f64> {
        (self.d)(x)
    }

    pub fn has_analytic_jacobians(&self) -> bool {
        self.jac_a.is_some() && self.jac_c.is_some()
    }

    /// Analytic Jacobians of a, c and directional derivatives of B u, D u, if supplied.
    pub fn analytic_jacobian_a(&self, x: &DVector<f64>) -> Option<DMatrix<f64>> {
        self.jac_a.as_ref().map(|j| j(x))
    }
    pub fn analytic_jacobian_c(&self, x: &DVector<f64>) -> Option<DMatrix<f64>> {
        self.jac_c.as_ref().map(|j| j(x))
    }
    pub fn analytic_dir_b(&self, x: &DVector<f64>, u: &DVector<f64>) -> Option<DMatrix<f64>> {
        self.dir_b.as_ref().map(|j| j(x, u))
    }
    pub fn analytic_dir_d(&self, x: &DVector<f64>, u: &DVector<f64>) -> Option<DMatrix<f64>> {
        self.dir_d.as_ref().map(|j| j(x, u))
    }

    pub fn field(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        self.a(x) + self.b(x) * u
    }

    pub fn output(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        self.c(x) + self.d(x) * u
    }

    /// Largest deviation between supplied analytic Jacobians and central differences
    /// over the given probe states. `None` when no analytic Jacobians are attached.
    pub fn jacobian_consistency(&self, probes: &[DVector<f64>]) -> Option<f64> {
        self.jac_a.as_ref()?;
        let mut worst: f64 = 0.0;
        let mut upd = |an: Option<DMatrix<f64>>, fd: Result<DMatrix<f64>>| {
            if let (Some(an), Ok(fd)) = (an, fd) {
                worst = worst.max((an - fd).amax());
            }
        };
        for x in probes {
            upd(self.analytic_jacobian_a(x), fd_jacobian_auto(|x| self.a(x), x));
            upd(self.analytic_jacobian_c(x), fd_jacobian_auto(|x| self.c(x), x));
            let u = DVector::from_element(self.p, 1.0);
            upd(self.analytic_dir_b(x, &u), fd_jacobian_auto(|x| self.b(x) * &u, x));
            upd(self.analytic_dir_d(x, &u), fd_jacobian_auto(|x| self.d(x) * &u, x));
        }
        Some(worst)
    }
}

/// Constant-matrix plant.
#[derive(Debug, Clone, PartialEq)]
pub struct LtiSystem {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
}

impl LtiSystem {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>, d: DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n || b.nrows() != n || c.ncols() != n || d.nrows() != c.nrows() || d.ncols() != b.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "A {:?}, B {:?}, C {:?}, D {:?}",
                a.shape(),
                b.shape(),
                c.shape(),
                d.shape()
            )));
        }
        if a.iter().chain(b.iter()).chain(c.iter()).chain(d.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue("LTI matrices".into()));
        }
        Ok(Self { a, b, c, d })
    }

    /// A = -1, B = 1, C = 1, D = 0.
    pub fn scalar() -> Self {
        let one = |v: f64| DMatrix::from_element(1, 1, v);
        Self { a: one(-1.0), b: one(1.0), c: one(1.0), d: one(0.0) }
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }
    pub fn p(&self) -> usize {
        self.b.ncols()
    }
    pub fn m(&self) -> usize {
        self.c.nrows()
    }
}

/// Simulation grid; `steps` is the number of samples.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub t0: f64,
    pub dt: f64,
    pub steps: usize,
}

impl Grid {
    pub fn new(t0: f64, dt: f64, steps: usize) -> Result<Self> {
        if !(dt > 0.0) || !t0.is_finite() || !dt.is_finite() {
            return Err(Error::InvalidWindow(format!("dt = {dt} must be positive and finite")));
        }
        if steps == 0 {
            return Err(Error::EmptyWindow);
        }
        Ok(Self { t0, dt, steps })
    }

    pub fn time(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.dt
    }
}

pub(crate) fn same_grid(t0a: f64, dta: f64, t0b: f64, dtb: f64) -> bool {
    (dta - dtb).abs() <= 1e-9 * dta && (t0a - t0b).abs() <= 1e-9 * dta.max(1.0)
}

/// RK4 simulation with inputs interpolated linearly between samples.
/// Returns the sampled state trajectory and the (u, y) window.
pub fn simulate(
    system: &AffineSystem,
    input: &LatentWindow,
    x0: &DVector<f64>,
    grid: &Grid,
) -> Result<(Vec<DVector<f64>>, SignalWindow)> {
    if input.len() != grid.steps || !same_grid(input.t0(), input.dt(), grid.t0, grid.dt) {
        return Err(Error::GridMismatch(format!(
            "input has {} samples (t0 {}, dt {}), grid expects {} (t0 {}, dt {})",
            input.len(),
            input.t0(),
            input.dt(),
            grid.steps,
            grid.t0,
            grid.dt
        )));
    }
    if input.dim() != system.p() {
        return Err(Error::DimensionMismatch(format!("input dim {} != p {}", input.dim(), system.p())));
    }
    if x0.len() != system.n() {
        return Err(Error::DimensionMismatch(format!("x0 dim {} != n {}", x0.len(), system.n())));
    }
    guard(x0, 0)?;
    let u = input.samples();
    let mut xs = Vec::with_capacity(grid.steps);
    let mut x = x0.clone();
    for k in 0..grid.steps {
        xs.push(x.clone());
        if k + 1 < grid.steps {
            let f = |s: f64, x: &DVector<f64>| system.field(x, &lerp(&u[k], &u[k + 1], s));
            x = rk4_step(&f, &x, grid.dt);
            guard(&x, k + 1)?;
        }
    }
    let y = xs.iter().zip(u).map(|(x, u)| system.output(x, u)).collect();
    let window = SignalWindow::new(grid.t0, grid.dt, u.to_vec(), y)?;
    Ok((xs, window))
}

/// Central-difference Jacobian with a uniform step h.
pub fn fd_jacobian<F>(f: F, x: &DVector<f64>, h: f64) -> Result<DMatrix<f64>>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    fd_jacobian_steps(f, x, |_| h)
}

/// Central-difference Jacobian with h_j = max(1e-6, 1e-6 |x_j|).
pub fn fd_jacobian_auto<F>(f: F, x: &DVector<f64>) -> Result<DMatrix<f64>>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    fd_jacobian_steps(f, x, fd_step)
}

pub(crate) fn fd_step(xj: f64) -> f64 {
    (1e-6 * xj.abs()).max(1e-6)
}

fn fd_jacobian_steps<F, S>(f: F, x: &DVector<f64>, step: S) -> Result<DMatrix<f64>>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
    S: Fn(f64) -> f64,
{
    let n = x.len();
    let mut cols: Vec<DVector<f64>> = Vec::with_capacity(n);
    for j in 0..n {
        let h = step(x[j]);
        if !(h > 0.0) {
            return Err(Error::InvalidWindow(format!("finite-difference step {h} must be positive")));
        }
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[j] += h;
        xm[j] -= h;
        let col = (f(&xp) - f(&xm)) / (2.0 * h);
        if col.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue(format!("finite difference in coordinate {j}")));
        }
        cols.push(col);
    }
    let rows = cols.first().map(|c| c.len()).unwrap_or(0);
    Ok(DMatrix::from_fn(rows, n, |i, j| cols[j][i]))
}

/// Central-difference gradient of a scalar field, per-coordinate steps.
pub fn fd_gradient<F>(f: F, x: &DVector<f64>) -> Result<DVector<f64>>
where
    F: Fn(&DVector<f64>) -> f64,
{
    let j = fd_jacobian_auto(|x| DVector::from_element(1, f(x)), x)?;
    Ok(j.row(0).transpose())
}

/// Embed a constant-matrix plant as an affine system with exact Jacobians.
pub fn lift_lti(sys: &LtiSystem) -> AffineSystem {
    let (n, p, m) = (sys.n(), sys.p(), sys.m());
    let (a, b, c, d) = (sys.a.clone(), sys.b.clone(), sys.c.clone(), sys.d.clone());
    let (a2, c2) = (a.clone(), c.clone());
    let (b2, d2) = (b.clone(), d.clone());
    let ja = a.clone();
    let jc = c.clone();
    AffineSystem {
        n,
        p,
        m,
        a: Arc::new(move |x| &a2 * x),
        b: Arc::new(move |_| b2.clone()),
        c: Arc::new(move |x| &c2 * x),
        d: Arc::new(move |_| d2.clone()),
        jac_a: Some(Arc::new(move |_| ja.clone())),
        jac_c: Some(Arc::new(move |_| jc.clone())),
        dir_b: Some(Arc::new(move |_, _| DMatrix::zeros(n, n))),
        dir_d: Some(Arc::new(move |_, _| DMatrix::zeros(m, n))),
    }
}

/// Scalar plant x' = -x - x^3 + u, y = x.
pub fn scalar_cubic() -> AffineSystem {
    AffineSystem {
        n: 1,
        p: 1,
        m: 1,
        a: Arc::new(|x| DVector::from_element(1, -x[0] - x[0].powi(3))),
        b: Arc::new(|_| DMatrix::from_element(1, 1, 1.0)),
        c: Arc::new(|x| x.clone()),
        d: Arc::new(|_| DMatrix::zeros(1, 1)),
        jac_a: Some(Arc::new(|x| DMatrix::from_element(1, 1, -1.0 - 3.0 * x[0] * x[0]))),
        jac_c: Some(Arc::new(|_| DMatrix::from_element(1, 1, 1.0))),
        dir_b: Some(Arc::new(|_, _| DMatrix::zeros(1, 1))),
        dir_d: Some(Arc::new(|_, _| DMatrix::zeros(1, 1))),
    }
}
