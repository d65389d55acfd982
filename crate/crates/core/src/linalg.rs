//! Small dense linear-algebra services: Lyapunov and Riccati solvers,
//! symmetric matrix roots, spectral abscissa.

use nalgebra::{Complex, DMatrix, DVector, Schur};

use crate::error::{Error, Result};

/// Symmetric principal inverse square root of a positive definite matrix.
pub fn inv_sqrt_sym(s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    sym_fn(s, |l| 1.0 / l.sqrt())
}

/// Symmetric principal square root of a positive semidefinite matrix.
pub fn sqrt_sym(s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    sym_fn(s, |l| l.max(0.0).sqrt())
}

fn sym_fn(s: &DMatrix<f64>, f: impl Fn(f64) -> f64) -> Result<DMatrix<f64>> {
    if s.nrows() == 1 {
        let v = f(s[(0, 0)]);
        return if v.is_finite() {
            Ok(DMatrix::from_element(1, 1, v))
        } else {
            Err(Error::Singular("matrix root of a non-positive scalar".into()))
        };
    }
    let sym = (s + s.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    if eig.eigenvalues.iter().any(|&l| !(l > 0.0)) {
        return Err(Error::Singular("matrix is not positive definite".into()));
    }
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(f));
    Ok(&eig.eigenvectors * d * eig.eigenvectors.transpose())
}

/// Largest real part of the eigenvalues.
pub fn spectral_abscissa(a: &DMatrix<f64>) -> f64 {
    if a.nrows() == 1 {
        return a[(0, 0)];
    }
    match eigenvalues(a) {
        Some(ev) => ev.iter().map(|l| l.re).fold(f64::NEG_INFINITY, f64::max),
        None => f64::NAN,
    }
}

/// Largest eigenvalue modulus.
pub fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    if a.nrows() == 1 {
        return a[(0, 0)].abs();
    }
    match eigenvalues(a) {
        Some(ev) => ev.iter().map(|l| l.norm()).fold(0.0, f64::max),
        None => f64::NAN,
    }
}

/// Eigenvalues through a bounded Schur iteration (nalgebra's default has no
/// iteration cap and can cycle on some inputs). Retries on the transpose,
/// whose QR sweep takes a different path, then with a looser deflation
/// threshold.
fn eigenvalues(a: &DMatrix<f64>) -> Option<DVector<Complex<f64>>> {
    let iters = 200 * a.nrows().max(1);
    let loose = 1e-14 * (1.0 + a.norm());
    Schur::try_new(a.clone(), f64::EPSILON, iters)
        .or_else(|| Schur::try_new(a.transpose(), f64::EPSILON, iters))
        .or_else(|| Schur::try_new(a.clone(), loose, iters))
        .or_else(|| Schur::try_new(a.transpose(), loose, iters))
        .map(|s| s.complex_eigenvalues())
}

pub fn is_hurwitz(a: &DMatrix<f64>) -> bool {
    spectral_abscissa(a) < 0.0
}

/// Solve Aᵀ X + X A + Q = 0 via the Kronecker form.
pub fn lyapunov(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let eye = DMatrix::<f64>::identity(n, n);
    let at = a.transpose();
    let k = eye.kronecker(&at) + at.kronecker(&eye);
    let rhs = -DMatrix::from_column_slice(n * n, 1, q.as_slice());
    let sol = k
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Singular("Lyapunov operator is singular".into()))?;
    let x = DMatrix::from_column_slice(n, n, sol.as_slice());
    Ok((&x + x.transpose()) * 0.5)
}

/// Outcome of a Riccati solve.
#[derive(Debug, Clone)]
pub struct RiccatiSolution {
    pub x: DMatrix<f64>,
    pub residual: f64,
    pub iterations: usize,
}

pub fn riccati_residual(a: &DMatrix<f64>, g: &DMatrix<f64>, q: &DMatrix<f64>, x: &DMatrix<f64>) -> DMatrix<f64> {
    a.transpose() * x + x * a - x * g * x + q
}

/// Stabilizing solution of Aᵀ X + X A − X G X + Q = 0 (G, Q symmetric PSD)
/// by Kleinman–Newton iteration.
pub fn care(a: &DMatrix<f64>, g: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<RiccatiSolution> {
    let n = a.nrows();
    let mut x = initial_stabilizing(a, g)?;
    let tol = |x: &DMatrix<f64>| 1e-12 * (1.0 + x.norm());
    let mut best: Option<RiccatiSolution> = None;
    for it in 0..=100 {
        let res = riccati_residual(a, g, q, &x).norm();
        let candidate = RiccatiSolution { x: x.clone(), residual: res, iterations: it };
        if best.as_ref().map_or(true, |b| res < b.residual) {
            best = Some(candidate);
        }
        if res < tol(&x) {
            break;
        }
        if it == 100 {
            break;
        }
        let acl = a - g * &x;
        let rhs = &x * g * &x + q;
        x = lyapunov(&acl, &rhs)?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::RiccatiNoStabilizingSolution("Newton iterate is not finite".into()));
        }
    }
    let sol = best.expect("at least one iterate");
    // Stagnation slightly above the target tolerance is rounding, not failure.
    if sol.residual > 1e-10 * (1.0 + sol.x.norm()) {
        return Err(Error::RiccatiNotConverged { residual: sol.residual, iterations: sol.iterations });
    }
    let acl = a - g * &sol.x;
    if !is_hurwitz(&acl) {
        return Err(Error::RiccatiNoStabilizingSolution(format!(
            "closed-loop spectral abscissa {}",
            spectral_abscissa(&acl)
        )));
    }
    let min_eig = if n > 0 { sol.x.clone().symmetric_eigen().eigenvalues.min() } else { 0.0 };
    if min_eig < -1e-8 * (1.0 + sol.x.norm()) {
        return Err(Error::RiccatiNoStabilizingSolution(format!("solution is indefinite (min eigenvalue {min_eig})")));
    }
    Ok(sol)
}

/// X0 with A − G X0 Hurwitz: zero if A is already stable, otherwise a
/// Bass-type shifted Lyapunov solution.
fn initial_stabilizing(a: &DMatrix<f64>, g: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if is_hurwitz(a) {
        return Ok(DMatrix::zeros(n, n));
    }
    let beta = spectral_radius(a).max(1e-3) * 1.5 + 1.0;
    let shifted = a + DMatrix::identity(n, n) * beta;
    // (A + βI) Z + Z (A + βI)ᵀ = 2 G  ⇔  Aᵀ-form Lyapunov with −(A + βI)ᵀ
    let z = lyapunov(&(-shifted.transpose()), &(g * 2.0))?;
    let lu = z.clone().lu();
    let x0 = lu.try_inverse().ok_or_else(|| {
        Error::RiccatiNoStabilizingSolution("shifted Gramian is singular (uncontrollable unstable mode?)".into())
    })?;
    let x0 = (&x0 + x0.transpose()) * 0.5;
    if !is_hurwitz(&(a - g * &x0)) {
        return Err(Error::RiccatiNoStabilizingSolution("no stabilizing initial gain found".into()));
    }
    Ok(x0)
}
