//! Newton iteration for the monolithic slab system and the linear solver
//! backends it drives.

use std::time::{Duration, Instant};

use faer::prelude::Solve;
use faer::sparse::{SparseColMat, Triplet};

use crate::discretization::{JacobianMatrix, ResidualVector, SlabSystem, StateVector};
use crate::error::{Error, Result};

/// Residual/Jacobian provider for [`newton_solve`].
pub trait NonlinearSystem {
    fn residual(&self, state: &StateVector) -> Result<ResidualVector>;
    fn residual_and_jacobian(&self, state: &StateVector) -> Result<(ResidualVector, JacobianMatrix)>;

    /// Typical cell mass (lb) used to scale the absolute tolerance.
    fn mass_scale(&self) -> f64 {
        1.0
    }
}

impl NonlinearSystem for SlabSystem<'_> {
    fn residual(&self, state: &StateVector) -> Result<ResidualVector> {
        SlabSystem::residual(self, state)
    }

    fn residual_and_jacobian(&self, state: &StateVector) -> Result<(ResidualVector, JacobianMatrix)> {
        SlabSystem::residual_and_jacobian(self, state)
    }

    fn mass_scale(&self) -> f64 {
        SlabSystem::mass_scale(self)
    }
}

/// Solves `J x = rhs` with `||J x - rhs||_inf <= 1e-10 ||rhs||_inf`.
pub trait LinearSolver {
    fn solve(&self, jac: &JacobianMatrix, rhs: &[f64]) -> Result<Vec<f64>>;
}

/// Relative residual bound every backend has to meet.
pub const LINEAR_TOLERANCE: f64 = 1e-10;

/// Sparse LU with fill-reducing ordering and partial pivoting (faer), followed
/// by a few steps of iterative refinement.
#[derive(Debug, Clone, Copy)]
pub struct SparseLu {
    pub refinement_steps: usize,
}

impl Default for SparseLu {
    fn default() -> Self {
        SparseLu { refinement_steps: 3 }
    }
}

impl LinearSolver for SparseLu {
    fn solve(&self, jac: &JacobianMatrix, rhs: &[f64]) -> Result<Vec<f64>> {
        let n = jac.dim();
        if rhs.len() != n {
            return Err(Error::SolverFailure(format!(
                "right-hand side has length {}, matrix has dimension {n}",
                rhs.len()
            )));
        }
        if n == 0 {
            return Ok(Vec::new());
        }
        let triplets: Vec<Triplet<usize, usize, f64>> = jac
            .triplets()
            .into_iter()
            .map(|(r, c, v)| Triplet::new(r, c, v))
            .collect();
        let mat = SparseColMat::<usize, f64>::try_new_from_triplets(n, n, &triplets)
            .map_err(|e| Error::SolverFailure(format!("matrix construction failed: {e:?}")))?;
        let lu = mat
            .sp_lu()
            .map_err(|e| Error::SolverFailure(format!("structurally singular matrix: {e:?}")))?;

        let solve = |b: &[f64]| -> Vec<f64> {
            let col = faer::Col::<f64>::from_fn(n, |i| b[i]);
            let x = lu.solve(&col);
            (0..n).map(|i| x[i]).collect()
        };
        let rhs_norm = norm_inf(rhs);
        let mut x = solve(rhs);
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::SolverFailure("numerically singular matrix (non-finite solution)".into()));
        }
        let mut resid = residual(jac, &x, rhs);
        for _ in 0..self.refinement_steps {
            if norm_inf(&resid) <= LINEAR_TOLERANCE * rhs_norm {
                break;
            }
            let dx = solve(&resid);
            for (xi, d) in x.iter_mut().zip(&dx) {
                *xi += d;
            }
            resid = residual(jac, &x, rhs);
        }
        let r = norm_inf(&resid);
        if !(r <= LINEAR_TOLERANCE * rhs_norm) {
            return Err(Error::SolverFailure(format!(
                "residual {r:e} exceeds {LINEAR_TOLERANCE:e} x |rhs| = {:e}; matrix is numerically singular",
                LINEAR_TOLERANCE * rhs_norm
            )));
        }
        Ok(x)
    }
}

fn residual(jac: &JacobianMatrix, x: &[f64], rhs: &[f64]) -> Vec<f64> {
    jac.mul_vec(x).iter().zip(rhs).map(|(ax, b)| b - ax).collect()
}

pub(crate) fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Solves `J x = rhs` with the default sparse direct backend.
pub fn solve_linear(jac: &JacobianMatrix, rhs: &[f64]) -> Result<Vec<f64>> {
    SparseLu::default().solve(jac, rhs)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonConfig {
    pub tol_rel: f64,
    /// Absolute residual tolerance in lb; `None` uses `1e-8 x` the system's mass scale.
    pub tol_abs: Option<f64>,
    pub max_iter: usize,
    /// Largest saturation change allowed per iteration.
    pub max_sat_step: f64,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        NewtonConfig {
            tol_rel: 1e-6,
            tol_abs: None,
            max_iter: 20,
            max_sat_step: 0.2,
        }
    }
}

impl NewtonConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol_rel > 0.0) {
            return Err(Error::config("newton.tol_rel", "must be positive"));
        }
        if let Some(t) = self.tol_abs {
            if !(t > 0.0) {
                return Err(Error::config("newton.tol_abs", "must be positive"));
            }
        }
        if self.max_iter < 1 {
            return Err(Error::config("newton.max_iter", "must be >= 1"));
        }
        if !(self.max_sat_step > 0.0) {
            return Err(Error::config("newton.max_sat_step", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct NewtonReport {
    pub iterations: usize,
    /// `||R||_inf` at the initial guess and after every update.
    pub residual_norm_history: Vec<f64>,
    pub converged: bool,
    pub tolerance: f64,
    /// Iterations whose step was halved by the monotonicity safeguard.
    pub halved_steps: Vec<usize>,
    pub assembly_time: Duration,
    pub linear_solve_time: Duration,
    pub wall_time: Duration,
}

/// Newton's method with saturation step limiting.
///
/// Converges when `||R||_inf <= max(tol_abs, tol_rel ||R(guess)||_inf)`. Each
/// update solves `J dx = -R`, scales `dx` so no saturation moves by more than
/// `max_sat_step`, and clamps saturations to `[0, 1]`. If the residual norm
/// grows for three consecutive iterations the next step is halved once.
/// Non-convergence is reported, not raised; linear solver failures are errors.
pub fn newton_solve<S: NonlinearSystem + ?Sized>(
    system: &S,
    guess: StateVector,
    cfg: &NewtonConfig,
    linear: &dyn LinearSolver,
) -> Result<(StateVector, NewtonReport)> {
    let start = Instant::now();
    let mut report = NewtonReport::default();
    if !guess.is_finite() {
        return Err(Error::Integrity("initial guess contains non-finite values".into()));
    }
    let mut x = guess;

    let t = Instant::now();
    let (mut r, mut jac) = system.residual_and_jacobian(&x)?;
    report.assembly_time += t.elapsed();
    let r0 = r.norm_inf();
    let tol_abs = cfg.tol_abs.unwrap_or(1e-8 * system.mass_scale());
    report.tolerance = tol_abs.max(cfg.tol_rel * r0);
    report.residual_norm_history.push(r0);

    let mut increases = 0usize;
    let mut halve_next = false;
    while r.norm_inf() > report.tolerance && report.iterations < cfg.max_iter {
        let rhs: Vec<f64> = r.as_slice().iter().map(|v| -v).collect();
        let t = Instant::now();
        let dx = linear.solve(&jac, &rhs);
        report.linear_solve_time += t.elapsed();
        let dx = dx?;

        let max_ds = dx.iter().skip(1).step_by(2).fold(0.0f64, |m, v| m.max(v.abs()));
        let mut scale = if max_ds > cfg.max_sat_step { cfg.max_sat_step / max_ds } else { 1.0 };
        report.iterations += 1;
        if halve_next {
            scale *= 0.5;
            halve_next = false;
            report.halved_steps.push(report.iterations);
        }
        for (xi, d) in x.as_mut_slice().iter_mut().zip(&dx) {
            *xi += scale * d;
        }
        x.clamp_saturations();
        if !x.is_finite() {
            return Err(Error::SolverFailure("Newton update produced non-finite values".into()));
        }

        let prev = r.norm_inf();
        let t = Instant::now();
        let converged_now;
        if report.iterations < cfg.max_iter {
            let (nr, nj) = system.residual_and_jacobian(&x)?;
            converged_now = nr.norm_inf() <= report.tolerance;
            r = nr;
            jac = nj;
        } else {
            r = system.residual(&x)?;
            converged_now = r.norm_inf() <= report.tolerance;
        }
        report.assembly_time += t.elapsed();
        report.residual_norm_history.push(r.norm_inf());
        if converged_now {
            break;
        }

        if r.norm_inf() > prev {
            increases += 1;
            if increases >= 3 {
                halve_next = true;
                increases = 0;
            }
        } else {
            increases = 0;
        }
    }
    report.converged = r.norm_inf() <= report.tolerance;
    report.wall_time = start.elapsed();
    Ok((x, report))
}
