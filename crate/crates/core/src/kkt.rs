//! Independent equality-constrained quadratic-program solver, used as the
//! correctness oracle for the DP synthesizers and as the slow baseline in
//! benchmarks.
//!
//! The decision vector stacks `vec(phi_x[tau])` for all steps followed by
//! `vec(phi_u[tau])`; the objective becomes `z^T M z` and every SLS
//! equality (dynamics, initial condition, boundary condition, entrywise
//! constraints) becomes a row block of `H z = h0`. The stationarity and
//! feasibility conditions are solved jointly as one symmetric linear
//! system.

use ndarray::{s, Array1, Array2};
use ndarray_linalg::{Factorize, LeastSquaresSvd, Solve};

use crate::linalg::{left_kron_lift, max_abs_vec, vectorize};
use crate::model::SynthesisProblem;
use crate::synth::SystemResponse;
use crate::{Error, Result};

/// Block offsets of the stacked decision vector.
#[derive(Debug, Clone, Copy)]
pub struct KktDims {
    pub n_x: usize,
    pub n_u: usize,
    pub horizon: usize,
}

impl KktDims {
    pub fn state_block(&self) -> usize {
        self.n_x * self.n_x
    }

    pub fn ctrl_block(&self) -> usize {
        self.n_x * self.n_u
    }

    /// Offset of `vec(phi_x[tau])`, `tau` one-based.
    pub fn x_offset(&self, tau: usize) -> usize {
        (tau - 1) * self.state_block()
    }

    /// Offset of `vec(phi_u[tau])`, `tau` one-based.
    pub fn u_offset(&self, tau: usize) -> usize {
        self.horizon * self.state_block() + (tau - 1) * self.ctrl_block()
    }

    pub fn decision_len(&self) -> usize {
        self.horizon * (self.state_block() + self.ctrl_block())
    }
}

/// Assembled quadratic program `min z^T M z  s.t.  H z = h0`.
///
/// Row blocks of `H` appear in a fixed order: dynamics for each
/// `tau < T`, the initial condition, the boundary condition, and then —
/// when the problem is constrained — the `(S_x[tau] - I)` and
/// `(S_u[tau] - I)` rows for each step. Constraint rows are kept verbatim,
/// so `H` may be rank deficient; the solver tolerates that.
#[derive(Debug, Clone)]
pub struct KktSystem {
    pub m: Array2<f64>,
    pub h: Array2<f64>,
    pub h0: Array1<f64>,
    pub dims: KktDims,
}

/// Build the KKT data for a synthesis problem, constrained or not.
pub fn assemble(problem: &SynthesisProblem) -> Result<KktSystem> {
    let n_x = problem.n_x();
    let n_u = problem.n_u();
    let t_len = problem.horizon;
    let dims = KktDims {
        n_x,
        n_u,
        horizon: t_len,
    };
    let sb = dims.state_block();
    let cb = dims.ctrl_block();
    let nz = dims.decision_len();

    let a_lift = left_kron_lift(&problem.plant.a.view(), n_x);
    let b_lift = left_kron_lift(&problem.plant.b.view(), n_x);
    let c_lift = left_kron_lift(&problem.objective.c.view(), n_x);
    let d_lift = left_kron_lift(&problem.objective.d.view(), n_x);

    // Objective: per-step coupling of the x and u blocks.
    let mut m = Array2::zeros((nz, nz));
    let ctc = c_lift.t().dot(&c_lift);
    let ctd = c_lift.t().dot(&d_lift);
    let dtd = d_lift.t().dot(&d_lift);
    for tau in 1..=t_len {
        let xo = dims.x_offset(tau);
        let uo = dims.u_offset(tau);
        m.slice_mut(s![xo..xo + sb, xo..xo + sb]).assign(&ctc);
        m.slice_mut(s![xo..xo + sb, uo..uo + cb]).assign(&ctd);
        m.slice_mut(s![uo..uo + cb, xo..xo + sb]).assign(&ctd.t());
        m.slice_mut(s![uo..uo + cb, uo..uo + cb]).assign(&dtd);
    }

    let constraint_rows = match &problem.constraint {
        Some(_) => t_len * (sb + cb),
        None => 0,
    };
    let nrows = (t_len - 1) * sb + sb + sb + constraint_rows;
    let mut h = Array2::zeros((nrows, nz));
    let mut h0 = Array1::zeros(nrows);
    let mut row = 0;

    // Dynamics: x[tau+1] - A~ x[tau] - B~ u[tau] = 0.
    for tau in 1..t_len {
        let xo = dims.x_offset(tau);
        let uo = dims.u_offset(tau);
        let xn = dims.x_offset(tau + 1);
        h.slice_mut(s![row..row + sb, xo..xo + sb]).assign(&(-&a_lift));
        h.slice_mut(s![row..row + sb, uo..uo + cb]).assign(&(-&b_lift));
        for i in 0..sb {
            h[[row + i, xn + i]] = 1.0;
        }
        row += sb;
    }

    // Initial condition: x[1] = vec(I).
    let x1 = dims.x_offset(1);
    for i in 0..sb {
        h[[row + i, x1 + i]] = 1.0;
    }
    h0.slice_mut(s![row..row + sb])
        .assign(&vectorize(&Array2::eye(n_x).view()));
    row += sb;

    // Boundary condition: A~ x[T] + B~ u[T] = 0.
    let xt = dims.x_offset(t_len);
    let ut = dims.u_offset(t_len);
    h.slice_mut(s![row..row + sb, xt..xt + sb]).assign(&a_lift);
    h.slice_mut(s![row..row + sb, ut..ut + cb]).assign(&b_lift);
    row += sb;

    // Entrywise constraints: (S - I) vec(phi) = 0 per step and component.
    if let Some(constraint) = &problem.constraint {
        constraint.check_dims(n_x, n_u, t_len)?;
        let eye_x = Array2::<f64>::eye(sb);
        let eye_u = Array2::<f64>::eye(cb);
        for tau in 1..=t_len {
            let xo = dims.x_offset(tau);
            let uo = dims.u_offset(tau);
            h.slice_mut(s![row..row + sb, xo..xo + sb])
                .assign(&(&constraint.s_x()[tau - 1] - &eye_x));
            row += sb;
            h.slice_mut(s![row..row + cb, uo..uo + cb])
                .assign(&(&constraint.s_u()[tau - 1] - &eye_u));
            row += cb;
        }
    }
    debug_assert_eq!(row, nrows);

    Ok(KktSystem { m, h, h0, dims })
}

impl KktSystem {
    /// Solve the stationarity-plus-feasibility system
    /// `[2M H^T; H 0] [z; lambda] = [0; h0]`.
    ///
    /// A plain LU factorization with one step of iterative refinement is
    /// tried first; singular systems (redundant constraint rows make them
    /// common) fall back to a minimum-norm least-squares solve. The
    /// multipliers are discarded. Returns the response and its objective
    /// value, or [`Error::Infeasible`] when no vector satisfies the
    /// equality constraints.
    pub fn solve(&self) -> Result<(SystemResponse, f64)> {
        let nz = self.dims.decision_len();
        let nrows = self.h.nrows();
        let kdim = nz + nrows;

        let mut kkt = Array2::zeros((kdim, kdim));
        kkt.slice_mut(s![..nz, ..nz]).assign(&(2.0 * &self.m));
        kkt.slice_mut(s![..nz, nz..]).assign(&self.h.t());
        kkt.slice_mut(s![nz.., ..nz]).assign(&self.h);
        let mut rhs = Array1::zeros(kdim);
        rhs.slice_mut(s![nz..]).assign(&self.h0);

        let scale = 1.0 + max_abs_vec(&rhs.view());
        let w = self
            .lu_with_refinement(&kkt, &rhs)
            .filter(|w| {
                let residual = max_abs_vec(&(&kkt.dot(w) - &rhs).view());
                residual <= 1e-9 * scale
            })
            .map_or_else(
                || {
                    kkt.least_squares(&rhs)
                        .map(|out| out.solution)
                        .map_err(|e| Error::Numeric(format!("least-squares solve failed: {e}")))
                },
                Ok,
            )?;

        let z = w.slice(s![..nz]).to_owned();
        let primal_residual = max_abs_vec(&(&self.h.dot(&z) - &self.h0).view());
        let tolerance = 1e-8 * (1.0 + max_abs_vec(&self.h0.view()));
        if primal_residual > tolerance {
            return Err(Error::Infeasible {
                residual: primal_residual,
                tolerance,
            });
        }
        // Guard against a silently non-stationary compromise from the
        // least-squares fallback (an unbounded-below objective).
        let lambda = w.slice(s![nz..]);
        let stationarity =
            max_abs_vec(&(2.0 * self.m.dot(&z) + self.h.t().dot(&lambda)).view());
        if stationarity > 1e-6 * (1.0 + max_abs_vec(&z.view())) {
            return Err(Error::Numeric(format!(
                "stationarity residual {stationarity:.3e}; objective may be unbounded below"
            )));
        }

        let objective = z.dot(&self.m.dot(&z));
        let response = self.extract_response(&z)?;
        Ok((response, objective))
    }

    fn lu_with_refinement(&self, kkt: &Array2<f64>, rhs: &Array1<f64>) -> Option<Array1<f64>> {
        let factorized = kkt.factorize().ok()?;
        let mut w = factorized.solve(rhs).ok()?;
        let correction = factorized.solve(&(rhs - &kkt.dot(&w))).ok()?;
        w += &correction;
        w.iter().all(|v| v.is_finite()).then_some(w)
    }

    fn extract_response(&self, z: &Array1<f64>) -> Result<SystemResponse> {
        let d = &self.dims;
        let mut phi_x = Vec::with_capacity(d.horizon);
        let mut phi_u = Vec::with_capacity(d.horizon);
        for tau in 1..=d.horizon {
            let xo = d.x_offset(tau);
            let uo = d.u_offset(tau);
            phi_x.push(crate::linalg::unvectorize(
                &z.slice(s![xo..xo + d.state_block()]),
                d.n_x,
                d.n_x,
            )?);
            phi_u.push(crate::linalg::unvectorize(
                &z.slice(s![uo..uo + d.ctrl_block()]),
                d.n_u,
                d.n_x,
            )?);
        }
        SystemResponse::new(phi_x, phi_u)
    }
}
