//! The dynamic-programming synthesizers.
//!
//! All three solvers walk the horizon backwards, keeping a single
//! accumulated quadratic-cost matrix `P`, and then roll the gains forward
//! from `phi_x[1] = I`:
//!
//! * [`synthesize_h2_plain`] enforces the terminal boundary condition
//!   `A phi_x[T] + B phi_u[T] = 0` by restricting each step's control to
//!   the affine set that keeps the next state inside a tracked null space.
//! * [`synthesize_h2_approx`] drops the boundary condition, which reduces
//!   the backward pass to a finite-horizon Riccati-style recursion.
//! * [`synthesize_h2_constrained`] additionally honors entrywise linear
//!   constraints by running the same recursion on vectorized components
//!   with Kronecker-lifted plant and objective matrices.

use ndarray::{Array1, Array2, s};
use ndarray_linalg::Inverse;
use serde::{Deserialize, Serialize};

use crate::jsonmat::{mat_to_rows, rows_to_mat};
use crate::linalg::{
    ensure_finite, hstack, left_kron_lift, max_abs, max_abs_vec, null_space_basis_scaled, pinv,
    pinv_scaled, unvectorize, vectorize, vstack, NullSpaceBasis, DEFAULT_RANK_TOL,
};
use crate::model::{H2Objective, Plant, SynthesisProblem};
use crate::{Error, Result};

/// Infeasibility is declared when the initial state violates its null-space
/// condition by more than `FEASIBILITY_RTOL * (1 + max|A|)`.
const FEASIBILITY_RTOL: f64 = 1e-6;

/// Spectral components `{phi_x[tau], phi_u[tau]}` of a synthesized
/// closed-loop response, stored densely for `tau = 1..T`.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemResponse {
    phi_x: Vec<Array2<f64>>,
    phi_u: Vec<Array2<f64>>,
}

impl SystemResponse {
    pub fn new(phi_x: Vec<Array2<f64>>, phi_u: Vec<Array2<f64>>) -> Result<Self> {
        if phi_x.is_empty() || phi_x.len() != phi_u.len() {
            return Err(Error::DimensionMismatch(format!(
                "response needs equal, nonzero component counts, got {} and {}",
                phi_x.len(),
                phi_u.len()
            )));
        }
        let n_x = phi_x[0].nrows();
        for (tau, m) in phi_x.iter().enumerate() {
            ensure_finite(&format!("phi_x[{}]", tau + 1), &m.view())?;
            if m.dim() != (n_x, n_x) {
                return Err(Error::DimensionMismatch(format!(
                    "phi_x[{}] has shape {:?}, expected ({n_x}, {n_x})",
                    tau + 1,
                    m.dim()
                )));
            }
        }
        let n_u = phi_u[0].nrows();
        for (tau, m) in phi_u.iter().enumerate() {
            ensure_finite(&format!("phi_u[{}]", tau + 1), &m.view())?;
            if m.dim() != (n_u, n_x) {
                return Err(Error::DimensionMismatch(format!(
                    "phi_u[{}] has shape {:?}, expected ({n_u}, {n_x})",
                    tau + 1,
                    m.dim()
                )));
            }
        }
        Ok(SystemResponse { phi_x, phi_u })
    }

    pub fn horizon(&self) -> usize {
        self.phi_x.len()
    }

    pub fn n_x(&self) -> usize {
        self.phi_x[0].nrows()
    }

    pub fn n_u(&self) -> usize {
        self.phi_u[0].nrows()
    }

    /// State components, `phi_x()[tau - 1]` holding `phi_x[tau]`.
    pub fn phi_x(&self) -> &[Array2<f64>] {
        &self.phi_x
    }

    /// Control components, `phi_u()[tau - 1]` holding `phi_u[tau]`.
    pub fn phi_u(&self) -> &[Array2<f64>] {
        &self.phi_u
    }

    /// Worst-case violations of the achievability conditions under `plant`.
    pub fn achievability(&self, plant: &Plant) -> Result<AchievabilityResiduals> {
        if plant.n_x() != self.n_x() || plant.n_u() != self.n_u() {
            return Err(Error::DimensionMismatch(format!(
                "plant is ({}, {}), response is ({}, {})",
                plant.n_x(),
                plant.n_u(),
                self.n_x(),
                self.n_u()
            )));
        }
        let t_len = self.horizon();
        let initial = max_abs(&(&self.phi_x[0] - &Array2::<f64>::eye(self.n_x())).view());
        let mut dynamics = 0.0f64;
        for tau in 0..t_len - 1 {
            let predicted = plant.a.dot(&self.phi_x[tau]) + plant.b.dot(&self.phi_u[tau]);
            dynamics = dynamics.max(max_abs(&(&self.phi_x[tau + 1] - &predicted).view()));
        }
        let tail = plant.a.dot(&self.phi_x[t_len - 1]) + plant.b.dot(&self.phi_u[t_len - 1]);
        let boundary = max_abs(&tail.view());
        Ok(AchievabilityResiduals {
            initial,
            dynamics,
            boundary,
        })
    }

    pub fn to_json(&self) -> String {
        let doc = ResponseJson {
            horizon: self.horizon(),
            phi_x: self.phi_x.iter().map(mat_to_rows).collect(),
            phi_u: self.phi_u.iter().map(mat_to_rows).collect(),
        };
        serde_json::to_string_pretty(&doc).expect("response serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ResponseJson = serde_json::from_str(text)
            .map_err(|e| Error::InvalidArgument(format!("response JSON: {e}")))?;
        if doc.phi_x.len() != doc.horizon || doc.phi_u.len() != doc.horizon {
            return Err(Error::DimensionMismatch(format!(
                "response lists cover {} and {} steps, T = {}",
                doc.phi_x.len(),
                doc.phi_u.len(),
                doc.horizon
            )));
        }
        let phi_x = doc
            .phi_x
            .iter()
            .enumerate()
            .map(|(t, rows)| rows_to_mat(&format!("phi_x[{}]", t + 1), rows))
            .collect::<Result<Vec<_>>>()?;
        let phi_u = doc
            .phi_u
            .iter()
            .enumerate()
            .map(|(t, rows)| rows_to_mat(&format!("phi_u[{}]", t + 1), rows))
            .collect::<Result<Vec<_>>>()?;
        SystemResponse::new(phi_x, phi_u)
    }
}

#[derive(Serialize, Deserialize)]
struct ResponseJson {
    #[serde(rename = "T")]
    horizon: usize,
    phi_x: Vec<Vec<Vec<f64>>>,
    phi_u: Vec<Vec<Vec<f64>>>,
}

/// Max-norm violations of the three achievability conditions.
#[derive(Debug, Clone, Copy)]
pub struct AchievabilityResiduals {
    /// `max |phi_x[1] - I|`
    pub initial: f64,
    /// `max` over `tau < T` of `|phi_x[tau+1] - A phi_x[tau] - B phi_u[tau]|`
    pub dynamics: f64,
    /// `max |A phi_x[T] + B phi_u[T]|`
    pub boundary: f64,
}

/// Feedback gains from the backward pass, `gains[tau - 1]` mapping the
/// step-`tau` state block to its control block. Plain and approximate
/// synthesis produce `n_u x n_x` gains acting on `phi_x[tau]`; constrained
/// synthesis produces `(n_x n_u) x n_x^2` gains acting on
/// `vec(phi_x[tau])`.
#[derive(Debug, Clone)]
pub struct GainSchedule {
    pub gains: Vec<Array2<f64>>,
    /// Accumulated quadratic-cost matrices: the cost from step `tau`
    /// onward for a state block `X` is `trace(X^T p_trace[tau-1] X)`.
    pub p_trace: Option<Vec<Array2<f64>>>,
}

impl GainSchedule {
    pub fn horizon(&self) -> usize {
        self.gains.len()
    }

    /// Minimal total cost of the synthesized response, evaluated from the
    /// accumulated cost matrix at the initial state block.
    pub fn cost_to_go_from_start(&self) -> Option<f64> {
        self.p_trace.as_ref().map(|trace| trace[0].diag().sum())
    }

    pub fn to_json(&self) -> String {
        let doc = GainJson {
            horizon: self.horizon(),
            k: self.gains.iter().map(mat_to_rows).collect(),
        };
        serde_json::to_string_pretty(&doc).expect("gain serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: GainJson = serde_json::from_str(text)
            .map_err(|e| Error::InvalidArgument(format!("gain JSON: {e}")))?;
        let gains = doc
            .k
            .iter()
            .enumerate()
            .map(|(t, rows)| rows_to_mat(&format!("K[{}]", t + 1), rows))
            .collect::<Result<Vec<_>>>()?;
        if gains.len() != doc.horizon || gains.is_empty() {
            return Err(Error::DimensionMismatch(format!(
                "gain list covers {} steps, T = {}",
                gains.len(),
                doc.horizon
            )));
        }
        Ok(GainSchedule {
            gains,
            p_trace: None,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct GainJson {
    #[serde(rename = "T")]
    horizon: usize,
    k: Vec<Vec<Vec<f64>>>,
}

/// One backward step of the feasible-set recursion.
///
/// For `gamma = [-B  Xi_next]` the admissible controls given the state
/// block `X` are `U = q_x X + q_lambda Lambda` with `Lambda` free, where
/// `q_x = [I 0] gamma^+ A` and `q_lambda = [I 0](I - gamma^+ gamma)`; the
/// state must in turn satisfy `psi_x X = 0` with
/// `psi_x = (gamma gamma^+ - I) A`.
#[derive(Debug, Clone)]
pub struct FeasibleStep {
    pub q_x: Array2<f64>,
    pub q_lambda: Array2<f64>,
    pub gamma: Array2<f64>,
    pub psi_x: Array2<f64>,
    pub xi_next: NullSpaceBasis,
}

/// Compute the feasible-set data for one backward step. A zero-column
/// `xi_next` encodes the terminal case, where the next state block must be
/// exactly zero and `gamma` degenerates to `-B`.
pub fn feasible_step(plant: &Plant, xi_next: &NullSpaceBasis) -> Result<FeasibleStep> {
    feasible_step_raw(&plant.a, &plant.b, xi_next)
}

/// As [`feasible_step`] but on raw matrices, so the vectorized path can
/// pass a lifted `a` and an input map with possibly zero columns.
fn feasible_step_raw(
    a: &Array2<f64>,
    b: &Array2<f64>,
    xi_next: &NullSpaceBasis,
) -> Result<FeasibleStep> {
    let n = a.nrows();
    if xi_next.ambient_dim() != n {
        return Err(Error::DimensionMismatch(format!(
            "null-space basis lives in dim {}, state dim is {n}",
            xi_next.ambient_dim()
        )));
    }
    let n_u = b.ncols();
    let gamma = hstack(&[(-b).view(), xi_next.matrix().view()])?;
    let gamma_pinv = pinv(&gamma)?;
    let q_x = gamma_pinv.slice(s![..n_u, ..]).dot(a);
    let projector = Array2::eye(gamma.ncols()) - gamma_pinv.dot(&gamma);
    let q_lambda = projector.slice(s![..n_u, ..]).to_owned();
    let psi_x = (gamma.dot(&gamma_pinv) - Array2::<f64>::eye(n)).dot(a);
    Ok(FeasibleStep {
        q_x,
        q_lambda,
        gamma,
        psi_x,
        xi_next: xi_next.clone(),
    })
}

/// Optimal inner gain `q_x + q_lambda L` for one H2 backward step, where
/// `L` minimizes the step cost plus cost-to-go over the free parameter.
/// The normal-equation matrix can be singular (the free parameter may be
/// immaterial), so the minimum-norm solution via pseudoinverse is used,
/// with its rank cutoff anchored at the natural magnitude of the quadratic
/// form so that a parameter with no real effect yields `L = 0`.
fn h2_inner_gain(
    a: &Array2<f64>,
    b_eff: &Array2<f64>,
    c: &Array2<f64>,
    d_eff: &Array2<f64>,
    p: &Array2<f64>,
    q_x: &Array2<f64>,
    q_lambda: &Array2<f64>,
) -> Result<Array2<f64>> {
    let a_x = a + &b_eff.dot(q_x);
    let b_l = b_eff.dot(q_lambda);
    let c_x = c + &d_eff.dot(q_x);
    let d_l = d_eff.dot(q_lambda);
    let l_d = d_l.t().dot(&d_l) + b_l.t().dot(p).dot(&b_l);
    let l_n = d_l.t().dot(&c_x) + b_l.t().dot(p).dot(&a_x);
    let md = max_abs(&d_eff.view());
    let mb = max_abs(&b_eff.view());
    let gram_scale = md * md + mb * mb * max_abs(&p.view());
    let l = -pinv_scaled(&l_d, DEFAULT_RANK_TOL, gram_scale)?.dot(&l_n);
    Ok(q_x + &q_lambda.dot(&l))
}

/// `P <- (C + D K)^T (C + D K) + (A + B K)^T P (A + B K)`
fn update_cost_matrix(
    c: &Array2<f64>,
    d: &Array2<f64>,
    a: &Array2<f64>,
    b: &Array2<f64>,
    k: &Array2<f64>,
    p: &Array2<f64>,
) -> Array2<f64> {
    let cdk = c + &d.dot(k);
    let abk = a + &b.dot(k);
    cdk.t().dot(&cdk) + abk.t().dot(p).dot(&abk)
}

/// Roll the gains forward from `phi_x[1] = I` in matrix space.
fn forward_pass(a: &Array2<f64>, b: &Array2<f64>, gains: &[Array2<f64>]) -> Result<SystemResponse> {
    let n_x = a.nrows();
    let t_len = gains.len();
    let mut phi_x = Vec::with_capacity(t_len);
    let mut phi_u = Vec::with_capacity(t_len);
    phi_x.push(Array2::eye(n_x));
    for tau in 0..t_len {
        let u = gains[tau].dot(&phi_x[tau]);
        if tau + 1 < t_len {
            phi_x.push(a.dot(&phi_x[tau]) + b.dot(&u));
        }
        phi_u.push(u);
    }
    SystemResponse::new(phi_x, phi_u)
}

/// Plain finite-horizon synthesis: minimizes the H2 objective subject to
/// the dynamics recursion, `phi_x[1] = I`, and the terminal boundary
/// condition. Fails with [`Error::Infeasible`] when the plant cannot be
/// driven to zero within the horizon.
pub fn synthesize_h2_plain(problem: &SynthesisProblem) -> Result<(SystemResponse, GainSchedule)> {
    crate::on_compute_stack(|| synthesize_h2_plain_impl(problem))
}

fn synthesize_h2_plain_impl(problem: &SynthesisProblem) -> Result<(SystemResponse, GainSchedule)> {
    if problem.constraint.is_some() {
        return Err(Error::InvalidArgument(
            "problem carries a constraint; use synthesize_h2_constrained".into(),
        ));
    }
    let a = &problem.plant.a;
    let b = &problem.plant.b;
    let c = &problem.objective.c;
    let d = &problem.objective.d;
    let n_x = problem.n_x();
    let t_len = problem.horizon;

    // Backward pass. The terminal null space is Null(I), i.e. empty.
    let mut xi = NullSpaceBasis::empty(n_x);
    let mut p = Array2::zeros((n_x, n_x));
    let mut gains_rev: Vec<Array2<f64>> = Vec::with_capacity(t_len);
    let mut p_trace_rev: Vec<Array2<f64>> = Vec::with_capacity(t_len);
    let mut psi_at_start: Option<Array2<f64>> = None;
    // psi is an exact zero whenever the step is unrestricted, so its rank
    // decision is anchored at the scale of A rather than of psi itself.
    let psi_scale = 1.0 + max_abs(&a.view());
    for tau in (1..=t_len).rev() {
        let step = feasible_step(&problem.plant, &xi)?;
        let k = h2_inner_gain(a, b, c, d, &p, &step.q_x, &step.q_lambda)?;
        p = update_cost_matrix(c, d, a, b, &k, &p);
        gains_rev.push(k);
        p_trace_rev.push(p.clone());
        if tau > 1 {
            xi = null_space_basis_scaled(&step.psi_x, DEFAULT_RANK_TOL, psi_scale)?;
        } else {
            psi_at_start = Some(step.psi_x);
        }
    }

    // phi_x[1] = I must lie in the tracked null space, otherwise the
    // boundary condition is unreachable within T steps.
    let psi = psi_at_start.expect("loop ran at least once");
    let residual = max_abs(&psi.view());
    let tolerance = FEASIBILITY_RTOL * (1.0 + max_abs(&a.view()));
    if residual > tolerance {
        return Err(Error::Infeasible {
            residual,
            tolerance,
        });
    }

    gains_rev.reverse();
    p_trace_rev.reverse();
    let response = forward_pass(a, b, &gains_rev)?;
    Ok((
        response,
        GainSchedule {
            gains: gains_rev,
            p_trace: Some(p_trace_rev),
        },
    ))
}

/// Infinite-horizon approximation: the same backward recursion without the
/// boundary condition, so every control is unconstrained and
/// `K[tau] = -(D^T D + B^T P B)^{-1} (D^T C + B^T P A)`. The returned
/// response generally violates the terminal condition.
pub fn synthesize_h2_approx(problem: &SynthesisProblem) -> Result<(SystemResponse, GainSchedule)> {
    if problem.constraint.is_some() {
        return Err(Error::InvalidArgument(
            "problem carries a constraint; use synthesize_h2_constrained".into(),
        ));
    }
    let a = &problem.plant.a;
    let b = &problem.plant.b;
    let c = &problem.objective.c;
    let d = &problem.objective.d;
    let t_len = problem.horizon;

    let mut p = Array2::zeros((problem.n_x(), problem.n_x()));
    let mut gains_rev: Vec<Array2<f64>> = Vec::with_capacity(t_len);
    let mut p_trace_rev: Vec<Array2<f64>> = Vec::with_capacity(t_len);
    for _tau in (1..=t_len).rev() {
        let g = d.t().dot(d) + b.t().dot(&p).dot(b);
        let w = d.t().dot(c) + b.t().dot(&p).dot(a);
        let k = match g.inv() {
            Ok(g_inv) => -g_inv.dot(&w),
            Err(_) => {
                log::warn!("singular gain denominator; falling back to pseudoinverse");
                -pinv(&g)?.dot(&w)
            }
        };
        p = update_cost_matrix(c, d, a, b, &k, &p);
        gains_rev.push(k);
        p_trace_rev.push(p.clone());
    }
    gains_rev.reverse();
    p_trace_rev.reverse();
    let response = forward_pass(a, b, &gains_rev)?;
    Ok((
        response,
        GainSchedule {
            gains: gains_rev,
            p_trace: Some(p_trace_rev),
        },
    ))
}

/// Constrained synthesis on vectorized components.
///
/// Controls are confined to the null space of `S_u[tau] - I` through its
/// orthonormal basis, the feasible-set recursion runs on the lifted plant,
/// and the tracked state null space intersects the feasible-set condition
/// with `Null(S_x[tau] - I)`. Gains act on `vec(phi_x[tau])`.
pub fn synthesize_h2_constrained(
    problem: &SynthesisProblem,
) -> Result<(SystemResponse, GainSchedule)> {
    let constraint = problem.constraint.as_ref().ok_or_else(|| {
        Error::InvalidArgument(
            "problem has no constraint; use synthesize_h2_plain".into(),
        )
    })?;
    let n_x = problem.n_x();
    let n_u = problem.n_u();
    constraint.check_dims(n_x, n_u, problem.horizon)?;
    let t_len = problem.horizon;
    let state_dim = n_x * n_x;
    let ctrl_dim = n_x * n_u;

    let a_lift = left_kron_lift(&problem.plant.a.view(), n_x);
    let b_lift = left_kron_lift(&problem.plant.b.view(), n_x);
    let c_lift = left_kron_lift(&problem.objective.c.view(), n_x);
    let d_lift = left_kron_lift(&problem.objective.d.view(), n_x);

    let mut xi = NullSpaceBasis::empty(state_dim);
    let mut p = Array2::zeros((state_dim, state_dim));
    let mut gains_rev: Vec<Array2<f64>> = Vec::with_capacity(t_len);
    let mut p_trace_rev: Vec<Array2<f64>> = Vec::with_capacity(t_len);
    let mut psi_at_start: Option<Array2<f64>> = None;
    let eye_ctrl = Array2::<f64>::eye(ctrl_dim);
    let eye_state = Array2::<f64>::eye(state_dim);
    let psi_scale = 1.0 + max_abs(&a_lift.view());
    for tau in (1..=t_len).rev() {
        let xi_su = null_space_basis_scaled(
            &(&constraint.s_u()[tau - 1] - &eye_ctrl),
            DEFAULT_RANK_TOL,
            1.0,
        )?;
        let b_eff = b_lift.dot(xi_su.matrix());
        let d_eff = d_lift.dot(xi_su.matrix());
        let step = feasible_step_raw(&a_lift, &b_eff, &xi)?;
        let k_inner = h2_inner_gain(
            &a_lift, &b_eff, &c_lift, &d_eff, &p, &step.q_x, &step.q_lambda,
        )?;
        let k = xi_su.matrix().dot(&k_inner);
        p = update_cost_matrix(&c_lift, &d_lift, &a_lift, &b_lift, &k, &p);
        gains_rev.push(k);
        p_trace_rev.push(p.clone());
        // The state must satisfy both the membership condition and the
        // feasible-set condition of this step.
        let psi = vstack(&[
            (&constraint.s_x()[tau - 1] - &eye_state).view(),
            step.psi_x.view(),
        ])?;
        if tau > 1 {
            xi = null_space_basis_scaled(&psi, DEFAULT_RANK_TOL, psi_scale)?;
        } else {
            psi_at_start = Some(psi);
        }
    }

    let psi = psi_at_start.expect("loop ran at least once");
    let x0 = vectorize(&Array2::eye(n_x).view());
    let residual = max_abs_vec(&psi.dot(&x0).view());
    let tolerance = FEASIBILITY_RTOL * (1.0 + max_abs(&problem.plant.a.view()));
    if residual > tolerance {
        return Err(Error::Infeasible {
            residual,
            tolerance,
        });
    }

    gains_rev.reverse();
    p_trace_rev.reverse();

    // Forward pass on vectorized states.
    let mut phi_x = Vec::with_capacity(t_len);
    let mut phi_u = Vec::with_capacity(t_len);
    let mut x: Array1<f64> = x0;
    phi_x.push(Array2::eye(n_x));
    for tau in 0..t_len {
        let u = gains_rev[tau].dot(&x);
        if tau + 1 < t_len {
            x = a_lift.dot(&x) + b_lift.dot(&u);
            phi_x.push(unvectorize(&x.view(), n_x, n_x)?);
        }
        phi_u.push(unvectorize(&u.view(), n_u, n_x)?);
    }
    let response = SystemResponse::new(phi_x, phi_u)?;
    Ok((
        response,
        GainSchedule {
            gains: gains_rev,
            p_trace: Some(p_trace_rev),
        },
    ))
}

/// Total H2 cost `sum_tau ||C phi_x[tau] + D phi_u[tau]||_F^2`.
/// Dimensions must match; this is a plain evaluation with no failure modes.
pub fn evaluate_h2(objective: &H2Objective, response: &SystemResponse) -> f64 {
    let mut total = 0.0;
    for tau in 0..response.horizon() {
        let step = objective.c.dot(&response.phi_x()[tau]) + objective.d.dot(&response.phi_u()[tau]);
        total += step.iter().map(|v| v * v).sum::<f64>();
    }
    total
}
