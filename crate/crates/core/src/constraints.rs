//! Entrywise linear constraints on the response components and the
//! d-locality constraint generator for chain systems.
//!
//! Membership in the constraint set means `vec(phi) = S vec(phi)` for each
//! step and component, with vectorization fixed column-major throughout
//! the crate. Sparsity masks are the special case of binary diagonal `S`.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::jsonmat::{mat_to_rows, rows_to_mat};
use crate::linalg::{ensure_finite, max_abs_vec, vectorize};
use crate::model::chain_distance;
use crate::synth::SystemResponse;
use crate::{Error, Result};

/// Boolean masks over the response entries, one per step and component;
/// `true` marks an entry that may be nonzero.
#[derive(Debug, Clone)]
pub struct SparsityPattern {
    pub phi_x: Vec<Array2<bool>>,
    pub phi_u: Vec<Array2<bool>>,
}

impl SparsityPattern {
    pub fn new(phi_x: Vec<Array2<bool>>, phi_u: Vec<Array2<bool>>) -> Result<Self> {
        if phi_x.is_empty() || phi_x.len() != phi_u.len() {
            return Err(Error::DimensionMismatch(format!(
                "pattern needs equal, nonzero step counts, got {} and {}",
                phi_x.len(),
                phi_u.len()
            )));
        }
        let x_dim = phi_x[0].dim();
        let u_dim = phi_u[0].dim();
        if phi_x.iter().any(|m| m.dim() != x_dim) || phi_u.iter().any(|m| m.dim() != u_dim) {
            return Err(Error::DimensionMismatch(
                "pattern mask shapes differ across steps".into(),
            ));
        }
        if x_dim.0 != x_dim.1 || u_dim.1 != x_dim.0 {
            return Err(Error::DimensionMismatch(format!(
                "state masks must be square and control masks must share their column count, \
                 got {x_dim:?} and {u_dim:?}"
            )));
        }
        Ok(SparsityPattern { phi_x, phi_u })
    }

    pub fn horizon(&self) -> usize {
        self.phi_x.len()
    }
}

/// Per-step matrices `S_x[tau]`, `S_u[tau]` acting on vectorized response
/// components. General (non-diagonal) matrices are accepted; the builders
/// in this module only produce binary diagonal ones.
#[derive(Debug, Clone)]
pub struct EntrywiseConstraint {
    s_x: Vec<Array2<f64>>,
    s_u: Vec<Array2<f64>>,
    pattern: Option<SparsityPattern>,
}

impl EntrywiseConstraint {
    /// Build from general per-step `S` matrices. Each `s_x[tau]` must be a
    /// square matrix on `n_x^2` and each `s_u[tau]` on `n_x * n_u`.
    pub fn new(s_x: Vec<Array2<f64>>, s_u: Vec<Array2<f64>>) -> Result<Self> {
        if s_x.is_empty() || s_x.len() != s_u.len() {
            return Err(Error::DimensionMismatch(format!(
                "constraint needs equal, nonzero step counts, got {} and {}",
                s_x.len(),
                s_u.len()
            )));
        }
        let x_dim = s_x[0].dim();
        let u_dim = s_u[0].dim();
        for (tau, m) in s_x.iter().enumerate() {
            ensure_finite(&format!("S_x[{}]", tau + 1), &m.view())?;
            if m.dim() != x_dim || m.nrows() != m.ncols() {
                return Err(Error::DimensionMismatch(format!(
                    "S_x[{}] has shape {:?}, expected square {:?}",
                    tau + 1,
                    m.dim(),
                    x_dim
                )));
            }
        }
        for (tau, m) in s_u.iter().enumerate() {
            ensure_finite(&format!("S_u[{}]", tau + 1), &m.view())?;
            if m.dim() != u_dim || m.nrows() != m.ncols() {
                return Err(Error::DimensionMismatch(format!(
                    "S_u[{}] has shape {:?}, expected square {:?}",
                    tau + 1,
                    m.dim(),
                    u_dim
                )));
            }
        }
        Ok(EntrywiseConstraint {
            s_x,
            s_u,
            pattern: None,
        })
    }

    pub fn horizon(&self) -> usize {
        self.s_x.len()
    }

    pub fn s_x(&self) -> &[Array2<f64>] {
        &self.s_x
    }

    pub fn s_u(&self) -> &[Array2<f64>] {
        &self.s_u
    }

    /// The sparsity masks this constraint was built from, if any.
    pub fn pattern(&self) -> Option<&SparsityPattern> {
        self.pattern.as_ref()
    }

    pub(crate) fn check_dims(&self, n_x: usize, n_u: usize, horizon: usize) -> Result<()> {
        if self.horizon() != horizon {
            return Err(Error::DimensionMismatch(format!(
                "constraint covers {} steps, problem horizon is {horizon}",
                self.horizon()
            )));
        }
        let want_x = n_x * n_x;
        let want_u = n_x * n_u;
        if self.s_x[0].nrows() != want_x || self.s_u[0].nrows() != want_u {
            return Err(Error::DimensionMismatch(format!(
                "constraint acts on vec dims ({}, {}), problem needs ({want_x}, {want_u})",
                self.s_x[0].nrows(),
                self.s_u[0].nrows()
            )));
        }
        Ok(())
    }

    pub(crate) fn to_json_value(&self) -> serde_json::Value {
        let doc = match &self.pattern {
            Some(p) => ConstraintJson::Sparsity {
                n_x: p.phi_x[0].nrows(),
                n_u: p.phi_u[0].nrows(),
                phi_x_allowed: p.phi_x.iter().map(mask_to_indices).collect(),
                phi_u_allowed: p.phi_u.iter().map(mask_to_indices).collect(),
            },
            None => ConstraintJson::Dense {
                s_x: self.s_x.iter().map(mat_to_rows).collect(),
                s_u: self.s_u.iter().map(mat_to_rows).collect(),
            },
        };
        serde_json::to_value(doc).expect("constraint serialization cannot fail")
    }

    pub(crate) fn from_json_value(value: &serde_json::Value) -> Result<Self> {
        let doc: ConstraintJson = serde_json::from_value(value.clone())
            .map_err(|e| Error::InvalidArgument(format!("constraint JSON: {e}")))?;
        match doc {
            ConstraintJson::Sparsity {
                n_x,
                n_u,
                phi_x_allowed,
                phi_u_allowed,
            } => {
                if phi_x_allowed.len() != phi_u_allowed.len() {
                    return Err(Error::DimensionMismatch(
                        "sparsity lists cover different step counts".into(),
                    ));
                }
                let phi_x = phi_x_allowed
                    .iter()
                    .map(|idx| indices_to_mask(n_x, n_x, idx))
                    .collect::<Result<Vec<_>>>()?;
                let phi_u = phi_u_allowed
                    .iter()
                    .map(|idx| indices_to_mask(n_u, n_x, idx))
                    .collect::<Result<Vec<_>>>()?;
                from_sparsity(&SparsityPattern::new(phi_x, phi_u)?)
            }
            ConstraintJson::Dense { s_x, s_u } => {
                let s_x = s_x
                    .iter()
                    .enumerate()
                    .map(|(t, rows)| rows_to_mat(&format!("S_x[{}]", t + 1), rows))
                    .collect::<Result<Vec<_>>>()?;
                let s_u = s_u
                    .iter()
                    .enumerate()
                    .map(|(t, rows)| rows_to_mat(&format!("S_u[{}]", t + 1), rows))
                    .collect::<Result<Vec<_>>>()?;
                EntrywiseConstraint::new(s_x, s_u)
            }
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum ConstraintJson {
    Sparsity {
        n_x: usize,
        n_u: usize,
        phi_x_allowed: Vec<Vec<(usize, usize)>>,
        phi_u_allowed: Vec<Vec<(usize, usize)>>,
    },
    Dense {
        s_x: Vec<Vec<Vec<f64>>>,
        s_u: Vec<Vec<Vec<f64>>>,
    },
}

fn mask_to_indices(mask: &Array2<bool>) -> Vec<(usize, usize)> {
    mask.indexed_iter()
        .filter(|(_, allowed)| **allowed)
        .map(|((i, j), _)| (i, j))
        .collect()
}

fn indices_to_mask(rows: usize, cols: usize, indices: &[(usize, usize)]) -> Result<Array2<bool>> {
    let mut mask = Array2::from_elem((rows, cols), false);
    for &(i, j) in indices {
        if i >= rows || j >= cols {
            return Err(Error::DimensionMismatch(format!(
                "allowed entry ({i}, {j}) outside a {rows}x{cols} mask"
            )));
        }
        mask[[i, j]] = true;
    }
    Ok(mask)
}

/// Binary diagonal `S` matrices from sparsity masks: the diagonal carries a
/// one at the column-major vec index of every allowed entry and a zero
/// where the entry is forced to vanish. The result is idempotent and
/// symmetric by construction.
pub fn from_sparsity(pattern: &SparsityPattern) -> Result<EntrywiseConstraint> {
    let diag_from_mask = |mask: &Array2<bool>| -> Array2<f64> {
        let (rows, cols) = mask.dim();
        let n = rows * cols;
        let mut s = Array2::zeros((n, n));
        for j in 0..cols {
            for i in 0..rows {
                if mask[[i, j]] {
                    let idx = j * rows + i; // column-major vec index
                    s[[idx, idx]] = 1.0;
                }
            }
        }
        s
    };
    let s_x = pattern.phi_x.iter().map(&diag_from_mask).collect();
    let s_u = pattern.phi_u.iter().map(&diag_from_mask).collect();
    let mut constraint = EntrywiseConstraint::new(s_x, s_u)?;
    constraint.pattern = Some(pattern.clone());
    Ok(constraint)
}

/// Sparsity masks for d-locality on a chain of `n_x` nodes with actuator
/// `i` collocated at node `i`.
///
/// The rule, with `dist(i, j) = |i - j|`:
///
/// * `phi_x[tau]` entry `(i, j)` is allowed iff
///   `dist(i, j) <= min(d, tau - 1)` — a disturbance spreads at most one
///   hop per step through the plant and is confined to `d` hops overall.
///   With `comm_delay = 0` the temporal part is dropped and only the
///   `d`-hop cap remains.
/// * `phi_u[tau]` entry `(i, j)` is allowed iff `tau > act_delay` and
///   `dist(i, j) <= min(d + 1, comm_delay * (tau - 1 - act_delay))` —
///   actuation starts after `act_delay` dead steps, disturbance
///   information then reaches `comm_delay` further hops per step, and
///   control support may extend one hop past `d` so that actuators on the
///   containment ring can cancel incoming spread. `comm_delay = 0` lifts
///   the propagation limit.
///
/// Tight combinations (slow communication, small `d`) yield constraint
/// sets that admit no response; the synthesizer reports those as
/// infeasible rather than loosening the masks.
pub fn d_locality_pattern(
    n_x: usize,
    n_u: usize,
    horizon: usize,
    d: usize,
    comm_delay: usize,
    act_delay: usize,
) -> Result<SparsityPattern> {
    if n_x == 0 || n_u == 0 || horizon == 0 {
        return Err(Error::InvalidArgument(
            "d_locality needs n_x, n_u, horizon >= 1".into(),
        ));
    }
    if n_u > n_x {
        return Err(Error::InvalidArgument(format!(
            "d_locality places actuator i at node i and needs n_u <= n_x, got {n_u} > {n_x}"
        )));
    }
    let dist = chain_distance(n_x);
    let mut phi_x = Vec::with_capacity(horizon);
    let mut phi_u = Vec::with_capacity(horizon);
    for tau in 1..=horizon {
        let x_reach = if comm_delay == 0 {
            d
        } else {
            d.min(tau - 1)
        };
        phi_x.push(Array2::from_shape_fn((n_x, n_x), |(i, j)| {
            dist[[i, j]] as usize <= x_reach
        }));
        let u_mask = if tau <= act_delay {
            Array2::from_elem((n_u, n_x), false)
        } else {
            let u_reach = if comm_delay == 0 {
                d + 1
            } else {
                (d + 1).min(comm_delay * (tau - 1 - act_delay))
            };
            Array2::from_shape_fn((n_u, n_x), |(i, j)| dist[[i, j]] as usize <= u_reach)
        };
        phi_u.push(u_mask);
    }
    SparsityPattern::new(phi_x, phi_u)
}

/// [`d_locality_pattern`] followed by [`from_sparsity`].
pub fn d_locality(
    n_x: usize,
    n_u: usize,
    horizon: usize,
    d: usize,
    comm_delay: usize,
    act_delay: usize,
) -> Result<EntrywiseConstraint> {
    from_sparsity(&d_locality_pattern(
        n_x, n_u, horizon, d, comm_delay, act_delay,
    )?)
}

/// Worst-case constraint violation of a response:
/// `max` over steps and components of `|| (S - I) vec(phi) ||_max`.
/// Zero means the response lies in the constraint set.
pub fn membership_residual(
    constraint: &EntrywiseConstraint,
    response: &SystemResponse,
) -> Result<f64> {
    if constraint.horizon() != response.horizon() {
        return Err(Error::DimensionMismatch(format!(
            "constraint covers {} steps, response has {}",
            constraint.horizon(),
            response.horizon()
        )));
    }
    let mut worst = 0.0f64;
    for tau in 0..response.horizon() {
        let x = vectorize(&response.phi_x()[tau].view());
        let u = vectorize(&response.phi_u()[tau].view());
        let s_x = &constraint.s_x[tau];
        let s_u = &constraint.s_u[tau];
        if s_x.ncols() != x.len() || s_u.ncols() != u.len() {
            return Err(Error::DimensionMismatch(format!(
                "constraint step {} acts on dims ({}, {}), response has ({}, {})",
                tau + 1,
                s_x.ncols(),
                s_u.ncols(),
                x.len(),
                u.len()
            )));
        }
        let rx = s_x.dot(&x) - &x;
        let ru = s_u.dot(&u) - &u;
        worst = worst.max(max_abs_vec(&rx.view())).max(max_abs_vec(&ru.view()));
    }
    Ok(worst)
}
