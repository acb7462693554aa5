//! Plant and objective containers, plus the random chain-system generator
//! used by the benchmark harness.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::constraints::EntrywiseConstraint;
use crate::jsonmat::{mat_to_rows, rows_to_mat};
use crate::linalg::ensure_finite;
use crate::{Error, Result};

/// Discrete-time LTI plant `x[t+1] = A x[t] + B u[t]`.
#[derive(Debug, Clone)]
pub struct Plant {
    /// State matrix, `n_x x n_x`.
    pub a: Array2<f64>,
    /// Input matrix, `n_x x n_u`.
    pub b: Array2<f64>,
}

impl Plant {
    pub fn new(a: Array2<f64>, b: Array2<f64>) -> Result<Self> {
        ensure_finite("A", &a.view())?;
        ensure_finite("B", &b.view())?;
        if a.nrows() != a.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "A must be square, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        if b.nrows() != a.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "B must have {} rows to match A, got {}",
                a.nrows(),
                b.nrows()
            )));
        }
        if a.nrows() == 0 || b.ncols() == 0 {
            return Err(Error::InvalidArgument("plant dimensions must be positive".into()));
        }
        Ok(Plant { a, b })
    }

    pub fn n_x(&self) -> usize {
        self.a.nrows()
    }

    pub fn n_u(&self) -> usize {
        self.b.ncols()
    }
}

/// Per-step quadratic cost `||C phi_x[tau] + D phi_u[tau]||_F^2`.
#[derive(Debug, Clone)]
pub struct H2Objective {
    pub c: Array2<f64>,
    pub d: Array2<f64>,
}

impl H2Objective {
    pub fn new(c: Array2<f64>, d: Array2<f64>) -> Result<Self> {
        ensure_finite("C", &c.view())?;
        ensure_finite("D", &d.view())?;
        if c.nrows() != d.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "C and D must have equal row counts, got {} and {}",
                c.nrows(),
                d.nrows()
            )));
        }
        Ok(H2Objective { c, d })
    }
}

/// The objective `||[phi_x; phi_u]||_H2^2`, i.e. `C = [I; 0]`, `D = [0; I]`,
/// so the per-step cost is `||phi_x[tau]||_F^2 + ||phi_u[tau]||_F^2`.
pub fn default_h2_objective(n_x: usize, n_u: usize) -> H2Objective {
    let mut c = Array2::zeros((n_x + n_u, n_x));
    let mut d = Array2::zeros((n_x + n_u, n_u));
    for i in 0..n_x {
        c[[i, i]] = 1.0;
    }
    for i in 0..n_u {
        d[[n_x + i, i]] = 1.0;
    }
    H2Objective { c, d }
}

/// A complete synthesis instance: plant, objective, FIR horizon, and an
/// optional entrywise linear constraint on the response.
#[derive(Debug, Clone)]
pub struct SynthesisProblem {
    pub plant: Plant,
    pub objective: H2Objective,
    pub horizon: usize,
    pub constraint: Option<EntrywiseConstraint>,
}

impl SynthesisProblem {
    pub fn new(plant: Plant, objective: H2Objective, horizon: usize) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::InvalidArgument("horizon must be at least 1".into()));
        }
        if objective.c.ncols() != plant.n_x() || objective.d.ncols() != plant.n_u() {
            return Err(Error::DimensionMismatch(format!(
                "objective expects C with {} and D with {} columns, got {} and {}",
                plant.n_x(),
                plant.n_u(),
                objective.c.ncols(),
                objective.d.ncols()
            )));
        }
        Ok(SynthesisProblem {
            plant,
            objective,
            horizon,
            constraint: None,
        })
    }

    pub fn with_constraint(mut self, constraint: EntrywiseConstraint) -> Result<Self> {
        constraint.check_dims(self.plant.n_x(), self.plant.n_u(), self.horizon)?;
        self.constraint = Some(constraint);
        Ok(self)
    }

    pub fn n_x(&self) -> usize {
        self.plant.n_x()
    }

    pub fn n_u(&self) -> usize {
        self.plant.n_u()
    }

    /// Serialize to the problem-file JSON document.
    pub fn to_json(&self) -> String {
        let doc = ProblemJson {
            a: mat_to_rows(&self.plant.a),
            b: mat_to_rows(&self.plant.b),
            c: mat_to_rows(&self.objective.c),
            d: mat_to_rows(&self.objective.d),
            horizon: self.horizon,
            constraint: self.constraint.as_ref().map(|c| c.to_json_value()),
        };
        serde_json::to_string_pretty(&doc).expect("problem serialization cannot fail")
    }

    /// Parse a problem-file JSON document.
    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ProblemJson = serde_json::from_str(text)
            .map_err(|e| Error::InvalidArgument(format!("problem JSON: {e}")))?;
        let plant = Plant::new(rows_to_mat("A", &doc.a)?, rows_to_mat("B", &doc.b)?)?;
        let objective = H2Objective::new(rows_to_mat("C", &doc.c)?, rows_to_mat("D", &doc.d)?)?;
        let problem = SynthesisProblem::new(plant, objective, doc.horizon)?;
        match doc.constraint {
            Some(value) => problem.with_constraint(EntrywiseConstraint::from_json_value(&value)?),
            None => Ok(problem),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct ProblemJson {
    #[serde(rename = "A")]
    a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    b: Vec<Vec<f64>>,
    #[serde(rename = "C")]
    c: Vec<Vec<f64>>,
    #[serde(rename = "D")]
    d: Vec<Vec<f64>>,
    #[serde(rename = "T")]
    horizon: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    constraint: Option<serde_json::Value>,
}

/// Recipe for a random fully actuated chain plant.
///
/// `A` is tridiagonal with diagonal entries drawn from `diag_range` and
/// off-diagonal entries from `offdiag_range`; `B` is diagonal with entries
/// from `actuation_range`, which must exclude zero so that `B` stays
/// invertible. Entries are drawn from a ChaCha8 stream seeded with `seed`:
/// first the diagonal of `A` (ascending index), then the sub-diagonal,
/// then the super-diagonal, then the diagonal of `B`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChainSpec {
    pub n_x: usize,
    pub seed: u64,
    pub diag_range: (f64, f64),
    pub offdiag_range: (f64, f64),
    pub actuation_range: (f64, f64),
}

impl ChainSpec {
    /// Defaults: diagonal `U(0.4, 0.8)`, off-diagonal `U(-0.3, 0.3)`,
    /// actuation `U(0.5, 1.5)`. The resulting chains sit near the edge of
    /// stability and are deadbeat-controllable.
    pub fn new(n_x: usize, seed: u64) -> Self {
        ChainSpec {
            n_x,
            seed,
            diag_range: (0.4, 0.8),
            offdiag_range: (-0.3, 0.3),
            actuation_range: (0.5, 1.5),
        }
    }
}

fn check_interval(name: &str, (lo, hi): (f64, f64)) -> Result<()> {
    if !lo.is_finite() || !hi.is_finite() {
        return Err(Error::InvalidArgument(format!("{name} interval must be finite")));
    }
    if lo > hi {
        return Err(Error::InvalidArgument(format!(
            "{name} interval is degenerate: {lo} > {hi}"
        )));
    }
    Ok(())
}

/// Generate the tridiagonal chain plant described by `spec`.
/// Deterministic: a given spec always produces the same plant.
pub fn generate_chain(spec: &ChainSpec) -> Result<Plant> {
    if spec.n_x == 0 {
        return Err(Error::InvalidArgument("chain needs at least one node".into()));
    }
    check_interval("diag_range", spec.diag_range)?;
    check_interval("offdiag_range", spec.offdiag_range)?;
    check_interval("actuation_range", spec.actuation_range)?;
    let (alo, ahi) = spec.actuation_range;
    if alo <= 0.0 && ahi >= 0.0 {
        return Err(Error::InvalidArgument(
            "actuation_range must exclude zero so that B stays invertible".into(),
        ));
    }

    let n = spec.n_x;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let draw = |range: (f64, f64), rng: &mut ChaCha8Rng| -> f64 {
        if range.0 == range.1 {
            range.0
        } else {
            rng.gen_range(range.0..range.1)
        }
    };

    let mut a = Array2::zeros((n, n));
    for i in 0..n {
        a[[i, i]] = draw(spec.diag_range, &mut rng);
    }
    for i in 0..n.saturating_sub(1) {
        a[[i + 1, i]] = draw(spec.offdiag_range, &mut rng);
    }
    for i in 0..n.saturating_sub(1) {
        a[[i, i + 1]] = draw(spec.offdiag_range, &mut rng);
    }
    let mut b = Array2::zeros((n, n));
    for i in 0..n {
        b[[i, i]] = draw(spec.actuation_range, &mut rng);
    }
    Plant::new(a, b)
}

/// Hop-distance matrix of the chain graph: `dist(i, j) = |i - j|`.
pub fn chain_distance(n_x: usize) -> Array2<f64> {
    Array2::from_shape_fn((n_x, n_x), |(i, j)| (i as f64 - j as f64).abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn single_node_chain() {
        let plant = generate_chain(&ChainSpec::new(1, 7)).unwrap();
        assert_eq!(plant.a.dim(), (1, 1));
        assert_eq!(plant.b.dim(), (1, 1));
        assert!(plant.b[[0, 0]].abs() >= 0.5);
    }

    #[test]
    fn chain_is_deterministic() {
        let spec = ChainSpec::new(3, 42);
        let p1 = generate_chain(&spec).unwrap();
        let p2 = generate_chain(&spec).unwrap();
        assert_eq!(p1.a, p2.a);
        assert_eq!(p1.b, p2.b);
    }

    #[test]
    fn chain_structure_is_tridiagonal() {
        let plant = generate_chain(&ChainSpec::new(5, 3)).unwrap();
        let mut nonzero_slots = 0;
        for i in 0..5 {
            for j in 0..5 {
                if (i as i64 - j as i64).abs() <= 1 {
                    nonzero_slots += 1;
                } else {
                    assert_eq!(plant.a[[i, j]], 0.0, "A[{i},{j}] outside the band");
                }
            }
        }
        assert_eq!(nonzero_slots, 5 + 4 + 4);
        for i in 0..5 {
            assert!(plant.b[[i, i]] >= 0.5);
            for j in 0..5 {
                if i != j {
                    assert_eq!(plant.b[[i, j]], 0.0);
                }
            }
        }
    }

    #[test]
    fn degenerate_interval_is_rejected() {
        let mut spec = ChainSpec::new(3, 0);
        spec.diag_range = (1.0, 0.5);
        assert!(generate_chain(&spec).is_err());
    }

    #[test]
    fn actuation_range_must_exclude_zero() {
        let mut spec = ChainSpec::new(3, 0);
        spec.actuation_range = (-1.0, 1.0);
        assert!(generate_chain(&spec).is_err());
    }

    #[test]
    fn default_objective_blocks() {
        let obj = default_h2_objective(1, 1);
        assert_eq!(obj.c, array![[1.0], [0.0]]);
        assert_eq!(obj.d, array![[0.0], [1.0]]);
        let obj2 = default_h2_objective(2, 2);
        assert_eq!(obj2.c.dim(), (4, 2));
        assert_eq!(obj2.d.dim(), (4, 2));
        assert_eq!(obj2.c.slice(ndarray::s![..2, ..]), Array2::<f64>::eye(2));
        assert_eq!(obj2.d.slice(ndarray::s![2.., ..]), Array2::<f64>::eye(2));
    }

    #[test]
    fn chain_distances() {
        let d = chain_distance(6);
        assert_eq!(d[[0, 0]], 0.0);
        assert_eq!(d[[0, 2]], 2.0);
        for i in 0..6 {
            for j in 0..6 {
                assert_eq!(d[[i, j]], d[[j, i]]);
            }
        }
    }

    #[test]
    fn problem_json_roundtrip() {
        let plant = generate_chain(&ChainSpec::new(3, 11)).unwrap();
        let obj = default_h2_objective(3, 3);
        let problem = SynthesisProblem::new(plant, obj, 4).unwrap();
        let text = problem.to_json();
        let back = SynthesisProblem::from_json(&text).unwrap();
        assert_eq!(back.horizon, 4);
        assert_eq!(back.plant.a, problem.plant.a);
        assert_eq!(back.objective.d, problem.objective.d);
        assert!(back.constraint.is_none());
    }

    #[test]
    fn malformed_problem_json_is_rejected() {
        assert!(SynthesisProblem::from_json("{\"A\": [[1.0]]").is_err());
        assert!(SynthesisProblem::from_json("{}").is_err());
    }
}
