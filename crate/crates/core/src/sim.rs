//! State-feedback controller realization and closed-loop simulation.
//!
//! The controller is realized in disturbance-estimate form: at each step
//! it reconstructs the most recent disturbance from the measured state and
//! the convolution of past estimates with the state components, then forms
//! the control as the convolution of the estimates with the control
//! components. For an achievable finite-impulse-response pair this
//! reproduces the synthesized closed-loop maps exactly.

use std::collections::VecDeque;
use std::io::Write;

use ndarray::{Array1, Array2};

use crate::model::Plant;
use crate::synth::SystemResponse;
use crate::{Error, Result};

/// Stateful realization of a synthesized response.
///
/// Keeps a ring buffer of the last `T` disturbance estimates, initialized
/// to zero.
#[derive(Debug, Clone)]
pub struct ControllerRealization {
    phi_x: Vec<Array2<f64>>,
    phi_u: Vec<Array2<f64>>,
    history: VecDeque<Array1<f64>>,
}

impl ControllerRealization {
    pub fn new(response: &SystemResponse) -> Self {
        let n_x = response.n_x();
        let horizon = response.horizon();
        ControllerRealization {
            phi_x: response.phi_x().to_vec(),
            phi_u: response.phi_u().to_vec(),
            history: std::iter::repeat(Array1::zeros(n_x)).take(horizon).collect(),
        }
    }

    pub fn n_x(&self) -> usize {
        self.phi_x[0].nrows()
    }

    pub fn n_u(&self) -> usize {
        self.phi_u[0].nrows()
    }

    pub fn horizon(&self) -> usize {
        self.phi_x.len()
    }

    /// Forget all past disturbance estimates.
    pub fn reset(&mut self) {
        for w in &mut self.history {
            w.fill(0.0);
        }
    }

    /// Consume the measured state `x[t]` and produce the control `u[t]`.
    ///
    /// ```text
    /// w_hat[t] = x[t] - sum_{tau=2..T} phi_x[tau] w_hat[t - tau + 1]
    /// u[t]     =        sum_{tau=1..T} phi_u[tau] w_hat[t - tau + 1]
    /// ```
    pub fn step(&mut self, x_t: &Array1<f64>) -> Result<Array1<f64>> {
        if x_t.len() != self.n_x() {
            return Err(Error::DimensionMismatch(format!(
                "state has length {}, controller expects {}",
                x_t.len(),
                self.n_x()
            )));
        }
        let horizon = self.horizon();
        let mut w_now = x_t.to_owned();
        for tau in 2..=horizon {
            w_now -= &self.phi_x[tau - 1].dot(&self.history[tau - 2]);
        }
        let mut u = self.phi_u[0].dot(&w_now);
        for tau in 2..=horizon {
            u += &self.phi_u[tau - 1].dot(&self.history[tau - 2]);
        }
        self.history.push_front(w_now);
        self.history.pop_back();
        Ok(u)
    }
}

/// Disturbance, state, and control records of one closed-loop run:
/// `states[t] = x[t]` for `t = 0..=t_sim`, `controls[t] = u[t]` for
/// `t < t_sim`, and `disturbances[t]` the exogenous input absorbed into
/// `x[t]`.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub states: Vec<Array1<f64>>,
    pub controls: Vec<Array1<f64>>,
    pub disturbances: Vec<Array1<f64>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// `max_i |x_i[t]|`
    pub fn state_norm_inf(&self, t: usize) -> f64 {
        self.states[t].iter().fold(0.0f64, |acc, v| acc.max(v.abs()))
    }

    /// One CSV row per state coordinate, one column per time step.
    pub fn to_csv<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        let n = self.states[0].len();
        for i in 0..n {
            let row: Vec<String> = self.states.iter().map(|x| format!("{}", x[i])).collect();
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Simulate the closed loop after a unit impulse at `node`: `x[0] = e_node`
/// and `x[t+1] = A x[t] + B u[t]` with no further disturbance. The
/// controller's internal buffer is reset first.
pub fn simulate_impulse(
    plant: &Plant,
    controller: &mut ControllerRealization,
    node: usize,
    t_sim: usize,
) -> Result<Trajectory> {
    if node >= plant.n_x() {
        return Err(Error::InvalidArgument(format!(
            "impulse node {node} out of range for {} states",
            plant.n_x()
        )));
    }
    if t_sim == 0 {
        return Err(Error::InvalidArgument("t_sim must be at least 1".into()));
    }
    if controller.n_x() != plant.n_x() || controller.n_u() != plant.n_u() {
        return Err(Error::DimensionMismatch(format!(
            "controller is ({}, {}), plant is ({}, {})",
            controller.n_x(),
            controller.n_u(),
            plant.n_x(),
            plant.n_u()
        )));
    }
    controller.reset();

    let n_x = plant.n_x();
    let mut impulse = Array1::zeros(n_x);
    impulse[node] = 1.0;

    let mut states = Vec::with_capacity(t_sim + 1);
    let mut controls = Vec::with_capacity(t_sim);
    let mut disturbances = vec![Array1::zeros(n_x); t_sim + 1];
    disturbances[0] = impulse.clone();
    states.push(impulse);
    for t in 0..t_sim {
        let u = controller.step(&states[t])?;
        let next = plant.a.dot(&states[t]) + plant.b.dot(&u);
        states.push(next);
        controls.push(u);
    }
    Ok(Trajectory {
        states,
        controls,
        disturbances,
    })
}

/// Space-time grid of `log10(|x_i[t]|)` clipped below at `log10(floor)`;
/// rows are state coordinates, columns are time steps.
pub fn log_heatmap(trajectory: &Trajectory, floor: f64) -> Result<Array2<f64>> {
    if floor <= 0.0 {
        return Err(Error::InvalidArgument("heatmap floor must be positive".into()));
    }
    let n = trajectory.states[0].len();
    let t_len = trajectory.states.len();
    let floor_log = floor.log10();
    Ok(Array2::from_shape_fn((n, t_len), |(i, t)| {
        trajectory.states[t][i].abs().log10().max(floor_log)
    }))
}

/// CSV dump of a heatmap grid: one row per state coordinate.
pub fn heatmap_to_csv<W: Write>(grid: &Array2<f64>, out: &mut W) -> std::io::Result<()> {
    for row in grid.rows() {
        let cells: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        writeln!(out, "{}", cells.join(","))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{default_h2_objective, generate_chain, ChainSpec, SynthesisProblem};
    use crate::synth::{synthesize_h2_approx, synthesize_h2_plain};
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn plain_controller(n: usize, horizon: usize, seed: u64) -> (Plant, ControllerRealization) {
        let plant = generate_chain(&ChainSpec::new(n, seed)).unwrap();
        let problem =
            SynthesisProblem::new(plant.clone(), default_h2_objective(n, n), horizon).unwrap();
        let (response, _) = synthesize_h2_plain(&problem).unwrap();
        (plant, ControllerRealization::new(&response))
    }

    #[test]
    fn zero_state_with_zero_history_yields_zero_control() {
        let (_, mut controller) = plain_controller(3, 3, 1);
        let u = controller.step(&Array1::zeros(3)).unwrap();
        assert_eq!(u.iter().fold(0.0f64, |a, v| a.max(v.abs())), 0.0);
    }

    #[test]
    fn first_step_after_impulse_applies_first_control_component() {
        let n = 3;
        let plant = generate_chain(&ChainSpec::new(n, 5)).unwrap();
        let problem =
            SynthesisProblem::new(plant, default_h2_objective(n, n), 4).unwrap();
        let (response, _) = synthesize_h2_plain(&problem).unwrap();
        let mut controller = ControllerRealization::new(&response);
        let mut e1 = Array1::zeros(n);
        e1[1] = 1.0;
        let u = controller.step(&e1).unwrap();
        assert_abs_diff_eq!(u, response.phi_u()[0].column(1).to_owned(), epsilon = 1e-12);
    }

    #[test]
    fn impulse_rollout_reproduces_response_columns() {
        let n = 4;
        let horizon = 5;
        let plant = generate_chain(&ChainSpec::new(n, 11)).unwrap();
        let problem =
            SynthesisProblem::new(plant.clone(), default_h2_objective(n, n), horizon).unwrap();
        let (response, _) = synthesize_h2_plain(&problem).unwrap();
        let mut controller = ControllerRealization::new(&response);
        for node in 0..n {
            let traj = simulate_impulse(&plant, &mut controller, node, horizon + 4).unwrap();
            for t in 0..horizon {
                let expected = response.phi_x()[t].column(node).to_owned();
                assert_abs_diff_eq!(traj.states[t], expected, epsilon = 1e-8);
                let expected_u = response.phi_u()[t].column(node).to_owned();
                assert_abs_diff_eq!(traj.controls[t], expected_u, epsilon = 1e-8);
            }
            // FIR: the state is dead after the horizon.
            for t in horizon..traj.len() {
                assert!(traj.state_norm_inf(t) <= 1e-8, "t={t}");
            }
        }
    }

    #[test]
    fn approx_controller_misses_the_fir_property() {
        let n = 4;
        let horizon = 3;
        let plant = generate_chain(&ChainSpec::new(n, 11)).unwrap();
        let problem =
            SynthesisProblem::new(plant.clone(), default_h2_objective(n, n), horizon).unwrap();
        let (response, _) = synthesize_h2_approx(&problem).unwrap();
        let mut controller = ControllerRealization::new(&response);
        let traj = simulate_impulse(&plant, &mut controller, n / 2, horizon + 3).unwrap();
        assert!(traj.state_norm_inf(horizon) > 1e-8);
    }

    #[test]
    fn stateless_plant_dies_immediately() {
        let plant = Plant::new(Array2::zeros((2, 2)), Array2::eye(2)).unwrap();
        let problem =
            SynthesisProblem::new(plant.clone(), default_h2_objective(2, 2), 3).unwrap();
        let (response, _) = synthesize_h2_plain(&problem).unwrap();
        let mut controller = ControllerRealization::new(&response);
        let traj = simulate_impulse(&plant, &mut controller, 0, 5).unwrap();
        for t in 1..traj.len() {
            assert!(traj.state_norm_inf(t) <= 1e-12);
        }
    }

    #[test]
    fn superposition_of_impulses() {
        let n = 3;
        let horizon = 4;
        let (plant, mut controller) = plain_controller(n, horizon, 3);
        let traj0 = simulate_impulse(&plant, &mut controller, 0, 6).unwrap();
        let traj2 = simulate_impulse(&plant, &mut controller, 2, 6).unwrap();

        // Combined disturbance 2 e_0 - e_2, simulated manually.
        controller.reset();
        let mut x = Array1::zeros(n);
        x[0] = 2.0;
        x[2] = -1.0;
        let mut states = vec![x];
        for t in 0..6 {
            let u = controller.step(&states[t]).unwrap();
            states.push(plant.a.dot(&states[t]) + plant.b.dot(&u));
        }
        for t in 0..=6 {
            let expected = 2.0 * &traj0.states[t] - &traj2.states[t];
            assert_abs_diff_eq!(states[t], expected, epsilon = 1e-10);
        }
    }

    #[test]
    fn heatmap_values_and_floor() {
        let traj = Trajectory {
            states: vec![array![0.0, 1.0], array![0.01, 0.0]],
            controls: vec![Array1::zeros(2)],
            disturbances: vec![Array1::zeros(2); 2],
        };
        let grid = log_heatmap(&traj, 1e-8).unwrap();
        assert_eq!(grid.dim(), (2, 2));
        assert_abs_diff_eq!(grid[[0, 0]], -8.0, epsilon = 1e-12); // clipped zero
        assert_abs_diff_eq!(grid[[1, 0]], 0.0, epsilon = 1e-12); // |x| = 1
        assert_abs_diff_eq!(grid[[0, 1]], -2.0, epsilon = 1e-12); // |x| = 0.01
        assert!(log_heatmap(&traj, 0.0).is_err());
    }

    #[test]
    fn trajectory_csv_layout() {
        let traj = Trajectory {
            states: vec![array![1.0, 2.0], array![3.0, 4.0], array![5.0, 6.0]],
            controls: vec![Array1::zeros(2); 2],
            disturbances: vec![Array1::zeros(2); 3],
        };
        let mut buf = Vec::new();
        traj.to_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "1,3,5\n2,4,6\n");
    }
}
