//! Receding-horizon drift tracking controller with a pluggable front-tire port.

mod model;
mod port;
mod solver;

pub use model::{DriftModel, InputMat, InputVec, LinearModel, Model, StateMat, StateVec};
pub use port::{network_features, FrontTirePort, NeuralFront, PhysicsFront, PortInput, PortOutput};
pub use solver::{solve, trajectory_cost, Problem, SolverOptions, SolverResult, TrackingCost};

use serde::{Deserialize, Serialize};

use crate::dynamics::{ControlInput, VehicleParams, VehicleState};
use crate::equilibrium::ReferenceTrajectory;
use crate::tire::TireParams;
use crate::{Error, Result};

/// Stage weights. State order follows `[r, v, beta, s, e, dpsi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NmpcWeights {
    pub r: f64,
    pub v: f64,
    pub beta: f64,
    pub e: f64,
    pub dpsi: f64,
    pub delta: f64,
    pub fxf: f64,
    pub fxr: f64,
    /// input-rate weights as a multiple of the deviation weights
    pub rate_scale: f64,
    pub terminal_scale: f64,
}

impl Default for NmpcWeights {
    fn default() -> Self {
        Self {
            r: 5.0,
            v: 1.0,
            beta: 30.0,
            e: 10.0,
            dpsi: 10.0,
            delta: 1.0,
            fxf: 1e-7,
            fxr: 1e-7,
            rate_scale: 10.0,
            terminal_scale: 5.0,
        }
    }
}

impl NmpcWeights {
    pub fn tracking_cost(&self) -> TrackingCost {
        let r = [self.delta, self.fxf, self.fxr];
        TrackingCost {
            q: [self.r, self.v, self.beta, 0.0, self.e, self.dpsi],
            r,
            s: r.map(|w| w * self.rate_scale),
            terminal_scale: self.terminal_scale,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NmpcConfig {
    pub horizon: usize,
    pub dt: f64,
    pub weights: NmpcWeights,
    pub max_iterations: usize,
    pub tolerance: f64,
    pub max_line_search: usize,
    /// shift the previous solution by one stage to seed the next solve
    pub warm_start: bool,
}

impl Default for NmpcConfig {
    fn default() -> Self {
        Self {
            horizon: 20,
            dt: 0.05,
            weights: NmpcWeights::default(),
            max_iterations: 5,
            tolerance: 1e-3,
            max_line_search: 10,
            warm_start: true,
        }
    }
}

impl NmpcConfig {
    pub fn validate(&self) -> Result<()> {
        let w = &self.weights;
        let all = [w.r, w.v, w.beta, w.e, w.dpsi, w.delta, w.fxf, w.fxr, w.rate_scale, w.terminal_scale];
        if all.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Config("nmpc weights must be finite and non-negative".into()));
        }
        if self.horizon < 2 {
            return Err(Error::Config(format!("nmpc horizon {} < 2", self.horizon)));
        }
        if !(self.dt > 0.0 && self.dt <= 0.05) {
            return Err(Error::Config(format!("nmpc dt {} outside (0, 0.05]", self.dt)));
        }
        if self.max_iterations == 0 {
            return Err(Error::Config("nmpc max_iterations must be positive".into()));
        }
        Ok(())
    }

    pub fn solver_options(&self) -> SolverOptions {
        SolverOptions {
            max_iterations: self.max_iterations,
            tolerance: self.tolerance,
            max_line_search: self.max_line_search,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NmpcSolution {
    pub controls: Vec<ControlInput>,
    pub states: Vec<VehicleState>,
    pub cost: f64,
    pub iterations: usize,
    pub solve_time: f64,
    pub converged: bool,
}

impl NmpcSolution {
    pub fn first_input(&self) -> ControlInput {
        self.controls[0]
    }
}

/// Stage targets and curvature for one horizon, marching arc length with the
/// reference speed from `s0`.
pub fn reference_window(
    reference: &ReferenceTrajectory,
    s0: f64,
    horizon: usize,
    dt: f64,
) -> (Vec<StateVec>, Vec<InputVec>, Vec<f64>) {
    let mut xs = Vec::with_capacity(horizon);
    let mut us = Vec::with_capacity(horizon - 1);
    let mut kappa = Vec::with_capacity(horizon - 1);
    let mut s = s0;
    for k in 0..horizon {
        let sample = reference.sample_at(s);
        xs.push(StateVec::from(sample.state_target()));
        if k + 1 < horizon {
            us.push(InputVec::from(sample.input_target()));
            kappa.push(reference.path.kappa(s));
        }
        s += dt * sample.v_ref;
    }
    (xs, us, kappa)
}

/// A controller instance holding the warm start between solves.
pub struct Controller {
    pub config: NmpcConfig,
    pub vehicle: VehicleParams,
    pub rear: TireParams,
    pub front: Box<dyn FrontTirePort>,
    plan: Option<Vec<InputVec>>,
    u_prev: Option<InputVec>,
}

impl Controller {
    pub fn new(
        config: NmpcConfig,
        vehicle: VehicleParams,
        rear: TireParams,
        front: Box<dyn FrontTirePort>,
    ) -> Result<Self> {
        config.validate()?;
        vehicle.validate()?;
        Ok(Self {
            config,
            vehicle,
            rear,
            front,
            plan: None,
            u_prev: None,
        })
    }

    pub fn reset(&mut self) {
        self.plan = None;
        self.u_prev = None;
    }

    fn bounds(&self) -> (InputVec, InputVec) {
        let v = &self.vehicle;
        (
            InputVec::from([-v.delta_max, v.fxf_min, 0.0]),
            InputVec::from([v.delta_max, 0.0, v.fxr_max]),
        )
    }

    /// Plans from `x0` with the axle loads held at `(fzf, fzr)` over the
    /// whole horizon.
    pub fn solve(&mut self, x0: &VehicleState, loads: (f64, f64), reference: &ReferenceTrajectory) -> Result<NmpcSolution> {
        let n = self.config.horizon;
        let (x_ref, u_ref, kappa) = reference_window(reference, x0.s, n, self.config.dt);
        let (fzf, fzr) = loads;
        let model = DriftModel {
            vehicle: self.vehicle,
            rear: self.rear,
            front: self.front.as_ref(),
            fzf,
            fzr,
            dt: self.config.dt,
            kappa,
        };
        let (u_min, u_max) = self.bounds();
        let problem = Problem {
            x0: StateVec::from(x0.to_array()),
            u_prev: self.u_prev.unwrap_or(u_ref[0]),
            x_ref,
            u_ref,
            u_min,
            u_max,
        };
        let initial = match (&self.plan, self.config.warm_start) {
            (Some(plan), true) => {
                let mut shifted: Vec<InputVec> = plan[1..].to_vec();
                shifted.push(*plan.last().unwrap_or(&problem.u_ref[n - 2]));
                shifted
            }
            _ => problem.u_ref.clone(),
        };
        let cost = self.config.weights.tracking_cost();
        let res = solve(&model, &cost, &problem, &initial, &self.config.solver_options())?;
        self.u_prev = Some(res.controls[0]);
        self.plan = Some(res.controls.clone());
        Ok(NmpcSolution {
            controls: res
                .controls
                .iter()
                .map(|u| ControlInput::from_array(&(*u).into()))
                .collect(),
            states: res
                .states
                .iter()
                .map(|x| VehicleState::from_array(&(*x).into()))
                .collect(),
            cost: res.cost,
            iterations: res.iterations,
            solve_time: res.solve_time,
            converged: res.converged,
        })
    }

    /// Input to apply when a solve fails: the next stage of the last plan,
    /// or the previous input.
    pub fn fallback(&mut self) -> Option<ControlInput> {
        let plan = self.plan.as_mut()?;
        if plan.len() > 1 {
            plan.remove(0);
        }
        let u = plan[0];
        self.u_prev = Some(u);
        Some(ControlInput::from_array(&u.into()))
    }
}
