//! Plant simulation and the closed-loop driver shared by data generation
//! and the experiment runs.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::dynamics::{
    body_longitudinal_force, front_axle_speed, normal_loads, normal_loads_with_transfer, rk4_step, slip_angles,
    ControlInput, VehicleParams, VehicleState,
};
use crate::equilibrium::{ReferenceTrajectory, Region};
use crate::nmpc::Controller;
use crate::tire::{
    fiala_lateral_force, plant_lateral_force, slip_power, thermal_step, PlantTireConfig, TireParams,
    TireThermalState,
};
use crate::{Error, Result};

/// Ground-truth vehicle used in simulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlantConfig {
    pub front: PlantTireConfig,
    pub rear: TireParams,
    /// quasi-static longitudinal load transfer from the previous step's body force
    pub load_transfer: bool,
    /// starting tire temperature; ambient when absent
    pub initial_temperature: Option<f64>,
    /// integration step, s
    pub sim_dt: f64,
    /// simulation steps per controller update
    pub control_every: usize,
    /// |beta| beyond this ends the run as a spin-out, degrees
    pub spin_out_deg: f64,
}

impl Default for PlantConfig {
    fn default() -> Self {
        Self {
            front: PlantTireConfig::default(),
            rear: TireParams::default(),
            load_transfer: true,
            initial_temperature: None,
            sim_dt: 0.01,
            control_every: 5,
            spin_out_deg: 80.0,
        }
    }
}

impl PlantConfig {
    /// Plant identical to the controller's nominal prediction model.
    pub fn nominal(front: TireParams, rear: TireParams) -> Self {
        Self {
            front: PlantTireConfig::nominal(front),
            rear,
            load_transfer: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.front.validate()?;
        self.rear.validate()?;
        if !(self.sim_dt > 0.0 && self.sim_dt <= 0.05) || self.control_every == 0 {
            return Err(Error::Config("plant: sim_dt in (0, 0.05] and control_every > 0 required".into()));
        }
        if !(self.spin_out_deg > 0.0 && self.spin_out_deg < 180.0) {
            return Err(Error::Config("plant: spin_out_deg must lie in (0, 180)".into()));
        }
        Ok(())
    }

    pub fn control_dt(&self) -> f64 {
        self.sim_dt * self.control_every as f64
    }
}

/// Forces acting on the plant at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantForces {
    pub fyf: f64,
    pub fyr: f64,
    pub fzf: f64,
    pub fzr: f64,
}

/// Plant state beyond the rigid body: tire temperature and the body force
/// used for load transfer.
#[derive(Debug, Clone)]
pub struct Plant {
    pub config: PlantConfig,
    pub vehicle: VehicleParams,
    pub state: VehicleState,
    pub thermal: TireThermalState,
    fx_body: f64,
}

impl Plant {
    pub fn new(config: PlantConfig, vehicle: VehicleParams, state: VehicleState) -> Result<Self> {
        config.validate()?;
        vehicle.validate()?;
        let thermal = TireThermalState {
            temperature: config.initial_temperature.unwrap_or(config.front.t_ambient),
        };
        Ok(Self {
            config,
            vehicle,
            state,
            thermal,
            fx_body: 0.0,
        })
    }

    pub fn loads(&self) -> (f64, f64) {
        if self.config.load_transfer {
            normal_loads_with_transfer(&self.vehicle, self.fx_body)
        } else {
            normal_loads(&self.vehicle)
        }
    }

    pub fn forces_at(&self, state: &VehicleState, u: &ControlInput) -> Result<PlantForces> {
        let (fzf, fzr) = self.loads();
        let (alpha_f, alpha_r) = slip_angles(state, u.delta, &self.vehicle)?;
        Ok(PlantForces {
            fyf: plant_lateral_force(alpha_f, u.fxf, fzf, u.delta, &self.thermal, &self.config.front),
            fyr: fiala_lateral_force(alpha_r, u.fxr, fzr, &self.config.rear),
            fzf,
            fzr,
        })
    }

    /// Advances one simulation step under a held input.
    pub fn step(&mut self, u: &ControlInput, path: &crate::dynamics::PathDef) -> Result<()> {
        let u = self.vehicle.clamp_input(*u);
        let start = self.forces_at(&self.state, &u)?;
        let (alpha_f, _) = slip_angles(&self.state, u.delta, &self.vehicle)?;
        let wheel_speed = front_axle_speed(&self.state, &self.vehicle);
        let power = slip_power(start.fyf, u.fxf, wheel_speed, alpha_f);
        let me = &*self;
        let next = rk4_step(&self.state, &u, self.config.sim_dt, path, &self.vehicle, &mut |x: &VehicleState,
                                                                                          u: &ControlInput| {
            me.forces_at(x, u).map(|f| (f.fyf, f.fyr))
        })?;
        self.thermal = thermal_step(self.thermal, power, self.config.sim_dt, &self.config.front);
        self.fx_body = body_longitudinal_force(&u, start.fyf);
        self.state = next;
        Ok(())
    }
}

/// Telemetry of one controller update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveInfo {
    pub iterations: usize,
    pub solve_time: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub t: f64,
    pub state: VehicleState,
    pub input: ControlInput,
    pub fyf: f64,
    pub fyr: f64,
    pub fzf: f64,
    pub fzr: f64,
    pub temperature: f64,
    pub region: Region,
    pub beta_ref: f64,
    pub v_ref: f64,
    pub delta_ref: f64,
    /// present on steps where the controller replanned
    pub solve: Option<SolveInfo>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Completed,
    TimeLimit,
    SpinOut,
    PlantFailure,
}

impl Termination {
    pub fn as_str(&self) -> &'static str {
        match self {
            Termination::Completed => "completed",
            Termination::TimeLimit => "time_limit",
            Termination::SpinOut => "spin_out",
            Termination::PlantFailure => "plant_failure",
        }
    }

    pub fn truncated(&self) -> bool {
        matches!(self, Termination::SpinOut | Termination::PlantFailure)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    pub dt: f64,
    pub records: Vec<RunRecord>,
    pub termination: Termination,
}

const LOG_HEADER: [&str; 23] = [
    "t", "r", "v", "beta", "s", "e", "dpsi", "delta", "fxf", "fxr", "fyf", "fyr", "fzf", "fzr", "temperature",
    "region", "beta_ref", "v_ref", "delta_ref", "iterations", "solve_time", "converged", "termination",
];

fn fmt17(x: f64) -> String {
    format!("{x:.17e}")
}

impl RunLog {
    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn non_converged_fraction(&self) -> f64 {
        let solves: Vec<_> = self.records.iter().filter_map(|r| r.solve).collect();
        if solves.is_empty() {
            return 0.0;
        }
        solves.iter().filter(|s| !s.converged).count() as f64 / solves.len() as f64
    }

    pub fn solve_times(&self) -> Vec<f64> {
        self.records.iter().filter_map(|r| r.solve.map(|s| s.solve_time)).collect()
    }

    /// Writes the log as CSV. The termination reason is stored on the last
    /// row. With `timing` false the wall-clock solve time column is left
    /// blank so identical runs give identical bytes.
    pub fn write_csv<W: Write>(&self, out: W, timing: bool) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(LOG_HEADER)?;
        let last = self.records.len().saturating_sub(1);
        for (i, rec) in self.records.iter().enumerate() {
            let x = &rec.state;
            let u = &rec.input;
            let mut row: Vec<String> = [
                rec.t, x.r, x.v, x.beta, x.s, x.e, x.dpsi, u.delta, u.fxf, u.fxr, rec.fyf, rec.fyr, rec.fzf, rec.fzr,
                rec.temperature,
            ]
            .iter()
            .map(|v| fmt17(*v))
            .collect();
            row.push(rec.region.to_string());
            row.extend([rec.beta_ref, rec.v_ref, rec.delta_ref].iter().map(|v| fmt17(*v)));
            match rec.solve {
                Some(s) => {
                    row.push(s.iterations.to_string());
                    row.push(if timing { fmt17(s.solve_time) } else { String::new() });
                    row.push(u8::from(s.converged).to_string());
                }
                None => row.extend([String::new(), String::new(), String::new()]),
            }
            row.push(if i == last { self.termination.as_str().to_string() } else { String::new() });
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
        let header = rdr.headers()?.clone();
        if header.iter().ne(LOG_HEADER.iter().copied()) {
            return Err(Error::MalformedRow {
                line: 1,
                msg: "unexpected run log header".into(),
            });
        }
        let mut records = Vec::new();
        let mut termination = Termination::Completed;
        for (i, row) in rdr.records().enumerate() {
            let line = i + 2;
            let row = row?;
            if row.len() != LOG_HEADER.len() {
                return Err(Error::MalformedRow {
                    line,
                    msg: format!("expected {} columns, found {}", LOG_HEADER.len(), row.len()),
                });
            }
            let num = |k: usize| -> Result<f64> {
                row[k].parse::<f64>().map_err(|e| Error::MalformedRow {
                    line,
                    msg: format!("column {}: {e}", LOG_HEADER[k]),
                })
            };
            let region: Region = row[15].parse().map_err(|_| Error::MalformedRow {
                line,
                msg: format!("unknown region '{}'", &row[15]),
            })?;
            let solve = if row[19].is_empty() {
                None
            } else {
                Some(SolveInfo {
                    iterations: row[19].parse().map_err(|e| Error::MalformedRow {
                        line,
                        msg: format!("iterations: {e}"),
                    })?,
                    solve_time: if row[20].is_empty() { f64::NAN } else { num(20)? },
                    converged: &row[21] == "1",
                })
            };
            if !row[22].is_empty() {
                termination = match &row[22] {
                    "completed" => Termination::Completed,
                    "time_limit" => Termination::TimeLimit,
                    "spin_out" => Termination::SpinOut,
                    "plant_failure" => Termination::PlantFailure,
                    other => {
                        return Err(Error::MalformedRow {
                            line,
                            msg: format!("unknown termination '{other}'"),
                        })
                    }
                };
            }
            records.push(RunRecord {
                t: num(0)?,
                state: VehicleState {
                    r: num(1)?,
                    v: num(2)?,
                    beta: num(3)?,
                    s: num(4)?,
                    e: num(5)?,
                    dpsi: num(6)?,
                },
                input: ControlInput {
                    delta: num(7)?,
                    fxf: num(8)?,
                    fxr: num(9)?,
                },
                fyf: num(10)?,
                fyr: num(11)?,
                fzf: num(12)?,
                fzr: num(13)?,
                temperature: num(14)?,
                region,
                beta_ref: num(16)?,
                v_ref: num(17)?,
                delta_ref: num(18)?,
                solve,
            });
        }
        let dt = if records.len() > 1 { records[1].t - records[0].t } else { 0.0 };
        Ok(RunLog { dt, records, termination })
    }
}

/// Stopping rule for a closed-loop run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunLimits {
    /// stop once arc length reaches this value
    pub s_end: f64,
    pub max_time: f64,
}

/// Hook that may modify the controller's input at every update, used for
/// dither and scripted open-loop segments.
pub trait Excitation {
    fn perturb(&mut self, t: f64, state: &VehicleState, u: ControlInput) -> ControlInput;
}

pub struct NoExcitation;

impl Excitation for NoExcitation {
    fn perturb(&mut self, _t: f64, _state: &VehicleState, u: ControlInput) -> ControlInput {
        u
    }
}

/// Runs the plant with the controller replanning every control period and
/// holding its first input in between.
pub fn closed_loop_run(
    plant: &mut Plant,
    controller: &mut Controller,
    reference: &ReferenceTrajectory,
    limits: RunLimits,
    excitation: &mut dyn Excitation,
) -> Result<RunLog> {
    let dt = plant.config.sim_dt;
    let spin = plant.config.spin_out_deg.to_radians();
    let mut records = Vec::new();
    let mut u = reference.sample_at(plant.state.s).input();
    let mut step = 0usize;
    let termination = loop {
        let t = step as f64 * dt;
        let x = plant.state;
        if x.beta.abs() > spin {
            break Termination::SpinOut;
        }
        if x.s >= limits.s_end {
            break Termination::Completed;
        }
        if t > limits.max_time {
            break Termination::TimeLimit;
        }
        let mut solve = None;
        if step.is_multiple_of(plant.config.control_every) {
            match controller.solve(&x, plant.loads(), reference) {
                Ok(sol) => {
                    u = sol.first_input();
                    solve = Some(SolveInfo {
                        iterations: sol.iterations,
                        solve_time: sol.solve_time,
                        converged: sol.converged,
                    });
                }
                Err(_) => {
                    if let Some(f) = controller.fallback() {
                        u = f;
                    }
                    solve = Some(SolveInfo {
                        iterations: 0,
                        solve_time: 0.0,
                        converged: false,
                    });
                }
            }
            u = plant.vehicle.clamp_input(excitation.perturb(t, &x, u));
        }
        let forces = match plant.forces_at(&x, &u) {
            Ok(f) => f,
            Err(_) => break Termination::PlantFailure,
        };
        let target = reference.sample_at(x.s);
        records.push(RunRecord {
            t,
            state: x,
            input: u,
            fyf: forces.fyf,
            fyr: forces.fyr,
            fzf: forces.fzf,
            fzr: forces.fzr,
            temperature: plant.thermal.temperature,
            region: target.region,
            beta_ref: target.beta_ref,
            v_ref: target.v_ref,
            delta_ref: target.delta_ref,
            solve,
        });
        if plant.step(&u, &reference.path).is_err() {
            break Termination::PlantFailure;
        }
        step += 1;
    };
    Ok(RunLog { dt, records, termination })
}
