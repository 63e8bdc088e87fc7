//! Scripted drifting scenarios on the latent plant, observer-emulated labels
//! and dataset composition.

mod dataset;
mod synthetic;

pub use dataset::{
    compose_dataset, label_with_observer, read_dataset, write_dataset, CoverageReport, DatasetSample, ObserverConfig,
};
pub use synthetic::{fiala_dataset, SyntheticRanges};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{ControlInput, PathDef, VehicleParams, VehicleState};
use crate::equilibrium::{
    solve_equilibrium, AxleTires, DriftEquilibrium, EquilibriumConstraint, EquilibriumSpec, RefSample,
    ReferenceTrajectory, Region, RegionBounds,
};
use crate::nmpc::{Controller, NmpcConfig, PhysicsFront};
use crate::sim::{closed_loop_run, Excitation, Plant, PlantConfig, RunLimits, RunLog, Termination};
use crate::{Error, Result};

/// Half-width of the initiation tag window around circle entry, s.
pub const INITIATION_WINDOW: f64 = 1.0;

/// Pseudo-random piecewise-constant dither added to the controller output.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExcitationConfig {
    /// steering dither amplitude, rad
    pub steer_amp: f64,
    /// extra front braking up to this magnitude, N
    pub brake_amp: f64,
    /// rear drive dither amplitude, N
    pub drive_amp: f64,
    /// time each random level is held, s
    pub hold: f64,
}

impl Default for ExcitationConfig {
    fn default() -> Self {
        Self {
            steer_amp: 0.0,
            brake_amp: 0.0,
            drive_amp: 0.0,
            hold: 0.25,
        }
    }
}

impl ExcitationConfig {
    fn is_active(&self) -> bool {
        self.steer_amp > 0.0 || self.brake_amp > 0.0 || self.drive_amp > 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum SegmentTarget {
    /// track the drift equilibrium for this sideslip and front braking force
    Equilibrium {
        beta_deg: f64,
        #[serde(default)]
        fxf: f64,
    },
    /// bypass the controller and hold these inputs
    OpenLoop { delta: f64, fxf: f64, fxr: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Segment {
    /// s
    pub duration: f64,
    pub target: SegmentTarget,
    #[serde(default)]
    pub excitation: ExcitationConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioScript {
    pub name: String,
    #[serde(default = "default_radius")]
    pub radius: f64,
    /// straight entry before the circle, m; zero starts on the first equilibrium
    pub approach_length: f64,
    #[serde(default)]
    pub initial_temperature: Option<f64>,
    /// ramp from straight driving to the first segment, m
    #[serde(default = "default_initiation_blend")]
    pub initiation_blend: f64,
    /// ramp between consecutive segment targets, m
    #[serde(default = "default_segment_blend")]
    pub segment_blend: f64,
    pub segments: Vec<Segment>,
}

fn default_radius() -> f64 {
    15.0
}

fn default_initiation_blend() -> f64 {
    10.0
}

fn default_segment_blend() -> f64 {
    5.0
}

impl ScenarioScript {
    pub fn duration(&self) -> f64 {
        self.segments.iter().map(|s| s.duration).sum()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(format!("scenario '{}': {msg}", self.name)));
        if !(self.radius > 0.0) || !(self.approach_length >= 0.0) {
            return bad("radius must be positive and approach_length non-negative");
        }
        if self.initiation_blend < 0.0 || self.segment_blend < 0.0 {
            return bad("blend lengths must be non-negative");
        }
        if self.segments.iter().any(|s| !(s.duration >= 0.0) || !(s.excitation.hold > 0.0)) {
            return bad("segment durations must be non-negative and dither hold positive");
        }
        if matches!(self.segments.first().map(|s| s.target), Some(SegmentTarget::OpenLoop { .. })) {
            return bad("the first segment must target an equilibrium");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct Level {
    beta: f64,
    v: f64,
    delta: f64,
    fxf: f64,
    fxr: f64,
}

impl Level {
    fn from_eq(eq: &DriftEquilibrium) -> Self {
        Self {
            beta: eq.beta,
            v: eq.v,
            delta: eq.delta,
            fxf: eq.fxf,
            fxr: eq.fxr,
        }
    }

    fn lerp(a: Self, b: Self, w: f64) -> Self {
        let l = |x: f64, y: f64| x + (y - x) * w;
        Self {
            beta: l(a.beta, b.beta),
            v: l(a.v, b.v),
            delta: l(a.delta, b.delta),
            fxf: l(a.fxf, b.fxf),
            fxr: l(a.fxr, b.fxr),
        }
    }
}

/// Arc-length layout of a script: the reference the controller tracks and
/// the stretches where inputs are scripted open loop.
pub struct ScenarioPlan {
    pub reference: ReferenceTrajectory,
    /// `(s_start, s_end, input)` for open-loop segments
    pub open_loop: Vec<(f64, f64, ControlInput)>,
    /// `(s_start, s_end, excitation)` per segment
    pub excitation: Vec<(f64, f64, ExcitationConfig)>,
    pub end: f64,
}

pub fn plan_scenario(script: &ScenarioScript, vehicle: &VehicleParams, tires: &AxleTires) -> Result<ScenarioPlan> {
    script.validate()?;
    const DS: f64 = 0.1;
    let mut knots: Vec<(f64, f64, Level, f64)> = Vec::new(); // start, end, level, blend
    let mut open_loop = Vec::new();
    let mut excitation = Vec::new();
    let mut s = script.approach_length;
    let mut prev: Option<Level> = None;
    let mut first_eq = None;
    for (i, seg) in script.segments.iter().enumerate() {
        let (level, len) = match seg.target {
            SegmentTarget::Equilibrium { beta_deg, fxf } => {
                let eq = solve_equilibrium(
                    &EquilibriumSpec {
                        radius: script.radius,
                        beta_des: beta_deg.to_radians(),
                        constraint: EquilibriumConstraint::FxfFixed(fxf),
                    },
                    vehicle,
                    tires,
                )?;
                first_eq.get_or_insert(eq);
                (Level::from_eq(&eq), seg.duration * eq.v)
            }
            SegmentTarget::OpenLoop { delta, fxf, fxr } => {
                let held = prev.expect("validated: first segment is an equilibrium");
                let len = seg.duration * held.v;
                open_loop.push((s, s + len, ControlInput { delta, fxf, fxr }));
                (held, len)
            }
        };
        let blend = if i == 0 { script.initiation_blend } else { script.segment_blend };
        knots.push((s, s + len, level, blend));
        excitation.push((s, s + len, seg.excitation));
        prev = Some(level);
        s += len;
    }
    let first_eq = first_eq.ok_or_else(|| Error::Config(format!("scenario '{}' has no segments", script.name)))?;
    let end = s;
    let path = PathDef {
        circle_start: script.approach_length,
        curvature: if first_eq.r < 0.0 { -1.0 } else { 1.0 } / script.radius,
    };
    let approach = Level {
        beta: 0.0,
        v: first_eq.v,
        delta: 0.0,
        fxf: 0.0,
        fxr: 0.0,
    };
    let level_at = |s: f64| -> Level {
        let mut before = approach;
        for (idx, &(start, stop, level, blend)) in knots.iter().enumerate() {
            if s < start {
                break;
            }
            if s < stop || idx + 1 == knots.len() {
                let into = s - start;
                return if blend > 0.0 && into < blend {
                    Level::lerp(before, level, into / blend)
                } else {
                    level
                };
            }
            before = level;
        }
        before
    };
    let tail = 40.0;
    let n = ((end + tail) / DS).ceil() as usize + 1;
    let samples = (0..n)
        .map(|i| {
            let s = i as f64 * DS;
            let l = level_at(s);
            RefSample {
                s,
                kappa: path.kappa(s),
                beta_ref: l.beta,
                v_ref: l.v,
                fxf_ref: l.fxf,
                delta_ref: l.delta,
                fxr_ref: l.fxr,
                region: if s < script.approach_length { Region::Approach } else { Region::Steady },
            }
        })
        .collect();
    // the scenario has no lap schedule; bounds only need to be ordered
    let a = script.approach_length;
    let bounds = RegionBounds {
        approach_end: a,
        initiation_end: a + 1.0,
        lap_ends: [a + 2.0, a + 3.0],
        steady_end: a + 4.0,
    };
    let equilibria = vec![first_eq];
    Ok(ScenarioPlan {
        reference: ReferenceTrajectory {
            samples,
            bounds,
            path,
            equilibria,
            ds: DS,
        },
        open_loop,
        excitation,
        end,
    })
}

struct ScriptedInputs<'a> {
    plan: &'a ScenarioPlan,
    rng: ChaCha8Rng,
    next_draw: f64,
    dither: [f64; 3],
}

impl Excitation for ScriptedInputs<'_> {
    fn perturb(&mut self, t: f64, state: &VehicleState, u: ControlInput) -> ControlInput {
        let s = state.s;
        let base = self
            .plan
            .open_loop
            .iter()
            .find(|(a, b, _)| s >= *a && s < *b)
            .map(|(_, _, u)| *u)
            .unwrap_or(u);
        let exc = self
            .plan
            .excitation
            .iter()
            .find(|(a, b, _)| s >= *a && s < *b)
            .map(|(_, _, e)| *e);
        let Some(exc) = exc.filter(|e| e.is_active()) else {
            return base;
        };
        if t >= self.next_draw {
            let mut draw = |amp: f64| if amp > 0.0 { self.rng.random_range(-amp..amp) } else { 0.0 };
            self.dither = [draw(exc.steer_amp), draw(exc.brake_amp), draw(exc.drive_amp)];
            self.dither[1] = -self.dither[1].abs();
            self.next_draw = t + exc.hold;
        }
        ControlInput {
            delta: base.delta + self.dither[0],
            fxf: base.fxf + self.dither[1],
            fxr: base.fxr + self.dither[2],
        }
    }
}

/// Controller and plant settings used while generating data.
#[derive(Debug, Clone)]
pub struct ScenarioSetup<'a> {
    pub vehicle: VehicleParams,
    /// nominal tires used by the controller and for target equilibria
    pub tires: AxleTires,
    pub plant: PlantConfig,
    pub nmpc: &'a NmpcConfig,
}

/// Runs one script closed loop with the physics controller on the plant.
/// Records are tagged initiation within one second of circle entry,
/// approach before that, and steady afterwards.
pub fn run_scenario(script: &ScenarioScript, setup: &ScenarioSetup, seed: u64) -> Result<RunLog> {
    script.validate()?;
    let dt = setup.plant.sim_dt;
    if script.duration() <= 0.0 {
        return Ok(RunLog {
            dt,
            records: Vec::new(),
            termination: Termination::Completed,
        });
    }
    let plan = plan_scenario(script, &setup.vehicle, &setup.tires)?;
    let x0 = if script.approach_length > 0.0 {
        VehicleState {
            v: plan.reference.v_sol(),
            ..VehicleState::default()
        }
    } else {
        plan.reference.equilibria[0].state(0.0)
    };
    let mut plant_cfg = setup.plant.clone();
    if script.initial_temperature.is_some() {
        plant_cfg.initial_temperature = script.initial_temperature;
    }
    let mut plant = Plant::new(plant_cfg, setup.vehicle, x0)?;
    let front = Box::new(PhysicsFront::new(setup.tires.front, &setup.vehicle));
    let mut controller = Controller::new(setup.nmpc.clone(), setup.vehicle, setup.tires.rear, front)?;
    let mut inputs = ScriptedInputs {
        plan: &plan,
        rng: ChaCha8Rng::seed_from_u64(seed),
        next_draw: 0.0,
        dither: [0.0; 3],
    };
    let approach_time = script.approach_length / plan.reference.v_sol();
    let limits = RunLimits {
        s_end: plan.end,
        max_time: 2.0 * (script.duration() + approach_time) + 5.0,
    };
    let mut log = closed_loop_run(&mut plant, &mut controller, &plan.reference, limits, &mut inputs)?;
    tag_regions(&mut log, script.approach_length);
    Ok(log)
}

fn tag_regions(log: &mut RunLog, approach_length: f64) {
    let onset = if approach_length > 0.0 {
        log.records.iter().find(|r| r.state.s >= approach_length).map(|r| r.t)
    } else {
        None
    };
    for rec in &mut log.records {
        rec.region = match onset {
            Some(t0) if (rec.t - t0).abs() <= INITIATION_WINDOW => Region::Initiation,
            Some(t0) if rec.t < t0 => Region::Approach,
            None if approach_length > 0.0 => Region::Approach,
            _ => Region::Steady,
        };
    }
}

/// The default mix: a few long drifting sessions sweeping sideslip, braking
/// and radius, interleaved with many short runs that each contain one drift
/// initiation.
pub fn default_scenarios() -> Vec<ScenarioScript> {
    let eq = |beta_deg: f64, fxf: f64| SegmentTarget::Equilibrium { beta_deg, fxf };
    let dither = |steer_amp: f64, brake_amp: f64, drive_amp: f64| ExcitationConfig {
        steer_amp,
        brake_amp,
        drive_amp,
        hold: 0.3,
    };
    let long_targets: [[(f64, f64); 6]; 4] = [
        [(-40.0, 0.0), (-35.0, -800.0), (-45.0, -1500.0), (-40.0, -2000.0), (-30.0, -500.0), (-50.0, 0.0)],
        [(-38.0, -400.0), (-42.0, -1200.0), (-25.0, 0.0), (-40.0, -2500.0), (-47.0, -600.0), (-33.0, -1800.0)],
        [(-44.0, -200.0), (-28.0, -1000.0), (-40.0, -1000.0), (-36.0, -2200.0), (-48.0, -1400.0), (-40.0, 0.0)],
        [(-41.0, -1600.0), (-39.0, -300.0), (-46.0, -2400.0), (-31.0, -1200.0), (-43.0, -700.0), (-37.0, 0.0)],
    ];
    let radii = [15.0, 13.0, 17.0, 15.0];
    let mut out = Vec::new();
    let mut short = 0usize;
    for (k, (targets, radius)) in long_targets.iter().zip(radii).enumerate() {
        for rep in 0..2 {
            let segments = targets
                .iter()
                .enumerate()
                .map(|(i, &(b, f))| Segment {
                    duration: 25.0,
                    target: eq(b, f),
                    excitation: if (i + rep) % 2 == 0 {
                        dither(0.04, 400.0, 500.0)
                    } else {
                        dither(0.015, 150.0, 200.0)
                    },
                })
                .collect();
            out.push(ScenarioScript {
                name: format!("session_{k}_{rep}"),
                radius: if rep == 0 { radius } else { 15.0 },
                approach_length: 40.0,
                initial_temperature: None,
                initiation_blend: 10.0,
                segment_blend: 5.0,
                segments,
            });
            for j in 0..6 {
                let beta = [-34.0, -37.0, -40.0, -43.0, -46.0, -40.0][j];
                let fxf = -300.0 * (short % 4) as f64;
                out.push(ScenarioScript {
                    name: format!("entry_{short}"),
                    radius: [15.0, 14.0, 16.0][j % 3],
                    approach_length: 25.0 + 2.5 * (short % 6) as f64,
                    initial_temperature: Some(25.0 + 5.0 * (short % 4) as f64),
                    initiation_blend: [10.0, 8.0, 12.0, 10.0][short % 4],
                    segment_blend: 5.0,
                    segments: vec![Segment {
                        duration: 8.0,
                        target: eq(beta, fxf),
                        excitation: dither(0.01 * (j % 3) as f64, 100.0 * (j % 2) as f64, 150.0),
                    }],
                });
                short += 1;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup(nmpc: &NmpcConfig) -> ScenarioSetup<'_> {
        let tires = AxleTires::default();
        ScenarioSetup {
            vehicle: VehicleParams::default(),
            tires,
            plant: PlantConfig::nominal(tires.front, tires.rear),
            nmpc,
        }
    }

    #[test]
    fn zero_duration_script_gives_empty_log() {
        let nmpc = NmpcConfig::default();
        let script = ScenarioScript {
            name: "empty".into(),
            radius: 15.0,
            approach_length: 30.0,
            initial_temperature: None,
            initiation_blend: 10.0,
            segment_blend: 5.0,
            segments: vec![],
        };
        assert!(run_scenario(&script, &setup(&nmpc), 0).unwrap().is_empty());
    }

    #[test]
    fn steady_script_holds_equilibrium() {
        let nmpc = NmpcConfig::default();
        let script = ScenarioScript {
            name: "hold".into(),
            radius: 15.0,
            approach_length: 0.0,
            initial_temperature: None,
            initiation_blend: 0.0,
            segment_blend: 0.0,
            segments: vec![Segment {
                duration: 5.0,
                target: SegmentTarget::Equilibrium {
                    beta_deg: -40.0,
                    fxf: 0.0,
                },
                excitation: ExcitationConfig::default(),
            }],
        };
        let su = setup(&nmpc);
        let log = run_scenario(&script, &su, 3).unwrap();
        let plan = plan_scenario(&script, &su.vehicle, &su.tires).unwrap();
        let eq = plan.reference.equilibria[0];
        assert!(!log.is_empty());
        for rec in &log.records {
            assert_eq!(rec.region, Region::Steady);
            let x = rec.state;
            let dev = [x.r - eq.r, x.v - eq.v, x.beta - eq.beta, x.e, x.dpsi + eq.beta];
            assert!(dev.iter().all(|d| d.abs() < 1e-3), "{dev:?}");
        }
    }

    #[test]
    fn first_segment_must_be_equilibrium() {
        let script = ScenarioScript {
            name: "bad".into(),
            radius: 15.0,
            approach_length: 10.0,
            initial_temperature: None,
            initiation_blend: 5.0,
            segment_blend: 5.0,
            segments: vec![Segment {
                duration: 1.0,
                target: SegmentTarget::OpenLoop {
                    delta: 0.0,
                    fxf: 0.0,
                    fxr: 0.0,
                },
                excitation: ExcitationConfig::default(),
            }],
        };
        assert!(script.validate().is_err());
    }

    #[test]
    fn default_mix_is_about_half_an_hour() {
        let scripts = default_scenarios();
        let drift: f64 = scripts.iter().map(|s| s.duration()).sum();
        let approach: f64 = scripts.iter().map(|s| s.approach_length / 10.9).sum();
        let total = drift + approach;
        assert!((1500.0..2100.0).contains(&total), "{total}");
        let entries = scripts.iter().filter(|s| s.approach_length > 0.0).count();
        assert!(entries >= 40);
    }
}
