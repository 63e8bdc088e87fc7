use std::f64::consts::PI;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{solve_equilibrium, AxleTires, DriftEquilibrium, EquilibriumConstraint, EquilibriumSpec};
use crate::dynamics::{ControlInput, PathDef, VehicleParams, NU, NX};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    Approach,
    Initiation,
    SteadyLap1,
    SteadyLap2,
    SteadyLap3,
    /// steady drifting outside the lap schedule, used for generated data
    Steady,
}

impl Region {
    pub const ALL: [Region; 5] = [
        Region::Approach,
        Region::Initiation,
        Region::SteadyLap1,
        Region::SteadyLap2,
        Region::SteadyLap3,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Region::Approach => "approach",
            Region::Initiation => "initiation",
            Region::SteadyLap1 => "steady_lap1",
            Region::SteadyLap2 => "steady_lap2",
            Region::SteadyLap3 => "steady_lap3",
            Region::Steady => "steady",
        }
    }

    pub fn is_steady(&self) -> bool {
        matches!(
            self,
            Region::SteadyLap1 | Region::SteadyLap2 | Region::SteadyLap3 | Region::Steady
        )
    }
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Region {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Region::ALL
            .into_iter()
            .chain([Region::Steady])
            .find(|r| r.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown region '{s}'")))
    }
}

/// Arc-length boundaries of the experiment regions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionBounds {
    /// end of the straight approach, start of the circle and of initiation
    pub approach_end: f64,
    pub initiation_end: f64,
    /// ends of steady laps 1 and 2
    pub lap_ends: [f64; 2],
    /// end of the experiment window
    pub steady_end: f64,
}

impl RegionBounds {
    pub fn validate(&self) -> Result<()> {
        let b = [
            self.approach_end,
            self.initiation_end,
            self.lap_ends[0],
            self.lap_ends[1],
            self.steady_end,
        ];
        if b.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::Config(format!("region boundaries must increase: {b:?}")));
        }
        Ok(())
    }

    pub fn region(&self, s: f64) -> Region {
        if s < self.approach_end {
            Region::Approach
        } else if s < self.initiation_end {
            Region::Initiation
        } else if s < self.lap_ends[0] {
            Region::SteadyLap1
        } else if s < self.lap_ends[1] {
            Region::SteadyLap2
        } else {
            Region::SteadyLap3
        }
    }
}

/// Geometry and schedule of the reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReferenceConfig {
    pub radius: f64,
    pub beta_deg: f64,
    pub v_multipliers: Vec<f64>,
    /// length of the straight entry, m
    pub approach_length: f64,
    /// length of the initiation region after the approach, m
    pub initiation_length: f64,
    /// distance over which targets ramp from approach to lap-1 levels, m
    pub initiation_blend: f64,
    /// linear blend between lap target levels, m
    pub lap_blend: f64,
    /// end of the experiment window; defaults to the end of the last lap
    pub steady_end: Option<f64>,
    /// extra reference beyond the window for the prediction horizon, m
    pub tail: f64,
    /// sample spacing, m
    pub ds: f64,
}

impl Default for ReferenceConfig {
    fn default() -> Self {
        Self {
            radius: 15.0,
            beta_deg: -40.0,
            v_multipliers: vec![1.0, 0.95, 0.875],
            approach_length: 90.7,
            initiation_length: 21.8,
            initiation_blend: 10.0,
            lap_blend: 5.0,
            steady_end: None,
            tail: 40.0,
            ds: 0.1,
        }
    }
}

impl ReferenceConfig {
    pub fn lap_length(&self) -> f64 {
        2.0 * PI * self.radius
    }

    pub fn bounds(&self) -> RegionBounds {
        let lap = self.lap_length();
        let start = self.approach_length;
        let laps = self.v_multipliers.len().max(1) as f64;
        RegionBounds {
            approach_end: start,
            initiation_end: start + self.initiation_length,
            lap_ends: [start + lap, start + 2.0 * lap],
            steady_end: self.steady_end.unwrap_or(start + laps.max(3.0) * lap),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefSample {
    pub s: f64,
    pub kappa: f64,
    pub beta_ref: f64,
    pub v_ref: f64,
    pub fxf_ref: f64,
    pub delta_ref: f64,
    pub fxr_ref: f64,
    pub region: Region,
}

impl RefSample {
    /// State target `[r, v, beta, s, e, dpsi]`; heading error target keeps
    /// the velocity tangent to the path.
    pub fn state_target(&self) -> [f64; NX] {
        [
            self.kappa * self.v_ref,
            self.v_ref,
            self.beta_ref,
            self.s,
            0.0,
            -self.beta_ref,
        ]
    }

    pub fn input_target(&self) -> [f64; NU] {
        [self.delta_ref, self.fxf_ref, self.fxr_ref]
    }

    pub fn input(&self) -> ControlInput {
        ControlInput::from_array(&self.input_target())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceTrajectory {
    pub samples: Vec<RefSample>,
    pub bounds: RegionBounds,
    pub path: PathDef,
    /// one equilibrium per lap
    pub equilibria: Vec<DriftEquilibrium>,
    pub ds: f64,
}

#[derive(Clone, Copy)]
struct Level {
    beta: f64,
    v: f64,
    fxf: f64,
    delta: f64,
    fxr: f64,
}

impl Level {
    fn lerp(a: Level, b: Level, w: f64) -> Level {
        let l = |x: f64, y: f64| x + (y - x) * w;
        Level {
            beta: l(a.beta, b.beta),
            v: l(a.v, b.v),
            fxf: l(a.fxf, b.fxf),
            delta: l(a.delta, b.delta),
            fxr: l(a.fxr, b.fxr),
        }
    }

    fn from_eq(eq: &DriftEquilibrium) -> Level {
        Level {
            beta: eq.beta,
            v: eq.v,
            fxf: eq.fxf,
            delta: eq.delta,
            fxr: eq.fxr,
        }
    }
}

/// Solves the unbraked lap-1 equilibrium and the speed-pinned braking
/// equilibria for the remaining laps, then lays them out along the path.
pub fn build_reference(
    cfg: &ReferenceConfig,
    vehicle: &VehicleParams,
    tires: &AxleTires,
) -> Result<ReferenceTrajectory> {
    if cfg.v_multipliers.is_empty() || cfg.v_multipliers.len() > 3 {
        return Err(Error::Config("between one and three lap multipliers are supported".into()));
    }
    let beta = cfg.beta_deg.to_radians();
    let lap1 = solve_equilibrium(
        &EquilibriumSpec {
            radius: cfg.radius,
            beta_des: beta,
            constraint: EquilibriumConstraint::FxfFixed(0.0),
        },
        vehicle,
        tires,
    )?;
    let mut equilibria = Vec::with_capacity(cfg.v_multipliers.len());
    for &m in &cfg.v_multipliers {
        if m == 1.0 {
            equilibria.push(lap1);
            continue;
        }
        let eq = solve_equilibrium(
            &EquilibriumSpec {
                radius: cfg.radius,
                beta_des: beta,
                constraint: EquilibriumConstraint::VFixed(m * lap1.v),
            },
            vehicle,
            tires,
        )?;
        equilibria.push(eq);
    }
    layout(cfg, equilibria)
}

/// Places already-solved per-lap equilibria along the path.
pub fn layout(cfg: &ReferenceConfig, equilibria: Vec<DriftEquilibrium>) -> Result<ReferenceTrajectory> {
    let bounds = cfg.bounds();
    bounds.validate()?;
    if equilibria.is_empty() {
        return Err(Error::Config("no lap equilibria".into()));
    }
    let first = equilibria[0];
    let turn = if first.r < 0.0 { -1.0 } else { 1.0 };
    let path = PathDef {
        circle_start: cfg.approach_length,
        curvature: turn / cfg.radius,
    };
    let approach = Level {
        beta: 0.0,
        v: first.v,
        fxf: 0.0,
        delta: 0.0,
        fxr: 0.0,
    };
    let levels: Vec<Level> = equilibria.iter().map(Level::from_eq).collect();
    let lap = cfg.lap_length();
    let level_at = |s: f64| -> Level {
        let d = s - cfg.approach_length;
        if d < 0.0 {
            return approach;
        }
        let idx = ((d / lap).floor() as usize).min(levels.len() - 1);
        let into = d - idx as f64 * lap;
        let (prev, blend) = if idx == 0 {
            (approach, cfg.initiation_blend)
        } else {
            (levels[idx - 1], cfg.lap_blend)
        };
        if blend > 0.0 && into < blend && (idx == 0 || d < levels.len() as f64 * lap) {
            Level::lerp(prev, levels[idx], into / blend)
        } else {
            levels[idx]
        }
    };
    let end = bounds.steady_end + cfg.tail;
    let n = (end / cfg.ds).ceil() as usize + 1;
    let samples = (0..n)
        .map(|i| {
            let s = i as f64 * cfg.ds;
            let l = level_at(s);
            RefSample {
                s,
                kappa: path.kappa(s),
                beta_ref: l.beta,
                v_ref: l.v,
                fxf_ref: l.fxf,
                delta_ref: l.delta,
                fxr_ref: l.fxr,
                region: bounds.region(s),
            }
        })
        .collect();
    Ok(ReferenceTrajectory {
        samples,
        bounds,
        path,
        equilibria,
        ds: cfg.ds,
    })
}

impl ReferenceTrajectory {
    pub fn v_sol(&self) -> f64 {
        self.equilibria[0].v
    }

    pub fn end(&self) -> f64 {
        self.samples.last().map(|s| s.s).unwrap_or(0.0)
    }

    /// Linearly interpolated targets; curvature and region follow the exact
    /// piecewise definitions.
    pub fn sample_at(&self, s: f64) -> RefSample {
        let last = self.samples.len() - 1;
        let pos = (s / self.ds).max(0.0);
        let i = (pos.floor() as usize).min(last);
        let j = (i + 1).min(last);
        let w = (pos - i as f64).clamp(0.0, 1.0);
        let (a, b) = (&self.samples[i], &self.samples[j]);
        let l = |x: f64, y: f64| x + (y - x) * w;
        RefSample {
            s,
            kappa: self.path.kappa(s),
            beta_ref: l(a.beta_ref, b.beta_ref),
            v_ref: l(a.v_ref, b.v_ref),
            fxf_ref: l(a.fxf_ref, b.fxf_ref),
            delta_ref: l(a.delta_ref, b.delta_ref),
            fxr_ref: l(a.fxr_ref, b.fxr_ref),
            region: self.bounds.region(s),
        }
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["s", "kappa", "beta_ref", "v_ref", "fxf_ref", "delta_ref", "fxr_ref", "region"])?;
        for p in &self.samples {
            w.write_record([
                format!("{:.17e}", p.s),
                format!("{:.17e}", p.kappa),
                format!("{:.17e}", p.beta_ref),
                format!("{:.17e}", p.v_ref),
                format!("{:.17e}", p.fxf_ref),
                format!("{:.17e}", p.delta_ref),
                format!("{:.17e}", p.fxr_ref),
                p.region.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}
