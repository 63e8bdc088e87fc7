//! Drift equilibria and the lap-scheduled reference trajectory.

mod reference;

pub use reference::{build_reference, ReferenceConfig, ReferenceTrajectory, RefSample, Region, RegionBounds};

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::dynamics::{normal_loads, rates_generic, ControlInput, VehicleParams, VehicleState};
use crate::tire::{fiala_generic, TireParams};
use crate::{Error, Result};

/// Which quantity is pinned besides the sideslip and radius.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum EquilibriumConstraint {
    /// Front longitudinal force fixed; solve for speed, steering, rear drive.
    FxfFixed(f64),
    /// Speed fixed; solve for steering, rear drive, front braking.
    VFixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumSpec {
    pub radius: f64,
    pub beta_des: f64,
    pub constraint: EquilibriumConstraint,
}

impl EquilibriumSpec {
    /// +1 for a left-hand turn. Negative sideslip drifts turn left.
    pub fn turn(&self) -> f64 {
        if self.beta_des > 0.0 {
            -1.0
        } else {
            1.0
        }
    }

    pub fn curvature(&self) -> f64 {
        self.turn() / self.radius
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftEquilibrium {
    pub v: f64,
    pub r: f64,
    pub beta: f64,
    pub delta: f64,
    pub fxr: f64,
    pub fxf: f64,
    pub radius: f64,
    pub residual_norm: f64,
}

impl DriftEquilibrium {
    /// Path-tangent state on the circle at arc position `s`.
    pub fn state(&self, s: f64) -> VehicleState {
        VehicleState {
            r: self.r,
            v: self.v,
            beta: self.beta,
            s,
            e: 0.0,
            dpsi: -self.beta,
        }
    }

    pub fn input(&self) -> ControlInput {
        ControlInput {
            delta: self.delta,
            fxf: self.fxf,
            fxr: self.fxr,
        }
    }
}

/// Nominal tire stack used by the equilibrium solver and the reference.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AxleTires {
    pub front: TireParams,
    pub rear: TireParams,
}

/// Velocity-state rates `(v_dot, beta_dot, r_dot)` at a candidate equilibrium.
pub fn equilibrium_residual(
    spec: &EquilibriumSpec,
    v: f64,
    u: &ControlInput,
    vehicle: &VehicleParams,
    tires: &AxleTires,
) -> [f64; 3] {
    let (fzf, fzr) = normal_loads(vehicle);
    let kappa = spec.curvature();
    let state = VehicleState {
        r: kappa * v,
        v,
        beta: spec.beta_des,
        s: 0.0,
        e: 0.0,
        dpsi: -spec.beta_des,
    };
    let (af, ar) = crate::dynamics::slip_angles_generic(state.r, v, state.beta, u.delta, vehicle);
    let fyf = fiala_generic(af, u.fxf, fzf, tires.front.cornering_stiffness, tires.front.mu);
    let fyr = fiala_generic(ar, u.fxr, fzr, tires.rear.cornering_stiffness, tires.rear.mu);
    let d = rates_generic(&state.to_array(), &u.to_array(), fyf, fyr, kappa, vehicle);
    [d[1], d[2], d[0]]
}

const CONVERGED: f64 = 1e-10;
const MAX_NEWTON: usize = 80;

struct Candidate {
    unknowns: [f64; 3],
    residual: f64,
}

fn unpack(spec: &EquilibriumSpec, z: &[f64; 3]) -> (f64, ControlInput) {
    match spec.constraint {
        EquilibriumConstraint::FxfFixed(fxf) => (
            z[0],
            ControlInput {
                delta: z[1],
                fxf,
                fxr: z[2],
            },
        ),
        EquilibriumConstraint::VFixed(v) => (
            v,
            ControlInput {
                delta: z[0],
                fxr: z[1],
                fxf: z[2],
            },
        ),
    }
}

fn scales(spec: &EquilibriumSpec) -> [f64; 3] {
    match spec.constraint {
        EquilibriumConstraint::FxfFixed(_) => [5.0, 0.5, 2000.0],
        EquilibriumConstraint::VFixed(_) => [0.5, 2000.0, 2000.0],
    }
}

fn newton(
    spec: &EquilibriumSpec,
    start: [f64; 3],
    vehicle: &VehicleParams,
    tires: &AxleTires,
) -> Candidate {
    let eval = |z: &[f64; 3]| -> Vector3<f64> {
        let (v, u) = unpack(spec, z);
        if !(v > 0.5) {
            return Vector3::repeat(f64::INFINITY);
        }
        Vector3::from(equilibrium_residual(spec, v, &u, vehicle, tires))
    };
    let scale = scales(spec);
    let mut z = start;
    let mut f = eval(&z);
    let mut norm = f.norm();
    for _ in 0..MAX_NEWTON {
        if !norm.is_finite() || norm < CONVERGED {
            break;
        }
        let mut jac = Matrix3::zeros();
        for j in 0..3 {
            let h = 1e-6 * scale[j];
            let mut zp = z;
            let mut zm = z;
            zp[j] += h;
            zm[j] -= h;
            jac.set_column(j, &((eval(&zp) - eval(&zm)) / (2.0 * h)));
        }
        let Some(step) = jac.lu().solve(&(-f)) else {
            break;
        };
        // cap the step in scaled units
        let largest = (0..3).map(|j| step[j].abs() / scale[j]).fold(0.0, f64::max);
        let cap = if largest > 0.5 { 0.5 / largest } else { 1.0 };
        let mut lambda = cap;
        let mut improved = false;
        for _ in 0..30 {
            let trial = [
                z[0] + lambda * step[0],
                z[1] + lambda * step[1],
                z[2] + lambda * step[2],
            ];
            let ft = eval(&trial);
            let nt = ft.norm();
            if nt.is_finite() && nt < norm {
                z = trial;
                f = ft;
                norm = nt;
                improved = true;
                break;
            }
            lambda *= 0.5;
        }
        if !improved {
            break;
        }
    }
    Candidate {
        unknowns: z,
        residual: if norm.is_finite() { norm } else { f64::INFINITY },
    }
}

fn start_grid(spec: &EquilibriumSpec) -> Vec<[f64; 3]> {
    let turn = spec.turn();
    let deltas = [0.6, 0.45, 0.3, 0.15, 0.0].map(|d| -turn * d);
    let rear = [2000.0, 4000.0, 6000.0, 8000.0];
    let mut starts = Vec::new();
    for &d in &deltas {
        for &fr in &rear {
            match spec.constraint {
                EquilibriumConstraint::FxfFixed(_) => {
                    for v in [8.0, 11.0, 14.0] {
                        starts.push([v, d, fr]);
                    }
                }
                EquilibriumConstraint::VFixed(_) => {
                    for ff in [0.0, -1500.0, -3000.0] {
                        starts.push([d, fr, ff]);
                    }
                }
            }
        }
    }
    starts
}

/// Required residual for an equilibrium to be reported.
pub const CERTIFIED_RESIDUAL: f64 = 1e-8;

/// Multi-start damped Newton search for the countersteer drift equilibrium.
pub fn solve_equilibrium(
    spec: &EquilibriumSpec,
    vehicle: &VehicleParams,
    tires: &AxleTires,
) -> Result<DriftEquilibrium> {
    if !(spec.radius > 0.0) || !(spec.beta_des.abs() < std::f64::consts::FRAC_PI_2) {
        return Err(Error::Config(format!("bad equilibrium spec {spec:?}")));
    }
    let turn = spec.turn();
    let mut best_any = f64::INFINITY;
    let mut best: Option<Candidate> = None;
    for start in start_grid(spec) {
        let cand = newton(spec, start, vehicle, tires);
        best_any = best_any.min(cand.residual);
        if cand.residual >= CERTIFIED_RESIDUAL {
            continue;
        }
        let (_, u) = unpack(spec, &cand.unknowns);
        // countersteer: steer against the direction of the turn
        if u.delta * turn >= 0.0 {
            continue;
        }
        let better = match &best {
            None => true,
            Some(b) => {
                let (_, ub) = unpack(spec, &b.unknowns);
                cand.residual < b.residual
                    || (cand.residual == b.residual && u.delta.abs() < ub.delta.abs())
            }
        };
        if better {
            best = Some(cand);
        }
    }
    let Some(best) = best else {
        return Err(Error::NoConvergence {
            best_residual: best_any,
        });
    };
    let (v, u) = unpack(spec, &best.unknowns);
    let eq = DriftEquilibrium {
        v,
        r: spec.curvature() * v,
        beta: spec.beta_des,
        delta: u.delta,
        fxr: u.fxr,
        fxf: u.fxf,
        radius: spec.radius,
        residual_norm: best.residual,
    };
    if !vehicle.input_within_bounds(&u) {
        return Err(Error::Infeasible(format!(
            "inputs {u:?} violate vehicle bounds at v={v:.3}"
        )));
    }
    Ok(eq)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lap1() -> EquilibriumSpec {
        EquilibriumSpec {
            radius: 15.0,
            beta_des: -40f64.to_radians(),
            constraint: EquilibriumConstraint::FxfFixed(0.0),
        }
    }

    #[test]
    fn unbraked_drift_equilibrium() {
        let eq = solve_equilibrium(&lap1(), &VehicleParams::default(), &AxleTires::default()).unwrap();
        assert!(eq.residual_norm < 1e-8);
        assert!(eq.v > 9.0 && eq.v < 14.0, "{eq:?}");
        assert_eq!(eq.r, eq.v / 15.0);
        // left turn, steering to the right
        assert!(eq.delta < 0.0);
        assert_eq!(eq.fxf, 0.0);
    }

    #[test]
    fn slower_equilibrium_needs_braking() {
        let vp = VehicleParams::default();
        let tires = AxleTires::default();
        let base = solve_equilibrium(&lap1(), &vp, &tires).unwrap();
        let spec = EquilibriumSpec {
            constraint: EquilibriumConstraint::VFixed(0.95 * base.v),
            ..lap1()
        };
        let eq = solve_equilibrium(&spec, &vp, &tires).unwrap();
        assert!(eq.fxf < 0.0, "{eq:?}");
        assert!(eq.residual_norm < 1e-8);
    }

    #[test]
    fn faster_than_unbraked_is_infeasible() {
        let vp = VehicleParams::default();
        let tires = AxleTires::default();
        let base = solve_equilibrium(&lap1(), &vp, &tires).unwrap();
        let spec = EquilibriumSpec {
            constraint: EquilibriumConstraint::VFixed(1.1 * base.v),
            ..lap1()
        };
        assert!(solve_equilibrium(&spec, &vp, &tires).is_err());
    }

    #[test]
    fn mirrored_drift() {
        let vp = VehicleParams::default();
        let tires = AxleTires::default();
        let left = solve_equilibrium(&lap1(), &vp, &tires).unwrap();
        let spec = EquilibriumSpec {
            beta_des: 40f64.to_radians(),
            ..lap1()
        };
        let right = solve_equilibrium(&spec, &vp, &tires).unwrap();
        assert!((left.v - right.v).abs() < 1e-8);
        assert!((left.delta + right.delta).abs() < 1e-8);
        assert!(right.r < 0.0);
    }
}
