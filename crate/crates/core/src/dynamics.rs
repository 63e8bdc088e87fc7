//! Single-track drift model with path-relative states.
//!
//! State ordering used throughout the crate: `[r, v, beta, s, e, dpsi]`,
//! inputs `[delta, fxf, fxr]`.

use serde::{Deserialize, Serialize};

use crate::ad::Real;
use crate::{Error, Result};

pub const NX: usize = 6;
pub const NU: usize = 3;

/// Below this speed the kinematic slip definitions are not meaningful.
pub const MIN_SPEED: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VehicleParams {
    /// kg
    pub mass: f64,
    /// kg m^2
    pub yaw_inertia: f64,
    /// CG to front axle, m
    pub a: f64,
    /// CG to rear axle, m
    pub b: f64,
    pub g: f64,
    pub delta_max: f64,
    pub fxr_max: f64,
    /// most negative front braking force, N
    pub fxf_min: f64,
    /// CG height, only used when longitudinal load transfer is enabled
    pub h_cg: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        Self {
            mass: 1620.0,
            yaw_inertia: 2350.0,
            a: 1.25,
            b: 1.22,
            g: 9.81,
            delta_max: 0.96,
            fxr_max: 10_000.0,
            fxf_min: -6000.0,
            h_cg: 0.45,
        }
    }
}

impl VehicleParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.mass, self.yaw_inertia, self.a, self.b, self.g, self.delta_max];
        if positive.iter().any(|v| !(*v > 0.0)) || self.fxf_min > 0.0 || self.fxr_max < 0.0 {
            return Err(Error::Config(format!("vehicle parameters out of range: {self:?}")));
        }
        Ok(())
    }

    pub fn wheelbase(&self) -> f64 {
        self.a + self.b
    }

    pub fn clamp_input(&self, u: ControlInput) -> ControlInput {
        ControlInput {
            delta: u.delta.clamp(-self.delta_max, self.delta_max),
            fxf: u.fxf.clamp(self.fxf_min, 0.0),
            fxr: u.fxr.clamp(0.0, self.fxr_max),
        }
    }

    pub fn input_within_bounds(&self, u: &ControlInput) -> bool {
        u.delta.abs() <= self.delta_max
            && u.fxf >= self.fxf_min
            && u.fxf <= 0.0
            && u.fxr >= 0.0
            && u.fxr <= self.fxr_max
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct VehicleState {
    /// yaw rate, rad/s
    pub r: f64,
    /// speed, m/s
    pub v: f64,
    /// sideslip, rad
    pub beta: f64,
    /// arc position, m
    pub s: f64,
    /// lateral error, m (positive left of path)
    pub e: f64,
    /// heading error, rad
    pub dpsi: f64,
}

impl VehicleState {
    pub fn to_array(&self) -> [f64; NX] {
        [self.r, self.v, self.beta, self.s, self.e, self.dpsi]
    }

    pub fn from_array(x: &[f64; NX]) -> Self {
        Self {
            r: x[0],
            v: x[1],
            beta: x[2],
            s: x[3],
            e: x[4],
            dpsi: x[5],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ControlInput {
    /// steering, rad
    pub delta: f64,
    /// front longitudinal force, N (braking only, <= 0)
    pub fxf: f64,
    /// rear drive force, N (>= 0)
    pub fxr: f64,
}

impl ControlInput {
    pub fn to_array(&self) -> [f64; NU] {
        [self.delta, self.fxf, self.fxr]
    }

    pub fn from_array(u: &[f64; NU]) -> Self {
        Self {
            delta: u[0],
            fxf: u[1],
            fxr: u[2],
        }
    }
}

/// Straight approach followed by a constant-radius circle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathDef {
    /// arc position where the circle starts, m
    pub circle_start: f64,
    /// signed curvature on the circle, 1/m (positive turns left)
    pub curvature: f64,
}

impl PathDef {
    pub fn circle(radius: f64, turn: f64) -> Self {
        Self {
            circle_start: f64::NEG_INFINITY,
            curvature: turn.signum() / radius,
        }
    }

    pub fn kappa(&self, s: f64) -> f64 {
        if s < self.circle_start {
            0.0
        } else {
            self.curvature
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateRate {
    pub r_dot: f64,
    pub v_dot: f64,
    pub beta_dot: f64,
    pub s_dot: f64,
    pub e_dot: f64,
    pub dpsi_dot: f64,
}

impl StateRate {
    pub fn to_array(&self) -> [f64; NX] {
        [self.r_dot, self.v_dot, self.beta_dot, self.s_dot, self.e_dot, self.dpsi_dot]
    }

    pub fn velocity_norm(&self) -> f64 {
        (self.v_dot.powi(2) + self.beta_dot.powi(2) + self.r_dot.powi(2)).sqrt()
    }
}

pub fn slip_angles_generic<T: Real>(r: T, v: T, beta: T, delta: T, p: &VehicleParams) -> (T, T) {
    let vx = v * beta.cos();
    let vy = v * beta.sin();
    let alpha_f = ((vy + r * p.a) / vx).atan() - delta;
    let alpha_r = ((vy - r * p.b) / vx).atan();
    (alpha_f, alpha_r)
}

pub fn slip_angles(state: &VehicleState, delta: f64, params: &VehicleParams) -> Result<(f64, f64)> {
    if !(state.v > MIN_SPEED) {
        return Err(Error::LowSpeed { v: state.v });
    }
    Ok(slip_angles_generic(state.r, state.v, state.beta, delta, params))
}

/// Speed of the front axle contact point.
pub fn front_axle_speed(state: &VehicleState, params: &VehicleParams) -> f64 {
    let vx = state.v * state.beta.cos();
    let vy = state.v * state.beta.sin() + params.a * state.r;
    vx.hypot(vy)
}

/// Static axle loads.
pub fn normal_loads(params: &VehicleParams) -> (f64, f64) {
    let w = params.mass * params.g;
    let l = params.wheelbase();
    let fzf = w * params.b / l;
    (fzf, w - fzf)
}

/// Axle loads with quasi-static longitudinal transfer for a body-frame
/// longitudinal force `fx_body`.
pub fn normal_loads_with_transfer(params: &VehicleParams, fx_body: f64) -> (f64, f64) {
    let (fzf, fzr) = normal_loads(params);
    let shift = params.h_cg / params.wheelbase() * fx_body;
    (fzf - shift, fzr + shift)
}

/// Body-frame longitudinal force total.
pub fn body_longitudinal_force(u: &ControlInput, fyf: f64) -> f64 {
    u.fxf * u.delta.cos() - fyf * u.delta.sin() + u.fxr
}

/// Continuous-time rates, generic so the controller can differentiate it.
pub fn rates_generic<T: Real>(
    x: &[T; NX],
    u: &[T; NU],
    fyf: T,
    fyr: T,
    kappa: f64,
    p: &VehicleParams,
) -> [T; NX] {
    let [r, v, beta, _s, e, dpsi] = *x;
    let [delta, fxf, fxr] = *u;
    let (sd, cd) = (delta.sin(), delta.cos());
    let (sb, cb) = (beta.sin(), beta.cos());
    let front_lat = fyf * cd + fxf * sd;
    let fx = fxf * cd - fyf * sd + fxr;
    let fy = front_lat + fyr;
    let v_dot = (fx * cb + fy * sb) / p.mass;
    let beta_dot = (fy * cb - fx * sb) / (v * p.mass) - r;
    let r_dot = (front_lat * p.a - fyr * p.b) / p.yaw_inertia;
    let course = dpsi + beta;
    let s_dot = v * course.cos() / (T::cst(1.0) - e * kappa);
    let e_dot = v * course.sin();
    let dpsi_dot = r - s_dot * kappa;
    [r_dot, v_dot, beta_dot, s_dot, e_dot, dpsi_dot]
}

fn check_validity(state: &VehicleState, kappa: f64) -> Result<()> {
    if !(state.v > MIN_SPEED) {
        return Err(Error::LowSpeed { v: state.v });
    }
    let ke = kappa * state.e;
    if ke >= 1.0 - 1e-6 {
        return Err(Error::PathSingularity { kappa_e: ke });
    }
    Ok(())
}

pub fn derivatives(
    state: &VehicleState,
    u: &ControlInput,
    fyf: f64,
    fyr: f64,
    path: &PathDef,
) -> Result<StateRate> {
    derivatives_with(state, u, fyf, fyr, path, &VehicleParams::default())
}

pub fn derivatives_with(
    state: &VehicleState,
    u: &ControlInput,
    fyf: f64,
    fyr: f64,
    path: &PathDef,
    params: &VehicleParams,
) -> Result<StateRate> {
    let kappa = path.kappa(state.s);
    check_validity(state, kappa)?;
    let d = rates_generic(&state.to_array(), &u.to_array(), fyf, fyr, kappa, params);
    if d.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("state derivatives"));
    }
    Ok(StateRate {
        r_dot: d[0],
        v_dot: d[1],
        beta_dot: d[2],
        s_dot: d[3],
        e_dot: d[4],
        dpsi_dot: d[5],
    })
}

/// Classical fourth-order Runge-Kutta step over a generic vector field.
pub fn rk4<T: Real, const N: usize, E>(
    x: &[T; N],
    dt: f64,
    mut f: impl FnMut(&[T; N]) -> std::result::Result<[T; N], E>,
) -> std::result::Result<[T; N], E> {
    let axpy = |x: &[T; N], k: &[T; N], h: f64| -> [T; N] {
        let mut out = *x;
        for i in 0..N {
            out[i] = x[i] + k[i] * h;
        }
        out
    };
    let k1 = f(x)?;
    let k2 = f(&axpy(x, &k1, 0.5 * dt))?;
    let k3 = f(&axpy(x, &k2, 0.5 * dt))?;
    let k4 = f(&axpy(x, &k3, dt))?;
    let mut out = *x;
    for i in 0..N {
        out[i] = x[i] + (k1[i] + (k2[i] + k3[i]) * 2.0 + k4[i]) * (dt / 6.0);
    }
    Ok(out)
}

/// Supplies `(fyf, fyr)` for a state and input.
pub trait ForceProvider {
    fn lateral_forces(&mut self, state: &VehicleState, u: &ControlInput) -> Result<(f64, f64)>;
}

impl<F> ForceProvider for F
where
    F: FnMut(&VehicleState, &ControlInput) -> Result<(f64, f64)>,
{
    fn lateral_forces(&mut self, state: &VehicleState, u: &ControlInput) -> Result<(f64, f64)> {
        self(state, u)
    }
}

/// One RK4 step of the vehicle with forces re-evaluated at every stage.
pub fn rk4_step(
    state: &VehicleState,
    u: &ControlInput,
    dt: f64,
    path: &PathDef,
    params: &VehicleParams,
    forces: &mut impl ForceProvider,
) -> Result<VehicleState> {
    if !(dt > 0.0 && dt <= 0.05) {
        return Err(Error::Config(format!("integration step {dt} outside (0, 0.05]")));
    }
    let next = rk4(&state.to_array(), dt, |x| {
        let st = VehicleState::from_array(x);
        let (fyf, fyr) = forces.lateral_forces(&st, u)?;
        derivatives_with(&st, u, fyf, fyr, path, params).map(|d| d.to_array())
    })?;
    let out = VehicleState::from_array(&next);
    if !out.is_finite() {
        return Err(Error::NonFinite("integrated state"));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn coasting(v: f64, r: f64) -> VehicleState {
        VehicleState { r, v, ..Default::default() }
    }

    #[test]
    fn slip_angle_examples() {
        let p = VehicleParams::default();
        let st = coasting(10.0, 0.0);
        assert_eq!(slip_angles(&st, 0.0, &p).unwrap(), (0.0, 0.0));
        let (af, ar) = slip_angles(&st, 0.1, &p).unwrap();
        assert!((af + 0.1).abs() < 1e-15 && ar == 0.0);
    }

    #[test]
    fn slip_angles_drift_point() {
        let p = VehicleParams::default();
        let st = VehicleState { r: 0.8, v: 12.0, beta: -0.698, ..Default::default() };
        let (af, ar) = slip_angles(&st, -0.2, &p).unwrap();
        // 40-digit evaluation of the two atan expressions
        assert!((af - -0.430_645_145_689_450_8).abs() < 1e-14, "{af}");
        assert!((ar - -0.757_147_407_080_006).abs() < 1e-14, "{ar}");
    }

    #[test]
    fn slip_angles_reject_low_speed() {
        let p = VehicleParams::default();
        assert!(matches!(
            slip_angles(&coasting(0.05, 0.0), 0.0, &p),
            Err(Error::LowSpeed { .. })
        ));
    }

    #[test]
    fn normal_load_examples() {
        let p = VehicleParams::default();
        let (f, r) = normal_loads(&p);
        assert!((f - 7849.58866396761).abs() < 1e-6);
        assert!((r - 8042.61133603239).abs() < 1e-6);
        assert!((f + r - 15892.2).abs() < 1e-9);
        let sym = VehicleParams { a: 1.3, b: 1.3, ..p };
        let (f, r) = normal_loads(&sym);
        assert_eq!(f, r);
        assert_eq!(f, 1620.0 * 9.81 / 2.0);
    }

    #[test]
    fn coasting_rates() {
        let path = PathDef { circle_start: 0.0, curvature: 0.0 };
        let st = coasting(10.0, 0.3);
        let d = derivatives(&st, &ControlInput::default(), 0.0, 0.0, &path).unwrap();
        assert_eq!(d.v_dot, 0.0);
        assert_eq!(d.beta_dot, -0.3);
        assert_eq!(d.r_dot, 0.0);
        assert_eq!(d.s_dot, 10.0);
    }

    #[test]
    fn rear_drive_only() {
        let path = PathDef { circle_start: 0.0, curvature: 0.0 };
        let p = VehicleParams::default();
        let st = coasting(10.0, 0.2);
        let u = ControlInput { fxr: 1000.0, ..Default::default() };
        let d = derivatives_with(&st, &u, 0.0, 0.0, &path, &p).unwrap();
        assert!((d.v_dot - 1000.0 / p.mass).abs() < 1e-15);
        assert_eq!(d.beta_dot, -0.2);
    }

    #[test]
    fn path_singularity_is_error() {
        let path = PathDef::circle(15.0, 1.0);
        let st = VehicleState { v: 10.0, e: 15.0, ..Default::default() };
        assert!(matches!(
            derivatives(&st, &ControlInput::default(), 0.0, 0.0, &path),
            Err(Error::PathSingularity { .. })
        ));
    }

    #[test]
    fn tangent_on_circle_has_zero_lateral_rate() {
        let path = PathDef::circle(15.0, 1.0);
        let st = VehicleState { r: 0.7, v: 11.0, beta: -0.7, s: 3.0, e: 0.0, dpsi: 0.7 };
        let d = derivatives(&st, &ControlInput::default(), 0.0, 0.0, &path).unwrap();
        assert_eq!(d.e_dot, 0.0);
    }

    #[test]
    fn rk4_fixed_point() {
        let x = [1.0, 2.0];
        let y = rk4(&x, 0.01, |_| Ok::<_, ()>([0.0, 0.0])).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn rk4_local_error_is_fifth_order() {
        let a = -1.7;
        let err = |dt: f64| {
            let y = rk4(&[1.0], dt, |x| Ok::<_, ()>([a * x[0]])).unwrap()[0];
            (y - (a * dt).exp()).abs()
        };
        // local error ~ (a dt)^5 / 120
        let (e1, e2) = (err(0.04), err(0.02));
        assert!(e1 < 2.0 * (a * 0.04f64).abs().powi(5) / 120.0);
        let ratio = e1 / e2;
        assert!((ratio - 32.0).abs() < 2.0, "ratio {ratio}");
    }

    #[test]
    fn rk4_global_order_four() {
        let a = -1.7;
        let global = |n: usize| {
            let dt = 1.0 / n as f64;
            let mut x = [1.0];
            for _ in 0..n {
                x = rk4(&x, dt, |x| Ok::<_, ()>([a * x[0]])).unwrap();
            }
            (x[0] - a.exp()).abs()
        };
        let ratio = global(20) / global(40);
        assert!((ratio - 16.0).abs() < 1.0, "ratio {ratio}");
    }

    #[test]
    fn zero_forces_keep_speed() {
        let path = PathDef::circle(15.0, 1.0);
        let p = VehicleParams::default();
        let mut st = VehicleState { r: 0.4, v: 11.0, beta: -0.3, s: 0.0, e: 0.1, dpsi: 0.2 };
        let mut zero = |_: &VehicleState, _: &ControlInput| Ok((0.0, 0.0));
        for _ in 0..500 {
            st = rk4_step(&st, &ControlInput::default(), 0.01, &path, &p, &mut zero).unwrap();
        }
        assert!((st.v - 11.0).abs() < 1e-12);
    }

    #[test]
    fn rk4_step_rejects_large_dt() {
        let path = PathDef::circle(15.0, 1.0);
        let p = VehicleParams::default();
        let st = coasting(10.0, 0.0);
        let mut zero = |_: &VehicleState, _: &ControlInput| Ok((0.0, 0.0));
        assert!(rk4_step(&st, &ControlInput::default(), 0.1, &path, &p, &mut zero).is_err());
    }
}
