//! Fiala brush lateral force with friction-circle coupling, and the
//! latent-effect "plant" tire used as simulation ground truth.

use serde::{Deserialize, Serialize};

use crate::ad::Real;

/// Nominal brush-model parameters for one axle. Normal load is supplied per call.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TireParams {
    /// N/rad
    pub cornering_stiffness: f64,
    pub mu: f64,
}

impl Default for TireParams {
    fn default() -> Self {
        Self {
            cornering_stiffness: 120_000.0,
            mu: 0.9,
        }
    }
}

impl TireParams {
    pub fn validate(&self) -> crate::Result<()> {
        if !(self.cornering_stiffness > 0.0) || !(self.mu > 0.0 && self.mu <= 2.0) {
            return Err(crate::Error::Config(format!(
                "tire parameters out of range: C={} mu={}",
                self.cornering_stiffness, self.mu
            )));
        }
        Ok(())
    }
}

/// Friction-circle derating of the lateral capacity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Derating {
    pub xi: f64,
    /// Longitudinal demand exceeded the friction circle and was clamped.
    pub saturated: bool,
}

pub fn derating_factor(fx: f64, mu: f64, fz: f64) -> Derating {
    let limit = mu * fz;
    if fx.abs() >= limit {
        return Derating {
            xi: 0.0,
            saturated: fx.abs() > limit,
        };
    }
    let ratio = fx / limit;
    Derating {
        xi: (1.0 - ratio * ratio).sqrt(),
        saturated: false,
    }
}

fn derating_generic<T: Real>(fx: T, limit: f64) -> T {
    if fx.re().abs() >= limit {
        return T::cst(0.0);
    }
    let ratio = fx / limit;
    (T::cst(1.0) - ratio * ratio).sqrt()
}

/// Brush lateral force for one axle.
///
/// The pure-slip cubic is evaluated with capacity `mu*fz` and scaled by the
/// friction-circle factor, so both the sliding limit and the small-slip
/// stiffness shrink with longitudinal demand while the sliding onset angle
/// stays put. Slip angles at or beyond ±90° are treated as full sliding.
pub fn fiala_generic<T: Real>(alpha: T, fx: T, fz: f64, cornering_stiffness: f64, mu: f64) -> T {
    let limit = mu * fz;
    let xi = derating_generic(fx, limit);
    if xi.re() == 0.0 || limit <= 0.0 {
        return T::cst(0.0);
    }
    let c = cornering_stiffness;
    let a = alpha.re();
    let sign = if a > 0.0 {
        1.0
    } else if a < 0.0 {
        -1.0
    } else {
        0.0
    };
    if a.abs() >= std::f64::consts::FRAC_PI_2 {
        return xi * (-limit * sign);
    }
    let t = alpha.tan();
    let t_sl = 3.0 * limit / c;
    let pure = if t.re().abs() < t_sl {
        let c2 = c * c / (3.0 * limit);
        let c3 = c * c * c / (27.0 * limit * limit);
        t * (-c) + t * t.abs() * c2 - t * t * t * c3
    } else {
        T::cst(-limit * sign)
    };
    xi * pure
}

pub fn fiala_lateral_force(alpha: f64, fx: f64, fz: f64, params: &TireParams) -> f64 {
    fiala_generic(alpha, fx, fz, params.cornering_stiffness, params.mu)
}

/// Slip angle at which the pure-slip tire reaches full sliding.
pub fn sliding_angle(fz: f64, params: &TireParams) -> f64 {
    (3.0 * params.mu * fz / params.cornering_stiffness).atan()
}

/// Latent-effect tire: thermal friction fade and steering-dependent stiffness.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlantTireConfig {
    pub base: TireParams,
    /// °C
    pub t_ambient: f64,
    /// °C, fade starts above this temperature
    pub t_ref: f64,
    /// °C per joule of slip work
    pub heat_gain: f64,
    /// 1/s
    pub cool_rate: f64,
    /// fraction of mu lost per °C above `t_ref`
    pub fade_slope: f64,
    /// fractional stiffness change per radian of steering magnitude
    pub steer_stiffness_slope: f64,
}

impl Default for PlantTireConfig {
    fn default() -> Self {
        Self {
            base: TireParams::default(),
            t_ambient: 25.0,
            t_ref: 40.0,
            heat_gain: 0.0015,
            cool_rate: 0.5,
            fade_slope: 0.004,
            steer_stiffness_slope: -0.45,
        }
    }
}

/// Floor on the faded friction coefficient, as a fraction of nominal.
pub const MU_FLOOR_FRACTION: f64 = 0.2;
const STIFFNESS_FLOOR_FRACTION: f64 = 0.05;

impl PlantTireConfig {
    /// Plant identical to the nominal tire.
    pub fn nominal(base: TireParams) -> Self {
        Self {
            base,
            fade_slope: 0.0,
            steer_stiffness_slope: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> crate::Result<()> {
        self.base.validate()?;
        if self.fade_slope < 0.0 || !(self.cool_rate > 0.0) || self.heat_gain < 0.0 {
            return Err(crate::Error::Config(
                "plant tire: fade_slope and heat_gain must be >= 0, cool_rate > 0".into(),
            ));
        }
        Ok(())
    }

    pub fn effective_mu(&self, temperature: f64) -> f64 {
        let fade = 1.0 - self.fade_slope * (temperature - self.t_ref).max(0.0);
        self.base.mu * fade.max(MU_FLOOR_FRACTION)
    }

    pub fn effective_stiffness(&self, delta: f64) -> f64 {
        let scale = 1.0 + self.steer_stiffness_slope * delta.abs();
        self.base.cornering_stiffness * scale.max(STIFFNESS_FLOOR_FRACTION)
    }

    pub fn effective_params(&self, delta: f64, thermal: &TireThermalState) -> TireParams {
        TireParams {
            cornering_stiffness: self.effective_stiffness(delta),
            mu: self.effective_mu(thermal.temperature),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TireThermalState {
    /// °C
    pub temperature: f64,
}

impl TireThermalState {
    pub fn ambient(cfg: &PlantTireConfig) -> Self {
        Self {
            temperature: cfg.t_ambient,
        }
    }
}

pub fn plant_lateral_force(
    alpha: f64,
    fx: f64,
    fz: f64,
    delta: f64,
    thermal: &TireThermalState,
    cfg: &PlantTireConfig,
) -> f64 {
    let p = cfg.effective_params(delta, thermal);
    fiala_lateral_force(alpha, fx, fz, &p)
}

/// Explicit Euler step of the lumped tire temperature.
pub fn thermal_step(
    state: TireThermalState,
    slip_power: f64,
    dt: f64,
    cfg: &PlantTireConfig,
) -> TireThermalState {
    let t = state.temperature;
    TireThermalState {
        temperature: t + dt * (cfg.heat_gain * slip_power - cfg.cool_rate * (t - cfg.t_ambient)),
    }
}

/// Longitudinal slip ratio assumed for braking work; the single-track model
/// has no wheel-speed state.
pub const BRAKING_SLIP_RATIO: f64 = 0.05;

/// Frictional power dissipated in the contact patch.
pub fn slip_power(fy: f64, fx: f64, wheel_speed: f64, alpha: f64) -> f64 {
    (fy * wheel_speed * alpha.sin()).abs() + (fx * wheel_speed * BRAKING_SLIP_RATIO).abs()
}

#[cfg(test)]
mod tests {
    use super::*;

    const FZ: f64 = 5000.0;

    fn nominal() -> TireParams {
        TireParams::default()
    }

    #[test]
    fn derating_examples() {
        assert_eq!(derating_factor(0.0, 0.9, FZ).xi, 1.0);
        let full = derating_factor(4500.0, 0.9, FZ);
        assert_eq!(full.xi, 0.0);
        assert!(!full.saturated);
        assert!((derating_factor(2700.0, 0.9, FZ).xi - 0.8).abs() < 1e-12);
        let over = derating_factor(-5000.0, 0.9, FZ);
        assert_eq!(over.xi, 0.0);
        assert!(over.saturated);
    }

    #[test]
    fn fiala_examples() {
        let p = nominal();
        assert_eq!(fiala_lateral_force(0.0, 0.0, FZ, &p), 0.0);
        assert!((fiala_lateral_force(0.2, 0.0, FZ, &p) + 4500.0).abs() < 1e-9);
        // arbitrary-precision evaluation of the cubic: -1998.8336481337758
        let f = fiala_lateral_force(0.02, 0.0, FZ, &p);
        assert!((f + 1998.83364813378).abs() < 1e-8, "{f}");
        assert!((f + 1998.6).abs() < 1.0);
    }

    #[test]
    fn fully_saturated_longitudinally_gives_zero() {
        assert_eq!(fiala_lateral_force(0.1, 4500.0, FZ, &nominal()), 0.0);
        assert_eq!(fiala_lateral_force(0.1, -9000.0, FZ, &nominal()), 0.0);
    }

    #[test]
    fn beyond_right_angle_is_sliding() {
        let p = nominal();
        assert_eq!(fiala_lateral_force(1.7, 0.0, FZ, &p), -4500.0);
        assert_eq!(fiala_lateral_force(-2.0, 0.0, FZ, &p), 4500.0);
    }

    #[test]
    fn plant_matches_nominal_at_reference() {
        let cfg = PlantTireConfig::default();
        let th = TireThermalState {
            temperature: cfg.t_ref,
        };
        for &alpha in &[-0.3, -0.05, 0.0, 0.01, 0.4] {
            let a = plant_lateral_force(alpha, -800.0, FZ, 0.0, &th, &cfg);
            let b = fiala_lateral_force(alpha, -800.0, FZ, &cfg.base);
            assert_eq!(a, b);
        }
    }

    #[test]
    fn plant_fade_shrinks_saturation() {
        let cfg = PlantTireConfig {
            fade_slope: 0.005,
            ..PlantTireConfig::default()
        };
        let hot = TireThermalState {
            temperature: cfg.t_ref + 20.0,
        };
        let sat = plant_lateral_force(0.5, 0.0, FZ, 0.0, &hot, &cfg);
        assert!((sat / -4500.0 - 0.90).abs() < 1e-12);
    }

    #[test]
    fn plant_steering_shrinks_stiffness() {
        let cfg = PlantTireConfig {
            steer_stiffness_slope: -0.2,
            ..PlantTireConfig::default()
        };
        let th = TireThermalState::ambient(&cfg);
        let h = 1e-6;
        let slope = |delta: f64| {
            (plant_lateral_force(h, 0.0, FZ, delta, &th, &cfg)
                - plant_lateral_force(-h, 0.0, FZ, delta, &th, &cfg))
                / (2.0 * h)
        };
        assert!((slope(0.5) / slope(0.0) - 0.90).abs() < 1e-6);
    }

    #[test]
    fn fade_has_floor() {
        let cfg = PlantTireConfig {
            fade_slope: 0.05,
            ..PlantTireConfig::default()
        };
        assert!((cfg.effective_mu(cfg.t_ref + 1000.0) - 0.2 * cfg.base.mu).abs() < 1e-12);
    }

    #[test]
    fn thermal_examples() {
        let cfg = PlantTireConfig::default();
        let amb = TireThermalState::ambient(&cfg);
        assert_eq!(thermal_step(amb, 0.0, 0.01, &cfg), amb);

        let warm = TireThermalState {
            temperature: cfg.t_ambient + 10.0,
        };
        let next = thermal_step(warm, 0.0, 0.01, &cfg);
        let expected = cfg.t_ambient + 10.0 * (1.0 - cfg.cool_rate * 0.01);
        assert!(next.temperature < warm.temperature);
        assert!((next.temperature - expected).abs() < 1e-12);
    }

    #[test]
    fn thermal_fixed_point() {
        let cfg = PlantTireConfig {
            cool_rate: 0.2,
            ..PlantTireConfig::default()
        };
        let power = 3000.0;
        let mut th = TireThermalState::ambient(&cfg);
        for _ in 0..6000 {
            th = thermal_step(th, power, 0.01, &cfg);
        }
        let fixed = cfg.t_ambient + cfg.heat_gain * power / cfg.cool_rate;
        // 60 s is 12 time constants
        assert!((th.temperature - fixed).abs() < 1e-3 * fixed, "{}", th.temperature);
    }
}
