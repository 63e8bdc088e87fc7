//! The front-tire port: the only place the physics and learned variants differ.

use crate::ad::{Dual, Real};
use crate::dynamics::slip_angles_generic;
use crate::mlp::{InputMode, Mlp, N_FEATURES};
use crate::tire::{fiala_generic, TireParams};
use crate::dynamics::VehicleParams;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PortInput {
    pub r: f64,
    pub v: f64,
    pub beta: f64,
    pub delta: f64,
    pub fxf: f64,
    pub fzf: f64,
}

impl PortInput {
    pub fn raw_features(&self) -> [f64; N_FEATURES] {
        [self.r, self.v, self.beta, self.delta, self.fxf, self.fzf]
    }
}

/// Front lateral force and its partials with respect to `(r, v, beta, delta, fxf)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PortOutput {
    pub fyf: f64,
    pub partials: [f64; 5],
}

pub trait FrontTirePort: Send + Sync {
    fn evaluate(&self, x: &PortInput) -> PortOutput;
    /// Force only; ports may skip the derivative work.
    fn force(&self, x: &PortInput) -> f64 {
        self.evaluate(x).fyf
    }
    fn name(&self) -> &'static str;
}

/// Nominal Fiala front axle.
#[derive(Debug, Clone, Copy)]
pub struct PhysicsFront {
    pub tire: TireParams,
    /// CG to front axle, m
    pub a: f64,
}

impl PhysicsFront {
    pub fn new(tire: TireParams, vehicle: &VehicleParams) -> Self {
        Self { tire, a: vehicle.a }
    }
}

impl FrontTirePort for PhysicsFront {
    fn force(&self, x: &PortInput) -> f64 {
        let vp = VehicleParams {
            a: self.a,
            ..VehicleParams::default()
        };
        let (alpha, _) = slip_angles_generic(x.r, x.v, x.beta, x.delta, &vp);
        fiala_generic(alpha, x.fxf, x.fzf, self.tire.cornering_stiffness, self.tire.mu)
    }

    fn evaluate(&self, x: &PortInput) -> PortOutput {
        let vp = VehicleParams {
            a: self.a,
            ..VehicleParams::default()
        };
        let (alpha, _) = slip_angles_generic(
            Dual::<5>::var(x.r, 0),
            Dual::var(x.v, 1),
            Dual::var(x.beta, 2),
            Dual::var(x.delta, 3),
            &vp,
        );
        let f = fiala_generic(
            alpha,
            Dual::var(x.fxf, 4),
            x.fzf,
            self.tire.cornering_stiffness,
            self.tire.mu,
        );
        PortOutput {
            fyf: f.re,
            partials: f.eps,
        }
    }

    fn name(&self) -> &'static str {
        "physics"
    }
}

/// Network features for a port input, with their Jacobian with respect to
/// `(r, v, beta, delta, fxf)`.
pub fn network_features(
    mode: InputMode,
    x: &PortInput,
    a: f64,
) -> ([f64; N_FEATURES], [[f64; 5]; N_FEATURES]) {
    let mut jac = [[0.0; 5]; N_FEATURES];
    for (i, row) in jac.iter_mut().enumerate().take(5) {
        row[i] = 1.0;
    }
    let mut feats = x.raw_features();
    if mode == InputMode::SlipAngle {
        let vp = VehicleParams {
            a,
            ..VehicleParams::default()
        };
        let (alpha, _) = slip_angles_generic(
            Dual::<5>::var(x.r, 0),
            Dual::var(x.v, 1),
            Dual::var(x.beta, 2),
            Dual::var(x.delta, 3),
            &vp,
        );
        feats[0] = alpha.re();
        jac[0] = alpha.eps;
    }
    (feats, jac)
}

/// Learned front axle.
#[derive(Debug, Clone)]
pub struct NeuralFront {
    pub mlp: Mlp,
    pub a: f64,
}

impl NeuralFront {
    pub fn new(mlp: Mlp, vehicle: &VehicleParams) -> Self {
        Self { mlp, a: vehicle.a }
    }
}

impl FrontTirePort for NeuralFront {
    fn force(&self, x: &PortInput) -> f64 {
        let (feats, _) = network_features(self.mlp.config.input_mode, x, self.a);
        self.mlp.forward_unchecked(&feats)
    }

    fn evaluate(&self, x: &PortInput) -> PortOutput {
        let (feats, fjac) = network_features(self.mlp.config.input_mode, x, self.a);
        let (fyf, grad) = self.mlp.forward_with_input_jacobian(&feats);
        let mut partials = [0.0; 5];
        for (k, g) in grad.iter().enumerate() {
            for j in 0..5 {
                partials[j] += g * fjac[k][j];
            }
        }
        PortOutput { fyf, partials }
    }

    fn name(&self) -> &'static str {
        "neural"
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mlp::{MlpConfig, MlpWeights, Normalizer};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn check_consistency(port: &dyn FrontTirePort, x: &PortInput) {
        let out = port.evaluate(x);
        assert!((port.force(x) - out.fyf).abs() <= 1e-9 * out.fyf.abs().max(1.0));
        let steps = [1e-6, 1e-6, 1e-7, 1e-7, 1e-3];
        for j in 0..5 {
            let mut xp = *x;
            let mut xm = *x;
            let field = |p: &mut PortInput, h: f64| match j {
                0 => p.r += h,
                1 => p.v += h,
                2 => p.beta += h,
                3 => p.delta += h,
                _ => p.fxf += h,
            };
            field(&mut xp, steps[j]);
            field(&mut xm, -steps[j]);
            let fd = (port.evaluate(&xp).fyf - port.evaluate(&xm).fyf) / (2.0 * steps[j]);
            let rel = (fd - out.partials[j]).abs() / out.partials[j].abs().max(1e-2);
            assert!(rel < 1e-4, "{} partial {j}: fd {fd} vs {}", port.name(), out.partials[j]);
        }
    }

    fn drift_input() -> PortInput {
        PortInput { r: 0.72, v: 10.9, beta: -0.69, delta: -0.55, fxf: -900.0, fzf: 7500.0 }
    }

    #[test]
    fn physics_partials_are_consistent() {
        let port = PhysicsFront::new(TireParams::default(), &VehicleParams::default());
        check_consistency(&port, &drift_input());
        check_consistency(&port, &PortInput { r: 0.1, v: 12.0, beta: 0.0, delta: 0.05, fxf: 0.0, fzf: 7849.0 });
    }

    #[test]
    fn neural_partials_are_consistent() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for mode in [InputMode::RawStates, InputMode::SlipAngle] {
            let cfg = MlpConfig { input_mode: mode, ..MlpConfig::default() };
            let mut w = MlpWeights::zeros(&cfg);
            w.params.iter_mut().for_each(|p| *p = rng.random_range(-0.7..0.7));
            let norm = Normalizer {
                mean: vec![0.6, 11.0, -0.6, -0.5, -1000.0, 7500.0],
                std: vec![0.2, 1.0, 0.2, 0.2, 800.0, 300.0],
                label_scale: 6000.0,
            };
            let port = NeuralFront::new(Mlp::new(cfg, w, norm).unwrap(), &VehicleParams::default());
            check_consistency(&port, &drift_input());
        }
    }
}
