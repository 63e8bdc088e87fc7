//! Discrete prediction models for the tracking solver.

use nalgebra::{SMatrix, SVector};

use super::port::{FrontTirePort, PortInput};
use crate::ad::{Dual, Real};
use crate::dynamics::{rates_generic, rk4, slip_angles_generic, VehicleParams, NU, NX};
use crate::tire::{fiala_generic, TireParams};
use crate::{Error, Result};

pub type StateVec = SVector<f64, NX>;
pub type InputVec = SVector<f64, NU>;
pub type StateMat = SMatrix<f64, NX, NX>;
pub type InputMat = SMatrix<f64, NX, NU>;

/// A stage-indexed discrete model `x[k+1] = f_k(x[k], u[k])`.
pub trait Model {
    fn step(&self, k: usize, x: &StateVec, u: &InputVec) -> Result<StateVec>;
    /// Next state and the Jacobians `(df/dx, df/du)`.
    fn linearize(&self, k: usize, x: &StateVec, u: &InputVec) -> Result<(StateVec, StateMat, InputMat)>;
}

/// Single-track vehicle with a nominal rear tire and a pluggable front port,
/// discretized with one RK4 step per stage.
pub struct DriftModel<'a> {
    pub vehicle: VehicleParams,
    pub rear: TireParams,
    pub front: &'a dyn FrontTirePort,
    pub fzf: f64,
    pub fzr: f64,
    pub dt: f64,
    /// curvature seen by each stage
    pub kappa: Vec<f64>,
}

impl DriftModel<'_> {
    fn rates<T: Real>(&self, x: &[T; NX], u: &[T; NU], kappa: f64) -> Result<[T; NX]> {
        let [r, v, beta, _, e, _] = *x;
        let [delta, fxf, fxr] = *u;
        if !(v.re() > crate::dynamics::MIN_SPEED) {
            return Err(Error::LowSpeed { v: v.re() });
        }
        if kappa * e.re() >= 1.0 - 1e-6 {
            return Err(Error::PathSingularity { kappa_e: kappa * e.re() });
        }
        let input = PortInput {
            r: r.re(),
            v: v.re(),
            beta: beta.re(),
            delta: delta.re(),
            fxf: fxf.re(),
            fzf: self.fzf,
        };
        let fyf = if T::HAS_PARTIALS {
            let port = self.front.evaluate(&input);
            T::lift(port.fyf, &port.partials, &[r, v, beta, delta, fxf])
        } else {
            T::cst(self.front.force(&input))
        };
        let (_, alpha_r) = slip_angles_generic(r, v, beta, delta, &self.vehicle);
        let fyr = fiala_generic(alpha_r, fxr, self.fzr, self.rear.cornering_stiffness, self.rear.mu);
        let d = rates_generic(x, u, fyf, fyr, kappa, &self.vehicle);
        if d.iter().any(|v| !v.re().is_finite()) {
            return Err(Error::NonFinite("predicted dynamics"));
        }
        Ok(d)
    }
}

impl Model for DriftModel<'_> {
    fn step(&self, k: usize, x: &StateVec, u: &InputVec) -> Result<StateVec> {
        let kappa = self.kappa[k];
        let u: [f64; NU] = (*u).into();
        let next = rk4(&(*x).into(), self.dt, |xs| self.rates(xs, &u, kappa))?;
        Ok(StateVec::from(next))
    }

    fn linearize(&self, k: usize, x: &StateVec, u: &InputVec) -> Result<(StateVec, StateMat, InputMat)> {
        type D = Dual<{ NX + NU }>;
        let kappa = self.kappa[k];
        let xd: [D; NX] = std::array::from_fn(|i| D::var(x[i], i));
        let ud: [D; NU] = std::array::from_fn(|i| D::var(u[i], NX + i));
        let next = rk4(&xd, self.dt, |xs| self.rates(xs, &ud, kappa))?;
        let mut a = StateMat::zeros();
        let mut b = InputMat::zeros();
        let mut xn = StateVec::zeros();
        for i in 0..NX {
            xn[i] = next[i].re;
            for j in 0..NX {
                a[(i, j)] = next[i].eps[j];
            }
            for j in 0..NU {
                b[(i, j)] = next[i].eps[NX + j];
            }
        }
        Ok((xn, a, b))
    }
}

/// Time-invariant linear model, used to check the solver against LQR.
pub struct LinearModel {
    pub a: StateMat,
    pub b: InputMat,
}

impl Model for LinearModel {
    fn step(&self, _k: usize, x: &StateVec, u: &InputVec) -> Result<StateVec> {
        Ok(self.a * x + self.b * u)
    }

    fn linearize(&self, k: usize, x: &StateVec, u: &InputVec) -> Result<(StateVec, StateMat, InputMat)> {
        Ok((self.step(k, x, u)?, self.a, self.b))
    }
}
