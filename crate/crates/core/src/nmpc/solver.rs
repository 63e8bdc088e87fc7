//! Gauss-Newton tracking solver with a backward Riccati sweep.
//!
//! The input-rate penalty is handled by augmenting the state with the
//! previous input, so the sweep runs on a 9-dimensional state.

use std::time::Instant;

use nalgebra::{SMatrix, SVector};

use super::model::{InputVec, Model, StateVec};
use crate::dynamics::{NU, NX};
use crate::{Error, Result};

const NZ: usize = NX + NU;
type ZVec = SVector<f64, NZ>;
type ZMat = SMatrix<f64, NZ, NZ>;
type UMat = SMatrix<f64, NU, NU>;
type UZMat = SMatrix<f64, NU, NZ>;

/// Diagonal quadratic tracking cost.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackingCost {
    pub q: [f64; NX],
    pub r: [f64; NU],
    /// input-rate weights
    pub s: [f64; NU],
    pub terminal_scale: f64,
}

/// One horizon worth of targets and limits.
#[derive(Debug, Clone, PartialEq)]
pub struct Problem {
    pub x0: StateVec,
    /// input applied just before this solve
    pub u_prev: InputVec,
    /// state targets for stages `0..n`
    pub x_ref: Vec<StateVec>,
    /// input targets for stages `0..n-1`
    pub u_ref: Vec<InputVec>,
    pub u_min: InputVec,
    pub u_max: InputVec,
}

impl Problem {
    pub fn horizon(&self) -> usize {
        self.x_ref.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub max_iterations: usize,
    /// stop when the accepted cost decrease falls below `tolerance * (1 + cost)`
    pub tolerance: f64,
    pub max_line_search: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_iterations: 5,
            tolerance: 1e-6,
            max_line_search: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverResult {
    pub controls: Vec<InputVec>,
    pub states: Vec<StateVec>,
    pub cost: f64,
    /// cost of every accepted iterate, starting with the initial guess
    pub cost_history: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub solve_time: f64,
}

fn clamp(u: &InputVec, lo: &InputVec, hi: &InputVec) -> InputVec {
    InputVec::from_fn(|i, _| u[i].clamp(lo[i], hi[i]))
}

pub fn trajectory_cost(cost: &TrackingCost, p: &Problem, xs: &[StateVec], us: &[InputVec]) -> f64 {
    let n = p.horizon();
    let mut j = 0.0;
    let mut prev = p.u_prev;
    for k in 0..n - 1 {
        let dx = xs[k] - p.x_ref[k];
        let du = us[k] - p.u_ref[k];
        let dr = us[k] - prev;
        for i in 0..NX {
            j += cost.q[i] * dx[i] * dx[i];
        }
        for i in 0..NU {
            j += cost.r[i] * du[i] * du[i] + cost.s[i] * dr[i] * dr[i];
        }
        prev = us[k];
    }
    let dx = xs[n - 1] - p.x_ref[n - 1];
    for i in 0..NX {
        j += cost.terminal_scale * cost.q[i] * dx[i] * dx[i];
    }
    j
}

fn rollout(model: &dyn Model, p: &Problem, us: &[InputVec]) -> Result<Vec<StateVec>> {
    let mut xs = Vec::with_capacity(p.horizon());
    xs.push(p.x0);
    for (k, u) in us.iter().enumerate() {
        let next = model.step(k, &xs[k], u)?;
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("rollout"));
        }
        xs.push(next);
    }
    Ok(xs)
}

struct Gains {
    k: Vec<UZMat>,
    d: Vec<InputVec>,
}

fn backward_pass(
    model: &dyn Model,
    cost: &TrackingCost,
    p: &Problem,
    xs: &[StateVec],
    us: &[InputVec],
) -> Result<Gains> {
    let n = p.horizon();
    let mut v_mat = ZMat::zeros();
    let mut v_vec = ZVec::zeros();
    let dx_n = xs[n - 1] - p.x_ref[n - 1];
    for i in 0..NX {
        v_mat[(i, i)] = 2.0 * cost.terminal_scale * cost.q[i];
        v_vec[i] = 2.0 * cost.terminal_scale * cost.q[i] * dx_n[i];
    }
    let mut gains_k = vec![UZMat::zeros(); n - 1];
    let mut gains_d = vec![InputVec::zeros(); n - 1];
    for k in (0..n - 1).rev() {
        let (_, a, b) = model.linearize(k, &xs[k], &us[k])?;
        let u_prev = if k == 0 { p.u_prev } else { us[k - 1] };
        let dx = xs[k] - p.x_ref[k];
        let du = us[k] - p.u_ref[k];
        let dr = us[k] - u_prev;

        let mut az = ZMat::zeros();
        az.fixed_view_mut::<NX, NX>(0, 0).copy_from(&a);
        let mut bz = SMatrix::<f64, NZ, NU>::zeros();
        bz.fixed_view_mut::<NX, NU>(0, 0).copy_from(&b);
        for i in 0..NU {
            bz[(NX + i, i)] = 1.0;
        }

        let mut lz = ZVec::zeros();
        let mut lzz = ZMat::zeros();
        let mut lu = InputVec::zeros();
        let mut luu = UMat::zeros();
        let mut luz = UZMat::zeros();
        for i in 0..NX {
            lz[i] = 2.0 * cost.q[i] * dx[i];
            lzz[(i, i)] = 2.0 * cost.q[i];
        }
        for i in 0..NU {
            lz[NX + i] = -2.0 * cost.s[i] * dr[i];
            lzz[(NX + i, NX + i)] = 2.0 * cost.s[i];
            lu[i] = 2.0 * cost.r[i] * du[i] + 2.0 * cost.s[i] * dr[i];
            luu[(i, i)] = 2.0 * (cost.r[i] + cost.s[i]);
            luz[(i, NX + i)] = -2.0 * cost.s[i];
        }

        let vb = v_mat * bz;
        let qz = lz + az.transpose() * v_vec;
        let qu = lu + bz.transpose() * v_vec;
        let qzz = lzz + az.transpose() * v_mat * az;
        let quu = luu + bz.transpose() * vb;
        let quz = luz + vb.transpose() * az;

        let mut reg = 0.0;
        let chol = loop {
            let m = quu + UMat::identity() * reg;
            if let Some(c) = m.cholesky() {
                break c;
            }
            reg = if reg == 0.0 { 1e-9 * quu.diagonal().amax().max(1e-12) } else { reg * 10.0 };
            if reg > 1e12 {
                return Err(Error::NonFinite("Riccati sweep: input Hessian not positive definite"));
            }
        };
        let kk = -chol.solve(&quz);
        let dd = -chol.solve(&qu);
        v_mat = qzz + kk.transpose() * quu * kk + kk.transpose() * quz + quz.transpose() * kk;
        v_mat = 0.5 * (v_mat + v_mat.transpose());
        v_vec = qz + kk.transpose() * quu * dd + kk.transpose() * qu + quz.transpose() * dd;
        gains_k[k] = kk;
        gains_d[k] = dd;
    }
    Ok(Gains { k: gains_k, d: gains_d })
}

/// Minimizes the tracking cost from `initial` controls.
pub fn solve(
    model: &dyn Model,
    cost: &TrackingCost,
    p: &Problem,
    initial: &[InputVec],
    opts: &SolverOptions,
) -> Result<SolverResult> {
    let start = Instant::now();
    let n = p.horizon();
    if n < 2 || initial.len() != n - 1 || p.u_ref.len() != n - 1 {
        return Err(Error::Config(format!(
            "horizon {n} with {} initial and {} reference inputs",
            initial.len(),
            p.u_ref.len()
        )));
    }
    let mut us: Vec<InputVec> = initial.iter().map(|u| clamp(u, &p.u_min, &p.u_max)).collect();
    let mut xs = rollout(model, p, &us)?;
    let mut j = trajectory_cost(cost, p, &xs, &us);
    let mut history = vec![j];
    let mut iterations = 0;
    let mut converged = false;

    while iterations < opts.max_iterations {
        iterations += 1;
        let gains = backward_pass(model, cost, p, &xs, &us)?;
        let mut accepted = None;
        let mut alpha = 1.0;
        for _ in 0..opts.max_line_search {
            let mut new_us = Vec::with_capacity(n - 1);
            let mut new_xs = Vec::with_capacity(n);
            new_xs.push(p.x0);
            let mut ok = true;
            for k in 0..n - 1 {
                let mut dz = ZVec::zeros();
                let dxk = new_xs[k] - xs[k];
                dz.fixed_rows_mut::<NX>(0).copy_from(&dxk);
                if k > 0 {
                    let du_prev = new_us[k - 1] - us[k - 1];
                    dz.fixed_rows_mut::<NU>(NX).copy_from(&du_prev);
                }
                let u = clamp(&(us[k] + gains.d[k] * alpha + gains.k[k] * dz), &p.u_min, &p.u_max);
                match model.step(k, &new_xs[k], &u) {
                    Ok(x) if x.iter().all(|v| v.is_finite()) => new_xs.push(x),
                    _ => {
                        ok = false;
                        break;
                    }
                }
                new_us.push(u);
            }
            if ok {
                let new_j = trajectory_cost(cost, p, &new_xs, &new_us);
                if new_j < j {
                    accepted = Some((new_xs, new_us, new_j));
                    break;
                }
            }
            alpha *= 0.5;
        }
        match accepted {
            Some((nx, nu, nj)) => {
                let decrease = j - nj;
                xs = nx;
                us = nu;
                j = nj;
                history.push(j);
                if decrease < opts.tolerance * (1.0 + j) {
                    converged = true;
                    break;
                }
            }
            None => {
                // no descent direction left: at a (local) minimum
                converged = true;
                break;
            }
        }
    }
    Ok(SolverResult {
        controls: us,
        states: xs,
        cost: j,
        cost_history: history,
        iterations,
        converged,
        solve_time: start.elapsed().as_secs_f64(),
    })
}
