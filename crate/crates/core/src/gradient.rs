//! Exact gradient of the discretized profit with respect to every control
//! value, by reverse-mode differentiation through the RK4 steps.
//!
//! For one step `y' = y + h/6 (k1 + 2 k2 + 2 k3 + k4)` with stages at
//! `z1 = y`, `z2 = y + h/2 k1`, `z3 = y + h/2 k2`, `z4 = y + h k3`, the
//! adjoint `a'` of `y'` is pulled back as
//!
//! ```text
//! b4 = h/6 a'            a  = a' + J(z4)^T b4 + J(z3)^T b3 + J(z2)^T b2 + J(z1)^T b1
//! b3 = h/3 a' + h   J(z4)^T b4
//! b2 = h/3 a' + h/2 J(z3)^T b3
//! b1 = h/6 a' + h/2 J(z2)^T b2
//! ```
//!
//! and the control gradient of the step is the sum of `df/du^T b_s` over the
//! four stages. The terminal adjoint is the gradient of
//! `sum_k P(k) r_k(T) - C_ref(T) - C_dir(T)`.

use crate::error::Result;
use crate::integrate::{column, initial_flat, plan, profit_of_flat, Plan};
use crate::model::{ClassNetwork, ControlSchedule, Dynamics, ModelParams, StateVector};

/// Profit, its control gradient, and the adjoint at every state grid point.
#[derive(Debug, Clone)]
pub struct Gradient {
    pub profit: f64,
    /// `d profit / d u[k][n]`.
    pub du: Vec<Vec<f64>>,
    /// `d profit / d v[k][n]`.
    pub dv: Vec<Vec<f64>>,
    /// Adjoint of the augmented state at each grid point.
    pub adjoint: Vec<Vec<f64>>,
}

/// Adjoint gradient of the profit of `sched`.
pub fn profit_gradient(
    x0: &StateVector,
    sched: &ControlSchedule,
    net: &ClassNetwork,
    p: &ModelParams,
    dt: f64,
) -> Result<Gradient> {
    let plan = plan(x0, sched, net, p, dt)?;
    Ok(gradient_with_plan(&plan, &initial_flat(x0), sched, true))
}

struct Stages {
    z: [Vec<f64>; 4],
    k: [Vec<f64>; 3],
}

impl Stages {
    fn new(dim: usize) -> Self {
        Self {
            z: std::array::from_fn(|_| vec![0.0; dim]),
            k: std::array::from_fn(|_| vec![0.0; dim]),
        }
    }

    fn fill(&mut self, f: &Dynamics, y: &[f64], u: &[f64], v: &[f64], h: f64) {
        let n = y.len();
        self.z[0].copy_from_slice(y);
        f.eval(&self.z[0], u, v, &mut self.k[0]);
        for j in 0..n {
            self.z[1][j] = y[j] + 0.5 * h * self.k[0][j];
        }
        f.eval(&self.z[1], u, v, &mut self.k[1]);
        for j in 0..n {
            self.z[2][j] = y[j] + 0.5 * h * self.k[1][j];
        }
        f.eval(&self.z[2], u, v, &mut self.k[2]);
        for j in 0..n {
            self.z[3][j] = y[j] + h * self.k[2][j];
        }
    }
}

pub(crate) fn gradient_with_plan(
    plan: &Plan,
    x0: &[f64],
    sched: &ControlSchedule,
    keep_adjoint: bool,
) -> Gradient {
    let f = &plan.dynamics;
    let dim = f.dim();
    let kk = f.k;
    let h = plan.dt;
    let steps = plan.intervals * plan.substeps;

    let mut states = Vec::with_capacity(steps + 1);
    let mut x = x0.to_vec();
    let mut rk = crate::integrate::Rk4::new(dim);
    states.push(x.clone());
    for m in 0..plan.intervals {
        let u = column(&sched.u, m);
        let v = column(&sched.v, m);
        for _ in 0..plan.substeps {
            rk.step(f, &mut x, &u, &v, h);
            states.push(x.clone());
        }
    }
    let profit = profit_of_flat(&x, &f.weights);

    let mut lam = vec![0.0; dim];
    for (k, w) in f.weights.iter().enumerate() {
        lam[3 * k + 1] = *w;
    }
    lam[3 * kk] = -1.0;
    lam[3 * kk + 1] = -1.0;

    let mut adjoint = if keep_adjoint {
        vec![Vec::new(); steps + 1]
    } else {
        Vec::new()
    };
    if keep_adjoint {
        adjoint[steps] = lam.clone();
    }

    let mut du = vec![vec![0.0; plan.intervals]; kk];
    let mut dv = vec![vec![0.0; plan.intervals]; kk];
    let mut stages = Stages::new(dim);
    let mut bar: [Vec<f64>; 4] = std::array::from_fn(|_| vec![0.0; dim]);
    let mut zbar = vec![0.0; dim];
    let mut gu = vec![0.0; kk];
    let mut gv = vec![0.0; kk];

    for m in (0..plan.intervals).rev() {
        let u = column(&sched.u, m);
        let v = column(&sched.v, m);
        gu.iter_mut().for_each(|g| *g = 0.0);
        gv.iter_mut().for_each(|g| *g = 0.0);
        for s in (0..plan.substeps).rev() {
            let n = m * plan.substeps + s;
            stages.fill(f, &states[n], &u, &v, h);
            for j in 0..dim {
                bar[0][j] = h / 6.0 * lam[j];
                bar[1][j] = h / 3.0 * lam[j];
                bar[2][j] = h / 3.0 * lam[j];
                bar[3][j] = h / 6.0 * lam[j];
            }
            // Stage coefficients feeding stage s from stage s-1.
            let feed = [0.5 * h, 0.5 * h, h];
            for stage in (0..4).rev() {
                zbar.iter_mut().for_each(|z| *z = 0.0);
                f.vjp(
                    &stages.z[stage],
                    &u,
                    &v,
                    &bar[stage],
                    &mut zbar,
                    &mut gu,
                    &mut gv,
                );
                for j in 0..dim {
                    lam[j] += zbar[j];
                }
                if stage > 0 {
                    let c = feed[stage - 1];
                    for j in 0..dim {
                        bar[stage - 1][j] += c * zbar[j];
                    }
                }
            }
            if keep_adjoint {
                adjoint[n] = lam.clone();
            }
        }
        for k in 0..kk {
            du[k][m] = gu[k];
            dv[k][m] = gv[k];
        }
    }

    Gradient {
        profit,
        du,
        dv,
        adjoint,
    }
}

/// Largest componentwise relative error between the adjoint gradient and
/// central finite differences, over the given `(signal, class, interval)`
/// coordinates. `signal` 0 is `u`, 1 is `v`.
#[derive(Debug, Clone)]
pub struct GradientCheck {
    pub max_rel_error: f64,
    pub worst: Option<(usize, usize, usize)>,
    pub checked: usize,
}

/// Denominator floor for the relative error. Central differences of a
/// profit near 0.4 carry about `1e-16 * 0.4 / step` of rounding noise, so
/// components below this floor are compared absolutely against it.
pub const REL_ERROR_FLOOR: f64 = 1e-8;

/// Finite-difference step for [`check_gradient`]. The profit is affine in
/// each control within a step, so truncation error stays near 1e-7
/// relative while rounding noise stays below 1e-12.
pub const FD_STEP: f64 = 1e-3;

pub fn check_gradient(
    x0: &StateVector,
    sched: &ControlSchedule,
    net: &ClassNetwork,
    p: &ModelParams,
    dt: f64,
    fd_step: f64,
    coords: &[(usize, usize, usize)],
) -> Result<GradientCheck> {
    let plan = plan(x0, sched, net, p, dt)?;
    let x0 = initial_flat(x0);
    let grad = gradient_with_plan(&plan, &x0, sched, false);
    let eval = |s: &ControlSchedule| {
        profit_of_flat(&crate::integrate::final_flat(&plan, &x0, s), &plan.dynamics.weights)
    };
    let mut worst = None;
    let mut max_rel_error = 0.0f64;
    for &(signal, k, n) in coords {
        let mut plus = sched.clone();
        let mut minus = sched.clone();
        let (pv, mv) = if signal == 0 {
            (&mut plus.u[k][n], &mut minus.u[k][n])
        } else {
            (&mut plus.v[k][n], &mut minus.v[k][n])
        };
        *pv += fd_step;
        *mv -= fd_step;
        let fd = (eval(&plus) - eval(&minus)) / (2.0 * fd_step);
        let analytic = if signal == 0 {
            grad.du[k][n]
        } else {
            grad.dv[k][n]
        };
        let rel = (analytic - fd).abs() / fd.abs().max(REL_ERROR_FLOOR);
        if rel > max_rel_error {
            max_rel_error = rel;
            worst = Some((signal, k, n));
        }
    }
    Ok(GradientCheck {
        max_rel_error,
        worst,
        checked: coords.len(),
    })
}
