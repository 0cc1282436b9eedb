//! Maximum-principle machinery for the single-class (regular network) system.
//!
//! With `theta = 1 - i - r` the Hamiltonian is
//!
//! ```text
//! H = -c u (beta + eps1) i r - c' v (alpha + eps2) i
//!     - p1 [(beta + u eps1) i r + (alpha + v eps2) i + gamma i theta + delta i]
//!     + p2 [(beta + u eps1) i r + (alpha + v eps2) i]
//! ```
//!
//! and the co-states run backward from `p1(T) = 0, p2(T) = 1` along
//!
//! ```text
//! dp1/dt = [c beta - (p2 - p1 - c) eps1] r u + [c' alpha - (p2 - p1 - c') eps2] v
//!          + (p1 - p2)(beta r + alpha) + p1 (gamma (1 - 2i - r) + delta)
//! dp2/dt = [c beta - (p2 - p1 - c) eps1] u i + (p1 - p2) beta i - p1 gamma i
//! ```
//!
//! The switching functions `phi = (p2 - p1 - c) eps1 - c beta` and
//! `psi = (p2 - p1 - c') eps2 - c' alpha` are the coefficients of `u i r` and
//! `v i` in `H`; maximizing `H` turns a control on where its switching
//! function is positive.

use std::fmt;
use std::io::Write;

use crate::csvfmt::{row, sig12};
use crate::error::{Error, Result};
use crate::integrate::{integrate, profit, substeps, Rk4, Trajectory};
use crate::model::{
    grid_len, ClassNetwork, ClassState, ControlSchedule, Dynamics, ModelParams, StateVector,
};

/// Co-states, switching functions and Hamiltonian on the state grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CostateTrajectory {
    pub times: Vec<f64>,
    pub p1: Vec<f64>,
    pub p2: Vec<f64>,
    pub phi: Vec<f64>,
    pub psi: Vec<f64>,
    /// `(p2 - p1) i`.
    pub zeta: Vec<f64>,
    /// Hamiltonian under the applied controls.
    pub hamiltonian: Vec<f64>,
    i: Vec<f64>,
    r: Vec<f64>,
}

impl CostateTrajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// CSV with columns `t,p1,p2,phi,psi,zeta,H`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        out.write_all(row(["t", "p1", "p2", "phi", "psi", "zeta", "H"].map(String::from)).as_bytes())?;
        for m in 0..self.len() {
            let fields = [
                self.times[m],
                self.p1[m],
                self.p2[m],
                self.phi[m],
                self.psi[m],
                self.zeta[m],
                self.hamiltonian[m],
            ]
            .map(sig12);
            out.write_all(row(fields).as_bytes())?;
        }
        Ok(())
    }
}

/// The Hamiltonian at one point; `theta` is taken as `1 - i - r`.
pub fn hamiltonian(x: ClassState, p1: f64, p2: f64, u: f64, v: f64, params: &ModelParams) -> f64 {
    let ModelParams {
        alpha,
        beta,
        gamma,
        delta,
        eps1,
        eps2,
        cost_referral: c,
        cost_direct: cd,
        ..
    } = *params;
    let (i, r) = (x.i, x.r);
    let theta = 1.0 - i - r;
    let to_seller = (beta + u * eps1) * i * r + (alpha + v * eps2) * i;
    -c * u * (beta + eps1) * i * r - cd * v * (alpha + eps2) * i
        - p1 * (to_seller + gamma * i * theta + delta * i)
        + p2 * to_seller
}

/// Referral switching function.
pub fn phi(p1: f64, p2: f64, params: &ModelParams) -> f64 {
    (p2 - p1 - params.cost_referral) * params.eps1 - params.cost_referral * params.beta
}

/// Direct-incentive switching function.
pub fn psi(p1: f64, p2: f64, params: &ModelParams) -> f64 {
    (p2 - p1 - params.cost_direct) * params.eps2 - params.cost_direct * params.alpha
}

/// `(dp1/dt, dp2/dt)`.
fn costate_rate(i: f64, r: f64, p1: f64, p2: f64, u: f64, v: f64, q: &ModelParams) -> (f64, f64) {
    let c = q.cost_referral;
    let cd = q.cost_direct;
    let referral = c * q.beta - (p2 - p1 - c) * q.eps1;
    let direct = cd * q.alpha - (p2 - p1 - cd) * q.eps2;
    let dp1 = referral * r * u
        + direct * v
        + (p1 - p2) * (q.beta * r + q.alpha)
        + p1 * (q.gamma * (1.0 - 2.0 * i - r) + q.delta);
    let dp2 = referral * u * i + (p1 - p2) * q.beta * i - p1 * q.gamma * i;
    (dp1, dp2)
}

/// `(di/dt, dr/dt)` of the single-class system.
fn state_rate(i: f64, r: f64, u: f64, v: f64, q: &ModelParams) -> (f64, f64) {
    let theta = 1.0 - i - r;
    let to_seller = (q.beta + u * q.eps1) * i * r + (q.alpha + v * q.eps2) * i;
    (-to_seller - q.gamma * i * theta - q.delta * i, to_seller)
}

/// Integrates the co-states backward along `traj` with RK4 on the same grid.
///
/// States between grid points come from cubic Hermite interpolation using
/// the drift at both ends, which keeps the sweep fourth order.
pub fn costate_sweep(
    traj: &Trajectory,
    sched: &ControlSchedule,
    params: &ModelParams,
) -> Result<CostateTrajectory> {
    if traj.classes() != 1 || sched.classes() != 1 {
        return Err(Error::DimensionMismatch {
            what: "classes for the maximum-principle sweep",
            expected: 1,
            found: traj.classes().max(sched.classes()),
        });
    }
    let per = substeps(sched.step, traj.dt())?;
    let steps = traj.len() - 1;
    if sched.intervals() * per != steps {
        return Err(Error::StepMismatch(format!(
            "trajectory has {steps} steps, schedule covers {}",
            sched.intervals() * per
        )));
    }
    let h = traj.dt();
    let n = traj.len();
    let i: Vec<f64> = (0..n).map(|m| traj.class_state(m, 0).i).collect();
    let r: Vec<f64> = (0..n).map(|m| traj.class_state(m, 0).r).collect();

    let mut p1 = vec![0.0; n];
    let mut p2 = vec![0.0; n];
    p1[n - 1] = 0.0;
    p2[n - 1] = 1.0;
    for m in (0..steps).rev() {
        let interval = m / per;
        let u = sched.u[0][interval];
        let v = sched.v[0][interval];
        (p1[m], p2[m]) = costate_step(
            (i[m], r[m]),
            (i[m + 1], r[m + 1]),
            (p1[m + 1], p2[m + 1]),
            u,
            v,
            h,
            params,
        );
    }
    let controls: Vec<(f64, f64)> = (0..n)
        .map(|m| {
            let (u, v) = traj.controls(m);
            (u[0], v[0])
        })
        .collect();
    Ok(assemble(traj.times().to_vec(), i, r, p1, p2, &controls, params))
}

/// One backward RK4 step of length `h` from the co-state at the right end,
/// with the state interpolated by a cubic Hermite midpoint.
fn costate_step(
    left: (f64, f64),
    right: (f64, f64),
    p_right: (f64, f64),
    u: f64,
    v: f64,
    h: f64,
    params: &ModelParams,
) -> (f64, f64) {
    let (di0, dr0) = state_rate(left.0, left.1, u, v, params);
    let (di1, dr1) = state_rate(right.0, right.1, u, v, params);
    let i_mid = 0.5 * (left.0 + right.0) + h / 8.0 * (di0 - di1);
    let r_mid = 0.5 * (left.1 + right.1) + h / 8.0 * (dr0 - dr1);
    let g = |ii: f64, rr: f64, a: f64, b: f64| costate_rate(ii, rr, a, b, u, v, params);
    let (a, b) = p_right;
    let k1 = g(right.0, right.1, a, b);
    let k2 = g(i_mid, r_mid, a - 0.5 * h * k1.0, b - 0.5 * h * k1.1);
    let k3 = g(i_mid, r_mid, a - 0.5 * h * k2.0, b - 0.5 * h * k2.1);
    let k4 = g(left.0, left.1, a - h * k3.0, b - h * k3.1);
    (
        a - h / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0),
        b - h / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1),
    )
}

fn assemble(
    times: Vec<f64>,
    i: Vec<f64>,
    r: Vec<f64>,
    p1: Vec<f64>,
    p2: Vec<f64>,
    controls: &[(f64, f64)],
    params: &ModelParams,
) -> CostateTrajectory {
    let n = times.len();
    let mut phi_v = Vec::with_capacity(n);
    let mut psi_v = Vec::with_capacity(n);
    let mut zeta = Vec::with_capacity(n);
    let mut ham = Vec::with_capacity(n);
    for m in 0..n {
        let (u, v) = controls[m];
        let x = ClassState::new(i[m], r[m], 1.0 - i[m] - r[m]);
        phi_v.push(phi(p1[m], p2[m], params));
        psi_v.push(psi(p1[m], p2[m], params));
        zeta.push((p2[m] - p1[m]) * i[m]);
        ham.push(hamiltonian(x, p1[m], p2[m], u, v, params));
    }
    CostateTrajectory {
        times,
        p1,
        p2,
        phi: phi_v,
        psi: psi_v,
        zeta,
        hamiltonian: ham,
        i,
        r,
    }
}

/// Bang-bang controls on the control grid from the switching functions.
///
/// Each control interval is decided by the sign of `int phi i r dt` (for
/// `u`) or `int psi i dt` (for `v`) over the interval, i.e. the sign of the
/// Hamiltonian's control coefficient integrated over the hold. Where the
/// integral is exactly zero the value of the previous interval is kept;
/// the first interval then falls back to `previous`, or 0.
pub fn extract_controls(
    cs: &CostateTrajectory,
    control_dt: f64,
    previous: Option<&ControlSchedule>,
) -> Result<ControlSchedule> {
    let steps = cs.len() - 1;
    let h = cs.times[1] - cs.times[0];
    let per = substeps(control_dt, h)?;
    if !steps.is_multiple_of(per) {
        return Err(Error::StepMismatch(format!(
            "{steps} state steps do not fill whole control intervals of {per}"
        )));
    }
    let intervals = steps / per;
    let mut u = Vec::with_capacity(intervals);
    let mut v = Vec::with_capacity(intervals);
    for n in 0..intervals {
        let mut su = 0.0;
        let mut sv = 0.0;
        for m in n * per..(n + 1) * per {
            let a = cs.phi[m] * cs.i[m] * cs.r[m];
            let b = cs.phi[m + 1] * cs.i[m + 1] * cs.r[m + 1];
            su += 0.5 * h * (a + b);
            let a = cs.psi[m] * cs.i[m];
            let b = cs.psi[m + 1] * cs.i[m + 1];
            sv += 0.5 * h * (a + b);
        }
        let held = |sig: &Vec<f64>, prev_sched: Option<f64>| -> f64 {
            sig.last().copied().or(prev_sched).unwrap_or(0.0)
        };
        let pu = previous.map(|s| s.u[0][n]);
        let pv = previous.map(|s| s.v[0][n]);
        let nu = if su > 0.0 {
            1.0
        } else if su < 0.0 {
            0.0
        } else {
            held(&u, pu)
        };
        let nv = if sv > 0.0 {
            1.0
        } else if sv < 0.0 {
            0.0
        } else {
            held(&v, pv)
        };
        u.push(nu);
        v.push(nv);
    }
    Ok(ControlSchedule {
        step: control_dt,
        u: vec![u],
        v: vec![v],
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FbsOptions {
    pub dt: f64,
    pub control_dt: f64,
    pub max_iters: usize,
    /// Weight of the newly extracted controls in the relaxed blend.
    pub damping: f64,
}

impl Default for FbsOptions {
    fn default() -> Self {
        Self {
            dt: crate::integrate::DEFAULT_DT,
            control_dt: crate::integrate::DEFAULT_CONTROL_DT,
            max_iters: 200,
            damping: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FbsStatus {
    Converged,
    MaxIterations,
}

#[derive(Debug, Clone)]
pub struct FbsResult {
    pub schedule: ControlSchedule,
    pub trajectory: Trajectory,
    pub costate: CostateTrajectory,
    pub profit: f64,
    pub iterations: usize,
    pub status: FbsStatus,
}

/// Profit change below which two identical iterates count as converged.
const FBS_PROFIT_TOL: f64 = 1e-8;

/// Forward-backward sweep for the single-class problem.
///
/// Each iteration integrates the state under the current binary controls,
/// sweeps the co-states back, extracts the bang-bang controls they imply
/// and blends them into a relaxed memory `w <- (1 - d) w + d new`. The
/// next binary controls are `w` thresholded at 0.5, ties going to the new
/// controls. Iteration stops once the extracted controls reproduce the
/// current ones. The best-profit iterate is returned either way.
pub fn fbs_solve(
    x0: &StateVector,
    net: &ClassNetwork,
    params: &ModelParams,
    opts: &FbsOptions,
) -> Result<FbsResult> {
    if net.len() != 1 {
        return Err(Error::DimensionMismatch {
            what: "classes for the maximum-principle sweep",
            expected: 1,
            found: net.len(),
        });
    }
    if !(0.0..=1.0).contains(&opts.damping) || opts.damping == 0.0 {
        return Err(Error::Config(format!(
            "damping {} must lie in (0, 1]",
            opts.damping
        )));
    }
    let mut sched = ControlSchedule::off(1, params.horizon, opts.control_dt)?;
    let mut relaxed = sched.clone();
    let mut best: Option<(f64, ControlSchedule, Trajectory, CostateTrajectory)> = None;
    let mut last_profit = f64::NAN;
    let mut status = FbsStatus::MaxIterations;
    let mut iterations = 0;
    for iter in 1..=opts.max_iters.max(1) {
        iterations = iter;
        let traj = integrate(x0, &sched, net, params, opts.dt)?;
        let value = profit(&traj, net);
        let cs = costate_sweep(&traj, &sched, params)?;
        let mut next = extract_controls(&cs, opts.control_dt, Some(&sched))?;
        if !params.referral_enabled() {
            next.u[0].iter_mut().for_each(|x| *x = 0.0);
        }
        if !params.direct_enabled() {
            next.v[0].iter_mut().for_each(|x| *x = 0.0);
        }
        if best.as_ref().is_none_or(|b| value > b.0) {
            best = Some((value, sched.clone(), traj, cs));
        }
        let stable = next == sched;
        if stable && (value - last_profit).abs() < FBS_PROFIT_TOL {
            status = FbsStatus::Converged;
            break;
        }
        last_profit = value;
        if stable {
            continue;
        }
        let blend = |w: &mut Vec<f64>, new: &[f64]| -> Vec<f64> {
            w.iter_mut()
                .zip(new)
                .map(|(wi, &ni)| {
                    *wi = (1.0 - opts.damping) * *wi + opts.damping * ni;
                    if *wi > 0.5 {
                        1.0
                    } else if *wi < 0.5 {
                        0.0
                    } else {
                        ni
                    }
                })
                .collect()
        };
        sched = ControlSchedule {
            step: opts.control_dt,
            u: vec![blend(&mut relaxed.u[0], &next.u[0])],
            v: vec![blend(&mut relaxed.v[0], &next.v[0])],
        };
    }
    let (profit, schedule, trajectory, costate) = best.expect("at least one iteration");
    Ok(FbsResult {
        schedule,
        trajectory,
        costate,
        profit,
        iterations,
        status,
    })
}

/// A piecewise-constant 0/1 control given by its value at `t = 0` and the
/// times at which it toggles.
#[derive(Debug, Clone, PartialEq)]
pub struct SwitchPattern {
    pub initially_on: bool,
    pub toggles: Vec<f64>,
}

impl SwitchPattern {
    pub fn off() -> Self {
        Self {
            initially_on: false,
            toggles: Vec::new(),
        }
    }

    /// Value on an open neighbourhood of `t`; `t` should not be a toggle.
    pub fn value_at(&self, t: f64) -> f64 {
        let flips = self.toggles.iter().filter(|&&s| s < t).count();
        if self.initially_on ^ (flips % 2 == 1) {
            1.0
        } else {
            0.0
        }
    }

    /// Maximal on-intervals `(start, end)` over `[0, horizon]`.
    pub fn on_intervals(&self, horizon: f64) -> Vec<(f64, f64)> {
        let mut out = Vec::new();
        let mut on = self.initially_on;
        let mut start = 0.0;
        for &t in &self.toggles {
            if on {
                out.push((start, t));
            } else {
                start = t;
            }
            on = !on;
        }
        if on {
            out.push((start, horizon));
        }
        out
    }

    /// Toggles at the zero crossings of a switching function sampled on
    /// `times`, located by linear interpolation. On where the signal is
    /// positive; exact zeros continue the previous sign.
    pub fn from_signal(times: &[f64], signal: &[f64]) -> Self {
        let first = signal.iter().copied().find(|&x| x != 0.0).unwrap_or(-1.0);
        let mut toggles = Vec::new();
        let mut last = (0usize, first);
        for (m, &x) in signal.iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            if x.signum() != last.1.signum() {
                let (a, xa) = last;
                // crossing lies between the last nonzero sample and this one
                let (ta, tb) = (times[a], times[m]);
                let frac = if m == a + 1 { xa / (xa - x) } else { 0.5 };
                toggles.push(ta + frac * (tb - ta));
            }
            last = (m, x);
        }
        Self {
            initially_on: first > 0.0,
            toggles,
        }
    }

    fn max_shift(&self, other: &Self) -> f64 {
        if self.initially_on != other.initially_on || self.toggles.len() != other.toggles.len() {
            return f64::INFINITY;
        }
        self.toggles
            .iter()
            .zip(&other.toggles)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// An extremal whose switches sit at the zeros of the switching functions
/// rather than on a control grid.
#[derive(Debug, Clone)]
pub struct Extremal {
    pub referral: SwitchPattern,
    pub direct: SwitchPattern,
    pub trajectory: Trajectory,
    pub costate: CostateTrajectory,
    pub profit: f64,
    pub iterations: usize,
    /// Largest switch-time change in the last iteration.
    pub shift: f64,
    pub converged: bool,
}

/// Switch times below this change between iterations count as settled.
const SWITCH_TOL: f64 = 1e-10;

/// One sub-step of a state step, split at switching times.
struct Piece {
    len: f64,
    u: f64,
    v: f64,
    start: (f64, f64),
}

/// Integrates state and spending on the uniform grid `dt`, splitting every
/// step that contains a switch. Returns the trajectory and the pieces of
/// each step.
fn integrate_switched(
    x0: &StateVector,
    net: &ClassNetwork,
    params: &ModelParams,
    dt: f64,
    u: &SwitchPattern,
    v: &SwitchPattern,
) -> Result<(Trajectory, Vec<Vec<Piece>>)> {
    let steps = grid_len(params.horizon, dt)?;
    let f = Dynamics::new(net, params);
    let mut rk = Rk4::new(f.dim());
    let mut x = crate::integrate::initial_flat(x0);
    let mut times = vec![0.0];
    let mut states = vec![x.clone()];
    let mut us = Vec::with_capacity(steps + 1);
    let mut vs = Vec::with_capacity(steps + 1);
    let mut pieces = Vec::with_capacity(steps);
    for m in 0..steps {
        let (t0, t1) = (m as f64 * dt, (m + 1) as f64 * dt);
        let mut cuts: Vec<f64> = u
            .toggles
            .iter()
            .chain(&v.toggles)
            .copied()
            .filter(|&t| t > t0 && t < t1)
            .collect();
        cuts.sort_by(f64::total_cmp);
        cuts.push(t1);
        let mut step_pieces = Vec::with_capacity(cuts.len());
        let mut a = t0;
        for b in cuts {
            if b - a <= 0.0 {
                continue;
            }
            let mid = 0.5 * (a + b);
            let piece = Piece {
                len: b - a,
                u: u.value_at(mid),
                v: v.value_at(mid),
                start: (x[0], x[1]),
            };
            rk.step(&f, &mut x, &[piece.u], &[piece.v], piece.len);
            step_pieces.push(piece);
            a = b;
        }
        us.push(vec![step_pieces[0].u]);
        vs.push(vec![step_pieces[0].v]);
        pieces.push(step_pieces);
        times.push(t1);
        states.push(x.clone());
    }
    us.push(vec![pieces.last().and_then(|p| p.last()).map_or(0.0, |p| p.u)]);
    vs.push(vec![pieces.last().and_then(|p| p.last()).map_or(0.0, |p| p.v)]);
    Ok((Trajectory::from_parts(dt, 1, times, states, us, vs), pieces))
}

fn sweep_switched(
    traj: &Trajectory,
    pieces: &[Vec<Piece>],
    params: &ModelParams,
) -> CostateTrajectory {
    let n = traj.len();
    let i: Vec<f64> = (0..n).map(|m| traj.class_state(m, 0).i).collect();
    let r: Vec<f64> = (0..n).map(|m| traj.class_state(m, 0).r).collect();
    let mut p1 = vec![0.0; n];
    let mut p2 = vec![0.0; n];
    p2[n - 1] = 1.0;
    for m in (0..n - 1).rev() {
        let mut p = (p1[m + 1], p2[m + 1]);
        let mut right = (i[m + 1], r[m + 1]);
        for piece in pieces[m].iter().rev() {
            p = costate_step(piece.start, right, p, piece.u, piece.v, piece.len, params);
            right = piece.start;
        }
        (p1[m], p2[m]) = p;
    }
    let controls: Vec<(f64, f64)> = (0..n)
        .map(|m| {
            let (u, v) = traj.controls(m);
            (u[0], v[0])
        })
        .collect();
    assemble(traj.times().to_vec(), i, r, p1, p2, &controls, params)
}

fn patterns(cs: &CostateTrajectory, params: &ModelParams) -> (SwitchPattern, SwitchPattern) {
    let u = if params.referral_enabled() {
        SwitchPattern::from_signal(&cs.times, &cs.phi)
    } else {
        SwitchPattern::off()
    };
    let v = if params.direct_enabled() {
        SwitchPattern::from_signal(&cs.times, &cs.psi)
    } else {
        SwitchPattern::off()
    };
    (u, v)
}

/// Moves the switches of a grid extremal onto the zeros of the switching
/// functions. Starting from `start`, each iteration reads the switch times
/// off the co-states, integrates the state with those exact switches on
/// the uniform grid `dt`, and sweeps the co-states back. Stops once no
/// switch time moves by more than 1e-10.
pub fn refine_extremal(
    x0: &StateVector,
    net: &ClassNetwork,
    params: &ModelParams,
    start: &CostateTrajectory,
    dt: f64,
    max_iters: usize,
) -> Result<Extremal> {
    if net.len() != 1 {
        return Err(Error::DimensionMismatch {
            what: "classes for the maximum-principle sweep",
            expected: 1,
            found: net.len(),
        });
    }
    params.validate()?;
    x0.validate()?;
    let (mut u, mut v) = patterns(start, params);
    let mut iterations = 0;
    loop {
        iterations += 1;
        let (traj, pieces) = integrate_switched(x0, net, params, dt, &u, &v)?;
        let cs = sweep_switched(&traj, &pieces, params);
        let (nu, nv) = patterns(&cs, params);
        let shift = nu.max_shift(&u).max(nv.max_shift(&v));
        let converged = shift <= SWITCH_TOL;
        if converged || iterations >= max_iters.max(1) {
            let value = profit(&traj, net);
            return Ok(Extremal {
                referral: u,
                direct: v,
                trajectory: traj,
                costate: cs,
                profit: value,
                iterations,
                shift,
                converged,
            });
        }
        (u, v) = (nu, nv);
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LemmaTolerances {
    /// Bound on `max |H - mean H| / mean H`.
    pub hamiltonian_constancy: f64,
    /// Slack for `p1, p2 > 0` and `p2 > p1`.
    pub positivity: f64,
    /// Slack for `zeta[m+1] < zeta[m]`.
    pub zeta_decrease: f64,
    /// Allowed sign changes of each switching function.
    pub max_sign_changes: usize,
}

impl Default for LemmaTolerances {
    fn default() -> Self {
        Self {
            hamiltonian_constancy: 1e-3,
            positivity: 1e-9,
            zeta_decrease: 1e-9,
            max_sign_changes: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub time: f64,
    pub magnitude: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LemmaCheck {
    pub name: &'static str,
    pub passed: bool,
    /// Worst value of the checked quantity.
    pub worst: f64,
    pub violations: Vec<Violation>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LemmaReport {
    pub checks: Vec<LemmaCheck>,
}

impl LemmaReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&LemmaCheck> {
        self.checks.iter().find(|c| c.name == name)
    }
}

impl fmt::Display for LemmaReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(
                f,
                "{:<24} {}  worst={:.3e}  violations={}",
                c.name,
                if c.passed { "PASS" } else { "FAIL" },
                c.worst,
                c.violations.len()
            )?;
        }
        Ok(())
    }
}

/// Number of strict sign changes, ignoring exact zeros.
pub fn sign_changes(values: &[f64]) -> usize {
    let mut last = 0.0f64;
    let mut changes = 0;
    for &x in values {
        if x == 0.0 {
            continue;
        }
        if last != 0.0 && x.signum() != last.signum() {
            changes += 1;
        }
        last = x;
    }
    changes
}

fn check(name: &'static str, worst: f64, violations: Vec<Violation>) -> LemmaCheck {
    LemmaCheck {
        name,
        passed: violations.is_empty(),
        worst,
        violations,
    }
}

/// Checks the structural properties of a converged extremal. Never fails;
/// every violated property is listed with its times and magnitudes.
pub fn verify_lemmas(
    traj: &Trajectory,
    cs: &CostateTrajectory,
    tol: &LemmaTolerances,
) -> LemmaReport {
    let n = cs.len();
    let t = &cs.times;
    let mut checks = Vec::new();

    let n_aligned = traj.len() == n;
    checks.push(check(
        "grid-alignment",
        (traj.len() as f64 - n as f64).abs(),
        if n_aligned {
            vec![]
        } else {
            vec![Violation {
                time: f64::NAN,
                magnitude: traj.len() as f64 - n as f64,
            }]
        },
    ));

    let terminal = (cs.p1[n - 1] - 0.0).abs().max((cs.p2[n - 1] - 1.0).abs());
    checks.push(check(
        "terminal-costate",
        terminal,
        if terminal == 0.0 {
            vec![]
        } else {
            vec![Violation {
                time: t[n - 1],
                magnitude: terminal,
            }]
        },
    ));

    let h = &cs.hamiltonian;
    let min_h = h.iter().copied().fold(f64::INFINITY, f64::min);
    checks.push(check(
        "hamiltonian-positive",
        min_h,
        h.iter()
            .zip(t)
            .filter(|(v, _)| **v <= 0.0)
            .map(|(v, &time)| Violation {
                time,
                magnitude: *v,
            })
            .collect(),
    ));

    let mean = h.iter().sum::<f64>() / n as f64;
    let rel: Vec<f64> = h.iter().map(|v| (v - mean).abs() / mean.abs()).collect();
    let worst_rel = rel.iter().copied().fold(0.0, f64::max);
    checks.push(check(
        "hamiltonian-constant",
        worst_rel,
        rel.iter()
            .zip(t)
            .filter(|(d, _)| **d >= tol.hamiltonian_constancy)
            .map(|(d, &time)| Violation {
                time,
                magnitude: *d,
            })
            .collect(),
    ));

    let min_p = (0..n - 1)
        .map(|m| cs.p1[m].min(cs.p2[m]))
        .fold(f64::INFINITY, f64::min);
    checks.push(check(
        "costates-positive",
        min_p,
        (0..n - 1)
            .filter(|&m| cs.p1[m] <= -tol.positivity || cs.p2[m] <= -tol.positivity)
            .map(|m| Violation {
                time: t[m],
                magnitude: cs.p1[m].min(cs.p2[m]),
            })
            .collect(),
    ));

    let gap: Vec<f64> = (0..n).map(|m| cs.p2[m] - cs.p1[m]).collect();
    checks.push(check(
        "p2-exceeds-p1",
        gap.iter().copied().fold(f64::INFINITY, f64::min),
        gap.iter()
            .zip(t)
            .filter(|(g, _)| **g <= -tol.positivity)
            .map(|(g, &time)| Violation {
                time,
                magnitude: *g,
            })
            .collect(),
    ));

    let rises: Vec<(f64, f64)> = cs
        .zeta
        .windows(2)
        .zip(t.iter().skip(1))
        .map(|(w, &time)| (w[1] - w[0], time))
        .collect();
    checks.push(check(
        "zeta-decreasing",
        rises.iter().map(|r| r.0).fold(f64::NEG_INFINITY, f64::max),
        rises
            .iter()
            .filter(|(d, _)| *d >= tol.zeta_decrease)
            .map(|&(d, time)| Violation {
                time,
                magnitude: d,
            })
            .collect(),
    ));

    for (name, sig) in [("phi-sign-changes", &cs.phi), ("psi-sign-changes", &cs.psi)] {
        let changes = sign_changes(sig);
        checks.push(check(
            name,
            changes as f64,
            if changes > tol.max_sign_changes {
                vec![Violation {
                    time: f64::NAN,
                    magnitude: changes as f64,
                }]
            } else {
                vec![]
            },
        ));
    }

    LemmaReport { checks }
}
