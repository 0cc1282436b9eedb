//! Direct optimizers over control schedules and the strategy classifier.
//!
//! * [`optimize_switch_times`]: Nelder-Mead over per-class switching times
//!   (on-off-on for each program), then snapped to the control grid.
//! * [`nlp_solve`]: projected gradient ascent over relaxed grid controls with
//!   adjoint gradients and Armijo backtracking, then rounded.
//! * [`crosscheck`]: both of the above against the forward-backward sweep.

use std::fmt;
use std::io::Write;

use rand::Rng;
use rayon::prelude::*;

use crate::csvfmt::{row, sig12};
use crate::error::{Error, Result};
use crate::gradient::{check_gradient, gradient_with_plan, GradientCheck, FD_STEP};
use crate::integrate::{
    final_flat, initial_flat, plan, profit_of_flat, switching_profit_unchecked, Plan,
    DEFAULT_CONTROL_DT, DEFAULT_DT,
};
use crate::model::{
    ClassNetwork, ClassSwitchTimes, ControlSchedule, Dynamics, ModelParams, StateVector,
    SwitchTimes,
};
use crate::pmp::{fbs_solve, FbsOptions};
use crate::seed::{stream, DEFAULT_SEED};

pub const DEFAULT_SWITCH_STARTS: usize = 50;
pub const DEFAULT_NLP_STARTS: usize = 20;
/// A program on for at least this fraction of the grid is always-on.
pub const ALWAYS_ON_FRACTION: f64 = 0.95;
/// A program whose first on-index lies at or past this fraction of the grid
/// is terminal-only.
pub const TERMINAL_FRACTION: f64 = 0.7;
/// Rounding losses above this flag an NLP solution.
pub const ROUNDING_LOSS_LIMIT: f64 = 1e-4;
/// Values within this distance of 0 or 1 count as binary.
pub const INTERIOR_TOL: f64 = 1e-6;
/// Pairwise profit agreement required by [`crosscheck`].
pub const CROSSCHECK_TOL: f64 = 1e-3;
/// Gradient checks above this relative error are reported as failures.
pub const GRADIENT_CHECK_LIMIT: f64 = 1e-4;

const ARMIJO_SIGMA: f64 = 1e-4;
const BACKTRACK: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Solver {
    Sweep,
    SwitchTimes,
    Nlp,
}

impl fmt::Display for Solver {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Solver::Sweep => "fbs",
            Solver::SwitchTimes => "switch-opt",
            Solver::Nlp => "nlp",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Converged,
    MaxIterations,
    StepCollapse,
}

#[derive(Debug, Clone, Default)]
pub struct Diagnostics {
    /// Iterations of the winning start.
    pub iterations: usize,
    /// Objective evaluations over all starts.
    pub evaluations: usize,
    /// Projected-gradient stationarity of the winning relaxed solution.
    pub gradient_norm: f64,
    /// Local-search restarts of the winning start.
    pub restarts: usize,
    pub status: Option<SolveStatus>,
    /// Relaxed minus rounded profit.
    pub rounding_loss: f64,
    pub rounding_flagged: bool,
    pub interior_fraction: f64,
    pub gradient_check: Option<GradientCheck>,
    /// Profit at the unsnapped switching times.
    pub continuous_profit: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct OptimizationResult {
    pub solver: Solver,
    /// Binary schedule on the control grid.
    pub schedule: ControlSchedule,
    pub switch_times: Option<SwitchTimes>,
    /// Unrounded NLP solution.
    pub relaxed: Option<ControlSchedule>,
    /// Profit of `schedule`, reproducible through `integrate`.
    pub profit: f64,
    pub start_profits: Vec<f64>,
    pub best_start: usize,
    pub seed: u64,
    pub diagnostics: Diagnostics,
}

impl OptimizationResult {
    pub fn labels(&self) -> Vec<StrategyLabel> {
        classify(&self.schedule).expect("optimizer schedules are binary")
    }

    /// `profit=<p> label=<l> solver=<s> starts=<n> seed=<seed>`; one label
    /// per class, joined by `/`.
    pub fn summary_line(&self) -> String {
        let labels: Vec<String> = self.labels().iter().map(|l| l.to_string()).collect();
        format!(
            "profit={} label={} solver={} starts={} seed={}",
            sig12(self.profit),
            labels.join("/"),
            self.solver,
            self.start_profits.len(),
            self.seed
        )
    }
}

/// CSV with columns `t`, then `u_k, v_k` per class; one row per control
/// interval, `t` at its left end.
pub fn write_schedule_csv<W: Write>(sched: &ControlSchedule, mut out: W) -> std::io::Result<()> {
    let mut header = vec!["t".to_string()];
    for k in 0..sched.classes() {
        header.push(format!("u_{k}"));
        header.push(format!("v_{k}"));
    }
    out.write_all(row(header).as_bytes())?;
    for n in 0..sched.intervals() {
        let mut fields = vec![sig12(n as f64 * sched.step)];
        for k in 0..sched.classes() {
            fields.push(sig12(sched.u[k][n]));
            fields.push(sig12(sched.v[k][n]));
        }
        out.write_all(row(fields).as_bytes())?;
    }
    Ok(())
}

fn check_inputs(x0: &StateVector, net: &ClassNetwork, p: &ModelParams) -> Result<()> {
    p.validate()?;
    if x0.len() != net.len() {
        return Err(Error::DimensionMismatch {
            what: "initial state classes",
            expected: net.len(),
            found: x0.len(),
        });
    }
    x0.validate()
}

fn best_of(profits: &[f64]) -> usize {
    let mut best = 0;
    for (n, &p) in profits.iter().enumerate() {
        if p > profits[best] {
            best = n;
        }
    }
    best
}

fn grid_profit(plan: &Plan, x0: &[f64], sched: &ControlSchedule) -> f64 {
    profit_of_flat(&final_flat(plan, x0, sched), &plan.dynamics.weights)
}

// ---------------------------------------------------------------------------
// Switching times

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SwitchOptions {
    pub starts: usize,
    pub seed: u64,
    pub dt: f64,
    pub control_dt: f64,
    /// Objective evaluations per local search.
    pub max_evals: usize,
}

impl Default for SwitchOptions {
    fn default() -> Self {
        Self {
            starts: DEFAULT_SWITCH_STARTS,
            seed: DEFAULT_SEED,
            dt: DEFAULT_DT,
            control_dt: DEFAULT_CONTROL_DT,
            max_evals: 4000,
        }
    }
}

/// Free coordinates of the switching-time vector: `(class, slot)` with
/// slots 0..4 for `tau1..tau4`. Disabled programs stay off.
fn active_slots(k: usize, p: &ModelParams) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for class in 0..k {
        if p.referral_enabled() {
            out.extend([(class, 0), (class, 1)]);
        }
        if p.direct_enabled() {
            out.extend([(class, 2), (class, 3)]);
        }
    }
    out
}

fn slot(c: &mut ClassSwitchTimes, s: usize) -> &mut f64 {
    match s {
        0 => &mut c.tau1,
        1 => &mut c.tau2,
        2 => &mut c.tau3,
        _ => &mut c.tau4,
    }
}

fn to_times(z: &[f64], slots: &[(usize, usize)], k: usize, horizon: f64) -> SwitchTimes {
    let mut times = vec![ClassSwitchTimes::off(horizon); k];
    for (&(class, s), &x) in slots.iter().zip(z) {
        *slot(&mut times[class], s) = x;
    }
    SwitchTimes(times.iter().map(|c| c.projected(horizon)).collect())
}

fn from_times(times: &SwitchTimes, slots: &[(usize, usize)]) -> Vec<f64> {
    slots
        .iter()
        .map(|&(class, s)| {
            let mut c = times.0[class];
            *slot(&mut c, s)
        })
        .collect()
}

struct SimplexRun {
    x: Vec<f64>,
    fx: f64,
    evals: usize,
    iterations: usize,
}

/// Nelder-Mead minimization; every trial point is passed through `project`.
fn nelder_mead(
    f: &dyn Fn(&[f64]) -> f64,
    project: &dyn Fn(&mut Vec<f64>),
    start: Vec<f64>,
    step: f64,
    max_evals: usize,
) -> SimplexRun {
    let n = start.len();
    let evals = std::cell::Cell::new(0usize);
    let eval = |x: &[f64]| {
        evals.set(evals.get() + 1);
        f(x)
    };
    if n == 0 {
        let fx = eval(&start);
        return SimplexRun {
            x: start,
            fx,
            evals: 1,
            iterations: 0,
        };
    }
    let mut pts = vec![start.clone()];
    for d in 0..n {
        let mut p = start.clone();
        p[d] += step;
        project(&mut p);
        if (p[d] - start[d]).abs() < 0.5 * step {
            p = start.clone();
            p[d] -= step;
            project(&mut p);
        }
        pts.push(p);
    }
    let mut vals: Vec<f64> = pts.iter().map(|p| eval(p)).collect();
    let mut iterations = 0;
    let along = |a: &[f64], b: &[f64], t: f64| -> Vec<f64> {
        a.iter().zip(b).map(|(x, y)| x + t * (y - x)).collect()
    };
    loop {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
        pts = order.iter().map(|&i| pts[i].clone()).collect();
        vals = order.iter().map(|&i| vals[i]).collect();
        let spread = vals[n] - vals[0];
        let diameter = pts[1..]
            .iter()
            .flat_map(|p| p.iter().zip(&pts[0]).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        if evals.get() >= max_evals || spread <= 1e-14 || diameter <= 1e-9 {
            break;
        }
        iterations += 1;
        let mut centroid = vec![0.0; n];
        for p in &pts[..n] {
            for (c, x) in centroid.iter_mut().zip(p) {
                *c += x / n as f64;
            }
        }
        let worst = pts[n].clone();
        let mut xr = along(&centroid, &worst, -1.0);
        project(&mut xr);
        let fr = eval(&xr);
        if fr < vals[0] {
            let mut xe = along(&centroid, &worst, -2.0);
            project(&mut xe);
            let fe = eval(&xe);
            (pts[n], vals[n]) = if fe < fr { (xe, fe) } else { (xr, fr) };
            continue;
        }
        if fr < vals[n - 1] {
            (pts[n], vals[n]) = (xr, fr);
            continue;
        }
        let (mut xc, limit) = if fr < vals[n] {
            (along(&centroid, &xr, 0.5), fr)
        } else {
            (along(&centroid, &worst, 0.5), vals[n])
        };
        project(&mut xc);
        let fc = eval(&xc);
        if fc < limit {
            (pts[n], vals[n]) = (xc, fc);
            continue;
        }
        for i in 1..=n {
            let mut p = along(&pts[0], &pts[i], 0.5);
            project(&mut p);
            vals[i] = eval(&p);
            pts[i] = p;
        }
    }
    SimplexRun {
        x: pts.swap_remove(0),
        fx: vals[0],
        evals: evals.get(),
        iterations,
    }
}

struct SwitchStart {
    profit: f64,
    continuous: f64,
    times: SwitchTimes,
    evals: usize,
    iterations: usize,
    restarts: usize,
}

/// Multi-start switching-time search.
///
/// Each start draws every enabled pair uniformly from the ordered box, runs
/// Nelder-Mead on the exact-switching profit (restarting from its own
/// result while that still helps), snaps the times to the control grid and
/// polishes them by single-cell moves on the grid profit.
pub fn optimize_switch_times(
    x0: &StateVector,
    net: &ClassNetwork,
    p: &ModelParams,
    opts: &SwitchOptions,
) -> Result<OptimizationResult> {
    if opts.starts == 0 {
        return Err(Error::NoStarts);
    }
    check_inputs(x0, net, p)?;
    let k = net.len();
    let horizon = p.horizon;
    let off = SwitchTimes(vec![ClassSwitchTimes::off(horizon); k]);
    let grid_plan = plan(x0, &off.to_schedule(horizon, opts.control_dt)?, net, p, opts.dt)?;
    let dynamics = Dynamics::new(net, p);
    let xf = initial_flat(x0);
    let slots = active_slots(k, p);

    let run = |start: usize| -> Result<SwitchStart> {
        let mut rng = stream(opts.seed, "switch-opt", start as u64);
        let mut z = Vec::with_capacity(slots.len());
        for _ in 0..slots.len() / 2 {
            let a = rng.random::<f64>() * horizon;
            let b = rng.random::<f64>() * horizon;
            z.extend([a.min(b), a.max(b)]);
        }
        let objective = |z: &[f64]| {
            -switching_profit_unchecked(&dynamics, &xf, &to_times(z, &slots, k, horizon), opts.dt)
        };
        let project = |z: &mut Vec<f64>| {
            *z = from_times(&to_times(z, &slots, k, horizon), &slots);
        };
        project(&mut z);
        let mut result = nelder_mead(&objective, &project, z, 0.1 * horizon, opts.max_evals);
        let (mut evals, mut iterations, mut restarts) = (result.evals, result.iterations, 0);
        while restarts < 5 {
            let again = nelder_mead(
                &objective,
                &project,
                result.x.clone(),
                0.02 * horizon,
                opts.max_evals,
            );
            evals += again.evals;
            iterations += again.iterations;
            restarts += 1;
            let gained = result.fx - again.fx;
            if again.fx < result.fx {
                result = again;
            }
            if gained <= 1e-12 {
                break;
            }
        }
        let continuous = -result.fx;

        let cell = opts.control_dt;
        let snap = |x: f64| (x / cell).round() * cell;
        let mut z: Vec<f64> = result.x.iter().map(|&x| snap(x)).collect();
        project(&mut z);
        let value = |z: &[f64]| -> Result<f64> {
            let sched = to_times(z, &slots, k, horizon).to_schedule(horizon, cell)?;
            Ok(grid_profit(&grid_plan, &xf, &sched))
        };
        let mut best = value(&z)?;
        evals += 1;
        loop {
            let mut improved = false;
            for d in 0..z.len() {
                for delta in [cell, -cell] {
                    let mut trial = z.clone();
                    trial[d] = snap(trial[d] + delta);
                    let pair = d - d % 2;
                    if trial[d] < 0.0 || trial[d] > horizon || trial[pair] > trial[pair + 1] {
                        continue;
                    }
                    let v = value(&trial)?;
                    evals += 1;
                    if v > best + 1e-15 {
                        best = v;
                        z = trial;
                        improved = true;
                    }
                }
            }
            if !improved {
                break;
            }
        }
        Ok(SwitchStart {
            profit: best,
            continuous,
            times: to_times(&z, &slots, k, horizon),
            evals,
            iterations,
            restarts,
        })
    };

    let runs: Vec<SwitchStart> = (0..opts.starts)
        .into_par_iter()
        .map(run)
        .collect::<Result<_>>()?;
    let start_profits: Vec<f64> = runs.iter().map(|r| r.profit).collect();
    let best_start = best_of(&start_profits);
    let win = &runs[best_start];
    let schedule = win.times.to_schedule(horizon, opts.control_dt)?;
    Ok(OptimizationResult {
        solver: Solver::SwitchTimes,
        schedule,
        switch_times: Some(win.times.clone()),
        relaxed: None,
        profit: win.profit,
        start_profits,
        best_start,
        seed: opts.seed,
        diagnostics: Diagnostics {
            iterations: win.iterations,
            evaluations: runs.iter().map(|r| r.evals).sum(),
            restarts: win.restarts,
            status: Some(SolveStatus::Converged),
            continuous_profit: Some(win.continuous),
            ..Diagnostics::default()
        },
    })
}

// ---------------------------------------------------------------------------
// Relaxed NLP

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NlpOptions {
    pub starts: usize,
    pub seed: u64,
    pub dt: f64,
    pub control_dt: f64,
    pub max_iters: usize,
    /// Stationarity tolerance on `max |P(z + g) - z|`.
    pub tol: f64,
    /// Coordinates checked against finite differences at the first start.
    pub gradient_checks: usize,
}

impl Default for NlpOptions {
    fn default() -> Self {
        Self {
            starts: DEFAULT_NLP_STARTS,
            seed: DEFAULT_SEED,
            dt: DEFAULT_DT,
            control_dt: DEFAULT_CONTROL_DT,
            max_iters: 3000,
            tol: 1e-10,
            gradient_checks: 10,
        }
    }
}

struct NlpStart {
    relaxed: ControlSchedule,
    relaxed_profit: f64,
    rounded: ControlSchedule,
    profit: f64,
    iterations: usize,
    evals: usize,
    stationarity: f64,
    status: SolveStatus,
}

/// `max |clamp(z + g) - z|` over the free coordinates.
fn stationarity(z: &ControlSchedule, du: &[Vec<f64>], dv: &[Vec<f64>], free: (bool, bool)) -> f64 {
    let mut worst = 0.0f64;
    for (sig, g, on) in [(&z.u, du, free.0), (&z.v, dv, free.1)] {
        if !on {
            continue;
        }
        for (zs, gs) in sig.iter().zip(g) {
            for (&x, &d) in zs.iter().zip(gs) {
                worst = worst.max(((x + d).clamp(0.0, 1.0) - x).abs());
            }
        }
    }
    worst
}

fn step_to(
    z: &ControlSchedule,
    du: &[Vec<f64>],
    dv: &[Vec<f64>],
    s: f64,
    free: (bool, bool),
) -> ControlSchedule {
    let mv = |sig: &[Vec<f64>], g: &[Vec<f64>], on: bool| -> Vec<Vec<f64>> {
        sig.iter()
            .zip(g)
            .map(|(zs, gs)| {
                zs.iter()
                    .zip(gs)
                    .map(|(&x, &d)| if on { (x + s * d).clamp(0.0, 1.0) } else { 0.0 })
                    .collect()
            })
            .collect()
    };
    ControlSchedule {
        step: z.step,
        u: mv(&z.u, du, free.0),
        v: mv(&z.v, dv, free.1),
    }
}

fn inner(a: &ControlSchedule, b: &ControlSchedule, du: &[Vec<f64>], dv: &[Vec<f64>]) -> f64 {
    let mut s = 0.0;
    for (sa, sb, g) in [(&a.u, &b.u, du), (&a.v, &b.v, dv)] {
        for ((xa, xb), gs) in sa.iter().zip(sb).zip(g) {
            for ((&p, &q), &d) in xa.iter().zip(xb).zip(gs) {
                s += (q - p) * d;
            }
        }
    }
    s
}

/// Multi-start projected gradient ascent on the relaxed grid problem.
///
/// Steps start at `1 / max|g|` and double after every accepted move;
/// a trial is accepted under the Armijo condition with slope parameter 1e-4
/// and otherwise halved. The winning relaxed solution is rounded at 0.5;
/// a rounding loss above 1e-4 is flagged in the diagnostics.
pub fn nlp_solve(
    x0: &StateVector,
    net: &ClassNetwork,
    p: &ModelParams,
    opts: &NlpOptions,
) -> Result<OptimizationResult> {
    if opts.starts == 0 {
        return Err(Error::NoStarts);
    }
    check_inputs(x0, net, p)?;
    let k = net.len();
    let off = ControlSchedule::off(k, p.horizon, opts.control_dt)?;
    let grid_plan = plan(x0, &off, net, p, opts.dt)?;
    let xf = initial_flat(x0);
    let free = (p.referral_enabled(), p.direct_enabled());
    let intervals = off.intervals();

    let run = |start: usize| -> NlpStart {
        let mut rng = stream(opts.seed, "nlp", start as u64);
        let mut draw = |on: bool| -> Vec<Vec<f64>> {
            (0..k)
                .map(|_| {
                    (0..intervals)
                        .map(|_| if on { rng.random::<f64>() } else { 0.0 })
                        .collect()
                })
                .collect()
        };
        let mut z = ControlSchedule {
            step: opts.control_dt,
            u: draw(free.0),
            v: draw(free.1),
        };
        let mut g = gradient_with_plan(&grid_plan, &xf, &z, false);
        let mut evals = 1;
        let gmax = |g: &crate::gradient::Gradient| {
            g.du.iter()
                .filter(|_| free.0)
                .chain(g.dv.iter().filter(|_| free.1))
                .flatten()
                .fold(0.0f64, |m, x| m.max(x.abs()))
        };
        let mut s = 1.0 / gmax(&g).max(1e-300);
        let mut status = SolveStatus::MaxIterations;
        let mut iterations = 0;
        while iterations < opts.max_iters {
            if stationarity(&z, &g.du, &g.dv, free) <= opts.tol {
                status = SolveStatus::Converged;
                break;
            }
            iterations += 1;
            let floor = 1e-12 / gmax(&g).max(1e-300);
            let accepted = loop {
                let trial = step_to(&z, &g.du, &g.dv, s, free);
                if trial == z {
                    break None;
                }
                let value = grid_profit(&grid_plan, &xf, &trial);
                evals += 1;
                if value >= g.profit + ARMIJO_SIGMA * inner(&z, &trial, &g.du, &g.dv) {
                    break Some(trial);
                }
                s *= BACKTRACK;
                if s < floor {
                    break None;
                }
            };
            match accepted {
                Some(trial) => {
                    z = trial;
                    g = gradient_with_plan(&grid_plan, &xf, &z, false);
                    evals += 1;
                    s *= 2.0;
                }
                None => {
                    status = if stationarity(&z, &g.du, &g.dv, free) <= opts.tol {
                        SolveStatus::Converged
                    } else {
                        SolveStatus::StepCollapse
                    };
                    break;
                }
            }
        }
        let stationarity = stationarity(&z, &g.du, &g.dv, free);
        let rounded = z.rounded();
        let profit = grid_profit(&grid_plan, &xf, &rounded);
        NlpStart {
            relaxed_profit: g.profit,
            relaxed: z,
            rounded,
            profit,
            iterations,
            evals: evals + 1,
            stationarity,
            status,
        }
    };

    let runs: Vec<NlpStart> = (0..opts.starts).into_par_iter().map(run).collect();
    let start_profits: Vec<f64> = runs.iter().map(|r| r.profit).collect();
    let best_start = best_of(&start_profits);
    let win = &runs[best_start];

    let gradient_check = if opts.gradient_checks > 0 {
        let mut rng = stream(opts.seed, "nlp-gradient-check", 0);
        let signals: Vec<usize> = [(0, free.0), (1, free.1)]
            .iter()
            .filter(|s| s.1)
            .map(|s| s.0)
            .collect();
        let point = &runs[0].relaxed;
        let coords: Vec<(usize, usize, usize)> = if signals.is_empty() {
            Vec::new()
        } else {
            (0..opts.gradient_checks)
                .map(|_| {
                    (
                        signals[rng.random_range(0..signals.len())],
                        rng.random_range(0..k),
                        rng.random_range(0..intervals),
                    )
                })
                .collect()
        };
        Some(check_gradient(x0, point, net, p, opts.dt, FD_STEP, &coords)?)
    } else {
        None
    };

    let loss = win.relaxed_profit - win.profit;
    Ok(OptimizationResult {
        solver: Solver::Nlp,
        schedule: win.rounded.clone(),
        switch_times: None,
        relaxed: Some(win.relaxed.clone()),
        profit: win.profit,
        start_profits,
        best_start,
        seed: opts.seed,
        diagnostics: Diagnostics {
            iterations: win.iterations,
            evaluations: runs.iter().map(|r| r.evals).sum(),
            gradient_norm: win.stationarity,
            status: Some(win.status),
            rounding_loss: loss,
            rounding_flagged: loss > ROUNDING_LOSS_LIMIT,
            interior_fraction: win.relaxed.interior_fraction(INTERIOR_TOL),
            gradient_check,
            ..Diagnostics::default()
        },
    })
}

// ---------------------------------------------------------------------------
// Classification

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StrategyLabel {
    InfluenceAndExploit,
    ExploitAndInfluence,
    BothPhases,
    AlwaysOn,
    None,
}

impl fmt::Display for StrategyLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StrategyLabel::InfluenceAndExploit => "influence-and-exploit",
            StrategyLabel::ExploitAndInfluence => "exploit-and-influence",
            StrategyLabel::BothPhases => "both-phases",
            StrategyLabel::AlwaysOn => "always-on",
            StrategyLabel::None => "none",
        })
    }
}

/// Shape of one binary program signal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ProgramShape {
    Off,
    AlwaysOn,
    /// One window starting at 0 and ending before the horizon.
    InitialOnly,
    /// One window ending at the horizon that starts in the last 30%.
    TerminalOnly,
    /// A window at each end with a gap between.
    InitialAndTerminal,
    Other,
}

impl fmt::Display for ProgramShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProgramShape::Off => "off",
            ProgramShape::AlwaysOn => "always-on",
            ProgramShape::InitialOnly => "initial-only",
            ProgramShape::TerminalOnly => "terminal-only",
            ProgramShape::InitialAndTerminal => "initial-and-terminal",
            ProgramShape::Other => "other",
        })
    }
}

/// Maximal runs of ones as half-open index ranges.
pub fn on_intervals(signal: &[f64]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = None;
    for (n, &x) in signal.iter().enumerate() {
        match (x >= 0.5, start) {
            (true, None) => start = Some(n),
            (false, Some(a)) => {
                out.push((a, n));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(a) = start {
        out.push((a, signal.len()));
    }
    out
}

fn on_fraction(signal: &[f64]) -> f64 {
    if signal.is_empty() {
        return 0.0;
    }
    signal.iter().filter(|&&x| x >= 0.5).count() as f64 / signal.len() as f64
}

fn terminal_only(signal: &[f64]) -> bool {
    let n = signal.len();
    match on_intervals(signal).first() {
        Some(&(first, _)) => first as f64 >= TERMINAL_FRACTION * n as f64,
        None => false,
    }
}

pub fn program_shape(signal: &[f64]) -> ProgramShape {
    let n = signal.len();
    let runs = on_intervals(signal);
    if runs.is_empty() {
        return ProgramShape::Off;
    }
    if on_fraction(signal) >= ALWAYS_ON_FRACTION {
        return ProgramShape::AlwaysOn;
    }
    match runs.as_slice() {
        [(0, _)] => ProgramShape::InitialOnly,
        [(_, end)] if *end == n && terminal_only(signal) => ProgramShape::TerminalOnly,
        [(0, _), (_, end)] if *end == n => ProgramShape::InitialAndTerminal,
        _ => ProgramShape::Other,
    }
}

/// Label of one class's `(u, v)` pair. Rules, first match wins:
///
/// 1. both programs off: none;
/// 2. both on for at least 95% of the grid: always-on;
/// 3. `v[0] = 1`, `u[0] = 0`: influence-and-exploit;
/// 4. `u[0] = 1`, `v[0] = 0`: exploit-and-influence;
/// 5. both on at 0: both-phases;
/// 6. neither on at 0: the program switched on first leads (direct first
///    is influence-and-exploit, referral first is exploit-and-influence,
///    a tie is both-phases).
pub fn classify_pair(u: &[f64], v: &[f64]) -> StrategyLabel {
    let (ru, rv) = (on_intervals(u), on_intervals(v));
    if ru.is_empty() && rv.is_empty() {
        return StrategyLabel::None;
    }
    if on_fraction(u) >= ALWAYS_ON_FRACTION && on_fraction(v) >= ALWAYS_ON_FRACTION {
        return StrategyLabel::AlwaysOn;
    }
    let first = |r: &[(usize, usize)]| r.first().map_or(usize::MAX, |x| x.0);
    let (fu, fv) = (first(&ru), first(&rv));
    match (fu == 0, fv == 0) {
        (false, true) => StrategyLabel::InfluenceAndExploit,
        (true, false) => StrategyLabel::ExploitAndInfluence,
        (true, true) => StrategyLabel::BothPhases,
        (false, false) => match fv.cmp(&fu) {
            std::cmp::Ordering::Less => StrategyLabel::InfluenceAndExploit,
            std::cmp::Ordering::Greater => StrategyLabel::ExploitAndInfluence,
            std::cmp::Ordering::Equal => StrategyLabel::BothPhases,
        },
    }
}

/// One label per class.
pub fn classify(sched: &ControlSchedule) -> Result<Vec<StrategyLabel>> {
    sched.ensure_binary()?;
    Ok(sched
        .u
        .iter()
        .zip(&sched.v)
        .map(|(u, v)| classify_pair(u, v))
        .collect())
}

/// Labels the grid schedule sampled from switching times.
pub fn classify_times(times: &SwitchTimes, horizon: f64, step: f64) -> Result<Vec<StrategyLabel>> {
    classify(&times.to_schedule(horizon, step)?)
}

// ---------------------------------------------------------------------------
// Cross-check

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrossCheckOptions {
    pub dt: f64,
    pub control_dt: f64,
    pub seed: u64,
    pub switch_starts: usize,
    pub nlp_starts: usize,
}

impl Default for CrossCheckOptions {
    fn default() -> Self {
        Self {
            dt: DEFAULT_DT,
            control_dt: DEFAULT_CONTROL_DT,
            seed: DEFAULT_SEED,
            switch_starts: DEFAULT_SWITCH_STARTS,
            nlp_starts: DEFAULT_NLP_STARTS,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CrossCheckRow {
    pub solver: Solver,
    pub profit: f64,
    pub label: StrategyLabel,
    pub schedule: ControlSchedule,
}

#[derive(Debug, Clone)]
pub struct CrossCheck {
    pub rows: Vec<CrossCheckRow>,
    pub max_profit_gap: f64,
    pub labels_agree: bool,
}

impl CrossCheck {
    pub fn passed(&self) -> bool {
        self.max_profit_gap <= CROSSCHECK_TOL && self.labels_agree
    }
}

fn signal_string(s: &[f64]) -> String {
    s.iter().map(|&x| if x >= 0.5 { '#' } else { '.' }).collect()
}

impl fmt::Display for CrossCheck {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<12} {:>16} label", "solver", "profit")?;
        for r in &self.rows {
            writeln!(f, "{:<12} {:>16.12} {}", r.solver.to_string(), r.profit, r.label)?;
        }
        writeln!(
            f,
            "max gap {:.3e}, labels {}: {}",
            self.max_profit_gap,
            if self.labels_agree { "agree" } else { "differ" },
            if self.passed() { "PASS" } else { "FAIL" }
        )?;
        if !self.passed() {
            for r in &self.rows {
                writeln!(f, "{} u {}", r.solver, signal_string(&r.schedule.u[0]))?;
                writeln!(f, "{} v {}", r.solver, signal_string(&r.schedule.v[0]))?;
            }
        }
        Ok(())
    }
}

/// Runs the sweep and both direct optimizers on a single-class instance.
pub fn crosscheck(
    x0: &StateVector,
    net: &ClassNetwork,
    p: &ModelParams,
    opts: &CrossCheckOptions,
) -> Result<CrossCheck> {
    let fbs = fbs_solve(
        x0,
        net,
        p,
        &FbsOptions {
            dt: opts.dt,
            control_dt: opts.control_dt,
            ..FbsOptions::default()
        },
    )?;
    let sw = optimize_switch_times(
        x0,
        net,
        p,
        &SwitchOptions {
            starts: opts.switch_starts,
            seed: opts.seed,
            dt: opts.dt,
            control_dt: opts.control_dt,
            ..SwitchOptions::default()
        },
    )?;
    let nlp = nlp_solve(
        x0,
        net,
        p,
        &NlpOptions {
            starts: opts.nlp_starts,
            seed: opts.seed,
            dt: opts.dt,
            control_dt: opts.control_dt,
            ..NlpOptions::default()
        },
    )?;
    let rows = vec![
        CrossCheckRow {
            solver: Solver::Sweep,
            profit: fbs.profit,
            label: classify(&fbs.schedule)?[0],
            schedule: fbs.schedule,
        },
        CrossCheckRow {
            solver: Solver::SwitchTimes,
            profit: sw.profit,
            label: sw.labels()[0],
            schedule: sw.schedule,
        },
        CrossCheckRow {
            solver: Solver::Nlp,
            profit: nlp.profit,
            label: nlp.labels()[0],
            schedule: nlp.schedule,
        },
    ];
    let profits: Vec<f64> = rows.iter().map(|r| r.profit).collect();
    let hi = profits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = profits.iter().copied().fold(f64::INFINITY, f64::min);
    let labels_agree = rows.iter().all(|r| r.label == rows[0].label);
    Ok(CrossCheck {
        rows,
        max_profit_gap: hi - lo,
        labels_agree,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sig(s: &str) -> Vec<f64> {
        s.chars().map(|c| if c == '#' { 1.0 } else { 0.0 }).collect()
    }

    #[test]
    fn labels_from_examples() {
        use StrategyLabel::*;
        let cases = [
            ("..........", "..........", None),
            ("..........", "##........", InfluenceAndExploit),
            ("........##", "##......##", InfluenceAndExploit),
            ("#####...##", "........##", ExploitAndInfluence),
            ("##.....###", "#......###", BothPhases),
            ("##########", "##########", AlwaysOn),
            ("....##....", "......##..", ExploitAndInfluence),
            ("......##..", "....##....", InfluenceAndExploit),
            ("....##....", "....##....", BothPhases),
        ];
        for (u, v, want) in cases {
            assert_eq!(classify_pair(&sig(u), &sig(v)), want, "u {u} v {v}");
        }
    }

    #[test]
    fn shapes() {
        use ProgramShape::*;
        let s = |x: &str| program_shape(&sig(x));
        assert_eq!(s(".........."), Off);
        assert_eq!(s("##########"), AlwaysOn);
        assert_eq!(s("###......."), InitialOnly);
        assert_eq!(s("........##"), TerminalOnly);
        assert_eq!(s("....######"), Other);
        assert_eq!(s("##......##"), InitialAndTerminal);
        assert_eq!(s("..##..##.."), Other);
        let mut long = vec![1.0; 100];
        long[50] = 0.0;
        assert_eq!(program_shape(&long), AlwaysOn);
    }

    #[test]
    fn classify_rejects_relaxed() {
        let s = ControlSchedule::constant(1, 1.0, 0.1, 0.5, 0.0).unwrap();
        assert!(classify(&s).is_err());
    }

    #[test]
    fn nelder_mead_finds_quadratic_minimum() {
        let f = |x: &[f64]| (x[0] - 1.0).powi(2) + 3.0 * (x[1] + 0.5).powi(2);
        let clamp = |x: &mut Vec<f64>| x.iter_mut().for_each(|v| *v = v.clamp(-2.0, 2.0));
        let r = nelder_mead(&f, &clamp, vec![0.0, 0.0], 0.5, 5000);
        assert!((r.x[0] - 1.0).abs() < 1e-4 && (r.x[1] + 0.5).abs() < 1e-4, "{:?}", r.x);
        let bounded = |x: &mut Vec<f64>| x.iter_mut().for_each(|v| *v = v.clamp(-2.0, 0.5));
        let r = nelder_mead(&f, &bounded, vec![0.0, 0.0], 0.5, 5000);
        assert!((r.x[0] - 0.5).abs() < 1e-4, "{:?}", r.x);
    }

    #[test]
    fn slots_follow_enabled_programs() {
        let p = ModelParams {
            eps2: 0.0,
            ..ModelParams::base()
        };
        assert_eq!(active_slots(2, &p), vec![(0, 0), (0, 1), (1, 0), (1, 1)]);
        let t = to_times(&[3.0, 1.0, 2.0, 4.0], &active_slots(2, &p), 2, 10.0);
        assert_eq!(t.0[0].tau1, 2.0);
        assert_eq!(t.0[0].tau2, 2.0);
        assert_eq!(t.0[1].tau3, 0.0);
        assert_eq!(t.0[1].tau4, 10.0);
    }

    #[test]
    fn schedule_csv() {
        let s = ControlSchedule::constant(2, 0.2, 0.1, 1.0, 0.0).unwrap();
        let mut buf = Vec::new();
        write_schedule_csv(&s, &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "t,u_0,v_0,u_1,v_1\n0,1,0,1,0\n0.1,1,0,1,0\n"
        );
    }
}
