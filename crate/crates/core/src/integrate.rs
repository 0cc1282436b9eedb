//! Fixed-step RK4 integration of the controlled system and the profit
//! objective.
//!
//! Controls are held constant over each control interval and the state step
//! must divide the control step. Spending is integrated as two extra state
//! components, so the profit carries the integrator's order.

use std::io::Write;

use crate::csvfmt::{row, sig12};
use crate::error::{Error, Result};
use crate::model::{
    grid_len, ClassNetwork, ClassState, ControlSchedule, Dynamics, ModelParams, StateVector,
    SwitchTimes,
};

/// Default state step.
pub const DEFAULT_DT: f64 = 0.01;
/// Default control grid step.
pub const DEFAULT_CONTROL_DT: f64 = 0.1;
/// Simplex drift that aborts an integration.
pub const DRIFT_LIMIT: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    dt: f64,
    classes: usize,
    times: Vec<f64>,
    /// Flat augmented states, see [`Dynamics`].
    states: Vec<Vec<f64>>,
    /// Controls applied on the step starting at each grid point; the last
    /// point repeats the final interval.
    u: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Trajectory {
    pub(crate) fn from_parts(
        dt: f64,
        classes: usize,
        times: Vec<f64>,
        states: Vec<Vec<f64>>,
        u: Vec<Vec<f64>>,
        v: Vec<Vec<f64>>,
    ) -> Self {
        Self {
            dt,
            classes,
            times,
            states,
            u,
            v,
        }
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// Number of grid points (steps + 1).
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn class_state(&self, m: usize, k: usize) -> ClassState {
        let x = &self.states[m];
        ClassState::new(x[3 * k], x[3 * k + 1], x[3 * k + 2])
    }

    pub fn state(&self, m: usize) -> StateVector {
        StateVector::from_flat(&self.states[m], self.classes)
    }

    pub fn final_state(&self) -> StateVector {
        self.state(self.len() - 1)
    }

    pub fn cost_referral(&self, m: usize) -> f64 {
        self.states[m][3 * self.classes]
    }

    pub fn cost_direct(&self, m: usize) -> f64 {
        self.states[m][3 * self.classes + 1]
    }

    pub fn controls(&self, m: usize) -> (&[f64], &[f64]) {
        (&self.u[m], &self.v[m])
    }

    pub(crate) fn flat(&self, m: usize) -> &[f64] {
        &self.states[m]
    }

    /// CSV with columns `t`, then `i_k, r_k, theta_k, u_k, v_k` per class,
    /// then `cum_cost_referral, cum_cost_direct`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let mut header = vec!["t".to_string()];
        for k in 0..self.classes {
            for name in ["i", "r", "theta", "u", "v"] {
                header.push(format!("{name}_{k}"));
            }
        }
        header.push("cum_cost_referral".into());
        header.push("cum_cost_direct".into());
        out.write_all(row(header).as_bytes())?;
        for m in 0..self.len() {
            let mut fields = vec![sig12(self.times[m])];
            for k in 0..self.classes {
                let s = self.class_state(m, k);
                fields.extend([s.i, s.r, s.theta, self.u[m][k], self.v[m][k]].map(sig12));
            }
            fields.push(sig12(self.cost_referral(m)));
            fields.push(sig12(self.cost_direct(m)));
            out.write_all(row(fields).as_bytes())?;
        }
        Ok(())
    }
}

/// Workspace for one RK4 step.
pub(crate) struct Rk4 {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Rk4 {
    pub fn new(dim: usize) -> Self {
        Self {
            k1: vec![0.0; dim],
            k2: vec![0.0; dim],
            k3: vec![0.0; dim],
            k4: vec![0.0; dim],
            tmp: vec![0.0; dim],
        }
    }

    pub fn step(&mut self, f: &Dynamics, x: &mut [f64], u: &[f64], v: &[f64], h: f64) {
        let n = x.len();
        f.eval(x, u, v, &mut self.k1);
        for j in 0..n {
            self.tmp[j] = x[j] + 0.5 * h * self.k1[j];
        }
        f.eval(&self.tmp, u, v, &mut self.k2);
        for j in 0..n {
            self.tmp[j] = x[j] + 0.5 * h * self.k2[j];
        }
        f.eval(&self.tmp, u, v, &mut self.k3);
        for j in 0..n {
            self.tmp[j] = x[j] + h * self.k3[j];
        }
        f.eval(&self.tmp, u, v, &mut self.k4);
        for j in 0..n {
            x[j] += h / 6.0 * (self.k1[j] + 2.0 * self.k2[j] + 2.0 * self.k3[j] + self.k4[j]);
        }
    }
}

/// Steps per control interval, if `dt` divides `control_dt`.
pub(crate) fn substeps(control_dt: f64, dt: f64) -> Result<usize> {
    grid_len(control_dt, dt)
        .map_err(|_| Error::StepMismatch(format!("dt {dt} does not divide control step {control_dt}")))
}

fn simplex_deviation(x: &[f64], classes: usize) -> f64 {
    (0..classes)
        .map(|k| (x[3 * k] + x[3 * k + 1] + x[3 * k + 2] - 1.0).abs())
        .fold(0.0, f64::max)
}

/// Validated inputs for a fixed-grid integration.
pub(crate) struct Plan {
    pub dynamics: Dynamics,
    pub intervals: usize,
    pub substeps: usize,
    pub dt: f64,
}

pub(crate) fn plan(
    x0: &StateVector,
    sched: &ControlSchedule,
    net: &ClassNetwork,
    p: &ModelParams,
    dt: f64,
) -> Result<Plan> {
    p.validate()?;
    if x0.len() != net.len() {
        return Err(Error::DimensionMismatch {
            what: "initial state classes",
            expected: net.len(),
            found: x0.len(),
        });
    }
    x0.validate()?;
    sched.validate(net.len(), p.horizon)?;
    let substeps = substeps(sched.step, dt)?;
    Ok(Plan {
        dynamics: Dynamics::new(net, p),
        intervals: sched.intervals(),
        substeps,
        dt,
    })
}

pub(crate) fn initial_flat(x0: &StateVector) -> Vec<f64> {
    let mut x = x0.to_flat();
    x.extend([0.0, 0.0]);
    x
}

pub(crate) fn column(sig: &[Vec<f64>], m: usize) -> Vec<f64> {
    sig.iter().map(|s| s[m]).collect()
}

/// Integrates from `x0` over `[0, T]` under `sched` with state step `dt`.
pub fn integrate(
    x0: &StateVector,
    sched: &ControlSchedule,
    net: &ClassNetwork,
    p: &ModelParams,
    dt: f64,
) -> Result<Trajectory> {
    let plan = plan(x0, sched, net, p, dt)?;
    let classes = net.len();
    let steps = plan.intervals * plan.substeps;
    let mut x = initial_flat(x0);
    let mut rk = Rk4::new(x.len());
    let mut times = Vec::with_capacity(steps + 1);
    let mut states = Vec::with_capacity(steps + 1);
    let mut us = Vec::with_capacity(steps + 1);
    let mut vs = Vec::with_capacity(steps + 1);
    times.push(0.0);
    states.push(x.clone());
    for m in 0..plan.intervals {
        let u = column(&sched.u, m);
        let v = column(&sched.v, m);
        for s in 0..plan.substeps {
            rk.step(&plan.dynamics, &mut x, &u, &v, dt);
            let step = m * plan.substeps + s + 1;
            let t = step as f64 * dt;
            let dev = simplex_deviation(&x, classes);
            if dev > DRIFT_LIMIT {
                return Err(Error::IntegrationDrift {
                    time: t,
                    deviation: dev,
                });
            }
            us.push(u.clone());
            vs.push(v.clone());
            times.push(t);
            states.push(x.clone());
        }
    }
    // Controls at the final grid point repeat the last interval.
    us.push(us.last().cloned().unwrap_or_else(|| vec![0.0; classes]));
    vs.push(vs.last().cloned().unwrap_or_else(|| vec![0.0; classes]));
    Ok(Trajectory {
        dt,
        classes,
        times,
        states,
        u: us,
        v: vs,
    })
}

/// `sum_k P(k) r_k(T)` minus both accumulated costs.
pub fn profit(traj: &Trajectory, net: &ClassNetwork) -> f64 {
    let last = traj.len() - 1;
    profit_of_flat(traj.flat(last), &net.weights())
}

pub(crate) fn profit_of_flat(x: &[f64], weights: &[f64]) -> f64 {
    let k = weights.len();
    let revenue: f64 = weights.iter().enumerate().map(|(j, w)| w * x[3 * j + 1]).sum();
    revenue - x[3 * k] - x[3 * k + 1]
}

/// Final augmented state only; no allocation per step and no drift check.
/// Used inside optimizer loops after the inputs have been validated once.
pub(crate) fn final_flat(plan: &Plan, x0: &[f64], sched: &ControlSchedule) -> Vec<f64> {
    let mut x = x0.to_vec();
    let mut rk = Rk4::new(x.len());
    let mut u = vec![0.0; plan.dynamics.k];
    let mut v = vec![0.0; plan.dynamics.k];
    for m in 0..plan.intervals {
        for k in 0..plan.dynamics.k {
            u[k] = sched.u[k][m];
            v[k] = sched.v[k][m];
        }
        for _ in 0..plan.substeps {
            rk.step(&plan.dynamics, &mut x, &u, &v, plan.dt);
        }
    }
    x
}

/// Profit under exact switching times: the state grid is split at every
/// switching time so the objective is continuous in the times. Segments are
/// integrated with the largest uniform step not exceeding `dt`.
pub fn switching_profit(
    x0: &StateVector,
    times: &SwitchTimes,
    net: &ClassNetwork,
    p: &ModelParams,
    dt: f64,
) -> Result<f64> {
    p.validate()?;
    if times.0.len() != net.len() || x0.len() != net.len() {
        return Err(Error::DimensionMismatch {
            what: "switching-time classes",
            expected: net.len(),
            found: times.0.len(),
        });
    }
    times.validate(p.horizon)?;
    x0.validate()?;
    Ok(switching_profit_unchecked(
        &Dynamics::new(net, p),
        &initial_flat(x0),
        times,
        dt,
    ))
}

pub(crate) fn switching_profit_unchecked(
    dynamics: &Dynamics,
    x0: &[f64],
    times: &SwitchTimes,
    dt: f64,
) -> f64 {
    let horizon = dynamics.p.horizon;
    let mut cuts: Vec<f64> = vec![0.0, horizon];
    for c in &times.0 {
        cuts.extend([c.tau1, c.tau2, c.tau3, c.tau4]);
    }
    cuts.retain(|t| *t >= 0.0 && *t <= horizon);
    cuts.sort_by(f64::total_cmp);
    cuts.dedup_by(|a, b| (*a - *b).abs() < 1e-12);

    let mut x = x0.to_vec();
    let mut rk = Rk4::new(x.len());
    let mut u = vec![0.0; dynamics.k];
    let mut v = vec![0.0; dynamics.k];
    for w in cuts.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        let len = hi - lo;
        if len <= 0.0 {
            continue;
        }
        let mid = 0.5 * (lo + hi);
        for (k, c) in times.0.iter().enumerate() {
            u[k] = if c.referral_on(mid) { 1.0 } else { 0.0 };
            v[k] = if c.direct_on(mid) { 1.0 } else { 0.0 };
        }
        let n = (len / dt - 1e-9).ceil().max(1.0) as usize;
        let h = len / n as f64;
        for _ in 0..n {
            rk.step(dynamics, &mut x, &u, &v, h);
        }
    }
    profit_of_flat(&x, &dynamics.weights)
}

/// Profit of `sched` on the control grid, integrated with step `dt`.
pub fn schedule_profit(
    x0: &StateVector,
    sched: &ControlSchedule,
    net: &ClassNetwork,
    p: &ModelParams,
    dt: f64,
) -> Result<f64> {
    let plan = plan(x0, sched, net, p, dt)?;
    Ok(profit_of_flat(
        &final_flat(&plan, &initial_flat(x0), sched),
        &plan.dynamics.weights,
    ))
}

/// Number of control intervals for the horizon of `p` at `control_dt`.
pub fn control_intervals(p: &ModelParams, control_dt: f64) -> Result<usize> {
    grid_len(p.horizon, control_dt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ClassSwitchTimes, ReferralGating};
    use approx::assert_abs_diff_eq;

    fn base_run(u: f64, v: f64) -> (Trajectory, ClassNetwork) {
        let net = ClassNetwork::regular(6);
        let p = ModelParams::base();
        let sched = ControlSchedule::constant(1, 10.0, 0.1, u, v).unwrap();
        (
            integrate(&StateVector::fresh(1), &sched, &net, &p, DEFAULT_DT).unwrap(),
            net,
        )
    }

    #[test]
    fn zero_rates_hold_state() {
        let p = ModelParams {
            alpha: 0.0,
            beta: 0.0,
            gamma: 0.0,
            delta: 0.0,
            eps1: 0.0,
            eps2: 0.0,
            ..ModelParams::base()
        };
        let net = ClassNetwork::regular(3);
        let x0 = StateVector::new(vec![ClassState::new(0.7, 0.2, 0.1)]).unwrap();
        let sched = ControlSchedule::constant(1, 10.0, 0.1, 1.0, 1.0).unwrap();
        let traj = integrate(&x0, &sched, &net, &p, 0.01).unwrap();
        for m in 0..traj.len() {
            assert_eq!(traj.state(m), x0);
            assert_eq!(traj.cost_referral(m), 0.0);
            assert_eq!(traj.cost_direct(m), 0.0);
        }
    }

    #[test]
    fn grid_endpoints() {
        let (traj, _) = base_run(0.0, 0.0);
        assert_eq!(traj.times()[0], 0.0);
        assert_abs_diff_eq!(*traj.times().last().unwrap(), 10.0, epsilon = 1e-12);
        assert_eq!(traj.len(), 1001);
    }

    #[test]
    fn uncontrolled_profit_is_revenue() {
        let (traj, net) = base_run(0.0, 0.0);
        assert_eq!(profit(&traj, &net), traj.final_state().0[0].r);
    }

    #[test]
    fn rejects_step_mismatch() {
        let net = ClassNetwork::regular(6);
        let p = ModelParams::base();
        let sched = ControlSchedule::off(1, 10.0, 0.1).unwrap();
        let err = integrate(&StateVector::fresh(1), &sched, &net, &p, 0.03);
        assert!(matches!(err, Err(Error::StepMismatch(_))));
        assert!(ControlSchedule::off(1, 10.0, 0.3).is_err());
    }

    #[test]
    fn rejects_wrong_schedule_length() {
        let net = ClassNetwork::regular(6);
        let p = ModelParams::base();
        let sched = ControlSchedule::off(1, 5.0, 0.1).unwrap();
        let err = integrate(&StateVector::fresh(1), &sched, &net, &p, 0.01);
        assert!(matches!(err, Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn monotone_and_conservative() {
        let (traj, _) = base_run(1.0, 1.0);
        for m in 1..traj.len() {
            let (a, b) = (traj.class_state(m - 1, 0), traj.class_state(m, 0));
            assert!(b.i <= a.i && b.r >= a.r && b.theta >= a.theta);
            assert!((b.i + b.r + b.theta - 1.0).abs() < 1e-10);
            assert!(traj.cost_referral(m) >= traj.cost_referral(m - 1));
            assert!(traj.cost_direct(m) >= traj.cost_direct(m - 1));
        }
    }

    #[test]
    fn switching_profit_matches_grid_profit_on_grid_times() {
        let net = ClassNetwork::regular(6);
        let p = ModelParams::base();
        let x0 = StateVector::fresh(1);
        let st = SwitchTimes(vec![ClassSwitchTimes {
            tau1: 2.0,
            tau2: 6.5,
            tau3: 1.0,
            tau4: 7.5,
        }]);
        let sched = st.to_schedule(10.0, 0.1).unwrap();
        let a = switching_profit(&x0, &st, &net, &p, 0.01).unwrap();
        let b = schedule_profit(&x0, &sched, &net, &p, 0.01).unwrap();
        assert_abs_diff_eq!(a, b, epsilon = 1e-12);
    }

    #[test]
    fn gatings_agree_for_one_class() {
        let net = ClassNetwork::regular(6);
        let p = ModelParams::base();
        let q = ModelParams {
            gating: ReferralGating::Referrer,
            ..p
        };
        let sched = ControlSchedule::constant(1, 10.0, 0.1, 1.0, 0.0).unwrap();
        let x0 = StateVector::fresh(1);
        let a = schedule_profit(&x0, &sched, &net, &p, 0.01).unwrap();
        let b = schedule_profit(&x0, &sched, &net, &q, 0.01).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn csv_layout() {
        let (traj, _) = base_run(1.0, 0.0);
        let mut buf = Vec::new();
        traj.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "t,i_0,r_0,theta_0,u_0,v_0,cum_cost_referral,cum_cost_direct"
        );
        assert_eq!(lines.next().unwrap(), "0,1,0,0,1,0,0,0");
        assert_eq!(text.lines().count(), 1002);
    }
}
