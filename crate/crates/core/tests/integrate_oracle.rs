//! Independent forward-Euler oracle for the single-class system.

use incentive_core::integrate::{integrate, profit, DEFAULT_DT};
use incentive_core::model::{ClassNetwork, ControlSchedule, ModelParams, StateVector};

/// Single-class dynamics written out from the rate equations, forward Euler
/// with step `h`, spending accumulated by the trapezoidal rule.
/// Returns `(i, r, theta, spending)` at `T`.
fn euler_oracle(p: &ModelParams, u: f64, v: f64, h: f64) -> (f64, f64, f64, f64) {
    let (mut i, mut r, mut th) = (1.0f64, 0.0f64, 0.0f64);
    let spend_rate = |i: f64, r: f64| {
        u * p.cost_referral * (p.beta + p.eps1) * i * r + v * p.cost_direct * (p.alpha + p.eps2) * i
    };
    let mut spent = 0.0;
    let steps = (p.horizon / h).round() as usize;
    for _ in 0..steps {
        let social = (p.beta + u * p.eps1) * i * r;
        let direct = (p.alpha + v * p.eps2) * i;
        let rival = p.gamma * i * th + p.delta * i;
        let before = spend_rate(i, r);
        let (ni, nr, nth) = (
            i + h * (-social - direct - rival),
            r + h * (social + direct),
            th + h * rival,
        );
        spent += 0.5 * h * (before + spend_rate(ni, nr));
        (i, r, th) = (ni, nr, nth);
    }
    (i, r, th, spent)
}

/// Richardson extrapolation of two Euler runs: second order, still
/// independent of the RK4 path.
fn extrapolated(p: &ModelParams, u: f64, v: f64, h: f64) -> (f64, f64) {
    let (_, r1, _, c1) = euler_oracle(p, u, v, h);
    let (_, r2, _, c2) = euler_oracle(p, u, v, h / 2.0);
    (2.0 * r2 - r1, 2.0 * c2 - c1)
}

fn run(u: f64, v: f64, dt: f64) -> (f64, f64) {
    let net = ClassNetwork::regular(6);
    let p = ModelParams::base();
    let sched = ControlSchedule::constant(1, p.horizon, 0.1, u, v).unwrap();
    let traj = integrate(&StateVector::fresh(1), &sched, &net, &p, dt).unwrap();
    (traj.final_state().0[0].r, profit(&traj, &net))
}

#[test]
fn uncontrolled_base_matches_euler_oracle() {
    let p = ModelParams::base();
    let (r_rk4, _) = run(0.0, 0.0, DEFAULT_DT);
    // Euler's own error at h = 1e-4 is about 1.1e-6, so halve it once more.
    let (_, r_euler, _, _) = euler_oracle(&p, 0.0, 0.0, 5e-5);
    let (r_rich, _) = extrapolated(&p, 0.0, 0.0, 1e-4);
    eprintln!("rk4 {r_rk4:.12} euler {r_euler:.12} richardson {r_rich:.12}");
    assert!((r_rk4 - r_euler).abs() < 1e-6, "{}", (r_rk4 - r_euler).abs());
    assert!((r_rk4 - r_rich).abs() < 1e-9);
}

#[test]
fn fully_controlled_profit_matches_oracle() {
    let p = ModelParams::base();
    let (r_rk4, profit_rk4) = run(1.0, 1.0, DEFAULT_DT);
    let (_, r, _, spent) = euler_oracle(&p, 1.0, 1.0, 1e-4);
    eprintln!("rk4 profit {profit_rk4:.12} oracle {:.12}", r - spent);
    assert!((profit_rk4 - (r - spent)).abs() < 1e-5);
    let (r_rich, spent_rich) = extrapolated(&p, 1.0, 1.0, 1e-4);
    assert!((r_rk4 - r_rich).abs() < 1e-9);
    assert!((profit_rk4 - (r_rich - spent_rich)).abs() < 1e-9);
}

#[test]
fn halving_step_changes_little() {
    for (u, v) in [(0.0, 0.0), (1.0, 1.0), (1.0, 0.0)] {
        let (a, _) = run(u, v, 0.01);
        let (b, _) = run(u, v, 0.005);
        assert!((a - b).abs() < 1e-8, "u={u} v={v}: {}", (a - b).abs());
    }
}

#[test]
fn potential_buyers_decay_at_least_exponentially() {
    let net = ClassNetwork::regular(6);
    let p = ModelParams::base();
    for (u, v) in [(0.0, 0.0), (1.0, 1.0), (0.0, 1.0)] {
        let sched = ControlSchedule::constant(1, p.horizon, 0.1, u, v).unwrap();
        let traj = integrate(&StateVector::fresh(1), &sched, &net, &p, DEFAULT_DT).unwrap();
        for (m, &t) in traj.times().iter().enumerate() {
            let bound = (-(p.alpha + p.delta) * t).exp();
            assert!(traj.class_state(m, 0).i <= bound + 1e-15);
        }
    }
}
