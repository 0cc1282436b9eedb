//! Agent-based runs against the mean-field ODE.

use incentive_core::abm::{compare_abm_ode, run_replica, sample_graph};
use incentive_core::integrate::{integrate, DEFAULT_DT};
use incentive_core::model::{
    balance_complete, ClassNetwork, ControlSchedule, DegreeClass, ModelParams, StateVector,
};
use incentive_core::seed::stream;

fn two_class(p_b_given_a: f64) -> ClassNetwork {
    balance_complete(
        DegreeClass { degree: 10, weight: 0.1 },
        DegreeClass { degree: 2, weight: 0.9 },
        p_b_given_a,
    )
    .unwrap()
}

#[test]
fn base_scenario_converges_to_the_ode() {
    let net = ClassNetwork::regular(6);
    let p = ModelParams::base();
    let sched = ControlSchedule::off(1, 10.0, 0.1).unwrap();
    let report = compare_abm_ode(
        &net,
        &p,
        &sched,
        &StateVector::fresh(1),
        &[1000, 10000],
        50,
        42,
        None,
    )
    .unwrap();
    let (small, large) = (&report.rows[0], &report.rows[1]);
    eprintln!(
        "N=1000 {:.5} +- {:.5}; N=10000 {:.5} +- {:.5}; profit error {:.5} {:.5}",
        small.mean_max_error,
        small.max_error_stderr,
        large.mean_max_error,
        large.max_error_stderr,
        small.profit_error,
        large.profit_error
    );
    assert!(large.mean_sup_error[0] < 0.02);
    assert!(large.mean_sup_error[0] < small.mean_sup_error[0]);
    assert!(report.flagged.is_empty());
    let mut csv = Vec::new();
    report.write_csv(&mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    assert!(text.starts_with("# seed=42"));
    assert_eq!(text.lines().count(), 4);
}

#[test]
fn pure_external_purchases_follow_exponential() {
    let net = ClassNetwork::regular(4);
    let p = ModelParams {
        alpha: 1.0,
        beta: 0.0,
        gamma: 0.0,
        delta: 0.0,
        eps1: 0.0,
        eps2: 0.0,
        ..ModelParams::base()
    };
    let sched = ControlSchedule::off(1, 10.0, 0.1).unwrap();
    let (_, out) = run_replica(&net, &p, &sched, &StateVector::fresh(1), 10000, 42, 0).unwrap();
    for (m, &t) in out.times.iter().enumerate() {
        let exact = 1.0 - (-t).exp();
        assert!((out.fractions[m][0].r - exact).abs() < 0.02, "t={t}");
    }
}

#[test]
fn referral_spend_matches_cost_integral() {
    let net = ClassNetwork::regular(6);
    let p = ModelParams::base();
    let sched = ControlSchedule::constant(1, 10.0, 0.1, 1.0, 0.0).unwrap();
    let traj = integrate(&StateVector::fresh(1), &sched, &net, &p, DEFAULT_DT).unwrap();
    let (_, out) = run_replica(&net, &p, &sched, &StateVector::fresh(1), 10000, 42, 0).unwrap();
    for (m, &t) in out.times.iter().enumerate() {
        let ode = traj.cost_referral((t / DEFAULT_DT).round() as usize);
        assert!((out.cost_referral[m] - ode).abs() < 0.02, "t={t}");
    }
    assert!(out.cost_referral.last().unwrap() > &0.0);
    assert_eq!(out.cost_direct.last(), Some(&0.0));
}

#[test]
fn sampled_two_class_mixing_matches_balance() {
    for (pba, target) in [(0.9, 0.5), (0.1, 0.1 * 10.0 * 0.1 / (2.0 * 0.9))] {
        let g = sample_graph(&two_class(pba), 10000, &mut stream(42, "abm-graph", 0)).unwrap();
        let realized = g.realized_mixing[1][0];
        assert!((realized - target).abs() < 0.02, "{pba}: {realized} vs {target}");
        for a in 0..g.len() {
            assert_eq!(g.degree(a), if g.class_of(a) == 0 { 10 } else { 2 });
        }
    }
}

#[test]
fn counts_are_conserved_and_monotone() {
    let net = two_class(0.9);
    let p = ModelParams {
        gamma: 0.15,
        eps1: 0.08,
        ..ModelParams::base()
    };
    let sched = ControlSchedule::constant(2, 10.0, 0.1, 1.0, 1.0).unwrap();
    let (g, out) = run_replica(&net, &p, &sched, &StateVector::fresh(2), 2000, 7, 3).unwrap();
    for (k, c) in out.final_state.counts.iter().enumerate() {
        assert_eq!(c[0] + c[1] + c[2], g.class_sizes()[k]);
    }
    for w in out.fractions.windows(2) {
        for k in 0..2 {
            assert!(w[1][k].i <= w[0][k].i);
            assert!(w[1][k].r >= w[0][k].r);
            assert!(w[1][k].theta >= w[0][k].theta);
        }
    }
    assert!(out.cost_referral.windows(2).all(|w| w[1] >= w[0]));
}

#[test]
fn fixed_seed_reproduces_bit_for_bit() {
    let net = ClassNetwork::regular(6);
    let p = ModelParams::base();
    let sched = ControlSchedule::constant(1, 10.0, 0.1, 1.0, 0.0).unwrap();
    let run = || run_replica(&net, &p, &sched, &StateVector::fresh(1), 3000, 11, 2).unwrap().1;
    let (a, b) = (run(), run());
    assert_eq!(a, b);
    let mut ca = Vec::new();
    let mut cb = Vec::new();
    a.write_csv("seed=11 replica=2", &mut ca).unwrap();
    b.write_csv("seed=11 replica=2", &mut cb).unwrap();
    assert_eq!(ca, cb);
    assert!(String::from_utf8(ca).unwrap().starts_with("# seed=11"));
}

#[test]
fn without_boosts_the_schedule_only_moves_spend() {
    let net = ClassNetwork::regular(6);
    let p = ModelParams {
        eps1: 0.0,
        eps2: 0.0,
        ..ModelParams::base()
    };
    let on = ControlSchedule::constant(1, 10.0, 0.1, 1.0, 1.0).unwrap();
    let off = ControlSchedule::off(1, 10.0, 0.1).unwrap();
    let x0 = StateVector::fresh(1);
    let (_, a) = run_replica(&net, &p, &on, &x0, 3000, 5, 0).unwrap();
    let (_, b) = run_replica(&net, &p, &off, &x0, 3000, 5, 0).unwrap();
    assert_eq!(a.fractions, b.fractions);
    assert_eq!(a.final_state.states, b.final_state.states);
}
