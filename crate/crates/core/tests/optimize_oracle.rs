//! Direct optimizers against brute-force and structural oracles.

use incentive_core::integrate::{integrate, profit, schedule_profit, DEFAULT_DT};
use incentive_core::model::{
    ClassNetwork, ClassSwitchTimes, ControlSchedule, ModelParams, StateVector, SwitchTimes,
};
use incentive_core::optimize::{
    classify, nlp_solve, optimize_switch_times, NlpOptions, StrategyLabel, SwitchOptions,
};
use incentive_core::Error;
use rayon::prelude::*;

fn single() -> (StateVector, ClassNetwork) {
    (StateVector::fresh(1), ClassNetwork::regular(6))
}

/// Best profit over every ordered pair of switching times on a 0.5 grid
/// for both programs.
fn grid_oracle(p: &ModelParams) -> (f64, ClassSwitchTimes) {
    let (x0, net) = single();
    let ticks: Vec<f64> = (0..=20).map(|n| n as f64 * 0.5).collect();
    let pairs: Vec<(f64, f64)> = ticks
        .iter()
        .flat_map(|&a| ticks.iter().filter(move |&&b| b >= a).map(move |&b| (a, b)))
        .collect();
    pairs
        .par_iter()
        .map(|&(t1, t2)| {
            let mut best = (f64::NEG_INFINITY, ClassSwitchTimes::off(10.0));
            for &(t3, t4) in &pairs {
                let c = ClassSwitchTimes {
                    tau1: t1,
                    tau2: t2,
                    tau3: t3,
                    tau4: t4,
                };
                let sched = SwitchTimes(vec![c]).to_schedule(10.0, 0.1).unwrap();
                let v = schedule_profit(&x0, &sched, &net, p, DEFAULT_DT).unwrap();
                if v > best.0 {
                    best = (v, c);
                }
            }
            best
        })
        .reduce(
            || (f64::NEG_INFINITY, ClassSwitchTimes::off(10.0)),
            |a, b| if b.0 > a.0 { b } else { a },
        )
}

#[test]
fn switch_times_beat_coarse_grid_oracle_by_resolution_only() {
    let p = ModelParams::base();
    let (x0, net) = single();
    let (oracle, at) = grid_oracle(&p);
    let res = optimize_switch_times(&x0, &net, &p, &SwitchOptions::default()).unwrap();
    eprintln!("oracle {oracle:.12} at {at:?}, optimizer {:.12}", res.profit);
    // the 0.5 grid is a subset of the 0.1 grid
    assert!(res.profit >= oracle - 1e-12);
    // resolution error: what the optimum loses when its switching times are
    // moved to the nearest oracle grid point
    let t = res.switch_times.clone().unwrap().0[0];
    let coarse = |x: f64| (x * 2.0).round() / 2.0;
    let snapped = ClassSwitchTimes {
        tau1: coarse(t.tau1),
        tau2: coarse(t.tau2),
        tau3: coarse(t.tau3),
        tau4: coarse(t.tau4),
    };
    let sched = SwitchTimes(vec![snapped]).to_schedule(10.0, 0.1).unwrap();
    let resolution = res.profit - schedule_profit(&x0, &sched, &net, &p, DEFAULT_DT).unwrap();
    eprintln!("resolution error {resolution:e}");
    assert!(res.profit - oracle <= resolution + 1e-12);
    assert!(resolution < 1e-4);
    let t = res.switch_times.unwrap().0[0];
    for (a, b) in [(t.tau1, at.tau1), (t.tau2, at.tau2), (t.tau3, at.tau3), (t.tau4, at.tau4)] {
        assert!((a - b).abs() <= 0.5 + 1e-9, "{t:?} vs {at:?}");
    }
}

#[test]
fn disabled_boosts_leave_programs_off() {
    let p = ModelParams {
        eps1: 0.0,
        eps2: 0.0,
        ..ModelParams::base()
    };
    let (x0, net) = single();
    let off = ControlSchedule::off(1, 10.0, 0.1).unwrap();
    let baseline = schedule_profit(&x0, &off, &net, &p, DEFAULT_DT).unwrap();
    let sw = optimize_switch_times(
        &x0,
        &net,
        &p,
        &SwitchOptions {
            starts: 5,
            ..SwitchOptions::default()
        },
    )
    .unwrap();
    assert_eq!(sw.switch_times.as_ref().unwrap().0[0], ClassSwitchTimes::off(10.0));
    assert_eq!(sw.profit, baseline);
    let nlp = nlp_solve(
        &x0,
        &net,
        &p,
        &NlpOptions {
            starts: 5,
            ..NlpOptions::default()
        },
    )
    .unwrap();
    assert_eq!(nlp.schedule, off);
    assert_eq!(nlp.profit, baseline);
    assert_eq!(classify(&nlp.schedule).unwrap(), vec![StrategyLabel::None]);
}

#[test]
fn reported_profits_reproduce_and_beat_baseline() {
    let (x0, net) = single();
    for p in [
        ModelParams::base(),
        ModelParams {
            beta: 0.13,
            ..ModelParams::base()
        },
    ] {
        let off = ControlSchedule::off(1, 10.0, 0.1).unwrap();
        let baseline = schedule_profit(&x0, &off, &net, &p, DEFAULT_DT).unwrap();
        let sw = optimize_switch_times(&x0, &net, &p, &SwitchOptions::default()).unwrap();
        let nlp = nlp_solve(&x0, &net, &p, &NlpOptions::default()).unwrap();
        for r in [&sw, &nlp] {
            let traj = integrate(&x0, &r.schedule, &net, &p, DEFAULT_DT).unwrap();
            assert!((profit(&traj, &net) - r.profit).abs() < 1e-9);
            assert!(r.profit >= baseline - 1e-12);
            let max = r.start_profits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            assert_eq!(r.profit, max);
            assert_eq!(r.start_profits[r.best_start], max);
            assert!(r.start_profits[..r.best_start].iter().all(|&v| v < max));
        }
        assert!((sw.profit - nlp.profit).abs() < 1e-3);
        let gc = nlp.diagnostics.gradient_check.as_ref().unwrap();
        assert_eq!(gc.checked, 10);
        assert!(gc.max_rel_error < 1e-4);
    }
}

#[test]
fn optimal_profit_is_nonincreasing_in_payouts() {
    let (x0, net) = single();
    let opts = SwitchOptions {
        starts: 16,
        ..SwitchOptions::default()
    };
    for referral in [true, false] {
        let mut last: Option<(f64, ControlSchedule)> = None;
        for c in [0.2, 0.25, 0.3, 0.35, 0.4] {
            let p = if referral {
                ModelParams {
                    cost_referral: c,
                    ..ModelParams::base()
                }
            } else {
                ModelParams {
                    cost_direct: c,
                    ..ModelParams::base()
                }
            };
            let r = optimize_switch_times(&x0, &net, &p, &opts).unwrap();
            if let Some((prev, prev_sched)) = &last {
                // the cheaper optimum, repriced, bounds the dearer one exactly
                let repriced = schedule_profit(&x0, prev_sched, &net, &p, DEFAULT_DT).unwrap();
                assert!(repriced <= *prev + 1e-15);
                assert!(r.profit <= *prev + 1e-12, "c={c}: {} > {prev}", r.profit);
            }
            last = Some((r.profit, r.schedule));
        }
    }
}

#[test]
fn fixed_seed_is_deterministic_and_seeds_matter_only_through_starts() {
    let (x0, net) = single();
    let p = ModelParams::base();
    let o = NlpOptions {
        starts: 4,
        ..NlpOptions::default()
    };
    let a = nlp_solve(&x0, &net, &p, &o).unwrap();
    let b = nlp_solve(&x0, &net, &p, &o).unwrap();
    assert_eq!(a.start_profits, b.start_profits);
    assert_eq!(a.relaxed, b.relaxed);
    let s = SwitchOptions {
        starts: 4,
        ..SwitchOptions::default()
    };
    let c = optimize_switch_times(&x0, &net, &p, &s).unwrap();
    let d = optimize_switch_times(&x0, &net, &p, &s).unwrap();
    assert_eq!(c.start_profits, d.start_profits);
    assert_eq!(c.switch_times, d.switch_times);
    assert_eq!(c.summary_line(), d.summary_line());
}

#[test]
fn zero_starts_rejected() {
    let (x0, net) = single();
    let p = ModelParams::base();
    let s = SwitchOptions {
        starts: 0,
        ..SwitchOptions::default()
    };
    assert!(matches!(optimize_switch_times(&x0, &net, &p, &s), Err(Error::NoStarts)));
    let n = NlpOptions {
        starts: 0,
        ..NlpOptions::default()
    };
    assert!(matches!(nlp_solve(&x0, &net, &p, &n), Err(Error::NoStarts)));
}
