//! Randomized invariants of trajectories, configs and the agent chain.

use proptest::prelude::*;

use incentive_core::abm::{check_chain_params, run_replica, sample_graph};
use incentive_core::integrate::{integrate, profit, schedule_profit};
use incentive_core::model::{
    balance_complete, ClassNetwork, ControlSchedule, DegreeClass, ModelParams, ReferralGating,
    StateVector,
};
use incentive_core::scenario::{ScenarioConfig, SolverChoice};
use incentive_core::seed::stream;

fn params() -> impl Strategy<Value = ModelParams> {
    (
        (0.0..0.5f64, 0.0..0.5f64, 0.0..0.5f64, 0.0..0.5f64),
        (0.0..0.3f64, 0.0..0.3f64, 0.0..1.0f64, 0.0..1.0f64),
        prop::bool::ANY,
    )
        .prop_map(|((alpha, beta, gamma, delta), (eps1, eps2, c, cp), referrer)| ModelParams {
            alpha,
            beta,
            gamma,
            delta,
            eps1,
            eps2,
            cost_referral: c,
            cost_direct: cp,
            horizon: 5.0,
            gating: if referrer {
                ReferralGating::Referrer
            } else {
                ReferralGating::Buyer
            },
        })
}

fn network() -> impl Strategy<Value = ClassNetwork> {
    prop_oneof![
        (1u32..12).prop_map(ClassNetwork::regular),
        (2u32..12, 1u32..6, 0.05..0.5f64, 0.0..1.0f64).prop_filter_map(
            "balance infeasible",
            |(ka, kb, wa, pba)| {
                balance_complete(
                    DegreeClass { degree: ka, weight: wa },
                    DegreeClass { degree: kb, weight: 1.0 - wa },
                    pba,
                )
                .ok()
            }
        ),
    ]
}

fn schedule(classes: usize, seed: u64, binary: bool) -> ControlSchedule {
    use rand::Rng;
    let mut rng = stream(seed, "property-schedule", 0);
    let mut sig = || -> Vec<Vec<f64>> {
        (0..classes)
            .map(|_| {
                (0..50)
                    .map(|_| {
                        let x: f64 = rng.random();
                        if binary { x.round() } else { x }
                    })
                    .collect()
            })
            .collect()
    };
    let u = sig();
    let v = sig();
    ControlSchedule { step: 0.1, u, v }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn trajectories_stay_on_the_simplex_and_decay(
        p in params(),
        net in network(),
        seed in any::<u64>(),
        binary in prop::bool::ANY,
    ) {
        let k = net.len();
        let sched = schedule(k, seed, binary);
        let x0 = StateVector::fresh(k);
        let traj = integrate(&x0, &sched, &net, &p, 0.01).unwrap();
        for m in 0..traj.len() {
            let t = traj.times()[m];
            for c in 0..k {
                let s = traj.class_state(m, c);
                prop_assert!((s.i + s.r + s.theta - 1.0).abs() <= 1e-10);
                prop_assert!(s.i <= (-(p.alpha + p.delta) * t).exp() + 1e-12);
                if m > 0 {
                    let q = traj.class_state(m - 1, c);
                    prop_assert!(s.i <= q.i + 1e-15);
                    prop_assert!(s.r >= q.r - 1e-15);
                    prop_assert!(s.theta >= q.theta - 1e-15);
                }
            }
            if m > 0 {
                prop_assert!(traj.cost_referral(m) >= traj.cost_referral(m - 1));
                prop_assert!(traj.cost_direct(m) >= traj.cost_direct(m - 1));
            }
        }
        let direct = schedule_profit(&x0, &sched, &net, &p, 0.01).unwrap();
        prop_assert!((direct - profit(&traj, &net)).abs() <= 1e-12);
    }

    #[test]
    fn configs_round_trip_through_toml(
        p in params(),
        dt_div in 1usize..20,
        starts in 1usize..100,
        seed in any::<u64>(),
        choice in 0usize..4,
    ) {
        let mut cfg = ScenarioConfig { model: p, ..ScenarioConfig::default() };
        cfg.solver.dt = 0.1 / dt_div as f64;
        cfg.solver.multistarts = starts;
        cfg.solver.seed = seed;
        cfg.solver.solver = [
            SolverChoice::Fbs,
            SolverChoice::SwitchOpt,
            SolverChoice::Nlp,
            SolverChoice::All,
        ][choice];
        let back = ScenarioConfig::from_toml(&cfg.to_toml()).unwrap();
        prop_assert_eq!(back, cfg);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn sampled_graphs_realize_class_degrees(net in network(), seed in any::<u64>()) {
        let n = 400;
        let mut rng = stream(seed, "abm-graph", 0);
        match sample_graph(&net, n, &mut rng) {
            Ok(g) => {
                for a in 0..g.len() {
                    let want = net.classes()[g.class_of(a)].degree as usize;
                    prop_assert_eq!(g.degree(a), want);
                    let nb = g.neighbors(a);
                    prop_assert!(!nb.contains(&(a as u32)));
                    let mut sorted = nb.to_vec();
                    sorted.sort_unstable();
                    sorted.dedup();
                    prop_assert_eq!(sorted.len(), nb.len());
                }
            }
            Err(e) => prop_assert!(
                matches!(e, incentive_core::Error::GraphConstruction(_)),
                "{e}"
            ),
        }
    }

    #[test]
    fn chain_counts_conserve_and_absorb(
        p in params().prop_filter("slot probabilities exceed 1", |p| check_chain_params(p).is_ok()),
        seed in any::<u64>(),
    ) {
        let net = ClassNetwork::regular(4);
        let sched = schedule(1, seed, true);
        let (g, out) = run_replica(&net, &p, &sched, &StateVector::fresh(1), 200, seed, 0).unwrap();
        let size = g.class_sizes()[0];
        let c = out.final_state.counts[0];
        prop_assert_eq!(c[0] + c[1] + c[2], size);
        for w in out.fractions.windows(2) {
            prop_assert!(w[1][0].i <= w[0][0].i);
            prop_assert!(w[1][0].r >= w[0][0].r);
            prop_assert!(w[1][0].theta >= w[0][0].theta);
        }
    }
}
