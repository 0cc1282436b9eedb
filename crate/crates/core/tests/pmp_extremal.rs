//! Maximum-principle solutions of the single-class problem.

use incentive_core::gradient::profit_gradient;
use incentive_core::integrate::{integrate, profit, DEFAULT_DT};
use incentive_core::model::{ClassNetwork, ModelParams, StateVector};
use incentive_core::pmp::{
    fbs_solve, refine_extremal, verify_lemmas, FbsOptions, FbsStatus, LemmaTolerances,
};

fn variants() -> Vec<(&'static str, ModelParams)> {
    let b = ModelParams::base();
    vec![
        ("base", b),
        ("beta", ModelParams { beta: 0.13, ..b }),
        ("alpha", ModelParams { alpha: 0.09, ..b }),
        (
            "payouts-a",
            ModelParams {
                cost_referral: 0.3,
                cost_direct: 0.3,
                ..b
            },
        ),
        ("payouts-b", ModelParams { cost_direct: 0.35, ..b }),
    ]
}

fn on_intervals(s: &[f64]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = None;
    for (n, &x) in s.iter().enumerate() {
        match (x > 0.5, start) {
            (true, None) => start = Some(n),
            (false, Some(a)) => {
                out.push((a, n));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(a) = start {
        out.push((a, s.len()));
    }
    out
}

#[test]
fn sweep_converges_with_figure_shapes() {
    let net = ClassNetwork::regular(6);
    let x0 = StateVector::fresh(1);
    for (name, p) in variants() {
        let res = fbs_solve(&x0, &net, &p, &FbsOptions::default()).unwrap();
        assert_eq!(res.status, FbsStatus::Converged, "{name}");
        let u = on_intervals(&res.schedule.u[0]);
        let v = on_intervals(&res.schedule.v[0]);
        let n = res.schedule.intervals();
        assert!(u.len() <= 2 && v.len() <= 2, "{name}: {u:?} {v:?}");
        // every variant ends with both programs on
        assert_eq!(u.last().unwrap().1, n, "{name}");
        assert_eq!(v.last().unwrap().1, n, "{name}");
        match name {
            "base" => {
                assert_eq!((u.len(), v.len()), (2, 2));
                assert_eq!((u[0].0, v[0].0), (0, 0));
            }
            "beta" | "payouts-a" => {
                assert_eq!(u.len(), 1);
                assert!(u[0].0 >= 70 * n / 100, "{name}: {u:?}");
                assert_eq!(v[0].0, 0);
            }
            "alpha" | "payouts-b" => {
                assert_eq!(v.len(), 1);
                assert!(v[0].0 >= 70 * n / 100, "{name}: {v:?}");
                assert_eq!(u[0].0, 0);
            }
            _ => unreachable!(),
        }
        // reported profit reproduces
        let traj = integrate(&x0, &res.schedule, &net, &p, DEFAULT_DT).unwrap();
        assert!((profit(&traj, &net) - res.profit).abs() < 1e-12);
    }
}

#[test]
fn refined_extremals_satisfy_every_lemma() {
    let net = ClassNetwork::regular(6);
    let x0 = StateVector::fresh(1);
    for (name, p) in variants() {
        let res = fbs_solve(&x0, &net, &p, &FbsOptions::default()).unwrap();
        let ext = refine_extremal(&x0, &net, &p, &res.costate, DEFAULT_DT, 200).unwrap();
        assert!(ext.converged, "{name}: shift {}", ext.shift);
        let report = verify_lemmas(&ext.trajectory, &ext.costate, &LemmaTolerances::default());
        assert!(report.passed(), "{name}\n{report}");
        // exact switching can only help, and not by much
        assert!(ext.profit >= res.profit - 1e-9, "{name}");
        assert!(ext.profit - res.profit < 1e-4, "{name}");
        assert!(ext.referral.on_intervals(p.horizon).len() <= 2);
        assert!(ext.direct.on_intervals(p.horizon).len() <= 2);
    }
}

#[test]
fn controls_follow_switching_signs() {
    let net = ClassNetwork::regular(6);
    let x0 = StateVector::fresh(1);
    let p = ModelParams::base();
    let res = fbs_solve(&x0, &net, &p, &FbsOptions::default()).unwrap();
    let ext = refine_extremal(&x0, &net, &p, &res.costate, DEFAULT_DT, 200).unwrap();
    let cs = &ext.costate;
    let mut checked = 0;
    for m in 0..cs.len() - 1 {
        let (u, v) = ext.trajectory.controls(m);
        if cs.phi[m].abs() > 1e-6 {
            assert_eq!(u[0], if cs.phi[m] > 0.0 { 1.0 } else { 0.0 }, "t={}", cs.times[m]);
            checked += 1;
        }
        if cs.psi[m].abs() > 1e-6 {
            assert_eq!(v[0], if cs.psi[m] > 0.0 { 1.0 } else { 0.0 }, "t={}", cs.times[m]);
        }
    }
    assert!(checked > 900);
}

#[test]
fn grid_solution_violates_constancy_only_through_switch_jumps() {
    // Along any fixed control, H is conserved; only switches move it.
    let net = ClassNetwork::regular(6);
    let x0 = StateVector::fresh(1);
    let p = ModelParams::base();
    let res = fbs_solve(&x0, &net, &p, &FbsOptions::default()).unwrap();
    let cs = &res.costate;
    for m in 0..cs.len() - 2 {
        let (u0, v0) = res.trajectory.controls(m);
        let (u1, v1) = res.trajectory.controls(m + 1);
        if u0 == u1 && v0 == v1 {
            let rel = (cs.hamiltonian[m + 1] - cs.hamiltonian[m]).abs() / cs.hamiltonian[m];
            assert!(rel < 1e-8, "t={} rel={rel:e}", cs.times[m]);
        }
    }
}

#[test]
fn continuous_costates_match_discrete_adjoint() {
    // The discrete adjoint of the augmented state relates to the co-states
    // through p1 = lambda_i - lambda_theta and p2 = lambda_r - lambda_theta.
    let net = ClassNetwork::regular(6);
    let x0 = StateVector::fresh(1);
    for (name, p) in variants() {
        let res = fbs_solve(&x0, &net, &p, &FbsOptions::default()).unwrap();
        let g = profit_gradient(&x0, &res.schedule, &net, &p, DEFAULT_DT).unwrap();
        let cs = &res.costate;
        let mut worst = 0.0f64;
        for (m, lam) in g.adjoint.iter().enumerate() {
            let d1 = (lam[0] - lam[2]) - cs.p1[m];
            let d2 = (lam[1] - lam[2]) - cs.p2[m];
            worst = worst.max(d1.abs()).max(d2.abs());
            // the spending adjoints stay at -1
            assert_eq!(lam[3], -1.0);
            assert_eq!(lam[4], -1.0);
        }
        assert!(worst < 1e-8, "{name}: {worst:e}");
    }
}

#[test]
fn costate_csv_layout() {
    let net = ClassNetwork::regular(6);
    let p = ModelParams::base();
    let res = fbs_solve(&StateVector::fresh(1), &net, &p, &FbsOptions::default()).unwrap();
    let mut buf = Vec::new();
    res.costate.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("t,p1,p2,phi,psi,zeta,H"));
    assert_eq!(lines.clone().count(), 1001);
    let last: Vec<&str> = lines.last().unwrap().split(',').collect();
    assert_eq!(&last[..3], &["10", "0", "1"]);
}
