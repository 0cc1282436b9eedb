use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use incentive_core::model::{ModelParams, ReferralGating};
use incentive_core::scenario::ScenarioConfig;

fn incentive(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_incentive"))
        .args(args)
        .env("INCENTIVE_OUT", out)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn base_scenario_bundle() {
    let dir = tempfile::tempdir().unwrap();
    let o = incentive(&["scenario", "base"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let first = stdout(&o).lines().next().unwrap().to_string();
    assert!(first.starts_with("scenario=base "), "{first}");
    assert!(first.contains("label=both-phases"), "{first}");
    let bundle = dir.path().join("base");
    for f in ["config.toml", "trajectory.csv", "schedule.csv", "costate.csv", "summary.txt"] {
        assert!(bundle.join(f).is_file(), "{f}");
    }
    let costate = fs::read_to_string(bundle.join("costate.csv")).unwrap();
    assert_eq!(costate.lines().next(), Some("t,p1,p2,phi,psi,zeta,H"));
    assert_eq!(costate.lines().count(), 1002);
}

#[test]
fn same_seed_gives_identical_files() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        let o = incentive(&["scenario", "fig7-assortative", "--starts", "6"], d.path());
        assert_eq!(o.status.code(), Some(0));
    }
    let names = ["config.toml", "trajectory.csv", "schedule.csv", "summary.txt"];
    for f in names {
        let x = fs::read(a.path().join("fig7-assortative").join(f)).unwrap();
        let y = fs::read(b.path().join("fig7-assortative").join(f)).unwrap();
        assert_eq!(x, y, "{f}");
    }
}

#[test]
fn emitted_parameters_match_the_named_values() {
    let dir = tempfile::tempdir().unwrap();
    let cases: [(&str, ModelParams); 3] = [
        ("base", ModelParams::base()),
        (
            "fig5-payouts",
            ModelParams {
                cost_direct: 0.35,
                ..ModelParams::base()
            },
        ),
        (
            "fig6-disassortative",
            ModelParams {
                alpha: 0.1,
                beta: 0.1,
                gamma: 0.15,
                delta: 0.1,
                eps1: 0.08,
                eps2: 0.0,
                cost_referral: 0.3,
                cost_direct: 0.0,
                horizon: 10.0,
                gating: ReferralGating::Referrer,
            },
        ),
    ];
    for (name, expected) in cases {
        let out = dir.path().join(name);
        let o = incentive(
            &["simulate", "--scenario", name, "--out", out.to_str().unwrap()],
            dir.path(),
        );
        assert_eq!(o.status.code(), Some(0), "{name}");
        let cfg = ScenarioConfig::from_path(&out.join("config.toml")).unwrap();
        assert_eq!(cfg.model, expected, "{name}");
        if name == "fig6-disassortative" {
            let t = cfg.network.two_class.unwrap();
            assert_eq!((t.degree_a, t.weight_a, t.degree_b, t.p_b_given_a), (10, 0.1, 2, 0.9));
        }
    }
}

#[test]
fn payout_sweeps_change_the_label() {
    let dir = tempfile::tempdir().unwrap();
    let o = incentive(&["sweep", "--param", "c", "--values", "0.25,0.3"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let text = fs::read_to_string(dir.path().join("base-sweep-c/sweep.csv")).unwrap();
    let labels: Vec<&str> = text.lines().skip(1).map(|l| l.split(',').nth(2).unwrap()).collect();
    assert_eq!(labels, ["both-phases", "influence-and-exploit"]);

    let o = incentive(&["sweep", "--param", "c'", "--values", "0.3,0.35"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let labels: Vec<String> = stdout(&o)
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(2).unwrap().to_string())
        .collect();
    assert_eq!(labels, ["both-phases", "exploit-and-influence"]);
}

#[test]
fn empty_sweep_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let o = incentive(&["sweep", "--param", "beta", "--values"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o), "value,profit,label,solver\n");
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(incentive(&["scenario", "fig9"], dir.path()).status.code(), Some(2));
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "[model]\nalpah = 0.1\n").unwrap();
    let o = incentive(&["nlp", "--config", bad.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("alpah"));
    let o = incentive(&["sweep", "--param", "zeta", "--values", "1"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    fs::write(&bad, "[model]\nbeta = 0.99\neps1 = 0.05\n").unwrap();
    let o = incentive(&["simulate", "--config", bad.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn config_file_scenario() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("beta.toml");
    fs::write(&path, "[model]\nbeta = 0.13\n\n[solver]\nsolver = \"fbs\"\n").unwrap();
    let o = incentive(&["scenario", path.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("label=influence-and-exploit solver=fbs"));
}

#[test]
fn simulate_reads_a_schedule() {
    let dir = tempfile::tempdir().unwrap();
    let o = incentive(&["nlp", "--starts", "4"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let profit = stdout(&o)
        .split_whitespace()
        .find_map(|w| w.strip_prefix("profit="))
        .unwrap()
        .to_string();
    let sched = dir.path().join("base-nlp/schedule.csv");
    let o = incentive(&["simulate", "--schedule", sched.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o).trim(), format!("profit={profit}"));
}

#[test]
fn lemma_tolerance_negative_control() {
    let dir = tempfile::tempdir().unwrap();
    let o = incentive(&["pmp"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let o = incentive(&["pmp", "--h-tol", "1e-9"], dir.path());
    assert_eq!(o.status.code(), Some(4));
    assert!(stdout(&o).contains("hamiltonian-constant     FAIL"));
}

#[test]
fn validate_without_abm() {
    let dir = tempfile::tempdir().unwrap();
    let o = incentive(&["validate", "--skip-abm"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let text = stdout(&o);
    assert!(text.contains("SKIP [5]"));
    assert_eq!(text.lines().filter(|l| l.starts_with("PASS")).count(), 7);

    let o = incentive(&["validate", "--skip-abm", "--h-tol", "1e-9"], dir.path());
    assert_eq!(o.status.code(), Some(4));
    assert!(stdout(&o).contains("FAIL [2] lemma suite"));
}

#[test]
fn abm_writes_convergence_table() {
    let dir = tempfile::tempdir().unwrap();
    let o = incentive(&["abm", "--sizes", "200,800", "--replicas", "4"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let text = fs::read_to_string(dir.path().join("base-abm/convergence.csv")).unwrap();
    assert!(text.starts_with("# seed=42"));
    assert_eq!(text.lines().count(), 4);
    assert!(dir.path().join("base-abm/chain.csv").is_file());
}
