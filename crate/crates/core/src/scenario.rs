//! Scenario configuration, the named scenarios and the run drivers behind
//! the command-line tool.
//!
//! A scenario is a TOML document with five optional sections:
//!
//! ```toml
//! [model]           # alpha, beta, gamma, delta, eps1, eps2,
//!                   # cost_referral, cost_direct, horizon, gating
//! [network]         # degree = 6
//!                   # or classes = [{ degree, weight }, ...] and mixing
//!                   # or two_class = { degree_a, weight_a, degree_b, p_b_given_a }
//! [initial]         # i0, r0, theta0: one entry per class
//! [solver]          # dt, control_dt, multistarts, switch_starts, seed, solver
//! [abm]             # sizes, replicas
//! ```
//!
//! Omitted fields take the base-scenario defaults. Unknown keys are errors.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::abm::{compare_abm_ode, run_replica, ConvergenceReport};
use crate::csvfmt::sig12;
use crate::error::{Error, Result};
use crate::integrate::{integrate, profit, Trajectory, DEFAULT_CONTROL_DT, DEFAULT_DT};
use crate::model::{
    balance_complete, ClassNetwork, ClassState, ControlSchedule, DegreeClass, ModelParams,
    ReferralGating, StateVector,
};
use crate::optimize::{
    classify, nlp_solve, optimize_switch_times, write_schedule_csv, NlpOptions,
    OptimizationResult, Solver, SolveStatus, StrategyLabel, SwitchOptions, DEFAULT_NLP_STARTS,
    DEFAULT_SWITCH_STARTS,
};
use crate::pmp::{
    costate_sweep, fbs_solve, refine_extremal, verify_lemmas, Extremal, FbsOptions, FbsResult,
    FbsStatus, LemmaReport, LemmaTolerances,
};
use crate::seed::DEFAULT_SEED;

/// Degree of the single class when the network section is omitted.
pub const DEFAULT_DEGREE: u32 = 6;

/// Names accepted by [`named`].
pub const SCENARIOS: [&str; 7] = [
    "base",
    "fig2-beta013",
    "fig3-alpha009",
    "fig4-payouts",
    "fig5-payouts",
    "fig6-disassortative",
    "fig7-assortative",
];

/// Iteration cap for switch refinement after a sweep.
const REFINE_ITERS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TwoClass {
    pub degree_a: u32,
    pub weight_a: f64,
    pub degree_b: u32,
    /// `P(B|A)`; `P(A|B)` follows from the balance equation.
    pub p_b_given_a: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub degree: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub classes: Option<Vec<DegreeClass>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mixing: Option<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub two_class: Option<TwoClass>,
}

impl NetworkConfig {
    pub fn build(&self) -> Result<ClassNetwork> {
        match (self.degree, &self.classes, &self.mixing, &self.two_class) {
            (None, None, None, None) => Ok(ClassNetwork::regular(DEFAULT_DEGREE)),
            (Some(d), None, None, None) => {
                let net = ClassNetwork::regular(d);
                net.validate()?;
                Ok(net)
            }
            (None, Some(c), Some(m), None) => ClassNetwork::new(c.clone(), m.clone()),
            (None, None, None, Some(t)) => balance_complete(
                DegreeClass {
                    degree: t.degree_a,
                    weight: t.weight_a,
                },
                DegreeClass {
                    degree: t.degree_b,
                    weight: 1.0 - t.weight_a,
                },
                t.p_b_given_a,
            ),
            _ => Err(Error::Config(
                "network: give exactly one of `degree`, `classes` with `mixing`, or `two_class`"
                    .into(),
            )),
        }
    }
}

/// Per-class initial fractions. Empty lists mean everyone starts as a
/// potential buyer; `r0` and `theta0` default to zero when only `i0` is set.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InitialConfig {
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub i0: Vec<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub r0: Vec<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub theta0: Vec<f64>,
}

impl InitialConfig {
    pub fn build(&self, classes: usize) -> Result<StateVector> {
        if self.i0.is_empty() && self.r0.is_empty() && self.theta0.is_empty() {
            return Ok(StateVector::fresh(classes));
        }
        let pick = |v: &[f64], what: &'static str| -> Result<Vec<f64>> {
            match v.len() {
                0 => Ok(vec![0.0; classes]),
                n if n == classes => Ok(v.to_vec()),
                n => Err(Error::DimensionMismatch {
                    what,
                    expected: classes,
                    found: n,
                }),
            }
        };
        let i = pick(&self.i0, "initial i0 entries")?;
        let r = pick(&self.r0, "initial r0 entries")?;
        let th = pick(&self.theta0, "initial theta0 entries")?;
        StateVector::new(
            (0..classes)
                .map(|k| ClassState::new(i[k], r[k], th[k]))
                .collect(),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverChoice {
    Fbs,
    SwitchOpt,
    Nlp,
    /// Every solver that applies: the sweep only for a single class.
    #[default]
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub dt: f64,
    pub control_dt: f64,
    /// Starts of the relaxed NLP.
    pub multistarts: usize,
    /// Starts of the switching-time search.
    pub switch_starts: usize,
    pub seed: u64,
    pub solver: SolverChoice,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            dt: DEFAULT_DT,
            control_dt: DEFAULT_CONTROL_DT,
            multistarts: DEFAULT_NLP_STARTS,
            switch_starts: DEFAULT_SWITCH_STARTS,
            seed: DEFAULT_SEED,
            solver: SolverChoice::All,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AbmConfig {
    /// Population sizes, increasing.
    pub sizes: Vec<usize>,
    pub replicas: usize,
}

impl Default for AbmConfig {
    fn default() -> Self {
        Self {
            sizes: vec![1000, 10000],
            replicas: 50,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub model: ModelParams,
    pub network: NetworkConfig,
    pub initial: InitialConfig,
    pub solver: SolverConfig,
    pub abm: AbmConfig,
}

/// A validated problem instance.
#[derive(Debug, Clone)]
pub struct Instance {
    pub params: ModelParams,
    pub net: ClassNetwork,
    pub x0: StateVector,
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario configs serialize")
    }

    pub fn build(&self) -> Result<Instance> {
        self.model.validate()?;
        let net = self.network.build()?;
        let x0 = self.initial.build(net.len())?;
        if !(self.solver.dt > 0.0 && self.solver.control_dt > 0.0) {
            return Err(Error::Config("solver steps must be positive".into()));
        }
        Ok(Instance {
            params: self.model,
            net,
            x0,
        })
    }

    /// Solvers run by [`run_scenario`] for this configuration.
    pub fn solvers(&self, classes: usize) -> Vec<Solver> {
        match self.solver.solver {
            SolverChoice::Fbs => vec![Solver::Sweep],
            SolverChoice::SwitchOpt => vec![Solver::SwitchTimes],
            SolverChoice::Nlp => vec![Solver::Nlp],
            SolverChoice::All if classes == 1 => {
                vec![Solver::Sweep, Solver::SwitchTimes, Solver::Nlp]
            }
            SolverChoice::All => vec![Solver::SwitchTimes, Solver::Nlp],
        }
    }

    /// Sets one scalar field by name. Accepts the model field names, `c`
    /// and `c'` for the pay-outs, `p_b_given_a` for a two-class network, and
    /// the solver steps.
    pub fn set(&mut self, name: &str, value: f64) -> Result<()> {
        let m = &mut self.model;
        match name {
            "alpha" => m.alpha = value,
            "beta" => m.beta = value,
            "gamma" => m.gamma = value,
            "delta" => m.delta = value,
            "eps1" => m.eps1 = value,
            "eps2" => m.eps2 = value,
            "c" | "cost_referral" => m.cost_referral = value,
            "c'" | "c_prime" | "cost_direct" => m.cost_direct = value,
            "horizon" | "T" => m.horizon = value,
            "dt" => self.solver.dt = value,
            "control_dt" => self.solver.control_dt = value,
            "p_b_given_a" => match &mut self.network.two_class {
                Some(t) => t.p_b_given_a = value,
                None => {
                    return Err(Error::Config(
                        "p_b_given_a needs a two_class network".into(),
                    ))
                }
            },
            _ => return Err(Error::Config(format!("unknown sweep parameter `{name}`"))),
        }
        Ok(())
    }
}

fn with_model(f: impl FnOnce(&mut ModelParams)) -> ScenarioConfig {
    let mut cfg = ScenarioConfig::default();
    f(&mut cfg.model);
    cfg
}

fn two_class_referral(p_b_given_a: f64) -> ScenarioConfig {
    let mut cfg = with_model(|m| {
        *m = ModelParams {
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
        }
    });
    cfg.network.two_class = Some(TwoClass {
        degree_a: 10,
        weight_a: 0.1,
        degree_b: 2,
        p_b_given_a,
    });
    cfg.solver.solver = SolverChoice::Nlp;
    cfg
}

/// The named scenarios.
pub fn named(name: &str) -> Result<ScenarioConfig> {
    Ok(match name {
        "base" => ScenarioConfig::default(),
        "fig2-beta013" => with_model(|m| m.beta = 0.13),
        "fig3-alpha009" => with_model(|m| m.alpha = 0.09),
        "fig4-payouts" => with_model(|m| {
            m.cost_referral = 0.3;
            m.cost_direct = 0.3;
        }),
        "fig5-payouts" => with_model(|m| {
            m.cost_referral = 0.25;
            m.cost_direct = 0.35;
        }),
        "fig6-disassortative" => two_class_referral(0.9),
        "fig7-assortative" => two_class_referral(0.1),
        _ => return Err(Error::UnknownScenario(name.to_string())),
    })
}

/// A scenario name or a path to a TOML file.
pub fn resolve(name_or_path: &str) -> Result<ScenarioConfig> {
    if SCENARIOS.contains(&name_or_path) {
        return named(name_or_path);
    }
    let path = Path::new(name_or_path);
    if path.is_file() {
        return ScenarioConfig::from_path(path);
    }
    Err(Error::UnknownScenario(name_or_path.to_string()))
}

/// Reads the schedule CSV written by [`write_schedule_csv`].
pub fn read_schedule_csv(text: &str) -> Result<ControlSchedule> {
    let bad = |msg: String| Error::Config(format!("schedule csv: {msg}"));
    let mut lines = text.lines().filter(|l| !l.trim().is_empty() && !l.starts_with('#'));
    let header: Vec<&str> = lines
        .next()
        .ok_or_else(|| bad("empty".into()))?
        .split(',')
        .map(str::trim)
        .collect();
    if header.first() != Some(&"t") || header.len() < 3 || header.len().is_multiple_of(2) {
        return Err(bad("expected header t,u_0,v_0,...".into()));
    }
    let classes = (header.len() - 1) / 2;
    let mut times = Vec::new();
    let mut u = vec![Vec::new(); classes];
    let mut v = vec![Vec::new(); classes];
    for (n, line) in lines.enumerate() {
        let fields: Vec<f64> = line
            .split(',')
            .map(|f| f.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| bad(format!("row {}: {e}", n + 1)))?;
        if fields.len() != header.len() {
            return Err(bad(format!("row {} has {} fields", n + 1, fields.len())));
        }
        times.push(fields[0]);
        for k in 0..classes {
            u[k].push(fields[1 + 2 * k]);
            v[k].push(fields[2 + 2 * k]);
        }
    }
    if times.len() < 2 {
        return Err(bad("need at least two rows".into()));
    }
    let step: f64 = sig12(times[1] - times[0]).parse().expect("formatted float");
    Ok(ControlSchedule { step, u, v })
}

/// Best schedule of one solver, with the line reported for it.
#[derive(Debug, Clone)]
pub struct SolverRun {
    pub solver: Solver,
    pub schedule: ControlSchedule,
    pub profit: f64,
    pub labels: Vec<StrategyLabel>,
    pub converged: bool,
    pub line: String,
}

fn label_string(labels: &[StrategyLabel]) -> String {
    labels
        .iter()
        .map(|l| l.to_string())
        .collect::<Vec<_>>()
        .join("/")
}

impl SolverRun {
    fn from_fbs(r: &FbsResult) -> Self {
        let labels = classify(&r.schedule).expect("sweep schedules are binary");
        let converged = r.status == FbsStatus::Converged;
        let line = format!(
            "profit={} label={} solver={} iterations={} status={}",
            sig12(r.profit),
            label_string(&labels),
            Solver::Sweep,
            r.iterations,
            if converged { "converged" } else { "max-iterations" }
        );
        Self {
            solver: Solver::Sweep,
            schedule: r.schedule.clone(),
            profit: r.profit,
            labels,
            converged,
            line,
        }
    }

    fn from_result(r: &OptimizationResult) -> Self {
        Self {
            solver: r.solver,
            schedule: r.schedule.clone(),
            profit: r.profit,
            labels: r.labels(),
            converged: r.diagnostics.status != Some(SolveStatus::StepCollapse),
            line: r.summary_line(),
        }
    }
}

/// Runs one solver on `inst` under the solver settings of `cfg`.
pub fn solve(cfg: &ScenarioConfig, inst: &Instance, solver: Solver) -> Result<SolverRun> {
    let s = &cfg.solver;
    Ok(match solver {
        Solver::Sweep => SolverRun::from_fbs(&fbs_solve(
            &inst.x0,
            &inst.net,
            &inst.params,
            &FbsOptions {
                dt: s.dt,
                control_dt: s.control_dt,
                ..FbsOptions::default()
            },
        )?),
        Solver::SwitchTimes => SolverRun::from_result(&optimize_switch_times(
            &inst.x0,
            &inst.net,
            &inst.params,
            &SwitchOptions {
                starts: s.switch_starts,
                seed: s.seed,
                dt: s.dt,
                control_dt: s.control_dt,
                ..SwitchOptions::default()
            },
        )?),
        Solver::Nlp => SolverRun::from_result(&nlp_solve(
            &inst.x0,
            &inst.net,
            &inst.params,
            &NlpOptions {
                starts: s.multistarts,
                seed: s.seed,
                dt: s.dt,
                control_dt: s.control_dt,
                ..NlpOptions::default()
            },
        )?),
    })
}

/// Output of [`run_scenario`].
#[derive(Debug, Clone)]
pub struct ScenarioRun {
    pub name: String,
    pub runs: Vec<SolverRun>,
    /// Index into `runs` of the run whose schedule is written out: the NLP
    /// when it ran, otherwise the only solver.
    pub primary: usize,
    pub summary: String,
    pub files: Vec<PathBuf>,
}

impl ScenarioRun {
    pub fn converged(&self) -> bool {
        self.runs.iter().all(|r| r.converged)
    }
}

fn create(dir: &Path, name: &str, files: &mut Vec<PathBuf>) -> Result<std::io::BufWriter<fs::File>> {
    let path = dir.join(name);
    let f = fs::File::create(&path)?;
    files.push(path);
    Ok(std::io::BufWriter::new(f))
}

/// Writes `config.toml`, `trajectory.csv`, `schedule.csv`, `costate.csv`
/// (single class only) and `summary.txt` for the schedule of `run`.
fn write_bundle(
    cfg: &ScenarioConfig,
    inst: &Instance,
    sched: &ControlSchedule,
    summary: &str,
    out: &Path,
) -> Result<(Trajectory, Vec<PathBuf>)> {
    fs::create_dir_all(out)?;
    let mut files = Vec::new();
    create(out, "config.toml", &mut files)?.write_all(cfg.to_toml().as_bytes())?;
    let traj = integrate(&inst.x0, sched, &inst.net, &inst.params, cfg.solver.dt)?;
    let mut w = create(out, "trajectory.csv", &mut files)?;
    traj.write_csv(&mut w)?;
    w.flush()?;
    let mut w = create(out, "schedule.csv", &mut files)?;
    write_schedule_csv(sched, &mut w)?;
    w.flush()?;
    if inst.net.len() == 1 {
        let cs = costate_sweep(&traj, sched, &inst.params)?;
        let mut w = create(out, "costate.csv", &mut files)?;
        cs.write_csv(&mut w)?;
        w.flush()?;
    }
    create(out, "summary.txt", &mut files)?.write_all(summary.as_bytes())?;
    Ok((traj, files))
}

/// Builds the instance, runs the configured solvers and writes the output
/// bundle into `out`. The first summary line classifies the primary run.
pub fn run_scenario(name: &str, cfg: &ScenarioConfig, out: &Path) -> Result<ScenarioRun> {
    let inst = cfg.build()?;
    let runs = cfg
        .solvers(inst.net.len())
        .into_iter()
        .map(|s| solve(cfg, &inst, s))
        .collect::<Result<Vec<_>>>()?;
    let primary = runs
        .iter()
        .position(|r| r.solver == Solver::Nlp)
        .unwrap_or(0);
    let p = &runs[primary];
    let mut summary = format!(
        "scenario={name} profit={} label={} solver={} seed={}\n",
        sig12(p.profit),
        label_string(&p.labels),
        p.solver,
        cfg.solver.seed
    );
    for r in &runs {
        summary.push_str(&r.line);
        summary.push('\n');
    }
    let (_, files) = write_bundle(cfg, &inst, &p.schedule, &summary, out)?;
    Ok(ScenarioRun {
        name: name.to_string(),
        runs,
        primary,
        summary,
        files,
    })
}

/// Output of [`run_simulation`].
#[derive(Debug, Clone)]
pub struct Simulation {
    pub trajectory: Trajectory,
    pub profit: f64,
    pub files: Vec<PathBuf>,
}

/// Integrates the scenario under a given schedule and writes the bundle.
pub fn run_simulation(
    cfg: &ScenarioConfig,
    sched: &ControlSchedule,
    out: &Path,
) -> Result<Simulation> {
    let inst = cfg.build()?;
    let traj = integrate(&inst.x0, sched, &inst.net, &inst.params, cfg.solver.dt)?;
    let pr = profit(&traj, &inst.net);
    let summary = format!("profit={} seed={}\n", sig12(pr), cfg.solver.seed);
    let (trajectory, files) = write_bundle(cfg, &inst, sched, &summary, out)?;
    Ok(Simulation {
        trajectory,
        profit: pr,
        files,
    })
}

/// Output of [`run_pmp`].
#[derive(Debug, Clone)]
pub struct PmpRun {
    pub sweep: SolverRun,
    pub extremal: Extremal,
    pub lemmas: LemmaReport,
    pub files: Vec<PathBuf>,
}

/// Forward-backward sweep, switch refinement and the lemma suite. Writes
/// the grid bundle plus `extremal_costate.csv`, `extremal_trajectory.csv`
/// and `lemmas.txt`.
pub fn run_pmp(cfg: &ScenarioConfig, tol: &LemmaTolerances, out: &Path) -> Result<PmpRun> {
    let inst = cfg.build()?;
    let s = &cfg.solver;
    let fbs = fbs_solve(
        &inst.x0,
        &inst.net,
        &inst.params,
        &FbsOptions {
            dt: s.dt,
            control_dt: s.control_dt,
            ..FbsOptions::default()
        },
    )?;
    let extremal = refine_extremal(
        &inst.x0,
        &inst.net,
        &inst.params,
        &fbs.costate,
        s.dt,
        REFINE_ITERS,
    )?;
    let lemmas = verify_lemmas(&extremal.trajectory, &extremal.costate, tol);
    let sweep = SolverRun::from_fbs(&fbs);
    let mut summary = format!("{}\n", sweep.line);
    let pattern = |name: &str, p: &crate::pmp::SwitchPattern| {
        let spans: Vec<String> = p
            .on_intervals(inst.params.horizon)
            .iter()
            .map(|(a, b)| format!("[{},{}]", sig12(*a), sig12(*b)))
            .collect();
        format!("{name} on {}\n", if spans.is_empty() { "never".into() } else { spans.join(" ") })
    };
    summary.push_str(&format!(
        "refined profit={} iterations={} shift={:.3e} converged={}\n",
        sig12(extremal.profit),
        extremal.iterations,
        extremal.shift,
        extremal.converged
    ));
    summary.push_str(&pattern("u", &extremal.referral));
    summary.push_str(&pattern("v", &extremal.direct));
    let (_, mut files) = write_bundle(cfg, &inst, &fbs.schedule, &summary, out)?;
    let mut w = create(out, "extremal_trajectory.csv", &mut files)?;
    extremal.trajectory.write_csv(&mut w)?;
    w.flush()?;
    let mut w = create(out, "extremal_costate.csv", &mut files)?;
    extremal.costate.write_csv(&mut w)?;
    w.flush()?;
    create(out, "lemmas.txt", &mut files)?.write_all(lemmas.to_string().as_bytes())?;
    Ok(PmpRun {
        sweep,
        extremal,
        lemmas,
        files,
    })
}

/// Runs one solver and writes its bundle.
pub fn run_solver(
    name: &str,
    cfg: &ScenarioConfig,
    solver: Solver,
    out: &Path,
) -> Result<ScenarioRun> {
    let inst = cfg.build()?;
    let run = solve(cfg, &inst, solver)?;
    let summary = format!("scenario={name} {}\n", run.line);
    let (_, files) = write_bundle(cfg, &inst, &run.schedule, &summary, out)?;
    Ok(ScenarioRun {
        name: name.to_string(),
        runs: vec![run],
        primary: 0,
        summary,
        files,
    })
}

/// Output of [`run_abm`].
#[derive(Debug, Clone)]
pub struct AbmRun {
    pub report: ConvergenceReport,
    pub files: Vec<PathBuf>,
}

/// Chain-versus-ODE comparison at the configured population sizes. Writes
/// `convergence.csv` and the first replica at the largest size as
/// `chain.csv`.
pub fn run_abm(cfg: &ScenarioConfig, sched: &ControlSchedule, out: &Path) -> Result<AbmRun> {
    let inst = cfg.build()?;
    let a = &cfg.abm;
    let seed = cfg.solver.seed;
    let report = compare_abm_ode(
        &inst.net,
        &inst.params,
        sched,
        &inst.x0,
        &a.sizes,
        a.replicas,
        seed,
        Some(cfg.solver.dt),
    )?;
    fs::create_dir_all(out)?;
    let mut files = Vec::new();
    create(out, "config.toml", &mut files)?.write_all(cfg.to_toml().as_bytes())?;
    let mut w = create(out, "convergence.csv", &mut files)?;
    report.write_csv(&mut w)?;
    w.flush()?;
    if let Some(&n) = a.sizes.last() {
        let (_, chain) = run_replica(&inst.net, &inst.params, sched, &inst.x0, n, seed, 0)?;
        let mut w = create(out, "chain.csv", &mut files)?;
        chain.write_csv(&format!("seed={seed} N={n} replica=0"), &mut w)?;
        w.flush()?;
    }
    Ok(AbmRun { report, files })
}

/// One row of a parameter sweep.
#[derive(Debug, Clone)]
pub struct SweepRow {
    pub value: f64,
    pub run: SolverRun,
}

/// The solver a sweep uses: the configured one, or the NLP for `all`.
pub fn sweep_solver(cfg: &ScenarioConfig) -> Solver {
    match cfg.solver.solver {
        SolverChoice::Fbs => Solver::Sweep,
        SolverChoice::SwitchOpt => Solver::SwitchTimes,
        SolverChoice::Nlp | SolverChoice::All => Solver::Nlp,
    }
}

/// Re-solves the scenario for each value of `param`.
pub fn sweep(cfg: &ScenarioConfig, param: &str, values: &[f64]) -> Result<Vec<SweepRow>> {
    let solver = sweep_solver(cfg);
    let mut probe = cfg.clone();
    probe.set(param, 0.0)?;
    values
        .iter()
        .map(|&value| {
            let mut c = cfg.clone();
            c.set(param, value)?;
            let inst = c.build()?;
            Ok(SweepRow {
                value,
                run: solve(&c, &inst, solver)?,
            })
        })
        .collect()
}

/// CSV `value,profit,label,solver`; labels of several classes joined by `/`.
pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], mut out: W) -> std::io::Result<()> {
    writeln!(out, "value,profit,label,solver")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{}",
            sig12(r.value),
            sig12(r.run.profit),
            label_string(&r.run.labels),
            r.run.solver
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_the_base_scenario() {
        let cfg = ScenarioConfig::from_toml("").unwrap();
        assert_eq!(cfg, named("base").unwrap());
        let inst = cfg.build().unwrap();
        assert_eq!(inst.params, ModelParams::base());
        assert_eq!(inst.net, ClassNetwork::regular(DEFAULT_DEGREE));
        assert_eq!(inst.x0, StateVector::fresh(1));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        for doc in [
            "[model]\nalpah = 0.1\n",
            "[solver]\nseeds = 1\n",
            "[network]\ndegre = 4\n",
            "[extra]\n",
            "[network]\nclasses = [{ degree = 2, weight = 1.0, w = 0 }]\nmixing = [[1.0]]\n",
        ] {
            assert!(
                matches!(ScenarioConfig::from_toml(doc), Err(Error::Config(_))),
                "{doc}"
            );
        }
    }

    #[test]
    fn round_trips_through_toml() {
        for name in SCENARIOS {
            let cfg = named(name).unwrap();
            let back = ScenarioConfig::from_toml(&cfg.to_toml()).unwrap();
            assert_eq!(back, cfg, "{name}");
        }
    }

    #[test]
    fn two_class_shorthand_completes_balance() {
        let cfg = named("fig6-disassortative").unwrap();
        let inst = cfg.build().unwrap();
        let m = inst.net.mixing();
        assert!((m[1][0] - 0.5).abs() < 1e-12);
        assert!((m[0][1] - 0.9).abs() < 1e-12);
        assert_eq!(inst.params.gating, ReferralGating::Referrer);
    }

    #[test]
    fn conflicting_network_forms_are_rejected() {
        let doc = "[network]\ndegree = 4\ntwo_class = { degree_a = 10, weight_a = 0.1, degree_b = 2, p_b_given_a = 0.9 }\n";
        let cfg = ScenarioConfig::from_toml(doc).unwrap();
        assert!(matches!(cfg.build(), Err(Error::Config(_))));
    }

    #[test]
    fn initial_lists_must_match_classes() {
        let doc = "[initial]\ni0 = [0.5, 0.5]\n";
        let cfg = ScenarioConfig::from_toml(doc).unwrap();
        assert!(matches!(cfg.build(), Err(Error::DimensionMismatch { .. })));
        let doc = "[initial]\ni0 = [0.9]\nr0 = [0.1]\n";
        let inst = ScenarioConfig::from_toml(doc).unwrap().build().unwrap();
        assert_eq!(inst.x0.0[0], ClassState::new(0.9, 0.1, 0.0));
    }

    #[test]
    fn unknown_names_and_parameters() {
        assert!(matches!(resolve("fig9"), Err(Error::UnknownScenario(_))));
        let mut cfg = ScenarioConfig::default();
        assert!(matches!(cfg.set("zeta", 1.0), Err(Error::Config(_))));
        assert!(matches!(cfg.set("p_b_given_a", 0.5), Err(Error::Config(_))));
        cfg.set("c'", 0.35).unwrap();
        assert_eq!(cfg.model.cost_direct, 0.35);
    }

    #[test]
    fn schedule_csv_round_trip() {
        let mut s = ControlSchedule::off(2, 1.0, 0.1).unwrap();
        s.u[1][3] = 1.0;
        s.v[0][9] = 1.0;
        let mut buf = Vec::new();
        write_schedule_csv(&s, &mut buf).unwrap();
        let back = read_schedule_csv(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(back.u, s.u);
        assert_eq!(back.v, s.v);
        assert!((back.step - 0.1).abs() < 1e-12);
    }

    #[test]
    fn empty_sweep_is_an_empty_table() {
        let rows = sweep(&ScenarioConfig::default(), "c", &[]).unwrap();
        assert!(rows.is_empty());
        let mut buf = Vec::new();
        write_sweep_csv(&rows, &mut buf).unwrap();
        assert_eq!(buf, b"value,profit,label,solver\n");
    }
}
