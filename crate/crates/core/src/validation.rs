//! The acceptance suite: eight checks over the named scenarios, shared by
//! the `validate` command and the acceptance test target.

use std::fmt;
use std::time::Instant;

use rand::Rng;

use crate::abm::{compare_abm_ode, sample_graph};
use crate::error::Result;
use crate::gradient::{check_gradient, FD_STEP};
use crate::integrate::{integrate, Trajectory};
use crate::model::{balance_complete, ControlSchedule, DegreeClass, SIMPLEX_TOL};
use crate::optimize::{
    crosscheck, nlp_solve, on_intervals, program_shape, CrossCheckOptions, NlpOptions,
    OptimizationResult, ProgramShape, StrategyLabel, GRADIENT_CHECK_LIMIT,
};
use crate::pmp::{fbs_solve, refine_extremal, verify_lemmas, FbsOptions, LemmaTolerances};
use crate::scenario::{named, Instance, ScenarioConfig, SCENARIOS};
use crate::seed::{stream, DEFAULT_SEED};

/// The single-class scenarios of criteria 1 and 3.
pub const SINGLE_CLASS: [&str; 5] = [
    "base",
    "fig2-beta013",
    "fig3-alpha009",
    "fig4-payouts",
    "fig5-payouts",
];

/// Largest interior-value fraction of a relaxed NLP solution.
pub const INTERIOR_LIMIT: f64 = 0.05;
/// Largest number of on-intervals per program.
pub const MAX_ON_INTERVALS: usize = 2;
/// Bound on the mean sup-norm chain error at the largest population.
pub const MEAN_FIELD_LIMIT: f64 = 0.02;
/// Bound on the realized-versus-target mixing deviation.
pub const MIXING_LIMIT: f64 = 0.02;
/// Slack on `i(t) <= i(0) exp(-(alpha + delta) t)`.
pub const DECAY_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationOptions {
    pub seed: u64,
    pub lemma: LemmaTolerances,
    pub skip_abm: bool,
    pub abm_sizes: Vec<usize>,
    pub abm_replicas: usize,
    pub graph_agents: usize,
    pub gradient_points: usize,
}

impl Default for ValidationOptions {
    fn default() -> Self {
        Self {
            seed: DEFAULT_SEED,
            lemma: LemmaTolerances::default(),
            skip_abm: false,
            abm_sizes: vec![1000, 10000],
            abm_replicas: 50,
            graph_agents: 10000,
            gradient_points: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Criterion {
    pub id: usize,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} [{}] {}: {} ({:.1} s)",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.detail,
            self.seconds
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub criteria: Vec<Criterion>,
    pub skipped: Vec<(usize, &'static str)>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.criteria.iter().all(|c| c.passed)
    }

    pub fn failed(&self) -> Vec<&Criterion> {
        self.criteria.iter().filter(|c| !c.passed).collect()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.criteria {
            writeln!(f, "{c}")?;
        }
        for (id, name) in &self.skipped {
            writeln!(f, "SKIP [{id}] {name}")?;
        }
        let failed = self.failed().len();
        writeln!(
            f,
            "{} of {} checks passed",
            self.criteria.len() - failed,
            self.criteria.len()
        )
    }
}

fn timed(
    id: usize,
    name: &'static str,
    body: impl FnOnce() -> Result<(bool, String)>,
) -> Result<Criterion> {
    let start = Instant::now();
    let (passed, detail) = body()?;
    Ok(Criterion {
        id,
        name,
        passed,
        detail,
        seconds: start.elapsed().as_secs_f64(),
    })
}

fn instance(name: &str) -> Result<(ScenarioConfig, Instance)> {
    let cfg = named(name)?;
    let inst = cfg.build()?;
    Ok((cfg, inst))
}

/// NLP solution of a named scenario at its configured settings.
pub fn solve_nlp(name: &str, seed: u64) -> Result<OptimizationResult> {
    let (cfg, inst) = instance(name)?;
    nlp_solve(
        &inst.x0,
        &inst.net,
        &inst.params,
        &NlpOptions {
            starts: cfg.solver.multistarts,
            seed,
            dt: cfg.solver.dt,
            control_dt: cfg.solver.control_dt,
            ..NlpOptions::default()
        },
    )
}

/// NLP solutions of every named scenario, in [`SCENARIOS`] order.
pub fn solve_all(seed: u64) -> Result<Vec<(&'static str, OptimizationResult)>> {
    SCENARIOS
        .iter()
        .map(|&n| Ok((n, solve_nlp(n, seed)?)))
        .collect()
}

fn find<'a>(
    results: &'a [(&'static str, OptimizationResult)],
    name: &str,
) -> Option<&'a OptimizationResult> {
    results.iter().find(|(n, _)| *n == name).map(|(_, r)| r)
}

/// 1. At most two on-intervals per program after rounding, and an
///    interior-value fraction under 5% before it.
pub fn bang_bang(results: &[(&'static str, OptimizationResult)]) -> Result<Criterion> {
    timed(1, "bang-bang structure", || {
        let mut ok = true;
        let mut parts = Vec::new();
        for name in SINGLE_CLASS {
            let Some(r) = find(results, name) else {
                ok = false;
                parts.push(format!("{name} missing"));
                continue;
            };
            let s = &r.schedule;
            let runs = s
                .u
                .iter()
                .chain(&s.v)
                .map(|sig| on_intervals(sig).len())
                .max()
                .unwrap_or(0);
            let interior = r.diagnostics.interior_fraction;
            ok &= runs <= MAX_ON_INTERVALS && interior < INTERIOR_LIMIT;
            parts.push(format!("{name} runs={runs} interior={:.1}%", 100.0 * interior));
        }
        Ok((ok, parts.join(", ")))
    })
}

/// 2. Structural lemmas on the refined base extremal.
pub fn lemma_suite(tol: &LemmaTolerances) -> Result<Criterion> {
    timed(2, "lemma suite", || {
        let (cfg, inst) = instance("base")?;
        let fbs = fbs_solve(
            &inst.x0,
            &inst.net,
            &inst.params,
            &FbsOptions {
                dt: cfg.solver.dt,
                control_dt: cfg.solver.control_dt,
                ..FbsOptions::default()
            },
        )?;
        let ex = refine_extremal(&inst.x0, &inst.net, &inst.params, &fbs.costate, cfg.solver.dt, 100)?;
        let report = verify_lemmas(&ex.trajectory, &ex.costate, tol);
        let failed: Vec<&str> = report
            .checks
            .iter()
            .filter(|c| !c.passed)
            .map(|c| c.name)
            .collect();
        let h = report
            .check("hamiltonian-constant")
            .map_or(f64::NAN, |c| c.worst);
        let detail = if failed.is_empty() {
            format!(
                "{} checks, H variation {h:.2e} (limit {:.0e})",
                report.checks.len(),
                tol.hamiltonian_constancy
            )
        } else {
            format!("failed: {} (H variation {h:.2e})", failed.join(", "))
        };
        Ok((report.passed(), detail))
    })
}

/// 3. Sweep, switching-time search and NLP agree on profit and label.
pub fn solver_agreement(seed: u64) -> Result<Criterion> {
    timed(3, "three-solver agreement", || {
        let mut ok = true;
        let mut parts = Vec::new();
        for name in SINGLE_CLASS {
            let (cfg, inst) = instance(name)?;
            let cc = crosscheck(
                &inst.x0,
                &inst.net,
                &inst.params,
                &CrossCheckOptions {
                    dt: cfg.solver.dt,
                    control_dt: cfg.solver.control_dt,
                    seed,
                    switch_starts: cfg.solver.switch_starts,
                    nlp_starts: cfg.solver.multistarts,
                },
            )?;
            ok &= cc.passed();
            parts.push(format!(
                "{name} gap={:.1e} labels {}",
                cc.max_profit_gap,
                if cc.labels_agree { "agree" } else { "differ" }
            ));
        }
        Ok((ok, parts.join(", ")))
    })
}

fn two_windows(signal: &[f64]) -> bool {
    on_intervals(signal).len() == 2
}

/// Expected on/off pattern of each named scenario.
pub fn pattern_matches(name: &str, r: &OptimizationResult) -> bool {
    let s = &r.schedule;
    let labels = r.labels();
    let shape = |sig: &[f64]| program_shape(sig);
    match name {
        "base" => {
            labels[0] == StrategyLabel::BothPhases
                && shape(&s.u[0]) == ProgramShape::InitialAndTerminal
                && shape(&s.v[0]) == ProgramShape::InitialAndTerminal
        }
        "fig2-beta013" => {
            labels[0] == StrategyLabel::InfluenceAndExploit
                && shape(&s.u[0]) == ProgramShape::TerminalOnly
        }
        "fig3-alpha009" => {
            labels[0] == StrategyLabel::ExploitAndInfluence
                && shape(&s.v[0]) == ProgramShape::TerminalOnly
        }
        "fig4-payouts" => labels[0] == StrategyLabel::InfluenceAndExploit,
        "fig5-payouts" => labels[0] == StrategyLabel::ExploitAndInfluence,
        "fig6-disassortative" => {
            shape(&s.u[1]) == ProgramShape::AlwaysOn && two_windows(&s.u[0])
        }
        "fig7-assortative" => {
            shape(&s.u[0]) == ProgramShape::AlwaysOn && two_windows(&s.u[1])
        }
        _ => false,
    }
}

fn describe(r: &OptimizationResult) -> String {
    let s = &r.schedule;
    let labels: Vec<String> = r.labels().iter().map(|l| l.to_string()).collect();
    let shapes: Vec<String> = (0..s.classes())
        .map(|k| format!("u{k}={} v{k}={}", program_shape(&s.u[k]), program_shape(&s.v[k])))
        .collect();
    format!("{} ({})", labels.join("/"), shapes.join(" "))
}

/// 4. Figure patterns of every named scenario, from the NLP solutions.
pub fn figure_patterns(results: &[(&'static str, OptimizationResult)]) -> Result<Criterion> {
    timed(4, "figure patterns", || {
        let mut ok = true;
        let mut parts = Vec::new();
        for name in SCENARIOS {
            match find(results, name) {
                Some(r) => {
                    let hit = pattern_matches(name, r);
                    ok &= hit;
                    parts.push(format!(
                        "{name} {}{}",
                        describe(r),
                        if hit { "" } else { " MISMATCH" }
                    ));
                }
                None => {
                    ok = false;
                    parts.push(format!("{name} missing"));
                }
            }
        }
        Ok((ok, parts.join("; ")))
    })
}

/// 5. Chain runs approach the ODE on the uncontrolled base scenario.
pub fn mean_field(opts: &ValidationOptions) -> Result<Criterion> {
    timed(5, "mean-field validity", || {
        let (cfg, inst) = instance("base")?;
        let sched = ControlSchedule::off(1, inst.params.horizon, cfg.solver.control_dt)?;
        let report = compare_abm_ode(
            &inst.net,
            &inst.params,
            &sched,
            &inst.x0,
            &opts.abm_sizes,
            opts.abm_replicas,
            opts.seed,
            Some(cfg.solver.dt),
        )?;
        let errs: Vec<f64> = report.rows.iter().map(|r| r.mean_sup_error[0]).collect();
        let last = *errs.last().unwrap_or(&f64::NAN);
        let decreasing = errs.windows(2).all(|w| w[1] < w[0]);
        let parts: Vec<String> = report
            .rows
            .iter()
            .map(|r| format!("N={} {:.4}+-{:.4}", r.agents, r.mean_sup_error[0], r.stderr[0]))
            .collect();
        Ok((
            last < MEAN_FIELD_LIMIT && decreasing,
            format!("{} over {} replicas", parts.join(", "), opts.abm_replicas),
        ))
    })
}

fn random_relaxed(rng: &mut impl Rng, classes: usize, intervals: usize, step: f64) -> ControlSchedule {
    let mut sig = || -> Vec<Vec<f64>> {
        (0..classes)
            .map(|_| (0..intervals).map(|_| rng.random::<f64>()).collect())
            .collect()
    };
    let u = sig();
    let v = sig();
    ControlSchedule { step, u, v }
}

/// 6. Adjoint gradient against central differences at random relaxed
///    controls, every component, on the base and a two-class scenario.
pub fn gradient(opts: &ValidationOptions) -> Result<Criterion> {
    timed(6, "gradient correctness", || {
        let mut worst = 0.0f64;
        let mut checked = 0;
        for (j, name) in ["base", "fig6-disassortative"].iter().enumerate() {
            let (cfg, inst) = instance(name)?;
            let k = inst.net.len();
            let n = crate::integrate::control_intervals(&inst.params, cfg.solver.control_dt)?;
            let coords: Vec<(usize, usize, usize)> = (0..2)
                .flat_map(|s| (0..k).flat_map(move |c| (0..n).map(move |i| (s, c, i))))
                .collect();
            for point in 0..opts.gradient_points {
                let mut rng = stream(opts.seed, "validate-gradient", (j * 1000 + point) as u64);
                let sched = random_relaxed(&mut rng, k, n, cfg.solver.control_dt);
                let gc = check_gradient(
                    &inst.x0,
                    &sched,
                    &inst.net,
                    &inst.params,
                    cfg.solver.dt,
                    FD_STEP,
                    &coords,
                )?;
                worst = worst.max(gc.max_rel_error);
                checked += gc.checked;
            }
        }
        Ok((
            worst < GRADIENT_CHECK_LIMIT,
            format!(
                "{} points per scenario, {checked} components, max rel error {worst:.2e}",
                opts.gradient_points
            ),
        ))
    })
}

/// Largest simplex deviation and largest excess over the decay bound.
pub fn trajectory_bounds(traj: &Trajectory, alpha: f64, delta: f64) -> (f64, f64) {
    let mut simplex = 0.0f64;
    let mut excess = f64::NEG_INFINITY;
    let x0 = traj.state(0);
    for (m, &t) in traj.times().iter().enumerate() {
        for k in 0..traj.classes() {
            let s = traj.class_state(m, k);
            simplex = simplex.max((s.i + s.r + s.theta - 1.0).abs());
            for x in [s.i, s.r, s.theta] {
                simplex = simplex.max(-x);
            }
            excess = excess.max(s.i - x0.0[k].i * (-(alpha + delta) * t).exp());
        }
    }
    (simplex, excess)
}

/// 7. Simplex conservation and exponential decay of `i` on every scenario
///    under off, all-on, NLP and random binary schedules.
pub fn conservation(
    results: &[(&'static str, OptimizationResult)],
    seed: u64,
) -> Result<Criterion> {
    timed(7, "conservation and bounds", || {
        let mut simplex = 0.0f64;
        let mut excess = f64::NEG_INFINITY;
        let mut count = 0;
        for (j, name) in SCENARIOS.iter().enumerate() {
            let (cfg, inst) = instance(name)?;
            let (k, h, step) = (inst.net.len(), inst.params.horizon, cfg.solver.control_dt);
            let mut scheds = vec![
                ControlSchedule::off(k, h, step)?,
                ControlSchedule::constant(k, h, step, 1.0, 1.0)?,
            ];
            if let Some(r) = find(results, name) {
                scheds.push(r.schedule.clone());
            }
            let mut rng = stream(seed, "validate-conservation", j as u64);
            for _ in 0..4 {
                let mut s = random_relaxed(&mut rng, k, scheds[0].intervals(), step);
                s = s.rounded();
                scheds.push(s);
            }
            for s in &scheds {
                let traj = integrate(&inst.x0, s, &inst.net, &inst.params, cfg.solver.dt)?;
                let (a, b) = trajectory_bounds(&traj, inst.params.alpha, inst.params.delta);
                simplex = simplex.max(a);
                excess = excess.max(b);
                count += 1;
            }
        }
        Ok((
            simplex <= SIMPLEX_TOL && excess <= DECAY_SLACK,
            format!(
                "{count} trajectories, simplex deviation {simplex:.1e}, decay-bound excess {excess:.1e}"
            ),
        ))
    })
}

/// 8. Balance completion of the disassortative network and the mixing a
///    sampled graph realizes.
pub fn balance(opts: &ValidationOptions) -> Result<Criterion> {
    timed(8, "balance equation", || {
        let net = balance_complete(
            DegreeClass { degree: 10, weight: 0.1 },
            DegreeClass { degree: 2, weight: 0.9 },
            0.9,
        )?;
        let p_ab = net.mixing()[1][0];
        let mut rng = stream(opts.seed, "abm-graph", 0);
        let g = sample_graph(&net, opts.graph_agents, &mut rng)?;
        let dev = g
            .realized_mixing
            .iter()
            .zip(net.mixing())
            .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max);
        Ok((
            (p_ab - 0.5).abs() < 1e-12 && dev <= MIXING_LIMIT,
            format!(
                "P(A|B)={p_ab:.12}, sampled N={} realizes {:.4} (max deviation {dev:.4})",
                opts.graph_agents,
                g.realized_mixing[1][0]
            ),
        ))
    })
}

/// Runs every criterion, skipping 5 when `skip_abm` is set.
pub fn validate(opts: &ValidationOptions) -> Result<ValidationReport> {
    let results = solve_all(opts.seed)?;
    let mut criteria = vec![
        bang_bang(&results)?,
        lemma_suite(&opts.lemma)?,
        solver_agreement(opts.seed)?,
        figure_patterns(&results)?,
    ];
    let mut skipped = Vec::new();
    if opts.skip_abm {
        skipped.push((5, "mean-field validity"));
    } else {
        criteria.push(mean_field(opts)?);
    }
    criteria.push(gradient(opts)?);
    criteria.push(conservation(&results, opts.seed)?);
    criteria.push(balance(opts)?);
    Ok(ValidationReport { criteria, skipped })
}
