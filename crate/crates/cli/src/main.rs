use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use incentive_core::model::ControlSchedule;
use incentive_core::optimize::Solver;
use incentive_core::pmp::LemmaTolerances;
use incentive_core::scenario::{
    named, read_schedule_csv, resolve, run_abm, run_pmp, run_scenario, run_simulation,
    run_solver, sweep, write_sweep_csv, ScenarioConfig,
};
use incentive_core::validation::{validate, ValidationOptions};
use incentive_core::Error;

const EXIT_RUNTIME: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_NOT_CONVERGED: u8 = 3;
const EXIT_VALIDATION: u8 = 4;

/// Optimal timing of referral rewards and direct incentives under
/// competitive product diffusion.
#[derive(Parser)]
#[command(name = "incentive", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Scenario TOML file.
    #[arg(long, value_name = "PATH", conflicts_with = "scenario")]
    config: Option<PathBuf>,
    /// Named scenario to start from (default: base).
    #[arg(long, value_name = "NAME")]
    scenario: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory [default: $INCENTIVE_OUT/<run>, or out/<run>].
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// State step.
    #[arg(long)]
    dt: Option<f64>,
    /// Control grid step.
    #[arg(long)]
    control_dt: Option<f64>,
    /// Optimizer starts (both the NLP and the switching-time search).
    #[arg(long)]
    starts: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate the dynamics under a given schedule.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Schedule CSV (t,u_0,v_0,...); overrides --u and --v.
        #[arg(long, value_name = "PATH")]
        schedule: Option<PathBuf>,
        /// Constant referral control.
        #[arg(long, default_value_t = 0.0)]
        u: f64,
        /// Constant direct-incentive control.
        #[arg(long, default_value_t = 0.0)]
        v: f64,
    },
    /// Forward-backward sweep, switch refinement and the lemma suite.
    Pmp {
        #[command(flatten)]
        common: Common,
        /// Relative Hamiltonian-constancy tolerance.
        #[arg(long, default_value_t = 1e-3)]
        h_tol: f64,
    },
    /// Multi-start switching-time optimization.
    SwitchOpt {
        #[command(flatten)]
        common: Common,
    },
    /// Multi-start relaxed NLP with rounding.
    Nlp {
        #[command(flatten)]
        common: Common,
    },
    /// Agent-based runs against the mean-field ODE.
    Abm {
        #[command(flatten)]
        common: Common,
        /// Binary schedule CSV (default: no incentives).
        #[arg(long, value_name = "PATH")]
        schedule: Option<PathBuf>,
        /// Population sizes, comma separated and increasing.
        #[arg(long, value_delimiter = ',')]
        sizes: Option<Vec<usize>>,
        #[arg(long)]
        replicas: Option<usize>,
    },
    /// Run a named scenario or a scenario file with its configured solvers.
    Scenario {
        /// base, fig2-beta013, fig3-alpha009, fig4-payouts, fig5-payouts,
        /// fig6-disassortative, fig7-assortative, or a TOML path.
        name: String,
        #[command(flatten)]
        common: Common,
    },
    /// Re-solve for each value of one scalar parameter.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// alpha, beta, gamma, delta, eps1, eps2, c, c', horizon,
        /// p_b_given_a, dt or control_dt.
        #[arg(long)]
        param: String,
        /// Values, comma separated; may be empty.
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        values: Vec<f64>,
    },
    /// Run the acceptance suite.
    Validate {
        #[arg(long)]
        seed: Option<u64>,
        /// Skip the agent-based criterion.
        #[arg(long)]
        skip_abm: bool,
        /// Relative Hamiltonian-constancy tolerance.
        #[arg(long, default_value_t = 1e-3)]
        h_tol: f64,
    },
}

enum Failure {
    Error(Error),
    NotConverged(String),
    Validation(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Error(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Error(Error::Io(e))
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io(_) | Error::IntegrationDrift { .. } | Error::GraphConstruction(_) => EXIT_RUNTIME,
        _ => EXIT_CONFIG,
    }
}

impl Common {
    fn load(&self) -> Result<(String, ScenarioConfig), Error> {
        let (name, mut cfg) = match (&self.config, &self.scenario) {
            (Some(path), _) => {
                let stem = path
                    .file_stem()
                    .map_or("config".into(), |s| s.to_string_lossy().into_owned());
                (stem, ScenarioConfig::from_path(path)?)
            }
            (None, Some(name)) => (name.clone(), named(name)?),
            (None, None) => ("base".to_string(), named("base")?),
        };
        self.apply(&mut cfg);
        Ok((name, cfg))
    }

    fn apply(&self, cfg: &mut ScenarioConfig) {
        let s = &mut cfg.solver;
        if let Some(x) = self.seed {
            s.seed = x;
        }
        if let Some(x) = self.dt {
            s.dt = x;
        }
        if let Some(x) = self.control_dt {
            s.control_dt = x;
        }
        if let Some(x) = self.starts {
            s.multistarts = x;
            s.switch_starts = x;
        }
    }

    fn out_dir(&self, run: &str) -> PathBuf {
        if let Some(out) = &self.out {
            return out.clone();
        }
        let root = std::env::var_os("INCENTIVE_OUT").map_or_else(|| PathBuf::from("out"), PathBuf::from);
        root.join(run)
    }
}

fn load_schedule(path: &Path) -> Result<ControlSchedule, Error> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    read_schedule_csv(&text)
}

fn report_files(files: &[PathBuf]) {
    for f in files {
        eprintln!("wrote {}", f.display());
    }
}

fn solver_command(common: &Common, solver: Solver, tag: &str) -> Result<(), Failure> {
    let (name, cfg) = common.load()?;
    let out = common.out_dir(&format!("{name}-{tag}"));
    let run = run_solver(&name, &cfg, solver, &out)?;
    print!("{}", run.summary);
    report_files(&run.files);
    if !run.converged() {
        return Err(Failure::NotConverged(format!("{solver} did not converge")));
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Simulate {
            common,
            schedule,
            u,
            v,
        } => {
            let (name, cfg) = common.load()?;
            let inst = cfg.build()?;
            let sched = match schedule {
                Some(path) => load_schedule(&path)?,
                None => ControlSchedule::constant(
                    inst.net.len(),
                    inst.params.horizon,
                    cfg.solver.control_dt,
                    u,
                    v,
                )?,
            };
            let out = common.out_dir(&format!("{name}-simulate"));
            let sim = run_simulation(&cfg, &sched, &out)?;
            println!("profit={}", incentive_core::csvfmt::sig12(sim.profit));
            report_files(&sim.files);
        }
        Command::Pmp { common, h_tol } => {
            let (name, cfg) = common.load()?;
            let tol = LemmaTolerances {
                hamiltonian_constancy: h_tol,
                ..LemmaTolerances::default()
            };
            let out = common.out_dir(&format!("{name}-pmp"));
            let run = run_pmp(&cfg, &tol, &out)?;
            println!("{}", run.sweep.line);
            print!("{}", run.lemmas);
            report_files(&run.files);
            if !run.sweep.converged || !run.extremal.converged {
                return Err(Failure::NotConverged(
                    "forward-backward sweep or switch refinement did not converge".into(),
                ));
            }
            if !run.lemmas.passed() {
                return Err(Failure::Validation("lemma suite failed".into()));
            }
        }
        Command::SwitchOpt { common } => solver_command(&common, Solver::SwitchTimes, "switch-opt")?,
        Command::Nlp { common } => solver_command(&common, Solver::Nlp, "nlp")?,
        Command::Abm {
            common,
            schedule,
            sizes,
            replicas,
        } => {
            let (name, mut cfg) = common.load()?;
            if let Some(s) = sizes {
                cfg.abm.sizes = s;
            }
            if let Some(r) = replicas {
                cfg.abm.replicas = r;
            }
            let inst = cfg.build()?;
            let sched = match schedule {
                Some(path) => load_schedule(&path)?,
                None => ControlSchedule::off(inst.net.len(), inst.params.horizon, cfg.solver.control_dt)?,
            };
            let out = common.out_dir(&format!("{name}-abm"));
            let run = run_abm(&cfg, &sched, &out)?;
            for r in &run.report.rows {
                println!(
                    "N={} replicas={} mean_sup_error={:.5} stderr={:.5} profit_error={:.5}",
                    r.agents, r.replicas, r.mean_max_error, r.max_error_stderr, r.profit_error
                );
            }
            for n in &run.report.flagged {
                eprintln!("warning: error grew at N={n}");
            }
            report_files(&run.files);
        }
        Command::Scenario { name, common } => {
            if common.config.is_some() || common.scenario.is_some() {
                return Err(Error::Config(
                    "scenario takes its name or path as the argument, not --config/--scenario".into(),
                )
                .into());
            }
            let mut cfg = resolve(&name)?;
            common.apply(&mut cfg);
            let label = Path::new(&name)
                .file_stem()
                .map_or(name.clone(), |s| s.to_string_lossy().into_owned());
            let out = common.out_dir(&label);
            let run = run_scenario(&label, &cfg, &out)?;
            print!("{}", run.summary);
            report_files(&run.files);
            if !run.converged() {
                return Err(Failure::NotConverged("a solver did not converge".into()));
            }
        }
        Command::Sweep {
            common,
            param,
            values,
        } => {
            let (name, cfg) = common.load()?;
            let rows = sweep(&cfg, &param, &values)?;
            let out = common.out_dir(&format!("{name}-sweep-{}", param.replace('\'', "_prime")));
            fs::create_dir_all(&out)?;
            let path = out.join("sweep.csv");
            let mut buf = Vec::new();
            write_sweep_csv(&rows, &mut buf)?;
            fs::write(&path, &buf)?;
            print!("{}", String::from_utf8_lossy(&buf));
            report_files(&[path]);
            if rows.iter().any(|r| !r.run.converged) {
                return Err(Failure::NotConverged("a sweep point did not converge".into()));
            }
        }
        Command::Validate {
            seed,
            skip_abm,
            h_tol,
        } => {
            let mut opts = ValidationOptions {
                skip_abm,
                ..ValidationOptions::default()
            };
            if let Some(s) = seed {
                opts.seed = s;
            }
            opts.lemma.hamiltonian_constancy = h_tol;
            let report = validate(&opts)?;
            print!("{report}");
            if !report.passed() {
                let ids: Vec<String> = report.failed().iter().map(|c| c.id.to_string()).collect();
                return Err(Failure::Validation(format!("failed criteria: {}", ids.join(", "))));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Error(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
        Err(Failure::NotConverged(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_NOT_CONVERGED)
        }
        Err(Failure::Validation(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_VALIDATION)
        }
    }
}
