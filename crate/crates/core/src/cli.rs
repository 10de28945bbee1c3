//! Command-line front end: `run`, `list-claims`, `control`, `simulate` and
//! `validate`.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::config::ExperimentConfig;
use crate::control::{solve_reachability, verify_control, ControlProblem};
use crate::error::{invalid, Result};
use crate::geometry::SiteState;
use crate::runner::{run, RunOptions};
use crate::simulate::{
    export_trajectory, simulate, NoisePlan, Observable, RecorderSpec, TrajectoryMeta,
};

#[derive(Debug, Parser)]
#[command(
    name = "hlattice",
    version,
    about = "Interacting hypoelliptic lattice diffusions"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the master seed of the configuration.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the configured diagnostics suites.
    Run {
        #[command(flatten)]
        common: Common,
        /// Run only these suites (repeatable).
        #[arg(long = "suite")]
        suites: Vec<String>,
    },
    /// Print the claim registry.
    ListClaims,
    /// Solve a single-site reachability problem.
    Control {
        #[arg(long, value_parser = parse_triple, allow_hyphen_values = true)]
        from: [f64; 3],
        #[arg(long, value_parser = parse_triple, allow_hyphen_values = true)]
        to: [f64; 3],
        #[arg(long)]
        t: f64,
        #[arg(long)]
        lambda: f64,
    },
    /// Simulate the largest configured box and export a trajectory.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Initial state of every site.
        #[arg(long, value_parser = parse_site, allow_hyphen_values = true)]
        init: Option<SiteInit>,
    },
    /// Check the configuration against the hypotheses.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

fn parse_list(s: &str) -> std::result::Result<Vec<f64>, String> {
    s.split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|e| format!("'{t}': {e}")))
        .collect()
}

#[derive(Clone, Debug)]
pub struct SiteInit(pub Vec<f64>);

fn parse_site(s: &str) -> std::result::Result<SiteInit, String> {
    parse_list(s).map(SiteInit)
}

fn parse_triple(s: &str) -> std::result::Result<[f64; 3], String> {
    let v = parse_list(s)?;
    v.try_into().map_err(|_| "expected x,y,z".to_string())
}

/// Executes a parsed command, writing to `out`; returns the exit status.
pub fn execute(cli: Cli, out: &mut dyn std::io::Write) -> Result<i32> {
    match cli.command {
        Command::Run { common, suites } => {
            let cfg = ExperimentConfig::load(&common.config)?;
            let opts = RunOptions {
                seed: common.seed,
                workers: common.workers,
                out_dir: common.out_dir,
                only: suites,
            };
            let s = run(&cfg, &opts)?;
            write!(out, "{}", s.verdict_lines())?;
            if s.inconclusive() {
                writeln!(out, "# some suites inconclusive")?;
            }
            Ok(if s.failed() { 1 } else { 0 })
        }
        Command::ListClaims => {
            write!(out, "{}", crate::registry::table())?;
            Ok(0)
        }
        Command::Control {
            from,
            to,
            t,
            lambda,
        } => {
            let p = ControlProblem::new(
                SiteState::new(from[0], from[1], from[2]),
                SiteState::new(to[0], to[1], to[2]),
                t,
                lambda,
            )?;
            let u = solve_reachability(&p)?;
            let err = verify_control(&p, &u);
            writeln!(out, "u1 = {:?}", u.u1)?;
            writeln!(out, "u2 = {:?}", u.u2)?;
            writeln!(out, "endpoint_error = {err:e}")?;
            Ok(0)
        }
        Command::Simulate { common, init } => {
            let cfg = ExperimentConfig::load(&common.config)?;
            let v = cfg.validate()?;
            let setup = v.setup;
            let n = *cfg
                .lattice
                .boxes
                .iter()
                .max()
                .ok_or_else(|| invalid("no boxes configured"))?;
            let sys = setup.system(n)?;
            let site = init
                .map(|s| s.0)
                .unwrap_or_else(|| vec![0.0; setup.model.dim()]);
            if site.len() != setup.model.dim() {
                return Err(invalid("initial state has the wrong dimension"));
            }
            let x0 = setup.uniform_config(n, &site)?;
            let seed = common.seed.unwrap_or(cfg.seed);
            let plan = NoisePlan::new(seed, cfg.integrator.h, cfg.integrator.t)?;
            let centre = sys.lattice().len() / 2;
            let mut observables = vec![
                Observable::SNorm8(setup.weights.u_on(sys.lattice())?),
                Observable::SiteNorm8(centre),
            ];
            observables.extend((0..setup.model.dim()).map(|c| Observable::Coord(centre, c)));
            let rec = RecorderSpec {
                stride: cfg.integrator.stride,
                observables,
                full_configs: false,
            };
            let tr = simulate(&sys, &x0, &plan, 0, &rec)?;
            let meta = TrajectoryMeta {
                seed,
                h: cfg.integrator.h,
                horizon: cfg.integrator.t,
                replica: 0,
                d: setup.d,
                r: setup.r(),
                n,
                model: setup.model.name().to_string(),
                interaction: setup.interaction.name(),
                weights_hash: cfg.weights_hash(),
                blow_up: tr.blow_up,
            };
            let dir = common.out_dir.unwrap_or_else(|| PathBuf::from("."));
            std::fs::create_dir_all(&dir)?;
            let path = dir.join(format!("trajectory_n{n}.csv"));
            export_trajectory(&tr, &meta, &path)?;
            writeln!(
                out,
                "wrote {} records to {}",
                tr.times.len(),
                path.display()
            )?;
            Ok(if tr.blow_up.is_some() { 1 } else { 0 })
        }
        Command::Validate { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let v = cfg.validate()?;
            for c in v.weights.checks.iter().chain(&v.interaction.checks) {
                writeln!(
                    out,
                    "{} {} {}",
                    c.hypothesis,
                    if c.passed { "ok" } else { "violated" },
                    c.detail
                )?;
            }
            writeln!(
                out,
                "H3 ok lambda in [{}, {}]",
                cfg.model.lambda.min(),
                cfg.model.lambda.max()
            )?;
            writeln!(out, "config_hash {}", cfg.hash())?;
            Ok(0)
        }
    }
}
