//! Runs the selected suites of a configuration and writes verdict records,
//! curves and run metadata.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, SuiteConfig};
use crate::diagnostics::{
    coupling, ergodic, lyapunov, martingale, moments, product_tv, tightness, Outcome, Setup,
    SuiteOutput, Verdict,
};
use crate::error::{Error, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// A verdict with the provenance needed to reproduce it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerdictRecord {
    pub suite: String,
    #[serde(flatten)]
    pub verdict: Verdict,
    pub config_hash: String,
    pub seed: u64,
    pub version: String,
}

impl VerdictRecord {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("verdict serializes")
    }
}

#[derive(Clone, Debug)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub workers: usize,
    pub out_dir: Option<PathBuf>,
    /// Restricts the run to these suites when non-empty.
    pub only: Vec<String>,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            seed: None,
            workers: 1,
            out_dir: None,
            only: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct RunSummary {
    pub records: Vec<VerdictRecord>,
    pub curves: Vec<(String, crate::diagnostics::Curve)>,
    pub outcome: Option<Outcome>,
}

impl RunSummary {
    pub fn failed(&self) -> bool {
        self.records
            .iter()
            .any(|r| r.verdict.outcome == Outcome::Fail)
    }

    pub fn inconclusive(&self) -> bool {
        self.records
            .iter()
            .any(|r| r.verdict.outcome == Outcome::Inconclusive)
    }

    pub fn verdict_lines(&self) -> String {
        let mut s = String::new();
        for r in &self.records {
            s.push_str(&r.to_line());
            s.push('\n');
        }
        s
    }
}

/// Runs one suite; the suite's seed is used as given.
pub fn run_suite(setup: &Setup, suite: &SuiteConfig, workers: usize) -> Result<SuiteOutput> {
    match suite {
        SuiteConfig::Lyapunov(p) => lyapunov::run(setup, p),
        SuiteConfig::Kolmogorov(p) => moments::kolmogorov_moment_check(setup, p, workers),
        SuiteConfig::TailMass(p) => moments::tail_mass_check(setup, p, workers),
        SuiteConfig::BoxConsistency(p) => coupling::box_consistency(setup, p, workers),
        SuiteConfig::IcContinuity(p) => coupling::initial_condition_continuity(setup, p, workers),
        SuiteConfig::Ergodic(p) => ergodic::ergodic_decay(setup, p, workers),
        SuiteConfig::Martingale(p) => martingale::martingale_residual(setup, p, workers),
        SuiteConfig::Tightness(p) => tightness::invariant_tightness(setup, p),
        SuiteConfig::ProductTv(p) => product_tv::product_tv_demo(p),
    }
}

/// Numerical refusals become verdicts; configuration errors propagate.
fn refusal(suite: &SuiteConfig, e: &Error) -> Option<Verdict> {
    let claim = crate::registry::find(suite.name())
        .map(|r| r.claim)
        .unwrap_or("unknown");
    let statement = crate::registry::find(suite.name())
        .map(|r| r.statement)
        .unwrap_or("");
    let outcome = match e {
        Error::InsufficientSeparation(_) | Error::MomentBlowUp(_) => Outcome::Inconclusive,
        Error::CertificateRefused(_) | Error::Singular(_) => Outcome::Fail,
        _ => return None,
    };
    Some(Verdict::new(claim, statement, f64::NAN, 0.0, outcome).with_note(e.to_string()))
}

/// Validates the configuration, runs its suites and writes artifacts when
/// an output directory is given.
pub fn run(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<RunSummary> {
    let validated = cfg.validate()?;
    let seed = opts.seed.unwrap_or(cfg.seed);
    let hash = cfg.hash();
    let mut summary = RunSummary::default();
    for suite in &cfg.diagnostics {
        if !opts.only.is_empty() && !opts.only.iter().any(|s| s == suite.name()) {
            continue;
        }
        let seeded = suite.with_master_seed(seed);
        let out = match run_suite(&validated.setup, &seeded, opts.workers.max(1)) {
            Ok(o) => o,
            Err(e) => match refusal(suite, &e) {
                Some(v) => SuiteOutput {
                    verdicts: vec![v],
                    curves: vec![],
                },
                None => return Err(e),
            },
        };
        for v in out.verdicts {
            summary.records.push(VerdictRecord {
                suite: suite.name().to_string(),
                verdict: v,
                config_hash: hash.clone(),
                seed,
                version: VERSION.to_string(),
            });
        }
        for c in out.curves {
            summary.curves.push((suite.name().to_string(), c));
        }
    }
    summary.outcome = Some(
        summary
            .records
            .iter()
            .fold(Outcome::Pass, |a, r| a.and(r.verdict.outcome)),
    );
    if let Some(dir) = &opts.out_dir {
        write_artifacts(cfg, &summary, seed, dir)?;
    }
    Ok(summary)
}

#[derive(Serialize)]
struct Metadata<'a> {
    config_name: &'a str,
    config_hash: String,
    seed: u64,
    version: &'a str,
    outcomes: BTreeMap<String, Outcome>,
    failed: bool,
    inconclusive: bool,
}

pub fn write_artifacts(
    cfg: &ExperimentConfig,
    s: &RunSummary,
    seed: u64,
    dir: &Path,
) -> Result<()> {
    std::fs::create_dir_all(dir.join("curves"))?;
    let mut f = std::io::BufWriter::new(std::fs::File::create(dir.join("verdicts.jsonl"))?);
    f.write_all(s.verdict_lines().as_bytes())?;
    f.flush()?;
    for (suite, c) in &s.curves {
        std::fs::write(
            dir.join("curves").join(format!("{suite}_{}.csv", c.name)),
            c.to_csv(),
        )?;
    }
    let mut outcomes = BTreeMap::new();
    for r in &s.records {
        let e = outcomes.entry(r.suite.clone()).or_insert(Outcome::Pass);
        *e = e.and(r.verdict.outcome);
    }
    let meta = Metadata {
        config_name: &cfg.name,
        config_hash: cfg.hash(),
        seed,
        version: VERSION,
        outcomes,
        failed: s.failed(),
        inconclusive: s.inconclusive(),
    };
    std::fs::write(
        dir.join("metadata.json"),
        serde_json::to_string_pretty(&meta)?,
    )?;
    std::fs::write(dir.join("config.json"), cfg.to_json())?;
    Ok(())
}
