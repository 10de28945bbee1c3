//! Numerical checks of the quantitative claims behind existence of an
//! equilibrium: drift bounds, moment scaling, box consistency, continuity
//! in the initial condition, ergodic decay, martingale residuals, tightness
//! of the invariant measures and the product-measure observation.
//!
//! Every check ends in one or more [`Verdict`]s. Monte-Carlo claims are
//! judged as inequalities with explicit `3σ` bands; an underpowered run is
//! `inconclusive`, never `fail`.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::geometry::{BoxLattice, WeightScheme};
use crate::interactions::InteractionSpec;
use crate::models::{assemble_generator_coefficients, LambdaSchedule, SdeSystem, SiteModel};

pub mod coupling;
pub mod ergodic;
pub mod lyapunov;
pub mod martingale;
pub mod moments;
pub mod product_tv;
pub mod stats;
pub mod tightness;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Pass,
    Fail,
    Inconclusive,
}

impl Outcome {
    pub fn from_bool(ok: bool) -> Self {
        if ok {
            Outcome::Pass
        } else {
            Outcome::Fail
        }
    }

    /// Worst of two outcomes, with `fail` over `inconclusive` over `pass`.
    pub fn and(self, o: Outcome) -> Outcome {
        use Outcome::*;
        match (self, o) {
            (Fail, _) | (_, Fail) => Fail,
            (Inconclusive, _) | (_, Inconclusive) => Inconclusive,
            _ => Pass,
        }
    }
}

impl std::fmt::Display for Outcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Outcome::Pass => "pass",
            Outcome::Fail => "fail",
            Outcome::Inconclusive => "inconclusive",
        })
    }
}

/// One judged claim.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub claim: String,
    /// The inequality or identity being checked, in words.
    pub statement: String,
    pub estimate: f64,
    /// Half-width of the confidence band around `estimate` (0 for exact checks).
    pub band: f64,
    pub outcome: Outcome,
    #[serde(default)]
    pub metrics: BTreeMap<String, f64>,
    #[serde(default)]
    pub note: String,
}

impl Verdict {
    pub fn new(claim: &str, statement: &str, estimate: f64, band: f64, outcome: Outcome) -> Self {
        Verdict {
            claim: claim.to_string(),
            statement: statement.to_string(),
            estimate,
            band,
            outcome,
            metrics: BTreeMap::new(),
            note: String::new(),
        }
    }

    pub fn metric(mut self, k: &str, v: f64) -> Self {
        self.metrics.insert(k.to_string(), v);
        self
    }

    pub fn with_note(mut self, note: impl Into<String>) -> Self {
        self.note = note.into();
        self
    }
}

/// Tabular curve data written as CSV.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Curve {
    pub fn new(name: &str, columns: &[&str]) -> Self {
        Curve {
            name: name.to_string(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut s = self.columns.join(",");
        s.push('\n');
        for r in &self.rows {
            let cells: Vec<String> = r.iter().map(|v| format!("{v}")).collect();
            s.push_str(&cells.join(","));
            s.push('\n');
        }
        s
    }
}

/// Everything a suite produces.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SuiteOutput {
    pub verdicts: Vec<Verdict>,
    pub curves: Vec<Curve>,
}

impl SuiteOutput {
    pub fn outcome(&self) -> Outcome {
        self.verdicts
            .iter()
            .fold(Outcome::Pass, |a, v| a.and(v.outcome))
    }
}

/// Exponential fit `log g(t) ≈ log K − α t`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub rate: f64,
    pub r2: f64,
    /// Set when `r2 >= 0.8`.
    pub conclusive: bool,
}

impl DecayFit {
    /// Fits over the points with positive values; needs at least three.
    pub fn fit(times: &[f64], values: &[f64]) -> Option<DecayFit> {
        let (xs, ys): (Vec<f64>, Vec<f64>) = times
            .iter()
            .zip(values)
            .filter(|(_, v)| **v > 0.0 && v.is_finite())
            .map(|(t, v)| (*t, v.ln()))
            .unzip();
        if xs.len() < 3 {
            return None;
        }
        let f = stats::linear_fit(&xs, &ys)?;
        Some(DecayFit {
            times: times.to_vec(),
            values: values.to_vec(),
            rate: -f.slope,
            r2: f.r2,
            conclusive: f.r2 >= 0.8,
        })
    }
}

/// Site model, interaction, weights and λ schedule shared by the suites.
#[derive(Clone, Debug)]
pub struct Setup {
    pub model: Arc<SiteModel>,
    pub interaction: Arc<InteractionSpec>,
    pub weights: WeightScheme,
    pub lambdas: LambdaSchedule,
    pub d: usize,
}

impl Setup {
    pub fn new(
        model: SiteModel,
        interaction: InteractionSpec,
        weights: WeightScheme,
        lambdas: LambdaSchedule,
        d: usize,
    ) -> Self {
        Setup {
            model: Arc::new(model),
            interaction: Arc::new(interaction),
            weights,
            lambdas,
            d,
        }
    }

    /// Same setup with another interaction.
    pub fn with_interaction(&self, interaction: InteractionSpec) -> Self {
        Setup {
            interaction: Arc::new(interaction),
            ..self.clone()
        }
    }

    pub fn r(&self) -> usize {
        self.interaction.range()
    }

    pub fn lattice(&self, n: usize) -> Result<BoxLattice> {
        BoxLattice::new(self.d, self.r(), n)
    }

    pub fn system(&self, n: usize) -> Result<SdeSystem> {
        let lat = self.lattice(n)?;
        let lambdas = self.lambdas.on(&lat);
        assemble_generator_coefficients(
            self.model.clone(),
            self.interaction.clone(),
            Arc::new(lat),
            lambdas,
        )
    }

    /// Box configuration with the same site state everywhere.
    pub fn uniform_config(&self, n: usize, site: &[f64]) -> Result<Vec<f64>> {
        let lat = self.lattice(n)?;
        Ok(site
            .iter()
            .cloned()
            .cycle()
            .take(lat.len() * self.model.dim())
            .collect())
    }
}
