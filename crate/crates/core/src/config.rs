//! Experiment configuration: one JSON document describing the model, the
//! interaction, the weights, the lattice, the integrator, the master seed and
//! the selected suites.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::diagnostics::coupling::{BoxConsistencyParams, ContinuityParams};
use crate::diagnostics::ergodic::ErgodicParams;
use crate::diagnostics::lyapunov::LyapunovParams;
use crate::diagnostics::martingale::MartingaleParams;
use crate::diagnostics::moments::{KolmogorovParams, TailParams};
use crate::diagnostics::product_tv::ProductTvParams;
use crate::diagnostics::tightness::TightnessParams;
use crate::diagnostics::Setup;
use crate::error::{invalid, Error, Result};
use crate::geometry::{validate_weights, WeightReport, WeightScheme};
use crate::interactions::{
    validate_hypotheses, InteractionConfig, InteractionReport, InteractionSpec, ValidationBudget,
};
use crate::models::{CustomModelSpec, LambdaSchedule, SiteModel};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub custom: Option<CustomModelSpec>,
    pub lambda: LambdaSchedule,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum WeightConfig {
    Factorial {
        delta: f64,
        #[serde(rename = "K")]
        k: f64,
        horizon: usize,
    },
    Explicit {
        delta: f64,
        #[serde(rename = "K")]
        k: f64,
        shell_u: Vec<f64>,
        shell_v: Vec<f64>,
    },
}

impl WeightConfig {
    pub fn build(&self, d: usize, r: usize) -> WeightScheme {
        match self {
            WeightConfig::Factorial { delta, k, horizon } => {
                WeightScheme::factorial(d, r, *delta, *k, *horizon)
            }
            WeightConfig::Explicit {
                delta,
                k,
                shell_u,
                shell_v,
            } => WeightScheme {
                d,
                r,
                delta: *delta,
                k: *k,
                shell_u: shell_u.clone(),
                shell_v: shell_v.clone(),
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatticeConfig {
    pub d: usize,
    pub boxes: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntegratorConfig {
    pub h: f64,
    #[serde(rename = "T")]
    pub t: f64,
    #[serde(default = "one_u64")]
    pub stride: u64,
}

fn one_u64() -> u64 {
    1
}

/// One selected suite with its parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "suite", rename_all = "snake_case")]
pub enum SuiteConfig {
    Lyapunov(LyapunovParams),
    Kolmogorov(KolmogorovParams),
    TailMass(TailParams),
    BoxConsistency(BoxConsistencyParams),
    IcContinuity(ContinuityParams),
    Ergodic(ErgodicParams),
    Martingale(MartingaleParams),
    Tightness(TightnessParams),
    ProductTv(ProductTvParams),
}

impl SuiteConfig {
    pub fn name(&self) -> &'static str {
        match self {
            SuiteConfig::Lyapunov(_) => "lyapunov",
            SuiteConfig::Kolmogorov(_) => "kolmogorov",
            SuiteConfig::TailMass(_) => "tail_mass",
            SuiteConfig::BoxConsistency(_) => "box_consistency",
            SuiteConfig::IcContinuity(_) => "ic_continuity",
            SuiteConfig::Ergodic(_) => "ergodic",
            SuiteConfig::Martingale(_) => "martingale",
            SuiteConfig::Tightness(_) => "tightness",
            SuiteConfig::ProductTv(_) => "product_tv",
        }
    }

    /// The suite with default parameters, by registry name.
    pub fn default_for(name: &str) -> Result<Self> {
        Ok(match name {
            "lyapunov" => SuiteConfig::Lyapunov(Default::default()),
            "kolmogorov" => SuiteConfig::Kolmogorov(Default::default()),
            "tail_mass" => SuiteConfig::TailMass(Default::default()),
            "box_consistency" => SuiteConfig::BoxConsistency(Default::default()),
            "ic_continuity" => SuiteConfig::IcContinuity(Default::default()),
            "ergodic" => SuiteConfig::Ergodic(Default::default()),
            "martingale" => SuiteConfig::Martingale(Default::default()),
            "tightness" => SuiteConfig::Tightness(Default::default()),
            "product_tv" => SuiteConfig::ProductTv(Default::default()),
            other => return Err(invalid(format!("unknown suite '{other}'"))),
        })
    }

    /// Replaces the suite's own seed by a mix of it and the master seed.
    pub fn with_master_seed(&self, master: u64) -> Self {
        let mut s = self.clone();
        let mix = |x: &mut u64| *x = mix_seed(master, *x);
        match &mut s {
            SuiteConfig::Lyapunov(p) => mix(&mut p.seed),
            SuiteConfig::Kolmogorov(p) => mix(&mut p.seed),
            SuiteConfig::TailMass(p) => mix(&mut p.seed),
            SuiteConfig::BoxConsistency(p) => mix(&mut p.seed),
            SuiteConfig::IcContinuity(p) => mix(&mut p.seed),
            SuiteConfig::Ergodic(p) => mix(&mut p.seed),
            SuiteConfig::Martingale(p) => mix(&mut p.seed),
            SuiteConfig::Tightness(p) => {
                mix(&mut p.seed);
                mix(&mut p.certificate.seed);
            }
            SuiteConfig::ProductTv(p) => mix(&mut p.seed),
        }
        s
    }
}

pub fn mix_seed(master: u64, local: u64) -> u64 {
    let mut z = master ^ local.rotate_left(32) ^ 0x6a09_e667_f3bc_c908;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub name: String,
    pub model: ModelConfig,
    pub interaction: InteractionConfig,
    pub weights: WeightConfig,
    pub lattice: LatticeConfig,
    pub integrator: IntegratorConfig,
    pub seed: u64,
    #[serde(default)]
    pub validation: ValidationBudget,
    #[serde(default)]
    pub diagnostics: Vec<SuiteConfig>,
}

/// Outcome of validating a configuration against the hypotheses.
#[derive(Clone, Debug)]
pub struct Validated {
    pub setup: Setup,
    pub weights: WeightReport,
    pub interaction: InteractionReport,
}

impl ExperimentConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path)?;
        Self::from_json(&s)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 of the canonical (compact) serialization.
    pub fn hash(&self) -> String {
        let canon = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(canon.as_bytes()))
    }

    /// SHA-256 of the compact serialization of the weight scheme alone.
    pub fn weights_hash(&self) -> String {
        let canon = serde_json::to_string(&self.weights).expect("weights serialize");
        hex::encode(Sha256::digest(canon.as_bytes()))
    }

    pub fn site_model(&self) -> Result<SiteModel> {
        self.model.lambda.validate()?;
        let lam = self.model.lambda.min();
        match (&self.model.custom, self.model.name.as_str()) {
            (Some(spec), _) => SiteModel::custom(spec, lam),
            (None, name) => SiteModel::by_name(name, lam),
        }
    }

    /// Builds the setup without running the sampling checks.
    pub fn setup(&self) -> Result<Setup> {
        let model = self.site_model()?;
        let d = self.lattice.d;
        if !(1..=3).contains(&d) {
            return Err(Error::Config(format!("lattice dimension {d} not in 1..=3")));
        }
        let q = InteractionSpec::from_config(&self.interaction, model.interaction_components())?;
        let w = self.weights.build(d, q.range());
        Ok(Setup::new(model, q, w, self.model.lambda.clone(), d))
    }

    /// Full validation: weights, interaction and λ hypotheses. Fails on the
    /// first violated hypothesis.
    pub fn validate(&self) -> Result<Validated> {
        let setup = self.setup()?;
        let weights = validate_weights(&setup.weights)?;
        weights.require()?;
        let interaction = validate_hypotheses(
            &setup.interaction,
            setup.d,
            setup.model.dim(),
            setup.model.interaction_components(),
            self.validation,
        )?;
        interaction.require()?;
        if self.integrator.h <= 0.0 || self.integrator.t < 0.0 {
            return Err(invalid("integrator needs h > 0 and T >= 0"));
        }
        Ok(Validated {
            setup,
            weights,
            interaction,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn sample() -> ExperimentConfig {
        ExperimentConfig {
            name: "t".into(),
            model: ModelConfig {
                name: "heisenberg".into(),
                custom: None,
                lambda: LambdaSchedule::Constant { value: 1.0 },
            },
            interaction: InteractionConfig {
                family: "tanh".into(),
                c: 1.0,
                r: 1,
                gain: 1.0,
                boundary: Default::default(),
            },
            weights: WeightConfig::Factorial {
                delta: 0.5,
                k: 1.0,
                horizon: 50,
            },
            lattice: LatticeConfig {
                d: 1,
                boxes: vec![1, 2],
            },
            integrator: IntegratorConfig {
                h: 1e-3,
                t: 0.1 + 0.2,
                stride: 10,
            },
            seed: 7,
            validation: ValidationBudget {
                patches: 2000,
                ..Default::default()
            },
            diagnostics: vec![SuiteConfig::Lyapunov(Default::default())],
        }
    }

    #[test]
    fn json_round_trip_is_exact() {
        let c = sample();
        let back = ExperimentConfig::from_json(&c.to_json()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.integrator.t.to_bits(), (0.1f64 + 0.2).to_bits());
        assert_eq!(back.hash(), c.hash());
    }

    #[test]
    fn unit_weights_name_h4() {
        let mut c = sample();
        c.weights = WeightConfig::Explicit {
            delta: 0.5,
            k: 1.0,
            shell_u: vec![1.0; 30],
            shell_v: vec![1.0; 30],
        };
        match c.validate() {
            Err(Error::HypothesisViolated { hypothesis, .. }) => assert_eq!(hypothesis, "H4"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn nonpositive_lambda_names_h3() {
        let mut c = sample();
        c.model.lambda = LambdaSchedule::Constant { value: 0.0 };
        match c.validate() {
            Err(Error::HypothesisViolated { hypothesis, .. }) => assert_eq!(hypothesis, "H3"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn master_seed_changes_suite_seeds() {
        let s = SuiteConfig::default_for("ergodic").unwrap();
        assert_ne!(s.with_master_seed(1), s.with_master_seed(2));
        assert_eq!(s.with_master_seed(1), s.with_master_seed(1));
    }
}
