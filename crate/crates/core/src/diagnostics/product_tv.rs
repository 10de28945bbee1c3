//! Product measures of distinct one-dimensional laws separate in total
//! variation: with `A_n = {|n⁻¹Σf(x_i) − ϖf| < ε/2}` and `ε = |ϖf − ϱf|`,
//! `ϖⁿ(A_n) − ϱⁿ(A_n)` is a lower bound for the distance and tends to 1.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::stats::mean_se;
use super::{Curve, Outcome, SuiteOutput, Verdict};
use crate::error::{invalid, Error, Result};
use crate::simulate::standard_normal;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Gaussian {
    pub mean: f64,
    pub sd: f64,
}

impl Gaussian {
    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        self.mean + self.sd * standard_normal(rng)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TestFn {
    #[default]
    Tanh,
    Atan,
}

impl TestFn {
    fn eval(&self, x: f64) -> f64 {
        match self {
            TestFn::Tanh => x.tanh(),
            TestFn::Atan => x.atan() * std::f64::consts::FRAC_2_PI,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProductTvParams {
    pub first: Gaussian,
    pub second: Gaussian,
    pub f: TestFn,
    pub ns: Vec<usize>,
    pub replicas: u64,
    pub pilot: u64,
    pub target_n: usize,
    pub target_bound: f64,
    pub seed: u64,
}

impl Default for ProductTvParams {
    fn default() -> Self {
        ProductTvParams {
            first: Gaussian { mean: 0.0, sd: 1.0 },
            second: Gaussian { mean: 1.0, sd: 1.0 },
            f: TestFn::Tanh,
            ns: vec![1, 2, 5, 10, 20, 50, 100, 200],
            replicas: 10_000,
            pilot: 100_000,
            target_n: 200,
            target_bound: 0.9,
            seed: 61,
        }
    }
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

/// Pilot estimates of `ϖf` and `ϱf` with standard errors.
pub fn pilot_means(p: &ProductTvParams) -> ((f64, f64), (f64, f64)) {
    let run = |g: &Gaussian, s: u64| {
        let mut r = rng_for(p.seed, s);
        let xs: Vec<f64> = (0..p.pilot).map(|_| p.f.eval(g.sample(&mut r))).collect();
        mean_se(&xs)
    };
    (run(&p.first, 1), run(&p.second, 2))
}

/// `ϖⁿ(A_n) − ϱⁿ(A_n)` with its standard error, for a given centre `ϖf`
/// and width `ε`.
pub fn tv_lower_bound(p: &ProductTvParams, n: usize, centre: f64, eps: f64) -> (f64, f64) {
    let hit = |g: &Gaussian, s: u64| -> Vec<f64> {
        let mut r = rng_for(p.seed, s);
        (0..p.replicas)
            .map(|_| {
                let m = (0..n).map(|_| p.f.eval(g.sample(&mut r))).sum::<f64>() / n as f64;
                if (m - centre).abs() < eps / 2.0 {
                    1.0
                } else {
                    0.0
                }
            })
            .collect()
    };
    let base = 16 + 2 * n as u64;
    let (a, sa) = mean_se(&hit(&p.first, base));
    let (b, sb) = mean_se(&hit(&p.second, base + 1));
    (a - b, (sa * sa + sb * sb).sqrt())
}

pub fn product_tv_demo(p: &ProductTvParams) -> Result<SuiteOutput> {
    if p.ns.is_empty() || p.ns.contains(&0) {
        return Err(invalid("n grid must hold positive sizes"));
    }
    let ((ma, sa), (mb, sb)) = pilot_means(p);
    let eps = (ma - mb).abs();
    let sep_se = (sa * sa + sb * sb).sqrt();
    if !(eps >= 3.0 * sep_se) {
        return Err(Error::InsufficientSeparation(format!(
            "|mean f difference| = {eps:.3e} below 3 standard errors ({:.3e})",
            3.0 * sep_se
        )));
    }
    let mut curve = Curve::new("product_tv", &["n", "lower_bound", "se"]);
    let mut bounds = Vec::new();
    for &n in &p.ns {
        let (b, s) = tv_lower_bound(p, n, ma, eps);
        curve.push(vec![n as f64, b, s]);
        bounds.push((n, b, s));
    }
    let monotone = bounds
        .windows(2)
        .all(|w| w[1].1 + 2.0 * (w[0].2.powi(2) + w[1].2.powi(2)).sqrt() >= w[0].1);
    let at_target = bounds
        .iter()
        .filter(|b| b.0 >= p.target_n)
        .map(|b| b.1)
        .fold(f64::NAN, f64::max);
    let reached = at_target > p.target_bound;
    let se_target = bounds
        .iter()
        .find(|b| b.0 >= p.target_n)
        .map(|b| b.2)
        .unwrap_or(f64::NAN);
    let v = Verdict::new(
        "product_tv",
        "product measures of distinct laws: lower bound on total variation tends to 1 with n",
        at_target,
        3.0 * se_target,
        Outcome::from_bool(reached && monotone),
    )
    .metric("eps", eps)
    .metric("separation_se", sep_se)
    .metric("target_n", p.target_n as f64)
    .metric("monotone", if monotone { 1.0 } else { 0.0 });
    Ok(SuiteOutput {
        verdicts: vec![v],
        curves: vec![curve],
    })
}
