//! Exponential decay of `|E^a f(A_t) − E^b f(A_t)|` for bounded cylindrical
//! observables, estimated with paired (synchronously coupled) replicas.

use serde::{Deserialize, Serialize};

use super::stats::mean_se;
use super::{Curve, DecayFit, Outcome, Setup, SuiteOutput, Verdict};
use crate::error::{invalid, Result};
use crate::simulate::{restricted_distance2, run_replicas, NoisePlan, Stepper};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ErgodicParams {
    pub n: usize,
    pub h: f64,
    /// Horizon and fit window in units of `1/λ_min`.
    pub horizon: f64,
    pub fit_from: f64,
    pub points: usize,
    pub replicas: u64,
    pub start_a: Vec<f64>,
    pub start_b: Vec<f64>,
    pub seed: u64,
    /// Relative tolerance against `λ` for a free single site.
    pub rate_tolerance: f64,
}

impl Default for ErgodicParams {
    fn default() -> Self {
        ErgodicParams {
            n: 0,
            h: 5e-3,
            horizon: 5.0,
            fit_from: 1.0,
            points: 9,
            replicas: 2000,
            start_a: vec![1.0, 0.5, 0.0],
            start_b: vec![-1.0, -0.5, 0.0],
            seed: 31,
            rate_tolerance: 0.15,
        }
    }
}

/// Gap curves for the panel `tanh` of each coordinate of the centre site,
/// plus the mean squared coupling distance over the whole box.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapCurves {
    pub times: Vec<f64>,
    /// `gaps[c][j]`: `|E^a tanh(a_c) − E^b tanh(a_c)|` at `times[j]`.
    pub gaps: Vec<Vec<f64>>,
    pub gap_se: Vec<Vec<f64>>,
    pub distance2: Vec<f64>,
    pub blow_ups: u64,
}

pub fn gap_curves(setup: &Setup, p: &ErgodicParams, workers: usize) -> Result<GapCurves> {
    let sys = setup.system(p.n)?;
    let dim = sys.dim();
    if p.start_a.len() != dim || p.start_b.len() != dim {
        return Err(invalid("start states have the wrong dimension"));
    }
    if p.points < 3 || !(p.fit_from < p.horizon) {
        return Err(invalid("need at least three fit points inside the horizon"));
    }
    let scale = 1.0 / setup.lambdas.min();
    let a = setup.uniform_config(p.n, &p.start_a)?;
    let b = setup.uniform_config(p.n, &p.start_b)?;
    let t_end = p.horizon * scale;
    let total = (t_end / p.h).round() as u64;
    let plan = NoisePlan::new(p.seed, p.h, total as f64 * p.h)?;
    let marks: Vec<u64> = (0..p.points)
        .map(|j| {
            let t =
                (p.fit_from + (p.horizon - p.fit_from) * j as f64 / (p.points - 1) as f64) * scale;
            ((t / p.h).round() as u64).min(total)
        })
        .collect();
    let centre = sys.lattice().len() / 2;
    let all: Vec<usize> = (0..sys.n_sites()).collect();
    let per: Vec<Option<Vec<f64>>> = run_replicas(p.replicas, workers, |rep| {
        let mut sa = Stepper::new(&sys, &a, &plan, rep).ok()?;
        let mut sb = Stepper::new(&sys, &b, &plan, rep).ok()?;
        let mut row = Vec::with_capacity(marks.len() * (dim + 1));
        let mut done = 0;
        for &m in &marks {
            if !(sa.advance(m - done) & sb.advance(m - done)) {
                return None;
            }
            done = m;
            for c in 0..dim {
                row.push(sa.state()[centre * dim + c].tanh() - sb.state()[centre * dim + c].tanh());
            }
            row.push(restricted_distance2(
                sa.state(),
                &all,
                sb.state(),
                &all,
                dim,
            ));
        }
        Some(row)
    });
    let blow_ups = per.iter().filter(|r| r.is_none()).count() as u64;
    let rows: Vec<&Vec<f64>> = per.iter().flatten().collect();
    let col = |k: usize| -> (f64, f64) { mean_se(&rows.iter().map(|r| r[k]).collect::<Vec<_>>()) };
    let mut gaps = vec![Vec::new(); dim];
    let mut gap_se = vec![Vec::new(); dim];
    let mut distance2 = Vec::new();
    for j in 0..marks.len() {
        for c in 0..dim {
            let (m, s) = col(j * (dim + 1) + c);
            gaps[c].push(m.abs());
            gap_se[c].push(s);
        }
        distance2.push(col(j * (dim + 1) + dim).0);
    }
    Ok(GapCurves {
        times: marks.iter().map(|m| *m as f64 * p.h).collect(),
        gaps,
        gap_se,
        distance2,
        blow_ups,
    })
}

pub fn ergodic_decay(setup: &Setup, p: &ErgodicParams, workers: usize) -> Result<SuiteOutput> {
    let g = gap_curves(setup, p, workers)?;
    let dim = setup.model.dim();
    let mut out = SuiteOutput::default();
    let names = ["x", "y", "z"];
    let mut cols = vec!["t"];
    for c in 0..dim {
        cols.push(["gap_x", "gap_y", "gap_z"][c]);
        cols.push(["se_x", "se_y", "se_z"][c]);
    }
    cols.push("coupling_dist2");
    let mut curve = Curve::new(&format!("ergodic_gap_n{}", p.n), &cols);
    for j in 0..g.times.len() {
        let mut row = vec![g.times[j]];
        for c in 0..dim {
            row.push(g.gaps[c][j]);
            row.push(g.gap_se[c][j]);
        }
        row.push(g.distance2[j]);
        curve.push(row);
    }
    out.curves.push(curve);

    let fit = DecayFit::fit(&g.times, &g.gaps[0]);
    let noisy = g.gaps[0]
        .iter()
        .zip(&g.gap_se[0])
        .any(|(m, s)| !(*s <= 0.2 * m.abs()));
    let lam = setup.lambdas.min();
    let free = setup.interaction.is_zero() && p.n == 0;
    let mut v = match &fit {
        Some(f) => {
            let ok = if free {
                (f.rate - lam).abs() <= p.rate_tolerance * lam
            } else {
                f.rate > 0.0
            };
            let outcome = if !f.conclusive || noisy || g.blow_ups > 0 {
                Outcome::Inconclusive
            } else {
                Outcome::from_bool(ok)
            };
            Verdict::new(
                "ergodic_decay",
                "|E^a f(A_t) - E^b f(A_t)| <= K W(a) exp(-alpha t) with alpha > 0 (free site: alpha close to lambda)",
                f.rate,
                0.0,
                outcome,
            )
            .metric("rate_x", f.rate)
            .metric("r2_x", f.r2)
        }
        None => Verdict::new(
            "ergodic_decay",
            "|E^a f(A_t) - E^b f(A_t)| <= K W(a) exp(-alpha t) with alpha > 0",
            f64::NAN,
            0.0,
            Outcome::Inconclusive,
        )
        .with_note("gap vanished at too many fit points"),
    };
    v = v
        .metric("lambda_min", lam)
        .metric("sites", (2 * p.n + 1) as f64);
    for c in 1..dim {
        if let Some(f) = DecayFit::fit(&g.times, &g.gaps[c]) {
            v = v
                .metric(&format!("rate_{}", names[c]), f.rate)
                .metric(&format!("r2_{}", names[c]), f.r2);
        }
    }
    if let Some(f) = DecayFit::fit(&g.times, &g.distance2) {
        v = v
            .metric("coupling_rate", f.rate)
            .metric("coupling_r2", f.r2);
    }
    if noisy {
        v = v.with_note("standard error above 20% of a gap estimate");
    }
    out.verdicts.push(v);
    Ok(out)
}
