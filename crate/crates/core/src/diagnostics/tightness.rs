//! Tightness of the finite-box invariant measures: stationarity of
//! `L_n W^2_n` under long-run time averages and occupancy of the compact sets
//! `K_ε` built from the Lyapunov certificate constants.

use serde::{Deserialize, Serialize};

use super::lyapunov::{box_lyapunov, lyapunov_verify, LyapunovCertificate, LyapunovParams};
use super::stats::{batch_means, mean_se};
use super::{Curve, Outcome, Setup, SuiteOutput, Verdict};
use crate::error::{invalid, Result};
use crate::geometry::{compactness_threshold_set, in_compact_set, SiteState};
use crate::simulate::{NoisePlan, Stepper};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TightnessParams {
    pub boxes: Vec<usize>,
    pub h: f64,
    pub burn_in: f64,
    pub horizon: f64,
    pub stride: u64,
    pub batches: usize,
    pub eps: Vec<f64>,
    pub initial_site: Vec<f64>,
    pub seed: u64,
    pub certificate: LyapunovParams,
}

impl Default for TightnessParams {
    fn default() -> Self {
        TightnessParams {
            boxes: vec![1, 2, 3],
            h: 1e-3,
            burn_in: 100.0,
            horizon: 1000.0,
            stride: 10,
            batches: 20,
            eps: vec![0.1, 0.5],
            initial_site: vec![0.5, -0.5, 0.25],
            seed: 51,
            certificate: LyapunovParams {
                k: 2,
                ..Default::default()
            },
        }
    }
}

/// Time averages over the post-burn-in part of one trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxAverages {
    pub n: usize,
    pub samples: usize,
    pub generator_mean: f64,
    pub generator_se: f64,
    /// Means of the two halves and the standard error of their difference.
    pub halves: (f64, f64),
    pub halves_se: f64,
    pub w_mean: f64,
    /// Occupancy of `K_ε` per entry of the ε grid.
    pub occupancy: Vec<f64>,
    pub blow_up: bool,
}

pub fn box_averages(
    setup: &Setup,
    n: usize,
    p: &TightnessParams,
    cert: &LyapunovCertificate,
) -> Result<BoxAverages> {
    let sys = setup.system(n)?;
    let lat = sys.lattice();
    let dim = sys.dim();
    let w = box_lyapunov(setup, n, p.certificate.k)?;
    let prep = sys.prepare(&w)?;
    let thresholds: Vec<Vec<f64>> = p
        .eps
        .iter()
        .map(|e| compactness_threshold_set(*e, cert.c_k, cert.big_c_w, &setup.weights, lat))
        .collect::<Result<_>>()?;
    let init = setup.uniform_config(n, &p.initial_site)?;
    let plan = NoisePlan::new(p.seed ^ n as u64, p.h, p.burn_in + p.horizon)?;
    let burn = (p.burn_in / p.h).round() as u64;
    let total = plan.steps()?;
    let stride = p.stride.max(1);
    let mut st = Stepper::new(&sys, &init, &plan, 0)?;
    let mut blow_up = !st.advance(burn);
    let mut gen = Vec::new();
    let mut wv = Vec::new();
    let mut hits = vec![0usize; p.eps.len()];
    let mut k = burn;
    while !blow_up && k < total {
        let s = stride.min(total - k);
        if !st.advance(s) {
            blow_up = true;
            break;
        }
        k += s;
        let a = st.state();
        gen.push(prep.generator(&sys, a));
        wv.push(prep.value(a));
        let sites: Vec<SiteState> = a.chunks(dim).map(SiteState::from_slice).collect();
        for (h, t) in hits.iter_mut().zip(&thresholds) {
            if in_compact_set(&sites, t) {
                *h += 1;
            }
        }
    }
    let (gm, gse) = batch_means(&gen, p.batches);
    let half = gen.len() / 2;
    let (m1, s1) = batch_means(&gen[..half], p.batches / 2);
    let (m2, s2) = batch_means(&gen[half..], p.batches / 2);
    Ok(BoxAverages {
        n,
        samples: gen.len(),
        generator_mean: gm,
        generator_se: gse,
        halves: (m1, m2),
        halves_se: (s1 * s1 + s2 * s2).sqrt(),
        w_mean: mean_se(&wv).0,
        occupancy: hits
            .iter()
            .map(|h| *h as f64 / gen.len().max(1) as f64)
            .collect(),
        blow_up,
    })
}

pub fn invariant_tightness(setup: &Setup, p: &TightnessParams) -> Result<SuiteOutput> {
    if p.certificate.k != 2 {
        return Err(invalid("tightness uses the k = 2 certificate"));
    }
    if p.batches < 4 {
        return Err(invalid("need at least four batches"));
    }
    let cert = lyapunov_verify(setup, &p.certificate)?;
    let mut out = SuiteOutput::default();
    let mut cols = vec![
        "n".to_string(),
        "generator_mean".into(),
        "se".into(),
        "W_mean".into(),
    ];
    cols.extend(p.eps.iter().map(|e| format!("occupancy_eps_{e}")));
    let col_refs: Vec<&str> = cols.iter().map(|s| s.as_str()).collect();
    let mut curve = Curve::new("invariant_tightness", &col_refs);
    let mut stationary = Outcome::Pass;
    let mut occupied = true;
    let mut worst_z: f64 = 0.0;
    let mut v_occ = Verdict::new(
        "invariant_occupancy",
        "time-average occupancy of K_eps >= 1 - eps for every box, thresholds from (c_2, C_W)",
        0.0,
        0.0,
        Outcome::Pass,
    )
    .metric("c_2", cert.c_k)
    .metric("C_W", cert.big_c_w);
    let mut min_occ_margin = f64::INFINITY;
    for &n in &p.boxes {
        let b = box_averages(setup, n, p, &cert)?;
        let mut row = vec![n as f64, b.generator_mean, b.generator_se, b.w_mean];
        row.extend(&b.occupancy);
        curve.push(row);
        if b.blow_up {
            stationary = stationary.and(Outcome::Inconclusive);
            continue;
        }
        let z = b.generator_mean.abs() / b.generator_se;
        worst_z = worst_z.max(z);
        let split = (b.halves.0 - b.halves.1).abs() > 3.0 * b.halves_se;
        if split {
            stationary = stationary.and(Outcome::Inconclusive);
        } else if z > 3.0 {
            stationary = Outcome::Fail;
        }
        for (e, o) in p.eps.iter().zip(&b.occupancy) {
            min_occ_margin = min_occ_margin.min(o - (1.0 - e));
            if *o < 1.0 - e {
                occupied = false;
            }
            v_occ = v_occ.metric(&format!("occupancy_n{n}_eps_{e}"), *o);
        }
    }
    out.curves.push(curve);
    out.verdicts.push(
        Verdict::new(
            "invariant_stationarity",
            "time average of L_n W^2_n within 3 batch-means standard errors of 0",
            worst_z,
            3.0,
            stationary,
        )
        .metric("worst_abs_mean_over_se", worst_z),
    );
    v_occ.estimate = min_occ_margin;
    v_occ.outcome = Outcome::from_bool(occupied);
    out.verdicts.push(v_occ);
    Ok(out)
}
