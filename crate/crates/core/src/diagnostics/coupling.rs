//! Synchronous-coupling checks: consistency of growing boxes on a fixed
//! sub-box, and continuity of the law in the initial configuration.

use serde::{Deserialize, Serialize};

use super::stats::{linear_fit, mean_se};
use super::{Curve, Outcome, Setup, SuiteOutput, Verdict};
use crate::error::{invalid, Result};
use crate::geometry::{s_distance8, SiteState};
use crate::simulate::{couple, run_replicas, shared_positions, NoisePlan, Stepper};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoxConsistencyParams {
    pub k: usize,
    pub t: f64,
    pub h: f64,
    pub boxes: Vec<usize>,
    /// `l = m + offset`.
    pub offset: usize,
    pub replicas: u64,
    pub initial_site: Vec<f64>,
    pub eps: Vec<f64>,
    pub seed: u64,
}

impl Default for BoxConsistencyParams {
    fn default() -> Self {
        BoxConsistencyParams {
            k: 1,
            t: 1.0,
            h: 1e-3,
            boxes: vec![2, 3, 4, 5, 6],
            offset: 2,
            replicas: 1000,
            initial_site: vec![0.5, -0.5, 0.25],
            eps: vec![1e-1, 1e-2],
            seed: 21,
        }
    }
}

/// `E sup_{t ≤ T} |A^l_k(t) − A^m_k(t)|^2` per `m`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyCurve {
    pub m: Vec<usize>,
    pub mean: Vec<f64>,
    pub se: Vec<f64>,
    /// Largest single-replica value, used for the exact-zero check.
    pub max: Vec<f64>,
    pub blow_ups: u64,
}

pub fn consistency_curve(
    setup: &Setup,
    p: &BoxConsistencyParams,
    workers: usize,
) -> Result<ConsistencyCurve> {
    if p.boxes.iter().any(|m| *m < p.k) {
        return Err(invalid("every box must contain the observed sub-box"));
    }
    let plan = NoisePlan::new(p.seed, p.h, p.t)?;
    let mut out = ConsistencyCurve {
        m: p.boxes.clone(),
        mean: vec![],
        se: vec![],
        max: vec![],
        blow_ups: 0,
    };
    for &m in &p.boxes {
        let l = m + p.offset;
        let (sm, sl) = (setup.system(m)?, setup.system(l)?);
        let (im, il) = (
            setup.uniform_config(m, &p.initial_site)?,
            setup.uniform_config(l, &p.initial_site)?,
        );
        let vals: Vec<Option<f64>> = run_replicas(p.replicas, workers, |rep| {
            let c = couple(&sm, &im, &sl, &il, &plan, rep, p.k, u64::MAX).ok()?;
            if c.blow_up.is_some() {
                None
            } else {
                Some(c.sup_distance2)
            }
        });
        out.blow_ups += vals.iter().filter(|v| v.is_none()).count() as u64;
        let xs: Vec<f64> = vals.into_iter().flatten().collect();
        let (a, s) = mean_se(&xs);
        out.mean.push(a);
        out.se.push(s);
        out.max.push(xs.iter().cloned().fold(0.0, f64::max));
    }
    Ok(out)
}

pub fn box_consistency(
    setup: &Setup,
    p: &BoxConsistencyParams,
    workers: usize,
) -> Result<SuiteOutput> {
    let mut out = SuiteOutput::default();
    let c = consistency_curve(setup, p, workers)?;
    let mut curve = Curve::new(
        "box_consistency",
        &["m", "l", "mean_sup_dist2", "se", "max"],
    );
    for j in 0..c.m.len() {
        curve.push(vec![
            c.m[j] as f64,
            (c.m[j] + p.offset) as f64,
            c.mean[j],
            c.se[j],
            c.max[j],
        ]);
    }
    out.curves.push(curve);

    let statement =
        "E sup_{t<=T} |A^l_k - A^m_k|^2 non-increasing in m and below every eps once m is large";
    let mut v = Verdict::new(
        "box_consistency",
        statement,
        *c.mean.last().unwrap_or(&f64::NAN),
        3.0 * c.se.last().copied().unwrap_or(f64::NAN),
        Outcome::Pass,
    );
    if setup.interaction.is_zero() {
        let worst = c.max.iter().cloned().fold(0.0, f64::max);
        v.outcome = Outcome::from_bool(worst == 0.0);
        v = v
            .metric("max_distance", worst)
            .with_note("decoupled sites: exact zero expected");
        out.verdicts.push(v);
        return Ok(out);
    }
    let mut monotone = true;
    let mut worst_rise: f64 = f64::NEG_INFINITY;
    for j in 1..c.m.len() {
        let band = 2.0 * (c.se[j].powi(2) + c.se[j - 1].powi(2)).sqrt();
        let rise = c.mean[j] - c.mean[j - 1] - band;
        worst_rise = worst_rise.max(rise);
        if rise > 0.0 {
            monotone = false;
        }
    }
    let mut below = true;
    for &e in &p.eps {
        let n_eps = (0..c.m.len()).find(|&j| (j..c.m.len()).all(|i| c.mean[i] + 3.0 * c.se[i] < e));
        match n_eps {
            Some(j) => v = v.metric(&format!("N_for_eps_{e}"), c.m[j] as f64),
            None => below = false,
        }
    }
    v.outcome = Outcome::from_bool(monotone && below);
    if c.blow_ups > 0 {
        v.outcome = Outcome::Inconclusive;
        v = v.with_note(format!("{} replicas blew up", c.blow_ups));
    }
    v = v.metric("worst_rise_over_2se", worst_rise);
    out.verdicts.push(v);
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ContinuityParams {
    pub boxes: Vec<usize>,
    pub k: usize,
    pub t: f64,
    pub h: f64,
    pub etas: Vec<f64>,
    pub replicas: u64,
    pub initial_site: Vec<f64>,
    /// Direction of the per-site perturbation before scaling.
    pub direction: Vec<f64>,
    pub seed: u64,
}

impl Default for ContinuityParams {
    fn default() -> Self {
        ContinuityParams {
            boxes: vec![1, 3],
            k: 1,
            t: 1.0,
            h: 1e-3,
            etas: vec![0.4, 0.2, 0.1, 0.05, 0.025],
            replicas: 400,
            initial_site: vec![0.5, -0.5, 0.25],
            direction: vec![1.0, -1.0, 1.0],
            seed: 22,
        }
    }
}

/// `E|A^{m,a}_k(t) − A^{m,b}_k(t)|^2` against `||a − b||_S`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Modulus {
    pub m: usize,
    pub s_distance: Vec<f64>,
    pub mean: Vec<f64>,
    pub se: Vec<f64>,
}

/// Configuration `b = a + η·direction` at every site.
pub fn perturbed(setup: &Setup, m: usize, p: &ContinuityParams, eta: f64) -> Result<Vec<f64>> {
    let dim = setup.model.dim();
    if p.direction.len() != dim {
        return Err(invalid("perturbation direction has the wrong dimension"));
    }
    let site: Vec<f64> = p
        .initial_site
        .iter()
        .zip(&p.direction)
        .map(|(a, d)| a + eta * d)
        .collect();
    setup.uniform_config(m, &site)
}

pub fn modulus(setup: &Setup, m: usize, p: &ContinuityParams, workers: usize) -> Result<Modulus> {
    let sys = setup.system(m)?;
    let lat = sys.lattice();
    let dim = sys.dim();
    let a = setup.uniform_config(m, &p.initial_site)?;
    let u = setup.weights.u_on(lat)?;
    let plan = NoisePlan::new(p.seed, p.h, p.t)?;
    let steps = plan.steps()?;
    let sub = lat.sub_box_positions(p.k);
    let sites: Vec<_> = sub.iter().map(|&i| lat.site(i)).collect();
    let pos = shared_positions(lat, &sites)?;
    let to_sites =
        |c: &[f64]| -> Vec<SiteState> { c.chunks(dim).map(SiteState::from_slice).collect() };
    let mut res = Modulus {
        m,
        s_distance: vec![],
        mean: vec![],
        se: vec![],
    };
    for &eta in &p.etas {
        let b = perturbed(setup, m, p, eta)?;
        res.s_distance
            .push(s_distance8(&to_sites(&a), &to_sites(&b), &u).powf(0.125));
        let vals: Vec<f64> = run_replicas(p.replicas, workers, |rep| {
            let (Ok(mut sa), Ok(mut sb)) = (
                Stepper::new(&sys, &a, &plan, rep),
                Stepper::new(&sys, &b, &plan, rep),
            ) else {
                return f64::NAN;
            };
            if !(sa.advance(steps) & sb.advance(steps)) {
                return f64::INFINITY;
            }
            crate::simulate::restricted_distance2(sa.state(), &pos, sb.state(), &pos, dim)
        });
        let (mu, se) = mean_se(&vals);
        res.mean.push(mu);
        res.se.push(se);
    }
    Ok(res)
}

pub fn initial_condition_continuity(
    setup: &Setup,
    p: &ContinuityParams,
    workers: usize,
) -> Result<SuiteOutput> {
    let mut out = SuiteOutput::default();
    let mut curve = Curve::new(
        "ic_continuity",
        &["m", "eta", "s_distance", "mean_dist2", "se"],
    );
    let mut mods = Vec::new();
    for &m in &p.boxes {
        let md = modulus(setup, m, p, workers)?;
        for j in 0..p.etas.len() {
            curve.push(vec![
                m as f64,
                p.etas[j],
                md.s_distance[j],
                md.mean[j],
                md.se[j],
            ]);
        }
        mods.push(md);
    }
    out.curves.push(curve);
    let finite = mods.iter().all(|md| md.mean.iter().all(|v| v.is_finite()));
    let mut monotone = true;
    let mut min_slope = f64::INFINITY;
    for md in &mods {
        let mut idx: Vec<usize> = (0..md.s_distance.len()).collect();
        idx.sort_by(|&i, &j| md.s_distance[i].total_cmp(&md.s_distance[j]));
        for w in idx.windows(2) {
            let (i, j) = (w[0], w[1]);
            let band = 2.0 * (md.se[i].powi(2) + md.se[j].powi(2)).sqrt();
            if md.mean[i] > md.mean[j] + band {
                monotone = false;
            }
        }
        let lx: Vec<f64> = md.s_distance.iter().map(|v| v.ln()).collect();
        let ly: Vec<f64> = md.mean.iter().map(|v| v.max(1e-300).ln()).collect();
        if let Some(f) = linear_fit(&lx, &ly) {
            min_slope = min_slope.min(f.slope);
        }
    }
    // uniformity in m: normalized moduli at every eta agree within a factor 2
    let mut spread: f64 = 1.0;
    for j in 0..p.etas.len() {
        let r: Vec<f64> = mods
            .iter()
            .map(|md| md.mean[j] / md.s_distance[j].powi(2))
            .collect();
        let lo = r.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = r.iter().cloned().fold(0.0, f64::max);
        spread = spread.max(hi / lo);
    }
    let mut within_2se = 1.0;
    if mods.len() >= 2 {
        let (a, b) = (&mods[0], &mods[mods.len() - 1]);
        let n_ok = (0..p.etas.len())
            .filter(|&j| {
                (a.mean[j] - b.mean[j]).abs() <= 2.0 * (a.se[j].powi(2) + b.se[j].powi(2)).sqrt()
            })
            .count();
        within_2se = n_ok as f64 / p.etas.len() as f64;
    }
    let outcome = if !finite {
        Outcome::Inconclusive
    } else {
        Outcome::from_bool(monotone && min_slope >= 1.0 && spread <= 2.0)
    };
    let v = Verdict::new(
        "ic_continuity",
        "E|A^{m,a}_k(t) - A^{m,b}_k(t)|^2 -> 0 monotonically as ||a-b||_S -> 0, uniformly in m",
        min_slope,
        0.0,
        outcome,
    )
    .metric("min_loglog_slope", min_slope)
    .metric("uniformity_ratio", spread)
    .metric("fraction_within_2se_first_last_box", within_2se);
    out.verdicts.push(v);
    Ok(out)
}

/// Mean squared difference of a single free Heisenberg site after `t` for two
/// starts differing by `(dx, dy, dz)`.
pub fn free_heisenberg_oracle(lambda: f64, t: f64, d: [f64; 3]) -> f64 {
    let dxy = d[0] * d[0] + d[1] * d[1];
    let e2 = (-2.0 * lambda * t).exp();
    let e4 = (-4.0 * lambda * t).exp();
    e2 * dxy + e4 * d[2] * d[2] + dxy * (e2 - e4) / (4.0 * lambda)
}
