//! Moment estimates: Kolmogorov-type increment scaling
//! `E‖A(t) − A(s)‖_S^8 ≤ C(T)|t − s|^2` and uniform smallness of the weighted
//! tail mass `E Σ_{shells > m} ‖A_i(t)‖_H^8 u(i)`.

use serde::{Deserialize, Serialize};

use super::stats::{linear_fit, mean_se};
use super::{Curve, Outcome, Setup, SuiteOutput, Verdict};
use crate::error::{invalid, Result};
use crate::geometry::{homogeneous_norm8, shell_of, SiteState};
use crate::simulate::{run_replicas, NoisePlan, Stepper};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KolmogorovParams {
    pub boxes: Vec<usize>,
    pub s: f64,
    pub gaps: Vec<f64>,
    pub h: f64,
    pub replicas: u64,
    pub initial_site: Vec<f64>,
    pub seed: u64,
    pub min_slope: f64,
    pub ratio_factor: f64,
}

impl Default for KolmogorovParams {
    fn default() -> Self {
        KolmogorovParams {
            boxes: vec![1, 2, 3],
            s: 0.1,
            gaps: vec![1e-3, 2e-3, 5e-3, 1e-2, 2e-2, 5e-2, 1e-1],
            h: 1e-3,
            replicas: 10_000,
            initial_site: vec![0.5, -0.5, 0.25],
            seed: 11,
            min_slope: 1.7,
            ratio_factor: 3.0,
        }
    }
}

fn steps_for(x: f64, h: f64) -> Result<u64> {
    let k = (x / h).round();
    if k < 0.0 || (k * h - x).abs() > 1e-9 * x.max(h) {
        return Err(invalid(format!("time {x} is not a multiple of h = {h}")));
    }
    Ok(k as u64)
}

/// Per-box increment moments for every gap.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IncrementMoments {
    pub n: usize,
    pub gaps: Vec<f64>,
    pub mean: Vec<f64>,
    pub se: Vec<f64>,
    pub slope: f64,
    /// `max_g E/g^2` divided by `Σ_{Π_n} u(i)`.
    pub normalized_constant: f64,
    pub blow_ups: u64,
}

pub fn increment_moments(
    setup: &Setup,
    n: usize,
    p: &KolmogorovParams,
    workers: usize,
) -> Result<IncrementMoments> {
    let sys = setup.system(n)?;
    let init = setup.uniform_config(n, &p.initial_site)?;
    let u = setup.weights.u_on(sys.lattice())?;
    let s_steps = steps_for(p.s, p.h)?;
    let gap_steps: Vec<u64> = p
        .gaps
        .iter()
        .map(|g| steps_for(*g, p.h))
        .collect::<Result<_>>()?;
    if gap_steps.iter().any(|g| *g == 0) || gap_steps.windows(2).any(|w| w[1] <= w[0]) {
        return Err(invalid("gaps must be positive, increasing multiples of h"));
    }
    let max_gap = *gap_steps.last().unwrap();
    let plan = NoisePlan::new(p.seed, p.h, (s_steps + max_gap) as f64 * p.h)?;
    let d = sys.dim();
    let per: Vec<Option<Vec<f64>>> = run_replicas(p.replicas, workers, |rep| {
        let mut st = Stepper::new(&sys, &init, &plan, rep).ok()?;
        if !st.advance(s_steps) {
            return None;
        }
        let base = st.state().to_vec();
        let mut out = Vec::with_capacity(gap_steps.len());
        let mut done = 0;
        for &g in &gap_steps {
            if !st.advance(g - done) {
                return None;
            }
            done = g;
            let cur = st.state();
            let mut acc = 0.0;
            for (i, ui) in u.iter().enumerate() {
                let a = SiteState::from_slice(&cur[i * d..(i + 1) * d]);
                let b = SiteState::from_slice(&base[i * d..(i + 1) * d]);
                acc += ui * homogeneous_norm8(&a.sub(&b));
            }
            out.push(acc);
        }
        Some(out)
    });
    let blow_ups = per.iter().filter(|r| r.is_none()).count() as u64;
    let rows: Vec<&Vec<f64>> = per.iter().flatten().collect();
    let mut mean = Vec::new();
    let mut se = Vec::new();
    for k in 0..gap_steps.len() {
        let col: Vec<f64> = rows.iter().map(|r| r[k]).collect();
        let (m, s) = mean_se(&col);
        mean.push(m);
        se.push(s);
    }
    let lx: Vec<f64> = p.gaps.iter().map(|g| g.ln()).collect();
    let ly: Vec<f64> = mean.iter().map(|m| m.ln()).collect();
    let slope = linear_fit(&lx, &ly).map(|f| f.slope).unwrap_or(f64::NAN);
    let sum_u: f64 = u.iter().sum();
    let cmax = mean
        .iter()
        .zip(&p.gaps)
        .map(|(m, g)| m / (g * g))
        .fold(0.0, f64::max);
    Ok(IncrementMoments {
        n,
        gaps: p.gaps.clone(),
        mean,
        se,
        slope,
        normalized_constant: cmax / sum_u,
        blow_ups,
    })
}

pub fn kolmogorov_moment_check(
    setup: &Setup,
    p: &KolmogorovParams,
    workers: usize,
) -> Result<SuiteOutput> {
    let mut out = SuiteOutput::default();
    let mut curve = Curve::new("kolmogorov_increments", &["n", "gap", "mean", "se"]);
    let mut results = Vec::new();
    for &n in &p.boxes {
        let r = increment_moments(setup, n, p, workers)?;
        for k in 0..r.gaps.len() {
            curve.push(vec![n as f64, r.gaps[k], r.mean[k], r.se[k]]);
        }
        results.push(r);
    }
    out.curves.push(curve);
    let min_slope = results
        .iter()
        .map(|r| r.slope)
        .fold(f64::INFINITY, f64::min);
    let underpowered = results.iter().any(|r| {
        r.mean
            .iter()
            .zip(&r.se)
            .any(|(m, s)| !(*s <= 0.2 * m.abs()))
            || r.blow_ups > 0
    });
    let cs: Vec<f64> = results.iter().map(|r| r.normalized_constant).collect();
    let cmin = cs.iter().cloned().fold(f64::INFINITY, f64::min);
    let cmax = cs.iter().cloned().fold(0.0, f64::max);
    let bounded = cmax <= p.ratio_factor * cmin;
    let outcome = if underpowered {
        Outcome::Inconclusive
    } else {
        Outcome::from_bool(min_slope >= p.min_slope && bounded)
    };
    let mut v = Verdict::new(
        "kolmogorov_scaling",
        "E||A(t)-A(s)||_S^8 <= C(T)|t-s|^2: log-log slope >= min_slope and C_n / sum_{Pi_n} u bounded across boxes",
        min_slope,
        0.0,
        outcome,
    )
    .metric("min_slope_required", p.min_slope)
    .metric("constant_ratio", cmax / cmin);
    for r in &results {
        v = v
            .metric(&format!("slope_n{}", r.n), r.slope)
            .metric(&format!("constant_n{}", r.n), r.normalized_constant);
    }
    if underpowered {
        v = v.with_note("standard error above 20% of an estimate or blow-up");
    }
    out.verdicts.push(v);
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TailParams {
    pub boxes: Vec<usize>,
    pub t: f64,
    pub h: f64,
    pub replicas: u64,
    pub initial_site: Vec<f64>,
    pub deltas: Vec<f64>,
    pub seed: u64,
}

impl Default for TailParams {
    fn default() -> Self {
        TailParams {
            boxes: vec![2, 4, 6],
            t: 0.25,
            h: 1e-3,
            replicas: 400,
            initial_site: vec![0.5, -0.5, 0.25],
            deltas: vec![50.0, 20.0],
            seed: 12,
        }
    }
}

/// Tail mass `E Σ_{shell(i) > m} u(i)‖A_i(t)‖_H^8` for `m = 0..=n`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailCurve {
    pub n: usize,
    pub mean: Vec<f64>,
    pub se: Vec<f64>,
    /// `Σ_{shell > m} u(i)(1 + ‖a_i‖^8)` for the initial configuration.
    pub majorant: Vec<f64>,
}

pub fn tail_curve(setup: &Setup, n: usize, p: &TailParams, workers: usize) -> Result<TailCurve> {
    let sys = setup.system(n)?;
    let init = setup.uniform_config(n, &p.initial_site)?;
    let lat = sys.lattice();
    let u = setup.weights.u_on(lat)?;
    let shells: Vec<usize> = lat.sites().iter().map(|s| shell_of(s, lat.r())).collect();
    let plan = NoisePlan::new(p.seed, p.h, p.t)?;
    let steps = plan.steps()?;
    let d = sys.dim();
    let per: Vec<Vec<f64>> = run_replicas(p.replicas, workers, |rep| {
        let mut st = match Stepper::new(&sys, &init, &plan, rep) {
            Ok(s) => s,
            Err(_) => return vec![f64::NAN; n + 1],
        };
        if !st.advance(steps) {
            return vec![f64::INFINITY; n + 1];
        }
        let s = st.state();
        (0..=n)
            .map(|m| {
                (0..lat.len())
                    .filter(|&i| shells[i] > m)
                    .map(|i| {
                        u[i] * homogeneous_norm8(&SiteState::from_slice(&s[i * d..(i + 1) * d]))
                    })
                    .fold(0.0, |a, b| a + b)
            })
            .collect()
    });
    let mut mean = Vec::new();
    let mut se = Vec::new();
    for m in 0..=n {
        let col: Vec<f64> = per.iter().map(|r| r[m]).collect();
        let (a, b) = mean_se(&col);
        mean.push(a);
        se.push(b);
    }
    let a0 = homogeneous_norm8(&SiteState::from_slice(&p.initial_site));
    let majorant = (0..=n)
        .map(|m| {
            (0..lat.len())
                .filter(|&i| shells[i] > m)
                .map(|i| u[i] * (1.0 + a0))
                .fold(0.0, |a, b| a + b)
        })
        .collect();
    Ok(TailCurve {
        n,
        mean,
        se,
        majorant,
    })
}

pub fn tail_mass_check(setup: &Setup, p: &TailParams, workers: usize) -> Result<SuiteOutput> {
    if p.boxes.is_empty() {
        return Err(invalid("tail check needs at least one box"));
    }
    let mut out = SuiteOutput::default();
    let mut curve = Curve::new("tail_mass", &["n", "m", "mean", "se", "majorant"]);
    let mut curves = Vec::new();
    for &n in &p.boxes {
        let c = tail_curve(setup, n, p, workers)?;
        for m in 0..=n {
            curve.push(vec![n as f64, m as f64, c.mean[m], c.se[m], c.majorant[m]]);
        }
        curves.push(c);
    }
    out.curves.push(curve);
    let max_n = *p.boxes.iter().max().unwrap();
    // m below the largest box keeps a genuine tail in that box
    let m_limit = max_n.saturating_sub(1);
    let tail_at = |c: &TailCurve, m: usize| {
        if m >= c.mean.len() {
            (0.0, 0.0)
        } else {
            (c.mean[m], c.se[m])
        }
    };
    let nonfinite = curves.iter().any(|c| c.mean.iter().any(|v| !v.is_finite()));
    let mut outcome = Outcome::Pass;
    let mut v = Verdict::new(
        "tail_mass",
        "sup_n E sum_{shells > m} ||A_i(t)||_H^8 u(i) < delta for some m, for every delta in the grid",
        0.0,
        0.0,
        Outcome::Pass,
    );
    let mut worst_needed: f64 = 0.0;
    for &delta in &p.deltas {
        let found = (0..=m_limit).find(|&m| {
            curves.iter().all(|c| {
                let (a, s) = tail_at(c, m);
                a + 3.0 * s < delta
            })
        });
        match found {
            Some(m) => {
                v = v.metric(&format!("m_for_delta_{delta}"), m as f64);
                worst_needed = worst_needed.max(m as f64);
            }
            None => outcome = Outcome::Fail,
        }
    }
    // doubling comparison between the two largest boxes at m = 0
    if curves.len() >= 2 {
        let (a, b) = (&curves[curves.len() - 2], &curves[curves.len() - 1]);
        let m = a.n.saturating_sub(1);
        let (ma, sa) = tail_at(a, m);
        let (mb, sb) = tail_at(b, m);
        v = v.metric(
            "largest_boxes_tail_gap_in_se",
            (ma - mb).abs() / (sa * sa + sb * sb).sqrt().max(1e-300),
        );
    }
    if nonfinite {
        outcome = Outcome::Inconclusive;
        v = v.with_note("blow-up in some replica");
    }
    v.outcome = outcome;
    v.estimate = worst_needed;
    out.verdicts.push(v);
    Ok(out)
}
