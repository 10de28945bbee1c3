//! Lyapunov drift certificates `L V^k + c_k V^k ≤ C_k` for one site and
//! `L_n W^k_n + c_k W^k_n ≤ C_W` for boxes, `W^k_n = 1 + Σ_i v(i) V^k(a_i)`.
//!
//! The single-site bound is taken worst-case over the interaction values
//! `|q_j| ≤ C_q` and over the λ range, so it holds at every site of every
//! box. Summing over sites gives the box constant
//! `C_W = c_k + C_k · Σ_{Z^d} v(i)`, which does not depend on `n`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Curve, Outcome, Setup, SuiteOutput, Verdict};
use crate::error::{invalid, Error, Result};
use crate::models::{CylindricalObservable, SiteModel};
use crate::poly::{CompiledPoly, RatPoly};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LyapunovParams {
    pub k: u32,
    /// Rate to certify; searched when absent.
    pub c: Option<f64>,
    pub r_min: f64,
    pub r_max: f64,
    pub shells: usize,
    pub directions: usize,
    pub boxes: Vec<usize>,
    pub box_samples: usize,
    pub seed: u64,
}

impl Default for LyapunovParams {
    fn default() -> Self {
        LyapunovParams {
            k: 1,
            c: None,
            r_min: 1e-2,
            r_max: 1e3,
            shells: 40,
            directions: 256,
            boxes: vec![1, 2, 3],
            box_samples: 2000,
            seed: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxCheck {
    pub n: usize,
    pub samples: usize,
    /// Largest sampled `L_n W + c W − C_W` (must be ≤ 0).
    pub worst_excess: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LyapunovCertificate {
    pub model: String,
    pub k: u32,
    pub c_k: f64,
    pub big_c_k: f64,
    pub big_c_w: f64,
    pub total_v: f64,
    /// Largest sampled value of the worst-case `L V^k + c_k V^k`.
    pub worst_value: f64,
    pub witness: Vec<f64>,
    pub radii: Vec<f64>,
    pub shell_max: Vec<f64>,
    /// Critical rate found by the search (equals `c_k` when it was given).
    pub c_critical: f64,
    pub box_checks: Vec<BoxCheck>,
}

/// Terms of maximal weighted degree, with variable `j` of weight `w[j]`.
pub fn leading_part(p: &RatPoly, w: &[u32]) -> RatPoly {
    let deg = |e: &Vec<u32>| e.iter().zip(w).map(|(a, b)| a * b).sum::<u32>();
    let top = p.terms().map(|(e, _)| deg(e)).max().unwrap_or(0);
    RatPoly::from_terms(
        p.nvars(),
        p.terms()
            .filter(|(e, _)| deg(e) == top)
            .map(|(e, c)| (e.clone(), c.clone())),
    )
}

/// `L V^k + c V^k` with `q ≡ 0` as an exact polynomial, `λ` and `c`
/// rational.
pub fn drift_polynomial(
    model: &SiteModel,
    k: u32,
    lambda: &num_rational::BigRational,
    c: &num_rational::BigRational,
) -> Result<RatPoly> {
    let v = model.lyapunov_candidate(k)?;
    let g = model.generator_parts(&v)?;
    Ok(&(&g.second - &g.dilation.scale(lambda)) + &v.scale(c))
}

fn unit_directions(dim: usize, count: usize) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(count + 2 * dim);
    for i in 0..dim {
        for s in [1.0, -1.0] {
            let mut e = vec![0.0; dim];
            e[i] = s;
            out.push(e);
        }
    }
    match dim {
        1 => {}
        2 => {
            for j in 0..count {
                let a = std::f64::consts::TAU * (j as f64 + 0.5) / count as f64;
                out.push(vec![a.cos(), a.sin()]);
            }
        }
        _ => {
            // Fibonacci sphere
            let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
            for j in 0..count {
                let z = 1.0 - 2.0 * (j as f64 + 0.5) / count as f64;
                let r = (1.0 - z * z).sqrt();
                let a = golden * j as f64;
                out.push(vec![r * a.cos(), r * a.sin(), z]);
            }
        }
    }
    out
}

fn scaled(dir: &[f64], rho: f64, w: &[u32]) -> Vec<f64> {
    dir.iter()
        .zip(w)
        .map(|(d, k)| d * rho.powi(*k as i32))
        .collect()
}

/// Worst-case drift pieces at one point: `base = max_λ(A − λB) + C_q Σ|P_j|`
/// and `V`.
struct SingleSiteSampler {
    second: CompiledPoly,
    dilation: CompiledPoly,
    interaction: Vec<CompiledPoly>,
    v: CompiledPoly,
    lambdas: [f64; 2],
    cq: f64,
}

impl SingleSiteSampler {
    fn new(setup: &Setup, k: u32) -> Result<Self> {
        let v = setup.model.lyapunov_candidate(k)?;
        let g = setup.model.generator_parts(&v)?;
        let cq = if setup.interaction.is_zero() {
            0.0
        } else {
            setup
                .interaction
                .analytic_bounds()
                .map(|b| b.h1)
                .unwrap_or(setup.interaction.bound())
        };
        Ok(SingleSiteSampler {
            second: g.second.compile(),
            dilation: g.dilation.compile(),
            interaction: g.interaction.iter().map(|p| p.compile()).collect(),
            v: v.compile(),
            lambdas: [setup.lambdas.min(), setup.lambdas.max()],
            cq,
        })
    }

    fn eval(&self, a: &[f64]) -> (f64, f64) {
        let s = self.second.eval(a);
        let d = self.dilation.eval(a);
        let base = self
            .lambdas
            .iter()
            .map(|l| s - l * d)
            .fold(f64::NEG_INFINITY, f64::max);
        let inter: f64 = self.interaction.iter().map(|p| p.eval(a).abs()).sum();
        (base + self.cq * inter, self.v.eval(a))
    }
}

struct Samples {
    radii: Vec<f64>,
    /// Per shell: (base, V, point).
    shells: Vec<Vec<(f64, f64, Vec<f64>)>>,
    origin: (f64, f64),
}

impl Samples {
    fn shell_max(&self, c: f64) -> Vec<(f64, usize)> {
        self.shells
            .iter()
            .map(|sh| {
                sh.iter()
                    .enumerate()
                    .map(|(i, (b, v, _))| (b + c * v, i))
                    .fold((f64::NEG_INFINITY, 0), |a, x| if x.0 > a.0 { x } else { a })
            })
            .collect()
    }

    /// Outer three shell maxima strictly decreasing and the last negative.
    fn trend_ok(&self, c: f64) -> bool {
        let m = self.shell_max(c);
        let n = m.len();
        n >= 3 && m[n - 3].0 > m[n - 2].0 && m[n - 2].0 > m[n - 1].0 && m[n - 1].0 < 0.0
    }
}

fn sample_shells(setup: &Setup, p: &LyapunovParams, sampler: &SingleSiteSampler) -> Samples {
    let dim = setup.model.dim();
    let w = setup.model.radial_weights();
    let dirs = unit_directions(dim, p.directions);
    let shells = p.shells.max(3);
    let ratio = (p.r_max / p.r_min).powf(1.0 / (shells - 1) as f64);
    let radii: Vec<f64> = (0..shells)
        .map(|s| p.r_min * ratio.powi(s as i32))
        .collect();
    let data = radii
        .iter()
        .map(|&rho| {
            dirs.iter()
                .map(|d| {
                    let a = scaled(d, rho, w);
                    let (b, v) = sampler.eval(&a);
                    (b, v, a)
                })
                .collect()
        })
        .collect();
    Samples {
        radii,
        shells: data,
        origin: sampler.eval(&vec![0.0; dim]),
    }
}

/// Single-site certificate plus the box checks of `W^k_n`.
pub fn lyapunov_verify(setup: &Setup, p: &LyapunovParams) -> Result<LyapunovCertificate> {
    if p.k == 0 {
        return Err(invalid("Lyapunov exponent k must be positive"));
    }
    if !(p.r_min > 0.0 && p.r_max > p.r_min) {
        return Err(invalid("need 0 < r_min < r_max"));
    }
    let sampler = SingleSiteSampler::new(setup, p.k)?;
    let samples = sample_shells(setup, p, &sampler);
    let lam_min = setup.lambdas.min();
    let (c, c_crit) = match p.c {
        Some(c) => {
            if !(c > 0.0 && c.is_finite()) {
                return Err(invalid(format!("candidate rate {c} must be positive")));
            }
            (c, c)
        }
        None => {
            let (mut lo, mut hi) = (0.0, 4.0 * lam_min);
            if samples.trend_ok(hi * (1.0 - 1e-9)) {
                lo = hi;
            } else {
                for _ in 0..50 {
                    let mid = 0.5 * (lo + hi);
                    if samples.trend_ok(mid) {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
            }
            if lo <= 0.0 {
                return Err(Error::CertificateRefused(
                    "no rate in (0, 4 lambda_min) gives a decreasing negative radial trend".into(),
                ));
            }
            (0.5 * lo, lo)
        }
    };
    let maxima = samples.shell_max(c);
    if !samples.trend_ok(c) {
        let last = samples.shells.len() - 1;
        let (val, idx) = maxima[last];
        let witness = &samples.shells[last][idx].2;
        return Err(Error::CertificateRefused(format!(
            "rate {c}: worst L V^{k} + c V^{k} at radius {:.3e} is {val:.6e} (outer shells {:?}); witness {witness:?}",
            samples.radii[last],
            maxima[maxima.len() - 3..].iter().map(|m| m.0).collect::<Vec<_>>(),
            k = p.k
        )));
    }
    let (mut worst, mut witness) = (
        samples.origin.0 + c * samples.origin.1,
        vec![0.0; setup.model.dim()],
    );
    for (s, (val, idx)) in maxima.iter().enumerate() {
        if *val > worst {
            worst = *val;
            witness = samples.shells[s][*idx].2.clone();
        }
    }
    let big_c_k = (worst + 0.1 * worst.abs()).max(0.0);
    let total_v = setup.weights.total_v_bound()?;
    let big_c_w = c + big_c_k * total_v;
    let mut box_checks = Vec::new();
    for &n in &p.boxes {
        box_checks.push(check_box(setup, p, n, c, big_c_w)?);
    }
    Ok(LyapunovCertificate {
        model: setup.model.name().to_string(),
        k: p.k,
        c_k: c,
        big_c_k,
        big_c_w,
        total_v,
        worst_value: worst,
        witness,
        radii: samples.radii.clone(),
        shell_max: maxima.iter().map(|m| m.0).collect(),
        c_critical: c_crit,
        box_checks,
    })
}

/// `W^k_n = 1 + Σ_i v(i) V^k(a_i)` as a cylindrical polynomial on the box.
pub fn box_lyapunov(setup: &Setup, n: usize, k: u32) -> Result<CylindricalObservable> {
    let lat = setup.lattice(n)?;
    let v = setup.weights.v_on(&lat)?;
    let dim = setup.model.dim();
    let nv = dim * lat.len();
    let vk = setup.model.lyapunov_candidate(k)?;
    let mut w = RatPoly::one(nv);
    for (p, vi) in v.iter().enumerate() {
        let r = crate::poly::rat_from_f64(*vi).ok_or_else(|| invalid("non-finite weight"))?;
        w = &w + &vk.embed(nv, p * dim).scale(&r);
    }
    Ok(CylindricalObservable::new(lat.sites().to_vec(), w))
}

fn check_box(
    setup: &Setup,
    p: &LyapunovParams,
    n: usize,
    c: f64,
    big_c_w: f64,
) -> Result<BoxCheck> {
    let sys = setup.system(n)?;
    let w = box_lyapunov(setup, n, p.k)?;
    let prep = sys.prepare(&w)?;
    let dim = setup.model.dim();
    let wts = setup.model.radial_weights();
    let dirs = unit_directions(dim, 64);
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed ^ (n as u64).wrapping_mul(0x9e37_79b9));
    let len = sys.n_sites();
    let mut worst = f64::NEG_INFINITY;
    let mut cfg = vec![0.0; sys.state_len()];
    let lr = (p.r_min.ln(), p.r_max.ln());
    for s in 0..p.box_samples {
        let big = if s % 2 == 0 {
            Some(rng.random_range(0..len))
        } else {
            None
        };
        for i in 0..len {
            let rho = match big {
                Some(b) if b != i => rng.random_range(0.0..1.0),
                _ => rng.random_range(lr.0..lr.1).exp(),
            };
            let d = &dirs[rng.random_range(0..dirs.len())];
            let a = scaled(d, rho, wts);
            cfg[i * dim..(i + 1) * dim].copy_from_slice(&a);
        }
        let val = prep.generator(&sys, &cfg) + c * prep.value(&cfg) - big_c_w;
        let scale = 1.0 + (c * prep.value(&cfg)).abs();
        // relative slack for rounding in huge polynomial values
        let val = val - 1e-12 * scale;
        worst = worst.max(val);
    }
    Ok(BoxCheck {
        n,
        samples: p.box_samples,
        worst_excess: worst,
    })
}

/// Suite wrapper: certificate, its trend and box checks as verdicts.
pub fn run(setup: &Setup, p: &LyapunovParams) -> Result<SuiteOutput> {
    let claim = "lyapunov_drift";
    let statement = "L V^k + c_k V^k <= C_k on radial shells, decreasing to -inf; L_n W^k_n + c_k W^k_n <= C_W for every box";
    let mut out = SuiteOutput::default();
    match lyapunov_verify(setup, p) {
        Ok(cert) => {
            let mut curve = Curve::new(
                &format!("lyapunov_k{}_shells", p.k),
                &["radius", "max_LVk_plus_cVk"],
            );
            for (r, m) in cert.radii.iter().zip(&cert.shell_max) {
                curve.push(vec![*r, *m]);
            }
            out.curves.push(curve);
            let boxes_ok = cert.box_checks.iter().all(|b| b.worst_excess <= 0.0);
            let worst_box = cert
                .box_checks
                .iter()
                .map(|b| b.worst_excess)
                .fold(f64::NEG_INFINITY, f64::max);
            let mut v = Verdict::new(
                claim,
                statement,
                cert.c_k,
                0.0,
                Outcome::from_bool(boxes_ok && cert.c_k > 0.0),
            )
            .metric("k", p.k as f64)
            .metric("c_k", cert.c_k)
            .metric("C_k", cert.big_c_k)
            .metric("C_W", cert.big_c_w)
            .metric("c_critical", cert.c_critical)
            .metric("sum_v", cert.total_v)
            .metric("worst_box_excess", worst_box);
            let n = cert.shell_max.len();
            for (j, m) in cert.shell_max[n - 3..].iter().enumerate() {
                v = v.metric(&format!("outer_shell_{j}"), *m);
            }
            out.verdicts.push(v);
        }
        Err(Error::CertificateRefused(msg)) => {
            out.verdicts.push(
                Verdict::new(
                    claim,
                    statement,
                    p.c.unwrap_or(f64::NAN),
                    0.0,
                    Outcome::Fail,
                )
                .with_note(msg),
            );
        }
        Err(e) => return Err(e),
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::WeightScheme;
    use crate::interactions::{BoundaryMode, InteractionSpec};
    use crate::models::LambdaSchedule;
    use crate::poly::rat;

    fn setup(q: InteractionSpec) -> Setup {
        Setup::new(
            SiteModel::heisenberg(1.0).unwrap(),
            q,
            WeightScheme::default_for(1, 1),
            LambdaSchedule::Constant { value: 1.0 },
            1,
        )
    }

    #[test]
    fn leading_coefficient_flips_at_four_lambda() {
        let m = SiteModel::heisenberg(1.0).unwrap();
        let v = m.lyapunov_candidate(1).unwrap();
        for (c, sign) in [(rat(3, 1), -1), (rat(5, 1), 1)] {
            let p = drift_polynomial(&m, 1, &rat(1, 1), &c).unwrap();
            let lead = leading_part(&p, &[1, 1, 2]);
            let expect = v.scale(&(c.clone() - rat(4, 1)));
            assert_eq!(lead, expect);
            assert_eq!(lead.coeff(&[0, 0, 2]), rat(sign, 1));
        }
    }

    #[test]
    fn v1_value_at_unit_x() {
        let m = SiteModel::heisenberg(1.0).unwrap();
        let p = drift_polynomial(&m, 1, &rat(1, 1), &rat(1, 1)).unwrap();
        assert!((p.eval(&[1.0, 0.0, 0.0]) - 13.5).abs() < 1e-12);
    }

    #[test]
    fn refuses_rate_above_four_lambda() {
        let s = setup(InteractionSpec::zero(1, BoundaryMode::ZeroPad));
        let p = LyapunovParams {
            c: Some(4.2),
            boxes: vec![],
            ..Default::default()
        };
        assert!(matches!(
            lyapunov_verify(&s, &p),
            Err(Error::CertificateRefused(_))
        ));
        let ok = LyapunovParams {
            c: Some(1.0),
            boxes: vec![1],
            box_samples: 200,
            ..Default::default()
        };
        let cert = lyapunov_verify(&s, &ok).unwrap();
        assert!(cert.worst_value >= 13.5);
        assert!(cert.box_checks[0].worst_excess <= 0.0);
    }

    #[test]
    fn search_finds_rate_for_other_models() {
        for m in [
            SiteModel::grushin(1.0).unwrap(),
            SiteModel::euclidean3(1.0).unwrap(),
            SiteModel::martinet(1.0).unwrap(),
        ] {
            let comps = m.interaction_components();
            let s = Setup::new(
                m,
                InteractionSpec::tanh(1.0, 1, 1.0, comps, BoundaryMode::ZeroPad).unwrap(),
                WeightScheme::default_for(1, 1),
                LambdaSchedule::Constant { value: 1.0 },
                1,
            );
            let p = LyapunovParams {
                boxes: vec![1],
                box_samples: 100,
                ..Default::default()
            };
            let cert = lyapunov_verify(&s, &p).unwrap();
            assert!(cert.c_k > 0.0 && cert.c_k < 4.0, "{}", cert.model);
        }
    }
}
