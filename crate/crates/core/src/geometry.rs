//! Homogeneous norm, lattice boxes, shell-constant weight schemes and the
//! weighted configuration space built from them.
//!
//! Sites of `Z^d` are grouped in max-norm shells of width `r`: site `i` is in
//! shell `m = ceil(|i|_max / r)`, so the box `Π_n = {|i|_max <= n r}` is the
//! union of shells `0..=n`. Weights are constant on shells.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Position of one lattice site. Two-dimensional site models leave `z` at zero.
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct SiteState {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl SiteState {
    pub const ZERO: SiteState = SiteState {
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub fn new(x: f64, y: f64, z: f64) -> Self {
        SiteState { x, y, z }
    }

    /// Reads a site from a coordinate slice of length 2 or 3.
    pub fn from_slice(s: &[f64]) -> Self {
        match s.len() {
            2 => SiteState::new(s[0], s[1], 0.0),
            3 => SiteState::new(s[0], s[1], s[2]),
            n => panic!("site slice of length {n}"),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn sub(&self, o: &SiteState) -> SiteState {
        SiteState::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

fn check_finite(a: &SiteState) -> Result<()> {
    if a.is_finite() {
        Ok(())
    } else {
        Err(invalid(format!("non-finite site state {a:?}")))
    }
}

/// `((x^2 + y^2)^2 + z^2)^(1/4)`.
pub fn homogeneous_norm(a: &SiteState) -> Result<f64> {
    check_finite(a)?;
    Ok(homogeneous_norm8(a).powf(0.125))
}

/// Eighth power of the homogeneous norm, `((x^2 + y^2)^2 + z^2)^2`, without
/// input validation. This is the per-site term of the weighted norm.
#[inline]
pub fn homogeneous_norm8(a: &SiteState) -> f64 {
    let rho2 = a.x * a.x + a.y * a.y;
    let v = rho2 * rho2 + a.z * a.z;
    v * v
}

pub fn site_metric(a: &SiteState, b: &SiteState) -> Result<f64> {
    check_finite(a)?;
    check_finite(b)?;
    homogeneous_norm(&a.sub(b))
}

/// Index of a lattice site. Only the first `d` entries are used.
pub type SiteIndex = [i32; 3];

pub fn max_norm(i: &SiteIndex) -> i32 {
    i.iter().map(|c| c.abs()).max().unwrap_or(0)
}

/// Shell index `ceil(|i|_max / r)`.
pub fn shell_of(i: &SiteIndex, r: usize) -> usize {
    let m = max_norm(i) as usize;
    m.div_ceil(r)
}

/// Number of sites in shell `m` of `Z^d` with shell width `r`.
pub fn shell_size(d: usize, r: usize, m: usize) -> f64 {
    let side = |k: usize| (2 * k * r + 1) as f64;
    if m == 0 {
        1.0
    } else {
        side(m).powi(d as i32) - side(m - 1).powi(d as i32)
    }
}

/// The box `Π_n` of `Z^d` with its sites in lexicographic order.
#[derive(Clone, Debug)]
pub struct BoxLattice {
    d: usize,
    r: usize,
    n: usize,
    sites: Vec<SiteIndex>,
    index: HashMap<SiteIndex, usize>,
}

impl BoxLattice {
    pub fn new(d: usize, r: usize, n: usize) -> Result<Self> {
        if !(1..=3).contains(&d) {
            return Err(invalid(format!("lattice dimension {d} not in 1..=3")));
        }
        if r == 0 {
            return Err(invalid("interaction range r must be positive"));
        }
        let rad = (n * r) as i32;
        let mut sites = Vec::new();
        let range = |k: usize| if k < d { -rad..=rad } else { 0..=0 };
        for a in range(0) {
            for b in range(1) {
                for c in range(2) {
                    sites.push([a, b, c]);
                }
            }
        }
        let index = sites.iter().enumerate().map(|(k, s)| (*s, k)).collect();
        Ok(BoxLattice {
            d,
            r,
            n,
            sites,
            index,
        })
    }

    pub fn d(&self) -> usize {
        self.d
    }
    pub fn r(&self) -> usize {
        self.r
    }
    pub fn n(&self) -> usize {
        self.n
    }
    pub fn len(&self) -> usize {
        self.sites.len()
    }
    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }
    pub fn sites(&self) -> &[SiteIndex] {
        &self.sites
    }
    pub fn site(&self, k: usize) -> SiteIndex {
        self.sites[k]
    }
    pub fn position(&self, i: &SiteIndex) -> Option<usize> {
        self.index.get(i).copied()
    }
    pub fn contains(&self, i: &SiteIndex) -> bool {
        self.index.contains_key(i)
    }
    pub fn radius(&self) -> i32 {
        (self.n * self.r) as i32
    }

    /// Offsets of the `(2r+1)^d` neighbourhood in canonical order.
    pub fn neighbourhood_offsets(&self) -> Vec<SiteIndex> {
        let r = self.r as i32;
        let range = |k: usize| if k < self.d { -r..=r } else { 0..=0 };
        let mut out = Vec::new();
        for a in range(0) {
            for b in range(1) {
                for c in range(2) {
                    out.push([a, b, c]);
                }
            }
        }
        out
    }

    /// Whether the whole r-neighbourhood of `i` lies inside the box.
    pub fn is_interior(&self, i: &SiteIndex) -> bool {
        max_norm(i) + self.r as i32 <= self.radius()
    }

    /// Nearest box site to `i` (coordinate-wise clamp).
    pub fn clamp(&self, i: &SiteIndex) -> SiteIndex {
        let rad = self.radius();
        let mut out = *i;
        for c in out.iter_mut().take(self.d) {
            *c = (*c).clamp(-rad, rad);
        }
        out
    }

    /// Sites with shell index at most `k` (the sub-box `Π_k`), as positions.
    pub fn sub_box_positions(&self, k: usize) -> Vec<usize> {
        let rad = (k * self.r) as i32;
        (0..self.len())
            .filter(|&p| max_norm(&self.sites[p]) <= rad)
            .collect()
    }
}

/// Weight families `u`, `v`, constant on shells, with the constants of the
/// growth condition on `u`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightScheme {
    pub d: usize,
    pub r: usize,
    pub delta: f64,
    #[serde(rename = "K")]
    pub k: f64,
    pub shell_u: Vec<f64>,
    pub shell_v: Vec<f64>,
}

fn ln_factorial(m: usize) -> f64 {
    (1..=m).map(|j| (j as f64).ln()).sum()
}

impl WeightScheme {
    /// `u(m) = K (m!)^-(1-δ)`, `v(m) = (m!)^-(1-δ)/2` on shells `0..=horizon`.
    pub fn factorial(d: usize, r: usize, delta: f64, k: f64, horizon: usize) -> Self {
        let shell_u = (0..=horizon)
            .map(|m| k * (-(1.0 - delta) * ln_factorial(m)).exp())
            .collect();
        let shell_v = (0..=horizon)
            .map(|m| (-(1.0 - delta) * 0.5 * ln_factorial(m)).exp())
            .collect();
        WeightScheme {
            d,
            r,
            delta,
            k,
            shell_u,
            shell_v,
        }
    }

    /// Default scheme: δ = 0.5, K = 1, 50 shells.
    pub fn default_for(d: usize, r: usize) -> Self {
        Self::factorial(d, r, 0.5, 1.0, 50)
    }

    pub fn horizon(&self) -> usize {
        self.shell_u.len().saturating_sub(1)
    }

    fn shell_checked(&self, i: &SiteIndex) -> Result<usize> {
        let m = shell_of(i, self.r);
        if m >= self.shell_u.len() || m >= self.shell_v.len() {
            return Err(invalid(format!(
                "site {i:?} in shell {m} beyond weight horizon {}",
                self.horizon()
            )));
        }
        Ok(m)
    }

    pub fn u(&self, i: &SiteIndex) -> Result<f64> {
        Ok(self.shell_u[self.shell_checked(i)?])
    }

    pub fn v(&self, i: &SiteIndex) -> Result<f64> {
        Ok(self.shell_v[self.shell_checked(i)?])
    }

    /// `u(i)` for every site of the box, in box order.
    pub fn u_on(&self, lattice: &BoxLattice) -> Result<Vec<f64>> {
        self.check_lattice(lattice)?;
        lattice.sites().iter().map(|s| self.u(s)).collect()
    }

    pub fn v_on(&self, lattice: &BoxLattice) -> Result<Vec<f64>> {
        self.check_lattice(lattice)?;
        lattice.sites().iter().map(|s| self.v(s)).collect()
    }

    pub fn check_lattice(&self, lattice: &BoxLattice) -> Result<()> {
        if lattice.d() != self.d || lattice.r() != self.r {
            return Err(Error::IncompatibleGeometry(format!(
                "weights for (d={}, r={}) used on lattice (d={}, r={})",
                self.d,
                self.r,
                lattice.d(),
                lattice.r()
            )));
        }
        Ok(())
    }

    /// Certified bound on `Σ_i v(i)` over all of `Z^d`.
    pub fn total_v_bound(&self) -> Result<f64> {
        let s = certify_shell_sum(self.d, self.r, |m| self.shell_v[m], self.shell_v.len());
        if s.passed {
            Ok(s.partial_sum + s.remainder_bound)
        } else {
            Err(Error::HypothesisViolated {
                hypothesis: "H5",
                detail: s.detail,
            })
        }
    }

    /// Certified bound on `Σ_i u(i)`.
    pub fn total_u_bound(&self) -> Result<f64> {
        let s = certify_shell_sum(self.d, self.r, |m| self.shell_u[m], self.shell_u.len());
        if s.passed {
            Ok(s.partial_sum + s.remainder_bound)
        } else {
            Err(Error::HypothesisViolated {
                hypothesis: "H4",
                detail: s.detail,
            })
        }
    }
}

/// Result of certifying one infinite shell sum.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SumCertificate {
    pub passed: bool,
    pub partial_sum: f64,
    /// Geometric remainder bound `a_M ρ / (1 - ρ)`; infinite when uncertified.
    pub remainder_bound: f64,
    /// Largest term ratio over the tail window.
    pub tail_ratio: f64,
    pub detail: String,
}

/// Partial sum of `Σ_m |shell m| w(m)` over the horizon plus a ratio-test
/// remainder bound. The ratios over the last quarter of the horizon must be
/// below one and non-increasing.
pub fn certify_shell_sum(
    d: usize,
    r: usize,
    w: impl Fn(usize) -> f64,
    len: usize,
) -> SumCertificate {
    let fail = |partial: f64, ratio: f64, detail: String| SumCertificate {
        passed: false,
        partial_sum: partial,
        remainder_bound: f64::INFINITY,
        tail_ratio: ratio,
        detail,
    };
    if len < 4 {
        return fail(
            f64::NAN,
            f64::NAN,
            format!("horizon of {len} shells too short"),
        );
    }
    let terms: Vec<f64> = (0..len).map(|m| shell_size(d, r, m) * w(m)).collect();
    if let Some(m) = terms.iter().position(|t| !(t.is_finite() && *t > 0.0)) {
        return fail(
            f64::NAN,
            f64::NAN,
            format!("non-positive weight at shell {m}"),
        );
    }
    let partial: f64 = terms.iter().sum();
    let start = (len - len / 4).min(len - 3);
    let ratios: Vec<f64> = (start..len - 1).map(|m| terms[m + 1] / terms[m]).collect();
    let rho = ratios.iter().cloned().fold(0.0, f64::max);
    let last = *ratios.last().unwrap();
    if rho >= 1.0 {
        return fail(
            partial,
            rho,
            format!("tail term ratio {rho:.6} >= 1 over shells {start}..{len}"),
        );
    }
    if ratios.windows(2).any(|w| w[1] > w[0] * (1.0 + 1e-12)) {
        return fail(
            partial,
            rho,
            format!("tail term ratios not non-increasing over shells {start}..{len}"),
        );
    }
    let a_last = terms[len - 1];
    SumCertificate {
        passed: true,
        partial_sum: partial,
        remainder_bound: a_last * last / (1.0 - last),
        tail_ratio: rho,
        detail: format!("ratio test: tail ratio {rho:.3e}, last term {a_last:.3e}"),
    }
}

/// Outcome of checking one growth/summability condition on the weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HypothesisCheck {
    pub hypothesis: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightReport {
    pub horizon: usize,
    pub sum_u: SumCertificate,
    pub sum_v: SumCertificate,
    pub sum_u_over_v: SumCertificate,
    pub checks: Vec<HypothesisCheck>,
}

impl WeightReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, hypothesis: &str) -> Option<&HypothesisCheck> {
        self.checks.iter().find(|c| c.hypothesis == hypothesis)
    }

    /// First violated hypothesis as an error.
    pub fn require(&self) -> Result<()> {
        match self.checks.iter().find(|c| !c.passed) {
            None => Ok(()),
            Some(c) => Err(Error::HypothesisViolated {
                hypothesis: match c.hypothesis.as_str() {
                    "H4" => "H4",
                    "H5" => "H5",
                    _ => "H6",
                },
                detail: c.detail.clone(),
            }),
        }
    }
}

/// Checks summability of `u`, `v`, `u/v` and the factorial lower bound on
/// `u` over the scheme's horizon.
pub fn validate_weights(w: &WeightScheme) -> Result<WeightReport> {
    if w.d == 0 || w.r == 0 {
        return Err(invalid("weight scheme needs positive d and r"));
    }
    if !(w.delta > 0.0 && w.delta < 1.0) {
        return Err(invalid(format!("delta {} not in (0,1)", w.delta)));
    }
    if !(w.k > 0.0 && w.k.is_finite()) {
        return Err(invalid(format!("K {} not positive", w.k)));
    }
    if w.shell_u.len() != w.shell_v.len() {
        return Err(invalid("shell_u and shell_v lengths differ"));
    }
    let len = w.shell_u.len();
    let sum_u = certify_shell_sum(w.d, w.r, |m| w.shell_u[m], len);
    let sum_v = certify_shell_sum(w.d, w.r, |m| w.shell_v[m], len);
    let sum_uv = certify_shell_sum(w.d, w.r, |m| w.shell_u[m] / w.shell_v[m], len);

    let h4 = HypothesisCheck {
        hypothesis: "H4".into(),
        passed: sum_u.passed,
        detail: format!("sum u: {}", sum_u.detail),
    };
    let h5 = HypothesisCheck {
        hypothesis: "H5".into(),
        passed: sum_v.passed && sum_uv.passed,
        detail: format!("sum v: {}; sum u/v: {}", sum_v.detail, sum_uv.detail),
    };
    let mut h6_violation = None;
    for m in 1..len {
        let u = w.shell_u[m];
        let lhs = u.ln();
        let rhs = w.k.ln() - (1.0 - w.delta) * ln_factorial(m);
        if !(lhs >= rhs - 1e-12 * rhs.abs().max(1.0)) {
            h6_violation = Some((m, u, rhs.exp()));
            break;
        }
    }
    let h6 = match h6_violation {
        None => HypothesisCheck {
            hypothesis: "H6".into(),
            passed: true,
            detail: format!("u(m) >= K/(m!)^(1-delta) on shells 1..={}", len - 1),
        },
        Some((m, u, bound)) => HypothesisCheck {
            hypothesis: "H6".into(),
            passed: false,
            detail: format!("shell {m}: u = {u:.6e} < K/(m!)^(1-delta) = {bound:.6e}"),
        },
    };
    Ok(WeightReport {
        horizon: len.saturating_sub(1),
        sum_u,
        sum_v,
        sum_u_over_v: sum_uv,
        checks: vec![h4, h5, h6],
    })
}

/// A finite-box configuration viewed as a point of the weighted space; sites
/// outside the box are zero.
#[derive(Clone, Debug)]
pub struct WeightedSpacePoint<'a> {
    pub lattice: &'a BoxLattice,
    pub sites: &'a [SiteState],
    pub weights: &'a WeightScheme,
}

impl WeightedSpacePoint<'_> {
    /// `(Σ_i ||a_i||_H^8 u(i))^(1/8)`.
    pub fn s_norm(&self) -> Result<f64> {
        weighted_s_norm(self)
    }
}

pub fn weighted_s_norm(a: &WeightedSpacePoint<'_>) -> Result<f64> {
    if a.sites.len() != a.lattice.len() {
        return Err(Error::DimensionMismatch {
            expected: a.lattice.len(),
            got: a.sites.len(),
        });
    }
    let u = a.weights.u_on(a.lattice)?;
    let mut sum = 0.0;
    for (s, w) in a.sites.iter().zip(&u) {
        check_finite(s)?;
        sum += homogeneous_norm8(s) * w;
    }
    Ok(sum.powf(0.125))
}

/// Eighth power of the weighted distance between two configurations on the
/// same box, given per-site weights. Hot-path helper without validation.
pub fn s_distance8(a: &[SiteState], b: &[SiteState], u: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .zip(u)
        .map(|((p, q), w)| homogeneous_norm8(&p.sub(q)) * w)
        .sum()
}

/// Per-site thresholds `τ(i) = (C+1)/(c ε v(i)) + C/(c v(i))` of the compact
/// set `K_ε`; a configuration belongs to `K_ε` iff `||a_i||_H^8 <= τ(i)` for
/// every site.
pub fn compactness_threshold_set(
    eps: f64,
    c: f64,
    big_c: f64,
    w: &WeightScheme,
    lattice: &BoxLattice,
) -> Result<Vec<f64>> {
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(invalid(format!("eps {eps} not in (0,1]")));
    }
    if !(c > 0.0 && c.is_finite()) {
        return Err(invalid(format!("rate constant c = {c} must be positive")));
    }
    if !(big_c >= 0.0 && big_c.is_finite()) {
        return Err(invalid(format!(
            "constant C = {big_c} must be non-negative"
        )));
    }
    let v = w.v_on(lattice)?;
    Ok(v.iter()
        .map(|vi| (big_c + 1.0) / (c * eps * vi) + big_c / (c * vi))
        .collect())
}

pub fn in_compact_set(sites: &[SiteState], thresholds: &[f64]) -> bool {
    sites
        .iter()
        .zip(thresholds)
        .all(|(s, t)| homogeneous_norm8(s) <= *t)
}
