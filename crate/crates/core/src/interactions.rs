//! Finite-range interaction functions and their hypothesis checks.
//!
//! An interaction reads the `(2r+1)^d` neighbourhood patch of a site and
//! returns one value per interaction field of the site model. Sites outside
//! the box are supplied by the boundary mode: zero states (default) or the
//! nearest box site.

use std::fmt::Debug;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::{BoxLattice, HypothesisCheck, SiteIndex};

/// `max_s s·sech²(s)`, attained at `s ≈ 0.7717`.
pub const MAX_S_SECH2: f64 = 0.447_743_3;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundaryMode {
    #[default]
    ZeroPad,
    Clamp,
}

/// Neighbourhood of one site over a flat state buffer. Slot `None` is a
/// zero state.
#[derive(Clone, Copy, Debug)]
pub struct Patch<'a> {
    pub dim: usize,
    pub states: &'a [f64],
    pub slots: &'a [Option<usize>],
    pub center: usize,
}

impl Patch<'_> {
    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    #[inline]
    pub fn coord(&self, j: usize, c: usize) -> f64 {
        match self.slots[j] {
            Some(p) => self.states[p * self.dim + c],
            None => 0.0,
        }
    }
}

/// Analytic sup bounds for the two interaction hypotheses.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalyticBounds {
    pub h1: f64,
    pub h2: f64,
}

/// A smooth function of the neighbourhood patch. Implement this to add a
/// family in code.
pub trait InteractionFunction: Send + Sync + Debug {
    fn name(&self) -> String;

    /// Writes `components` values into `out` for the given bound `c`.
    fn eval(&self, patch: &Patch<'_>, components: usize, c: f64, out: &mut [f64; 3]);

    /// Sup bounds valid over every patch, if known.
    fn analytic_bounds(&self, _c: f64) -> Option<AnalyticBounds> {
        None
    }

    fn is_zero(&self) -> bool {
        false
    }
}

#[derive(Clone, Debug)]
pub struct ZeroFamily;

impl InteractionFunction for ZeroFamily {
    fn name(&self) -> String {
        "zero".into()
    }
    fn eval(&self, _: &Patch<'_>, _: usize, _: f64, out: &mut [f64; 3]) {
        *out = [0.0; 3];
    }
    fn analytic_bounds(&self, _c: f64) -> Option<AnalyticBounds> {
        Some(AnalyticBounds { h1: 0.0, h2: 0.0 })
    }
    fn is_zero(&self) -> bool {
        true
    }
}

/// `q_c = (C/2) · mean_j tanh(κ u_{j,c})` over the patch, with gain
/// `κ ∈ (0, 1]`.
#[derive(Clone, Debug)]
pub struct TanhFamily {
    pub gain: f64,
}

impl InteractionFunction for TanhFamily {
    fn name(&self) -> String {
        format!("tanh(gain={})", self.gain)
    }

    #[inline]
    fn eval(&self, patch: &Patch<'_>, components: usize, c: f64, out: &mut [f64; 3]) {
        let n = patch.len() as f64;
        for (k, o) in out.iter_mut().enumerate() {
            if k >= components {
                *o = 0.0;
                continue;
            }
            let mut s = 0.0;
            for j in 0..patch.len() {
                s += (self.gain * patch.coord(j, k)).tanh();
            }
            *o = 0.5 * c * s / n;
        }
    }

    fn analytic_bounds(&self, c: f64) -> Option<AnalyticBounds> {
        Some(AnalyticBounds {
            h1: 0.5 * c,
            h2: 0.5 * c * (self.gain + MAX_S_SECH2),
        })
    }
}

/// `q_c = κ u_{center,c}`: unbounded, kept as a negative example.
#[derive(Clone, Debug)]
pub struct LinearFamily {
    pub gain: f64,
}

impl InteractionFunction for LinearFamily {
    fn name(&self) -> String {
        format!("linear(gain={})", self.gain)
    }
    fn eval(&self, patch: &Patch<'_>, components: usize, _c: f64, out: &mut [f64; 3]) {
        for (k, o) in out.iter_mut().enumerate() {
            *o = if k < components {
                self.gain * patch.coord(patch.center, k)
            } else {
                0.0
            };
        }
    }
}

/// Config form of the built-in families.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InteractionConfig {
    pub family: String,
    #[serde(rename = "C", default = "one")]
    pub c: f64,
    #[serde(default = "one_usize")]
    pub r: usize,
    #[serde(default = "one")]
    pub gain: f64,
    #[serde(default)]
    pub boundary: BoundaryMode,
}

fn one() -> f64 {
    1.0
}
fn one_usize() -> usize {
    1
}

#[derive(Clone, Debug)]
pub struct InteractionSpec {
    family: Arc<dyn InteractionFunction>,
    c: f64,
    r: usize,
    components: usize,
    boundary: BoundaryMode,
}

impl InteractionSpec {
    pub fn new(
        family: Arc<dyn InteractionFunction>,
        c: f64,
        r: usize,
        components: usize,
        boundary: BoundaryMode,
    ) -> Result<Self> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(invalid(format!(
                "interaction bound C = {c} must be positive"
            )));
        }
        if r == 0 {
            return Err(invalid("interaction range must be positive"));
        }
        if components > 3 {
            return Err(invalid("at most three interaction components"));
        }
        Ok(InteractionSpec {
            family,
            c,
            r,
            components,
            boundary,
        })
    }

    /// The zero interaction; compatible with every site model.
    pub fn zero(r: usize, boundary: BoundaryMode) -> Self {
        InteractionSpec {
            family: Arc::new(ZeroFamily),
            c: 1.0,
            r: r.max(1),
            components: 0,
            boundary,
        }
    }

    pub fn tanh(
        c: f64,
        r: usize,
        gain: f64,
        components: usize,
        boundary: BoundaryMode,
    ) -> Result<Self> {
        if !(gain > 0.0 && gain <= 1.0) {
            return Err(invalid(format!("tanh gain {gain} not in (0, 1]")));
        }
        Self::new(Arc::new(TanhFamily { gain }), c, r, components, boundary)
    }

    pub fn linear(gain: f64, r: usize, components: usize, boundary: BoundaryMode) -> Result<Self> {
        Self::new(
            Arc::new(LinearFamily { gain }),
            1.0,
            r,
            components,
            boundary,
        )
    }

    pub fn from_config(cfg: &InteractionConfig, components: usize) -> Result<Self> {
        match cfg.family.as_str() {
            "zero" => Ok(Self::zero(cfg.r, cfg.boundary)),
            "tanh" => Self::tanh(cfg.c, cfg.r, cfg.gain, components, cfg.boundary),
            "linear" => {
                let mut s = Self::linear(cfg.gain, cfg.r, components, cfg.boundary)?;
                s.c = cfg.c;
                Ok(s)
            }
            other => Err(invalid(format!("unknown interaction family '{other}'"))),
        }
    }

    pub fn name(&self) -> String {
        self.family.name()
    }
    pub fn bound(&self) -> f64 {
        self.c
    }
    pub fn range(&self) -> usize {
        self.r
    }
    pub fn components(&self) -> usize {
        self.components
    }
    pub fn boundary(&self) -> BoundaryMode {
        self.boundary
    }
    pub fn is_zero(&self) -> bool {
        self.family.is_zero()
    }
    pub fn analytic_bounds(&self) -> Option<AnalyticBounds> {
        self.family.analytic_bounds(self.c)
    }

    /// Values on an explicit patch; entries past `components` are zero.
    #[inline]
    pub fn eval_patch(&self, patch: &Patch<'_>, components: usize) -> [f64; 3] {
        let mut out = [0.0; 3];
        if !self.is_zero() {
            self.family.eval(patch, components, self.c, &mut out);
        }
        out
    }

    /// Patch slots of every box site, with out-of-box neighbours resolved
    /// through the boundary mode.
    pub fn resolve_neighbourhoods(&self, lattice: &BoxLattice) -> Vec<Vec<Option<usize>>> {
        let offs = lattice.neighbourhood_offsets();
        lattice
            .sites()
            .iter()
            .map(|s| {
                offs.iter()
                    .map(|o| {
                        let t: SiteIndex = [s[0] + o[0], s[1] + o[1], s[2] + o[2]];
                        match lattice.position(&t) {
                            Some(p) => Some(p),
                            None => match self.boundary {
                                BoundaryMode::ZeroPad => None,
                                BoundaryMode::Clamp => lattice.position(&lattice.clamp(&t)),
                            },
                        }
                    })
                    .collect()
            })
            .collect()
    }
}

/// Interaction restricted to one box (the redefined `q^n`).
#[derive(Clone, Debug)]
pub struct BoxInteraction {
    spec: Arc<InteractionSpec>,
    dim: usize,
    components: usize,
    neighbours: Vec<Vec<Option<usize>>>,
}

pub fn redefine_at_boundary(
    spec: Arc<InteractionSpec>,
    lattice: &BoxLattice,
    dim: usize,
    components: usize,
) -> BoxInteraction {
    let neighbours = spec.resolve_neighbourhoods(lattice);
    BoxInteraction {
        spec,
        dim,
        components,
        neighbours,
    }
}

impl BoxInteraction {
    pub fn slots(&self, site: usize) -> &[Option<usize>] {
        &self.neighbours[site]
    }

    pub fn eval(&self, states: &[f64], site: usize) -> [f64; 3] {
        let slots = &self.neighbours[site];
        let patch = Patch {
            dim: self.dim,
            states,
            slots,
            center: slots.len() / 2,
        };
        self.spec.eval_patch(&patch, self.components)
    }
}

/// `(q_1, .., q_c)` at one box site.
pub fn evaluate_q(
    spec: &InteractionSpec,
    lattice: &BoxLattice,
    states: &[f64],
    dim: usize,
    components: usize,
    site: &SiteIndex,
) -> Result<[f64; 3]> {
    let pos = lattice
        .position(site)
        .ok_or_else(|| Error::SiteOutsideBox(site[..lattice.d()].to_vec()))?;
    if states.len() != lattice.len() * dim {
        return Err(Error::DimensionMismatch {
            expected: lattice.len() * dim,
            got: states.len(),
        });
    }
    let slots = &spec.resolve_neighbourhoods(lattice)[pos];
    let patch = Patch {
        dim,
        states,
        slots,
        center: slots.len() / 2,
    };
    Ok(spec.eval_patch(&patch, components))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InteractionReport {
    pub family: String,
    pub bound: f64,
    pub samples: usize,
    pub worst_h1: f64,
    pub worst_h2: f64,
    pub analytic: Option<AnalyticBounds>,
    pub checks: Vec<HypothesisCheck>,
    pub warning: Option<String>,
}

impl InteractionReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn require(&self) -> Result<()> {
        match self.checks.iter().find(|c| !c.passed) {
            None => Ok(()),
            Some(c) => Err(Error::HypothesisViolated {
                hypothesis: if c.hypothesis == "H1" { "H1" } else { "H2" },
                detail: c.detail.clone(),
            }),
        }
    }
}

/// Sampling budget and tolerance for [`validate_hypotheses`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ValidationBudget {
    pub patches: usize,
    pub seed: u64,
    pub tolerance: f64,
}

impl Default for ValidationBudget {
    fn default() -> Self {
        ValidationBudget {
            patches: 100_000,
            seed: 0x5eed,
            tolerance: 0.05,
        }
    }
}

fn sample_patch(rng: &mut ChaCha8Rng, kind: usize, out: &mut [f64]) {
    match kind % 5 {
        0 => out
            .iter_mut()
            .for_each(|v| *v = rng.random_range(-3.0..3.0)),
        1 => {
            let scale = 10f64.powf(rng.random_range(-2.0..6.0));
            out.iter_mut()
                .for_each(|v| *v = scale * rng.random_range(-1.0..1.0));
        }
        2 => out.iter_mut().for_each(|v| {
            let u: f64 = rng.random_range(-0.499..0.499);
            *v = (std::f64::consts::PI * u).tan();
        }),
        3 => {
            // all coordinates near the maximiser of s·sech²(s) and its scaled copies
            let s = rng.random_range(0.3..3.0) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            out.iter_mut().for_each(|v| *v = s);
        }
        _ => {
            let s = rng.random_range(-1e3..1e3);
            out.iter_mut().for_each(|v| *v = s);
        }
    }
}

/// Sampling check of the bound and gradient hypotheses on random patches,
/// heavy-tailed and adversarial ones included. The gradient sum is
/// `Σ_j |∂_j q|·(|u_j| + 1)` over all patch variables, by central
/// differences.
pub fn validate_hypotheses(
    spec: &InteractionSpec,
    d: usize,
    dim: usize,
    components: usize,
    budget: ValidationBudget,
) -> Result<InteractionReport> {
    if !(1..=3).contains(&d) {
        return Err(invalid(format!("lattice dimension {d} not in 1..=3")));
    }
    let c = spec.bound();
    let analytic = spec.analytic_bounds();
    if spec.is_zero() {
        return Ok(InteractionReport {
            family: spec.name(),
            bound: c,
            samples: 0,
            worst_h1: 0.0,
            worst_h2: 0.0,
            analytic,
            checks: vec![
                HypothesisCheck {
                    hypothesis: "H1".into(),
                    passed: true,
                    detail: "zero interaction".into(),
                },
                HypothesisCheck {
                    hypothesis: "H2".into(),
                    passed: true,
                    detail: "zero interaction".into(),
                },
            ],
            warning: None,
        });
    }
    let npatch = (2 * spec.range() + 1).pow(d as u32);
    let slots: Vec<Option<usize>> = (0..npatch).map(Some).collect();
    let nvar = npatch * dim;
    let mut rng = ChaCha8Rng::seed_from_u64(budget.seed);
    let mut u = vec![0.0; nvar];
    let mut worst1: f64 = 0.0;
    let mut worst2: f64 = 0.0;
    let mut arg1 = Vec::new();
    let mut arg2 = Vec::new();
    let comps = components.max(1).min(3);
    for t in 0..budget.patches {
        sample_patch(&mut rng, t, &mut u);
        let eval = |u: &[f64]| {
            let p = Patch {
                dim,
                states: u,
                slots: &slots,
                center: npatch / 2,
            };
            spec.eval_patch(&p, comps)
        };
        let q = eval(&u);
        for &qk in q.iter().take(comps) {
            if !qk.is_finite() || qk.abs() > worst1 {
                worst1 = if qk.is_finite() {
                    qk.abs()
                } else {
                    f64::INFINITY
                };
                arg1 = u.clone();
            }
        }
        let mut sums = [0.0; 3];
        let mut w = u.clone();
        for j in 0..nvar {
            let h = 1e-6 * u[j].abs().max(1.0);
            w[j] = u[j] + h;
            let qp = eval(&w);
            w[j] = u[j] - h;
            let qm = eval(&w);
            w[j] = u[j];
            for k in 0..comps {
                let g = (qp[k] - qm[k]) / (2.0 * h);
                sums[k] += g.abs() * (u[j].abs() + 1.0);
            }
        }
        for &s in sums.iter().take(comps) {
            if !s.is_finite() || s > worst2 {
                worst2 = if s.is_finite() { s } else { f64::INFINITY };
                arg2 = u.clone();
            }
        }
    }
    let tol = 1.0 + budget.tolerance;
    let witness = |a: &[f64]| {
        let shown: Vec<String> = a.iter().take(6).map(|v| format!("{v:.3e}")).collect();
        shown.join(",")
    };
    let h1_ok = worst1 <= c && analytic.is_none_or(|b| b.h1 <= c);
    let h2_ok = worst2 <= c * tol && analytic.is_none_or(|b| b.h2 <= c);
    let checks = vec![
        HypothesisCheck {
            hypothesis: "H1".into(),
            passed: h1_ok,
            detail: format!(
                "sup |q| sampled {worst1:.6e} vs C = {c}{}; witness [{}]",
                analytic
                    .map(|b| format!(", analytic {:.6e}", b.h1))
                    .unwrap_or_default(),
                witness(&arg1)
            ),
        },
        HypothesisCheck {
            hypothesis: "H2".into(),
            passed: h2_ok,
            detail: format!(
                "sup gradient sum sampled {worst2:.6e} vs C = {c} (tol {}){}; witness [{}]",
                budget.tolerance,
                analytic
                    .map(|b| format!(", analytic {:.6e}", b.h2))
                    .unwrap_or_default(),
                witness(&arg2)
            ),
        },
    ];
    Ok(InteractionReport {
        family: spec.name(),
        bound: c,
        samples: budget.patches,
        worst_h1: worst1,
        worst_h2: worst2,
        analytic,
        checks,
        warning: analytic
            .is_none()
            .then(|| "no analytic bound for this family; sampling evidence only".to_string()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tanh_spec(boundary: BoundaryMode) -> InteractionSpec {
        InteractionSpec::tanh(1.0, 1, 1.0, 2, boundary).unwrap()
    }

    #[test]
    fn zero_family_is_zero() {
        let lat = BoxLattice::new(1, 1, 2).unwrap();
        let states: Vec<f64> = (0..lat.len() * 3).map(|k| k as f64).collect();
        let z = InteractionSpec::zero(1, BoundaryMode::ZeroPad);
        for s in lat.sites() {
            assert_eq!(evaluate_q(&z, &lat, &states, 3, 2, s).unwrap(), [0.0; 3]);
        }
    }

    #[test]
    fn tanh_zero_patch_and_saturation() {
        let lat = BoxLattice::new(1, 1, 1).unwrap();
        let spec = tanh_spec(BoundaryMode::ZeroPad);
        let zeros = vec![0.0; lat.len() * 3];
        assert_eq!(
            evaluate_q(&spec, &lat, &zeros, 3, 2, &[0, 0, 0]).unwrap(),
            [0.0; 3]
        );
        let huge = vec![1e300; lat.len() * 3];
        let q = evaluate_q(&spec, &lat, &huge, 3, 2, &[0, 0, 0]).unwrap();
        assert!(q[0].abs() <= 1.0 && q[1].abs() <= 1.0);
    }

    #[test]
    fn out_of_box_site_is_error() {
        let lat = BoxLattice::new(1, 1, 1).unwrap();
        let spec = tanh_spec(BoundaryMode::ZeroPad);
        let s = vec![0.0; lat.len() * 3];
        assert!(matches!(
            evaluate_q(&spec, &lat, &s, 3, 2, &[4, 0, 0]),
            Err(Error::SiteOutsideBox(_))
        ));
    }

    #[test]
    fn corner_zero_pad_matches_hand_padding() {
        let lat = BoxLattice::new(1, 1, 1).unwrap(); // sites -1, 0, 1
        let spec = tanh_spec(BoundaryMode::ZeroPad);
        let states = vec![0.5, -1.0, 2.0, 1.5, 0.25, 0.0, -0.7, 3.0, 1.0];
        let q = evaluate_q(&spec, &lat, &states, 3, 2, &[1, 0, 0]).unwrap();
        // patch = (site 0, site 1, zero)
        let qx = 0.5 * ((1.5f64).tanh() + (-0.7f64).tanh() + 0.0) / 3.0;
        let qy = 0.5 * ((0.25f64).tanh() + (3.0f64).tanh() + 0.0) / 3.0;
        assert_eq!(q[0], qx);
        assert_eq!(q[1], qy);
        let clamp = tanh_spec(BoundaryMode::Clamp);
        let qc = evaluate_q(&clamp, &lat, &states, 3, 2, &[1, 0, 0]).unwrap();
        let qx = 0.5 * ((1.5f64).tanh() + 2.0 * (-0.7f64).tanh()) / 3.0;
        assert_eq!(qc[0], qx);
    }

    #[test]
    fn interior_sites_agree_across_modes() {
        let lat = BoxLattice::new(2, 1, 2).unwrap();
        let states: Vec<f64> = (0..lat.len() * 3)
            .map(|k| ((k * 7919) % 13) as f64 - 6.0)
            .collect();
        let a = tanh_spec(BoundaryMode::ZeroPad);
        let b = tanh_spec(BoundaryMode::Clamp);
        for s in lat.sites().iter().filter(|s| lat.is_interior(s)) {
            let qa = evaluate_q(&a, &lat, &states, 3, 2, s).unwrap();
            let qb = evaluate_q(&b, &lat, &states, 3, 2, s).unwrap();
            assert_eq!(qa, qb);
        }
    }

    #[test]
    fn validation_outcomes() {
        let budget = ValidationBudget {
            patches: 20_000,
            ..Default::default()
        };
        let r = validate_hypotheses(&tanh_spec(BoundaryMode::ZeroPad), 1, 3, 2, budget).unwrap();
        assert!(r.passed(), "{:?}", r.checks);
        assert!(r.worst_h2 <= r.analytic.unwrap().h2 * 1.001);
        let lin = InteractionSpec::linear(1.0, 1, 2, BoundaryMode::ZeroPad).unwrap();
        let r = validate_hypotheses(&lin, 1, 3, 2, budget).unwrap();
        assert!(!r.checks[0].passed);
        assert!(matches!(
            r.require(),
            Err(Error::HypothesisViolated {
                hypothesis: "H1",
                ..
            })
        ));
        assert!(r.warning.is_some());
        let z = InteractionSpec::zero(1, BoundaryMode::ZeroPad);
        let r = validate_hypotheses(&z, 1, 3, 2, budget).unwrap();
        assert!(r.passed() && r.worst_h1 == 0.0);
    }

    #[test]
    fn tanh_gain_range() {
        assert!(InteractionSpec::tanh(1.0, 1, 0.0, 2, BoundaryMode::ZeroPad).is_err());
        assert!(InteractionSpec::tanh(1.0, 1, 1.5, 2, BoundaryMode::ZeroPad).is_err());
        assert!(InteractionSpec::tanh(-1.0, 1, 1.0, 2, BoundaryMode::ZeroPad).is_err());
    }

    #[test]
    fn sech_constant() {
        let mut best: f64 = 0.0;
        for k in 0..200_000 {
            let s = k as f64 * 1e-5;
            best = best.max(s / s.cosh().powi(2));
        }
        assert!(best <= MAX_S_SECH2 && MAX_S_SECH2 - best < 1e-6);
    }
}
