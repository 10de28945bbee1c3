//! Reachability for the controlled single-site Heisenberg system
//!
//! ```text
//! ẋ = √2 u̇₁ − λx,   ẏ = √2 u̇₂ − λy,   ż = −(y/√2) u̇₁ + (x/√2) u̇₂ − 2λz
//! ```
//!
//! with polynomial controls `u̇₁ = Σ α_j s^j`, `u̇₂ = Σ β_j s^j`. The x and
//! y endpoints are linear in α and β; the z endpoint is
//!
//! ```text
//! z(t) − e^{−2λt} z₀ = αᵀGβ + (x₀/√2) mᵀβ − (y₀/√2) mᵀα
//! ```
//!
//! with `G` antisymmetric, so the system is bilinear. The solver fixes the
//! x, y equations by a least-norm particular solution plus null-space
//! freedom and then meets the z equation along one block of that freedom.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::SiteState;
use crate::models::{SdeSystem, SiteModel};

const SQRT2: f64 = std::f64::consts::SQRT_2;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlProblem {
    pub start: SiteState,
    pub target: SiteState,
    pub t: f64,
    pub lambda: f64,
}

impl ControlProblem {
    pub fn new(start: SiteState, target: SiteState, t: f64, lambda: f64) -> Result<Self> {
        let p = ControlProblem {
            start,
            target,
            t,
            lambda,
        };
        p.validate()?;
        Ok(p)
    }

    fn validate(&self) -> Result<()> {
        if !(self.t > 0.0 && self.t.is_finite()) {
            return Err(invalid(format!("horizon t = {} must be positive", self.t)));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(invalid(format!(
                "lambda = {} must be positive",
                self.lambda
            )));
        }
        if !self.start.is_finite() || !self.target.is_finite() {
            return Err(invalid("start and target must be finite"));
        }
        Ok(())
    }
}

/// `u̇₁(s) = Σ u1[j] s^j`, `u̇₂(s) = Σ u2[j] s^j`. For degree one,
/// `u̇₁ = a s + b` and `u̇₂ = c s + d`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolynomialControl {
    pub u1: Vec<f64>,
    pub u2: Vec<f64>,
}

impl PolynomialControl {
    pub fn zero(degree: usize) -> Self {
        PolynomialControl {
            u1: vec![0.0; degree + 1],
            u2: vec![0.0; degree + 1],
        }
    }

    pub fn degree(&self) -> usize {
        self.u1.len().max(self.u2.len()).saturating_sub(1)
    }

    fn coef(v: &[f64], j: usize) -> f64 {
        v.get(j).copied().unwrap_or(0.0)
    }
    pub fn a(&self) -> f64 {
        Self::coef(&self.u1, 1)
    }
    pub fn b(&self) -> f64 {
        Self::coef(&self.u1, 0)
    }
    pub fn c(&self) -> f64 {
        Self::coef(&self.u2, 1)
    }
    pub fn d(&self) -> f64 {
        Self::coef(&self.u2, 0)
    }

    pub fn rates(&self, s: f64) -> (f64, f64) {
        let ev = |v: &[f64]| v.iter().rev().fold(0.0, |acc, c| acc * s + c);
        (ev(&self.u1), ev(&self.u2))
    }

    pub fn norm2(&self) -> f64 {
        self.u1.iter().chain(&self.u2).map(|v| v * v).sum()
    }
}

fn rhs(lambda: f64, u: &PolynomialControl, s: f64, a: [f64; 3]) -> [f64; 3] {
    let (u1, u2) = u.rates(s);
    [
        SQRT2 * u1 - lambda * a[0],
        SQRT2 * u2 - lambda * a[1],
        (-a[1] * u1 + a[0] * u2) / SQRT2 - 2.0 * lambda * a[2],
    ]
}

/// Endpoint of the controlled flow by classical RK4 with `steps` steps.
pub fn integrate_control(p: &ControlProblem, u: &PolynomialControl, steps: usize) -> SiteState {
    let h = p.t / steps as f64;
    let mut a = [p.start.x, p.start.y, p.start.z];
    let add =
        |a: [f64; 3], k: [f64; 3], c: f64| [a[0] + c * k[0], a[1] + c * k[1], a[2] + c * k[2]];
    for i in 0..steps {
        let s = i as f64 * h;
        let k1 = rhs(p.lambda, u, s, a);
        let k2 = rhs(p.lambda, u, s + 0.5 * h, add(a, k1, 0.5 * h));
        let k3 = rhs(p.lambda, u, s + 0.5 * h, add(a, k2, 0.5 * h));
        let k4 = rhs(p.lambda, u, s + h, add(a, k3, h));
        for c in 0..3 {
            a[c] += h / 6.0 * (k1[c] + 2.0 * k2[c] + 2.0 * k3[c] + k4[c]);
        }
    }
    SiteState::new(a[0], a[1], a[2])
}

/// Euclidean endpoint error of the control, integrated by RK4 with step
/// `1e-4·t`.
pub fn verify_control(p: &ControlProblem, u: &PolynomialControl) -> f64 {
    verify_control_with(p, u, 10_000)
}

pub fn verify_control_with(p: &ControlProblem, u: &PolynomialControl, steps: usize) -> f64 {
    let e = integrate_control(p, u, steps);
    let d = e.sub(&p.target);
    (d.x * d.x + d.y * d.y + d.z * d.z).sqrt()
}

/// `J(t)`, `m` and `G` of the endpoint map for degree `p`.
struct EndpointMap {
    j: DVector<f64>,
    m: DVector<f64>,
    g: DMatrix<f64>,
}

fn endpoint_map(lambda: f64, t: f64, p: usize) -> EndpointMap {
    let n = p + 1;
    // State: J (n), m (n), H (n×n) with
    // J' = −λJ + φ,  m' = −2λm + e^{−λs}φ,  H' = −2λH + Jφᵀ − φJᵀ.
    let len = 2 * n + n * n;
    let f = |s: f64, y: &[f64], out: &mut [f64]| {
        let mut phi = vec![1.0; n];
        for k in 1..n {
            phi[k] = phi[k - 1] * s;
        }
        let e = (-lambda * s).exp();
        for k in 0..n {
            out[k] = -lambda * y[k] + phi[k];
            out[n + k] = -2.0 * lambda * y[n + k] + e * phi[k];
        }
        for a in 0..n {
            for b in 0..n {
                let idx = 2 * n + a * n + b;
                out[idx] = -2.0 * lambda * y[idx] + y[a] * phi[b] - phi[a] * y[b];
            }
        }
    };
    let steps = (2000.0_f64).max(400.0 * (lambda * t + t).ceil()) as usize;
    let h = t / steps as f64;
    let mut y = vec![0.0; len];
    let (mut k1, mut k2, mut k3, mut k4) = (
        vec![0.0; len],
        vec![0.0; len],
        vec![0.0; len],
        vec![0.0; len],
    );
    let mut tmp = vec![0.0; len];
    for i in 0..steps {
        let s = i as f64 * h;
        f(s, &y, &mut k1);
        for q in 0..len {
            tmp[q] = y[q] + 0.5 * h * k1[q];
        }
        f(s + 0.5 * h, &tmp, &mut k2);
        for q in 0..len {
            tmp[q] = y[q] + 0.5 * h * k2[q];
        }
        f(s + 0.5 * h, &tmp, &mut k3);
        for q in 0..len {
            tmp[q] = y[q] + h * k3[q];
        }
        f(s + h, &tmp, &mut k4);
        for q in 0..len {
            y[q] += h / 6.0 * (k1[q] + 2.0 * k2[q] + 2.0 * k3[q] + k4[q]);
        }
    }
    EndpointMap {
        j: DVector::from_column_slice(&y[..n]),
        m: DVector::from_column_slice(&y[n..2 * n]),
        g: DMatrix::from_row_slice(n, n, &y[2 * n..]),
    }
}

/// Orthonormal basis of the complement of `v` in `R^n`.
fn null_basis(v: &DVector<f64>) -> DMatrix<f64> {
    let n = v.len();
    let norm = v.norm();
    if norm == 0.0 {
        return DMatrix::identity(n, n);
    }
    let u = v / norm;
    // Householder reflection mapping e_0 to u; its other columns span u⊥.
    let mut w = u.clone();
    w[0] -= 1.0;
    let wn = w.norm_squared();
    let hmat = if wn < 1e-30 {
        DMatrix::identity(n, n)
    } else {
        DMatrix::identity(n, n) - (&w * w.transpose()) * (2.0 / wn)
    };
    hmat.columns(1, n - 1).into_owned()
}

fn least_norm_1(coef: &DVector<f64>, rhs: f64) -> Option<DVector<f64>> {
    let n2 = coef.norm_squared();
    if n2 <= 1e-24 {
        return None;
    }
    Some(coef * (rhs / n2))
}

/// Candidate controls for one ansatz degree.
fn candidates(p: &ControlProblem, degree: usize) -> Vec<PolynomialControl> {
    let (lam, t) = (p.lambda, p.t);
    let em = endpoint_map(lam, t, degree);
    let (x0, y0, z0) = (p.start.x, p.start.y, p.start.z);
    let rx = p.target.x - (-lam * t).exp() * x0;
    let ry = p.target.y - (-lam * t).exp() * y0;
    let rz0 = p.target.z - (-2.0 * lam * t).exp() * z0;
    let j2 = em.j.clone() * SQRT2;
    let Some(a0) = least_norm_1(&j2, rx) else {
        return vec![];
    };
    let Some(b0) = least_norm_1(&j2, ry) else {
        return vec![];
    };
    let nb = null_basis(&em.j);
    let k = x0 / SQRT2;
    let l = y0 / SQRT2;
    let base = (a0.transpose() * &em.g * &b0)[(0, 0)] + k * em.m.dot(&b0) - l * em.m.dot(&a0);
    let rz = rz0 - base;
    let build = |a: DVector<f64>, b: DVector<f64>| PolynomialControl {
        u1: a.iter().cloned().collect(),
        u2: b.iter().cloned().collect(),
    };
    if rz.abs() <= 1e-14 * (1.0 + rz0.abs()) {
        return vec![build(a0, b0)];
    }
    let mut out = Vec::new();
    if nb.ncols() > 0 {
        // vary α only
        let ca = nb.transpose() * (&em.g * &b0 - &em.m * l);
        if let Some(zeta) = least_norm_1(&ca, rz) {
            out.push(build(&a0 + &nb * zeta, b0.clone()));
        }
        // vary β only
        let cb = nb.transpose() * (em.g.transpose() * &a0 + &em.m * k);
        if let Some(eta) = least_norm_1(&cb, rz) {
            out.push(build(a0.clone(), &b0 + &nb * eta));
        }
        // purely bilinear part along the top singular pair
        let mm = nb.transpose() * &em.g * &nb;
        let svd = mm.clone().svd(true, true);
        if let (Some(u), Some(vt)) = (svd.u, svd.v_t) {
            let (imax, smax) =
                svd.singular_values
                    .iter()
                    .enumerate()
                    .fold(
                        (0, 0.0),
                        |acc, (i, &s)| if s > acc.1 { (i, s) } else { acc },
                    );
            if smax > 1e-12 {
                let uu = u.column(imax).into_owned();
                let vv = vt.row(imax).transpose();
                // α = a0 + s·Nu, β = b0 ± s·Nv turns the constraint into a
                // quadratic in s.
                let p1 = nb.clone() * &uu;
                let q1 = nb.clone() * &vv;
                for sgn in [1.0, -1.0] {
                    let c2 = (p1.transpose() * &em.g * &q1)[(0, 0)] * sgn;
                    let c1 = (p1.transpose() * &em.g * &b0)[(0, 0)] - l * em.m.dot(&p1)
                        + sgn * ((a0.transpose() * &em.g * &q1)[(0, 0)] + k * em.m.dot(&q1));
                    // c2 s² + c1 s − rz = 0
                    let roots = solve_quadratic(c2, c1, -rz);
                    if let Some(s) = roots.into_iter().min_by(|a, b| a.abs().total_cmp(&b.abs())) {
                        out.push(build(&a0 + &p1 * s, &b0 + &q1 * (sgn * s)));
                    }
                }
            }
        }
    }
    out
}

fn solve_quadratic(a: f64, b: f64, c: f64) -> Vec<f64> {
    if a.abs() < 1e-300 {
        return if b.abs() > 0.0 { vec![-c / b] } else { vec![] };
    }
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return vec![];
    }
    let sq = disc.sqrt();
    let q = -0.5 * (b + b.signum() * sq);
    let mut r = vec![];
    if q != 0.0 {
        r.push(q / a);
        r.push(c / q);
    } else {
        r.push(0.0);
    }
    r
}

/// Exact (up to the endpoint-map quadrature) endpoint of a polynomial
/// control.
fn predicted_error(p: &ControlProblem, u: &PolynomialControl) -> f64 {
    let deg = u.degree();
    let em = endpoint_map(p.lambda, p.t, deg);
    let a = DVector::from_iterator(
        deg + 1,
        (0..=deg).map(|j| PolynomialControl::coef(&u.u1, j)),
    );
    let b = DVector::from_iterator(
        deg + 1,
        (0..=deg).map(|j| PolynomialControl::coef(&u.u2, j)),
    );
    let (lam, t) = (p.lambda, p.t);
    let x = (-lam * t).exp() * p.start.x + SQRT2 * em.j.dot(&a);
    let y = (-lam * t).exp() * p.start.y + SQRT2 * em.j.dot(&b);
    let z = (-2.0 * lam * t).exp() * p.start.z
        + (a.transpose() * &em.g * &b)[(0, 0)]
        + p.start.x / SQRT2 * em.m.dot(&b)
        - p.start.y / SQRT2 * em.m.dot(&a);
    let d = [x - p.target.x, y - p.target.y, z - p.target.z];
    (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
}

/// Least-norm polynomial control steering `start` to `target` in time `t`.
/// Starts with affine controls and raises the degree (up to 4) when the
/// bilinear constraint cannot be met.
pub fn solve_reachability(p: &ControlProblem) -> Result<PolynomialControl> {
    p.validate()?;
    let scale = 1.0 + p.target.x.abs() + p.target.y.abs() + p.target.z.abs();
    for degree in 1..=4 {
        let mut best: Option<(f64, PolynomialControl)> = None;
        for c in candidates(p, degree) {
            if c.u1.iter().chain(&c.u2).any(|v| !v.is_finite()) {
                continue;
            }
            if predicted_error(p, &c) > 1e-9 * scale {
                continue;
            }
            let n = c.norm2();
            if best.as_ref().is_none_or(|(bn, _)| n < *bn) {
                best = Some((n, c));
            }
        }
        if let Some((_, c)) = best {
            return Ok(c);
        }
    }
    Err(Error::Singular(format!(
        "no polynomial control of degree <= 4 reaches {:?} from {:?}",
        p.target, p.start
    )))
}

/// Shift `u` with `σ u = b − b̃`, where `b − b̃ = Σ_j q_j F_j` is the
/// interaction part of the drift at one site state. Errors when the shift
/// is not in the range of the dispersion.
pub fn girsanov_shift(model: &SiteModel, state: &[f64], q: &[f64]) -> Result<Vec<f64>> {
    let d = model.dim();
    if state.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: state.len(),
        });
    }
    let comps = model.interaction_components();
    if q.len() != comps {
        return Err(Error::DimensionMismatch {
            expected: comps,
            got: q.len(),
        });
    }
    let mut w = DVector::zeros(d);
    for (j, f) in model.interaction_fields().iter().enumerate() {
        let v = f.eval(state);
        for c in 0..d {
            w[c] += q[j] * v[c];
        }
    }
    let nd = model.noise_dim();
    let sig = DMatrix::from_row_slice(d, nd, &model.dispersion_block(state));
    let svd = sig.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let u = svd
        .solve(&w, 1e-12 * smax.max(1e-300))
        .map_err(|e| Error::Singular(e.to_string()))?;
    let resid = (&sig * &u - &w).norm();
    if resid > 1e-10 * (1.0 + w.norm()) {
        return Err(Error::Singular(format!(
            "interaction drift {:?} not in the range of the dispersion at {:?} (residual {resid:.3e})",
            w.as_slice(),
            state
        )));
    }
    Ok(u.iter().cloned().collect())
}

/// Same as [`girsanov_shift`] with `q` read from a box system.
pub fn girsanov_shift_in(sys: &SdeSystem, states: &[f64], site: usize) -> Result<Vec<f64>> {
    let d = sys.dim();
    let q = sys.q_at(states, site);
    girsanov_shift(
        sys.model(),
        &states[site * d..(site + 1) * d],
        &q[..sys.model().interaction_components()],
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn prob(s: [f64; 3], t: [f64; 3], h: f64, l: f64) -> ControlProblem {
        ControlProblem::new(
            SiteState::new(s[0], s[1], s[2]),
            SiteState::new(t[0], t[1], t[2]),
            h,
            l,
        )
        .unwrap()
    }

    #[test]
    fn rest_point() {
        let p = prob([0.0; 3], [0.0; 3], 1.0, 1.0);
        let u = solve_reachability(&p).unwrap();
        assert_eq!(u.norm2(), 0.0);
        assert!(verify_control(&p, &u) < 1e-12);
    }

    #[test]
    fn zero_control_error_is_target_norm() {
        let p = prob([0.0; 3], [1.0, 2.0, 2.0], 1.0, 1.0);
        assert!((verify_control(&p, &PolynomialControl::zero(1)) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn pure_vertical_target_needs_quadratic() {
        let p = prob([0.0; 3], [0.0, 0.0, 1.0], 1.0, 1.0);
        let u = solve_reachability(&p).unwrap();
        assert!(u.degree() >= 2);
        assert!(verify_control(&p, &u) < 1e-6);
    }

    #[test]
    fn horizontal_target() {
        let p = prob([0.0; 3], [0.7, 0.0, 0.0], 2.0, 0.5);
        let u = solve_reachability(&p).unwrap();
        assert!(verify_control(&p, &u) < 1e-8);
        assert!(u.u2.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn invalid_problems() {
        assert!(ControlProblem::new(SiteState::ZERO, SiteState::ZERO, 0.0, 1.0).is_err());
        assert!(ControlProblem::new(SiteState::ZERO, SiteState::ZERO, 1.0, -1.0).is_err());
    }

    #[test]
    fn quadratic_roots() {
        let mut r = solve_quadratic(1.0, -3.0, 2.0);
        r.sort_by(f64::total_cmp);
        assert_eq!(r, vec![1.0, 2.0]);
        assert!(solve_quadratic(1.0, 0.0, 1.0).is_empty());
    }
}
