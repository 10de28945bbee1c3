//! Site models built from polynomial vector fields.
//!
//! A site model is described by its diffusion fields `X_k` (the dispersion
//! columns are `σ_k = √2 X_k`), its interaction fields `F_j`, and a dilation
//! field `D`. The one-site generator is
//!
//! ```text
//! L f = Σ_k X_k(X_k f) - λ D f + Σ_j q_j F_j f
//! ```
//!
//! so the Itô drift is `Σ_k (X_k·∇) X_k - λ D + Σ_j q_j F_j`. All symbolic
//! work is exact over rationals; the simulation path evaluates hand-written
//! coefficients for the shipped models and compiled polynomials otherwise.

use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::{BoxLattice, SiteIndex, SiteState};
use crate::interactions::{InteractionSpec, Patch};
use crate::poly::{rat, rat_from_f64, CompiledPoly, RatPoly};

pub const SQRT2: f64 = std::f64::consts::SQRT_2;
const FRAC_1_SQRT2: f64 = std::f64::consts::FRAC_1_SQRT_2;

/// Vector field with polynomial components over the site coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct PolyVectorField {
    components: Vec<RatPoly>,
}

impl PolyVectorField {
    pub fn new(components: Vec<RatPoly>) -> Result<Self> {
        let dim = components.len();
        if let Some(c) = components.iter().find(|c| c.nvars() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: c.nvars(),
            });
        }
        Ok(PolyVectorField { components })
    }

    pub fn zero(dim: usize) -> Self {
        PolyVectorField {
            components: vec![RatPoly::zero(dim); dim],
        }
    }

    /// The constant coordinate field `∂_i`.
    pub fn coordinate(dim: usize, i: usize) -> Self {
        let mut f = Self::zero(dim);
        f.components[i] = RatPoly::one(dim);
        f
    }

    pub fn dim(&self) -> usize {
        self.components.len()
    }

    pub fn components(&self) -> &[RatPoly] {
        &self.components
    }

    pub fn is_zero(&self) -> bool {
        self.components.iter().all(|c| c.is_zero())
    }

    /// Directional derivative `V f` for `f` over the site variables.
    pub fn apply(&self, f: &RatPoly) -> Result<RatPoly> {
        if f.nvars() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: f.nvars(),
            });
        }
        Ok(self.apply_at(f, 0))
    }

    /// `V f` where the site variables sit at `offset..offset+dim` inside the
    /// variables of `f`.
    pub fn apply_at(&self, f: &RatPoly, offset: usize) -> RatPoly {
        let n = f.nvars();
        let mut out = RatPoly::zero(n);
        for (c, comp) in self.components.iter().enumerate() {
            if comp.is_zero() {
                continue;
            }
            let df = f.derivative(offset + c);
            if df.is_zero() {
                continue;
            }
            let emb = if n == self.dim() && offset == 0 {
                comp.clone()
            } else {
                comp.embed(n, offset)
            };
            out = &out + &(&emb * &df);
        }
        out
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        self.components.iter().map(|c| c.eval(x)).collect()
    }

    pub fn scale(&self, c: &num_rational::BigRational) -> Self {
        PolyVectorField {
            components: self.components.iter().map(|p| p.scale(c)).collect(),
        }
    }

    pub fn add(&self, o: &Self) -> Result<Self> {
        if o.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: o.dim(),
            });
        }
        Ok(PolyVectorField {
            components: self
                .components
                .iter()
                .zip(&o.components)
                .map(|(a, b)| a + b)
                .collect(),
        })
    }

    fn compile(&self) -> Vec<CompiledPoly> {
        self.components.iter().map(|c| c.compile()).collect()
    }
}

/// Exact bracket `[V, W]_i = V(W_i) - W(V_i)`.
pub fn lie_bracket(v: &PolyVectorField, w: &PolyVectorField) -> Result<PolyVectorField> {
    if v.dim() != w.dim() {
        return Err(Error::DimensionMismatch {
            expected: v.dim(),
            got: w.dim(),
        });
    }
    let comps = (0..v.dim())
        .map(|i| {
            let a = v.apply_at(&w.components[i], 0);
            let b = w.apply_at(&v.components[i], 0);
            &a - &b
        })
        .collect();
    PolyVectorField::new(comps)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Heisenberg,
    Euclidean3,
    Grushin,
    Martinet,
    Custom,
}

impl ModelKind {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "heisenberg" => Ok(ModelKind::Heisenberg),
            "euclidean3" | "euclidean" => Ok(ModelKind::Euclidean3),
            "grushin" => Ok(ModelKind::Grushin),
            "martinet" => Ok(ModelKind::Martinet),
            other => Err(invalid(format!("unknown site model '{other}'"))),
        }
    }
}

/// Polynomial as a list of `(exponents, coefficient)` pairs.
pub type PolySpec = Vec<(Vec<u32>, f64)>;

/// Text form of a user-defined site model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CustomModelSpec {
    pub name: String,
    pub dim: usize,
    pub diffusion_fields: Vec<Vec<PolySpec>>,
    pub interaction_fields: Vec<Vec<PolySpec>>,
    pub dilation: Vec<PolySpec>,
    /// Base Lyapunov candidate; `V^k` is its k-th power.
    #[serde(default)]
    pub lyapunov: Option<PolySpec>,
}

pub fn poly_from_spec(dim: usize, spec: &PolySpec) -> Result<RatPoly> {
    let mut terms = Vec::with_capacity(spec.len());
    for (e, c) in spec {
        if e.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: e.len(),
            });
        }
        let r = rat_from_f64(*c).ok_or_else(|| invalid(format!("non-finite coefficient {c}")))?;
        terms.push((e.clone(), r));
    }
    Ok(RatPoly::from_terms(dim, terms))
}

fn field_from_spec(dim: usize, spec: &[PolySpec]) -> Result<PolyVectorField> {
    if spec.len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: spec.len(),
        });
    }
    PolyVectorField::new(
        spec.iter()
            .map(|p| poly_from_spec(dim, p))
            .collect::<Result<_>>()?,
    )
}

/// One site's generator data.
#[derive(Clone, Debug)]
pub struct SiteModel {
    kind: ModelKind,
    name: String,
    dim: usize,
    diffusion: Vec<PolyVectorField>,
    interaction: Vec<PolyVectorField>,
    dilation: PolyVectorField,
    ito_correction: PolyVectorField,
    lyapunov_base: Option<RatPoly>,
    radial_weights: Vec<u32>,
    lambda: f64,
    compiled: CompiledFields,
}

#[derive(Clone, Debug, Default)]
struct CompiledFields {
    diffusion: Vec<Vec<CompiledPoly>>,
    interaction: Vec<Vec<CompiledPoly>>,
    dilation: Vec<CompiledPoly>,
    ito: Vec<CompiledPoly>,
}

fn v3(i: usize) -> RatPoly {
    RatPoly::var(3, i)
}

impl SiteModel {
    #[allow(clippy::too_many_arguments)]
    fn build(
        kind: ModelKind,
        name: &str,
        dim: usize,
        diffusion: Vec<PolyVectorField>,
        interaction: Vec<PolyVectorField>,
        dilation: PolyVectorField,
        lyapunov_base: Option<RatPoly>,
        radial_weights: Vec<u32>,
        lambda: f64,
    ) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(invalid(format!(
                "lambda = {lambda} must be positive and finite"
            )));
        }
        let all = diffusion
            .iter()
            .chain(&interaction)
            .chain(std::iter::once(&dilation));
        if let Some(f) = all.into_iter().find(|f| f.dim() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: f.dim(),
            });
        }
        if diffusion.is_empty() {
            return Err(invalid("site model needs at least one diffusion field"));
        }
        if interaction.len() > 3 {
            return Err(invalid("at most three interaction fields are supported"));
        }
        let mut ito = PolyVectorField::zero(dim);
        for x in &diffusion {
            let comps: Vec<RatPoly> = x.components().iter().map(|c| x.apply_at(c, 0)).collect();
            ito = ito.add(&PolyVectorField::new(comps)?)?;
        }
        let compiled = CompiledFields {
            diffusion: diffusion.iter().map(|f| f.compile()).collect(),
            interaction: interaction.iter().map(|f| f.compile()).collect(),
            dilation: dilation.compile(),
            ito: ito.compile(),
        };
        Ok(SiteModel {
            kind,
            name: name.to_string(),
            dim,
            diffusion,
            interaction,
            dilation,
            ito_correction: ito,
            lyapunov_base,
            radial_weights,
            lambda,
            compiled,
        })
    }

    /// `X = ∂x - (y/2)∂z`, `Y = ∂y + (x/2)∂z`, `D = x∂x + y∂y + 2z∂z`.
    pub fn heisenberg(lambda: f64) -> Result<Self> {
        let x = PolyVectorField::new(vec![
            RatPoly::one(3),
            RatPoly::zero(3),
            v3(1).scale(&rat(-1, 2)),
        ])?;
        let y = PolyVectorField::new(vec![
            RatPoly::zero(3),
            RatPoly::one(3),
            v3(0).scale(&rat(1, 2)),
        ])?;
        let d = PolyVectorField::new(vec![v3(0), v3(1), v3(2).scale(&rat(2, 1))])?;
        let rho2 = &v3(0).pow(2) + &v3(1).pow(2);
        let v = &rho2.pow(2) + &v3(2).pow(2);
        Self::build(
            ModelKind::Heisenberg,
            "heisenberg",
            3,
            vec![x.clone(), y.clone()],
            vec![x, y],
            d,
            Some(v),
            vec![1, 1, 2],
            lambda,
        )
    }

    /// Laplacian on `R^3` with `D = x∂x + y∂y + z∂z`.
    pub fn euclidean3(lambda: f64) -> Result<Self> {
        let e: Vec<PolyVectorField> = (0..3).map(|i| PolyVectorField::coordinate(3, i)).collect();
        let d = PolyVectorField::new(vec![v3(0), v3(1), v3(2)])?;
        Self::build(
            ModelKind::Euclidean3,
            "euclidean3",
            3,
            e.clone(),
            e,
            d,
            None,
            vec![1, 1, 1],
            lambda,
        )
    }

    /// Grushin plane: `X = ∂x`, `Y = x∂y`, `D = x∂x + y∂y`.
    pub fn grushin(lambda: f64) -> Result<Self> {
        let x = PolyVectorField::coordinate(2, 0);
        let y = PolyVectorField::new(vec![RatPoly::zero(2), RatPoly::var(2, 0)])?;
        let d = PolyVectorField::new(vec![RatPoly::var(2, 0), RatPoly::var(2, 1)])?;
        Self::build(
            ModelKind::Grushin,
            "grushin",
            2,
            vec![x.clone(), y.clone()],
            vec![x, y],
            d,
            None,
            vec![1, 2],
            lambda,
        )
    }

    /// Martinet distribution with dispersion `diag(√2, √2, √2 y^2)`, drift
    /// `(q_x - λx, q_y - λy, -λz - q_x y^2)` and `D = x∂x + y∂y + z∂z`.
    /// Irreducibility is not established for this model.
    pub fn martinet(lambda: f64) -> Result<Self> {
        let dx = PolyVectorField::coordinate(3, 0);
        let dy = PolyVectorField::coordinate(3, 1);
        let y2dz = PolyVectorField::new(vec![RatPoly::zero(3), RatPoly::zero(3), v3(1).pow(2)])?;
        let fx = PolyVectorField::new(vec![RatPoly::one(3), RatPoly::zero(3), -&v3(1).pow(2)])?;
        let d = PolyVectorField::new(vec![v3(0), v3(1), v3(2)])?;
        Self::build(
            ModelKind::Martinet,
            "martinet",
            3,
            vec![dx, dy.clone(), y2dz],
            vec![fx, dy],
            d,
            None,
            vec![3, 1, 3],
            lambda,
        )
    }

    pub fn custom(spec: &CustomModelSpec, lambda: f64) -> Result<Self> {
        let dim = spec.dim;
        if !(1..=3).contains(&dim) {
            return Err(invalid(format!(
                "custom model dimension {dim} not in 1..=3"
            )));
        }
        let diffusion = spec
            .diffusion_fields
            .iter()
            .map(|f| field_from_spec(dim, f))
            .collect::<Result<Vec<_>>>()?;
        let interaction = spec
            .interaction_fields
            .iter()
            .map(|f| field_from_spec(dim, f))
            .collect::<Result<Vec<_>>>()?;
        let dilation = field_from_spec(dim, &spec.dilation)?;
        let lyap = spec
            .lyapunov
            .as_ref()
            .map(|p| poly_from_spec(dim, p))
            .transpose()?;
        Self::build(
            ModelKind::Custom,
            &spec.name,
            dim,
            diffusion,
            interaction,
            dilation,
            lyap,
            vec![1; dim],
            lambda,
        )
    }

    pub fn by_name(name: &str, lambda: f64) -> Result<Self> {
        match ModelKind::parse(name)? {
            ModelKind::Heisenberg => Self::heisenberg(lambda),
            ModelKind::Euclidean3 => Self::euclidean3(lambda),
            ModelKind::Grushin => Self::grushin(lambda),
            ModelKind::Martinet => Self::martinet(lambda),
            ModelKind::Custom => unreachable!(),
        }
    }

    /// Same model with another confinement constant.
    pub fn with_lambda(&self, lambda: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(invalid(format!(
                "lambda = {lambda} must be positive and finite"
            )));
        }
        let mut m = self.clone();
        m.lambda = lambda;
        Ok(m)
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }
    pub fn name(&self) -> &str {
        &self.name
    }
    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn lambda(&self) -> f64 {
        self.lambda
    }
    pub fn noise_dim(&self) -> usize {
        self.diffusion.len()
    }
    pub fn diffusion_fields(&self) -> &[PolyVectorField] {
        &self.diffusion
    }
    pub fn interaction_fields(&self) -> &[PolyVectorField] {
        &self.interaction
    }
    pub fn interaction_components(&self) -> usize {
        self.interaction.len()
    }
    pub fn dilation(&self) -> &PolyVectorField {
        &self.dilation
    }
    /// `Σ_k (X_k·∇) X_k`: the part of the Itô drift coming from the squares.
    pub fn ito_correction(&self) -> &PolyVectorField {
        &self.ito_correction
    }

    /// Whether the support of the transition function is known to be full.
    pub fn irreducibility_verified(&self) -> bool {
        !matches!(self.kind, ModelKind::Martinet | ModelKind::Custom)
    }

    /// Hard bound on the Euclidean size of a site state during simulation.
    pub fn state_guard(&self) -> Option<f64> {
        match self.kind {
            ModelKind::Martinet => Some(1e6),
            _ => None,
        }
    }

    /// Homogeneity weights used when sampling radial shells.
    pub fn radial_weights(&self) -> &[u32] {
        &self.radial_weights
    }

    /// Lyapunov candidate `V^k` for this model.
    pub fn lyapunov_candidate(&self, k: u32) -> Result<RatPoly> {
        if k == 0 {
            return Err(invalid("Lyapunov exponent k must be positive"));
        }
        let p = |i: usize| RatPoly::var(self.dim, i);
        Ok(match self.kind {
            ModelKind::Heisenberg => self.lyapunov_base.as_ref().unwrap().pow(k),
            ModelKind::Euclidean3 => &(&p(0).pow(2 * k) + &p(1).pow(2 * k)) + &p(2).pow(2 * k),
            ModelKind::Grushin => &p(0).pow(4 * k) + &p(1).pow(2 * k),
            ModelKind::Martinet => &(&p(0).pow(2 * k) + &p(1).pow(6 * k)) + &p(2).pow(2 * k),
            ModelKind::Custom => self
                .lyapunov_base
                .as_ref()
                .ok_or_else(|| invalid("custom model has no Lyapunov candidate"))?
                .pow(k),
        })
    }

    /// `½ σσ* = Σ_k X_k X_k^T` as a polynomial matrix (row-major).
    pub fn half_diffusion_matrix(&self) -> Vec<Vec<RatPoly>> {
        let n = self.dim;
        let mut m = vec![vec![RatPoly::zero(n); n]; n];
        for x in &self.diffusion {
            let c = x.components();
            for a in 0..n {
                for b in 0..n {
                    m[a][b] = &m[a][b] + &(&c[a] * &c[b]);
                }
            }
        }
        m
    }

    /// Generator pieces of a polynomial `f` whose site variables sit at
    /// `offset` inside the variables of `f`.
    pub fn generator_parts_at(&self, f: &RatPoly, offset: usize) -> GeneratorParts {
        let mut second = RatPoly::zero(f.nvars());
        for x in &self.diffusion {
            let xf = x.apply_at(f, offset);
            second = &second + &x.apply_at(&xf, offset);
        }
        GeneratorParts {
            second,
            dilation: self.dilation.apply_at(f, offset),
            interaction: self
                .interaction
                .iter()
                .map(|x| x.apply_at(f, offset))
                .collect(),
        }
    }

    pub fn generator_parts(&self, f: &RatPoly) -> Result<GeneratorParts> {
        if f.nvars() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: f.nvars(),
            });
        }
        Ok(self.generator_parts_at(f, 0))
    }

    /// Itô drift at one site for interaction values `q` and confinement `lambda`.
    #[inline]
    pub fn drift_into(&self, s: &[f64], q: &[f64], lambda: f64, out: &mut [f64]) {
        match self.kind {
            ModelKind::Heisenberg => {
                let (x, y, z) = (s[0], s[1], s[2]);
                let (qx, qy) = (q[0], q[1]);
                out[0] = qx - lambda * x;
                out[1] = qy - lambda * y;
                out[2] = -2.0 * lambda * z + 0.5 * (qy * x - qx * y);
            }
            ModelKind::Euclidean3 => {
                for c in 0..3 {
                    out[c] = q[c] - lambda * s[c];
                }
            }
            ModelKind::Grushin => {
                out[0] = q[0] - lambda * s[0];
                out[1] = q[1] * s[0] - lambda * s[1];
            }
            ModelKind::Martinet => {
                let y = s[1];
                out[0] = q[0] - lambda * s[0];
                out[1] = q[1] - lambda * y;
                out[2] = -lambda * s[2] - q[0] * y * y;
            }
            ModelKind::Custom => {
                let cf = &self.compiled;
                for c in 0..self.dim {
                    let mut v = cf.ito[c].eval(s) - lambda * cf.dilation[c].eval(s);
                    for (j, f) in cf.interaction.iter().enumerate() {
                        v += q[j] * f[c].eval(s);
                    }
                    out[c] = v;
                }
            }
        }
    }

    /// Adds `scale · σ(s) ξ` to `out`.
    #[inline]
    pub fn add_dispersion(&self, s: &[f64], xi: &[f64], scale: f64, out: &mut [f64]) {
        match self.kind {
            ModelKind::Heisenberg => {
                let k = scale * SQRT2;
                out[0] += k * xi[0];
                out[1] += k * xi[1];
                out[2] += scale * FRAC_1_SQRT2 * (-s[1] * xi[0] + s[0] * xi[1]);
            }
            ModelKind::Euclidean3 => {
                let k = scale * SQRT2;
                for c in 0..3 {
                    out[c] += k * xi[c];
                }
            }
            ModelKind::Grushin => {
                let k = scale * SQRT2;
                out[0] += k * xi[0];
                out[1] += k * s[0] * xi[1];
            }
            ModelKind::Martinet => {
                let k = scale * SQRT2;
                out[0] += k * xi[0];
                out[1] += k * xi[1];
                out[2] += k * s[1] * s[1] * xi[2];
            }
            ModelKind::Custom => {
                let k = scale * SQRT2;
                for (col, f) in self.compiled.diffusion.iter().enumerate() {
                    for c in 0..self.dim {
                        out[c] += k * f[c].eval(s) * xi[col];
                    }
                }
            }
        }
    }

    /// Dispersion block `σ(s)` (dim × noise_dim, row-major).
    pub fn dispersion_block(&self, s: &[f64]) -> Vec<f64> {
        let (n, m) = (self.dim, self.noise_dim());
        let mut out = vec![0.0; n * m];
        let mut col = vec![0.0; n];
        let mut xi = vec![0.0; m];
        for j in 0..m {
            xi.iter_mut().for_each(|v| *v = 0.0);
            xi[j] = 1.0;
            col.iter_mut().for_each(|v| *v = 0.0);
            self.add_dispersion(s, &xi, 1.0, &mut col);
            for i in 0..n {
                out[i * m + j] = col[i];
            }
        }
        out
    }
}

/// `L f = second - λ·dilation + Σ_j q_j·interaction[j]`.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorParts {
    pub second: RatPoly,
    pub dilation: RatPoly,
    pub interaction: Vec<RatPoly>,
}

/// Bracket-generated rank of the diffusion fields at sample points.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HormanderReport {
    pub model: String,
    pub depth: usize,
    pub fields_generated: usize,
    pub ranks: Vec<usize>,
    pub min_rank: usize,
    pub target: usize,
    pub passed: bool,
}

/// Brackets of the diffusion fields up to `depth` (depth 1 is the fields).
pub fn bracket_family(model: &SiteModel, depth: usize) -> Result<Vec<PolyVectorField>> {
    if depth == 0 {
        return Err(invalid("bracket depth must be at least 1"));
    }
    let base: Vec<PolyVectorField> = model
        .diffusion
        .iter()
        .filter(|f| !f.is_zero())
        .cloned()
        .collect();
    let mut all = base.clone();
    let mut level = base.clone();
    for _ in 1..depth {
        let mut next = Vec::new();
        for a in &base {
            for b in &level {
                let br = lie_bracket(a, b)?;
                if !br.is_zero() && !all.contains(&br) && !next.contains(&br) {
                    next.push(br);
                }
            }
        }
        all.extend(next.iter().cloned());
        level = next;
    }
    Ok(all)
}

/// Numerical rank with the threshold `1e-10 · σ_max`.
pub fn numerical_rank(m: &DMatrix<f64>) -> usize {
    if m.ncols() == 0 || m.nrows() == 0 {
        return 0;
    }
    let sv = m.clone().svd(false, false).singular_values;
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > 1e-10 * smax).count()
}

pub fn hormander_rank(
    model: &SiteModel,
    points: &[Vec<f64>],
    max_bracket_depth: usize,
) -> Result<HormanderReport> {
    let family = bracket_family(model, max_bracket_depth)?;
    let dim = model.dim();
    let mut ranks = Vec::with_capacity(points.len());
    for p in points {
        if p.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: p.len(),
            });
        }
        let cols: Vec<Vec<f64>> = family.iter().map(|f| f.eval(p)).collect();
        let m = DMatrix::from_fn(dim, cols.len(), |i, j| cols[j][i]);
        ranks.push(numerical_rank(&m));
    }
    let min_rank = ranks.iter().cloned().min().unwrap_or(0);
    Ok(HormanderReport {
        model: model.name().to_string(),
        depth: max_bracket_depth,
        fields_generated: family.len(),
        passed: !ranks.is_empty() && min_rank == dim,
        ranks,
        min_rank,
        target: dim,
    })
}

/// Confinement constants over the lattice.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LambdaSchedule {
    Constant {
        value: f64,
    },
    /// `λ_i = values[(i_1 + .. + i_d) mod len]`.
    Periodic {
        values: Vec<f64>,
    },
}

impl LambdaSchedule {
    pub fn validate(&self) -> Result<()> {
        let vals: &[f64] = match self {
            LambdaSchedule::Constant { value } => std::slice::from_ref(value),
            LambdaSchedule::Periodic { values } => values,
        };
        if vals.is_empty() {
            return Err(invalid("periodic lambda schedule is empty"));
        }
        if let Some(l) = vals.iter().find(|l| !(**l > 0.0 && l.is_finite())) {
            return Err(Error::HypothesisViolated {
                hypothesis: "H3",
                detail: format!("lambda {l} not in (0, inf)"),
            });
        }
        Ok(())
    }

    pub fn at(&self, i: &SiteIndex) -> f64 {
        match self {
            LambdaSchedule::Constant { value } => *value,
            LambdaSchedule::Periodic { values } => {
                let s: i64 = i.iter().map(|c| *c as i64).sum();
                values[s.rem_euclid(values.len() as i64) as usize]
            }
        }
    }

    pub fn min(&self) -> f64 {
        match self {
            LambdaSchedule::Constant { value } => *value,
            LambdaSchedule::Periodic { values } => {
                values.iter().cloned().fold(f64::INFINITY, f64::min)
            }
        }
    }

    pub fn max(&self) -> f64 {
        match self {
            LambdaSchedule::Constant { value } => *value,
            LambdaSchedule::Periodic { values } => values.iter().cloned().fold(0.0, f64::max),
        }
    }

    pub fn on(&self, lattice: &BoxLattice) -> Vec<f64> {
        lattice.sites().iter().map(|s| self.at(s)).collect()
    }
}

/// Drift and dispersion of the box system: one site model on every site of
/// a box, coupled through a finite-range interaction.
#[derive(Clone, Debug)]
pub struct SdeSystem {
    model: Arc<SiteModel>,
    interaction: Arc<InteractionSpec>,
    lattice: Arc<BoxLattice>,
    lambdas: Vec<f64>,
    /// Neighbourhood of every site, resolved through the boundary mode.
    /// `None` is a zero-padded slot.
    neighbours: Vec<Vec<Option<usize>>>,
}

/// Builds the box system with one `λ` per site.
pub fn assemble_generator_coefficients(
    model: Arc<SiteModel>,
    interaction: Arc<InteractionSpec>,
    lattice: Arc<BoxLattice>,
    lambdas: Vec<f64>,
) -> Result<SdeSystem> {
    if interaction.components() > 0 && interaction.components() != model.interaction_components() {
        return Err(Error::DimensionMismatch {
            expected: model.interaction_components(),
            got: interaction.components(),
        });
    }
    if interaction.range() != lattice.r() {
        return Err(Error::IncompatibleGeometry(format!(
            "interaction range {} differs from lattice range {}",
            interaction.range(),
            lattice.r()
        )));
    }
    if lambdas.len() != lattice.len() {
        return Err(Error::DimensionMismatch {
            expected: lattice.len(),
            got: lambdas.len(),
        });
    }
    if let Some(l) = lambdas.iter().find(|l| !(**l > 0.0 && l.is_finite())) {
        return Err(Error::HypothesisViolated {
            hypothesis: "H3",
            detail: format!("lambda {l} not in (0, inf)"),
        });
    }
    let neighbours = interaction.resolve_neighbourhoods(&lattice);
    Ok(SdeSystem {
        model,
        interaction,
        lattice,
        lambdas,
        neighbours,
    })
}

impl SdeSystem {
    /// Box system with the model's own `λ` on every site.
    pub fn uniform(
        model: Arc<SiteModel>,
        interaction: Arc<InteractionSpec>,
        lattice: Arc<BoxLattice>,
    ) -> Result<Self> {
        let l = vec![model.lambda(); lattice.len()];
        assemble_generator_coefficients(model, interaction, lattice, l)
    }

    pub fn model(&self) -> &SiteModel {
        &self.model
    }
    pub fn model_arc(&self) -> &Arc<SiteModel> {
        &self.model
    }
    pub fn interaction(&self) -> &InteractionSpec {
        &self.interaction
    }
    pub fn interaction_arc(&self) -> &Arc<InteractionSpec> {
        &self.interaction
    }
    pub fn lattice(&self) -> &BoxLattice {
        &self.lattice
    }
    pub fn lattice_arc(&self) -> &Arc<BoxLattice> {
        &self.lattice
    }
    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }
    pub fn dim(&self) -> usize {
        self.model.dim()
    }
    pub fn n_sites(&self) -> usize {
        self.lattice.len()
    }
    pub fn state_len(&self) -> usize {
        self.n_sites() * self.dim()
    }
    pub fn noise_dim(&self) -> usize {
        self.model.noise_dim()
    }
    pub fn neighbours(&self, site: usize) -> &[Option<usize>] {
        &self.neighbours[site]
    }

    /// Interaction values at `site` (unused trailing entries are zero).
    #[inline]
    pub fn q_at(&self, states: &[f64], site: usize) -> [f64; 3] {
        if self.interaction.is_zero() {
            return [0.0; 3];
        }
        let patch = Patch {
            dim: self.dim(),
            states,
            slots: &self.neighbours[site],
            center: self.neighbours[site].len() / 2,
        };
        self.interaction
            .eval_patch(&patch, self.model.interaction_components())
    }

    /// Drift of one site into `out[..dim]`.
    #[inline]
    pub fn drift_site(&self, states: &[f64], site: usize, out: &mut [f64]) {
        let d = self.dim();
        let q = self.q_at(states, site);
        self.model.drift_into(
            &states[site * d..(site + 1) * d],
            &q,
            self.lambdas[site],
            out,
        );
    }

    pub fn drift(&self, states: &[f64], out: &mut [f64]) {
        let d = self.dim();
        for i in 0..self.n_sites() {
            self.drift_site(states, i, &mut out[i * d..(i + 1) * d]);
        }
    }

    /// Per-site dispersion block (dim × noise_dim, row-major).
    pub fn dispersion_block(&self, states: &[f64], site: usize) -> Vec<f64> {
        let d = self.dim();
        self.model
            .dispersion_block(&states[site * d..(site + 1) * d])
    }

    /// Site states as [`SiteState`] values.
    pub fn site_states(&self, states: &[f64]) -> Vec<SiteState> {
        states
            .chunks(self.dim())
            .map(SiteState::from_slice)
            .collect()
    }

    /// Symbolic preparation of a cylindrical observable for repeated
    /// generator evaluation.
    pub fn prepare(&self, f: &CylindricalObservable) -> Result<PreparedObservable> {
        let d = self.dim();
        if f.poly.nvars() != d * f.sites.len() {
            return Err(Error::DimensionMismatch {
                expected: d * f.sites.len(),
                got: f.poly.nvars(),
            });
        }
        let mut positions = Vec::with_capacity(f.sites.len());
        for s in &f.sites {
            let p = self
                .lattice
                .position(s)
                .ok_or_else(|| Error::SiteOutsideBox(s[..self.lattice.d()].to_vec()))?;
            positions.push(p);
        }
        let mut parts = Vec::with_capacity(positions.len());
        for (k, &p) in positions.iter().enumerate() {
            let g = self.model.generator_parts_at(&f.poly, k * d);
            parts.push(PreparedSite {
                position: p,
                second: g.second.compile(),
                dilation: g.dilation.compile(),
                interaction: g.interaction.iter().map(|p| p.compile()).collect(),
            });
        }
        Ok(PreparedObservable {
            dim: d,
            positions,
            value: f.poly.compile(),
            parts,
        })
    }

    /// `L_n f(a)` for a polynomial cylindrical observable.
    pub fn apply_generator(&self, f: &CylindricalObservable, states: &[f64]) -> Result<f64> {
        Ok(self.prepare(f)?.generator(self, states))
    }

    /// `L_n f(a)` from supplied derivatives of `f` with respect to the
    /// variables of the sites in `positions` (gradient of length `m`,
    /// Hessian `m × m` row-major, `m = dim · positions.len()`).
    pub fn generator_from_derivatives(
        &self,
        states: &[f64],
        positions: &[usize],
        grad: &[f64],
        hess: &[f64],
    ) -> f64 {
        let d = self.dim();
        let m = d * positions.len();
        let mut total = 0.0;
        let mut b = vec![0.0; d];
        for (k, &p) in positions.iter().enumerate() {
            self.drift_site(states, p, &mut b);
            let sig = self.dispersion_block(states, p);
            let nd = self.noise_dim();
            for a in 0..d {
                total += b[a] * grad[k * d + a];
                for c in 0..d {
                    let mut s = 0.0;
                    for j in 0..nd {
                        s += sig[a * nd + j] * sig[c * nd + j];
                    }
                    total += 0.5 * s * hess[(k * d + a) * m + k * d + c];
                }
            }
        }
        total
    }
}

/// Polynomial depending on finitely many lattice sites; variables are laid
/// out site by site, `dim` per site.
#[derive(Clone, Debug)]
pub struct CylindricalObservable {
    pub sites: Vec<SiteIndex>,
    pub poly: RatPoly,
}

impl CylindricalObservable {
    pub fn new(sites: Vec<SiteIndex>, poly: RatPoly) -> Self {
        CylindricalObservable { sites, poly }
    }

    /// A single-site polynomial placed at `site`.
    pub fn single(site: SiteIndex, poly: RatPoly) -> Self {
        CylindricalObservable {
            sites: vec![site],
            poly,
        }
    }
}

#[derive(Clone, Debug)]
struct PreparedSite {
    position: usize,
    second: CompiledPoly,
    dilation: CompiledPoly,
    interaction: Vec<CompiledPoly>,
}

/// Compiled generator pieces of one observable on one box system.
#[derive(Clone, Debug)]
pub struct PreparedObservable {
    dim: usize,
    positions: Vec<usize>,
    value: CompiledPoly,
    parts: Vec<PreparedSite>,
}

impl PreparedObservable {
    fn gather(&self, states: &[f64], buf: &mut Vec<f64>) {
        buf.clear();
        for &p in &self.positions {
            buf.extend_from_slice(&states[p * self.dim..(p + 1) * self.dim]);
        }
    }

    pub fn positions(&self) -> &[usize] {
        &self.positions
    }

    pub fn value(&self, states: &[f64]) -> f64 {
        let mut buf = Vec::with_capacity(self.value.nvars());
        self.gather(states, &mut buf);
        self.value.eval(&buf)
    }

    pub fn generator(&self, sys: &SdeSystem, states: &[f64]) -> f64 {
        let mut buf = Vec::with_capacity(self.value.nvars());
        self.gather(states, &mut buf);
        let mut total = 0.0;
        for part in &self.parts {
            let lam = sys.lambdas()[part.position];
            let mut v = part.second.eval(&buf) - lam * part.dilation.eval(&buf);
            if !part.interaction.is_empty() && !sys.interaction().is_zero() {
                let q = sys.q_at(states, part.position);
                for (j, p) in part.interaction.iter().enumerate() {
                    v += q[j] * p.eval(&buf);
                }
            }
            total += v;
        }
        total
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interactions::{BoundaryMode, InteractionSpec};
    use crate::poly::Coeff;
    use num_rational::BigRational;

    fn heis() -> SiteModel {
        SiteModel::heisenberg(1.0).unwrap()
    }

    #[test]
    fn heisenberg_brackets() {
        let m = heis();
        let x = &m.interaction_fields()[0];
        let y = &m.interaction_fields()[1];
        let xy = lie_bracket(x, y).unwrap();
        assert_eq!(xy, PolyVectorField::coordinate(3, 2));
        assert!(lie_bracket(x, x).unwrap().is_zero());
        assert_eq!(lie_bracket(x, m.dilation()).unwrap(), *x);
        assert_eq!(lie_bracket(y, m.dilation()).unwrap(), *y);
    }

    #[test]
    fn bracket_dim_mismatch() {
        let a = PolyVectorField::coordinate(3, 0);
        let b = PolyVectorField::coordinate(2, 0);
        assert!(lie_bracket(&a, &b).is_err());
    }

    #[test]
    fn half_sigma_sigma_matches_closed_form() {
        let m = heis();
        let h = m.half_diffusion_matrix();
        let x = v3(0);
        let y = v3(1);
        let half = rat(1, 2);
        let expect = [
            [RatPoly::one(3), RatPoly::zero(3), y.scale(&-half.clone())],
            [RatPoly::zero(3), RatPoly::one(3), x.scale(&half)],
            [
                y.scale(&-half.clone()),
                x.scale(&half),
                (&x.pow(2) + &y.pow(2)).scale(&rat(1, 4)),
            ],
        ];
        for a in 0..3 {
            for b in 0..3 {
                assert_eq!(h[a][b], expect[a][b], "entry ({a},{b})");
            }
        }
    }

    #[test]
    fn ito_equals_stratonovich_for_shipped_models() {
        for m in [
            SiteModel::heisenberg(1.0).unwrap(),
            SiteModel::euclidean3(1.0).unwrap(),
            SiteModel::grushin(1.0).unwrap(),
            SiteModel::martinet(1.0).unwrap(),
        ] {
            assert!(m.ito_correction().is_zero(), "{}", m.name());
        }
    }

    #[test]
    fn fast_drift_matches_symbolic_fields() {
        let q = [0.3, -0.7, 0.2];
        let pt = [0.4, -1.3, 2.2];
        for m in [
            SiteModel::heisenberg(1.3).unwrap(),
            SiteModel::euclidean3(0.6).unwrap(),
            SiteModel::grushin(0.9).unwrap(),
            SiteModel::martinet(1.1).unwrap(),
        ] {
            let d = m.dim();
            let s = &pt[..d];
            let mut fast = vec![0.0; d];
            m.drift_into(s, &q, m.lambda(), &mut fast);
            for c in 0..d {
                let mut sym = m.ito_correction().components()[c].eval(s)
                    - m.lambda() * m.dilation().components()[c].eval(s);
                for (j, f) in m.interaction_fields().iter().enumerate() {
                    sym += q[j] * f.components()[c].eval(s);
                }
                assert!((fast[c] - sym).abs() < 1e-14, "{} comp {c}", m.name());
            }
            let blk = m.dispersion_block(s);
            let nd = m.noise_dim();
            for (j, f) in m.diffusion_fields().iter().enumerate() {
                for c in 0..d {
                    let sym = SQRT2 * f.components()[c].eval(s);
                    assert!((blk[c * nd + j] - sym).abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn hormander_examples() {
        let pts: Vec<Vec<f64>> = vec![vec![0.0, 0.0, 0.0], vec![1.5, -2.0, 7.0]];
        let r = hormander_rank(&heis(), &pts, 2).unwrap();
        assert!(r.passed);
        assert_eq!(r.ranks, vec![3, 3]);
        let r1 = hormander_rank(&heis(), &pts, 1).unwrap();
        assert_eq!(r1.min_rank, 2);

        let e = SiteModel::euclidean3(1.0).unwrap();
        assert!(hormander_rank(&e, &pts, 1).unwrap().passed);

        let g = SiteModel::grushin(1.0).unwrap();
        let at0 = vec![vec![0.0, 3.0]];
        assert_eq!(hormander_rank(&g, &at0, 1).unwrap().min_rank, 1);
        assert_eq!(hormander_rank(&g, &at0, 2).unwrap().min_rank, 2);

        let mt = SiteModel::martinet(1.0).unwrap();
        let y0 = vec![vec![1.0, 0.0, 1.0]];
        assert_eq!(hormander_rank(&mt, &y0, 2).unwrap().min_rank, 2);
        assert_eq!(hormander_rank(&mt, &y0, 3).unwrap().min_rank, 3);
    }

    fn zero_system(n: usize) -> SdeSystem {
        let lat = Arc::new(BoxLattice::new(1, 1, n).unwrap());
        let q = Arc::new(InteractionSpec::zero(1, BoundaryMode::ZeroPad));
        SdeSystem::uniform(Arc::new(heis()), q, lat).unwrap()
    }

    #[test]
    fn assembled_coefficients_example() {
        let sys = zero_system(0);
        let s = [1.0, 2.0, 3.0];
        let mut b = [0.0; 3];
        sys.drift_site(&s, 0, &mut b);
        assert_eq!(b, [-1.0, -2.0, -6.0]);
        let blk = sys.dispersion_block(&s, 0);
        let expect = [SQRT2, 0.0, 0.0, SQRT2, -2.0 / SQRT2, 1.0 / SQRT2];
        for (a, e) in blk.iter().zip(expect) {
            assert!((a - e).abs() < 1e-15);
        }
        // ½ σσ* at (1, 2)
        let mut half = [[0.0; 3]; 3];
        for a in 0..3 {
            for c in 0..3 {
                half[a][c] = 0.5 * (blk[a * 2] * blk[c * 2] + blk[a * 2 + 1] * blk[c * 2 + 1]);
            }
        }
        let want = [[1.0, 0.0, -1.0], [0.0, 1.0, 0.5], [-1.0, 0.5, 1.25]];
        for a in 0..3 {
            for c in 0..3 {
                assert!((half[a][c] - want[a][c]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn generator_on_v1() {
        let sys = zero_system(0);
        let v = heis().lyapunov_candidate(1).unwrap();
        let f = CylindricalObservable::single([0, 0, 0], v);
        let val = sys.apply_generator(&f, &[1.0, 0.0, 0.0]).unwrap();
        assert!((val - 12.5).abs() < 1e-12);
        let one = CylindricalObservable::single([0, 0, 0], RatPoly::one(3));
        assert_eq!(sys.apply_generator(&one, &[0.3, 0.1, 9.0]).unwrap(), 0.0);
        let out = CylindricalObservable::single([5, 0, 0], RatPoly::one(3));
        assert!(matches!(
            sys.apply_generator(&out, &[0.0; 3]),
            Err(Error::SiteOutsideBox(_))
        ));
    }

    #[test]
    fn generator_on_z_is_drift() {
        let m = heis();
        let z = v3(2);
        let g = m.generator_parts(&z).unwrap();
        // L z = -2λz + ½(q_y x - q_x y)
        assert!(g.second.is_zero());
        assert_eq!(g.dilation, z.scale(&rat(2, 1)));
        assert_eq!(g.interaction[0], v3(1).scale(&rat(-1, 2)));
        assert_eq!(g.interaction[1], v3(0).scale(&rat(1, 2)));
    }

    #[test]
    fn custom_model_from_text() {
        // Heisenberg written out by hand.
        let spec: CustomModelSpec = serde_json::from_str(
            r#"{
            "name": "heis-text", "dim": 3,
            "diffusion_fields": [
                [[[[0,0,0],1.0]], [], [[[0,1,0],-0.5]]],
                [[], [[[0,0,0],1.0]], [[[1,0,0],0.5]]]
            ],
            "interaction_fields": [
                [[[[0,0,0],1.0]], [], [[[0,1,0],-0.5]]],
                [[], [[[0,0,0],1.0]], [[[1,0,0],0.5]]]
            ],
            "dilation": [[[[1,0,0],1.0]], [[[0,1,0],1.0]], [[[0,0,1],2.0]]],
            "lyapunov": [[[4,0,0],1.0],[[2,2,0],2.0],[[0,4,0],1.0],[[0,0,2],1.0]]
        }"#,
        )
        .unwrap();
        let c = SiteModel::custom(&spec, 1.0).unwrap();
        let h = heis();
        assert_eq!(c.half_diffusion_matrix(), h.half_diffusion_matrix());
        assert_eq!(
            c.lyapunov_candidate(2).unwrap(),
            h.lyapunov_candidate(2).unwrap()
        );
        let s = [0.2, -0.4, 1.1];
        let q = [0.5, -0.25, 0.0];
        let (mut a, mut b) = ([0.0; 3], [0.0; 3]);
        c.drift_into(&s, &q, 1.0, &mut a);
        h.drift_into(&s, &q, 1.0, &mut b);
        for i in 0..3 {
            assert!((a[i] - b[i]).abs() < 1e-15);
        }
        assert!(!c.irreducibility_verified());
    }

    #[test]
    fn lambda_must_be_positive() {
        assert!(SiteModel::heisenberg(0.0).is_err());
        assert!(SiteModel::grushin(f64::NAN).is_err());
    }

    #[test]
    fn rational_coefficients_are_exact() {
        let m = heis();
        let third: BigRational = rat(1, 3);
        let f = v3(2).scale(&third);
        let g = m.generator_parts(&f).unwrap();
        assert_eq!(g.dilation.coeff(&[0, 0, 1]).to_f64(), 2.0 / 3.0);
    }
}
