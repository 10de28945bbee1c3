//! Euler–Maruyama integration of box systems with counter-based noise.
//!
//! Every (replica, absolute site index, noise coordinate) owns a ChaCha8
//! stream; step `k` of that stream is a fixed position in it. Two systems
//! on different boxes that share a seed and replica therefore see the same
//! Brownian increments at every common site, which is the synchronous
//! coupling used by the consistency and continuity experiments.

use std::borrow::Borrow;
use std::io::Write;
use std::path::Path;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::{homogeneous_norm8, BoxLattice, SiteIndex, SiteState};
use crate::models::SdeSystem;

/// Reproducible noise: master seed, step size and horizon.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoisePlan {
    pub seed: u64,
    pub h: f64,
    pub horizon: f64,
    /// Multiplies every increment; `0` gives the deterministic flow.
    #[serde(default = "unit")]
    pub noise_scale: f64,
}

fn unit() -> f64 {
    1.0
}

impl NoisePlan {
    pub fn new(seed: u64, h: f64, horizon: f64) -> Result<Self> {
        let p = NoisePlan {
            seed,
            h,
            horizon,
            noise_scale: 1.0,
        };
        p.steps()?;
        Ok(p)
    }

    pub fn deterministic(mut self) -> Self {
        self.noise_scale = 0.0;
        self
    }

    /// Number of steps covering the horizon; the horizon must be a whole
    /// number of steps up to rounding.
    pub fn steps(&self) -> Result<u64> {
        if !(self.h > 0.0 && self.h.is_finite()) {
            return Err(invalid(format!(
                "step size h = {} must be positive",
                self.h
            )));
        }
        if !(self.horizon >= 0.0 && self.horizon.is_finite()) {
            return Err(invalid(format!(
                "horizon T = {} must be nonnegative",
                self.horizon
            )));
        }
        let n = (self.horizon / self.h).round();
        if (n * self.h - self.horizon).abs() > 1e-9 * self.horizon.max(1.0) {
            return Err(invalid(format!(
                "horizon {} is not a multiple of h = {}",
                self.horizon, self.h
            )));
        }
        Ok(n as u64)
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stream identity of one scalar noise coordinate.
pub fn stream_id(replica: u64, site: &SiteIndex, coord: usize) -> u64 {
    let mut h = splitmix(replica);
    for c in site {
        h = splitmix(h ^ (*c as i64 as u64));
    }
    splitmix(h ^ coord as u64)
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

#[inline]
fn normal_from(a: u64, b: u64) -> f64 {
    let u1 = ((a >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64);
    let u2 = (b >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Box–Muller standard normal from two words of `rng`.
pub fn standard_normal(rng: &mut impl RngCore) -> f64 {
    let a = rng.next_u64();
    let b = rng.next_u64();
    normal_from(a, b)
}

/// Standard normal used at `step` of one stream, by random access.
pub fn noise_at(seed: u64, replica: u64, site: &SiteIndex, coord: usize, step: u64) -> f64 {
    let mut rng = stream(seed, stream_id(replica, site, coord));
    rng.set_word_pos(4 * step as u128);
    let a = rng.next_u64();
    let b = rng.next_u64();
    normal_from(a, b)
}

/// Sequential reader of all noise streams of one box.
#[derive(Clone, Debug)]
pub struct NoiseSource {
    streams: Vec<ChaCha8Rng>,
}

impl NoiseSource {
    pub fn new(seed: u64, replica: u64, lattice: &BoxLattice, noise_dim: usize) -> Self {
        let mut streams = Vec::with_capacity(lattice.len() * noise_dim);
        for s in lattice.sites() {
            for c in 0..noise_dim {
                streams.push(stream(seed, stream_id(replica, s, c)));
            }
        }
        NoiseSource { streams }
    }

    pub fn fill(&mut self, out: &mut [f64]) {
        for (o, r) in out.iter_mut().zip(self.streams.iter_mut()) {
            let a = r.next_u64();
            let b = r.next_u64();
            *o = normal_from(a, b);
        }
    }
}

/// One Euler–Maruyama step `a' = a + b(a)h + σ(a)√h ξ`. Returns `false`
/// when the result is non-finite or leaves the model's state guard.
pub fn em_step(sys: &SdeSystem, states: &[f64], xi: &[f64], h: f64, out: &mut [f64]) -> bool {
    let d = sys.dim();
    let nd = sys.noise_dim();
    let model = sys.model();
    let sq = h.sqrt();
    let guard = model.state_guard();
    let mut ok = true;
    let mut b = [0.0; 3];
    for i in 0..sys.n_sites() {
        let s = &states[i * d..(i + 1) * d];
        sys.drift_site(states, i, &mut b);
        let o = &mut out[i * d..(i + 1) * d];
        for c in 0..d {
            o[c] = s[c] + h * b[c];
        }
        model.add_dispersion(s, &xi[i * nd..(i + 1) * nd], sq, o);
        for v in o.iter() {
            if !v.is_finite() {
                ok = false;
            }
        }
        if let Some(g) = guard {
            if o.iter().map(|v| v * v).sum::<f64>() > g * g {
                ok = false;
            }
        }
    }
    ok
}

/// Step-by-step driver of one replica.
#[derive(Clone, Debug)]
pub struct Stepper<S> {
    sys: S,
    h: f64,
    scale: f64,
    noise: NoiseSource,
    cur: Vec<f64>,
    next: Vec<f64>,
    xi: Vec<f64>,
    step: u64,
    blown: Option<f64>,
}

impl<S: Borrow<SdeSystem>> Stepper<S> {
    /// `sys` may be a reference or an owning pointer such as `Arc<SdeSystem>`.
    pub fn new(sys: S, init: &[f64], plan: &NoisePlan, replica: u64) -> Result<Self> {
        let noise = {
            let sys = sys.borrow();
            if init.len() != sys.state_len() {
                return Err(Error::DimensionMismatch {
                    expected: sys.state_len(),
                    got: init.len(),
                });
            }
            if init.iter().any(|v| !v.is_finite()) {
                return Err(invalid("initial configuration has non-finite entries"));
            }
            plan.steps()?;
            NoiseSource::new(plan.seed, replica, sys.lattice(), sys.noise_dim())
        };
        let xi_len = sys.borrow().n_sites() * sys.borrow().noise_dim();
        Ok(Stepper {
            sys,
            h: plan.h,
            scale: plan.noise_scale,
            noise,
            cur: init.to_vec(),
            next: vec![0.0; init.len()],
            xi: vec![0.0; xi_len],
            step: 0,
            blown: None,
        })
    }

    pub fn state(&self) -> &[f64] {
        &self.cur
    }
    pub fn time(&self) -> f64 {
        self.step as f64 * self.h
    }
    pub fn steps_taken(&self) -> u64 {
        self.step
    }
    pub fn h(&self) -> f64 {
        self.h
    }
    pub fn blown_up(&self) -> Option<f64> {
        self.blown
    }
    /// Gaussian vector used by the last step.
    pub fn last_noise(&self) -> &[f64] {
        &self.xi
    }

    /// Advances one step; returns `false` (and freezes) on blow-up.
    pub fn step(&mut self) -> bool {
        if self.blown.is_some() {
            return false;
        }
        self.noise.fill(&mut self.xi);
        if self.scale != 1.0 {
            let s = self.scale;
            self.xi.iter_mut().for_each(|v| *v *= s);
        }
        let ok = em_step(
            self.sys.borrow(),
            &self.cur,
            &self.xi,
            self.h,
            &mut self.next,
        );
        self.step += 1;
        if !ok {
            self.blown = Some(self.time());
            return false;
        }
        std::mem::swap(&mut self.cur, &mut self.next);
        true
    }

    pub fn advance(&mut self, steps: u64) -> bool {
        for _ in 0..steps {
            if !self.step() {
                return false;
            }
        }
        true
    }
}

/// Functional recorded along a trajectory.
#[derive(Clone, Debug)]
pub enum Observable {
    /// `‖a‖_S^8` with the given per-position weights.
    SNorm8(Vec<f64>),
    /// `‖a_i‖_H^8` at a box position.
    SiteNorm8(usize),
    /// One coordinate at a box position.
    Coord(usize, usize),
}

impl Observable {
    pub fn name(&self) -> String {
        match self {
            Observable::SNorm8(_) => "s_norm8".into(),
            Observable::SiteNorm8(p) => format!("site_norm8[{p}]"),
            Observable::Coord(p, c) => format!("coord[{p}].{}", ["x", "y", "z"][*c]),
        }
    }

    pub fn eval(&self, states: &[f64], dim: usize) -> f64 {
        let site = |p: usize| SiteState::from_slice(&states[p * dim..(p + 1) * dim]);
        match self {
            Observable::SNorm8(u) => (0..u.len())
                .map(|p| homogeneous_norm8(&site(p)) * u[p])
                .sum(),
            Observable::SiteNorm8(p) => homogeneous_norm8(&site(*p)),
            Observable::Coord(p, c) => states[p * dim + c],
        }
    }
}

/// What [`simulate`] keeps.
#[derive(Clone, Debug, Default)]
pub struct RecorderSpec {
    pub stride: u64,
    pub observables: Vec<Observable>,
    pub full_configs: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub names: Vec<String>,
    /// `values[t][k]`: observable `k` at record `t`.
    pub values: Vec<Vec<f64>>,
    pub configs: Vec<Vec<f64>>,
    pub blow_up: Option<f64>,
}

pub fn simulate(
    sys: &SdeSystem,
    init: &[f64],
    plan: &NoisePlan,
    replica: u64,
    rec: &RecorderSpec,
) -> Result<Trajectory> {
    let steps = plan.steps()?;
    let stride = rec.stride.max(1);
    let mut st = Stepper::new(sys, init, plan, replica)?;
    let mut tr = Trajectory {
        names: rec.observables.iter().map(|o| o.name()).collect(),
        ..Default::default()
    };
    let d = sys.dim();
    let record = |st: &Stepper<&SdeSystem>, tr: &mut Trajectory| {
        tr.times.push(st.time());
        tr.values.push(
            rec.observables
                .iter()
                .map(|o| o.eval(st.state(), d))
                .collect(),
        );
        if rec.full_configs {
            tr.configs.push(st.state().to_vec());
        }
    };
    record(&st, &mut tr);
    for k in 1..=steps {
        if !st.step() {
            tr.blow_up = st.blown_up();
            break;
        }
        if k % stride == 0 || k == steps {
            record(&st, &mut tr);
        }
    }
    Ok(tr)
}

/// Squared Euclidean distance of two configurations restricted to common
/// sites.
pub fn restricted_distance2(a: &[f64], pa: &[usize], b: &[f64], pb: &[usize], dim: usize) -> f64 {
    let mut s = 0.0;
    for (&i, &j) in pa.iter().zip(pb) {
        for c in 0..dim {
            let t = a[i * dim + c] - b[j * dim + c];
            s += t * t;
        }
    }
    s
}

/// Outcome of a synchronously coupled pair of runs.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CoupledTrajectory {
    pub times: Vec<f64>,
    /// Squared distance on the observed sub-box at each record.
    pub distance2: Vec<f64>,
    pub sup_distance2: f64,
    pub blow_up: Option<f64>,
}

/// Positions in `lattice` of the sub-box `Π_k` of another lattice, in the
/// same site order.
pub fn shared_positions(lattice: &BoxLattice, sites: &[SiteIndex]) -> Result<Vec<usize>> {
    sites
        .iter()
        .map(|s| {
            lattice
                .position(s)
                .ok_or_else(|| Error::IncompatibleGeometry(format!("site {s:?} not in both boxes")))
        })
        .collect()
}

/// Runs two systems with identical noise keyed by absolute site index and
/// records the squared distance on the sub-box `Π_k` (`k` in units of the
/// smaller box's shells).
pub fn couple(
    sys_a: &SdeSystem,
    init_a: &[f64],
    sys_b: &SdeSystem,
    init_b: &[f64],
    plan: &NoisePlan,
    replica: u64,
    k: usize,
    stride: u64,
) -> Result<CoupledTrajectory> {
    let (la, lb) = (sys_a.lattice(), sys_b.lattice());
    if la.d() != lb.d() || la.r() != lb.r() || sys_a.dim() != sys_b.dim() {
        return Err(Error::IncompatibleGeometry(
            "coupled systems need the same d, r and site model".into(),
        ));
    }
    if k > la.n().min(lb.n()) {
        return Err(Error::IncompatibleGeometry(format!(
            "sub-box {k} exceeds the smaller box {}",
            la.n().min(lb.n())
        )));
    }
    let pa = la.sub_box_positions(k);
    let sites: Vec<SiteIndex> = pa.iter().map(|&p| la.site(p)).collect();
    let pb = shared_positions(lb, &sites)?;
    let steps = plan.steps()?;
    let stride = stride.max(1);
    let mut a = Stepper::new(sys_a, init_a, plan, replica)?;
    let mut b = Stepper::new(sys_b, init_b, plan, replica)?;
    let d = sys_a.dim();
    let mut out = CoupledTrajectory::default();
    let mut sup: f64 = restricted_distance2(a.state(), &pa, b.state(), &pb, d);
    out.times.push(0.0);
    out.distance2.push(sup);
    for s in 1..=steps {
        let ok = a.step() & b.step();
        if !ok {
            out.blow_up = a.blown_up().or(b.blown_up());
            break;
        }
        let dist = restricted_distance2(a.state(), &pa, b.state(), &pb, d);
        sup = sup.max(dist);
        if s % stride == 0 || s == steps {
            out.times.push(a.time());
            out.distance2.push(dist);
        }
    }
    out.sup_distance2 = sup;
    Ok(out)
}

/// Runs `f(replica)` for `0..n` on `workers` threads and returns the
/// results in replica order.
pub fn run_replicas<T, F>(n: u64, workers: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64) -> T + Sync + Send,
{
    if workers <= 1 {
        return (0..n).map(&f).collect();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
        Ok(pool) => pool.install(|| (0..n).into_par_iter().map(&f).collect()),
        Err(_) => (0..n).map(&f).collect(),
    }
}

/// Sidecar record written next to trajectory CSV files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMeta {
    pub seed: u64,
    pub h: f64,
    pub horizon: f64,
    pub replica: u64,
    pub d: usize,
    pub r: usize,
    pub n: usize,
    pub model: String,
    pub interaction: String,
    pub weights_hash: String,
    pub blow_up: Option<f64>,
}

/// Writes `time,observable,value` rows and a `.meta.json` sidecar.
pub fn export_trajectory(tr: &Trajectory, meta: &TrajectoryMeta, csv_path: &Path) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(csv_path)?);
    writeln!(f, "time,observable,value")?;
    for (t, row) in tr.times.iter().zip(&tr.values) {
        for (name, v) in tr.names.iter().zip(row) {
            writeln!(f, "{t},{name},{v}")?;
        }
    }
    f.flush()?;
    let meta_path = csv_path.with_extension("meta.json");
    std::fs::write(meta_path, serde_json::to_string_pretty(meta)?)?;
    Ok(())
}
