//! Acceptance run: every criterion at its stated tolerance and budget, one
//! pass/fail line each. Runs without the libtest harness so the lines are
//! always printed.

use std::time::{Duration, Instant};

use hlattice::config::{
    ExperimentConfig, IntegratorConfig, LatticeConfig, ModelConfig, SuiteConfig, WeightConfig,
};
use hlattice::control::{girsanov_shift, solve_reachability, verify_control, ControlProblem};
use hlattice::diagnostics::coupling::{box_consistency, BoxConsistencyParams};
use hlattice::diagnostics::ergodic::{ergodic_decay, ErgodicParams};
use hlattice::diagnostics::lyapunov::{lyapunov_verify, LyapunovParams};
use hlattice::diagnostics::martingale::{martingale_residual, MartingaleParams, TestFunction};
use hlattice::diagnostics::moments::{kolmogorov_moment_check, KolmogorovParams};
use hlattice::diagnostics::product_tv::{product_tv_demo, ProductTvParams};
use hlattice::diagnostics::tightness::{invariant_tightness, TightnessParams};
use hlattice::diagnostics::{Outcome, Setup, Verdict};
use hlattice::geometry::{site_metric, SiteState, WeightScheme};
use hlattice::interactions::{BoundaryMode, InteractionConfig, InteractionSpec, ValidationBudget};
use hlattice::models::{
    hormander_rank, lie_bracket, CylindricalObservable, LambdaSchedule, PolyVectorField, SiteModel,
};
use hlattice::poly::{rat, RatPoly};
use hlattice::runner::{run, RunOptions};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Line {
    id: usize,
    ok: bool,
    detail: String,
    elapsed: Duration,
    budget: Duration,
}

fn heisenberg_setup(interacting: bool) -> Setup {
    let q = if interacting {
        InteractionSpec::tanh(1.0, 1, 1.0, 2, BoundaryMode::ZeroPad).unwrap()
    } else {
        InteractionSpec::zero(1, BoundaryMode::ZeroPad)
    };
    Setup::new(
        SiteModel::heisenberg(1.0).unwrap(),
        q,
        WeightScheme::default_for(1, 1),
        LambdaSchedule::Constant { value: 1.0 },
        1,
    )
}

fn describe(v: &Verdict) -> String {
    format!(
        "{}={} est={:.4e} band={:.2e}",
        v.claim, v.outcome, v.estimate, v.band
    )
}

fn c1_metric() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let draw = |rng: &mut ChaCha8Rng| {
        let s = 10f64.powf(rng.random_range(-3.0..3.0));
        SiteState::new(
            s * rng.random_range(-1.0..1.0),
            s * rng.random_range(-1.0..1.0),
            s * s * rng.random_range(-1.0..1.0),
        )
    };
    let mut violations = 0;
    let mut worst: f64 = f64::NEG_INFINITY;
    for _ in 0..100_000 {
        let (a, b, c) = (draw(&mut rng), draw(&mut rng), draw(&mut rng));
        let ac = site_metric(&a, &c).unwrap();
        let rhs = site_metric(&a, &b).unwrap() + site_metric(&b, &c).unwrap();
        let excess = ac - rhs;
        worst = worst.max(excess / rhs.max(f64::MIN_POSITIVE));
        if excess > 1e-12 * rhs {
            violations += 1;
        }
    }
    (
        violations == 0,
        format!("violations={violations} worst_relative_excess={worst:.3e}"),
    )
}

fn c2_brackets() -> (bool, String) {
    let h = SiteModel::heisenberg(1.0).unwrap();
    let xy = lie_bracket(&h.diffusion_fields()[0], &h.diffusion_fields()[1]).unwrap();
    let symbolic = xy == PolyVectorField::coordinate(3, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let pts: Vec<Vec<f64>> = (0..100)
        .map(|_| (0..3).map(|_| rng.random_range(-5.0..5.0)).collect())
        .collect();
    let rep = hormander_rank(&h, &pts, 2).unwrap();
    let g = SiteModel::grushin(1.0).unwrap();
    let axis = vec![vec![0.0, 0.7]];
    let g1 = hormander_rank(&g, &axis, 1).unwrap();
    let g2 = hormander_rank(&g, &axis, 2).unwrap();
    let ok = symbolic
        && rep.passed
        && rep.ranks.iter().all(|r| *r == 3)
        && g1.min_rank == 1
        && g2.min_rank == 2;
    (
        ok,
        format!(
            "[X,Y]=dz:{symbolic} heisenberg_min_rank={} grushin_x0 depth1={} depth2={}",
            rep.min_rank, g1.min_rank, g2.min_rank
        ),
    )
}

fn random_poly(rng: &mut ChaCha8Rng, nvars: usize) -> RatPoly {
    let terms: Vec<(Vec<u32>, _)> = (0..6)
        .map(|_| {
            // a cube or fourth power keeps the O(ε²) stencil error away from zero
            let mut e = vec![0u32; nvars];
            e[rng.random_range(0..nvars)] = rng.random_range(3..=4);
            if rng.random_bool(0.5) {
                e[rng.random_range(0..nvars)] += 1;
            }
            (e, rat(rng.random_range(-5..=5), rng.random_range(1..=4)))
        })
        .collect();
    let p = RatPoly::from_terms(nvars, terms);
    if p.is_zero() {
        RatPoly::var(nvars, 0).pow(3)
    } else {
        p
    }
}

fn c3_generator() -> (bool, String) {
    let setup = heisenberg_setup(true);
    let sys = setup.system(2).unwrap();
    let lat = sys.lattice();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let steps = [4e-2, 2e-2, 1e-2, 5e-3];
    let mut slopes = Vec::new();
    for _ in 0..20 {
        let c = rng.random_range(0..lat.len() - 1);
        let sites = vec![lat.site(c), lat.site(c + 1)];
        let poly = random_poly(&mut rng, 6);
        let f = CylindricalObservable::new(sites, poly.clone());
        let states: Vec<f64> = (0..sys.state_len())
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let exact = sys.apply_generator(&f, &states).unwrap();
        let fp = poly.to_f64_poly();
        let positions = [c, c + 1];
        let v0: Vec<f64> = positions
            .iter()
            .flat_map(|p| states[p * 3..p * 3 + 3].to_vec())
            .collect();
        let ev = |dv: &[(usize, f64)]| {
            let mut v = v0.clone();
            for (i, d) in dv {
                v[*i] += d;
            }
            fp.eval(&v)
        };
        let mut errs = Vec::new();
        for &e in &steps {
            let m = 6;
            let grad: Vec<f64> = (0..m)
                .map(|i| (ev(&[(i, e)]) - ev(&[(i, -e)])) / (2.0 * e))
                .collect();
            let mut hess = vec![0.0; m * m];
            for i in 0..m {
                for j in 0..m {
                    hess[i * m + j] = if i == j {
                        (ev(&[(i, e)]) - 2.0 * ev(&[]) + ev(&[(i, -e)])) / (e * e)
                    } else {
                        (ev(&[(i, e), (j, e)]) - ev(&[(i, e), (j, -e)]) - ev(&[(i, -e), (j, e)])
                            + ev(&[(i, -e), (j, -e)]))
                            / (4.0 * e * e)
                    };
                }
            }
            let fd = sys.generator_from_derivatives(&states, &positions, &grad, &hess);
            errs.push((fd - exact).abs());
        }
        let n = steps.len() as f64;
        let lx: Vec<f64> = steps.iter().map(|s| s.ln()).collect();
        let ly: Vec<f64> = errs.iter().map(|e| e.ln()).collect();
        let mx = lx.iter().sum::<f64>() / n;
        let my = ly.iter().sum::<f64>() / n;
        let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
        let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
        slopes.push(sxy / sxx);
    }
    let h = SiteModel::heisenberg(1.0).unwrap();
    let m = h.half_diffusion_matrix();
    let x = || RatPoly::var(3, 0);
    let y = || RatPoly::var(3, 1);
    let half = |p: RatPoly| p.scale(&rat(1, 2));
    let quarter = |p: RatPoly| p.scale(&rat(1, 4));
    let expected = [
        [RatPoly::one(3), RatPoly::zero(3), half(-&y())],
        [RatPoly::zero(3), RatPoly::one(3), half(x())],
        [
            half(-&y()),
            half(x()),
            quarter(&(&x() * &x()) + &(&y() * &y())),
        ],
    ];
    let matrix_ok = (0..3).all(|a| (0..3).all(|b| m[a][b] == expected[a][b]));
    let lo = slopes.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = slopes.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let ok = matrix_ok && slopes.iter().all(|s| (s - 2.0).abs() <= 0.3);
    (
        ok,
        format!("richardson slopes in [{lo:.3}, {hi:.3}] half_sigma_sigma_exact={matrix_ok}"),
    )
}

fn c4_lyapunov() -> (bool, String) {
    let setup = heisenberg_setup(true);
    let mut parts = Vec::new();
    let mut ok = true;
    for k in [1u32, 2] {
        let p = LyapunovParams {
            k,
            r_max: 1e3,
            boxes: vec![1, 2, 3],
            ..Default::default()
        };
        match lyapunov_verify(&setup, &p) {
            Ok(c) => {
                let n = c.shell_max.len();
                let outer = &c.shell_max[n - 3..];
                let decreasing = outer[0] > outer[1] && outer[1] > outer[2];
                let boxes = c.box_checks.iter().all(|b| b.worst_excess <= 0.0);
                let in_range = c.c_k > 0.0 && c.c_k < 4.0;
                ok &= decreasing && boxes && in_range;
                parts.push(format!(
                    "k={k}: c_k={:.4} C_k={:.4e} C_W={:.4e} outer_decreasing={decreasing} boxes_1_3={boxes}",
                    c.c_k, c.big_c_k, c.big_c_w
                ));
            }
            Err(e) => {
                ok = false;
                parts.push(format!("k={k}: {e}"));
            }
        }
    }
    (ok, parts.join("; "))
}

fn c5_control() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    let mut failures = 0;
    for _ in 0..1000 {
        let mut s = || {
            SiteState::new(
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
            )
        };
        let (a, b) = (s(), s());
        let t = rng.random_range(0.2..3.0);
        let lam = rng.random_range(0.1..3.0);
        let p = ControlProblem::new(a, b, t, lam).unwrap();
        match solve_reachability(&p) {
            Ok(u) => worst = worst.max(verify_control(&p, &u)),
            Err(_) => failures += 1,
        }
    }
    // σu = b − b̃ as a polynomial identity in (x, y, z, q_x, q_y): with
    // σ_k = √2 X_k and u_k = q_k/√2 the factors cancel, leaving Σ q_k X_k.
    let h = SiteModel::heisenberg(1.0).unwrap();
    let lift = |p: &RatPoly| p.embed(5, 0);
    let q = |k: usize| RatPoly::var(5, 3 + k);
    let symbolic = (0..3).all(|c| {
        let su = (0..2).fold(RatPoly::zero(5), |acc, k| {
            &acc + &(&lift(&h.diffusion_fields()[k].components()[c]) * &q(k))
        });
        let drift = (0..2).fold(RatPoly::zero(5), |acc, k| {
            &acc + &(&lift(&h.interaction_fields()[k].components()[c]) * &q(k))
        });
        su == drift
    });
    let mut numeric: f64 = 0.0;
    for _ in 0..100 {
        let st = [
            rng.random_range(-3.0..3.0),
            rng.random_range(-3.0..3.0),
            rng.random_range(-3.0..3.0),
        ];
        let qv = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        let u = girsanov_shift(&h, &st, &qv).unwrap();
        let sigma = h.dispersion_block(&st);
        for c in 0..3 {
            let su = sigma[c * 2] * u[0] + sigma[c * 2 + 1] * u[1];
            let b: f64 = (0..2)
                .map(|k| h.interaction_fields()[k].eval(&st)[c] * qv[k])
                .sum();
            numeric = numeric.max((su - b).abs());
        }
    }
    let ok = failures == 0 && worst <= 1e-6 && symbolic && numeric < 1e-12;
    (
        ok,
        format!("solved={} worst_endpoint_error={worst:.3e} symbolic_identity={symbolic} numeric_residual={numeric:.1e}", 1000 - failures),
    )
}

fn c6_kolmogorov() -> (bool, String) {
    let setup = heisenberg_setup(true);
    let p = KolmogorovParams::default();
    let out = kolmogorov_moment_check(&setup, &p, 1).unwrap();
    let v = &out.verdicts[0];
    let slopes: Vec<String> = [1, 2, 3]
        .iter()
        .map(|n| format!("n{n}={:.3}", v.metrics[&format!("slope_n{n}")]))
        .collect();
    (
        v.outcome == Outcome::Pass && v.estimate >= 1.7,
        format!(
            "{} slopes {} constant_ratio={:.3}",
            describe(v),
            slopes.join(" "),
            v.metrics["constant_ratio"]
        ),
    )
}

fn c7_box_consistency() -> (bool, String) {
    let free = box_consistency(
        &heisenberg_setup(false),
        &BoxConsistencyParams {
            replicas: 50,
            eps: vec![1e-2],
            ..Default::default()
        },
        1,
    )
    .unwrap();
    let fz = &free.verdicts[0];
    let p = BoxConsistencyParams {
        eps: vec![1e-2],
        ..Default::default()
    };
    let out = box_consistency(&heisenberg_setup(true), &p, 1).unwrap();
    let v = &out.verdicts[0];
    let curve: Vec<String> = out.curves[0]
        .rows
        .iter()
        .map(|r| format!("m{}={:.2e}", r[0], r[2]))
        .collect();
    let last = out.curves[0].rows.last().unwrap();
    let ok = fz.outcome == Outcome::Pass
        && fz.metrics["max_distance"] == 0.0
        && v.outcome == Outcome::Pass
        && last[0] == 6.0
        && last[2] < 1e-2;
    (
        ok,
        format!(
            "decoupled max={:e}; interacting {} [{}]",
            fz.metrics["max_distance"],
            describe(v),
            curve.join(" ")
        ),
    )
}

fn c8_ergodic() -> (bool, String) {
    let single = ergodic_decay(&heisenberg_setup(false), &ErgodicParams::default(), 1).unwrap();
    let s = &single.verdicts[0];
    let chain = ergodic_decay(
        &heisenberg_setup(true),
        &ErgodicParams {
            n: 1,
            ..Default::default()
        },
        1,
    )
    .unwrap();
    let c = &chain.verdicts[0];
    let ok = s.outcome == Outcome::Pass
        && (s.estimate - 1.0).abs() <= 0.15
        && c.outcome == Outcome::Pass
        && c.estimate > 0.0
        && c.metrics["r2_x"] >= 0.8;
    (
        ok,
        format!(
            "single rate={:.4} (lambda 1) r2={:.4}; chain rate={:.4} r2={:.4}",
            s.estimate, s.metrics["r2_x"], c.estimate, c.metrics["r2_x"]
        ),
    )
}

fn c9_martingale() -> (bool, String) {
    let lin = martingale_residual(
        &heisenberg_setup(false),
        &MartingaleParams {
            n: 0,
            function: TestFunction::Coordinate { coord: 0 },
            ..Default::default()
        },
        1,
    )
    .unwrap();
    let l = &lin.verdicts[0];
    let v1 = martingale_residual(&heisenberg_setup(true), &MartingaleParams::default(), 1).unwrap();
    let v = &v1.verdicts[0];
    let ok = l.outcome == Outcome::Pass
        && l.estimate.abs() <= 3.0 * l.metrics["se"]
        && v.outcome == Outcome::Pass;
    (
        ok,
        format!(
            "f=x residual={:.3e} se={:.3e}; f=V1 residual={:.3e} se={:.3e} C_disc*h={:.3e}",
            l.estimate,
            l.metrics["se"],
            v.estimate,
            v.metrics["se"],
            v.metrics["C_disc"] * v.metrics["h"]
        ),
    )
}

fn c10_tightness() -> (bool, String) {
    let out = invariant_tightness(&heisenberg_setup(true), &TightnessParams::default()).unwrap();
    let ok = out.verdicts.iter().all(|v| v.outcome == Outcome::Pass);
    let rows: Vec<String> = out.curves[0]
        .rows
        .iter()
        .map(|r| {
            format!(
                "n{}: mean={:.3e} se={:.3e} occ={:?}",
                r[0],
                r[1],
                r[2],
                &r[4..]
            )
        })
        .collect();
    (
        ok,
        format!(
            "{} | {} | {}",
            describe(&out.verdicts[0]),
            describe(&out.verdicts[1]),
            rows.join("; ")
        ),
    )
}

fn c11_product_tv() -> (bool, String) {
    let out = product_tv_demo(&ProductTvParams::default()).unwrap();
    let v = &out.verdicts[0];
    (v.outcome == Outcome::Pass && v.estimate > 0.9, describe(v))
}

fn determinism_config() -> ExperimentConfig {
    let small = |name: &str| SuiteConfig::default_for(name).unwrap();
    let mut suites = Vec::new();
    for s in hlattice::registry::CLAIMS {
        let mut c = small(s.suite);
        match &mut c {
            SuiteConfig::Lyapunov(p) => {
                p.shells = 12;
                p.directions = 32;
                p.box_samples = 100;
            }
            SuiteConfig::Kolmogorov(p) => p.replicas = 40,
            SuiteConfig::TailMass(p) => p.replicas = 20,
            SuiteConfig::BoxConsistency(p) => {
                p.replicas = 10;
                p.boxes = vec![1, 2];
                p.t = 0.2;
            }
            SuiteConfig::IcContinuity(p) => {
                p.replicas = 10;
                p.t = 0.2;
            }
            SuiteConfig::Ergodic(p) => p.replicas = 20,
            SuiteConfig::Martingale(p) => {
                p.replicas = 20;
                p.t = 0.2;
            }
            SuiteConfig::Tightness(p) => {
                p.burn_in = 1.0;
                p.horizon = 2.0;
                p.certificate.shells = 12;
                p.certificate.directions = 32;
                p.certificate.box_samples = 100;
            }
            SuiteConfig::ProductTv(p) => {
                p.replicas = 200;
                p.pilot = 2000;
                p.ns = vec![1, 10];
            }
        }
        suites.push(c);
    }
    ExperimentConfig {
        name: "determinism".into(),
        model: ModelConfig {
            name: "heisenberg".into(),
            custom: None,
            lambda: LambdaSchedule::Constant { value: 1.0 },
        },
        interaction: InteractionConfig {
            family: "tanh".into(),
            c: 1.0,
            r: 1,
            gain: 1.0,
            boundary: BoundaryMode::ZeroPad,
        },
        weights: WeightConfig::Factorial {
            delta: 0.5,
            k: 1.0,
            horizon: 50,
        },
        lattice: LatticeConfig {
            d: 1,
            boxes: vec![1, 2, 3],
        },
        integrator: IntegratorConfig {
            h: 1e-3,
            t: 1.0,
            stride: 10,
        },
        seed: 2024,
        validation: ValidationBudget {
            patches: 5000,
            ..Default::default()
        },
        diagnostics: suites,
    }
}

fn c12_determinism() -> (bool, String) {
    let cfg = determinism_config();
    let go = |workers: usize| {
        run(
            &cfg,
            &RunOptions {
                workers,
                ..Default::default()
            },
        )
        .unwrap()
        .verdict_lines()
    };
    let a = go(1);
    let b = go(1);
    let c = go(3);
    let suites = a.lines().count();
    (
        a == b && a == c && suites >= 9,
        format!(
            "{suites} verdict records; rerun identical={} workers 1 vs 3 identical={}",
            a == b,
            a == c
        ),
    )
}

fn main() {
    type Criterion = fn() -> (bool, String);
    let criteria: [(usize, &str, Criterion, u64); 12] = [
        (1, "metric triangle inequality", c1_metric, 10),
        (2, "brackets and Hormander rank", c2_brackets, 5),
        (3, "generator oracle", c3_generator, 30),
        (4, "Lyapunov certificate", c4_lyapunov, 60),
        (5, "control reachability", c5_control, 30),
        (6, "Kolmogorov scaling", c6_kolmogorov, 600),
        (7, "box consistency", c7_box_consistency, 600),
        (8, "ergodic decay", c8_ergodic, 300),
        (9, "martingale residual", c9_martingale, 300),
        (10, "invariant tightness", c10_tightness, 600),
        (11, "product TV", c11_product_tv, 60),
        (12, "determinism", c12_determinism, 600),
    ];
    let filter: Vec<usize> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let mut lines = Vec::new();
    for (id, name, f, budget) in criteria {
        if !filter.is_empty() && !filter.contains(&id) {
            continue;
        }
        let t0 = Instant::now();
        let (ok, detail) = f();
        let line = Line {
            id,
            ok,
            detail: format!("{name}: {detail}"),
            elapsed: t0.elapsed(),
            budget: Duration::from_secs(budget),
        };
        let within = line.elapsed <= line.budget;
        println!(
            "criterion {:>2}: {} ({:.1}s of {}s) {}",
            line.id,
            if line.ok && within { "PASS" } else { "FAIL" },
            line.elapsed.as_secs_f64(),
            budget,
            line.detail
        );
        lines.push((line.ok && within, line));
    }
    let failed: Vec<usize> = lines
        .iter()
        .filter(|(ok, _)| !ok)
        .map(|(_, l)| l.id)
        .collect();
    if failed.is_empty() {
        println!("acceptance: all {} criteria passed", lines.len());
    } else {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}
