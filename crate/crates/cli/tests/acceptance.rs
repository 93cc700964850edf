//! Acceptance criteria 1 to 9. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any fails.

use std::f64::consts::{FRAC_2_PI, PI};
use std::fs;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use ndarray::{Array1, Array2, ArrayView1};
use pwfkit::constraints::{project_l1_ball, ConstraintSet, SetKind};
use pwfkit::geometry::{polar_project_l1_descent, statistical_dimension_mc, ConeModel};
use pwfkit::lemma_lab::{
    check_fourth_moment, check_projection_contraction, check_s_properties, closed_form_abs_moment,
    compute_bm, mc_abs_moment, required_m_mixed,
};
use pwfkit::model::{
    gen_structured_signal, grad_amplitude, grad_intensity, MeasurementSet, Structure,
};
use pwfkit::rng::{derive_seed, normal_matrix, normal_vec, rng_from_seed, unit_sphere, SeededRng};
use pwfkit::solver::{init_oracle, pwf_run, SolverConfig};
use rand::Rng;

type Outcome = (bool, String);
type Criterion = (fn() -> Outcome, Option<Duration>);

fn norm(v: ArrayView1<f64>) -> f64 {
    v.dot(&v).sqrt()
}

fn dist(z: ArrayView1<f64>, x: ArrayView1<f64>) -> f64 {
    norm((&z - &x).view()).min(norm((&z + &x).view()))
}

fn m0(n: usize, s: usize) -> f64 {
    2.0 * s as f64 * (n as f64 / s as f64).ln()
}

// 1. Gradients against central differences of independently written losses.

fn loss_i(a: &Array2<f64>, y: &Array1<f64>, z: &Array1<f64>) -> f64 {
    let m = a.nrows() as f64;
    a.rows()
        .into_iter()
        .zip(y)
        .map(|(r, yr)| (yr - r.dot(z).powi(2)).powi(2))
        .sum::<f64>()
        / (4.0 * m)
}

fn loss_a(a: &Array2<f64>, y: &Array1<f64>, z: &Array1<f64>) -> f64 {
    let m = a.nrows() as f64;
    a.rows()
        .into_iter()
        .zip(y)
        .map(|(r, yr)| (yr.sqrt() - r.dot(z).abs()).powi(2))
        .sum::<f64>()
        / (2.0 * m)
}

fn central_diff(f: impl Fn(&Array1<f64>) -> f64, z: &Array1<f64>) -> Array1<f64> {
    let h = 1e-6;
    Array1::from_shape_fn(z.len(), |i| {
        let (mut p, mut q) = (z.clone(), z.clone());
        p[i] += h;
        q[i] -= h;
        (f(&p) - f(&q)) / (2.0 * h)
    })
}

fn criterion_1() -> Outcome {
    let mut rng = rng_from_seed(101);
    let mut worst: f64 = 0.0;
    let mut instances = 0;
    while instances < 100 {
        let n = rng.random_range(1..=10);
        let m = rng.random_range(1..=20);
        let a = normal_matrix(&mut rng, m, n);
        let x = normal_vec(&mut rng, n);
        let y = a.dot(&x).mapv(|t| t * t);
        let z = normal_vec(&mut rng, n);
        // amplitude loss is smooth only away from a_r . z = 0
        if a.dot(&z).iter().any(|t| t.abs() < 0.05) {
            continue;
        }
        instances += 1;
        let gi = grad_intensity(a.view(), y.view(), z.view()).unwrap();
        let ga = grad_amplitude(a.view(), y.view(), z.view()).unwrap();
        for (g, fd) in [
            (gi, central_diff(|z| loss_i(&a, &y, z), &z)),
            (ga, central_diff(|z| loss_a(&a, &y, z), &z)),
        ] {
            let err = norm((&g - &fd).view()) / norm(fd.view()).max(1e-8);
            worst = worst.max(err);
        }
    }
    (
        worst <= 1e-4,
        format!("worst relative error {worst:.2e} over {instances} instances"),
    )
}

// 2. Projections against exhaustive search.

fn brute_top_k(v: &Array1<f64>, k: usize) -> Array1<f64> {
    let n = v.len();
    let mut best = (f64::NEG_INFINITY, 0u32);
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize != k {
            continue;
        }
        let kept: f64 = (0..n)
            .filter(|i| mask >> i & 1 == 1)
            .map(|i| v[i] * v[i])
            .sum();
        if kept > best.0 {
            best = (kept, mask);
        }
    }
    Array1::from_shape_fn(n, |i| if best.1 >> i & 1 == 1 { v[i] } else { 0.0 })
}

fn brute_discrete(v: &Array1<f64>, alphabet: &[f64]) -> Array1<f64> {
    let n = v.len();
    let q = alphabet.len();
    let mut best = (f64::INFINITY, Array1::zeros(n));
    for code in 0..q.pow(n as u32) {
        let z = Array1::from_shape_fn(n, |i| alphabet[code / q.pow(i as u32) % q]);
        let d = norm((&z - v).view());
        if d < best.0 {
            best = (d, z);
        }
    }
    best.1
}

/// Nearest point over every face of the l1 ball: for each sign pattern the
/// projection onto the face's affine hull, kept when it lies on the face.
fn brute_l1_ball(v: &Array1<f64>, r: f64) -> Array1<f64> {
    let n = v.len();
    if v.iter().map(|t| t.abs()).sum::<f64>() <= r {
        return v.clone();
    }
    let mut best = (f64::INFINITY, Array1::zeros(n));
    for code in 0..3usize.pow(n as u32) {
        let sigma: Vec<f64> = (0..n)
            .map(|i| (code / 3usize.pow(i as u32) % 3) as f64 - 1.0)
            .collect();
        let support = sigma.iter().filter(|s| **s != 0.0).count() as f64;
        if support == 0.0 {
            continue;
        }
        let t = (sigma.iter().zip(v).map(|(s, vi)| s * vi).sum::<f64>() - r) / support;
        let z = Array1::from_shape_fn(n, |i| {
            if sigma[i] == 0.0 {
                0.0
            } else {
                v[i] - t * sigma[i]
            }
        });
        if (0..n).any(|i| sigma[i] != 0.0 && z[i] * sigma[i] < 0.0) {
            continue;
        }
        let d = norm((&z - v).view());
        if d < best.0 {
            best = (d, z);
        }
    }
    best.1
}

fn criterion_2() -> Outcome {
    let mut rng = rng_from_seed(202);
    let mut worst: [f64; 3] = [0.0; 3];
    let alphabet = [-1.0, 0.0, 0.5, 2.0];
    for _ in 0..500 {
        let n = rng.random_range(1..=6);
        let v = normal_vec(&mut rng, n) * 2.0;
        let r = rng.random_range(0.1..4.0);
        let k = rng.random_range(0..=n);
        let pairs = [
            (project_l1_ball(v.view(), r), brute_l1_ball(&v, r)),
            (
                ConstraintSet::new(SetKind::TopK { k }, n)
                    .unwrap()
                    .project(v.view())
                    .unwrap(),
                brute_top_k(&v, k),
            ),
            (
                ConstraintSet::new(
                    SetKind::Discrete {
                        alphabet: alphabet.to_vec(),
                    },
                    n,
                )
                .unwrap()
                .project(v.view())
                .unwrap(),
                brute_discrete(&v, &alphabet),
            ),
        ];
        for (slot, (got, want)) in pairs.into_iter().enumerate() {
            let err = (&got - &want)
                .iter()
                .fold(0.0f64, |acc, t| acc.max(t.abs()));
            worst[slot] = worst[slot].max(err);
        }
    }
    let ok = worst.iter().all(|w| *w <= 1e-8);
    (
        ok,
        format!(
            "max abs error l1_ball {:.1e}, top_k {:.1e}, discrete {:.1e}; 500 instances each",
            worst[0], worst[1], worst[2]
        ),
    )
}

// 3 and 4. Amplitude PWF with top_k.

struct RunResult {
    final_dist_rel: f64,
    iterations: usize,
    /// Distance to the truth at tau = 0, 1, 2, ...
    dists: Vec<f64>,
}

fn recovery(
    variant_cfg: &SolverConfig,
    set_of: impl Fn(&Array1<f64>) -> ConstraintSet,
    n: usize,
    s: usize,
    m: usize,
    rho: f64,
    seed: u64,
) -> RunResult {
    let x = gen_structured_signal(&Structure::Sparse { s }, n, derive_seed(seed, 0))
        .unwrap()
        .values;
    let meas = MeasurementSet::synthesize(x.view(), m, derive_seed(seed, 1)).unwrap();
    let z0 = init_oracle(x.view(), rho, derive_seed(seed, 2)).unwrap();
    let set = set_of(&x);
    let trace = pwf_run(&meas, &set, variant_cfg, z0.view(), Some(x.view())).unwrap();
    let x_norm = norm(x.view());
    RunResult {
        final_dist_rel: dist(trace.final_z.view(), x.view()) / x_norm,
        iterations: trace.iterations_used,
        dists: trace.records.iter().map(|r| r.dist.unwrap()).collect(),
    }
}

fn nonincreasing(d: &[f64]) -> bool {
    d.windows(2).all(|w| w[1] <= w[0])
}

fn amplitude_top_k(n: usize, s: usize, m: usize, seed: u64) -> RunResult {
    let mut cfg = SolverConfig::amplitude();
    cfg.max_iters = 200;
    cfg.tol_rel = 1e-5;
    recovery(
        &cfg,
        |_| ConstraintSet::new(SetKind::TopK { k: s }, n).unwrap(),
        n,
        s,
        m,
        1.0 / 15.0,
        seed,
    )
}

fn criterion_3() -> Outcome {
    let (n, s) = (128, 4);
    let m = 4 * m0(n, s).ceil() as usize;
    let mut successes = 0;
    let mut non_monotone = 0;
    for t in 0..50 {
        let r = amplitude_top_k(n, s, m, derive_seed(303, t));
        if r.final_dist_rel <= 1e-5 && r.iterations <= 200 {
            successes += 1;
            if !nonincreasing(&r.dists[1..]) {
                non_monotone += 1;
            }
        }
    }
    let ok = successes >= 45 && non_monotone == 0;
    (ok, format!("m = {m}: {successes}/50 reached 1e-5, {non_monotone} successful runs not monotone after tau = 1"))
}

fn criterion_4() -> Outcome {
    let n = 256;
    let trials = 25;
    let mut ok = true;
    let mut parts = Vec::new();
    for (i, s) in [2, 4, 8, 16].into_iter().enumerate() {
        let m = (6.0 * m0(n, s)).ceil() as usize;
        let successes = (0..trials)
            .filter(|t| {
                amplitude_top_k(n, s, m, derive_seed(derive_seed(404, i as u64), *t)).final_dist_rel
                    <= 1e-5
            })
            .count();
        ok &= successes as f64 >= 0.8 * trials as f64;
        parts.push(format!("s={s} m={m} {successes}/{trials}"));
    }
    (ok, parts.join(", "))
}

// 5. Intensity PWF with the l1 ball.

fn criterion_5() -> Outcome {
    let (n, s) = (64, 4);
    let m = (8.0 * m0(n, s) * (n as f64).ln()).ceil() as usize;
    let mut cfg = SolverConfig::intensity(n);
    cfg.mu = 0.1 / n as f64;
    cfg.max_iters = 5000;
    cfg.tol_rel = 1e-3;
    let mut good = 0;
    let mut worst_iters = 0;
    for t in 0..20 {
        let r = recovery(
            &cfg,
            |x| {
                ConstraintSet::new(
                    SetKind::L1Ball {
                        radius: x.iter().map(|v| v.abs()).sum(),
                    },
                    n,
                )
                .unwrap()
            },
            n,
            s,
            m,
            1.0 / 8.0,
            derive_seed(505, t),
        );
        worst_iters = worst_iters.max(r.iterations);
        if r.final_dist_rel <= 1e-3 && r.iterations <= 5000 && nonincreasing(&r.dists) {
            good += 1;
        }
    }
    (
        good >= 18,
        format!("m = {m}: {good}/20 monotone and within 1e-3, at most {worst_iters} iterations"),
    )
}

// 6. Absolute moment.

fn abs_moment_oracle(u: &Array1<f64>, v: &Array1<f64>) -> f64 {
    let (nu, nv) = (norm(u.view()), norm(v.view()));
    let c = (u.dot(v) / (nu * nv)).clamp(-1.0, 1.0);
    FRAC_2_PI * nu * nv * ((1.0 - c * c).sqrt() + c * c.asin())
}

fn criterion_6() -> Outcome {
    let mut rng = rng_from_seed(606);
    let mut agree = 0;
    let mut closed_err: f64 = 0.0;
    for k in 0..20 {
        let n = rng.random_range(2..=8);
        let u = normal_vec(&mut rng, n);
        let v = normal_vec(&mut rng, n);
        let exact = abs_moment_oracle(&u, &v);
        closed_err =
            closed_err.max((closed_form_abs_moment(u.view(), v.view()).unwrap() - exact).abs());
        let (mean, se) = mc_abs_moment(u.view(), v.view(), 100_000, derive_seed(606, k)).unwrap();
        if (mean - exact).abs() <= 4.0 * se {
            agree += 1;
        }
    }
    let e1 = Array1::from(vec![1.0, 0.0, 0.0]);
    let e2 = Array1::from(vec![0.0, 1.0, 0.0]);
    let at_zero = closed_form_abs_moment(e1.view(), e1.view()).unwrap();
    let at_right = closed_form_abs_moment(e1.view(), e2.view()).unwrap();
    let anchors = (at_zero - 1.0).abs() <= 1e-12 && (at_right - 2.0 / PI).abs() <= 1e-12;
    let ok = agree >= 19 && anchors && closed_err <= 1e-12;
    (ok, format!("{agree}/20 within 4 stderr, closed form error {closed_err:.1e}, anchors {at_zero} and {at_right}"))
}

// 7. Cone statistics and Moreau decomposition.

/// `h` lies in the l1 descent cone at signs `sg`: `sum_S sg_i h_i + sum_{not S} |h_i| <= 0`.
fn in_descent_cone(sg: &[i8], h: &Array1<f64>, tol: f64) -> bool {
    let d: f64 = sg
        .iter()
        .zip(h)
        .map(|(s, v)| if *s == 0 { v.abs() } else { *s as f64 * v })
        .sum();
    d <= tol
}

/// `w = t g` with `g_S = signs`, `|g_i| <= 1` off the support, `t >= 0`.
fn in_polar(sg: &[i8], w: &Array1<f64>, tol: f64) -> bool {
    let on: Vec<f64> = sg
        .iter()
        .zip(w)
        .filter(|(s, _)| **s != 0)
        .map(|(s, v)| *s as f64 * v)
        .collect();
    let t = on.iter().sum::<f64>() / on.len() as f64;
    t >= -tol
        && on.iter().all(|v| (v - t).abs() <= tol)
        && sg.iter().zip(w).all(|(s, v)| *s != 0 || v.abs() <= t + tol)
}

fn criterion_7() -> Outcome {
    let sub =
        statistical_dimension_mc(&ConeModel::coordinate_subspace(20, 7).unwrap(), 20_000, 707)
            .unwrap();
    let orth = statistical_dimension_mc(&ConeModel::nonneg_orthant(64), 20_000, 708).unwrap();
    let sub_ok = (sub.mean_sq - 7.0).abs() <= 3.0 * sub.stderr;
    let orth_ok = (orth.mean_sq - 32.0).abs() <= 3.0 * orth.stderr;

    let n = 30;
    let mut rng = rng_from_seed(709);
    let signs: Vec<i8> = (0..n)
        .map(|i| {
            if i < 5 {
                if rng.random_bool(0.5) {
                    1
                } else {
                    -1
                }
            } else {
                0
            }
        })
        .collect();
    let cone = ConeModel::l1_descent(signs.clone()).unwrap();
    let mut worst: f64 = 0.0;
    let mut memberships = 0;
    for _ in 0..10_000 {
        let v = normal_vec(&mut rng, n) * rng.random_range(0.1..10.0);
        let p = cone.project(v.view()).unwrap();
        let (q, _) = polar_project_l1_descent(&cone, v.view()).unwrap();
        let scale = v.dot(&v).max(1.0);
        let recon = norm((&v - &p - &q).view()) / scale.sqrt();
        let ortho = p.dot(&q).abs() / scale;
        let pyth = (v.dot(&v) - p.dot(&p) - q.dot(&q)).abs() / scale;
        worst = worst.max(recon).max(ortho).max(pyth);
        let tol = 1e-8 * scale.sqrt();
        if in_descent_cone(&signs, &p, tol) && in_polar(&signs, &q, tol) {
            memberships += 1;
        }
    }
    let moreau_ok = worst <= 1e-8 && memberships == 10_000;
    (
        sub_ok && orth_ok && moreau_ok,
        format!(
            "subspace {:.3} +- {:.3}, orthant {:.3} +- {:.3}, Moreau worst {worst:.1e}, {memberships}/10000 in cone and polar",
            sub.mean_sq, sub.stderr, orth.mean_sq, orth.stderr
        ),
    )
}

// 8. Lemma suite.

fn contraction_violations(
    set: &ConstraintSet,
    factor: f64,
    trials: usize,
    rng: &mut SeededRng,
) -> usize {
    (0..trials)
        .filter(|_| {
            let u = set
                .project((normal_vec(rng, set.dim) * 2.0).view())
                .unwrap();
            let v = normal_vec(rng, set.dim) * 2.0;
            let pv = set.project(v.view()).unwrap();
            norm((&pv - &u).view()) > factor * norm((&v - &u).view()) + 1e-12
        })
        .count()
}

fn criterion_8() -> Outcome {
    let mut notes = Vec::new();
    let s_report = check_s_properties(8, 100_000, 801).unwrap();
    notes.push(format!("S worst {:.1e}", s_report.worst_violation));
    let mut ok = s_report.passed;

    let sets = [
        (SetKind::L1Ball { radius: 2.0 }, 1.0),
        (SetKind::Nonneg, 1.0),
        (SetKind::TopK { k: 2 }, 2.0),
        (
            SetKind::Discrete {
                alphabet: vec![-1.0, 0.0, 1.0],
            },
            2.0,
        ),
    ];
    let mut rng = rng_from_seed(802);
    let mut contraction = 0;
    for (i, (kind, factor)) in sets.into_iter().enumerate() {
        let set = ConstraintSet::new(kind, 6).unwrap();
        contraction += contraction_violations(&set, factor, 100_000, &mut rng);
        ok &= check_projection_contraction(&set, factor, 100_000, derive_seed(803, i as u64))
            .unwrap()
            .passed;
    }
    notes.push(format!("contraction violations {contraction}"));
    ok &= contraction == 0;

    // b_{m+1} = m / b_m from b_1 = sqrt(2/pi)
    let mut b = (2.0 / PI).sqrt();
    let mut bracket = 0;
    let mut recursion_err: f64 = 0.0;
    let sampled = |m: usize| m <= 10_000 || m.is_multiple_of(997) || m == 1_000_000;
    for m in 1..=1_000_000usize {
        if sampled(m) {
            let bm = compute_bm(m).unwrap();
            let sq = bm * bm;
            if sq < m as f64 - 0.5 || sq > m as f64 {
                bracket += 1;
            }
            recursion_err = recursion_err.max((bm - b).abs() / b);
        }
        b = m as f64 / b;
    }
    notes.push(format!(
        "b_m bracket violations {bracket}, recursion rel err {recursion_err:.1e}"
    ));
    ok &= bracket == 0 && recursion_err <= 1e-9;

    let (n, dim, delta) = (32, 8, 0.5);
    let omega_sq = statistical_dimension_mc(
        &ConeModel::coordinate_subspace(n, dim).unwrap(),
        20_000,
        804,
    )
    .unwrap()
    .mean_sq;
    let m = required_m_mixed(omega_sq, n, delta);
    let report = check_fourth_moment(n, m, delta, 20, 805).unwrap();
    let mut rng = rng_from_seed(806);
    let x = unit_sphere(&mut rng, n);
    let fourth = (0..20)
        .filter(|_| {
            let a = normal_matrix(&mut rng, m, n);
            let mean = a.dot(&x).iter().map(|t| t.powi(4)).sum::<f64>() / m as f64;
            (mean - 3.0).abs() > delta / 4.0
        })
        .count();
    notes.push(format!(
        "fourth moment at m = {m}: {} + {fourth} violations",
        report.worst_violation
    ));
    ok &= report.passed && report.worst_violation == 0.0 && fourth == 0;
    (ok, notes.join(", "))
}

// 9. CLI determinism.

fn pwfkit(mode: &str, config: &Path, out: &Path, threads: &str) -> bool {
    Command::new(env!("CARGO_BIN_EXE_pwfkit"))
        .args([
            mode,
            "--config",
            config.to_str().unwrap(),
            "--out-dir",
            out.to_str().unwrap(),
            "--seed",
            "2024",
            "--threads",
            threads,
        ])
        .status()
        .map(|s| s.success())
        .unwrap_or(false)
}

fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap())
        .map(|e| {
            (
                e.file_name().to_string_lossy().into_owned(),
                fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}

fn criterion_9() -> Outcome {
    let root = std::env::temp_dir().join(format!("pwfkit-acceptance-{}", std::process::id()));
    let configs = [
        ("run", "[signal]\nn = 64\nstructure = { kind = \"sparse\", s = 3 }\n[measurements]\nm = 96\n[solver]\nvariant = \"amplitude\"\n[constraint]\nkind = \"top_k\"\n"),
        ("grid", "[signal]\nn = 48\n[solver]\nvariant = \"amplitude\"\ntol_rel = 1e-5\n[constraint]\nkind = \"top_k\"\n[grid]\ns = [1, 3]\nm_factor = [1.0, 4.0]\ntrials = 6\n"),
        ("width", "[width]\ntrials = 4000\ncone = { kind = \"l1_descent\", n = 40, s = 3 }\n"),
        ("verify", ""),
    ];
    let mut ok = true;
    let mut notes = Vec::new();
    for (mode, text) in configs {
        let dir = root.join(mode);
        fs::create_dir_all(&dir).unwrap();
        let cfg = dir.join("config.toml");
        fs::write(&cfg, text).unwrap();
        let runs: Vec<_> = [("a", "1"), ("b", "1"), ("c", "4")]
            .into_iter()
            .map(|(tag, threads)| {
                let out = dir.join(tag);
                pwfkit(mode, &cfg, &out, threads).then(|| snapshot(&out))
            })
            .collect();
        let same = runs.iter().all(|r| r.is_some() && *r == runs[0]);
        ok &= same;
        notes.push(format!(
            "{mode} {}",
            if same { "identical" } else { "differs" }
        ));
    }
    let _ = fs::remove_dir_all(&root);
    (
        ok,
        format!("{} across reruns and 1 vs 4 threads", notes.join(", ")),
    )
}

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        (criterion_1, Some(Duration::from_secs(5))),
        (criterion_2, Some(Duration::from_secs(30))),
        (criterion_3, Some(Duration::from_secs(120))),
        (criterion_4, Some(Duration::from_secs(600))),
        (criterion_5, Some(Duration::from_secs(300))),
        (criterion_6, Some(Duration::from_secs(60))),
        (criterion_7, Some(Duration::from_secs(60))),
        (criterion_8, Some(Duration::from_secs(120))),
        (criterion_9, None),
    ];
    let mut all = true;
    for (i, (check, limit)) in criteria.into_iter().enumerate() {
        let start = Instant::now();
        let (ok, detail) = check();
        let elapsed = start.elapsed();
        let in_time = limit.is_none_or(|l| elapsed < l);
        let pass = ok && in_time;
        all &= pass;
        let budget = limit
            .map(|l| format!(" < {}s", l.as_secs()))
            .unwrap_or_default();
        println!(
            "criterion {}: {} ({detail}; {:.1}s{budget})",
            i + 1,
            if pass { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64()
        );
    }
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
