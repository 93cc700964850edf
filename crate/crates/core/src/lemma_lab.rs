//! Empirical checks of the concentration and geometry facts behind PWF's
//! convergence guarantees.
//!
//! Closed forms are checked exactly. Concentration bounds whose failure
//! probabilities involve unquantified constants are gated on the empirical
//! failure fraction over fresh Gaussian matrices ([`FAILURE_GATE`]). Suprema
//! over a cone are approximated by finitely many sampled directions, so a
//! passing report is a necessary-condition check only.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_2_PI, FRAC_PI_2};

use ndarray::{Array1, ArrayView1};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::constraints::ConstraintSet;
use crate::error::{check_len, invalid, Result};
use crate::geometry::ConeModel;
use crate::model::{align_sign, grad_intensity, norm, MeasurementSet};
use crate::rng::{derive_seed, normal_matrix, normal_vec, rng_from_seed};

/// Largest tolerated fraction of failing matrix draws.
pub const FAILURE_GATE: f64 = 0.05;

/// Outcome of one empirical check. `passed` is `worst_violation <= threshold`.
///
/// For checks gated on a failure fraction, `worst_violation` is that fraction
/// and the raw deviations live in `details`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LemmaReport {
    pub lemma_id: String,
    pub trials: usize,
    pub worst_violation: f64,
    pub threshold: f64,
    pub passed: bool,
    pub notes: String,
    pub details: BTreeMap<String, f64>,
}

impl LemmaReport {
    pub fn new(
        lemma_id: impl Into<String>,
        trials: usize,
        worst_violation: f64,
        threshold: f64,
        notes: impl Into<String>,
        details: BTreeMap<String, f64>,
    ) -> Self {
        Self {
            lemma_id: lemma_id.into(),
            trials,
            worst_violation,
            threshold,
            passed: worst_violation <= threshold,
            notes: notes.into(),
            details,
        }
    }
}

/// Constants of the regularity, curvature and smoothness conditions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RCConstants {
    pub alpha: f64,
    pub lambda: f64,
    pub gamma: f64,
    pub delta: f64,
    pub big_delta: f64,
    pub beta: f64,
    pub epsilon: f64,
}

impl RCConstants {
    /// `alpha = 250, lambda = 1/250, gamma = delta = Delta = 1/1000,
    /// beta = 13000 n, epsilon = 1/8`.
    pub fn for_dimension(n: usize) -> Self {
        Self {
            alpha: 250.0,
            lambda: 1.0 / 250.0,
            gamma: 1.0 / 1000.0,
            delta: 1.0 / 1000.0,
            big_delta: 1.0 / 1000.0,
            beta: 13000.0 * n as f64,
            epsilon: 1.0 / 8.0,
        }
    }
}

fn run_trials<T: Send>(trials: usize, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
    (0..trials).into_par_iter().map(f).collect()
}

// ---------------------------------------------------------------------------
// E|<u,a><a,v>|

/// `E |u^T a a^T v| = (2/pi) ||u|| ||v|| (sin t + cos t (pi/2 - t))` where `t`
/// is the angle between `u` and `v`.
pub fn closed_form_abs_moment(u: ArrayView1<f64>, v: ArrayView1<f64>) -> Result<f64> {
    check_len("v", v.len(), u.len())?;
    let (nu, nv) = (norm(u), norm(v));
    if nu == 0.0 || nv == 0.0 {
        return invalid("closed-form moment needs nonzero vectors");
    }
    let theta = (u.dot(&v) / (nu * nv)).clamp(-1.0, 1.0).acos();
    Ok(FRAC_2_PI * nu * nv * (theta.sin() + theta.cos() * (FRAC_PI_2 - theta)))
}

/// Monte Carlo mean of `|<u,a><a,v>|` over standard normal `a`, with its
/// standard error.
pub fn mc_abs_moment(
    u: ArrayView1<f64>,
    v: ArrayView1<f64>,
    trials: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    check_len("v", v.len(), u.len())?;
    if trials < 2 {
        return invalid("Monte Carlo moment needs at least 2 trials");
    }
    if norm(u) == 0.0 || norm(v) == 0.0 {
        return invalid("Monte Carlo moment needs nonzero vectors");
    }
    let mut rng = rng_from_seed(seed);
    let samples: Vec<f64> = (0..trials)
        .map(|_| {
            let a = normal_vec(&mut rng, u.len());
            (a.dot(&u) * a.dot(&v)).abs()
        })
        .collect();
    Ok(mean_and_stderr(&samples))
}

fn mean_and_stderr(xs: &[f64]) -> (f64, f64) {
    let t = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / t;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (t - 1.0);
    (mean, (var / t).sqrt())
}

/// Compares [`mc_abs_moment`] with [`closed_form_abs_moment`] on `pairs`
/// random Gaussian pairs in dimensions 2 to 6. A pair disagrees when the
/// estimate misses by more than four standard errors; up to 5% of pairs may
/// disagree. The exact anchors 1 (equal unit vectors) and `2/pi` (orthogonal
/// unit vectors) must hold to 1e-12.
pub fn check_abs_moment(pairs: usize, trials: usize, seed: u64) -> Result<LemmaReport> {
    if pairs == 0 {
        return invalid("moment check needs at least one pair");
    }
    let outcomes: Vec<f64> = run_trials(pairs, |k| {
        let mut rng = rng_from_seed(derive_seed(seed, 2 * k as u64));
        let n = rng.random_range(2..=6);
        let u = normal_vec(&mut rng, n);
        let v = normal_vec(&mut rng, n);
        let exact = closed_form_abs_moment(u.view(), v.view())?;
        let (est, se) = mc_abs_moment(
            u.view(),
            v.view(),
            trials,
            derive_seed(seed, 2 * k as u64 + 1),
        )?;
        Ok((est - exact).abs() / se)
    })
    .into_iter()
    .collect::<Result<_>>()?;
    let e1 = ndarray::array![1.0, 0.0];
    let e2 = ndarray::array![0.0, 1.0];
    let anchor_error = (closed_form_abs_moment(e1.view(), e1.view())? - 1.0)
        .abs()
        .max((closed_form_abs_moment(e1.view(), e2.view())? - FRAC_2_PI).abs());
    let disagreements = outcomes.iter().filter(|z| **z > 4.0).count();
    let allowed = (pairs as f64 * FAILURE_GATE).floor();
    let violation = if anchor_error > 1e-12 {
        f64::INFINITY
    } else {
        disagreements as f64
    };
    let details = BTreeMap::from([
        (
            "worst_standard_errors".to_string(),
            outcomes.iter().copied().fold(0.0, f64::max),
        ),
        ("disagreements".to_string(), disagreements as f64),
        ("anchor_error".to_string(), anchor_error),
    ]);
    Ok(LemmaReport::new(
        "abs_moment",
        pairs,
        violation,
        allowed,
        format!("{trials} draws per pair, 4 standard errors"),
        details,
    ))
}

// ---------------------------------------------------------------------------
// Truncation map S

/// Three-piece truncation: `0` below `beta (1 - Delta)`, a linear ramp of
/// slope `1/Delta` up to `beta`, and `|h|` above.
pub fn truncation_s(h: f64, beta: f64, big_delta: f64) -> Result<f64> {
    if !(big_delta > 0.0 && big_delta < 1.0) {
        return invalid(format!("Delta must lie in (0, 1), got {big_delta}"));
    }
    if !(beta >= 0.0) {
        return invalid(format!("beta must be nonnegative, got {beta}"));
    }
    Ok(s_map(h, beta, big_delta))
}

fn s_map(h: f64, beta: f64, big_delta: f64) -> f64 {
    let a = h.abs();
    let knee = beta * (1.0 - big_delta);
    if a < knee {
        0.0
    } else if a <= beta {
        (a - knee) / big_delta
    } else {
        a
    }
}

/// `f(z; beta) = sqrt(sum_r S(z_r; beta_r)^2)`.
pub fn truncated_norm(z: ArrayView1<f64>, beta: ArrayView1<f64>, big_delta: f64) -> f64 {
    z.iter()
        .zip(beta)
        .map(|(h, b)| s_map(*h, *b, big_delta).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Truncation width used by the amplitude analysis.
pub const S_CHECK_DELTA: f64 = 0.1;
const S_SLACK: f64 = 1e-9;

/// Checks that `f = sqrt(sum S^2)` is `1/Delta`-Lipschitz and radially
/// convex (`f(alpha z) <= alpha f(z)` for `alpha` in `[0, 1]`) on random
/// inputs with `Delta = 0.1`.
///
/// Half of the `(z, y)` pairs are close (`y = z + 1e-3 noise`) to probe the
/// ramp where the slope is steepest. `worst_violation` is the largest
/// `lhs - rhs - 1e-9` seen in either inequality.
pub fn check_s_properties(m: usize, trials: usize, seed: u64) -> Result<LemmaReport> {
    if m == 0 || trials == 0 {
        return invalid("S-property check needs m >= 1 and trials >= 1");
    }
    let gaps: Vec<(f64, f64)> = run_trials(trials, |k| {
        let mut rng = rng_from_seed(derive_seed(seed, k as u64));
        let z = normal_vec(&mut rng, m);
        let scale = if k % 2 == 0 { 1.0 } else { 1e-3 };
        let y = &z + &(normal_vec(&mut rng, m) * scale);
        let beta = Array1::from_shape_fn(m, |_| rng.random_range(0.0..2.0));
        let alpha: f64 = rng.random_range(0.0..=1.0);
        let fz = truncated_norm(z.view(), beta.view(), S_CHECK_DELTA);
        let fy = truncated_norm(y.view(), beta.view(), S_CHECK_DELTA);
        let lip = (fz - fy).abs() - norm((&z - &y).view()) / S_CHECK_DELTA - S_SLACK;
        let scaled = z.mapv(|t| alpha * t);
        let radial =
            truncated_norm(scaled.view(), beta.view(), S_CHECK_DELTA) - alpha * fz - S_SLACK;
        (lip, radial)
    });
    let worst_lip = gaps.iter().map(|g| g.0).fold(f64::NEG_INFINITY, f64::max);
    let worst_radial = gaps.iter().map(|g| g.1).fold(f64::NEG_INFINITY, f64::max);
    let details = BTreeMap::from([
        ("worst_lipschitz_gap".to_string(), worst_lip),
        ("worst_radial_gap".to_string(), worst_radial),
    ]);
    Ok(LemmaReport::new(
        "s_properties",
        trials,
        worst_lip.max(worst_radial),
        0.0,
        format!("m = {m}, Delta = {S_CHECK_DELTA}"),
        details,
    ))
}

// ---------------------------------------------------------------------------
// Gordon-type isometries

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Weights {
    /// `d_r = 1`, which reduces the weighted check to the plain one.
    Unit,
    /// `d_r` uniform on `[lo, hi]`, redrawn per matrix.
    Uniform { lo: f64, hi: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IsometryParams {
    pub m: usize,
    pub delta: f64,
    pub cone_samples: usize,
    pub matrix_trials: usize,
    pub weights: Weights,
    /// Estimated squared width of the cone (statistical dimension).
    pub omega_sq: f64,
}

/// Smallest `m` for the cross-term bound: `max(80 w^2 / delta^2, 2/delta - 1)`.
/// It dominates the plain bound `max(20 w^2 / delta^2, 1/(2 delta) - 1)`.
pub fn required_m_isometry(omega_sq: f64, delta: f64) -> usize {
    (80.0 * omega_sq / (delta * delta))
        .max(2.0 / delta - 1.0)
        .ceil() as usize
}

fn check_gate_inputs(m: usize, delta: f64, samples: usize, trials: usize) -> Result<()> {
    if m == 0 || samples == 0 || trials == 0 {
        return invalid("m, sample count and trial count must be positive");
    }
    if !(delta > 0.0) {
        return invalid(format!("delta must be positive, got {delta}"));
    }
    Ok(())
}

/// Samples unit directions `h` from the cone and fresh Gaussian matrices and
/// checks, for every sampled direction,
///
/// * `|(1/m) sum (a_r.h)^2 - 1| <= delta`,
/// * `|(1/m) sum (a_r.u)(a_r.h) - u.h| <= delta` for consecutive pairs `(u, h)`,
/// * `|sum d_r^2 (a_r.h)^2 / sum d_r^2 - 1| <= delta`.
///
/// A matrix fails when any sample violates any of the three. Matrix `k` is
/// drawn from `derive_seed(seed, 2k)` and its directions and weights from
/// `derive_seed(seed, 2k + 1)`.
pub fn mc_cone_isometry(
    cone: &ConeModel,
    params: &IsometryParams,
    seed: u64,
) -> Result<LemmaReport> {
    let IsometryParams {
        m,
        delta,
        cone_samples,
        matrix_trials,
        weights,
        omega_sq,
    } = *params;
    check_gate_inputs(m, delta, cone_samples, matrix_trials)?;
    if let Weights::Uniform { lo, hi } = weights {
        if !(lo > 0.0 && hi >= lo) {
            return invalid("weights must satisfy 0 < lo <= hi");
        }
    }
    let mut notes = Vec::new();
    let required = required_m_isometry(omega_sq, delta);
    if m < required {
        notes.push(format!(
            "precondition: m = {m} is below the lemma threshold {required}"
        ));
    }

    struct Stats {
        plain: f64,
        cross: f64,
        weighted: f64,
        weight_mass_short: bool,
    }
    let stats = run_trials(matrix_trials, |k| {
        let a = normal_matrix(
            &mut rng_from_seed(derive_seed(seed, 2 * k as u64)),
            m,
            cone.n,
        );
        let mut rng = rng_from_seed(derive_seed(seed, 2 * k as u64 + 1));
        let hs: Vec<Array1<f64>> = (0..cone_samples)
            .map(|_| cone.sample_unit(&mut rng))
            .collect();
        let d_sq: Array1<f64> = match weights {
            Weights::Unit => Array1::ones(m),
            Weights::Uniform { lo, hi } => {
                Array1::from_shape_fn(m, |_| rng.random_range(lo..=hi).powi(2))
            }
        };
        let mass = d_sq.sum();
        let d_inf_sq = d_sq.iter().copied().fold(0.0, f64::max);
        let need = (20.0 * d_inf_sq * omega_sq / (delta * delta)).max(1.5 / delta - 1.0);
        let ahs: Vec<Array1<f64>> = hs.iter().map(|h| a.dot(h)).collect();
        let mut s = Stats {
            plain: 0.0,
            cross: 0.0,
            weighted: 0.0,
            weight_mass_short: mass < need,
        };
        for j in 0..cone_samples {
            let ah = &ahs[j];
            let sq: f64 = ah.iter().map(|t| t * t).sum();
            s.plain = s.plain.max((sq / m as f64 - 1.0).abs());
            let wsq: f64 = ah.iter().zip(&d_sq).map(|(t, w)| w * (t * t)).sum();
            s.weighted = s.weighted.max((wsq / mass - 1.0).abs());
            let next = (j + 1) % cone_samples;
            let cross = ah.dot(&ahs[next]) / m as f64 - hs[j].dot(&hs[next]);
            s.cross = s.cross.max(cross.abs());
        }
        s
    });

    let fails = |f: &dyn Fn(&Stats) -> bool| stats.iter().filter(|s| f(s)).count();
    let failed = fails(&|s| s.plain > delta || s.cross > delta || s.weighted > delta);
    let worst = |f: &dyn Fn(&Stats) -> f64| stats.iter().map(f).fold(0.0, f64::max);
    if stats.iter().any(|s| s.weight_mass_short) {
        notes.push(
            "precondition: weighted mass below the weighted sample-size threshold on some draws"
                .into(),
        );
    }
    let fraction = failed as f64 / matrix_trials as f64;
    let details = BTreeMap::from([
        ("worst_plain_deviation".to_string(), worst(&|s| s.plain)),
        ("worst_cross_deviation".to_string(), worst(&|s| s.cross)),
        (
            "worst_weighted_deviation".to_string(),
            worst(&|s| s.weighted),
        ),
        (
            "plain_failures".to_string(),
            fails(&|s| s.plain > delta) as f64,
        ),
        (
            "cross_failures".to_string(),
            fails(&|s| s.cross > delta) as f64,
        ),
        (
            "weighted_failures".to_string(),
            fails(&|s| s.weighted > delta) as f64,
        ),
        ("failure_fraction".to_string(), fraction),
        ("required_m".to_string(), required as f64),
    ]);
    notes.push(format!(
        "m = {m}, delta = {delta}, {cone_samples} directions per matrix"
    ));
    Ok(LemmaReport::new(
        "cone_isometry",
        matrix_trials,
        fraction,
        FAILURE_GATE,
        notes.join("; "),
        details,
    ))
}

// ---------------------------------------------------------------------------
// Mixed fourth moment

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixedMomentParams {
    pub m: usize,
    pub delta: f64,
    pub cone_samples: usize,
    pub trials: usize,
    pub omega_sq: f64,
}

/// `1600 max(w^2 ln n / delta^2, 1 / delta^2)`.
pub fn required_m_mixed(omega_sq: f64, n: usize, delta: f64) -> usize {
    (1600.0 * (omega_sq * (n as f64).ln()).max(1.0) / (delta * delta)).ceil() as usize
}

/// For unit `x` and sampled unit `h` in the cone, checks the one-sided bound
/// `(1/m) sum (a.h)^2 (a.x)^2 - (1 + 2 (h.x)^2) <= delta` and the fourth
/// moment fact `|(1/m) sum (a.x)^4 - 3| <= delta / 4` on fresh matrices.
pub fn mc_mixed_fourth_moment(
    cone: &ConeModel,
    x: ArrayView1<f64>,
    params: &MixedMomentParams,
    seed: u64,
) -> Result<LemmaReport> {
    let MixedMomentParams {
        m,
        delta,
        cone_samples,
        trials,
        omega_sq,
    } = *params;
    check_gate_inputs(m, delta, cone_samples, trials)?;
    check_len("x", x.len(), cone.n)?;
    if (norm(x) - 1.0).abs() > 1e-12 {
        return invalid("x must have unit norm");
    }
    let mut notes = Vec::new();
    let required = required_m_mixed(omega_sq, cone.n, delta);
    if m < required {
        notes.push(format!(
            "precondition: m = {m} is below the lemma threshold {required}"
        ));
    }

    let stats: Vec<(f64, f64)> = run_trials(trials, |k| {
        let a = normal_matrix(
            &mut rng_from_seed(derive_seed(seed, 2 * k as u64)),
            m,
            cone.n,
        );
        let mut rng = rng_from_seed(derive_seed(seed, 2 * k as u64 + 1));
        let ax = a.dot(&x);
        let ax_sq = ax.mapv(|t| t * t);
        let fourth = (ax_sq.iter().map(|t| t * t).sum::<f64>() / m as f64 - 3.0).abs();
        let mut mixed = f64::NEG_INFINITY;
        for _ in 0..cone_samples {
            let h = cone.sample_unit(&mut rng);
            let ah = a.dot(&h);
            let emp: f64 = ah.iter().zip(&ax_sq).map(|(p, q)| p * p * q).sum::<f64>() / m as f64;
            mixed = mixed.max(emp - (1.0 + 2.0 * h.dot(&x).powi(2)));
        }
        (mixed, fourth)
    });
    let mixed_failures = stats.iter().filter(|s| s.0 > delta).count();
    let fourth_failures = stats.iter().filter(|s| s.1 > delta / 4.0).count();
    let failed = stats
        .iter()
        .filter(|s| s.0 > delta || s.1 > delta / 4.0)
        .count();
    let fraction = failed as f64 / trials as f64;
    let details = BTreeMap::from([
        (
            "worst_mixed_excess".to_string(),
            stats.iter().map(|s| s.0).fold(f64::NEG_INFINITY, f64::max),
        ),
        (
            "worst_fourth_moment_deviation".to_string(),
            stats.iter().map(|s| s.1).fold(0.0, f64::max),
        ),
        ("mixed_failures".to_string(), mixed_failures as f64),
        ("fourth_moment_failures".to_string(), fourth_failures as f64),
        ("failure_fraction".to_string(), fraction),
        ("required_m".to_string(), required as f64),
    ]);
    notes.push(format!(
        "m = {m}, delta = {delta}, {cone_samples} directions per matrix"
    ));
    Ok(LemmaReport::new(
        "mixed_fourth_moment",
        trials,
        fraction,
        FAILURE_GATE,
        notes.join("; "),
        details,
    ))
}

/// Counts draws where `|(1/m) sum (a_r.x)^4 - 3| > delta / 4` for a fixed
/// random unit `x` in `R^n` over `trials` fresh `m x n` Gaussian matrices.
/// Passes only with zero violations.
pub fn check_fourth_moment(
    n: usize,
    m: usize,
    delta: f64,
    trials: usize,
    seed: u64,
) -> Result<LemmaReport> {
    check_gate_inputs(m, delta, 1, trials)?;
    if n == 0 {
        return invalid("fourth moment check needs n >= 1");
    }
    let x = crate::rng::unit_sphere(&mut rng_from_seed(derive_seed(seed, 0)), n);
    let deviations = run_trials(trials, |k| {
        let a = normal_matrix(&mut rng_from_seed(derive_seed(seed, k as u64 + 1)), m, n);
        (a.dot(&x).iter().map(|t| t.powi(4)).sum::<f64>() / m as f64 - 3.0).abs()
    });
    let violations = deviations.iter().filter(|d| **d > delta / 4.0).count();
    let details = BTreeMap::from([
        (
            "worst_deviation".to_string(),
            deviations.iter().copied().fold(0.0, f64::max),
        ),
        ("tolerance".to_string(), delta / 4.0),
    ]);
    Ok(LemmaReport::new(
        "fourth_moment",
        trials,
        violations as f64,
        0.0,
        format!("n = {n}, m = {m}, delta = {delta}"),
        details,
    ))
}

// ---------------------------------------------------------------------------
// |u^T a a^T v| concentration

pub const DEFAULT_ABS_PRODUCT_C: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AbsProductParams {
    pub m: usize,
    pub delta: f64,
    pub pair_samples: usize,
    pub trials: usize,
    /// Oversampling constant in `m >= c max(w_C^2, w_C'^2)`.
    pub c: f64,
    pub omega_sq_c: f64,
    pub omega_sq_cp: f64,
}

/// Worst deviation of `(1/m) sum |u.a_r a_r.v|` from its closed-form mean
/// over sampled unit `u` in `C` and `v` in `C'`. Uses the same per-matrix
/// seed layout as [`mc_cone_isometry`].
pub fn mc_abs_product_concentration(
    cone_c: &ConeModel,
    cone_cp: &ConeModel,
    params: &AbsProductParams,
    seed: u64,
) -> Result<LemmaReport> {
    let AbsProductParams {
        m,
        delta,
        pair_samples,
        trials,
        c,
        omega_sq_c,
        omega_sq_cp,
    } = *params;
    check_gate_inputs(m, delta, pair_samples, trials)?;
    check_len("second cone", cone_cp.n, cone_c.n)?;
    let mut notes = Vec::new();
    let required = (c * omega_sq_c.max(omega_sq_cp)).ceil() as usize;
    if m < required {
        notes.push(format!(
            "precondition: m = {m} is below c * max width^2 = {required}"
        ));
    }

    let stats: Result<Vec<(f64, f64)>> = run_trials(trials, |k| {
        let a = normal_matrix(
            &mut rng_from_seed(derive_seed(seed, 2 * k as u64)),
            m,
            cone_c.n,
        );
        let mut rng = rng_from_seed(derive_seed(seed, 2 * k as u64 + 1));
        let (mut worst, mut total) = (0.0_f64, 0.0);
        for _ in 0..pair_samples {
            let u = cone_c.sample_unit(&mut rng);
            let v = cone_cp.sample_unit(&mut rng);
            let (au, av) = (a.dot(&u), a.dot(&v));
            let emp = au.iter().zip(&av).map(|(p, q)| (p * q).abs()).sum::<f64>() / m as f64;
            worst = worst.max((emp - closed_form_abs_moment(u.view(), v.view())?).abs());
            total += emp;
        }
        Ok((worst, total / pair_samples as f64))
    })
    .into_iter()
    .collect();
    let stats = stats?;
    let failed = stats.iter().filter(|s| s.0 > delta).count();
    let fraction = failed as f64 / trials as f64;
    let details = BTreeMap::from([
        (
            "worst_deviation".to_string(),
            stats.iter().map(|s| s.0).fold(0.0, f64::max),
        ),
        (
            "mean_empirical".to_string(),
            stats.iter().map(|s| s.1).sum::<f64>() / trials as f64,
        ),
        ("failure_fraction".to_string(), fraction),
        ("required_m".to_string(), required as f64),
    ]);
    notes.push(format!(
        "m = {m}, delta = {delta}, {pair_samples} pairs per matrix"
    ));
    Ok(LemmaReport::new(
        "abs_product",
        trials,
        fraction,
        FAILURE_GATE,
        notes.join("; "),
        details,
    ))
}

// ---------------------------------------------------------------------------
// Regularity condition along trajectories

/// Margins of the regularity, local curvature and local smoothness
/// inequalities at one point, on the problem rescaled to `||x|| = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConditionMargins {
    pub rc: f64,
    pub lcc: f64,
    pub lsc: f64,
}

/// Evaluates the three conditions at `z`, with `x` sign-aligned to `z`.
///
/// * RC: `<grad, h> - |h|^2 / alpha - |grad|^2 / beta`
/// * LCC: `<grad, h> - (1/alpha + lambda) |h|^2 - (gamma/m) sum (a.h)^4`
/// * LSC: `beta (lambda |h|^2 + (gamma/m) sum (a.h)^4) - |grad|^2`
///
/// where `h = z - x`. Inputs are rescaled by `1/||x||` (intensities by
/// `1/||x||^2`) first, matching the unit-norm normalization under which
/// the constants were derived.
pub fn condition_margins(
    meas: &MeasurementSet,
    x: ArrayView1<f64>,
    z: ArrayView1<f64>,
    constants: &RCConstants,
) -> Result<ConditionMargins> {
    check_len("x", x.len(), meas.n())?;
    check_len("z", z.len(), meas.n())?;
    let scale = norm(x);
    if scale == 0.0 {
        return invalid("regularity check needs a nonzero signal");
    }
    let x_unit = align_sign(z, x) / scale;
    let z_unit = z.to_owned() / scale;
    let y_unit = &meas.y / (scale * scale);
    let grad = grad_intensity(meas.a.view(), y_unit.view(), z_unit.view())?;
    let h = &z_unit - &x_unit;
    let h_sq = h.dot(&h);
    let g_sq = grad.dot(&grad);
    let inner = grad.dot(&h);
    let quartic = meas.a.dot(&h).iter().map(|t| t.powi(4)).sum::<f64>() / meas.m() as f64;
    let RCConstants {
        alpha,
        lambda,
        gamma,
        beta,
        ..
    } = *constants;
    Ok(ConditionMargins {
        rc: inner - h_sq / alpha - g_sq / beta,
        lcc: inner - (1.0 / alpha + lambda) * h_sq - gamma * quartic,
        lsc: beta * (lambda * h_sq + gamma * quartic) - g_sq,
    })
}

/// Tolerance below zero accepted for the RC margin.
pub const RC_TOLERANCE: f64 = 1e-9;

/// Checks RC, LCC and LSC at every trace point inside
/// `E(eps) = {z in K : dist(z, x) <= eps ||x||}`; other points are skipped
/// and counted. The report passes when the minimum RC margin is at least
/// `-1e-9`.
pub fn check_regularity_condition(
    meas: &MeasurementSet,
    set: &ConstraintSet,
    x: ArrayView1<f64>,
    trace_points: &[Array1<f64>],
    constants: &RCConstants,
) -> Result<LemmaReport> {
    if trace_points.is_empty() {
        return invalid("regularity check needs at least one trace point");
    }
    let radius = constants.epsilon * norm(x);
    let mut skipped = 0usize;
    let mut margins = Vec::new();
    for z in trace_points {
        let inside = crate::model::dist_sign_invariant(z.view(), x)? <= radius
            && set.contains(z.view(), 1e-10);
        if inside {
            margins.push(condition_margins(meas, x, z.view(), constants)?);
        } else {
            skipped += 1;
        }
    }
    let min = |f: fn(&ConditionMargins) -> f64| margins.iter().map(f).fold(f64::INFINITY, f64::min);
    let (rc, lcc, lsc) = if margins.is_empty() {
        (0.0, 0.0, 0.0)
    } else {
        (min(|c| c.rc), min(|c| c.lcc), min(|c| c.lsc))
    };
    let details = BTreeMap::from([
        ("min_rc_margin".to_string(), rc),
        ("min_lcc_margin".to_string(), lcc),
        ("min_lsc_margin".to_string(), lsc),
        ("points_checked".to_string(), margins.len() as f64),
        ("points_skipped".to_string(), skipped as f64),
    ]);
    let mut notes = format!(
        "alpha = {}, beta = {}, epsilon = {}",
        constants.alpha, constants.beta, constants.epsilon
    );
    if margins.is_empty() {
        notes.push_str("; no trace point inside E(epsilon)");
    }
    Ok(LemmaReport::new(
        "regularity",
        margins.len(),
        -rc,
        RC_TOLERANCE,
        notes,
        details,
    ))
}

/// Runs intensity PWF with the l1-ball constraint from oracle starts at
/// `rho = 1/8` on `runs` random `s`-sparse problems (`mu = 0.1/n`, at most
/// 5000 iterations, tolerance 1e-3) and checks the regularity condition at
/// every iterate after the first. A run counts when it converges and RC holds
/// along it; at most 10% of runs may fail.
pub fn check_regularity_along_runs(
    n: usize,
    s: usize,
    m: usize,
    runs: usize,
    seed: u64,
) -> Result<LemmaReport> {
    use crate::constraints::SetKind;
    use crate::model::{gen_structured_signal, Structure};
    use crate::solver::{init_oracle, pwf_run_observed, SolverConfig};

    if runs == 0 {
        return invalid("regularity check needs at least one run");
    }
    let constants = RCConstants::for_dimension(n);
    let outcomes: Vec<(bool, f64, f64)> = run_trials(runs, |k| {
        let run_seed = derive_seed(seed, k as u64);
        let x =
            gen_structured_signal(&Structure::Sparse { s }, n, derive_seed(run_seed, 0))?.values;
        let meas = MeasurementSet::synthesize(x.view(), m, derive_seed(run_seed, 1))?;
        let radius = x.iter().map(|t| t.abs()).sum::<f64>();
        let set = ConstraintSet::new(SetKind::L1Ball { radius }, n)?;
        let config = SolverConfig {
            tol_rel: 1e-3,
            max_iters: 5000,
            ..SolverConfig::intensity(n)
        };
        let z0 = init_oracle(x.view(), 1.0 / 8.0, derive_seed(run_seed, 2))?;
        let mut points = Vec::new();
        let trace = pwf_run_observed(&meas, &set, &config, z0.view(), Some(x.view()), |tau, z| {
            if tau >= 1 {
                points.push(z.to_owned());
            }
        })?;
        let report = check_regularity_condition(&meas, &set, x.view(), &points, &constants)?;
        let ok = trace.converged && report.passed && report.details["points_checked"] > 0.0;
        Ok((
            ok,
            report.details["min_rc_margin"],
            report.details["points_skipped"],
        ))
    })
    .into_iter()
    .collect::<Result<_>>()?;
    let failed = outcomes.iter().filter(|o| !o.0).count();
    let fraction = failed as f64 / runs as f64;
    let details = BTreeMap::from([
        (
            "min_rc_margin".to_string(),
            outcomes.iter().map(|o| o.1).fold(f64::INFINITY, f64::min),
        ),
        (
            "points_skipped".to_string(),
            outcomes.iter().map(|o| o.2).sum(),
        ),
        ("failed_runs".to_string(), failed as f64),
    ]);
    Ok(LemmaReport::new(
        "regularity",
        runs,
        fraction,
        0.1,
        format!("n = {n}, s = {s}, m = {m}, intensity PWF + l1 ball"),
        details,
    ))
}

// ---------------------------------------------------------------------------
// Gordon's b_m

/// `b_m = sqrt(2) Gamma((m+1)/2) / Gamma(m/2) = E ||g||` for `g ~ N(0, I_m)`.
///
/// Small `m` uses log-Gamma directly. For `m >= 32` the log-Gamma difference
/// loses too many digits, so the ratio comes from the asymptotic series
/// `ln(Gamma(x + 1/2) / Gamma(x)) = ln(x)/2 - 1/(8x) + 1/(192x^3) -
/// 1/(640x^5) + 17/(14336x^7) - 31/(18432x^9)` with `x = m/2` (truncation
/// error below 1e-19 there).
pub fn compute_bm(m: usize) -> Result<f64> {
    if m == 0 {
        return invalid("b_m needs m >= 1");
    }
    let mf = m as f64;
    if m < 32 {
        return Ok(2f64.sqrt() * (ln_gamma((mf + 1.0) / 2.0) - ln_gamma(mf / 2.0)).exp());
    }
    let x = mf / 2.0;
    let r = 1.0 / x;
    let r2 = r * r;
    let correction = r
        * (-1.0 / 8.0
            + r2 * (1.0 / 192.0
                + r2 * (-1.0 / 640.0 + r2 * (17.0 / 14336.0 + r2 * (-31.0 / 18432.0)))));
    Ok(mf.sqrt() * correction.exp())
}

/// `b_m^2` lies in `[m - 1/2, m]`.
pub fn bm_bracket_violation(m: usize) -> Result<f64> {
    let b = compute_bm(m)?;
    let b_sq = b * b;
    let mf = m as f64;
    Ok((mf - 0.5 - b_sq).max(b_sq - mf))
}

/// Checks the `b_m` bracket on `m = 1..=dense_upto` and on a log-spaced
/// sample up to `max_m`.
pub fn check_bm_bracket(dense_upto: usize, max_m: usize) -> Result<LemmaReport> {
    let mut ms: Vec<usize> = (1..=dense_upto).collect();
    let mut t = dense_upto.max(1) as f64;
    while (t as usize) < max_m {
        t *= 1.1;
        ms.push((t as usize).min(max_m));
    }
    ms.push(max_m);
    ms.sort_unstable();
    ms.dedup();
    let worst = ms
        .iter()
        .map(|m| bm_bracket_violation(*m))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(f64::NEG_INFINITY, f64::max);
    let details = BTreeMap::from([("values_checked".to_string(), ms.len() as f64)]);
    Ok(LemmaReport::new(
        "bm_bracket",
        ms.len(),
        worst,
        0.0,
        format!("m in 1..={dense_upto} and log-spaced up to {max_m}"),
        details,
    ))
}

// ---------------------------------------------------------------------------
// Cone projection identities

/// For Gaussian `v`, checks `||v||^2 = ||v - P_C v||^2 + ||P_C v||^2` (relative
/// 1e-8), that no sampled unit member `u` beats the support function
/// (`u.v <= ||P_C v|| + 1e-10`), and that `P_C v / ||P_C v||` is a member
/// attaining it (to 1e-6). `worst_violation` is the largest excess over those
/// tolerances.
pub fn check_cone_projection_identities(
    cone: &ConeModel,
    trials: usize,
    samples: usize,
    seed: u64,
) -> Result<LemmaReport> {
    if trials == 0 {
        return invalid("cone identity check needs at least one trial");
    }
    let rows: Vec<[f64; 4]> = run_trials(trials, |k| {
        let mut rng = rng_from_seed(derive_seed(seed, k as u64));
        let v = normal_vec(&mut rng, cone.n);
        let p = cone.project(v.view()).expect("length matches");
        let len = norm(p.view());
        let vv = v.dot(&v);
        let resid = &v - &p;
        let pyth = (resid.dot(&resid) + len * len - vv).abs() / vv.max(f64::MIN_POSITIVE);
        let mut beat = f64::NEG_INFINITY;
        for _ in 0..samples {
            beat = beat.max(cone.sample_unit(&mut rng).dot(&v) - len);
        }
        let (attain, outside) = if len > 1e-12 {
            let u = &p / len;
            (
                (u.dot(&v) - len).abs(),
                if cone.contains(u.view(), 1e-9) {
                    0.0
                } else {
                    1.0
                },
            )
        } else {
            (0.0, 0.0)
        };
        [pyth, beat, attain, outside]
    });
    let worst = |i: usize| rows.iter().map(|r| r[i]).fold(f64::NEG_INFINITY, f64::max);
    let (pyth, beat, attain) = (worst(0), worst(1), worst(2));
    let outside: f64 = rows.iter().map(|r| r[3]).sum();
    let violation = (pyth - 1e-8)
        .max(beat - 1e-10)
        .max(attain - 1e-6)
        .max(if outside > 0.0 {
            1.0
        } else {
            f64::NEG_INFINITY
        });
    let details = BTreeMap::from([
        ("worst_pythagoras_rel_error".to_string(), pyth),
        ("worst_sampled_excess".to_string(), beat),
        ("worst_attainment_error".to_string(), attain),
        ("normalized_projection_outside".to_string(), outside),
    ]);
    Ok(LemmaReport::new(
        "cone_projection",
        trials,
        violation,
        0.0,
        format!("{samples} sampled members per vector; sup side is a sampled lower bound"),
        details,
    ))
}

/// With `K` the l1 ball of radius `||x||_1` around a random `s`-sparse `x`,
/// `D = K - x` and `C` the l1 descent cone at `x`, checks
/// `||P_D(v)|| <= 2 ||P_C(v)||` using `P_D(v) = P_K(x + v) - x`.
pub fn check_projection_comparison(
    n: usize,
    s: usize,
    trials: usize,
    seed: u64,
) -> Result<LemmaReport> {
    if s == 0 || s > n || trials == 0 {
        return invalid(format!(
            "comparison check needs 1 <= s <= n and trials >= 1, got n = {n}, s = {s}"
        ));
    }
    let gaps: Vec<(f64, f64)> = run_trials(trials, |k| {
        let mut rng = rng_from_seed(derive_seed(seed, k as u64));
        let x = crate::model::gen_structured_signal(
            &crate::model::Structure::Sparse { s },
            n,
            rng.random(),
        )
        .expect("valid sparsity")
        .values;
        let radius = x.iter().map(|t| t.abs()).sum::<f64>();
        let v = normal_vec(&mut rng, n) * rng.random_range(0.01..5.0);
        let pd = crate::constraints::project_l1_ball((&x + &v).view(), radius) - &x;
        let cone = ConeModel::l1_descent_at(x.view()).expect("x is nonzero");
        let pc = cone.project(v.view()).expect("length matches");
        let (a, b) = (norm(pd.view()), norm(pc.view()));
        (
            a - 2.0 * b - 1e-12 * (1.0 + norm(v.view())),
            if b > 0.0 { a / b } else { 0.0 },
        )
    });
    let worst = gaps.iter().map(|g| g.0).fold(f64::NEG_INFINITY, f64::max);
    let details = BTreeMap::from([
        (
            "worst_ratio".to_string(),
            gaps.iter().map(|g| g.1).fold(0.0, f64::max),
        ),
        (
            "violations".to_string(),
            gaps.iter().filter(|g| g.0 > 0.0).count() as f64,
        ),
    ]);
    Ok(LemmaReport::new(
        "projection_comparison",
        trials,
        worst,
        0.0,
        format!("n = {n}, s = {s}, factor 2"),
        details,
    ))
}

// ---------------------------------------------------------------------------
// Projection contraction

/// For random `v` and members `u` of `set`, records the largest ratio
/// `||P(v) - u|| / ||v - u||` (bounded by 1 for convex sets and by 2 for any
/// closed set). Members are drawn by projecting Gaussian vectors.
pub fn projection_contraction_ratio(set: &ConstraintSet, trials: usize, seed: u64) -> Result<f64> {
    let mut rng = rng_from_seed(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let u = set.project((normal_vec(&mut rng, set.dim) * 2.0).view())?;
        let v = normal_vec(&mut rng, set.dim) * 2.0;
        let pv = set.project(v.view())?;
        let den = norm((&v - &u).view());
        if den > 0.0 {
            worst = worst.max(norm((&pv - &u).view()) / den);
        }
    }
    Ok(worst)
}

/// Contraction check against a factor bound (1 for convex sets, 2 otherwise).
pub fn check_projection_contraction(
    set: &ConstraintSet,
    factor: f64,
    trials: usize,
    seed: u64,
) -> Result<LemmaReport> {
    let ratio = projection_contraction_ratio(set, trials, seed)?;
    let details = BTreeMap::from([("worst_ratio".to_string(), ratio)]);
    Ok(LemmaReport::new(
        "projection_contraction",
        trials,
        ratio - factor,
        1e-12,
        format!("{:?}, factor {factor}", set.kind),
        details,
    ))
}
