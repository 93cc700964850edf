//! The lemma suite behind `pwfkit verify`.

use std::collections::BTreeMap;
use std::path::Path;

use pwfkit::constraints::{ConstraintSet, SetKind};
use pwfkit::geometry::{m0_l1_sparse, statistical_dimension_mc, ConeModel};
use pwfkit::lemma_lab::{
    check_abs_moment, check_bm_bracket, check_cone_projection_identities, check_fourth_moment,
    check_projection_comparison, check_projection_contraction, check_regularity_along_runs,
    check_s_properties, mc_abs_product_concentration, mc_cone_isometry, mc_mixed_fourth_moment,
    required_m_isometry, required_m_mixed, AbsProductParams, IsometryParams, LemmaReport,
    MixedMomentParams, Weights, DEFAULT_ABS_PRODUCT_C,
};
use pwfkit::rng::{derive_seed, normal_matrix, rng_from_seed, unit_sphere};
use rayon::prelude::*;
use serde_json::Value;

use crate::config::Config;
use crate::error::{CliError, CliResult};
use crate::output::{ensure_dir, json_f64, object, write_json};

/// Lemma ids in suite order. Lemma `i` runs with seed `derive_seed(base, i)`,
/// so a report does not depend on which other lemmas were selected.
pub const LEMMAS: &[&str] = &[
    "abs_moment",
    "s_properties",
    "bm_bracket",
    "projection_contraction",
    "cone_isometry",
    "mixed_fourth_moment",
    "fourth_moment",
    "abs_product",
    "regularity",
    "cone_projection",
    "projection_comparison",
];

const WIDTH_TRIALS: usize = 20_000;

fn omega_sq(cone: &ConeModel, seed: u64) -> pwfkit::Result<f64> {
    Ok(statistical_dimension_mc(cone, WIDTH_TRIALS, seed)?.mean_sq)
}

/// Folds several reports of one check into a single report: worst violation
/// relative to each part's threshold, details prefixed by part name.
fn merge(id: &str, threshold: f64, parts: Vec<(&str, LemmaReport)>) -> LemmaReport {
    let mut details = BTreeMap::new();
    let mut worst = f64::NEG_INFINITY;
    let mut trials = 0;
    let mut notes = Vec::new();
    for (name, r) in parts {
        worst = worst.max(r.worst_violation - r.threshold + threshold);
        trials += r.trials;
        details.insert(format!("{name}.worst_violation"), r.worst_violation);
        for (k, v) in r.details {
            details.insert(format!("{name}.{k}"), v);
        }
        notes.push(format!("{name}: {}", r.notes));
    }
    LemmaReport::new(id, trials, worst, threshold, notes.join("; "), details)
}

pub fn run_lemma(id: &str, seed: u64) -> pwfkit::Result<LemmaReport> {
    Ok(match id {
        "abs_moment" => check_abs_moment(20, 100_000, seed)?,
        "s_properties" => check_s_properties(8, 100_000, seed)?,
        "bm_bracket" => check_bm_bracket(10_000, 1_000_000)?,
        "projection_contraction" => {
            let sets = [
                ("l1_ball", SetKind::L1Ball { radius: 2.0 }, 1.0),
                ("nonneg", SetKind::Nonneg, 1.0),
                ("top_k", SetKind::TopK { k: 2 }, 2.0),
                (
                    "discrete",
                    SetKind::Discrete {
                        alphabet: vec![-1.0, 0.0, 1.0],
                    },
                    2.0,
                ),
            ];
            let mut parts = Vec::new();
            for (i, (name, kind, factor)) in sets.into_iter().enumerate() {
                let set = ConstraintSet::new(kind, 6)?;
                parts.push((
                    name,
                    check_projection_contraction(
                        &set,
                        factor,
                        100_000,
                        derive_seed(seed, i as u64),
                    )?,
                ));
            }
            merge("projection_contraction", 1e-12, parts)
        }
        "cone_isometry" => {
            let cone = ConeModel::coordinate_subspace(32, 2)?;
            let omega_sq = omega_sq(&cone, derive_seed(seed, 0))?;
            let params = IsometryParams {
                m: required_m_isometry(omega_sq, 0.25),
                delta: 0.25,
                cone_samples: 200,
                matrix_trials: 50,
                weights: Weights::Uniform { lo: 0.5, hi: 2.0 },
                omega_sq,
            };
            mc_cone_isometry(&cone, &params, derive_seed(seed, 1))?
        }
        "mixed_fourth_moment" => {
            let cone = ConeModel::coordinate_subspace(32, 2)?;
            let omega_sq = omega_sq(&cone, derive_seed(seed, 0))?;
            let x = unit_sphere(&mut rng_from_seed(derive_seed(seed, 1)), 32);
            let params = MixedMomentParams {
                m: required_m_mixed(omega_sq, 32, 0.5),
                delta: 0.5,
                cone_samples: 50,
                trials: 50,
                omega_sq,
            };
            mc_mixed_fourth_moment(&cone, x.view(), &params, derive_seed(seed, 2))?
        }
        "fourth_moment" => {
            let cone = ConeModel::coordinate_subspace(32, 8)?;
            let m = required_m_mixed(omega_sq(&cone, derive_seed(seed, 0))?, 32, 0.5);
            check_fourth_moment(32, m, 0.5, 20, derive_seed(seed, 1))?
        }
        "abs_product" => {
            let c = ConeModel::coordinate_subspace(32, 2)?;
            let mut basis = normal_matrix(&mut rng_from_seed(derive_seed(seed, 0)), 32, 2);
            orthonormalize(&mut basis);
            let cp = ConeModel::subspace(basis)?;
            let (wc, wcp) = (
                omega_sq(&c, derive_seed(seed, 1))?,
                omega_sq(&cp, derive_seed(seed, 2))?,
            );
            let params = AbsProductParams {
                m: (DEFAULT_ABS_PRODUCT_C * wc.max(wcp)).ceil() as usize,
                delta: 0.2,
                pair_samples: 20,
                trials: 100,
                c: DEFAULT_ABS_PRODUCT_C,
                omega_sq_c: wc,
                omega_sq_cp: wcp,
            };
            mc_abs_product_concentration(&c, &cp, &params, derive_seed(seed, 3))?
        }
        "regularity" => {
            let (n, s) = (64, 4);
            let m = (8.0 * m0_l1_sparse(n, s)? * (n as f64).ln()).ceil() as usize;
            check_regularity_along_runs(n, s, m, 20, seed)?
        }
        "cone_projection" => {
            let cones = [
                (
                    "l1_descent",
                    ConeModel::l1_descent(vec![1, 0, -1, 0, 0, 1, 0, 0, 0, 0])?,
                ),
                ("orthant", ConeModel::nonneg_orthant(10)),
                ("subspace", ConeModel::coordinate_subspace(10, 4)?),
            ];
            let mut parts = Vec::new();
            for (i, (name, cone)) in cones.iter().enumerate() {
                parts.push((
                    *name,
                    check_cone_projection_identities(
                        cone,
                        10_000,
                        50,
                        derive_seed(seed, i as u64),
                    )?,
                ));
            }
            merge("cone_projection", 0.0, parts)
        }
        "projection_comparison" => check_projection_comparison(20, 3, 1000, seed)?,
        other => unreachable!("unknown lemma id {other}"),
    })
}

/// Gram-Schmidt on the columns.
fn orthonormalize(q: &mut ndarray::Array2<f64>) {
    for j in 0..q.ncols() {
        for k in 0..j {
            let proj = q.column(k).dot(&q.column(j));
            let col = q.column(k).to_owned();
            q.column_mut(j).scaled_add(-proj, &col);
        }
        let len = q.column(j).dot(&q.column(j)).sqrt();
        q.column_mut(j).mapv_inplace(|t| t / len);
    }
}

fn report_json(r: &LemmaReport) -> Value {
    let details = r
        .details
        .iter()
        .map(|(k, v)| (k.clone(), json_f64(*v)))
        .collect();
    object(vec![
        ("lemma_id", Value::from(r.lemma_id.clone())),
        ("trials", Value::from(r.trials)),
        ("worst_violation", json_f64(r.worst_violation)),
        ("threshold", json_f64(r.threshold)),
        ("passed", Value::Bool(r.passed)),
        ("notes", Value::from(r.notes.clone())),
        ("details", Value::Object(details)),
    ])
}

/// Writes `verify.json` and returns whether every selected lemma passed.
pub fn verify(cfg: &Config, base: u64, out: &Path) -> CliResult<bool> {
    let selected: Vec<String> = match cfg.verify.as_ref().and_then(|v| v.lemmas.clone()) {
        Some(ids) => ids,
        None => LEMMAS.iter().map(|s| s.to_string()).collect(),
    };
    if selected.is_empty() {
        return Err(CliError::Config("verify.lemmas must be nonempty".into()));
    }
    let mut indices = Vec::new();
    for id in &selected {
        match LEMMAS.iter().position(|l| l == id) {
            Some(i) => indices.push(i),
            None => {
                return Err(CliError::Config(format!(
                    "unknown lemma id `{id}`; known: {}",
                    LEMMAS.join(", ")
                )))
            }
        }
    }
    let reports: Vec<LemmaReport> = indices
        .par_iter()
        .map(|&i| run_lemma(LEMMAS[i], derive_seed(base, i as u64)))
        .collect::<pwfkit::Result<_>>()?;
    ensure_dir(out)?;
    write_json(
        &out.join("verify.json"),
        &Value::Array(reports.iter().map(report_json).collect()),
    )?;
    Ok(reports.iter().all(|r| r.passed))
}
