use std::path::Path;

use ndarray::Array1;
use pwfkit::geometry::{m0_l1_sparse, statistical_dimension_mc};
use pwfkit::model::{dist_sign_invariant, gen_structured_signal, MeasurementSet, Structure};
use pwfkit::rng::derive_seed;
use pwfkit::solver::{init_oracle, init_spectral, pwf_run, SolverConfig, Trace};
use rayon::prelude::*;
use serde_json::Value;

use crate::config::{ConeSpec, Config, InitConfig};
use crate::error::{CliError, CliResult};
use crate::output::{ensure_dir, fmt_f64, json_f64, object, write_csv, write_json};

pub const TRACE_HEADER: &str = "tau,loss,grad_norm,step,dist";
pub const GRID_HEADER: &str = "s,m,trials,successes,median_iters,median_final_dist";

struct Outcome {
    trace: Trace,
    diverged: bool,
    dist_rel: f64,
}

/// One recovery: signal from `derive_seed(seed, 0)`, measurements from
/// `derive_seed(seed, 1)`, oracle start from `derive_seed(seed, 2)`.
fn recover(
    cfg: &Config,
    structure: &Structure,
    n: usize,
    m: usize,
    solver: &SolverConfig,
    seed: u64,
) -> CliResult<Outcome> {
    let x = gen_structured_signal(structure, n, derive_seed(seed, 0))?.values;
    let meas = MeasurementSet::synthesize(x.view(), m, derive_seed(seed, 1))?;
    let set = cfg.constraint_set(x.view())?;
    let z0: Array1<f64> = match cfg.init(solver.variant) {
        InitConfig::Oracle { rho } => init_oracle(x.view(), rho, derive_seed(seed, 2))?,
        InitConfig::Spectral => init_spectral(&meas, &set)?,
    };
    let (trace, diverged) = match pwf_run(&meas, &set, solver, z0.view(), Some(x.view())) {
        Ok(trace) => (trace, false),
        Err(pwfkit::Error::Diverged { trace, .. }) => (*trace, true),
        Err(e) => return Err(e.into()),
    };
    let x_norm = x.dot(&x).sqrt();
    let dist_rel = if diverged {
        f64::INFINITY
    } else {
        let d = dist_sign_invariant(trace.final_z.view(), x.view())?;
        if x_norm > 0.0 {
            d / x_norm
        } else {
            d
        }
    };
    Ok(Outcome {
        trace,
        diverged,
        dist_rel,
    })
}

fn structure_of(cfg: &Config) -> CliResult<Structure> {
    cfg.signal()?
        .structure
        .clone()
        .ok_or_else(|| CliError::Config("signal.structure is required".into()))
}

/// Writes `trace.csv` and `summary.json` for trial seed `derive_seed(base, 0)`.
pub fn run(cfg: &Config, base: u64, out: &Path) -> CliResult<()> {
    cfg.check_constraint_supported()?;
    let n = cfg.signal()?.n;
    let structure = structure_of(cfg)?;
    let m = cfg.m()?;
    let solver = cfg.solver(n)?;
    let seed = derive_seed(base, 0);
    let outcome = recover(cfg, &structure, n, m, &solver, seed)?;

    ensure_dir(out)?;
    let rows: Vec<String> = outcome
        .trace
        .records
        .iter()
        .map(|r| {
            let dist = r.dist.map(fmt_f64).unwrap_or_default();
            format!(
                "{},{},{},{},{}",
                r.tau,
                fmt_f64(r.loss),
                fmt_f64(r.grad_norm),
                fmt_f64(r.step),
                dist
            )
        })
        .collect();
    write_csv(&out.join("trace.csv"), TRACE_HEADER, &rows)?;
    let summary = object(vec![
        ("converged", Value::Bool(outcome.trace.converged)),
        ("diverged", Value::Bool(outcome.diverged)),
        (
            "iterations_used",
            Value::from(outcome.trace.iterations_used),
        ),
        ("final_dist_rel", json_f64(outcome.dist_rel)),
        ("seed", Value::from(base)),
        ("trial_seed", Value::from(seed)),
    ]);
    write_json(&out.join("summary.json"), &summary)
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let k = values.len();
    if k % 2 == 1 {
        values[k / 2]
    } else {
        0.5 * (values[k / 2 - 1] + values[k / 2])
    }
}

/// Writes `grid.csv`. Cells are `(s, m)` pairs with `s` outer; trial `t` of
/// cell `c` uses seed `derive_seed(base, c * trials + t)`. A trial succeeds
/// when the relative distance reaches `tol_rel`.
pub fn grid(cfg: &Config, base: u64, out: &Path) -> CliResult<()> {
    cfg.check_constraint_supported()?;
    let n = cfg.signal()?.n;
    if let Some(s) = &cfg.signal()?.structure {
        if !matches!(s, Structure::Sparse { .. }) {
            return Err(CliError::Config(
                "grid runs use sparse signals; drop signal.structure".into(),
            ));
        }
    }
    let Some(grid) = &cfg.grid else {
        return Err(CliError::Config("missing [grid] section".into()));
    };
    grid.validate(n)?;
    let solver = cfg.solver(n)?;

    let mut cells = Vec::new();
    for &s in &grid.s {
        match (&grid.m, &grid.m_factor) {
            (Some(ms), _) => cells.extend(ms.iter().map(|&m| (s, m))),
            (None, Some(factors)) => {
                let m0 = m0_l1_sparse(n, s)?;
                cells.extend(
                    factors
                        .iter()
                        .map(|f| (s, ((f * m0).ceil() as usize).max(1))),
                );
            }
            (None, None) => unreachable!("validated"),
        }
    }
    let trials = grid.trials;
    let jobs: Vec<(usize, usize)> = (0..cells.len())
        .flat_map(|c| (0..trials).map(move |t| (c, t)))
        .collect();
    let results: Vec<(bool, f64, f64)> = jobs
        .par_iter()
        .map(|&(c, t)| {
            let (s, m) = cells[c];
            let seed = derive_seed(base, (c * trials + t) as u64);
            let o = recover(cfg, &Structure::Sparse { s }, n, m, &solver, seed)?;
            let success = !o.diverged && o.dist_rel <= solver.tol_rel;
            Ok((success, o.trace.iterations_used as f64, o.dist_rel))
        })
        .collect::<CliResult<_>>()?;

    ensure_dir(out)?;
    let rows: Vec<String> = cells
        .iter()
        .enumerate()
        .map(|(c, (s, m))| {
            let cell = &results[c * trials..(c + 1) * trials];
            let successes = cell.iter().filter(|r| r.0).count();
            let mut iters: Vec<f64> = cell.iter().map(|r| r.1).collect();
            let mut dists: Vec<f64> = cell.iter().map(|r| r.2).collect();
            format!(
                "{s},{m},{trials},{successes},{},{}",
                fmt_f64(median(&mut iters)),
                fmt_f64(median(&mut dists))
            )
        })
        .collect();
    write_csv(&out.join("grid.csv"), GRID_HEADER, &rows)
}

/// Writes `width.json` from trial seed `derive_seed(base, 0)`.
pub fn width(cfg: &Config, base: u64, out: &Path) -> CliResult<()> {
    let Some(w) = &cfg.width else {
        return Err(CliError::Config("missing [width] section".into()));
    };
    let cone = w.cone.build()?;
    let est = statistical_dimension_mc(&cone, w.trials, derive_seed(base, 0))?;
    let reference = match w.cone {
        ConeSpec::L1Descent { n, s } => json_f64(m0_l1_sparse(n, s)?),
        _ => Value::Null,
    };
    ensure_dir(out)?;
    let value = object(vec![
        ("mean_sq", json_f64(est.mean_sq)),
        ("mean", json_f64(est.mean)),
        ("stderr", json_f64(est.stderr)),
        ("trials", Value::from(est.trials)),
        ("reference", reference),
        ("seed", Value::from(base)),
    ]);
    write_json(&out.join("width.json"), &value)
}
