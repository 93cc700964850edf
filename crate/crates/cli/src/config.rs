//! TOML experiment configuration. See the README for the full schema.

use std::path::{Path, PathBuf};

use ndarray::ArrayView1;
use pwfkit::constraints::{sublevel_from_signal, ConstraintSet, Regularizer, SetKind};
use pwfkit::geometry::ConeModel;
use pwfkit::model::Structure;
use pwfkit::solver::{SolverConfig, StepScaling, Variant};
use serde::Deserialize;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Run,
    Grid,
    Width,
    Verify,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub mode: Option<Mode>,
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub threads: Option<usize>,
    pub signal: Option<SignalConfig>,
    pub measurements: Option<MeasurementConfig>,
    pub solver: Option<SolverSection>,
    pub constraint: Option<ConstraintConfig>,
    pub init: Option<InitConfig>,
    pub grid: Option<GridConfig>,
    pub width: Option<WidthConfig>,
    pub verify: Option<VerifyConfig>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignalConfig {
    pub n: usize,
    pub structure: Option<Structure>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasurementConfig {
    pub m: usize,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    pub variant: Variant,
    pub mu: Option<f64>,
    pub step_scaling: Option<StepScaling>,
    pub c1: Option<f64>,
    pub max_iters: Option<usize>,
    pub tol_rel: Option<f64>,
    pub record_every: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintKind {
    Unconstrained,
    L1Ball,
    TopK,
    Discrete,
    Nonneg,
    TvIso,
    TvAniso,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintConfig {
    pub kind: ConstraintKind,
    /// Fixed l1 radius instead of `||x||_1`.
    pub radius: Option<f64>,
    /// Fixed sparsity instead of `||x||_0`.
    pub k: Option<usize>,
    pub alphabet: Option<Vec<f64>>,
    /// TV exponent.
    pub p: Option<f64>,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitConfig {
    Oracle { rho: f64 },
    Spectral,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub s: Vec<usize>,
    /// Explicit measurement counts.
    pub m: Option<Vec<usize>>,
    /// Multiples of `2 s ln(n/s)`, rounded up.
    pub m_factor: Option<Vec<f64>>,
    pub trials: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ConeSpec {
    Orthant {
        n: usize,
    },
    /// Span of the first `dim` coordinate axes.
    Subspace {
        n: usize,
        dim: usize,
    },
    /// Descent cone of the l1 norm at an `s`-sparse signal.
    L1Descent {
        n: usize,
        s: usize,
    },
    TvDescent {
        n: usize,
    },
    DiscreteDescent {
        n: usize,
    },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WidthConfig {
    pub cone: ConeSpec,
    pub trials: usize,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyConfig {
    pub lemmas: Option<Vec<String>>,
}

pub fn load(path: &Path) -> CliResult<Config> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn config_err<T>(msg: impl Into<String>) -> CliResult<T> {
    Err(CliError::Config(msg.into()))
}

impl Config {
    pub fn signal(&self) -> CliResult<&SignalConfig> {
        match &self.signal {
            Some(s) if s.n >= 1 => Ok(s),
            Some(_) => config_err("signal.n must be at least 1"),
            None => config_err("missing [signal] section"),
        }
    }

    pub fn m(&self) -> CliResult<usize> {
        match &self.measurements {
            Some(meas) if meas.m >= 1 => Ok(meas.m),
            Some(_) => config_err("measurements.m must be at least 1"),
            None => config_err("missing [measurements] section"),
        }
    }

    /// Solver settings for length-`n` signals: the variant's defaults with
    /// any given fields overriding them.
    pub fn solver(&self, n: usize) -> CliResult<SolverConfig> {
        let Some(sec) = &self.solver else {
            return config_err("missing [solver] section");
        };
        let mut cfg = match sec.variant {
            Variant::Intensity => SolverConfig::intensity(n),
            Variant::Amplitude => SolverConfig::amplitude(),
        };
        if let Some(mu) = sec.mu {
            cfg.mu = mu;
        }
        if let Some(scaling) = sec.step_scaling {
            cfg.step_scaling = scaling;
        }
        if let Some(c1) = sec.c1 {
            cfg.c1 = c1;
        }
        if let Some(max_iters) = sec.max_iters {
            cfg.max_iters = max_iters;
        }
        if let Some(tol) = sec.tol_rel {
            cfg.tol_rel = tol;
        }
        if let Some(every) = sec.record_every {
            cfg.record_every = every;
        }
        cfg.validate(n)?;
        Ok(cfg)
    }

    /// Oracle start at `rho = 1/15` (amplitude) or `1/8` (intensity) unless
    /// configured.
    pub fn init(&self, variant: Variant) -> InitConfig {
        self.init.unwrap_or(match variant {
            Variant::Amplitude => InitConfig::Oracle { rho: 1.0 / 15.0 },
            Variant::Intensity => InitConfig::Oracle { rho: 1.0 / 8.0 },
        })
    }

    /// The constraint set for ground truth `x`; defaults to unconstrained.
    pub fn constraint_set(&self, x: ArrayView1<f64>) -> CliResult<ConstraintSet> {
        let n = x.len();
        let Some(c) = &self.constraint else {
            return Ok(ConstraintSet::new(SetKind::Unconstrained, n)?);
        };
        let set = match c.kind {
            ConstraintKind::Unconstrained => ConstraintSet::new(SetKind::Unconstrained, n)?,
            ConstraintKind::Nonneg => ConstraintSet::new(SetKind::Nonneg, n)?,
            ConstraintKind::L1Ball => match c.radius {
                Some(radius) => ConstraintSet::new(SetKind::L1Ball { radius }, n)?,
                None => sublevel_from_signal(&Regularizer::L1, x)?,
            },
            ConstraintKind::TopK => match c.k {
                Some(k) => ConstraintSet::new(SetKind::TopK { k }, n)?,
                None => sublevel_from_signal(&Regularizer::L0, x)?,
            },
            ConstraintKind::Discrete => {
                let alphabet = match (
                    &c.alphabet,
                    &self.signal.as_ref().and_then(|s| s.structure.clone()),
                ) {
                    (Some(a), _) => a.clone(),
                    (None, Some(Structure::Discrete { alphabet })) => alphabet.clone(),
                    _ => return config_err("discrete constraint needs an alphabet"),
                };
                sublevel_from_signal(&Regularizer::DiscreteIndicator { alphabet }, x)?
            }
            ConstraintKind::TvIso => sublevel_from_signal(
                &Regularizer::TvIso {
                    p: c.p.unwrap_or(1.0),
                },
                x,
            )?,
            ConstraintKind::TvAniso => sublevel_from_signal(
                &Regularizer::TvAniso {
                    p: c.p.unwrap_or(1.0),
                },
                x,
            )?,
        };
        Ok(set)
    }

    /// Rejects unprojectable constraint kinds before any work is done.
    pub fn check_constraint_supported(&self) -> CliResult<()> {
        match self.constraint.as_ref().map(|c| c.kind) {
            Some(ConstraintKind::TvIso | ConstraintKind::TvAniso) => Err(CliError::Unsupported(
                "total-variation sublevel sets have no closed-form projection".into(),
            )),
            _ => Ok(()),
        }
    }
}

impl GridConfig {
    pub fn validate(&self, n: usize) -> CliResult<()> {
        if self.trials == 0 {
            return config_err("grid.trials must be at least 1");
        }
        if self.s.is_empty() {
            return config_err("grid.s must be nonempty");
        }
        if let Some(bad) = self.s.iter().find(|s| **s == 0 || **s > n) {
            return config_err(format!("grid.s entry {bad} is outside 1..={n}"));
        }
        match (&self.m, &self.m_factor) {
            (Some(m), None) if !m.is_empty() && m.iter().all(|v| *v >= 1) => Ok(()),
            (None, Some(f)) if !f.is_empty() && f.iter().all(|v| *v > 0.0 && v.is_finite()) => {
                Ok(())
            }
            (Some(_), Some(_)) => config_err("give exactly one of grid.m and grid.m_factor"),
            _ => config_err("grid needs a nonempty grid.m or positive grid.m_factor list"),
        }
    }
}

impl ConeSpec {
    pub fn build(&self) -> CliResult<ConeModel> {
        match *self {
            ConeSpec::Orthant { n } if n >= 1 => Ok(ConeModel::nonneg_orthant(n)),
            ConeSpec::Orthant { .. } => config_err("cone.n must be at least 1"),
            ConeSpec::Subspace { n, dim } => Ok(ConeModel::coordinate_subspace(n, dim)?),
            ConeSpec::L1Descent { n, s } => {
                if s == 0 || s > n {
                    return config_err(format!("cone.s must lie in 1..={n}"));
                }
                Ok(ConeModel::l1_descent(
                    (0..n).map(|i| i8::from(i < s)).collect(),
                )?)
            }
            ConeSpec::TvDescent { n } | ConeSpec::DiscreteDescent { n } if n == 0 => {
                config_err("cone.n must be at least 1")
            }
            ConeSpec::TvDescent { .. } | ConeSpec::DiscreteDescent { .. } => Err(
                CliError::Unsupported("no polar projection for this descent cone".into()),
            ),
        }
    }
}
