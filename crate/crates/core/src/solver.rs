//! Projected Wirtinger Flow: `z_{t+1} = P_K(z_t - mu_t grad L(z_t))`.

use ndarray::{Array1, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::constraints::ConstraintSet;
use crate::error::{check_len, invalid, Error, Result};
use crate::model::{
    dist_sign_invariant, estimate_signal_norm, grad_amplitude, grad_intensity, loss_amplitude,
    loss_intensity, norm, MeasurementSet,
};
use crate::rng::{rng_from_seed, unit_sphere};

/// Default cap constant: intensity runs require `mu <= c1 / n`.
pub const DEFAULT_C1: f64 = 1.0;
/// Default intensity learning parameter is `0.1 / n`.
pub const DEFAULT_MU_FACTOR: f64 = 0.1;
pub const DEFAULT_TOL_REL: f64 = 1e-7;
/// Runs abort once `||z|| > DIVERGENCE_FACTOR * norm_est`.
pub const DIVERGENCE_FACTOR: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Intensity,
    Amplitude,
}

/// How the intensity step `mu` is normalized by the signal-norm estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepScaling {
    /// `mu / norm_est^2`; invariant under rescaling of the signal.
    #[default]
    InverseSquare,
    /// `mu / norm_est`; agrees with the above when `||x|| = 1`.
    Inverse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub variant: Variant,
    /// Learning parameter for the intensity loss (ignored by amplitude).
    pub mu: f64,
    pub step_scaling: StepScaling,
    /// Upper bound constant in `mu <= c1 / n`.
    pub c1: f64,
    /// Maximum number of PWF updates.
    pub max_iters: usize,
    pub tol_rel: f64,
    pub record_every: usize,
}

impl SolverConfig {
    /// Intensity PWF for signals of length `n`, with `mu = 0.1 / n`.
    pub fn intensity(n: usize) -> Self {
        Self {
            variant: Variant::Intensity,
            mu: DEFAULT_MU_FACTOR / n.max(1) as f64,
            step_scaling: StepScaling::default(),
            c1: DEFAULT_C1,
            max_iters: 5000,
            tol_rel: DEFAULT_TOL_REL,
            record_every: 1,
        }
    }

    /// Amplitude PWF with unit step.
    pub fn amplitude() -> Self {
        Self {
            variant: Variant::Amplitude,
            mu: 1.0,
            step_scaling: StepScaling::default(),
            c1: DEFAULT_C1,
            max_iters: 200,
            tol_rel: DEFAULT_TOL_REL,
            record_every: 1,
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if self.max_iters == 0 {
            return invalid("max_iters must be at least 1");
        }
        if self.record_every == 0 {
            return invalid("record_every must be at least 1");
        }
        if !(self.tol_rel > 0.0) {
            return invalid(format!("tol_rel must be positive, got {}", self.tol_rel));
        }
        if self.variant == Variant::Intensity {
            if !(self.mu > 0.0) {
                return invalid(format!("mu must be positive, got {}", self.mu));
            }
            if self.mu > self.c1 / n as f64 {
                return invalid(format!(
                    "mu = {} exceeds c1 / n = {} / {n}",
                    self.mu, self.c1
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterRecord {
    pub tau: usize,
    pub loss: f64,
    pub grad_norm: f64,
    /// The step `mu_tau` scheduled at this iterate.
    pub step: f64,
    pub dist: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub records: Vec<IterRecord>,
    pub final_z: Array1<f64>,
    pub converged: bool,
    pub iterations_used: usize,
    /// Value of the stopping criterion at `final_z`.
    pub final_criterion: f64,
}

/// `mu_0 = 0`; afterwards `mu / norm_est^2` (or `mu / norm_est`) for the
/// intensity loss and `1` for the amplitude loss.
pub fn step_size(config: &SolverConfig, tau: usize, norm_est: f64) -> Result<f64> {
    if config.variant == Variant::Intensity && !(norm_est > 0.0) {
        return invalid(format!(
            "intensity step needs a positive norm estimate, got {norm_est}"
        ));
    }
    if tau == 0 {
        return Ok(0.0);
    }
    Ok(match config.variant {
        Variant::Amplitude => 1.0,
        Variant::Intensity => match config.step_scaling {
            StepScaling::InverseSquare => config.mu / (norm_est * norm_est),
            StepScaling::Inverse => config.mu / norm_est,
        },
    })
}

/// Loss value and gradient for the configured variant.
pub fn loss_and_grad(
    variant: Variant,
    meas: &MeasurementSet,
    z: ArrayView1<f64>,
) -> Result<(f64, Array1<f64>)> {
    let (a, y) = (meas.a.view(), meas.y.view());
    match variant {
        Variant::Intensity => Ok((loss_intensity(a, y, z)?, grad_intensity(a, y, z)?)),
        Variant::Amplitude => Ok((loss_amplitude(a, y, z)?, grad_amplitude(a, y, z)?)),
    }
}

/// Runs PWF from `z0`.
///
/// The first update is a pure projection since `mu_0 = 0`. A run stops once
/// `dist(z, x) / ||x|| <= tol_rel` when `x_true` is given, or once
/// `||grad|| / (1 + ||z||) <= tol_rel` otherwise, checked from `tau = 1` on.
/// Records are kept every `record_every` iterates plus the final one.
pub fn pwf_run(
    meas: &MeasurementSet,
    set: &ConstraintSet,
    config: &SolverConfig,
    z0: ArrayView1<f64>,
    x_true: Option<ArrayView1<f64>>,
) -> Result<Trace> {
    pwf_run_observed(meas, set, config, z0, x_true, |_, _| {})
}

/// [`pwf_run`] that also hands every iterate `(tau, z_tau)` to `observe`,
/// starting with `z_0`.
pub fn pwf_run_observed(
    meas: &MeasurementSet,
    set: &ConstraintSet,
    config: &SolverConfig,
    z0: ArrayView1<f64>,
    x_true: Option<ArrayView1<f64>>,
    mut observe: impl FnMut(usize, ArrayView1<f64>),
) -> Result<Trace> {
    let n = meas.n();
    check_len("z0", z0.len(), n)?;
    check_len("constraint set", set.dim, n)?;
    if let Some(x) = x_true {
        check_len("x_true", x.len(), n)?;
    }
    config.validate(n)?;
    let norm_est = estimate_signal_norm(meas.y.view())?;
    // Validates the norm estimate up front for intensity runs.
    step_size(config, 1, norm_est)?;
    let x_norm = x_true.map(norm);

    let mut z = z0.to_owned();
    let mut records = Vec::new();
    let mut tau = 0;
    loop {
        observe(tau, z.view());
        let (loss, grad) = loss_and_grad(config.variant, meas, z.view())?;
        let grad_norm = norm(grad.view());
        let dist = x_true
            .map(|x| dist_sign_invariant(z.view(), x))
            .transpose()?;
        let criterion = match (dist, x_norm) {
            (Some(d), Some(xn)) if xn > 0.0 => d / xn,
            (Some(d), _) => d,
            _ => grad_norm / (1.0 + norm(z.view())),
        };
        let step = step_size(config, tau, norm_est)?;
        let record = IterRecord {
            tau,
            loss,
            grad_norm,
            step,
            dist,
        };

        let converged = tau >= 1 && criterion <= config.tol_rel;
        if converged || tau == config.max_iters {
            records.push(record);
            return Ok(Trace {
                records,
                final_z: z,
                converged,
                iterations_used: tau,
                final_criterion: criterion,
            });
        }
        if tau % config.record_every == 0 {
            records.push(record);
        }

        z.scaled_add(-step, &grad);
        z = set.project(z.view())?;
        tau += 1;

        let z_norm = norm(z.view());
        let blown_up = norm_est > 0.0 && z_norm > DIVERGENCE_FACTOR * norm_est;
        if !z_norm.is_finite() || blown_up {
            return Err(Error::Diverged {
                tau,
                trace: Box::new(Trace {
                    records,
                    final_z: z,
                    converged: false,
                    iterations_used: tau,
                    final_criterion: f64::NAN,
                }),
            });
        }
    }
}

/// `x + rho ||x|| u` with `u` uniform on the unit sphere, so that
/// `||z0 - x|| = rho ||x||`.
pub fn init_oracle(x: ArrayView1<f64>, rho: f64, seed: u64) -> Result<Array1<f64>> {
    let x_norm = norm(x);
    if x_norm == 0.0 {
        return invalid("oracle initialization needs a nonzero signal");
    }
    if !(rho >= 0.0) {
        return invalid(format!("rho must be nonnegative, got {rho}"));
    }
    let u = unit_sphere(&mut rng_from_seed(seed), x.len());
    Ok(&x + &(u * (rho * x_norm)))
}

pub const SPECTRAL_MAX_STEPS: usize = 200;
pub const SPECTRAL_TOL: f64 = 1e-8;

/// Spectral initializer: `sqrt(mean(y)) v` with `v` the leading unit
/// eigenvector of `(1/m) sum_r y_r a_r a_r^T`, then projected onto `set`.
///
/// Power iteration starts from a Gaussian vector seeded by `meas.seed` and
/// stops after 200 steps or when `||Mv - (v.Mv) v|| <= 1e-8 (v.Mv)`. The
/// eigenvector sign is fixed so that its largest-magnitude entry is positive.
pub fn init_spectral(meas: &MeasurementSet, set: &ConstraintSet) -> Result<Array1<f64>> {
    let (a, y) = (meas.a.view(), meas.y.view());
    if meas.m() == 0 {
        return invalid("spectral initialization needs at least one measurement");
    }
    if y.iter().all(|v| *v == 0.0) {
        return invalid("spectral initialization needs a nonzero intensity");
    }
    let m = meas.m() as f64;
    let apply = |v: &Array1<f64>| -> Array1<f64> {
        let mut w = a.dot(v);
        w.zip_mut_with(&y, |p, yr| *p *= yr / m);
        a.t().dot(&w)
    };

    let mut v = unit_sphere(&mut rng_from_seed(meas.seed), meas.n());
    for _ in 0..SPECTRAL_MAX_STEPS {
        let mv = apply(&v);
        let rayleigh = v.dot(&mv);
        let residual = norm((&mv - &(&v * rayleigh)).view());
        let mv_norm = norm(mv.view());
        if mv_norm == 0.0 {
            break;
        }
        v = mv / mv_norm;
        if residual <= SPECTRAL_TOL * rayleigh.abs() {
            break;
        }
    }
    let pivot = v
        .iter()
        .copied()
        .fold(0.0_f64, |acc, t| if t.abs() > acc.abs() { t } else { acc });
    if pivot < 0.0 {
        v.mapv_inplace(|t| -t);
    }
    let scale = estimate_signal_norm(y)?;
    set.project((v * scale).view())
}
