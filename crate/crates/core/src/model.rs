//! Signals, Gaussian measurements, the two least-squares losses and their
//! (generalized) gradients.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::seq::index;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, invalid, Result};
use crate::rng::{normal_matrix, rng_from_seed};

/// Structural prior attached to a signal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Structure {
    Sparse { s: usize },
    Discrete { alphabet: Vec<f64> },
    PiecewiseConstant { segments: usize },
    Dense,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Signal {
    pub values: Array1<f64>,
    pub structure: Structure,
}

impl Signal {
    /// Wraps `values`, checking that they satisfy `structure`.
    pub fn new(values: Array1<f64>, structure: Structure) -> Result<Self> {
        match &structure {
            Structure::Sparse { s } => {
                let nnz = values.iter().filter(|v| **v != 0.0).count();
                if nnz != *s {
                    return invalid(format!("sparse({s}) signal has {nnz} nonzeros"));
                }
            }
            Structure::Discrete { alphabet } => {
                if let Some(v) = values.iter().find(|v| !alphabet.contains(v)) {
                    return invalid(format!("entry {v} is not in the alphabet"));
                }
            }
            Structure::PiecewiseConstant { .. } | Structure::Dense => {}
        }
        Ok(Self { values, structure })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn norm(&self) -> f64 {
        norm(self.values.view())
    }
}

/// Sensing matrix with its intensity measurements.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementSet {
    pub a: Array2<f64>,
    pub y: Array1<f64>,
    pub seed: u64,
}

impl MeasurementSet {
    pub fn new(a: Array2<f64>, y: Array1<f64>, seed: u64) -> Result<Self> {
        check_len("intensities", y.len(), a.nrows())?;
        check_nonneg(y.view())?;
        Ok(Self { a, y, seed })
    }

    /// Draws an `m x n` Gaussian map from `seed` and measures `x` with it.
    pub fn synthesize(x: ArrayView1<f64>, m: usize, seed: u64) -> Result<Self> {
        let a = gen_gaussian_matrix(m, x.len(), seed)?;
        let y = forward_intensity(a.view(), x)?;
        Ok(Self { a, y, seed })
    }

    pub fn m(&self) -> usize {
        self.a.nrows()
    }

    pub fn n(&self) -> usize {
        self.a.ncols()
    }
}

pub(crate) fn norm(v: ArrayView1<f64>) -> f64 {
    v.dot(&v).sqrt()
}

fn check_nonneg(y: ArrayView1<f64>) -> Result<()> {
    if let Some((r, v)) = y.iter().enumerate().find(|(_, v)| !(**v >= 0.0)) {
        return invalid(format!("intensity y[{r}] = {v} is negative or NaN"));
    }
    Ok(())
}

fn check_shapes(a: ArrayView2<f64>, y: ArrayView1<f64>, z: ArrayView1<f64>) -> Result<()> {
    check_len("z", z.len(), a.ncols())?;
    check_len("y", y.len(), a.nrows())
}

/// I.i.d. standard normal `m x n` matrix, filled row by row from
/// `ChaCha8Rng::seed_from_u64(seed)`.
pub fn gen_gaussian_matrix(m: usize, n: usize, seed: u64) -> Result<Array2<f64>> {
    if m == 0 || n == 0 {
        return invalid(format!("matrix dimensions must be positive, got {m} x {n}"));
    }
    Ok(normal_matrix(&mut rng_from_seed(seed), m, n))
}

/// `y_r = (a_r . x)^2`.
pub fn forward_intensity(a: ArrayView2<f64>, x: ArrayView1<f64>) -> Result<Array1<f64>> {
    check_len("x", x.len(), a.ncols())?;
    Ok(a.dot(&x).mapv(|v| v * v))
}

/// `(1/4m) sum_r (y_r - (a_r . z)^2)^2`.
pub fn loss_intensity(a: ArrayView2<f64>, y: ArrayView1<f64>, z: ArrayView1<f64>) -> Result<f64> {
    check_shapes(a, y, z)?;
    let m = a.nrows() as f64;
    let az = a.dot(&z);
    let sum: f64 = az.iter().zip(y).map(|(p, yr)| (yr - p * p).powi(2)).sum();
    Ok(sum / (4.0 * m))
}

/// `(1/m) sum_r ((a_r . z)^2 - y_r) (a_r . z) a_r`.
pub fn grad_intensity(
    a: ArrayView2<f64>,
    y: ArrayView1<f64>,
    z: ArrayView1<f64>,
) -> Result<Array1<f64>> {
    check_shapes(a, y, z)?;
    let m = a.nrows() as f64;
    let mut w = a.dot(&z);
    w.zip_mut_with(&y, |p, yr| *p = (*p * *p - yr) * *p / m);
    Ok(a.t().dot(&w))
}

/// `(1/2m) sum_r (sqrt(y_r) - |a_r . z|)^2`.
pub fn loss_amplitude(a: ArrayView2<f64>, y: ArrayView1<f64>, z: ArrayView1<f64>) -> Result<f64> {
    check_shapes(a, y, z)?;
    check_nonneg(y)?;
    let m = a.nrows() as f64;
    let az = a.dot(&z);
    let sum: f64 = az
        .iter()
        .zip(y)
        .map(|(p, yr)| (yr.sqrt() - p.abs()).powi(2))
        .sum();
    Ok(sum / (2.0 * m))
}

/// `(1/m) sum_r (|a_r . z| - sqrt(y_r)) sgn(a_r . z) a_r`, with `sgn(0) = 1`.
pub fn grad_amplitude(
    a: ArrayView2<f64>,
    y: ArrayView1<f64>,
    z: ArrayView1<f64>,
) -> Result<Array1<f64>> {
    check_shapes(a, y, z)?;
    check_nonneg(y)?;
    let m = a.nrows() as f64;
    let mut w = a.dot(&z);
    w.zip_mut_with(&y, |p, yr| {
        let sgn = if *p >= 0.0 { 1.0 } else { -1.0 };
        *p = (p.abs() - yr.sqrt()) * sgn / m;
    });
    Ok(a.t().dot(&w))
}

/// `min(||z - x||, ||z + x||)`.
pub fn dist_sign_invariant(z: ArrayView1<f64>, x: ArrayView1<f64>) -> Result<f64> {
    check_len("z", z.len(), x.len())?;
    let (mut minus, mut plus) = (0.0, 0.0);
    for (zi, xi) in z.iter().zip(x) {
        minus += (zi - xi).powi(2);
        plus += (zi + xi).powi(2);
    }
    Ok(minus.min(plus).sqrt())
}

/// Returns `x` or `-x`, whichever is closer to `z`.
pub fn align_sign(z: ArrayView1<f64>, x: ArrayView1<f64>) -> Array1<f64> {
    if z.dot(&x) >= 0.0 {
        x.to_owned()
    } else {
        -&x
    }
}

/// `sqrt(mean(y))`, which estimates `||x||` since `E[y_r] = ||x||^2` for
/// Gaussian rows.
pub fn estimate_signal_norm(y: ArrayView1<f64>) -> Result<f64> {
    if y.is_empty() {
        return invalid("cannot estimate the signal norm from zero measurements");
    }
    check_nonneg(y)?;
    Ok((y.sum() / y.len() as f64).sqrt())
}

/// Draws a random signal of length `n` obeying `structure`.
///
/// Sparse supports are uniform `s`-subsets with standard normal values;
/// discrete entries are uniform over the alphabet; piecewise-constant signals
/// use uniformly placed breakpoints and standard normal levels.
pub fn gen_structured_signal(structure: &Structure, n: usize, seed: u64) -> Result<Signal> {
    if n == 0 {
        return invalid("signal length must be positive");
    }
    let mut rng = rng_from_seed(seed);
    let values = match structure {
        Structure::Sparse { s } => {
            if *s > n {
                return invalid(format!("sparsity {s} exceeds length {n}"));
            }
            let mut support = index::sample(&mut rng, n, *s).into_vec();
            support.sort_unstable();
            let mut x = Array1::zeros(n);
            for i in support {
                x[i] = nonzero_normal(&mut rng);
            }
            x
        }
        Structure::Discrete { alphabet } => {
            if alphabet.is_empty() {
                return invalid("alphabet must be nonempty");
            }
            Array1::from_shape_fn(n, |_| alphabet[rng.random_range(0..alphabet.len())])
        }
        Structure::PiecewiseConstant { segments } => {
            if *segments == 0 || *segments > n {
                return invalid(format!("segments must lie in 1..={n}, got {segments}"));
            }
            let mut starts: Vec<usize> = index::sample(&mut rng, n - 1, segments - 1)
                .into_iter()
                .map(|i| i + 1)
                .collect();
            starts.sort_unstable();
            let mut x = Array1::zeros(n);
            let mut level: f64 = rng.sample(StandardNormal);
            let mut next = starts.into_iter().peekable();
            for i in 0..n {
                if next.peek() == Some(&i) {
                    next.next();
                    level = rng.sample(StandardNormal);
                }
                x[i] = level;
            }
            x
        }
        Structure::Dense => crate::rng::normal_vec(&mut rng, n),
    };
    Signal::new(values, structure.clone())
}

fn nonzero_normal<R: Rng>(rng: &mut R) -> f64 {
    loop {
        let v: f64 = rng.sample(StandardNormal);
        if v != 0.0 {
            return v;
        }
    }
}
