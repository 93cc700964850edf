//! Regularizers and Euclidean projection onto their sublevel sets
//! `K = {z : R(z) <= R(x)}`.

use std::cmp::Ordering;

use ndarray::{Array1, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, invalid, Error, Result};

/// A structure-promoting penalty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Regularizer {
    L1,
    L0,
    /// `sum_ij (sqrt(dv^2 + dh^2))^p` over forward differences of an image.
    TvIso {
        p: f64,
    },
    /// `sum_ij |dv|^p + |dh|^p` over forward differences of an image.
    TvAniso {
        p: f64,
    },
    /// `0` on vectors whose entries all lie in `alphabet`, `+inf` otherwise.
    DiscreteIndicator {
        alphabet: Vec<f64>,
    },
    None,
}

impl Regularizer {
    pub fn validate(&self) -> Result<()> {
        match self {
            Regularizer::TvIso { p } | Regularizer::TvAniso { p } if !(*p > 0.0) => {
                invalid(format!("TV exponent must be positive, got {p}"))
            }
            Regularizer::DiscreteIndicator { alphabet } => validate_alphabet(alphabet),
            _ => Ok(()),
        }
    }

    /// Evaluates the penalty on a vector. TV kinds need image data and fail
    /// here; use [`Regularizer::evaluate_image`] for those.
    pub fn evaluate(&self, z: ArrayView1<f64>) -> Result<f64> {
        self.validate()?;
        match self {
            Regularizer::L1 => Ok(z.iter().map(|v| v.abs()).sum()),
            Regularizer::L0 => Ok(z.iter().filter(|v| **v != 0.0).count() as f64),
            Regularizer::TvIso { .. } | Regularizer::TvAniso { .. } => {
                invalid("total variation needs 2D shape metadata (n1 x n2)")
            }
            Regularizer::DiscreteIndicator { alphabet } => {
                Ok(if z.iter().all(|v| alphabet.contains(v)) {
                    0.0
                } else {
                    f64::INFINITY
                })
            }
            Regularizer::None => Ok(0.0),
        }
    }

    /// Evaluates the penalty on an `n1 x n2` image. Differences past the last
    /// row or column are taken as zero.
    pub fn evaluate_image(&self, img: ArrayView2<f64>) -> Result<f64> {
        self.validate()?;
        let (n1, n2) = img.dim();
        let diffs = |i: usize, j: usize| {
            let dv = if i + 1 < n1 {
                img[[i + 1, j]] - img[[i, j]]
            } else {
                0.0
            };
            let dh = if j + 1 < n2 {
                img[[i, j + 1]] - img[[i, j]]
            } else {
                0.0
            };
            (dv, dh)
        };
        let pixels = (0..n1).flat_map(|i| (0..n2).map(move |j| (i, j)));
        match self {
            Regularizer::TvIso { p } => Ok(pixels
                .map(|(i, j)| {
                    let (dv, dh) = diffs(i, j);
                    dv.hypot(dh).powf(*p)
                })
                .sum()),
            Regularizer::TvAniso { p } => Ok(pixels
                .map(|(i, j)| {
                    let (dv, dh) = diffs(i, j);
                    dv.abs().powf(*p) + dh.abs().powf(*p)
                })
                .sum()),
            other => {
                let flat: Array1<f64> = img.iter().copied().collect();
                other.evaluate(flat.view())
            }
        }
    }
}

fn validate_alphabet(alphabet: &[f64]) -> Result<()> {
    if alphabet.is_empty() {
        return invalid("alphabet must be nonempty");
    }
    if alphabet.iter().any(|a| !a.is_finite()) || alphabet.windows(2).any(|w| w[0] >= w[1]) {
        return invalid("alphabet must be finite and strictly increasing");
    }
    Ok(())
}

/// The closed, nonempty sets PWF can project onto.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SetKind {
    Unconstrained,
    L1Ball { radius: f64 },
    TopK { k: usize },
    Discrete { alphabet: Vec<f64> },
    Nonneg,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintSet {
    pub kind: SetKind,
    pub dim: usize,
}

impl ConstraintSet {
    pub fn new(kind: SetKind, dim: usize) -> Result<Self> {
        match &kind {
            SetKind::L1Ball { radius } if !(*radius >= 0.0 && radius.is_finite()) => {
                return invalid(format!(
                    "l1 radius must be finite and nonnegative, got {radius}"
                ));
            }
            SetKind::TopK { k } if *k > dim => {
                return invalid(format!("top-k with k = {k} exceeds dimension {dim}"));
            }
            SetKind::Discrete { alphabet } => validate_alphabet(alphabet)?,
            _ => {}
        }
        Ok(Self { kind, dim })
    }

    /// Membership test with slack `tol` on the l1 budget.
    pub fn contains(&self, z: ArrayView1<f64>, tol: f64) -> bool {
        if z.len() != self.dim {
            return false;
        }
        match &self.kind {
            SetKind::Unconstrained => true,
            SetKind::L1Ball { radius } => z.iter().map(|v| v.abs()).sum::<f64>() <= radius + tol,
            SetKind::TopK { k } => z.iter().filter(|v| **v != 0.0).count() <= *k,
            SetKind::Discrete { alphabet } => z.iter().all(|v| alphabet.contains(v)),
            SetKind::Nonneg => z.iter().all(|v| *v >= 0.0),
        }
    }

    /// Euclidean projection of `v` onto the set.
    ///
    /// Ties are resolved deterministically: top-k keeps the lower index among
    /// equal magnitudes, and discrete rounding sends midpoints to the smaller
    /// alphabet value.
    pub fn project(&self, v: ArrayView1<f64>) -> Result<Array1<f64>> {
        check_len("v", v.len(), self.dim)?;
        Ok(match &self.kind {
            SetKind::Unconstrained => v.to_owned(),
            SetKind::L1Ball { radius } => project_l1_ball(v, *radius),
            SetKind::TopK { k } => project_top_k(v, *k),
            SetKind::Discrete { alphabet } => v.mapv(|t| round_to_alphabet(t, alphabet)),
            SetKind::Nonneg => v.mapv(|t| t.max(0.0)),
        })
    }
}

/// Builds `{z : R(z) <= R(x)}` for a projectable regularizer.
pub fn sublevel_from_signal(reg: &Regularizer, x: ArrayView1<f64>) -> Result<ConstraintSet> {
    reg.validate()?;
    let n = x.len();
    let kind = match reg {
        Regularizer::L1 => SetKind::L1Ball {
            radius: reg.evaluate(x)?,
        },
        Regularizer::L0 => SetKind::TopK {
            k: reg.evaluate(x)? as usize,
        },
        Regularizer::DiscreteIndicator { alphabet } => SetKind::Discrete {
            alphabet: alphabet.clone(),
        },
        Regularizer::None => SetKind::Unconstrained,
        Regularizer::TvIso { .. } | Regularizer::TvAniso { .. } => {
            return Err(Error::UnsupportedProjection(
                "total-variation sublevel sets have no closed-form projection".into(),
            ));
        }
    };
    ConstraintSet::new(kind, n)
}

/// Sort-and-threshold projection onto `{z : ||z||_1 <= radius}`.
///
/// When `||v||_1 > radius` the result is `sign(v) (|v| - theta)_+` where theta
/// is the unique root of `sum_i (|v_i| - theta)_+ = radius`.
pub fn project_l1_ball(v: ArrayView1<f64>, radius: f64) -> Array1<f64> {
    let l1: f64 = v.iter().map(|t| t.abs()).sum();
    if l1 <= radius {
        return v.to_owned();
    }
    if radius == 0.0 {
        return Array1::zeros(v.len());
    }
    let mut mags: Vec<f64> = v.iter().map(|t| t.abs()).collect();
    mags.sort_unstable_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (j, &u) in mags.iter().enumerate() {
        cumsum += u;
        let candidate = (cumsum - radius) / (j + 1) as f64;
        if u > candidate {
            theta = candidate;
        } else {
            break;
        }
    }
    v.mapv(|t| t.signum() * (t.abs() - theta).max(0.0))
}

/// Hard thresholding: keep the `k` largest magnitudes, zero the rest.
pub fn project_top_k(v: ArrayView1<f64>, k: usize) -> Array1<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    // Stable sort keeps the lower index first among equal magnitudes.
    order.sort_by(|&i, &j| {
        v[j].abs()
            .partial_cmp(&v[i].abs())
            .unwrap_or(Ordering::Equal)
    });
    let mut out = Array1::zeros(v.len());
    for &i in order.iter().take(k) {
        out[i] = v[i];
    }
    out
}

/// Nearest member of a sorted alphabet; midpoints go to the smaller value.
pub fn round_to_alphabet(t: f64, alphabet: &[f64]) -> f64 {
    let idx = alphabet.partition_point(|a| *a < t);
    if idx == 0 {
        return alphabet[0];
    }
    if idx == alphabet.len() {
        return alphabet[idx - 1];
    }
    let (lo, hi) = (alphabet[idx - 1], alphabet[idx]);
    if hi - t < t - lo {
        hi
    } else {
        lo
    }
}
