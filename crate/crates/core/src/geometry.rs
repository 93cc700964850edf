//! Descent cones, their projections, and Monte Carlo estimates of the
//! statistical dimension `E ||P_C(g)||^2` used as the minimal sample count.
//!
//! The descent cone of the l1 norm at an exactly sparse `x` with support `S`
//! and signs `s_i` is
//!
//! ```text
//! C = { h : sum_{i in S} s_i h_i + sum_{i not in S} |h_i| <= 0 }
//! ```
//!
//! whose polar is the cone generated by the subdifferential,
//! `{ t w : w_i = s_i on S, |w_i| <= 1 off S, t >= 0 }`. Projection onto the
//! polar is a one-dimensional convex problem in `t`, and projection onto `C`
//! follows from the Moreau decomposition `v = P_C(v) + P_{C°}(v)`.

use ndarray::{Array1, Array2, ArrayView1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, invalid, Result};
use crate::model::norm;
use crate::rng::{derive_seed, normal_vec, rng_from_seed, SeededRng};

/// Interval width at which the polar bisection stops.
pub const POLAR_BISECTION_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ConeKind {
    /// Column span of an orthonormal `n x d` basis.
    Subspace {
        basis: Array2<f64>,
    },
    NonnegOrthant,
    /// Descent cone of the l1 norm at a signal with these signs.
    L1Descent {
        signs: Vec<i8>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConeModel {
    pub kind: ConeKind,
    pub n: usize,
}

impl ConeModel {
    /// Span of the columns of `basis`, which must be orthonormal to 1e-10.
    pub fn subspace(basis: Array2<f64>) -> Result<Self> {
        let gram = basis.t().dot(&basis);
        let d = basis.ncols();
        let off = (0..d)
            .flat_map(|i| (0..d).map(move |j| (i, j)))
            .map(|(i, j)| (gram[[i, j]] - if i == j { 1.0 } else { 0.0 }).abs())
            .fold(0.0, f64::max);
        if off > 1e-10 {
            return invalid(format!("subspace basis is not orthonormal (error {off:e})"));
        }
        Ok(Self {
            n: basis.nrows(),
            kind: ConeKind::Subspace { basis },
        })
    }

    /// Span of the first `d` coordinate axes in `R^n`.
    pub fn coordinate_subspace(n: usize, d: usize) -> Result<Self> {
        if d > n {
            return invalid(format!("subspace dimension {d} exceeds ambient {n}"));
        }
        let mut basis = Array2::zeros((n, d));
        for i in 0..d {
            basis[[i, i]] = 1.0;
        }
        Self::subspace(basis)
    }

    pub fn nonneg_orthant(n: usize) -> Self {
        Self {
            kind: ConeKind::NonnegOrthant,
            n,
        }
    }

    pub fn l1_descent(signs: Vec<i8>) -> Result<Self> {
        if signs.iter().any(|s| !(-1..=1).contains(s)) {
            return invalid("l1 descent signs must be -1, 0 or +1");
        }
        if signs.iter().all(|s| *s == 0) {
            return invalid("l1 descent cone needs at least one nonzero sign");
        }
        Ok(Self {
            n: signs.len(),
            kind: ConeKind::L1Descent { signs },
        })
    }

    /// Descent cone of the l1 norm at `x`.
    pub fn l1_descent_at(x: ArrayView1<f64>) -> Result<Self> {
        let signs = x
            .iter()
            .map(|v| {
                if *v > 0.0 {
                    1
                } else if *v < 0.0 {
                    -1
                } else {
                    0
                }
            })
            .collect();
        Self::l1_descent(signs)
    }

    /// Membership with slack `tol`.
    pub fn contains(&self, h: ArrayView1<f64>, tol: f64) -> bool {
        if h.len() != self.n {
            return false;
        }
        match &self.kind {
            ConeKind::Subspace { basis } => {
                let coef = basis.t().dot(&h);
                norm((&h - &basis.dot(&coef)).view()) <= tol
            }
            ConeKind::NonnegOrthant => h.iter().all(|v| *v >= -tol),
            ConeKind::L1Descent { signs } => l1_descent_value(signs, h) <= tol,
        }
    }

    /// Euclidean projection onto the cone.
    pub fn project(&self, v: ArrayView1<f64>) -> Result<Array1<f64>> {
        check_len("v", v.len(), self.n)?;
        Ok(match &self.kind {
            ConeKind::Subspace { basis } => basis.dot(&basis.t().dot(&v)),
            ConeKind::NonnegOrthant => v.mapv(|t| t.max(0.0)),
            ConeKind::L1Descent { signs } => &v - &polar_l1(signs, v).0,
        })
    }

    /// A unit vector in the cone: the normalized projection of a Gaussian.
    pub fn sample_unit(&self, rng: &mut SeededRng) -> Array1<f64> {
        loop {
            let p = self
                .project(normal_vec(rng, self.n).view())
                .expect("length matches");
            let len = norm(p.view());
            if len > 1e-12 {
                return p / len;
            }
        }
    }
}

/// `sum_{S} s_i h_i + sum_{not S} |h_i|`; nonpositive exactly on the cone.
fn l1_descent_value(signs: &[i8], h: ArrayView1<f64>) -> f64 {
    signs
        .iter()
        .zip(h)
        .map(|(s, v)| if *s == 0 { v.abs() } else { f64::from(*s) * v })
        .sum()
}

/// Projection onto the polar of the l1 descent cone, returned with the
/// optimal scale `t*`.
///
/// Minimizes `J(t) = sum_S (g_i - t s_i)^2 + sum_{not S} (|g_i| - t)_+^2` over
/// `t >= 0` by bisection on `J'` down to an interval of 1e-10. `J'` is
/// piecewise linear, so the root is then solved exactly on the final bracket
/// using the active set at its midpoint.
pub fn polar_project_l1_descent(
    cone: &ConeModel,
    g: ArrayView1<f64>,
) -> Result<(Array1<f64>, f64)> {
    let ConeKind::L1Descent { signs } = &cone.kind else {
        return invalid("polar projection is only available for l1 descent cones");
    };
    check_len("g", g.len(), cone.n)?;
    Ok(polar_l1(signs, g))
}

fn polar_l1(signs: &[i8], g: ArrayView1<f64>) -> (Array1<f64>, f64) {
    let support = signs.iter().filter(|s| **s != 0).count() as f64;
    let aligned: f64 = signs
        .iter()
        .zip(g)
        .filter(|(s, _)| **s != 0)
        .map(|(s, v)| f64::from(*s) * v)
        .sum();
    // J'(t) / 2
    let slope = |t: f64| -> f64 {
        let off: f64 = signs
            .iter()
            .zip(g)
            .filter(|(s, _)| **s == 0)
            .map(|(_, v)| (v.abs() - t).max(0.0))
            .sum();
        support * t - aligned - off
    };

    let t_star = if slope(0.0) >= 0.0 {
        0.0
    } else {
        let max_abs = g.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
        let mut lo = 0.0;
        let mut hi = max_abs.max(aligned / support).max(0.0) + 1.0;
        while hi - lo > POLAR_BISECTION_TOL * (1.0 + hi) {
            let mid = 0.5 * (lo + hi);
            if slope(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let mid = 0.5 * (lo + hi);
        let (mut count, mut sum) = (support, aligned);
        for (s, v) in signs.iter().zip(g) {
            if *s == 0 && v.abs() > mid {
                count += 1.0;
                sum += v.abs();
            }
        }
        (sum / count).clamp(lo, hi)
    };

    let w = signs
        .iter()
        .zip(g)
        .map(|(s, v)| {
            if *s == 0 {
                v.clamp(-t_star, t_star)
            } else {
                t_star * f64::from(*s)
            }
        })
        .collect();
    (w, t_star)
}

/// Monte Carlo estimate of `E ||P_C(g)||^2` and `E ||P_C(g)||`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WidthEstimate {
    /// Statistical dimension estimate.
    pub mean_sq: f64,
    /// Gaussian width estimate of `C ∩ B^n`.
    pub mean: f64,
    /// Standard error of `mean_sq`.
    pub stderr: f64,
    pub trials: usize,
}

/// Draws `trials` standard Gaussians (trial `k` seeded by
/// `derive_seed(seed, k)`) and averages `||P_C(g)||^2` and `||P_C(g)||`.
/// Trials run in parallel; the reduction is a fixed-order sum, so the result
/// does not depend on the thread count.
pub fn statistical_dimension_mc(
    cone: &ConeModel,
    trials: usize,
    seed: u64,
) -> Result<WidthEstimate> {
    if trials < 2 {
        return invalid("statistical dimension estimate needs at least 2 trials");
    }
    let lengths: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|k| {
            let mut rng = rng_from_seed(derive_seed(seed, k as u64));
            let g = normal_vec(&mut rng, cone.n);
            cone.project(g.view()).map(|p| norm(p.view()))
        })
        .collect::<Result<_>>()?;
    let t = trials as f64;
    let mean = lengths.iter().sum::<f64>() / t;
    let mean_sq = lengths.iter().map(|l| l * l).sum::<f64>() / t;
    let var = lengths
        .iter()
        .map(|l| (l * l - mean_sq).powi(2))
        .sum::<f64>()
        / (t - 1.0);
    Ok(WidthEstimate {
        mean_sq,
        mean,
        stderr: (var / t).sqrt(),
        trials,
    })
}

/// `2 s ln(n / s)`, the l1 minimal sample count for `s`-sparse signals.
pub fn m0_l1_sparse(n: usize, s: usize) -> Result<f64> {
    if s == 0 || s > n {
        return invalid(format!("sparsity must lie in 1..={n}, got {s}"));
    }
    Ok(2.0 * s as f64 * (n as f64 / s as f64).ln())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn simple_cone_projections() {
        let orthant = ConeModel::nonneg_orthant(2);
        assert_eq!(
            orthant.project(array![1.0, -2.0].view()).unwrap(),
            array![1.0, 0.0]
        );
        let line = ConeModel::coordinate_subspace(2, 1).unwrap();
        assert_eq!(
            line.project(array![3.0, 4.0].view()).unwrap(),
            array![3.0, 0.0]
        );
        assert!(line.project(array![3.0].view()).is_err());
    }

    #[test]
    fn invalid_cones() {
        assert!(ConeModel::l1_descent(vec![0, 0]).is_err());
        assert!(ConeModel::l1_descent(vec![2, 0]).is_err());
        assert!(ConeModel::subspace(array![[1.0, 1.0], [0.0, 1.0]]).is_err());
        assert!(ConeModel::coordinate_subspace(2, 3).is_err());
    }

    #[test]
    fn polar_zero_and_ray() {
        let cone = ConeModel::l1_descent(vec![1, 0, -1, 0]).unwrap();
        let (w, t) = polar_project_l1_descent(&cone, Array1::zeros(4).view()).unwrap();
        assert_eq!(t, 0.0);
        assert_eq!(w, Array1::<f64>::zeros(4));
        // g = sign pattern itself sits on the polar ray at t = 1.
        let g = array![1.0, 0.0, -1.0, 0.0];
        let (w, t) = polar_project_l1_descent(&cone, g.view()).unwrap();
        assert!((t - 1.0).abs() < 1e-12);
        assert!(norm((&w - &g).view()) < 1e-12);
        let orthant = ConeModel::nonneg_orthant(4);
        assert!(polar_project_l1_descent(&orthant, g.view()).is_err());
    }

    #[test]
    fn l1_descent_projection_lands_in_cone() {
        let cone = ConeModel::l1_descent(vec![0, 1, 0, 0, -1]).unwrap();
        let mut rng = rng_from_seed(9);
        for _ in 0..200 {
            let v = normal_vec(&mut rng, 5);
            let p = cone.project(v.view()).unwrap();
            assert!(cone.contains(p.view(), 1e-9));
        }
    }

    #[test]
    fn m0_examples() {
        assert!((m0_l1_sparse(100, 1).unwrap() - 9.210340371976184).abs() < 1e-12);
        assert_eq!(m0_l1_sparse(7, 7).unwrap(), 0.0);
        assert!((m0_l1_sparse(128, 4).unwrap() - 8.0 * 32f64.ln()).abs() < 1e-12);
        assert!(m0_l1_sparse(10, 0).is_err());
        assert!(m0_l1_sparse(10, 11).is_err());
    }

    #[test]
    fn width_estimate_requires_two_trials() {
        assert!(statistical_dimension_mc(&ConeModel::nonneg_orthant(3), 1, 0).is_err());
    }
}
