use crate::{dist, norm};
use serde::{Deserialize, Serialize};

use super::ProblemError;

/// Tolerance used by [`ConstraintSet::contains`].
pub const FEASIBILITY_TOL: f64 = 1e-9;

/// A convex compact feasible set with an exact Euclidean projection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ConstraintSet {
    Box { lower: Vec<f64>, upper: Vec<f64> },
    EuclideanBall { center: Vec<f64>, radius: f64 },
    /// The probability simplex `{x >= 0, sum x = 1}` in `R^dim`.
    Simplex { dim: usize },
}

impl ConstraintSet {
    /// `[lo, hi]^m`.
    pub fn cube(m: usize, lo: f64, hi: f64) -> Self {
        ConstraintSet::Box { lower: vec![lo; m], upper: vec![hi; m] }
    }

    pub fn ball(center: Vec<f64>, radius: f64) -> Self {
        ConstraintSet::EuclideanBall { center, radius }
    }

    pub fn simplex(dim: usize) -> Self {
        ConstraintSet::Simplex { dim }
    }

    pub fn validate(&self) -> Result<(), ProblemError> {
        let bad = |msg: String| Err(ProblemError::Parameter(msg));
        match self {
            ConstraintSet::Box { lower, upper } => {
                if lower.is_empty() || lower.len() != upper.len() {
                    return bad(format!(
                        "box bounds must be non-empty and equal length ({} vs {})",
                        lower.len(),
                        upper.len()
                    ));
                }
                if let Some(k) = (0..lower.len()).find(|&k| !(lower[k] <= upper[k]) || !lower[k].is_finite() || !upper[k].is_finite()) {
                    return bad(format!("box coordinate {k}: need finite lower <= upper"));
                }
            }
            ConstraintSet::EuclideanBall { center, radius } => {
                if center.is_empty() || !(*radius > 0.0) || !radius.is_finite() {
                    return bad("ball needs a non-empty center and a finite positive radius".into());
                }
            }
            ConstraintSet::Simplex { dim } => {
                if *dim == 0 {
                    return bad("simplex dimension must be positive".into());
                }
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        match self {
            ConstraintSet::Box { lower, .. } => lower.len(),
            ConstraintSet::EuclideanBall { center, .. } => center.len(),
            ConstraintSet::Simplex { dim } => *dim,
        }
    }

    /// `B = sup ‖x - y‖` over the set.
    pub fn diameter(&self) -> f64 {
        match self {
            ConstraintSet::Box { lower, upper } => dist(lower, upper),
            ConstraintSet::EuclideanBall { radius, .. } => 2.0 * radius,
            ConstraintSet::Simplex { dim } if *dim == 1 => 0.0,
            ConstraintSet::Simplex { .. } => std::f64::consts::SQRT_2,
        }
    }

    /// `sup ‖x‖` over the set.
    pub fn max_norm(&self) -> f64 {
        match self {
            ConstraintSet::Box { lower, upper } => lower
                .iter()
                .zip(upper)
                .map(|(l, u)| l.abs().max(u.abs()).powi(2))
                .sum::<f64>()
                .sqrt(),
            ConstraintSet::EuclideanBall { center, radius } => norm(center) + radius,
            ConstraintSet::Simplex { .. } => 1.0,
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        if x.len() != self.dim() {
            return false;
        }
        let tol = FEASIBILITY_TOL;
        match self {
            ConstraintSet::Box { lower, upper } => x
                .iter()
                .zip(lower.iter().zip(upper))
                .all(|(v, (l, u))| *v >= l - tol && *v <= u + tol),
            ConstraintSet::EuclideanBall { center, radius } => dist(x, center) <= radius + tol,
            ConstraintSet::Simplex { .. } => {
                x.iter().all(|v| *v >= -tol) && (x.iter().sum::<f64>() - 1.0).abs() <= tol
            }
        }
    }

    /// Euclidean projection onto the set.
    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.dim(), "projection dimension mismatch");
        match self {
            ConstraintSet::Box { lower, upper } => x
                .iter()
                .zip(lower.iter().zip(upper))
                .map(|(v, (l, u))| v.clamp(*l, *u))
                .collect(),
            ConstraintSet::EuclideanBall { center, radius } => {
                let d = dist(x, center);
                if d <= *radius {
                    x.to_vec()
                } else {
                    let s = radius / d;
                    x.iter().zip(center).map(|(v, c)| c + s * (v - c)).collect()
                }
            }
            ConstraintSet::Simplex { .. } => project_simplex(x),
        }
    }

    /// Deterministic spread of `n` feasible points, used as default initial
    /// states so consensus error starts nonzero.
    pub fn lattice_point(&self, i: usize, n: usize) -> Vec<f64> {
        let frac = (i as f64 + 0.5) / n as f64;
        match self {
            ConstraintSet::Box { lower, upper } => {
                lower.iter().zip(upper).map(|(l, u)| l + (u - l) * frac).collect()
            }
            ConstraintSet::EuclideanBall { center, radius } => {
                let mut x = center.clone();
                x[i % center.len()] += radius * (2.0 * frac - 1.0);
                x
            }
            ConstraintSet::Simplex { dim } => {
                let mut x = vec![0.5 / *dim as f64; *dim];
                x[i % dim] += 0.5;
                x
            }
        }
    }
}

/// Sorting-based Euclidean projection onto the probability simplex.
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (j, uj) in u.iter().enumerate() {
        cumsum += uj;
        let t = (cumsum - 1.0) / (j + 1) as f64;
        if uj - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|x| (x - theta).max(0.0)).collect()
}
