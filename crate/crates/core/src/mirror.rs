//! Mirror maps, Bregman divergences and the mirror-descent step
//!
//! ```text
//! x⁺ = argmin_{x ∈ Ω} β ⟨x, g⟩ + D_φ(x, y)
//! ```
//!
//! Two `(map, set)` pairs have closed forms and are the only ones supported:
//! the Euclidean map on any [`ConstraintSet`] (a projected gradient step) and
//! the negative entropy on the simplex (a multiplicative-weights step).

use crate::problems::ConstraintSet;
use crate::{dot, norm};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MirrorError {
    #[error("point {0:?} is outside the domain of the negative entropy")]
    Domain(Vec<f64>),
    #[error("unsupported mirror step: {map} on {set}; supported pairs are euclidean on any set and negative-entropy on the simplex")]
    Unsupported { map: &'static str, set: String },
    #[error("invalid mirror-step input: {0}")]
    Parameter(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MirrorMap {
    /// `φ(x) = ½‖x‖²`.
    #[default]
    Euclidean,
    /// `φ(x) = Σ x_k ln x_k`, 1-strongly convex in the 1-norm on the simplex.
    NegativeEntropy,
}

impl MirrorMap {
    pub fn name(&self) -> &'static str {
        match self {
            MirrorMap::Euclidean => "euclidean",
            MirrorMap::NegativeEntropy => "negative-entropy",
        }
    }

    /// Strong convexity modulus `μ`.
    pub fn mu(&self) -> f64 {
        1.0
    }

    pub fn value(&self, x: &[f64]) -> Result<f64, MirrorError> {
        match self {
            MirrorMap::Euclidean => Ok(0.5 * dot(x, x)),
            MirrorMap::NegativeEntropy => {
                if x.iter().any(|v| !(*v >= 0.0)) {
                    return Err(MirrorError::Domain(x.to_vec()));
                }
                Ok(x.iter().filter(|v| **v > 0.0).map(|v| v * v.ln()).sum())
            }
        }
    }

    pub fn gradient(&self, x: &[f64]) -> Result<Vec<f64>, MirrorError> {
        match self {
            MirrorMap::Euclidean => Ok(x.to_vec()),
            MirrorMap::NegativeEntropy => {
                if x.iter().any(|v| !(*v > 0.0)) {
                    return Err(MirrorError::Domain(x.to_vec()));
                }
                Ok(x.iter().map(|v| v.ln() + 1.0).collect())
            }
        }
    }

    /// `D_φ(x, y) = φ(x) - φ(y) - ⟨∇φ(y), x - y⟩`.
    ///
    /// The entropy form is the generalized KL divergence
    /// `Σ x ln(x/y) - x + y`, which allows zero coordinates in `x` but not in `y`.
    pub fn bregman(&self, x: &[f64], y: &[f64]) -> Result<f64, MirrorError> {
        if x.len() != y.len() {
            return Err(MirrorError::Parameter(format!("dimensions {} and {}", x.len(), y.len())));
        }
        match self {
            MirrorMap::Euclidean => Ok(0.5 * x.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum::<f64>()),
            MirrorMap::NegativeEntropy => {
                if y.iter().any(|v| !(*v > 0.0)) {
                    return Err(MirrorError::Domain(y.to_vec()));
                }
                if x.iter().any(|v| !(*v >= 0.0)) {
                    return Err(MirrorError::Domain(x.to_vec()));
                }
                Ok(x
                    .iter()
                    .zip(y)
                    .map(|(a, b)| if *a > 0.0 { a * (a / b).ln() - a + b } else { *b })
                    .sum())
            }
        }
    }

    /// Lipschitz constant `L1` of `D_φ(·, y)` over the set, when finite.
    /// Only used in diagnostics.
    pub fn bregman_lipschitz(&self, set: &ConstraintSet) -> Option<f64> {
        match self {
            MirrorMap::Euclidean => Some(set.diameter()),
            MirrorMap::NegativeEntropy => None,
        }
    }

    pub fn supports(&self, set: &ConstraintSet) -> bool {
        match self {
            MirrorMap::Euclidean => true,
            MirrorMap::NegativeEntropy => matches!(set, ConstraintSet::Simplex { .. }),
        }
    }
}

fn set_name(set: &ConstraintSet) -> String {
    match set {
        ConstraintSet::Box { .. } => "box".into(),
        ConstraintSet::EuclideanBall { .. } => "euclidean-ball".into(),
        ConstraintSet::Simplex { .. } => "simplex".into(),
    }
}

/// Inputs of one mirror-descent step.
#[derive(Debug, Clone, Copy)]
pub struct MdStepSpec<'a> {
    /// Anchor `y_i(t)` after mixing.
    pub y: &'a [f64],
    /// Clipped gradient estimate.
    pub g: &'a [f64],
    pub beta: f64,
    pub set: &'a ConstraintSet,
}

impl MdStepSpec<'_> {
    /// Closed-form objective `β⟨x, g⟩ + D_φ(x, y)`.
    pub fn objective(&self, map: MirrorMap, x: &[f64]) -> Result<f64, MirrorError> {
        Ok(self.beta * dot(x, self.g) + map.bregman(x, self.y)?)
    }

    fn validate(&self, map: MirrorMap) -> Result<(), MirrorError> {
        if !map.supports(self.set) {
            return Err(MirrorError::Unsupported { map: map.name(), set: set_name(self.set) });
        }
        let m = self.set.dim();
        if self.y.len() != m || self.g.len() != m {
            return Err(MirrorError::Parameter(format!(
                "anchor has dimension {}, gradient {}, set {m}",
                self.y.len(),
                self.g.len()
            )));
        }
        if !(self.beta > 0.0) || !self.beta.is_finite() {
            return Err(MirrorError::Parameter(format!("beta must be positive, got {}", self.beta)));
        }
        if self.g.iter().chain(self.y).any(|v| !v.is_finite()) {
            return Err(MirrorError::Parameter("non-finite anchor or gradient".into()));
        }
        Ok(())
    }
}

/// The exact minimizer of `β⟨x, g⟩ + D_φ(x, y)` over the set.
pub fn md_step(map: MirrorMap, spec: &MdStepSpec<'_>) -> Result<Vec<f64>, MirrorError> {
    spec.validate(map)?;
    match map {
        MirrorMap::Euclidean => {
            let z: Vec<f64> = spec.y.iter().zip(spec.g).map(|(y, g)| y - spec.beta * g).collect();
            Ok(spec.set.project(&z))
        }
        MirrorMap::NegativeEntropy => {
            if spec.y.iter().any(|v| !(*v > 0.0)) {
                return Err(MirrorError::Domain(spec.y.to_vec()));
            }
            // log-domain weights, shifted by the max for stability
            let w: Vec<f64> = spec.y.iter().zip(spec.g).map(|(y, g)| y.ln() - spec.beta * g).collect();
            let top = w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = w.iter().map(|v| (v - top).exp()).collect();
            let s: f64 = e.iter().sum();
            Ok(e.iter().map(|v| v / s).collect())
        }
    }
}

/// `⟨β g + ∇φ(x⁺) - ∇φ(y), x - x⁺⟩`; nonnegative for every feasible `x`
/// exactly when `x⁺` solves the step.
pub fn optimality_residual(
    map: MirrorMap,
    spec: &MdStepSpec<'_>,
    x_plus: &[f64],
    x: &[f64],
) -> Result<f64, MirrorError> {
    let gp = map.gradient(x_plus)?;
    let gy = map.gradient(spec.y)?;
    Ok((0..x.len())
        .map(|k| (spec.beta * spec.g[k] + gp[k] - gy[k]) * (x[k] - x_plus[k]))
        .sum())
}

/// Points per axis at each refinement level of [`md_step_oracle`].
const ORACLE_POINTS: usize = 41;

/// Brute-force minimizer over a grid of the set, refined until the spacing is
/// at most `resolution`. Each level searches its window exhaustively and the
/// next level zooms to three cells around the best point. Boxes and the
/// 2-simplex are gridded directly, a disc in polar coordinates. Only `m <= 2`.
pub fn md_step_oracle(
    map: MirrorMap,
    spec: &MdStepSpec<'_>,
    resolution: f64,
) -> Result<Vec<f64>, MirrorError> {
    spec.validate(map)?;
    let m = spec.set.dim();
    if m > 2 {
        return Err(MirrorError::Parameter(format!("grid oracle needs m <= 2, got {m}")));
    }
    if !(resolution > 0.0) {
        return Err(MirrorError::Parameter("resolution must be positive".into()));
    }

    // Search in a parameter box `u`, mapped to points of the set.
    let (lo, hi, embed): (Vec<f64>, Vec<f64>, Box<dyn Fn(&[f64]) -> Vec<f64>>) = match spec.set {
        ConstraintSet::Box { lower, upper } => (lower.clone(), upper.clone(), Box::new(|u: &[f64]| u.to_vec())),
        ConstraintSet::EuclideanBall { center, radius } if center.len() == 1 => {
            (vec![center[0] - radius], vec![center[0] + radius], Box::new(|u: &[f64]| u.to_vec()))
        }
        ConstraintSet::EuclideanBall { center, radius } => {
            // polar coordinates put grid points exactly on the boundary circle
            let c = center.clone();
            let pi = std::f64::consts::PI;
            (
                vec![0.0, -pi],
                vec![*radius, pi],
                Box::new(move |u: &[f64]| vec![c[0] + u[0] * u[1].cos(), c[1] + u[0] * u[1].sin()]),
            )
        }
        ConstraintSet::Simplex { dim } => {
            if *dim == 1 {
                return Ok(vec![1.0]);
            }
            // the 2-simplex is the segment (p, 1 - p)
            (vec![0.0], vec![1.0], Box::new(|u: &[f64]| vec![u[0], 1.0 - u[0]]))
        }
    };
    let k = lo.len();
    let mut lo = lo;
    let mut hi = hi;
    let (bound_lo, bound_hi) = (lo.clone(), hi.clone());
    loop {
        let h: Vec<f64> = (0..k).map(|d| (hi[d] - lo[d]) / (ORACLE_POINTS - 1) as f64).collect();
        let mut best: Option<(f64, Vec<f64>)> = None;
        let total = ORACLE_POINTS.pow(k as u32);
        for idx in 0..total {
            let u: Vec<f64> = (0..k)
                .map(|d| {
                    let j = (idx / ORACLE_POINTS.pow(d as u32)) % ORACLE_POINTS;
                    lo[d] + h[d] * j as f64
                })
                .collect();
            let x = embed(&u);
            if !spec.set.contains(&x) {
                continue;
            }
            let val = match spec.objective(map, &x) {
                Ok(v) if v.is_finite() => v,
                _ => continue,
            };
            if best.as_ref().is_none_or(|(b, _)| val < *b) {
                best = Some((val, u));
            }
        }
        let (_, u) = best.ok_or_else(|| MirrorError::Parameter("grid missed the feasible set".into()))?;
        if h.iter().all(|v| *v <= resolution) {
            return Ok(embed(&u));
        }
        for d in 0..k {
            lo[d] = (u[d] - 3.0 * h[d]).max(bound_lo[d]);
            hi[d] = (u[d] + 3.0 * h[d]).min(bound_hi[d]);
        }
    }
}

/// `‖y - x⁺‖`, which the step guarantees is at most `β‖g‖/μ`.
pub fn step_length(y: &[f64], x_plus: &[f64]) -> f64 {
    norm(&y.iter().zip(x_plus).map(|(a, b)| a - b).collect::<Vec<_>>())
}
