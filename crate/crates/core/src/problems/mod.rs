//! Online objectives `f_i^t`, feasible sets, noise models and benchmark
//! minimizers.

mod constraint;
mod least_squares;
mod noise;

pub use constraint::{project_simplex, ConstraintSet, FEASIBILITY_TOL};
pub use least_squares::{
    sensor_network_problem, target_recursion, TrackingLeastSquares, SENSOR_SENSITIVITIES,
};
pub use noise::{uniform_sign_interval, NoiseModel, Sampler};

use crate::{dist, norm};
use std::fmt;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ProblemError {
    #[error("invalid problem parameter: {0}")]
    Parameter(String),
    #[error("round {t} outside the horizon 1..={horizon}")]
    Round { t: usize, horizon: usize },
    #[error("minimizer solve for round {t} did not converge: gradient-mapping norm {residual:e} after {iterations} iterations")]
    NotConverged { t: usize, residual: f64, iterations: usize },
    #[error("problem has no analytic gradient; the generic minimizer needs one")]
    NoGradient,
}

/// Regularity constants of the objective family over the feasible set.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ProblemBounds {
    /// `B`: diameter of the feasible set.
    pub diameter: f64,
    /// `D`: bound on `|f_i^t|`.
    pub value: f64,
    /// `G`: bound on `‖∇f_i^t‖`.
    pub gradient: f64,
    /// `H`: Hölder constant of the Taylor remainder.
    pub holder_constant: f64,
    /// `ε`: Hölder order.
    pub holder_order: f64,
    /// `L0`: Lipschitz constant of `∇f_i^t`.
    pub lipschitz: f64,
}

/// A time-varying multi-agent objective family.
///
/// Objectives must be defined on a neighbourhood of the feasible set: the
/// estimator queries `x ± γ r e_l` without projecting.
pub trait OnlineProblem: Send + Sync {
    fn agents(&self) -> usize;
    fn dim(&self) -> usize;
    fn horizon(&self) -> usize;
    fn constraint(&self) -> &ConstraintSet;
    fn bounds(&self) -> ProblemBounds;

    /// Noiseless `f_i^t(x)` for agent `i` (0-based) and round `t >= 1`.
    fn objective(&self, agent: usize, t: usize, x: &[f64]) -> f64;

    fn gradient(&self, _agent: usize, _t: usize, _x: &[f64]) -> Option<Vec<f64>> {
        None
    }

    /// `f^t(x) = (1/n) Σ_i f_i^t(x)`.
    fn global_objective(&self, t: usize, x: &[f64]) -> f64 {
        let n = self.agents();
        (0..n).map(|i| self.objective(i, t, x)).sum::<f64>() / n as f64
    }

    fn global_gradient(&self, t: usize, x: &[f64]) -> Option<Vec<f64>> {
        let n = self.agents();
        let mut acc = vec![0.0; self.dim()];
        for i in 0..n {
            for (a, g) in acc.iter_mut().zip(self.gradient(i, t, x)?) {
                *a += g / n as f64;
            }
        }
        Some(acc)
    }

    /// `x*(t) = argmin_{x ∈ Ω} f^t(x)`.
    fn minimizer(&self, t: usize) -> Result<Vec<f64>, ProblemError> {
        projected_gradient_minimizer(self, t)
    }
}

impl<P: OnlineProblem + ?Sized> OnlineProblem for Arc<P> {
    fn agents(&self) -> usize {
        (**self).agents()
    }
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn horizon(&self) -> usize {
        (**self).horizon()
    }
    fn constraint(&self) -> &ConstraintSet {
        (**self).constraint()
    }
    fn bounds(&self) -> ProblemBounds {
        (**self).bounds()
    }
    fn objective(&self, agent: usize, t: usize, x: &[f64]) -> f64 {
        (**self).objective(agent, t, x)
    }
    fn gradient(&self, agent: usize, t: usize, x: &[f64]) -> Option<Vec<f64>> {
        (**self).gradient(agent, t, x)
    }
    fn global_objective(&self, t: usize, x: &[f64]) -> f64 {
        (**self).global_objective(t, x)
    }
    fn global_gradient(&self, t: usize, x: &[f64]) -> Option<Vec<f64>> {
        (**self).global_gradient(t, x)
    }
    fn minimizer(&self, t: usize) -> Result<Vec<f64>, ProblemError> {
        (**self).minimizer(t)
    }
}

pub const MINIMIZER_TOL: f64 = 1e-10;
pub const MINIMIZER_MAX_ITER: usize = 200_000;

/// Projected gradient descent with step `1/L0` on the global objective,
/// stopped once the gradient mapping `L0 ‖x - P(x - ∇f/L0)‖` drops below
/// [`MINIMIZER_TOL`].
pub fn projected_gradient_minimizer<P: OnlineProblem + ?Sized>(
    problem: &P,
    t: usize,
) -> Result<Vec<f64>, ProblemError> {
    let set = problem.constraint();
    let lip = problem.bounds().lipschitz;
    if !(lip > 0.0) {
        return Err(ProblemError::Parameter(
            "generic minimizer needs a positive gradient Lipschitz bound L0".into(),
        ));
    }
    let mut x = set.lattice_point(0, 1);
    let mut residual = f64::INFINITY;
    for _ in 0..MINIMIZER_MAX_ITER {
        let g = problem.global_gradient(t, &x).ok_or(ProblemError::NoGradient)?;
        let step: Vec<f64> = x.iter().zip(&g).map(|(xi, gi)| xi - gi / lip).collect();
        let next = set.project(&step);
        residual = lip * dist(&x, &next);
        x = next;
        if residual <= MINIMIZER_TOL {
            return Ok(x);
        }
    }
    Err(ProblemError::NotConverged { t, residual, iterations: MINIMIZER_MAX_ITER })
}

type ObjectiveFn = Arc<dyn Fn(usize, usize, &[f64]) -> f64 + Send + Sync>;
type GradientFn = Arc<dyn Fn(usize, usize, &[f64]) -> Vec<f64> + Send + Sync>;

/// A problem assembled from closures `(agent, t, x) -> value`.
#[derive(Clone)]
pub struct FnProblem {
    agents: usize,
    horizon: usize,
    constraint: ConstraintSet,
    bounds: ProblemBounds,
    objective: ObjectiveFn,
    gradient: Option<GradientFn>,
}

impl fmt::Debug for FnProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FnProblem")
            .field("agents", &self.agents)
            .field("horizon", &self.horizon)
            .field("constraint", &self.constraint)
            .field("bounds", &self.bounds)
            .field("gradient", &self.gradient.is_some())
            .finish()
    }
}

impl FnProblem {
    pub fn new<F>(agents: usize, horizon: usize, constraint: ConstraintSet, objective: F) -> Self
    where
        F: Fn(usize, usize, &[f64]) -> f64 + Send + Sync + 'static,
    {
        let bounds = ProblemBounds { diameter: constraint.diameter(), ..Default::default() };
        Self {
            agents,
            horizon,
            constraint,
            bounds,
            objective: Arc::new(objective),
            gradient: None,
        }
    }

    pub fn with_gradient<G>(mut self, gradient: G) -> Self
    where
        G: Fn(usize, usize, &[f64]) -> Vec<f64> + Send + Sync + 'static,
    {
        self.gradient = Some(Arc::new(gradient));
        self
    }

    pub fn with_bounds(mut self, bounds: ProblemBounds) -> Self {
        self.bounds = bounds;
        self
    }

    /// Single-agent scalar problem `f(x) = x^p` on `[-5, 5]`.
    pub fn monomial(power: i32) -> Self {
        let p = power as f64;
        FnProblem::new(1, 1, ConstraintSet::cube(1, -5.0, 5.0), move |_, _, x| x[0].powi(power))
            .with_gradient(move |_, _, x| vec![p * x[0].powi(power - 1)])
    }

    /// Every agent sees the same constant objective.
    pub fn constant(agents: usize, horizon: usize, constraint: ConstraintSet, value: f64) -> Self {
        let m = constraint.dim();
        let bounds = ProblemBounds {
            diameter: constraint.diameter(),
            value: value.abs(),
            lipschitz: 1.0,
            ..Default::default()
        };
        FnProblem::new(agents, horizon, constraint, move |_, _, _| value)
            .with_gradient(move |_, _, _| vec![0.0; m])
            .with_bounds(bounds)
    }
}

impl OnlineProblem for FnProblem {
    fn agents(&self) -> usize {
        self.agents
    }
    fn dim(&self) -> usize {
        self.constraint.dim()
    }
    fn horizon(&self) -> usize {
        self.horizon
    }
    fn constraint(&self) -> &ConstraintSet {
        &self.constraint
    }
    fn bounds(&self) -> ProblemBounds {
        self.bounds
    }
    fn objective(&self, agent: usize, t: usize, x: &[f64]) -> f64 {
        (self.objective)(agent, t, x)
    }
    fn gradient(&self, agent: usize, t: usize, x: &[f64]) -> Option<Vec<f64>> {
        self.gradient.as_ref().map(|g| g(agent, t, x))
    }
}

/// The benchmark sequence `x*(1), ..., x*(T)` and its path variation `Ξ_T`.
#[derive(Debug, Clone, PartialEq)]
pub struct MinimizerTrace {
    pub points: Vec<Vec<f64>>,
    pub variation: f64,
}

impl MinimizerTrace {
    pub fn new(points: Vec<Vec<f64>>) -> Self {
        let variation = path_variation(&points);
        Self { points, variation }
    }

    /// `Ξ_t` for each `t = 1..=T` (same convention as [`path_variation`]).
    pub fn cumulative_variation(&self) -> Vec<f64> {
        let mut acc = 0.0;
        let mut out = Vec::with_capacity(self.points.len());
        for t in 0..self.points.len() {
            if let Some(next) = self.points.get(t + 1) {
                acc += dist(next, &self.points[t]);
            }
            out.push(acc);
        }
        out
    }
}

/// `Ξ_T = Σ_{t=1}^{T} ‖x*(t+1) - x*(t)‖` with `x*(T+1) = x*(T)`.
pub fn path_variation(points: &[Vec<f64>]) -> f64 {
    points.windows(2).map(|w| dist(&w[1], &w[0])).sum()
}

/// Checks `|f| <= D` and `‖∇f‖ <= G` on the given sample points; returns the
/// first offending `(agent, t, x)`.
pub fn spot_check_bounds<P: OnlineProblem + ?Sized>(
    problem: &P,
    samples: &[(usize, usize, Vec<f64>)],
) -> Option<(usize, usize, Vec<f64>)> {
    let b = problem.bounds();
    samples
        .iter()
        .find(|(i, t, x)| {
            let value_bad = problem.objective(*i, *t, x).abs() > b.value * (1.0 + 1e-12);
            let grad_bad = problem
                .gradient(*i, *t, x)
                .is_some_and(|g| norm(&g) > b.gradient * (1.0 + 1e-12));
            value_bad || grad_bad
        })
        .cloned()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn path_variation_examples() {
        let constant = vec![vec![1.0]; 5];
        assert_eq!(path_variation(&constant), 0.0);
        let zigzag: Vec<Vec<f64>> = [0.0, 1.0, 0.0, 1.0].iter().map(|v| vec![*v]).collect();
        let trace = MinimizerTrace::new(zigzag);
        assert_eq!(trace.variation, 3.0);
        assert_eq!(trace.cumulative_variation(), vec![1.0, 2.0, 3.0, 3.0]);
    }

    #[test]
    fn generic_minimizer_interior_and_boundary() {
        let shifted = |c: f64| {
            FnProblem::new(1, 1, ConstraintSet::cube(1, -5.0, 5.0), move |_, _, x| 0.5 * (x[0] - c).powi(2))
                .with_gradient(move |_, _, x| vec![x[0] - c])
                .with_bounds(ProblemBounds { lipschitz: 1.0, ..Default::default() })
        };
        assert!((shifted(3.0).minimizer(1).unwrap()[0] - 3.0).abs() < 1e-10);
        assert!((shifted(12.0).minimizer(1).unwrap()[0] - 5.0).abs() < 1e-12);
    }

    #[test]
    fn generic_minimizer_errors() {
        let no_grad = FnProblem::new(1, 1, ConstraintSet::cube(1, -1.0, 1.0), |_, _, x| x[0] * x[0])
            .with_bounds(ProblemBounds { lipschitz: 2.0, ..Default::default() });
        assert_eq!(no_grad.minimizer(1), Err(ProblemError::NoGradient));

        // L0 understated by 100x: the iteration oscillates and never settles
        let bad = FnProblem::new(1, 1, ConstraintSet::cube(1, -5.0, 5.0), |_, _, x| 50.0 * (x[0] - 1.0).powi(2))
            .with_gradient(|_, _, x| vec![100.0 * (x[0] - 1.0)])
            .with_bounds(ProblemBounds { lipschitz: 1.0, ..Default::default() });
        assert!(matches!(bad.minimizer(1), Err(ProblemError::NotConverged { .. })));
    }

    #[test]
    fn monomial_gradient() {
        let p = FnProblem::monomial(3);
        assert_eq!(p.objective(0, 1, &[2.0]), 8.0);
        assert_eq!(p.gradient(0, 1, &[2.0]).unwrap(), vec![12.0]);
    }
}
