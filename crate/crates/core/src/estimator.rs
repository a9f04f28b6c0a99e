//! Kernel-weighted two-point gradient estimates and clipping.
//!
//! For agent `i` at round `t` the estimator draws one `r ~ U[-1, 1]` and,
//! for every coordinate `l`,
//!
//! ```text
//! g_l = (f(x + γ r e_l) - f(x - γ r e_l)) / (2γ) + ξ_l,     ĝ_l = g_l · K(r)
//! ```
//!
//! The kernel moment conditions make `E[ĝ]` equal to the gradient up to a
//! remainder of order `γ^(ε-1)`, and `∫K = 0` removes the noise mean.

use crate::kernels::Kernel;
use crate::norm;
use crate::problems::{uniform_sign_interval, NoiseModel, OnlineProblem};
use crate::rng::{stream, Stream, HARNESS_AGENT};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum EstimatorError {
    #[error("invalid estimator parameter: {0}")]
    Parameter(String),
}

/// A fully specified query: with `r` and `ξ` fixed the estimate is a
/// deterministic function of the objective.
#[derive(Debug, Clone, PartialEq)]
pub struct ZoQuery {
    pub x: Vec<f64>,
    pub gamma: f64,
    /// Perturbation per coordinate. All entries are equal unless the
    /// per-coordinate ablation is on.
    pub r: Vec<f64>,
    pub xi: Vec<f64>,
}

impl ZoQuery {
    /// Draws `r` and `ξ` from `rng`. Shared mode consumes `r` first and then
    /// `ξ_1..ξ_m`; per-coordinate mode consumes `(r_l, ξ_l)` pairs.
    pub fn draw(
        x: &[f64],
        gamma: f64,
        noise: &NoiseModel,
        rng: &mut Stream,
        per_coordinate: bool,
    ) -> Result<Self, EstimatorError> {
        if !(gamma > 0.0) || !gamma.is_finite() {
            return Err(EstimatorError::Parameter(format!("gamma must be positive, got {gamma}")));
        }
        let m = x.len();
        let (r, xi) = if per_coordinate {
            (0..m)
                .map(|_| {
                    let r = uniform_sign_interval(rng);
                    (r, noise.sample(rng))
                })
                .unzip()
        } else {
            let r = uniform_sign_interval(rng);
            (vec![r; m], (0..m).map(|_| noise.sample(rng)).collect())
        };
        Ok(Self { x: x.to_vec(), gamma, r, xi })
    }

    /// Evaluates the estimate with exactly `2m` objective calls.
    pub fn evaluate<P: OnlineProblem + ?Sized>(
        &self,
        problem: &P,
        agent: usize,
        t: usize,
        kernel: &Kernel,
    ) -> Vec<f64> {
        let mut probe = self.x.clone();
        (0..self.x.len())
            .map(|l| {
                let step = self.gamma * self.r[l];
                probe[l] = self.x[l] + step;
                let plus = problem.objective(agent, t, &probe);
                probe[l] = self.x[l] - step;
                let minus = problem.objective(agent, t, &probe);
                probe[l] = self.x[l];
                ((plus - minus) / (2.0 * self.gamma) + self.xi[l]) * kernel.eval(self.r[l])
            })
            .collect()
    }
}

/// One raw estimate `ĝ` for `agent` at round `t`. The query points may leave
/// the feasible set.
#[allow(clippy::too_many_arguments)]
pub fn zo_estimate<P: OnlineProblem + ?Sized>(
    problem: &P,
    agent: usize,
    t: usize,
    x: &[f64],
    gamma: f64,
    kernel: &Kernel,
    noise: &NoiseModel,
    rng: &mut Stream,
    per_coordinate: bool,
) -> Result<Vec<f64>, EstimatorError> {
    let query = ZoQuery::draw(x, gamma, noise, rng, per_coordinate)?;
    Ok(query.evaluate(problem, agent, t, kernel))
}

/// `min{1, α/‖v‖} v`, plus whether the scaling was active.
pub fn clip(v: &[f64], alpha: f64) -> (Vec<f64>, bool) {
    let n = norm(v);
    if n > alpha {
        let s = alpha / n;
        (v.iter().map(|x| x * s).collect(), true)
    } else {
        (v.to_vec(), false)
    }
}

/// Raw and clipped estimate of one agent-round.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateRecord {
    pub raw: Vec<f64>,
    pub clipped: Vec<f64>,
    pub clip_active: bool,
    pub oracle_calls: usize,
}

impl EstimateRecord {
    pub fn new(raw: Vec<f64>, alpha: f64) -> Self {
        let (clipped, clip_active) = clip(&raw, alpha);
        let oracle_calls = 2 * raw.len();
        Self { raw, clipped, clip_active, oracle_calls }
    }
}

/// One line of a bias sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct BiasRow {
    pub gamma: f64,
    pub mean: Vec<f64>,
    /// Largest per-coordinate standard error of the mean.
    pub stderr: f64,
    /// Per-coordinate standard errors.
    pub stderr_per_coord: Vec<f64>,
    pub true_gradient: Vec<f64>,
}

impl BiasRow {
    pub fn bias(&self) -> Vec<f64> {
        self.mean.iter().zip(&self.true_gradient).map(|(a, b)| a - b).collect()
    }

    pub fn bias_norm(&self) -> f64 {
        norm(&self.bias())
    }
}

/// Monte-Carlo mean of the raw estimator at `point` for each `γ`, using
/// agent 0 and round 1 of `problem`. Draws for the `k`-th gamma come from the
/// harness stream `(seed, HARNESS_AGENT, k)`.
#[allow(clippy::too_many_arguments)]
pub fn measure_bias<P: OnlineProblem + ?Sized>(
    problem: &P,
    point: &[f64],
    gammas: &[f64],
    kernel: &Kernel,
    noise: &NoiseModel,
    samples: usize,
    seed: u64,
) -> Result<Vec<BiasRow>, EstimatorError> {
    if samples < 2 {
        return Err(EstimatorError::Parameter("need at least two samples".into()));
    }
    let true_gradient = problem.gradient(0, 1, point).ok_or_else(|| {
        EstimatorError::Parameter("bias measurement needs an analytic gradient".into())
    })?;
    let m = point.len();
    gammas
        .iter()
        .enumerate()
        .map(|(k, &gamma)| {
            let mut rng = stream(seed, HARNESS_AGENT, k as u32);
            // Welford accumulators per coordinate
            let mut mean = vec![0.0; m];
            let mut m2 = vec![0.0; m];
            for s in 0..samples {
                let est = zo_estimate(problem, 0, 1, point, gamma, kernel, noise, &mut rng, false)?;
                for l in 0..m {
                    let d = est[l] - mean[l];
                    mean[l] += d / (s + 1) as f64;
                    m2[l] += d * (est[l] - mean[l]);
                }
            }
            let stderr_per_coord: Vec<f64> = m2
                .iter()
                .map(|v| (v / (samples - 1) as f64 / samples as f64).sqrt())
                .collect();
            let stderr = stderr_per_coord.iter().cloned().fold(0.0, f64::max);
            Ok(BiasRow { gamma, mean, stderr, stderr_per_coord, true_gradient: true_gradient.clone() })
        })
        .collect()
}

/// Least-squares slope of `ln |bias|` against `ln γ`.
pub fn log_log_slope(rows: &[BiasRow]) -> f64 {
    let pts: Vec<(f64, f64)> = rows.iter().map(|r| (r.gamma.ln(), r.bias_norm().ln())).collect();
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::example_kernel;
    use crate::problems::{ConstraintSet, FnProblem};
    use proptest::prelude::*;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    #[test]
    fn clip_examples() {
        let (c, active) = clip(&[3.0, 4.0], 2.5);
        assert_eq!(c, vec![1.5, 2.0]);
        assert!(active);
        assert_eq!(norm(&c), 2.5);
        assert_eq!(clip(&[1.0, 1.0], 10.0), (vec![1.0, 1.0], false));
        assert_eq!(clip(&[0.0, 0.0], 1.0), (vec![0.0, 0.0], false));
    }

    #[test]
    fn record_counts_calls() {
        let rec = EstimateRecord::new(vec![3.0, 4.0, 0.0], 1.0);
        assert_eq!(rec.oracle_calls, 6);
        assert!(rec.clip_active);
        assert!((norm(&rec.clipped) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn oracle_is_called_twice_per_coordinate() {
        let calls = Arc::new(AtomicUsize::new(0));
        let c = calls.clone();
        let p = FnProblem::new(1, 1, ConstraintSet::cube(4, -1.0, 1.0), move |_, _, x| {
            c.fetch_add(1, Ordering::Relaxed);
            x.iter().sum()
        });
        let mut rng = stream(1, 0, 1);
        let k = example_kernel();
        for _ in 0..10 {
            zo_estimate(&p, 0, 1, &[0.0; 4], 0.1, &k, &NoiseModel::None, &mut rng, false).unwrap();
        }
        assert_eq!(calls.load(Ordering::Relaxed), 80);
    }

    #[test]
    fn constant_objective_gives_zero() {
        let p = FnProblem::constant(1, 1, ConstraintSet::cube(2, -1.0, 1.0), 4.2);
        let mut rng = stream(3, 0, 1);
        for _ in 0..100 {
            let g = zo_estimate(&p, 0, 1, &[0.3, -0.2], 0.5, &example_kernel(), &NoiseModel::None, &mut rng, false)
                .unwrap();
            assert_eq!(g, vec![0.0, 0.0]);
        }
    }

    #[test]
    fn rejects_nonpositive_gamma() {
        let p = FnProblem::monomial(2);
        let mut rng = stream(0, 0, 1);
        for gamma in [0.0, -1.0, f64::NAN] {
            assert!(zo_estimate(&p, 0, 1, &[0.0], gamma, &example_kernel(), &NoiseModel::None, &mut rng, false)
                .is_err());
        }
    }

    #[test]
    fn shared_r_across_coordinates() {
        let mut rng = stream(5, 2, 7);
        let q = ZoQuery::draw(&[0.0; 3], 0.1, &NoiseModel::None, &mut rng, false).unwrap();
        assert!(q.r.iter().all(|&r| r == q.r[0]));
        let q = ZoQuery::draw(&[0.0; 3], 0.1, &NoiseModel::None, &mut rng, true).unwrap();
        assert!(q.r[0] != q.r[1]);
    }

    #[test]
    fn cubic_query_is_exact_per_draw() {
        // h = γ r = 0.3 and 2γ = 1
        let p = FnProblem::monomial(3);
        let k = example_kernel();
        let q = ZoQuery { x: vec![1.0], gamma: 0.5, r: vec![0.6], xi: vec![0.0] };
        let h: f64 = 0.3;
        let expect = ((1.0 + h).powi(3) - (1.0 - h).powi(3)) * k.eval(0.6);
        assert!((q.evaluate(&p, 0, 1, &k)[0] - expect).abs() < 1e-14);
    }

    #[test]
    fn quadratic_bias_is_zero() {
        let p = FnProblem::monomial(2);
        let rows = measure_bias(&p, &[0.7], &[0.5], &example_kernel(), &NoiseModel::None, 20_000, 11).unwrap();
        let r = &rows[0];
        assert!(r.bias_norm() < 3.0 * r.stderr, "{r:?}");
    }

    proptest! {
        #[test]
        fn clip_properties(
            v in prop::collection::vec(-100.0..100.0f64, 1..5),
            alpha in 0.01..50.0f64,
            c in 0.01..20.0f64,
        ) {
            let (w, active) = clip(&v, alpha);
            prop_assert!(norm(&w) <= alpha * (1.0 + 1e-12));
            prop_assert_eq!(active, norm(&v) > alpha);
            if !active {
                prop_assert_eq!(&w, &v);
            }
            let cv: Vec<f64> = v.iter().map(|x| c * x).collect();
            let (cw, _) = clip(&cv, c * alpha);
            for (a, b) in cw.iter().zip(&w) {
                prop_assert!((a - c * b).abs() <= 1e-9 * (1.0 + a.abs()));
            }
        }
    }
}
