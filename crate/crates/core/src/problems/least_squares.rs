use crate::norm;
use crate::rng::{stream, PROBLEM_AGENT};

use super::{ConstraintSet, NoiseModel, OnlineProblem, ProblemBounds, ProblemError};

/// Observation gains of the six-sensor target-tracking instance.
pub const SENSOR_SENSITIVITIES: [f64; 6] = [0.5, 0.1, 2.0, 1.0, 1.2, 1.8];

/// `z(t) = 0.2 z(t-1) + 0.5 cos(t/60) + 0.5` for `t = 1..=horizon`.
pub fn target_recursion(z0: f64, horizon: usize) -> Vec<f64> {
    let mut z = z0;
    (1..=horizon)
        .map(|t| {
            z = 0.2 * z + 0.5 * (t as f64 / 60.0).cos() + 0.5;
            z
        })
        .collect()
}

/// Agents observe a moving target through scalar gains:
/// `f_i^t(x) = ½ ‖y_i(t) - M_i x‖²` with `y_i(t) = M_i z(t) + e_i(t)`.
///
/// The measurement noise `e_i(t)` is drawn once at construction and frozen,
/// so each `f_i^t` is a deterministic function.
#[derive(Debug, Clone)]
pub struct TrackingLeastSquares {
    sensitivities: Vec<f64>,
    targets: Vec<Vec<f64>>,
    noise: Vec<Vec<Vec<f64>>>,
    measurements: Vec<Vec<Vec<f64>>>,
    constraint: ConstraintSet,
    bounds: ProblemBounds,
    gain_energy: f64,
}

impl TrackingLeastSquares {
    /// `targets[t-1]` is `z(t)`. Noise for round `t` comes from the problem
    /// stream `(seed, PROBLEM_AGENT, t)`, agent-major then coordinate.
    pub fn new(
        sensitivities: Vec<f64>,
        targets: Vec<Vec<f64>>,
        measurement_noise: &NoiseModel,
        constraint: ConstraintSet,
        seed: u64,
    ) -> Result<Self, ProblemError> {
        constraint.validate()?;
        measurement_noise.validate()?;
        let m = constraint.dim();
        if sensitivities.is_empty() {
            return Err(ProblemError::Parameter("need at least one agent".into()));
        }
        if targets.is_empty() {
            return Err(ProblemError::Parameter("horizon must be at least 1".into()));
        }
        if let Some(t) = targets.iter().position(|z| z.len() != m) {
            return Err(ProblemError::Parameter(format!(
                "target at round {} has dimension {}, constraint has {m}",
                t + 1,
                targets[t].len()
            )));
        }
        let gain_energy: f64 = sensitivities.iter().map(|g| g * g).sum();
        if !(gain_energy > 0.0) || sensitivities.iter().any(|g| !g.is_finite()) {
            return Err(ProblemError::Parameter("sensitivities must be finite and not all zero".into()));
        }

        let n = sensitivities.len();
        let mut noise = Vec::with_capacity(targets.len());
        let mut measurements = Vec::with_capacity(targets.len());
        for (k, z) in targets.iter().enumerate() {
            let mut rng = stream(seed, PROBLEM_AGENT, (k + 1) as u32);
            let e: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..m).map(|_| measurement_noise.sample(&mut rng)).collect())
                .collect();
            let y = sensitivities
                .iter()
                .zip(&e)
                .map(|(g, ei)| z.iter().zip(ei).map(|(zk, ek)| g * zk + ek).collect())
                .collect();
            noise.push(e);
            measurements.push(y);
        }

        let gain_max = sensitivities.iter().fold(0.0f64, |a, g| a.max(g.abs()));
        let y_cap = measurements
            .iter()
            .flatten()
            .map(|y: &Vec<f64>| norm(y))
            .fold(0.0f64, f64::max);
        let radius = constraint.max_norm();
        let bounds = ProblemBounds {
            diameter: constraint.diameter(),
            value: 0.5 * (y_cap + gain_max * radius).powi(2),
            gradient: gain_max * (gain_max * radius + y_cap),
            // quadratic: the Taylor remainder beyond order 2 vanishes
            holder_constant: 0.0,
            holder_order: 3.0,
            lipschitz: gain_max * gain_max,
        };
        Ok(Self {
            sensitivities,
            targets,
            noise,
            measurements,
            constraint,
            bounds,
            gain_energy,
        })
    }

    pub fn sensitivities(&self) -> &[f64] {
        &self.sensitivities
    }

    /// `z(t)`.
    pub fn target(&self, t: usize) -> &[f64] {
        &self.targets[self.index(t)]
    }

    /// `y_i(t)`.
    pub fn measurement(&self, agent: usize, t: usize) -> &[f64] {
        &self.measurements[self.index(t)][agent]
    }

    /// `e_i(t)`.
    pub fn noise(&self, agent: usize, t: usize) -> &[f64] {
        &self.noise[self.index(t)][agent]
    }

    /// Unconstrained least-squares point `Σ M_i y_i / Σ M_i²`.
    pub fn unconstrained_minimizer(&self, t: usize) -> Vec<f64> {
        let k = self.index(t);
        let mut acc = vec![0.0; self.dim()];
        for (g, y) in self.sensitivities.iter().zip(&self.measurements[k]) {
            for (a, v) in acc.iter_mut().zip(y) {
                *a += g * v;
            }
        }
        acc.iter().map(|a| a / self.gain_energy).collect()
    }

    fn index(&self, t: usize) -> usize {
        assert!(
            t >= 1 && t <= self.targets.len(),
            "round {t} outside the horizon 1..={}",
            self.targets.len()
        );
        t - 1
    }
}

impl OnlineProblem for TrackingLeastSquares {
    fn agents(&self) -> usize {
        self.sensitivities.len()
    }

    fn dim(&self) -> usize {
        self.constraint.dim()
    }

    fn horizon(&self) -> usize {
        self.targets.len()
    }

    fn constraint(&self) -> &ConstraintSet {
        &self.constraint
    }

    fn bounds(&self) -> ProblemBounds {
        self.bounds
    }

    fn objective(&self, agent: usize, t: usize, x: &[f64]) -> f64 {
        let g = self.sensitivities[agent];
        let y = self.measurement(agent, t);
        0.5 * y.iter().zip(x).map(|(yk, xk)| (yk - g * xk).powi(2)).sum::<f64>()
    }

    fn gradient(&self, agent: usize, t: usize, x: &[f64]) -> Option<Vec<f64>> {
        let g = self.sensitivities[agent];
        let y = self.measurement(agent, t);
        Some(y.iter().zip(x).map(|(yk, xk)| g * (g * xk - yk)).collect())
    }

    /// `f^t(x) = (Σ M_i² / 2n) ‖x - x̂‖² + const`, so the constrained minimizer
    /// is the projection of `x̂` onto the feasible set.
    fn minimizer(&self, t: usize) -> Result<Vec<f64>, ProblemError> {
        if t == 0 || t > self.horizon() {
            return Err(ProblemError::Round { t, horizon: self.horizon() });
        }
        Ok(self.constraint.project(&self.unconstrained_minimizer(t)))
    }
}

/// Six sensors, `m = 1`, `Ω = [-5, 5]`, `F(3, 5)` measurement noise and the
/// damped-cosine target path started from `z(0) = 0`.
pub fn sensor_network_problem(seed: u64, horizon: usize) -> Result<TrackingLeastSquares, ProblemError> {
    let targets = target_recursion(0.0, horizon).into_iter().map(|z| vec![z]).collect();
    TrackingLeastSquares::new(
        SENSOR_SENSITIVITIES.to_vec(),
        targets,
        &NoiseModel::FisherF { d1: 3.0, d2: 5.0 },
        ConstraintSet::cube(1, -5.0, 5.0),
        seed,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_target_value() {
        let z = target_recursion(0.0, 3);
        let expected = 0.5 * (1.0f64 / 60.0).cos() + 0.5;
        assert!((z[0] - expected).abs() < 1e-15);
        assert!((z[0] - 0.99993).abs() < 1e-5);
        assert!((z[1] - (0.2 * z[0] + 0.5 * (2.0f64 / 60.0).cos() + 0.5)).abs() < 1e-15);
    }

    #[test]
    fn identical_noiseless_sensors_track_the_clamped_target() {
        let targets = vec![vec![1.5], vec![-7.0], vec![9.0]];
        let p = TrackingLeastSquares::new(
            vec![1.0; 4],
            targets,
            &NoiseModel::None,
            ConstraintSet::cube(1, -5.0, 5.0),
            0,
        )
        .unwrap();
        assert_eq!(p.minimizer(1).unwrap(), vec![1.5]);
        assert_eq!(p.minimizer(2).unwrap(), vec![-5.0]);
        assert_eq!(p.minimizer(3).unwrap(), vec![5.0]);
        assert!(p.minimizer(4).is_err());
    }

    #[test]
    fn single_sensor_examples() {
        let make = |y: f64| {
            TrackingLeastSquares::new(vec![1.0], vec![vec![y]], &NoiseModel::None, ConstraintSet::cube(1, -5.0, 5.0), 0)
                .unwrap()
        };
        assert_eq!(make(3.0).minimizer(1).unwrap(), vec![3.0]);
        assert_eq!(make(12.0).minimizer(1).unwrap(), vec![5.0]);
    }

    #[test]
    fn frozen_noise_is_seeded() {
        let a = sensor_network_problem(7, 50).unwrap();
        let b = sensor_network_problem(7, 50).unwrap();
        let c = sensor_network_problem(8, 50).unwrap();
        assert_eq!(a.measurement(3, 20), b.measurement(3, 20));
        assert_ne!(a.measurement(3, 20), c.measurement(3, 20));
        for t in 1..=50 {
            for i in 0..6 {
                let y = a.measurement(i, t)[0];
                let expect = SENSOR_SENSITIVITIES[i] * a.target(t)[0] + a.noise(i, t)[0];
                assert_eq!(y, expect);
                assert!(a.noise(i, t)[0] > 0.0, "F draws are positive");
            }
        }
    }

    #[test]
    fn gradient_bound_covers_feasible_set() {
        let p = sensor_network_problem(3, 200).unwrap();
        let b = p.bounds();
        for t in 1..=200 {
            for i in 0..6 {
                for x in [-5.0, 0.0, 5.0] {
                    assert!(norm(&p.gradient(i, t, &[x]).unwrap()) <= b.gradient);
                    assert!(p.objective(i, t, &[x]).abs() <= b.value);
                }
            }
        }
    }

    #[test]
    fn invalid_construction() {
        let set = ConstraintSet::cube(1, -1.0, 1.0);
        assert!(TrackingLeastSquares::new(vec![0.0], vec![vec![0.0]], &NoiseModel::None, set.clone(), 0).is_err());
        assert!(TrackingLeastSquares::new(vec![1.0], vec![vec![0.0, 1.0]], &NoiseModel::None, set.clone(), 0).is_err());
        assert!(TrackingLeastSquares::new(vec![1.0], vec![], &NoiseModel::None, set, 0).is_err());
    }
}
