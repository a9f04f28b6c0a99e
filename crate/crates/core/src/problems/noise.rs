use crate::rng::Stream;
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::sync::Arc;

use super::ProblemError;

pub type Sampler = Arc<dyn Fn(&mut Stream) -> f64 + Send + Sync>;

/// Additive noise `ξ`. The mean is allowed to be nonzero; only the second
/// moment needs to be bounded.
#[derive(Clone, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum NoiseModel {
    #[default]
    None,
    ConstantBias { value: f64 },
    Gaussian { mean: f64, std: f64 },
    /// Fisher–Snedecor `F(d1, d2)`.
    FisherF { d1: f64, d2: f64 },
    #[serde(skip)]
    Custom { sampler: Sampler, sigma_bound: f64 },
}

impl fmt::Debug for NoiseModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NoiseModel::None => write!(f, "None"),
            NoiseModel::ConstantBias { value } => write!(f, "ConstantBias({value})"),
            NoiseModel::Gaussian { mean, std } => write!(f, "Gaussian({mean}, {std})"),
            NoiseModel::FisherF { d1, d2 } => write!(f, "FisherF({d1}, {d2})"),
            NoiseModel::Custom { sigma_bound, .. } => write!(f, "Custom(sigma <= {sigma_bound})"),
        }
    }
}

impl NoiseModel {
    pub fn custom<F>(sigma_bound: f64, sampler: F) -> Self
    where
        F: Fn(&mut Stream) -> f64 + Send + Sync + 'static,
    {
        NoiseModel::Custom { sampler: Arc::new(sampler), sigma_bound }
    }

    pub fn validate(&self) -> Result<(), ProblemError> {
        let ok = match self {
            NoiseModel::None | NoiseModel::ConstantBias { .. } => true,
            NoiseModel::Gaussian { std, .. } => *std >= 0.0 && std.is_finite(),
            NoiseModel::FisherF { d1, d2 } => *d1 > 0.0 && *d2 > 0.0,
            NoiseModel::Custom { sigma_bound, .. } => *sigma_bound >= 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(ProblemError::Parameter(format!("invalid noise parameters {self:?}")))
        }
    }

    pub fn is_none(&self) -> bool {
        matches!(self, NoiseModel::None)
    }

    pub fn sample(&self, rng: &mut Stream) -> f64 {
        match self {
            NoiseModel::None => 0.0,
            NoiseModel::ConstantBias { value } => *value,
            NoiseModel::Gaussian { mean, std } => {
                Normal::new(*mean, *std).expect("validated gaussian").sample(rng)
            }
            NoiseModel::FisherF { d1, d2 } => {
                // ratio of independent scaled chi-squares
                let a = ChiSquared::new(*d1).expect("validated d1").sample(rng) / d1;
                let b = ChiSquared::new(*d2).expect("validated d2").sample(rng) / d2;
                a / b
            }
            NoiseModel::Custom { sampler, .. } => sampler(rng),
        }
    }

    pub fn mean(&self) -> Option<f64> {
        match self {
            NoiseModel::None => Some(0.0),
            NoiseModel::ConstantBias { value } => Some(*value),
            NoiseModel::Gaussian { mean, .. } => Some(*mean),
            NoiseModel::FisherF { d2, .. } if *d2 > 2.0 => Some(d2 / (d2 - 2.0)),
            _ => None,
        }
    }

    pub fn variance(&self) -> Option<f64> {
        match self {
            NoiseModel::None | NoiseModel::ConstantBias { .. } => Some(0.0),
            NoiseModel::Gaussian { std, .. } => Some(std * std),
            NoiseModel::FisherF { d1, d2 } if *d2 > 4.0 => Some(
                2.0 * d2 * d2 * (d1 + d2 - 2.0) / (d1 * (d2 - 2.0).powi(2) * (d2 - 4.0)),
            ),
            _ => None,
        }
    }

    /// `σ` with `E[ξ²] <= σ²`; infinite when the second moment does not exist.
    pub fn sigma_bound(&self) -> f64 {
        if let NoiseModel::Custom { sigma_bound, .. } = self {
            return *sigma_bound;
        }
        match (self.mean(), self.variance()) {
            (Some(m), Some(v)) => (v + m * m).sqrt(),
            _ => f64::INFINITY,
        }
    }
}

/// Uniform draw on `[-1, 1]`.
pub fn uniform_sign_interval(rng: &mut Stream) -> f64 {
    rng.random_range(-1.0..=1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, HARNESS_AGENT};

    #[test]
    fn fisher_f_moments() {
        let noise = NoiseModel::FisherF { d1: 3.0, d2: 5.0 };
        assert!((noise.mean().unwrap() - 5.0 / 3.0).abs() < 1e-15);
        assert!((noise.variance().unwrap() - 100.0 / 9.0).abs() < 1e-12);
        assert!(NoiseModel::FisherF { d1: 3.0, d2: 4.0 }.sigma_bound().is_infinite());
    }

    #[test]
    fn constant_and_gaussian() {
        let mut rng = stream(1, HARNESS_AGENT, 0);
        assert_eq!(NoiseModel::ConstantBias { value: 5.0 }.sample(&mut rng), 5.0);
        assert_eq!(NoiseModel::ConstantBias { value: -2.0 }.sigma_bound(), 2.0);
        let g = NoiseModel::Gaussian { mean: 1.0, std: 2.0 };
        let n = 200_000;
        let mean = (0..n).map(|_| g.sample(&mut rng)).sum::<f64>() / n as f64;
        assert!((mean - 1.0).abs() < 0.03);
        assert!((g.sigma_bound() - 5f64.sqrt()).abs() < 1e-15);
        assert!(NoiseModel::Gaussian { mean: 0.0, std: -1.0 }.validate().is_err());
    }

    #[test]
    fn serde_shape() {
        let n: NoiseModel = serde_json::from_str(r#"{"kind":"fisher-f","d1":3,"d2":5}"#).unwrap();
        assert!(matches!(n, NoiseModel::FisherF { .. }));
        assert!(serde_json::from_str::<NoiseModel>(r#"{"kind":"constant-bias","valu":1}"#).is_err());
    }
}
