//! Adaptive Gauss–Legendre quadrature on finite intervals.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
#[error("quadrature did not reach tolerance {tol:e} within {budget} panels (residual estimate {residual:e})")]
pub struct QuadratureError {
    pub tol: f64,
    pub budget: usize,
    pub residual: f64,
    /// Best available estimate of the integral.
    pub estimate: f64,
}

/// Nodes and weights of an `order`-point Gauss–Legendre rule on `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussLegendre {
    pub fn new(order: usize) -> Self {
        assert!(order >= 1, "quadrature order must be positive");
        let mut nodes = vec![0.0; order];
        let mut weights = vec![0.0; order];
        let n = order as f64;
        for i in 0..order.div_ceil(2) {
            // Tricomi initial guess, then Newton on P_n.
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n + 0.5)).cos();
            for _ in 0..100 {
                let (p, d) = legendre_with_derivative(order, x);
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, dp) = legendre_with_derivative(order, x);
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            weights[i] = w;
            nodes[order - 1 - i] = x;
            weights[order - 1 - i] = w;
        }
        Self { nodes, weights }
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Fixed-rule estimate of `∫_a^b f`.
    pub fn integrate<F: Fn(f64) -> f64>(&self, f: &F, a: f64, b: f64) -> f64 {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        half * self
            .nodes
            .iter()
            .zip(&self.weights)
            .map(|(x, w)| w * f(mid + half * x))
            .sum::<f64>()
    }
}

/// `(P_n(x), P_n'(x))` via the three-term recurrence.
pub fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    if n == 0 {
        return (1.0, 0.0);
    }
    let (mut p0, mut p1) = (1.0, x);
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let d = if (1.0 - x * x).abs() < 1e-300 {
        // endpoint limit P_n'(±1) = (±1)^(n-1) n(n+1)/2
        let s = if x > 0.0 || n % 2 == 1 { 1.0 } else { -1.0 };
        s * (n * (n + 1)) as f64 / 2.0
    } else {
        n as f64 * (x * p1 - p0) / (x * x - 1.0)
    };
    (p1, d)
}

/// Adaptive bisection driven by a fixed Gauss–Legendre rule.
#[derive(Debug, Clone)]
pub struct AdaptiveQuadrature {
    rule: GaussLegendre,
    pub tol: f64,
    pub max_panels: usize,
}

impl Default for AdaptiveQuadrature {
    fn default() -> Self {
        Self::new(10, 1e-10, 4096)
    }
}

impl AdaptiveQuadrature {
    pub fn new(order: usize, tol: f64, max_panels: usize) -> Self {
        Self { rule: GaussLegendre::new(order), tol, max_panels }
    }

    /// `∫_a^b f` to absolute tolerance `tol`.
    ///
    /// A panel is accepted when its one-panel and two-half-panel estimates
    /// agree to within its share of the tolerance.
    pub fn integrate<F: Fn(f64) -> f64>(&self, f: F, a: f64, b: f64) -> Result<f64, QuadratureError> {
        let width = b - a;
        let mut stack = vec![(a, b, self.rule.integrate(&f, a, b))];
        let mut total = 0.0;
        let mut residual = 0.0;
        let mut panels = 0usize;
        while let Some((lo, hi, whole)) = stack.pop() {
            let mid = 0.5 * (lo + hi);
            let left = self.rule.integrate(&f, lo, mid);
            let right = self.rule.integrate(&f, mid, hi);
            let err = (left + right - whole).abs();
            let share = self.tol * (hi - lo) / width;
            panels += 1;
            if err <= share || panels + stack.len() >= self.max_panels {
                total += left + right;
                if err > share {
                    residual += err;
                }
            } else {
                stack.push((lo, mid, left));
                stack.push((mid, hi, right));
            }
        }
        if residual > self.tol {
            return Err(QuadratureError {
                tol: self.tol,
                budget: self.max_panels,
                residual,
                estimate: total,
            });
        }
        Ok(total)
    }
}
