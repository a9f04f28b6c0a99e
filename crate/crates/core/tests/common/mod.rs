//! Reference computations that do not go through the library's numerics.
#![allow(dead_code)]

/// Monomial coefficients (lowest degree first) of `K(r) = (15r/4)(5 - 7r²)`.
pub const EXAMPLE_KERNEL: [f64; 4] = [0.0, 75.0 / 4.0, 0.0, -105.0 / 4.0];

/// Observation gains of the six-sensor instance.
pub const SENSOR_GAINS: [f64; 6] = [0.5, 0.1, 2.0, 1.0, 1.2, 1.8];

/// Exact `∫_{-1}^{1} r^a p(r) dr` for a polynomial with the given coefficients.
pub fn poly_moment(coeffs: &[f64], a: u32) -> f64 {
    coeffs
        .iter()
        .enumerate()
        .map(|(k, c)| {
            let p = a as usize + k;
            if p % 2 == 0 {
                2.0 * c / (p + 1) as f64
            } else {
                0.0
            }
        })
        .sum()
}

/// Exact `∫_{-1}^{1} p(r)² dr`.
pub fn poly_square_integral(coeffs: &[f64]) -> f64 {
    let mut sq = vec![0.0; 2 * coeffs.len()];
    for (i, a) in coeffs.iter().enumerate() {
        for (j, b) in coeffs.iter().enumerate() {
            sq[i + j] += a * b;
        }
    }
    poly_moment(&sq, 0)
}

/// `∫ |r|^4 |K(r)| dr` for the example kernel, split at its positive root
/// `sqrt(5/7)`; the integrand is even, so this is twice the
/// half-line integral.
pub fn example_kernel_kappa4() -> f64 {
    let antiderivative = |r: f64| 75.0 / 24.0 * r.powi(6) - 105.0 / 32.0 * r.powi(8);
    let root = (5.0f64 / 7.0).sqrt();
    2.0 * (2.0 * antiderivative(root) - antiderivative(0.0) - antiderivative(1.0))
}

/// `E[K(r) (f(x+γr) - f(x-γr)) / 2γ]` for `f(x) = x^p`, `r ~ U[-1,1]`,
/// by binomial expansion: only odd powers of `γr` survive the difference.
pub fn monomial_estimator_mean(kernel: &[f64], p: u32, x: f64, gamma: f64) -> f64 {
    let mut total = 0.0;
    for j in (1..=p).step_by(2) {
        let binom = binomial(p, j);
        // (f(x+h) - f(x-h)) / 2γ contributes binom x^{p-j} γ^{j-1} r^j
        let coef = binom * x.powi((p - j) as i32) * gamma.powi(j as i32 - 1);
        total += coef * 0.5 * poly_moment(kernel, j);
    }
    total
}

fn binomial(n: u32, k: u32) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Grid minimizer of a convex function on `[lo, hi]` with spacing `step`.
/// A scan at `1000·step` brackets the minimum; the bracket is then scanned at
/// `step`. Convexity makes the bracket contain the fine-grid minimizer.
pub fn grid_argmin_1d(f: impl Fn(f64) -> f64, lo: f64, hi: f64, step: f64) -> f64 {
    let scan = |a: f64, b: f64, h: f64| {
        let k = ((b - a) / h).round() as usize;
        let mut best = (a, f(a));
        for i in 1..=k {
            let x = (a + i as f64 * h).min(b);
            let v = f(x);
            if v < best.1 {
                best = (x, v);
            }
        }
        best.0
    };
    let coarse = 1000.0 * step;
    let c = scan(lo, hi, coarse);
    scan((c - coarse).max(lo), (c + coarse).min(hi), step)
}

/// Closed-form constrained least-squares point for the sensor instance:
/// the gain-weighted average of measurements clamped to `[-5, 5]`.
pub fn sensor_minimizer(measurements: &[f64]) -> f64 {
    let num: f64 = SENSOR_GAINS.iter().zip(measurements).map(|(g, y)| g * y).sum();
    let den: f64 = SENSOR_GAINS.iter().map(|g| g * g).sum();
    (num / den).clamp(-5.0, 5.0)
}

/// `z(t) = 0.2 z(t-1) + 0.5 cos(t/60) + 0.5` from `z(0) = 0`, for `t = 1..=T`.
pub fn target_path(horizon: usize) -> Vec<f64> {
    let mut z = 0.0;
    (1..=horizon)
        .map(|t| {
            z = 0.2 * z + 0.5 * (t as f64 / 60.0).cos() + 0.5;
            z
        })
        .collect()
}

/// `(C, λ)` with `k = (n-1)U`: `C = 2(1 + l^-k)/(1 - l^k)`, `λ = (1 - l^k)^(1/k)`.
pub fn mixing_reference(n: usize, window: usize, l: f64) -> (f64, f64) {
    let k = ((n - 1) * window) as f64;
    let c = 2.0 * (1.0 + l.powf(-k)) / (1.0 - l.powf(k));
    (c, (1.0 - l.powf(k)).powf(1.0 / k))
}

/// Variance of `F(d1, d2)`, finite for `d2 > 4`.
pub fn fisher_variance(d1: f64, d2: f64) -> f64 {
    2.0 * d2 * d2 * (d1 + d2 - 2.0) / (d1 * (d2 - 2.0).powi(2) * (d2 - 4.0))
}

/// `θ1 λ^t + θ2 Σ_{s=1}^{t} α_s β_s λ^(t-s)` summed term by term.
pub fn envelope_direct(theta1: f64, theta2: f64, lambda: f64, alpha_beta: &[f64], t: usize) -> f64 {
    let tail: f64 = (1..=t).map(|s| alpha_beta[s - 1] * lambda.powi((t - s) as i32)).sum();
    theta1 * lambda.powi(t as i32) + theta2 * tail
}

/// Pearson correlation in two passes.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    sab / (saa * sbb).sqrt()
}
