//! Kernels on `[-1, 1]` for the two-point estimator.
//!
//! A kernel of order `ℓ` satisfies `∫ r K(r) dr = 2` and `∫ r^a K(r) dr = 0`
//! for `a ∈ {0, 2, 3, ..., ℓ}`. With `r ~ Uniform[-1, 1]` this makes
//! `E[r K(r)] = 1` while annihilating every other Taylor power up to `ℓ`, and
//! `E[K(r)] = 0` removes any noise mean independent of `r`.

use crate::quadrature::{AdaptiveQuadrature, QuadratureError};
use std::fmt;
use std::sync::Arc;
use thiserror::Error;

/// Pass threshold for each moment condition.
pub const MOMENT_TOL: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum KernelError {
    #[error("invalid kernel parameter: {0}")]
    Parameter(String),
    #[error("moment {what}: {source}")]
    Quadrature {
        what: String,
        #[source]
        source: QuadratureError,
    },
}

#[derive(Clone)]
enum Shape {
    /// Monomial coefficients, lowest degree first.
    Polynomial(Vec<f64>),
    Custom(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

#[derive(Clone)]
pub struct Kernel {
    name: String,
    order: u32,
    shape: Shape,
}

impl fmt::Debug for Kernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut d = f.debug_struct("Kernel");
        d.field("name", &self.name).field("order", &self.order);
        if let Shape::Polynomial(c) = &self.shape {
            d.field("coefficients", c);
        }
        d.finish()
    }
}

impl Kernel {
    pub fn polynomial(name: impl Into<String>, order: u32, coefficients: Vec<f64>) -> Self {
        Self { name: name.into(), order, shape: Shape::Polynomial(coefficients) }
    }

    /// A kernel given by an arbitrary bounded function on `[-1, 1]`.
    pub fn custom<F>(name: impl Into<String>, order: u32, f: F) -> Self
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        Self { name: name.into(), order, shape: Shape::Custom(Arc::new(f)) }
    }

    /// Parses `k3`, `legendre-<ell>`, or comma-separated monomial coefficients
    /// (lowest degree first; the order is taken to be the degree).
    pub fn parse(spec: &str) -> Result<Self, KernelError> {
        let spec = spec.trim();
        if spec == "k3" {
            return Ok(example_kernel());
        }
        if let Some(ell) = spec.strip_prefix("legendre-") {
            let ell = ell
                .parse()
                .map_err(|_| KernelError::Parameter(format!("bad legendre order `{ell}`")))?;
            return legendre_kernel(ell);
        }
        let coefficients = spec
            .split(',')
            .map(|c| c.trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|_| KernelError::Parameter(format!("unknown kernel `{spec}`")))?;
        let degree = coefficients.iter().rposition(|c| *c != 0.0).unwrap_or(0);
        Ok(Self::polynomial(spec, degree.max(1) as u32, coefficients))
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Highest power annihilated by the moment conditions.
    pub fn order(&self) -> u32 {
        self.order
    }

    pub fn coefficients(&self) -> Option<&[f64]> {
        match &self.shape {
            Shape::Polynomial(c) => Some(c),
            Shape::Custom(_) => None,
        }
    }

    pub fn eval(&self, r: f64) -> f64 {
        match &self.shape {
            Shape::Polynomial(c) => c.iter().rev().fold(0.0, |acc, k| acc * r + k),
            Shape::Custom(f) => f(r),
        }
    }
}

/// `K(r) = (15 r / 4)(5 - 7 r^2)`, order 3.
pub fn example_kernel() -> Kernel {
    Kernel::polynomial("k3", 3, vec![0.0, 75.0 / 4.0, 0.0, -105.0 / 4.0])
}

/// Monomial coefficients of the Legendre polynomial `P_k`.
fn legendre_coefficients(k: usize) -> Vec<f64> {
    let mut prev = vec![1.0];
    if k == 0 {
        return prev;
    }
    let mut cur = vec![0.0, 1.0];
    for j in 1..k {
        // (j+1) P_{j+1} = (2j+1) x P_j - j P_{j-1}
        let j = j as f64;
        let mut next = vec![0.0; cur.len() + 1];
        for (d, c) in cur.iter().enumerate() {
            next[d + 1] += (2.0 * j + 1.0) * c / (j + 1.0);
        }
        for (d, c) in prev.iter().enumerate() {
            next[d] -= j * c / (j + 1.0);
        }
        prev = cur;
        cur = next;
    }
    cur
}

/// Polynomial kernel of odd order `ell >= 3`.
///
/// `K(r) = Σ_{k ≤ ell} (2k + 1) P_k'(0) P_k(r)` reproduces the derivative at 0
/// for every polynomial of degree `≤ ell` under the inner product
/// `½ ∫ f g dr`, which is exactly the moment conditions. For `ell = 3` this
/// is [`example_kernel`].
pub fn legendre_kernel(ell: u32) -> Result<Kernel, KernelError> {
    if ell < 3 || ell.is_multiple_of(2) {
        return Err(KernelError::Parameter(format!(
            "kernel order must be odd and >= 3, got {ell}"
        )));
    }
    let mut coeffs = vec![0.0; ell as usize + 1];
    for k in (1..=ell as usize).step_by(2) {
        let p = legendre_coefficients(k);
        let scale = (2 * k + 1) as f64 * p[1];
        for (d, c) in p.iter().enumerate() {
            coeffs[d] += scale * c;
        }
    }
    Ok(Kernel::polynomial(format!("legendre-{ell}"), ell, coeffs))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MomentReport {
    pub kernel: String,
    pub eps: f64,
    /// `(a, ∫ r^a K(r) dr)` for `a = 0..=order`.
    pub moments: Vec<(u32, f64)>,
    pub kappa: f64,
    pub kappa_eps: f64,
    pub max_violation: f64,
}

impl MomentReport {
    pub fn required(a: u32) -> f64 {
        if a == 1 {
            2.0
        } else {
            0.0
        }
    }

    pub fn passed(&self) -> bool {
        self.max_violation <= MOMENT_TOL && self.kappa.is_finite() && self.kappa_eps.is_finite()
    }
}

impl fmt::Display for MomentReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "kernel {} (order {}), eps = {}", self.kernel, self.moments.len() - 1, self.eps)?;
        writeln!(f, "{:>10}  {:>22}  {:>10}  {:>10}  status", "quantity", "value", "required", "deviation")?;
        for &(a, v) in &self.moments {
            let req = Self::required(a);
            let dev = (v - req).abs();
            let status = if dev <= MOMENT_TOL { "ok" } else { "FAIL" };
            writeln!(f, "{:>10}  {:>22.15e}  {:>10}  {:>10.3e}  {status}", format!("∫r^{a}K"), v, req, dev)?;
        }
        writeln!(f, "{:>10}  {:>22.15e}", "kappa", self.kappa)?;
        writeln!(f, "{:>10}  {:>22.15e}", "kappa_eps", self.kappa_eps)?;
        write!(
            f,
            "max violation {:.3e}: {}",
            self.max_violation,
            if self.passed() { "PASS" } else { "FAIL" }
        )
    }
}

/// Integrates every moment condition plus `κ = ∫ K²` and `κ_ε = ∫ |r|^ε |K|`.
pub fn check_moments(kernel: &Kernel, eps: f64) -> Result<MomentReport, KernelError> {
    if !(eps >= 2.0) || !eps.is_finite() {
        return Err(KernelError::Parameter(format!("eps must be a real >= 2, got {eps}")));
    }
    let quad = AdaptiveQuadrature::default();
    let integrate = |what: String, f: &dyn Fn(f64) -> f64| {
        quad.integrate(f, -1.0, 1.0)
            .map_err(|source| KernelError::Quadrature { what, source })
    };
    let mut moments = Vec::with_capacity(kernel.order as usize + 1);
    let mut max_violation = 0.0f64;
    for a in 0..=kernel.order {
        let v = integrate(format!("r^{a} K"), &|r| r.powi(a as i32) * kernel.eval(r))?;
        max_violation = max_violation.max((v - MomentReport::required(a)).abs());
        moments.push((a, v));
    }
    let kappa = integrate("K^2".into(), &|r| kernel.eval(r).powi(2))?;
    let kappa_eps = integrate("|r|^eps |K|".into(), &|r| r.abs().powf(eps) * kernel.eval(r).abs())?;
    Ok(MomentReport {
        kernel: kernel.name.clone(),
        eps,
        moments,
        kappa,
        kappa_eps,
        max_violation,
    })
}
