//! The full online loop and its metrics.
//!
//! Each round `t = 1..=T`:
//!
//! 1. charge regret `f^t(x_i(t)) - f^t(x*(t))` for every agent using noiseless
//!    access to the realized objective,
//! 2. every agent forms a kernel estimate at `x_i(t)` and clips it to `α_t`,
//! 3. states are mixed with `A(t)`,
//! 4. every agent takes a mirror step of size `β_t` from its mixed state.
//!
//! All agents read the round-start snapshot, and agent `i` draws from the
//! stream `(seed, i, t)`, so results do not depend on evaluation order.

use crate::estimator::{zo_estimate, EstimateRecord, EstimatorError};
use crate::graph::{GraphError, GraphSchedule, MixingConstants};
use crate::kernels::Kernel;
use crate::mirror::{md_step, MdStepSpec, MirrorError, MirrorMap};
use crate::problems::{MinimizerTrace, NoiseModel, OnlineProblem, ProblemError};
use crate::rng::stream;
use crate::{dist, norm};
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("schedule violation at round {t}: alpha_t = {alpha} is below 2G = {bound}")]
    ScheduleViolation { t: usize, alpha: f64, bound: f64 },
    #[error("non-finite {what} at round {t}, agent {agent}")]
    NonFinite { t: usize, agent: usize, what: &'static str },
    #[error("mirror step failed at round {t}, agent {agent}: {source}")]
    Step {
        t: usize,
        agent: usize,
        #[source]
        source: MirrorError,
    },
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
}

/// `scale · (t + shift)^exponent`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowerLaw {
    pub scale: f64,
    pub exponent: f64,
    #[serde(default)]
    pub shift: f64,
}

impl PowerLaw {
    pub fn new(scale: f64, exponent: f64, shift: f64) -> Self {
        Self { scale, exponent, shift }
    }

    pub fn at(&self, t: usize) -> f64 {
        self.scale * (t as f64 + self.shift).powf(self.exponent)
    }
}

/// Constant added to the clipping power law: a number, or `"2G"` for twice
/// the gradient bound of the problem.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AlphaOffset {
    Constant(f64),
    TwiceG,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum OffsetRepr {
    Number(f64),
    Text(String),
}

impl Serialize for AlphaOffset {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            AlphaOffset::Constant(v) => OffsetRepr::Number(*v),
            AlphaOffset::TwiceG => OffsetRepr::Text("2G".into()),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for AlphaOffset {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        match OffsetRepr::deserialize(d)? {
            OffsetRepr::Number(v) => Ok(AlphaOffset::Constant(v)),
            OffsetRepr::Text(s) if s == "2G" => Ok(AlphaOffset::TwiceG),
            OffsetRepr::Text(s) => Err(serde::de::Error::custom(format!(
                "alpha offset must be a number or \"2G\", got {s:?}"
            ))),
        }
    }
}

/// Where the exponents `(a, b, c)` of `α, β, γ` sit relative to
/// `0 < a < ½, -1 < b < -2a, c < 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Admissibility {
    Admissible,
    /// On the boundary `b = -2a` with everything else inside.
    Marginal,
    Inadmissible,
}

/// Clipping radius `α_t`, step size `β_t` and estimation radius `γ_t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepSchedules {
    pub alpha: PowerLaw,
    pub alpha_offset: AlphaOffset,
    pub beta: PowerLaw,
    pub gamma: PowerLaw,
    /// Replaces the problem's gradient bound `G` when set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gradient_bound: Option<f64>,
}

impl StepSchedules {
    /// `α_t = 0.2(t+1)^0.3 + 2`, `β_t = 15(t+1)^-0.6`, `γ_t = 0.2(t+1)^-0.25`.
    pub fn sensor_experiment() -> Self {
        Self {
            alpha: PowerLaw::new(0.2, 0.3, 1.0),
            alpha_offset: AlphaOffset::Constant(2.0),
            beta: PowerLaw::new(15.0, -0.6, 1.0),
            gamma: PowerLaw::new(0.2, -0.25, 1.0),
            gradient_bound: None,
        }
    }

    /// `α_t = t^a + 2G`, `β_t = t^b`, `γ_t = t^c`.
    pub fn power_family(a: f64, b: f64, c: f64) -> Self {
        Self {
            alpha: PowerLaw::new(1.0, a, 0.0),
            alpha_offset: AlphaOffset::TwiceG,
            beta: PowerLaw::new(1.0, b, 0.0),
            gamma: PowerLaw::new(1.0, c, 0.0),
            gradient_bound: None,
        }
    }

    pub fn alpha(&self, t: usize, g: f64) -> f64 {
        let offset = match self.alpha_offset {
            AlphaOffset::Constant(v) => v,
            AlphaOffset::TwiceG => 2.0 * g,
        };
        self.alpha.at(t) + offset
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.beta.at(t)
    }

    pub fn gamma(&self, t: usize) -> f64 {
        self.gamma.at(t)
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        let bad = |msg: &str| Err(EngineError::Config(msg.into()));
        for (name, p) in [("alpha", self.alpha), ("beta", self.beta), ("gamma", self.gamma)] {
            if ![p.scale, p.exponent, p.shift].iter().all(|v| v.is_finite()) {
                return Err(EngineError::Config(format!("{name} schedule has non-finite parameters")));
            }
            if !(1.0 + p.shift > 0.0) {
                return Err(EngineError::Config(format!("{name} schedule needs 1 + shift > 0")));
            }
        }
        if !(self.beta.scale > 0.0) || self.beta.exponent > 0.0 {
            return bad("beta must be positive and non-increasing (scale > 0, exponent <= 0)");
        }
        if !(self.gamma.scale > 0.0) {
            return bad("gamma must be positive (scale > 0)");
        }
        if let AlphaOffset::Constant(v) = self.alpha_offset {
            if !v.is_finite() {
                return bad("alpha offset must be finite");
            }
        }
        if self.gradient_bound.is_some_and(|g| !(g >= 0.0)) {
            return bad("gradient_bound must be nonnegative");
        }
        Ok(())
    }

    pub fn exponents(&self) -> (f64, f64, f64) {
        (self.alpha.exponent, self.beta.exponent, self.gamma.exponent)
    }

    pub fn admissibility(&self) -> Admissibility {
        let (a, b, c) = self.exponents();
        let base = a > 0.0 && a < 0.5 && b > -1.0 && c < 0.0;
        if base && b < -2.0 * a {
            Admissibility::Admissible
        } else if base && (b + 2.0 * a).abs() <= 1e-12 {
            Admissibility::Marginal
        } else {
            Admissibility::Inadmissible
        }
    }

    /// First round in `1..=horizon` with `α_t < 2G`.
    pub fn first_violation(&self, g: f64, horizon: usize) -> Option<(usize, f64)> {
        (1..=horizon)
            .map(|t| (t, self.alpha(t, g)))
            .find(|(_, a)| *a < 2.0 * g)
    }
}

/// Everything one run needs.
#[derive(Clone)]
pub struct RunSetup {
    pub problem: Arc<dyn OnlineProblem>,
    pub graph: GraphSchedule,
    pub kernel: Kernel,
    pub mirror: MirrorMap,
    pub schedules: StepSchedules,
    /// Additive noise `ξ` on every finite difference.
    pub oracle_noise: NoiseModel,
    pub horizon: usize,
    pub seed: u64,
    /// Run even when `α_t < 2G` for some round.
    pub allow_violations: bool,
    /// Draw a separate `r` per coordinate.
    pub per_coordinate_r: bool,
    /// `x_i(1)`; defaults to a spread of lattice points of the feasible set.
    pub initial_states: Option<Vec<Vec<f64>>>,
}

impl RunSetup {
    pub fn new(
        problem: Arc<dyn OnlineProblem>,
        graph: GraphSchedule,
        kernel: Kernel,
        schedules: StepSchedules,
        horizon: usize,
        seed: u64,
    ) -> Self {
        Self {
            problem,
            graph,
            kernel,
            mirror: MirrorMap::Euclidean,
            schedules,
            oracle_noise: NoiseModel::None,
            horizon,
            seed,
            allow_violations: false,
            per_coordinate_r: false,
            initial_states: None,
        }
    }

    /// `G` as used by the clipping schedule.
    pub fn gradient_bound(&self) -> f64 {
        self.schedules.gradient_bound.unwrap_or_else(|| self.problem.bounds().gradient)
    }

    pub fn initial(&self) -> Vec<Vec<f64>> {
        let n = self.problem.agents();
        self.initial_states.clone().unwrap_or_else(|| {
            (0..n).map(|i| self.problem.constraint().lattice_point(i, n)).collect()
        })
    }

    /// Structural checks; does not look at `α_t >= 2G`.
    pub fn validate(&self) -> Result<(), EngineError> {
        let n = self.problem.agents();
        let set = self.problem.constraint();
        if self.graph.n() != n {
            return Err(EngineError::Config(format!(
                "graph has {} agents, problem has {n}",
                self.graph.n()
            )));
        }
        if self.horizon == 0 || self.horizon > self.problem.horizon() {
            return Err(EngineError::Config(format!(
                "horizon {} must lie in 1..={}",
                self.horizon,
                self.problem.horizon()
            )));
        }
        if self.horizon > u32::MAX as usize || n > u32::MAX as usize - 2 {
            return Err(EngineError::Config("horizon or agent count too large for the rng keying".into()));
        }
        let report = self.graph.check_uniform_connectivity();
        if !report.connected {
            return Err(EngineError::Config(format!(
                "graph schedule is not uniformly strongly connected; first failing window starts at index {}",
                report.first_failing_window.unwrap_or(0)
            )));
        }
        self.graph.matrix(self.horizon)?;
        if !self.mirror.supports(set) {
            return Err(EngineError::Config(format!(
                "mirror map {} does not support this constraint set",
                self.mirror.name()
            )));
        }
        self.schedules.validate()?;
        self.oracle_noise.validate()?;
        let x1 = self.initial();
        if x1.len() != n {
            return Err(EngineError::Config(format!("{} initial states for {n} agents", x1.len())));
        }
        if let Some(i) = x1.iter().position(|x| !set.contains(x)) {
            return Err(EngineError::Config(format!("initial state of agent {i} is infeasible")));
        }
        Ok(())
    }
}

/// Per-round record of a run. Round `t` lives at index `t - 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct RunMetrics {
    pub agents: usize,
    pub dim: usize,
    pub horizon: usize,
    /// `x_i(t)` for `t = 1..=T+1`.
    pub states: Vec<Vec<Vec<f64>>>,
    /// Cumulative regret `R_i^d(t)`, `[t-1][i]`.
    pub regret: Vec<Vec<f64>>,
    /// `max_i ‖x_i(t) - x̄(t)‖` for `t = 1..=T+1`.
    pub consensus_error: Vec<f64>,
    pub clip_active: Vec<Vec<bool>>,
    pub benchmark: MinimizerTrace,
    /// `f^t(x*(t))`.
    pub optimal_values: Vec<f64>,
    pub alphas: Vec<f64>,
    pub betas: Vec<f64>,
    pub gammas: Vec<f64>,
    pub oracle_calls: usize,
    pub gradient_bound: f64,
}

impl RunMetrics {
    pub fn regret_avg(&self, agent: usize, t: usize) -> f64 {
        self.regret[t - 1][agent] / t as f64
    }

    /// `max_i R_i^d(t) / t`.
    pub fn worst_regret_avg(&self, t: usize) -> f64 {
        self.regret[t - 1].iter().cloned().fold(f64::NEG_INFINITY, f64::max) / t as f64
    }

    pub fn clip_rate(&self, t: usize) -> f64 {
        let row = &self.clip_active[t - 1];
        row.iter().filter(|c| **c).count() as f64 / row.len() as f64
    }

    /// `x̄(t)`.
    pub fn mean_state(&self, t: usize) -> Vec<f64> {
        mean(&self.states[t - 1])
    }

    pub fn path_variation(&self) -> f64 {
        self.benchmark.variation
    }

    /// Whether `R_i^d(t)/t` strictly decreases over `points` for every agent.
    pub fn regret_avg_decreasing_every_agent(&self, points: &[usize]) -> bool {
        (0..self.agents).all(|i| {
            strictly_decreasing(&points.iter().map(|&t| self.regret_avg(i, t)).collect::<Vec<_>>())
        })
    }

    /// Whether `max_i R_i^d(t)/t` strictly decreases over `points`.
    pub fn worst_regret_avg_decreasing(&self, points: &[usize]) -> bool {
        strictly_decreasing(&points.iter().map(|&t| self.worst_regret_avg(t)).collect::<Vec<_>>())
    }
}

fn mean(states: &[Vec<f64>]) -> Vec<f64> {
    let n = states.len() as f64;
    let mut acc = vec![0.0; states[0].len()];
    for x in states {
        for (a, v) in acc.iter_mut().zip(x) {
            *a += v / n;
        }
    }
    acc
}

fn consensus(states: &[Vec<f64>]) -> f64 {
    let xbar = mean(states);
    states.iter().map(|x| dist(x, &xbar)).fold(0.0, f64::max)
}

pub fn strictly_decreasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] < w[0])
}

/// Runs the algorithm for `setup.horizon` rounds.
pub fn run(setup: &RunSetup) -> Result<RunMetrics, EngineError> {
    setup.validate()?;
    let problem = &setup.problem;
    let set = problem.constraint();
    let n = problem.agents();
    let m = problem.dim();
    let horizon = setup.horizon;
    let g_bound = setup.gradient_bound();

    if let Some((t, alpha)) = setup.schedules.first_violation(g_bound, horizon) {
        if !setup.allow_violations {
            return Err(EngineError::ScheduleViolation { t, alpha, bound: 2.0 * g_bound });
        }
        log::info!("alpha_t < 2G = {} from round {t}; continuing because violations are allowed", 2.0 * g_bound);
    }
    let big_steps = (1..=horizon).filter(|&t| setup.schedules.beta(t) >= 1.0).count();
    if big_steps > 0 {
        log::warn!("beta_t >= 1 in {big_steps} of {horizon} rounds");
    }

    let mut x = setup.initial();
    let mut states = Vec::with_capacity(horizon + 1);
    let mut regret = Vec::with_capacity(horizon);
    let mut consensus_error = Vec::with_capacity(horizon + 1);
    let mut clip_active = Vec::with_capacity(horizon);
    let mut points = Vec::with_capacity(horizon);
    let mut optimal_values = Vec::with_capacity(horizon);
    let (mut alphas, mut betas, mut gammas) = (Vec::new(), Vec::new(), Vec::new());
    let mut cum = vec![0.0; n];
    let mut oracle_calls = 0;

    for t in 1..=horizon {
        let xstar = problem.minimizer(t)?;
        let fstar = problem.global_objective(t, &xstar);
        for (i, xi) in x.iter().enumerate() {
            let gap = problem.global_objective(t, xi) - fstar;
            if !gap.is_finite() {
                return Err(EngineError::NonFinite { t, agent: i, what: "regret" });
            }
            cum[i] += gap;
        }
        regret.push(cum.clone());
        consensus_error.push(consensus(&x));
        points.push(xstar);
        optimal_values.push(fstar);

        let (alpha, beta, gamma) =
            (setup.schedules.alpha(t, g_bound), setup.schedules.beta(t), setup.schedules.gamma(t));
        alphas.push(alpha);
        betas.push(beta);
        gammas.push(gamma);

        let mut records = Vec::with_capacity(n);
        for (i, xi) in x.iter().enumerate() {
            let mut rng = stream(setup.seed, i as u32, t as u32);
            let raw = zo_estimate(
                problem.as_ref(),
                i,
                t,
                xi,
                gamma,
                &setup.kernel,
                &setup.oracle_noise,
                &mut rng,
                setup.per_coordinate_r,
            )?;
            if raw.iter().any(|v| !v.is_finite()) {
                return Err(EngineError::NonFinite { t, agent: i, what: "gradient estimate" });
            }
            let rec = EstimateRecord::new(raw, alpha);
            oracle_calls += rec.oracle_calls;
            records.push(rec);
        }
        clip_active.push(records.iter().map(|r| r.clip_active).collect());

        let y = setup.graph.mix(t, &x)?;
        let mut next = Vec::with_capacity(n);
        for (i, (yi, rec)) in y.iter().zip(&records).enumerate() {
            let spec = MdStepSpec { y: yi, g: &rec.clipped, beta, set };
            let xn = md_step(setup.mirror, &spec).map_err(|source| EngineError::Step { t, agent: i, source })?;
            if xn.iter().any(|v| !v.is_finite()) {
                return Err(EngineError::NonFinite { t, agent: i, what: "state" });
            }
            next.push(xn);
        }
        states.push(std::mem::replace(&mut x, next));
    }
    consensus_error.push(consensus(&x));
    states.push(x);

    Ok(RunMetrics {
        agents: n,
        dim: m,
        horizon,
        states,
        regret,
        consensus_error,
        clip_active,
        benchmark: MinimizerTrace::new(points),
        optimal_values,
        alphas,
        betas,
        gammas,
        oracle_calls,
        gradient_bound: g_bound,
    })
}

/// Quantile levels `1 - δ` reported by [`multi_seed`].
pub const DELTAS: [f64; 3] = [0.1, 0.05, 0.01];

/// `round(T · 2^k / 64)` for `k = 0..=6`, deduplicated and at least 1.
pub fn checkpoints(horizon: usize) -> Vec<usize> {
    let mut out: Vec<usize> = (0..=6)
        .map(|k| ((horizon as f64) * 2f64.powi(k) / 64.0).round().max(1.0) as usize)
        .collect();
    out.dedup();
    out
}

/// `T/8, T/4, T/2, T`, rounded.
pub fn sublinearity_points(horizon: usize) -> Vec<usize> {
    let mut out: Vec<usize> = [8.0, 4.0, 2.0, 1.0]
        .iter()
        .map(|d| ((horizon as f64) / d).round().max(1.0) as usize)
        .collect();
    out.dedup();
    out
}

/// Linear-interpolation sample quantile (Hyndman–Fan type 7) of sorted data.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantileRow {
    pub checkpoint: usize,
    pub delta: f64,
    /// The `1 - δ` quantile of worst-agent `R_i^d(t)/t` across seeds.
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiSeedReport {
    pub seeds: Vec<u64>,
    pub checkpoints: Vec<usize>,
    /// Worst-agent `R_i^d(t)/t`, `[seed][checkpoint]`.
    pub worst: Vec<Vec<f64>>,
    pub quantiles: Vec<QuantileRow>,
    pub runs: Vec<RunMetrics>,
}

impl MultiSeedReport {
    /// The `1 - δ` quantile curve over the checkpoints.
    pub fn curve(&self, delta: f64) -> Vec<f64> {
        self.quantiles.iter().filter(|q| q.delta == delta).map(|q| q.value).collect()
    }
}

/// Runs one setup per seed in parallel and summarizes worst-agent average
/// regret. The result depends only on the seed list.
pub fn multi_seed<F>(build: F, seeds: &[u64]) -> Result<MultiSeedReport, EngineError>
where
    F: Fn(u64) -> Result<RunSetup, EngineError> + Sync,
{
    if seeds.len() < 10 {
        return Err(EngineError::Config(format!("need at least 10 seeds, got {}", seeds.len())));
    }
    let runs: Vec<RunMetrics> = seeds
        .par_iter()
        .map(|&s| build(s).and_then(|setup| run(&setup)))
        .collect::<Result<_, _>>()?;
    let horizon = runs[0].horizon;
    if runs.iter().any(|r| r.horizon != horizon) {
        return Err(EngineError::Config("all seeds must share one horizon".into()));
    }
    let checkpoints = checkpoints(horizon);
    let worst: Vec<Vec<f64>> = runs
        .iter()
        .map(|r| checkpoints.iter().map(|&t| r.worst_regret_avg(t)).collect())
        .collect();
    let mut quantiles = Vec::new();
    for (k, &checkpoint) in checkpoints.iter().enumerate() {
        let mut col: Vec<f64> = worst.iter().map(|w| w[k]).collect();
        col.sort_by(f64::total_cmp);
        for delta in DELTAS {
            quantiles.push(QuantileRow { checkpoint, delta, value: quantile(&col, 1.0 - delta) });
        }
    }
    Ok(MultiSeedReport { seeds: seeds.to_vec(), checkpoints, worst, quantiles, runs })
}

/// Consensus bound `E(t) = θ1 λ^t + θ2 Σ_{s<=t} α_s β_s λ^{t-s}` for `t = 1..=T`,
/// evaluated by the recursion `E(t) = λ E(t-1) + θ2 α_t β_t`, `E(0) = θ1`.
pub fn consensus_envelope(theta1: f64, theta2: f64, mixing: &MixingConstants, alpha_beta: &[f64]) -> Vec<f64> {
    let lambda = mixing.ln_lambda.exp();
    let mut e = theta1;
    alpha_beta
        .iter()
        .map(|ab| {
            e = lambda * e + theta2 * ab;
            e
        })
        .collect()
}

/// The same bound summed term by term; quadratic in `T`, for cross-checks.
pub fn consensus_envelope_reference(
    theta1: f64,
    theta2: f64,
    mixing: &MixingConstants,
    alpha_beta: &[f64],
) -> Vec<f64> {
    (1..=alpha_beta.len())
        .map(|t| {
            let driven: f64 = (1..=t)
                .map(|s| alpha_beta[s - 1] * mixing.lambda_pow((t - s) as f64))
                .sum();
            theta1 * mixing.lambda_pow(t as f64) + theta2 * driven
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvelopeRow {
    pub t: usize,
    /// `max_i ‖x_i(t+1) - x̄(t+1)‖`.
    pub observed: f64,
    pub bound: f64,
    pub pass: bool,
}

impl EnvelopeRow {
    pub fn margin(&self) -> f64 {
        self.bound - self.observed
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvelopeReport {
    pub theta1: f64,
    pub theta2: f64,
    pub rows: Vec<EnvelopeRow>,
}

impl EnvelopeReport {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }

    pub fn first_failure(&self) -> Option<&EnvelopeRow> {
        self.rows.iter().find(|r| !r.pass)
    }
}

/// Compares the recorded consensus error against the envelope with
/// `θ1 = √(nm) C ‖x(1)‖ / λ` and `θ2 = √(nm) C / (μ λ)`, where `x(1)` is the
/// stacked initial state.
pub fn consensus_envelope_check(metrics: &RunMetrics, mixing: &MixingConstants, mu: f64) -> EnvelopeReport {
    let root = ((metrics.agents * metrics.dim) as f64).sqrt();
    let stacked: Vec<f64> = metrics.states[0].iter().flatten().cloned().collect();
    let inv_lambda = (-mixing.ln_lambda).exp();
    let theta1 = root * mixing.c * inv_lambda * norm(&stacked);
    let theta2 = root * mixing.c * inv_lambda / mu;
    let ab: Vec<f64> = metrics.alphas.iter().zip(&metrics.betas).map(|(a, b)| a * b).collect();
    let bound = consensus_envelope(theta1, theta2, mixing, &ab);
    let rows = bound
        .iter()
        .enumerate()
        .map(|(k, &b)| {
            let observed = metrics.consensus_error[k + 1];
            EnvelopeRow { t: k + 1, observed, bound: b, pass: observed <= b * (1.0 + 1e-12) + 1e-12 }
        })
        .collect();
    EnvelopeReport { theta1, theta2, rows }
}

/// Pearson correlation of two equally long series.
pub fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{mixing_constants, ScheduleMode, WeightMatrix};
    use crate::kernels::example_kernel;
    use crate::problems::{sensor_network_problem, ConstraintSet, FnProblem, TrackingLeastSquares};

    fn quadratic_setup(seed: u64, horizon: usize) -> RunSetup {
        // six identical noiseless sensors observing a fixed target
        let p = TrackingLeastSquares::new(
            vec![1.0; 6],
            vec![vec![1.5]; horizon],
            &NoiseModel::None,
            ConstraintSet::cube(1, -5.0, 5.0),
            0,
        )
        .unwrap();
        let mut s = RunSetup::new(
            Arc::new(p),
            GraphSchedule::fig1(),
            example_kernel(),
            StepSchedules::power_family(0.25, -0.75, -0.5),
            horizon,
            seed,
        );
        s.schedules.alpha_offset = AlphaOffset::TwiceG;
        s
    }

    #[test]
    fn schedule_values_and_flags() {
        let s = StepSchedules::sensor_experiment();
        assert!((s.alpha(1, 0.0) - (0.2 * 2f64.powf(0.3) + 2.0)).abs() < 1e-15);
        assert!((s.beta(1) - 15.0 * 2f64.powf(-0.6)).abs() < 1e-15);
        assert!((s.gamma(3) - 0.2 * 4f64.powf(-0.25)).abs() < 1e-15);
        assert_eq!(s.admissibility(), Admissibility::Marginal);
        assert_eq!(StepSchedules::power_family(0.2, -0.5, -0.1).admissibility(), Admissibility::Admissible);
        assert_eq!(StepSchedules::power_family(0.6, -0.5, -0.1).admissibility(), Admissibility::Inadmissible);
        assert_eq!(StepSchedules::power_family(0.2, -0.3, -0.1).admissibility(), Admissibility::Inadmissible);
        assert_eq!(StepSchedules::power_family(0.2, -0.5, 0.0).admissibility(), Admissibility::Inadmissible);
        assert_eq!(s.first_violation(1.0, 100), None);
        assert_eq!(s.first_violation(10.0, 100).map(|v| v.0), Some(1));
        assert_eq!(StepSchedules::power_family(0.2, -0.5, -0.1).first_violation(123.0, 50), None);
    }

    #[test]
    fn offset_serde() {
        let s = StepSchedules::power_family(0.2, -0.5, -0.1);
        let v = serde_json::to_value(s).unwrap();
        assert_eq!(v["alpha_offset"], "2G");
        let back: StepSchedules = serde_json::from_value(v).unwrap();
        assert_eq!(back, s);
        let bad = serde_json::json!({"alpha": {"scale":1.0,"exponent":0.2}, "alpha_offset": "3G",
            "beta": {"scale":1.0,"exponent":-0.5}, "gamma": {"scale":1.0,"exponent":-0.1}});
        assert!(serde_json::from_value::<StepSchedules>(bad).is_err());
    }

    #[test]
    fn checkpoint_grid() {
        assert_eq!(checkpoints(5000), vec![78, 156, 313, 625, 1250, 2500, 5000]);
        assert_eq!(checkpoints(10), vec![1, 3, 5, 10]);
        assert_eq!(sublinearity_points(5000), vec![625, 1250, 2500, 5000]);
    }

    #[test]
    fn quantile_type7() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(quantile(&v, 0.5), 3.0);
        assert_eq!(quantile(&v, 1.0), 5.0);
        assert!((quantile(&v, 0.9) - 4.6).abs() < 1e-15);
    }

    #[test]
    fn violation_aborts_unless_allowed() {
        let mut s = quadratic_setup(1, 20);
        s.schedules.alpha_offset = AlphaOffset::Constant(0.0);
        s.schedules.gradient_bound = Some(100.0);
        match run(&s) {
            Err(EngineError::ScheduleViolation { t, .. }) => assert_eq!(t, 1),
            other => panic!("{:?}", other.map(|_| ())),
        }
        s.allow_violations = true;
        assert!(run(&s).is_ok());
    }

    #[test]
    fn states_stay_feasible_and_average_is_preserved_by_mixing() {
        let s = quadratic_setup(2, 300);
        let m = run(&s).unwrap();
        let set = s.problem.constraint();
        for (t, xs) in m.states.iter().enumerate() {
            for x in xs {
                assert!(set.contains(x), "round {}", t + 1);
            }
            if t < 300 {
                let y = s.graph.mix(t + 1, xs).unwrap();
                assert!(dist(&mean(&y), &mean(xs)) <= 1e-9);
            }
        }
        assert_eq!(m.oracle_calls, 2 * 6 * 300);
        assert_eq!(m.consensus_error.len(), 301);
    }

    #[test]
    fn deterministic() {
        let a = run(&quadratic_setup(3, 200)).unwrap();
        let b = run(&quadratic_setup(3, 200)).unwrap();
        let c = run(&quadratic_setup(4, 200)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.states, c.states);
    }

    #[test]
    fn single_agent_has_no_consensus_error() {
        let p = FnProblem::new(1, 100, ConstraintSet::cube(2, -1.0, 1.0), |_, _, x| {
            (x[0] - 0.3).powi(2) + (x[1] + 0.2).powi(2)
        })
        .with_gradient(|_, _, x| vec![2.0 * (x[0] - 0.3), 2.0 * (x[1] + 0.2)])
        .with_bounds(crate::problems::ProblemBounds { gradient: 4.0, lipschitz: 2.0, ..Default::default() });
        let graph = GraphSchedule::new(vec![WeightMatrix::identity(1, 0.5).unwrap()], ScheduleMode::Cyclic, 1).unwrap();
        let s = RunSetup::new(Arc::new(p), graph, example_kernel(), StepSchedules::power_family(0.25, -0.75, -0.5), 100, 9);
        let m = run(&s).unwrap();
        assert!(m.consensus_error.iter().all(|e| *e == 0.0));
    }

    #[test]
    fn constant_objective_is_stationary() {
        let p = FnProblem::constant(6, 50, ConstraintSet::cube(1, -5.0, 5.0), 2.0);
        let mut s = RunSetup::new(Arc::new(p), GraphSchedule::fig1(), example_kernel(), StepSchedules::sensor_experiment(), 50, 1);
        s.schedules.gradient_bound = Some(0.0);
        s.initial_states = Some(vec![vec![1.25]; 6]);
        let m = run(&s).unwrap();
        assert!(m.states.iter().flatten().all(|x| x == &vec![1.25]));
        assert!(m.regret.iter().flatten().all(|r| *r == 0.0));
        assert!(m.clip_active.iter().flatten().all(|c| !c));
    }

    #[test]
    fn envelope_recursion_matches_closed_form() {
        let mix = mixing_constants(2, 1, 0.5).unwrap();
        let ab: Vec<f64> = (1..=40).map(|t| 1.0 / t as f64).collect();
        let a = consensus_envelope(3.0, 2.0, &mix, &ab);
        let b = consensus_envelope_reference(3.0, 2.0, &mix, &ab);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() <= 1e-12 * y.abs());
        }
        // driven term off: the bound halves every round
        let a = consensus_envelope(3.0, 0.0, &mix, &ab);
        assert!((a[0] - 1.5).abs() < 1e-15 && (a[5] - 3.0 / 64.0).abs() < 1e-15);
    }

    #[test]
    fn envelope_holds_on_a_short_run() {
        let s = quadratic_setup(5, 200);
        let m = run(&s).unwrap();
        let mix = mixing_constants(6, 4, s.graph.l_bound()).unwrap();
        let rep = consensus_envelope_check(&m, &mix, 1.0);
        assert!(rep.passed(), "{:?}", rep.first_failure());
    }

    #[test]
    fn sensor_problem_runs_with_experiment_schedules() {
        let p = sensor_network_problem(1, 100).unwrap();
        let mut s = RunSetup::new(Arc::new(p), GraphSchedule::fig1(), example_kernel(), StepSchedules::sensor_experiment(), 100, 1);
        assert!(matches!(run(&s), Err(EngineError::ScheduleViolation { .. })));
        s.allow_violations = true;
        let m = run(&s).unwrap();
        assert!(m.regret.iter().flatten().all(|r| *r >= -1e-9));
    }

    #[test]
    fn correlation_examples() {
        assert!((correlation(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.5]) - 0.997949).abs() < 1e-4);
        assert!((correlation(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]) + 1.0).abs() < 1e-15);
    }
}
