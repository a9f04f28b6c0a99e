//! Time-varying weighted digraphs and consensus mixing.
//!
//! A [`GraphSchedule`] is the sequence `A(1), A(2), ...` of doubly stochastic
//! weight matrices. Entry `a_ij(t) > 0` means agent `i` hears agent `j` at
//! round `t` (edge `j -> i`). Round `t >= 1` uses matrix index `t - 1`, taken
//! modulo the period for cyclic schedules.
//!
//! # The `fig1` preset
//!
//! Six agents (indices 0..=5) switching through four graphs in the order
//! (a) -> (b) -> (c) -> (d) -> (a) -> ... . Each graph is `A = (I + P) / 2`
//! for a permutation `P`, so every matrix is doubly stochastic with all
//! positive weights equal to 0.5 (`l = 0.5`):
//!
//! | graph | directed edges                    |
//! |-------|-----------------------------------|
//! | (a)   | 0 -> 1, 1 -> 2, 2 -> 0            |
//! | (b)   | 3 -> 4, 4 -> 5, 5 -> 3            |
//! | (c)   | 2 -> 3, 3 -> 2                    |
//! | (d)   | 5 -> 0, 0 -> 5                    |
//!
//! No single graph is strongly connected; the union over any four consecutive
//! rounds is.

use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;
use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

/// Tolerance for row/column sums and the entry lower bound.
pub const STOCHASTIC_TOL: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("weight matrix is not square: row {row} has {len} entries, expected {n}")]
    Shape { row: usize, len: usize, n: usize },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("round {t} is beyond the explicit schedule horizon of {len} matrices")]
    BeyondHorizon { t: usize, len: usize },
    #[error("schedule must contain at least one matrix")]
    Empty,
}

/// A single `n x n` weight matrix with its declared positive-weight lower bound.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    n: usize,
    entries: Vec<f64>,
    l_bound: f64,
}

/// One failed invariant of a [`WeightMatrix`].
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    RowSum { row: usize, sum: f64 },
    ColumnSum { col: usize, sum: f64 },
    Entry { row: usize, col: usize, value: f64 },
    Diagonal { row: usize, value: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::RowSum { row, sum } => write!(f, "row {row} sums to {sum} (expected 1)"),
            Violation::ColumnSum { col, sum } => {
                write!(f, "column {col} sums to {sum} (expected 1)")
            }
            Violation::Entry { row, col, value } => {
                write!(f, "entry ({row},{col}) = {value} is neither 0 nor in [l, 1]")
            }
            Violation::Diagonal { row, value } => {
                write!(f, "diagonal entry ({row},{row}) = {value} is not positive")
            }
        }
    }
}

impl WeightMatrix {
    pub fn new(rows: Vec<Vec<f64>>, l_bound: f64) -> Result<Self, GraphError> {
        let n = rows.len();
        if n == 0 {
            return Err(GraphError::Parameter("weight matrix has no rows".into()));
        }
        if !(l_bound > 0.0 && l_bound < 1.0) {
            return Err(GraphError::Parameter(format!(
                "l must lie in (0,1), got {l_bound}"
            )));
        }
        let mut entries = Vec::with_capacity(n * n);
        for (row, r) in rows.into_iter().enumerate() {
            if r.len() != n {
                return Err(GraphError::Shape { row, len: r.len(), n });
            }
            entries.extend(r);
        }
        Ok(Self { n, entries, l_bound })
    }

    pub fn identity(n: usize, l_bound: f64) -> Result<Self, GraphError> {
        let rows = (0..n)
            .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        Self::new(rows, l_bound)
    }

    /// Every entry `1/n`: one round of exact averaging.
    pub fn complete_averaging(n: usize) -> Result<Self, GraphError> {
        let w = 1.0 / n as f64;
        let l = if n == 1 { 0.5 } else { w };
        Self::new(vec![vec![w; n]; n], l)
    }

    /// `(I + P) / 2` where `perm[i] = j` means agent `i` hears agent `j`.
    pub fn lazy_permutation(perm: &[usize]) -> Result<Self, GraphError> {
        let n = perm.len();
        let mut seen = vec![false; n];
        for &j in perm {
            if j >= n || seen[j] {
                return Err(GraphError::Parameter(format!("{perm:?} is not a permutation")));
            }
            seen[j] = true;
        }
        let mut rows = vec![vec![0.0; n]; n];
        for (i, &j) in perm.iter().enumerate() {
            rows[i][i] += 0.5;
            rows[i][j] += 0.5;
        }
        Self::new(rows, 0.5)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn l_bound(&self) -> f64 {
        self.l_bound
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.n..(i + 1) * self.n]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.n).map(|i| self.row(i).to_vec()).collect()
    }

    /// Directed edges `(j, i)` with `a_ij > 0`, self-loops excluded.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.n).flat_map(move |i| {
            (0..self.n).filter_map(move |j| (i != j && self.get(i, j) > 0.0).then_some((j, i)))
        })
    }

    /// `self * other`.
    pub fn product(&self, other: &WeightMatrix) -> WeightMatrix {
        let n = self.n;
        let mut entries = vec![0.0; n * n];
        for i in 0..n {
            for k in 0..n {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                for j in 0..n {
                    entries[i * n + j] += a * other.get(k, j);
                }
            }
        }
        WeightMatrix { n, entries, l_bound: self.l_bound.min(other.l_bound) }
    }
}

/// Checks double stochasticity, the `{0} ∪ [l, 1]` entry rule and positive
/// diagonals. An empty report means the matrix is valid.
pub fn validate_weight_matrix(a: &WeightMatrix) -> Vec<Violation> {
    let n = a.n;
    let mut out = Vec::new();
    for i in 0..n {
        let sum: f64 = a.row(i).iter().sum();
        if (sum - 1.0).abs() > STOCHASTIC_TOL {
            out.push(Violation::RowSum { row: i, sum });
        }
    }
    for j in 0..n {
        let sum: f64 = (0..n).map(|i| a.get(i, j)).sum();
        if (sum - 1.0).abs() > STOCHASTIC_TOL {
            out.push(Violation::ColumnSum { col: j, sum });
        }
    }
    for i in 0..n {
        for j in 0..n {
            let v = a.get(i, j);
            let ok = v == 0.0 || (v >= a.l_bound - STOCHASTIC_TOL && v <= 1.0 + STOCHASTIC_TOL);
            if !ok {
                out.push(Violation::Entry { row: i, col: j, value: v });
            }
        }
        let d = a.get(i, i);
        if d <= 0.0 {
            out.push(Violation::Diagonal { row: i, value: d });
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleMode {
    Cyclic,
    Explicit,
}

/// Outcome of [`GraphSchedule::check_uniform_connectivity`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConnectivityReport {
    pub connected: bool,
    /// Schedule index at which the first non-strongly-connected window starts.
    pub first_failing_window: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphSchedule {
    matrices: Vec<WeightMatrix>,
    mode: ScheduleMode,
    window: usize,
}

impl GraphSchedule {
    pub fn new(
        matrices: Vec<WeightMatrix>,
        mode: ScheduleMode,
        window: usize,
    ) -> Result<Self, GraphError> {
        let first = matrices.first().ok_or(GraphError::Empty)?;
        if window == 0 {
            return Err(GraphError::Parameter("connectivity window U must be >= 1".into()));
        }
        let n = first.n;
        if let Some(bad) = matrices.iter().position(|m| m.n != n) {
            return Err(GraphError::Dimension(format!(
                "matrix {bad} has n = {}, expected {n}",
                matrices[bad].n
            )));
        }
        Ok(Self { matrices, mode, window })
    }

    /// The four-graph cycle documented in the module header.
    pub fn fig1() -> Self {
        let perms: [[usize; 6]; 4] = [
            [2, 0, 1, 3, 4, 5],
            [0, 1, 2, 5, 3, 4],
            [0, 1, 3, 2, 4, 5],
            [5, 1, 2, 3, 4, 0],
        ];
        let matrices = perms
            .iter()
            .map(|p| WeightMatrix::lazy_permutation(p).expect("static permutation"))
            .collect();
        Self::new(matrices, ScheduleMode::Cyclic, 4).expect("static schedule")
    }

    pub fn n(&self) -> usize {
        self.matrices[0].n
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn mode(&self) -> ScheduleMode {
        self.mode
    }

    pub fn matrices(&self) -> &[WeightMatrix] {
        &self.matrices
    }

    /// Smallest declared lower bound over the schedule.
    pub fn l_bound(&self) -> f64 {
        self.matrices.iter().map(|m| m.l_bound).fold(f64::INFINITY, f64::min)
    }

    /// Same matrices, cyclically shifted to start at index `k`.
    pub fn rotated(&self, k: usize) -> Self {
        let mut matrices = self.matrices.clone();
        matrices.rotate_left(k % self.matrices.len());
        Self { matrices, ..self.clone() }
    }

    /// `A(t)` for round `t >= 1`.
    pub fn matrix(&self, t: usize) -> Result<&WeightMatrix, GraphError> {
        if t == 0 {
            return Err(GraphError::Parameter("rounds are numbered from 1".into()));
        }
        let len = self.matrices.len();
        match self.mode {
            ScheduleMode::Cyclic => Ok(&self.matrices[(t - 1) % len]),
            ScheduleMode::Explicit if t <= len => Ok(&self.matrices[t - 1]),
            ScheduleMode::Explicit => Err(GraphError::BeyondHorizon { t, len }),
        }
    }

    /// Whether every window of `U` consecutive graphs has a strongly
    /// connected edge union. Cyclic schedules check every residue; explicit
    /// schedules check every start with a full window inside the horizon.
    pub fn check_uniform_connectivity(&self) -> ConnectivityReport {
        let len = self.matrices.len();
        let u = self.window;
        let starts: Vec<usize> = match self.mode {
            ScheduleMode::Cyclic => (0..len).collect(),
            ScheduleMode::Explicit if len < u => vec![0],
            ScheduleMode::Explicit => (0..=len - u).collect(),
        };
        for k in starts {
            // explicit schedules shorter than U only get their partial union
            let span = match self.mode {
                ScheduleMode::Cyclic => u,
                ScheduleMode::Explicit => u.min(len - k),
            };
            if !self.union_strongly_connected((k..k + span).map(|j| j % len)) {
                return ConnectivityReport { connected: false, first_failing_window: Some(k) };
            }
        }
        ConnectivityReport { connected: true, first_failing_window: None }
    }

    fn union_strongly_connected(&self, indices: impl Iterator<Item = usize>) -> bool {
        let n = self.n();
        let mut g = DiGraph::<(), ()>::with_capacity(n, 0);
        let nodes: Vec<_> = (0..n).map(|_| g.add_node(())).collect();
        for k in indices {
            for (j, i) in self.matrices[k].edges() {
                g.update_edge(nodes[j], nodes[i], ());
            }
        }
        tarjan_scc(&g).len() == 1
    }

    /// `y_i = sum_j a_ij(t) x_j` for every agent.
    pub fn mix(&self, t: usize, states: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, GraphError> {
        let a = self.matrix(t)?;
        if states.len() != a.n {
            return Err(GraphError::Dimension(format!(
                "{} states for {} agents",
                states.len(),
                a.n
            )));
        }
        let m = states[0].len();
        if let Some(bad) = states.iter().position(|s| s.len() != m) {
            return Err(GraphError::Dimension(format!(
                "state {bad} has dimension {}, expected {m}",
                states[bad].len()
            )));
        }
        Ok((0..a.n)
            .map(|i| {
                let mut y = vec![0.0; m];
                for (j, x) in states.iter().enumerate() {
                    let w = a.get(i, j);
                    if w != 0.0 {
                        for (yk, xk) in y.iter_mut().zip(x) {
                            *yk += w * xk;
                        }
                    }
                }
                y
            })
            .collect())
    }

    /// The transition product `A(t) A(t-1) ... A(s)`.
    pub fn transition(&self, t: usize, s: usize) -> Result<WeightMatrix, GraphError> {
        if s > t {
            return Err(GraphError::Parameter(format!("need s <= t, got s = {s}, t = {t}")));
        }
        let mut acc = self.matrix(t)?.clone();
        for r in (s..t).rev() {
            acc = acc.product(self.matrix(r)?);
        }
        Ok(acc)
    }

    /// `max_ij |[A(t,s)]_ij - 1/n|`.
    pub fn product_deviation(&self, t: usize, s: usize) -> Result<f64, GraphError> {
        let p = self.transition(t, s)?;
        let inv = 1.0 / p.n as f64;
        Ok(p.entries.iter().map(|v| (v - inv).abs()).fold(0.0, f64::max))
    }
}

/// Geometric mixing constants `(C, lambda)` bounding
/// `|[A(t,s)]_ij - 1/n| <= C lambda^(t-s)`.
///
/// `lambda` is stored alongside its logarithm: for small `l` or long windows
/// `lambda` rounds to 1.0 in binary64 while `ln_lambda` stays strictly negative.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixingConstants {
    pub c: f64,
    pub lambda: f64,
    pub ln_lambda: f64,
}

impl MixingConstants {
    /// `C * lambda^k`.
    pub fn envelope(&self, k: usize) -> f64 {
        self.c * (self.ln_lambda * k as f64).exp()
    }

    /// `lambda^k` evaluated in log space.
    pub fn lambda_pow(&self, k: f64) -> f64 {
        (self.ln_lambda * k).exp()
    }
}

pub fn mixing_constants(n: usize, window: usize, l: f64) -> Result<MixingConstants, GraphError> {
    if n < 2 {
        return Err(GraphError::Parameter(format!(
            "mixing constants need at least two agents, got n = {n}"
        )));
    }
    if window == 0 {
        return Err(GraphError::Parameter("connectivity window U must be >= 1".into()));
    }
    if !(l > 0.0 && l < 1.0) {
        return Err(GraphError::Parameter(format!("l must lie in (0,1), got {l}")));
    }
    let k = ((n - 1) * window) as f64;
    let lk = l.powf(k);
    let c = 2.0 * (1.0 + l.powf(-k)) / (1.0 - lk);
    if !c.is_finite() {
        return Err(GraphError::Parameter(format!(
            "C overflows binary64 for n = {n}, U = {window}, l = {l}"
        )));
    }
    let ln_lambda = (-lk).ln_1p() / k;
    Ok(MixingConstants { c, lambda: ln_lambda.exp(), ln_lambda })
}

/// On-disk graph schedule: `{"n":6,"mode":"cyclic","U":4,"l":0.5,"matrices":[...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphDocument {
    pub n: usize,
    pub mode: ScheduleMode,
    #[serde(rename = "U")]
    pub window: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l: Option<f64>,
    pub matrices: Vec<Vec<Vec<f64>>>,
}

impl GraphDocument {
    /// Builds the schedule; `l_override` wins over the document's `l`.
    pub fn into_schedule(self, l_override: Option<f64>) -> Result<GraphSchedule, GraphError> {
        let l = l_override.or(self.l).ok_or_else(|| {
            GraphError::Parameter("the positive-weight lower bound l must be supplied".into())
        })?;
        let matrices = self
            .matrices
            .into_iter()
            .map(|rows| WeightMatrix::new(rows, l))
            .collect::<Result<Vec<_>, _>>()?;
        let schedule = GraphSchedule::new(matrices, self.mode, self.window)?;
        if schedule.n() != self.n {
            return Err(GraphError::Dimension(format!(
                "document declares n = {} but matrices are {}x{}",
                self.n,
                schedule.n(),
                schedule.n()
            )));
        }
        Ok(schedule)
    }

    pub fn from_schedule(schedule: &GraphSchedule) -> Self {
        Self {
            n: schedule.n(),
            mode: schedule.mode,
            window: schedule.window,
            l: Some(schedule.l_bound()),
            matrices: schedule.matrices.iter().map(WeightMatrix::rows).collect(),
        }
    }
}
