//! CSV output.
//!
//! Floats are written in scientific notation with 17 significant digits, so
//! every value parses back to the same binary64 and a parse/re-emit cycle is
//! byte-identical. Integers are written plainly.

use crate::engine::{EnvelopeReport, MultiSeedReport, RunMetrics};
use crate::estimator::BiasRow;
use crate::problems::{OnlineProblem, TrackingLeastSquares};
use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad cell {0:?}")]
    Cell(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Cell {
    Int(i64),
    Float(f64),
}

impl Cell {
    pub fn render(&self) -> String {
        match self {
            Cell::Int(v) => v.to_string(),
            Cell::Float(v) => format!("{v:.16e}"),
        }
    }

    fn parse(s: &str) -> Result<Self, ReportError> {
        let float_like = s.contains(['e', 'E', '.']) || s.contains("NaN") || s.contains("inf");
        if float_like {
            s.parse().map(Cell::Float).map_err(|_| ReportError::Cell(s.into()))
        } else {
            s.parse().map(Cell::Int).map_err(|_| ReportError::Cell(s.into()))
        }
    }

    pub fn as_f64(&self) -> f64 {
        match self {
            Cell::Int(v) => *v as f64,
            Cell::Float(v) => *v,
        }
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Float(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Cell::Int(v as i64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(headers: Vec<String>) -> Self {
        Self { headers, rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.headers.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.headers.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[k].as_f64()).collect())
    }

    pub fn write_to<W: Write>(&self, w: W) -> Result<(), ReportError> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(&self.headers)?;
        for row in &self.rows {
            out.write_record(row.iter().map(Cell::render))?;
        }
        out.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv is utf-8")
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self, ReportError> {
        let mut rdr = csv::Reader::from_reader(r);
        let headers = rdr.headers()?.iter().map(String::from).collect();
        let mut rows = Vec::new();
        for rec in rdr.records() {
            rows.push(rec?.iter().map(Cell::parse).collect::<Result<_, _>>()?);
        }
        Ok(Self { headers, rows })
    }

    pub fn write_file(&self, path: &Path) -> Result<(), ReportError> {
        let io = |source| ReportError::Io { path: path.to_path_buf(), source };
        let file = File::create(path).map_err(io)?;
        self.write_to(std::io::BufWriter::new(file))
    }

    pub fn read_file(path: &Path) -> Result<Self, ReportError> {
        let file = File::open(path).map_err(|source| ReportError::Io { path: path.to_path_buf(), source })?;
        Self::read_from(std::io::BufReader::new(file))
    }
}

/// `base_1..base_m`.
fn numbered(base: &str, m: usize) -> Vec<String> {
    (1..=m).map(|k| format!("{base}_{k}")).collect()
}

/// `base` alone when `m == 1`, otherwise numbered.
fn scalar_or_numbered(base: &str, m: usize) -> Vec<String> {
    if m == 1 {
        vec![base.to_string()]
    } else {
        numbered(base, m)
    }
}

fn headers(parts: &[&[String]]) -> Vec<String> {
    parts.iter().flat_map(|p| p.iter().cloned()).collect()
}

fn floats(v: &[f64]) -> impl Iterator<Item = Cell> + '_ {
    v.iter().map(|x| Cell::Float(*x))
}

/// `t, agent, regret_cum, regret_avg, consensus_err, clip_active, x_1..x_m`
/// for `t = 1..=T`, agents numbered from 1.
pub fn metrics_table(m: &RunMetrics) -> Table {
    let fixed: Vec<String> =
        ["t", "agent", "regret_cum", "regret_avg", "consensus_err", "clip_active"].map(String::from).to_vec();
    let mut table = Table::new(headers(&[&fixed, &numbered("x", m.dim)]));
    for t in 1..=m.horizon {
        for i in 0..m.agents {
            let mut row = vec![
                Cell::from(t),
                Cell::from(i + 1),
                Cell::from(m.regret[t - 1][i]),
                Cell::from(m.regret_avg(i, t)),
                Cell::from(m.consensus_error[t - 1]),
                Cell::from(m.clip_active[t - 1][i]),
            ];
            row.extend(floats(&m.states[t - 1][i]));
            table.push(row);
        }
    }
    table
}

/// `t, xstar_1..xstar_m, xi_t_cum`.
pub fn benchmark_table(m: &RunMetrics) -> Table {
    let mut table = Table::new(headers(&[
        &["t".to_string()],
        &numbered("xstar", m.dim),
        &["xi_t_cum".to_string()],
    ]));
    let cum = m.benchmark.cumulative_variation();
    for (k, x) in m.benchmark.points.iter().enumerate() {
        let mut row = vec![Cell::from(k + 1)];
        row.extend(floats(x));
        row.push(Cell::from(cum[k]));
        table.push(row);
    }
    table
}

/// `checkpoint, delta, quantile_value`.
pub fn quantiles_table(r: &MultiSeedReport) -> Table {
    let mut table = Table::new(["checkpoint", "delta", "quantile_value"].map(String::from).to_vec());
    for q in &r.quantiles {
        table.push(vec![Cell::from(q.checkpoint), Cell::from(q.delta), Cell::from(q.value)]);
    }
    table
}

/// `t, z, x_mean`: the target and the agent-average state.
pub fn trajectory_table(m: &RunMetrics, problem: &TrackingLeastSquares) -> Table {
    let mut table = Table::new(headers(&[
        &["t".to_string()],
        &scalar_or_numbered("z", m.dim),
        &scalar_or_numbered("x_mean", m.dim),
    ]));
    for t in 1..=m.horizon {
        let mut row = vec![Cell::from(t)];
        row.extend(floats(problem.target(t)));
        row.extend(floats(&m.mean_state(t)));
        table.push(row);
    }
    table
}

/// `t, agent_1..agent_n, worst`: `R_i^d(t)/t` per agent and its maximum.
pub fn regret_over_t_table(m: &RunMetrics) -> Table {
    let mut table = Table::new(headers(&[
        &["t".to_string()],
        &numbered("agent", m.agents),
        &["worst".to_string()],
    ]));
    for t in 1..=m.horizon {
        let mut row = vec![Cell::from(t)];
        row.extend((0..m.agents).map(|i| Cell::from(m.regret_avg(i, t))));
        row.push(Cell::from(m.worst_regret_avg(t)));
        table.push(row);
    }
    table
}

/// `t, agent, e, y, z`: the frozen measurement noise.
pub fn noise_audit_table(p: &TrackingLeastSquares) -> Table {
    let m = p.dim();
    let mut table = Table::new(headers(&[
        &["t".to_string(), "agent".to_string()],
        &scalar_or_numbered("e", m),
        &scalar_or_numbered("y", m),
        &scalar_or_numbered("z", m),
    ]));
    for t in 1..=p.horizon() {
        for i in 0..p.agents() {
            let mut row = vec![Cell::from(t), Cell::from(i + 1)];
            row.extend(floats(p.noise(i, t)));
            row.extend(floats(p.measurement(i, t)));
            row.extend(floats(p.target(t)));
            table.push(row);
        }
    }
    table
}

/// `gamma, mean_1..mean_m, stderr, true_grad_1..true_grad_m`.
pub fn bias_table(rows: &[BiasRow]) -> Table {
    let m = rows.first().map_or(1, |r| r.mean.len());
    let mut table = Table::new(headers(&[
        &["gamma".to_string()],
        &numbered("mean", m),
        &["stderr".to_string()],
        &numbered("true_grad", m),
    ]));
    for r in rows {
        let mut row = vec![Cell::from(r.gamma)];
        row.extend(floats(&r.mean));
        row.push(Cell::from(r.stderr));
        row.extend(floats(&r.true_gradient));
        table.push(row);
    }
    table
}

/// `t, observed, bound, margin`.
pub fn envelope_table(r: &EnvelopeReport) -> Table {
    let mut table = Table::new(["t", "observed", "bound", "margin"].map(String::from).to_vec());
    for row in &r.rows {
        table.push(vec![
            Cell::from(row.t),
            Cell::from(row.observed),
            Cell::from(row.bound),
            Cell::from(row.margin()),
        ]);
    }
    table
}
