//! JSON run configuration.
//!
//! A document has six sections, `problem`, `graph`, `kernel`, `mirror`,
//! `schedules` and `run`. Any section may be written as
//! `{"preset": "<name>", ...}`; the preset is expanded first and the remaining
//! keys are merged over it. The whole document may also be
//! `{"preset": "reproduce-paper", ...}`. Dotted `key=value` overrides
//! (`run.horizon=200`) are applied after top-level expansion and before
//! section expansion. Unknown keys are rejected.

use crate::engine::{EngineError, RunSetup, StepSchedules};
use crate::graph::{GraphDocument, GraphError, GraphSchedule, ScheduleMode, WeightMatrix};
use crate::kernels::{Kernel, KernelError};
use crate::mirror::MirrorMap;
use crate::problems::{
    sensor_network_problem, target_recursion, ConstraintSet, FnProblem, NoiseModel, OnlineProblem,
    ProblemError, TrackingLeastSquares,
};
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use std::sync::Arc;
use thiserror::Error;

/// Horizon used when a configuration does not give one.
pub const DEFAULT_HORIZON: usize = 5000;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("unknown preset {name:?} for {section}; known: {known}")]
    UnknownPreset { section: String, name: String, known: &'static str },
    #[error("bad override {0:?}: expected key.path=value")]
    Override(String),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub enum TargetConfig {
    /// `z(t) = 0.2 z(t-1) + 0.5 cos(t/60) + 0.5` per coordinate from `z(0)`.
    Recursion { z0: Vec<f64> },
    /// The same target every round.
    Constant(Vec<f64>),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ProblemConfig {
    /// Six sensors tracking the damped-cosine target with `F(3, 5)` noise.
    SensorNetwork,
    LeastSquares {
        sensitivities: Vec<f64>,
        target: TargetConfig,
        #[serde(default)]
        measurement_noise: NoiseModel,
        constraint: ConstraintSet,
    },
    /// Every agent sees the same constant.
    Constant { agents: usize, value: f64, constraint: ConstraintSet },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelConfig {
    /// `k3`, `legendre-<ell>` or comma-separated coefficients.
    pub name: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MirrorConfig {
    pub map: MirrorMap,
}

fn default_horizon() -> usize {
    DEFAULT_HORIZON
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub allow_violations: bool,
    #[serde(default)]
    pub per_coordinate_r: bool,
    /// Additive noise on every finite difference.
    #[serde(default)]
    pub oracle_noise: NoiseModel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_states: Option<Vec<Vec<f64>>>,
}

/// A fully expanded configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemConfig,
    pub graph: GraphDocument,
    pub kernel: KernelConfig,
    pub mirror: MirrorConfig,
    pub schedules: StepSchedules,
    pub run: RunSection,
}

/// A runnable setup, plus the concrete tracking problem when there is one
/// (for target trajectories and noise audits).
#[derive(Clone)]
pub struct BuiltRun {
    pub setup: RunSetup,
    pub tracking: Option<Arc<TrackingLeastSquares>>,
}

impl RunConfig {
    /// Parses a JSON document and applies overrides.
    pub fn from_json(text: &str, overrides: &[String]) -> Result<Self, ConfigError> {
        let doc: Value = serde_json::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        Self::from_value(doc, overrides)
    }

    pub fn from_value(doc: Value, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut doc = expand_top(doc)?;
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let doc = expand_sections(doc)?;
        serde_json::from_value(doc).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    /// The sensor-network experiment with the given horizon.
    pub fn reproduce_paper(horizon: usize) -> Self {
        let doc = json!({"preset": "reproduce-paper", "run": {"horizon": horizon}});
        Self::from_value(doc, &[]).expect("builtin preset")
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Builds the run with the configured seed.
    pub fn build(&self) -> Result<BuiltRun, ConfigError> {
        self.build_with_seed(self.run.seed)
    }

    /// Builds the run with `seed` for both the frozen problem noise and the
    /// agents' streams (they use disjoint stream slots).
    pub fn build_with_seed(&self, seed: u64) -> Result<BuiltRun, ConfigError> {
        let horizon = self.run.horizon;
        if horizon == 0 {
            return Err(ConfigError::Invalid("run.horizon must be at least 1".into()));
        }
        let (problem, tracking): (Arc<dyn OnlineProblem>, _) = match &self.problem {
            ProblemConfig::SensorNetwork => {
                let p = Arc::new(sensor_network_problem(seed, horizon)?);
                (p.clone(), Some(p))
            }
            ProblemConfig::LeastSquares { sensitivities, target, measurement_noise, constraint } => {
                let targets = match target {
                    TargetConfig::Constant(z) => vec![z.clone(); horizon],
                    TargetConfig::Recursion { z0 } => {
                        let per: Vec<Vec<f64>> = z0.iter().map(|z| target_recursion(*z, horizon)).collect();
                        (0..horizon).map(|t| per.iter().map(|c| c[t]).collect()).collect()
                    }
                };
                let p = Arc::new(TrackingLeastSquares::new(
                    sensitivities.clone(),
                    targets,
                    measurement_noise,
                    constraint.clone(),
                    seed,
                )?);
                (p.clone(), Some(p))
            }
            ProblemConfig::Constant { agents, value, constraint } => {
                constraint.validate()?;
                let p: Arc<dyn OnlineProblem> =
                    Arc::new(FnProblem::constant(*agents, horizon, constraint.clone(), *value));
                (p, None)
            }
        };
        let graph = self.graph.clone().into_schedule(None)?;
        let kernel = Kernel::parse(&self.kernel.name)?;
        let setup = RunSetup {
            problem,
            graph,
            kernel,
            mirror: self.mirror.map,
            schedules: self.schedules,
            oracle_noise: self.run.oracle_noise.clone(),
            horizon,
            seed,
            allow_violations: self.run.allow_violations,
            per_coordinate_r: self.run.per_coordinate_r,
            initial_states: self.run.initial_states.clone(),
        };
        setup.validate()?;
        Ok(BuiltRun { setup, tracking })
    }
}

fn expand_top(doc: Value) -> Result<Value, ConfigError> {
    let Value::Object(mut obj) = doc else {
        return Err(ConfigError::Parse("config must be a JSON object".into()));
    };
    let Some(name) = obj.remove("preset") else {
        return Ok(Value::Object(obj));
    };
    match name.as_str() {
        Some("reproduce-paper") => {
            let mut base = json!({
                "problem": {"preset": "sensor-network"},
                "graph": {"preset": "fig1"},
                "kernel": {"preset": "k3"},
                "mirror": {"preset": "euclidean"},
                "schedules": {"preset": "sensor-experiment"},
                // the experiment's clipping radius is below 2G for this problem
                "run": {"horizon": DEFAULT_HORIZON, "seed": 0, "allow_violations": true}
            });
            merge(&mut base, Value::Object(obj));
            Ok(base)
        }
        _ => Err(ConfigError::UnknownPreset {
            section: "config".into(),
            name: name.to_string(),
            known: "reproduce-paper",
        }),
    }
}

fn expand_sections(doc: Value) -> Result<Value, ConfigError> {
    let Value::Object(mut obj) = doc else {
        return Err(ConfigError::Parse("config must be a JSON object".into()));
    };
    for (section, value) in obj.iter_mut() {
        if let Value::Object(inner) = value {
            if let Some(name) = inner.remove("preset") {
                let name = name
                    .as_str()
                    .ok_or_else(|| ConfigError::Parse(format!("{section}.preset must be a string")))?
                    .to_string();
                let mut base = section_preset(section, &name, inner)?;
                merge(&mut base, Value::Object(std::mem::take(inner)));
                *value = base;
            }
        }
    }
    Ok(Value::Object(obj))
}

fn take_f64(params: &mut Map<String, Value>, key: &str, section: &str) -> Result<f64, ConfigError> {
    params
        .remove(key)
        .and_then(|v| v.as_f64())
        .ok_or_else(|| ConfigError::Invalid(format!("{section} preset needs a numeric {key:?}")))
}

/// Expands one section preset, consuming its parameters from `params`.
fn section_preset(section: &str, name: &str, params: &mut Map<String, Value>) -> Result<Value, ConfigError> {
    let unknown = |known: &'static str| ConfigError::UnknownPreset {
        section: section.into(),
        name: name.into(),
        known,
    };
    match section {
        "problem" => match name {
            "sensor-network" => Ok(json!({"kind": "sensor-network"})),
            _ => Err(unknown("sensor-network")),
        },
        "graph" => match name {
            "fig1" => Ok(value_of(&GraphDocument::from_schedule(&GraphSchedule::fig1()))),
            "complete" => {
                let n = take_f64(params, "n", section)? as usize;
                let m = WeightMatrix::complete_averaging(n)?;
                let s = GraphSchedule::new(vec![m], ScheduleMode::Cyclic, 1)?;
                Ok(value_of(&GraphDocument::from_schedule(&s)))
            }
            _ => Err(unknown("fig1, complete")),
        },
        "kernel" => {
            Kernel::parse(name)?;
            Ok(json!({"name": name}))
        }
        "mirror" => match name {
            "euclidean" | "negative-entropy" => Ok(json!({"map": name})),
            _ => Err(unknown("euclidean, negative-entropy")),
        },
        "schedules" => match name {
            "sensor-experiment" => Ok(value_of(&StepSchedules::sensor_experiment())),
            "power-family" => {
                let a = take_f64(params, "a", section)?;
                let b = take_f64(params, "b", section)?;
                let c = take_f64(params, "c", section)?;
                Ok(value_of(&StepSchedules::power_family(a, b, c)))
            }
            _ => Err(unknown("sensor-experiment, power-family")),
        },
        _ => Err(ConfigError::Invalid(format!("section {section:?} has no presets"))),
    }
}

fn value_of<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("preset serializes")
}

/// Recursive object merge; non-object values in `top` replace those in `base`.
fn merge(base: &mut Value, top: Value) {
    match (base, top) {
        (Value::Object(b), Value::Object(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Applies `a.b.c=value`; the value is parsed as JSON, falling back to a string.
pub fn apply_override(doc: &mut Value, item: &str) -> Result<(), ConfigError> {
    let (path, raw) = item.split_once('=').ok_or_else(|| ConfigError::Override(item.into()))?;
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(ConfigError::Override(item.into()));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut cur = doc;
    for key in &keys[..keys.len() - 1] {
        let obj = cur.as_object_mut().ok_or_else(|| ConfigError::Override(item.into()))?;
        cur = obj.entry(key.to_string()).or_insert_with(|| Value::Object(Map::new()));
    }
    let obj = cur.as_object_mut().ok_or_else(|| ConfigError::Override(item.into()))?;
    obj.insert(keys[keys.len() - 1].to_string(), value);
    Ok(())
}
