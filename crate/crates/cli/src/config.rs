//! Experiment configuration.
//!
//! A config is one JSON file. Individual keys can be overridden with
//! `path.to.key=value` assignments (the value is parsed as JSON, falling back
//! to a plain string) before the file is deserialized and validated.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use qpcert::bounds::Norm;
use qpcert::cert::{CertOptions, ScenarioKind};
use qpcert::graphdata::{csbm_mu, csbm_sample, load_graph, split, CsbmParams};
use qpcert::ntk::Architecture;
use qpcert::qp::DualOptions;
use qpcert::Graph;
use serde::{Deserialize, Deserializer, Serialize};
use serde_json::Value;

use crate::CliError;

pub const DEFAULT_TRAIN_PER_CLASS: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    #[serde(alias = "architecture", deserialize_with = "one_or_many")]
    pub architectures: Vec<Architecture>,
    /// Regularization shared by every architecture.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
    /// Per-architecture C keyed by `label/normalization`, e.g. `gcn/row_norm`.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub c_per_arch: BTreeMap<String, f64>,
    /// Candidates for cross-validation; used when no C is given.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub c_grid: Vec<f64>,
    #[serde(default = "default_folds")]
    pub cv_folds: usize,
    pub scenarios: ScenarioGrid,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub attack: AttackConfig,
    /// Keep at most this many test nodes (in index order).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_targets: Option<usize>,
    /// Fill the `wall_time_ms` column; off by default so reruns are byte-identical.
    #[serde(default)]
    pub record_timing: bool,
    /// Worker threads; `QPCERT_THREADS` wins, then this, then all cores.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    pub output_dir: PathBuf,
}

fn default_folds() -> usize {
    4
}

fn one_or_many<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Architecture>, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum OneOrMany {
        Many(Vec<Architecture>),
        One(Architecture),
    }
    Ok(match OneOrMany::deserialize(d)? {
        OneOrMany::Many(v) => v,
        OneOrMany::One(a) => vec![a],
    })
}

/// Either CSBM parameters or a Graph JSON file.
///
/// For CSBM each run seed `s` samples the graph with seed `csbm.seed + s`
/// and draws the split with seed `s`. A graph file stays fixed; it is
/// re-split per seed only when `n_train_per_class` is given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub csbm: Option<CsbmParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub graph: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_train_per_class: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeltaScale {
    /// Budgets are used as given.
    Absolute,
    /// Budgets are fractions of the per-coordinate class gap `2 mu`.
    CsbmCoordinate,
    /// Budgets are fractions of the class-mean distance `2 mu sqrt(d)`.
    CsbmL2,
}

impl DeltaScale {
    pub fn as_str(&self) -> &'static str {
        match self {
            DeltaScale::Absolute => "absolute",
            DeltaScale::CsbmCoordinate => "csbm_coordinate",
            DeltaScale::CsbmL2 => "csbm_l2",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioGrid {
    pub kinds: Vec<ScenarioKind>,
    pub deltas: Vec<f64>,
    pub p_adv: Vec<f64>,
    pub seeds: Vec<u64>,
    #[serde(default = "default_norm")]
    pub norm: Norm,
    /// Defaults to `csbm_coordinate` for CSBM data and `absolute` otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_scale: Option<DeltaScale>,
}

fn default_norm() -> Norm {
    Norm::Inf
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub eps_cert: f64,
    pub node_limit: usize,
    pub gap_tol: f64,
    pub bound_tightening: bool,
    pub condensed: bool,
    pub big_m_scale: f64,
    pub dual_tol: f64,
    pub dual_max_sweeps: usize,
    /// Write every certification MILP under `<output_dir>/lp/`.
    pub dump_lp: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let c = CertOptions::default();
        Self {
            eps_cert: c.eps_cert,
            node_limit: c.node_limit,
            gap_tol: c.gap_tol,
            bound_tightening: c.bound_tightening,
            condensed: c.condensed,
            big_m_scale: c.big_m_scale,
            dual_tol: c.dual.tol,
            dual_max_sweeps: c.dual.max_sweeps,
            dump_lp: false,
        }
    }
}

impl SolverConfig {
    pub fn cert_options(&self, dump_dir: Option<PathBuf>) -> CertOptions {
        CertOptions {
            eps_cert: self.eps_cert,
            node_limit: self.node_limit,
            gap_tol: self.gap_tol,
            bound_tightening: self.bound_tightening,
            condensed: self.condensed,
            big_m_scale: self.big_m_scale,
            dual: self.dual_options(),
            dump_dir,
        }
    }

    pub fn dual_options(&self) -> DualOptions {
        DualOptions {
            tol: self.dual_tol,
            max_sweeps: self.dual_max_sweeps,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackConfig {
    pub trials: usize,
    pub greedy_passes: usize,
    /// Mixed with the run seed.
    pub seed: u64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            trials: 1000,
            greedy_passes: 2,
            seed: 0,
        }
    }
}

/// Key used in `c_per_arch` and in result tables.
pub fn arch_key(arch: &Architecture) -> String {
    format!("{}/{}", arch.label(), arch.normalization_label())
}

impl ExperimentConfig {
    pub fn from_json(text: &str, overrides: &[String]) -> Result<Self, CliError> {
        let mut value: Value = serde_json::from_str(text).map_err(|e| CliError::Config(format!("config: {e}")))?;
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let cfg: Self = serde_json::from_value(value).map_err(|e| CliError::Config(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text, overrides)?;
        // graph paths are relative to the config file
        if let (Some(g), Some(dir)) = (&cfg.dataset.graph, path.parent()) {
            if g.is_relative() && !g.exists() {
                cfg.dataset.graph = Some(dir.join(g));
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        let d = &self.dataset;
        match (&d.csbm, &d.graph) {
            (Some(p), None) => p.validate().map_err(|e| CliError::Config(format!("dataset.csbm: {e}")))?,
            (None, Some(_)) => {}
            _ => return bad("dataset needs exactly one of `csbm` or `graph`".into()),
        }
        if d.n_train_per_class == Some(0) {
            return bad("dataset.n_train_per_class must be >= 1".into());
        }
        if self.architectures.is_empty() {
            return bad("no architecture given".into());
        }
        for a in &self.architectures {
            a.validate().map_err(|e| CliError::Config(e.to_string()))?;
        }
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if let Some(c) = self.c {
            if !positive(c) {
                return bad(format!("c must be positive, got {c}"));
            }
        }
        if let Some((k, v)) = self.c_per_arch.iter().find(|(_, v)| !positive(**v)) {
            return bad(format!("c_per_arch.{k} must be positive, got {v}"));
        }
        if let Some(v) = self.c_grid.iter().find(|v| !positive(**v)) {
            return bad(format!("c_grid entries must be positive, got {v}"));
        }
        if self.c.is_none() && self.c_grid.is_empty() {
            let missing: Vec<String> = self
                .architectures
                .iter()
                .map(arch_key)
                .filter(|k| !self.c_per_arch.contains_key(k))
                .collect();
            if !missing.is_empty() {
                return bad(format!("no C or c_grid for {}", missing.join(", ")));
            }
        }
        if self.cv_folds < 2 {
            return bad("cv_folds must be >= 2".into());
        }
        let s = &self.scenarios;
        if s.kinds.is_empty() || s.deltas.is_empty() || s.p_adv.is_empty() || s.seeds.is_empty() {
            return bad("scenario grid: kinds, deltas, p_adv and seeds must all be non-empty".into());
        }
        if let Some(v) = s.deltas.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return bad(format!("deltas must be finite and >= 0, got {v}"));
        }
        if let Some(v) = s.p_adv.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return bad(format!("p_adv must lie in [0, 1], got {v}"));
        }
        if d.csbm.is_none() && matches!(s.delta_scale, Some(DeltaScale::CsbmCoordinate | DeltaScale::CsbmL2)) {
            return bad("csbm delta scales need a csbm dataset".into());
        }
        if self.threads == Some(0) {
            return bad("threads must be >= 1".into());
        }
        if self.solver.node_limit == 0 || !(self.solver.big_m_scale >= 1.0) || !(self.solver.eps_cert >= 0.0) {
            return bad("solver: node_limit >= 1, big_m_scale >= 1 and eps_cert >= 0 required".into());
        }
        Ok(())
    }

    pub fn delta_scale(&self) -> DeltaScale {
        self.scenarios.delta_scale.unwrap_or(if self.dataset.csbm.is_some() {
            DeltaScale::CsbmCoordinate
        } else {
            DeltaScale::Absolute
        })
    }

    /// Absolute budget for a grid value.
    pub fn absolute_delta(&self, delta: f64) -> f64 {
        let csbm = self.dataset.csbm.as_ref();
        match (self.delta_scale(), csbm) {
            (DeltaScale::CsbmCoordinate, Some(p)) => delta * 2.0 * csbm_mu(p),
            (DeltaScale::CsbmL2, Some(p)) => delta * 2.0 * csbm_mu(p) * (p.dimension() as f64).sqrt(),
            _ => delta,
        }
    }

    /// Labeled graph used by run seed `seed`.
    pub fn graph_for_seed(&self, seed: u64) -> Result<Graph, CliError> {
        let d = &self.dataset;
        if let Some(p) = &d.csbm {
            let params = CsbmParams {
                seed: p.seed.wrapping_add(seed),
                ..p.clone()
            };
            let g = csbm_sample::<f64>(&params)?;
            let per_class = d.n_train_per_class.unwrap_or(DEFAULT_TRAIN_PER_CLASS);
            return Ok(split(&g, per_class, seed)?.0);
        }
        let path = d.graph.as_ref().expect("validated dataset");
        let g: Graph = load_graph(path)?;
        match d.n_train_per_class {
            Some(k) => Ok(split(&g, k, seed)?.0),
            None if g.labeled_indices().is_empty() => Err(CliError::Config(format!(
                "{} has no labeled nodes; set dataset.n_train_per_class",
                path.display()
            ))),
            None => Ok(g),
        }
    }

    /// C for `arch` when it does not depend on cross-validation.
    pub fn fixed_c(&self, arch: &Architecture) -> Option<f64> {
        self.c_per_arch.get(&arch_key(arch)).copied().or(self.c)
    }

    /// Worker count: `QPCERT_THREADS`, then `threads`, then all cores.
    pub fn thread_count(&self) -> Result<usize, CliError> {
        if let Ok(v) = std::env::var("QPCERT_THREADS") {
            return match v.trim().parse::<usize>() {
                Ok(n) if n > 0 => Ok(n),
                _ => Err(CliError::Config(format!("QPCERT_THREADS={v} is not a positive integer"))),
            };
        }
        Ok(self
            .threads
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get())))
    }

    pub fn to_pretty_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }
}

/// Applies `a.b.c=value` to a JSON object tree, creating objects on the way.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<(), CliError> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override `{assignment}` is not key=value")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(CliError::Config(format!("override key `{path}` is malformed")));
    }
    let mut node = root;
    for k in &keys[..keys.len() - 1] {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| CliError::Config(format!("override `{path}`: `{k}` is not inside an object")))?;
        node = obj.entry(k.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    let obj = node
        .as_object_mut()
        .ok_or_else(|| CliError::Config(format!("override `{path}` does not point into an object")))?;
    obj.insert(keys[keys.len() - 1].to_string(), value);
    Ok(())
}
