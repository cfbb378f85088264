//! Poisoning and backdoor scenarios over a labeled graph.

use std::time::Instant;

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{base_result, certify_node, CertError, CertOptions, CertResult, Verdict};
use crate::bounds::{ntk_bounds, IntervalMatrix, Norm, PerturbationModel};
use crate::graphdata::Graph;
use crate::ntk::{ntk, Architecture};
use crate::qp::{train, Prediction, TrainedModel};
use crate::scalar::Scalar;

/// Which nodes the adversary controls.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ScenarioKind {
    /// Poison labeled: `U` drawn from the training nodes.
    #[serde(rename = "PL")]
    PoisonLabeled,
    /// Poison unlabeled: `U` drawn from the unlabeled nodes (transductive).
    #[serde(rename = "PU")]
    PoisonUnlabeled,
    /// Backdoor labeled: as PL, plus the target node; inductive.
    #[serde(rename = "BL")]
    BackdoorLabeled,
    /// Backdoor unlabeled: as PU, plus the target node; inductive.
    #[serde(rename = "BU")]
    BackdoorUnlabeled,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 4] = [
        ScenarioKind::PoisonLabeled,
        ScenarioKind::PoisonUnlabeled,
        ScenarioKind::BackdoorLabeled,
        ScenarioKind::BackdoorUnlabeled,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ScenarioKind::PoisonLabeled => "PL",
            ScenarioKind::PoisonUnlabeled => "PU",
            ScenarioKind::BackdoorLabeled => "BL",
            ScenarioKind::BackdoorUnlabeled => "BU",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.as_str().eq_ignore_ascii_case(s))
    }

    /// Target removed from the graph for training and attached at test time.
    pub fn inductive(&self) -> bool {
        matches!(self, ScenarioKind::BackdoorLabeled | ScenarioKind::BackdoorUnlabeled)
    }

    pub fn draws_from_labeled(&self) -> bool {
        matches!(self, ScenarioKind::PoisonLabeled | ScenarioKind::BackdoorLabeled)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub kind: ScenarioKind,
    pub p_adv: f64,
    pub delta: f64,
    pub norm: Norm,
    pub seed: u64,
}

/// Graph, architecture and solver settings shared by every node.
#[derive(Debug, Clone)]
pub struct CertSetting<T> {
    pub graph: Graph<T>,
    pub arch: Architecture,
    pub c: T,
    pub opts: CertOptions,
}

#[derive(Debug, Clone)]
pub struct ScenarioResult {
    pub scenario: Scenario,
    pub adversarial: Vec<usize>,
    pub results: Vec<CertResult>,
    /// Certified among correctly classified; `None` when nothing is correct.
    pub certified_accuracy: Option<f64>,
}

impl ScenarioResult {
    pub fn num_correct(&self) -> usize {
        self.results.iter().filter(|r| r.clean_correct).count()
    }

    pub fn num_certified(&self) -> usize {
        self.results.iter().filter(|r| r.clean_correct && r.is_certified()).count()
    }

    pub fn num_errors(&self) -> usize {
        self.results.iter().filter(|r| r.error.is_some()).count()
    }
}

/// Certified accuracy over correctly classified nodes.
pub fn certified_accuracy(results: &[CertResult]) -> Option<f64> {
    let correct = results.iter().filter(|r| r.clean_correct).count();
    let certified = results.iter().filter(|r| r.clean_correct && r.is_certified()).count();
    (correct > 0).then(|| certified as f64 / correct as f64)
}

/// First `ceil(p_adv * |pool|)` nodes of a seeded permutation of the pool.
///
/// The pool is the labeled (PL/BL) or unlabeled (PU/BU) nodes outside the
/// verified set. Sets for the same seed are nested in `p_adv`.
pub fn sample_adversarial<T: Scalar>(
    graph: &Graph<T>,
    kind: ScenarioKind,
    p_adv: f64,
    seed: u64,
) -> Result<Vec<usize>, CertError> {
    if !(0.0..=1.0).contains(&p_adv) {
        return Err(CertError::InvalidInput(format!("p_adv = {p_adv}")));
    }
    let verified = graph.verified_mask();
    let mut pool: Vec<usize> = if kind.draws_from_labeled() {
        graph.labeled_indices()
    } else {
        graph.unlabeled_indices()
    };
    pool.retain(|&i| !verified[i]);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xadd5_e7ed_5eed_0001);
    pool.shuffle(&mut rng);
    let k = ((p_adv * pool.len() as f64) - 1e-9).ceil().max(0.0) as usize;
    let mut chosen = pool[..k.min(pool.len())].to_vec();
    chosen.sort_unstable();
    Ok(chosen)
}

fn labels_of<T: Scalar>(graph: &Graph<T>, idx: &[usize]) -> Vec<i64> {
    idx.iter().map(|&i| graph.labels()[i]).collect()
}

fn num_classes<T: Scalar>(graph: &Graph<T>) -> usize {
    graph.num_classes().max(2)
}

/// Trains on the labeled nodes of `graph` with features `x`.
fn fit<T: Scalar>(
    graph: &Graph<T>,
    x: &Array2<T>,
    arch: &Architecture,
    c: T,
    opts: &CertOptions,
) -> Result<(TrainedModel<T>, Array2<T>), CertError> {
    let s = arch.propagation::<T>(graph.adjacency())?;
    let q = ntk(arch, &s, x)?.q;
    let train_idx = graph.labeled_indices();
    let qtt = q.select(ndarray::Axis(0), &train_idx).select(ndarray::Axis(1), &train_idx);
    let model = train(&qtt, &labels_of(graph, &train_idx), num_classes(graph), c, opts.dual)?;
    Ok((model, q))
}

/// Graph without `t`, plus the map from old to new indices.
fn remove_node<T: Scalar>(graph: &Graph<T>, t: usize) -> (Graph<T>, Vec<Option<usize>>) {
    let keep: Vec<usize> = (0..graph.n()).filter(|&i| i != t).collect();
    let mut map = vec![None; graph.n()];
    for (new, &old) in keep.iter().enumerate() {
        map[old] = Some(new);
    }
    (graph.induced_subgraph(&keep), map)
}

fn predictions<T: Scalar>(
    setting: &CertSetting<T>,
    kind: ScenarioKind,
    x: &Array2<T>,
    targets: &[usize],
) -> Result<Vec<Prediction<T>>, CertError> {
    let graph = &setting.graph;
    let train_idx = graph.labeled_indices();
    if !kind.inductive() {
        let (model, q) = fit(graph, x, &setting.arch, setting.c, &setting.opts)?;
        return targets
            .iter()
            .map(|&t| Ok(model.predict(q.row(t).select(ndarray::Axis(0), &train_idx).view())?))
            .collect();
    }
    let s_full = setting.arch.propagation::<T>(graph.adjacency())?;
    let q_full = ntk(&setting.arch, &s_full, x)?.q;
    targets
        .iter()
        .map(|&t| {
            let (sub, map) = remove_node(graph, t);
            let keep: Vec<usize> = (0..graph.n()).filter(|&i| i != t).collect();
            let x_sub = x.select(ndarray::Axis(0), &keep);
            let (model, _) = fit(&sub, &x_sub, &setting.arch, setting.c, &setting.opts)?;
            debug_assert!(train_idx.iter().all(|&i| map[i].is_some()));
            let row: Array1<T> = train_idx.iter().map(|&i| q_full[[t, i]]).collect();
            Ok(model.predict(row.view())?)
        })
        .collect()
}

/// Clean predictions for `targets` under the scenario's training convention.
pub fn clean_predictions<T: Scalar>(
    setting: &CertSetting<T>,
    kind: ScenarioKind,
    targets: &[usize],
) -> Result<Vec<Prediction<T>>, CertError> {
    predictions(setting, kind, setting.graph.features(), targets)
}

/// Predictions after replacing the features with `x_tilde`.
pub fn perturbed_predictions<T: Scalar>(
    setting: &CertSetting<T>,
    kind: ScenarioKind,
    x_tilde: &Array2<T>,
    targets: &[usize],
) -> Result<Vec<Prediction<T>>, CertError> {
    predictions(setting, kind, x_tilde, targets)
}

fn error_result<T: Scalar>(graph: &Graph<T>, t: usize, err: &CertError) -> CertResult {
    CertResult {
        node: t,
        label: graph.labels()[t],
        predicted: 0,
        clean_correct: false,
        clean_margin: f64::NAN,
        class_scores: Vec::new(),
        lower_bound: None,
        verdict: Verdict::Undecided,
        nodes_explored: 0,
        wall_time_ms: 0.0,
        error: Some(err.to_string()),
    }
}

/// Undecided row that keeps the clean prediction when the bounds could not be built.
fn bounds_failure<T: Scalar>(
    graph: &Graph<T>,
    t: usize,
    model: &TrainedModel<T>,
    clean_row: ndarray::ArrayView1<T>,
    err: &CertError,
) -> CertResult {
    match base_result(t, graph.labels()[t], model, clean_row) {
        Ok((mut r, _)) => {
            r.verdict = Verdict::Undecided;
            r.error = Some(err.to_string());
            r
        }
        Err(e) => error_result(graph, t, &e),
    }
}

/// Stacks the training block and the target row into an `(m+1) x m` interval.
fn stack_rows<T: Scalar>(train: &IntervalMatrix<T>, row: &IntervalMatrix<T>) -> IntervalMatrix<T> {
    let lower = ndarray::concatenate![ndarray::Axis(0), *train.lower(), *row.lower()];
    let upper = ndarray::concatenate![ndarray::Axis(0), *train.upper(), *row.upper()];
    IntervalMatrix::from_parts_unchecked(lower, upper)
}

/// Certifies every node of `targets` under `scenario`.
///
/// Transductive scenarios (PL, PU) train once on the full graph. Inductive
/// ones (BL, BU) train on the graph without the target and take the target
/// row from the full graph; the target joins the adversarial set. Per-node
/// failures become `Undecided` rows carrying the error text.
pub fn run_scenario<T: Scalar>(
    setting: &CertSetting<T>,
    scenario: &Scenario,
    targets: &[usize],
) -> Result<ScenarioResult, CertError> {
    let graph = &setting.graph;
    let n = graph.n();
    if let Some(&bad) = targets.iter().find(|&&t| t >= n) {
        return Err(CertError::InvalidInput(format!("target {bad} out of range")));
    }
    if !(scenario.delta >= 0.0) {
        return Err(CertError::InvalidInput(format!("delta = {}", scenario.delta)));
    }
    let adversarial = sample_adversarial(graph, scenario.kind, scenario.p_adv, scenario.seed)?;
    let train_idx = graph.labeled_indices();
    let m = train_idx.len();
    let delta = T::lit(scenario.delta);
    let x = graph.features();

    let results: Vec<CertResult> = if !scenario.kind.inductive() {
        let (model, q) = fit(graph, x, &setting.arch, setting.c, &setting.opts)?;
        let s = setting.arch.propagation::<T>(graph.adjacency())?;
        let pert = PerturbationModel::new(scenario.norm, delta, adversarial.clone());
        match ntk_bounds(&setting.arch, &s, x, &pert) {
            Ok(bounds) => {
                let train_block = bounds.select(&train_idx, &train_idx);
                targets
                    .par_iter()
                    .map(|&t| {
                        let start = Instant::now();
                        let row = bounds.select(&[t], &train_idx);
                        let clean: Array1<T> = train_idx.iter().map(|&i| q[[t, i]]).collect();
                        let rows = stack_rows(&train_block, &row);
                        debug_assert_eq!(rows.dim(), (m + 1, m));
                        certify_node(t, graph.labels()[t], &model, &rows, clean.view(), &setting.opts)
                            .map(|mut r| {
                                r.wall_time_ms = start.elapsed().as_secs_f64() * 1e3;
                                r
                            })
                            .unwrap_or_else(|e| error_result(graph, t, &e))
                    })
                    .collect()
            }
            Err(e) => {
                let e = CertError::from(e);
                targets
                    .iter()
                    .map(|&t| {
                        let clean: Array1<T> = train_idx.iter().map(|&i| q[[t, i]]).collect();
                        bounds_failure(graph, t, &model, clean.view(), &e)
                    })
                    .collect()
            }
        }
    } else {
        let s_full = setting.arch.propagation::<T>(graph.adjacency())?;
        let q_full = ntk(&setting.arch, &s_full, x)?.q;
        targets
            .par_iter()
            .map(|&t| {
                let start = Instant::now();
                let run = || -> Result<CertResult, CertError> {
                    let mut u_full = adversarial.clone();
                    if !u_full.contains(&t) {
                        u_full.push(t);
                        u_full.sort_unstable();
                    }
                    let (sub, map) = remove_node(graph, t);
                    let keep: Vec<usize> = (0..n).filter(|&i| i != t).collect();
                    let x_sub = x.select(ndarray::Axis(0), &keep);
                    let (model, _) = fit(&sub, &x_sub, &setting.arch, setting.c, &setting.opts)?;
                    let clean: Array1<T> = train_idx.iter().map(|&i| q_full[[t, i]]).collect();
                    let sub_train: Vec<usize> = train_idx.iter().map(|&i| map[i].expect("labeled node kept")).collect();
                    let u_sub: Vec<usize> = u_full.iter().filter_map(|&i| map[i]).collect();
                    let bounds = || -> Result<IntervalMatrix<T>, CertError> {
                        let s_sub = setting.arch.propagation::<T>(sub.adjacency())?;
                        let train_bounds = ntk_bounds(
                            &setting.arch,
                            &s_sub,
                            &x_sub,
                            &PerturbationModel::new(scenario.norm, delta, u_sub),
                        )?
                        .select(&sub_train, &sub_train);
                        let full_bounds = ntk_bounds(
                            &setting.arch,
                            &s_full,
                            x,
                            &PerturbationModel::new(scenario.norm, delta, u_full),
                        )?;
                        Ok(stack_rows(&train_bounds, &full_bounds.select(&[t], &train_idx)))
                    };
                    match bounds() {
                        Ok(rows) => certify_node(t, graph.labels()[t], &model, &rows, clean.view(), &setting.opts),
                        Err(e) => Ok(bounds_failure(graph, t, &model, clean.view(), &e)),
                    }
                };
                run()
                    .map(|mut r| {
                        r.wall_time_ms = start.elapsed().as_secs_f64() * 1e3;
                        r
                    })
                    .unwrap_or_else(|e| error_result(graph, t, &e))
            })
            .collect()
    };
    let certified_accuracy = certified_accuracy(&results);
    Ok(ScenarioResult {
        scenario: *scenario,
        adversarial,
        results,
        certified_accuracy,
    })
}
