//! Certification of SVM-on-NTK predictions against feature poisoning.
//!
//! For a target node `t` the single-level MILP minimizes the worst-case
//! signed margin over every dual solution reachable by a kernel inside the
//! bound interval. Stationarity of the inner SVM dual is kept as linear
//! constraints on `Z_ij = a_j Q_ij`; complementary slackness uses the big-M
//! values below.

mod attack;
mod scenario;

pub use attack::{attack_oracle, perturbed_predictions, sample_perturbation, AttackOptions, AttackReport};
pub use scenario::{
    certified_accuracy, clean_predictions, run_scenario, sample_adversarial, CertSetting, Scenario, ScenarioKind, ScenarioResult,
};

use std::path::PathBuf;
use std::time::Instant;

use ndarray::{Array1, ArrayView1};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bounds::{BoundsError, IntervalMatrix};
use crate::graphdata::GraphError;
use crate::milp::{branch_and_bound, export_lp, BranchOptions, MilpError, MilpModel, Relation, SolveStatus};
use crate::ntk::NtkError;
use crate::qp::{DualOptions, QpError, TrainedModel};
use crate::scalar::Scalar;

/// Strictness margin on the "optimum > 0" test.
pub const EPS_CERT: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum CertError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Bounds(#[from] BoundsError),
    #[error(transparent)]
    Milp(#[from] MilpError),
    #[error(transparent)]
    Qp(#[from] QpError),
    #[error(transparent)]
    Ntk(#[from] NtkError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Certified,
    NotCertified,
    /// The node limit was hit before a decision; counted as not certified.
    Undecided,
}

impl Verdict {
    pub fn as_str(&self) -> &'static str {
        match self {
            Verdict::Certified => "certified",
            Verdict::NotCertified => "not_certified",
            Verdict::Undecided => "undecided",
        }
    }
}

#[derive(Debug, Clone)]
pub struct CertOptions {
    pub eps_cert: f64,
    pub node_limit: usize,
    pub gap_tol: f64,
    pub bound_tightening: bool,
    /// Solve the formulation with `Z` projected out (same optimum, fewer columns).
    pub condensed: bool,
    /// Multiplier applied to every big-M (1 = tightest valid values).
    pub big_m_scale: f64,
    pub dual: DualOptions,
    /// Write every certification MILP (full form) here as an LP file.
    pub dump_dir: Option<PathBuf>,
}

impl Default for CertOptions {
    fn default() -> Self {
        Self {
            eps_cert: EPS_CERT,
            node_limit: 20_000,
            gap_tol: 1e-6,
            bound_tightening: true,
            condensed: true,
            big_m_scale: 1.0,
            dual: DualOptions::default(),
            dump_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CertResult {
    pub node: usize,
    pub label: i64,
    pub predicted: usize,
    pub clean_correct: bool,
    /// Binary: the margin. Multi-class: winning score minus the runner-up.
    pub clean_margin: f64,
    pub class_scores: Vec<f64>,
    /// Lower bound on the certified margin at termination (binary: the MILP
    /// bound; multi-class: bound for the predicted class minus the largest
    /// upper bound of the others).
    pub lower_bound: Option<f64>,
    pub verdict: Verdict,
    pub nodes_explored: usize,
    pub wall_time_ms: f64,
    pub error: Option<String>,
}

impl CertResult {
    pub fn is_certified(&self) -> bool {
        self.verdict == Verdict::Certified
    }
}

/// Tightest valid big-Ms for the rows `0..m` of `q`.
///
/// For `y_i = 1`:
/// `M_u = sum_{y_j=1, QU>=0} C QU - sum_{y_j=-1, QL<=0} C QL - 1`,
/// `M_v = sum_{y_j=-1, QU>=0} C QU - sum_{y_j=1, QL<=0} C QL + 1`;
/// the label conditions swap for `y_i = -1`. Negative values are clamped to 0.
pub fn big_m<T: Scalar>(
    y: &Array1<T>,
    q: &IntervalMatrix<T>,
    c: T,
) -> Result<(Array1<T>, Array1<T>), CertError> {
    let m = y.len();
    let (rows, cols) = q.dim();
    if rows < m || cols != m {
        return Err(CertError::InvalidInput(format!("interval {rows}x{cols} for {m} labels")));
    }
    let mut mu = Array1::zeros(m);
    let mut mv = Array1::zeros(m);
    for i in 0..m {
        let (mut pos_same, mut neg_other, mut pos_other, mut neg_same) = (T::zero(), T::zero(), T::zero(), T::zero());
        for j in 0..m {
            let same = y[j] == y[i];
            let hi = q.upper()[[i, j]];
            let lo = q.lower()[[i, j]];
            if hi >= T::zero() {
                if same {
                    pos_same = pos_same + c * hi;
                } else {
                    pos_other = pos_other + c * hi;
                }
            }
            if lo <= T::zero() {
                if same {
                    neg_same = neg_same + c * lo;
                } else {
                    neg_other = neg_other + c * lo;
                }
            }
        }
        let u = pos_same - neg_other - T::one();
        let v = pos_other - neg_same + T::one();
        for (val, out, which) in [(u, &mut mu[i], "M_u"), (v, &mut mv[i], "M_v")] {
            if val < T::zero() {
                log::debug!("{which}[{i}] = {val} clamped to 0");
                *out = T::zero();
            } else {
                *out = val;
            }
        }
    }
    Ok((mu, mv))
}

fn check_problem<T: Scalar>(
    y: &Array1<T>,
    c: T,
    rows: &IntervalMatrix<T>,
    m_u: &Array1<T>,
    m_v: &Array1<T>,
) -> Result<usize, CertError> {
    let m = y.len();
    if rows.dim() != (m + 1, m) {
        return Err(CertError::InvalidInput(format!(
            "kernel interval is {:?}, expected ({}, {m})",
            rows.dim(),
            m + 1
        )));
    }
    if m_u.len() != m || m_v.len() != m {
        return Err(CertError::InvalidInput("big-M length".into()));
    }
    if !(c > T::zero()) {
        return Err(CertError::InvalidInput(format!("C = {c}")));
    }
    let bad = rows
        .lower()
        .iter()
        .zip(rows.upper().iter())
        .position(|(l, u)| !(l <= u));
    if let Some(k) = bad {
        return Err(CertError::InvalidInput(format!(
            "Q^L > Q^U at ({}, {})",
            k / m,
            k % m
        )));
    }
    Ok(m)
}

/// Indices of the variable blocks shared by both formulations.
struct Blocks {
    alpha: usize,
    u: usize,
    v: usize,
    s: usize,
    t: usize,
}

fn add_core<T: Scalar>(model: &mut MilpModel<T>, m: usize, c: T, m_u: &Array1<T>, m_v: &Array1<T>) -> Blocks {
    let alpha = model.num_variables();
    for i in 0..m {
        model.add_continuous(format!("a{i}"), T::zero(), c);
    }
    let u = model.num_variables();
    for i in 0..m {
        model.add_continuous(format!("u{i}"), T::zero(), m_u[i]);
    }
    let v = model.num_variables();
    for i in 0..m {
        model.add_continuous(format!("v{i}"), T::zero(), m_v[i]);
    }
    let s = model.num_variables();
    for i in 0..m {
        model.add_binary(format!("s{i}"));
    }
    let t = model.num_variables();
    for i in 0..m {
        model.add_binary(format!("t{i}"));
    }
    let b = Blocks { alpha, u, v, s, t };
    for i in 0..m {
        model.add_constraint(format!("bu{i}"), vec![(b.u + i, T::one()), (b.s + i, -m_u[i])], Relation::Le, T::zero());
        model.add_constraint(format!("bs{i}"), vec![(b.alpha + i, T::one()), (b.s + i, c)], Relation::Le, c);
        model.add_constraint(format!("bv{i}"), vec![(b.v + i, T::one()), (b.t + i, -m_v[i])], Relation::Le, T::zero());
        model.add_constraint(format!("bt{i}"), vec![(b.alpha + i, -T::one()), (b.t + i, c)], Relation::Le, T::zero());
    }
    b
}

/// The certification MILP with explicit `Z` variables over `([m] + {t}) x [m]`.
///
/// `rows` is the `(m+1) x m` kernel interval with the target row last.
/// Variables: `a, u, v` (continuous), `s, t` (binary), then `Z` row-major.
/// Objective: minimize `sign_pt * sum_i y_i Z_ti`.
pub fn build_certification_milp<T: Scalar>(
    target: usize,
    sign_pt: T,
    y: &Array1<T>,
    c: T,
    rows: &IntervalMatrix<T>,
    m_u: &Array1<T>,
    m_v: &Array1<T>,
) -> Result<MilpModel<T>, CertError> {
    let m = check_problem(y, c, rows, m_u, m_v)?;
    let mut model = MilpModel::new(format!("cert_node{target}"));
    let b = add_core(&mut model, m, c, m_u, m_v);
    let (ql, qu) = (rows.lower(), rows.upper());
    let z0 = model.num_variables();
    let z = |i: usize, j: usize| z0 + i * m + j;
    for i in 0..=m {
        for j in 0..m {
            let name = if i == m { format!("zt_{j}") } else { format!("z{i}_{j}") };
            let lo = (c * ql[[i, j]]).min(T::zero());
            let hi = (c * qu[[i, j]]).max(T::zero());
            model.add_continuous(name, lo, hi);
        }
    }
    for i in 0..=m {
        for j in 0..m {
            let tag = if i == m { format!("t_{j}") } else { format!("{i}_{j}") };
            model.add_constraint(
                format!("zu{tag}"),
                vec![(z(i, j), T::one()), (b.alpha + j, -qu[[i, j]])],
                Relation::Le,
                T::zero(),
            );
            model.add_constraint(
                format!("zl{tag}"),
                vec![(z(i, j), T::one()), (b.alpha + j, -ql[[i, j]])],
                Relation::Ge,
                T::zero(),
            );
        }
    }
    for i in 0..m {
        let mut coeffs: Vec<(usize, T)> = (0..m).map(|j| (z(i, j), y[i] * y[j])).collect();
        coeffs.push((b.u + i, -T::one()));
        coeffs.push((b.v + i, T::one()));
        model.add_constraint(format!("st{i}"), coeffs, Relation::Eq, T::one());
    }
    model.set_objective((0..m).map(|i| (z(m, i), sign_pt * y[i])).collect());
    Ok(model)
}

/// Same program with `Z` projected out.
///
/// For fixed `a >= 0`, `Z_ij` ranges over `a_j [QL_ij, QU_ij]`, so the
/// stationarity equality becomes the pair
/// `sum_j a_j lo_ij <= 1 + u_i - v_i <= sum_j a_j hi_ij`
/// with `lo/hi` the extremes of `y_i y_j [QL_ij, QU_ij]`, and the objective
/// takes `a_i min(sign y_i QL_ti, sign y_i QU_ti)`.
pub fn build_condensed_milp<T: Scalar>(
    target: usize,
    sign_pt: T,
    y: &Array1<T>,
    c: T,
    rows: &IntervalMatrix<T>,
    m_u: &Array1<T>,
    m_v: &Array1<T>,
) -> Result<MilpModel<T>, CertError> {
    let m = check_problem(y, c, rows, m_u, m_v)?;
    let mut model = MilpModel::new(format!("cert_node{target}_condensed"));
    let b = add_core(&mut model, m, c, m_u, m_v);
    let (ql, qu) = (rows.lower(), rows.upper());
    for i in 0..m {
        let mut lo_row = Vec::with_capacity(m + 2);
        let mut hi_row = Vec::with_capacity(m + 2);
        for j in 0..m {
            let a = y[i] * y[j] * ql[[i, j]];
            let bb = y[i] * y[j] * qu[[i, j]];
            lo_row.push((b.alpha + j, a.min(bb)));
            hi_row.push((b.alpha + j, a.max(bb)));
        }
        for row in [&mut lo_row, &mut hi_row] {
            row.push((b.u + i, -T::one()));
            row.push((b.v + i, T::one()));
        }
        model.add_constraint(format!("sl{i}"), lo_row, Relation::Le, T::one());
        model.add_constraint(format!("sh{i}"), hi_row, Relation::Ge, T::one());
    }
    model.set_objective(
        (0..m)
            .map(|i| {
                let a = sign_pt * y[i] * ql[[m, i]];
                let bb = sign_pt * y[i] * qu[[m, i]];
                (b.alpha + i, a.min(bb))
            })
            .collect(),
    );
    Ok(model)
}

/// Result of minimizing one certification objective.
struct Bound<T> {
    status: SolveStatus,
    lower: T,
    nodes: usize,
}

#[allow(clippy::too_many_arguments)]
fn solve_objective<T: Scalar>(
    target: usize,
    tag: &str,
    sign: T,
    y: &Array1<T>,
    c: T,
    rows: &IntervalMatrix<T>,
    threshold: Option<T>,
    opts: &CertOptions,
) -> Result<Bound<T>, CertError> {
    let (mut m_u, mut m_v) = big_m(y, rows, c)?;
    if opts.big_m_scale != 1.0 {
        let s = T::lit(opts.big_m_scale);
        m_u.mapv_inplace(|v| v * s);
        m_v.mapv_inplace(|v| v * s);
    }
    if let Some(dir) = &opts.dump_dir {
        let full = build_certification_milp(target, sign, y, c, rows, &m_u, &m_v)?;
        std::fs::create_dir_all(dir).map_err(MilpError::from)?;
        export_lp(&full, dir.join(format!("node{target}{tag}.lp")))?;
    }
    let model = if opts.condensed {
        build_condensed_milp(target, sign, y, c, rows, &m_u, &m_v)?
    } else {
        build_certification_milp(target, sign, y, c, rows, &m_u, &m_v)?
    };
    let out = branch_and_bound(
        &model,
        &BranchOptions {
            decide_threshold: threshold,
            gap_tol: T::lit(opts.gap_tol),
            node_limit: opts.node_limit,
            bound_tightening: opts.bound_tightening,
        },
    )?;
    if out.status == SolveStatus::Infeasible {
        return Err(CertError::Milp(MilpError::SolverFailure(format!(
            "certification MILP for node {target} reported infeasible"
        ))));
    }
    Ok(Bound {
        status: out.status,
        lower: out.best_lower_bound,
        nodes: out.nodes_explored,
    })
}

pub(crate) fn base_result<T: Scalar>(
    target: usize,
    label: i64,
    model: &TrainedModel<T>,
    clean_row: ArrayView1<T>,
) -> Result<(CertResult, crate::qp::Prediction<T>), CertError> {
    let pred = model.predict(clean_row)?;
    let scores: Vec<f64> = pred.scores.iter().map(|v| v.to_f64_lossy()).collect();
    let clean_margin = if model.binary {
        scores[0]
    } else {
        let best = scores[pred.class];
        let runner = scores
            .iter()
            .enumerate()
            .filter(|&(k, _)| k != pred.class)
            .map(|(_, &v)| v)
            .fold(f64::NEG_INFINITY, f64::max);
        best - runner
    };
    let result = CertResult {
        node: target,
        label,
        predicted: pred.class,
        clean_correct: label >= 0 && pred.class as i64 == label && !pred.tie,
        clean_margin,
        class_scores: scores,
        lower_bound: None,
        verdict: Verdict::NotCertified,
        nodes_explored: 0,
        wall_time_ms: 0.0,
        error: None,
    };
    Ok((result, pred))
}

/// Certifies a binary prediction at `target`.
///
/// `rows` is the `(m+1) x m` interval (target row last) and `clean_row` the
/// clean kernel row of the target against the training nodes.
pub fn certify_node<T: Scalar>(
    target: usize,
    label: i64,
    model: &TrainedModel<T>,
    rows: &IntervalMatrix<T>,
    clean_row: ArrayView1<T>,
    opts: &CertOptions,
) -> Result<CertResult, CertError> {
    if !model.binary {
        return certify_node_multiclass(target, label, model, rows, clean_row, opts);
    }
    let start = Instant::now();
    let (mut res, pred) = base_result(target, label, model, clean_row)?;
    let margin = pred.scores[0];
    if margin == T::zero() {
        res.lower_bound = Some(0.0);
        res.wall_time_ms = start.elapsed().as_secs_f64() * 1e3;
        return Ok(res);
    }
    let sign = margin.signum();
    let cls = &model.classes[0];
    let eps = T::lit(opts.eps_cert);
    let b = solve_objective(target, "", sign, &cls.y, model.c, rows, Some(eps), opts)?;
    check_clean_bound(target, b.lower, margin.abs());
    res.lower_bound = Some(b.lower.to_f64_lossy());
    res.nodes_explored = b.nodes;
    res.verdict = match b.status {
        SolveStatus::NodeLimit => Verdict::Undecided,
        _ if b.lower > eps => Verdict::Certified,
        _ => Verdict::NotCertified,
    };
    res.wall_time_ms = start.elapsed().as_secs_f64() * 1e3;
    Ok(res)
}

fn check_clean_bound<T: Scalar>(target: usize, lower: T, clean: T) {
    let slack = T::lit(1e-6) * (T::one() + clean.abs());
    if lower > clean + slack {
        log::warn!("node {target}: MILP bound {lower} exceeds clean objective {clean}");
        debug_assert!(false, "MILP bound above the clean objective at node {target}");
    }
}

/// Multi-class certificate from one-vs-all classifiers.
///
/// The predicted class `c*` minimizes its own margin; every other class
/// maximizes its margin (negated objective, solved with the threshold
/// implied by the `c*` bound). Certified iff the `c*` lower bound exceeds
/// every other upper bound by `eps_cert`. Clean argmax ties are not certified.
pub fn certify_node_multiclass<T: Scalar>(
    target: usize,
    label: i64,
    model: &TrainedModel<T>,
    rows: &IntervalMatrix<T>,
    clean_row: ArrayView1<T>,
    opts: &CertOptions,
) -> Result<CertResult, CertError> {
    let start = Instant::now();
    let (mut res, pred) = base_result(target, label, model, clean_row)?;
    if pred.tie {
        res.wall_time_ms = start.elapsed().as_secs_f64() * 1e3;
        return Ok(res);
    }
    let eps = T::lit(opts.eps_cert);
    // binary models are treated as two classes with scores (-p, p)
    let classes: Vec<Array1<T>> = if model.binary {
        let y = &model.classes[0].y;
        vec![y.mapv(|v| -v), y.clone()]
    } else {
        model.classes.iter().map(|cl| cl.y.clone()).collect()
    };
    let c_star = pred.class;
    let own = solve_objective(target, &format!("_c{c_star}"), T::one(), &classes[c_star], model.c, rows, None, opts)?;
    let own_clean = if model.binary {
        pred.scores[0].abs()
    } else {
        pred.scores[c_star]
    };
    check_clean_bound(target, own.lower, own_clean);
    let mut nodes = own.nodes;
    let mut undecided = own.status == SolveStatus::NodeLimit;
    let mut worst_other = T::neg_infinity();
    for (k, y) in classes.iter().enumerate() {
        if k == c_star {
            continue;
        }
        // minimize -f_k; need min(-f_k) > -(own.lower - eps)
        let th = eps - own.lower;
        let b = solve_objective(target, &format!("_c{k}"), -T::one(), y, model.c, rows, Some(th), opts)?;
        nodes += b.nodes;
        undecided |= b.status == SolveStatus::NodeLimit;
        worst_other = worst_other.max(-b.lower);
    }
    let gap = own.lower - worst_other;
    res.lower_bound = Some(gap.to_f64_lossy());
    res.nodes_explored = nodes;
    res.verdict = if gap > eps {
        Verdict::Certified
    } else if undecided {
        Verdict::Undecided
    } else {
        Verdict::NotCertified
    };
    res.wall_time_ms = start.elapsed().as_secs_f64() * 1e3;
    Ok(res)
}
