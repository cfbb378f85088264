//! Best-bound branch and bound over LP relaxations.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::simplex::DenseLp;
use super::{feasibility_tol, integrality_tol, LpOutcome, MilpError, MilpModel, Relation, DEFAULT_GAP_TOL};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SolveStatus {
    Optimal,
    /// The global lower bound exceeded the decision threshold.
    LowerBoundAboveThreshold,
    /// A feasible point at or below the decision threshold was found.
    IncumbentBelowThreshold,
    Infeasible,
    NodeLimit,
}

impl SolveStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::LowerBoundAboveThreshold => "lower_bound_above_threshold",
            SolveStatus::IncumbentBelowThreshold => "incumbent_below_threshold",
            SolveStatus::Infeasible => "infeasible",
            SolveStatus::NodeLimit => "node_limit",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveOutcome<T> {
    pub status: SolveStatus,
    pub best_lower_bound: T,
    pub incumbent_value: Option<T>,
    pub incumbent: Option<Vec<T>>,
    pub nodes_explored: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct BranchOptions<T> {
    pub decide_threshold: Option<T>,
    pub gap_tol: T,
    pub node_limit: usize,
    /// Tighten bounds from constraint activities at every node.
    pub bound_tightening: bool,
}

impl<T: Scalar> Default for BranchOptions<T> {
    fn default() -> Self {
        Self {
            decide_threshold: None,
            gap_tol: T::lit(DEFAULT_GAP_TOL),
            node_limit: 100_000,
            bound_tightening: true,
        }
    }
}

struct Node<T> {
    bound: T,
    id: usize,
    lower: Vec<T>,
    upper: Vec<T>,
}

impl<T: Scalar> PartialEq for Node<T> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl<T: Scalar> Eq for Node<T> {}

impl<T: Scalar> PartialOrd for Node<T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<T: Scalar> Ord for Node<T> {
    // max-heap: smallest bound first, then smallest id
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .bound
            .partial_cmp(&self.bound)
            .unwrap_or(Ordering::Equal)
            .then_with(|| other.id.cmp(&self.id))
    }
}

/// Minimizes `model` exactly up to `gap_tol`, or until a threshold decision.
pub fn branch_and_bound<T: Scalar>(
    model: &MilpModel<T>,
    opts: &BranchOptions<T>,
) -> Result<SolveOutcome<T>, MilpError> {
    model.validate()?;
    let lp = DenseLp::new(model);
    let int_tol = integrality_tol::<T>();
    let mut heap = BinaryHeap::new();
    let mut next_id = 0usize;
    heap.push(Node {
        bound: T::neg_infinity(),
        id: next_id,
        lower: model.lower_bounds(),
        upper: model.upper_bounds(),
    });
    next_id += 1;

    let mut incumbent: Option<(T, Vec<T>)> = None;
    let mut nodes = 0usize;
    let mut last_lb = T::neg_infinity();

    let finish = |status, lb: T, inc: Option<(T, Vec<T>)>, nodes| {
        let (value, point) = match inc {
            Some((v, x)) => (Some(v), Some(x)),
            None => (None, None),
        };
        let lb = match value {
            Some(v) => lb.min(v),
            None => lb,
        };
        Ok(SolveOutcome {
            status,
            best_lower_bound: lb,
            incumbent_value: value,
            incumbent: point,
            nodes_explored: nodes,
        })
    };

    loop {
        let inc_val = incumbent.as_ref().map_or(T::infinity(), |(v, _)| *v);
        let lb = heap.peek().map_or(inc_val, |n| n.bound.min(inc_val));
        debug_assert!(lb >= last_lb - T::lit(1e-9) * (T::one() + lb.abs()), "lower bound decreased");
        last_lb = last_lb.max(lb);

        if let Some(th) = opts.decide_threshold {
            if inc_val <= th {
                return finish(SolveStatus::IncumbentBelowThreshold, lb, incumbent, nodes);
            }
            if lb > th && (incumbent.is_some() || !heap.is_empty()) {
                return finish(SolveStatus::LowerBoundAboveThreshold, lb, incumbent, nodes);
            }
        }
        let Some(node) = heap.pop() else {
            return match incumbent {
                Some(_) => finish(SolveStatus::Optimal, inc_val, incumbent, nodes),
                None => finish(SolveStatus::Infeasible, T::infinity(), None, nodes),
            };
        };
        if incumbent.is_some() && node.bound >= inc_val - opts.gap_tol * (T::one() + inc_val.abs()) {
            return finish(SolveStatus::Optimal, node.bound, incumbent, nodes);
        }
        if nodes >= opts.node_limit {
            return finish(SolveStatus::NodeLimit, node.bound, incumbent, nodes);
        }
        nodes += 1;

        let Node {
            bound,
            mut lower,
            mut upper,
            ..
        } = node;
        if opts.bound_tightening && !tighten_bounds(model, &mut lower, &mut upper) {
            continue;
        }
        let (x, obj) = match lp.solve(&lower, &upper)? {
            LpOutcome::Infeasible => continue,
            LpOutcome::Unbounded => {
                return Err(MilpError::SolverFailure("unbounded relaxation".into()));
            }
            LpOutcome::Optimal { x, objective } => (x, objective.max(bound)),
        };
        if obj >= inc_val - opts.gap_tol * (T::one() + inc_val.abs()) {
            continue;
        }

        // most fractional integer variable, lowest index on ties
        let mut branch: Option<(usize, T)> = None;
        for (j, v) in model.variables.iter().enumerate() {
            if !v.integer {
                continue;
            }
            let frac = (x[j] - x[j].floor()).min(x[j].ceil() - x[j]);
            if frac > int_tol && branch.is_none_or(|(_, f)| frac > f) {
                branch = Some((j, frac));
            }
        }
        match branch {
            None => {
                if let Some((val, point)) = polish(model, &lp, &lower, &upper, &x)? {
                    if val < inc_val {
                        incumbent = Some((val, point));
                    }
                }
            }
            Some((j, _)) => {
                let down = x[j].floor();
                let mut up_child = Node {
                    bound: obj,
                    id: next_id,
                    lower: lower.clone(),
                    upper: upper.clone(),
                };
                up_child.lower[j] = down + T::one();
                let mut down_child = Node {
                    bound: obj,
                    id: next_id + 1,
                    lower,
                    upper,
                };
                down_child.upper[j] = down;
                next_id += 2;
                heap.push(up_child);
                heap.push(down_child);
            }
        }
    }
}

/// Rounds the integer part of an integral LP point, fixes it and re-solves
/// for the continuous part.
fn polish<T: Scalar>(
    model: &MilpModel<T>,
    lp: &DenseLp<T>,
    lower: &[T],
    upper: &[T],
    x: &[T],
) -> Result<Option<(T, Vec<T>)>, MilpError> {
    let mut lo = lower.to_vec();
    let mut hi = upper.to_vec();
    for (j, v) in model.variables.iter().enumerate() {
        if v.integer {
            let r = x[j].round();
            lo[j] = r;
            hi[j] = r;
        }
    }
    match lp.solve(&lo, &hi)? {
        LpOutcome::Optimal { x, objective } => Ok(Some((objective, x))),
        _ => {
            let tol = feasibility_tol::<T>();
            if model.max_violation(x) <= tol * T::lit(10.0) {
                Ok(Some((model.objective_value(x), x.to_vec())))
            } else {
                Ok(None)
            }
        }
    }
}

/// Activity-based bound tightening; returns `false` when the node is infeasible.
pub(crate) fn tighten_bounds<T: Scalar>(model: &MilpModel<T>, lower: &mut [T], upper: &mut [T]) -> bool {
    let tol = feasibility_tol::<T>();
    let int_tol = integrality_tol::<T>();
    for _ in 0..20 {
        let mut changed = false;
        for con in &model.constraints {
            let (mut min_act, mut max_act) = (T::zero(), T::zero());
            let (mut min_inf, mut max_inf) = (0usize, 0usize);
            for &(j, a) in &con.coeffs {
                let (lo_t, hi_t) = if a >= T::zero() {
                    (a * lower[j], a * upper[j])
                } else {
                    (a * upper[j], a * lower[j])
                };
                if lo_t.is_finite() {
                    min_act = min_act + lo_t;
                } else {
                    min_inf += 1;
                }
                if hi_t.is_finite() {
                    max_act = max_act + hi_t;
                } else {
                    max_inf += 1;
                }
            }
            let scale = T::one() + con.rhs.abs();
            let needs_le = matches!(con.relation, Relation::Le | Relation::Eq);
            let needs_ge = matches!(con.relation, Relation::Ge | Relation::Eq);
            if needs_le && min_inf == 0 && min_act > con.rhs + tol * scale {
                return false;
            }
            if needs_ge && max_inf == 0 && max_act < con.rhs - tol * scale {
                return false;
            }
            for &(j, a) in &con.coeffs {
                if a == T::zero() {
                    continue;
                }
                let (lo_t, hi_t) = if a > T::zero() {
                    (a * lower[j], a * upper[j])
                } else {
                    (a * upper[j], a * lower[j])
                };
                let v = &model.variables[j];
                // a x_j <= rhs - (min activity of the rest)
                if needs_le {
                    let rest = if lo_t.is_finite() {
                        (min_inf == 0).then(|| min_act - lo_t)
                    } else {
                        (min_inf == 1).then_some(min_act)
                    };
                    if let Some(rest) = rest {
                        let limit = (con.rhs - rest) / a;
                        changed |= apply(a > T::zero(), limit, j, v.integer, lower, upper, tol, int_tol);
                    }
                }
                if needs_ge {
                    let rest = if hi_t.is_finite() {
                        (max_inf == 0).then(|| max_act - hi_t)
                    } else {
                        (max_inf == 1).then_some(max_act)
                    };
                    if let Some(rest) = rest {
                        let limit = (con.rhs - rest) / a;
                        changed |= apply(a < T::zero(), limit, j, v.integer, lower, upper, tol, int_tol);
                    }
                }
                if lower[j] > upper[j] + tol * (T::one() + upper[j].abs()) {
                    return false;
                }
                if lower[j] > upper[j] {
                    lower[j] = upper[j];
                }
            }
        }
        if !changed {
            break;
        }
    }
    true
}

/// Applies `x_j <= limit` (`is_upper`) or `x_j >= limit`; returns whether the
/// bound moved by a meaningful amount.
#[allow(clippy::too_many_arguments)]
fn apply<T: Scalar>(
    is_upper: bool,
    limit: T,
    j: usize,
    integer: bool,
    lower: &mut [T],
    upper: &mut [T],
    tol: T,
    int_tol: T,
) -> bool {
    if !limit.is_finite() {
        return false;
    }
    let slack = tol * (T::one() + limit.abs());
    let min_move = T::lit(1e-6) * (T::one() + (upper[j] - lower[j]).abs().min(T::lit(1e6)));
    if is_upper {
        let mut nb = limit + slack;
        if integer {
            nb = (limit + int_tol).floor();
        }
        if nb < upper[j] {
            let moved = upper[j] - nb > min_move || integer;
            upper[j] = nb;
            return moved;
        }
    } else {
        let mut nb = limit - slack;
        if integer {
            nb = (limit - int_tol).ceil();
        }
        if nb > lower[j] {
            let moved = nb - lower[j] > min_move || integer;
            lower[j] = nb;
            return moved;
        }
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binary_rounds_up() {
        let mut m = MilpModel::new("t");
        let x = m.add_binary("x");
        m.add_constraint("c", vec![(x, 1.0)], Relation::Ge, 0.3);
        m.set_objective(vec![(x, 1.0)]);
        let r = branch_and_bound(&m, &BranchOptions::default()).unwrap();
        assert_eq!(r.status, SolveStatus::Optimal);
        assert!((r.incumbent_value.unwrap() - 1.0f64).abs() < 1e-9);
    }

    fn half_model(tightening: bool) -> (MilpModel<f64>, BranchOptions<f64>) {
        // min x + y/2 with x + y >= 1, x binary, y in [0, 1]; optimum 0.5
        let mut m = MilpModel::new("t");
        let x = m.add_binary("x");
        let y = m.add_continuous("y", 0.0, 1.0);
        m.add_constraint("c", vec![(x, 1.0), (y, 1.0)], Relation::Ge, 1.0);
        m.set_objective(vec![(x, 1.0), (y, 0.5)]);
        let opts = BranchOptions {
            bound_tightening: tightening,
            ..BranchOptions::default()
        };
        (m, opts)
    }

    #[test]
    fn threshold_below_optimum_decides_early() {
        let (m, mut opts) = half_model(true);
        opts.decide_threshold = Some(0.0);
        let r = branch_and_bound(&m, &opts).unwrap();
        assert_eq!(r.status, SolveStatus::LowerBoundAboveThreshold);
        assert!(r.best_lower_bound > 0.0);
    }

    #[test]
    fn threshold_above_optimum_finds_incumbent() {
        let (m, mut opts) = half_model(false);
        opts.decide_threshold = Some(0.75);
        let r = branch_and_bound(&m, &opts).unwrap();
        assert_eq!(r.status, SolveStatus::IncumbentBelowThreshold);
        assert!(r.incumbent_value.unwrap() <= 0.75);
    }

    #[test]
    fn infeasible_integer_model() {
        let mut m = MilpModel::new("t");
        let x = m.add_binary("x");
        m.add_constraint("lo", vec![(x, 1.0)], Relation::Ge, 0.2);
        m.add_constraint("hi", vec![(x, 1.0)], Relation::Le, 0.8);
        for tightening in [true, false] {
            let opts = BranchOptions {
                bound_tightening: tightening,
                ..BranchOptions::default()
            };
            let r = branch_and_bound(&m, &opts).unwrap();
            assert_eq!(r.status, SolveStatus::Infeasible);
        }
    }

    #[test]
    fn node_limit_reported() {
        let (m, mut opts) = half_model(false);
        opts.node_limit = 0;
        let r = branch_and_bound(&m, &opts).unwrap();
        assert_eq!(r.status, SolveStatus::NodeLimit);
    }

    #[test]
    fn tightening_rounds_integer_bounds() {
        let mut m = MilpModel::new("t");
        let x = m.add_variable("x", 0.0, 10.0, true);
        m.add_constraint("c", vec![(x, 2.0)], Relation::Le, 7.0);
        let (mut lo, mut hi) = (m.lower_bounds(), m.upper_bounds());
        assert!(tighten_bounds(&m, &mut lo, &mut hi));
        assert_eq!(hi[0], 3.0);
    }
}
