//! Box-constrained SVM dual without bias, and one-vs-all training.
//!
//! The dual is `min -sum(a) + 1/2 a^T H a` over `0 <= a <= C` with
//! `H = (y y^T) * Q`. Without a bias there is no equality constraint, so
//! cyclic coordinate minimization with clipped closed-form steps converges.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rayon::prelude::*;
use thiserror::Error;

use crate::scalar::Scalar;

pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_SWEEPS: usize = 1_000_000;
/// Allowed negative eigenvalue slack, relative to the largest diagonal entry.
pub const PSD_SLACK: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum QpError {
    #[error("kernel is not positive semi-definite (pivot {pivot} at row {row})")]
    IndefiniteKernel { row: usize, pivot: f64 },
    #[error("no convergence after {sweeps} sweeps, KKT residual {residual:e}")]
    NonConvergence { sweeps: usize, residual: f64 },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("class {class} has no training node")]
    DegenerateClass { class: usize },
}

#[derive(Debug, Clone, Copy)]
pub struct DualOptions {
    pub tol: f64,
    pub max_sweeps: usize,
}

impl Default for DualOptions {
    fn default() -> Self {
        Self {
            tol: DEFAULT_TOL,
            max_sweeps: DEFAULT_MAX_SWEEPS,
        }
    }
}

impl DualOptions {
    pub fn with_tol(tol: f64) -> Self {
        Self {
            tol,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DualSolution<T> {
    pub alpha: Array1<T>,
    pub objective: T,
    pub kkt_residual: T,
    pub sweeps: usize,
}

/// Binary SVM in dual form: `f(x_t) = sum_i y_i a_i Q_ti`.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryModel<T> {
    pub alpha: Array1<T>,
    pub y: Array1<T>,
}

impl<T: Scalar> BinaryModel<T> {
    pub fn margin(&self, q_row: ArrayView1<T>) -> Result<T, QpError> {
        if q_row.len() != self.alpha.len() {
            return Err(QpError::DimensionMismatch(format!(
                "row has {} entries, model {}",
                q_row.len(),
                self.alpha.len()
            )));
        }
        Ok(self
            .alpha
            .iter()
            .zip(self.y.iter())
            .zip(q_row.iter())
            .map(|((&a, &y), &q)| a * y * q)
            .sum())
    }
}

/// A trained classifier; binary models hold a single dual vector.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel<T> {
    pub classes: Vec<BinaryModel<T>>,
    pub c: T,
    pub binary: bool,
}

/// Predicted class and the scores behind it.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction<T> {
    pub class: usize,
    /// Binary: the single margin. Multi-class: one score per class.
    pub scores: Vec<T>,
    /// The argmax was shared by several classes, or the binary margin is 0.
    pub tie: bool,
}

impl<T: Scalar> TrainedModel<T> {
    pub fn m(&self) -> usize {
        self.classes[0].alpha.len()
    }

    pub fn num_classes(&self) -> usize {
        if self.binary {
            2
        } else {
            self.classes.len()
        }
    }

    pub fn predict(&self, q_row: ArrayView1<T>) -> Result<Prediction<T>, QpError> {
        let scores = self
            .classes
            .iter()
            .map(|c| c.margin(q_row))
            .collect::<Result<Vec<_>, _>>()?;
        if self.binary {
            let p = scores[0];
            return Ok(Prediction {
                class: usize::from(p > T::zero()),
                tie: p == T::zero(),
                scores,
            });
        }
        let (class, tie) = argmax(&scores);
        Ok(Prediction { class, scores, tie })
    }

    /// Predictions for every row of `q_rows` (`n_test x m`).
    pub fn predict_rows(&self, q_rows: ArrayView2<T>) -> Result<Vec<Prediction<T>>, QpError> {
        q_rows.rows().into_iter().map(|r| self.predict(r)).collect()
    }
}

/// Index of the largest entry (lowest index on ties) and whether it was tied.
pub fn argmax<T: Scalar>(v: &[T]) -> (usize, bool) {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    let tie = v.iter().enumerate().any(|(i, &x)| i != best && x == v[best]);
    (best, tie)
}

/// Dual objective `-sum(a) + 1/2 a^T H a`.
pub fn dual_objective<T: Scalar>(q: &Array2<T>, y: &Array1<T>, alpha: &Array1<T>) -> T {
    let ya = alpha * y;
    let half = T::lit(0.5);
    half * ya.dot(&q.dot(&ya)) - alpha.sum()
}

/// Checks symmetry and positive semi-definiteness up to `PSD_SLACK`.
pub fn check_psd<T: Scalar>(q: &Array2<T>) -> Result<(), QpError> {
    let m = q.nrows();
    if q.ncols() != m {
        return Err(QpError::DimensionMismatch(format!("kernel is {}x{}", m, q.ncols())));
    }
    let scale = q
        .diag()
        .iter()
        .fold(T::one(), |acc, &v| acc.max(v.abs()));
    let slack = T::lit(PSD_SLACK).max(T::epsilon() * T::lit(64.0) * T::from_usize_lossy(m.max(1)));
    let shift = slack * scale;
    for i in 0..m {
        for j in 0..i {
            if (q[[i, j]] - q[[j, i]]).abs() > shift {
                return Err(QpError::InvalidParameter(format!("kernel not symmetric at ({i}, {j})")));
            }
        }
    }
    // Cholesky of Q + shift I
    let mut l = Array2::<T>::zeros((m, m));
    for j in 0..m {
        let mut d = q[[j, j]] + shift;
        for k in 0..j {
            d = d - l[[j, k]] * l[[j, k]];
        }
        if !(d > T::zero()) {
            return Err(QpError::IndefiniteKernel {
                row: j,
                pivot: d.to_f64_lossy(),
            });
        }
        let djj = d.sqrt();
        l[[j, j]] = djj;
        for i in (j + 1)..m {
            let mut s = q[[i, j]];
            for k in 0..j {
                s = s - l[[i, k]] * l[[j, k]];
            }
            l[[i, j]] = s / djj;
        }
    }
    Ok(())
}

fn projected_gradient<T: Scalar>(g: T, a: T, c: T) -> T {
    if a <= T::zero() {
        g.min(T::zero())
    } else if a >= c {
        g.max(T::zero())
    } else {
        g
    }
}

/// Stopping tolerance on the projected gradient: `tol * max(1, C max_i Q_ii)`,
/// floored at a few ulps per coordinate so that f32 can stop.
///
/// The factor is 1 unless the kernel is large relative to `1 / C`; there the
/// gradient is dominated by rounding long before `tol` is reached.
pub fn kkt_tolerance<T: Scalar>(tol: T, c: T, q: &Array2<T>) -> T {
    let diag = q.diag().iter().fold(T::zero(), |acc, &v| acc.max(v.abs()));
    let scale = T::one().max(c * diag);
    let floor = T::epsilon() * T::lit(16.0) * T::from_usize_lossy(q.nrows().max(1));
    (tol * scale).max(floor * scale)
}

/// Solves the dual from `alpha = 0`.
pub fn solve_dual<T: Scalar>(
    q: &Array2<T>,
    y: &Array1<T>,
    c: T,
    opts: DualOptions,
) -> Result<DualSolution<T>, QpError> {
    solve_dual_from(q, y, c, opts, None)
}

/// Solves the dual from an optional starting point (clipped into the box).
pub fn solve_dual_from<T: Scalar>(
    q: &Array2<T>,
    y: &Array1<T>,
    c: T,
    opts: DualOptions,
    start: Option<&Array1<T>>,
) -> Result<DualSolution<T>, QpError> {
    let m = y.len();
    if q.dim() != (m, m) {
        return Err(QpError::DimensionMismatch(format!(
            "kernel {:?} for {m} labels",
            q.dim()
        )));
    }
    if !(c > T::zero()) || !c.is_finite() {
        return Err(QpError::InvalidParameter(format!("C = {c}")));
    }
    if y.iter().any(|&v| v != T::one() && v != -T::one()) {
        return Err(QpError::InvalidParameter("labels must be +1 or -1".into()));
    }
    check_psd(q)?;

    let h = Array2::from_shape_fn((m, m), |(i, j)| y[i] * y[j] * q[[i, j]]);
    let mut alpha = match start {
        Some(s) if s.len() == m => s.mapv(|v| v.clamp_to(T::zero(), c)),
        Some(s) => {
            return Err(QpError::DimensionMismatch(format!("start has {} entries", s.len())));
        }
        None => Array1::zeros(m),
    };
    let mut grad = h.dot(&alpha) - T::one();
    let tol = kkt_tolerance(T::lit(opts.tol), c, q);
    let residual = |alpha: &Array1<T>, grad: &Array1<T>| {
        alpha
            .iter()
            .zip(grad.iter())
            .map(|(&a, &g)| projected_gradient(g, a, c).abs())
            .fold(T::zero(), T::max)
    };
    let half = T::lit(0.5);
    let mut objective = half * alpha.dot(&(&grad + T::one())) - alpha.sum();

    let mut res = residual(&alpha, &grad);
    let mut sweeps = 0;
    while res > tol {
        if sweeps >= opts.max_sweeps {
            return Err(QpError::NonConvergence {
                sweeps,
                residual: res.to_f64_lossy(),
            });
        }
        sweeps += 1;
        for i in 0..m {
            let g = grad[i];
            if projected_gradient(g, alpha[i], c) == T::zero() {
                continue;
            }
            let hii = h[[i, i]];
            let target = if hii > T::zero() {
                (alpha[i] - g / hii).clamp_to(T::zero(), c)
            } else if g < T::zero() {
                c
            } else {
                T::zero()
            };
            let step = target - alpha[i];
            if step == T::zero() {
                continue;
            }
            alpha[i] = target;
            grad.scaled_add(step, &h.column(i));
            let prev = objective;
            objective = objective + step * g + half * step * step * hii;
            debug_assert!(
                objective <= prev + T::lit(1e-9) * (T::one() + prev.abs()),
                "dual objective increased"
            );
        }
        res = residual(&alpha, &grad);
    }
    let objective = dual_objective(q, y, &alpha);
    Ok(DualSolution {
        alpha,
        objective,
        kkt_residual: res,
        sweeps,
    })
}

/// Maps `{0, 1}` labels to `{-1, +1}`.
pub fn binary_targets<T: Scalar>(labels: &[i64]) -> Array1<T> {
    labels
        .iter()
        .map(|&l| if l == 1 { T::one() } else { -T::one() })
        .collect()
}

/// Trains a binary model on labels in `{0, 1}`; class 1 maps to `y = +1`.
pub fn train_binary<T: Scalar>(
    q: &Array2<T>,
    labels: &[i64],
    c: T,
    opts: DualOptions,
) -> Result<TrainedModel<T>, QpError> {
    for class in 0..2 {
        if !labels.iter().any(|&l| l == class as i64) {
            return Err(QpError::DegenerateClass { class });
        }
    }
    if let Some(&bad) = labels.iter().find(|&&l| l != 0 && l != 1) {
        return Err(QpError::InvalidParameter(format!("binary label {bad}")));
    }
    let y = binary_targets(labels);
    let sol = solve_dual(q, &y, c, opts)?;
    Ok(TrainedModel {
        classes: vec![BinaryModel { alpha: sol.alpha, y }],
        c,
        binary: true,
    })
}

/// One classifier per class; class `c` uses `y_i = +1` iff `label_i == c`.
pub fn train_one_vs_all<T: Scalar>(
    q: &Array2<T>,
    labels: &[i64],
    num_classes: usize,
    c: T,
    opts: DualOptions,
) -> Result<TrainedModel<T>, QpError> {
    if num_classes < 2 {
        return Err(QpError::InvalidParameter(format!("{num_classes} classes")));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l < 0 || l >= num_classes as i64) {
        return Err(QpError::InvalidParameter(format!("label {bad}")));
    }
    for class in 0..num_classes {
        if !labels.iter().any(|&l| l == class as i64) {
            return Err(QpError::DegenerateClass { class });
        }
    }
    let classes = (0..num_classes)
        .into_par_iter()
        .map(|class| {
            let y: Array1<T> = labels
                .iter()
                .map(|&l| if l == class as i64 { T::one() } else { -T::one() })
                .collect();
            solve_dual(q, &y, c, opts).map(|s| BinaryModel { alpha: s.alpha, y })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(TrainedModel {
        classes,
        c,
        binary: false,
    })
}

/// Binary model for two classes, one-vs-all otherwise.
pub fn train<T: Scalar>(
    q: &Array2<T>,
    labels: &[i64],
    num_classes: usize,
    c: T,
    opts: DualOptions,
) -> Result<TrainedModel<T>, QpError> {
    if num_classes == 2 {
        train_binary(q, labels, c, opts)
    } else {
        train_one_vs_all(q, labels, num_classes, c, opts)
    }
}
