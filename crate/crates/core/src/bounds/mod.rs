//! Element-wise bounds on every NTK entry an adversary can reach by moving
//! the features of the nodes in `U` inside an `l_p` ball of radius `delta`.
//!
//! The perturbation enters the kernel only through `X X^T`, so the bounds
//! start from an interval on `X X^T` and are pushed through the same
//! recursion as [`crate::ntk::ntk`] with interval arithmetic.

mod interval;

pub use interval::{hadamard_interval, sigma_interval_propagate, IntervalMatrix};

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graphdata::StructureMatrix;
use crate::ntk::{kappa0, kappa1, Activation, ArchKind, Architecture, NtkError};
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum BoundsError {
    #[error("lower bound exceeds upper bound at ({row}, {col})")]
    InvalidInterval { row: usize, col: usize },
    #[error("negative multiplier entry at ({row}, {col}); interval propagation needs M >= 0")]
    PropagationInvalid { row: usize, col: usize },
    #[error("lower covariance bound on node {node} is {value}; diagonal must stay positive")]
    DiagonalPositivity { node: usize, value: f64 },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid perturbation model: {0}")]
    InvalidPerturbation(String),
    #[error(transparent)]
    Ntk(#[from] NtkError),
}

/// Norm of the perturbation ball.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Norm {
    Inf,
    Two,
}

impl Norm {
    pub fn as_str(&self) -> &'static str {
        match self {
            Norm::Inf => "inf",
            Norm::Two => "two",
        }
    }

    /// Dual norm of a row, `l1` for `p = inf` and `l2` for `p = 2`.
    fn dual_norm<T: Scalar>(&self, row: ndarray::ArrayView1<T>) -> T {
        match self {
            Norm::Inf => row.iter().map(|v| v.abs()).sum(),
            Norm::Two => row.iter().map(|&v| v * v).sum::<T>().sqrt(),
        }
    }

    /// Largest `<g_i, g_j>` over two perturbations of size `delta` in dimension `d`.
    fn interaction<T: Scalar>(&self, delta: T, d: usize) -> T {
        match self {
            Norm::Inf => delta * delta * T::from_usize_lossy(d),
            Norm::Two => delta * delta,
        }
    }
}

/// Adversary: nodes in `adversarial` may move within the `norm` ball of
/// radius `delta`.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationModel<T> {
    pub norm: Norm,
    pub delta: T,
    pub adversarial: Vec<usize>,
    /// Backdoor flag: the target node is part of `adversarial`.
    pub target_in_u: bool,
}

impl<T: Scalar> PerturbationModel<T> {
    pub fn new(norm: Norm, delta: T, adversarial: Vec<usize>) -> Self {
        Self {
            norm,
            delta,
            adversarial,
            target_in_u: false,
        }
    }

    /// Checks `delta >= 0`, `U` within `[n]`, and `U` disjoint from the verified set.
    pub fn validate(&self, n: usize, verified: &[bool]) -> Result<(), BoundsError> {
        if !(self.delta >= T::zero()) || !self.delta.is_finite() {
            return Err(BoundsError::InvalidPerturbation(format!("delta = {}", self.delta)));
        }
        for &u in &self.adversarial {
            if u >= n {
                return Err(BoundsError::InvalidPerturbation(format!("node {u} out of range")));
            }
            if verified.get(u).copied().unwrap_or(false) {
                return Err(BoundsError::InvalidPerturbation(format!("node {u} is verified")));
            }
        }
        Ok(())
    }

    pub fn mask(&self, n: usize) -> Vec<bool> {
        let mut m = vec![false; n];
        for &u in &self.adversarial {
            if u < n {
                m[u] = true;
            }
        }
        m
    }
}

/// Worst-case interval on `Delta = X~ X~^T - X X^T`.
///
/// `Delta_ij` is bounded by `delta * ||X_j||_q [i in U] + delta * ||X_i||_q [j in U]`
/// plus the interaction term `delta^2 d` (`p = inf`) or `delta^2` (`p = 2`)
/// when both nodes are in `U`. The lower interaction term is dropped on the
/// diagonal because `<g_i, g_i> >= 0`.
pub fn delta_bounds<T: Scalar>(
    x: &Array2<T>,
    adversarial: &[usize],
    delta: T,
    norm: Norm,
) -> IntervalMatrix<T> {
    let n = x.nrows();
    let mut in_u = vec![false; n];
    for &u in adversarial {
        in_u[u] = true;
    }
    let norms: Array1<T> = x.rows().into_iter().map(|r| norm.dual_norm(r)).collect();
    let inter = norm.interaction(delta, x.ncols());
    let mut lower = Array2::zeros((n, n));
    let mut upper = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            let mut lin = T::zero();
            if in_u[i] {
                lin = lin + delta * norms[j];
            }
            if in_u[j] {
                lin = lin + delta * norms[i];
            }
            let both = in_u[i] && in_u[j];
            lower[[i, j]] = -lin - if both && i != j { inter } else { T::zero() };
            upper[[i, j]] = lin + if both { inter } else { T::zero() };
        }
    }
    IntervalMatrix::from_parts_unchecked(lower, upper)
}

/// Interval on `X~ X~^T`.
pub fn gram_bounds<T: Scalar>(
    x: &Array2<T>,
    adversarial: &[usize],
    delta: T,
    norm: Norm,
) -> IntervalMatrix<T> {
    let gram = x.dot(&x.t());
    let d = delta_bounds(x, adversarial, delta, norm);
    IntervalMatrix::from_parts_unchecked(&gram + d.lower(), &gram + d.upper())
}

/// Bounds on the ReLU moments `E` and `Edot` over a covariance interval.
///
/// `E(Sigma_ij, s) = s kappa1(Sigma_ij / s)` with `s = sqrt(Sigma_ii Sigma_jj)`
/// is non-decreasing in both arguments, so its extremes sit at
/// `(Sigma^L_ij, s^l)` and `(Sigma^U_ij, s^u)`. `Edot = kappa0(z)` follows the
/// extremes of `z = Sigma_ij / s`, which use `s^u` or `s^l` depending on the
/// sign of the numerator. Diagonal entries are exact (`z = 1`). Ratios are
/// clamped to `[-1, 1]`.
pub fn e_edot_bounds<T: Scalar>(
    sigma: &IntervalMatrix<T>,
) -> Result<(IntervalMatrix<T>, IntervalMatrix<T>), BoundsError> {
    let (n, cols) = sigma.dim();
    if n != cols {
        return Err(BoundsError::DimensionMismatch(format!("covariance is {n}x{cols}")));
    }
    let lo = sigma.lower();
    let hi = sigma.upper();
    for i in 0..n {
        if !(lo[[i, i]] > T::zero()) {
            return Err(BoundsError::DiagonalPositivity {
                node: i,
                value: lo[[i, i]].to_f64_lossy(),
            });
        }
    }
    let one = T::one();
    let ratio = |num: T, den: T| (num / den).clamp_to(-one, one);
    let mut e_lo = Array2::zeros((n, n));
    let mut e_hi = Array2::zeros((n, n));
    let mut d_lo = Array2::zeros((n, n));
    let mut d_hi = Array2::zeros((n, n));
    for i in 0..n {
        e_lo[[i, i]] = lo[[i, i]];
        e_hi[[i, i]] = hi[[i, i]];
        d_lo[[i, i]] = one;
        d_hi[[i, i]] = one;
        for j in (i + 1)..n {
            for (a, b) in [(i, j), (j, i)] {
                let s_l = (lo[[a, a]] * lo[[b, b]]).sqrt();
                let s_u = (hi[[a, a]] * hi[[b, b]]).sqrt();
                let (sl_ij, su_ij) = (lo[[a, b]], hi[[a, b]]);
                let z_min = ratio(sl_ij, if sl_ij > T::zero() { s_u } else { s_l });
                let z_max = ratio(su_ij, if su_ij > T::zero() { s_l } else { s_u });
                e_lo[[a, b]] = s_l * kappa1(ratio(sl_ij, s_l))?;
                e_hi[[a, b]] = s_u * kappa1(ratio(su_ij, s_u))?;
                d_lo[[a, b]] = kappa0(z_min)?;
                d_hi[[a, b]] = kappa0(z_max)?;
            }
        }
    }
    Ok((
        IntervalMatrix::from_parts_unchecked(e_lo, e_hi),
        IntervalMatrix::from_parts_unchecked(d_lo, d_hi),
    ))
}

fn moment_bounds<T: Scalar>(
    sigma: &IntervalMatrix<T>,
    activation: Activation,
) -> Result<(IntervalMatrix<T>, IntervalMatrix<T>), BoundsError> {
    match activation {
        Activation::Relu => e_edot_bounds(sigma),
        Activation::Linear => Ok((
            sigma.clone(),
            IntervalMatrix::point(Array2::ones(sigma.dim())),
        )),
    }
}

fn propagate_opt<T: Scalar>(
    s: Option<&Array2<T>>,
    a: &IntervalMatrix<T>,
) -> Result<IntervalMatrix<T>, BoundsError> {
    match s {
        Some(m) => sigma_interval_propagate(m, a),
        None => Ok(a.clone()),
    }
}

/// Interval version of the kernel recursion; `s = None` means identity.
fn interval_recursion<T: Scalar>(
    s: Option<&Array2<T>>,
    sigma1: IntervalMatrix<T>,
    depth: usize,
    activation: Activation,
) -> Result<IntervalMatrix<T>, BoundsError> {
    let mut sigma = sigma1;
    let mut acc: Option<IntervalMatrix<T>> = None;
    for _ in 0..depth {
        let (e, e_dot) = moment_bounds(&sigma, activation)?;
        let pre = match acc {
            None => sigma.clone(),
            Some(r) => propagate_opt(s, &r)?.add(&sigma),
        };
        acc = Some(hadamard_interval(&pre, &e_dot)?);
        sigma = propagate_opt(s, &e)?;
    }
    Ok(propagate_opt(s, &acc.expect("depth >= 1"))?.add(&sigma))
}

/// Element-wise `[Q^L, Q^U]` over every kernel the adversary can produce.
///
/// `m` is the propagation matrix from [`Architecture::propagation`]. With
/// `delta = 0` (or empty `U`) the interval collapses to the clean kernel.
pub fn ntk_bounds<T: Scalar>(
    arch: &Architecture,
    m: &StructureMatrix<T>,
    x: &Array2<T>,
    pert: &PerturbationModel<T>,
) -> Result<IntervalMatrix<T>, BoundsError> {
    arch.validate()?;
    let n = x.nrows();
    if m.n() != n {
        return Err(BoundsError::DimensionMismatch(format!(
            "structure has {} nodes, features {n}",
            m.n()
        )));
    }
    pert.validate(n, &[])?;
    let gram = gram_bounds(x, &pert.adversarial, pert.delta, pert.norm);
    let activation = arch.activation();
    let biased_gram = || {
        let mut g = gram.clone();
        refine_diagonal(&mut g, None, x, pert);
        g.shift(T::one())
    };
    let mut q = match arch.kind {
        ArchKind::Mlp => interval_recursion(None, biased_gram(), arch.depth, activation)?,
        ArchKind::Gcn | ArchKind::Sgc => {
            let mut sigma1 = sigma_interval_propagate(m.matrix(), &gram)?;
            sigma1.symmetrize_outward();
            refine_diagonal(&mut sigma1, Some(m.matrix()), x, pert);
            interval_recursion(Some(m.matrix()), sigma1, arch.depth, activation)?
        }
        ArchKind::Appnp => {
            let inner = interval_recursion(None, biased_gram(), arch.depth, activation)?;
            sigma_interval_propagate(m.matrix(), &inner)?
        }
    };
    q.symmetrize_outward();
    Ok(q)
}

/// Intersects the diagonal of `S X~ X~^T S^T` (`S = I` when `None`) with the
/// norm bound `(||S_i X|| -+ delta c sum_{u in U} S_iu)^2`, where `c` bounds
/// `||g||_2` (`sqrt(d)` for `p = inf`, 1 for `p = 2`).
///
/// Entry-wise bounds forget that the diagonal is a squared norm and can push
/// its lower end below zero; this keeps it positive whenever the clean
/// (aggregated) feature outweighs the perturbation.
fn refine_diagonal<T: Scalar>(
    sigma: &mut IntervalMatrix<T>,
    s: Option<&Array2<T>>,
    x: &Array2<T>,
    pert: &PerturbationModel<T>,
) {
    let c = match pert.norm {
        Norm::Inf => T::from_usize_lossy(x.ncols()).sqrt(),
        Norm::Two => T::one(),
    };
    let sx = match s {
        Some(m) => m.dot(x),
        None => x.clone(),
    };
    let (lower, upper) = sigma.parts_mut();
    for i in 0..sx.nrows() {
        let weight: T = match s {
            Some(m) => pert.adversarial.iter().map(|&u| m[[i, u]]).sum(),
            None if pert.adversarial.contains(&i) => T::one(),
            None => T::zero(),
        };
        let r = pert.delta * c * weight;
        if !(r > T::zero()) {
            continue;
        }
        let a = sx.row(i).iter().map(|&v| v * v).sum::<T>().sqrt();
        let lo = (a - r).max(T::zero());
        let hi = a + r;
        lower[[i, i]] = lower[[i, i]].max(lo * lo);
        upper[[i, i]] = upper[[i, i]].min(hi * hi).max(lower[[i, i]]);
    }
}

/// Which endpoint of the bound a witness should attain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Endpoint {
    Lower,
    Upper,
}

/// Direction attaining the dual norm: `<g, v> = ||v||_q` for `||g||_p = 1`.
fn attaining_direction<T: Scalar>(v: ndarray::ArrayView1<T>, norm: Norm) -> Option<Array1<T>> {
    match norm {
        Norm::Inf => Some(v.mapv(|x| if x >= T::zero() { T::one() } else { -T::one() })),
        Norm::Two => {
            let len = v.iter().map(|&x| x * x).sum::<T>().sqrt();
            (len > T::zero()).then(|| v.mapv(|x| x / len))
        }
    }
}

/// Perturbed features attaining `Delta^{endpoint}` at entry `(a, b)`.
///
/// Adversarial nodes in the pair move by `+-delta` along the direction that
/// attains the dual norm of the partner row; when both nodes are adversarial
/// the interaction `<g_a, g_b>` must reach its extreme with the matching
/// sign, which needs equal (upper) or opposite (lower) directions. For the
/// upper endpoint, when every non-zero row shares one attaining direction,
/// all adversarial nodes take it and every entry of `Delta^U` is attained at
/// once. Returns `None` when the sign conditions cannot be met; the lower
/// diagonal endpoint is never attainable for `delta > 0`.
pub fn tightness_witness<T: Scalar>(
    x: &Array2<T>,
    adversarial: &[usize],
    delta: T,
    norm: Norm,
    endpoint: Endpoint,
    entry: (usize, usize),
) -> Option<Array2<T>> {
    let n = x.nrows();
    let (a, b) = entry;
    if a >= n || b >= n || adversarial.iter().any(|&u| u >= n) {
        return None;
    }
    if delta == T::zero() {
        return Some(x.clone());
    }
    let in_u = |i: usize| adversarial.contains(&i);
    let sign = match endpoint {
        Endpoint::Upper => T::one(),
        Endpoint::Lower => -T::one(),
    };
    let mut out = x.clone();
    let tol = T::lit(1e-12);

    if endpoint == Endpoint::Upper {
        if let Some(g) = shared_direction(x, norm) {
            for &u in adversarial {
                out.row_mut(u).scaled_add(delta, &g);
            }
            return Some(out);
        }
    }

    match (in_u(a), in_u(b)) {
        (false, false) => Some(out),
        (true, true) if a == b => {
            if endpoint == Endpoint::Lower {
                return None;
            }
            let g = attaining_direction(x.row(a), norm)?;
            out.row_mut(a).scaled_add(delta, &g);
            Some(out)
        }
        (true, true) => {
            let ga = attaining_direction(x.row(b), norm)?;
            let gb = attaining_direction(x.row(a), norm)?;
            let want = match norm {
                Norm::Inf => T::from_usize_lossy(x.ncols()),
                Norm::Two => T::one(),
            };
            // <sign*ga, sign*gb> must equal sign * want
            if (ga.dot(&gb) - sign * want).abs() > tol * (T::one() + want) {
                return None;
            }
            out.row_mut(a).scaled_add(sign * delta, &ga);
            out.row_mut(b).scaled_add(sign * delta, &gb);
            Some(out)
        }
        (ua, _) => {
            let (moved, partner) = if ua { (a, b) } else { (b, a) };
            let g = attaining_direction(x.row(partner), norm)?;
            out.row_mut(moved).scaled_add(sign * delta, &g);
            Some(out)
        }
    }
}

/// Common attaining direction of all non-zero rows, if one exists.
fn shared_direction<T: Scalar>(x: &Array2<T>, norm: Norm) -> Option<Array1<T>> {
    let d = x.ncols();
    match norm {
        Norm::Inf => {
            let mut g: Vec<Option<bool>> = vec![None; d];
            for row in x.rows() {
                for (k, &v) in row.iter().enumerate() {
                    if v == T::zero() {
                        continue;
                    }
                    let pos = v > T::zero();
                    match g[k] {
                        None => g[k] = Some(pos),
                        Some(p) if p != pos => return None,
                        _ => {}
                    }
                }
            }
            Some(g.into_iter().map(|s| if s == Some(false) { -T::one() } else { T::one() }).collect())
        }
        Norm::Two => {
            let mut dir: Option<Array1<T>> = None;
            for row in x.rows() {
                let Some(u) = attaining_direction(row, norm) else { continue };
                match &dir {
                    None => dir = Some(u),
                    Some(g) => {
                        let diff = g.iter().zip(u.iter()).map(|(&p, &q)| (p - q).abs()).fold(T::zero(), T::max);
                        if diff > T::lit(1e-12) {
                            return None;
                        }
                    }
                }
            }
            dir
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphdata::StructureKind;
    use crate::ntk::ntk;
    use ndarray::array;

    #[test]
    fn empty_adversary_gives_zero_delta() {
        let x = array![[1.0, -2.0], [3.0, 4.0]];
        let d = delta_bounds(&x, &[], 0.7, Norm::Inf);
        assert!(d.lower().iter().chain(d.upper().iter()).all(|&v| v == 0.0));
    }

    #[test]
    fn delta_reference_values_inf() {
        let x: Array2<f64> = array![[1.0, -2.0], [3.0, 4.0]];
        let d = delta_bounds(&x, &[1], 0.5, Norm::Inf);
        assert!((d.upper()[[0, 1]] - 1.5).abs() < 1e-15);
        assert!((d.upper()[[1, 1]] - 7.5).abs() < 1e-15);
        assert!((d.lower()[[1, 1]] + 7.0).abs() < 1e-15);
        assert_eq!(d.upper()[[0, 0]], 0.0);
    }

    #[test]
    fn delta_reference_values_two() {
        let x = array![[1.0, -2.0], [3.0, 4.0]];
        let d = delta_bounds(&x, &[1], 0.5, Norm::Two);
        assert!((d.upper()[[0, 1]] - 0.5 * 5f64.sqrt()).abs() < 1e-15);
        // 2 * 0.5 * 5 + 0.25
        assert!((d.upper()[[1, 1]] - 5.25).abs() < 1e-15);
    }

    #[test]
    fn unit_covariance_edot_is_half() {
        let sigma = IntervalMatrix::point(Array2::<f64>::eye(2));
        let (_, e_dot) = e_edot_bounds(&sigma).unwrap();
        assert!((e_dot.lower()[[0, 1]] - 0.5).abs() < 1e-15);
        assert!((e_dot.upper()[[0, 1]] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn degenerate_interval_reproduces_exact_moments() {
        let x: Array2<f64> = array![[0.3, -1.2, 0.5], [1.1, 0.4, -0.2], [-0.7, 0.9, 1.3]];
        let sigma = x.dot(&x.t()) + 1.0;
        let (e, e_dot) = crate::ntk::relu_moments(&sigma).unwrap();
        let (ei, di) = e_edot_bounds(&IntervalMatrix::point(sigma)).unwrap();
        for ((a, b), (c, d)) in e.iter().zip(e_dot.iter()).zip(ei.lower().iter().zip(di.upper().iter())) {
            assert!((a - c).abs() < 1e-10);
            assert!((b - d).abs() < 1e-10);
        }
        assert!(ei.max_width() < 1e-10 && di.max_width() < 1e-10);
    }

    #[test]
    fn nonpositive_diagonal_rejected() {
        let sigma = IntervalMatrix::new(array![[0.0, 0.0], [0.0, 1.0]], array![[1.0, 0.5], [0.5, 1.0]]).unwrap();
        assert!(matches!(
            e_edot_bounds(&sigma),
            Err(BoundsError::DiagonalPositivity { node: 0, .. })
        ));
    }

    #[test]
    fn zero_delta_collapses_for_every_architecture() {
        let x: Array2<f64> = array![[0.3, -1.2], [1.1, 0.4], [-0.7, 0.9], [0.2, 0.2]];
        let adj = array![
            [false, true, false, true],
            [true, false, true, false],
            [false, true, false, false],
            [true, false, false, false]
        ];
        for arch in [
            Architecture::mlp(1),
            Architecture::mlp(2),
            Architecture::gcn(1, StructureKind::RowNorm),
            Architecture::gcn(2, StructureKind::SymNorm),
            Architecture::sgc(2, StructureKind::RowNorm),
            Architecture::appnp(0.2, 3, StructureKind::SymNorm),
        ] {
            let m = arch.propagation(&adj).unwrap();
            let k = ntk(&arch, &m, &x).unwrap();
            let b = ntk_bounds(&arch, &m, &x, &PerturbationModel::new(Norm::Inf, 0.0, vec![0, 2])).unwrap();
            for ((l, u), q) in b.lower().iter().zip(b.upper().iter()).zip(k.q.iter()) {
                assert!((l - q).abs() < 1e-10 && (u - q).abs() < 1e-10, "{}", arch.label());
            }
        }
    }

    #[test]
    fn verified_untouched_entries_have_zero_width_for_mlp() {
        let x = array![[0.3, -1.2], [1.1, 0.4], [-0.7, 0.9]];
        let arch = Architecture::mlp(1);
        let m = StructureMatrix::identity(3);
        let b = ntk_bounds(&arch, &m, &x, &PerturbationModel::new(Norm::Two, 0.3, vec![2])).unwrap();
        let w = b.width();
        assert_eq!(w[[0, 1]], 0.0);
        assert_eq!(w[[0, 0]], 0.0);
        assert!(w[[0, 2]] > 0.0);
    }

    #[test]
    fn witness_zero_delta_is_identity() {
        let x = array![[1.0, 2.0], [-1.0, 0.5]];
        let w = tightness_witness(&x, &[0], 0.0, Norm::Inf, Endpoint::Lower, (0, 1)).unwrap();
        assert_eq!(w, x);
    }

    #[test]
    fn witness_single_node_positive_features() {
        let x = array![[1.0, 2.0], [0.5, 3.0]];
        let w = tightness_witness(&x, &[0], 0.25, Norm::Inf, Endpoint::Upper, (0, 1)).unwrap();
        assert_eq!(w.row(0), array![1.25, 2.25]);
        let w2 = tightness_witness(&x, &[0], 0.25, Norm::Two, Endpoint::Lower, (0, 1)).unwrap();
        let dir = x.row(1).mapv(|v| v / (0.25f64 + 9.0).sqrt());
        for k in 0..2 {
            assert!((w2[[0, k]] - (x[[0, k]] - 0.25 * dir[k])).abs() < 1e-15);
        }
    }

    #[test]
    fn witness_lower_diagonal_unattainable() {
        let x = array![[1.0, 2.0], [0.5, 3.0]];
        assert!(tightness_witness(&x, &[0], 0.1, Norm::Inf, Endpoint::Lower, (0, 0)).is_none());
        // same-sign rows cannot reach the negative interaction term
        assert!(tightness_witness(&x, &[0, 1], 0.1, Norm::Inf, Endpoint::Lower, (0, 1)).is_none());
    }
}
