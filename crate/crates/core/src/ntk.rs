//! Closed-form infinite-width NTKs for MLP, GCN, SGC and APPNP.
//!
//! All architectures share the depth-`L` recursion
//!
//! ```text
//! Sigma_1 = S X X^T S^T            (MLP: X X^T + 1, S = I)
//! R_1     = Sigma_1 * Edot_1
//! R_k     = (S R_{k-1} S^T + Sigma_k) * Edot_k,   Sigma_k = S E_{k-1} S^T
//! Q       = S R_L S^T + S E_L S^T
//! ```
//!
//! where `*` is the Hadamard product and `E`, `Edot` are the ReLU
//! arc-cosine moments (or `Sigma` and all-ones for linear activations).
//! APPNP wraps the MLP kernel with the propagation matrix: `Q = P Q_mlp P^T`.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graphdata::{normalize, ppr_matrix, GraphError, StructureKind, StructureMatrix};
use crate::scalar::Scalar;

/// Slack allowed on arc-cosine arguments before they are rejected.
pub const KAPPA_SLACK: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum NtkError {
    #[error("kernel argument {z} outside [-1, 1]")]
    Domain { z: f64 },
    #[error("singular covariance: Sigma[{node},{node}] = {value}")]
    SingularCovariance { node: usize, value: f64 },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("node index {index} out of range for n={n}")]
    IndexOutOfRange { index: usize, n: usize },
    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

fn check_arg<T: Scalar>(z: T) -> Result<T, NtkError> {
    let slack = T::lit(KAPPA_SLACK);
    if !(z.abs() <= T::one() + slack) {
        return Err(NtkError::Domain { z: z.to_f64_lossy() });
    }
    Ok(z.clamp_to(-T::one(), T::one()))
}

/// `kappa0(z) = (pi - arccos z) / pi`.
pub fn kappa0<T: Scalar>(z: T) -> Result<T, NtkError> {
    let z = check_arg(z)?;
    Ok((T::PI() - z.acos()) / T::PI())
}

/// `kappa1(z) = (z (pi - arccos z) + sqrt(1 - z^2)) / pi`.
pub fn kappa1<T: Scalar>(z: T) -> Result<T, NtkError> {
    let z = check_arg(z)?;
    let root = (T::one() - z * z).max(T::zero()).sqrt();
    Ok((z * (T::PI() - z.acos()) + root) / T::PI())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArchKind {
    Mlp,
    Gcn,
    Sgc,
    Appnp,
}

impl ArchKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ArchKind::Mlp => "mlp",
            ArchKind::Gcn => "gcn",
            ArchKind::Sgc => "sgc",
            ArchKind::Appnp => "appnp",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
    Linear,
}

fn default_depth() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub kind: ArchKind,
    #[serde(default = "default_depth")]
    pub depth: usize,
    /// Hidden activation; SGC is always linear.
    #[serde(default)]
    pub activation: Activation,
    /// Teleport probability, APPNP only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub appnp_alpha: Option<f64>,
    /// Propagation steps, APPNP only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub appnp_khops: Option<usize>,
    /// Normalization of the adjacency; ignored by MLP.
    #[serde(default = "default_structure")]
    pub structure: StructureKind,
}

fn default_structure() -> StructureKind {
    StructureKind::RowNorm
}

impl Architecture {
    pub fn mlp(depth: usize) -> Self {
        Self {
            kind: ArchKind::Mlp,
            depth,
            activation: Activation::Relu,
            appnp_alpha: None,
            appnp_khops: None,
            structure: StructureKind::Identity,
        }
    }

    pub fn gcn(depth: usize, structure: StructureKind) -> Self {
        Self {
            kind: ArchKind::Gcn,
            structure,
            ..Self::mlp(depth)
        }
    }

    pub fn sgc(depth: usize, structure: StructureKind) -> Self {
        Self {
            kind: ArchKind::Sgc,
            activation: Activation::Linear,
            structure,
            ..Self::mlp(depth)
        }
    }

    pub fn appnp(alpha: f64, k_hops: usize, structure: StructureKind) -> Self {
        Self {
            kind: ArchKind::Appnp,
            appnp_alpha: Some(alpha),
            appnp_khops: Some(k_hops),
            structure,
            ..Self::mlp(1)
        }
    }

    pub fn with_activation(mut self, activation: Activation) -> Self {
        self.activation = activation;
        self
    }

    /// Effective hidden activation.
    pub fn activation(&self) -> Activation {
        match self.kind {
            ArchKind::Sgc => Activation::Linear,
            _ => self.activation,
        }
    }

    pub fn validate(&self) -> Result<(), NtkError> {
        if self.depth == 0 {
            return Err(NtkError::InvalidArchitecture("depth must be >= 1".into()));
        }
        let has_appnp = self.appnp_alpha.is_some() || self.appnp_khops.is_some();
        match self.kind {
            ArchKind::Appnp => {
                let alpha = self.appnp_alpha.ok_or_else(|| {
                    NtkError::InvalidArchitecture("appnp requires appnp_alpha".into())
                })?;
                let k = self.appnp_khops.ok_or_else(|| {
                    NtkError::InvalidArchitecture("appnp requires appnp_khops".into())
                })?;
                if !(alpha > 0.0 && alpha <= 1.0) || k == 0 {
                    return Err(NtkError::InvalidArchitecture(format!(
                        "appnp needs alpha in (0,1] and k >= 1, got {alpha}, {k}"
                    )));
                }
                if self.structure == StructureKind::Ppr {
                    return Err(NtkError::InvalidArchitecture(
                        "appnp structure must be a base normalization".into(),
                    ));
                }
            }
            _ if has_appnp => {
                return Err(NtkError::InvalidArchitecture(format!(
                    "appnp fields given for {}",
                    self.kind.as_str()
                )));
            }
            ArchKind::Gcn | ArchKind::Sgc if self.structure == StructureKind::Ppr => {
                return Err(NtkError::InvalidArchitecture(
                    "gcn/sgc structure must be a base normalization".into(),
                ));
            }
            _ => {}
        }
        Ok(())
    }

    /// Short identifier used in result tables, e.g. `gcn`, `appnp`, `mlp-linear`.
    pub fn label(&self) -> String {
        let mut s = self.kind.as_str().to_string();
        if self.kind != ArchKind::Sgc && self.activation == Activation::Linear {
            s.push_str("-linear");
        }
        if self.depth != 1 {
            s.push_str(&format!("-L{}", self.depth));
        }
        s
    }

    /// Structure label, `none` for MLP.
    pub fn normalization_label(&self) -> &'static str {
        match self.kind {
            ArchKind::Mlp => "none",
            _ => self.structure.as_str(),
        }
    }

    /// Propagation matrix `M` used by the kernel: identity for MLP, the
    /// normalized adjacency for GCN/SGC and the APPNP polynomial otherwise.
    pub fn propagation<T: Scalar>(&self, adjacency: &Array2<bool>) -> Result<StructureMatrix<T>, NtkError> {
        self.validate()?;
        let n = adjacency.nrows();
        Ok(match self.kind {
            ArchKind::Mlp => StructureMatrix::identity(n),
            ArchKind::Gcn | ArchKind::Sgc => normalize(adjacency, self.structure, true)?,
            ArchKind::Appnp => {
                let base = normalize(adjacency, self.structure, true)?;
                ppr_matrix(
                    &base,
                    T::lit(self.appnp_alpha.unwrap_or(1.0)),
                    self.appnp_khops.unwrap_or(1),
                )?
            }
        })
    }
}

/// Per-layer covariance and activation moments.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerTerms<T> {
    pub sigma: Array2<T>,
    pub e: Array2<T>,
    pub e_dot: Array2<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelMatrix<T> {
    pub q: Array2<T>,
    /// Layers `1..=L` of the recursion (of the inner MLP for APPNP).
    pub layers: Vec<LayerTerms<T>>,
}

impl<T: Scalar> KernelMatrix<T> {
    pub fn n(&self) -> usize {
        self.q.nrows()
    }
}

/// `M A M^T`.
pub(crate) fn sandwich<T: Scalar>(m: &Array2<T>, a: &Array2<T>) -> Array2<T> {
    m.dot(a).dot(&m.t())
}

pub(crate) fn symmetrize<T: Scalar>(a: &mut Array2<T>) {
    let n = a.nrows();
    let half = T::lit(0.5);
    for i in 0..n {
        for j in (i + 1)..n {
            let v = (a[[i, j]] + a[[j, i]]) * half;
            a[[i, j]] = v;
            a[[j, i]] = v;
        }
    }
}

/// ReLU moments `E_ij = s kappa1(Sigma_ij / s)`, `Edot_ij = kappa0(Sigma_ij / s)`
/// with `s = sqrt(Sigma_ii Sigma_jj)`.
pub fn relu_moments<T: Scalar>(sigma: &Array2<T>) -> Result<(Array2<T>, Array2<T>), NtkError> {
    let n = sigma.nrows();
    for i in 0..n {
        let v = sigma[[i, i]];
        if !(v > T::zero() && v.is_finite()) {
            return Err(NtkError::SingularCovariance { node: i, value: v.to_f64_lossy() });
        }
    }
    let mut e = Array2::zeros((n, n));
    let mut e_dot = Array2::zeros((n, n));
    for i in 0..n {
        for j in i..n {
            let s = (sigma[[i, i]] * sigma[[j, j]]).sqrt();
            let z = sigma[[i, j]] / s;
            let ev = s * kappa1(z)?;
            let dv = kappa0(z)?;
            e[[i, j]] = ev;
            e[[j, i]] = ev;
            e_dot[[i, j]] = dv;
            e_dot[[j, i]] = dv;
        }
    }
    Ok((e, e_dot))
}

fn moments<T: Scalar>(
    sigma: &Array2<T>,
    activation: Activation,
) -> Result<(Array2<T>, Array2<T>), NtkError> {
    match activation {
        Activation::Relu => relu_moments(sigma),
        Activation::Linear => Ok((sigma.clone(), Array2::ones(sigma.dim()))),
    }
}

/// Runs the shared recursion from a first-layer covariance.
fn recursion<T: Scalar>(
    s: &Array2<T>,
    sigma1: Array2<T>,
    depth: usize,
    activation: Activation,
) -> Result<KernelMatrix<T>, NtkError> {
    let mut sigma = sigma1;
    let mut acc: Option<Array2<T>> = None;
    let mut layers = Vec::with_capacity(depth);
    for _ in 0..depth {
        let (e, e_dot) = moments(&sigma, activation)?;
        let inner = match acc {
            None => &sigma * &e_dot,
            Some(r) => &(sandwich(s, &r) + &sigma) * &e_dot,
        };
        let next = sandwich(s, &e);
        layers.push(LayerTerms { sigma, e, e_dot });
        acc = Some(inner);
        sigma = next;
    }
    let mut q = sandwich(s, &acc.expect("depth >= 1")) + &sigma;
    symmetrize(&mut q);
    Ok(KernelMatrix { q, layers })
}

/// First-layer covariance `X X^T + 1` (MLP-style input layer with bias).
pub(crate) fn biased_gram<T: Scalar>(x: &Array2<T>) -> Array2<T> {
    x.dot(&x.t()) + T::one()
}

/// NTK of `arch` on propagation matrix `m` (see [`Architecture::propagation`])
/// and features `x`.
pub fn ntk<T: Scalar>(
    arch: &Architecture,
    m: &StructureMatrix<T>,
    x: &Array2<T>,
) -> Result<KernelMatrix<T>, NtkError> {
    arch.validate()?;
    let n = x.nrows();
    if m.n() != n {
        return Err(NtkError::DimensionMismatch(format!(
            "structure is {}x{}, features have {n} rows",
            m.n(),
            m.n()
        )));
    }
    let activation = arch.activation();
    match arch.kind {
        ArchKind::Mlp => {
            let eye = Array2::eye(n);
            recursion(&eye, biased_gram(x), arch.depth, activation)
        }
        ArchKind::Gcn | ArchKind::Sgc => {
            let s = m.matrix();
            let sx = s.dot(x);
            let mut sigma1 = sx.dot(&sx.t());
            symmetrize(&mut sigma1);
            recursion(s, sigma1, arch.depth, activation)
        }
        ArchKind::Appnp => {
            let eye = Array2::eye(n);
            let inner = recursion(&eye, biased_gram(x), arch.depth, activation)?;
            let mut q = sandwich(m.matrix(), &inner.q);
            symmetrize(&mut q);
            Ok(KernelMatrix { q, layers: inner.layers })
        }
    }
}

/// Kernel row `Q[t, train]` computed on the full graph.
///
/// For inductive use the caller passes the graph with `t` attached.
pub fn ntk_test_rows<T: Scalar>(
    arch: &Architecture,
    m_full: &StructureMatrix<T>,
    x_full: &Array2<T>,
    train_indices: &[usize],
    test_index: usize,
) -> Result<Array1<T>, NtkError> {
    let n = x_full.nrows();
    for &i in train_indices.iter().chain(std::iter::once(&test_index)) {
        if i >= n {
            return Err(NtkError::IndexOutOfRange { index: i, n });
        }
    }
    let k = ntk(arch, m_full, x_full)?;
    Ok(train_indices.iter().map(|&i| k.q[[test_index, i]]).collect())
}
