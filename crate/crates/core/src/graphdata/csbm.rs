use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Graph, GraphError};
use crate::scalar::Scalar;

/// Contextual stochastic block model with two classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsbmParams {
    pub n: usize,
    /// Intra-class edge probability.
    pub p: f64,
    /// Inter-class edge probability.
    pub q: f64,
    /// Class separation; each mean coordinate is `k_sep * sigma / (2 sqrt d)`.
    pub k_sep: f64,
    pub sigma: f64,
    /// Feature dimension; `floor(n / ln(n)^2)` when absent.
    #[serde(default)]
    pub d: Option<usize>,
    #[serde(default)]
    pub seed: u64,
}

impl Default for CsbmParams {
    fn default() -> Self {
        Self {
            n: 200,
            p: 0.0317,
            q: 0.0074,
            k_sep: 1.5,
            sigma: 1.0,
            d: None,
            seed: 0,
        }
    }
}

impl CsbmParams {
    pub fn validate(&self) -> Result<(), GraphError> {
        if self.n < 2 {
            return Err(GraphError::InvalidParameter(format!("n must be >= 2, got {}", self.n)));
        }
        if !(0.0 <= self.q && self.q <= self.p && self.p <= 1.0) {
            return Err(GraphError::InvalidParameter(format!(
                "need 0 <= q <= p <= 1, got p={}, q={}",
                self.p, self.q
            )));
        }
        if !(self.sigma > 0.0) || !self.sigma.is_finite() {
            return Err(GraphError::InvalidParameter(format!("sigma must be > 0, got {}", self.sigma)));
        }
        if !self.k_sep.is_finite() {
            return Err(GraphError::InvalidParameter("k_sep must be finite".into()));
        }
        if self.d == Some(0) {
            return Err(GraphError::InvalidParameter("d must be >= 1".into()));
        }
        Ok(())
    }

    pub fn dimension(&self) -> usize {
        self.d.unwrap_or_else(|| csbm_d_rule(self.n))
    }
}

/// `floor(n / ln(n)^2)`, at least 1.
pub fn csbm_d_rule(n: usize) -> usize {
    let ln = (n as f64).ln();
    ((n as f64 / (ln * ln)).floor() as usize).max(1)
}

/// Per-coordinate class mean magnitude `k_sep * sigma / (2 sqrt d)`.
pub fn csbm_mu(params: &CsbmParams) -> f64 {
    params.k_sep * params.sigma / (2.0 * (params.dimension() as f64).sqrt())
}

/// Draws a CSBM graph. Labels are in `{0, 1}`; class 1 has mean `+mu`,
/// class 0 has mean `-mu`, with `mu` along the all-ones direction.
///
/// Draw order is labels, then features row by row, then the upper triangle
/// of the adjacency, so a seed fixes the graph bit for bit.
pub fn csbm_sample<T: Scalar>(params: &CsbmParams) -> Result<Graph<T>, GraphError> {
    params.validate()?;
    let n = params.n;
    let d = params.dimension();
    let mu = csbm_mu(params);
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);

    let labels: Vec<i64> = (0..n).map(|_| i64::from(rng.random_bool(0.5))).collect();
    let mut features = Array2::<T>::zeros((n, d));
    for i in 0..n {
        let sign = if labels[i] == 1 { 1.0 } else { -1.0 };
        for k in 0..d {
            let z: f64 = StandardNormal.sample(&mut rng);
            features[[i, k]] = T::lit(sign * mu + params.sigma * z);
        }
    }
    let mut adjacency = Array2::from_elem((n, n), false);
    for i in 0..n {
        for j in (i + 1)..n {
            let prob = if labels[i] == labels[j] { params.p } else { params.q };
            if rng.random_bool(prob) {
                adjacency[[i, j]] = true;
                adjacency[[j, i]] = true;
            }
        }
    }
    Graph::new(adjacency, features, labels)
}
