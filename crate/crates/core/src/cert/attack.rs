//! Empirical attack: random feasible perturbations plus coordinate-greedy
//! refinement, with exact retraining for every candidate.
//!
//! It can only under-approximate the worst case, so it is used to look for
//! counterexamples to certificates, never to prove robustness.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub use super::scenario::perturbed_predictions;
use super::scenario::{clean_predictions, CertSetting, ScenarioKind};
use super::CertError;
use crate::bounds::Norm;
use crate::qp::Prediction;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy)]
pub struct AttackOptions {
    pub trials: usize,
    /// Coordinate sweeps after the random phase.
    pub greedy_passes: usize,
    pub seed: u64,
}

impl Default for AttackOptions {
    fn default() -> Self {
        Self {
            trials: 1000,
            greedy_passes: 2,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AttackReport<T> {
    /// Targets whose prediction changed (or became a tie) under some candidate.
    pub flipped: Vec<usize>,
    /// Smallest robust margin seen per target, aligned with the input targets.
    pub min_margin: Vec<T>,
    /// Features achieving the smallest margin over all targets.
    pub best_perturbation: Option<Array2<T>>,
    pub evaluations: usize,
}

/// Random point of the `norm` ball of radius `delta` added to each row in `adversarial`.
///
/// Half of the draws land on the boundary (vertices for `inf`, the sphere
/// for `2`), the rest are uniform in the ball.
pub fn sample_perturbation<T: Scalar, R: Rng>(
    rng: &mut R,
    x: &Array2<T>,
    adversarial: &[usize],
    delta: T,
    norm: Norm,
) -> Array2<T> {
    let mut out = x.clone();
    let d = x.ncols();
    for &u in adversarial {
        let boundary = rng.random_bool(0.5);
        match norm {
            Norm::Inf => {
                for k in 0..d {
                    let g = if boundary {
                        if rng.random_bool(0.5) {
                            delta
                        } else {
                            -delta
                        }
                    } else {
                        delta * T::lit(rng.random_range(-1.0..=1.0))
                    };
                    out[[u, k]] = out[[u, k]] + g;
                }
            }
            Norm::Two => {
                let dir: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
                let len = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
                let radius = if boundary {
                    1.0
                } else {
                    rng.random::<f64>().powf(1.0 / d as f64)
                };
                for k in 0..d {
                    out[[u, k]] = out[[u, k]] + delta * T::lit(radius * dir[k] / len);
                }
            }
        }
    }
    out
}

/// Margin of the clean decision under `pred`; non-positive means flipped.
fn robust_margin<T: Scalar>(clean: &Prediction<T>, pred: &Prediction<T>, binary: bool) -> T {
    if binary {
        let s = clean.scores[0].signum();
        return s * pred.scores[0];
    }
    let own = pred.scores[clean.class];
    let other = pred
        .scores
        .iter()
        .enumerate()
        .filter(|&(k, _)| k != clean.class)
        .map(|(_, &v)| v)
        .fold(T::neg_infinity(), T::max);
    own - other
}

fn project<T: Scalar>(g: &mut [T], delta: T, norm: Norm) {
    match norm {
        Norm::Inf => g.iter_mut().for_each(|v| *v = v.clamp_to(-delta, delta)),
        Norm::Two => {
            let len = g.iter().map(|&v| v * v).sum::<T>().sqrt();
            if len > delta {
                let f = delta / len;
                g.iter_mut().for_each(|v| *v = *v * f);
            }
        }
    }
}

/// Searches for feature perturbations that flip the clean predictions of
/// `targets`.
///
/// For inductive scenarios each target is attacked separately with the
/// target added to the adversarial set, mirroring the certificate.
pub fn attack_oracle<T: Scalar>(
    setting: &CertSetting<T>,
    kind: ScenarioKind,
    adversarial: &[usize],
    delta: T,
    norm: Norm,
    targets: &[usize],
    opts: &AttackOptions,
) -> Result<AttackReport<T>, CertError> {
    let clean = clean_predictions(setting, kind, targets)?;
    let binary = setting.graph.num_classes() <= 2;
    let x0 = setting.graph.features().clone();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut min_margin: Vec<T> = clean
        .iter()
        .map(|p| robust_margin(p, p, binary))
        .collect();
    let mut best: Option<(T, Array2<T>)> = None;
    let mut evaluations = 0usize;

    // groups of (target positions, adversarial set)
    let groups: Vec<(Vec<usize>, Vec<usize>)> = if kind.inductive() {
        targets
            .iter()
            .enumerate()
            .map(|(k, &t)| {
                let mut u = adversarial.to_vec();
                if !u.contains(&t) {
                    u.push(t);
                    u.sort_unstable();
                }
                (vec![k], u)
            })
            .collect()
    } else {
        vec![((0..targets.len()).collect(), adversarial.to_vec())]
    };

    for (pos, u) in &groups {
        if u.is_empty() || delta == T::zero() {
            continue;
        }
        let group_targets: Vec<usize> = pos.iter().map(|&k| targets[k]).collect();
        let mut eval = |x: &Array2<T>,
                        min_margin: &mut Vec<T>,
                        best: &mut Option<(T, Array2<T>)>|
         -> Result<Vec<T>, CertError> {
            evaluations += 1;
            let preds = perturbed_predictions(setting, kind, x, &group_targets)?;
            let margins: Vec<T> = pos
                .iter()
                .zip(&preds)
                .map(|(&k, p)| robust_margin(&clean[k], p, binary))
                .collect();
            for (&k, &mg) in pos.iter().zip(&margins) {
                if mg < min_margin[k] {
                    min_margin[k] = mg;
                }
                if best.as_ref().is_none_or(|(b, _)| mg < *b) {
                    *best = Some((mg, x.clone()));
                }
            }
            Ok(margins)
        };

        // best candidate per target for the greedy phase
        let mut seeds: Vec<(T, Array2<T>)> = vec![(T::infinity(), x0.clone()); pos.len()];
        for _ in 0..opts.trials {
            let x = sample_perturbation(&mut rng, &x0, u, delta, norm);
            let margins = eval(&x, &mut min_margin, &mut best)?;
            for (slot, &mg) in seeds.iter_mut().zip(&margins) {
                if mg < slot.0 {
                    *slot = (mg, x.clone());
                }
            }
        }

        for (slot_idx, (mut cur, mut x)) in seeds.into_iter().enumerate() {
            if cur <= T::zero() {
                continue;
            }
            let d = x0.ncols();
            let steps = [T::one(), T::lit(0.5), T::lit(0.25)];
            for _ in 0..opts.greedy_passes {
                let mut improved = false;
                for &node in u {
                    for k in 0..d {
                        for &frac in &steps {
                            for sgn in [T::one(), -T::one()] {
                                let mut g: Vec<T> = (0..d).map(|c| x[[node, c]] - x0[[node, c]]).collect();
                                g[k] = g[k] + sgn * frac * delta;
                                project(&mut g, delta, norm);
                                let mut cand = x.clone();
                                for c in 0..d {
                                    cand[[node, c]] = x0[[node, c]] + g[c];
                                }
                                let margins = eval(&cand, &mut min_margin, &mut best)?;
                                let mg = margins[slot_idx];
                                if mg < cur {
                                    cur = mg;
                                    x = cand;
                                    improved = true;
                                }
                            }
                        }
                    }
                }
                if !improved || cur <= T::zero() {
                    break;
                }
            }
        }
    }

    let flipped = targets
        .iter()
        .zip(&min_margin)
        .filter(|(_, &m)| m <= T::zero())
        .map(|(&t, _)| t)
        .collect();
    Ok(AttackReport {
        flipped,
        min_margin,
        best_perturbation: best.map(|(_, x)| x),
        evaluations,
    })
}
