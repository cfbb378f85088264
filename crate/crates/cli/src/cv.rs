//! Stratified k-fold cross-validation of C on the labeled nodes.

use ndarray::Axis;
use qpcert::cert::CertError;
use qpcert::ntk::{ntk, Architecture};
use qpcert::qp::{train, DualOptions};
use qpcert::Graph;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{arch_key, ExperimentConfig};
use crate::output::write_json;
use crate::CliError;

const FOLD_SEED_MIX: u64 = 0xf01d_5eed_c0a5_7a1e;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub arch: String,
    pub folds: usize,
    /// Ascending, deduplicated.
    pub grid: Vec<f64>,
    /// Validation accuracy pooled over folds and seeds, aligned with `grid`.
    pub accuracy: Vec<f64>,
    /// Highest accuracy; ties go to the smallest C.
    pub best_c: f64,
}

/// Fold index per entry of `labels`. Each class is shuffled with `seed` and
/// dealt round-robin, so fold sizes per class differ by at most one.
pub fn stratified_folds(labels: &[i64], k: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ FOLD_SEED_MIX);
    let mut classes: Vec<i64> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    let mut fold = vec![0; labels.len()];
    for c in classes {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        members.shuffle(&mut rng);
        for (r, &i) in members.iter().enumerate() {
            fold[i] = r % k;
        }
    }
    fold
}

/// Cross-validates `arch` over `grid` on every `(seed, graph)` pair.
pub fn cross_validate(
    graphs: &[(u64, Graph)],
    arch: &Architecture,
    grid: &[f64],
    folds: usize,
    dual: DualOptions,
) -> Result<CvResult, CliError> {
    let mut grid: Vec<f64> = grid.to_vec();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    if grid.is_empty() {
        return Err(CliError::Config("empty C grid".into()));
    }
    let mut hits = vec![0usize; grid.len()];
    let mut total = 0usize;
    for (seed, g) in graphs {
        let s = arch.propagation::<f64>(g.adjacency()).map_err(CertError::from)?;
        let q = ntk(arch, &s, g.features()).map_err(CertError::from)?.q;
        let labeled = g.labeled_indices();
        let labels: Vec<i64> = labeled.iter().map(|&i| g.labels()[i]).collect();
        let fold = stratified_folds(&labels, folds, *seed);
        let k = g.num_classes();
        for f in 0..folds {
            let tr: Vec<usize> = (0..labeled.len()).filter(|&i| fold[i] != f).map(|i| labeled[i]).collect();
            let va: Vec<usize> = (0..labeled.len()).filter(|&i| fold[i] == f).map(|i| labeled[i]).collect();
            if va.is_empty() {
                continue;
            }
            let tr_labels: Vec<i64> = tr.iter().map(|&i| g.labels()[i]).collect();
            let block = q.select(Axis(0), &tr).select(Axis(1), &tr);
            let rows = q.select(Axis(0), &va).select(Axis(1), &tr);
            total += va.len();
            for (ci, &c) in grid.iter().enumerate() {
                let model = train(&block, &tr_labels, k, c, dual).map_err(CertError::from)?;
                let preds = model.predict_rows(rows.view()).map_err(CertError::from)?;
                hits[ci] += preds
                    .iter()
                    .zip(&va)
                    .filter(|(p, &i)| !p.tie && p.class as i64 == g.labels()[i])
                    .count();
            }
        }
    }
    let accuracy: Vec<f64> = hits.iter().map(|&h| h as f64 / total.max(1) as f64).collect();
    let mut best = 0;
    for i in 1..grid.len() {
        if accuracy[i] > accuracy[best] {
            best = i;
        }
    }
    Ok(CvResult {
        arch: arch_key(arch),
        folds,
        best_c: grid[best],
        grid,
        accuracy,
    })
}

/// Grid for `arch`: `c_grid`, or the single fixed C when no grid is given.
fn grid_for(cfg: &ExperimentConfig, arch: &Architecture) -> Vec<f64> {
    if cfg.c_grid.is_empty() {
        cfg.fixed_c(arch).into_iter().collect()
    } else {
        cfg.c_grid.clone()
    }
}

pub(crate) fn seed_graphs(cfg: &ExperimentConfig) -> Result<Vec<(u64, Graph)>, CliError> {
    cfg.scenarios.seeds.iter().map(|&s| Ok((s, cfg.graph_for_seed(s)?))).collect()
}

pub(crate) fn cv_all(cfg: &ExperimentConfig, graphs: &[(u64, Graph)]) -> Result<Vec<CvResult>, CliError> {
    cfg.architectures
        .iter()
        .map(|a| cross_validate(graphs, a, &grid_for(cfg, a), cfg.cv_folds, cfg.solver.dual_options()))
        .collect()
}

/// Runs cross-validation for every architecture and writes `<output_dir>/cv.json`.
pub fn cmd_cv(cfg: &ExperimentConfig) -> Result<Vec<CvResult>, CliError> {
    let pool = crate::thread_pool(cfg)?;
    let results = pool.install(|| -> Result<_, CliError> {
        let graphs = seed_graphs(cfg)?;
        cv_all(cfg, &graphs)
    })?;
    std::fs::create_dir_all(&cfg.output_dir)?;
    write_json(&cfg.output_dir.join("cv.json"), &results)?;
    for r in &results {
        log::info!("{}: best C = {}", r.arch, r.best_c);
    }
    Ok(results)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn folds_are_stratified_and_seeded() {
        let labels: Vec<i64> = (0..40).map(|i| i64::from(i % 3 == 0)).collect();
        let a = stratified_folds(&labels, 4, 5);
        assert_eq!(a, stratified_folds(&labels, 4, 5));
        assert_ne!(a, stratified_folds(&labels, 4, 6));
        for c in [0, 1] {
            let mut count = [0usize; 4];
            for i in 0..40 {
                if labels[i] == c {
                    count[a[i]] += 1;
                }
            }
            assert!(count.iter().max().unwrap() - count.iter().min().unwrap() <= 1, "{count:?}");
        }
    }
}
