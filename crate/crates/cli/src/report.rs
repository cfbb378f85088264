//! Plot-ready tables aggregated from results CSVs.
//!
//! Writes `accuracy.csv` (certified accuracy per cell, long format),
//! `gain.csv` (GNN minus MLP per cell), and one δ × p_adv matrix per
//! (scenario, architecture) for both accuracy and gain.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::output::{aggregate, find_result_files, fmt_real, read_rows, Cell, ResultRow};
use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainCell {
    pub scenario: String,
    pub arch: String,
    pub normalization: String,
    pub delta: f64,
    pub p_adv: f64,
    pub gnn_mean: f64,
    pub mlp_mean: f64,
    pub gain: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub files: Vec<PathBuf>,
    pub cells: Vec<Cell>,
    pub gains: Vec<GainCell>,
    pub out_dir: PathBuf,
}

/// Pairs every non-MLP cell with the MLP cell of the same scenario, δ and p_adv.
pub fn gains(cells: &[Cell]) -> Vec<GainCell> {
    let is_mlp = |c: &Cell| c.arch == "mlp";
    let mut out = Vec::new();
    for c in cells.iter().filter(|c| !is_mlp(c)) {
        let Some(m) = cells
            .iter()
            .find(|m| is_mlp(m) && m.scenario == c.scenario && m.delta == c.delta && m.p_adv == c.p_adv)
        else {
            continue;
        };
        if let (Some(g), Some(b)) = (c.mean, m.mean) {
            out.push(GainCell {
                scenario: c.scenario.clone(),
                arch: c.arch.clone(),
                normalization: c.normalization.clone(),
                delta: c.delta,
                p_adv: c.p_adv,
                gnn_mean: g,
                mlp_mean: b,
                gain: g - b,
            });
        }
    }
    out
}

fn opt(v: Option<f64>) -> String {
    v.map(fmt_real).unwrap_or_default()
}

fn sorted_unique(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

/// Matrix with one row per δ and one column per p_adv.
fn write_matrix(path: &Path, points: &[(f64, f64, Option<f64>)]) -> Result<(), CliError> {
    let deltas = sorted_unique(points.iter().map(|p| p.0).collect());
    let padv = sorted_unique(points.iter().map(|p| p.1).collect());
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["delta\\p_adv".to_string()];
    header.extend(padv.iter().map(|&p| fmt_real(p)));
    w.write_record(&header)?;
    for &d in &deltas {
        let mut rec = vec![fmt_real(d)];
        for &p in &padv {
            rec.push(opt(points.iter().find(|q| q.0 == d && q.1 == p).and_then(|q| q.2)));
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn build_report(rows: &[ResultRow]) -> (Vec<Cell>, Vec<GainCell>) {
    let cells = aggregate(rows);
    let g = gains(&cells);
    (cells, g)
}

/// Aggregates every results CSV under `dir` into `out` (default `<dir>/report`).
pub fn cmd_report(dir: &Path, out: Option<&Path>) -> Result<Report, CliError> {
    if !dir.is_dir() {
        return Err(CliError::Config(format!("{} is not a directory", dir.display())));
    }
    let mut files = Vec::new();
    let mut rows = Vec::new();
    for f in find_result_files(dir)? {
        if let Some(r) = read_rows(&f)? {
            rows.extend(r);
            files.push(f);
        }
    }
    if rows.is_empty() {
        return Err(CliError::EmptyReport(dir.to_path_buf()));
    }
    let (cells, gains) = build_report(&rows);
    let out_dir = out.map_or_else(|| dir.join("report"), Path::to_path_buf);
    fs::create_dir_all(&out_dir)?;

    let mut w = csv::Writer::from_path(out_dir.join("accuracy.csv"))?;
    w.write_record(["scenario", "arch", "normalization", "delta", "p_adv", "n_seeds", "mean", "std"])?;
    for c in &cells {
        let n = c.seeds.iter().filter(|s| s.certified_accuracy.is_some()).count();
        w.write_record([
            c.scenario.clone(),
            c.arch.clone(),
            c.normalization.clone(),
            fmt_real(c.delta),
            fmt_real(c.p_adv),
            n.to_string(),
            opt(c.mean),
            opt(c.std),
        ])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(out_dir.join("gain.csv"))?;
    w.write_record(["scenario", "arch", "normalization", "delta", "p_adv", "gnn_mean", "mlp_mean", "gain"])?;
    for g in &gains {
        w.write_record([
            g.scenario.clone(),
            g.arch.clone(),
            g.normalization.clone(),
            fmt_real(g.delta),
            fmt_real(g.p_adv),
            fmt_real(g.gnn_mean),
            fmt_real(g.mlp_mean),
            fmt_real(g.gain),
        ])?;
    }
    w.flush()?;

    let mut series: Vec<(String, String, String)> = cells
        .iter()
        .map(|c| (c.scenario.clone(), c.arch.clone(), c.normalization.clone()))
        .collect();
    series.dedup();
    for (sc, arch, norm) in &series {
        let same = |c_sc: &str, c_arch: &str, c_norm: &str| c_sc == sc && c_arch == arch && c_norm == norm;
        let acc: Vec<(f64, f64, Option<f64>)> = cells
            .iter()
            .filter(|c| same(&c.scenario, &c.arch, &c.normalization))
            .map(|c| (c.delta, c.p_adv, c.mean))
            .collect();
        write_matrix(&out_dir.join(format!("heatmap_{sc}_{arch}_{norm}.csv")), &acc)?;
        let gain: Vec<(f64, f64, Option<f64>)> = gains
            .iter()
            .filter(|g| same(&g.scenario, &g.arch, &g.normalization))
            .map(|g| (g.delta, g.p_adv, Some(g.gain)))
            .collect();
        if !gain.is_empty() {
            write_matrix(&out_dir.join(format!("gain_{sc}_{arch}_{norm}.csv")), &gain)?;
        }
    }
    Ok(Report {
        files,
        cells,
        gains,
        out_dir,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_directory_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(cmd_report(dir.path(), None), Err(CliError::EmptyReport(_))));
    }

    #[test]
    fn gain_is_the_difference_of_means() {
        let mk = |arch: &str, seed: u64, certified: bool| ResultRow {
            scenario: "PU".into(),
            arch: arch.into(),
            normalization: if arch == "mlp" { "none" } else { "row_norm" }.into(),
            delta: 0.02,
            p_adv: 0.2,
            seed,
            node_id: 0,
            clean_correct: true,
            clean_margin: Some(1.0),
            milp_lower_bound: Some(if certified { 0.5 } else { -0.5 }),
            verdict: if certified { "certified" } else { "not_certified" }.into(),
            wall_time_ms: None,
            nodes_explored: 1,
            error: None,
        };
        let rows = vec![mk("gcn", 0, true), mk("gcn", 1, true), mk("mlp", 0, true), mk("mlp", 1, false)];
        let (_, g) = build_report(&rows);
        assert_eq!(g.len(), 1);
        assert_eq!((g[0].gnn_mean, g[0].mlp_mean, g[0].gain), (1.0, 0.5, 0.5));
    }
}
