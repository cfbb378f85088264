//! Result rows, CSV persistence and per-cell aggregation.

use std::cmp::Ordering;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::CliError;

pub const HEADER: [&str; 14] = [
    "scenario",
    "arch",
    "normalization",
    "delta",
    "p_adv",
    "seed",
    "node_id",
    "clean_correct",
    "clean_margin",
    "milp_lower_bound",
    "verdict",
    "wall_time_ms",
    "nodes_explored",
    "error",
];

/// One certified node under one configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub scenario: String,
    pub arch: String,
    pub normalization: String,
    /// Grid value, before the delta scale is applied.
    pub delta: f64,
    pub p_adv: f64,
    pub seed: u64,
    pub node_id: usize,
    pub clean_correct: bool,
    pub clean_margin: Option<f64>,
    pub milp_lower_bound: Option<f64>,
    pub verdict: String,
    pub wall_time_ms: Option<f64>,
    pub nodes_explored: usize,
    pub error: Option<String>,
}

impl ResultRow {
    pub fn is_certified(&self) -> bool {
        self.verdict == "certified"
    }

    fn record(&self) -> [String; 14] {
        let opt = |v: Option<f64>| v.filter(|x| x.is_finite()).map(fmt_real).unwrap_or_default();
        [
            self.scenario.clone(),
            self.arch.clone(),
            self.normalization.clone(),
            fmt_real(self.delta),
            fmt_real(self.p_adv),
            self.seed.to_string(),
            self.node_id.to_string(),
            self.clean_correct.to_string(),
            opt(self.clean_margin),
            opt(self.milp_lower_bound),
            self.verdict.clone(),
            opt(self.wall_time_ms),
            self.nodes_explored.to_string(),
            self.error.clone().unwrap_or_default(),
        ]
    }
}

/// 17 significant digits in scientific notation.
pub fn fmt_real(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_rows(path: &Path, rows: &[ResultRow]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(HEADER)?;
    for r in rows {
        w.write_record(r.record())?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a results CSV; `None` when the header is not the results schema.
pub fn read_rows(path: &Path) -> Result<Option<Vec<ResultRow>>, CliError> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != HEADER {
        return Ok(None);
    }
    let rows = r.deserialize().collect::<Result<Vec<ResultRow>, _>>()?;
    Ok(Some(rows))
}

/// Results CSVs directly inside `dir` and one level below, in path order.
pub fn find_result_files(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let mut out = Vec::new();
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)?.map(|e| e.map(|e| e.path())).collect::<Result<_, _>>()?;
    entries.sort();
    for p in entries {
        if p.is_dir() {
            if p.file_name().is_some_and(|n| n == "report") {
                continue;
            }
            let mut inner: Vec<PathBuf> = fs::read_dir(&p)?.map(|e| e.map(|e| e.path())).collect::<Result<_, _>>()?;
            inner.sort();
            out.extend(inner.into_iter().filter(|q| is_csv(q)));
        } else if is_csv(&p) {
            out.push(p);
        }
    }
    Ok(out)
}

fn is_csv(p: &Path) -> bool {
    p.is_file() && p.extension().is_some_and(|e| e == "csv")
}

/// Certified accuracy of one seed in one cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedAccuracy {
    pub seed: u64,
    pub correct: usize,
    pub certified: usize,
    pub errors: usize,
    pub certified_accuracy: Option<f64>,
}

/// Rows sharing everything but the seed and node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub scenario: String,
    pub arch: String,
    pub normalization: String,
    pub delta: f64,
    pub p_adv: f64,
    pub seeds: Vec<SeedAccuracy>,
    /// Over seeds with at least one correct node.
    pub mean: Option<f64>,
    /// Sample standard deviation; 0 for a single seed.
    pub std: Option<f64>,
}

impl Cell {
    fn key(&self) -> (&str, &str, &str, f64, f64) {
        (&self.scenario, &self.arch, &self.normalization, self.delta, self.p_adv)
    }
}

fn cmp_key(a: (&str, &str, &str, f64, f64), b: (&str, &str, &str, f64, f64)) -> Ordering {
    a.0.cmp(b.0)
        .then(a.1.cmp(b.1))
        .then(a.2.cmp(b.2))
        .then(a.3.total_cmp(&b.3))
        .then(a.4.total_cmp(&b.4))
}

pub fn mean_std(values: &[f64]) -> (Option<f64>, Option<f64>) {
    if values.is_empty() {
        return (None, None);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() < 2 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    (Some(mean), Some(std))
}

/// Groups rows into cells sorted by (scenario, arch, normalization, delta, p_adv).
pub fn aggregate(rows: &[ResultRow]) -> Vec<Cell> {
    let mut sorted: Vec<&ResultRow> = rows.iter().collect();
    let key = |r: &ResultRow| (r.scenario.clone(), r.arch.clone(), r.normalization.clone(), r.delta, r.p_adv);
    sorted.sort_by(|a, b| {
        let (ka, kb) = (key(a), key(b));
        cmp_key((&ka.0, &ka.1, &ka.2, ka.3, ka.4), (&kb.0, &kb.1, &kb.2, kb.3, kb.4)).then(a.seed.cmp(&b.seed))
    });
    let mut cells: Vec<Cell> = Vec::new();
    for r in sorted {
        let same_cell = cells.last().is_some_and(|c| {
            cmp_key(c.key(), (&r.scenario, &r.arch, &r.normalization, r.delta, r.p_adv)) == Ordering::Equal
        });
        if !same_cell {
            cells.push(Cell {
                scenario: r.scenario.clone(),
                arch: r.arch.clone(),
                normalization: r.normalization.clone(),
                delta: r.delta,
                p_adv: r.p_adv,
                seeds: Vec::new(),
                mean: None,
                std: None,
            });
        }
        let cell = cells.last_mut().expect("cell pushed");
        if cell.seeds.last().is_none_or(|s| s.seed != r.seed) {
            cell.seeds.push(SeedAccuracy {
                seed: r.seed,
                correct: 0,
                certified: 0,
                errors: 0,
                certified_accuracy: None,
            });
        }
        let s = cell.seeds.last_mut().expect("seed pushed");
        s.correct += usize::from(r.clean_correct);
        s.certified += usize::from(r.clean_correct && r.is_certified());
        s.errors += usize::from(r.error.is_some());
    }
    for c in &mut cells {
        for s in &mut c.seeds {
            s.certified_accuracy = (s.correct > 0).then(|| s.certified as f64 / s.correct as f64);
        }
        let acc: Vec<f64> = c.seeds.iter().filter_map(|s| s.certified_accuracy).collect();
        (c.mean, c.std) = mean_std(&acc);
    }
    cells
}

/// Summary written next to the results CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub delta_scale: String,
    pub norm: String,
    pub rows: usize,
    pub errors: usize,
    pub cells: Vec<Cell>,
    /// Adversarial set per (scenario, p_adv, seed). In PU, test nodes listed
    /// here were certified with their own kernel rows widened.
    pub adversarial: Vec<AdversarialSet>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdversarialSet {
    pub scenario: String,
    pub p_adv: f64,
    pub seed: u64,
    pub nodes: Vec<usize>,
}

pub fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<(), CliError> {
    let mut f = fs::File::create(path)?;
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    Ok(())
}
