//! Certification runs over the scenario grid.

use std::fs;
use std::path::PathBuf;

use qpcert::cert::{run_scenario, CertResult, CertSetting, Scenario, ScenarioKind};
use qpcert::ntk::Architecture;
use qpcert::Graph;
use rayon::prelude::*;

use crate::config::{arch_key, ExperimentConfig};
use crate::cv::{cv_all, seed_graphs};
use crate::output::{aggregate, write_json, write_rows, AdversarialSet, ResultRow, Summary};
use crate::CliError;

pub const RESULTS_FILE: &str = "results.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const RESOLVED_CONFIG_FILE: &str = "config.resolved.json";

#[derive(Debug, Clone)]
pub struct CertifyOutcome {
    pub rows: Vec<ResultRow>,
    pub summary: Summary,
    pub results_path: PathBuf,
    pub summary_path: PathBuf,
    /// Config with every C filled in, as echoed to the output directory.
    pub resolved: ExperimentConfig,
}

impl CertifyOutcome {
    pub fn num_errors(&self) -> usize {
        self.summary.errors
    }
}

/// Test nodes of `graph`, capped by `max_targets`.
pub fn targets(cfg: &ExperimentConfig, graph: &Graph) -> Vec<usize> {
    let mut t = graph.test_indices();
    if let Some(k) = cfg.max_targets {
        t.truncate(k);
    }
    t
}

/// Fills `c_per_arch` for every architecture, cross-validating where needed.
pub fn resolve_c(cfg: &ExperimentConfig, graphs: &[(u64, Graph)]) -> Result<ExperimentConfig, CliError> {
    let mut resolved = cfg.clone();
    let need_cv = cfg.architectures.iter().any(|a| cfg.fixed_c(a).is_none());
    let cv = if need_cv { cv_all(cfg, graphs)? } else { Vec::new() };
    for a in &cfg.architectures {
        let key = arch_key(a);
        let c = match cfg.fixed_c(a) {
            Some(c) => c,
            None => cv.iter().find(|r| r.arch == key).expect("cv covers every architecture").best_c,
        };
        resolved.c_per_arch.insert(key, c);
    }
    Ok(resolved)
}

pub(crate) fn row_from(arch: &Architecture, kind: ScenarioKind, delta: f64, p_adv: f64, seed: u64, r: &CertResult, timing: bool) -> ResultRow {
    ResultRow {
        scenario: kind.as_str().to_string(),
        arch: arch.label(),
        normalization: arch.normalization_label().to_string(),
        delta,
        p_adv,
        seed,
        node_id: r.node,
        clean_correct: r.clean_correct,
        clean_margin: Some(r.clean_margin).filter(|v| v.is_finite()),
        milp_lower_bound: r.lower_bound,
        verdict: r.verdict.as_str().to_string(),
        wall_time_ms: timing.then_some(r.wall_time_ms),
        nodes_explored: r.nodes_explored,
        error: r.error.clone(),
    }
}

struct Item {
    setting: usize,
    kind: ScenarioKind,
    delta: f64,
    p_adv: f64,
}

/// Certifies every test node for every grid point, writes
/// `results.csv`, `summary.json` and the resolved config.
///
/// Per-node failures become `undecided` rows with an error; a scenario that
/// fails as a whole (e.g. training) marks all its nodes that way.
pub fn cmd_certify(cfg: &ExperimentConfig) -> Result<CertifyOutcome, CliError> {
    let pool = crate::thread_pool(cfg)?;
    pool.install(|| certify_in_pool(cfg))
}

fn certify_in_pool(cfg: &ExperimentConfig) -> Result<CertifyOutcome, CliError> {
    let out = &cfg.output_dir;
    fs::create_dir_all(out)?;
    let graphs = seed_graphs(cfg)?;
    let resolved = resolve_c(cfg, &graphs)?;
    fs::write(out.join(RESOLVED_CONFIG_FILE), resolved.to_pretty_json())?;

    let mut settings = Vec::new();
    for arch in &cfg.architectures {
        let c = resolved.c_per_arch[&arch_key(arch)];
        for (seed, g) in &graphs {
            let dump = cfg.solver.dump_lp.then(|| {
                out.join("lp")
                    .join(format!("{}_{}_seed{seed}", arch.label(), arch.normalization_label()))
            });
            settings.push((
                *seed,
                CertSetting {
                    graph: g.clone(),
                    arch: arch.clone(),
                    c,
                    opts: cfg.solver.cert_options(None),
                },
                dump,
            ));
        }
    }
    let grid = &cfg.scenarios;
    let mut items = Vec::new();
    for si in 0..settings.len() {
        for &kind in &grid.kinds {
            for &delta in &grid.deltas {
                for &p_adv in &grid.p_adv {
                    items.push(Item { setting: si, kind, delta, p_adv });
                }
            }
        }
    }
    let norm = grid.norm;
    let chunks: Vec<(Vec<ResultRow>, Option<AdversarialSet>)> = items
        .par_iter()
        .map(|it| {
            let (seed, setting, dump) = &settings[it.setting];
            let mut setting_ref = std::borrow::Cow::Borrowed(setting);
            if let Some(d) = dump {
                let dir = d.join(format!("{}_d{}_p{}", it.kind.as_str(), it.delta, it.p_adv));
                if let Err(e) = fs::create_dir_all(&dir) {
                    log::warn!("cannot create {}: {e}", dir.display());
                }
                setting_ref.to_mut().opts.dump_dir = Some(dir);
            }
            let setting = setting_ref.as_ref();
            let tg = targets(cfg, &setting.graph);
            let scenario = Scenario {
                kind: it.kind,
                p_adv: it.p_adv,
                delta: cfg.absolute_delta(it.delta),
                norm,
                seed: *seed,
            };
            let arch = &setting.arch;
            match run_scenario(setting, &scenario, &tg) {
                Ok(res) => {
                    log::info!(
                        "{} {} delta={} p_adv={} seed={}: certified {}/{} correct",
                        arch_key(arch),
                        it.kind.as_str(),
                        it.delta,
                        it.p_adv,
                        seed,
                        res.num_certified(),
                        res.num_correct()
                    );
                    let rows = res
                        .results
                        .iter()
                        .map(|r| row_from(arch, it.kind, it.delta, it.p_adv, *seed, r, cfg.record_timing))
                        .collect();
                    let adv = AdversarialSet {
                        scenario: it.kind.as_str().to_string(),
                        p_adv: it.p_adv,
                        seed: *seed,
                        nodes: res.adversarial,
                    };
                    (rows, Some(adv))
                }
                Err(e) => {
                    log::warn!("{} {} seed={}: {e}", arch_key(arch), it.kind.as_str(), seed);
                    let rows = tg
                        .iter()
                        .map(|&t| ResultRow {
                            scenario: it.kind.as_str().to_string(),
                            arch: arch.label(),
                            normalization: arch.normalization_label().to_string(),
                            delta: it.delta,
                            p_adv: it.p_adv,
                            seed: *seed,
                            node_id: t,
                            clean_correct: false,
                            clean_margin: None,
                            milp_lower_bound: None,
                            verdict: "undecided".into(),
                            wall_time_ms: None,
                            nodes_explored: 0,
                            error: Some(e.to_string()),
                        })
                        .collect();
                    (rows, None)
                }
            }
        })
        .collect();
    let mut rows = Vec::new();
    let mut adversarial: Vec<AdversarialSet> = Vec::new();
    for (r, adv) in chunks {
        rows.extend(r);
        if let Some(a) = adv {
            let known = adversarial
                .iter()
                .any(|b| b.scenario == a.scenario && b.p_adv == a.p_adv && b.seed == a.seed);
            if !known {
                adversarial.push(a);
            }
        }
    }
    adversarial.sort_by(|a, b| {
        (&a.scenario, a.seed)
            .cmp(&(&b.scenario, b.seed))
            .then(a.p_adv.total_cmp(&b.p_adv))
    });

    let results_path = out.join(RESULTS_FILE);
    write_rows(&results_path, &rows)?;
    let summary = Summary {
        delta_scale: cfg.delta_scale().as_str().to_string(),
        norm: norm.as_str().to_string(),
        rows: rows.len(),
        errors: rows.iter().filter(|r| r.error.is_some()).count(),
        cells: aggregate(&rows),
        adversarial,
    };
    let summary_path = out.join(SUMMARY_FILE);
    write_json(&summary_path, &summary)?;
    Ok(CertifyOutcome {
        rows,
        summary,
        results_path,
        summary_path,
        resolved,
    })
}

