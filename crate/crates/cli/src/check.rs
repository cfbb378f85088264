//! Attack check: replays the attack oracle against an earlier results CSV.

use std::path::Path;

use qpcert::cert::{attack_oracle, sample_adversarial, AttackOptions, CertSetting, ScenarioKind};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::certify::{resolve_c, RESULTS_FILE};
use crate::config::{arch_key, ExperimentConfig};
use crate::cv::seed_graphs;
use crate::output::{read_rows, write_json, ResultRow};
use crate::CliError;

pub const CHECK_FILE: &str = "attack_check.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupCheck {
    pub scenario: String,
    pub arch: String,
    pub normalization: String,
    pub delta: f64,
    pub p_adv: f64,
    pub seed: u64,
    pub targets: usize,
    pub correct: usize,
    pub certified: usize,
    /// Nodes whose prediction the attack changed.
    pub flipped: Vec<usize>,
    /// Certified nodes that were flipped; must be empty.
    pub violations: Vec<usize>,
    pub certified_accuracy: Option<f64>,
    /// Correct nodes the attack could not flip, over correct nodes. An upper
    /// bound on robust accuracy, so never below `certified_accuracy`.
    pub attacked_accuracy: Option<f64>,
    pub evaluations: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackCheckReport {
    pub groups: Vec<GroupCheck>,
    pub violations: usize,
    pub failed_groups: usize,
}

impl AttackCheckReport {
    pub fn is_clean(&self) -> bool {
        self.violations == 0 && self.failed_groups == 0
    }
}

fn group_key(r: &ResultRow) -> (String, String, String, u64, u64, u64) {
    (
        r.scenario.clone(),
        r.arch.clone(),
        r.normalization.clone(),
        r.delta.to_bits(),
        r.p_adv.to_bits(),
        r.seed,
    )
}

/// Attacks every (configuration, seed) group of `results` (default:
/// `<output_dir>/results.csv`) and writes `<output_dir>/attack_check.json`.
pub fn cmd_attack_check(cfg: &ExperimentConfig, results: Option<&Path>) -> Result<AttackCheckReport, CliError> {
    let default_path = cfg.output_dir.join(RESULTS_FILE);
    let path = results.unwrap_or(&default_path);
    let rows = read_rows(path)?
        .ok_or_else(|| CliError::Config(format!("{} is not a results CSV", path.display())))?;
    let mut groups: Vec<((String, String, String, u64, u64, u64), Vec<&ResultRow>)> = Vec::new();
    for r in &rows {
        let k = group_key(r);
        match groups.iter_mut().find(|(g, _)| *g == k) {
            Some((_, v)) => v.push(r),
            None => groups.push((k, vec![r])),
        }
    }
    let pool = crate::thread_pool(cfg)?;
    let report = pool.install(|| -> Result<AttackCheckReport, CliError> {
        let graphs = seed_graphs(cfg)?;
        let resolved = resolve_c(cfg, &graphs)?;
        let checks: Vec<GroupCheck> = groups
            .par_iter()
            .enumerate()
            .map(|(gi, (_, members))| check_group(cfg, &resolved, &graphs, gi as u64, members))
            .collect::<Result<_, _>>()?;
        let violations = checks.iter().map(|g| g.violations.len()).sum();
        let failed_groups = checks.iter().filter(|g| g.error.is_some()).count();
        Ok(AttackCheckReport {
            groups: checks,
            violations,
            failed_groups,
        })
    })?;
    std::fs::create_dir_all(&cfg.output_dir)?;
    write_json(&cfg.output_dir.join(CHECK_FILE), &report)?;
    Ok(report)
}

fn check_group(
    cfg: &ExperimentConfig,
    resolved: &ExperimentConfig,
    graphs: &[(u64, qpcert::Graph)],
    index: u64,
    members: &[&ResultRow],
) -> Result<GroupCheck, CliError> {
    let first = members[0];
    let kind = ScenarioKind::parse(&first.scenario)
        .ok_or_else(|| CliError::Config(format!("unknown scenario `{}`", first.scenario)))?;
    let arch = cfg
        .architectures
        .iter()
        .find(|a| a.label() == first.arch && a.normalization_label() == first.normalization)
        .ok_or_else(|| CliError::Config(format!("{}/{} is not in the config", first.arch, first.normalization)))?;
    let graph = &graphs
        .iter()
        .find(|(s, _)| *s == first.seed)
        .ok_or_else(|| CliError::Config(format!("seed {} is not in the config", first.seed)))?
        .1;
    let setting = CertSetting {
        graph: graph.clone(),
        arch: arch.clone(),
        c: resolved.c_per_arch[&arch_key(arch)],
        opts: cfg.solver.cert_options(None),
    };
    let targets: Vec<usize> = members.iter().map(|r| r.node_id).collect();
    let correct: Vec<&&ResultRow> = members.iter().filter(|r| r.clean_correct).collect();
    let certified = correct.iter().filter(|r| r.is_certified()).count();
    let opts = AttackOptions {
        trials: cfg.attack.trials,
        greedy_passes: cfg.attack.greedy_passes,
        seed: cfg.attack.seed ^ first.seed.rotate_left(32) ^ index,
    };
    let outcome = sample_adversarial(graph, kind, first.p_adv, first.seed).and_then(|adv| {
        attack_oracle(
            &setting,
            kind,
            &adv,
            cfg.absolute_delta(first.delta),
            cfg.scenarios.norm,
            &targets,
            &opts,
        )
    });
    let ratio = |num: usize, den: usize| (den > 0).then(|| num as f64 / den as f64);
    let mut check = GroupCheck {
        scenario: first.scenario.clone(),
        arch: first.arch.clone(),
        normalization: first.normalization.clone(),
        delta: first.delta,
        p_adv: first.p_adv,
        seed: first.seed,
        targets: targets.len(),
        correct: correct.len(),
        certified,
        flipped: Vec::new(),
        violations: Vec::new(),
        certified_accuracy: ratio(certified, correct.len()),
        attacked_accuracy: None,
        evaluations: 0,
        error: None,
    };
    match outcome {
        Ok(rep) => {
            check.violations = members
                .iter()
                .filter(|r| r.is_certified() && rep.flipped.contains(&r.node_id))
                .map(|r| r.node_id)
                .collect();
            let survived = correct.iter().filter(|r| !rep.flipped.contains(&r.node_id)).count();
            check.attacked_accuracy = ratio(survived, correct.len());
            check.flipped = rep.flipped;
            check.evaluations = rep.evaluations;
        }
        Err(e) => check.error = Some(e.to_string()),
    }
    Ok(check)
}
