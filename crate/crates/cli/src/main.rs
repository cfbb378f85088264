use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use qpcert_cli::{
    cmd_attack_check, cmd_certify, cmd_cv, cmd_gen_csbm, cmd_report, CliError, ExperimentConfig, EXIT_PARTIAL,
};

#[derive(Parser)]
#[command(name = "qpcert", version, about = "Poisoning certificates for NTK-SVMs on graphs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Experiment config (JSON).
    #[arg(long, short)]
    config: PathBuf,
    /// Override a config key, e.g. `--set scenarios.seeds=[0,1]`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    threads: Option<usize>,
    /// Fill the wall_time_ms column.
    #[arg(long)]
    record_timing: bool,
}

impl ConfigArgs {
    fn load(&self) -> Result<ExperimentConfig, CliError> {
        let mut o = self.set.clone();
        if let Some(d) = &self.output_dir {
            o.push(format!("output_dir={}", serde_json::Value::String(d.display().to_string())));
        }
        if let Some(t) = self.threads {
            o.push(format!("threads={t}"));
        }
        if self.record_timing {
            o.push("record_timing=true".into());
        }
        ExperimentConfig::load(&self.config, &o)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Sample the CSBM graph of one run seed and write it as Graph JSON.
    GenCsbm {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Run seed (default: first seed of the grid).
        #[arg(long)]
        seed: Option<u64>,
        /// Output file (default: <output_dir>/graph_seed<seed>.json).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Cross-validate C for every architecture.
    Cv {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Certify every test node over the scenario grid.
    Certify {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Attack the nodes of a results CSV and report soundness violations.
    AttackCheck {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Results CSV (default: <output_dir>/results.csv).
        #[arg(long)]
        results: Option<PathBuf>,
    },
    /// Aggregate results CSVs into plot-ready tables.
    Report {
        /// Directory holding results CSVs.
        dir: PathBuf,
        /// Output directory (default: <dir>/report).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<i32, CliError> {
    match cli.command {
        Command::GenCsbm { cfg, seed, out } => {
            let path = cmd_gen_csbm(&cfg.load()?, seed, out.as_deref())?;
            println!("{}", path.display());
            Ok(0)
        }
        Command::Cv { cfg } => {
            for r in cmd_cv(&cfg.load()?)? {
                println!("{}\tbest C = {}", r.arch, r.best_c);
            }
            Ok(0)
        }
        Command::Certify { cfg } => {
            let out = cmd_certify(&cfg.load()?)?;
            for c in &out.summary.cells {
                println!(
                    "{} {}/{} delta={} p_adv={}: {}",
                    c.scenario,
                    c.arch,
                    c.normalization,
                    c.delta,
                    c.p_adv,
                    c.mean.map_or("n/a".to_string(), |m| format!("{m:.4} ± {:.4}", c.std.unwrap_or(0.0)))
                );
            }
            println!("{}", out.results_path.display());
            if out.num_errors() > 0 {
                eprintln!("{} rows carry errors", out.num_errors());
                return Ok(EXIT_PARTIAL);
            }
            Ok(0)
        }
        Command::AttackCheck { cfg, results } => {
            let rep = cmd_attack_check(&cfg.load()?, results.as_deref())?;
            for g in &rep.groups {
                println!(
                    "{} {}/{} delta={} p_adv={} seed={}: certified {:?}, attacked {:?}, violations {}{}",
                    g.scenario,
                    g.arch,
                    g.normalization,
                    g.delta,
                    g.p_adv,
                    g.seed,
                    g.certified_accuracy,
                    g.attacked_accuracy,
                    g.violations.len(),
                    g.error.as_deref().map(|e| format!(" (error: {e})")).unwrap_or_default()
                );
            }
            println!("violations: {}", rep.violations);
            Ok(if rep.is_clean() { 0 } else { EXIT_PARTIAL })
        }
        Command::Report { dir, out } => {
            let rep = cmd_report(&dir, out.as_deref())?;
            println!(
                "{} cells from {} files written to {}",
                rep.cells.len(),
                rep.files.len(),
                rep.out_dir.display()
            );
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
