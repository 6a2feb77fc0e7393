use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use survmtl::datagen::{cohort_split, generate_cohort, read_jsonl, write_jsonl};
use survmtl::harness::{
    conflict_report, evaluate_checkpoint, run_preset, run_sweep, train_and_evaluate, ExperimentConfig, Preset,
};

#[derive(Parser)]
#[command(
    name = "survmtl",
    version,
    about = "Multi-task time-to-event training on synthetic cohorts"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Profile {
    /// Short Adam schedule sized for a laptop.
    Desk,
    /// Full 50-epoch momentum SGD recipe.
    Full,
}

#[derive(clap::Args)]
struct ConfigArgs {
    /// JSON config; fields it omits come from the profile.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "desk")]
    profile: Profile,
}

impl ConfigArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        let base = match self.profile {
            Profile::Desk => ExperimentConfig::desk(),
            Profile::Full => ExperimentConfig::default(),
        };
        match &self.config {
            None => Ok(base),
            Some(path) => {
                let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                ExperimentConfig::from_json_over(&base, &text).with_context(|| format!("parsing {}", path.display()))
            }
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic cohort as JSONL.
    Generate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train on a saved cohort and evaluate on its held-out split, once per configured seed.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-evaluate a checkpoint on the held-out side of a cohort.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate, train and evaluate one preset end to end; `--name sweep` runs all nine.
    Preset {
        #[arg(long)]
        name: String,
        #[arg(long, num_args = 1.., default_values_t = [0u64])]
        seed: Vec<u64>,
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Summarise the conflict telemetry of a run directory as JSON.
    ConflictReport {
        #[arg(long)]
        run: PathBuf,
    },
}

fn print_report(dir: &Path, auroc: f64, auprc: f64) {
    println!("{}: time-averaged AUROC {auroc:.4}, AUPRC {auprc:.4}", dir.display());
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate { cfg, out } => {
            let cfg = cfg.load()?;
            let cohort = generate_cohort(&cfg.generator)?;
            if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
                fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
            }
            write_jsonl(&out, &cohort)?;
            println!("wrote {} patients to {}", cohort.len(), out.display());
        }
        Command::Train { cfg, data, out } => {
            let cfg = cfg.load()?;
            let cohort = read_jsonl(&data)?;
            let split = cohort_split(&cfg.generator, &cohort)?;
            for &seed in &cfg.seeds {
                let mut c = cfg.clone();
                c.seeds = vec![seed];
                let dir = out.join(format!("seed_{seed}"));
                let run = train_and_evaluate(&c, &cohort, &split, seed, &dir)?;
                print_report(&dir, run.report.time_averaged_auroc, run.report.time_averaged_auprc);
            }
        }
        Command::Evaluate { checkpoint, data, out } => {
            let cohort = read_jsonl(&data)?;
            let report = evaluate_checkpoint(&checkpoint, &cohort, &out)?;
            print_report(&out, report.time_averaged_auroc, report.time_averaged_auprc);
        }
        Command::Preset { name, seed, cfg, out } => {
            let mut cfg = cfg.load()?;
            cfg.seeds = seed;
            if name == "sweep" {
                for s in run_sweep(&cfg, &out)? {
                    println!(
                        "{}: mean AUROC {:.4}, AUPRC {:.4}",
                        s.preset, s.mean_auroc, s.mean_auprc
                    );
                }
            } else {
                cfg.preset = name.parse::<Preset>().map_err(anyhow::Error::msg)?;
                for r in run_preset(&cfg, &out)? {
                    print_report(&r.dir, r.report.time_averaged_auroc, r.report.time_averaged_auprc);
                }
            }
        }
        Command::ConflictReport { run } => {
            let out: Vec<_> = conflict_report(&run)?
                .into_iter()
                .map(|(path, summary)| serde_json::json!({ "file": path.display().to_string(), "summary": summary }))
                .collect();
            println!("{}", serde_json::to_string_pretty(&out)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
