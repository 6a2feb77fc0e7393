use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, Preset};
use super::eval::evaluate_by_leadtime;
use super::train::{train, LossRow, TrainOutput};
use super::HarnessError;
use crate::datagen::{cohort_split, generate_cohort, CohortRecord, Split};
use crate::metrics::LeadTimeReport;
use crate::model::Checkpoint;
use crate::surgery::{read_conflict_csv, write_conflict_csv, ConflictRow, TaskName};

pub const METRICS_FILE: &str = "metrics.csv";
pub const CONFLICT_FILE: &str = "conflict.csv";
pub const LOSS_FILE: &str = "loss.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const CONFIG_FILE: &str = "config.json";
pub const SUMMARY_FILE: &str = "summary.json";

pub(crate) fn io_err(path: &Path) -> impl Fn(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn write_loss_csv<W: Write>(out: W, rows: &[LossRow]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["step".to_string(), "epoch".into(), "total".into()];
    header.extend(TaskName::ALL.iter().map(|t| t.to_string()));
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![r.step.to_string(), r.epoch.to_string(), format!("{:.6}", r.total)];
        rec.extend(r.tasks.iter().map(|v| v.map(|x| format!("{x:.6}")).unwrap_or_default()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// The outcome of training and evaluating one seed.
#[derive(Debug, Clone)]
pub struct SeedRun {
    pub seed: u64,
    pub dir: PathBuf,
    pub report: LeadTimeReport,
    pub train: TrainOutput,
}

fn write_file(path: &Path, f: impl FnOnce(&mut Vec<u8>) -> Result<(), HarnessError>) -> Result<(), HarnessError> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    fs::write(path, buf).map_err(io_err(path))
}

/// Trains on the training side of `split`, evaluates on its test side and
/// writes every artifact under `dir`.
pub fn train_and_evaluate(
    cfg: &ExperimentConfig,
    cohort: &[CohortRecord],
    split: &Split,
    seed: u64,
    dir: &Path,
) -> Result<SeedRun, HarnessError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let trained = train(cfg, cohort, &split.train, seed)?;
    let report = evaluate_by_leadtime(
        &trained.params,
        cohort,
        &split.test,
        cfg.preset.has_tte_head(),
        cfg.eval_batch,
    )?;
    let resolved = serde_json::to_value(cfg).map_err(|e| HarnessError::Config(e.to_string()))?;
    write_file(&dir.join(METRICS_FILE), |b| Ok(report.write_csv(b)?))?;
    write_file(&dir.join(CONFLICT_FILE), |b| {
        Ok(write_conflict_csv(b, &trained.conflicts)?)
    })?;
    write_file(&dir.join(LOSS_FILE), |b| write_loss_csv(b, &trained.losses))?;
    write_file(&dir.join(CONFIG_FILE), |b| {
        serde_json::to_writer_pretty(&mut *b, &resolved).map_err(|e| HarnessError::Config(e.to_string()))?;
        b.push(b'\n');
        Ok(())
    })?;
    let meta = serde_json::json!({ "seed": seed, "config": resolved });
    Checkpoint::from_params(&trained.params, meta).save(&dir.join(CHECKPOINT_FILE))?;
    Ok(SeedRun {
        seed,
        dir: dir.to_path_buf(),
        report,
        train: trained,
    })
}

/// Generates the cohort for one seed, then trains and evaluates under `out/seed_{seed}`.
pub fn run_seed(cfg: &ExperimentConfig, seed: u64, out: &Path) -> Result<SeedRun, HarnessError> {
    let cfg = cfg.for_seed(seed);
    cfg.validate()?;
    let cohort = generate_cohort(&cfg.generator)?;
    let split = cohort_split(&cfg.generator, &cohort)?;
    train_and_evaluate(&cfg, &cohort, &split, seed, &out.join(format!("seed_{seed}")))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub time_averaged_auroc: f64,
    pub time_averaged_auprc: f64,
    pub mean_tte_mae: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PresetSummary {
    pub preset: String,
    pub seeds: Vec<SeedSummary>,
    pub mean_auroc: f64,
    pub mean_auprc: f64,
}

impl PresetSummary {
    pub fn from_runs(cfg: &ExperimentConfig, runs: &[SeedRun]) -> Self {
        let seeds: Vec<SeedSummary> = runs
            .iter()
            .map(|r| SeedSummary {
                seed: r.seed,
                time_averaged_auroc: r.report.time_averaged_auroc,
                time_averaged_auprc: r.report.time_averaged_auprc,
                mean_tte_mae: r.report.mean_tte_mae(),
            })
            .collect();
        let n = seeds.len().max(1) as f64;
        Self {
            preset: cfg.preset.to_string(),
            mean_auroc: seeds.iter().map(|s| s.time_averaged_auroc).sum::<f64>() / n,
            mean_auprc: seeds.iter().map(|s| s.time_averaged_auprc).sum::<f64>() / n,
            seeds,
        }
    }
}

/// Runs every seed in `cfg.seeds` (independently, in parallel) and writes `summary.json`.
pub fn run_preset(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<SeedRun>, HarnessError> {
    cfg.validate()?;
    if cfg.seeds.is_empty() {
        return Err(HarnessError::Config("no seeds given".into()));
    }
    fs::create_dir_all(out).map_err(io_err(out))?;
    let runs = cfg
        .seeds
        .par_iter()
        .map(|&s| run_seed(cfg, s, out))
        .collect::<Result<Vec<_>, _>>()?;
    let summary = PresetSummary::from_runs(cfg, &runs);
    write_file(&out.join(SUMMARY_FILE), |b| {
        serde_json::to_writer_pretty(&mut *b, &summary).map_err(|e| HarnessError::Config(e.to_string()))?;
        b.push(b'\n');
        Ok(())
    })?;
    Ok(runs)
}

/// Conflict statistics over one run's telemetry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConflictSummary {
    pub steps: usize,
    pub mean_rate: f64,
    /// Fraction of steps with any conflicting pair.
    pub conflicted_steps: f64,
    /// Mean rate over the first and last tenth of training.
    pub early_rate: f64,
    pub late_rate: f64,
    /// Per pair in CSV column order: `(name, mean cosine, fraction negative)`.
    pub pairs: Vec<(String, Option<f64>, Option<f64>)>,
}

impl ConflictSummary {
    pub fn from_rows(rows: &[ConflictRow]) -> Result<Self, HarnessError> {
        if rows.is_empty() {
            return Err(HarnessError::Config("conflict log is empty".into()));
        }
        let n = rows.len();
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let rates: Vec<f64> = rows.iter().map(|r| r.rate).collect();
        let tenth = (n / 10).max(1);
        let names = crate::surgery::conflict_csv_header();
        let pairs = (0..6)
            .map(|k| {
                let v: Vec<f64> = rows.iter().filter_map(|r| r.cos[k]).collect();
                let stats =
                    (!v.is_empty()).then(|| (mean(&v), v.iter().filter(|&&c| c < 0.0).count() as f64 / v.len() as f64));
                (names[2 + k].clone(), stats.map(|s| s.0), stats.map(|s| s.1))
            })
            .collect();
        Ok(Self {
            steps: n,
            mean_rate: mean(&rates),
            conflicted_steps: rates.iter().filter(|&&r| r > 0.0).count() as f64 / n as f64,
            early_rate: mean(&rates[..tenth]),
            late_rate: mean(&rates[n - tenth..]),
            pairs,
        })
    }
}

/// Summaries for every `conflict.csv` in `dir` or its `seed_*` subdirectories.
pub fn conflict_report(dir: &Path) -> Result<Vec<(PathBuf, ConflictSummary)>, HarnessError> {
    let mut files = Vec::new();
    let direct = dir.join(CONFLICT_FILE);
    if direct.is_file() {
        files.push(direct);
    } else {
        let mut subdirs: Vec<PathBuf> = fs::read_dir(dir)
            .map_err(io_err(dir))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.join(CONFLICT_FILE).is_file())
            .collect();
        subdirs.sort();
        files.extend(subdirs.into_iter().map(|p| p.join(CONFLICT_FILE)));
    }
    if files.is_empty() {
        return Err(HarnessError::Config(format!(
            "no {CONFLICT_FILE} under {}",
            dir.display()
        )));
    }
    files
        .into_iter()
        .map(|f| {
            let file = fs::File::open(&f).map_err(io_err(&f))?;
            let rows = read_conflict_csv(file)?;
            Ok((f, ConflictSummary::from_rows(&rows)?))
        })
        .collect()
}

/// Runs all nine presets under `out/{preset}`.
pub fn run_sweep(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<PresetSummary>, HarnessError> {
    Preset::ALL
        .iter()
        .map(|&preset| {
            let c = ExperimentConfig { preset, ..cfg.clone() };
            let runs = run_preset(&c, &out.join(preset.name()))?;
            Ok(PresetSummary::from_runs(&c, &runs))
        })
        .collect()
}

/// Re-evaluates a saved checkpoint on the test side of `cohort`, split with the
/// config stored in the checkpoint, and writes `metrics.csv` under `out`.
pub fn evaluate_checkpoint(path: &Path, cohort: &[CohortRecord], out: &Path) -> Result<LeadTimeReport, HarnessError> {
    let ckpt = Checkpoint::<f64>::load(path)?;
    let cfg: ExperimentConfig = serde_json::from_value(ckpt.meta["config"].clone())
        .map_err(|e| HarnessError::Config(format!("checkpoint config: {e}")))?;
    let params = ckpt.to_params()?;
    let split = cohort_split(&cfg.generator, cohort)?;
    let report = evaluate_by_leadtime(&params, cohort, &split.test, cfg.preset.has_tte_head(), cfg.eval_batch)?;
    fs::create_dir_all(out).map_err(io_err(out))?;
    write_file(&out.join(METRICS_FILE), |b| Ok(report.write_csv(b)?))?;
    Ok(report)
}
