use super::config::ExperimentConfig;
use super::HarnessError;
use crate::autodiff::{Tape, Var};
use crate::datagen::{make_survival_targets, pvector_target, CohortRecord, GRID_HOURS};
use crate::losses::{
    adversary_mse, bce_logits, group_lasso, pseudo_lab_mse, smoothness_penalty, surv_masked_bce, tte_masked, LossPart,
    LossParts, SurvivalTarget,
};
use crate::model::{HeadOutputs, Lab, SequenceBatch};
use crate::surgery::TaskName;

/// One training or evaluation unit: a patient's one-hour window at a lead time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Sample {
    pub patient: usize,
    pub lead: usize,
}

/// Every (patient, lead) pair for the given patients, patient-major.
pub fn all_samples(patients: &[usize]) -> Vec<Sample> {
    patients
        .iter()
        .flat_map(|&patient| (1..=GRID_HOURS).map(move |lead| Sample { patient, lead }))
        .collect()
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Needs {
    pub survival: bool,
    pub pvector: bool,
    pub labs: bool,
}

impl Needs {
    pub fn for_parts(parts: &[LossPart]) -> Self {
        Self {
            survival: parts.contains(&LossPart::Surv),
            pvector: parts.contains(&LossPart::Pvec),
            labs: parts.iter().any(|p| matches!(p, LossPart::Lab(_))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Batch {
    pub seq: SequenceBatch<f64>,
    pub labels: Vec<f64>,
    /// Lead time over the horizon, in `(0, 1]`.
    pub tte: Vec<f64>,
    pub positive: Vec<bool>,
    pub survival: Vec<SurvivalTarget>,
    pub pvector: Vec<f64>,
    pub labs: [Vec<f64>; 4],
}

pub fn build_batch(
    cfg: &ExperimentConfig,
    cohort: &[CohortRecord],
    samples: &[Sample],
    needs: Needs,
    seed: u64,
) -> Result<Batch, HarnessError> {
    let windows = samples
        .iter()
        .map(|s| cohort[s.patient].lead_window(s.lead))
        .collect::<Result<Vec<_>, _>>()?;
    let seq = SequenceBatch::from_sequences(&windows)?;
    let horizon = cfg.model.horizon_hours();
    let mut b = Batch {
        seq,
        labels: Vec::with_capacity(samples.len()),
        tte: Vec::with_capacity(samples.len()),
        positive: Vec::with_capacity(samples.len()),
        survival: Vec::new(),
        pvector: Vec::new(),
        labs: Default::default(),
    };
    for s in samples {
        let r = &cohort[s.patient];
        let hour = CohortRecord::lead_hour(s.lead)?;
        b.labels.push(if r.is_case { 1.0 } else { 0.0 });
        b.tte.push(s.lead as f64 / horizon);
        b.positive.push(r.is_case);
        if needs.survival {
            b.survival.push(make_survival_targets(
                r.prediction_time(s.lead),
                r.outcome(),
                cfg.model.bin_width,
                cfg.model.horizon_bins,
            )?);
        }
        if needs.pvector {
            b.pvector
                .extend(pvector_target(r, hour, cfg.generator.pvector_noise, seed));
        }
        if needs.labs {
            for lab in Lab::ALL {
                b.labs[lab.index()].push(r.labs.get(lab)[hour]);
            }
        }
    }
    Ok(b)
}

pub fn part_task(part: LossPart) -> TaskName {
    match part {
        LossPart::Cls => TaskName::CA,
        LossPart::Reg | LossPart::Surv | LossPart::Smooth | LossPart::Group => TaskName::TTE,
        LossPart::Lab(_) => TaskName::LAB,
        LossPart::Pvec => TaskName::ID,
    }
}

/// Records every loss part the parts list asks for.
pub fn record_parts(
    tape: &mut Tape<f64>,
    cfg: &ExperimentConfig,
    heads: &HeadOutputs,
    batch: &Batch,
    parts: &[LossPart],
) -> Result<LossParts, HarnessError> {
    let mut out = LossParts::new();
    for &part in parts {
        let v: Var = match part {
            LossPart::Cls => bce_logits(tape, heads.logit, &batch.labels)?,
            LossPart::Reg => tte_masked(tape, heads.tte, &batch.tte, &batch.positive, cfg.tte_loss)?,
            LossPart::Surv => surv_masked_bce(tape, heads.eta, &batch.survival, cfg.survival_norm)?,
            LossPart::Smooth => smoothness_penalty(tape, heads.hazard_weights)?,
            LossPart::Group => group_lasso(tape, heads.hazard_weights, cfg.weights.group_eps)?,
            LossPart::Pvec => adversary_mse(tape, heads.pvector, &batch.pvector)?,
            LossPart::Lab(l) => pseudo_lab_mse(tape, heads.labs[l.index()], &batch.labs[l.index()])?,
        };
        out.insert(part, v);
    }
    Ok(out)
}

/// Per-task weighted losses `Σ λ_k L_k`, in the order of `tasks`.
pub fn task_losses(
    tape: &mut Tape<f64>,
    cfg: &ExperimentConfig,
    parts: &LossParts,
    tasks: &[TaskName],
) -> Result<Vec<Var>, HarnessError> {
    let mut terms = vec![(LossPart::Cls, 1.0)];
    terms.extend(cfg.preset.objective().terms(&cfg.weights));
    let mut out = Vec::with_capacity(tasks.len());
    for &task in tasks {
        let mut acc: Option<Var> = None;
        for &(part, coef) in terms.iter().filter(|(p, _)| part_task(*p) == task) {
            let v = parts[&part];
            let scaled = if coef == 1.0 { v } else { tape.scale(v, coef) };
            acc = Some(match acc {
                None => scaled,
                Some(a) => tape.add(a, scaled)?,
            });
        }
        out.push(acc.ok_or_else(|| HarnessError::Config(format!("task {task} has no loss terms")))?);
    }
    Ok(out)
}
