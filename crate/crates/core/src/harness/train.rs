use rand::seq::SliceRandom;

use super::batch::{all_samples, build_batch, record_parts, task_losses, Needs};
use super::config::{ExperimentConfig, Surgery, Weighting};
use super::optim::{Group, Optimizer};
use super::HarnessError;
use crate::autodiff::{Gradients, Tape, Var};
use crate::datagen::{derived_rng, CohortRecord};
use crate::model::{forward_context, forward_heads, ModelParams};
use crate::surgery::{pcgrad_projected, uncertainty_terms, ConflictRecord, TaskGradient, TaskName};

/// Training loss at one step; task entries are the weighted per-task losses.
#[derive(Debug, Clone, PartialEq)]
pub struct LossRow {
    pub step: u64,
    pub epoch: usize,
    pub total: f64,
    /// Indexed like [`TaskName::ALL`]; `None` for inactive tasks.
    pub tasks: [Option<f64>; 4],
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub params: ModelParams<f64>,
    pub losses: Vec<LossRow>,
    pub conflicts: Vec<ConflictRecord>,
    /// Uncertainty log-variances per active task; empty under fixed weighting.
    pub log_vars: Vec<f64>,
}

fn task_slot(task: TaskName) -> usize {
    TaskName::ALL.iter().position(|&t| t == task).unwrap()
}

/// Trains from the seeded initialisation over every (patient, lead) pair of `patients`.
pub fn train(
    cfg: &ExperimentConfig,
    cohort: &[CohortRecord],
    patients: &[usize],
    seed: u64,
) -> Result<TrainOutput, HarnessError> {
    let params = ModelParams::init(&cfg.model, seed)?;
    train_from(cfg, params, cohort, patients, seed)
}

pub fn train_from(
    cfg: &ExperimentConfig,
    mut params: ModelParams<f64>,
    cohort: &[CohortRecord],
    patients: &[usize],
    seed: u64,
) -> Result<TrainOutput, HarnessError> {
    cfg.validate()?;
    if patients.is_empty() {
        return Err(HarnessError::EmptyCohort);
    }
    let tasks = cfg.preset.tasks();
    let parts = cfg.preset.objective().parts(&cfg.weights);
    let needs = Needs::for_parts(&parts);
    let uncertainty = cfg.weighting == Weighting::Uncertainty;

    let entry_groups: Vec<(usize, Group)> = params
        .entries()
        .iter()
        .map(|e| {
            let g = if e.role.is_shared() {
                Group::Aggregator
            } else {
                Group::Heads
            };
            (e.tensor.len(), g)
        })
        .collect();
    let shared: Vec<usize> = (0..entry_groups.len())
        .filter(|&i| entry_groups[i].1 == Group::Aggregator)
        .collect();
    let mut slots = entry_groups.clone();
    if uncertainty {
        slots.push((tasks.len(), Group::Heads));
    }
    let mut opt = Optimizer::new(cfg, &slots);
    let mut log_vars = if uncertainty {
        vec![0.0; tasks.len()]
    } else {
        Vec::new()
    };

    let mut samples = all_samples(patients);
    let mut rng = derived_rng(seed, 0x7261_696e, 0);
    let mut out_losses = Vec::new();
    let mut conflicts = Vec::new();
    let mut step: u64 = 0;

    for epoch in 0..cfg.epochs {
        samples.shuffle(&mut rng);
        for chunk in samples.chunks(cfg.batch_size) {
            let batch = build_batch(cfg, cohort, chunk, needs, seed)?;
            let mut tape = Tape::new();
            let bound = params.bind(&mut tape);
            let s_vars: Vec<Var> = log_vars.iter().map(|&s| tape.leaf(vec![s], 1, 1)).collect();
            let z = forward_context(&mut tape, &params, &bound, &batch.seq)?;
            let heads = forward_heads(&mut tape, &params, &bound, z)?;
            let recorded = record_parts(&mut tape, cfg, &heads, &batch, &parts)?;
            for (part, &v) in &recorded {
                let x = tape.scalar(v);
                if !x.is_finite() {
                    return Err(HarnessError::NonFiniteLoss {
                        step,
                        loss: part.name(),
                        value: x,
                    });
                }
            }
            let task_vars = task_losses(&mut tape, cfg, &recorded, &tasks)?;
            let roots = if uncertainty {
                uncertainty_terms(&mut tape, &task_vars, &s_vars)?
            } else {
                task_vars.clone()
            };
            let mut total = roots[0];
            for &r in &roots[1..] {
                total = tape.add(total, r)?;
            }
            let total_value = tape.scalar(total);
            if !total_value.is_finite() {
                return Err(HarnessError::NonFiniteLoss {
                    step,
                    loss: "total".into(),
                    value: total_value,
                });
            }

            let per_task: Vec<Gradients<f64>> = if roots.len() == 1 {
                vec![tape.backward(total)?]
            } else {
                roots.iter().map(|&r| tape.backward(r)).collect::<Result<_, _>>()?
            };

            let mut entry_grads: Vec<Vec<f64>> = entry_groups.iter().map(|&(n, _)| vec![0.0; n]).collect();
            if roots.len() >= 2 {
                let flat: Vec<TaskGradient<f64>> = tasks
                    .iter()
                    .zip(&per_task)
                    .map(|(&task, g)| TaskGradient {
                        task,
                        g: shared.iter().flat_map(|&i| g.wrt(bound.vars[i])).collect(),
                    })
                    .collect();
                if cfg.telemetry {
                    conflicts.push(ConflictRecord::from_gradients(step, &flat)?);
                }
                let combined: Vec<Vec<f64>> = match cfg.surgery {
                    Surgery::Pcgrad => pcgrad_projected(&flat, cfg.projection_order, step)?,
                    Surgery::None => flat.into_iter().map(|t| t.g).collect(),
                };
                let mut offset = 0;
                for &i in &shared {
                    let n = entry_grads[i].len();
                    for g in &combined {
                        for (acc, &v) in entry_grads[i].iter_mut().zip(&g[offset..offset + n]) {
                            *acc += v;
                        }
                    }
                    offset += n;
                }
            }
            for (i, acc) in entry_grads.iter_mut().enumerate() {
                if roots.len() >= 2 && entry_groups[i].1 == Group::Aggregator {
                    continue;
                }
                for g in &per_task {
                    if let Some(v) = g.get(bound.vars[i]) {
                        for (a, &x) in acc.iter_mut().zip(v) {
                            *a += x;
                        }
                    }
                }
            }

            opt.begin_step();
            for (i, g) in entry_grads.iter().enumerate() {
                opt.update(i, &mut params.entries_mut()[i].tensor.data, g);
            }
            if uncertainty {
                let g: Vec<f64> = s_vars
                    .iter()
                    .map(|&s| per_task.iter().map(|p| p.get(s).map_or(0.0, |v| v[0])).sum())
                    .collect();
                opt.update(entry_groups.len(), &mut log_vars, &g);
            }

            let mut row = LossRow {
                step,
                epoch,
                total: total_value,
                tasks: [None; 4],
            };
            for (&task, &v) in tasks.iter().zip(&task_vars) {
                row.tasks[task_slot(task)] = Some(tape.scalar(v));
            }
            out_losses.push(row);
            step += 1;
        }
    }
    if !params.is_finite() {
        return Err(HarnessError::NonFiniteLoss {
            step,
            loss: "parameters".into(),
            value: f64::NAN,
        });
    }
    Ok(TrainOutput {
        params,
        losses: out_losses,
        conflicts,
        log_vars,
    })
}
