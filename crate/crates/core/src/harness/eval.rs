use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::batch::{all_samples, Sample};
use super::HarnessError;
use crate::autodiff::Tape;
use crate::datagen::{derived_rng, CohortRecord, GRID_HOURS};
use crate::metrics::{auprc, auroc, tte_mae, LeadTimeReport, LeadTimeRow};
use crate::model::{forward_context, forward_heads, ModelParams, SequenceBatch};

/// Inference outputs for a list of samples, in sample order.
#[derive(Debug, Clone, Default)]
pub struct WindowOutputs {
    pub logit: Vec<f64>,
    /// Normalised time-to-event estimate.
    pub tte: Vec<f64>,
    /// Context vectors, row-major `N × D`, when requested.
    pub z: Vec<f64>,
}

pub fn infer(
    params: &ModelParams<f64>,
    cohort: &[CohortRecord],
    samples: &[Sample],
    chunk: usize,
    want_z: bool,
) -> Result<WindowOutputs, HarnessError> {
    let mut out = WindowOutputs::default();
    for part in samples.chunks(chunk.max(1)) {
        let windows = part
            .iter()
            .map(|s| cohort[s.patient].lead_window(s.lead))
            .collect::<Result<Vec<_>, _>>()?;
        let seq = SequenceBatch::from_sequences(&windows)?;
        let mut tape = Tape::new();
        let bound = params.bind_frozen(&mut tape);
        let z = forward_context(&mut tape, params, &bound, &seq)?;
        let heads = forward_heads(&mut tape, params, &bound, z)?;
        out.logit.extend_from_slice(tape.value(heads.logit));
        out.tte.extend_from_slice(tape.value(heads.tte));
        if want_z {
            out.z.extend_from_slice(tape.value(z));
        }
    }
    Ok(out)
}

/// Per-lead report from arbitrary window scores; `tte` gives a predicted lead in hours for cases.
pub fn report_from_scores<F, G>(cohort: &[CohortRecord], patients: &[usize], score: F, tte: Option<G>) -> LeadTimeReport
where
    F: Fn(Sample) -> f64 + Sync,
    G: Fn(Sample) -> f64 + Sync,
{
    let rows = (1..=GRID_HOURS)
        .into_par_iter()
        .map(|lead| {
            let mut pos = Vec::new();
            let mut neg = Vec::new();
            let mut pred = Vec::new();
            for &patient in patients {
                let s = Sample { patient, lead };
                if cohort[patient].is_case {
                    pos.push(score(s));
                    if let Some(t) = &tte {
                        pred.push(t(s));
                    }
                } else {
                    neg.push(score(s));
                }
            }
            let truth = vec![lead as f64; pred.len()];
            let present = !pos.is_empty() && !neg.is_empty();
            LeadTimeRow {
                lead_hours: lead as u32,
                auroc: present.then(|| auroc(&pos, &neg).ok()).flatten(),
                auprc: present.then(|| auprc(&pos, &neg).ok()).flatten(),
                tte_mae: tte_mae(&pred, &truth, &vec![true; pred.len()]).ok(),
                n_pos: pos.len(),
                n_neg: neg.len(),
            }
        })
        .collect();
    LeadTimeReport::from_rows(rows)
}

/// Case score at lead `k` uses the window ending `k` hours before the event; control
/// score the window ending `k` hours before end of stay.
pub fn evaluate_by_leadtime(
    params: &ModelParams<f64>,
    cohort: &[CohortRecord],
    patients: &[usize],
    with_tte: bool,
    chunk: usize,
) -> Result<LeadTimeReport, HarnessError> {
    let samples = all_samples(patients);
    let out = infer(params, cohort, &samples, chunk, false)?;
    // samples are patient-major with leads 1..=24
    let mut base = vec![usize::MAX; cohort.len()];
    for (i, &p) in patients.iter().enumerate() {
        base[p] = i * GRID_HOURS;
    }
    let at = |s: Sample| base[s.patient] + s.lead - 1;
    let horizon = params.config().horizon_hours();
    let tte = with_tte.then_some(|s: Sample| out.tte[at(s)] * horizon);
    Ok(report_from_scores(cohort, patients, |s| out.logit[at(s)], tte))
}

/// Testbed ceiling: scores each window by its mean latent deterioration.
pub fn latent_oracle(cohort: &[CohortRecord], patients: &[usize]) -> Result<LeadTimeReport, HarnessError> {
    if patients.iter().any(|&p| cohort[p].latent.is_none()) {
        return Err(HarnessError::Config("latent oracle needs stored latent traces".into()));
    }
    let score = |s: Sample| {
        let w = cohort[s.patient].latent_window(s.lead).unwrap().unwrap();
        w.iter().map(|x| x[0]).sum::<f64>() / w.len() as f64
    };
    Ok(report_from_scores(cohort, patients, score, None::<fn(Sample) -> f64>))
}

/// Held-out accuracy of a ridge-regularised linear probe predicting each
/// patient's identity cluster from `z`, with patients split in half.
pub fn identity_probe(
    params: &ModelParams<f64>,
    cohort: &[CohortRecord],
    patients: &[usize],
    seed: u64,
    chunk: usize,
) -> Result<f64, HarnessError> {
    let mut order = patients.to_vec();
    order.shuffle(&mut derived_rng(seed, 0x7072_6f62, 0));
    let half = order.len() / 2;
    if half == 0 {
        return Err(HarnessError::EmptyCohort);
    }
    let (fit, held) = order.split_at(half);
    let k = cohort.iter().map(|r| r.identity_cluster).max().unwrap_or(0) + 1;
    let d = params.config().hidden_dim;

    let features = |ids: &[usize]| -> Result<(DMatrix<f64>, Vec<usize>), HarnessError> {
        let samples = all_samples(ids);
        let out = infer(params, cohort, &samples, chunk, true)?;
        let x = DMatrix::from_row_slice(samples.len(), d, &out.z);
        let y = samples.iter().map(|s| cohort[s.patient].identity_cluster).collect();
        Ok((x, y))
    };
    let (xf, yf) = features(fit)?;
    let (xh, yh) = features(held)?;

    let n = xf.nrows() as f64;
    let mean = DVector::from_fn(d, |j, _| xf.column(j).sum() / n);
    let sd = DVector::from_fn(d, |j, _| {
        let m = mean[j];
        (xf.column(j).iter().map(|v| (v - m).powi(2)).sum::<f64>() / n)
            .sqrt()
            .max(1e-12)
    });
    let design = |x: &DMatrix<f64>| {
        DMatrix::from_fn(x.nrows(), d + 1, |i, j| {
            if j == d {
                1.0
            } else {
                (x[(i, j)] - mean[j]) / sd[j]
            }
        })
    };
    let a = design(&xf);
    let targets = DMatrix::from_fn(yf.len(), k, |i, c| if yf[i] == c { 1.0 } else { 0.0 });
    let mut gram = a.transpose() * &a;
    for j in 0..d {
        gram[(j, j)] += 1e-3 * n;
    }
    let rhs = a.transpose() * targets;
    let w = gram
        .cholesky()
        .ok_or_else(|| HarnessError::Config("probe normal equations are singular".into()))?
        .solve(&rhs);
    let pred = design(&xh) * w;
    let hits = (0..pred.nrows())
        .filter(|&i| {
            let row = pred.row(i);
            let best = (0..k).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
            best == yh[i]
        })
        .count();
    Ok(hits as f64 / pred.nrows() as f64)
}
