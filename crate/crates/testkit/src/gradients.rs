//! Central-difference checks for every loss and every model head path.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use survmtl::autodiff::{Tape, Var};
use survmtl::losses::{
    adversary_mse, bce_logits, compose_total, group_lasso, pseudo_lab_mse, smoothness_penalty, surv_masked_bce,
    tte_masked, LossError, LossPart, LossWeights, Objective, SurvivalNorm, SurvivalTarget, TteLoss, HUBER_DELTA,
};
use survmtl::model::{
    forward_context, forward_heads, CellKind, HazardKind, HeadOutputs, Lab, ModelConfig, ModelParams, SequenceBatch,
};
use survmtl::surgery::uncertainty_weighting;

use crate::{record, rng, CheckResult};

pub const STEP: f64 = 1e-6;

/// `max_i |analytic_i − factor·numeric_i| / max(1, |analytic_i|)` at `point`.
///
/// `factor` is 1 except across a gradient reversal, where the tape's gradient
/// is the numeric derivative scaled by `−α`.
pub fn relative_error<F>(f: F, point: &[f64], shape: [usize; 2], factor: f64) -> f64
where
    F: Fn(&mut Tape<f64>, Var) -> Var,
{
    let eval = |p: &[f64]| {
        let mut tape = Tape::new();
        let x = tape.leaf(p.to_vec(), shape[0], shape[1]);
        let y = f(&mut tape, x);
        (tape, x, y)
    };
    let (tape, x, y) = eval(point);
    let analytic = tape.backward(y).expect("scalar root").wrt(x);
    let mut worst = 0.0f64;
    let mut p = point.to_vec();
    for i in 0..point.len() {
        p[i] = point[i] + STEP;
        let (t, _, y) = eval(&p);
        let fp = t.scalar(y);
        p[i] = point[i] - STEP;
        let (t, _, y) = eval(&p);
        let fm = t.scalar(y);
        p[i] = point[i];
        let numeric = (fp - fm) / (2.0 * STEP);
        worst = worst.max((analytic[i] - factor * numeric).abs() / analytic[i].abs().max(1.0));
    }
    worst
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

fn ok(r: Result<Var, LossError>) -> Var {
    r.expect("valid loss instance")
}

/// Element `i` of a `1×n` node as a `1×1` node.
fn pick(tape: &mut Tape<f64>, x: Var, i: usize) -> Var {
    let n = x.len();
    let mut e = vec![0.0; n];
    e[i] = 1.0;
    let sel = tape.constant(e, n, 1);
    tape.matmul(x, sel).unwrap()
}

fn random_mask(rng: &mut ChaCha8Rng, n: usize) -> Vec<bool> {
    let mut m: Vec<bool> = (0..n).map(|_| rng.random_bool(0.6)).collect();
    m[rng.random_range(0..n)] = true;
    m
}

/// Residuals bounded away from `kinks` by at least 0.05.
fn residuals(rng: &mut ChaCha8Rng, n: usize, kinks: &[f64]) -> Vec<f64> {
    (0..n)
        .map(|_| loop {
            let r: f64 = rng.random_range(-2.0..2.0);
            if kinks.iter().all(|k| (r.abs() - k).abs() > 0.05) {
                break r;
            }
        })
        .collect()
}

pub fn random_survival_targets(rng: &mut ChaCha8Rng, n: usize, bins: usize) -> Vec<SurvivalTarget> {
    (0..n)
        .map(|_| {
            let last = rng.random_range(0..bins);
            let event = rng.random_bool(0.5);
            SurvivalTarget {
                events: (0..bins).map(|l| event && l == last).collect(),
                observed: (0..bins).map(|l| l <= last).collect(),
            }
        })
        .collect()
}

const OBJECTIVES: [Objective; 9] = [
    Objective::Baseline,
    Objective::TteReg,
    Objective::TteSurvival,
    Objective::Pvector,
    Objective::Pseudo(Lab::Lac),
    Objective::Pseudo(Lab::Na),
    Objective::Pseudo(Lab::Trop),
    Objective::Pseudo(Lab::K),
    Objective::All,
];

fn all_parts() -> Vec<LossPart> {
    let mut v = vec![
        LossPart::Cls,
        LossPart::Reg,
        LossPart::Surv,
        LossPart::Smooth,
        LossPart::Group,
        LossPart::Pvec,
    ];
    v.extend(Lab::ALL.map(LossPart::Lab));
    v
}

/// Every loss, at `points` seeded random points each.
pub fn loss_checks(points: u64) -> Vec<CheckResult> {
    let mut out = Vec::new();
    for s in 0..points {
        let mut r = rng(0x6c6f_7373 + s);

        let logits = uniform(&mut r, 8, -3.0, 3.0);
        let labels: Vec<f64> = (0..8).map(|_| if r.random_bool(0.4) { 1.0 } else { 0.0 }).collect();
        let e = relative_error(|t, x| ok(bce_logits(t, x, &labels)), &logits, [8, 1], 1.0);
        record(&mut out, "bce_logits", e);

        for (kind, name, kinks) in [
            (TteLoss::L1, "tte_masked l1", &[0.0][..]),
            (TteLoss::Mse, "tte_masked mse", &[][..]),
            (TteLoss::Huber, "tte_masked huber", &[HUBER_DELTA][..]),
        ] {
            let target = uniform(&mut r, 7, 0.0, 1.0);
            let pred: Vec<f64> = target
                .iter()
                .zip(residuals(&mut r, 7, kinks))
                .map(|(t, d)| t + d)
                .collect();
            let mask = random_mask(&mut r, 7);
            let e = relative_error(|t, x| ok(tte_masked(t, x, &target, &mask, kind)), &pred, [7, 1], 1.0);
            record(&mut out, name, e);
        }

        let targets = random_survival_targets(&mut r, 5, 4);
        let eta = uniform(&mut r, 20, -2.0, 2.0);
        for (norm, name) in [
            (SurvivalNorm::Batch, "surv_masked_bce batch"),
            (SurvivalNorm::PerSample, "surv_masked_bce per_sample"),
        ] {
            let e = relative_error(|t, x| ok(surv_masked_bce(t, x, &targets, norm)), &eta, [5, 4], 1.0);
            record(&mut out, name, e);
        }

        let w = uniform(&mut r, 15, -1.0, 1.0);
        record(
            &mut out,
            "smoothness_penalty",
            relative_error(|t, x| ok(smoothness_penalty(t, x)), &w, [3, 5], 1.0),
        );
        record(
            &mut out,
            "group_lasso",
            relative_error(|t, x| ok(group_lasso(t, x, 1e-8)), &w, [3, 5], 1.0),
        );

        let p_target = uniform(&mut r, 12, -1.0, 1.0);
        let p_pred = uniform(&mut r, 12, -1.0, 1.0);
        record(
            &mut out,
            "adversary_mse",
            relative_error(|t, x| ok(adversary_mse(t, x, &p_target)), &p_pred, [4, 3], 1.0),
        );

        let teacher = uniform(&mut r, 6, -1.0, 1.0);
        let lab_pred = uniform(&mut r, 6, -1.0, 1.0);
        record(
            &mut out,
            "pseudo_lab_mse",
            relative_error(|t, x| ok(pseudo_lab_mse(t, x, &teacher)), &lab_pred, [6, 1], 1.0),
        );

        let mut point = uniform(&mut r, 3, 0.1, 2.0);
        point.extend(uniform(&mut r, 3, -1.0, 1.0));
        let e = relative_error(
            |t, x| {
                let losses: Vec<Var> = (0..3).map(|i| pick(t, x, i)).collect();
                let s: Vec<Var> = (3..6).map(|i| pick(t, x, i)).collect();
                uncertainty_weighting(t, &losses, &s).unwrap()
            },
            &point,
            [1, 6],
            1.0,
        );
        record(&mut out, "uncertainty_weighting", e);

        let parts = all_parts();
        let values = uniform(&mut r, parts.len(), 0.0, 2.0);
        let weights = LossWeights::default();
        for objective in OBJECTIVES {
            let e = relative_error(
                |t, x| {
                    let map: BTreeMap<LossPart, Var> =
                        parts.iter().enumerate().map(|(i, &p)| (p, pick(t, x, i))).collect();
                    ok(compose_total(t, &map, &weights, objective))
                },
                &values,
                [1, parts.len()],
                1.0,
            );
            record(&mut out, &format!("compose_total {}", objective.name()), e);
        }
    }
    out
}

pub fn small_config(cell_kind: CellKind, hazard_kind: HazardKind) -> ModelConfig {
    ModelConfig {
        embed_dim: 3,
        hidden_dim: 4,
        horizon_bins: 3,
        bin_width: 1.0,
        pvector_dim: 3,
        cell_kind,
        hazard_kind,
        grl_alpha: 0.5,
        windows_per_hour: 4,
    }
}

type Head = (&'static str, fn(&HeadOutputs) -> Var, bool);

const HEADS: [Head; 9] = [
    ("cls", |h| h.logit, false),
    ("tte", |h| h.tte, false),
    ("hazard logits", |h| h.eta, false),
    ("hazards", |h| h.hazard, false),
    ("adversary", |h| h.pvector, true),
    ("lab lac", |h| h.labs[0], false),
    ("lab na", |h| h.labs[1], false),
    ("lab trop", |h| h.labs[2], false),
    ("lab k", |h| h.labs[3], false),
];

fn probe(tape: &mut Tape<f64>, v: Var, weights: &[f64]) -> Var {
    let c = tape.constant(weights[..v.len()].to_vec(), v.rows(), v.cols());
    let m = tape.mul(v, c).unwrap();
    tape.sum(m)
}

/// The recurrent context and every head, for LSTM/Elman cells and both hazard parameterisations.
///
/// Heads are checked with respect to the context and all head parameters;
/// the context with respect to every aggregator parameter; and each head
/// end to end with respect to the aggregator parameters, scaling by `−α`
/// behind the gradient reversal.
pub fn head_checks(points: u64) -> Vec<CheckResult> {
    let mut out = Vec::new();
    for cell in [CellKind::Lstm, CellKind::Elman] {
        for hazard in [HazardKind::TimeVarying, HazardKind::ConstantEffect] {
            let cfg = small_config(cell, hazard);
            let tag = format!("[{cell:?}, {hazard:?}]");
            for s in 0..points {
                let mut r = rng(0x6865_6164 + s);
                let params = ModelParams::<f64>::init(&cfg, 1000 + s).unwrap();
                let (batch, steps) = (2, cfg.windows_per_hour);
                let seqs: Vec<Vec<Vec<f64>>> = (0..batch)
                    .map(|_| (0..steps).map(|_| uniform(&mut r, cfg.embed_dim, -1.0, 1.0)).collect())
                    .collect();
                let seq = SequenceBatch::from_sequences(&seqs).unwrap();
                let weights = uniform(
                    &mut r,
                    batch * cfg.pvector_dim.max(cfg.hidden_dim).max(cfg.horizon_bins),
                    -1.0,
                    1.0,
                );
                let alpha = cfg.grl_alpha;

                let z0 = uniform(&mut r, batch * cfg.hidden_dim, -1.0, 1.0);
                for (name, head, reversed) in HEADS {
                    let factor = if reversed { -alpha } else { 1.0 };
                    let e = relative_error(
                        |t, z| {
                            let b = params.bind(t);
                            let h = forward_heads(t, &params, &b, z).unwrap();
                            probe(t, head(&h), &weights)
                        },
                        &z0,
                        [batch, cfg.hidden_dim],
                        factor,
                    );
                    record(&mut out, &format!("head {name} wrt context {tag}"), e);

                    for (i, entry) in params.entries().iter().enumerate() {
                        if entry.role.is_shared() {
                            continue;
                        }
                        let e = relative_error(
                            |t, x| {
                                let mut b = params.bind(t);
                                b.vars[i] = x;
                                let z = t.constant(z0.clone(), batch, cfg.hidden_dim);
                                let h = forward_heads(t, &params, &b, z).unwrap();
                                probe(t, head(&h), &weights)
                            },
                            &entry.tensor.data,
                            [entry.tensor.rows, entry.tensor.cols],
                            1.0,
                        );
                        record(&mut out, &format!("head {name} wrt head params {tag}"), e);
                    }
                }

                for (i, entry) in params.entries().iter().enumerate() {
                    if !entry.role.is_shared() {
                        continue;
                    }
                    let shape = [entry.tensor.rows, entry.tensor.cols];
                    let e = relative_error(
                        |t, x| {
                            let mut b = params.bind(t);
                            b.vars[i] = x;
                            let z = forward_context(t, &params, &b, &seq).unwrap();
                            probe(t, z, &weights)
                        },
                        &entry.tensor.data,
                        shape,
                        1.0,
                    );
                    record(&mut out, &format!("context wrt aggregator {tag}"), e);

                    for reversed in [false, true] {
                        let e = relative_error(
                            |t, x| {
                                let mut b = params.bind(t);
                                b.vars[i] = x;
                                let z = forward_context(t, &params, &b, &seq).unwrap();
                                let h = forward_heads(t, &params, &b, z).unwrap();
                                let mut acc = t.scalar_constant(0.0);
                                for (_, head, rev) in HEADS {
                                    if rev == reversed {
                                        let p = probe(t, head(&h), &weights);
                                        acc = t.add(acc, p).unwrap();
                                    }
                                }
                                acc
                            },
                            &entry.tensor.data,
                            shape,
                            if reversed { -alpha } else { 1.0 },
                        );
                        let what = if reversed { "adversary" } else { "all other heads" };
                        record(&mut out, &format!("end to end {what} wrt aggregator {tag}"), e);
                    }
                }
            }
        }
    }
    out
}
