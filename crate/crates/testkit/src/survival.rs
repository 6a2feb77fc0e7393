//! Closed-form discrete-hazard MLE against a bias-only hazard head.

use rand::Rng;
use survmtl::autodiff::Tape;
use survmtl::losses::{surv_masked_bce, SurvivalNorm, SurvivalTarget};
use survmtl::model::{forward_heads, CellKind, HazardKind, ModelConfig, ModelParams};

use crate::rng;

/// Samples event-or-censor records: bin `l` (given survival) has an event with
/// probability `hazards[l]`; with probability `censor_prob` the record is cut
/// after a uniformly chosen number of bins.
pub fn simulate(n: usize, hazards: &[f64], censor_prob: f64, seed: u64) -> Vec<SurvivalTarget> {
    let bins = hazards.len();
    let mut r = rng(seed);
    (0..n)
        .map(|_| {
            let last_seen = if r.random_bool(censor_prob) {
                r.random_range(0..bins)
            } else {
                bins - 1
            };
            let mut events = vec![false; bins];
            let mut observed = vec![false; bins];
            for l in 0..=last_seen {
                observed[l] = true;
                if r.random_bool(hazards[l]) {
                    events[l] = true;
                    break;
                }
            }
            SurvivalTarget { events, observed }
        })
        .collect()
}

/// Per-bin `(events, at risk)`; the MLE of each hazard is their ratio.
pub fn at_risk_counts(targets: &[SurvivalTarget]) -> Vec<(usize, usize)> {
    let bins = targets[0].bins();
    (0..bins)
        .map(|l| {
            let events = targets.iter().filter(|t| t.events[l]).count();
            let at_risk = targets.iter().filter(|t| t.observed[l]).count();
            (events, at_risk)
        })
        .collect()
}

pub fn empirical_hazards(targets: &[SurvivalTarget]) -> Vec<f64> {
    at_risk_counts(targets)
        .iter()
        .map(|&(e, n)| e as f64 / n as f64)
        .collect()
}

/// Fits the hazard-head bias alone, with the covariate weights frozen at zero,
/// by gradient descent on the batch-normalised masked BCE. Returns `σ(b)`.
pub fn fit_bias_only(targets: &[SurvivalTarget], hazard_kind: HazardKind, iterations: usize) -> Vec<f64> {
    let bins = targets[0].bins();
    let cfg = ModelConfig {
        embed_dim: 1,
        hidden_dim: 2,
        horizon_bins: bins,
        bin_width: 1.0,
        pvector_dim: 1,
        cell_kind: CellKind::Lstm,
        hazard_kind,
        grl_alpha: 0.5,
        windows_per_hour: 1,
    };
    let params = ModelParams::<f64>::zeros(&cfg).unwrap();
    let slot = params.entries().iter().position(|e| e.name == "head.hazard.b").unwrap();
    let mut r = rng(7);
    let z: Vec<f64> = (0..targets.len() * cfg.hidden_dim)
        .map(|_| r.random_range(-1.0..1.0))
        .collect();

    let mut b = vec![0.0; bins];
    let lr = 20.0;
    for _ in 0..iterations {
        let mut tape = Tape::new();
        let mut bound = params.bind_frozen(&mut tape);
        let leaf = tape.leaf(b.clone(), 1, bins);
        bound.vars[slot] = leaf;
        let zc = tape.constant(z.clone(), targets.len(), cfg.hidden_dim);
        let heads = forward_heads(&mut tape, &params, &bound, zc).unwrap();
        let loss = surv_masked_bce(&mut tape, heads.eta, targets, SurvivalNorm::Batch).unwrap();
        let g = tape.backward(loss).unwrap().wrt(leaf);
        if g.iter().all(|v| v.abs() < 1e-13) {
            break;
        }
        for (bi, gi) in b.iter_mut().zip(g) {
            *bi -= lr * gi;
        }
    }
    b.iter().map(|&x| 1.0 / (1.0 + (-x).exp())).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_follow_the_construction() {
        let t = vec![
            SurvivalTarget {
                events: vec![false, true, false],
                observed: vec![true, true, false],
            },
            SurvivalTarget {
                events: vec![false, false, false],
                observed: vec![true, false, false],
            },
        ];
        assert_eq!(at_risk_counts(&t), vec![(0, 2), (1, 1), (0, 0)]);
    }
}
