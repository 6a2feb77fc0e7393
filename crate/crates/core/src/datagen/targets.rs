use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{CohortRecord, DatagenError};
use crate::losses::SurvivalTarget;

/// Slack applied before taking ceilings so that `T - t0` computed in floating
/// point still lands an exact-hour event in its own bin.
const BIN_SLACK: f64 = 1e-9;

/// What ends observation after the prediction time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Outcome {
    Event(f64),
    Censored(f64),
}

fn bin_index(gap: f64, bin_width: f64) -> usize {
    (gap / bin_width - BIN_SLACK).ceil().max(0.0) as usize
}

/// Discrete-time targets on an `L`-bin grid starting at `t0`.
///
/// An event `g` hours ahead falls in bin `⌈g/Δt⌉`; a censored stay observes bins
/// up to `⌈(censor - t0)/Δt⌉`.
pub fn make_survival_targets(
    t0: f64,
    outcome: Outcome,
    bin_width: f64,
    bins: usize,
) -> Result<SurvivalTarget, DatagenError> {
    if !(bin_width > 0.0) || bins == 0 {
        return Err(DatagenError::InvalidConfig(
            "survival grid needs Δt > 0 and L ≥ 1".into(),
        ));
    }
    let (last_observed, event_bin) = match outcome {
        Outcome::Event(t) => {
            if !(t > t0) {
                return Err(DatagenError::EventPassed { t0, event: t });
            }
            let l = bin_index(t - t0, bin_width).max(1);
            (l.min(bins), (l <= bins).then_some(l))
        }
        Outcome::Censored(c) => {
            if !(c >= t0) {
                return Err(DatagenError::CensorPassed { t0, censor: c });
            }
            (bin_index(c - t0, bin_width).min(bins), None)
        }
    };
    Ok(SurvivalTarget {
        events: (1..=bins).map(|l| Some(l) == event_bin).collect(),
        observed: (1..=bins).map(|l| l <= last_observed).collect(),
    })
}

/// Patient-level train/test partition as sorted indices into the cohort.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Stratified split over a label vector: each class contributes
/// `round(ratio · n)` members to the training side, kept within `[1, n-1]`.
pub fn split_labels(labels: &[bool], ratio: f64, seed: u64) -> Result<Split, DatagenError> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(DatagenError::InvalidConfig(format!(
            "split ratio {ratio} must lie in (0, 1)"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for class in [true, false] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if idx.len() < 2 {
            return Err(DatagenError::ClassTooSmall {
                case: class,
                count: idx.len(),
            });
        }
        idx.shuffle(&mut rng);
        let k = ((ratio * idx.len() as f64).round() as usize).clamp(1, idx.len() - 1);
        train.extend_from_slice(&idx[..k]);
        test.extend_from_slice(&idx[k..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok(Split { train, test })
}

pub fn split_stratified(cohort: &[CohortRecord], ratio: f64, seed: u64) -> Result<Split, DatagenError> {
    let labels: Vec<bool> = cohort.iter().map(|r| r.is_case).collect();
    split_labels(&labels, ratio, seed)
}
