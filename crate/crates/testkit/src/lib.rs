//! Reference implementations used as test oracles.
//!
//! Everything here is deliberately naive: brute-force pair counts, explicit
//! permutation averages, central differences, closed-form MLEs. None of it
//! shares code with the implementations it checks beyond the tape itself.

pub mod gradients;
pub mod ranking;
pub mod survival;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Worst error seen by one named check across all sampled points.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub max_error: f64,
}

pub(crate) fn record(results: &mut Vec<CheckResult>, name: &str, err: f64) {
    match results.iter_mut().find(|r| r.name == name) {
        Some(r) => r.max_error = r.max_error.max(err),
        None => results.push(CheckResult {
            name: name.to_string(),
            max_error: err,
        }),
    }
}
