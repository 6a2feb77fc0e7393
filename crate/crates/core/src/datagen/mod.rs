//! Synthetic identity-confounded ICU cohorts.
//!
//! Each patient carries a four-dimensional latent physiology
//! `(deterioration, clock, u, v)` following a mean-reverting process sampled
//! `windows_per_hour` times per hour over the 25 hours before its anchor time
//! (the event for cases, end of stay for controls). Embeddings mix the latent
//! state with a per-patient identity vector drawn around one of a few cluster
//! centres; in the training split the cluster is correlated with the label.
//!
//! For cases the deterioration coordinate ramps up over the last day and
//! spikes in the final hours, and the clock coordinate tracks time to event.
//! Controls hold the clock at a level drawn from the same range, so it is
//! informative about timing but not, on its own, about the label.

mod io;
mod targets;
mod teacher;

pub use io::{read_jsonl, write_jsonl};
pub use targets::{make_survival_targets, split_labels, split_stratified, Outcome, Split};
pub use teacher::{lab_response, Mixing, Teachers};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::Lab;

pub const LATENT_DIM: usize = 4;
/// Hourly prediction windows per patient; lead `k` uses the window ending `k` hours before the anchor.
pub const GRID_HOURS: usize = 24;

#[derive(Debug, Error)]
pub enum DatagenError {
    #[error("invalid generator config: {0}")]
    InvalidConfig(String),
    #[error("event at {event} is not after prediction time {t0}")]
    EventPassed { t0: f64, event: f64 },
    #[error("censoring at {censor} precedes prediction time {t0}")]
    CensorPassed { t0: f64, censor: f64 },
    #[error("{} class has {count} patients; need at least 2", if *case { "case" } else { "control" })]
    ClassTooSmall { case: bool, count: usize },
    #[error("unknown lab {0:?}")]
    UnknownLab(String),
    #[error("lead {0} outside 1..=24")]
    Lead(usize),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}, line {line}: {source}")]
    Parse {
        path: String,
        line: usize,
        source: serde_json::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub n_cases: usize,
    pub n_controls: usize,
    pub seed: u64,
    pub identity_clusters: usize,
    /// Probability that a training patient's cluster is chosen from its label's half.
    pub confound_strength: f64,
    /// Height of the linear deterioration ramp at the event.
    pub deterioration_gain: f64,
    /// Hours before the event at which the ramp starts.
    pub onset_hours: f64,
    /// Height of the late exponential spike.
    pub acute_gain: f64,
    /// Decay time of the spike, hours.
    pub acute_hours: f64,
    /// Span of the clock coordinate over the 24-hour grid.
    pub clock_gain: f64,
    pub clock_noise: f64,
    /// Mean reversion rate per hour.
    pub reversion_rate: f64,
    /// Stationary standard deviation of the deterioration and nuisance coordinates.
    pub latent_noise: f64,
    /// Per-patient baseline standard deviation.
    pub baseline_sd: f64,
    pub embed_noise: f64,
    pub identity_gain: f64,
    pub identity_rank: usize,
    /// Within-cluster spread of identity vectors, relative to centre scale.
    pub pvector_spread: f64,
    /// Per-window noise added to identity targets.
    pub pvector_noise: f64,
    pub teacher_noise: f64,
    pub embed_dim: usize,
    pub pvector_dim: usize,
    pub windows_per_hour: usize,
    pub split_ratio: f64,
    /// Defaults to `seed`.
    pub split_seed: Option<u64>,
    pub mixing_seed: u64,
    pub store_latent: bool,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            n_cases: 200,
            n_controls: 1000,
            seed: 0,
            identity_clusters: 4,
            confound_strength: 0.5,
            deterioration_gain: 2.0,
            onset_hours: 36.0,
            acute_gain: 1.0,
            acute_hours: 3.0,
            clock_gain: 1.0,
            clock_noise: 0.1,
            reversion_rate: 1.0,
            latent_noise: 0.3,
            baseline_sd: 0.4,
            embed_noise: 0.3,
            identity_gain: 0.1,
            identity_rank: 4,
            pvector_spread: 0.3,
            pvector_noise: 0.05,
            teacher_noise: 0.2,
            embed_dim: 16,
            pvector_dim: 128,
            windows_per_hour: 12,
            split_ratio: 0.8,
            split_seed: None,
            mixing_seed: 17,
            store_latent: true,
        }
    }
}

impl GeneratorConfig {
    pub fn split_seed(&self) -> u64 {
        self.split_seed.unwrap_or(self.seed)
    }

    pub fn validate(&self) -> Result<(), DatagenError> {
        let bad = |m: String| Err(DatagenError::InvalidConfig(m));
        if self.n_cases < 2 || self.n_controls < 2 {
            return bad("need at least 2 cases and 2 controls".into());
        }
        if !(0.0..=1.0).contains(&self.confound_strength) {
            return bad(format!("confound_strength {} outside [0, 1]", self.confound_strength));
        }
        if self.identity_clusters == 0 || self.pvector_dim == 0 || self.windows_per_hour == 0 {
            return bad("identity_clusters, pvector_dim and windows_per_hour must be positive".into());
        }
        if !(self.reversion_rate > 0.0 && self.onset_hours > 0.0 && self.acute_hours > 0.0) {
            return bad("reversion_rate, onset_hours and acute_hours must be positive".into());
        }
        let scales = [
            self.latent_noise,
            self.clock_noise,
            self.baseline_sd,
            self.embed_noise,
            self.pvector_spread,
            self.pvector_noise,
            self.teacher_noise,
        ];
        if scales.iter().any(|&s| !(s >= 0.0) || !s.is_finite()) {
            return bad("noise scales must be finite and non-negative".into());
        }
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return bad(format!("split_ratio {} must lie in (0, 1)", self.split_ratio));
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        GRID_HOURS * self.windows_per_hour
    }
}

/// Per-hour teacher outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Labs {
    pub lac: Vec<f64>,
    pub na: Vec<f64>,
    pub trop: Vec<f64>,
    pub k: Vec<f64>,
}

impl Labs {
    pub fn get(&self, lab: Lab) -> &[f64] {
        match lab {
            Lab::Lac => &self.lac,
            Lab::Na => &self.na,
            Lab::Trop => &self.trop,
            Lab::K => &self.k,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortRecord {
    pub id: u64,
    pub is_case: bool,
    /// Hours from stay start; cases only.
    pub event_time: Option<f64>,
    /// Event time for cases, end of stay for controls; leads count back from here.
    pub anchor_time: f64,
    pub identity_cluster: usize,
    /// `GRID_HOURS · windows_per_hour` rows of `embed_dim`.
    pub embeddings: Vec<Vec<f64>>,
    pub pvector: Vec<f64>,
    pub labs: Labs,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latent: Option<Vec<Vec<f64>>>,
}

impl CohortRecord {
    pub fn windows_per_hour(&self) -> usize {
        self.embeddings.len() / GRID_HOURS
    }

    /// Grid hour holding the window that ends `lead` hours before the anchor.
    pub fn lead_hour(lead: usize) -> Result<usize, DatagenError> {
        if !(1..=GRID_HOURS).contains(&lead) {
            return Err(DatagenError::Lead(lead));
        }
        Ok(GRID_HOURS - lead)
    }

    pub fn hour_window(&self, hour: usize) -> &[Vec<f64>] {
        let w = self.windows_per_hour();
        &self.embeddings[hour * w..(hour + 1) * w]
    }

    pub fn lead_window(&self, lead: usize) -> Result<&[Vec<f64>], DatagenError> {
        Ok(self.hour_window(Self::lead_hour(lead)?))
    }

    pub fn latent_window(&self, lead: usize) -> Result<Option<&[Vec<f64>]>, DatagenError> {
        let h = Self::lead_hour(lead)?;
        let w = self.windows_per_hour();
        Ok(self.latent.as_deref().map(|l| &l[h * w..(h + 1) * w]))
    }

    pub fn outcome(&self) -> Outcome {
        match self.event_time {
            Some(t) => Outcome::Event(t),
            None => Outcome::Censored(self.anchor_time),
        }
    }

    /// Prediction time of the window at `lead`.
    pub fn prediction_time(&self, lead: usize) -> f64 {
        self.anchor_time - lead as f64
    }
}

fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub(crate) fn derived_rng(seed: u64, a: u64, b: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix64(seed ^ mix64(a ^ mix64(b))))
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Noisy identity target for one window of a patient, reproducible from `(seed, id, hour)`.
pub fn pvector_target(record: &CohortRecord, hour: usize, noise: f64, seed: u64) -> Vec<f64> {
    let mut rng = derived_rng(seed, record.id, 0x5eed_0000 + hour as u64);
    record.pvector.iter().map(|&p| p + noise * normal(&mut rng)).collect()
}

struct Generator<'a> {
    cfg: &'a GeneratorConfig,
    mix: &'a Mixing,
}

impl Generator<'_> {
    fn cluster(&self, rng: &mut ChaCha8Rng, is_case: bool, train: bool) -> usize {
        let k = self.cfg.identity_clusters;
        if train && rng.random::<f64>() < self.cfg.confound_strength {
            let half = k / 2;
            if is_case {
                rng.random_range(0..half.max(1))
            } else {
                rng.random_range(half.min(k - 1)..k)
            }
        } else {
            rng.random_range(0..k)
        }
    }

    /// Mean of the latent state `tau` hours before the anchor.
    fn latent_mean(&self, baseline: &[f64; LATENT_DIM], is_case: bool, tau: f64, clock_tau: f64) -> [f64; LATENT_DIM] {
        let c = self.cfg;
        let mut m = *baseline;
        if is_case {
            let ramp = (1.0 - tau / c.onset_hours).max(0.0);
            m[0] += c.deterioration_gain * ramp + c.acute_gain * (-tau / c.acute_hours).exp();
        }
        m[1] = c.clock_gain * (1.0 - clock_tau / GRID_HOURS as f64);
        m
    }

    fn patient(&self, id: u64, is_case: bool, train: bool) -> Result<CohortRecord, DatagenError> {
        let c = self.cfg;
        let mut rng = derived_rng(c.seed, id, 0);
        let anchor = 25.0 + 48.0 * rng.random::<f64>();
        let cluster = self.cluster(&mut rng, is_case, train);
        let spread = c.pvector_spread / (c.pvector_dim as f64).sqrt();
        let pvector: Vec<f64> = self.mix.centres[cluster]
            .iter()
            .map(|&m| m + spread * normal(&mut rng))
            .collect();
        let mut baseline = [0.0; LATENT_DIM];
        for (j, b) in baseline.iter_mut().enumerate() {
            if j != 1 {
                *b = c.baseline_sd * normal(&mut rng);
            }
        }
        // controls hold the clock at one level from the cases' range
        let control_clock = GRID_HOURS as f64 * rng.random::<f64>();
        let sd = [c.latent_noise, c.clock_noise, c.latent_noise, c.latent_noise];

        let w = c.windows_per_hour;
        let dt = 1.0 / w as f64;
        let a = (-c.reversion_rate * dt).exp();
        let shock = (1.0 - a * a).sqrt();
        let steps = c.steps();
        let span = (GRID_HOURS + 1) as f64;
        let tau_at = |s: usize| span - (s + 1) as f64 * dt;
        let clock_at = |tau: f64| if is_case { tau } else { control_clock };

        let mut x = self.latent_mean(&baseline, is_case, tau_at(0), clock_at(tau_at(0)));
        for (j, v) in x.iter_mut().enumerate() {
            *v += sd[j] * normal(&mut rng);
        }
        let mut latent = Vec::with_capacity(steps);
        let mut embeddings = Vec::with_capacity(steps);
        for s in 0..steps {
            if s > 0 {
                let tau = tau_at(s);
                let m = self.latent_mean(&baseline, is_case, tau, clock_at(tau));
                for j in 0..LATENT_DIM {
                    x[j] = m[j] + (x[j] - m[j]) * a + sd[j] * shock * normal(&mut rng);
                }
            }
            let mut e = self.mix.embed(&x, &pvector);
            for v in e.iter_mut() {
                *v += c.embed_noise * normal(&mut rng);
            }
            latent.push(x.to_vec());
            embeddings.push(e);
        }
        let hours: Vec<&[Vec<f64>]> = embeddings.chunks(w).collect();
        let lab = |l: Lab| -> Result<Vec<f64>, DatagenError> {
            hours.iter().map(|win| self.mix.teachers.eval(l, win)).collect()
        };
        let labs = Labs {
            lac: lab(Lab::Lac)?,
            na: lab(Lab::Na)?,
            trop: lab(Lab::Trop)?,
            k: lab(Lab::K)?,
        };
        Ok(CohortRecord {
            id,
            is_case,
            event_time: is_case.then_some(anchor),
            anchor_time: anchor,
            identity_cluster: cluster,
            embeddings,
            pvector,
            labs,
            latent: c.store_latent.then_some(latent),
        })
    }
}

/// Generates the cohort in id order: ids `0..n_cases` are cases, the rest controls.
///
/// Output is identical for a given config regardless of thread count.
pub fn generate_cohort(cfg: &GeneratorConfig) -> Result<Vec<CohortRecord>, DatagenError> {
    cfg.validate()?;
    let mix = Mixing::new(cfg)?;
    let n = cfg.n_cases + cfg.n_controls;
    let labels: Vec<bool> = (0..n).map(|i| i < cfg.n_cases).collect();
    let split = split_labels(&labels, cfg.split_ratio, cfg.split_seed())?;
    let mut in_train = vec![false; n];
    split.train.iter().for_each(|&i| in_train[i] = true);
    let gen = Generator { cfg, mix: &mix };
    (0..n)
        .into_par_iter()
        .map(|i| gen.patient(i as u64, labels[i], in_train[i]))
        .collect()
}

/// The train/test split the generator confounded against.
pub fn cohort_split(cfg: &GeneratorConfig, cohort: &[CohortRecord]) -> Result<Split, DatagenError> {
    split_stratified(cohort, cfg.split_ratio, cfg.split_seed())
}
