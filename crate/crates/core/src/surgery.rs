//! Task-gradient surgery (PCGrad), pairwise conflict telemetry and
//! homoscedastic uncertainty weighting.

use std::io::Write;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{Tape, TapeError, Var};
use crate::scalar::Scalar;

pub const PCGRAD_EPS: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum SurgeryError {
    #[error("task {task} gradient has length {got}, expected {expected}")]
    Length {
        task: TaskName,
        expected: usize,
        got: usize,
    },
    #[error("need at least two tasks, got {0}")]
    TooFewTasks(usize),
    #[error("task {0} appears twice")]
    DuplicateTask(TaskName),
    #[error("task {0} gradient has a non-finite entry")]
    NonFinite(TaskName),
    #[error("{losses} losses but {log_vars} log-variances")]
    Arity { losses: usize, log_vars: usize },
    #[error(transparent)]
    Tape(#[from] TapeError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// The four task groups whose shared-parameter gradients are compared.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TaskName {
    CA,
    TTE,
    LAB,
    ID,
}

impl TaskName {
    pub const ALL: [TaskName; 4] = [TaskName::CA, TaskName::TTE, TaskName::LAB, TaskName::ID];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskName::CA => "CA",
            TaskName::TTE => "TTE",
            TaskName::LAB => "LAB",
            TaskName::ID => "ID",
        }
    }
}

impl std::fmt::Display for TaskName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskName {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TaskName::ALL
            .into_iter()
            .find(|t| t.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown task {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskGradient<T> {
    pub task: TaskName,
    pub g: Vec<T>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProjectionOrder {
    /// Declaration order CA, TTE, LAB, ID.
    #[default]
    Fixed,
    /// Per-step shuffle of the projection targets, seeded by `(seed, step)`.
    SeededShuffle { seed: u64 },
}

pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

/// Cosine similarity; 0 when either vector has zero norm.
pub fn cosine<T: Scalar>(a: &[T], b: &[T]) -> T {
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    if na == T::zero() || nb == T::zero() {
        return T::zero();
    }
    (dot(a, b) / (na * nb)).max(-T::one()).min(T::one())
}

/// Removes the component of `gi` along `gj` when the two conflict.
///
/// `eps` regularises the denominator relative to `‖gj‖²`, so the residual
/// `|gi'ᵀgj|` stays below `eps·‖gi‖·‖gj‖` at any gradient scale.
pub fn pcgrad_project<T: Scalar>(gi: &[T], gj: &[T], eps: T) -> Vec<T> {
    let d = dot(gi, gj);
    let nn = dot(gj, gj);
    if !(d < T::zero()) || nn == T::zero() {
        return gi.to_vec();
    }
    let c = d / (nn + eps * nn);
    gi.iter().zip(gj).map(|(&a, &b)| a - c * b).collect()
}

fn check_grads<T: Scalar>(grads: &[TaskGradient<T>]) -> Result<usize, SurgeryError> {
    let n = grads.first().map_or(0, |g| g.g.len());
    for (i, g) in grads.iter().enumerate() {
        if g.g.len() != n {
            return Err(SurgeryError::Length {
                task: g.task,
                expected: n,
                got: g.g.len(),
            });
        }
        if g.g.iter().any(|v| !v.is_finite()) {
            return Err(SurgeryError::NonFinite(g.task));
        }
        if grads[..i].iter().any(|h| h.task == g.task) {
            return Err(SurgeryError::DuplicateTask(g.task));
        }
    }
    Ok(n)
}

/// Projected gradients, one per input task in input order.
///
/// Each gradient is projected in turn against every other task's original gradient.
pub fn pcgrad_projected<T: Scalar>(
    grads: &[TaskGradient<T>],
    order: ProjectionOrder,
    step: u64,
) -> Result<Vec<Vec<T>>, SurgeryError> {
    if grads.len() < 2 {
        return Err(SurgeryError::TooFewTasks(grads.len()));
    }
    check_grads(grads)?;
    let eps = T::lit(PCGRAD_EPS);
    let mut targets: Vec<usize> = (0..grads.len()).collect();
    targets.sort_by_key(|&i| grads[i].task);
    let mut rng = match order {
        ProjectionOrder::Fixed => None,
        ProjectionOrder::SeededShuffle { seed } => Some(ChaCha8Rng::seed_from_u64(
            seed ^ step.wrapping_mul(0x9E37_79B9_7F4A_7C15),
        )),
    };
    let mut out = Vec::with_capacity(grads.len());
    for (i, gi) in grads.iter().enumerate() {
        if let Some(rng) = rng.as_mut() {
            targets.shuffle(rng);
        }
        let mut g = gi.g.clone();
        for &j in targets.iter().filter(|&&j| j != i) {
            g = pcgrad_project(&g, &grads[j].g, eps);
        }
        out.push(g);
    }
    Ok(out)
}

/// `g★`, the arithmetic mean of the projected task gradients.
pub fn pcgrad_step<T: Scalar>(
    grads: &[TaskGradient<T>],
    order: ProjectionOrder,
    step: u64,
) -> Result<Vec<T>, SurgeryError> {
    let projected = pcgrad_projected(grads, order, step)?;
    let k = T::from_usize(projected.len()).unwrap();
    let mut mean = vec![T::zero(); projected[0].len()];
    for g in &projected {
        for (m, &v) in mean.iter_mut().zip(g) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m = *m / k);
    Ok(mean)
}

/// Fraction of the `K(K-1)/2` task pairs with negative cosine.
pub fn conflict_rate<T: Scalar>(pairwise_cos: &[Vec<T>]) -> f64 {
    let k = pairwise_cos.len();
    if k < 2 {
        return 0.0;
    }
    let negative: usize = pairwise_cos
        .iter()
        .enumerate()
        .map(|(i, row)| row[i + 1..].iter().filter(|&&c| c < T::zero()).count())
        .sum();
    negative as f64 / (k * (k - 1) / 2) as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConflictRecord {
    pub step: u64,
    pub tasks: Vec<TaskName>,
    /// Symmetric `K × K`, unit diagonal.
    pub pairwise_cos: Vec<Vec<f64>>,
    pub conflict_rate: f64,
}

impl ConflictRecord {
    pub fn from_gradients<T: Scalar>(step: u64, grads: &[TaskGradient<T>]) -> Result<Self, SurgeryError> {
        check_grads(grads)?;
        let k = grads.len();
        let mut cos = vec![vec![1.0; k]; k];
        for i in 0..k {
            for j in i + 1..k {
                let c = cosine(&grads[i].g, &grads[j].g).as_f64();
                cos[i][j] = c;
                cos[j][i] = c;
            }
        }
        Ok(Self {
            step,
            tasks: grads.iter().map(|g| g.task).collect(),
            conflict_rate: conflict_rate(&cos),
            pairwise_cos: cos,
        })
    }

    pub fn cos(&self, a: TaskName, b: TaskName) -> Option<f64> {
        let i = self.tasks.iter().position(|&t| t == a)?;
        let j = self.tasks.iter().position(|&t| t == b)?;
        Some(self.pairwise_cos[i][j])
    }
}

/// Task pairs in CSV column order.
pub fn csv_pairs() -> Vec<(TaskName, TaskName)> {
    let t = TaskName::ALL;
    let mut pairs = Vec::with_capacity(6);
    for i in 0..t.len() {
        for j in i + 1..t.len() {
            pairs.push((t[i], t[j]));
        }
    }
    pairs
}

pub fn conflict_csv_header() -> Vec<String> {
    let mut h = vec!["step".to_string(), "r_t".to_string()];
    h.extend(csv_pairs().into_iter().map(|(a, b)| format!("cos_{a}_{b}")));
    h
}

/// Writes records with columns `step, r_t, cos_CA_TTE, ..., cos_LAB_ID`; pairs
/// involving an inactive task are left empty.
pub fn write_conflict_csv<W: Write>(out: W, records: &[ConflictRecord]) -> Result<(), SurgeryError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(conflict_csv_header())?;
    for r in records {
        let mut row = vec![r.step.to_string(), format!("{:.6}", r.conflict_rate)];
        row.extend(
            csv_pairs()
                .into_iter()
                .map(|(a, b)| r.cos(a, b).map(|c| format!("{c:.6}")).unwrap_or_default()),
        );
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

/// One parsed conflict CSV row: step, rate and the six pair cosines.
#[derive(Debug, Clone, PartialEq)]
pub struct ConflictRow {
    pub step: u64,
    pub rate: f64,
    pub cos: [Option<f64>; 6],
}

pub fn read_conflict_csv<R: std::io::Read>(input: R) -> Result<Vec<ConflictRow>, SurgeryError> {
    let mut r = csv::Reader::from_reader(input);
    let bad = |msg: String| SurgeryError::Io(std::io::Error::new(std::io::ErrorKind::InvalidData, msg));
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != conflict_csv_header() {
        return Err(bad(format!("unexpected conflict header {header:?}")));
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let num = |i: usize| -> Result<Option<f64>, SurgeryError> {
            let s = rec.get(i).unwrap_or("");
            if s.is_empty() {
                return Ok(None);
            }
            s.parse().map(Some).map_err(|_| bad(format!("bad number {s:?}")))
        };
        let step = rec
            .get(0)
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("bad step".into()))?;
        let rate = num(1)?.ok_or_else(|| bad("missing r_t".into()))?;
        let mut cos = [None; 6];
        for (k, c) in cos.iter_mut().enumerate() {
            *c = num(2 + k)?;
        }
        rows.push(ConflictRow { step, rate, cos });
    }
    Ok(rows)
}

/// Per-task terms `exp(-s_i) L_i + s_i`, the log-variances `s_i` living on the tape.
pub fn uncertainty_terms<T: Scalar>(
    tape: &mut Tape<T>,
    losses: &[Var],
    log_vars: &[Var],
) -> Result<Vec<Var>, SurgeryError> {
    if losses.len() != log_vars.len() || losses.is_empty() {
        return Err(SurgeryError::Arity {
            losses: losses.len(),
            log_vars: log_vars.len(),
        });
    }
    losses
        .iter()
        .zip(log_vars)
        .map(|(&l, &s)| {
            let neg = tape.scale(s, -T::one());
            let w = tape.exp(neg);
            let wl = tape.mul(w, l)?;
            Ok(tape.add(wl, s)?)
        })
        .collect()
}

/// `Σ_i exp(-s_i) L_i + s_i`.
pub fn uncertainty_weighting<T: Scalar>(
    tape: &mut Tape<T>,
    losses: &[Var],
    log_vars: &[Var],
) -> Result<Var, SurgeryError> {
    let terms = uncertainty_terms(tape, losses, log_vars)?;
    let mut total = terms[0];
    for &t in &terms[1..] {
        total = tape.add(total, t)?;
    }
    Ok(total)
}
