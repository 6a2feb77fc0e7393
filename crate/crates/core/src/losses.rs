//! Loss terms and composite objectives, each recorded on a tape as a scalar node.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{Tape, TapeError, Var};
use crate::model::Lab;
use crate::scalar::Scalar;

/// Transition point of the Huber penalty, in normalised time units.
pub const HUBER_DELTA: f64 = 1.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error("{0}: empty batch")]
    EmptyBatch(&'static str),
    #[error("{what}: expected {expected} values, got {got}")]
    Length {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("survival loss: every bin in the batch is censored")]
    AllMasked,
    #[error("invalid survival target: {0}")]
    InvalidTarget(String),
    #[error("objective {objective} needs loss part {part}")]
    MissingPart { objective: String, part: String },
    #[error(transparent)]
    Tape(#[from] TapeError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub reg: f64,
    pub surv: f64,
    pub smooth: f64,
    pub group: f64,
    pub adv: f64,
    pub lab: f64,
    pub group_eps: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            reg: 1.0,
            surv: 1.0,
            smooth: 0.001,
            group: 0.0001,
            adv: 0.1,
            lab: 2.0,
            group_eps: 1e-8,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), String> {
        let all = [
            ("reg", self.reg),
            ("surv", self.surv),
            ("smooth", self.smooth),
            ("group", self.group),
            ("adv", self.adv),
            ("lab", self.lab),
            ("group_eps", self.group_eps),
        ];
        match all.iter().find(|(_, v)| !(*v >= 0.0) || !v.is_finite()) {
            Some((name, v)) => Err(format!("loss weight {name} = {v} must be finite and >= 0")),
            None => Ok(()),
        }
    }
}

/// Per-sample discrete survival labels over the horizon grid.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SurvivalTarget {
    /// `y_l`: the event falls in bin `l`.
    pub events: Vec<bool>,
    /// `m_l`: bin `l` is observed.
    pub observed: Vec<bool>,
}

impl SurvivalTarget {
    pub fn bins(&self) -> usize {
        self.events.len()
    }

    /// Checks the at-most-one-event, event-is-observed and prefix-mask rules.
    pub fn validate(&self) -> Result<(), LossError> {
        if self.events.len() != self.observed.len() {
            return Err(LossError::InvalidTarget("event and mask lengths differ".into()));
        }
        if self.events.iter().filter(|&&e| e).count() > 1 {
            return Err(LossError::InvalidTarget("more than one event bin".into()));
        }
        if self.events.iter().zip(&self.observed).any(|(&e, &m)| e && !m) {
            return Err(LossError::InvalidTarget("event in a censored bin".into()));
        }
        if self.observed.windows(2).any(|w| !w[0] && w[1]) {
            return Err(LossError::InvalidTarget("observation mask is not a prefix".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TteLoss {
    #[default]
    L1,
    Mse,
    Huber,
}

/// How the masked survival BCE is normalised.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SurvivalNorm {
    /// Divide by the number of observed bins across the whole batch.
    #[default]
    Batch,
    /// Per-sample masked mean, then mean over samples with any observed bin.
    PerSample,
}

fn check_len(what: &'static str, expected: usize, got: usize) -> Result<(), LossError> {
    if expected != got {
        return Err(LossError::Length { what, expected, got });
    }
    Ok(())
}

/// Mean binary cross-entropy on logits: `(1/B) Σ softplus(s) - y s`.
pub fn bce_logits<T: Scalar>(tape: &mut Tape<T>, logits: Var, labels: &[T]) -> Result<Var, LossError> {
    if labels.is_empty() {
        return Err(LossError::EmptyBatch("bce_logits"));
    }
    check_len("bce_logits", logits.len(), labels.len())?;
    let y = tape.constant(labels.to_vec(), logits.rows(), logits.cols());
    let sp = tape.softplus(logits);
    let ys = tape.mul(logits, y)?;
    let per = tape.sub(sp, ys)?;
    Ok(tape.mean(per))
}

/// Positive-only masked regression of the time-to-event head.
///
/// With no positives in the batch the loss is the constant 0 and carries no gradient.
pub fn tte_masked<T: Scalar>(
    tape: &mut Tape<T>,
    pred: Var,
    target: &[T],
    positive: &[bool],
    kind: TteLoss,
) -> Result<Var, LossError> {
    check_len("tte_masked target", pred.len(), target.len())?;
    check_len("tte_masked mask", pred.len(), positive.len())?;
    if !positive.iter().any(|&p| p) {
        return Ok(tape.scalar_constant(T::zero()));
    }
    let t = tape.constant(target.to_vec(), pred.rows(), pred.cols());
    let r = tape.sub(pred, t)?;
    let rho = match kind {
        TteLoss::L1 => tape.abs(r),
        TteLoss::Mse => tape.square(r),
        TteLoss::Huber => tape.huber(r, T::lit(HUBER_DELTA)),
    };
    let mask = positive.iter().map(|&p| if p { T::one() } else { T::zero() }).collect();
    Ok(tape.masked_mean(rho, mask)?)
}

/// Masked per-bin BCE on hazard logits `η` (`B × L`), censored bins excluded.
pub fn surv_masked_bce<T: Scalar>(
    tape: &mut Tape<T>,
    eta: Var,
    targets: &[SurvivalTarget],
    norm: SurvivalNorm,
) -> Result<Var, LossError> {
    check_len("surv_masked_bce batch", eta.rows(), targets.len())?;
    let bins = eta.cols();
    let mut y = Vec::with_capacity(eta.len());
    let mut m = Vec::with_capacity(eta.len());
    for t in targets {
        check_len("surv_masked_bce bins", bins, t.bins())?;
        t.validate()?;
        y.extend(t.events.iter().map(|&e| if e { T::one() } else { T::zero() }));
        m.extend(t.observed.iter().map(|&o| if o { T::one() } else { T::zero() }));
    }
    if !m.iter().any(|&v| v > T::zero()) {
        return Err(LossError::AllMasked);
    }
    // -[y log σ(η) + (1-y) log(1-σ(η))] = softplus(η) - y η
    let yc = tape.constant(y, eta.rows(), bins);
    let sp = tape.softplus(eta);
    let ye = tape.mul(eta, yc)?;
    let per_bin = tape.sub(sp, ye)?;
    match norm {
        SurvivalNorm::Batch => Ok(tape.masked_mean(per_bin, m)?),
        SurvivalNorm::PerSample => {
            let row_mask: Vec<T> = m
                .chunks(bins)
                .map(|r| {
                    if r.iter().any(|&v| v > T::zero()) {
                        T::one()
                    } else {
                        T::zero()
                    }
                })
                .collect();
            let rows = tape.masked_row_mean(per_bin, m)?;
            Ok(tape.masked_mean(rows, row_mask)?)
        }
    }
}

/// `Σ_l ‖W[:, l+1] - W[:, l]‖²` for a `D × L` weight matrix.
pub fn smoothness_penalty<T: Scalar>(tape: &mut Tape<T>, w: Var) -> Result<Var, LossError> {
    let bins = w.cols();
    if bins < 2 {
        return Ok(tape.scalar_constant(T::zero()));
    }
    // W · Δ with Δ[l, l] = -1 and Δ[l+1, l] = 1 yields the column differences.
    let mut diff = vec![T::zero(); bins * (bins - 1)];
    for l in 0..bins - 1 {
        diff[l * (bins - 1) + l] = -T::one();
        diff[(l + 1) * (bins - 1) + l] = T::one();
    }
    let delta = tape.constant(diff, bins, bins - 1);
    let d = tape.matmul(w, delta)?;
    let sq = tape.square(d);
    Ok(tape.sum(sq))
}

/// `Σ_k sqrt(Σ_l W[k, l]² + ε)` over the rows of a `D × L` weight matrix.
pub fn group_lasso<T: Scalar>(tape: &mut Tape<T>, w: Var, eps: T) -> Result<Var, LossError> {
    let sq = tape.square(w);
    let ones = tape.constant(vec![T::one(); w.cols()], w.cols(), 1);
    let rows = tape.matmul(sq, ones)?;
    let shifted = tape.offset(rows, eps);
    let norms = tape.sqrt(shifted);
    Ok(tape.sum(norms))
}

/// `(1/B) Σ_i ‖p̂_i - p_i‖²` with `pred` of shape `B × d_p`.
pub fn adversary_mse<T: Scalar>(tape: &mut Tape<T>, pred: Var, target: &[T]) -> Result<Var, LossError> {
    check_len("adversary_mse", pred.len(), target.len())?;
    if pred.rows() == 0 {
        return Err(LossError::EmptyBatch("adversary_mse"));
    }
    let p = tape.constant(target.to_vec(), pred.rows(), pred.cols());
    let r = tape.sub(pred, p)?;
    let sq = tape.square(r);
    let total = tape.sum(sq);
    Ok(tape.scale(total, T::one() / T::from_usize(pred.rows()).unwrap()))
}

/// `(1/B) Σ (v̂ - ṽ)²` against frozen teacher values.
pub fn pseudo_lab_mse<T: Scalar>(tape: &mut Tape<T>, pred: Var, teacher: &[T]) -> Result<Var, LossError> {
    check_len("pseudo_lab_mse", pred.len(), teacher.len())?;
    if teacher.is_empty() {
        return Err(LossError::EmptyBatch("pseudo_lab_mse"));
    }
    let v = tape.constant(teacher.to_vec(), pred.rows(), pred.cols());
    let r = tape.sub(pred, v)?;
    let sq = tape.square(r);
    Ok(tape.mean(sq))
}

/// Named scalar loss terms that feed a composite objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum LossPart {
    Cls,
    Reg,
    Surv,
    Smooth,
    Group,
    Pvec,
    Lab(Lab),
}

impl LossPart {
    pub fn name(self) -> String {
        match self {
            LossPart::Cls => "cls".into(),
            LossPart::Reg => "reg".into(),
            LossPart::Surv => "surv".into(),
            LossPart::Smooth => "smooth".into(),
            LossPart::Group => "group".into(),
            LossPart::Pvec => "pvec".into(),
            LossPart::Lab(l) => format!("lab_{}", l.name()),
        }
    }
}

pub type LossParts = BTreeMap<LossPart, Var>;

/// Composite objectives: classification plus one family of auxiliary terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Objective {
    Baseline,
    TteReg,
    TteSurvival,
    Pvector,
    Pseudo(Lab),
    /// Classification, TTE regression, the adversary and all four labs.
    All,
}

impl Objective {
    pub fn name(self) -> String {
        match self {
            Objective::Baseline => "baseline".into(),
            Objective::TteReg => "tte_reg".into(),
            Objective::TteSurvival => "tte_survival".into(),
            Objective::Pvector => "pvector".into(),
            Objective::Pseudo(l) => format!("pseudo_{}", l.name()),
            Objective::All => "all".into(),
        }
    }

    /// Auxiliary terms and their coefficients; classification always enters with weight 1.
    pub fn terms(self, w: &LossWeights) -> Vec<(LossPart, f64)> {
        let labs = |labs: &[Lab]| labs.iter().map(|&l| (LossPart::Lab(l), w.lab)).collect::<Vec<_>>();
        match self {
            Objective::Baseline => vec![],
            Objective::TteReg => vec![(LossPart::Reg, w.reg)],
            Objective::TteSurvival => vec![
                (LossPart::Surv, w.surv),
                (LossPart::Smooth, w.smooth),
                (LossPart::Group, w.group),
            ],
            Objective::Pvector => vec![(LossPart::Pvec, w.adv)],
            Objective::Pseudo(l) => labs(&[l]),
            Objective::All => {
                let mut t = vec![(LossPart::Reg, w.reg), (LossPart::Pvec, w.adv)];
                t.extend(labs(&Lab::ALL));
                t
            }
        }
    }

    /// Every part the objective reads, classification first.
    pub fn parts(self, w: &LossWeights) -> Vec<LossPart> {
        std::iter::once(LossPart::Cls)
            .chain(self.terms(w).into_iter().map(|(p, _)| p))
            .collect()
    }
}

/// Weighted sum `L_cls + Σ λ_k L_k` for the chosen objective.
pub fn compose_total<T: Scalar>(
    tape: &mut Tape<T>,
    parts: &LossParts,
    weights: &LossWeights,
    objective: Objective,
) -> Result<Var, LossError> {
    let fetch = |p: LossPart| {
        parts.get(&p).copied().ok_or_else(|| LossError::MissingPart {
            objective: objective.name(),
            part: p.name(),
        })
    };
    let mut total = fetch(LossPart::Cls)?;
    for (part, coef) in objective.terms(weights) {
        let v = fetch(part)?;
        let scaled = tape.scale(v, T::lit(coef));
        total = tape.add(total, scaled)?;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::LN_2;

    fn tape() -> Tape<f64> {
        Tape::new()
    }

    #[test]
    fn bce_examples() {
        let mut t = tape();
        let s = t.leaf(vec![0.0], 1, 1);
        let l1 = bce_logits(&mut t, s, &[1.0]).unwrap();
        let l0 = bce_logits(&mut t, s, &[0.0]).unwrap();
        assert!((t.scalar(l1) - LN_2).abs() < 1e-15);
        assert!((t.scalar(l0) - LN_2).abs() < 1e-15);
        let s3 = t.leaf(vec![3f64.ln()], 1, 1);
        let l = bce_logits(&mut t, s3, &[1.0]).unwrap();
        assert!((t.scalar(l) - (4.0f64 / 3.0).ln()).abs() < 1e-12);
        let empty = t.leaf(vec![], 0, 1);
        assert!(matches!(bce_logits(&mut t, empty, &[]), Err(LossError::EmptyBatch(_))));
    }

    #[test]
    fn bce_large_logits_stay_finite() {
        let mut t = tape();
        let s = t.leaf(vec![800.0, -800.0], 2, 1);
        let l = bce_logits(&mut t, s, &[0.0, 1.0]).unwrap();
        assert!((t.scalar(l) - 800.0).abs() < 1e-9);
    }

    #[test]
    fn tte_examples() {
        let mut t = tape();
        let p = t.leaf(vec![2.0, 5.0], 2, 1);
        let l = tte_masked(&mut t, p, &[3.0, 5.0], &[true, true], TteLoss::L1).unwrap();
        assert_eq!(t.scalar(l), 0.5);
        let none = tte_masked(&mut t, p, &[3.0, 5.0], &[false, false], TteLoss::L1).unwrap();
        assert_eq!(t.scalar(none), 0.0);
        let g = t.backward(none).unwrap();
        assert!(!g.reached(p));
        let q = t.leaf(vec![2.0, 9.0], 2, 1);
        let l = tte_masked(&mut t, q, &[3.0, 5.0], &[true, false], TteLoss::L1).unwrap();
        assert_eq!(t.scalar(l), 1.0);
    }

    #[test]
    fn tte_kinds() {
        let mut t = tape();
        let p = t.leaf(vec![0.5, 3.0], 2, 1);
        let mse = tte_masked(&mut t, p, &[0.0, 0.0], &[true, true], TteLoss::Mse).unwrap();
        assert_eq!(t.scalar(mse), (0.25 + 9.0) / 2.0);
        let hub = tte_masked(&mut t, p, &[0.0, 0.0], &[true, true], TteLoss::Huber).unwrap();
        assert_eq!(t.scalar(hub), (0.125 + 2.5) / 2.0);
    }

    fn target(events: &[u8], observed: &[u8]) -> SurvivalTarget {
        SurvivalTarget {
            events: events.iter().map(|&v| v == 1).collect(),
            observed: observed.iter().map(|&v| v == 1).collect(),
        }
    }

    #[test]
    fn survival_examples() {
        let mut t = tape();
        let eta = t.leaf(vec![0.0], 1, 1);
        let l = surv_masked_bce(&mut t, eta, &[target(&[1], &[1])], SurvivalNorm::Batch).unwrap();
        assert!((t.scalar(l) - LN_2).abs() < 1e-15);

        let eta = t.leaf(vec![0.0, 0.0], 1, 2);
        let l = surv_masked_bce(&mut t, eta, &[target(&[0, 1], &[1, 1])], SurvivalNorm::Batch).unwrap();
        assert!((t.scalar(l) - LN_2).abs() < 1e-15);

        let eta = t.leaf(vec![0.0, 100.0], 1, 2);
        let l = surv_masked_bce(&mut t, eta, &[target(&[0, 0], &[1, 0])], SurvivalNorm::Batch).unwrap();
        assert!((t.scalar(l) - LN_2).abs() < 1e-15);

        let eta = t.leaf(vec![0.0, 0.0], 1, 2);
        assert_eq!(
            surv_masked_bce(&mut t, eta, &[target(&[0, 0], &[0, 0])], SurvivalNorm::Batch).unwrap_err(),
            LossError::AllMasked
        );
    }

    #[test]
    fn survival_normalisations_differ_on_ragged_masks() {
        let mut t = tape();
        let eta = t.leaf(vec![1.0, -1.0, 0.5, 2.0], 2, 2);
        let targets = [target(&[0, 1], &[1, 1]), target(&[0, 0], &[1, 0])];
        let batch = surv_masked_bce(&mut t, eta, &targets, SurvivalNorm::Batch).unwrap();
        let per = surv_masked_bce(&mut t, eta, &targets, SurvivalNorm::PerSample).unwrap();
        let bce = |e: f64, y: f64| crate::scalar::softplus(e) - y * e;
        let terms = [bce(1.0, 0.0), bce(-1.0, 1.0), bce(0.5, 0.0)];
        assert!((t.scalar(batch) - terms.iter().sum::<f64>() / 3.0).abs() < 1e-14);
        let expect = ((terms[0] + terms[1]) / 2.0 + terms[2]) / 2.0;
        assert!((t.scalar(per) - expect).abs() < 1e-14);
    }

    #[test]
    fn invalid_targets_rejected() {
        assert!(target(&[1, 1], &[1, 1]).validate().is_err());
        assert!(target(&[0, 1], &[1, 0]).validate().is_err());
        assert!(target(&[0, 0], &[0, 1]).validate().is_err());
        assert!(target(&[0, 1, 0], &[1, 1, 0]).validate().is_ok());
    }

    #[test]
    fn smoothness_examples() {
        let mut t = tape();
        let w = t.leaf(vec![1.0, 1.0, 1.0, 2.0, 2.0, 2.0], 2, 3);
        let s = smoothness_penalty(&mut t, w).unwrap();
        assert_eq!(t.scalar(s), 0.0);
        let w = t.leaf(vec![0.0, 2.0], 1, 2);
        let s = smoothness_penalty(&mut t, w).unwrap();
        assert_eq!(t.scalar(s), 4.0);
        // columns (1,0) and (0,1)
        let w = t.leaf(vec![1.0, 0.0, 0.0, 1.0], 2, 2);
        let s = smoothness_penalty(&mut t, w).unwrap();
        assert_eq!(t.scalar(s), 2.0);
        let w = t.leaf(vec![5.0, -3.0], 2, 1);
        let s = smoothness_penalty(&mut t, w).unwrap();
        assert_eq!(t.scalar(s), 0.0);
    }

    #[test]
    fn group_lasso_examples() {
        let mut t = tape();
        let w = t.leaf(vec![0.0; 6], 3, 2);
        let g = group_lasso(&mut t, w, 1e-8).unwrap();
        assert!((t.scalar(g) - 3e-4).abs() < 1e-18);
        let w = t.leaf(vec![3.0], 1, 1);
        let g = group_lasso(&mut t, w, 1e-8).unwrap();
        assert!((t.scalar(g) - 3.0).abs() < 1e-8);
    }

    #[test]
    fn adversary_and_lab_examples() {
        let mut t = tape();
        let p = t.leaf(vec![1.0, 0.0], 1, 2);
        let l = adversary_mse(&mut t, p, &[1.0, 0.0]).unwrap();
        assert_eq!(t.scalar(l), 0.0);
        let l = adversary_mse(&mut t, p, &[0.0, 0.0]).unwrap();
        assert_eq!(t.scalar(l), 1.0);
        // squared norms 1 and 3
        let p = t.leaf(vec![1.0, 0.0, 1.0, 2f64.sqrt()], 2, 2);
        let l = adversary_mse(&mut t, p, &[0.0; 4]).unwrap();
        assert!((t.scalar(l) - 2.0).abs() < 1e-15);

        let v = t.leaf(vec![2.0], 1, 1);
        let l = pseudo_lab_mse(&mut t, v, &[0.0]).unwrap();
        assert_eq!(t.scalar(l), 4.0);
        let l = pseudo_lab_mse(&mut t, v, &[2.0]).unwrap();
        assert_eq!(t.scalar(l), 0.0);
    }

    #[test]
    fn teacher_values_receive_no_gradient() {
        let mut t = tape();
        let teacher_out = t.leaf(vec![0.7, -0.2], 2, 1);
        let frozen = t.detach(teacher_out);
        let student = t.leaf(vec![0.1, 0.4], 2, 1);
        let teacher_vals = t.value(frozen).to_vec();
        let l = pseudo_lab_mse(&mut t, student, &teacher_vals).unwrap();
        let g = t.backward(l).unwrap();
        assert!(!g.reached(teacher_out));
        assert!(g.reached(student));
    }

    fn parts_with(t: &mut Tape<f64>, values: &[(LossPart, f64)]) -> LossParts {
        values.iter().map(|&(p, v)| (p, t.leaf(vec![v], 1, 1))).collect()
    }

    #[test]
    fn compose_examples() {
        let mut t = tape();
        let w = LossWeights::default();
        let parts = parts_with(
            &mut t,
            &[(LossPart::Cls, 0.7), (LossPart::Reg, 0.5), (LossPart::Pvec, 2.0)],
        );
        let total = compose_total(&mut t, &parts, &w, Objective::TteReg).unwrap();
        assert!((t.scalar(total) - 1.2).abs() < 1e-15);
        let total = compose_total(&mut t, &parts, &w, Objective::Pvector).unwrap();
        assert!((t.scalar(total) - (0.7 + 0.2)).abs() < 1e-15);
        let err = compose_total(&mut t, &parts, &w, Objective::TteSurvival).unwrap_err();
        assert!(err.to_string().contains("surv"));
    }

    #[test]
    fn zero_weights_leave_classification_exactly() {
        let mut t = tape();
        let w = LossWeights {
            reg: 0.0,
            surv: 0.0,
            smooth: 0.0,
            group: 0.0,
            adv: 0.0,
            lab: 0.0,
            group_eps: 1e-8,
        };
        let mut vals = vec![
            (LossPart::Cls, 0.123456789),
            (LossPart::Reg, 3.0),
            (LossPart::Pvec, 7.0),
        ];
        vals.extend(Lab::ALL.iter().map(|&l| (LossPart::Lab(l), 1.5)));
        let parts = parts_with(&mut t, &vals);
        let total = compose_total(&mut t, &parts, &w, Objective::All).unwrap();
        assert_eq!(t.scalar(total), 0.123456789);
    }
}
