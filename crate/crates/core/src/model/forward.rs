use super::{BoundParams, GateSlots, HazardKind, Lab, ModelError, ModelParams};
use crate::autodiff::{Tape, Var};
use crate::scalar::Scalar;

/// A batch of equal-length embedding sequences, stored step-major:
/// `data[(t * batch + b) * dim + k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceBatch<T> {
    pub steps: usize,
    pub batch: usize,
    pub dim: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> SequenceBatch<T> {
    /// Builds a batch from per-sample sequences of `steps × dim` rows.
    pub fn from_sequences<S: AsRef<[Vec<T>]>>(sequences: &[S]) -> Result<Self, ModelError> {
        let batch = sequences.len();
        let first = sequences.first().ok_or(ModelError::EmptySequence)?.as_ref();
        let steps = first.len();
        if steps == 0 {
            return Err(ModelError::EmptySequence);
        }
        let dim = first[0].len();
        let mut data = vec![T::zero(); steps * batch * dim];
        for (b, seq) in sequences.iter().enumerate() {
            let seq = seq.as_ref();
            if seq.len() != steps {
                return Err(ModelError::InvalidConfig(format!(
                    "sequence {b} has {} steps, expected {steps}",
                    seq.len()
                )));
            }
            for (t, row) in seq.iter().enumerate() {
                if row.len() != dim {
                    return Err(ModelError::InputWidth {
                        expected: dim,
                        got: row.len(),
                    });
                }
                let at = (t * batch + b) * dim;
                data[at..at + dim].copy_from_slice(row);
            }
        }
        Ok(Self {
            steps,
            batch,
            dim,
            data,
        })
    }

    fn step(&self, t: usize) -> &[T] {
        let n = self.batch * self.dim;
        &self.data[t * n..(t + 1) * n]
    }
}

fn run_direction<T: Scalar>(
    tape: &mut Tape<T>,
    gates: &[GateSlots],
    vars: &[Var],
    inputs: &[Var],
    reverse: bool,
) -> Result<Var, ModelError> {
    let order: Vec<usize> = if reverse {
        (0..inputs.len()).rev().collect()
    } else {
        (0..inputs.len()).collect()
    };
    let mut hidden: Option<Var> = None;
    let mut cell: Option<Var> = None;
    for t in order {
        let x = inputs[t];
        let mut pre = Vec::with_capacity(gates.len());
        for g in gates {
            let mut a = tape.affine(x, vars[g.input], vars[g.bias])?;
            if let Some(h) = hidden {
                let r = tape.matmul(h, vars[g.recurrent])?;
                a = tape.add(a, r)?;
            }
            pre.push(a);
        }
        if gates.len() == 1 {
            hidden = Some(tape.tanh(pre[0]));
            continue;
        }
        let i = tape.sigmoid(pre[0]);
        let f = tape.sigmoid(pre[1]);
        let g = tape.tanh(pre[2]);
        let o = tape.sigmoid(pre[3]);
        let ig = tape.mul(i, g)?;
        let c = match cell {
            Some(c_prev) => {
                let fc = tape.mul(f, c_prev)?;
                tape.add(fc, ig)?
            }
            None => ig,
        };
        let tc = tape.tanh(c);
        hidden = Some(tape.mul(o, tc)?);
        cell = Some(c);
    }
    hidden.ok_or(ModelError::EmptySequence)
}

/// Runs both recurrent directions over `batch` and projects the concatenated
/// final states to the context vector `z` (`B × D`).
pub fn forward_context<T: Scalar>(
    tape: &mut Tape<T>,
    params: &ModelParams<T>,
    bound: &BoundParams,
    batch: &SequenceBatch<T>,
) -> Result<Var, ModelError> {
    let cfg = params.config();
    if batch.steps == 0 || batch.batch == 0 {
        return Err(ModelError::EmptySequence);
    }
    if batch.dim != cfg.embed_dim {
        return Err(ModelError::InputWidth {
            expected: cfg.embed_dim,
            got: batch.dim,
        });
    }
    if let Some(index) = batch.data.iter().position(|v| !v.is_finite()) {
        return Err(ModelError::NonFiniteInput { index });
    }
    let inputs: Vec<Var> = (0..batch.steps)
        .map(|t| tape.constant(batch.step(t).to_vec(), batch.batch, batch.dim))
        .collect();
    let vars = &bound.vars;
    let slots = &params.slots;
    let h_fwd = run_direction(tape, &slots.fwd, vars, &inputs, false)?;
    let h_bwd = run_direction(tape, &slots.bwd, vars, &inputs, true)?;
    let both = tape.concat_cols(h_fwd, h_bwd)?;
    Ok(tape.affine(both, vars[slots.proj_w], vars[slots.proj_b])?)
}

/// Every head output for one batch of context vectors.
#[derive(Debug, Clone, Copy)]
pub struct HeadOutputs {
    /// Classification logit `s`, `B × 1`.
    pub logit: Var,
    /// Normalised time-to-event estimate, `B × 1`.
    pub tte: Var,
    /// Hazard logits `η`, `B × L`.
    pub eta: Var,
    /// Hazards `σ(η)`, `B × L`.
    pub hazard: Var,
    /// Effective hazard weight matrix `D × L` (columns equal in constant-effect mode).
    pub hazard_weights: Var,
    /// Adversary prediction of the identity vector from the reversed context, `B × d_p`.
    pub pvector: Var,
    /// Lab student predictions, indexed by [`Lab::index`].
    pub labs: [Var; 4],
}

/// Forward pass through the gradient reversal layer.
pub fn grl_wrap<T: Scalar>(tape: &mut Tape<T>, z: Var, alpha: T) -> Var {
    debug_assert!(alpha >= T::zero());
    tape.grad_reverse(z, alpha)
}

pub fn forward_heads<T: Scalar>(
    tape: &mut Tape<T>,
    params: &ModelParams<T>,
    bound: &BoundParams,
    z: Var,
) -> Result<HeadOutputs, ModelError> {
    let cfg = params.config();
    let v = &bound.vars;
    let s = &params.slots;
    let logit = tape.affine(z, v[s.cls_w], v[s.cls_b])?;
    let tte = tape.affine(z, v[s.tte_w], v[s.tte_b])?;
    let hazard_weights = match cfg.hazard_kind {
        HazardKind::TimeVarying => v[s.hazard_w],
        HazardKind::ConstantEffect => {
            let ones = tape.constant(vec![T::one(); cfg.horizon_bins], 1, cfg.horizon_bins);
            tape.matmul(v[s.hazard_w], ones)?
        }
    };
    let eta = tape.affine(z, hazard_weights, v[s.hazard_b])?;
    let hazard = tape.sigmoid(eta);
    let reversed = grl_wrap(tape, z, T::lit(cfg.grl_alpha));
    let pvector = tape.affine(reversed, v[s.adv_w], v[s.adv_b])?;
    let mut labs = [logit; 4];
    for lab in Lab::ALL {
        labs[lab.index()] = tape.affine(z, v[s.lab_w[lab.index()]], v[s.lab_b[lab.index()]])?;
    }
    Ok(HeadOutputs {
        logit,
        tte,
        eta,
        hazard,
        hazard_weights,
        pvector,
        labs,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurvivalCurve<T> {
    /// `S_l = Π_{j≤l} (1 - h_j)`.
    pub survival: Vec<T>,
    /// `1 - S_l`.
    pub risk: Vec<T>,
}

/// Discrete survival readout over one hazard vector.
pub fn survival_curve<T: Scalar>(hazards: &[T]) -> Result<SurvivalCurve<T>, ModelError> {
    let mut survival = Vec::with_capacity(hazards.len());
    let mut s = T::one();
    for (index, &h) in hazards.iter().enumerate() {
        if !(h >= T::zero() && h <= T::one()) {
            return Err(ModelError::HazardOutOfRange {
                index,
                value: h.as_f64(),
            });
        }
        s *= T::one() - h;
        survival.push(s);
    }
    let risk = survival.iter().map(|&s| T::one() - s).collect();
    Ok(SurvivalCurve { survival, risk })
}
