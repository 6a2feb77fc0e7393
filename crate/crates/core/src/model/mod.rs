//! Bidirectional recurrent aggregator plus the classification, time-to-event,
//! hazard, adversary and lab-student heads.

mod checkpoint;
mod forward;

pub use checkpoint::{Checkpoint, CheckpointTensor, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use forward::{
    forward_context, forward_heads, grl_wrap, survival_curve, HeadOutputs, SequenceBatch, SurvivalCurve,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{Tape, TapeError, Var};
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("input sequence is empty")]
    EmptySequence,
    #[error("embedding width {got} does not match the configured {expected}")]
    InputWidth { expected: usize, got: usize },
    #[error("input contains a non-finite value at flat index {index}")]
    NonFiniteInput { index: usize },
    #[error("hazard {value} at bin {index} lies outside [0, 1]")]
    HazardOutOfRange { index: usize, value: f64 },
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Tape(#[from] TapeError),
}

/// Recurrent cell used in both directions of the aggregator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CellKind {
    #[default]
    Lstm,
    Elman,
}

impl CellKind {
    fn gate_names(self) -> &'static [&'static str] {
        match self {
            CellKind::Lstm => &["i", "f", "g", "o"],
            CellKind::Elman => &["h"],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum HazardKind {
    /// One weight column per horizon bin.
    #[default]
    TimeVarying,
    /// A single weight vector shared by every bin; only the biases vary.
    ConstantEffect,
}

/// Auxiliary laboratory targets, in declaration order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Lab {
    Lac,
    Na,
    Trop,
    K,
}

impl Lab {
    pub const ALL: [Lab; 4] = [Lab::Lac, Lab::Na, Lab::Trop, Lab::K];

    pub fn name(self) -> &'static str {
        match self {
            Lab::Lac => "lac",
            Lab::Na => "na",
            Lab::Trop => "trop",
            Lab::K => "k",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn parse(s: &str) -> Option<Lab> {
        Lab::ALL.into_iter().find(|l| l.name() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub embed_dim: usize,
    /// Width `D` of the context vector.
    pub hidden_dim: usize,
    /// Number of future bins `L` on the hazard grid.
    pub horizon_bins: usize,
    /// Bin width in hours.
    pub bin_width: f64,
    pub pvector_dim: usize,
    pub cell_kind: CellKind,
    pub hazard_kind: HazardKind,
    /// Gradient reversal strength.
    pub grl_alpha: f64,
    /// Sequence length of the one-hour history.
    pub windows_per_hour: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            embed_dim: 16,
            hidden_dim: 32,
            horizon_bins: 24,
            bin_width: 1.0,
            pvector_dim: 128,
            cell_kind: CellKind::Lstm,
            hazard_kind: HazardKind::TimeVarying,
            grl_alpha: 0.5,
            windows_per_hour: 12,
        }
    }
}

impl ModelConfig {
    /// Prediction horizon `L · Δt` in hours.
    pub fn horizon_hours(&self) -> f64 {
        self.horizon_bins as f64 * self.bin_width
    }

    /// State width of each recurrent direction; the two are concatenated and projected to `D`.
    pub fn cell_dim(&self) -> usize {
        self.hidden_dim.div_ceil(2)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let dims = [
            ("embed_dim", self.embed_dim),
            ("hidden_dim", self.hidden_dim),
            ("horizon_bins", self.horizon_bins),
            ("pvector_dim", self.pvector_dim),
            ("windows_per_hour", self.windows_per_hour),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(ModelError::InvalidConfig(format!("{name} must be at least 1")));
        }
        if !(self.grl_alpha >= 0.0) || !self.grl_alpha.is_finite() {
            return Err(ModelError::InvalidConfig("grl_alpha must be finite and >= 0".into()));
        }
        if !(self.bin_width > 0.0) || !self.bin_width.is_finite() {
            return Err(ModelError::InvalidConfig("bin_width must be positive".into()));
        }
        Ok(())
    }
}

/// Dense row-major matrix owned by [`ModelParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Which part of the network a parameter belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamRole {
    Aggregator,
    Classifier,
    Tte,
    Hazard,
    Adversary,
    Lab(Lab),
}

impl ParamRole {
    /// Shared parameters are the ones every task back-propagates into.
    pub fn is_shared(self) -> bool {
        matches!(self, ParamRole::Aggregator)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry<T> {
    pub name: String,
    pub role: ParamRole,
    pub tensor: Tensor<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct GateSlots {
    pub input: usize,
    pub recurrent: usize,
    pub bias: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Slots {
    pub fwd: Vec<GateSlots>,
    pub bwd: Vec<GateSlots>,
    pub proj_w: usize,
    pub proj_b: usize,
    pub cls_w: usize,
    pub cls_b: usize,
    pub tte_w: usize,
    pub tte_b: usize,
    pub hazard_w: usize,
    pub hazard_b: usize,
    pub adv_w: usize,
    pub adv_b: usize,
    pub lab_w: [usize; 4],
    pub lab_b: [usize; 4],
}

/// All trainable tensors, in a fixed order that defines the flat parameter layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    config: ModelConfig,
    entries: Vec<ParamEntry<T>>,
    pub(crate) slots: Slots,
}

/// Tape leaves (or constants) bound to each parameter tensor, parallel to [`ModelParams::entries`].
#[derive(Debug, Clone)]
pub struct BoundParams {
    pub vars: Vec<Var>,
}

impl<T: Scalar> ModelParams<T> {
    /// Uniform `[-1/√fan_in, 1/√fan_in]` initialisation, deterministic in `seed`.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self, ModelError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::build(config, |rows, cols, fan_in| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            Tensor {
                rows,
                cols,
                data: (0..rows * cols)
                    .map(|_| T::lit(rng.random_range(-bound..=bound)))
                    .collect(),
            }
        })
    }

    pub fn zeros(config: &ModelConfig) -> Result<Self, ModelError> {
        Self::build(config, |rows, cols, _| Tensor::zeros(rows, cols))
    }

    fn build(config: &ModelConfig, mut make: impl FnMut(usize, usize, usize) -> Tensor<T>) -> Result<Self, ModelError> {
        config.validate()?;
        let e = config.embed_dim;
        let h = config.cell_dim();
        let d = config.hidden_dim;
        let l = config.horizon_bins;
        let mut entries: Vec<ParamEntry<T>> = Vec::new();
        let mut push = |name: String, role: ParamRole, rows: usize, cols: usize, fan_in: usize| {
            entries.push(ParamEntry {
                name,
                role,
                tensor: make(rows, cols, fan_in),
            });
            entries.len() - 1
        };

        let cell = |dir: &str, push: &mut dyn FnMut(String, ParamRole, usize, usize, usize) -> usize| {
            config
                .cell_kind
                .gate_names()
                .iter()
                .map(|gate| {
                    let fan_in = e + h;
                    GateSlots {
                        input: push(format!("agg.{dir}.{gate}.wx"), ParamRole::Aggregator, e, h, fan_in),
                        recurrent: push(format!("agg.{dir}.{gate}.wh"), ParamRole::Aggregator, h, h, fan_in),
                        bias: push(format!("agg.{dir}.{gate}.b"), ParamRole::Aggregator, 1, h, fan_in),
                    }
                })
                .collect::<Vec<_>>()
        };
        let fwd = cell("fwd", &mut push);
        let bwd = cell("bwd", &mut push);
        let proj_w = push("agg.proj.w".into(), ParamRole::Aggregator, 2 * h, d, 2 * h);
        let proj_b = push("agg.proj.b".into(), ParamRole::Aggregator, 1, d, 2 * h);
        let cls_w = push("head.cls.w".into(), ParamRole::Classifier, d, 1, d);
        let cls_b = push("head.cls.b".into(), ParamRole::Classifier, 1, 1, d);
        let tte_w = push("head.tte.w".into(), ParamRole::Tte, d, 1, d);
        let tte_b = push("head.tte.b".into(), ParamRole::Tte, 1, 1, d);
        let hazard_cols = match config.hazard_kind {
            HazardKind::TimeVarying => l,
            HazardKind::ConstantEffect => 1,
        };
        let hazard_w = push("head.hazard.w".into(), ParamRole::Hazard, d, hazard_cols, d);
        let hazard_b = push("head.hazard.b".into(), ParamRole::Hazard, 1, l, d);
        let adv_w = push("head.adv.w".into(), ParamRole::Adversary, d, config.pvector_dim, d);
        let adv_b = push("head.adv.b".into(), ParamRole::Adversary, 1, config.pvector_dim, d);
        let mut lab_w = [0; 4];
        let mut lab_b = [0; 4];
        for lab in Lab::ALL {
            lab_w[lab.index()] = push(format!("head.lab.{}.w", lab.name()), ParamRole::Lab(lab), d, 1, d);
            lab_b[lab.index()] = push(format!("head.lab.{}.b", lab.name()), ParamRole::Lab(lab), 1, 1, d);
        }
        let slots = Slots {
            fwd,
            bwd,
            proj_w,
            proj_b,
            cls_w,
            cls_b,
            tte_w,
            tte_b,
            hazard_w,
            hazard_b,
            adv_w,
            adv_b,
            lab_w,
            lab_b,
        };
        Ok(Self {
            config: config.clone(),
            entries,
            slots,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn entries(&self) -> &[ParamEntry<T>] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [ParamEntry<T>] {
        &mut self.entries
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.entries.iter().find(|e| e.name == name).map(|e| &e.tensor)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.entries.iter_mut().find(|e| e.name == name).map(|e| &mut e.tensor)
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.tensor.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.entries.iter().all(|e| e.tensor.data.iter().all(|v| v.is_finite()))
    }

    /// Records every tensor as a differentiable leaf.
    pub fn bind(&self, tape: &mut Tape<T>) -> BoundParams {
        BoundParams {
            vars: self
                .entries
                .iter()
                .map(|e| tape.leaf(e.tensor.data.clone(), e.tensor.rows, e.tensor.cols))
                .collect(),
        }
    }

    /// Records every tensor as a constant, for inference-only passes.
    pub fn bind_frozen(&self, tape: &mut Tape<T>) -> BoundParams {
        BoundParams {
            vars: self
                .entries
                .iter()
                .map(|e| tape.constant(e.tensor.data.clone(), e.tensor.rows, e.tensor.cols))
                .collect(),
        }
    }

    /// Copy of these parameters with the two recurrent directions exchanged and
    /// the projection's input halves swapped to match.
    pub fn with_directions_swapped(&self) -> Self {
        let mut out = self.clone();
        for (f, b) in self.slots.fwd.iter().zip(&self.slots.bwd) {
            for (i, j) in [(f.input, b.input), (f.recurrent, b.recurrent), (f.bias, b.bias)] {
                out.entries[i].tensor = self.entries[j].tensor.clone();
                out.entries[j].tensor = self.entries[i].tensor.clone();
            }
        }
        let h = self.config.cell_dim();
        let proj = &self.entries[self.slots.proj_w].tensor;
        let cols = proj.cols;
        let swapped = &mut out.entries[self.slots.proj_w].tensor.data;
        for r in 0..2 * h {
            let src = if r < h { r + h } else { r - h };
            swapped[r * cols..(r + 1) * cols].copy_from_slice(&proj.data[src * cols..(src + 1) * cols]);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_matches_documented_values() {
        let c = ModelConfig::default();
        assert_eq!(c.horizon_bins, 24);
        assert_eq!(c.bin_width, 1.0);
        assert_eq!(c.pvector_dim, 128);
        assert_eq!(c.grl_alpha, 0.5);
        assert_eq!(c.horizon_hours(), 24.0);
        assert_eq!(c.cell_dim(), 16);
    }

    #[test]
    fn rejects_zero_dims_and_negative_alpha() {
        let mut c = ModelConfig {
            hidden_dim: 0,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        c.hidden_dim = 4;
        c.grl_alpha = -0.1;
        assert!(c.validate().is_err());
    }

    #[test]
    fn init_respects_fan_in_bound_and_seed() {
        let c = ModelConfig::default();
        let a = ModelParams::<f64>::init(&c, 3).unwrap();
        let b = ModelParams::<f64>::init(&c, 3).unwrap();
        assert_eq!(a, b);
        let w = a.get("agg.fwd.i.wx").unwrap();
        let bound = 1.0 / ((c.embed_dim + c.cell_dim()) as f64).sqrt();
        assert!(w.data.iter().all(|v| v.abs() <= bound));
        assert_eq!(a.get("head.hazard.w").unwrap().cols, 24);
    }

    #[test]
    fn constant_effect_has_single_hazard_column() {
        let c = ModelConfig {
            hazard_kind: HazardKind::ConstantEffect,
            ..Default::default()
        };
        let p = ModelParams::<f64>::zeros(&c).unwrap();
        assert_eq!(p.get("head.hazard.w").unwrap().cols, 1);
        assert_eq!(p.get("head.hazard.b").unwrap().cols, 24);
    }

    #[test]
    fn elman_has_one_gate_per_direction() {
        let c = ModelConfig {
            cell_kind: CellKind::Elman,
            ..Default::default()
        };
        let p = ModelParams::<f64>::zeros(&c).unwrap();
        assert!(p.get("agg.fwd.h.wx").is_some());
        assert!(p.get("agg.fwd.i.wx").is_none());
    }
}
