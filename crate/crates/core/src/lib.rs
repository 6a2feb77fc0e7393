//! Multi-task time-to-event learning for early warning on physiological
//! embedding sequences.
//!
//! The numeric core ([`autodiff`], [`model`], [`losses`], [`surgery`]) is
//! generic over [`scalar::Scalar`] so it runs in `f32` or `f64`; the cohort
//! generator and the experiment harness work in `f64`.

// `!(x > 0.0)` rejects NaN along with the out-of-range values
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod datagen;
pub mod harness;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod scalar;
pub mod surgery;

pub use scalar::Scalar;

pub type Tape64 = autodiff::Tape<f64>;
pub type Tape32 = autodiff::Tape<f32>;
pub type Gradients64 = autodiff::Gradients<f64>;
pub type Gradients32 = autodiff::Gradients<f32>;
pub type Params64 = model::ModelParams<f64>;
pub type Params32 = model::ModelParams<f32>;
pub type Checkpoint64 = model::Checkpoint<f64>;
pub type TaskGradient64 = surgery::TaskGradient<f64>;
