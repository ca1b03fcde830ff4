//! Differentiable tensor core: values, gradient tape, operations and Adam.

mod adam;
pub mod fault;
mod gradcheck;
mod graph;
mod lstm;
mod ops;
mod sisdr;
mod tensor;

pub use adam::{Adam, AdamConfig, AdamSlot};
pub use gradcheck::{grad_check, Coords, GradCheck};
pub use graph::{Gradients, Graph, Var};
pub use lstm::{lstm_step, LstmState, LstmWeights};
pub use ops::{ConvMode, CumStats, NORM_EPS};
pub use sisdr::{si_sdr, snr, SiSdrSingularity, TRAIN_CLAMP_DB};
pub use tensor::{Real, Tensor};

pub(crate) use ops::for_each_interp;
