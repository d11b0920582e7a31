//! Dense tensors, a reverse-mode tape, parameters and the Adam optimizer.

mod lstm;
mod optim;
mod params;
mod rng;
mod tape;
mod tensor;

pub use lstm::{lstm_cell, LstmWeights};
pub use optim::Adam;
pub use params::{Gradients, ParamId, ParamStore, Parameter};
pub use rng::Rng;
pub use tape::{NodeGrads, Tape, Var};
pub use tensor::{log_softmax, Tensor};

pub(crate) use params::glorot;
