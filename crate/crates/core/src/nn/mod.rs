//! Minimal neural-network toolkit: tape autodiff, parameter stores, layers
//! and Adam.

mod graph;
pub mod layers;
mod optim;
mod params;

pub use graph::{softmax_rows, Graph, Var};
pub use layers::{Activation, BiLstm, Bind, Conv1d, Linear, Lstm, Mlp};
pub use optim::{Adam, AdamConfig};
pub use params::{Grads, Param, ParamGroup, ParamId, ParamStore};

#[cfg(test)]
mod tests;
