//! Forward and backward passes of every layer type used by the model
//! stacks. Recurrent layers keep their per-timestep values in explicit cache
//! structs that are handed back to the matching backward call.

mod convlstm;
mod dense;
mod dropout;
pub mod init;
mod lstm;

pub use convlstm::{ConvLstmCache, ConvLstmParams};
pub use dense::{dense_backward, dense_forward, DenseGrads};
pub use dropout::{dropout, dropout_backward, DropoutMask};
pub use lstm::{bidirectional_lstm, BiLstmCache, BiLstmParams, LstmCache, LstmParams};

/// Whether stochastic layers are active.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}
