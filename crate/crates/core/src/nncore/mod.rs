//! Dense networks, reverse-mode gradients and the Adam optimizer.

mod adam;
pub mod io;
mod mlp;
mod tape;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use mlp::{forward_eval, forward_eval_tape, forward_mlp, forward_mlp_tape, Activation, Layer, MlpParams, Parameterized};
pub use tape::{backward, Gradients, ParamId, Tape, Var};
pub use tensor::Tensor;

pub(crate) use tape::{log_softmax_rows, softmax_rows};
