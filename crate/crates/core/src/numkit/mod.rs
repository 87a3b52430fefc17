//! Dense tensors, reverse-mode differentiation, parameters and optimizer.

mod checkpoint;
mod optim;
mod params;
mod tape;
mod tensor;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_FORMAT_VERSION};
pub use optim::{sgd_nesterov_step, SgdNesterov};
pub use params::{Param, ParamGroup, ParamSet};
pub use tape::{Gradients, Tape, Var};
pub use tensor::{softmax, softmax_slice, Tensor};
