//! A small residual 1-D CNN with tape-based reverse-mode differentiation,
//! Adam, EMA shadow weights and a binary checkpoint format.

pub mod adam;
pub mod checkpoint;
#[cfg(test)]
mod gradcheck;
pub mod kernels;
pub mod model;
pub mod params;
pub mod tape;
pub mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint, Checkpoint};
pub use model::{batch_tensor, build_model, prob_rows, ArchConfig, Network, StemConfig};
pub use params::{ema_update, Gradients, ParamId, ParamKind, ParamSet, Params, WeightSelect};
pub use tape::{apply_bn_updates, Mode, NodeId, Tape};
pub use tensor::Tensor;
