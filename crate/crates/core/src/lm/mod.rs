//! Small decoder-only language model over a video prefix and symbolic text.

mod model;
pub mod ops;
mod params;
mod train;

pub use model::{
    argmax, forward, forward_trace, generate, last_logits, loss, loss_and_grads, sequence_positions, Example,
    Logits, Trace,
};
pub use params::{CheckpointHeader, LayerParams, LmConfig, ToyLmParams, CHECKPOINT_FORMAT};
pub use train::{batch_indices, train, Adam, TrainConfig, TrainReport};

#[cfg(test)]
mod tests;
