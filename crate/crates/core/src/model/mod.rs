//! Spatiotemporal rPPG network, optimizer and checkpoints.

mod checkpoint;
mod layers;
mod network;
mod optim;

pub use checkpoint::{Checkpoint, CHECKPOINT_VERSION};
pub use network::{
    inference_rppg, inference_rppg_backward, pearson_input_grad, saliency_map, ModelConfig, StModel, StRppgBlock, Tape,
    SPATIAL_SIZES,
};
pub use optim::{AdamW, AdamWConfig};
