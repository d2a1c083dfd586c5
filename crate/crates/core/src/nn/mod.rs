//! Tensors, reverse-mode differentiation, the PEPX network, optimizer,
//! checkpoints and the training loop.

pub mod checkpoint;
pub mod graph;
pub(crate) mod kernels;
pub mod network;
pub mod optim;
pub mod params;
pub mod tensor;
pub mod train;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, load_pretrained, network_from_checkpoint, save_checkpoint,
    Checkpoint, CheckpointMeta, TransferReport, HEAD_PREFIX,
};
pub use graph::{mse_loss, sigmoid, ConvSpec, Gradients, Graph, Var};
pub use network::{
    model_forward, pepx_forward, ForwardTrace, Network, NetworkConfig, PepxBlock, PepxConfig, ShapePlan, SkipConfig,
    StageConfig,
};
pub use optim::{adam_step, AdamConfig, AdamState};
pub use params::{Init, ParamStore};
pub use tensor::Tensor;
pub use train::{train, TrainConfig, TrainLog};
