//! Re-parametrisation of frozen convolution kernels through per-layer
//! projection matrices over output channels, plus parameter accounting and
//! the checkpoint format.

mod accounting;
mod checkpoint;
mod kernel;
mod layers;
mod store;

pub use accounting::{count_parameters, ConvRole, ConvSpec, LayerInventory, ParameterCount};
pub use checkpoint::{
    load_checkpoint, read_checkpoint_meta, read_f32_tensors, save_checkpoint, Checkpoint, CheckpointEntry,
    CheckpointMeta, CHECKPOINT_FORMAT, CHECKPOINT_VERSION,
};
pub use kernel::{init_adapter, mode1_product, mode1_tensor, ConvKernel, ProjectionAdapter};
pub use layers::{AdaptiveConv, LayerFactory, Norm, Regime};
pub use store::{Group, Param, ParamStore};
