//! Small neural-network toolkit on top of candle: seeded parameter stores,
//! differentiable layers, a transformer block, Adam with gradient clipping
//! and the versioned checkpoint container.

mod checkpoint;
mod layers;
mod optim;
mod params;

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use layers::{
    causal_mask_tensor, gelu, layer_norm, softmax, Conv2dLayer, LayerNorm, Linear, TransformerBlock,
};
pub use optim::{clip_grad_norm, Adam, OptimConfig};
pub use params::{Init, ParamStore};
