//! A small reverse-mode differentiable operator set with parameter storage,
//! checkpoints and the toy backbones.

pub mod checkpoint;
pub mod gradcheck;
pub mod init;
mod kernels;
pub mod layers;
pub mod params;
pub mod tape;

pub use checkpoint::{checkpoint_bytes, checkpoint_from_bytes, load_checkpoint, save_checkpoint};
pub use gradcheck::{check_function_gradient, check_param_gradients, relative_error, GradCheck};
pub use init::{xavier_init, ParamBuilder};
pub use layers::{
    Activation, BevBackbone, BiFpn, BiFpnBlock, Conv, ConvBlock, FusionNode, ImageBackbone, LayerNorm, LevelSet,
    BEV_STRIDES, IMAGE_MAX_STRIDE, IMAGE_STRIDES,
};
pub use params::{Gradients, Param, ParamId, ParamStore};
pub use tape::{Tape, Var, NO_SOURCE};
