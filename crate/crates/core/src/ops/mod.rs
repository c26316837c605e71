//! Forward operations with hand-written backward passes.

pub mod activation;
pub mod conv;
pub mod linalg;
pub mod loss;
pub mod norm;

pub use conv::{
    conv2d, conv2d_backward, conv_transpose2d, conv_transpose2d_backward, depth_to_space,
    space_to_depth,
};
pub use linalg::{matmul, matmul_backward};
pub use loss::softmax_cross_entropy;
pub use norm::{layer_norm, layer_norm_backward, LayerNormCache};
