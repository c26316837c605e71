//! Convolutional tokenizer: encoder, quantizer bottleneck, code embedding
//! and decoder, with the loss and training loop around them.

pub mod config;
pub mod loss;
pub mod model;
pub mod train;

pub use config::{CodecConfig, Component, HybridConfig, QuantizerConfig, VqConfig};
pub use loss::{l1_loss, tokenizer_loss, LossBreakdown, LossGrads};
pub use model::{Bottleneck, Codec, TrainForward};
pub use train::{
    codebook_stats, load_codec, moving_average, save_codec, split_batches, train_tokenizer,
    TokenizerTrainer, TrainConfig, TrainState,
};
