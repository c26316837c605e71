//! Masked image-token generation conditioned on a text prompt.

pub mod model;
pub mod train;
pub mod vocab;

pub use model::{ArConfig, ArModel, Decoding};
pub use train::{ArTrainConfig, ArTrainer};
pub use vocab::{TokenSequence, VocabLayout, SPECIAL_COUNT};

use crate::codec::Codec;
use crate::error::{ensure_dim, Error, Result};
use crate::image::RgbImage;
use crate::Rng64;

/// Vocabulary matching a tokenizer's visual codebook.
pub fn vocab_for(codec: &Codec) -> VocabLayout {
    VocabLayout::new(codec.config().codebook_size())
}

/// One training sequence per `(prompt, token grid)` pair.
pub fn training_sequences(
    vocab: &VocabLayout,
    prompts: &[String],
    grids: &[Vec<u32>],
) -> Result<Vec<TokenSequence>> {
    ensure_dim!(
        prompts.len() == grids.len(),
        "{} prompts for {} grids",
        prompts.len(),
        grids.len()
    );
    prompts
        .iter()
        .zip(grids)
        .map(|(p, g)| TokenSequence::build(vocab, p, Some(g), g.len()))
        .collect()
}

/// Generates a token grid for `prompt` and decodes it through `codec`.
pub fn generate_image(
    model: &ArModel,
    codec: &Codec,
    prompt: &str,
    mode: Decoding,
    rng: &mut Rng64,
) -> Result<(Vec<u32>, RgbImage)> {
    if model.vocab.visual != codec.config().codebook_size() {
        return Err(Error::Config(format!(
            "generator has {} visual ids but the tokenizer has {} codes",
            model.vocab.visual,
            codec.config().codebook_size()
        )));
    }
    let grid = model.generate(prompt, codec.config().tokens_per_image(), mode, rng)?;
    let img = RgbImage::from_tensor(&codec.decode_tokens(&grid)?)?;
    Ok((grid, img))
}
