//! Binary lookup-free image tokenizer for text images, a masked
//! image-token generator over a unified text+visual vocabulary, a
//! deterministic bitmap text renderer, and reconstruction/OCR metrics.

pub mod armodel;
pub mod checkpoint;
pub mod codec;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod image;
pub mod nn;
pub mod ops;
pub mod optim;
pub mod quant;
pub mod tensor;
pub mod textrender;

pub use error::{Error, Result};
pub use tensor::{HasParams, Parameter, Tensor};

use rand::SeedableRng;

/// The single random generator type used throughout; its full state can be
/// captured and restored for bitwise-reproducible resumption.
pub type Rng64 = rand_chacha::ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> Rng64 {
    Rng64::seed_from_u64(seed)
}
