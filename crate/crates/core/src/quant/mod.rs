//! Sign quantizer, its regularizers, the baseline vector quantizer, the
//! feature projector and the mixed routing path that ties them together.

pub mod binary;
pub mod hybrid;
pub mod penalty;
pub mod projector;
pub mod stats;
pub mod vq;

pub use binary::{
    binary_quantize, binary_quantize_backward, index_to_code, BinaryCode, BinaryQuantizerConfig,
    Quantized,
};
pub use hybrid::{hybrid_backward, hybrid_forward, HybridOutput};
pub use penalty::{commitment_loss, entropy_penalty, CommitmentGrads};
pub use projector::{Projector, ProjectorDepth};
pub use stats::{update_stats, utilization, CodebookStats};
pub use vq::{vq_encode, VqCodebook, VqOutput};
