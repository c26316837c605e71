//! Bitmap-font text rendering, corpus generation and the template OCR.

pub mod corpus;
pub mod font;
pub mod ocr;
pub mod render;

pub use corpus::{
    generate_corpus, plan_corpus, prompt_for, variables_phrase, CorpusConfig, CorpusManifest,
    ManifestRecord, LONG_TEXT_WORDS,
};
pub use ocr::{char_accuracy, f_measure, ocr_oracle, ocr_rows, word_accuracy};
pub use render::{layout, render, Alignment, Geometry, RenderSpec};
