//! Unified vocabulary: visual ids first, then special ids, then one id per
//! printable ASCII byte.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_domain, Error, Result};
use crate::textrender::font::{is_printable, FIRST_PRINTABLE, LAST_PRINTABLE};

pub const SPECIAL_COUNT: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabLayout {
    /// Number of visual ids, `2^d` for a `d`-bit tokenizer.
    pub visual: usize,
    pub n_text: usize,
}

impl VocabLayout {
    /// Layout for a `d`-bit binary tokenizer and the printable ASCII alphabet.
    pub fn for_bits(d: u32) -> Result<Self> {
        ensure_domain!((1..=24).contains(&d), "code width {d} outside 1..=24");
        Ok(Self::new(1usize << d))
    }

    pub fn new(visual: usize) -> Self {
        Self {
            visual,
            n_text: (LAST_PRINTABLE - FIRST_PRINTABLE + 1) as usize,
        }
    }

    pub fn pad(&self) -> u32 {
        self.visual as u32
    }

    pub fn bos(&self) -> u32 {
        self.visual as u32 + 1
    }

    /// Begin-of-image delimiter.
    pub fn boi(&self) -> u32 {
        self.visual as u32 + 2
    }

    /// End-of-image delimiter.
    pub fn eoi(&self) -> u32 {
        self.visual as u32 + 3
    }

    pub fn text_offset(&self) -> u32 {
        (self.visual + SPECIAL_COUNT) as u32
    }

    pub fn total(&self) -> usize {
        self.visual + SPECIAL_COUNT + self.n_text
    }

    pub fn is_visual(&self, id: u32) -> bool {
        (id as usize) < self.visual
    }

    pub fn is_text(&self, id: u32) -> bool {
        id >= self.text_offset() && (id as usize) < self.total()
    }

    pub fn text_tokenize(&self, s: &str) -> Result<Vec<u32>> {
        s.bytes()
            .map(|b| {
                if is_printable(b) {
                    Ok(self.text_offset() + (b - FIRST_PRINTABLE) as u32)
                } else {
                    Err(Error::Encoding(format!(
                        "byte {b:#04x} is not printable ASCII"
                    )))
                }
            })
            .collect()
    }

    pub fn text_detokenize(&self, ids: &[u32]) -> Result<String> {
        ids.iter()
            .map(|&id| {
                if self.is_text(id) {
                    Ok((FIRST_PRINTABLE + (id - self.text_offset()) as u8) as char)
                } else {
                    Err(Error::Domain(format!("id {id} is not a text token")))
                }
            })
            .collect()
    }
}

/// Token ids with the location of the image span.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
    /// `(start, length)` of the image tokens inside `ids`.
    pub image_span: (usize, usize),
}

impl TokenSequence {
    /// `[BOS] prompt [BOI] image [EOI]`; `image = None` fills the span with PAD.
    pub fn build(
        vocab: &VocabLayout,
        prompt: &str,
        image: Option<&[u32]>,
        tokens: usize,
    ) -> Result<Self> {
        let mut ids = vec![vocab.bos()];
        ids.extend(vocab.text_tokenize(prompt)?);
        ids.push(vocab.boi());
        let start = ids.len();
        match image {
            Some(img) => {
                ensure_domain!(
                    img.len() == tokens,
                    "image has {} tokens, expected {tokens}",
                    img.len()
                );
                if let Some(&bad) = img.iter().find(|&&t| !vocab.is_visual(t)) {
                    return Err(Error::Domain(format!("id {bad} is not a visual token")));
                }
                ids.extend_from_slice(img);
            }
            None => ids.extend(std::iter::repeat(vocab.pad()).take(tokens)),
        }
        ids.push(vocab.eoi());
        Ok(Self {
            ids,
            image_span: (start, tokens),
        })
    }

    pub fn image(&self) -> &[u32] {
        &self.ids[self.image_span.0..self.image_span.0 + self.image_span.1]
    }

    /// Copy with every image id replaced by PAD.
    pub fn masked(&self, vocab: &VocabLayout) -> Self {
        let mut ids = self.ids.clone();
        let (s, n) = self.image_span;
        ids[s..s + n].fill(vocab.pad());
        Self {
            ids,
            image_span: self.image_span,
        }
    }
}
