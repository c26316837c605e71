//! Maps encoder features to code logits: one affine layer, or a stack of
//! transformer blocks over each image's token sequence followed by one.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_dim, Error, Result};
use crate::nn::{Linear, TransformerBlock};
use crate::tensor::{HasParams, Parameter, Tensor};
use crate::Rng64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub enum ProjectorDepth {
    /// Single fully connected layer.
    Single,
    /// Three transformer blocks, then the output layer.
    Transformer3,
}

impl TryFrom<u32> for ProjectorDepth {
    type Error = Error;
    fn try_from(v: u32) -> Result<Self> {
        match v {
            1 => Ok(Self::Single),
            3 => Ok(Self::Transformer3),
            other => Err(Error::Config(format!(
                "projector depth must be 1 or 3, got {other}"
            ))),
        }
    }
}

impl From<ProjectorDepth> for u32 {
    fn from(d: ProjectorDepth) -> u32 {
        match d {
            ProjectorDepth::Single => 1,
            ProjectorDepth::Transformer3 => 3,
        }
    }
}

pub const PROJECTOR_HEADS: usize = 4;

#[derive(Debug)]
pub struct Projector {
    pub blocks: Vec<TransformerBlock>,
    pub out: Linear,
}

impl Projector {
    pub fn new(
        depth: ProjectorDepth,
        feature_dim: usize,
        code_dim: usize,
        rng: &mut Rng64,
    ) -> Self {
        let blocks = match depth {
            ProjectorDepth::Single => Vec::new(),
            ProjectorDepth::Transformer3 => (0..3)
                .map(|i| {
                    let heads = if feature_dim % PROJECTOR_HEADS == 0 {
                        PROJECTOR_HEADS
                    } else {
                        1
                    };
                    TransformerBlock::new(
                        &format!("projector.block{i}"),
                        feature_dim,
                        heads,
                        2 * feature_dim,
                        0.0,
                        false,
                        rng,
                    )
                })
                .collect(),
        };
        Self {
            blocks,
            out: Linear::new("projector.out", feature_dim, code_dim, rng),
        }
    }

    /// Single layer with identity weights (requires equal widths).
    pub fn identity(dim: usize) -> Self {
        let eye = Tensor::from_fn(&[dim, dim], |i| if i / dim == i % dim { 1.0 } else { 0.0 });
        Self {
            blocks: Vec::new(),
            out: Linear::from_parts("projector.out", eye, Tensor::zeros(&[dim])),
        }
    }

    pub fn depth(&self) -> ProjectorDepth {
        if self.blocks.is_empty() {
            ProjectorDepth::Single
        } else {
            ProjectorDepth::Transformer3
        }
    }

    /// `f` is `[N×D]`, consecutive groups of `seq_len` rows forming one
    /// image's token sequence.
    pub fn forward(&mut self, f: &Tensor, seq_len: usize) -> Result<Tensor> {
        ensure_dim!(
            f.rank() == 2,
            "projector input must be N×D, got {:?}",
            f.shape()
        );
        let mut h = f.detached();
        for block in &mut self.blocks {
            h = block.forward(&h, seq_len, None)?;
        }
        self.out.forward(&h)
    }

    pub fn infer(&self, f: &Tensor, seq_len: usize) -> Result<Tensor> {
        let mut h = f.detached();
        for block in &self.blocks {
            h = block.infer(&h, seq_len)?;
        }
        self.out.apply(&h)
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let mut g = self.out.backward(grad_out)?;
        for block in self.blocks.iter_mut().rev() {
            g = block.backward(&g)?;
        }
        Ok(g)
    }
}

impl HasParams for Projector {
    fn params(&self) -> Vec<&Parameter> {
        let mut v: Vec<&Parameter> = self.blocks.iter().flat_map(|b| b.params()).collect();
        v.extend(self.out.params());
        v
    }
    fn params_mut(&mut self) -> Vec<&mut Parameter> {
        let mut v: Vec<&mut Parameter> = self
            .blocks
            .iter_mut()
            .flat_map(|b| b.params_mut())
            .collect();
        v.extend(self.out.params_mut());
        v
    }
}
