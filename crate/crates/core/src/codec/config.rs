use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quant::{BinaryQuantizerConfig, ProjectorDepth};

/// Independently freezable parts of the tokenizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Component {
    Encoder,
    Vq,
    Projector,
    /// The code embedding that lifts quantized codes into decoder space.
    Quantizer2,
    Decoder,
}

impl Component {
    pub const ALL: [Component; 5] = [
        Component::Encoder,
        Component::Vq,
        Component::Projector,
        Component::Quantizer2,
        Component::Decoder,
    ];

    /// Parameter-name prefix owned by this component.
    pub fn prefix(self) -> &'static str {
        match self {
            Component::Encoder => "encoder.",
            Component::Vq => "vq.",
            Component::Projector => "projector.",
            Component::Quantizer2 => "quantizer2.",
            Component::Decoder => "decoder.",
        }
    }

    pub fn of_param(name: &str) -> Option<Component> {
        Self::ALL.into_iter().find(|c| name.starts_with(c.prefix()))
    }
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = self.prefix();
        f.write_str(&s[..s.len() - 1])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VqConfig {
    pub size: usize,
    pub commitment_weight: f32,
}

impl Default for VqConfig {
    fn default() -> Self {
        Self {
            size: 256,
            commitment_weight: 0.25,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum QuantizerConfig {
    Binary(BinaryQuantizerConfig),
    Vq(VqConfig),
}

/// Mixed raw / vector-quantized routing in front of the projector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HybridConfig {
    pub route_prob: f64,
    pub vq_size: usize,
    /// Route through the vector quantizer when tokenizing for inference.
    pub vq_at_inference: bool,
}

impl Default for HybridConfig {
    fn default() -> Self {
        Self {
            route_prob: 0.5,
            vq_size: 256,
            vq_at_inference: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CodecConfig {
    pub image_size: usize,
    pub channels: usize,
    pub downsample_factor: usize,
    pub base_width: usize,
    /// Encoder output width `D`.
    pub feature_dim: usize,
    pub quantizer: QuantizerConfig,
    pub hybrid: Option<HybridConfig>,
    pub projector_depth: ProjectorDepth,
    pub freeze: BTreeSet<Component>,
}

impl Default for CodecConfig {
    fn default() -> Self {
        Self {
            image_size: 64,
            channels: 3,
            downsample_factor: 4,
            base_width: 32,
            feature_dim: 32,
            quantizer: QuantizerConfig::Binary(BinaryQuantizerConfig::default()),
            hybrid: Some(HybridConfig::default()),
            projector_depth: ProjectorDepth::Single,
            freeze: BTreeSet::new(),
        }
    }
}

impl CodecConfig {
    pub fn grid_size(&self) -> usize {
        self.image_size / self.downsample_factor
    }

    pub fn tokens_per_image(&self) -> usize {
        self.grid_size() * self.grid_size()
    }

    pub fn stages(&self) -> usize {
        self.downsample_factor.trailing_zeros() as usize
    }

    /// Width of one quantized code vector.
    pub fn code_dim(&self) -> usize {
        match &self.quantizer {
            QuantizerConfig::Binary(b) => b.dims as usize,
            QuantizerConfig::Vq(_) => self.feature_dim,
        }
    }

    pub fn codebook_size(&self) -> usize {
        match &self.quantizer {
            QuantizerConfig::Binary(b) => b.codebook_size(),
            QuantizerConfig::Vq(v) => v.size,
        }
    }

    pub fn binary(&self) -> Option<&BinaryQuantizerConfig> {
        match &self.quantizer {
            QuantizerConfig::Binary(b) => Some(b),
            QuantizerConfig::Vq(_) => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.channels != 3 {
            return bad(format!(
                "only 3-channel images are supported, got {}",
                self.channels
            ));
        }
        if !self.downsample_factor.is_power_of_two() {
            return bad(format!(
                "downsample factor {} must be a power of two",
                self.downsample_factor
            ));
        }
        if self.image_size == 0 || self.image_size % self.downsample_factor != 0 {
            return bad(format!(
                "image size {} not divisible by downsample factor {}",
                self.image_size, self.downsample_factor
            ));
        }
        if self.base_width == 0 || self.feature_dim == 0 {
            return bad("widths must be positive".into());
        }
        match &self.quantizer {
            QuantizerConfig::Binary(b) => b.validate()?,
            QuantizerConfig::Vq(v) => {
                if v.size == 0 {
                    return bad("vector codebook must be non-empty".into());
                }
                if self.hybrid.is_some() {
                    return bad("mixed routing requires the binary quantizer".into());
                }
            }
        }
        if let Some(h) = &self.hybrid {
            if !(0.0..=1.0).contains(&h.route_prob) || h.vq_size == 0 {
                return bad(format!("invalid routing settings {h:?}"));
            }
        }
        Ok(())
    }
}
