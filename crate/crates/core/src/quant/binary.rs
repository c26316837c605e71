//! Per-dimension sign quantization and the bit-packed token index.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_dim, ensure_domain, Error, Result};
use crate::tensor::Tensor;

pub const MAX_DIMS: u32 = 24;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BinaryQuantizerConfig {
    /// Code width `d`; the implicit codebook has `2^d` entries.
    pub dims: u32,
    pub entropy_weight: f32,
    pub entropy_batch_weight: f32,
    pub commitment_weight: f32,
    pub temperature: f32,
}

impl Default for BinaryQuantizerConfig {
    fn default() -> Self {
        Self {
            dims: 13,
            entropy_weight: 0.1,
            entropy_batch_weight: 0.1,
            commitment_weight: 0.25,
            temperature: 1.0,
        }
    }
}

impl BinaryQuantizerConfig {
    pub fn with_dims(dims: u32) -> Self {
        Self {
            dims,
            ..Self::default()
        }
    }

    pub fn codebook_size(&self) -> usize {
        1usize << self.dims
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims == 0 || self.dims > MAX_DIMS {
            return Err(Error::Config(format!(
                "code width {} outside 1..={MAX_DIMS}",
                self.dims
            )));
        }
        if self.entropy_weight < 0.0
            || self.entropy_batch_weight < 0.0
            || self.commitment_weight < 0.0
            || self.temperature <= 0.0
        {
            return Err(Error::Config(format!("invalid quantizer weights {self:?}")));
        }
        Ok(())
    }
}

/// A `±1` code together with its token index.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryCode {
    signs: Vec<i8>,
    index: u32,
}

impl BinaryCode {
    pub fn from_signs(signs: Vec<i8>) -> Result<Self> {
        ensure_domain!(
            !signs.is_empty() && signs.len() as u32 <= MAX_DIMS,
            "code width {} outside 1..={MAX_DIMS}",
            signs.len()
        );
        ensure_domain!(
            signs.iter().all(|&s| s == 1 || s == -1),
            "code entries must be ±1"
        );
        let index = signs
            .iter()
            .enumerate()
            .filter(|(_, &s)| s == 1)
            .fold(0u32, |acc, (k, _)| acc | (1 << k));
        Ok(Self { signs, index })
    }

    pub fn signs(&self) -> &[i8] {
        &self.signs
    }

    pub fn index(&self) -> u32 {
        self.index
    }

    pub fn dims(&self) -> u32 {
        self.signs.len() as u32
    }

    pub fn to_f32(&self) -> Vec<f32> {
        self.signs.iter().map(|&s| s as f32).collect()
    }
}

/// `+1` iff `x > 0`; zero maps to `-1`.
#[inline]
pub fn sign(x: f32) -> f32 {
    if x > 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// Bit `k` of the index is set iff component `k` is positive.
pub fn code_index(x: &[f32]) -> u32 {
    x.iter()
        .enumerate()
        .filter(|(_, &v)| v > 0.0)
        .fold(0u32, |acc, (k, _)| acc | (1 << k))
}

pub fn index_to_code(index: u32, dims: u32) -> Result<BinaryCode> {
    ensure_domain!(
        dims >= 1 && dims <= MAX_DIMS,
        "code width {dims} outside 1..={MAX_DIMS}"
    );
    ensure_domain!(
        (index as u64) < (1u64 << dims),
        "index {index} outside [0, 2^{dims})"
    );
    let signs = (0..dims)
        .map(|k| if index >> k & 1 == 1 { 1 } else { -1 })
        .collect();
    Ok(BinaryCode { signs, index })
}

/// Output of [`binary_quantize`]: one index per position plus the `±1`
/// tensor, which equals the signs in the forward pass.
#[derive(Debug, Clone)]
pub struct Quantized {
    pub indices: Vec<u32>,
    pub quantized: Tensor,
}

impl Quantized {
    pub fn codes(&self) -> Vec<BinaryCode> {
        (0..self.indices.len())
            .map(|r| BinaryCode {
                signs: self.quantized.row(r).iter().map(|&v| v as i8).collect(),
                index: self.indices[r],
            })
            .collect()
    }
}

/// Quantizes every last-axis row of `x` (width `dims`) to signs.
pub fn binary_quantize(x: &Tensor, dims: u32) -> Result<Quantized> {
    ensure_dim!(
        x.last_dim() == dims as usize,
        "last axis {} does not match code width {dims}",
        x.last_dim()
    );
    x.ensure_finite("binary_quantize input")?;
    let quantized = x.map(sign);
    let indices = (0..x.rows()).map(|r| code_index(x.row(r))).collect();
    Ok(Quantized { indices, quantized })
}

/// Straight-through backward: the upstream gradient passes unchanged.
pub fn binary_quantize_backward(grad_out: &Tensor) -> Tensor {
    grad_out.detached()
}

/// Stacks the codes of `indices` into a `[n, dims]` tensor of `±1`.
pub fn indices_to_tensor(indices: &[u32], dims: u32) -> Result<Tensor> {
    let mut data = Vec::with_capacity(indices.len() * dims as usize);
    for &i in indices {
        data.extend(index_to_code(i, dims)?.to_f32());
    }
    Tensor::new(&[indices.len(), dims as usize], data)
}
