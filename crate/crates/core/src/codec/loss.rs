use serde::{Deserialize, Serialize};

use crate::codec::config::{CodecConfig, QuantizerConfig};
use crate::error::Result;
use crate::quant::{commitment_loss, entropy_penalty};
use crate::tensor::Tensor;

/// Per-term values of one tokenizer loss evaluation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f32,
    pub reconstruction: f32,
    pub commitment: f32,
    pub entropy: f32,
    /// Codebook term of the vector-quantizer baseline; zero otherwise.
    pub codebook: f32,
}

#[derive(Debug, Clone)]
pub struct LossGrads {
    pub reconstruction: Tensor,
    pub pre_quant: Tensor,
}

/// Mean absolute error and its (sub)gradient, zero where the values agree.
pub fn l1_loss(target: &Tensor, prediction: &Tensor) -> Result<(f32, Tensor)> {
    target.ensure_same_shape(prediction, "L1 loss")?;
    let n = target.numel() as f64;
    let mut sum = 0.0f64;
    let step = (1.0 / n) as f32;
    let grad: Vec<f32> = target
        .data()
        .iter()
        .zip(prediction.data())
        .map(|(&t, &p)| {
            sum += (p as f64 - t as f64).abs();
            if p > t {
                step
            } else if p < t {
                -step
            } else {
                0.0
            }
        })
        .collect();
    Ok(((sum / n) as f32, Tensor::new(prediction.shape(), grad)?))
}

/// L1 reconstruction plus commitment plus (binary only) entropy penalty.
pub fn tokenizer_loss(
    image: &Tensor,
    reconstruction: &Tensor,
    x_pre_quant: &Tensor,
    quantized: &Tensor,
    cfg: &CodecConfig,
) -> Result<(LossBreakdown, LossGrads)> {
    let (rec, grad_rec) = l1_loss(image, reconstruction)?;
    let beta = match &cfg.quantizer {
        QuantizerConfig::Binary(b) => b.commitment_weight,
        QuantizerConfig::Vq(v) => v.commitment_weight,
    };
    let (commit, cg) = commitment_loss(x_pre_quant, quantized, beta)?;
    let mut grad_pre = cg.x;
    let mut entropy = 0.0;
    if let QuantizerConfig::Binary(b) = &cfg.quantizer {
        let (value, g) = entropy_penalty(x_pre_quant, b)?;
        entropy = value;
        for (a, b) in grad_pre.data_mut().iter_mut().zip(g.data()) {
            *a += b;
        }
    }
    let breakdown = LossBreakdown {
        total: rec + commit + entropy,
        reconstruction: rec,
        commitment: commit,
        entropy,
        codebook: 0.0,
    };
    Ok((
        breakdown,
        LossGrads {
            reconstruction: grad_rec,
            pre_quant: grad_pre,
        },
    ))
}
