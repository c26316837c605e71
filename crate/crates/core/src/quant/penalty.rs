//! Entropy and commitment regularizers for the binary quantizer.

use crate::error::{ensure_dim, ensure_domain, Result};
use crate::ops::activation::sigmoid;
use crate::quant::binary::BinaryQuantizerConfig;
use crate::tensor::Tensor;

/// Binary entropy (nats) of `σ(z)`, stable for large `|z|`.
fn entropy_of_logit(z: f64) -> f64 {
    // H(σ(z)) = softplus(z) − z·σ(z)
    let softplus = if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    };
    softplus - z * sigmoid(z)
}

fn binary_entropy(p: f64) -> f64 {
    let mut h = 0.0;
    if p > 0.0 {
        h -= p * p.ln();
    }
    if p < 1.0 {
        h -= (1.0 - p) * (1.0 - p).ln();
    }
    h
}

/// Value and gradient of the factorized entropy penalty on `x[N×d]`.
///
/// With `p = σ(2x/τ)` per bit, the penalty is
/// `w_sample · mean H(p) − w_batch · mean_k H(mean_n p)`: confident bits per
/// sample, balanced bit usage across the batch.
pub fn entropy_penalty(x: &Tensor, cfg: &BinaryQuantizerConfig) -> Result<(f32, Tensor)> {
    let d = cfg.dims as usize;
    ensure_dim!(
        x.last_dim() == d,
        "entropy penalty expects width {d}, got {}",
        x.last_dim()
    );
    let n = x.rows();
    ensure_domain!(n >= 1, "entropy penalty needs at least one row");
    x.ensure_finite("entropy penalty input")?;
    let tau = cfg.temperature as f64;
    let (ws, wb) = (cfg.entropy_weight as f64, cfg.entropy_batch_weight as f64);

    let mut per_sample = 0.0f64;
    let mut mean_p = vec![0.0f64; d];
    for r in 0..n {
        for (k, &v) in x.row(r).iter().enumerate() {
            let z = 2.0 * v as f64 / tau;
            per_sample += entropy_of_logit(z);
            mean_p[k] += sigmoid(z);
        }
    }
    per_sample /= (n * d) as f64;
    for q in mean_p.iter_mut() {
        *q /= n as f64;
    }
    let batch = mean_p.iter().map(|&q| binary_entropy(q)).sum::<f64>() / d as f64;

    // dH(q)/dq = ln((1−q)/q); clamp so saturated bits give finite slopes.
    let batch_slope: Vec<f64> = mean_p
        .iter()
        .map(|&q| {
            let q = q.clamp(1e-12, 1.0 - 1e-12);
            ((1.0 - q) / q).ln()
        })
        .collect();
    let mut grad = vec![0.0f32; x.numel()];
    for r in 0..n {
        for (k, &v) in x.row(r).iter().enumerate() {
            let z = 2.0 * v as f64 / tau;
            let p = sigmoid(z);
            let dp_dx = p * (1.0 - p) * 2.0 / tau;
            // dH(σ(z))/dz = −z·σ(z)(1−σ(z))
            let d_sample = -z * dp_dx / (n * d) as f64;
            let d_batch = batch_slope[k] * dp_dx / (n * d) as f64;
            grad[r * d + k] = (ws * d_sample - wb * d_batch) as f32;
        }
    }
    let value = (ws * per_sample - wb * batch) as f32;
    Ok((value, Tensor::new(x.shape(), grad)?))
}

/// Gradients of [`commitment_loss`] with respect to both inputs.
#[derive(Debug, Clone)]
pub struct CommitmentGrads {
    pub x: Tensor,
    /// Always zero: the quantized side is a stop-gradient.
    pub quantized: Tensor,
}

/// `β · mean((x − sg(quantized))²)`.
pub fn commitment_loss(
    x: &Tensor,
    quantized: &Tensor,
    beta: f32,
) -> Result<(f32, CommitmentGrads)> {
    x.ensure_same_shape(quantized, "commitment loss")?;
    let n = x.numel() as f64;
    let mut sum = 0.0f64;
    let mut gx = vec![0.0f32; x.numel()];
    for (i, (&a, &b)) in x.data().iter().zip(quantized.data()).enumerate() {
        let diff = a as f64 - b as f64;
        sum += diff * diff;
        gx[i] = (2.0 * beta as f64 * diff / n) as f32;
    }
    Ok((
        (beta as f64 * sum / n) as f32,
        CommitmentGrads {
            x: Tensor::new(x.shape(), gx)?,
            quantized: Tensor::zeros(quantized.shape()),
        },
    ))
}
