use crate::error::{ensure_dim, Result};
use crate::tensor::Tensor;

/// Saved statistics for [`layer_norm_backward`].
#[derive(Debug, Clone)]
pub struct LayerNormCache {
    pub normalized: Vec<f32>,
    pub inv_std: Vec<f32>,
}

/// Normalizes each last-axis row to zero mean and unit variance, then
/// applies `gain` and `bias`.
pub fn layer_norm(
    input: &Tensor,
    gain: &Tensor,
    bias: &Tensor,
    eps: f32,
) -> Result<(Tensor, LayerNormCache)> {
    let d = input.last_dim();
    ensure_dim!(d > 0, "layer_norm over an empty axis");
    ensure_dim!(
        gain.shape() == [d] && bias.shape() == [d],
        "layer_norm affine shapes {:?}/{:?} do not match last axis {d}",
        gain.shape(),
        bias.shape()
    );
    let rows = input.rows();
    let mut out = vec![0.0; input.numel()];
    let mut normalized = vec![0.0; input.numel()];
    let mut inv_std = vec![0.0; rows];
    for r in 0..rows {
        let x = input.row(r);
        let mean = x.iter().map(|&v| v as f64).sum::<f64>() / d as f64;
        let var = x.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / d as f64;
        let istd = 1.0 / (var + eps as f64).sqrt();
        inv_std[r] = istd as f32;
        for j in 0..d {
            let xh = ((x[j] as f64 - mean) * istd) as f32;
            normalized[r * d + j] = xh;
            out[r * d + j] = xh * gain.data()[j] + bias.data()[j];
        }
    }
    Ok((
        Tensor::new(input.shape(), out)?,
        LayerNormCache {
            normalized,
            inv_std,
        },
    ))
}

/// Returns `(d_input, d_gain, d_bias)`.
pub fn layer_norm_backward(
    cache: &LayerNormCache,
    gain: &Tensor,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let d = gain.numel();
    ensure_dim!(
        grad_out.numel() == cache.normalized.len() && grad_out.last_dim() == d,
        "layer_norm gradient shape {:?}",
        grad_out.shape()
    );
    let rows = grad_out.rows();
    let mut dx = vec![0.0; grad_out.numel()];
    let mut dg = vec![0.0; d];
    let mut db = vec![0.0; d];
    let mut dxh = vec![0.0f32; d];
    for r in 0..rows {
        let dy = grad_out.row(r);
        let xh = &cache.normalized[r * d..(r + 1) * d];
        let mut sum_dxh = 0.0f64;
        let mut sum_dxh_xh = 0.0f64;
        for j in 0..d {
            dg[j] += dy[j] * xh[j];
            db[j] += dy[j];
            dxh[j] = dy[j] * gain.data()[j];
            sum_dxh += dxh[j] as f64;
            sum_dxh_xh += dxh[j] as f64 * xh[j] as f64;
        }
        let scale = cache.inv_std[r] as f64 / d as f64;
        for j in 0..d {
            dx[r * d + j] =
                (scale * (d as f64 * dxh[j] as f64 - sum_dxh - xh[j] as f64 * sum_dxh_xh)) as f32;
        }
    }
    Ok((
        Tensor::new(grad_out.shape(), dx)?,
        Tensor::new(&[d], dg)?,
        Tensor::new(&[d], db)?,
    ))
}
