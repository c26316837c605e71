//! Mixed routing: each sample's features reach the projector either raw or
//! through a frozen vector quantizer, then get sign-quantized.

use rand::Rng;

use crate::error::{ensure_dim, ensure_domain, Result};
use crate::quant::binary::{binary_quantize, binary_quantize_backward, Quantized};
use crate::quant::projector::Projector;
use crate::quant::vq::{vq_encode, VqCodebook};
use crate::tensor::Tensor;
use crate::Rng64;

#[derive(Debug, Clone)]
pub struct HybridOutput {
    /// `true` where the sample took the vector-quantized branch.
    pub route_mask: Vec<bool>,
    /// Projector output, the continuous input to the sign quantizer.
    pub pre_quant: Tensor,
    pub codes: Quantized,
}

/// Draws one routing decision per sample. Always consumes exactly
/// `samples` uniforms so the rng stream does not depend on `route_prob`.
pub fn draw_routes(samples: usize, route_prob: f64, rng: &mut Rng64) -> Vec<bool> {
    (0..samples)
        .map(|_| rng.gen::<f64>() < route_prob)
        .collect()
}

/// `f` is `[B·T × D]` with `T = seq_len` tokens per sample.
pub fn hybrid_forward(
    f: &Tensor,
    seq_len: usize,
    vq: &mut VqCodebook,
    projector: &mut Projector,
    dims: u32,
    route_prob: f64,
    rng: &mut Rng64,
) -> Result<HybridOutput> {
    ensure_domain!(
        (0.0..=1.0).contains(&route_prob),
        "route probability {route_prob} outside [0, 1]"
    );
    ensure_dim!(
        f.rank() == 2 && seq_len > 0 && f.rows() % seq_len == 0,
        "features {:?} do not split into samples of {seq_len} tokens",
        f.shape()
    );
    let samples = f.rows() / seq_len;
    let route_mask = draw_routes(samples, route_prob, rng);
    let branch = route_features(f, seq_len, &route_mask, vq)?;
    let pre_quant = projector.forward(&branch, seq_len)?;
    let codes = binary_quantize(&pre_quant, dims)?;
    Ok(HybridOutput {
        route_mask,
        pre_quant,
        codes,
    })
}

/// Replaces the rows of routed samples by their nearest codebook entries.
pub fn route_features(
    f: &Tensor,
    seq_len: usize,
    route_mask: &[bool],
    vq: &mut VqCodebook,
) -> Result<Tensor> {
    let mut branch = f.detached();
    let width = f.last_dim() * seq_len;
    for (s, &routed) in route_mask.iter().enumerate() {
        if routed {
            let rows = Tensor::new(
                &[seq_len, f.last_dim()],
                f.data()[s * width..(s + 1) * width].to_vec(),
            )?;
            let q = vq_encode(&rows, vq)?;
            branch.data_mut()[s * width..(s + 1) * width].copy_from_slice(q.quantized.data());
        }
    }
    Ok(branch)
}

/// Gradient with respect to `f` given the gradient on the quantized output
/// and any extra gradient on the projector output (commitment, entropy).
///
/// Both quantizers are straight-through, so routed and raw samples receive
/// the projector's input gradient unchanged; the codebook gets nothing.
pub fn hybrid_backward(
    projector: &mut Projector,
    grad_quantized: &Tensor,
    grad_pre_quant: Option<&Tensor>,
) -> Result<Tensor> {
    let mut g = binary_quantize_backward(grad_quantized);
    if let Some(extra) = grad_pre_quant {
        g.ensure_same_shape(extra, "pre-quantization gradient")?;
        for (a, b) in g.data_mut().iter_mut().zip(extra.data()) {
            *a += b;
        }
    }
    projector.backward(&g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quant::projector::ProjectorDepth;
    use crate::seeded_rng;

    fn setup() -> (Tensor, VqCodebook, Projector) {
        let mut rng = seeded_rng(11);
        let f = Tensor::randn(&[4 * 6, 8], 1.0, &mut rng);
        let vq = VqCodebook::random_normalized(32, 8, &mut rng);
        let proj = Projector::new(ProjectorDepth::Single, 8, 5, &mut rng);
        (f, vq, proj)
    }

    #[test]
    fn never_routing_equals_direct_path() {
        let (f, mut vq, mut proj) = setup();
        let out = hybrid_forward(&f, 6, &mut vq, &mut proj, 5, 0.0, &mut seeded_rng(1)).unwrap();
        let direct = binary_quantize(&proj.forward(&f, 6).unwrap(), 5).unwrap();
        assert_eq!(out.codes.indices, direct.indices);
        assert_eq!(out.codes.quantized, direct.quantized);
        assert!(out.route_mask.iter().all(|r| !r));
    }

    #[test]
    fn always_routing_feeds_codebook_entries() {
        let (f, mut vq, mut proj) = setup();
        let out = hybrid_forward(&f, 6, &mut vq, &mut proj, 5, 1.0, &mut seeded_rng(1)).unwrap();
        assert!(out.route_mask.iter().all(|&r| r));
        let mut vq2 = vq.clone();
        let q = vq_encode(&f, &mut vq2).unwrap();
        let expect = binary_quantize(&proj.forward(&q.quantized, 6).unwrap(), 5).unwrap();
        assert_eq!(out.codes.indices, expect.indices);
    }

    #[test]
    fn route_mask_is_reproducible() {
        let (f, mut vq, mut proj) = setup();
        let a = hybrid_forward(&f, 6, &mut vq, &mut proj, 5, 0.5, &mut seeded_rng(9)).unwrap();
        let b = hybrid_forward(&f, 6, &mut vq, &mut proj, 5, 0.5, &mut seeded_rng(9)).unwrap();
        assert_eq!(a.route_mask, b.route_mask);
        assert_eq!(a.codes.indices, b.codes.indices);
    }

    #[test]
    fn rejects_bad_probability() {
        let (f, mut vq, mut proj) = setup();
        assert!(hybrid_forward(&f, 6, &mut vq, &mut proj, 5, 1.5, &mut seeded_rng(0)).is_err());
    }
}
