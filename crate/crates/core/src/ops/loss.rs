use crate::error::{ensure_dim, ensure_domain, Error, Result};
use crate::tensor::Tensor;

/// Mean negative log-likelihood over the rows where `mask` is set.
///
/// Returns the loss and the gradient with respect to `logits`; unmasked rows
/// get an exactly-zero gradient.
pub fn softmax_cross_entropy(
    logits: &Tensor,
    targets: &[usize],
    mask: &[bool],
) -> Result<(f32, Tensor)> {
    ensure_dim!(
        logits.rank() == 2,
        "logits must be N×V, got {:?}",
        logits.shape()
    );
    let (n, v) = (logits.shape()[0], logits.shape()[1]);
    ensure_dim!(
        targets.len() == n && mask.len() == n,
        "{n} logit rows but {} targets and {} mask entries",
        targets.len(),
        mask.len()
    );
    let count = mask.iter().filter(|&&m| m).count();
    ensure_domain!(count > 0, "cross-entropy over an empty mask is undefined");
    let mut grad = vec![0.0f32; n * v];
    let mut total = 0.0f64;
    let inv = 1.0 / count as f64;
    for r in 0..n {
        if !mask[r] {
            continue;
        }
        let t = targets[r];
        ensure_domain!(t < v, "target {t} outside vocabulary of {v}");
        let row = logits.row(r);
        let max = row.iter().fold(f32::NEG_INFINITY, |a, &b| a.max(b)) as f64;
        let sum: f64 = row.iter().map(|&z| (z as f64 - max).exp()).sum();
        let log_z = max + sum.ln();
        total += log_z - row[t] as f64;
        let g = &mut grad[r * v..(r + 1) * v];
        for (j, gv) in g.iter_mut().enumerate() {
            let p = (row[j] as f64 - log_z).exp();
            let onehot = if j == t { 1.0 } else { 0.0 };
            *gv = ((p - onehot) * inv) as f32;
        }
    }
    let loss = (total * inv) as f32;
    if !loss.is_finite() {
        return Err(Error::Numeric(format!("cross-entropy is {loss}")));
    }
    Ok((loss, Tensor::new(logits.shape(), grad)?))
}

/// Numerically stable log-softmax of one row, in `f64`.
pub fn log_softmax_row(row: &[f32]) -> Vec<f64> {
    let max = row.iter().fold(f32::NEG_INFINITY, |a, &b| a.max(b)) as f64;
    let log_z = max
        + row
            .iter()
            .map(|&z| (z as f64 - max).exp())
            .sum::<f64>()
            .ln();
    row.iter().map(|&z| z as f64 - log_z).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn confident_logit() {
        let logits = Tensor::new(&[1, 2], vec![10.0, 0.0]).unwrap();
        let (loss, _) = softmax_cross_entropy(&logits, &[0], &[true]).unwrap();
        // -ln σ(10) = ln(1 + e^-10)
        assert!((loss as f64 - 4.539_889_921_686_465e-5).abs() < 1e-9);
    }

    #[test]
    fn uniform_logits_give_ln_v() {
        let logits = Tensor::full(&[3, 4], 0.25);
        for t in 0..4 {
            let (loss, _) = softmax_cross_entropy(&logits, &[t; 3], &[true; 3]).unwrap();
            assert!((loss as f64 - 4f64.ln()).abs() < 1e-6);
        }
    }

    #[test]
    fn unmasked_rows_get_zero_gradient() {
        let logits = Tensor::from_fn(&[3, 5], |i| (i as f32 * 0.7).sin());
        let (_, g) = softmax_cross_entropy(&logits, &[1, 2, 3], &[true, false, true]).unwrap();
        assert!(g.row(1).iter().all(|v| v.to_bits() == 0));
        assert!(g.row(0).iter().any(|&v| v != 0.0));
    }

    #[test]
    fn empty_mask_is_a_domain_error() {
        let logits = Tensor::zeros(&[2, 3]);
        assert!(matches!(
            softmax_cross_entropy(&logits, &[0, 1], &[false, false]),
            Err(Error::Domain(_))
        ));
    }
}
