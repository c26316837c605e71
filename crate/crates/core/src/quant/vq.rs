//! Nearest-neighbour vector quantization against a finite codebook.

use crate::error::{ensure_dim, ensure_domain, Result};
use crate::tensor::{HasParams, Parameter, Tensor};
use crate::Rng64;

#[derive(Debug, Clone)]
pub struct VqCodebook {
    pub entries: Parameter,
    pub usage_counts: Vec<u64>,
}

/// Result of [`vq_encode`]; `quantized` rows are copies of the chosen entries.
#[derive(Debug, Clone)]
pub struct VqOutput {
    pub indices: Vec<u32>,
    pub quantized: Tensor,
}

impl VqCodebook {
    pub fn new(entries: Tensor) -> Result<Self> {
        ensure_dim!(
            entries.rank() == 2,
            "codebook must be K×D, got {:?}",
            entries.shape()
        );
        let k = entries.shape()[0];
        Ok(Self {
            entries: Parameter::new("vq.codebook", entries),
            usage_counts: vec![0; k],
        })
    }

    /// Unit-normal rows, each rescaled to unit L2 norm.
    pub fn random_normalized(size: usize, dim: usize, rng: &mut Rng64) -> Self {
        let mut t = Tensor::randn(&[size, dim], 1.0, rng);
        for r in 0..size {
            let row = t.row_mut(r);
            let norm = row.iter().map(|&v| v * v).sum::<f32>().sqrt().max(1e-12);
            row.iter_mut().for_each(|v| *v /= norm);
        }
        Self::new(t).expect("rank-2 codebook")
    }

    pub fn size(&self) -> usize {
        self.entries.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.entries.shape()[1]
    }

    pub fn entry(&self, i: usize) -> &[f32] {
        self.entries.value().row(i)
    }

    /// Index of the closest entry; ties go to the lowest index.
    pub fn nearest(&self, v: &[f32]) -> usize {
        let mut best = (f64::INFINITY, 0usize);
        for i in 0..self.size() {
            let dist: f64 = self
                .entry(i)
                .iter()
                .zip(v)
                .map(|(&e, &x)| {
                    let d = e as f64 - x as f64;
                    d * d
                })
                .sum();
            if dist < best.0 {
                best = (dist, i);
            }
        }
        best.1
    }
}

impl HasParams for VqCodebook {
    fn params(&self) -> Vec<&Parameter> {
        vec![&self.entries]
    }
    fn params_mut(&mut self) -> Vec<&mut Parameter> {
        vec![&mut self.entries]
    }
}

/// Replaces every last-axis row of `f` by its nearest codebook entry and
/// bumps that entry's usage count. The backward pass is straight-through.
pub fn vq_encode(f: &Tensor, codebook: &mut VqCodebook) -> Result<VqOutput> {
    ensure_domain!(codebook.size() > 0, "empty codebook");
    ensure_dim!(
        f.last_dim() == codebook.dim(),
        "feature width {} does not match codebook width {}",
        f.last_dim(),
        codebook.dim()
    );
    f.ensure_finite("vq_encode input")?;
    let d = codebook.dim();
    let mut indices = Vec::with_capacity(f.rows());
    let mut data = Vec::with_capacity(f.numel());
    for r in 0..f.rows() {
        let i = codebook.nearest(f.row(r));
        codebook.usage_counts[i] += 1;
        indices.push(i as u32);
        data.extend_from_slice(&codebook.entry(i)[..d]);
    }
    Ok(VqOutput {
        indices,
        quantized: Tensor::new(f.shape(), data)?,
    })
}

/// Value of `mean((sg(f) − e)²)` and its gradient into the codebook rows.
pub fn codebook_loss(f: &Tensor, out: &VqOutput, codebook: &VqCodebook) -> Result<(f32, Vec<f32>)> {
    f.ensure_same_shape(&out.quantized, "codebook loss")?;
    let d = codebook.dim();
    let n = f.numel() as f64;
    let mut grad = vec![0.0f32; codebook.size() * d];
    let mut sum = 0.0f64;
    for (r, &idx) in out.indices.iter().enumerate() {
        let g = &mut grad[idx as usize * d..(idx as usize + 1) * d];
        for (j, (&q, &x)) in out.quantized.row(r).iter().zip(f.row(r)).enumerate() {
            let diff = q as f64 - x as f64;
            sum += diff * diff;
            g[j] += (2.0 * diff / n) as f32;
        }
    }
    Ok(((sum / n) as f32, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use crate::seeded_rng;

    #[test]
    fn exact_entry_is_found() {
        let mut cb = VqCodebook::random_normalized(16, 4, &mut seeded_rng(0));
        let f = Tensor::new(&[1, 4], cb.entry(7).to_vec()).unwrap();
        let out = vq_encode(&f, &mut cb).unwrap();
        assert_eq!(out.indices, vec![7]);
        assert_eq!(out.quantized.data(), cb.entry(7));
        assert_eq!(cb.usage_counts[7], 1);
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let mut e = Tensor::full(&[6, 2], 10.0);
        e.row_mut(2).copy_from_slice(&[1.0, 0.0]);
        e.row_mut(5).copy_from_slice(&[-1.0, 0.0]);
        let mut cb = VqCodebook::new(e).unwrap();
        let out = vq_encode(&Tensor::zeros(&[1, 2]), &mut cb).unwrap();
        assert_eq!(out.indices, vec![2]);
    }

    #[test]
    fn rows_are_unit_norm() {
        let cb = VqCodebook::random_normalized(8, 5, &mut seeded_rng(1));
        for i in 0..8 {
            let n: f32 = cb.entry(i).iter().map(|v| v * v).sum();
            assert!((n - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn width_mismatch() {
        let mut cb = VqCodebook::random_normalized(4, 3, &mut seeded_rng(2));
        assert!(matches!(
            vq_encode(&Tensor::zeros(&[2, 4]), &mut cb),
            Err(Error::Dimension(_))
        ));
    }
}
