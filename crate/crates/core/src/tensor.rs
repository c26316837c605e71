//! Dense row-major `f32` tensor and trainable parameters.

use std::fmt;
use std::ops::Range;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{ensure_dim, Error, Result};

#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
    grad: Option<Vec<f32>>,
    requires_grad: bool,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let preview: Vec<f32> = self.data.iter().take(8).copied().collect();
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("data", &preview)
            .field("requires_grad", &self.requires_grad)
            .finish()
    }
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f32>) -> Result<Self> {
        ensure_dim!(
            shape.iter().all(|&d| d > 0),
            "shape {shape:?} has a zero-sized axis"
        );
        let numel: usize = shape.iter().product();
        ensure_dim!(
            numel == data.len(),
            "shape {shape:?} needs {numel} values, got {}",
            data.len()
        );
        Ok(Self {
            shape: shape.to_vec(),
            data,
            grad: None,
            requires_grad: false,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f32) -> Self {
        let numel = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; numel],
            grad: None,
            requires_grad: false,
        }
    }

    pub fn scalar(value: f32) -> Self {
        Self::full(&[1], value)
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f32) -> Self {
        let numel = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: (0..numel).map(&mut f).collect(),
            grad: None,
            requires_grad: false,
        }
    }

    /// Samples `N(0, std²)` entries.
    pub fn randn<R: Rng + ?Sized>(shape: &[usize], std: f32, rng: &mut R) -> Self {
        Self::from_fn(shape, |_| {
            let z: f32 = rng.sample(StandardNormal);
            z * std
        })
    }

    pub fn uniform<R: Rng + ?Sized>(shape: &[usize], lo: f32, hi: f32, rng: &mut R) -> Self {
        Self::from_fn(shape, |_| rng.gen_range(lo..hi))
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Size of the last axis.
    pub fn last_dim(&self) -> usize {
        *self.shape.last().expect("tensor has rank >= 1")
    }

    /// Number of rows when viewed as `[numel / last_dim, last_dim]`.
    pub fn rows(&self) -> usize {
        self.numel() / self.last_dim()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn grad(&self) -> Option<&[f32]> {
        self.grad.as_deref()
    }

    pub fn grad_mut(&mut self) -> Option<&mut [f32]> {
        self.grad.as_deref_mut()
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self.grad = Some(vec![0.0; self.data.len()]);
        self
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = self.grad.as_mut() {
            g.fill(0.0);
        }
    }

    pub fn clear_grad(&mut self) {
        if self.requires_grad {
            self.zero_grad();
        } else {
            self.grad = None;
        }
    }

    /// Adds `delta` into the gradient buffer, allocating it if needed.
    pub fn accumulate_grad(&mut self, delta: &[f32]) -> Result<()> {
        ensure_dim!(
            delta.len() == self.data.len(),
            "gradient of length {} for tensor {:?}",
            delta.len(),
            self.shape
        );
        let grad = self.grad.get_or_insert_with(|| vec![0.0; delta.len()]);
        for (g, d) in grad.iter_mut().zip(delta) {
            *g += d;
        }
        Ok(())
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let numel: usize = shape.iter().product();
        ensure_dim!(
            numel == self.data.len(),
            "cannot reshape {:?} into {shape:?}",
            self.shape
        );
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn row(&self, r: usize) -> &[f32] {
        let d = self.last_dim();
        &self.data[r * d..(r + 1) * d]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f32] {
        let d = self.last_dim();
        &mut self.data[r * d..(r + 1) * d]
    }

    pub fn same_shape(&self, other: &Tensor) -> bool {
        self.shape == other.shape
    }

    pub fn ensure_same_shape(&self, other: &Tensor, what: &str) -> Result<()> {
        ensure_dim!(
            self.same_shape(other),
            "{what}: shapes {:?} and {:?} differ",
            self.shape,
            other.shape
        );
        Ok(())
    }

    /// Errors if any value (or gradient) is NaN or infinite.
    pub fn ensure_finite(&self, what: &str) -> Result<()> {
        if let Some(i) = self.data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "{what}: non-finite value {} at {i}",
                self.data[i]
            )));
        }
        if let Some(g) = &self.grad {
            if let Some(i) = g.iter().position(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!(
                    "{what}: non-finite gradient at {i}"
                )));
            }
        }
        Ok(())
    }

    /// Inner product accumulated in `f64`.
    pub fn dot(&self, other: &Tensor) -> Result<f64> {
        self.ensure_same_shape(other, "dot")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| a as f64 * b as f64)
            .sum())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.numel() as f64
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
            grad: None,
            requires_grad: false,
        }
    }

    /// Copy without the gradient buffer.
    pub fn detached(&self) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.clone(),
            grad: None,
            requires_grad: false,
        }
    }

    /// Permutes a 4-d tensor from `[B, C, H, W]` to `[B, H, W, C]`.
    pub fn nchw_to_nhwc(&self) -> Result<Tensor> {
        ensure_dim!(self.rank() == 4, "expected rank 4, got {:?}", self.shape);
        let (b, c, h, w) = (self.shape[0], self.shape[1], self.shape[2], self.shape[3]);
        let mut out = vec![0.0; self.numel()];
        for bi in 0..b {
            for ci in 0..c {
                let src = &self.data[(bi * c + ci) * h * w..(bi * c + ci + 1) * h * w];
                for (p, &v) in src.iter().enumerate() {
                    out[(bi * h * w + p) * c + ci] = v;
                }
            }
        }
        Tensor::new(&[b, h, w, c], out)
    }

    /// Permutes a 4-d tensor from `[B, H, W, C]` to `[B, C, H, W]`.
    pub fn nhwc_to_nchw(&self) -> Result<Tensor> {
        ensure_dim!(self.rank() == 4, "expected rank 4, got {:?}", self.shape);
        let (b, h, w, c) = (self.shape[0], self.shape[1], self.shape[2], self.shape[3]);
        let mut out = vec![0.0; self.numel()];
        for bi in 0..b {
            for p in 0..h * w {
                let src = &self.data[(bi * h * w + p) * c..(bi * h * w + p + 1) * c];
                for (ci, &v) in src.iter().enumerate() {
                    out[(bi * c + ci) * h * w + p] = v;
                }
            }
        }
        Tensor::new(&[b, c, h, w], out)
    }
}

/// A named trainable tensor.
///
/// `update_rows` restricts optimizer updates to a range of rows along the
/// first axis; rows outside it behave as frozen.
#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    pub tensor: Tensor,
    pub frozen: bool,
    pub update_rows: Option<Range<usize>>,
}

impl Parameter {
    pub fn new(name: impl Into<String>, tensor: Tensor) -> Self {
        Self {
            name: name.into(),
            tensor: tensor.with_grad(),
            frozen: false,
            update_rows: None,
        }
    }

    pub fn shape(&self) -> &[usize] {
        self.tensor.shape()
    }

    pub fn value(&self) -> &Tensor {
        &self.tensor
    }

    pub fn data(&self) -> &[f32] {
        self.tensor.data()
    }

    pub fn grad(&self) -> &[f32] {
        self.tensor
            .grad()
            .expect("parameters always carry a gradient buffer")
    }

    pub fn accumulate(&mut self, delta: &[f32]) -> Result<()> {
        if self.frozen {
            return Ok(());
        }
        self.tensor.accumulate_grad(delta)
    }

    pub fn zero_grad(&mut self) {
        self.tensor.zero_grad();
    }

    /// Zeroes gradient entries in rows outside `update_rows`.
    pub fn mask_grad_rows(&mut self) {
        if let Some(range) = self.update_rows.clone() {
            let row = self.tensor.numel() / self.tensor.shape()[0];
            let grad = self.tensor.grad_mut().expect("parameter gradient");
            for (r, chunk) in grad.chunks_mut(row).enumerate() {
                if !range.contains(&r) {
                    chunk.fill(0.0);
                }
            }
        }
    }

    /// Flat element range that the optimizer may modify.
    pub fn updatable_span(&self) -> Range<usize> {
        match &self.update_rows {
            None => 0..self.tensor.numel(),
            Some(rows) => {
                let row = self.tensor.numel() / self.tensor.shape()[0];
                rows.start * row..rows.end * row
            }
        }
    }
}

/// Anything that owns parameters in a stable order.
pub trait HasParams {
    fn params(&self) -> Vec<&Parameter>;
    fn params_mut(&mut self) -> Vec<&mut Parameter>;

    fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.tensor.numel()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_mismatched_length() {
        assert!(matches!(
            Tensor::new(&[2, 3], vec![0.0; 5]),
            Err(Error::Dimension(_))
        ));
        assert!(Tensor::new(&[0, 3], vec![]).is_err());
    }

    #[test]
    fn nan_is_an_error_state() {
        let t = Tensor::new(&[2], vec![1.0, f32::NAN]).unwrap();
        assert!(matches!(t.ensure_finite("t"), Err(Error::Numeric(_))));
    }

    #[test]
    fn permutes_round_trip() {
        let t = Tensor::from_fn(&[2, 3, 4, 5], |i| i as f32);
        let back = t.nchw_to_nhwc().unwrap().nhwc_to_nchw().unwrap();
        assert_eq!(back, t);
        let nhwc = t.nchw_to_nhwc().unwrap();
        // [b=1, c=2, h=3, w=4] lands at [1, 3, 4, 2].
        let src = ((1 * 3 + 2) * 4 + 3) * 5 + 4;
        let dst = ((1 * 4 + 3) * 5 + 4) * 3 + 2;
        assert_eq!(nhwc.data()[dst], t.data()[src]);
    }

    #[test]
    fn row_mask_zeroes_outside_range() {
        let mut p = Parameter::new("e", Tensor::zeros(&[4, 2]));
        p.accumulate(&[1.0; 8]).unwrap();
        p.update_rows = Some(1..3);
        p.mask_grad_rows();
        assert_eq!(p.grad(), &[0.0, 0.0, 1.0, 1.0, 1.0, 1.0, 0.0, 0.0]);
        assert_eq!(p.updatable_span(), 2..6);
    }
}
