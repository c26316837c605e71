//! Layers built on [`crate::ops`], each caching what its backward pass needs.
//!
//! Every layer follows the same protocol: `forward` stores activations,
//! `backward` consumes the upstream gradient, accumulates into the layer's
//! parameter gradients and returns the gradient for the layer input. A
//! backward call must follow the matching forward call.

use rand::Rng;

use crate::error::{ensure_dim, Result};
use crate::ops::activation::{gelu, gelu_grad, silu, silu_grad, softmax_in_place};
use crate::ops::linalg::{gemm_nn, gemm_nt, gemm_tn};
use crate::ops::{self, LayerNormCache};
use crate::tensor::{HasParams, Parameter, Tensor};
use crate::Rng64;

pub const LN_EPS: f32 = 1e-5;

/// `y = x·Wᵀ + b` with `W` stored as `[out, in]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Parameter,
    pub bias: Parameter,
    input: Option<Tensor>,
}

impl Linear {
    pub fn new(name: &str, inputs: usize, outputs: usize, rng: &mut Rng64) -> Self {
        let std = (1.0 / inputs as f32).sqrt();
        Self::from_parts(
            name,
            Tensor::randn(&[outputs, inputs], std, rng),
            Tensor::zeros(&[outputs]),
        )
    }

    pub fn from_parts(name: &str, weight: Tensor, bias: Tensor) -> Self {
        Self {
            weight: Parameter::new(format!("{name}.weight"), weight),
            bias: Parameter::new(format!("{name}.bias"), bias),
            input: None,
        }
    }

    pub fn in_features(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_features(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        let (inp, out) = (self.in_features(), self.out_features());
        ensure_dim!(
            x.last_dim() == inp,
            "{}: input last axis {} != {inp}",
            self.weight.name,
            x.last_dim()
        );
        let n = x.rows();
        let mut y = Vec::with_capacity(n * out);
        for _ in 0..n {
            y.extend_from_slice(self.bias.data());
        }
        gemm_nt(n, inp, out, x.data(), self.weight.data(), &mut y);
        let mut shape = x.shape().to_vec();
        *shape.last_mut().unwrap() = out;
        Tensor::new(&shape, y)
    }

    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let y = self.apply(x)?;
        self.input = Some(x.detached());
        Ok(y)
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let x = self.input.take().expect("Linear::backward without forward");
        let (inp, out) = (self.in_features(), self.out_features());
        let n = x.rows();
        ensure_dim!(
            grad_out.numel() == n * out,
            "Linear gradient shape {:?}",
            grad_out.shape()
        );
        let g = grad_out.data();
        if !self.weight.frozen {
            let mut dw = vec![0.0; out * inp];
            gemm_tn(out, n, inp, g, x.data(), &mut dw);
            self.weight.accumulate(&dw)?;
        }
        if !self.bias.frozen {
            let mut db = vec![0.0; out];
            for row in g.chunks(out) {
                for (d, v) in db.iter_mut().zip(row) {
                    *d += v;
                }
            }
            self.bias.accumulate(&db)?;
        }
        let mut dx = vec![0.0; n * inp];
        gemm_nn(n, out, inp, g, self.weight.data(), &mut dx);
        Tensor::new(x.shape(), dx)
    }
}

impl HasParams for Linear {
    fn params(&self) -> Vec<&Parameter> {
        vec![&self.weight, &self.bias]
    }
    fn params_mut(&mut self) -> Vec<&mut Parameter> {
        vec![&mut self.weight, &mut self.bias]
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gain: Parameter,
    pub bias: Parameter,
    cache: Option<LayerNormCache>,
}

impl LayerNorm {
    pub fn new(name: &str, dim: usize) -> Self {
        Self {
            gain: Parameter::new(format!("{name}.gain"), Tensor::full(&[dim], 1.0)),
            bias: Parameter::new(format!("{name}.bias"), Tensor::zeros(&[dim])),
            cache: None,
        }
    }

    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        Ok(ops::layer_norm(x, self.gain.value(), self.bias.value(), LN_EPS)?.0)
    }

    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let (y, cache) = ops::layer_norm(x, self.gain.value(), self.bias.value(), LN_EPS)?;
        self.cache = Some(cache);
        Ok(y)
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let cache = self
            .cache
            .take()
            .expect("LayerNorm::backward without forward");
        let (dx, dg, db) = ops::layer_norm_backward(&cache, self.gain.value(), grad_out)?;
        self.gain.accumulate(dg.data())?;
        self.bias.accumulate(db.data())?;
        Ok(dx)
    }
}

impl HasParams for LayerNorm {
    fn params(&self) -> Vec<&Parameter> {
        vec![&self.gain, &self.bias]
    }
    fn params_mut(&mut self) -> Vec<&mut Parameter> {
        vec![&mut self.gain, &mut self.bias]
    }
}

/// Per-position layer norm over the channel axis of an NCHW tensor.
#[derive(Debug, Clone)]
pub struct ChannelNorm {
    pub norm: LayerNorm,
}

impl ChannelNorm {
    pub fn new(name: &str, channels: usize) -> Self {
        Self {
            norm: LayerNorm::new(name, channels),
        }
    }

    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        self.norm.infer(&x.nchw_to_nhwc()?)?.nhwc_to_nchw()
    }

    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        self.norm.forward(&x.nchw_to_nhwc()?)?.nhwc_to_nchw()
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        self.norm
            .backward(&grad_out.nchw_to_nhwc()?)?
            .nhwc_to_nchw()
    }
}

impl HasParams for ChannelNorm {
    fn params(&self) -> Vec<&Parameter> {
        self.norm.params()
    }
    fn params_mut(&mut self) -> Vec<&mut Parameter> {
        self.norm.params_mut()
    }
}

fn add_channel_bias(y: &mut Tensor, bias: &[f32]) {
    let (b, c) = (y.shape()[0], y.shape()[1]);
    let plane = y.numel() / (b * c);
    for (i, chunk) in y.data_mut().chunks_mut(plane).enumerate() {
        let v = bias[i % c];
        for x in chunk {
            *x += v;
        }
    }
}

fn channel_bias_grad(grad_out: &Tensor) -> Vec<f32> {
    let (b, c) = (grad_out.shape()[0], grad_out.shape()[1]);
    let plane = grad_out.numel() / (b * c);
    let mut db = vec![0.0f32; c];
    for (i, chunk) in grad_out.data().chunks(plane).enumerate() {
        db[i % c] += chunk.iter().sum::<f32>();
    }
    db
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: Parameter,
    pub bias: Parameter,
    pub stride: usize,
    pub padding: usize,
    input: Option<Tensor>,
}

impl Conv2d {
    pub fn new(
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut Rng64,
    ) -> Self {
        // He initialization for fan-in.
        let std = (2.0 / (in_ch * kernel * kernel) as f32).sqrt();
        Self {
            weight: Parameter::new(
                format!("{name}.weight"),
                Tensor::randn(&[out_ch, in_ch, kernel, kernel], std, rng),
            ),
            bias: Parameter::new(format!("{name}.bias"), Tensor::zeros(&[out_ch])),
            stride,
            padding,
            input: None,
        }
    }

    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        let mut y = ops::conv2d(x, self.weight.value(), self.stride, self.padding)?;
        add_channel_bias(&mut y, self.bias.data());
        Ok(y)
    }

    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let y = self.apply(x)?;
        self.input = Some(x.detached());
        Ok(y)
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let x = self.input.take().expect("Conv2d::backward without forward");
        let (dx, dw) =
            ops::conv2d_backward(&x, self.weight.value(), self.stride, self.padding, grad_out)?;
        self.weight.accumulate(dw.data())?;
        self.bias.accumulate(&channel_bias_grad(grad_out))?;
        Ok(dx)
    }
}

impl HasParams for Conv2d {
    fn params(&self) -> Vec<&Parameter> {
        vec![&self.weight, &self.bias]
    }
    fn params_mut(&mut self) -> Vec<&mut Parameter> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// Transposed convolution with weight `[in_ch, out_ch, k, k]`.
#[derive(Debug, Clone)]
pub struct ConvTranspose2d {
    pub weight: Parameter,
    pub bias: Parameter,
    pub stride: usize,
    pub padding: usize,
    pub output_padding: usize,
    input: Option<Tensor>,
}

impl ConvTranspose2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        output_padding: usize,
        rng: &mut Rng64,
    ) -> Self {
        let fan_in = in_ch * kernel * kernel / (stride * stride);
        let std = (2.0 / fan_in.max(1) as f32).sqrt();
        Self {
            weight: Parameter::new(
                format!("{name}.weight"),
                Tensor::randn(&[in_ch, out_ch, kernel, kernel], std, rng),
            ),
            bias: Parameter::new(format!("{name}.bias"), Tensor::zeros(&[out_ch])),
            stride,
            padding,
            output_padding,
            input: None,
        }
    }

    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        let mut y = ops::conv_transpose2d(
            x,
            self.weight.value(),
            self.stride,
            self.padding,
            self.output_padding,
        )?;
        add_channel_bias(&mut y, self.bias.data());
        Ok(y)
    }

    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let y = self.apply(x)?;
        self.input = Some(x.detached());
        Ok(y)
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let x = self
            .input
            .take()
            .expect("ConvTranspose2d::backward without forward");
        let (dx, dw) = ops::conv_transpose2d_backward(
            &x,
            self.weight.value(),
            self.stride,
            self.padding,
            self.output_padding,
            grad_out,
        )?;
        self.weight.accumulate(dw.data())?;
        self.bias.accumulate(&channel_bias_grad(grad_out))?;
        Ok(dx)
    }
}

impl HasParams for ConvTranspose2d {
    fn params(&self) -> Vec<&Parameter> {
        vec![&self.weight, &self.bias]
    }
    fn params_mut(&mut self) -> Vec<&mut Parameter> {
        vec![&mut self.weight, &mut self.bias]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Silu,
    Gelu,
}

impl Activation {
    fn f(self, x: f32) -> f32 {
        match self {
            Activation::Silu => silu(x),
            Activation::Gelu => gelu(x),
        }
    }

    fn df(self, x: f32) -> f32 {
        match self {
            Activation::Silu => silu_grad(x),
            Activation::Gelu => gelu_grad(x),
        }
    }
}

/// Pointwise activation that remembers its input.
#[derive(Debug, Clone)]
pub struct Act {
    kind: Activation,
    input: Option<Tensor>,
}

impl Act {
    pub fn new(kind: Activation) -> Self {
        Self { kind, input: None }
    }

    pub fn infer(&self, x: &Tensor) -> Tensor {
        x.map(|v| self.kind.f(v))
    }

    pub fn forward(&mut self, x: &Tensor) -> Tensor {
        let y = x.map(|v| self.kind.f(v));
        self.input = Some(x.detached());
        y
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let x = self.input.take().expect("Act::backward without forward");
        x.ensure_same_shape(grad_out, "activation gradient")?;
        let data = x
            .data()
            .iter()
            .zip(grad_out.data())
            .map(|(&xv, &g)| g * self.kind.df(xv))
            .collect();
        Tensor::new(x.shape(), data)
    }
}

/// Inverted dropout; a no-op when `rate == 0` or no rng is supplied.
#[derive(Debug, Clone)]
pub struct Dropout {
    pub rate: f32,
    mask: Option<Vec<f32>>,
}

impl Dropout {
    pub fn new(rate: f32) -> Self {
        Self { rate, mask: None }
    }

    pub fn forward(&mut self, x: Tensor, rng: Option<&mut Rng64>) -> Tensor {
        match rng {
            Some(rng) if self.rate > 0.0 => {
                let keep = 1.0 - self.rate;
                let mask: Vec<f32> = (0..x.numel())
                    .map(|_| {
                        if rng.gen::<f32>() < keep {
                            1.0 / keep
                        } else {
                            0.0
                        }
                    })
                    .collect();
                let mut y = x;
                for (v, m) in y.data_mut().iter_mut().zip(&mask) {
                    *v *= m;
                }
                self.mask = Some(mask);
                y
            }
            _ => {
                self.mask = None;
                x
            }
        }
    }

    pub fn backward(&mut self, grad_out: Tensor) -> Tensor {
        match self.mask.take() {
            Some(mask) => {
                let mut g = grad_out;
                for (v, m) in g.data_mut().iter_mut().zip(&mask) {
                    *v *= m;
                }
                g
            }
            None => grad_out,
        }
    }
}

struct AttentionCache {
    qkv: Tensor,
    /// Softmax probabilities, `[segments, heads, len, len]` flattened.
    probs: Vec<f32>,
}

/// Multi-head self-attention applied independently to consecutive
/// segments of `seq_len` rows.
pub struct MultiHeadAttention {
    pub qkv: Linear,
    pub proj: Linear,
    pub heads: usize,
    pub causal: bool,
    cache: Option<(AttentionCache, usize)>,
}

impl std::fmt::Debug for MultiHeadAttention {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MultiHeadAttention")
            .field("heads", &self.heads)
            .field("causal", &self.causal)
            .finish()
    }
}

impl MultiHeadAttention {
    pub fn new(name: &str, dim: usize, heads: usize, causal: bool, rng: &mut Rng64) -> Self {
        assert!(
            heads > 0 && dim % heads == 0,
            "dim {dim} not divisible by {heads} heads"
        );
        Self {
            qkv: Linear::new(&format!("{name}.qkv"), dim, 3 * dim, rng),
            proj: Linear::new(&format!("{name}.proj"), dim, dim, rng),
            heads,
            causal,
            cache: None,
        }
    }

    fn dim(&self) -> usize {
        self.proj.in_features()
    }

    /// Context vectors for precomputed `qkv` rows, plus softmax weights.
    fn attend(&self, qkv: &Tensor, seq_len: usize) -> Result<(Tensor, Vec<f32>)> {
        let d = self.dim();
        let n = qkv.rows();
        ensure_dim!(
            seq_len > 0 && n % seq_len == 0,
            "{n} rows do not split into segments of {seq_len}"
        );
        let (h, hd, l) = (self.heads, d / self.heads, seq_len);
        let segments = n / l;
        let scale = 1.0 / (hd as f32).sqrt();
        let mut probs = vec![0.0f32; segments * h * l * l];
        let mut ctx = vec![0.0f32; n * d];
        let mut q = vec![0.0f32; l * hd];
        let mut k = vec![0.0f32; l * hd];
        let mut v = vec![0.0f32; l * hd];
        let mut out = vec![0.0f32; l * hd];
        for s in 0..segments {
            for head in 0..h {
                gather_head(qkv, s * l, l, d, head * hd, hd, 0, &mut q);
                gather_head(qkv, s * l, l, d, head * hd, hd, d, &mut k);
                gather_head(qkv, s * l, l, d, head * hd, hd, 2 * d, &mut v);
                let p = &mut probs[(s * h + head) * l * l..(s * h + head + 1) * l * l];
                gemm_nt(l, hd, l, &q, &k, p);
                for i in 0..l {
                    let row = &mut p[i * l..(i + 1) * l];
                    for (j, val) in row.iter_mut().enumerate() {
                        *val = if self.causal && j > i {
                            f32::NEG_INFINITY
                        } else {
                            *val * scale
                        };
                    }
                    softmax_in_place(row);
                }
                out.fill(0.0);
                gemm_nn(l, l, hd, p, &v, &mut out);
                for i in 0..l {
                    ctx[(s * l + i) * d + head * hd..][..hd]
                        .copy_from_slice(&out[i * hd..(i + 1) * hd]);
                }
            }
        }
        let mut shape = qkv.shape().to_vec();
        *shape.last_mut().unwrap() = d;
        Ok((Tensor::new(&shape, ctx)?, probs))
    }

    pub fn infer(&self, x: &Tensor, seq_len: usize) -> Result<Tensor> {
        let qkv = self.qkv.apply(x)?;
        let (ctx, _) = self.attend(&qkv, seq_len)?;
        self.proj.apply(&ctx)
    }

    pub fn forward(&mut self, x: &Tensor, seq_len: usize) -> Result<Tensor> {
        let qkv = self.qkv.forward(x)?;
        let (ctx, probs) = self.attend(&qkv, seq_len)?;
        let y = self.proj.forward(&ctx)?;
        self.cache = Some((AttentionCache { qkv, probs }, seq_len));
        Ok(y)
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let (cache, l) = self
            .cache
            .take()
            .expect("attention backward without forward");
        let d = self.dim();
        let dctx = self.proj.backward(grad_out)?;
        let n = dctx.rows();
        let (h, hd) = (self.heads, d / self.heads);
        let segments = n / l;
        let scale = 1.0 / (hd as f32).sqrt();
        let mut dqkv = vec![0.0f32; n * 3 * d];
        let mut q = vec![0.0f32; l * hd];
        let mut k = vec![0.0f32; l * hd];
        let mut v = vec![0.0f32; l * hd];
        let mut dout = vec![0.0f32; l * hd];
        for s in 0..segments {
            for head in 0..h {
                gather_head(&cache.qkv, s * l, l, d, head * hd, hd, 0, &mut q);
                gather_head(&cache.qkv, s * l, l, d, head * hd, hd, d, &mut k);
                gather_head(&cache.qkv, s * l, l, d, head * hd, hd, 2 * d, &mut v);
                for i in 0..l {
                    dout[i * hd..(i + 1) * hd]
                        .copy_from_slice(&dctx.data()[(s * l + i) * d + head * hd..][..hd]);
                }
                let p = &cache.probs[(s * h + head) * l * l..(s * h + head + 1) * l * l];
                // dV = Pᵀ·dOut, dP = dOut·Vᵀ
                let mut dv = vec![0.0f32; l * hd];
                gemm_tn(l, l, hd, p, &dout, &mut dv);
                let mut dp = vec![0.0f32; l * l];
                gemm_nt(l, hd, l, &dout, &v, &mut dp);
                // softmax backward, then the 1/sqrt(hd) scale
                for i in 0..l {
                    let pr = &p[i * l..(i + 1) * l];
                    let dr = &mut dp[i * l..(i + 1) * l];
                    let inner: f32 = pr.iter().zip(dr.iter()).map(|(a, b)| a * b).sum();
                    for (dv_, &pv) in dr.iter_mut().zip(pr) {
                        *dv_ = pv * (*dv_ - inner) * scale;
                    }
                }
                let mut dq = vec![0.0f32; l * hd];
                gemm_nn(l, l, hd, &dp, &k, &mut dq);
                let mut dk = vec![0.0f32; l * hd];
                gemm_tn(l, l, hd, &dp, &q, &mut dk);
                for i in 0..l {
                    let base = (s * l + i) * 3 * d + head * hd;
                    for j in 0..hd {
                        dqkv[base + j] += dq[i * hd + j];
                        dqkv[base + d + j] += dk[i * hd + j];
                        dqkv[base + 2 * d + j] += dv[i * hd + j];
                    }
                }
            }
        }
        let mut shape = dctx.shape().to_vec();
        *shape.last_mut().unwrap() = 3 * d;
        self.qkv.backward(&Tensor::new(&shape, dqkv)?)
    }
}

#[allow(clippy::too_many_arguments)]
fn gather_head(
    qkv: &Tensor,
    row0: usize,
    len: usize,
    dim: usize,
    col0: usize,
    hd: usize,
    part: usize,
    out: &mut [f32],
) {
    let data = qkv.data();
    for i in 0..len {
        let src = &data[(row0 + i) * 3 * dim + part + col0..][..hd];
        out[i * hd..(i + 1) * hd].copy_from_slice(src);
    }
}

impl HasParams for MultiHeadAttention {
    fn params(&self) -> Vec<&Parameter> {
        let mut v = self.qkv.params();
        v.extend(self.proj.params());
        v
    }
    fn params_mut(&mut self) -> Vec<&mut Parameter> {
        let mut v = self.qkv.params_mut();
        v.extend(self.proj.params_mut());
        v
    }
}

#[derive(Debug)]
pub struct FeedForward {
    pub fc1: Linear,
    act: Act,
    pub fc2: Linear,
}

impl FeedForward {
    pub fn new(name: &str, dim: usize, hidden: usize, rng: &mut Rng64) -> Self {
        Self {
            fc1: Linear::new(&format!("{name}.fc1"), dim, hidden, rng),
            act: Act::new(Activation::Gelu),
            fc2: Linear::new(&format!("{name}.fc2"), hidden, dim, rng),
        }
    }

    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        let h = self.act.infer(&self.fc1.apply(x)?);
        self.fc2.apply(&h)
    }

    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let h = self.fc1.forward(x)?;
        let h = self.act.forward(&h);
        self.fc2.forward(&h)
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let g = self.fc2.backward(grad_out)?;
        let g = self.act.backward(&g)?;
        self.fc1.backward(&g)
    }
}

impl HasParams for FeedForward {
    fn params(&self) -> Vec<&Parameter> {
        let mut v = self.fc1.params();
        v.extend(self.fc2.params());
        v
    }
    fn params_mut(&mut self) -> Vec<&mut Parameter> {
        let mut v = self.fc1.params_mut();
        v.extend(self.fc2.params_mut());
        v
    }
}

/// Pre-norm transformer block: `x + attn(ln(x))`, then `x + ffn(ln(x))`.
#[derive(Debug)]
pub struct TransformerBlock {
    pub ln1: LayerNorm,
    pub attn: MultiHeadAttention,
    pub ln2: LayerNorm,
    pub ffn: FeedForward,
    drop1: Dropout,
    drop2: Dropout,
}

impl TransformerBlock {
    pub fn new(
        name: &str,
        dim: usize,
        heads: usize,
        hidden: usize,
        dropout: f32,
        causal: bool,
        rng: &mut Rng64,
    ) -> Self {
        Self {
            ln1: LayerNorm::new(&format!("{name}.ln1"), dim),
            attn: MultiHeadAttention::new(&format!("{name}.attn"), dim, heads, causal, rng),
            ln2: LayerNorm::new(&format!("{name}.ln2"), dim),
            ffn: FeedForward::new(&format!("{name}.ffn"), dim, hidden, rng),
            drop1: Dropout::new(dropout),
            drop2: Dropout::new(dropout),
        }
    }

    pub fn infer(&self, x: &Tensor, seq_len: usize) -> Result<Tensor> {
        let h = self.attn.infer(&self.ln1.infer(x)?, seq_len)?;
        let mut x1 = x.detached();
        add_into(&mut x1, &h);
        let h = self.ffn.infer(&self.ln2.infer(&x1)?)?;
        add_into(&mut x1, &h);
        Ok(x1)
    }

    /// `rng` enables dropout (training mode).
    pub fn forward(
        &mut self,
        x: &Tensor,
        seq_len: usize,
        mut rng: Option<&mut Rng64>,
    ) -> Result<Tensor> {
        let h = self.ln1.forward(x)?;
        let h = self.attn.forward(&h, seq_len)?;
        let h = self.drop1.forward(h, rng.as_deref_mut());
        let mut x1 = x.detached();
        add_into(&mut x1, &h);
        let h = self.ln2.forward(&x1)?;
        let h = self.ffn.forward(&h)?;
        let h = self.drop2.forward(h, rng.as_deref_mut());
        add_into(&mut x1, &h);
        Ok(x1)
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let g = self.drop2.backward(grad_out.detached());
        let g = self.ffn.backward(&g)?;
        let g = self.ln2.backward(&g)?;
        let mut g1 = grad_out.detached();
        add_into(&mut g1, &g);
        let g = self.drop1.backward(g1.detached());
        let g = self.attn.backward(&g)?;
        let g = self.ln1.backward(&g)?;
        add_into(&mut g1, &g);
        Ok(g1)
    }
}

impl HasParams for TransformerBlock {
    fn params(&self) -> Vec<&Parameter> {
        let mut v = self.ln1.params();
        v.extend(self.attn.params());
        v.extend(self.ln2.params());
        v.extend(self.ffn.params());
        v
    }
    fn params_mut(&mut self) -> Vec<&mut Parameter> {
        let mut v = self.ln1.params_mut();
        v.extend(self.attn.params_mut());
        v.extend(self.ln2.params_mut());
        v.extend(self.ffn.params_mut());
        v
    }
}

pub fn add_into(acc: &mut Tensor, other: &Tensor) {
    debug_assert_eq!(acc.shape(), other.shape());
    for (a, b) in acc.data_mut().iter_mut().zip(other.data()) {
        *a += b;
    }
}
