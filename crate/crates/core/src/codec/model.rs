use crate::codec::config::{CodecConfig, Component, QuantizerConfig};
use crate::error::{ensure_dim, ensure_domain, Error, Result};
use crate::nn::{Act, Activation, ChannelNorm, Conv2d, ConvTranspose2d, Linear};
use crate::ops::{depth_to_space, space_to_depth};
use crate::quant::binary::{binary_quantize, code_index, indices_to_tensor};
use crate::quant::hybrid::{draw_routes, route_features};
use crate::quant::vq::{codebook_loss, vq_encode, VqCodebook};
use crate::quant::{hybrid_backward, Projector};
use crate::tensor::{HasParams, Parameter, Tensor};
use crate::Rng64;

/// 2×2 space-to-depth followed by a 3×3 convolution.
#[derive(Debug)]
struct DownStage {
    conv: Conv2d,
    norm: ChannelNorm,
    act: Act,
}

/// Downsampling convolution stack; output is `[B, D, H/f, W/f]`.
#[derive(Debug)]
pub struct Encoder {
    conv_in: Conv2d,
    act_in: Act,
    stages: Vec<DownStage>,
    conv_out: Conv2d,
}

impl Encoder {
    fn new(cfg: &CodecConfig, rng: &mut Rng64) -> Self {
        let w = cfg.base_width;
        let conv_in = Conv2d::new("encoder.conv_in", cfg.channels, w, 3, 1, 1, rng);
        let mut ch = w;
        let stages = (0..cfg.stages())
            .map(|i| {
                let out = 2 * w;
                let stage = DownStage {
                    conv: Conv2d::new(&format!("encoder.down{i}"), 4 * ch, out, 3, 1, 1, rng),
                    norm: ChannelNorm::new(&format!("encoder.norm{i}"), out),
                    act: Act::new(Activation::Silu),
                };
                ch = out;
                stage
            })
            .collect();
        Self {
            conv_in,
            act_in: Act::new(Activation::Silu),
            stages,
            conv_out: Conv2d::new("encoder.conv_out", ch, cfg.feature_dim, 1, 1, 0, rng),
        }
    }

    fn infer(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = self.act_in.infer(&self.conv_in.apply(x)?);
        for s in &self.stages {
            h = s
                .act
                .infer(&s.norm.infer(&s.conv.apply(&space_to_depth(&h, 2)?)?)?);
        }
        self.conv_out.apply(&h)
    }

    fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let h = self.conv_in.forward(x)?;
        let mut h = self.act_in.forward(&h);
        for s in &mut self.stages {
            let c = s.conv.forward(&space_to_depth(&h, 2)?)?;
            let n = s.norm.forward(&c)?;
            h = s.act.forward(&n);
        }
        self.conv_out.forward(&h)
    }

    fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let mut g = self.conv_out.backward(grad)?;
        for s in self.stages.iter_mut().rev() {
            g = s.act.backward(&g)?;
            g = s.norm.backward(&g)?;
            g = depth_to_space(&s.conv.backward(&g)?, 2)?;
        }
        g = self.act_in.backward(&g)?;
        self.conv_in.backward(&g)
    }
}

impl HasParams for Encoder {
    fn params(&self) -> Vec<&Parameter> {
        let mut v = self.conv_in.params();
        for s in &self.stages {
            v.extend(s.conv.params());
            v.extend(s.norm.params());
        }
        v.extend(self.conv_out.params());
        v
    }
    fn params_mut(&mut self) -> Vec<&mut Parameter> {
        let mut v = self.conv_in.params_mut();
        for s in &mut self.stages {
            v.extend(s.conv.params_mut());
            v.extend(s.norm.params_mut());
        }
        v.extend(self.conv_out.params_mut());
        v
    }
}

#[derive(Debug)]
struct UpStage {
    conv: ConvTranspose2d,
    norm: ChannelNorm,
    act: Act,
}

/// Mirror of [`Encoder`] built from 2×2 stride-2 transposed convolutions.
#[derive(Debug)]
pub struct Decoder {
    conv_in: Conv2d,
    act_in: Act,
    stages: Vec<UpStage>,
    conv_out: Conv2d,
}

impl Decoder {
    fn new(cfg: &CodecConfig, rng: &mut Rng64) -> Self {
        let w = cfg.base_width;
        let top = 2 * w;
        let n = cfg.stages();
        let conv_in = Conv2d::new("decoder.conv_in", top, top, 3, 1, 1, rng);
        let stages = (0..n)
            .map(|i| {
                let out = if i + 1 == n { w } else { top };
                UpStage {
                    conv: ConvTranspose2d::new(
                        &format!("decoder.up{i}"),
                        top,
                        out,
                        2,
                        2,
                        0,
                        0,
                        rng,
                    ),
                    norm: ChannelNorm::new(&format!("decoder.norm{i}"), out),
                    act: Act::new(Activation::Silu),
                }
            })
            .collect();
        let last = if n == 0 { top } else { w };
        Self {
            conv_in,
            act_in: Act::new(Activation::Silu),
            stages,
            conv_out: Conv2d::new("decoder.conv_out", last, cfg.channels, 3, 1, 1, rng),
        }
    }

    fn infer(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = self.act_in.infer(&self.conv_in.apply(x)?);
        for s in &self.stages {
            h = s.act.infer(&s.norm.infer(&s.conv.apply(&h)?)?);
        }
        self.conv_out.apply(&h)
    }

    fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let h = self.conv_in.forward(x)?;
        let mut h = self.act_in.forward(&h);
        for s in &mut self.stages {
            let c = s.conv.forward(&h)?;
            let n = s.norm.forward(&c)?;
            h = s.act.forward(&n);
        }
        self.conv_out.forward(&h)
    }

    fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let mut g = self.conv_out.backward(grad)?;
        for s in self.stages.iter_mut().rev() {
            g = s.act.backward(&g)?;
            g = s.norm.backward(&g)?;
            g = s.conv.backward(&g)?;
        }
        g = self.act_in.backward(&g)?;
        self.conv_in.backward(&g)
    }
}

impl HasParams for Decoder {
    fn params(&self) -> Vec<&Parameter> {
        let mut v = self.conv_in.params();
        for s in &self.stages {
            v.extend(s.conv.params());
            v.extend(s.norm.params());
        }
        v.extend(self.conv_out.params());
        v
    }
    fn params_mut(&mut self) -> Vec<&mut Parameter> {
        let mut v = self.conv_in.params_mut();
        for s in &mut self.stages {
            v.extend(s.conv.params_mut());
            v.extend(s.norm.params_mut());
        }
        v.extend(self.conv_out.params_mut());
        v
    }
}

#[derive(Debug)]
pub enum Bottleneck {
    /// Projector and sign quantizer, optionally fed through a frozen-style
    /// vector quantizer for a random subset of samples.
    Binary {
        projector: Projector,
        router: Option<VqCodebook>,
    },
    /// Baseline learned vector quantizer.
    Vector { codebook: VqCodebook },
}

/// Activations of one training forward pass.
#[derive(Debug, Clone)]
pub struct TrainForward {
    /// Raw decoder output (not clamped).
    pub recon: Tensor,
    /// Continuous input to the quantizer, `[N × code_dim]`.
    pub pre_quant: Tensor,
    pub quantized: Tensor,
    pub indices: Vec<u32>,
    pub route_mask: Vec<bool>,
}

/// Convolutional encoder/decoder around the quantizer.
#[derive(Debug)]
pub struct Codec {
    config: CodecConfig,
    pub encoder: Encoder,
    pub bottleneck: Bottleneck,
    /// Lifts `code_dim` codes to the decoder's input width.
    pub embed: Linear,
    pub decoder: Decoder,
    last_vq: Option<(Tensor, crate::quant::VqOutput)>,
}

impl Codec {
    pub fn new(config: CodecConfig, rng: &mut Rng64) -> Result<Self> {
        config.validate()?;
        let encoder = Encoder::new(&config, rng);
        let bottleneck = match &config.quantizer {
            QuantizerConfig::Binary(b) => Bottleneck::Binary {
                projector: Projector::new(
                    config.projector_depth,
                    config.feature_dim,
                    b.dims as usize,
                    rng,
                ),
                router: config
                    .hybrid
                    .as_ref()
                    .map(|h| VqCodebook::random_normalized(h.vq_size, config.feature_dim, rng)),
            },
            QuantizerConfig::Vq(v) => Bottleneck::Vector {
                codebook: VqCodebook::random_normalized(v.size, config.feature_dim, rng),
            },
        };
        let embed = Linear::new(
            "quantizer2.embed",
            config.code_dim(),
            2 * config.base_width,
            rng,
        );
        let decoder = Decoder::new(&config, rng);
        let mut codec = Self {
            config,
            encoder,
            bottleneck,
            embed,
            decoder,
            last_vq: None,
        };
        codec.apply_freeze();
        Ok(codec)
    }

    pub fn config(&self) -> &CodecConfig {
        &self.config
    }

    fn apply_freeze(&mut self) {
        let freeze = self.config.freeze.clone();
        for p in self.params_mut() {
            p.frozen = Component::of_param(&p.name).is_some_and(|c| freeze.contains(&c));
        }
        if let Bottleneck::Binary {
            router: Some(vq), ..
        } = &mut self.bottleneck
        {
            vq.entries.frozen = true;
        }
    }

    pub fn is_frozen(&self, c: Component) -> bool {
        self.config.freeze.contains(&c)
    }

    /// Parameters owned by one component.
    pub fn component_params(&self, c: Component) -> Vec<&Parameter> {
        self.params()
            .into_iter()
            .filter(|p| p.name.starts_with(c.prefix()))
            .collect()
    }

    fn check_images(&self, images: &Tensor) -> Result<usize> {
        let s = self.config.image_size;
        ensure_dim!(
            images.rank() == 4 && images.shape()[1..] == [self.config.channels, s, s],
            "expected B×{}×{s}×{s} images, got {:?}",
            self.config.channels,
            images.shape()
        );
        ensure_domain!(
            images.data().iter().all(|v| (0.0..=1.0).contains(v)),
            "pixel values must lie in [0, 1]"
        );
        Ok(images.shape()[0])
    }

    /// Channel-last feature map `[B, H/f, W/f, D]`.
    pub fn encode(&self, images: &Tensor) -> Result<Tensor> {
        self.check_images(images)?;
        self.encoder.infer(images)?.nchw_to_nhwc()
    }

    fn features_as_rows(nhwc: Tensor) -> Result<Tensor> {
        let d = nhwc.last_dim();
        let n = nhwc.rows();
        nhwc.reshape(&[n, d])
    }

    /// Token indices per image, raster order over the token grid.
    pub fn tokenize(&self, images: &Tensor) -> Result<Vec<Vec<u32>>> {
        let b = self.check_images(images)?;
        let t = self.config.tokens_per_image();
        let f = Self::features_as_rows(self.encode(images)?)?;
        let flat: Vec<u32> = match &self.bottleneck {
            Bottleneck::Binary { projector, router } => {
                let via_vq = self
                    .config
                    .hybrid
                    .as_ref()
                    .is_some_and(|h| h.vq_at_inference);
                let branch = match router {
                    Some(vq) if via_vq => nearest_rows(&f, vq)?,
                    _ => f,
                };
                let x = projector.infer(&branch, t)?;
                (0..x.rows()).map(|r| code_index(x.row(r))).collect()
            }
            Bottleneck::Vector { codebook } => (0..f.rows())
                .map(|r| codebook.nearest(f.row(r)) as u32)
                .collect(),
        };
        let grids: Vec<Vec<u32>> = flat.chunks(t).map(<[u32]>::to_vec).collect();
        debug_assert_eq!(grids.len(), b);
        Ok(grids)
    }

    fn codes_for(&self, indices: &[u32]) -> Result<Tensor> {
        let k = self.config.codebook_size();
        if let Some(&bad) = indices.iter().find(|&&i| i as usize >= k) {
            return Err(Error::domain(format!(
                "token {bad} outside codebook of {k}"
            )));
        }
        match &self.bottleneck {
            Bottleneck::Binary { .. } => {
                let dims = self.config.binary().expect("binary config").dims;
                indices_to_tensor(indices, dims)
            }
            Bottleneck::Vector { codebook } => {
                let d = codebook.dim();
                let mut data = Vec::with_capacity(indices.len() * d);
                for &i in indices {
                    data.extend_from_slice(codebook.entry(i as usize));
                }
                Tensor::new(&[indices.len(), d], data)
            }
        }
    }

    fn codes_to_decoder_input(&self, codes: &Tensor, batch: usize) -> Result<Tensor> {
        let g = self.config.grid_size();
        let e = self.embed.apply(codes)?;
        let w = e.last_dim();
        e.reshape(&[batch, g, g, w])?.nhwc_to_nchw()
    }

    /// Decodes token grids (one per image) to pixels clamped to `[0, 1]`.
    pub fn decode_batch(&self, grids: &[Vec<u32>]) -> Result<Tensor> {
        let t = self.config.tokens_per_image();
        ensure_domain!(!grids.is_empty(), "nothing to decode");
        for g in grids {
            ensure_dim!(
                g.len() == t,
                "token grid of {} entries, expected {t}",
                g.len()
            );
        }
        let flat: Vec<u32> = grids.iter().flatten().copied().collect();
        let codes = self.codes_for(&flat)?;
        let x = self.codes_to_decoder_input(&codes, grids.len())?;
        Ok(self.decoder.infer(&x)?.map(|v| v.clamp(0.0, 1.0)))
    }

    pub fn decode_tokens(&self, indices: &[u32]) -> Result<Tensor> {
        self.decode_batch(&[indices.to_vec()])
    }

    /// Tokenizes and decodes; returns the token grids and clamped images.
    pub fn reconstruct(&self, images: &Tensor) -> Result<(Vec<Vec<u32>>, Tensor)> {
        let grids = self.tokenize(images)?;
        let recon = self.decode_batch(&grids)?;
        Ok((grids, recon))
    }

    /// Training-mode forward pass that caches everything `backward_train`
    /// needs. Routing decisions are drawn from `rng`.
    pub fn forward_train(&mut self, images: &Tensor, rng: &mut Rng64) -> Result<TrainForward> {
        let b = self.check_images(images)?;
        let t = self.config.tokens_per_image();
        let f = Self::features_as_rows(self.encoder.forward(images)?.nchw_to_nhwc()?)?;
        let (pre_quant, quantized, indices, route_mask) = match &mut self.bottleneck {
            Bottleneck::Binary { projector, router } => {
                let dims = self.config.binary().expect("binary config").dims;
                let (branch, mask) = match (router, &self.config.hybrid) {
                    (Some(vq), Some(h)) => {
                        let mask = draw_routes(b, h.route_prob, rng);
                        (route_features(&f, t, &mask, vq)?, mask)
                    }
                    _ => (f, vec![false; b]),
                };
                let x = projector.forward(&branch, t)?;
                let q = binary_quantize(&x, dims)?;
                (x, q.quantized, q.indices, mask)
            }
            Bottleneck::Vector { codebook } => {
                let out = vq_encode(&f, codebook)?;
                let q = out.quantized.clone();
                let idx = out.indices.clone();
                self.last_vq = Some((f.clone(), out));
                (f, q, idx, vec![false; b])
            }
        };
        let g = self.config.grid_size();
        let e = self.embed.forward(&quantized)?;
        let w = e.last_dim();
        let x = e.reshape(&[b, g, g, w])?.nhwc_to_nchw()?;
        let recon = self.decoder.forward(&x)?;
        Ok(TrainForward {
            recon,
            pre_quant,
            quantized,
            indices,
            route_mask,
        })
    }

    /// Encoder, projector, code embedding and decoder with the quantizer
    /// bypassed; differentiable end to end.
    pub fn forward_continuous(&mut self, images: &Tensor) -> Result<Tensor> {
        let b = self.check_images(images)?;
        let t = self.config.tokens_per_image();
        let f = Self::features_as_rows(self.encoder.forward(images)?.nchw_to_nhwc()?)?;
        let x = match &mut self.bottleneck {
            Bottleneck::Binary { projector, .. } => projector.forward(&f, t)?,
            Bottleneck::Vector { .. } => f,
        };
        let g = self.config.grid_size();
        let e = self.embed.forward(&x)?;
        let w = e.last_dim();
        self.decoder
            .forward(&e.reshape(&[b, g, g, w])?.nhwc_to_nchw()?)
    }

    /// Backward of [`Codec::forward_continuous`]; returns the image gradient.
    pub fn backward_continuous(&mut self, grad: &Tensor) -> Result<Tensor> {
        let g = self.decoder.backward(grad)?.nchw_to_nhwc()?;
        let (n, w) = (g.rows(), g.last_dim());
        let mut gx = self.embed.backward(&g.reshape(&[n, w])?)?;
        if let Bottleneck::Binary { projector, .. } = &mut self.bottleneck {
            gx = projector.backward(&gx)?;
        }
        let s = self.config.grid_size();
        let d = gx.last_dim();
        let b = gx.rows() / (s * s);
        self.encoder
            .backward(&gx.reshape(&[b, s, s, d])?.nhwc_to_nchw()?)
    }

    fn upstream_trainable(&self) -> bool {
        !self.is_frozen(Component::Encoder)
            || match &self.bottleneck {
                Bottleneck::Binary { .. } => !self.is_frozen(Component::Projector),
                Bottleneck::Vector { .. } => !self.is_frozen(Component::Vq),
            }
    }

    /// Backpropagates the reconstruction gradient plus an extra gradient on
    /// the quantizer input (commitment, entropy). For the vector quantizer
    /// the codebook term is added here and its value returned.
    pub fn backward_train(
        &mut self,
        grad_recon: &Tensor,
        grad_pre_quant: &Tensor,
        codebook_weight: f32,
    ) -> Result<Option<f32>> {
        let g = self.decoder.backward(grad_recon)?;
        if self.is_frozen(Component::Quantizer2) && !self.upstream_trainable() {
            self.drop_caches();
            return Ok(None);
        }
        let g = g.nchw_to_nhwc()?;
        let (n, w) = (g.rows(), g.last_dim());
        let grad_q = self.embed.backward(&g.reshape(&[n, w])?)?;
        if !self.upstream_trainable() {
            self.drop_caches();
            return Ok(None);
        }
        let encoder_frozen = self.is_frozen(Component::Encoder);
        let mut codebook_value = None;
        let grad_f = match &mut self.bottleneck {
            Bottleneck::Binary { projector, .. } => {
                hybrid_backward(projector, &grad_q, Some(grad_pre_quant))?
            }
            Bottleneck::Vector { codebook } => {
                let (f, out) = self.last_vq.take().expect("vector forward cached");
                let (value, cb_grad) = codebook_loss(&f, &out, codebook)?;
                let scaled: Vec<f32> = cb_grad.iter().map(|g| g * codebook_weight).collect();
                codebook.entries.accumulate(&scaled)?;
                codebook_value = Some(value * codebook_weight);
                let mut gf = grad_q.detached();
                for (a, b) in gf.data_mut().iter_mut().zip(grad_pre_quant.data()) {
                    *a += b;
                }
                gf
            }
        };
        if !encoder_frozen {
            let g = self.config.grid_size();
            let d = grad_f.last_dim();
            let b = grad_f.rows() / (g * g);
            let g4 = grad_f.reshape(&[b, g, g, d])?.nhwc_to_nchw()?;
            self.encoder.backward(&g4)?;
        } else {
            self.drop_caches();
        }
        Ok(codebook_value)
    }

    fn drop_caches(&mut self) {
        self.last_vq = None;
    }
}

fn nearest_rows(f: &Tensor, vq: &VqCodebook) -> Result<Tensor> {
    let mut out = Vec::with_capacity(f.numel());
    for r in 0..f.rows() {
        out.extend_from_slice(vq.entry(vq.nearest(f.row(r))));
    }
    Tensor::new(f.shape(), out)
}

impl HasParams for Codec {
    fn params(&self) -> Vec<&Parameter> {
        let mut v = self.encoder.params();
        match &self.bottleneck {
            Bottleneck::Binary { projector, router } => {
                if let Some(vq) = router {
                    v.extend(vq.params());
                }
                v.extend(projector.params());
            }
            Bottleneck::Vector { codebook } => v.extend(codebook.params()),
        }
        v.extend(self.embed.params());
        v.extend(self.decoder.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter> {
        let mut v = self.encoder.params_mut();
        match &mut self.bottleneck {
            Bottleneck::Binary { projector, router } => {
                if let Some(vq) = router {
                    v.extend(vq.params_mut());
                }
                v.extend(projector.params_mut());
            }
            Bottleneck::Vector { codebook } => v.extend(codebook.params_mut()),
        }
        v.extend(self.embed.params_mut());
        v.extend(self.decoder.params_mut());
        v
    }
}
