use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::armodel::vocab::{TokenSequence, VocabLayout};
use crate::error::{ensure_domain, Error, Result};
use crate::nn::{LayerNorm, TransformerBlock};
use crate::ops::linalg::{gemm_nn, gemm_nt, gemm_tn};
use crate::ops::softmax_cross_entropy;
use crate::tensor::{HasParams, Parameter, Tensor};
use crate::Rng64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArConfig {
    pub layers: usize,
    pub heads: usize,
    pub model_dim: usize,
    pub ffn_hidden: usize,
    pub context_len: usize,
    pub dropout: f32,
    /// Causal attention mask instead of full bidirectional attention.
    pub causal: bool,
}

impl Default for ArConfig {
    fn default() -> Self {
        Self {
            layers: 4,
            heads: 4,
            model_dim: 128,
            ffn_hidden: 512,
            context_len: 512,
            dropout: 0.1,
            causal: false,
        }
    }
}

impl ArConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.layers > 0
            && self.heads > 0
            && self.model_dim % self.heads == 0
            && self.ffn_hidden > 0
            && self.context_len > 0
            && (0.0..1.0).contains(&self.dropout);
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid model settings {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum Decoding {
    Greedy,
    TopK { k: usize, temperature: f32 },
}

/// Transformer over the unified vocabulary. Embedding and output rows of
/// non-visual ids never change during training.
#[derive(Debug)]
pub struct ArModel {
    pub config: ArConfig,
    pub vocab: VocabLayout,
    /// `[V × D]`; rows `0..K` are the visual embeddings.
    pub embed: Parameter,
    pub positions: Parameter,
    pub blocks: Vec<TransformerBlock>,
    pub final_norm: LayerNorm,
    /// Output projection `[V × D]`, tied in layout to `embed`.
    pub head: Parameter,
    cache: Option<ForwardCache>,
}

#[derive(Debug)]
struct ForwardCache {
    ids: Vec<u32>,
    span: (usize, usize),
    /// Normalized hidden states at the image rows.
    hidden: Tensor,
}

impl ArModel {
    pub fn new(config: ArConfig, vocab: VocabLayout, rng: &mut Rng64) -> Result<Self> {
        config.validate()?;
        let d = config.model_dim;
        let v = vocab.total();
        let mut embed = Parameter::new("ar.embed", Tensor::randn(&[v, d], 0.02, rng));
        embed.update_rows = Some(0..vocab.visual);
        let positions =
            Parameter::new("ar.pos", Tensor::randn(&[config.context_len, d], 0.02, rng));
        let blocks = (0..config.layers)
            .map(|i| {
                TransformerBlock::new(
                    &format!("ar.block{i}"),
                    d,
                    config.heads,
                    config.ffn_hidden,
                    config.dropout,
                    config.causal,
                    rng,
                )
            })
            .collect();
        let mut head = Parameter::new("ar.head", Tensor::randn(&[v, d], 0.02, rng));
        head.update_rows = Some(0..vocab.visual);
        Ok(Self {
            final_norm: LayerNorm::new("ar.final_norm", d),
            config,
            vocab,
            embed,
            positions,
            blocks,
            head,
            cache: None,
        })
    }

    fn check_ids(&self, ids: &[u32]) -> Result<()> {
        if ids.len() > self.config.context_len {
            return Err(Error::Capacity(format!(
                "sequence of {} tokens exceeds context of {}",
                ids.len(),
                self.config.context_len
            )));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i as usize >= self.vocab.total()) {
            return Err(Error::Domain(format!(
                "id {bad} outside vocabulary of {}",
                self.vocab.total()
            )));
        }
        Ok(())
    }

    /// Token plus position embeddings, `[L × D]`.
    pub fn embed_ids(&self, ids: &[u32]) -> Result<Tensor> {
        self.check_ids(ids)?;
        let d = self.config.model_dim;
        let mut out = Vec::with_capacity(ids.len() * d);
        for (p, &id) in ids.iter().enumerate() {
            let e = self.embed.value().row(id as usize);
            let q = self.positions.value().row(p);
            out.extend(e.iter().zip(q).map(|(a, b)| a + b));
        }
        Tensor::new(&[ids.len(), d], out)
    }

    fn project(&self, hidden: &Tensor) -> Result<Tensor> {
        let (n, d) = (hidden.rows(), self.config.model_dim);
        let v = self.vocab.total();
        let mut logits = vec![0.0; n * v];
        gemm_nt(n, d, v, hidden.data(), self.head.data(), &mut logits);
        Tensor::new(&[n, v], logits)
    }

    fn image_rows(h: &Tensor, span: (usize, usize)) -> Result<Tensor> {
        let d = h.last_dim();
        Tensor::new(
            &[span.1, d],
            h.data()[span.0 * d..(span.0 + span.1) * d].to_vec(),
        )
    }

    /// Logits over the full vocabulary at the image rows of `seq`, computed
    /// on the PAD-masked input without dropout.
    pub fn logits(&self, seq: &TokenSequence) -> Result<Tensor> {
        ensure_domain!(seq.image_span.1 > 0, "empty image span");
        let input = seq.masked(&self.vocab);
        let n = input.ids.len();
        let mut h = self.embed_ids(&input.ids)?;
        for b in &self.blocks {
            h = b.infer(&h, n)?;
        }
        let h = self
            .final_norm
            .infer(&Self::image_rows(&h, seq.image_span)?)?;
        self.project(&h)
    }

    fn forward(&mut self, input: &TokenSequence, mut rng: Option<&mut Rng64>) -> Result<Tensor> {
        let n = input.ids.len();
        let mut h = self.embed_ids(&input.ids)?;
        for b in &mut self.blocks {
            h = b.forward(&h, n, rng.as_deref_mut())?;
        }
        // the final norm is per-row, so only image rows need to go through it
        let hidden = self
            .final_norm
            .forward(&Self::image_rows(&h, input.image_span)?)?;
        let logits = self.project(&hidden)?;
        self.cache = Some(ForwardCache {
            ids: input.ids.clone(),
            span: input.image_span,
            hidden,
        });
        Ok(logits)
    }

    fn backward(&mut self, grad_logits: &Tensor) -> Result<()> {
        let cache = self
            .cache
            .take()
            .ok_or_else(|| Error::Numeric("backward without forward".into()))?;
        let d = self.config.model_dim;
        let v = self.vocab.total();
        let rows = cache.hidden.rows();
        let mut head_grad = vec![0.0; v * d];
        gemm_tn(
            v,
            rows,
            d,
            grad_logits.data(),
            cache.hidden.data(),
            &mut head_grad,
        );
        self.head.accumulate(&head_grad)?;
        let mut gh = vec![0.0; rows * d];
        gemm_nn(rows, v, d, grad_logits.data(), self.head.data(), &mut gh);
        let gh = self.final_norm.backward(&Tensor::new(&[rows, d], gh)?)?;
        let n = cache.ids.len();
        let mut g = Tensor::zeros(&[n, d]);
        g.data_mut()[cache.span.0 * d..(cache.span.0 + cache.span.1) * d]
            .copy_from_slice(gh.data());
        for b in self.blocks.iter_mut().rev() {
            g = b.backward(&g)?;
        }
        let mut eg = vec![0.0; v * d];
        for (p, &id) in cache.ids.iter().enumerate() {
            let src = g.row(p);
            let dst = &mut eg[id as usize * d..(id as usize + 1) * d];
            add_slice(dst, src);
        }
        self.embed.accumulate(&eg)?;
        let mut pg = vec![0.0; self.config.context_len * d];
        pg[..n * d].copy_from_slice(g.data());
        self.positions.accumulate(&pg)
    }

    /// Forward and backward on a batch with every image token masked.
    /// Returns the mean cross-entropy over all image positions of the batch;
    /// gradients are accumulated, not applied.
    pub fn masked_loss_and_grad(
        &mut self,
        batch: &[TokenSequence],
        rng: &mut Rng64,
    ) -> Result<f32> {
        ensure_domain!(!batch.is_empty(), "empty batch");
        let total: usize = batch.iter().map(|s| s.image_span.1).sum();
        let mut loss = 0.0f64;
        for seq in batch {
            ensure_domain!(seq.image_span.1 > 0, "empty image span");
            let targets: Vec<usize> = seq.image().iter().map(|&t| t as usize).collect();
            if let Some(&bad) = targets.iter().find(|&&t| t >= self.vocab.visual) {
                return Err(Error::Domain(format!(
                    "image target {bad} is not a visual id"
                )));
            }
            let input = seq.masked(&self.vocab);
            assert!(
                input.ids.iter().all(|&i| !self.vocab.is_visual(i)),
                "a visual id reached the model input"
            );
            let logits = self.forward(&input, Some(rng))?;
            let mask = vec![true; targets.len()];
            let (l, mut g) = softmax_cross_entropy(&logits, &targets, &mask)?;
            let weight = targets.len() as f64 / total as f64;
            loss += l as f64 * weight;
            for x in g.data_mut() {
                *x *= weight as f32;
            }
            self.backward(&g)?;
        }
        Ok(loss as f32)
    }

    /// Visual token grid for `prompt`: one pass over the PAD-filled span,
    /// then positions are decided in raster order from the distribution
    /// restricted to visual ids.
    pub fn generate(
        &self,
        prompt: &str,
        tokens: usize,
        mode: Decoding,
        rng: &mut Rng64,
    ) -> Result<Vec<u32>> {
        let seq = TokenSequence::build(&self.vocab, prompt, None, tokens)?;
        self.check_ids(&seq.ids)?;
        let logits = self.logits(&seq)?;
        let k_vis = self.vocab.visual;
        (0..tokens)
            .map(|r| {
                let row = &logits.row(r)[..k_vis];
                match mode {
                    Decoding::Greedy => Ok(argmax(row)),
                    Decoding::TopK { k, temperature } => sample_top_k(row, k, temperature, rng),
                }
            })
            .collect()
    }
}

fn add_slice(dst: &mut [f32], src: &[f32]) {
    for (a, b) in dst.iter_mut().zip(src) {
        *a += b;
    }
}

/// Index of the largest value; ties go to the lowest index.
fn argmax(row: &[f32]) -> u32 {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best as u32
}

fn sample_top_k(row: &[f32], k: usize, temperature: f32, rng: &mut Rng64) -> Result<u32> {
    ensure_domain!(k >= 1, "top-k needs k ≥ 1");
    ensure_domain!(temperature > 0.0, "temperature must be positive");
    let mut order: Vec<usize> = (0..row.len()).collect();
    order.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
    order.truncate(k.min(row.len()));
    let max = row[order[0]] as f64;
    let weights: Vec<f64> = order
        .iter()
        .map(|&i| ((row[i] as f64 - max) / temperature as f64).exp())
        .collect();
    let sum: f64 = weights.iter().sum();
    let mut u = rng.gen::<f64>() * sum;
    for (&i, w) in order.iter().zip(&weights) {
        if u < *w {
            return Ok(i as u32);
        }
        u -= w;
    }
    Ok(*order.last().expect("k ≥ 1") as u32)
}

impl HasParams for ArModel {
    fn params(&self) -> Vec<&Parameter> {
        let mut v = vec![&self.embed, &self.positions];
        for b in &self.blocks {
            v.extend(b.params());
        }
        v.extend(self.final_norm.params());
        v.push(&self.head);
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter> {
        let mut v = vec![&mut self.embed, &mut self.positions];
        for b in &mut self.blocks {
            v.extend(b.params_mut());
        }
        v.extend(self.final_norm.params_mut());
        v.push(&mut self.head);
        v
    }
}
