use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{self, RngState};
use crate::codec::config::CodecConfig;
use crate::codec::loss::{tokenizer_loss, LossBreakdown};
use crate::codec::model::Codec;
use crate::error::{ensure_dim, ensure_domain, Error, Result};
use crate::optim::{AdamW, OptimizerConfig};
use crate::quant::CodebookStats;
use crate::tensor::{HasParams, Tensor};
use crate::{seeded_rng, Rng64};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    /// Steps between in-memory snapshots used to recover from divergence.
    pub snapshot_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 8,
            optimizer: OptimizerConfig::default(),
            snapshot_every: 50,
        }
    }
}

/// Everything needed to continue training bitwise where it stopped.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub step: u64,
    pub optimizer: AdamW,
    pub rng: Rng64,
    pub loss_history: Vec<LossBreakdown>,
}

#[derive(Debug, Clone)]
struct Snapshot {
    params: Vec<Vec<f32>>,
    state: TrainState,
}

#[derive(Debug, Serialize, Deserialize)]
struct TokenizerMeta {
    kind: String,
    codec: CodecConfig,
    train: TrainConfig,
    step: u64,
    optimizer_step: u64,
    rng: RngState,
    loss_history: Vec<LossBreakdown>,
}

const META_KIND: &str = "tokenizer";

/// Owns a codec together with its optimizer and random stream.
#[derive(Debug)]
pub struct TokenizerTrainer {
    pub codec: Codec,
    pub config: TrainConfig,
    pub state: TrainState,
    snapshot: Option<Snapshot>,
}

impl TokenizerTrainer {
    /// Fresh model; parameters and the training stream both derive from `seed`.
    pub fn new(codec_config: CodecConfig, config: TrainConfig, seed: u64) -> Result<Self> {
        config.optimizer.validate()?;
        if config.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        let mut rng = seeded_rng(seed);
        let codec = Codec::new(codec_config, &mut rng)?;
        Ok(Self {
            codec,
            state: TrainState {
                step: 0,
                optimizer: AdamW::new(config.optimizer.clone()),
                rng,
                loss_history: Vec::new(),
            },
            config,
            snapshot: None,
        })
    }

    fn take_snapshot(&mut self) {
        self.snapshot = Some(Snapshot {
            params: self
                .codec
                .params()
                .iter()
                .map(|p| p.data().to_vec())
                .collect(),
            state: self.state.clone(),
        });
    }

    fn restore_snapshot(&mut self) {
        if let Some(s) = self.snapshot.clone() {
            for (p, data) in self.codec.params_mut().into_iter().zip(&s.params) {
                p.tensor.data_mut().copy_from_slice(data);
                p.zero_grad();
            }
            self.state = s.state;
        }
    }

    fn sample_batch(&mut self, corpus: &Tensor) -> Result<Tensor> {
        let n = corpus.shape()[0];
        let per = corpus.numel() / n;
        let b = self.config.batch_size;
        let mut data = Vec::with_capacity(b * per);
        for _ in 0..b {
            let i = self.state.rng.gen_range(0..n);
            data.extend_from_slice(&corpus.data()[i * per..(i + 1) * per]);
        }
        let mut shape = corpus.shape().to_vec();
        shape[0] = b;
        Tensor::new(&shape, data)
    }

    /// One optimizer update on a batch drawn from `corpus[N×3×H×W]`.
    pub fn train_step(&mut self, corpus: &Tensor) -> Result<LossBreakdown> {
        ensure_dim!(
            corpus.rank() == 4,
            "corpus must be N×3×H×W, got {:?}",
            corpus.shape()
        );
        ensure_domain!(corpus.shape()[0] > 0, "empty corpus");
        if self.snapshot.is_none() || self.state.step % self.config.snapshot_every.max(1) == 0 {
            self.take_snapshot();
        }
        match self.try_step(corpus) {
            Ok(b) => Ok(b),
            Err(Error::Divergence { step, reason }) => {
                self.restore_snapshot();
                Err(Error::Divergence { step, reason })
            }
            Err(e) => Err(e),
        }
    }

    fn try_step(&mut self, corpus: &Tensor) -> Result<LossBreakdown> {
        let batch = self.sample_batch(corpus)?;
        let fwd = self.codec.forward_train(&batch, &mut self.state.rng)?;
        let cfg = self.codec.config().clone();
        let (mut breakdown, grads) =
            tokenizer_loss(&batch, &fwd.recon, &fwd.pre_quant, &fwd.quantized, &cfg)?;
        let step = self.state.step + 1;
        if !breakdown.total.is_finite() {
            return Err(Error::Divergence {
                step,
                reason: format!("loss became {}", breakdown.total),
            });
        }
        if let Some(cb) = self
            .codec
            .backward_train(&grads.reconstruction, &grads.pre_quant, 1.0)?
        {
            breakdown.codebook = cb;
            breakdown.total += cb;
        }
        self.state.optimizer.step(self.codec.params_mut())?;
        self.state.step = step;
        self.state.loss_history.push(breakdown);
        Ok(breakdown)
    }

    /// Runs `steps` updates; on divergence the last good snapshot is kept.
    pub fn train(&mut self, corpus: &Tensor, steps: u64) -> Result<&TrainState> {
        for _ in 0..steps {
            self.train_step(corpus)?;
        }
        Ok(&self.state)
    }

    /// Writes parameters and moments to `path` and metadata to its sidecar.
    pub fn save(&self, path: &Path) -> Result<()> {
        let params = self.codec.params();
        checkpoint::write_records(
            path,
            &checkpoint::training_records(&params, Some(&self.state.optimizer)),
        )?;
        checkpoint::write_sidecar(
            path,
            &TokenizerMeta {
                kind: META_KIND.into(),
                codec: self.codec.config().clone(),
                train: self.config.clone(),
                step: self.state.step,
                optimizer_step: self.state.optimizer.step,
                rng: RngState::capture(&self.state.rng),
                loss_history: self.state.loss_history.clone(),
            },
        )
    }

    pub fn load(path: &Path) -> Result<Self> {
        let meta: TokenizerMeta = checkpoint::read_sidecar(path)?;
        if meta.kind != META_KIND {
            return Err(Error::Config(format!(
                "{} is a {} checkpoint",
                path.display(),
                meta.kind
            )));
        }
        let records = checkpoint::read_records(path)?;
        let mut trainer = Self::new(meta.codec, meta.train, 0)?;
        let moments = checkpoint::restore_records(&records, &mut trainer.codec.params_mut())?;
        trainer.state = TrainState {
            step: meta.step,
            optimizer: AdamW {
                config: trainer.config.optimizer.clone(),
                step: meta.optimizer_step,
                moments,
            },
            rng: meta.rng.restore()?,
            loss_history: meta.loss_history,
        };
        Ok(trainer)
    }
}

/// Loads only the codec from a tokenizer checkpoint.
pub fn load_codec(path: &Path) -> Result<Codec> {
    Ok(TokenizerTrainer::load(path)?.codec)
}

pub fn save_codec(codec: &Codec, path: &Path) -> Result<()> {
    let params = codec.params();
    checkpoint::write_records(path, &checkpoint::training_records(&params, None))?;
    checkpoint::write_sidecar(
        path,
        &TokenizerMeta {
            kind: META_KIND.into(),
            codec: codec.config().clone(),
            train: TrainConfig::default(),
            step: 0,
            optimizer_step: 0,
            rng: RngState::capture(&seeded_rng(0)),
            loss_history: Vec::new(),
        },
    )
}

/// Convenience wrapper: trains a fresh codec for `steps` updates.
pub fn train_tokenizer(
    corpus: &Tensor,
    codec_config: CodecConfig,
    config: TrainConfig,
    steps: u64,
    seed: u64,
) -> Result<TokenizerTrainer> {
    let mut t = TokenizerTrainer::new(codec_config, config, seed)?;
    t.train(corpus, steps)?;
    Ok(t)
}

/// Token usage over `images`, tokenized in chunks of `chunk` images.
pub fn codebook_stats(codec: &Codec, images: &Tensor, chunk: usize) -> Result<CodebookStats> {
    let mut stats = CodebookStats::new(codec.config().codebook_size());
    for batch in split_batches(images, chunk)? {
        for grid in codec.tokenize(&batch)? {
            stats.update(&grid)?;
        }
    }
    Ok(stats)
}

/// Splits `[N×…]` into consecutive tensors of at most `chunk` items.
pub fn split_batches(images: &Tensor, chunk: usize) -> Result<Vec<Tensor>> {
    ensure_domain!(chunk > 0, "chunk size must be positive");
    let n = images.shape()[0];
    let per = images.numel() / n.max(1);
    (0..n)
        .step_by(chunk)
        .map(|s| {
            let e = (s + chunk).min(n);
            let mut shape = images.shape().to_vec();
            shape[0] = e - s;
            Tensor::new(&shape, images.data()[s * per..e * per].to_vec())
        })
        .collect()
}

/// Smoothed series: trailing mean over `window` entries.
pub fn moving_average(values: &[f32], window: usize) -> Vec<f64> {
    let w = window.max(1);
    let mut out = Vec::with_capacity(values.len());
    let mut acc = 0.0f64;
    for (i, &v) in values.iter().enumerate() {
        acc += v as f64;
        if i >= w {
            acc -= values[i - w] as f64;
        }
        out.push(acc / (i + 1).min(w) as f64);
    }
    out
}
