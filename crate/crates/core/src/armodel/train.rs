use std::path::Path;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::armodel::model::{ArConfig, ArModel};
use crate::armodel::vocab::{TokenSequence, VocabLayout};
use crate::checkpoint::{self, RngState};
use crate::error::{ensure_domain, Error, Result};
use crate::optim::{AdamW, OptimizerConfig};
use crate::tensor::HasParams;
use crate::{seeded_rng, Rng64};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArTrainConfig {
    /// Sequences per step; the whole set is used when it is not larger.
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
}

impl Default for ArTrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 8,
            optimizer: OptimizerConfig {
                decay_steps: 3000,
                ..Default::default()
            },
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ArMeta {
    kind: String,
    vocab: VocabLayout,
    model: ArConfig,
    train: ArTrainConfig,
    step: u64,
    optimizer_step: u64,
    rng: RngState,
    loss_history: Vec<f32>,
}

const META_KIND: &str = "ar";

#[derive(Debug)]
pub struct ArTrainer {
    pub model: ArModel,
    pub config: ArTrainConfig,
    pub step: u64,
    pub optimizer: AdamW,
    pub rng: Rng64,
    pub loss_history: Vec<f32>,
}

impl ArTrainer {
    pub fn new(
        vocab: VocabLayout,
        model: ArConfig,
        config: ArTrainConfig,
        seed: u64,
    ) -> Result<Self> {
        config.optimizer.validate()?;
        if config.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        let mut rng = seeded_rng(seed);
        let model = ArModel::new(model, vocab, &mut rng)?;
        Ok(Self {
            model,
            optimizer: AdamW::new(config.optimizer.clone()),
            config,
            step: 0,
            rng,
            loss_history: Vec::new(),
        })
    }

    /// One update on a batch drawn from `data`; returns the batch loss.
    pub fn train_step(&mut self, data: &[TokenSequence]) -> Result<f32> {
        ensure_domain!(!data.is_empty(), "no training sequences");
        let batch: Vec<TokenSequence> = if self.config.batch_size >= data.len() {
            data.to_vec()
        } else {
            let mut idx = sample(&mut self.rng, data.len(), self.config.batch_size).into_vec();
            idx.sort_unstable();
            idx.into_iter().map(|i| data[i].clone()).collect()
        };
        let loss = self.model.masked_loss_and_grad(&batch, &mut self.rng)?;
        if !loss.is_finite() {
            self.model.zero_grad();
            return Err(Error::Divergence {
                step: self.step + 1,
                reason: format!("loss became {loss}"),
            });
        }
        self.optimizer.step(self.model.params_mut())?;
        self.step += 1;
        self.loss_history.push(loss);
        Ok(loss)
    }

    pub fn train(&mut self, data: &[TokenSequence], steps: u64) -> Result<f32> {
        let mut last = f32::NAN;
        for _ in 0..steps {
            last = self.train_step(data)?;
        }
        Ok(last)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let params = self.model.params();
        checkpoint::write_records(
            path,
            &checkpoint::training_records(&params, Some(&self.optimizer)),
        )?;
        checkpoint::write_sidecar(
            path,
            &ArMeta {
                kind: META_KIND.into(),
                vocab: self.model.vocab,
                model: self.model.config.clone(),
                train: self.config.clone(),
                step: self.step,
                optimizer_step: self.optimizer.step,
                rng: RngState::capture(&self.rng),
                loss_history: self.loss_history.clone(),
            },
        )
    }

    pub fn load(path: &Path) -> Result<Self> {
        let meta: ArMeta = checkpoint::read_sidecar(path)?;
        if meta.kind != META_KIND {
            return Err(Error::Config(format!(
                "{} is a {} checkpoint",
                path.display(),
                meta.kind
            )));
        }
        let records = checkpoint::read_records(path)?;
        let mut t = Self::new(meta.vocab, meta.model, meta.train, 0)?;
        let moments = checkpoint::restore_records(&records, &mut t.model.params_mut())?;
        t.optimizer = AdamW {
            config: t.config.optimizer.clone(),
            step: meta.optimizer_step,
            moments,
        };
        t.step = meta.step;
        t.rng = meta.rng.restore()?;
        t.loss_history = meta.loss_history;
        Ok(t)
    }
}
