use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use textbin::armodel::{ArConfig, ArTrainConfig};
use textbin::codec::{CodecConfig, Component, TrainConfig};
use textbin::quant::ProjectorDepth;
use textbin::textrender::CorpusConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub corpus: CorpusSection,
    pub codec: CodecConfig,
    pub tokenizer: TokenizerSection,
    pub ar: ArSection,
    pub generate: GenerateSection,
    pub ablate: AblateSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: PathBuf::from("run"),
            corpus: CorpusSection::default(),
            codec: CodecConfig::default(),
            tokenizer: TokenizerSection::default(),
            ar: ArSection::default(),
            generate: GenerateSection::default(),
            ablate: AblateSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusSection {
    /// Existing corpus directory; defaults to `<out_dir>/corpus`.
    pub dir: Option<PathBuf>,
    pub size: usize,
    /// The last `test_size` records form the test split.
    pub test_size: usize,
    pub render: CorpusConfig,
}

impl Default for CorpusSection {
    fn default() -> Self {
        Self {
            dir: None,
            size: 256,
            test_size: 32,
            render: CorpusConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TokenizerSection {
    pub steps: u64,
    pub train: TrainConfig,
    /// Checkpoint to use; defaults to `<out_dir>/tokenizer.tbck`.
    pub checkpoint: Option<PathBuf>,
    pub log_every: u64,
}

impl Default for TokenizerSection {
    fn default() -> Self {
        Self {
            steps: 2000,
            train: TrainConfig::default(),
            checkpoint: None,
            log_every: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArSection {
    pub steps: u64,
    pub model: ArConfig,
    pub train: ArTrainConfig,
    /// Number of training records used; all of the training split if unset.
    pub limit: Option<usize>,
    pub checkpoint: Option<PathBuf>,
    pub log_every: u64,
}

impl Default for ArSection {
    fn default() -> Self {
        Self {
            steps: 3000,
            model: ArConfig::default(),
            train: ArTrainConfig::default(),
            limit: None,
            checkpoint: None,
            log_every: 50,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Greedy,
    Topk,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenerateSection {
    pub mode: Mode,
    pub k: usize,
    pub temperature: f32,
    pub prompt: Option<String>,
}

impl Default for GenerateSection {
    fn default() -> Self {
        Self {
            mode: Mode::Greedy,
            k: 8,
            temperature: 1.0,
            prompt: None,
        }
    }
}

/// One row of the ablation grid; unset fields keep the base codec settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Variant {
    pub name: String,
    #[serde(default)]
    pub freeze: BTreeSet<Component>,
    pub projector_depth: Option<ProjectorDepth>,
    pub dims: Option<u32>,
    /// `false` removes the vector-quantized routing path.
    pub hybrid: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblateSection {
    pub steps: u64,
    pub variants: Vec<Variant>,
}

impl Default for AblateSection {
    fn default() -> Self {
        let v = |name: &str| Variant {
            name: name.into(),
            freeze: BTreeSet::new(),
            projector_depth: None,
            dims: None,
            hybrid: None,
        };
        Self {
            steps: 100,
            variants: vec![
                Variant {
                    freeze: [Component::Encoder, Component::Vq].into_iter().collect(),
                    ..v("frozen-encoder-vq")
                },
                Variant {
                    projector_depth: Some(ProjectorDepth::Single),
                    ..v("projector-1")
                },
                Variant {
                    projector_depth: Some(ProjectorDepth::Transformer3),
                    ..v("projector-3")
                },
                Variant {
                    dims: Some(13),
                    ..v("dims-13")
                },
                Variant {
                    dims: Some(16),
                    ..v("dims-16")
                },
                Variant {
                    hybrid: Some(false),
                    ..v("no-vq")
                },
            ],
        }
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn corpus_dir(&self) -> PathBuf {
        self.corpus.dir.clone().unwrap_or_else(|| self.out_dir.join("corpus"))
    }

    pub fn tokenizer_path(&self) -> PathBuf {
        self.tokenizer
            .checkpoint
            .clone()
            .unwrap_or_else(|| self.out_dir.join("tokenizer.tbck"))
    }

    pub fn ar_path(&self) -> PathBuf {
        self.ar.checkpoint.clone().unwrap_or_else(|| self.out_dir.join("ar.tbck"))
    }
}

pub fn load(path: &Path) -> anyhow::Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)?;
    Ok(ExperimentConfig::parse(&text)?)
}
