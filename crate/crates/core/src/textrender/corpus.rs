//! Seeded corpus of rendered text images with a line-delimited JSON manifest.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{stack, RgbImage};
use crate::seeded_rng;
use crate::tensor::Tensor;
use crate::textrender::render::{layout, render, Alignment, Geometry, RenderSpec};

pub const MANIFEST_FILE: &str = "manifest.jsonl";

/// Words with fewer than ten are "short" texts, the rest "long".
pub const LONG_TEXT_WORDS: usize = 10;

pub const WORDS: &[&str] = &[
    "a", "an", "as", "at", "be", "by", "do", "go", "he", "if", "in", "is", "it", "me", "my", "no",
    "of", "on", "or", "so", "to", "up", "us", "we", "act", "add", "age", "air", "all", "and",
    "any", "art", "ask", "bag", "bed", "big", "box", "boy", "bus", "can", "car", "cat", "cup",
    "day", "dog", "dry", "ear", "eat", "egg", "end", "eye", "far", "fly", "fox", "fun", "gas",
    "hat", "hot", "ice", "ink", "joy", "key", "kid", "law", "leg", "lot", "map", "mix", "net",
    "new", "now", "oil", "old", "one", "pen", "pot", "red", "run", "sea", "sky", "sun", "tea",
    "ten", "top", "toy", "two", "war", "way", "web", "wet", "yes", "zoo", "Art", "Big", "New",
    "Red", "Sun", "Top", "able", "also", "area", "back", "ball", "bank", "blue", "book", "call",
    "card", "city", "cold", "dark", "data", "door", "down", "easy", "face", "fact", "fast", "fire",
    "fish", "free", "game", "gift", "gold", "good", "hand", "help", "home", "idea", "just", "kind",
    "king", "lake", "land", "life", "line", "list", "long", "love", "make", "mind", "moon", "name",
    "nice", "note", "open", "page", "park", "plan", "play", "rain", "read", "road", "rock", "room",
    "rule", "safe", "sale", "ship", "shop", "show", "side", "sign", "snow", "song", "star", "stop",
    "talk", "team", "text", "time", "tree", "trip", "true", "view", "walk", "wind", "word", "work",
    "year", "zero", "Open", "Sale", "Text", "2024", "100%", "No.1", "OK!", "top-5", "e-mail", "#1",
    "$5", "(new)", "x+y", "image", "light", "music", "north", "ocean", "paper", "party", "place",
    "plant", "point", "power", "river", "round", "sound", "space", "store", "story", "table",
    "train", "water", "world", "write", "Hello", "Cafe", "Menu", "Exit",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusConfig {
    pub canvas: (u32, u32),
    pub fonts: Vec<u8>,
    pub scales: Vec<u32>,
    pub colors: Vec<[u8; 3]>,
    pub backgrounds: Vec<[u8; 3]>,
    pub rotations: Vec<f32>,
    pub alignments: Vec<Alignment>,
    /// Probability of drawing a long (ten words or more) text.
    pub long_fraction: f64,
    pub max_words: usize,
    /// Resampling budget per record before giving up with a capacity error.
    pub max_attempts: usize,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            canvas: (64, 64),
            fonts: vec![0, 1],
            scales: vec![1],
            colors: vec![
                [0, 0, 0],
                [150, 20, 20],
                [20, 40, 160],
                [20, 110, 40],
                [90, 30, 120],
            ],
            backgrounds: vec![[255, 255, 255], [250, 240, 210], [215, 230, 250]],
            rotations: vec![0.0],
            alignments: Alignment::ALL.to_vec(),
            long_fraction: 0.5,
            max_words: 16,
            max_attempts: 200,
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        let empty = self.fonts.is_empty()
            || self.scales.is_empty()
            || self.colors.is_empty()
            || self.backgrounds.is_empty()
            || self.rotations.is_empty()
            || self.alignments.is_empty();
        if empty {
            return Err(Error::Config(
                "every corpus choice list must be non-empty".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.long_fraction) || self.max_words == 0 {
            return Err(Error::Config("invalid corpus length settings".into()));
        }
        if self.long_fraction > 0.0 && self.max_words < LONG_TEXT_WORDS {
            return Err(Error::Config(format!(
                "long texts need max_words ≥ {LONG_TEXT_WORDS}"
            )));
        }
        Ok(())
    }
}

/// Controllable-variable phrase used inside generation prompts.
pub fn variables_phrase(g: &Geometry) -> String {
    let [r, gr, b] = g.color;
    format!(
        "font={} scale={} color={r},{gr},{b} align={} rot={}",
        g.font_id, g.scale, g.alignment, g.rotation_deg
    )
}

pub fn prompt_for(spec: &RenderSpec) -> String {
    format!(
        "Generate text image with {} using the following text: {}",
        variables_phrase(&spec.geometry),
        spec.text
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    /// Image file name relative to the manifest directory.
    pub image: String,
    #[serde(flatten)]
    pub spec: RenderSpec,
    pub prompt: String,
    pub seed: u64,
}

impl ManifestRecord {
    pub fn word_count(&self) -> usize {
        self.spec.text.split(' ').count()
    }

    pub fn is_long(&self) -> bool {
        self.word_count() >= LONG_TEXT_WORDS
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusManifest {
    pub dir: PathBuf,
    pub records: Vec<ManifestRecord>,
}

fn pick<T: Copy>(items: &[T], rng: &mut impl Rng) -> T {
    *items.choose(rng).expect("validated non-empty")
}

/// Draws one spec from the distribution using only `seed`.
pub fn sample_spec(cfg: &CorpusConfig, seed: u64) -> Result<RenderSpec> {
    cfg.validate()?;
    let mut rng = seeded_rng(seed);
    let mut background = pick(&cfg.backgrounds, &mut rng);
    let color = pick(&cfg.colors, &mut rng);
    if color == background {
        background = [255 - color[0], 255 - color[1], 255 - color[2]];
    }
    let geometry = Geometry {
        font_id: pick(&cfg.fonts, &mut rng),
        scale: pick(&cfg.scales, &mut rng),
        color,
        background,
        rotation_deg: pick(&cfg.rotations, &mut rng),
        alignment: pick(&cfg.alignments, &mut rng),
        canvas: cfg.canvas,
    };
    let long = rng.gen_bool(cfg.long_fraction);
    let (lo, hi) = if long {
        (LONG_TEXT_WORDS, cfg.max_words)
    } else {
        (1, (LONG_TEXT_WORDS - 1).min(cfg.max_words))
    };
    for _ in 0..cfg.max_attempts {
        let n = rng.gen_range(lo..=hi);
        let text = (0..n)
            .map(|_| pick(WORDS, &mut rng))
            .collect::<Vec<_>>()
            .join(" ");
        let spec = RenderSpec::new(text, geometry.clone());
        match layout(&spec) {
            Ok(_) => return Ok(spec),
            Err(Error::Capacity(_)) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(Error::Capacity(format!(
        "no {}-word text fits a {:?} canvas at scale {}",
        if long { "long" } else { "short" },
        cfg.canvas,
        geometry.scale
    )))
}

/// Per-record seeds drawn from the master seed.
pub fn record_seeds(n: usize, seed: u64) -> Vec<u64> {
    let mut rng = seeded_rng(seed);
    (0..n).map(|_| rng.next_u64()).collect()
}

pub fn image_name(i: usize) -> String {
    format!("img_{i:05}.ppm")
}

/// Records for `n` samples without touching the filesystem.
pub fn plan_corpus(n: usize, seed: u64, cfg: &CorpusConfig) -> Result<Vec<ManifestRecord>> {
    if n == 0 {
        return Err(Error::Domain("corpus size must be at least 1".into()));
    }
    record_seeds(n, seed)
        .into_iter()
        .enumerate()
        .map(|(i, s)| {
            let spec = sample_spec(cfg, s)?;
            Ok(ManifestRecord {
                image: image_name(i),
                prompt: prompt_for(&spec),
                spec,
                seed: s,
            })
        })
        .collect()
}

pub fn manifest_line(record: &ManifestRecord) -> Result<String> {
    Ok(serde_json::to_string(record)?)
}

/// Renders `n` images into `dir` and writes the manifest next to them.
pub fn generate_corpus(
    n: usize,
    seed: u64,
    cfg: &CorpusConfig,
    dir: &Path,
) -> Result<CorpusManifest> {
    let records = plan_corpus(n, seed, cfg)?;
    fs::create_dir_all(dir)?;
    let mut manifest = fs::File::create(dir.join(MANIFEST_FILE))?;
    for r in &records {
        render(&r.spec)?.save_ppm(&dir.join(&r.image))?;
        writeln!(manifest, "{}", manifest_line(r)?)?;
    }
    Ok(CorpusManifest {
        dir: dir.to_path_buf(),
        records,
    })
}

impl CorpusManifest {
    /// Reads `manifest.jsonl` from `dir` (or the given file).
    pub fn load(path: &Path) -> Result<Self> {
        let (dir, file) = if path.is_dir() {
            (path.to_path_buf(), path.join(MANIFEST_FILE))
        } else {
            (
                path.parent().map(Path::to_path_buf).unwrap_or_default(),
                path.to_path_buf(),
            )
        };
        let text = fs::read_to_string(&file)?;
        let records = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<std::result::Result<Vec<ManifestRecord>, _>>()?;
        Ok(Self { dir, records })
    }

    pub fn image_path(&self, r: &ManifestRecord) -> PathBuf {
        self.dir.join(&r.image)
    }

    pub fn load_image(&self, i: usize) -> Result<RgbImage> {
        RgbImage::load_ppm(&self.image_path(&self.records[i]))
    }

    /// All images stacked into `[N, 3, H, W]`.
    pub fn load_tensor(&self) -> Result<Tensor> {
        self.load_subset(&(0..self.records.len()).collect::<Vec<_>>())
    }

    pub fn load_subset(&self, indices: &[usize]) -> Result<Tensor> {
        let imgs = indices
            .iter()
            .map(|&i| self.load_image(i))
            .collect::<Result<Vec<_>>>()?;
        stack(&imgs)
    }

    /// Indices of records whose re-rendering differs from the stored file.
    pub fn verify(&self) -> Result<Vec<usize>> {
        let mut bad = Vec::new();
        for (i, r) in self.records.iter().enumerate() {
            if render(&r.spec)? != self.load_image(i)? {
                bad.push(i);
            }
        }
        Ok(bad)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prompt_format() {
        let spec = RenderSpec::new("Hi", Geometry::default());
        assert_eq!(
            prompt_for(&spec),
            "Generate text image with font=0 scale=1 color=0,0,0 align=left rot=0 using the following text: Hi"
        );
    }

    #[test]
    fn words_fit_default_canvas() {
        for w in WORDS {
            assert!(w.len() <= 8 && !w.contains(' '), "{w}");
            crate::textrender::render::validate_text(w).unwrap();
        }
    }

    #[test]
    fn planning_is_deterministic_and_covers_both_regimes() {
        let cfg = CorpusConfig::default();
        let a = plan_corpus(40, 3, &cfg).unwrap();
        assert_eq!(a, plan_corpus(40, 3, &cfg).unwrap());
        assert!(a.iter().any(|r| r.is_long()));
        assert!(a.iter().any(|r| !r.is_long()));
        assert!(a.iter().all(|r| r.word_count() <= cfg.max_words));
    }
}
