mod config;

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use textbin::armodel::{self, ArModel, ArTrainer, Decoding};
use textbin::codec::{load_codec, moving_average, Codec, TokenizerTrainer};
use textbin::eval::{evaluate_generation, evaluate_reconstruction, format_sig6};
use textbin::quant::BinaryQuantizerConfig;
use textbin::textrender::{generate_corpus, CorpusManifest, ManifestRecord};
use textbin::{seeded_rng, HasParams};

use crate::config::{ExperimentConfig, Mode, Variant};

#[derive(Parser)]
#[command(name = "textbin", version, about = "Text-image tokenizer and generator experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the configured output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the step count of the command's training loop.
    #[arg(long)]
    steps: Option<u64>,
}

#[derive(Args, Clone)]
struct Sampling {
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    temperature: Option<f32>,
}

#[derive(Subcommand)]
enum Command {
    /// Render a seeded corpus and its manifest.
    CorpusGen(Common),
    /// Train the image tokenizer on the corpus training split.
    TrainTokenizer(Common),
    /// Train the prompt-to-token generator on tokenized training images.
    TrainAr(Common),
    /// Generate one image from a prompt.
    Generate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        sampling: Sampling,
        #[arg(long)]
        prompt: Option<String>,
    },
    /// Reconstruction metrics on the test split.
    EvalRecon(Common),
    /// OCR metrics of generated images for the test-split prompts.
    EvalGen {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        sampling: Sampling,
    },
    /// Train every configured tokenizer variant and tabulate the results.
    Ablate(Common),
}

/// Per-command directory `<out_dir>/<command>` holding the configuration
/// echo, run log and metrics; corpus and checkpoints live in `<out_dir>`.
struct Run {
    cfg: ExperimentConfig,
    out: PathBuf,
    log: fs::File,
}

impl Run {
    fn start(common: &Common, name: &str, apply_steps: impl FnOnce(&mut ExperimentConfig, u64)) -> Result<Self> {
        let mut cfg = match &common.config {
            Some(p) => config::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(s) = common.seed {
            cfg.seed = s;
        }
        if let Some(o) = &common.out {
            cfg.out_dir = o.clone();
        }
        if let Some(s) = common.steps {
            apply_steps(&mut cfg, s);
        }
        let out = cfg.out_dir.join(name);
        fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
        fs::write(out.join("config.toml"), cfg.to_toml())?;
        let log = fs::File::create(out.join("run.log"))?;
        let mut run = Self { cfg, out, log };
        run.note(&format!("{name} seed={}", run.cfg.seed))?;
        Ok(run)
    }

    fn note(&mut self, line: &str) -> Result<()> {
        writeln!(self.log, "{line}")?;
        eprintln!("{line}");
        Ok(())
    }

    fn write(&self, file: &str, contents: impl AsRef<[u8]>) -> Result<PathBuf> {
        let p = self.out.join(file);
        fs::write(&p, contents)?;
        Ok(p)
    }

    fn manifest(&self) -> Result<CorpusManifest> {
        let dir = self.cfg.corpus_dir();
        CorpusManifest::load(&dir).with_context(|| format!("reading corpus in {}", dir.display()))
    }
}

/// `(train, test)` record index ranges.
fn split(manifest: &CorpusManifest, test_size: usize) -> Result<(Vec<usize>, Vec<usize>)> {
    let n = manifest.records.len();
    if test_size >= n {
        return Err(textbin::Error::Domain(format!("test split of {test_size} leaves no training images out of {n}")).into());
    }
    Ok(((0..n - test_size).collect(), (n - test_size..n).collect()))
}

fn decoding(cfg: &ExperimentConfig, s: &Sampling) -> Decoding {
    let g = &cfg.generate;
    match s.mode.unwrap_or(g.mode) {
        Mode::Greedy => Decoding::Greedy,
        Mode::Topk => Decoding::TopK {
            k: s.k.unwrap_or(g.k),
            temperature: s.temperature.unwrap_or(g.temperature),
        },
    }
}

fn corpus_gen(common: &Common) -> Result<()> {
    let mut run = Run::start(common, "corpus-gen", |_, _| {})?;
    let dir = run.cfg.corpus_dir();
    let m = generate_corpus(run.cfg.corpus.size, run.cfg.seed, &run.cfg.corpus.render, &dir)?;
    let long = m.records.iter().filter(|r| r.is_long()).count();
    let mut csv = String::from("metric,value\n");
    writeln!(csv, "images,{}", m.records.len())?;
    writeln!(csv, "short,{}", m.records.len() - long)?;
    writeln!(csv, "long,{long}")?;
    run.write("metrics.csv", csv)?;
    run.note(&format!("wrote {} images", m.records.len()))
}

fn train_tokenizer(common: &Common) -> Result<()> {
    let mut run = Run::start(common, "train-tokenizer", |c, s| c.tokenizer.steps = s)?;
    let m = run.manifest()?;
    let (train_idx, test_idx) = split(&m, run.cfg.corpus.test_size)?;
    let train = m.load_subset(&train_idx)?;
    let test = m.load_subset(&test_idx)?;
    let sec = run.cfg.tokenizer.clone();
    let mut t = TokenizerTrainer::new(run.cfg.codec.clone(), sec.train.clone(), run.cfg.seed)?;
    for step in 1..=sec.steps {
        let b = t.train_step(&train)?;
        if sec.log_every > 0 && step % sec.log_every == 0 {
            run.note(&format!(
                "step {step} total {} l1 {} commit {} entropy {}",
                format_sig6(b.total as f64),
                format_sig6(b.reconstruction as f64),
                format_sig6(b.commitment as f64),
                format_sig6(b.entropy as f64)
            ))?;
        }
    }
    let path = run.cfg.tokenizer_path();
    t.save(&path)?;
    let mut losses = String::from("step,total,reconstruction,commitment,entropy,codebook,smoothed_reconstruction\n");
    let rec: Vec<f32> = t.state.loss_history.iter().map(|l| l.reconstruction).collect();
    for (i, (l, s)) in t.state.loss_history.iter().zip(moving_average(&rec, 100)).enumerate() {
        writeln!(
            losses,
            "{},{},{},{},{},{},{}",
            i + 1,
            format_sig6(l.total as f64),
            format_sig6(l.reconstruction as f64),
            format_sig6(l.commitment as f64),
            format_sig6(l.entropy as f64),
            format_sig6(l.codebook as f64),
            format_sig6(s)
        )?;
    }
    run.write("loss.csv", losses)?;
    let names: Vec<String> = test_idx.iter().map(|&i| m.records[i].image.clone()).collect();
    let (report, _) = evaluate_reconstruction(&test, &names, &t.codec, 8)?;
    run.write("metrics.csv", report.to_csv())?;
    run.write("summary.csv", report.summary_csv())?;
    run.note(&format!("saved {}", path.display()))
}

fn train_ar(common: &Common) -> Result<()> {
    let mut run = Run::start(common, "train-ar", |c, s| c.ar.steps = s)?;
    let m = run.manifest()?;
    let codec = load_codec(&run.cfg.tokenizer_path()).context("loading tokenizer")?;
    let (mut train_idx, _) = split(&m, run.cfg.corpus.test_size)?;
    if let Some(l) = run.cfg.ar.limit {
        train_idx.truncate(l);
    }
    let images = m.load_subset(&train_idx)?;
    let grids = textbin::codec::split_batches(&images, 16)?
        .iter()
        .map(|b| codec.tokenize(b))
        .collect::<textbin::Result<Vec<_>>>()?
        .concat();
    let prompts: Vec<String> = train_idx.iter().map(|&i| m.records[i].prompt.clone()).collect();
    let vocab = armodel::vocab_for(&codec);
    let data = armodel::training_sequences(&vocab, &prompts, &grids)?;
    let sec = run.cfg.ar.clone();
    let mut t = ArTrainer::new(vocab, sec.model.clone(), sec.train.clone(), run.cfg.seed)?;
    for step in 1..=sec.steps {
        let loss = t.train_step(&data)?;
        if sec.log_every > 0 && step % sec.log_every == 0 {
            run.note(&format!("step {step} loss {}", format_sig6(loss as f64)))?;
        }
    }
    let path = run.cfg.ar_path();
    t.save(&path)?;
    let mut csv = String::from("step,loss\n");
    for (i, l) in t.loss_history.iter().enumerate() {
        writeln!(csv, "{},{}", i + 1, format_sig6(*l as f64))?;
    }
    run.write("metrics.csv", csv)?;
    let mode = if sec.model.causal { "causal" } else { "bidirectional" };
    run.note(&format!("attention {mode}; saved {}", path.display()))
}

fn load_models(run: &Run) -> Result<(Codec, ArModel)> {
    let codec = load_codec(&run.cfg.tokenizer_path()).context("loading tokenizer")?;
    let ar = ArTrainer::load(&run.cfg.ar_path()).context("loading generator")?.model;
    Ok((codec, ar))
}

fn generate(common: &Common, sampling: &Sampling, prompt: Option<&String>) -> Result<()> {
    let mut run = Run::start(common, "generate", |_, _| {})?;
    let prompt = match prompt.or(run.cfg.generate.prompt.as_ref()) {
        Some(p) => p.clone(),
        None => bail!(textbin::Error::Config("no prompt given".into())),
    };
    let (codec, ar) = load_models(&run)?;
    let mode = decoding(&run.cfg, sampling);
    let mut rng = seeded_rng(run.cfg.seed);
    let (grid, img) = armodel::generate_image(&ar, &codec, &prompt, mode, &mut rng)?;
    let p = run.out.join("generated.ppm");
    img.save_ppm(&p)?;
    let tokens: Vec<String> = grid.iter().map(u32::to_string).collect();
    run.write("tokens.txt", tokens.join(" ") + "\n")?;
    run.write("metrics.csv", format!("prompt,tokens\n\"{}\",{}\n", prompt.replace('"', "\"\""), grid.len()))?;
    run.note(&format!("wrote {}", p.display()))
}

fn eval_recon(common: &Common) -> Result<()> {
    let mut run = Run::start(common, "eval-recon", |_, _| {})?;
    let m = run.manifest()?;
    let codec = load_codec(&run.cfg.tokenizer_path()).context("loading tokenizer")?;
    let (_, test_idx) = split(&m, run.cfg.corpus.test_size)?;
    let test = m.load_subset(&test_idx)?;
    let names: Vec<String> = test_idx.iter().map(|&i| m.records[i].image.clone()).collect();
    let (report, _) = evaluate_reconstruction(&test, &names, &codec, 8)?;
    run.write("metrics.csv", report.to_csv())?;
    run.write("summary.csv", report.summary_csv())?;
    run.note(&format!(
        "psnr {} ssim {} utilization {}",
        format_sig6(report.mean_psnr.unwrap_or(0.0)),
        format_sig6(report.mean_ssim.unwrap_or(0.0)),
        format_sig6(report.utilization.unwrap_or(0.0))
    ))
}

fn eval_gen(common: &Common, sampling: &Sampling) -> Result<()> {
    let mut run = Run::start(common, "eval-gen", |_, _| {})?;
    let m = run.manifest()?;
    let (codec, ar) = load_models(&run)?;
    let (_, test_idx) = split(&m, run.cfg.corpus.test_size)?;
    let records: Vec<ManifestRecord> = test_idx.iter().map(|&i| m.records[i].clone()).collect();
    let mode = decoding(&run.cfg, sampling);
    let mut rng = seeded_rng(run.cfg.seed);
    let report = evaluate_generation(&records, |r| {
        Ok(armodel::generate_image(&ar, &codec, &r.prompt, mode, &mut rng)?.1)
    })?;
    run.write("metrics.csv", report.to_csv())?;
    run.write("summary.csv", report.summary_csv())?;
    let s = report.short.clone().unwrap_or_default();
    let l = report.long.clone().unwrap_or_default();
    run.note(&format!(
        "short word_acc {} long word_acc {} skipped {}",
        format_sig6(s.word_acc),
        format_sig6(l.word_acc),
        report.skipped
    ))
}

fn variant_config(base: &textbin::codec::CodecConfig, v: &Variant) -> Result<textbin::codec::CodecConfig> {
    let mut c = base.clone();
    c.freeze = v.freeze.clone();
    if let Some(d) = v.projector_depth {
        c.projector_depth = d;
    }
    if let Some(d) = v.dims {
        let mut b = c
            .binary()
            .cloned()
            .unwrap_or_else(|| BinaryQuantizerConfig::with_dims(d));
        b.dims = d;
        c.quantizer = textbin::codec::QuantizerConfig::Binary(b);
    }
    match v.hybrid {
        Some(false) => c.hybrid = None,
        Some(true) if c.hybrid.is_none() => c.hybrid = Some(Default::default()),
        _ => {}
    }
    c.validate()?;
    Ok(c)
}

fn snapshot(codec: &Codec) -> Vec<(String, Vec<u32>)> {
    codec
        .params()
        .iter()
        .filter(|p| p.frozen)
        .map(|p| (p.name.clone(), p.data().iter().map(|v| v.to_bits()).collect()))
        .collect()
}

fn ablate(common: &Common) -> Result<()> {
    let mut run = Run::start(common, "ablate", |c, s| c.ablate.steps = s)?;
    let m = run.manifest()?;
    let (train_idx, test_idx) = split(&m, run.cfg.corpus.test_size)?;
    let train = m.load_subset(&train_idx)?;
    let test = m.load_subset(&test_idx)?;
    let names: Vec<String> = test_idx.iter().map(|&i| m.records[i].image.clone()).collect();
    let mut csv = String::from("variant,frozen,frozen_unchanged,final_l1,psnr,ssim,utilization\n");
    for v in run.cfg.ablate.variants.clone() {
        let cfg = variant_config(&run.cfg.codec, &v)?;
        let mut t = TokenizerTrainer::new(cfg, run.cfg.tokenizer.train.clone(), run.cfg.seed)?;
        let before = snapshot(&t.codec);
        for _ in 0..run.cfg.ablate.steps {
            t.train_step(&train)?;
        }
        let unchanged = before == snapshot(&t.codec);
        let (report, _) = evaluate_reconstruction(&test, &names, &t.codec, 8)?;
        let l1 = t.state.loss_history.last().map(|l| l.reconstruction).unwrap_or(f32::NAN);
        let frozen: Vec<String> = v.freeze.iter().map(|c| c.to_string()).collect();
        writeln!(
            csv,
            "{},{},{},{},{},{},{}",
            v.name,
            frozen.join("+"),
            unchanged,
            format_sig6(l1 as f64),
            format_sig6(report.mean_psnr.unwrap_or(0.0)),
            format_sig6(report.mean_ssim.unwrap_or(0.0)),
            format_sig6(report.utilization.unwrap_or(0.0))
        )?;
        run.note(&format!("variant {} done, frozen parameters unchanged: {unchanged}", v.name))?;
        if !unchanged {
            bail!("variant {} modified a frozen parameter", v.name);
        }
    }
    run.write("metrics.csv", csv)?;
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.downcast_ref::<toml::de::Error>().is_some() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<textbin::Error>() {
            use textbin::Error::*;
            return match e {
                Config(_) | Json(_) | Format(_) => 2,
                Capacity(_) | Domain(_) | Dimension(_) | Encoding(_) => 3,
                Divergence { .. } | Numeric(_) => 4,
                _ => 1,
            };
        }
    }
    1
}

fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::CorpusGen(c) => corpus_gen(c),
        Command::TrainTokenizer(c) => train_tokenizer(c),
        Command::TrainAr(c) => train_ar(c),
        Command::Generate {
            common,
            sampling,
            prompt,
        } => generate(common, sampling, prompt.as_ref()),
        Command::EvalRecon(c) => eval_recon(c),
        Command::EvalGen { common, sampling } => eval_gen(common, sampling),
        Command::Ablate(c) => ablate(c),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
