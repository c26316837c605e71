//! PSNR, SSIM, codebook utilization, OCR accuracy and CSV reports.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::Serialize;

use crate::codec::{split_batches, Codec};
use crate::error::{ensure_dim, ensure_domain, Error, Result};
use crate::image::RgbImage;
use crate::quant::CodebookStats;
use crate::tensor::Tensor;
use crate::textrender::{char_accuracy, f_measure, ocr_oracle, word_accuracy, ManifestRecord};

pub const PSNR_CAP: f64 = 99.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Psnr,
    Ssim,
    Utilization,
    WordAccuracy,
    CharAccuracy,
    FMeasure,
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "psnr" => Ok(Metric::Psnr),
            "ssim" => Ok(Metric::Ssim),
            "utilization" => Ok(Metric::Utilization),
            "word_acc" | "word_accuracy" => Ok(Metric::WordAccuracy),
            "char_acc" | "char_accuracy" => Ok(Metric::CharAccuracy),
            "f_measure" => Ok(Metric::FMeasure),
            "fid" => Err(Error::UnsupportedMetric(
                "FID needs a pretrained perception network".into(),
            )),
            "clipscore" | "clip_score" => Err(Error::UnsupportedMetric(
                "CLIPScore needs a pretrained joint image-text model".into(),
            )),
            other => Err(Error::UnsupportedMetric(format!(
                "unknown metric {other:?}"
            ))),
        }
    }
}

fn check_pixels(a: &Tensor, b: &Tensor) -> Result<()> {
    a.ensure_same_shape(b, "metric inputs")?;
    let ok = |t: &Tensor| t.data().iter().all(|v| (0.0..=1.0).contains(v));
    ensure_domain!(ok(a) && ok(b), "pixel values must lie in [0, 1]");
    Ok(())
}

/// Peak signal-to-noise ratio for unit peak, capped at [`PSNR_CAP`].
pub fn psnr(a: &Tensor, b: &Tensor) -> Result<f64> {
    check_pixels(a, b)?;
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum::<f64>()
        / a.numel() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP))
}

fn grayscale(t: &Tensor) -> Result<(usize, usize, Vec<f64>)> {
    let (c, h, w) = match t.shape() {
        [c, h, w] | [1, c, h, w] => (*c, *h, *w),
        [h, w] => (1, *h, *w),
        s => return Err(Error::Dimension(format!("expected C×H×W image, got {s:?}"))),
    };
    let plane = h * w;
    let gray = (0..plane)
        .map(|p| {
            (0..c)
                .map(|ch| t.data()[ch * plane + p] as f64)
                .sum::<f64>()
                / c as f64
        })
        .collect();
    Ok((h, w, gray))
}

fn gaussian_window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-((i as f64 - r).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    let g: Vec<f64> = g.iter().map(|v| v / s).collect();
    let mut w = Vec::with_capacity(SSIM_WINDOW * SSIM_WINDOW);
    for gy in &g {
        for gx in &g {
            w.push(gy * gx);
        }
    }
    w
}

/// Mean structural similarity over all valid 11×11 Gaussian windows of the
/// channel-mean grayscale images.
pub fn ssim(a: &Tensor, b: &Tensor) -> Result<f64> {
    check_pixels(a, b)?;
    let (h, w, ga) = grayscale(a)?;
    let (_, _, gb) = grayscale(b)?;
    ensure_domain!(
        h >= SSIM_WINDOW && w >= SSIM_WINDOW,
        "image {h}×{w} smaller than the {SSIM_WINDOW}×{SSIM_WINDOW} window"
    );
    let win = gaussian_window();
    let k = SSIM_WINDOW;
    let mut total = 0.0f64;
    for y in 0..=h - k {
        for x in 0..=w - k {
            let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for j in 0..k {
                for i in 0..k {
                    let wt = win[j * k + i];
                    let p = (y + j) * w + x + i;
                    let (va, vb) = (ga[p], gb[p]);
                    ma += wt * va;
                    mb += wt * vb;
                    saa += wt * va * va;
                    sbb += wt * vb * vb;
                    sab += wt * (va * vb);
                }
            }
            let var_a = saa - ma * ma;
            let var_b = sbb - mb * mb;
            let cov = sab - ma * mb;
            let num = (2.0 * (ma * mb) + SSIM_C1) * (2.0 * cov + SSIM_C2);
            let den = (ma * ma + mb * mb + SSIM_C1) * (var_a + var_b + SSIM_C2);
            total += num / den;
        }
    }
    let n = ((h - k + 1) * (w - k + 1)) as f64;
    Ok((total / n).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct MetricRow {
    pub name: String,
    pub words: Option<usize>,
    pub psnr: Option<f64>,
    pub ssim: Option<f64>,
    pub word_acc: Option<f64>,
    pub char_acc: Option<f64>,
    pub f_measure: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SplitSummary {
    pub count: usize,
    pub word_acc: f64,
    pub char_acc: f64,
    pub f_measure: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct MetricReport {
    pub rows: Vec<MetricRow>,
    pub mean_psnr: Option<f64>,
    pub mean_ssim: Option<f64>,
    pub utilization: Option<f64>,
    pub short: Option<SplitSummary>,
    pub long: Option<SplitSummary>,
    /// Records left out, e.g. renderings the OCR cannot read.
    pub skipped: usize,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let v: Vec<f64> = values.collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// `%g`-style formatting with six significant digits.
pub fn format_sig6(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    if !v.is_finite() {
        return v.to_string();
    }
    let sci = format!("{v:.5e}");
    let (mant, e) = sci.split_once('e').expect("exponent form");
    let exp: i32 = e.parse().expect("integer exponent");
    let trim = |s: &str| {
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s.to_string()
        }
    };
    if (-4..6).contains(&exp) {
        let decimals = (5 - exp) as usize;
        trim(&format!("{v:.decimals$}"))
    } else {
        format!(
            "{}e{}{:02}",
            trim(mant),
            if exp < 0 { '-' } else { '+' },
            exp.abs()
        )
    }
}

fn csv_field(v: Option<f64>) -> String {
    v.map(format_sig6).unwrap_or_default()
}

impl MetricReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("name,words,psnr,ssim,word_acc,char_acc,f_measure\n");
        for r in &self.rows {
            let name = if r.name.contains([',', '"', '\n']) {
                format!("\"{}\"", r.name.replace('"', "\"\""))
            } else {
                r.name.clone()
            };
            let _ = writeln!(
                out,
                "{name},{},{},{},{},{},{}",
                r.words.map(|w| w.to_string()).unwrap_or_default(),
                csv_field(r.psnr),
                csv_field(r.ssim),
                csv_field(r.word_acc),
                csv_field(r.char_acc),
                csv_field(r.f_measure),
            );
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    /// Aggregates as `key,value` lines.
    pub fn summary_csv(&self) -> String {
        let mut out = String::from("metric,value\n");
        let mut put = |k: &str, v: Option<f64>| {
            if let Some(v) = v {
                let _ = writeln!(out, "{k},{}", format_sig6(v));
            }
        };
        put("mean_psnr", self.mean_psnr);
        put("mean_ssim", self.mean_ssim);
        put("utilization", self.utilization);
        for (label, s) in [("short", &self.short), ("long", &self.long)] {
            if let Some(s) = s {
                put(&format!("{label}_count"), Some(s.count as f64));
                put(&format!("{label}_word_acc"), Some(s.word_acc));
                put(&format!("{label}_char_acc"), Some(s.char_acc));
                put(&format!("{label}_f_measure"), Some(s.f_measure));
            }
        }
        put("skipped", Some(self.skipped as f64));
        out
    }
}

/// Anything that maps images to token grids and back.
pub trait Reconstructor {
    fn image_size(&self) -> usize;
    fn codebook_size(&self) -> usize;
    fn reconstruct(&self, images: &Tensor) -> Result<(Vec<Vec<u32>>, Tensor)>;
}

impl Reconstructor for Codec {
    fn image_size(&self) -> usize {
        self.config().image_size
    }

    fn codebook_size(&self) -> usize {
        self.config().codebook_size()
    }

    fn reconstruct(&self, images: &Tensor) -> Result<(Vec<Vec<u32>>, Tensor)> {
        Codec::reconstruct(self, images)
    }
}

/// Returns its input unchanged and token 0 everywhere.
#[derive(Debug, Clone, Copy)]
pub struct IdentityReconstructor {
    pub image_size: usize,
}

impl Reconstructor for IdentityReconstructor {
    fn image_size(&self) -> usize {
        self.image_size
    }

    fn codebook_size(&self) -> usize {
        1
    }

    fn reconstruct(&self, images: &Tensor) -> Result<(Vec<Vec<u32>>, Tensor)> {
        Ok((vec![vec![0]; images.shape()[0]], images.clone()))
    }
}

/// Reconstructs every image (`[N,3,H,W]`) and scores it against the original.
pub fn evaluate_reconstruction(
    images: &Tensor,
    names: &[String],
    model: &dyn Reconstructor,
    batch: usize,
) -> Result<(MetricReport, CodebookStats)> {
    ensure_dim!(
        images.rank() == 4,
        "expected N×3×H×W images, got {:?}",
        images.shape()
    );
    ensure_dim!(
        names.len() == images.shape()[0],
        "{} names for {} images",
        names.len(),
        images.shape()[0]
    );
    let (h, w) = (images.shape()[2], images.shape()[3]);
    if h != model.image_size() || w != model.image_size() {
        return Err(Error::Config(format!(
            "corpus images are {w}×{h} but the tokenizer expects {0}×{0}",
            model.image_size()
        )));
    }
    let mut stats = CodebookStats::new(model.codebook_size());
    let mut rows = Vec::with_capacity(names.len());
    let mut idx = 0;
    for chunk in split_batches(images, batch)? {
        let (grids, recon) = model.reconstruct(&chunk)?;
        let per = chunk.numel() / chunk.shape()[0];
        for (i, grid) in grids.iter().enumerate() {
            stats.update(grid)?;
            let shape = &chunk.shape()[1..];
            let orig = Tensor::new(shape, chunk.data()[i * per..(i + 1) * per].to_vec())?;
            let rec = Tensor::new(shape, recon.data()[i * per..(i + 1) * per].to_vec())?;
            rows.push(MetricRow {
                name: names[idx].clone(),
                psnr: Some(psnr(&orig, &rec)?),
                ssim: Some(ssim(&orig, &rec)?),
                ..Default::default()
            });
            idx += 1;
        }
    }
    let report = MetricReport {
        mean_psnr: mean(rows.iter().filter_map(|r| r.psnr)),
        mean_ssim: mean(rows.iter().filter_map(|r| r.ssim)),
        utilization: Some(stats.utilization()),
        rows,
        ..Default::default()
    };
    Ok((report, stats))
}

fn summarize(rows: &[&MetricRow]) -> SplitSummary {
    let m =
        |f: fn(&MetricRow) -> Option<f64>| mean(rows.iter().filter_map(|r| f(r))).unwrap_or(0.0);
    SplitSummary {
        count: rows.len(),
        word_acc: m(|r| r.word_acc),
        char_acc: m(|r| r.char_acc),
        f_measure: m(|r| r.f_measure),
    }
}

/// Produces an image per record with `generate`, reads it back with the
/// OCR oracle and splits the scores at ten words. Records whose rotation is
/// not a multiple of 90° are skipped and counted.
pub fn evaluate_generation(
    records: &[ManifestRecord],
    mut generate: impl FnMut(&ManifestRecord) -> Result<RgbImage>,
) -> Result<MetricReport> {
    let mut rows = Vec::with_capacity(records.len());
    let mut skipped = 0;
    for r in records {
        if r.spec.geometry.quarter_turns().is_none() {
            skipped += 1;
            continue;
        }
        let img = generate(r)?;
        let read = ocr_oracle(&img, &r.spec.geometry)?;
        let truth = &r.spec.text;
        rows.push(MetricRow {
            name: r.image.clone(),
            words: Some(r.word_count()),
            word_acc: Some(word_accuracy(truth, &read)),
            char_acc: Some(char_accuracy(truth, &read)),
            f_measure: Some(f_measure(truth, &read)),
            ..Default::default()
        });
    }
    let (long, short): (Vec<&MetricRow>, Vec<&MetricRow>) = rows
        .iter()
        .partition(|r| r.words.unwrap_or(0) >= crate::textrender::LONG_TEXT_WORDS);
    Ok(MetricReport {
        short: Some(summarize(&short)),
        long: Some(summarize(&long)),
        skipped,
        rows,
        ..Default::default()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeded_rng;

    #[test]
    fn psnr_examples() {
        let a = Tensor::zeros(&[3, 4, 4]);
        let b = Tensor::full(&[3, 4, 4], 1.0);
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP);
        assert_eq!(psnr(&a, &b).unwrap(), 0.0);
        assert!(matches!(
            psnr(&a, &Tensor::zeros(&[3, 4, 5])),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn psnr_matches_two_pass_mse() {
        let mut rng = seeded_rng(1);
        let a = Tensor::uniform(&[3, 8, 8], 0.0, 1.0, &mut rng);
        let b = Tensor::uniform(&[3, 8, 8], 0.0, 1.0, &mut rng);
        let diffs: Vec<f64> = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| x as f64 - y as f64)
            .collect();
        let mse = diffs.iter().map(|d| d * d).sum::<f64>() / diffs.len() as f64;
        assert!((psnr(&a, &b).unwrap() - 10.0 * (1.0 / mse).log10()).abs() < 1e-6);
    }

    #[test]
    fn ssim_examples() {
        let mut rng = seeded_rng(2);
        let a = Tensor::uniform(&[3, 16, 16], 0.0, 1.0, &mut rng);
        let b = Tensor::uniform(&[3, 16, 16], 0.0, 1.0, &mut rng);
        assert_eq!(ssim(&a, &a).unwrap(), 1.0);
        assert_eq!(
            ssim(&a, &b).unwrap().to_bits(),
            ssim(&b, &a).unwrap().to_bits()
        );
        let zero = Tensor::zeros(&[3, 12, 12]);
        let one = Tensor::full(&[3, 12, 12], 1.0);
        // μa = 0, μb = 1, no variance: C1 / (1 + C1)
        let expect = SSIM_C1 / (1.0 + SSIM_C1);
        let got = ssim(&zero, &one).unwrap();
        assert!((got - expect).abs() < 1e-12 && got < 0.05);
        assert!(matches!(
            ssim(&Tensor::zeros(&[3, 8, 8]), &Tensor::zeros(&[3, 8, 8])),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn unsupported_metrics() {
        assert!(matches!(
            "fid".parse::<Metric>(),
            Err(Error::UnsupportedMetric(_))
        ));
        assert!(matches!(
            "CLIPScore".parse::<Metric>(),
            Err(Error::UnsupportedMetric(_))
        ));
        assert_eq!("psnr".parse::<Metric>().unwrap(), Metric::Psnr);
    }

    #[test]
    fn sig6_formatting() {
        assert_eq!(format_sig6(99.0), "99");
        assert_eq!(format_sig6(1.0 / 3.0), "0.333333");
        assert_eq!(format_sig6(12.3456789), "12.3457");
        assert_eq!(format_sig6(1234567.0), "1.23457e+06");
        assert_eq!(format_sig6(0.0000123456789), "1.23457e-05");
        assert_eq!(format_sig6(-0.5), "-0.5");
        assert_eq!(format_sig6(999999.7), "1e+06");
    }

    #[test]
    fn identity_stub_scores_perfectly() {
        let mut rng = seeded_rng(3);
        let imgs = Tensor::uniform(&[3, 3, 16, 16], 0.0, 1.0, &mut rng);
        let names: Vec<String> = (0..3).map(|i| format!("img{i}")).collect();
        let (report, stats) =
            evaluate_reconstruction(&imgs, &names, &IdentityReconstructor { image_size: 16 }, 2)
                .unwrap();
        assert_eq!(report.rows.len(), 3);
        assert_eq!(report.mean_psnr, Some(PSNR_CAP));
        assert_eq!(report.mean_ssim, Some(1.0));
        assert_eq!(report.utilization, Some(stats.utilization()));
        let err =
            evaluate_reconstruction(&imgs, &names, &IdentityReconstructor { image_size: 32 }, 2);
        assert!(matches!(err, Err(Error::Config(_))));
    }
}
