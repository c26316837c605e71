//! Template-matching OCR for axis-aligned renderings and string accuracy
//! measures.

use crate::error::{Error, Result};
use crate::image::RgbImage;
use crate::textrender::font::{glyph, scaled_mask, FIRST_PRINTABLE, LAST_PRINTABLE};
use crate::textrender::render::{rotate_quarter, Geometry};

fn dist2(a: [u8; 3], b: [u8; 3]) -> i32 {
    a.iter()
        .zip(b)
        .map(|(&x, y)| (x as i32 - y as i32).pow(2))
        .sum()
}

/// Ink mask: pixels strictly closer to the foreground than the background
/// colour, after undoing the rotation.
pub fn binarize(image: &RgbImage, g: &Geometry) -> Result<Vec<bool>> {
    g.validate()?;
    if (image.width(), image.height()) != (g.canvas.0 as usize, g.canvas.1 as usize) {
        return Err(Error::Dimension(format!(
            "image {}×{} does not match canvas {:?}",
            image.width(),
            image.height(),
            g.canvas
        )));
    }
    let q = g
        .quarter_turns()
        .ok_or_else(|| Error::Domain(format!("rotation {} is not axis-aligned", g.rotation_deg)))?;
    let upright = rotate_quarter(image, (4 - q) % 4);
    let (w, h) = (upright.width(), upright.height());
    Ok((0..w * h)
        .map(|i| {
            let px = upright.get(i % w, i / w);
            dist2(px, g.color) < dist2(px, g.background)
        })
        .collect())
}

struct Templates {
    chars: Vec<u8>,
    masks: Vec<Vec<bool>>,
}

impl Templates {
    fn new(g: &Geometry) -> Result<Self> {
        let chars: Vec<u8> = (FIRST_PRINTABLE..=LAST_PRINTABLE).collect();
        let masks = chars
            .iter()
            .map(|&c| glyph(g.font_id, c).map(|gl| scaled_mask(&gl, g.scale as usize)))
            .collect::<Result<_>>()?;
        Ok(Self { chars, masks })
    }

    /// Best character for the cell with top-left `(x0, y0)`; ties go to the
    /// lower character code.
    fn classify(
        &self,
        ink: &[bool],
        width: usize,
        x0: usize,
        y0: usize,
        cell: usize,
    ) -> (u8, usize) {
        let mut best = (b' ', usize::MAX);
        for (c, mask) in self.chars.iter().zip(&self.masks) {
            let mut d = 0;
            for y in 0..cell {
                let row = &ink[(y0 + y) * width + x0..][..cell];
                let m = &mask[y * cell..][..cell];
                d += row.iter().zip(m).filter(|(a, b)| a != b).count();
                if d >= best.1 {
                    break;
                }
            }
            if d < best.1 {
                best = (*c, d);
            }
        }
        best
    }
}

/// Recognizes each text row of an axis-aligned rendering.
///
/// For every row band the glyph count `L` (including zero) is chosen to
/// minimise template mismatches inside the aligned span plus ink outside it;
/// ties favour the shorter row.
pub fn ocr_rows(image: &RgbImage, g: &Geometry) -> Result<Vec<String>> {
    let ink = binarize(image, g)?;
    let width = g.canvas.0 as usize;
    let cell = g.cell();
    let templates = Templates::new(g)?;
    let mut rows = Vec::with_capacity(g.max_rows());
    for r in 0..g.max_rows() {
        let y0 = r * cell;
        let band = &ink[y0 * width..(y0 + cell) * width];
        let column_ink: Vec<usize> = (0..width)
            .map(|x| (0..cell).filter(|&y| band[y * width + x]).count())
            .collect();
        let total_ink: usize = column_ink.iter().sum();
        let mut memo = std::collections::HashMap::new();
        let mut best: (usize, String) = (total_ink, String::new());
        for len in 1..=g.columns() {
            let x0 = g.row_offset(len);
            let inside: usize = column_ink[x0..x0 + len * cell].iter().sum();
            let mut cost = total_ink - inside;
            let mut text = String::with_capacity(len);
            for i in 0..len {
                let x = x0 + i * cell;
                let (c, d) = *memo
                    .entry(x)
                    .or_insert_with(|| templates.classify(&ink, width, x, y0, cell));
                cost += d;
                text.push(c as char);
            }
            if cost < best.0 {
                best = (cost, text);
            }
        }
        rows.push(best.1);
    }
    Ok(rows)
}

/// Recognized text: non-empty rows joined by single spaces.
pub fn ocr_oracle(image: &RgbImage, g: &Geometry) -> Result<String> {
    let rows = ocr_rows(image, g)?;
    Ok(rows
        .into_iter()
        .filter(|r| !r.trim().is_empty())
        .map(|r| r.trim().to_string())
        .collect::<Vec<_>>()
        .join(" "))
}

/// Positional character agreement, `(matches, truth length)`; characters
/// past the end of `recognized` count as errors.
fn positional_matches(truth: &str, recognized: &str) -> usize {
    truth
        .bytes()
        .zip(recognized.bytes())
        .filter(|(a, b)| a == b)
        .count()
}

/// Fraction of truth characters reproduced at the same position.
pub fn char_accuracy(truth: &str, recognized: &str) -> f64 {
    if truth.is_empty() {
        return if recognized.is_empty() { 1.0 } else { 0.0 };
    }
    positional_matches(truth, recognized) as f64 / truth.len() as f64
}

/// Fraction of truth words whose characters all reappear at the same
/// positions in `recognized`.
pub fn word_accuracy(truth: &str, recognized: &str) -> f64 {
    let rec = recognized.as_bytes();
    let mut total = 0usize;
    let mut hits = 0usize;
    let mut start = 0usize;
    for word in truth.split(' ') {
        let end = start + word.len();
        total += 1;
        if rec.get(start..end) == Some(word.as_bytes()) {
            hits += 1;
        }
        start = end + 1;
    }
    if total == 0 {
        return 1.0;
    }
    hits as f64 / total as f64
}

/// Harmonic mean of precision and recall over non-space characters, using
/// the same positional alignment as [`char_accuracy`].
pub fn f_measure(truth: &str, recognized: &str) -> f64 {
    let tp = truth
        .bytes()
        .zip(recognized.bytes())
        .filter(|&(a, b)| a == b && a != b' ')
        .count() as f64;
    let t = truth.bytes().filter(|&b| b != b' ').count() as f64;
    let r = recognized.bytes().filter(|&b| b != b' ').count() as f64;
    if t == 0.0 && r == 0.0 {
        return 1.0;
    }
    if tp == 0.0 {
        return 0.0;
    }
    let (p, rc) = (tp / r, tp / t);
    2.0 * p * rc / (p + rc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::textrender::render::{render, Alignment, RenderSpec};

    fn spec(text: &str, align: Alignment, rot: f32) -> RenderSpec {
        RenderSpec::new(
            text,
            Geometry {
                alignment: align,
                rotation_deg: rot,
                canvas: (48, 48),
                ..Default::default()
            },
        )
    }

    #[test]
    fn clean_renders_are_read_back() {
        for align in Alignment::ALL {
            for rot in [0.0, 90.0, 180.0, 270.0] {
                let s = spec("Hi there _ok 7x", align, rot);
                let img = render(&s).unwrap();
                assert_eq!(
                    ocr_oracle(&img, &s.geometry).unwrap(),
                    s.text,
                    "{align} {rot}"
                );
            }
        }
    }

    #[test]
    fn unaligned_rotation_is_a_domain_error() {
        let s = spec("Hi", Alignment::Left, 30.0);
        let img = render(&s).unwrap();
        assert!(matches!(
            ocr_oracle(&img, &s.geometry),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn accuracy_measures() {
        assert_eq!(char_accuracy("Hello", "Hel o"), 0.8);
        assert_eq!(word_accuracy("Hello you", "Hel o you"), 0.5);
        assert_eq!(word_accuracy("a b", "a b"), 1.0);
        assert_eq!(f_measure("ab", "ab"), 1.0);
        assert_eq!(f_measure("ab", ""), 0.0);
        // tp = 1, precision 1/1, recall 1/2
        assert!((f_measure("ab", "a") - 2.0 / 3.0).abs() < 1e-12);
    }
}
