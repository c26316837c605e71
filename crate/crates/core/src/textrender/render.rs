use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::RgbImage;
use crate::textrender::font::{self, glyph, GLYPH_SIZE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Alignment {
    Left,
    Center,
    Right,
}

impl Alignment {
    pub const ALL: [Alignment; 3] = [Alignment::Left, Alignment::Center, Alignment::Right];
}

impl fmt::Display for Alignment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Alignment::Left => "left",
            Alignment::Center => "center",
            Alignment::Right => "right",
        })
    }
}

/// Everything about a rendering except the text itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    pub font_id: u8,
    pub scale: u32,
    pub color: [u8; 3],
    pub background: [u8; 3],
    pub rotation_deg: f32,
    pub alignment: Alignment,
    /// `(width, height)` in pixels.
    pub canvas: (u32, u32),
}

impl Default for Geometry {
    fn default() -> Self {
        Self {
            font_id: 0,
            scale: 1,
            color: [0, 0, 0],
            background: [255, 255, 255],
            rotation_deg: 0.0,
            alignment: Alignment::Left,
            canvas: (64, 64),
        }
    }
}

impl Geometry {
    pub fn cell(&self) -> usize {
        GLYPH_SIZE * self.scale as usize
    }

    pub fn columns(&self) -> usize {
        self.canvas.0 as usize / self.cell()
    }

    pub fn max_rows(&self) -> usize {
        self.canvas.1 as usize / self.cell()
    }

    /// Rotation reduced to `[0, 360)`.
    pub fn normalized_rotation(&self) -> f32 {
        self.rotation_deg.rem_euclid(360.0)
    }

    /// Quarter turns when the rotation is axis-aligned.
    pub fn quarter_turns(&self) -> Option<u8> {
        let r = self.normalized_rotation();
        [0.0, 90.0, 180.0, 270.0]
            .iter()
            .position(|&q| r == q)
            .map(|i| i as u8)
    }

    /// Left pixel of a row holding `len` glyphs.
    pub fn row_offset(&self, len: usize) -> usize {
        let free = self.canvas.0 as usize - len * self.cell();
        match self.alignment {
            Alignment::Left => 0,
            Alignment::Center => free / 2,
            Alignment::Right => free,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.font_id >= font::FONT_COUNT {
            return Err(Error::Domain(format!("unknown font {}", self.font_id)));
        }
        if self.scale == 0 {
            return Err(Error::Domain("glyph scale must be positive".into()));
        }
        if !self.rotation_deg.is_finite() {
            return Err(Error::Domain("rotation must be finite".into()));
        }
        if self.canvas.0 == 0 || self.canvas.1 == 0 {
            return Err(Error::Domain("canvas must be non-empty".into()));
        }
        if matches!(self.quarter_turns(), Some(1 | 3)) && self.canvas.0 != self.canvas.1 {
            return Err(Error::Domain(format!(
                "quarter-turn rotation needs a square canvas, got {:?}",
                self.canvas
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderSpec {
    pub text: String,
    #[serde(flatten)]
    pub geometry: Geometry,
}

impl RenderSpec {
    pub fn new(text: impl Into<String>, geometry: Geometry) -> Self {
        Self {
            text: text.into(),
            geometry,
        }
    }
}

/// Non-empty printable ASCII with single spaces between words.
pub fn validate_text(text: &str) -> Result<()> {
    if text.is_empty() {
        return Err(Error::Domain("text must be non-empty".into()));
    }
    if let Some(b) = text.bytes().find(|&b| !font::is_printable(b)) {
        return Err(Error::Encoding(format!(
            "byte {b:#04x} is not printable ASCII"
        )));
    }
    if text.starts_with(' ') || text.ends_with(' ') || text.contains("  ") {
        return Err(Error::Domain(
            "text must not have leading, trailing or repeated spaces".into(),
        ));
    }
    Ok(())
}

/// Greedy word wrap into rows of at most `columns` glyphs.
pub fn wrap(text: &str, columns: usize) -> Result<Vec<String>> {
    validate_text(text)?;
    let mut rows: Vec<String> = Vec::new();
    let mut current = String::new();
    for word in text.split(' ') {
        if word.len() > columns {
            return Err(Error::Capacity(format!(
                "word {word:?} is longer than a row of {columns} glyphs"
            )));
        }
        if current.is_empty() {
            current.push_str(word);
        } else if current.len() + 1 + word.len() <= columns {
            current.push(' ');
            current.push_str(word);
        } else {
            rows.push(std::mem::take(&mut current));
            current.push_str(word);
        }
    }
    rows.push(current);
    Ok(rows)
}

/// Rows the renderer would draw for `spec`, or a capacity error.
pub fn layout(spec: &RenderSpec) -> Result<Vec<String>> {
    spec.geometry.validate()?;
    let rows = wrap(&spec.text, spec.geometry.columns())?;
    let max = spec.geometry.max_rows();
    if rows.len() > max {
        return Err(Error::Capacity(format!(
            "text needs {} rows, canvas holds {max}",
            rows.len()
        )));
    }
    Ok(rows)
}

fn draw_rows(rows: &[String], g: &Geometry) -> Result<RgbImage> {
    let (w, h) = (g.canvas.0 as usize, g.canvas.1 as usize);
    let mut img = RgbImage::filled(w, h, g.background);
    let cell = g.cell();
    let scale = g.scale as usize;
    for (r, row) in rows.iter().enumerate() {
        let x0 = g.row_offset(row.len());
        for (i, c) in row.bytes().enumerate() {
            let gl = glyph(g.font_id, c)?;
            for y in 0..cell {
                for x in 0..cell {
                    if font::pixel(&gl, x / scale, y / scale) {
                        img.set(x0 + i * cell + x, r * cell + y, g.color);
                    }
                }
            }
        }
    }
    Ok(img)
}

/// Rotates counterclockwise by `quarter` right angles. Quarter turns of
/// non-square images are rejected by [`Geometry::validate`].
pub fn rotate_quarter(img: &RgbImage, quarter: u8) -> RgbImage {
    let (w, h) = (img.width(), img.height());
    let mut out = img.clone();
    for y in 0..h {
        for x in 0..w {
            let (sx, sy) = match quarter % 4 {
                0 => (x, y),
                1 => (w - 1 - y, x),
                2 => (w - 1 - x, h - 1 - y),
                _ => (y, h - 1 - x),
            };
            out.set(x, y, img.get(sx, sy));
        }
    }
    out
}

/// Counterclockwise rotation about the canvas centre with nearest-neighbour
/// sampling; uncovered pixels take `fill`.
pub fn rotate_nearest(img: &RgbImage, degrees: f32, fill: [u8; 3]) -> RgbImage {
    let (w, h) = (img.width(), img.height());
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let (sin, cos) = (degrees as f64).to_radians().sin_cos();
    let mut out = RgbImage::filled(w, h, fill);
    for y in 0..h {
        for x in 0..w {
            let (dx, dy) = (x as f64 - cx, y as f64 - cy);
            let sx = (cx + dx * cos - dy * sin).round();
            let sy = (cy + dx * sin + dy * cos).round();
            if sx >= 0.0 && sy >= 0.0 && (sx as usize) < w && (sy as usize) < h {
                out.set(x, y, img.get(sx as usize, sy as usize));
            }
        }
    }
    out
}

pub fn render(spec: &RenderSpec) -> Result<RgbImage> {
    let rows = layout(spec)?;
    let g = &spec.geometry;
    let upright = draw_rows(&rows, g)?;
    Ok(match g.quarter_turns() {
        Some(q) => rotate_quarter(&upright, q),
        None => rotate_nearest(&upright, g.normalized_rotation(), g.background),
    })
}
