//! Embedded 8×8 bitmap fonts.

use font8x8::legacy::BASIC_LEGACY;

use crate::error::{Error, Result};

pub const GLYPH_SIZE: usize = 8;
pub const FIRST_PRINTABLE: u8 = b' ';
pub const LAST_PRINTABLE: u8 = b'~';
pub const FONT_COUNT: u8 = 2;

/// One glyph; bit `x` of row `y` is the pixel at column `x`.
pub type Glyph = [u8; GLYPH_SIZE];

pub fn is_printable(c: u8) -> bool {
    (FIRST_PRINTABLE..=LAST_PRINTABLE).contains(&c)
}

/// Glyph of `c` in font `font_id`: 0 is the basic font, 1 a bold variant
/// made by smearing every row one pixel to the right.
pub fn glyph(font_id: u8, c: u8) -> Result<Glyph> {
    if !is_printable(c) {
        return Err(Error::Encoding(format!(
            "byte {c:#04x} is not printable ASCII"
        )));
    }
    let base = BASIC_LEGACY[c as usize];
    match font_id {
        0 => Ok(base),
        1 => Ok(base.map(|row| row | (row << 1))),
        _ => Err(Error::Domain(format!("unknown font {font_id}"))),
    }
}

pub fn pixel(g: &Glyph, x: usize, y: usize) -> bool {
    g[y] >> x & 1 == 1
}

/// Expanded glyph mask of `scale·8` squared pixels, row-major.
pub fn scaled_mask(g: &Glyph, scale: usize) -> Vec<bool> {
    let n = GLYPH_SIZE * scale;
    (0..n * n)
        .map(|i| pixel(g, (i % n) / scale, (i / n) / scale))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn leftmost_pixel_is_bit_zero() {
        // 'L' has its vertical stroke on the left and its foot at the bottom.
        let g = glyph(0, b'L').unwrap();
        let left_ink: u32 = (0..8)
            .map(|y| pixel(&g, 0, y) as u32 + pixel(&g, 1, y) as u32)
            .sum();
        let right_ink: u32 = (0..8)
            .map(|y| pixel(&g, 6, y) as u32 + pixel(&g, 7, y) as u32)
            .sum();
        assert!(left_ink > right_ink);
    }

    #[test]
    fn glyphs_are_distinct_within_each_font() {
        for font in 0..FONT_COUNT {
            let all: Vec<Glyph> = (FIRST_PRINTABLE..=LAST_PRINTABLE)
                .map(|c| glyph(font, c).unwrap())
                .collect();
            for i in 0..all.len() {
                for j in i + 1..all.len() {
                    assert_ne!(all[i], all[j], "font {font}: {} vs {}", i + 32, j + 32);
                }
            }
        }
    }

    #[test]
    fn space_is_blank_and_fonts_differ() {
        assert_eq!(glyph(0, b' ').unwrap(), [0; 8]);
        assert_ne!(glyph(0, b'A').unwrap(), glyph(1, b'A').unwrap());
        assert!(glyph(2, b'A').is_err());
        assert!(glyph(0, b'\n').is_err());
    }
}
