//! 8-bit RGB raster and binary PPM (P6) input/output.

use std::fs;
use std::path::Path;

use crate::error::{ensure_dim, ensure_domain, Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl RgbImage {
    pub fn filled(width: usize, height: usize, color: [u8; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&color);
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn from_raw(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        ensure_dim!(
            data.len() == width * height * 3,
            "{} bytes for a {width}×{height} RGB image",
            data.len()
        );
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set(&mut self, x: usize, y: usize, c: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&c);
    }

    /// Planar `[3, H, W]` tensor with values `byte / 255`.
    pub fn to_tensor(&self) -> Tensor {
        let plane = self.width * self.height;
        let mut out = vec![0.0f32; 3 * plane];
        for (p, px) in self.data.chunks_exact(3).enumerate() {
            for c in 0..3 {
                out[c * plane + p] = px[c] as f32 / 255.0;
            }
        }
        Tensor::new(&[3, self.height, self.width], out).expect("consistent shape")
    }

    /// Inverse of [`RgbImage::to_tensor`]; accepts `[3,H,W]` or `[1,3,H,W]`,
    /// rounding to the nearest byte.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let s = t.shape();
        let (h, w) = match s {
            [3, h, w] | [1, 3, h, w] => (*h, *w),
            _ => return Err(Error::Dimension(format!("expected 3×H×W image, got {s:?}"))),
        };
        ensure_domain!(
            t.data().iter().all(|v| (0.0..=1.0).contains(v)),
            "pixel values must lie in [0, 1]"
        );
        let plane = h * w;
        let mut data = vec![0u8; 3 * plane];
        for p in 0..plane {
            for c in 0..3 {
                data[p * 3 + c] = (t.data()[c * plane + p] * 255.0).round() as u8;
            }
        }
        Ok(Self {
            width: w,
            height: h,
            data,
        })
    }

    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.data);
        out
    }

    pub fn from_ppm(bytes: &[u8]) -> Result<Self> {
        let mut fields = Vec::with_capacity(4);
        let mut pos = 0;
        while fields.len() < 4 {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(Error::Format("truncated PPM header".into()));
            }
            fields.push(
                std::str::from_utf8(&bytes[start..pos])
                    .unwrap_or("")
                    .to_string(),
            );
        }
        if fields[0] != "P6" {
            return Err(Error::Format(format!("not a binary PPM: {:?}", fields[0])));
        }
        let num = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| Error::Format(format!("bad PPM header field {s:?}")))
        };
        let (w, h, max) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
        if max != 255 {
            return Err(Error::Format(format!(
                "only 8-bit PPM supported, maxval {max}"
            )));
        }
        // exactly one whitespace byte separates the header from the raster
        let body = bytes.get(pos + 1..).unwrap_or(&[]);
        if body.len() != w * h * 3 {
            return Err(Error::Format(format!(
                "PPM raster has {} bytes, expected {}",
                body.len(),
                w * h * 3
            )));
        }
        Self::from_raw(w, h, body.to_vec())
    }

    pub fn save_ppm(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_ppm())?;
        Ok(())
    }

    pub fn load_ppm(path: &Path) -> Result<Self> {
        Self::from_ppm(&fs::read(path)?)
    }
}

/// Stacks equally sized images into `[N, 3, H, W]`.
pub fn stack(images: &[RgbImage]) -> Result<Tensor> {
    ensure_domain!(!images.is_empty(), "no images to stack");
    let (w, h) = (images[0].width, images[0].height);
    let mut data = Vec::with_capacity(images.len() * 3 * w * h);
    for img in images {
        ensure_dim!(
            img.width == w && img.height == h,
            "image {}×{} differs from {w}×{h}",
            img.width,
            img.height
        );
        data.extend_from_slice(img.to_tensor().data());
    }
    Tensor::new(&[images.len(), 3, h, w], data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ppm_round_trip_is_exact() {
        let mut img = RgbImage::filled(3, 2, [1, 2, 3]);
        img.set(2, 1, [255, 0, 128]);
        let bytes = img.to_ppm();
        assert!(bytes.starts_with(b"P6\n3 2\n255\n"));
        assert_eq!(bytes.len(), 11 + 18);
        let back = RgbImage::from_ppm(&bytes).unwrap();
        assert_eq!(back, img);
        assert_eq!(back.to_ppm(), bytes);
    }

    #[test]
    fn tensor_round_trip() {
        let mut img = RgbImage::filled(4, 3, [0, 17, 255]);
        img.set(1, 2, [200, 100, 50]);
        let t = img.to_tensor();
        assert_eq!(t.shape(), &[3, 3, 4]);
        assert_eq!(RgbImage::from_tensor(&t).unwrap(), img);
    }

    #[test]
    fn malformed_ppm_rejected() {
        assert!(RgbImage::from_ppm(b"P5\n1 1\n255\n\0").is_err());
        assert!(RgbImage::from_ppm(b"P6\n2 1\n255\n\0\0\0").is_err());
        assert!(RgbImage::from_ppm(b"P6\n1 1\n65535\n\0\0\0\0\0\0").is_err());
    }
}
