//! 2-d cross-correlation and its adjoint via im2col.

use crate::error::{ensure_dim, Result};
use crate::ops::linalg::{gemm_nn, gemm_nt, gemm_tn};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_height: usize,
    pub out_width: usize,
}

impl ConvGeometry {
    /// Geometry of a forward convolution over a `channels × height × width`
    /// input; the output size must be integral.
    pub fn forward(
        channels: usize,
        height: usize,
        width: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        let geo = Self::floor(channels, height, width, kernel, stride, padding)?;
        let (span_h, span_w) = (height + 2 * padding, width + 2 * padding);
        ensure_dim!(
            (span_h - kernel) % stride == 0 && (span_w - kernel) % stride == 0,
            "output size ({span_h}-{kernel})/{stride}+1 is not integral"
        );
        Ok(geo)
    }

    fn floor(
        channels: usize,
        height: usize,
        width: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        ensure_dim!(
            kernel > 0 && stride > 0,
            "kernel and stride must be positive"
        );
        let span_h = height + 2 * padding;
        let span_w = width + 2 * padding;
        ensure_dim!(
            span_h >= kernel && span_w >= kernel,
            "kernel {kernel} larger than padded input {span_h}×{span_w}"
        );
        Ok(Self {
            channels,
            height,
            width,
            kernel,
            stride,
            padding,
            out_height: (span_h - kernel) / stride + 1,
            out_width: (span_w - kernel) / stride + 1,
        })
    }

    /// Geometry of the convolution whose adjoint maps `out_h × out_w` back to
    /// `(out-1)·stride − 2·padding + kernel + output_padding`.
    pub fn transposed(
        channels: usize,
        out_height: usize,
        out_width: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        output_padding: usize,
    ) -> Result<Self> {
        ensure_dim!(
            output_padding < stride.max(1),
            "output padding {output_padding} must be smaller than stride {stride}"
        );
        let full_h = (out_height - 1) * stride + kernel + output_padding;
        let full_w = (out_width - 1) * stride + kernel + output_padding;
        ensure_dim!(
            full_h > 2 * padding && full_w > 2 * padding,
            "padding {padding} consumes the whole transposed output"
        );
        let geo = Self::floor(
            channels,
            full_h - 2 * padding,
            full_w - 2 * padding,
            kernel,
            stride,
            padding,
        )?;
        debug_assert_eq!((geo.out_height, geo.out_width), (out_height, out_width));
        Ok(geo)
    }

    fn patch(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    fn out_pixels(&self) -> usize {
        self.out_height * self.out_width
    }

    fn in_pixels(&self) -> usize {
        self.height * self.width
    }

    /// Unfolds one `C×H×W` image into `[C·k·k, H'·W']`.
    pub fn im2col(&self, image: &[f32], cols: &mut [f32]) {
        let (k, s, p) = (self.kernel, self.stride, self.padding as isize);
        let ohw = self.out_pixels();
        for c in 0..self.channels {
            let plane = &image[c * self.in_pixels()..(c + 1) * self.in_pixels()];
            for ky in 0..k {
                for kx in 0..k {
                    let row = &mut cols[((c * k + ky) * k + kx) * ohw..][..ohw];
                    for oy in 0..self.out_height {
                        let iy = (oy * s + ky) as isize - p;
                        let dst = &mut row[oy * self.out_width..(oy + 1) * self.out_width];
                        if iy < 0 || iy >= self.height as isize {
                            dst.fill(0.0);
                            continue;
                        }
                        let src = &plane[iy as usize * self.width..(iy as usize + 1) * self.width];
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = (ox * s + kx) as isize - p;
                            *d = if ix < 0 || ix >= self.width as isize {
                                0.0
                            } else {
                                src[ix as usize]
                            };
                        }
                    }
                }
            }
        }
    }

    /// Scatter-adds `[C·k·k, H'·W']` columns back into a `C×H×W` image.
    pub fn col2im(&self, cols: &[f32], image: &mut [f32]) {
        let (k, s, p) = (self.kernel, self.stride, self.padding as isize);
        let ohw = self.out_pixels();
        for c in 0..self.channels {
            let plane = &mut image[c * self.in_pixels()..(c + 1) * self.in_pixels()];
            for ky in 0..k {
                for kx in 0..k {
                    let row = &cols[((c * k + ky) * k + kx) * ohw..][..ohw];
                    for oy in 0..self.out_height {
                        let iy = (oy * s + ky) as isize - p;
                        if iy < 0 || iy >= self.height as isize {
                            continue;
                        }
                        let dst =
                            &mut plane[iy as usize * self.width..(iy as usize + 1) * self.width];
                        let src = &row[oy * self.out_width..(oy + 1) * self.out_width];
                        for (ox, &v) in src.iter().enumerate() {
                            let ix = (ox * s + kx) as isize - p;
                            if ix >= 0 && ix < self.width as isize {
                                dst[ix as usize] += v;
                            }
                        }
                    }
                }
            }
        }
    }
}

fn check_weight(weight: &Tensor) -> Result<(usize, usize, usize)> {
    ensure_dim!(
        weight.rank() == 4,
        "weight must be O×C×k×k, got {:?}",
        weight.shape()
    );
    let s = weight.shape();
    ensure_dim!(s[2] == s[3], "kernel must be square, got {:?}", s);
    Ok((s[0], s[1], s[2]))
}

fn check_input(input: &Tensor) -> Result<(usize, usize, usize, usize)> {
    ensure_dim!(
        input.rank() == 4,
        "input must be B×C×H×W, got {:?}",
        input.shape()
    );
    let s = input.shape();
    Ok((s[0], s[1], s[2], s[3]))
}

/// Cross-correlation of `input[B×C×H×W]` with `weight[O×C×k×k]`.
pub fn conv2d(input: &Tensor, weight: &Tensor, stride: usize, padding: usize) -> Result<Tensor> {
    let (b, c, h, w) = check_input(input)?;
    let (o, wc, k) = check_weight(weight)?;
    ensure_dim!(c == wc, "input has {c} channels, weight expects {wc}");
    ensure_dim!(k % 2 == 1, "kernel size {k} must be odd");
    let geo = ConvGeometry::forward(c, h, w, k, stride, padding)?;
    let (ohw, patch) = (geo.out_pixels(), geo.patch());
    let mut cols = vec![0.0; patch * ohw];
    let mut out = vec![0.0; b * o * ohw];
    for bi in 0..b {
        geo.im2col(
            &input.data()[bi * c * h * w..(bi + 1) * c * h * w],
            &mut cols,
        );
        gemm_nn(
            o,
            patch,
            ohw,
            weight.data(),
            &cols,
            &mut out[bi * o * ohw..(bi + 1) * o * ohw],
        );
    }
    Tensor::new(&[b, o, geo.out_height, geo.out_width], out)
}

/// Returns `(d_input, d_weight)` for [`conv2d`].
pub fn conv2d_backward(
    input: &Tensor,
    weight: &Tensor,
    stride: usize,
    padding: usize,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor)> {
    let (b, c, h, w) = check_input(input)?;
    let (o, wc, k) = check_weight(weight)?;
    ensure_dim!(c == wc, "input has {c} channels, weight expects {wc}");
    let geo = ConvGeometry::forward(c, h, w, k, stride, padding)?;
    ensure_dim!(
        grad_out.shape() == [b, o, geo.out_height, geo.out_width],
        "conv2d output gradient has shape {:?}",
        grad_out.shape()
    );
    let (ohw, patch) = (geo.out_pixels(), geo.patch());
    let mut cols = vec![0.0; patch * ohw];
    let mut dcols = vec![0.0; patch * ohw];
    let mut d_input = vec![0.0; input.numel()];
    let mut d_weight = vec![0.0; weight.numel()];
    for bi in 0..b {
        let g = &grad_out.data()[bi * o * ohw..(bi + 1) * o * ohw];
        geo.im2col(
            &input.data()[bi * c * h * w..(bi + 1) * c * h * w],
            &mut cols,
        );
        gemm_nt(o, ohw, patch, g, &cols, &mut d_weight);
        dcols.fill(0.0);
        gemm_tn(patch, o, ohw, weight.data(), g, &mut dcols);
        geo.col2im(&dcols, &mut d_input[bi * c * h * w..(bi + 1) * c * h * w]);
    }
    Ok((
        Tensor::new(input.shape(), d_input)?,
        Tensor::new(weight.shape(), d_weight)?,
    ))
}

/// Adjoint of [`conv2d`]: maps `input[B×O×H'×W']` to `B×C×H×W` using the
/// same `weight[O×C×k×k]`. `output_padding` (< stride) selects among the
/// input sizes that a strided forward convolution maps onto `H'×W'`.
pub fn conv_transpose2d(
    input: &Tensor,
    weight: &Tensor,
    stride: usize,
    padding: usize,
    output_padding: usize,
) -> Result<Tensor> {
    let (b, o, oh, ow) = check_input(input)?;
    let (wo, c, k) = check_weight(weight)?;
    ensure_dim!(o == wo, "input has {o} channels, weight expects {wo}");
    let geo = ConvGeometry::transposed(c, oh, ow, k, stride, padding, output_padding)?;
    let (ohw, patch) = (geo.out_pixels(), geo.patch());
    let (h, w) = (geo.height, geo.width);
    let mut cols = vec![0.0; patch * ohw];
    let mut out = vec![0.0; b * c * h * w];
    for bi in 0..b {
        cols.fill(0.0);
        gemm_tn(
            patch,
            o,
            ohw,
            weight.data(),
            &input.data()[bi * o * ohw..(bi + 1) * o * ohw],
            &mut cols,
        );
        geo.col2im(&cols, &mut out[bi * c * h * w..(bi + 1) * c * h * w]);
    }
    Tensor::new(&[b, c, h, w], out)
}

/// Returns `(d_input, d_weight)` for [`conv_transpose2d`].
pub fn conv_transpose2d_backward(
    input: &Tensor,
    weight: &Tensor,
    stride: usize,
    padding: usize,
    output_padding: usize,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor)> {
    let (b, o, oh, ow) = check_input(input)?;
    let (wo, c, k) = check_weight(weight)?;
    ensure_dim!(o == wo, "input has {o} channels, weight expects {wo}");
    let geo = ConvGeometry::transposed(c, oh, ow, k, stride, padding, output_padding)?;
    let (h, w) = (geo.height, geo.width);
    ensure_dim!(
        grad_out.shape() == [b, c, h, w],
        "conv_transpose2d output gradient has shape {:?}",
        grad_out.shape()
    );
    let (ohw, patch) = (geo.out_pixels(), geo.patch());
    let mut cols = vec![0.0; patch * ohw];
    let mut d_input = vec![0.0; input.numel()];
    let mut d_weight = vec![0.0; weight.numel()];
    for bi in 0..b {
        geo.im2col(
            &grad_out.data()[bi * c * h * w..(bi + 1) * c * h * w],
            &mut cols,
        );
        let y = &input.data()[bi * o * ohw..(bi + 1) * o * ohw];
        gemm_nn(
            o,
            patch,
            ohw,
            weight.data(),
            &cols,
            &mut d_input[bi * o * ohw..(bi + 1) * o * ohw],
        );
        gemm_nt(o, ohw, patch, y, &cols, &mut d_weight);
    }
    Ok((
        Tensor::new(input.shape(), d_input)?,
        Tensor::new(weight.shape(), d_weight)?,
    ))
}

/// Folds each `f×f` spatial block into channels: `[B,C,H,W] → [B,C·f²,H/f,W/f]`.
/// Output channel `c·f² + dy·f + dx` holds pixel `(f·y + dy, f·x + dx)` of input channel `c`.
pub fn space_to_depth(input: &Tensor, f: usize) -> Result<Tensor> {
    ensure_dim!(
        input.rank() == 4 && f > 0,
        "space_to_depth expects B×C×H×W, got {:?}",
        input.shape()
    );
    let [b, c, h, w] = [
        input.shape()[0],
        input.shape()[1],
        input.shape()[2],
        input.shape()[3],
    ];
    ensure_dim!(
        h % f == 0 && w % f == 0,
        "{h}×{w} not divisible by block {f}"
    );
    let (ho, wo) = (h / f, w / f);
    let src = input.data();
    let mut out = vec![0.0f32; src.len()];
    for n in 0..b {
        for ch in 0..c {
            let plane = &src[(n * c + ch) * h * w..][..h * w];
            for dy in 0..f {
                for dx in 0..f {
                    let oc = ch * f * f + dy * f + dx;
                    let dst = &mut out[(n * c * f * f + oc) * ho * wo..][..ho * wo];
                    for y in 0..ho {
                        for x in 0..wo {
                            dst[y * wo + x] = plane[(f * y + dy) * w + f * x + dx];
                        }
                    }
                }
            }
        }
    }
    Tensor::new(&[b, c * f * f, ho, wo], out)
}

/// Inverse of [`space_to_depth`]; also its backward pass.
pub fn depth_to_space(input: &Tensor, f: usize) -> Result<Tensor> {
    ensure_dim!(
        input.rank() == 4 && f > 0 && input.shape()[1] % (f * f) == 0,
        "depth_to_space expects B×(C·{f}²)×H×W, got {:?}",
        input.shape()
    );
    let [b, cf, ho, wo] = [
        input.shape()[0],
        input.shape()[1],
        input.shape()[2],
        input.shape()[3],
    ];
    let c = cf / (f * f);
    let (h, w) = (ho * f, wo * f);
    let src = input.data();
    let mut out = vec![0.0f32; src.len()];
    for n in 0..b {
        for ch in 0..c {
            let plane = &mut out[(n * c + ch) * h * w..][..h * w];
            for dy in 0..f {
                for dx in 0..f {
                    let oc = ch * f * f + dy * f + dx;
                    let s = &src[(n * cf + oc) * ho * wo..][..ho * wo];
                    for y in 0..ho {
                        for x in 0..wo {
                            plane[(f * y + dy) * w + f * x + dx] = s[y * wo + x];
                        }
                    }
                }
            }
        }
    }
    Tensor::new(&[b, c, h, w], out)
}
