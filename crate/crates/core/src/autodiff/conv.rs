//! Strided 2-D cross-correlation kernels over NCHW buffers.
//!
//! Three primitives cover both convolution and transposed convolution:
//! [`correlate`] (gather), [`scatter`] (its adjoint) and [`kernel_grad`].
//! Each unfolds the whole batch into a `[C·kh·kw, N·oh·ow]` column matrix so
//! the inner loops run over long contiguous rows.

use crate::error::{LeganError, Result};
use crate::scalar::Scalar;

/// Geometry of a convolution or transposed convolution layer.
///
/// `pad_or_crop` is zero padding for [`conv2d`](super::Tape::conv2d) and
/// border cropping for [`conv_transpose2d`](super::Tape::conv_transpose2d).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvConfig {
    pub stride: usize,
    pub pad_or_crop: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
}

impl ConvConfig {
    pub fn new(kernel: usize, stride: usize, pad_or_crop: usize) -> Self {
        ConvConfig {
            stride,
            pad_or_crop,
            kernel_h: kernel,
            kernel_w: kernel,
        }
    }

    fn validate(&self, op: &'static str) -> Result<()> {
        if self.stride == 0 || self.kernel_h == 0 || self.kernel_w == 0 {
            return Err(LeganError::invalid(
                op,
                format!(
                    "stride and kernel sizes must be positive, got stride {} kernel {}x{}",
                    self.stride, self.kernel_h, self.kernel_w
                ),
            ));
        }
        Ok(())
    }

    /// `floor((in + 2·pad − kernel)/stride) + 1` for both spatial axes.
    pub fn conv_output_size(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        self.validate("conv2d")?;
        let axis = |len: usize, k: usize, name: &str| {
            let padded = len + 2 * self.pad_or_crop;
            if padded < k {
                return Err(LeganError::shape(
                    "conv2d",
                    format!("{name}: padded input {padded} smaller than kernel {k}"),
                ));
            }
            Ok((padded - k) / self.stride + 1)
        };
        Ok((
            axis(h, self.kernel_h, "height")?,
            axis(w, self.kernel_w, "width")?,
        ))
    }

    /// `(in − 1)·stride − 2·crop + kernel` for both spatial axes.
    pub fn transposed_output_size(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        self.validate("conv_transpose2d")?;
        let axis = |len: usize, k: usize, name: &str| {
            let full = (len - 1) * self.stride + k;
            let crop = 2 * self.pad_or_crop;
            if full <= crop {
                return Err(LeganError::invalid(
                    "conv_transpose2d",
                    format!(
                        "{name}: crop {} leaves no output (uncropped size {full})",
                        self.pad_or_crop
                    ),
                ));
            }
            Ok(full - crop)
        };
        Ok((
            axis(h, self.kernel_h, "height")?,
            axis(w, self.kernel_w, "width")?,
        ))
    }
}

/// Spatial geometry of a correlation from a `h × w` plane to `oh × ow`.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Geometry {
    pub batch: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub h: usize,
    pub w: usize,
    pub oh: usize,
    pub ow: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
}

/// Output positions `o` with `o·stride + k − pad` inside `[0, in_len)`.
#[inline]
fn valid_range(
    k: usize,
    pad: usize,
    stride: usize,
    in_len: usize,
    out_len: usize,
) -> (usize, usize) {
    let start = if pad > k {
        (pad - k).div_ceil(stride)
    } else {
        0
    };
    let end = if in_len + pad > k {
        ((in_len + pad - k - 1) / stride + 1).min(out_len)
    } else {
        0
    };
    (start, end.max(start))
}

impl Geometry {
    fn taps(&self) -> usize {
        self.in_channels * self.kh * self.kw
    }

    fn columns(&self) -> usize {
        self.batch * self.oh * self.ow
    }
}

/// Unfolds `input [N,C,h,w]` into `[C·kh·kw, N·oh·ow]`; padded taps are zero.
fn im2col<T: Scalar>(input: &[T], g: &Geometry) -> Vec<T> {
    let (in_plane, out_plane, cols) = (g.h * g.w, g.oh * g.ow, g.columns());
    let mut col = vec![T::zero(); g.taps() * cols];
    for c in 0..g.in_channels {
        for ki in 0..g.kh {
            let (oh0, oh1) = valid_range(ki, g.pad, g.stride, g.h, g.oh);
            for kj in 0..g.kw {
                let (ow0, ow1) = valid_range(kj, g.pad, g.stride, g.w, g.ow);
                let r = (c * g.kh + ki) * g.kw + kj;
                let dst_row = &mut col[r * cols..][..cols];
                for n in 0..g.batch {
                    let src = &input[(n * g.in_channels + c) * in_plane..][..in_plane];
                    let dst = &mut dst_row[n * out_plane..][..out_plane];
                    for oh in oh0..oh1 {
                        let row = &src[(oh * g.stride + ki - g.pad) * g.w..][..g.w];
                        let drow = &mut dst[oh * g.ow..][..g.ow];
                        for ow in ow0..ow1 {
                            drow[ow] = row[ow * g.stride + kj - g.pad];
                        }
                    }
                }
            }
        }
    }
    col
}

/// Adjoint of [`im2col`]: accumulates columns back onto `[N,C,h,w]`.
fn col2im<T: Scalar>(col: &[T], g: &Geometry) -> Vec<T> {
    let (in_plane, out_plane, cols) = (g.h * g.w, g.oh * g.ow, g.columns());
    let mut out = vec![T::zero(); g.batch * g.in_channels * in_plane];
    for c in 0..g.in_channels {
        for ki in 0..g.kh {
            let (oh0, oh1) = valid_range(ki, g.pad, g.stride, g.h, g.oh);
            for kj in 0..g.kw {
                let (ow0, ow1) = valid_range(kj, g.pad, g.stride, g.w, g.ow);
                let r = (c * g.kh + ki) * g.kw + kj;
                let src_row = &col[r * cols..][..cols];
                for n in 0..g.batch {
                    let dst = &mut out[(n * g.in_channels + c) * in_plane..][..in_plane];
                    let src = &src_row[n * out_plane..][..out_plane];
                    for oh in oh0..oh1 {
                        let row = &mut dst[(oh * g.stride + ki - g.pad) * g.w..][..g.w];
                        let srow = &src[oh * g.ow..][..g.ow];
                        for ow in ow0..ow1 {
                            row[ow * g.stride + kj - g.pad] += srow[ow];
                        }
                    }
                }
            }
        }
    }
    out
}

/// `[N,F,P]` to `[F,N·P]`.
fn channels_first<T: Scalar>(x: &[T], batch: usize, channels: usize, plane: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for n in 0..batch {
        for f in 0..channels {
            out[(f * batch + n) * plane..][..plane]
                .copy_from_slice(&x[(n * channels + f) * plane..][..plane]);
        }
    }
    out
}

/// `[F,N·P]` to `[N,F,P]`.
fn batch_first<T: Scalar>(x: &[T], batch: usize, channels: usize, plane: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for f in 0..channels {
        for n in 0..batch {
            out[(n * channels + f) * plane..][..plane]
                .copy_from_slice(&x[(f * batch + n) * plane..][..plane]);
        }
    }
    out
}

#[inline]
fn axpy<T: Scalar>(a: T, x: &[T], y: &mut [T]) {
    for (y, &x) in y.iter_mut().zip(x) {
        *y += a * x;
    }
}

/// `out[n,f] = Σ_c input[n,c] ⋆ kernel[f,c]`, kernel laid out `[F,C,kh,kw]`.
pub(crate) fn correlate<T: Scalar>(input: &[T], kernel: &[T], g: &Geometry) -> Vec<T> {
    let (taps, cols) = (g.taps(), g.columns());
    let col = im2col(input, g);
    let mut out = vec![T::zero(); g.out_channels * cols];
    for f in 0..g.out_channels {
        let dst = &mut out[f * cols..][..cols];
        for (r, &w) in kernel[f * taps..][..taps].iter().enumerate() {
            if w != T::zero() {
                axpy(w, &col[r * cols..][..cols], dst);
            }
        }
    }
    batch_first(&out, g.batch, g.out_channels, g.oh * g.ow)
}

/// Adjoint of [`correlate`] with respect to its input.
pub(crate) fn scatter<T: Scalar>(upstream: &[T], kernel: &[T], g: &Geometry) -> Vec<T> {
    let (taps, cols) = (g.taps(), g.columns());
    let up = channels_first(upstream, g.batch, g.out_channels, g.oh * g.ow);
    let mut col = vec![T::zero(); taps * cols];
    for r in 0..taps {
        let dst = &mut col[r * cols..][..cols];
        for f in 0..g.out_channels {
            let w = kernel[f * taps + r];
            if w != T::zero() {
                axpy(w, &up[f * cols..][..cols], dst);
            }
        }
    }
    col2im(&col, g)
}

/// Gradient of [`correlate`] with respect to the `[F,C,kh,kw]` kernel.
pub(crate) fn kernel_grad<T: Scalar>(input: &[T], upstream: &[T], g: &Geometry) -> Vec<T> {
    let (taps, cols) = (g.taps(), g.columns());
    let col = im2col(input, g);
    let up = channels_first(upstream, g.batch, g.out_channels, g.oh * g.ow);
    let mut grad = vec![T::zero(); g.out_channels * taps];
    for f in 0..g.out_channels {
        let u = &up[f * cols..][..cols];
        for r in 0..taps {
            grad[f * taps + r] = dot(u, &col[r * cols..][..cols]);
        }
    }
    grad
}

/// Dot product with four independent accumulators.
#[inline]
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for i in 0..4 {
            acc[i] += x[i] * y[i];
        }
    }
    let mut tail = T::zero();
    for (&x, &y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Adds `bias[f]` to every spatial position of channel `f`.
pub(crate) fn add_bias<T: Scalar>(out: &mut [T], bias: &[T], batch: usize, plane: usize) {
    let channels = bias.len();
    for n in 0..batch {
        for (f, &b) in bias.iter().enumerate() {
            for v in &mut out[(n * channels + f) * plane..][..plane] {
                *v += b;
            }
        }
    }
}

/// Per-channel sum over batch and spatial axes.
pub(crate) fn bias_grad<T: Scalar>(
    upstream: &[T],
    batch: usize,
    channels: usize,
    plane: usize,
) -> Vec<T> {
    let mut grad = vec![T::zero(); channels];
    for n in 0..batch {
        for (f, g) in grad.iter_mut().enumerate() {
            *g += upstream[(n * channels + f) * plane..][..plane]
                .iter()
                .copied()
                .sum::<T>();
        }
    }
    grad
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn output_sizes_follow_formulas() {
        let c = ConvConfig::new(4, 2, 1);
        assert_eq!(c.conv_output_size(32, 32).unwrap(), (16, 16));
        assert_eq!(
            ConvConfig::new(2, 2, 1).conv_output_size(8, 8).unwrap(),
            (5, 5)
        );
        assert_eq!(
            ConvConfig::new(4, 1, 0)
                .transposed_output_size(1, 1)
                .unwrap(),
            (4, 4)
        );
        assert_eq!(c.transposed_output_size(4, 4).unwrap(), (8, 8));
    }

    #[test]
    fn invalid_geometry_is_rejected() {
        assert!(ConvConfig::new(5, 1, 0).conv_output_size(3, 3).is_err());
        assert!(ConvConfig::new(2, 1, 1)
            .transposed_output_size(1, 1)
            .is_err());
        assert!(ConvConfig::new(2, 0, 0).conv_output_size(3, 3).is_err());
    }

    #[test]
    fn valid_range_matches_brute_force() {
        for k in 0..5 {
            for pad in 0usize..3 {
                for stride in 1..4 {
                    for in_len in 1..9 {
                        let out_len = (in_len + 2 * pad).saturating_sub(k) / stride + 1;
                        let (a, b) = valid_range(k, pad, stride, in_len, out_len);
                        let brute: Vec<usize> = (0..out_len)
                            .filter(|&o| {
                                let i = (o * stride + k) as isize - pad as isize;
                                i >= 0 && (i as usize) < in_len
                            })
                            .collect();
                        let fast: Vec<usize> = (a..b).collect();
                        assert_eq!(brute, fast, "k={k} pad={pad} s={stride} len={in_len}");
                    }
                }
            }
        }
    }
}
