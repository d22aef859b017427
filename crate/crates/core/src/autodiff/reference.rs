//! Direct-definition convolution routines.
//!
//! These evaluate each output cell (or each input contribution) with plain
//! nested loops and signed index arithmetic. They share no code with the
//! kernels behind [`Tape`](super::Tape) and serve as the oracle those
//! kernels are checked against.

use super::conv::ConvConfig;
use crate::error::{LeganError, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

fn dims4<T: Scalar>(t: &Tensor<T>, what: &str) -> Result<[usize; 4]> {
    match t.shape() {
        &[a, b, c, d] => Ok([a, b, c, d]),
        s => Err(LeganError::shape(
            "reference",
            format!("{what} must be 4-D, got {s:?}"),
        )),
    }
}

/// Zero-padded cross-correlation, `kernel` laid out `[F,C,kh,kw]`.
pub fn conv2d_naive<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: &Tensor<T>,
    cfg: ConvConfig,
) -> Result<Tensor<T>> {
    let [n, c, h, w] = dims4(input, "input")?;
    let [f, kc, kh, kw] = dims4(kernel, "kernel")?;
    if kc != c || bias.len() != f {
        return Err(LeganError::shape("reference", "channel counts disagree"));
    }
    let (s, p) = (cfg.stride as isize, cfg.pad_or_crop as isize);
    let oh = (h as isize + 2 * p - kh as isize) / s + 1;
    let ow = (w as isize + 2 * p - kw as isize) / s + 1;
    if oh < 1 || ow < 1 {
        return Err(LeganError::shape("reference", "empty output"));
    }
    let (oh, ow) = (oh as usize, ow as usize);
    let x = input.data();
    let k = kernel.data();
    let mut out = Vec::with_capacity(n * f * oh * ow);
    for ni in 0..n {
        for fi in 0..f {
            for y in 0..oh {
                for xo in 0..ow {
                    let mut acc = bias.data()[fi];
                    for ci in 0..c {
                        for a in 0..kh {
                            for b in 0..kw {
                                let iy = y as isize * s + a as isize - p;
                                let ix = xo as isize * s + b as isize - p;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                let xv = x[((ni * c + ci) * h + iy as usize) * w + ix as usize];
                                let kv = k[((fi * c + ci) * kh + a) * kw + b];
                                acc += xv * kv;
                            }
                        }
                    }
                    out.push(acc);
                }
            }
        }
    }
    Tensor::new(vec![n, f, oh, ow], out)
}

/// Transposed convolution by direct scattering, `kernel` laid out
/// `[C,F,kh,kw]`: every input cell adds `x·K` into a `kh × kw` window of the
/// uncropped output, and `crop` rows/columns are then dropped on each border.
pub fn conv_transpose2d_naive<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: &Tensor<T>,
    cfg: ConvConfig,
) -> Result<Tensor<T>> {
    let [n, c, h, w] = dims4(input, "input")?;
    let [kc, f, kh, kw] = dims4(kernel, "kernel")?;
    if kc != c || bias.len() != f {
        return Err(LeganError::shape("reference", "channel counts disagree"));
    }
    let s = cfg.stride;
    let crop = cfg.pad_or_crop;
    let full_h = (h - 1) * s + kh;
    let full_w = (w - 1) * s + kw;
    if full_h <= 2 * crop || full_w <= 2 * crop {
        return Err(LeganError::shape("reference", "crop leaves no output"));
    }
    let mut full = vec![T::zero(); n * f * full_h * full_w];
    let x = input.data();
    let k = kernel.data();
    for ni in 0..n {
        for ci in 0..c {
            for iy in 0..h {
                for ix in 0..w {
                    let xv = x[((ni * c + ci) * h + iy) * w + ix];
                    for fi in 0..f {
                        for a in 0..kh {
                            for b in 0..kw {
                                let kv = k[((ci * f + fi) * kh + a) * kw + b];
                                full[((ni * f + fi) * full_h + iy * s + a) * full_w
                                    + ix * s
                                    + b] += xv * kv;
                            }
                        }
                    }
                }
            }
        }
    }
    let (oh, ow) = (full_h - 2 * crop, full_w - 2 * crop);
    let mut out = Vec::with_capacity(n * f * oh * ow);
    for ni in 0..n {
        for fi in 0..f {
            for y in 0..oh {
                for xo in 0..ow {
                    out.push(
                        full[((ni * f + fi) * full_h + y + crop) * full_w + xo + crop]
                            + bias.data()[fi],
                    );
                }
            }
        }
    }
    Tensor::new(vec![n, f, oh, ow], out)
}
