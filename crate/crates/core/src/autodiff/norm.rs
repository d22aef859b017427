//! Per-channel batch normalization kernels over NCHW buffers.

use crate::scalar::Scalar;

/// Batch mean and biased variance of each channel.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
    /// Elements per channel (`N·H·W`).
    pub count: usize,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Layout {
    pub batch: usize,
    pub channels: usize,
    pub plane: usize,
}

impl Layout {
    #[inline]
    pub fn for_each_plane(&self, c: usize, mut f: impl FnMut(std::ops::Range<usize>)) {
        for n in 0..self.batch {
            let start = (n * self.channels + c) * self.plane;
            f(start..start + self.plane);
        }
    }
}

pub(crate) fn channel_stats<T: Scalar>(x: &[T], l: Layout) -> BatchStats<T> {
    let count = l.batch * l.plane;
    let inv_count = T::one() / T::from_usize_lossy(count);
    let mut mean = vec![T::zero(); l.channels];
    let mut var = vec![T::zero(); l.channels];
    for c in 0..l.channels {
        let mut s = T::zero();
        l.for_each_plane(c, |r| s += x[r].iter().copied().sum::<T>());
        let m = s * inv_count;
        let mut ss = T::zero();
        l.for_each_plane(c, |r| {
            for &v in &x[r] {
                ss += (v - m) * (v - m);
            }
        });
        mean[c] = m;
        var[c] = ss * inv_count;
    }
    BatchStats { mean, var, count }
}

/// Returns `(output, x̂, 1/√(var+eps))` for the given per-channel statistics.
pub(crate) fn normalize<T: Scalar>(
    x: &[T],
    gamma: &[T],
    beta: &[T],
    mean: &[T],
    var: &[T],
    eps: T,
    l: Layout,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let mut xhat = vec![T::zero(); x.len()];
    let mut out = vec![T::zero(); x.len()];
    for c in 0..l.channels {
        let (m, is, g, b) = (mean[c], inv_std[c], gamma[c], beta[c]);
        l.for_each_plane(c, |r| {
            for i in r {
                let h = (x[i] - m) * is;
                xhat[i] = h;
                out[i] = g * h + b;
            }
        });
    }
    (out, xhat, inv_std)
}

/// Gradients `(dx, dγ, dβ)`.
///
/// With `batch_stats` the mean and variance are functions of `x` and the
/// full normalization Jacobian applies; otherwise they are constants.
pub(crate) fn normalize_backward<T: Scalar>(
    upstream: &[T],
    xhat: &[T],
    inv_std: &[T],
    gamma: &[T],
    batch_stats: bool,
    l: Layout,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let count = T::from_usize_lossy(l.batch * l.plane);
    let mut dx = vec![T::zero(); upstream.len()];
    let mut dgamma = vec![T::zero(); l.channels];
    let mut dbeta = vec![T::zero(); l.channels];
    for c in 0..l.channels {
        let (mut sum_dy, mut sum_dy_xhat) = (T::zero(), T::zero());
        l.for_each_plane(c, |r| {
            for i in r {
                sum_dy += upstream[i];
                sum_dy_xhat += upstream[i] * xhat[i];
            }
        });
        dgamma[c] = sum_dy_xhat;
        dbeta[c] = sum_dy;
        let scale = gamma[c] * inv_std[c];
        if batch_stats {
            let (mean_dy, mean_dy_xhat) = (sum_dy / count, sum_dy_xhat / count);
            l.for_each_plane(c, |r| {
                for i in r {
                    dx[i] = scale * (upstream[i] - mean_dy - xhat[i] * mean_dy_xhat);
                }
            });
        } else {
            l.for_each_plane(c, |r| {
                for i in r {
                    dx[i] = scale * upstream[i];
                }
            });
        }
    }
    (dx, dgamma, dbeta)
}
