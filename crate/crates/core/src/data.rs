//! Image datasets, epoch batching and noise sampling.
//!
//! Every random draw goes through ChaCha8 (`rand_chacha`) seeded with
//! `seed_from_u64` and, where a replayable position is needed, a stream
//! number. Both are stable across platforms and releases, so runs with the
//! same seed reproduce exactly.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{LeganError, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const CIFAR_RECORD_BYTES: usize = 3073;
pub const CIFAR_SIDE: usize = 32;

const STREAM_SHUFFLE: u64 = 1;
const STREAM_SYNTH: u64 = 2;

/// ChaCha8 generator for `(seed, stream)`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SourceKind {
    Cifar10Binary,
    SyntheticBlobs,
}

/// A batch of images `[N,3,H,W]` with every value in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageBatch<T>(Tensor<T>);

impl<T: Scalar> ImageBatch<T> {
    pub fn new(tensor: Tensor<T>) -> Result<Self> {
        if tensor.ndim() != 4 || tensor.shape()[1] != 3 {
            return Err(LeganError::shape(
                "image_batch",
                format!("expected [N,3,H,W], got {:?}", tensor.shape()),
            ));
        }
        if tensor
            .data()
            .iter()
            .any(|&v| !(v >= T::zero() && v <= T::one()))
        {
            return Err(LeganError::invalid(
                "image_batch",
                "pixel value outside [0, 1]",
            ));
        }
        Ok(ImageBatch(tensor))
    }

    pub fn tensor(&self) -> &Tensor<T> {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor<T> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// An in-memory pool of images plus the seed that orders its epochs.
#[derive(Clone, Debug)]
pub struct DatasetHandle<T> {
    pub kind: SourceKind,
    pub image_size: usize,
    pub shuffle_seed: u64,
    pool: Vec<T>,
    count: usize,
}

impl<T: Scalar> DatasetHandle<T> {
    fn new(kind: SourceKind, image_size: usize, pool: Vec<T>, shuffle_seed: u64) -> Self {
        let count = pool.len() / (3 * image_size * image_size);
        DatasetHandle {
            kind,
            image_size,
            shuffle_seed,
            pool,
            count,
        }
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    fn image_len(&self) -> usize {
        3 * self.image_size * self.image_size
    }

    pub fn image(&self, index: usize) -> &[T] {
        let n = self.image_len();
        &self.pool[index * n..(index + 1) * n]
    }

    /// Gathers the listed items into one batch.
    pub fn gather(&self, indices: &[usize]) -> Result<ImageBatch<T>> {
        let mut data = Vec::with_capacity(indices.len() * self.image_len());
        for &i in indices {
            if i >= self.count {
                return Err(LeganError::invalid(
                    "gather",
                    format!("item {i} out of range ({} items)", self.count),
                ));
            }
            data.extend_from_slice(self.image(i));
        }
        let s = self.image_size;
        Ok(ImageBatch(Tensor::new(vec![indices.len(), 3, s, s], data)?))
    }

    /// Every item as one tensor `[count,3,H,W]`.
    pub fn to_tensor(&self) -> Tensor<T> {
        let s = self.image_size;
        Tensor::from_parts(vec![self.count, 3, s, s], self.pool.clone())
    }

    /// Item order for one epoch: a seeded permutation split into full
    /// batches, the remainder dropped.
    pub fn batch_order(&self, batch_size: usize, epoch_seed: u64) -> Result<Vec<Vec<usize>>> {
        if batch_size == 0 || batch_size > self.count {
            return Err(LeganError::invalid(
                "batches",
                format!("batch size {batch_size} not in 1..={}", self.count),
            ));
        }
        let mut order: Vec<usize> = (0..self.count).collect();
        let mut rng = stream_rng(
            self.shuffle_seed ^ epoch_seed.rotate_left(32),
            STREAM_SHUFFLE,
        );
        order.shuffle(&mut rng);
        Ok(order.chunks_exact(batch_size).map(|c| c.to_vec()).collect())
    }

    /// Batches of one epoch in order.
    pub fn batches(&self, batch_size: usize, epoch_seed: u64) -> Result<Vec<ImageBatch<T>>> {
        self.batch_order(batch_size, epoch_seed)?
            .iter()
            .map(|idx| self.gather(idx))
            .collect()
    }
}

/// Reads CIFAR-10 binary batch files: 3073-byte records of one label byte
/// then 1024 red, 1024 green and 1024 blue row-major pixel bytes. Labels are
/// discarded; pixels are scaled by 1/255.
pub fn load_cifar10_binary<T: Scalar>(
    paths: &[PathBuf],
    shuffle_seed: u64,
) -> Result<DatasetHandle<T>> {
    if paths.is_empty() {
        return Err(LeganError::invalid("load_cifar10_binary", "no input files"));
    }
    let scale = T::one() / T::lit(255.0);
    let mut pool = Vec::new();
    for path in paths {
        let raw = fs::read(path).map_err(|e| LeganError::io(path, e))?;
        if raw.is_empty() || raw.len() % CIFAR_RECORD_BYTES != 0 {
            let whole = raw.len() / CIFAR_RECORD_BYTES * CIFAR_RECORD_BYTES;
            return Err(LeganError::Format {
                path: path.clone(),
                location: format!("byte {whole}"),
                detail: format!(
                    "file length {} is not a positive multiple of {CIFAR_RECORD_BYTES}",
                    raw.len()
                ),
            });
        }
        pool.reserve(raw.len() / CIFAR_RECORD_BYTES * 3072);
        for record in raw.chunks_exact(CIFAR_RECORD_BYTES) {
            pool.extend(record[1..].iter().map(|&b| T::lit(f64::from(b)) * scale));
        }
    }
    Ok(DatasetHandle::new(
        SourceKind::Cifar10Binary,
        CIFAR_SIDE,
        pool,
        shuffle_seed,
    ))
}

/// Writes a 32×32 dataset in CIFAR-10 binary layout (label byte 0, pixels
/// rounded from `v·255`).
pub fn write_cifar10_binary<T: Scalar>(path: &Path, data: &DatasetHandle<T>) -> Result<()> {
    if data.image_size != CIFAR_SIDE {
        return Err(LeganError::invalid(
            "write_cifar10_binary",
            format!("images are {0}x{0}, format requires 32x32", data.image_size),
        ));
    }
    let mut raw = Vec::with_capacity(data.len() * CIFAR_RECORD_BYTES);
    for i in 0..data.len() {
        raw.push(0u8);
        raw.extend(
            data.image(i)
                .iter()
                .map(|&v| (v.to_f64_lossy() * 255.0).round().clamp(0.0, 255.0) as u8),
        );
    }
    fs::write(path, raw).map_err(|e| LeganError::io(path, e))
}

/// Images holding one or two axis-aligned Gaussian intensity blobs with
/// seeded centers, widths and colors on a black background.
pub fn synth_blobs<T: Scalar>(
    count: usize,
    image_size: usize,
    seed: u64,
) -> Result<DatasetHandle<T>> {
    if image_size < 8 {
        return Err(LeganError::invalid(
            "synth_blobs",
            format!("image size {image_size} below 8"),
        ));
    }
    if count == 0 {
        return Err(LeganError::invalid(
            "synth_blobs",
            "count must be at least 1",
        ));
    }
    let mut rng = stream_rng(seed, STREAM_SYNTH);
    let s = image_size as f64;
    let plane = image_size * image_size;
    let mut pool = Vec::with_capacity(count * 3 * plane);
    let mut img = vec![0.0f64; 3 * plane];
    for _ in 0..count {
        img.fill(0.0);
        let blobs = rng.random_range(1..=2);
        for _ in 0..blobs {
            let cy = rng.random_range(0.25..0.75) * s;
            let cx = rng.random_range(0.25..0.75) * s;
            let sy = rng.random_range(0.08..0.2) * s;
            let sx = rng.random_range(0.08..0.2) * s;
            let color: [f64; 3] = [
                rng.random_range(0.3..1.0),
                rng.random_range(0.3..1.0),
                rng.random_range(0.3..1.0),
            ];
            for y in 0..image_size {
                let dy = (y as f64 + 0.5 - cy) / sy;
                for x in 0..image_size {
                    let dx = (x as f64 + 0.5 - cx) / sx;
                    let g = (-0.5 * (dy * dy + dx * dx)).exp();
                    for (c, &col) in color.iter().enumerate() {
                        img[c * plane + y * image_size + x] += col * g;
                    }
                }
            }
        }
        pool.extend(img.iter().map(|&v| T::lit(v.clamp(0.0, 1.0))));
    }
    Ok(DatasetHandle::new(
        SourceKind::SyntheticBlobs,
        image_size,
        pool,
        seed,
    ))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum NoisePrior {
    #[default]
    StandardNormal,
    /// Uniform on `[−1, 1)`.
    Uniform,
}

impl FromStr for NoisePrior {
    type Err = LeganError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "normal" | "standard-normal" => Ok(NoisePrior::StandardNormal),
            "uniform" => Ok(NoisePrior::Uniform),
            other => Err(LeganError::invalid(
                "noise_prior",
                format!("unknown prior {other:?} (normal, uniform)"),
            )),
        }
    }
}

impl NoisePrior {
    pub fn as_str(self) -> &'static str {
        match self {
            NoisePrior::StandardNormal => "normal",
            NoisePrior::Uniform => "uniform",
        }
    }
}

/// Noise `[count, dim, 1, 1]`; draw `draw_index` of the stream seeded by
/// `seed`, so any draw can be replayed on its own.
pub fn sample_noise<T: Scalar>(
    count: usize,
    dim: usize,
    seed: u64,
    draw_index: u64,
    prior: NoisePrior,
) -> Result<Tensor<T>> {
    if count == 0 || dim == 0 {
        return Err(LeganError::invalid(
            "sample_noise",
            format!("count {count} and dim {dim} must be positive"),
        ));
    }
    let mut rng = stream_rng(seed, draw_index);
    let n = count * dim;
    let data: Vec<T> = match prior {
        NoisePrior::StandardNormal => (0..n)
            .map(|_| T::lit(StandardNormal.sample(&mut rng)))
            .collect(),
        NoisePrior::Uniform => (0..n)
            .map(|_| T::lit(rng.random_range(-1.0..1.0)))
            .collect(),
    };
    Tensor::new(vec![count, dim, 1, 1], data)
}
