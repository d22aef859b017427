//! DCGAN-style generator and discriminator.
//!
//! The full-size layouts map `[N,100,1,1]` noise to `[N,3,32,32]` images and
//! images to a `[N,1,2,2]` pre-activation map. Each block is a (transposed)
//! convolution, an optional batch norm, then an activation. The
//! discriminator's final block has no activation: its output map, averaged
//! over the 2×2 positions, is the per-image embedding.

mod checkpoint;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub use checkpoint::{read_checkpoint, write_checkpoint, CheckpointEntry};

use crate::autodiff::{BatchStats, ConvConfig, Tape, Var};
use crate::error::{LeganError, Result};
use crate::objectives::ObjectiveKind;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const NOISE_DIM: usize = 100;
pub const LEAKY_SLOPE: f64 = 0.2;
pub const INIT_STD: f64 = 0.02;
pub const INIT_MEAN: f64 = 0.0;
pub const BN_EPS: f64 = 1e-5;
/// Weight of the previous value in the running-statistics update.
pub const BN_MOMENTUM: f64 = 0.9;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    LeakyRelu(f64),
    Sigmoid,
    /// No nonlinearity.
    Identity,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerKind {
    Conv,
    TransposedConv,
}

/// Gaussian initializer for convolution kernels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Init {
    pub std: f64,
    pub mean: f64,
}

/// One block: (transposed) convolution, optional batch norm, activation.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub out_channels: usize,
    pub conv: ConvConfig,
    pub batch_norm: bool,
    pub activation: Activation,
    pub init: Init,
}

impl LayerSpec {
    fn new(
        kind: LayerKind,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad_or_crop: usize,
        batch_norm: bool,
        activation: Activation,
    ) -> Self {
        LayerSpec {
            kind,
            out_channels,
            conv: ConvConfig::new(kernel, stride, pad_or_crop),
            batch_norm,
            activation,
            init: Init {
                std: INIT_STD,
                mean: INIT_MEAN,
            },
        }
    }

    /// Spatial output size for a `(h, w)` input.
    pub fn output_size(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        match self.kind {
            LayerKind::Conv => self.conv.conv_output_size(h, w),
            LayerKind::TransposedConv => self.conv.transposed_output_size(h, w),
        }
    }
}

/// Layer-by-layer description of a network and the input it expects.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkSpec {
    /// `[C,H,W]` of one input sample.
    pub input: [usize; 3],
    pub layers: Vec<LayerSpec>,
}

impl NetworkSpec {
    /// `[C,H,W]` after each layer, in order.
    pub fn shape_chain(&self) -> Result<Vec<[usize; 3]>> {
        let mut chain = vec![self.input];
        let [_, mut h, mut w] = self.input;
        for layer in &self.layers {
            if layer.init.std <= 0.0 {
                return Err(LeganError::invalid("network", "init std must be positive"));
            }
            (h, w) = layer.output_size(h, w)?;
            chain.push([layer.out_channels, h, w]);
        }
        Ok(chain)
    }

    pub fn output(&self) -> Result<[usize; 3]> {
        Ok(*self.shape_chain()?.last().expect("chain holds the input"))
    }
}

/// Which layout to build.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Architecture {
    /// 32×32 images; generator widths 256/128/64, discriminator 64/128/256.
    Full,
    /// 32×32 images with every width scaled to multiples of `width`
    /// (`Full` is `Compact { width: 64 }`).
    Compact { width: usize },
    /// 8×8 images: only the first and last blocks of each network, widths
    /// scaled from `width`. The discriminator still ends in a 2×2 map.
    Tiny { width: usize },
}

impl Architecture {
    pub fn image_size(self) -> usize {
        match self {
            Architecture::Full | Architecture::Compact { .. } => 32,
            Architecture::Tiny { .. } => 8,
        }
    }

    fn width(self) -> usize {
        match self {
            Architecture::Full => 64,
            Architecture::Compact { width } | Architecture::Tiny { width } => width,
        }
    }

    pub fn generator_spec(self, noise_dim: usize) -> NetworkSpec {
        use LayerKind::TransposedConv as T;
        let w = self.width();
        let lrelu = Activation::LeakyRelu(LEAKY_SLOPE);
        let layers = match self {
            Architecture::Full | Architecture::Compact { .. } => vec![
                LayerSpec::new(T, 4 * w, 4, 1, 0, true, lrelu),
                LayerSpec::new(T, 2 * w, 4, 2, 1, true, lrelu),
                LayerSpec::new(T, w, 4, 2, 1, true, lrelu),
                LayerSpec::new(T, 3, 4, 2, 1, false, Activation::Sigmoid),
            ],
            Architecture::Tiny { .. } => vec![
                LayerSpec::new(T, 2 * w, 4, 1, 0, true, lrelu),
                LayerSpec::new(T, 3, 4, 2, 1, false, Activation::Sigmoid),
            ],
        };
        NetworkSpec {
            input: [noise_dim, 1, 1],
            layers,
        }
    }

    pub fn discriminator_spec(self) -> NetworkSpec {
        use LayerKind::Conv as C;
        let w = self.width();
        let lrelu = Activation::LeakyRelu(LEAKY_SLOPE);
        let size = self.image_size();
        let layers = match self {
            Architecture::Full | Architecture::Compact { .. } => vec![
                LayerSpec::new(C, w, 4, 2, 1, false, lrelu),
                LayerSpec::new(C, 2 * w, 4, 2, 1, true, lrelu),
                LayerSpec::new(C, 4 * w, 2, 2, 1, true, lrelu),
                LayerSpec::new(C, 1, 4, 2, 1, false, Activation::Identity),
            ],
            Architecture::Tiny { .. } => vec![
                LayerSpec::new(C, w, 4, 2, 1, false, lrelu),
                LayerSpec::new(C, 1, 4, 2, 1, false, Activation::Identity),
            ],
        };
        NetworkSpec {
            input: [3, size, size],
            layers,
        }
    }
}

/// `full`, `compact:<width>` or `tiny:<width>`.
impl std::str::FromStr for Architecture {
    type Err = LeganError;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || {
            LeganError::invalid(
                "architecture",
                format!("{s:?} is not full, compact:<width> or tiny:<width>"),
            )
        };
        let (name, width) = match s.split_once(':') {
            Some((n, w)) => (n, Some(w.parse::<usize>().map_err(|_| bad())?)),
            None => (s, None),
        };
        match (name, width) {
            ("full", None) => Ok(Architecture::Full),
            ("compact", Some(w)) if w > 0 => Ok(Architecture::Compact { width: w }),
            ("tiny", Some(w)) if w > 0 => Ok(Architecture::Tiny { width: w }),
            _ => Err(bad()),
        }
    }
}

impl std::fmt::Display for Architecture {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Architecture::Full => f.write_str("full"),
            Architecture::Compact { width } => write!(f, "compact:{width}"),
            Architecture::Tiny { width } => write!(f, "tiny:{width}"),
        }
    }
}

/// Batch-norm behavior during a forward pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormMode {
    /// Normalize with the current batch's statistics.
    Train,
    /// Normalize with the stored running averages.
    Inference,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

/// Parameter indices of one block inside [`Network::params`].
#[derive(Clone, Debug)]
struct BlockParams {
    kernel: usize,
    bias: usize,
    norm: Option<(usize, usize)>,
}

/// Parameters and running statistics for a [`NetworkSpec`].
#[derive(Clone, Debug)]
pub struct Network<T> {
    spec: NetworkSpec,
    params: Vec<Param<T>>,
    blocks: Vec<BlockParams>,
    running: Vec<Option<RunningStats<T>>>,
}

/// Result of a recorded forward pass.
pub struct Forward<T> {
    pub output: Var,
    /// Tape handle of every parameter, in [`Network::params`] order.
    pub param_vars: Vec<Var>,
    /// Batch statistics of each block (training-mode batch norm only).
    pub stats: Vec<Option<BatchStats<T>>>,
}

impl<T: Scalar> Network<T> {
    pub fn build(spec: NetworkSpec, prefix: &str, seed: u64) -> Result<Self> {
        let chain = spec.shape_chain()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::new();
        let mut blocks = Vec::new();
        let mut running = Vec::new();
        for (i, layer) in spec.layers.iter().enumerate() {
            let in_ch = chain[i][0];
            let out_ch = layer.out_channels;
            let (kh, kw) = (layer.conv.kernel_h, layer.conv.kernel_w);
            let kshape = match layer.kind {
                LayerKind::Conv => vec![out_ch, in_ch, kh, kw],
                LayerKind::TransposedConv => vec![in_ch, out_ch, kh, kw],
            };
            let normal = Normal::new(layer.init.mean, layer.init.std)
                .map_err(|e| LeganError::invalid("network", e.to_string()))?;
            let n: usize = kshape.iter().product();
            let kernel = Tensor::new(
                kshape,
                (0..n).map(|_| T::lit(normal.sample(&mut rng))).collect(),
            )?;
            let name = format!("{prefix}.layer{}", i + 1);
            let kernel_idx = params.len();
            params.push(Param {
                name: format!("{name}.kernel"),
                value: kernel,
            });
            params.push(Param {
                name: format!("{name}.bias"),
                value: Tensor::zeros(vec![out_ch]),
            });
            let norm = if layer.batch_norm {
                params.push(Param {
                    name: format!("{name}.bn.gamma"),
                    value: Tensor::ones(vec![out_ch]),
                });
                params.push(Param {
                    name: format!("{name}.bn.beta"),
                    value: Tensor::zeros(vec![out_ch]),
                });
                running.push(Some(RunningStats {
                    mean: vec![T::zero(); out_ch],
                    var: vec![T::one(); out_ch],
                }));
                Some((kernel_idx + 2, kernel_idx + 3))
            } else {
                running.push(None);
                None
            };
            blocks.push(BlockParams {
                kernel: kernel_idx,
                bias: kernel_idx + 1,
                norm,
            });
        }
        Ok(Network {
            spec,
            params,
            blocks,
            running,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn params(&self) -> &[Param<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param<T>] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn running_stats(&self) -> &[Option<RunningStats<T>>] {
        &self.running
    }

    /// Largest absolute parameter value.
    pub fn max_abs_param(&self) -> T {
        self.params
            .iter()
            .fold(T::zero(), |m, p| m.max(p.value.max_abs()))
    }

    /// Records a forward pass; `trainable` marks the parameters as requiring
    /// gradients.
    pub fn forward(
        &self,
        tape: &mut Tape<T>,
        input: Var,
        mode: NormMode,
        trainable: bool,
    ) -> Result<Forward<T>> {
        let param_vars: Vec<Var> = self
            .params
            .iter()
            .map(|p| tape.leaf(p.value.clone(), trainable))
            .collect();
        self.forward_with(tape, input, param_vars, mode)
    }

    /// Like [`forward`](Self::forward) with caller-supplied parameter
    /// variables, one per entry of [`params`](Self::params).
    pub fn forward_with(
        &self,
        tape: &mut Tape<T>,
        input: Var,
        param_vars: Vec<Var>,
        mode: NormMode,
    ) -> Result<Forward<T>> {
        let [c, h, w] = self.spec.input;
        let shape = tape.value(input).shape();
        if shape.len() != 4 || shape[1..] != [c, h, w] {
            return Err(LeganError::shape(
                "network",
                format!("input shape {shape:?} must be [N,{c},{h},{w}]"),
            ));
        }
        if param_vars.len() != self.params.len() {
            return Err(LeganError::invalid(
                "network",
                format!(
                    "{} parameter variables for {} parameters",
                    param_vars.len(),
                    self.params.len()
                ),
            ));
        }
        for (v, p) in param_vars.iter().zip(&self.params) {
            if tape.value(*v).shape() != p.value.shape() {
                return Err(LeganError::shape(
                    "network",
                    format!(
                        "{}: {:?} vs {:?}",
                        p.name,
                        tape.value(*v).shape(),
                        p.value.shape()
                    ),
                ));
            }
        }
        let eps = T::lit(BN_EPS);
        let mut x = input;
        let mut stats = Vec::with_capacity(self.blocks.len());
        for ((layer, block), running) in
            self.spec.layers.iter().zip(&self.blocks).zip(&self.running)
        {
            let (k, b) = (param_vars[block.kernel], param_vars[block.bias]);
            x = match layer.kind {
                LayerKind::Conv => tape.conv2d(x, k, b, layer.conv)?,
                LayerKind::TransposedConv => tape.conv_transpose2d(x, k, b, layer.conv)?,
            };
            let mut block_stats = None;
            if let Some((g, be)) = block.norm {
                let (gamma, beta) = (param_vars[g], param_vars[be]);
                x = match mode {
                    NormMode::Train => {
                        let (y, s) = tape.batch_norm(x, gamma, beta, eps)?;
                        block_stats = Some(s);
                        y
                    }
                    NormMode::Inference => {
                        let r = running.as_ref().expect("norm block has running stats");
                        tape.batch_norm_frozen(x, gamma, beta, &r.mean, &r.var, eps)?
                    }
                };
            }
            stats.push(block_stats);
            x = match layer.activation {
                Activation::LeakyRelu(slope) => tape.leaky_relu(x, T::lit(slope))?,
                Activation::Sigmoid => tape.sigmoid(x),
                Activation::Identity => x,
            };
        }
        Ok(Forward {
            output: x,
            param_vars,
            stats,
        })
    }

    /// Folds batch statistics into the running averages:
    /// `running ← m·running + (1 − m)·batch`, with the unbiased batch variance.
    pub fn update_running_stats(&mut self, stats: &[Option<BatchStats<T>>], momentum: T) {
        for (running, batch) in self.running.iter_mut().zip(stats) {
            let (Some(r), Some(s)) = (running.as_mut(), batch.as_ref()) else {
                continue;
            };
            let n = T::from_usize_lossy(s.count);
            let unbias = if s.count > 1 {
                n / (n - T::one())
            } else {
                T::one()
            };
            let keep = T::one() - momentum;
            for (rm, &m) in r.mean.iter_mut().zip(&s.mean) {
                *rm = momentum * *rm + keep * m;
            }
            for (rv, &v) in r.var.iter_mut().zip(&s.var) {
                *rv = momentum * *rv + keep * v * unbias;
            }
        }
    }

    /// Parameters followed by running statistics, as named tensors.
    pub fn named_tensors(&self) -> Vec<(String, Tensor<T>)> {
        let mut out: Vec<(String, Tensor<T>)> = self
            .params
            .iter()
            .map(|p| (p.name.clone(), p.value.clone()))
            .collect();
        for (i, r) in self.running.iter().enumerate() {
            if let Some(r) = r {
                let base = format!("{}.bn", self.layer_name(i));
                out.push((
                    format!("{base}.running_mean"),
                    Tensor::from_vec(r.mean.clone()),
                ));
                out.push((
                    format!("{base}.running_var"),
                    Tensor::from_vec(r.var.clone()),
                ));
            }
        }
        out
    }

    /// Restores tensors written by [`named_tensors`](Self::named_tensors).
    pub fn load_named(&mut self, entries: &[CheckpointEntry]) -> Result<()> {
        let find = |name: &str| {
            entries
                .iter()
                .find(|e| e.name == name)
                .ok_or_else(|| LeganError::invalid("checkpoint", format!("missing tensor {name}")))
        };
        for p in &mut self.params {
            let e = find(&p.name)?;
            if e.tensor.shape() != p.value.shape() {
                return Err(LeganError::shape(
                    "checkpoint",
                    format!(
                        "{}: stored {:?}, expected {:?}",
                        p.name,
                        e.tensor.shape(),
                        p.value.shape()
                    ),
                ));
            }
            p.value = e.tensor.cast();
        }
        let names: Vec<String> = (0..self.running.len())
            .map(|i| self.layer_name(i))
            .collect();
        for (r, name) in self.running.iter_mut().zip(names) {
            if let Some(r) = r {
                let m = find(&format!("{name}.bn.running_mean"))?;
                let v = find(&format!("{name}.bn.running_var"))?;
                if m.tensor.len() != r.mean.len() || v.tensor.len() != r.var.len() {
                    return Err(LeganError::shape(
                        "checkpoint",
                        format!("{name}: running stats length"),
                    ));
                }
                r.mean = m.tensor.cast::<T>().into_data();
                r.var = v.tensor.cast::<T>().into_data();
            }
        }
        Ok(())
    }

    fn layer_name(&self, block: usize) -> String {
        let kernel = &self.params[self.blocks[block].kernel].name;
        kernel.trim_end_matches(".kernel").to_string()
    }
}

/// Maps noise to images in (0, 1).
#[derive(Clone, Debug)]
pub struct Generator<T> {
    pub net: Network<T>,
    pub noise_dim: usize,
}

impl<T: Scalar> Generator<T> {
    pub fn build(arch: Architecture, noise_dim: usize, seed: u64) -> Result<Self> {
        if noise_dim == 0 {
            return Err(LeganError::invalid(
                "build_generator",
                "noise_dim must be at least 1",
            ));
        }
        Ok(Generator {
            net: Network::build(arch.generator_spec(noise_dim), "g", seed)?,
            noise_dim,
        })
    }

    pub fn forward(
        &self,
        tape: &mut Tape<T>,
        noise: Var,
        mode: NormMode,
        trainable: bool,
    ) -> Result<Forward<T>> {
        self.net.forward(tape, noise, mode, trainable)
    }

    /// Generates images without recording gradients.
    pub fn generate(&self, noise: &Tensor<T>, mode: NormMode) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let z = tape.constant(noise.clone());
        let f = self.forward(&mut tape, z, mode, false)?;
        Ok(tape.value(f.output).clone())
    }
}

/// How [`Discriminator::discriminate`] turns an embedding into a score.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Head {
    /// Sigmoid of the embedding (vanilla objective).
    Sigmoid,
    /// The embedding itself (least-squares and Wasserstein objectives).
    Raw,
}

impl Head {
    pub fn for_objective(kind: ObjectiveKind) -> Self {
        match kind {
            ObjectiveKind::Vanilla => Head::Sigmoid,
            ObjectiveKind::LeastSquares | ObjectiveKind::Wasserstein => Head::Raw,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Discriminator<T> {
    pub net: Network<T>,
    pub head: Head,
}

impl<T: Scalar> Discriminator<T> {
    pub fn build(arch: Architecture, objective: ObjectiveKind, seed: u64) -> Result<Self> {
        Ok(Discriminator {
            net: Network::build(arch.discriminator_spec(), "d", seed)?,
            head: Head::for_objective(objective),
        })
    }

    /// Records the pre-activation map and its spatial mean, one scalar per
    /// image. Returns the forward record with `output` set to the `[N]`
    /// embedding.
    pub fn embed_var(
        &self,
        tape: &mut Tape<T>,
        images: Var,
        mode: NormMode,
        trainable: bool,
    ) -> Result<Forward<T>> {
        let mut f = self.net.forward(tape, images, mode, trainable)?;
        f.output = tape.reduce_mean(f.output, &[1, 2, 3])?;
        Ok(f)
    }

    /// Per-image embeddings, without recording gradients.
    pub fn embed(&self, images: &Tensor<T>, mode: NormMode) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let x = tape.constant(images.clone());
        let f = self.embed_var(&mut tape, x, mode, false)?;
        Ok(tape.value(f.output).clone())
    }

    /// Discriminator score per image according to [`Head`].
    pub fn discriminate(&self, images: &Tensor<T>, mode: NormMode) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let x = tape.constant(images.clone());
        let f = self.embed_var(&mut tape, x, mode, false)?;
        let out = match self.head {
            Head::Sigmoid => tape.sigmoid(f.output),
            Head::Raw => f.output,
        };
        Ok(tape.value(out).clone())
    }
}
