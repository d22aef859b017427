//! Operation tape with reverse-mode gradient replay.

use super::conv::{self, ConvConfig, Geometry};
use super::norm::{self, BatchStats, Layout};
use crate::error::{LeganError, Result};
use crate::scalar::Scalar;
use crate::tensor::{numel, Tensor};

/// Handle to a tensor recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Var,
        geom: Geometry,
    },
    /// `geom` describes the adjoint correlation from output space back to input space.
    ConvTranspose2d {
        input: Var,
        kernel: Var,
        bias: Var,
        geom: Geometry,
    },
    BatchNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
        batch_stats: bool,
        layout: Layout,
    },
    LeakyRelu {
        input: Var,
        slope: T,
    },
    Sigmoid {
        input: Var,
    },
    LogSigmoid {
        input: Var,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale {
        input: Var,
        factor: T,
    },
    AddScalar {
        input: Var,
    },
    Square {
        input: Var,
    },
    /// `target[i]` is the output cell that input element `i` reduces into.
    Reduce {
        input: Var,
        target: Vec<usize>,
        scale: T,
    },
    Reshape {
        input: Var,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Records forward operations in execution order.
///
/// Every recorded operation refers only to earlier entries, so a single
/// reverse sweep in [`Tape::backward`] is a valid topological replay.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by [`Tape::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of the loss with respect to `var`; zero if `var` did not
    /// influence the loss.
    pub fn get(&self, var: Var) -> Tensor<T> {
        let shape = self.shapes[var.0].clone();
        match &self.grads[var.0] {
            Some(g) => Tensor::from_parts(shape, g.clone()),
            None => Tensor::zeros(shape),
        }
    }

    /// Like [`get`](Self::get) but moves the buffer out.
    pub fn take(&mut self, var: Var) -> Tensor<T> {
        let shape = self.shapes[var.0].clone();
        match self.grads[var.0].take() {
            Some(g) => Tensor::from_parts(shape, g),
            None => Tensor::zeros(shape),
        }
    }
}

fn dims4<T: Scalar>(op: &'static str, what: &str, t: &Tensor<T>) -> Result<[usize; 4]> {
    t.expect_rank(op, what, 4)?;
    let s = t.shape();
    Ok([s[0], s[1], s[2], s[3]])
}

#[inline]
fn stable_sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// `log σ(x) = min(x, 0) − ln(1 + e^{−|x|})`.
#[inline]
fn log_sigmoid<T: Scalar>(x: T) -> T {
    x.min(T::zero()) - (-x.abs()).exp().ln_1p()
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor<T> {
        &self.nodes[var.0].value
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that receives a gradient.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    /// Zero-padded strided cross-correlation of `[N,C,H,W]` input with a
    /// `[F,C,kh,kw]` kernel, plus a per-filter bias.
    pub fn conv2d(&mut self, input: Var, kernel: Var, bias: Var, cfg: ConvConfig) -> Result<Var> {
        const OP: &str = "conv2d";
        let [n, c, h, w] = dims4(OP, "input", self.value(input))?;
        let [f, kc, kh, kw] = dims4(OP, "kernel", self.value(kernel))?;
        if kc != c {
            return Err(LeganError::shape(
                OP,
                format!("input channels (dim 1) {c} != kernel channels (dim 1) {kc}"),
            ));
        }
        if (kh, kw) != (cfg.kernel_h, cfg.kernel_w) {
            return Err(LeganError::shape(
                OP,
                format!(
                    "kernel spatial dims {kh}x{kw} differ from config {}x{}",
                    cfg.kernel_h, cfg.kernel_w
                ),
            ));
        }
        if self.value(bias).shape() != [f] {
            return Err(LeganError::shape(
                OP,
                format!("bias shape {:?} must be [{f}]", self.value(bias).shape()),
            ));
        }
        let (oh, ow) = cfg.conv_output_size(h, w)?;
        let geom = Geometry {
            batch: n,
            in_channels: c,
            out_channels: f,
            h,
            w,
            oh,
            ow,
            kh,
            kw,
            stride: cfg.stride,
            pad: cfg.pad_or_crop,
        };
        let mut out = conv::correlate(self.value(input).data(), self.value(kernel).data(), &geom);
        conv::add_bias(&mut out, self.value(bias).data(), n, oh * ow);
        let value = Tensor::from_parts(vec![n, f, oh, ow], out);
        Ok(self.push(
            value,
            Op::Conv2d {
                input,
                kernel,
                bias,
                geom,
            },
            &[input, kernel, bias],
        ))
    }

    /// Transposed convolution of `[N,C,H,W]` input with a `[C,F,kh,kw]`
    /// kernel: the adjoint of [`conv2d`](Self::conv2d) with the same kernel,
    /// with `cfg.pad_or_crop` border cells cropped from the output.
    pub fn conv_transpose2d(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Var,
        cfg: ConvConfig,
    ) -> Result<Var> {
        const OP: &str = "conv_transpose2d";
        let [n, c, h, w] = dims4(OP, "input", self.value(input))?;
        let [kc, f, kh, kw] = dims4(OP, "kernel", self.value(kernel))?;
        if kc != c {
            return Err(LeganError::shape(
                OP,
                format!("input channels (dim 1) {c} != kernel input channels (dim 0) {kc}"),
            ));
        }
        if (kh, kw) != (cfg.kernel_h, cfg.kernel_w) {
            return Err(LeganError::shape(
                OP,
                format!(
                    "kernel spatial dims {kh}x{kw} differ from config {}x{}",
                    cfg.kernel_h, cfg.kernel_w
                ),
            ));
        }
        if self.value(bias).shape() != [f] {
            return Err(LeganError::shape(
                OP,
                format!("bias shape {:?} must be [{f}]", self.value(bias).shape()),
            ));
        }
        let (oh, ow) = cfg.transposed_output_size(h, w)?;
        // Correlation from the output plane (F channels) down to the input plane (C channels).
        let geom = Geometry {
            batch: n,
            in_channels: f,
            out_channels: c,
            h: oh,
            w: ow,
            oh: h,
            ow: w,
            kh,
            kw,
            stride: cfg.stride,
            pad: cfg.pad_or_crop,
        };
        let mut out = conv::scatter(self.value(input).data(), self.value(kernel).data(), &geom);
        conv::add_bias(&mut out, self.value(bias).data(), n, oh * ow);
        let value = Tensor::from_parts(vec![n, f, oh, ow], out);
        Ok(self.push(
            value,
            Op::ConvTranspose2d {
                input,
                kernel,
                bias,
                geom,
            },
            &[input, kernel, bias],
        ))
    }

    fn bn_layout(&self, op: &'static str, input: Var, gamma: Var, beta: Var) -> Result<Layout> {
        let [n, c, h, w] = dims4(op, "input", self.value(input))?;
        for (what, v) in [("gamma", gamma), ("beta", beta)] {
            if self.value(v).shape() != [c] {
                return Err(LeganError::shape(
                    op,
                    format!(
                        "{what} shape {:?} must be [{c}] (input dim 1)",
                        self.value(v).shape()
                    ),
                ));
            }
        }
        Ok(Layout {
            batch: n,
            channels: c,
            plane: h * w,
        })
    }

    /// Training-mode batch normalization over the N, H, W axes.
    ///
    /// Also returns the batch statistics so callers can maintain running
    /// averages.
    pub fn batch_norm(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        eps: T,
    ) -> Result<(Var, BatchStats<T>)> {
        const OP: &str = "batch_norm";
        let layout = self.bn_layout(OP, input, gamma, beta)?;
        if layout.batch * layout.plane < 2 {
            return Err(LeganError::invalid(
                OP,
                "a channel holds a single element; batch variance is undefined",
            ));
        }
        let x = self.value(input).data();
        let stats = norm::channel_stats(x, layout);
        let (out, xhat, inv_std) = norm::normalize(
            x,
            self.value(gamma).data(),
            self.value(beta).data(),
            &stats.mean,
            &stats.var,
            eps,
            layout,
        );
        let value = Tensor::from_parts(self.value(input).shape().to_vec(), out);
        let var = self.push(
            value,
            Op::BatchNorm {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats: true,
                layout,
            },
            &[input, gamma, beta],
        );
        Ok((var, stats))
    }

    /// Inference-mode batch normalization with fixed statistics.
    pub fn batch_norm_frozen(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        mean: &[T],
        var: &[T],
        eps: T,
    ) -> Result<Var> {
        const OP: &str = "batch_norm_frozen";
        let layout = self.bn_layout(OP, input, gamma, beta)?;
        if mean.len() != layout.channels || var.len() != layout.channels {
            return Err(LeganError::shape(
                OP,
                format!(
                    "running statistics have {} / {} entries for {} channels",
                    mean.len(),
                    var.len(),
                    layout.channels
                ),
            ));
        }
        let (out, xhat, inv_std) = norm::normalize(
            self.value(input).data(),
            self.value(gamma).data(),
            self.value(beta).data(),
            mean,
            var,
            eps,
            layout,
        );
        let value = Tensor::from_parts(self.value(input).shape().to_vec(), out);
        Ok(self.push(
            value,
            Op::BatchNorm {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats: false,
                layout,
            },
            &[input, gamma, beta],
        ))
    }

    /// `x` for `x ≥ 0`, `slope·x` otherwise.
    pub fn leaky_relu(&mut self, input: Var, slope: T) -> Result<Var> {
        if !(slope >= T::zero() && slope < T::one()) {
            return Err(LeganError::invalid(
                "leaky_relu",
                format!("slope {slope} outside [0, 1)"),
            ));
        }
        let value = self
            .value(input)
            .map(|x| if x >= T::zero() { x } else { slope * x });
        Ok(self.push(value, Op::LeakyRelu { input, slope }, &[input]))
    }

    pub fn sigmoid(&mut self, input: Var) -> Var {
        let value = self.value(input).map(stable_sigmoid);
        self.push(value, Op::Sigmoid { input }, &[input])
    }

    pub fn log_sigmoid(&mut self, input: Var) -> Var {
        let value = self.value(input).map(log_sigmoid);
        self.push(value, Op::LogSigmoid { input }, &[input])
    }

    fn binary(
        &mut self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(T, T) -> T,
        record: Op<T>,
    ) -> Result<Var> {
        self.value(a).expect_same_shape(op, self.value(b))?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let value = Tensor::from_parts(self.value(a).shape().to_vec(), data);
        Ok(self.push(value, record, &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, input: Var, factor: T) -> Var {
        let value = self.value(input).map(|x| x * factor);
        self.push(value, Op::Scale { input, factor }, &[input])
    }

    pub fn neg(&mut self, input: Var) -> Var {
        self.scale(input, -T::one())
    }

    pub fn add_scalar(&mut self, input: Var, c: T) -> Var {
        let value = self.value(input).map(|x| x + c);
        self.push(value, Op::AddScalar { input }, &[input])
    }

    pub fn square(&mut self, input: Var) -> Var {
        let value = self.value(input).map(|x| x * x);
        self.push(value, Op::Square { input }, &[input])
    }

    pub fn reshape(&mut self, input: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let value = self.value(input).reshape(shape)?;
        Ok(self.push(value, Op::Reshape { input }, &[input]))
    }

    fn reduce(&mut self, op: &'static str, input: Var, axes: &[usize], mean: bool) -> Result<Var> {
        let shape = self.value(input).shape().to_vec();
        if axes.is_empty() {
            return Err(LeganError::invalid(op, "empty reduction: no axes given"));
        }
        let mut reduced = vec![false; shape.len()];
        for &a in axes {
            if a >= shape.len() {
                return Err(LeganError::shape(
                    op,
                    format!("axis {a} out of range for shape {shape:?}"),
                ));
            }
            if reduced[a] {
                return Err(LeganError::invalid(op, format!("axis {a} repeated")));
            }
            reduced[a] = true;
        }
        let out_shape: Vec<usize> = shape
            .iter()
            .zip(&reduced)
            .filter(|(_, &r)| !r)
            .map(|(&d, _)| d)
            .collect();
        // Output stride of each input axis; zero for reduced axes.
        let mut out_strides = vec![0usize; shape.len()];
        let mut s = 1;
        for ax in (0..shape.len()).rev() {
            if !reduced[ax] {
                out_strides[ax] = s;
                s *= shape[ax];
            }
        }
        let total = numel(&shape);
        let mut target = Vec::with_capacity(total);
        let mut idx = vec![0usize; shape.len()];
        for _ in 0..total {
            target.push(idx.iter().zip(&out_strides).map(|(i, s)| i * s).sum());
            for ax in (0..shape.len()).rev() {
                idx[ax] += 1;
                if idx[ax] < shape[ax] {
                    break;
                }
                idx[ax] = 0;
            }
        }
        let count = total / numel(&out_shape);
        let scale = if mean {
            T::one() / T::from_usize_lossy(count)
        } else {
            T::one()
        };
        let mut out = vec![T::zero(); numel(&out_shape)];
        for (&x, &t) in self.value(input).data().iter().zip(&target) {
            out[t] += x;
        }
        for v in &mut out {
            *v *= scale;
        }
        let value = Tensor::from_parts(out_shape, out);
        Ok(self.push(
            value,
            Op::Reduce {
                input,
                target,
                scale,
            },
            &[input],
        ))
    }

    /// Arithmetic mean over `axes`; those axes are removed from the shape.
    pub fn reduce_mean(&mut self, input: Var, axes: &[usize]) -> Result<Var> {
        self.reduce("reduce_mean", input, axes, true)
    }

    pub fn mean_all(&mut self, input: Var) -> Result<Var> {
        let axes: Vec<usize> = (0..self.value(input).ndim()).collect();
        if axes.is_empty() {
            return Ok(input);
        }
        self.reduce("reduce_mean", input, &axes, true)
    }

    pub fn sum_all(&mut self, input: Var) -> Result<Var> {
        let axes: Vec<usize> = (0..self.value(input).ndim()).collect();
        if axes.is_empty() {
            return Ok(input);
        }
        self.reduce("reduce_sum", input, &axes, false)
    }

    /// Replays the tape backwards from a one-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let loss_value = self.value(loss);
        if loss_value.len() != 1 {
            return Err(LeganError::shape(
                "backward",
                format!("loss must be scalar, got shape {:?}", loss_value.shape()),
            ));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else {
                continue;
            };
            self.propagate(node, &g, &mut grads);
        }
        Ok(Gradients {
            grads,
            shapes: self
                .nodes
                .iter()
                .map(|n| n.value.shape().to_vec())
                .collect(),
        })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<T>>], var: Var, contribution: Vec<T>) {
        if !self.nodes[var.0].requires_grad {
            return;
        }
        match &mut grads[var.0] {
            Some(acc) => {
                for (a, c) in acc.iter_mut().zip(contribution) {
                    *a += c;
                }
            }
            slot => *slot = Some(contribution),
        }
    }

    fn wants(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    fn propagate(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let out = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                kernel,
                bias,
                geom,
            } => {
                if self.wants(*input) {
                    let dx = conv::scatter(g, self.value(*kernel).data(), geom);
                    self.accumulate(grads, *input, dx);
                }
                if self.wants(*kernel) {
                    let dk = conv::kernel_grad(self.value(*input).data(), g, geom);
                    self.accumulate(grads, *kernel, dk);
                }
                if self.wants(*bias) {
                    let db = conv::bias_grad(g, geom.batch, geom.out_channels, geom.oh * geom.ow);
                    self.accumulate(grads, *bias, db);
                }
            }
            Op::ConvTranspose2d {
                input,
                kernel,
                bias,
                geom,
            } => {
                if self.wants(*input) {
                    let dx = conv::correlate(g, self.value(*kernel).data(), geom);
                    self.accumulate(grads, *input, dx);
                }
                if self.wants(*kernel) {
                    let dk = conv::kernel_grad(g, self.value(*input).data(), geom);
                    self.accumulate(grads, *kernel, dk);
                }
                if self.wants(*bias) {
                    let db = conv::bias_grad(g, geom.batch, geom.in_channels, geom.h * geom.w);
                    self.accumulate(grads, *bias, db);
                }
            }
            Op::BatchNorm {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
                layout,
            } => {
                let (dx, dgamma, dbeta) = norm::normalize_backward(
                    g,
                    xhat,
                    inv_std,
                    self.value(*gamma).data(),
                    *batch_stats,
                    *layout,
                );
                self.accumulate(grads, *input, dx);
                self.accumulate(grads, *gamma, dgamma);
                self.accumulate(grads, *beta, dbeta);
            }
            Op::LeakyRelu { input, slope } => {
                let x = self.value(*input).data();
                let dx = x
                    .iter()
                    .zip(g)
                    .map(|(&x, &g)| if x >= T::zero() { g } else { *slope * g })
                    .collect();
                self.accumulate(grads, *input, dx);
            }
            Op::Sigmoid { input } => {
                let dx = out
                    .iter()
                    .zip(g)
                    .map(|(&y, &g)| g * y * (T::one() - y))
                    .collect();
                self.accumulate(grads, *input, dx);
            }
            Op::LogSigmoid { input } => {
                let x = self.value(*input).data();
                let dx = x
                    .iter()
                    .zip(g)
                    .map(|(&x, &g)| g * stable_sigmoid(-x))
                    .collect();
                self.accumulate(grads, *input, dx);
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.to_vec());
                self.accumulate(grads, *b, g.to_vec());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.to_vec());
                self.accumulate(grads, *b, g.iter().map(|&v| -v).collect());
            }
            Op::Mul(a, b) => {
                if self.wants(*a) {
                    let bv = self.value(*b).data();
                    self.accumulate(grads, *a, g.iter().zip(bv).map(|(&g, &y)| g * y).collect());
                }
                if self.wants(*b) {
                    let av = self.value(*a).data();
                    self.accumulate(grads, *b, g.iter().zip(av).map(|(&g, &x)| g * x).collect());
                }
            }
            Op::Scale { input, factor } => {
                self.accumulate(grads, *input, g.iter().map(|&v| v * *factor).collect());
            }
            Op::AddScalar { input } | Op::Reshape { input } => {
                self.accumulate(grads, *input, g.to_vec());
            }
            Op::Square { input } => {
                let x = self.value(*input).data();
                let two = T::lit(2.0);
                self.accumulate(
                    grads,
                    *input,
                    x.iter().zip(g).map(|(&x, &g)| two * x * g).collect(),
                );
            }
            Op::Reduce {
                input,
                target,
                scale,
            } => {
                let dx = target.iter().map(|&t| g[t] * *scale).collect();
                self.accumulate(grads, *input, dx);
            }
        }
    }
}
