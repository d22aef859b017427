//! Central finite-difference verification of analytic gradients.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::tape::{Tape, Var};
use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// A scalar-valued function of several tensors with an analytic gradient.
pub trait Differentiable<T: Scalar> {
    fn name(&self) -> String;

    fn input_shapes(&self) -> Vec<Vec<usize>>;

    fn value(&self, inputs: &[Tensor<T>]) -> Result<T>;

    fn value_and_grad(&self, inputs: &[Tensor<T>]) -> Result<(T, Vec<Tensor<T>>)>;

    /// Random evaluation point; standard normal unless overridden.
    fn sample_inputs(&self, rng: &mut ChaCha8Rng) -> Vec<Tensor<T>> {
        self.input_shapes()
            .into_iter()
            .map(|shape| {
                let n = shape.iter().product();
                let data = (0..n).map(|_| T::lit(StandardNormal.sample(rng))).collect();
                Tensor::new(shape, data).expect("sampled shape valid")
            })
            .collect()
    }
}

type BuildFn<T> = dyn Fn(&mut Tape<T>, &[Var]) -> Result<Var>;
type SampleFn<T> = dyn Fn(&mut ChaCha8Rng) -> Vec<Tensor<T>>;

/// Adapts a tape computation into a [`Differentiable`].
///
/// Non-scalar outputs are reduced to `Σ out ⊙ w` with a fixed random
/// projection `w`, so every output cell contributes to the check.
pub struct TapeFn<T> {
    name: String,
    shapes: Vec<Vec<usize>>,
    build: Box<BuildFn<T>>,
    projection_seed: u64,
    sampler: Option<Box<SampleFn<T>>>,
}

impl<T: Scalar> TapeFn<T> {
    pub fn new(
        name: impl Into<String>,
        shapes: Vec<Vec<usize>>,
        build: impl Fn(&mut Tape<T>, &[Var]) -> Result<Var> + 'static,
    ) -> Self {
        TapeFn {
            name: name.into(),
            shapes,
            build: Box::new(build),
            projection_seed: 0x5eed,
            sampler: None,
        }
    }

    /// Overrides how evaluation points are drawn.
    pub fn with_sampler(
        mut self,
        sampler: impl Fn(&mut ChaCha8Rng) -> Vec<Tensor<T>> + 'static,
    ) -> Self {
        self.sampler = Some(Box::new(sampler));
        self
    }

    fn objective(&self, tape: &mut Tape<T>, inputs: &[Var]) -> Result<Var> {
        let out = (self.build)(tape, inputs)?;
        if tape.value(out).len() == 1 {
            return tape.sum_all(out);
        }
        let shape = tape.value(out).shape().to_vec();
        let mut rng = ChaCha8Rng::seed_from_u64(self.projection_seed);
        let w: Vec<T> = (0..tape.value(out).len())
            .map(|_| T::lit(StandardNormal.sample(&mut rng)))
            .collect();
        let w = tape.constant(Tensor::new(shape, w)?);
        let prod = tape.mul(out, w)?;
        tape.sum_all(prod)
    }
}

impl<T: Scalar> Differentiable<T> for TapeFn<T> {
    fn name(&self) -> String {
        self.name.clone()
    }

    fn input_shapes(&self) -> Vec<Vec<usize>> {
        self.shapes.clone()
    }

    fn value(&self, inputs: &[Tensor<T>]) -> Result<T> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
        let out = self.objective(&mut tape, &vars)?;
        tape.value(out).item()
    }

    fn value_and_grad(&self, inputs: &[Tensor<T>]) -> Result<(T, Vec<Tensor<T>>)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
        let out = self.objective(&mut tape, &vars)?;
        let mut grads = tape.backward(out)?;
        let value = tape.value(out).item()?;
        Ok((value, vars.iter().map(|&v| grads.take(v)).collect()))
    }

    fn sample_inputs(&self, rng: &mut ChaCha8Rng) -> Vec<Tensor<T>> {
        match &self.sampler {
            Some(s) => s(rng),
            None => self
                .input_shapes()
                .into_iter()
                .map(|shape| {
                    let n = shape.iter().product();
                    let data = (0..n).map(|_| T::lit(StandardNormal.sample(rng))).collect();
                    Tensor::new(shape, data).expect("sampled shape valid")
                })
                .collect(),
        }
    }
}

/// Wraps a [`Differentiable`] and multiplies its analytic gradient by a
/// constant factor. With a factor other than 1 the check must fail.
pub struct ScaledGradient<D> {
    pub inner: D,
    pub factor: f64,
}

impl<T: Scalar, D: Differentiable<T>> Differentiable<T> for ScaledGradient<D> {
    fn name(&self) -> String {
        format!("{}*{}", self.inner.name(), self.factor)
    }

    fn input_shapes(&self) -> Vec<Vec<usize>> {
        self.inner.input_shapes()
    }

    fn value(&self, inputs: &[Tensor<T>]) -> Result<T> {
        self.inner.value(inputs)
    }

    fn value_and_grad(&self, inputs: &[Tensor<T>]) -> Result<(T, Vec<Tensor<T>>)> {
        let (v, grads) = self.inner.value_and_grad(inputs)?;
        let f = T::lit(self.factor);
        Ok((v, grads.into_iter().map(|g| g.map(|x| x * f)).collect()))
    }

    fn sample_inputs(&self, rng: &mut ChaCha8Rng) -> Vec<Tensor<T>> {
        self.inner.sample_inputs(rng)
    }
}

/// Fraction of the operation's largest input-gradient magnitude below which
/// an input's own gradient scale is not used as the denominator.
pub const SCALE_FLOOR: f64 = 1e-2;

#[derive(Clone, Copy, Debug)]
pub struct GradCheckConfig {
    /// Maximum tolerated relative error.
    pub tolerance: f64,
    /// Central-difference step.
    pub step: f64,
    pub seed: u64,
    /// Coordinates perturbed per input; larger inputs are subsampled.
    pub max_coords: usize,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            tolerance: 1e-4,
            step: 1e-5,
            seed: 0,
            max_coords: 64,
        }
    }
}

#[derive(Clone, Debug)]
pub struct InputReport {
    pub shape: Vec<usize>,
    pub coords_checked: usize,
    /// `max|analytic − numeric| / max(max|analytic|, max|numeric|)` over the
    /// checked coordinates. The denominator is floored at [`SCALE_FLOOR`]
    /// times the largest gradient of any input, so an input whose true
    /// gradient is zero (a bias followed by batch norm) is judged against
    /// the operation's gradient scale rather than its own rounding noise.
    pub max_rel_error: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub name: String,
    pub inputs: Vec<InputReport>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.inputs
            .iter()
            .map(|r| r.max_rel_error)
            .fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.inputs
            .iter()
            .all(|r| r.max_rel_error.is_finite() && r.max_rel_error <= self.tolerance)
    }
}

/// Compares analytic gradients against central finite differences at a
/// seeded random point.
pub fn finite_diff_check<T: Scalar, D: Differentiable<T> + ?Sized>(
    op: &D,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let inputs = op.sample_inputs(&mut rng);
    let (_, analytic) = op.value_and_grad(&inputs)?;
    let h = T::lit(cfg.step);
    let two_h = T::lit(2.0 * cfg.step);

    let mut raw = Vec::with_capacity(inputs.len());
    for (k, input) in inputs.iter().enumerate() {
        let coords: Vec<usize> = if input.len() <= cfg.max_coords {
            (0..input.len()).collect()
        } else {
            let mut c = index::sample(&mut rng, input.len(), cfg.max_coords).into_vec();
            c.sort_unstable();
            c
        };
        let mut perturbed = inputs.clone();
        let (mut max_diff, mut scale) = (0.0f64, 0.0f64);
        for &i in &coords {
            let orig = input.data()[i];
            perturbed[k].data_mut()[i] = orig + h;
            let plus = op.value(&perturbed)?;
            perturbed[k].data_mut()[i] = orig - h;
            let minus = op.value(&perturbed)?;
            perturbed[k].data_mut()[i] = orig;
            let numeric = ((plus - minus) / two_h).to_f64_lossy();
            let exact = analytic[k].data()[i].to_f64_lossy();
            max_diff = max_diff.max((exact - numeric).abs());
            scale = scale.max(exact.abs()).max(numeric.abs());
        }
        raw.push((input.shape().to_vec(), coords.len(), max_diff, scale));
    }
    let op_scale = raw.iter().map(|r| r.3).fold(0.0, f64::max);
    let floor = SCALE_FLOOR * op_scale;
    let reports = raw
        .into_iter()
        .map(|(shape, coords_checked, max_diff, scale)| {
            let denom = scale.max(floor);
            InputReport {
                shape,
                coords_checked,
                max_rel_error: if denom > 0.0 {
                    max_diff / denom
                } else {
                    max_diff
                },
            }
        })
        .collect();
    Ok(GradCheckReport {
        name: op.name(),
        inputs: reports,
        tolerance: cfg.tolerance,
    })
}
