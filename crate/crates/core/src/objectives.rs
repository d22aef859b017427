//! GAN loss pairs, the L2 weight penalty, weight clipping and an empirical
//! Lipschitz probe for the discriminator embedding.
//!
//! Every loss takes discriminator embeddings (pre-sigmoid logits) of shape
//! `[N]` recorded on a tape and returns a scalar to be minimized.

use std::fmt;
use std::str::FromStr;

use crate::autodiff::{Tape, Var};
use crate::error::{LeganError, Result};
use crate::networks::{Discriminator, NormMode, Param};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ObjectiveKind {
    Vanilla,
    LeastSquares,
    Wasserstein,
}

impl ObjectiveKind {
    pub const ALL: [ObjectiveKind; 3] = [
        ObjectiveKind::Vanilla,
        ObjectiveKind::LeastSquares,
        ObjectiveKind::Wasserstein,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ObjectiveKind::Vanilla => "vanilla",
            ObjectiveKind::LeastSquares => "least-squares",
            ObjectiveKind::Wasserstein => "wasserstein",
        }
    }

    /// Discriminator loss; for Wasserstein also the critic distance.
    pub fn d_loss<T: Scalar>(self, tape: &mut Tape<T>, real: Var, fake: Var) -> Result<CriticLoss> {
        match self {
            ObjectiveKind::Vanilla => Ok(CriticLoss {
                loss: d_loss_vanilla(tape, real, fake)?,
                critic_distance: None,
            }),
            ObjectiveKind::LeastSquares => Ok(CriticLoss {
                loss: d_loss_ls(tape, real, fake)?,
                critic_distance: None,
            }),
            ObjectiveKind::Wasserstein => {
                let (loss, distance) = d_loss_wasserstein(tape, real, fake)?;
                Ok(CriticLoss {
                    loss,
                    critic_distance: Some(distance),
                })
            }
        }
    }

    pub fn g_loss<T: Scalar>(self, tape: &mut Tape<T>, fake: Var) -> Result<Var> {
        match self {
            ObjectiveKind::Vanilla => g_loss_vanilla(tape, fake),
            ObjectiveKind::LeastSquares => g_loss_ls(tape, fake),
            ObjectiveKind::Wasserstein => g_loss_wasserstein(tape, fake),
        }
    }
}

impl fmt::Display for ObjectiveKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ObjectiveKind {
    type Err = LeganError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vanilla" => Ok(ObjectiveKind::Vanilla),
            "least-squares" | "ls" | "lsgan" => Ok(ObjectiveKind::LeastSquares),
            "wasserstein" | "wgan" => Ok(ObjectiveKind::Wasserstein),
            other => Err(LeganError::invalid(
                "objective",
                format!("unknown objective {other:?} (vanilla, least-squares, wasserstein)"),
            )),
        }
    }
}

/// Discriminator loss node plus the critic distance for Wasserstein runs.
#[derive(Clone, Copy, Debug)]
pub struct CriticLoss {
    pub loss: Var,
    pub critic_distance: Option<Var>,
}

fn batch_mean<T: Scalar>(tape: &mut Tape<T>, op: &'static str, v: Var) -> Result<Var> {
    let t = tape.value(v);
    if t.is_empty() {
        return Err(LeganError::EmptyBatch { op });
    }
    if t.ndim() != 1 {
        return Err(LeganError::shape(
            op,
            format!("expected a [N] batch of scores, got {:?}", t.shape()),
        ));
    }
    tape.mean_all(v)
}

/// `−(mean log σ(real) + mean log(1 − σ(fake)))`.
pub fn d_loss_vanilla<T: Scalar>(tape: &mut Tape<T>, real: Var, fake: Var) -> Result<Var> {
    const OP: &str = "d_loss_vanilla";
    let log_real = tape.log_sigmoid(real);
    let real_term = batch_mean(tape, OP, log_real)?;
    // log(1 − σ(x)) = log σ(−x)
    let neg_fake = tape.neg(fake);
    let log_fake = tape.log_sigmoid(neg_fake);
    let fake_term = batch_mean(tape, OP, log_fake)?;
    let total = tape.add(real_term, fake_term)?;
    Ok(tape.neg(total))
}

/// `mean(−log σ(fake))`.
pub fn g_loss_vanilla<T: Scalar>(tape: &mut Tape<T>, fake: Var) -> Result<Var> {
    let log_fake = tape.log_sigmoid(fake);
    let m = batch_mean(tape, "g_loss_vanilla", log_fake)?;
    Ok(tape.neg(m))
}

/// `½·mean((real − 1)²) + ½·mean(fake²)`.
pub fn d_loss_ls<T: Scalar>(tape: &mut Tape<T>, real: Var, fake: Var) -> Result<Var> {
    const OP: &str = "d_loss_ls";
    let half = T::lit(0.5);
    let shifted = tape.add_scalar(real, -T::one());
    let sq_real = tape.square(shifted);
    let real_term = batch_mean(tape, OP, sq_real)?;
    let sq_fake = tape.square(fake);
    let fake_term = batch_mean(tape, OP, sq_fake)?;
    let total = tape.add(real_term, fake_term)?;
    Ok(tape.scale(total, half))
}

/// `½·mean((fake − 1)²)`.
pub fn g_loss_ls<T: Scalar>(tape: &mut Tape<T>, fake: Var) -> Result<Var> {
    let shifted = tape.add_scalar(fake, -T::one());
    let sq = tape.square(shifted);
    let m = batch_mean(tape, "g_loss_ls", sq)?;
    Ok(tape.scale(m, T::lit(0.5)))
}

/// Returns `(loss, critic_distance)` where
/// `critic_distance = mean(real) − mean(fake)` and `loss = −critic_distance`.
pub fn d_loss_wasserstein<T: Scalar>(
    tape: &mut Tape<T>,
    real: Var,
    fake: Var,
) -> Result<(Var, Var)> {
    const OP: &str = "d_loss_wasserstein";
    let mr = batch_mean(tape, OP, real)?;
    let mf = batch_mean(tape, OP, fake)?;
    let distance = tape.sub(mr, mf)?;
    Ok((tape.neg(distance), distance))
}

/// `−mean(fake)`.
pub fn g_loss_wasserstein<T: Scalar>(tape: &mut Tape<T>, fake: Var) -> Result<Var> {
    let m = batch_mean(tape, "g_loss_wasserstein", fake)?;
    Ok(tape.neg(m))
}

/// `λ·Σ w²` over every element of `params`.
pub fn l2_penalty<T: Scalar>(tape: &mut Tape<T>, params: &[Var], lambda: T) -> Result<Var> {
    if !(lambda >= T::zero()) {
        return Err(LeganError::invalid(
            "l2_penalty",
            format!("lambda {lambda} must be non-negative"),
        ));
    }
    let mut total: Option<Var> = None;
    for &p in params {
        let sq = tape.square(p);
        let s = tape.sum_all(sq)?;
        total = Some(match total {
            Some(t) => tape.add(t, s)?,
            None => s,
        });
    }
    let total = match total {
        Some(t) => t,
        None => tape.constant(Tensor::scalar(T::zero())),
    };
    Ok(tape.scale(total, lambda))
}

/// Clamps every parameter value into `[−c, c]`.
pub fn clip_weights<T: Scalar>(params: &mut [Param<T>], c: T) -> Result<()> {
    if !(c > T::zero()) {
        return Err(LeganError::invalid(
            "clip_weights",
            format!("clip bound {c} must be positive"),
        ));
    }
    for p in params {
        for v in p.value.data_mut() {
            *v = v.max(-c).min(c);
        }
    }
    Ok(())
}

/// Distances between two images and between their embeddings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LipschitzProbe<T> {
    /// Euclidean distance between the raw pixel arrays.
    pub d_x: T,
    /// Absolute difference of the scalar embeddings.
    pub d_a: T,
    pub ratio: T,
}

/// Measures `|embed(x) − embed(y)| / ‖x − y‖₂` with inference-mode batch norm.
///
/// `x` and `y` are single images, `[3,H,W]` or `[1,3,H,W]`.
pub fn lipschitz_probe<T: Scalar>(
    net: &Discriminator<T>,
    x: &Tensor<T>,
    y: &Tensor<T>,
) -> Result<LipschitzProbe<T>> {
    const OP: &str = "lipschitz_probe";
    x.expect_same_shape(OP, y)?;
    let d_x = x
        .data()
        .iter()
        .zip(y.data())
        .map(|(&a, &b)| (a - b) * (a - b))
        .sum::<T>()
        .sqrt();
    if d_x == T::zero() {
        return Err(LeganError::invalid(
            OP,
            "images are identical; ratio undefined",
        ));
    }
    let mut shape = x.shape().to_vec();
    if shape.len() == 3 {
        shape.insert(0, 1);
    }
    let pair = Tensor::concat_batch(&[x.reshape(shape.clone())?, y.reshape(shape)?])?;
    let emb = net.embed(&pair, NormMode::Inference)?;
    let d_a = (emb.data()[0] - emb.data()[1]).abs();
    Ok(LipschitzProbe {
        d_x,
        d_a,
        ratio: d_a / d_x,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eval2(
        f: impl Fn(&mut Tape<f64>, Var, Var) -> Result<Var>,
        real: &[f64],
        fake: &[f64],
    ) -> f64 {
        let mut tape = Tape::new();
        let r = tape.param(Tensor::from_vec(real.to_vec()));
        let f_ = tape.param(Tensor::from_vec(fake.to_vec()));
        let l = f(&mut tape, r, f_).unwrap();
        tape.value(l).item().unwrap()
    }

    fn eval1(f: impl Fn(&mut Tape<f64>, Var) -> Result<Var>, fake: &[f64]) -> (f64, Vec<f64>) {
        let mut tape = Tape::new();
        let v = tape.param(Tensor::from_vec(fake.to_vec()));
        let l = f(&mut tape, v).unwrap();
        let g = tape.backward(l).unwrap().get(v);
        (tape.value(l).item().unwrap(), g.into_data())
    }

    #[test]
    fn vanilla_discriminator_loss() {
        let ln2 = std::f64::consts::LN_2;
        assert_eq!(eval2(d_loss_vanilla, &[0.0, 0.0], &[0.0]), 2.0 * ln2);
        let perfect = eval2(d_loss_vanilla, &[60.0], &[-60.0]);
        assert!((0.0..1e-20).contains(&perfect));
        assert!(eval2(d_loss_vanilla, &[-500.0], &[500.0]).is_finite());
    }

    #[test]
    fn vanilla_generator_loss() {
        let (v, g) = eval1(g_loss_vanilla, &[0.0]);
        assert_eq!(v, std::f64::consts::LN_2);
        assert!(g[0] < 0.0);
        assert!(eval1(g_loss_vanilla, &[60.0]).0 < 1e-20);
        let (v, g) = eval1(g_loss_vanilla, &[-500.0, 500.0]);
        assert!(v.is_finite() && g.iter().all(|x| x.is_finite() && *x <= 0.0));
    }

    #[test]
    fn least_squares_losses() {
        assert_eq!(eval2(d_loss_ls, &[1.0, 1.0], &[0.0]), 0.0);
        assert_eq!(eval2(d_loss_ls, &[0.5], &[0.5, 0.5]), 0.25);
        assert_eq!(eval1(g_loss_ls, &[1.0, 1.0]).0, 0.0);
        assert_eq!(eval1(g_loss_ls, &[0.0]).0, 0.5);
        assert_eq!(eval1(g_loss_ls, &[-1.0]).0, 2.0);
        let (_, g) = eval1(g_loss_ls, &[0.5, 1.5]);
        assert!(g[0] < 0.0 && g[1] > 0.0);
    }

    #[test]
    fn wasserstein_losses() {
        let mut tape = Tape::new();
        let r = tape.constant(Tensor::from_vec(vec![1.0, 1.0]));
        let f = tape.constant(Tensor::from_vec(vec![0.0, 0.0]));
        let (loss, d) = d_loss_wasserstein(&mut tape, r, f).unwrap();
        assert_eq!(tape.value(d).item().unwrap(), 1.0);
        assert_eq!(tape.value(loss).item().unwrap(), -1.0);

        assert_eq!(eval1(g_loss_wasserstein, &[0.0, 0.0]).0, 0.0);
        let (v, g) = eval1(g_loss_wasserstein, &[2.0, 2.0, 2.0, 2.0]);
        assert_eq!(v, -2.0);
        assert_eq!(g, vec![-0.25; 4]);
    }

    #[test]
    fn empty_batches_rejected() {
        let mut tape = Tape::<f64>::new();
        let e = tape.constant(Tensor::from_vec(vec![]));
        let x = tape.constant(Tensor::from_vec(vec![1.0]));
        assert!(matches!(
            d_loss_vanilla(&mut tape, e, x),
            Err(LeganError::EmptyBatch { .. })
        ));
        assert!(g_loss_ls(&mut tape, e).is_err());
        assert!(d_loss_wasserstein(&mut tape, x, e).is_err());
        assert!(g_loss_wasserstein(&mut tape, e).is_err());
    }

    #[test]
    fn l2_penalty_value_and_gradient() {
        let mut tape = Tape::new();
        let w = tape.param(Tensor::from_vec(vec![2.0]));
        let p = l2_penalty(&mut tape, &[w], 0.5).unwrap();
        assert_eq!(tape.value(p).item().unwrap(), 2.0);
        assert_eq!(tape.backward(p).unwrap().get(w).data(), &[2.0]);
        let z = l2_penalty(&mut tape, &[w], 0.0).unwrap();
        assert_eq!(tape.value(z).item().unwrap(), 0.0);
        assert!(l2_penalty(&mut tape, &[w], -1.0).is_err());
    }

    #[test]
    fn clipping_clamps_into_range() {
        let mut params = vec![Param {
            name: "w".into(),
            value: Tensor::from_vec(vec![0.05, -0.03, 0.01]),
        }];
        clip_weights(&mut params, 0.02).unwrap();
        assert_eq!(params[0].value.data(), &[0.02, -0.02, 0.01]);
        assert!(clip_weights(&mut params, 0.0).is_err());
    }

    #[test]
    fn objective_names_round_trip() {
        for k in ObjectiveKind::ALL {
            assert_eq!(k.as_str().parse::<ObjectiveKind>().unwrap(), k);
        }
        assert!("hinge".parse::<ObjectiveKind>().is_err());
    }
}
