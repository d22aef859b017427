//! The gradient-check suite behind `legan gradcheck`.

use legan::autodiff::{
    finite_diff_check, ConvConfig, Differentiable, GradCheckConfig, GradCheckReport, TapeFn,
};
use legan::networks::{Architecture, Network, NormMode, NOISE_DIM};
use legan::objectives;
use legan::tensor::Tensor;
use legan::Result;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

type Op = TapeFn<f64>;

fn normal(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64, shift: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            shift + scale * z
        })
        .collect();
    Tensor::new(shape.to_vec(), data).expect("valid sample shape")
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.random::<f64>()).collect(),
    )
    .expect("valid sample shape")
}

fn elementwise() -> Vec<Op> {
    let s = || vec![vec![3, 4]];
    let s2 = || vec![vec![3, 4], vec![3, 4]];
    vec![
        TapeFn::new("leaky_relu", s(), |t, x| t.leaky_relu(x[0], 0.2)),
        TapeFn::new("sigmoid", s(), |t, x| Ok(t.sigmoid(x[0]))),
        TapeFn::new("log_sigmoid", s(), |t, x| Ok(t.log_sigmoid(x[0]))),
        TapeFn::new("add", s2(), |t, x| t.add(x[0], x[1])),
        TapeFn::new("sub", s2(), |t, x| t.sub(x[0], x[1])),
        TapeFn::new("mul", s2(), |t, x| t.mul(x[0], x[1])),
        TapeFn::new("scale", s(), |t, x| Ok(t.scale(x[0], -1.7))),
        TapeFn::new("neg", s(), |t, x| Ok(t.neg(x[0]))),
        TapeFn::new("add_scalar", s(), |t, x| Ok(t.add_scalar(x[0], 0.3))),
        TapeFn::new("square", s(), |t, x| Ok(t.square(x[0]))),
        TapeFn::new("reshape", s(), |t, x| t.reshape(x[0], vec![2, 6])),
        TapeFn::new("reduce_mean", vec![vec![2, 3, 4]], |t, x| {
            t.reduce_mean(x[0], &[1, 2])
        }),
        TapeFn::new("mean_all", s(), |t, x| t.mean_all(x[0])),
        TapeFn::new("sum_all", s(), |t, x| t.sum_all(x[0])),
    ]
}

fn layers() -> Vec<Op> {
    let conv = ConvConfig::new(3, 2, 1);
    let tconv = ConvConfig::new(4, 2, 1);
    let bn_sampler = |rng: &mut ChaCha8Rng| {
        vec![
            normal(rng, &[4, 3, 2, 2], 1.0, 0.0),
            normal(rng, &[3], 0.2, 1.0),
            normal(rng, &[3], 0.2, 0.0),
        ]
    };
    vec![
        TapeFn::new(
            "conv2d",
            vec![vec![2, 3, 5, 5], vec![4, 3, 3, 3], vec![4]],
            move |t, x| t.conv2d(x[0], x[1], x[2], conv),
        ),
        TapeFn::new(
            "conv_transpose2d",
            vec![vec![2, 3, 3, 3], vec![3, 2, 4, 4], vec![2]],
            move |t, x| t.conv_transpose2d(x[0], x[1], x[2], tconv),
        ),
        TapeFn::new(
            "batch_norm",
            vec![vec![4, 3, 2, 2], vec![3], vec![3]],
            |t, x| Ok(t.batch_norm(x[0], x[1], x[2], 1e-5)?.0),
        )
        .with_sampler(bn_sampler),
        TapeFn::new(
            "batch_norm_frozen",
            vec![vec![4, 3, 2, 2], vec![3], vec![3]],
            |t, x| t.batch_norm_frozen(x[0], x[1], x[2], &[0.1, -0.2, 0.3], &[0.5, 1.5, 2.0], 1e-5),
        )
        .with_sampler(bn_sampler),
    ]
}

fn losses() -> Vec<Op> {
    let pair = || vec![vec![8], vec![8]];
    let one = || vec![vec![8]];
    vec![
        TapeFn::new("d_loss_vanilla", pair(), |t, x| {
            objectives::d_loss_vanilla(t, x[0], x[1])
        }),
        TapeFn::new("g_loss_vanilla", one(), |t, x| {
            objectives::g_loss_vanilla(t, x[0])
        }),
        TapeFn::new("d_loss_least_squares", pair(), |t, x| {
            objectives::d_loss_ls(t, x[0], x[1])
        }),
        TapeFn::new("g_loss_least_squares", one(), |t, x| {
            objectives::g_loss_ls(t, x[0])
        }),
        TapeFn::new("d_loss_wasserstein", pair(), |t, x| {
            Ok(objectives::d_loss_wasserstein(t, x[0], x[1])?.0)
        }),
        TapeFn::new("g_loss_wasserstein", one(), |t, x| {
            objectives::g_loss_wasserstein(t, x[0])
        }),
        TapeFn::new("l2_penalty", vec![vec![3, 2], vec![4]], |t, x| {
            objectives::l2_penalty(t, x, 0.1)
        }),
    ]
}

/// A whole network as a function of its input and every parameter, with
/// training-mode batch norm. Kernels are drawn wider than the training
/// initialization so activations are far from zero.
fn network(name: &str, net: Network<f64>, batch: usize, embed: bool) -> Op {
    let [c, h, w] = net.spec().input;
    let input_shape = vec![batch, c, h, w];
    let mut shapes = vec![input_shape.clone()];
    shapes.extend(net.params().iter().map(|p| p.value.shape().to_vec()));
    let names: Vec<String> = net.params().iter().map(|p| p.name.clone()).collect();
    let all_shapes = shapes.clone();
    let sampler = move |rng: &mut ChaCha8Rng| {
        let mut v = vec![if embed {
            uniform(rng, &input_shape)
        } else {
            normal(rng, &input_shape, 1.0, 0.0)
        }];
        for (name, shape) in names.iter().zip(&shapes[1..]) {
            v.push(if name.ends_with("gamma") {
                normal(rng, shape, 0.1, 1.0)
            } else if name.ends_with("kernel") {
                normal(rng, shape, 0.3, 0.0)
            } else {
                normal(rng, shape, 0.1, 0.0)
            });
        }
        v
    };
    TapeFn::new(name, all_shapes, move |t, x| {
        let f = net.forward_with(t, x[0], x[1..].to_vec(), NormMode::Train)?;
        if embed {
            t.reduce_mean(f.output, &[1, 2, 3])
        } else {
            Ok(f.output)
        }
    })
    .with_sampler(sampler)
}

fn networks() -> Result<Vec<Op>> {
    let full_depth = Architecture::Compact { width: 2 };
    let small = Architecture::Tiny { width: 4 };
    Ok(vec![
        network(
            "generator (all layers, width 2)",
            Network::build(full_depth.generator_spec(NOISE_DIM), "g", 1)?,
            2,
            false,
        ),
        network(
            "discriminator (all layers, width 2)",
            Network::build(full_depth.discriminator_spec(), "d", 2)?,
            2,
            true,
        ),
        network(
            "generator (8x8)",
            Network::build(small.generator_spec(NOISE_DIM), "g", 3)?,
            3,
            false,
        ),
        network(
            "discriminator (8x8)",
            Network::build(small.discriminator_spec(), "d", 4)?,
            3,
            true,
        ),
    ])
}

/// Every differentiable operation, each loss, and both networks.
pub fn suite() -> Result<Vec<Op>> {
    let mut ops = elementwise();
    ops.extend(layers());
    ops.extend(losses());
    ops.extend(networks()?);
    Ok(ops)
}

pub fn run_suite(cfg: &GradCheckConfig) -> Result<Vec<GradCheckReport>> {
    suite()?
        .iter()
        .map(|op| finite_diff_check(op as &dyn Differentiable<f64>, cfg))
        .collect()
}

/// Fixed-width table, one line per check.
pub fn format_table(reports: &[GradCheckReport]) -> String {
    let width = reports
        .iter()
        .map(|r| r.name.len())
        .max()
        .unwrap_or(2)
        .max(2);
    let mut out = format!(
        "{:<width$}  {:>6}  {:>6}  {:>12}  {}\n",
        "op", "inputs", "coords", "max_rel_err", "result"
    );
    for r in reports {
        let coords: usize = r.inputs.iter().map(|i| i.coords_checked).sum();
        out.push_str(&format!(
            "{:<width$}  {:>6}  {:>6}  {:>12.3e}  {}\n",
            r.name,
            r.inputs.len(),
            coords,
            r.max_rel_error(),
            if r.passed() { "pass" } else { "FAIL" }
        ));
    }
    out
}
