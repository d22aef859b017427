use legan::autodiff::reference::{conv2d_naive, conv_transpose2d_naive};
use legan::autodiff::{finite_diff_check, ConvConfig, GradCheckConfig, ScaledGradient, TapeFn};
use legan::tensor::Tensor;
use legan::Tape;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}

fn conv_fast(x: &Tensor<f64>, k: &Tensor<f64>, b: &Tensor<f64>, cfg: ConvConfig) -> Tensor<f64> {
    let mut t = Tape::new();
    let (x, k, b) = (
        t.constant(x.clone()),
        t.constant(k.clone()),
        t.constant(b.clone()),
    );
    let y = t.conv2d(x, k, b, cfg).unwrap();
    t.value(y).clone()
}

fn tconv_fast(x: &Tensor<f64>, k: &Tensor<f64>, b: &Tensor<f64>, cfg: ConvConfig) -> Tensor<f64> {
    let mut t = Tape::new();
    let (x, k, b) = (
        t.constant(x.clone()),
        t.constant(k.clone()),
        t.constant(b.clone()),
    );
    let y = t.conv_transpose2d(x, k, b, cfg).unwrap();
    t.value(y).clone()
}

fn max_abs_diff(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// A random geometry whose conv output is non-empty.
fn random_geometry(rng: &mut ChaCha8Rng) -> (usize, usize, usize, usize, ConvConfig) {
    loop {
        let (n, c, f) = (
            rng.random_range(1..=3),
            rng.random_range(1..=3),
            rng.random_range(1..=3),
        );
        let h = rng.random_range(2..=7);
        let cfg = ConvConfig::new(
            rng.random_range(1..=4),
            rng.random_range(1..=2),
            rng.random_range(0..=1),
        );
        if cfg.conv_output_size(h, h).is_ok() {
            return (n, c, f, h, cfg);
        }
    }
}

#[test]
fn conv2d_matches_naive_loops_on_50_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for case in 0..50 {
        let (n, c, f, h, cfg) = random_geometry(&mut rng);
        let x = random(&mut rng, &[n, c, h, h]);
        let k = random(&mut rng, &[f, c, cfg.kernel_h, cfg.kernel_w]);
        let b = random(&mut rng, &[f]);
        let err = max_abs_diff(
            &conv_fast(&x, &k, &b, cfg),
            &conv2d_naive(&x, &k, &b, cfg).unwrap(),
        );
        assert!(err <= 1e-10, "case {case}: {err}");
    }
}

#[test]
fn conv_transpose2d_matches_naive_loops_on_50_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut done = 0;
    while done < 50 {
        let (n, c, f, h, cfg) = random_geometry(&mut rng);
        if cfg.transposed_output_size(h, h).is_err() {
            continue;
        }
        let x = random(&mut rng, &[n, c, h, h]);
        let k = random(&mut rng, &[c, f, cfg.kernel_h, cfg.kernel_w]);
        let b = random(&mut rng, &[f]);
        let err = max_abs_diff(
            &tconv_fast(&x, &k, &b, cfg),
            &conv_transpose2d_naive(&x, &k, &b, cfg).unwrap(),
        );
        assert!(err <= 1e-10, "case {done}: {err}");
        done += 1;
    }
}

#[test]
fn conv_matches_naive_on_1x2x5x5() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for cfg in [
        ConvConfig::new(3, 1, 1),
        ConvConfig::new(4, 2, 1),
        ConvConfig::new(2, 1, 0),
    ] {
        let x = random(&mut rng, &[1, 2, 5, 5]);
        let k = random(&mut rng, &[3, 2, cfg.kernel_h, cfg.kernel_w]);
        let b = random(&mut rng, &[3]);
        assert!(
            max_abs_diff(
                &conv_fast(&x, &k, &b, cfg),
                &conv2d_naive(&x, &k, &b, cfg).unwrap()
            ) <= 1e-10
        );
        let kt = random(&mut rng, &[2, 3, cfg.kernel_h, cfg.kernel_w]);
        assert!(
            max_abs_diff(
                &tconv_fast(&x, &kt, &b, cfg),
                &conv_transpose2d_naive(&x, &kt, &b, cfg).unwrap()
            ) <= 1e-10
        );
    }
}

#[test]
fn transposed_conv_is_the_adjoint_of_conv() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let mut done = 0;
    while done < 50 {
        let (n, c, f, h, cfg) = random_geometry(&mut rng);
        let (oh, ow) = cfg.conv_output_size(h, h).unwrap();
        // Only geometries the transposed conv maps back onto the same input size.
        if cfg.transposed_output_size(oh, ow).ok() != Some((h, h)) {
            continue;
        }
        let x = random(&mut rng, &[n, c, h, h]);
        let y = random(&mut rng, &[n, f, oh, ow]);
        let k = random(&mut rng, &[f, c, cfg.kernel_h, cfg.kernel_w]);
        let lhs = conv_fast(&x, &k, &Tensor::zeros([f]), cfg).dot(&y).unwrap();
        let rhs = x
            .dot(&tconv_fast(&y, &k, &Tensor::zeros([c]), cfg))
            .unwrap();
        assert!((lhs - rhs).abs() <= 1e-9, "case {done}: {lhs} vs {rhs}");
        done += 1;
    }
}

fn layer_ops() -> Vec<TapeFn<f64>> {
    let conv = ConvConfig::new(3, 2, 1);
    let tconv = ConvConfig::new(4, 2, 1);
    vec![
        TapeFn::new(
            "conv2d",
            vec![vec![2, 2, 5, 5], vec![3, 2, 3, 3], vec![3]],
            move |t, x| t.conv2d(x[0], x[1], x[2], conv),
        ),
        TapeFn::new(
            "conv_transpose2d",
            vec![vec![2, 2, 3, 3], vec![2, 3, 4, 4], vec![3]],
            move |t, x| t.conv_transpose2d(x[0], x[1], x[2], tconv),
        ),
        TapeFn::new(
            "batch_norm",
            vec![vec![3, 2, 2, 2], vec![2], vec![2]],
            |t, x| Ok(t.batch_norm(x[0], x[1], x[2], 1e-5)?.0),
        ),
        TapeFn::new("leaky_relu", vec![vec![10]], |t, x| t.leaky_relu(x[0], 0.2)),
        TapeFn::new("sigmoid", vec![vec![10]], |t, x| Ok(t.sigmoid(x[0]))),
        TapeFn::new("reduce_mean", vec![vec![2, 3, 4]], |t, x| {
            t.reduce_mean(x[0], &[0, 2])
        }),
    ]
}

#[test]
fn layer_gradients_match_finite_differences_on_five_seeds() {
    for op in layer_ops() {
        for seed in 0..5 {
            let cfg = GradCheckConfig {
                seed,
                ..GradCheckConfig::default()
            };
            let report = finite_diff_check(&op, &cfg).unwrap();
            assert!(
                report.passed(),
                "{} seed {seed}: {}",
                report.name,
                report.max_rel_error()
            );
        }
    }
}

#[test]
fn sigmoid_passes_at_tighter_tolerance() {
    let op = TapeFn::<f64>::new("sigmoid", vec![vec![16]], |t, x| Ok(t.sigmoid(x[0])));
    let cfg = GradCheckConfig {
        tolerance: 1e-6,
        ..GradCheckConfig::default()
    };
    assert!(finite_diff_check(&op, &cfg).unwrap().passed());
}

#[test]
fn doubled_gradient_rule_is_caught() {
    for op in layer_ops() {
        let bad = ScaledGradient {
            inner: op,
            factor: 2.0,
        };
        assert!(!finite_diff_check(&bad, &GradCheckConfig::default())
            .unwrap()
            .passed());
    }
}
