use legan::data::{sample_noise, synth_blobs, NoisePrior};
use legan::networks::{Architecture, NormMode, NOISE_DIM};
use legan::objectives::{clip_weights, lipschitz_probe, ObjectiveKind};
use legan::{Discriminator, Generator};

#[test]
fn full_generator_maps_noise_to_unit_interval_images() {
    let g = Generator::build(Architecture::Full, NOISE_DIM, 7).unwrap();
    let z = sample_noise::<f64>(2, NOISE_DIM, 1, 0, NoisePrior::StandardNormal).unwrap();
    let img = g.generate(&z, NormMode::Train).unwrap();
    assert_eq!(img.shape(), &[2, 3, 32, 32]);
    assert!(img.data().iter().all(|&v| v > 0.0 && v < 1.0));
}

#[test]
fn same_seed_builds_identical_networks() {
    let a = Generator::build(Architecture::Compact { width: 4 }, NOISE_DIM, 3).unwrap();
    let b = Generator::build(Architecture::Compact { width: 4 }, NOISE_DIM, 3).unwrap();
    assert_eq!(a.net.named_tensors(), b.net.named_tensors());
    let c = Discriminator::build(Architecture::Full, ObjectiveKind::Vanilla, 3).unwrap();
    let d = Discriminator::build(Architecture::Full, ObjectiveKind::Vanilla, 3).unwrap();
    assert_eq!(c.net.named_tensors(), d.net.named_tensors());
}

#[test]
fn full_discriminator_embeds_one_scalar_per_image() {
    let d = Discriminator::build(Architecture::Full, ObjectiveKind::Vanilla, 1).unwrap();
    assert_eq!(d.net.spec().output().unwrap(), [1, 2, 2]);
    let x = synth_blobs::<f64>(2, 32, 0).unwrap().to_tensor();
    let e = d.embed(&x, NormMode::Train).unwrap();
    assert_eq!(e.shape(), &[2]);
    let s = d.discriminate(&x, NormMode::Train).unwrap();
    for (a, p) in e.data().iter().zip(s.data()) {
        assert!((p - 1.0 / (1.0 + (-a).exp())).abs() < 1e-15);
    }
}

#[test]
fn zeroed_discriminator_embeds_zero_and_heads_differ() {
    let x = synth_blobs::<f64>(3, 8, 0).unwrap().to_tensor();
    for (kind, expected) in [
        (ObjectiveKind::Vanilla, 0.5),
        (ObjectiveKind::LeastSquares, 0.0),
        (ObjectiveKind::Wasserstein, 0.0),
    ] {
        let mut d = Discriminator::build(Architecture::Tiny { width: 4 }, kind, 0).unwrap();
        for p in d.net.params_mut() {
            p.value.data_mut().fill(0.0);
        }
        assert!(d
            .embed(&x, NormMode::Train)
            .unwrap()
            .data()
            .iter()
            .all(|&v| v == 0.0));
        assert!(d
            .discriminate(&x, NormMode::Train)
            .unwrap()
            .data()
            .iter()
            .all(|&v| v == expected));
    }
}

#[test]
fn clipped_discriminator_has_a_finite_lipschitz_ratio() {
    let mut d = Discriminator::build(
        Architecture::Tiny { width: 8 },
        ObjectiveKind::Wasserstein,
        2,
    )
    .unwrap();
    clip_weights(d.net.params_mut(), 0.02).unwrap();
    let imgs = synth_blobs::<f64>(40, 8, 9).unwrap();
    let mut worst = 0.0f64;
    for i in 0..20 {
        let x = legan::Tensor::from_f64([3, 8, 8], imgs.image(2 * i)).unwrap();
        let y = legan::Tensor::from_f64([3, 8, 8], imgs.image(2 * i + 1)).unwrap();
        let p = lipschitz_probe(&d, &x, &y).unwrap();
        assert!(p.d_x > 0.0 && p.ratio >= 0.0 && p.ratio.is_finite());
        worst = worst.max(p.ratio);
    }
    assert!(worst.is_finite());
}
