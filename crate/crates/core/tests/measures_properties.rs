use legan::measures::{
    batch_mean_embedding, embedding_histogram, fit_gaussian, legan_diff, legan_ratio, legan_step,
    EmbeddingBatch,
};
use legan::GaussianModel;
use proptest::prelude::*;

fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

fn real(v: &[f64]) -> EmbeddingBatch<f64> {
    EmbeddingBatch::real(v.to_vec()).unwrap()
}

fn fake(v: &[f64]) -> EmbeddingBatch<f64> {
    EmbeddingBatch::fake(v.to_vec()).unwrap()
}

#[test]
fn identical_batches_score_zero_and_one() {
    let r = legan_step(&real(&[0.2, -0.7, 1.3]), &fake(&[0.2, -0.7, 1.3]), 0, 0).unwrap();
    assert_eq!(r.l_diff, 0.0);
    assert_eq!(r.l_ratio, 1.0);
}

#[test]
fn separated_fixture_matches_closed_form() {
    let r = legan_step(&real(&[-1.0, 1.0]), &fake(&[3.0, 3.0]), 0, 0).unwrap();
    assert_eq!((r.model.mu_r, r.model.var_r), (0.0, 1.0));
    let (lr, lf) = (std_normal_pdf(0.0), std_normal_pdf(3.0));
    assert!((r.l_real - lr).abs() < 1e-12);
    assert!((r.l_fake - lf).abs() < 1e-12);
    assert!((r.l_diff - 0.394510).abs() < 1e-6, "{}", r.l_diff);
    assert!((r.l_ratio - 0.011109).abs() < 1e-6, "{}", r.l_ratio);
}

#[test]
fn density_values() {
    let m = GaussianModel::new(0.0, 1.0);
    assert!((m.likelihood(0.0) - 0.398942).abs() < 1e-6);
    assert!((m.likelihood(1.0) - 0.241971).abs() < 1e-6);
}

/// Composite Simpson rule over `μ ± 8σ`.
fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let inner: f64 = (1..n)
        .map(|i| f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 })
        .sum();
    (f(a) + inner + f(b)) * h / 3.0
}

#[test]
fn density_integrates_to_one() {
    for (mu, var) in [(0.0, 1.0), (2.5, 0.04), (-1.0, 9.0), (0.3, 1e-6)] {
        let m = GaussianModel::new(mu, var);
        let s = var.sqrt();
        let total = simpson(|a| m.likelihood(a), mu - 8.0 * s, mu + 8.0 * s, 2000);
        assert!((total - 1.0).abs() < 1e-6, "({mu}, {var}): {total}");
    }
}

#[test]
fn histogram_edge_convention() {
    let h = embedding_histogram(&real(&[0.0, 0.5]), &fake(&[1.0]), 2, 0).unwrap();
    assert_eq!(h.edges, vec![0.0, 0.5, 1.0]);
    assert_eq!((h.real.clone(), h.fake.clone()), (vec![1, 1], vec![0, 1]));
}

fn embeddings(len: std::ops::Range<usize>) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-5.0f64..5.0, len)
}

proptest! {
    #[test]
    fn diff_is_antisymmetric(x in 1e-6f64..1.0, y in 1e-6f64..1.0) {
        prop_assert_eq!(legan_diff(x, y), -legan_diff(y, x));
        prop_assert_eq!(legan_diff(x, x), 0.0);
    }

    #[test]
    fn ratio_is_symmetric_and_bounded(x in 1e-9f64..10.0, y in 1e-9f64..10.0) {
        let r = legan_ratio(x, y).unwrap();
        prop_assert!(r > 0.0 && r <= 1.0);
        prop_assert_eq!(r, legan_ratio(y, x).unwrap());
    }

    #[test]
    fn step_ratio_in_unit_interval(r in embeddings(2..40), f in embeddings(1..40)) {
        prop_assume!(r.iter().any(|&v| v != r[0]));
        let rec = legan_step(&real(&r), &fake(&f), 0, 0).unwrap();
        prop_assert!(rec.l_ratio >= 0.0 && rec.l_ratio <= 1.0);
        if rec.l_fake > 0.0 {
            prop_assert!(rec.l_ratio > 0.0);
        }
        prop_assert_eq!(rec.l_diff, rec.l_real - rec.l_fake);
    }

    #[test]
    fn scaling_embeddings_preserves_ratio(
        r in embeddings(2..30),
        f in embeddings(1..30),
        k in 0.1f64..10.0,
    ) {
        let spread = r.iter().cloned().fold(f64::MIN, f64::max) - r.iter().cloned().fold(f64::MAX, f64::min);
        prop_assume!(spread > 0.5);
        let base = legan_step(&real(&r), &fake(&f), 0, 0).unwrap();
        let rs: Vec<f64> = r.iter().map(|v| v * k).collect();
        let fs: Vec<f64> = f.iter().map(|v| v * k).collect();
        let scaled = legan_step(&real(&rs), &fake(&fs), 0, 0).unwrap();
        prop_assert!((scaled.model.var_r - k * k * base.model.var_r).abs() <= 1e-9 * k * k * base.model.var_r.max(1.0));
        prop_assert!((scaled.model.mu_r - k * base.model.mu_r).abs() <= 1e-9 * k.max(1.0) * 5.0);
        // Both densities pick up the same 1/k factor.
        let tol = 1e-9 + 1e-6 * base.l_ratio;
        prop_assert!((scaled.l_ratio - base.l_ratio).abs() <= tol, "{} vs {}", scaled.l_ratio, base.l_ratio);
    }

    #[test]
    fn step_ignores_element_order(r in embeddings(2..30), f in embeddings(1..30), seed in any::<u64>()) {
        prop_assume!(r.iter().any(|&v| v != r[0]));
        let rotate = |v: &[f64]| {
            let mut w = v.to_vec();
            let len = w.len();
            w.rotate_left((seed as usize) % len);
            w.reverse();
            w
        };
        let a = legan_step(&real(&r), &fake(&f), 0, 0).unwrap();
        let b = legan_step(&real(&rotate(&r)), &fake(&rotate(&f)), 0, 0).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn mean_is_permutation_invariant(v in embeddings(1..50)) {
        let mut w = v.clone();
        w.reverse();
        prop_assert_eq!(batch_mean_embedding(&real(&v)), batch_mean_embedding(&real(&w)));
    }

    #[test]
    fn fitted_mean_has_highest_density(r in embeddings(2..30), a in -10.0f64..10.0) {
        let m = fit_gaussian(&real(&r)).unwrap();
        prop_assert!(m.likelihood(m.mu_r) >= m.likelihood(a));
        prop_assert!(m.var_r >= 1e-8);
    }

    #[test]
    fn histogram_counts_partition_batches(r in embeddings(1..60), f in embeddings(1..60), bins in 2usize..30) {
        let h = embedding_histogram(&real(&r), &fake(&f), bins, 0).unwrap();
        prop_assert_eq!(h.real.iter().sum::<usize>(), r.len());
        prop_assert_eq!(h.fake.iter().sum::<usize>(), f.len());
        prop_assert!(h.edges.windows(2).all(|w| w[0] < w[1]));
    }
}
