//! Likelihood-based fitness measures over discriminator embeddings.
//!
//! A univariate Gaussian is fit to the embeddings of a batch of real images.
//! The batch-mean embeddings of the real and the generated batch are scored
//! under it, giving `l_real` and `l_fake`, and the two measures are
//!
//! - `l_diff  = l_real − l_fake`
//! - `l_ratio = min(l_real, l_fake) / max(l_real, l_fake)`
//!
//! As generated images approach the real distribution `l_diff` falls toward
//! 0 and `l_ratio` rises toward 1.
//!
//! Sums over a batch are taken in sorted order so every result here is
//! independent of element order, bit for bit.

use std::f64::consts::PI;
use std::fmt::Write as _;

use crate::error::{LeganError, Result};
use crate::scalar::Scalar;

pub const VARIANCE_FLOOR: f64 = 1e-8;
/// Default decay of the optional moving-average Gaussian.
pub const EMA_DECAY: f64 = 0.99;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Source {
    Real,
    Fake,
}

/// Scalar embeddings of one batch, one per image.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingBatch<T> {
    values: Vec<T>,
    source: Source,
}

impl<T: Scalar> EmbeddingBatch<T> {
    pub fn new(values: Vec<T>, source: Source) -> Result<Self> {
        if values.is_empty() {
            return Err(LeganError::EmptyBatch {
                op: "embedding_batch",
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(LeganError::invalid(
                "embedding_batch",
                format!("embedding {i} is not finite"),
            ));
        }
        Ok(EmbeddingBatch { values, source })
    }

    pub fn real(values: Vec<T>) -> Result<Self> {
        Self::new(values, Source::Real)
    }

    pub fn fake(values: Vec<T>) -> Result<Self> {
        Self::new(values, Source::Fake)
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn source(&self) -> Source {
        self.source
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

fn sorted_sum<T: Scalar>(values: impl Iterator<Item = T>) -> T {
    let mut v: Vec<T> = values.collect();
    v.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    v.into_iter().fold(T::zero(), |acc, x| acc + x)
}

/// Arithmetic mean of a batch (`ā_r` or `ā_f`).
pub fn batch_mean_embedding<T: Scalar>(batch: &EmbeddingBatch<T>) -> T {
    sorted_sum(batch.values.iter().copied()) / T::from_usize_lossy(batch.len())
}

/// Univariate Gaussian over real-image embeddings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GaussianModel<T> {
    pub mu_r: T,
    pub var_r: T,
    /// Set when the fitted variance fell below [`VARIANCE_FLOOR`].
    pub floored: bool,
}

impl<T: Scalar> GaussianModel<T> {
    pub fn new(mu_r: T, var_r: T) -> Self {
        let floor = T::lit(VARIANCE_FLOOR);
        GaussianModel {
            mu_r,
            var_r: var_r.max(floor),
            floored: var_r < floor,
        }
    }

    /// Density `𝒩(a; μ_r, σ²_r)`; strictly positive for finite `a` unless
    /// it underflows.
    pub fn likelihood(&self, a: T) -> T {
        let d = a - self.mu_r;
        (-(d * d) / (T::lit(2.0) * self.var_r)).exp() / (T::lit(2.0 * PI) * self.var_r).sqrt()
    }

    pub fn log_likelihood(&self, a: T) -> T {
        let d = a - self.mu_r;
        -(d * d) / (T::lit(2.0) * self.var_r) - T::lit(0.5) * (T::lit(2.0 * PI) * self.var_r).ln()
    }
}

/// Sample mean and population (1/N) variance of real embeddings.
pub fn fit_gaussian<T: Scalar>(real: &EmbeddingBatch<T>) -> Result<GaussianModel<T>> {
    const OP: &str = "fit_gaussian";
    if real.source != Source::Real {
        return Err(LeganError::invalid(
            OP,
            "embeddings must come from real images",
        ));
    }
    if real.len() < 2 {
        return Err(LeganError::invalid(
            OP,
            format!("need at least 2 embeddings, got {}", real.len()),
        ));
    }
    let mu = batch_mean_embedding(real);
    let var = sorted_sum(real.values.iter().map(|&v| (v - mu) * (v - mu)))
        / T::from_usize_lossy(real.len());
    Ok(GaussianModel::new(mu, var))
}

/// Exponential moving average of fitted Gaussians across batches.
#[derive(Clone, Debug)]
pub struct GaussianEma<T> {
    decay: T,
    state: Option<(T, T)>,
}

impl<T: Scalar> GaussianEma<T> {
    pub fn new(decay: T) -> Result<Self> {
        if !(decay >= T::zero() && decay < T::one()) {
            return Err(LeganError::invalid(
                "gaussian_ema",
                format!("decay {decay} outside [0, 1)"),
            ));
        }
        Ok(GaussianEma { decay, state: None })
    }

    /// Blends a freshly fitted model into the average and returns the result.
    pub fn update(&mut self, fitted: &GaussianModel<T>) -> GaussianModel<T> {
        let (mu, var) = match self.state {
            None => (fitted.mu_r, fitted.var_r),
            Some((m, v)) => {
                let keep = T::one() - self.decay;
                (
                    self.decay * m + keep * fitted.mu_r,
                    self.decay * v + keep * fitted.var_r,
                )
            }
        };
        self.state = Some((mu, var));
        GaussianModel::new(mu, var)
    }
}

pub fn legan_diff<T: Scalar>(l_real: T, l_fake: T) -> T {
    l_real - l_fake
}

/// `min / max` of two positive likelihoods; in `(0, 1]`.
pub fn legan_ratio<T: Scalar>(l_real: T, l_fake: T) -> Result<T> {
    if !(l_real > T::zero() && l_fake > T::zero()) {
        return Err(LeganError::invalid(
            "legan_ratio",
            format!("likelihoods must be positive, got {l_real} and {l_fake}"),
        ));
    }
    Ok(l_real.min(l_fake) / l_real.max(l_fake))
}

/// The measures computed from the mean of per-image likelihoods instead of
/// the likelihood of the mean embedding.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PerImageMeasures<T> {
    pub l_real: T,
    pub l_fake: T,
    pub l_diff: T,
    pub l_ratio: T,
}

/// Per-batch measurement.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LeganRecord<T> {
    pub epoch: usize,
    pub batch: usize,
    pub model: GaussianModel<T>,
    pub l_real: T,
    pub l_fake: T,
    pub l_diff: T,
    pub l_ratio: T,
    pub log_l_real: T,
    pub log_l_fake: T,
    pub per_image: PerImageMeasures<T>,
}

/// Fits the Gaussian to `real` and scores both batches.
pub fn legan_step<T: Scalar>(
    real: &EmbeddingBatch<T>,
    fake: &EmbeddingBatch<T>,
    epoch: usize,
    batch: usize,
) -> Result<LeganRecord<T>> {
    let model = fit_gaussian(real)?;
    legan_step_with_model(&model, real, fake, epoch, batch)
}

/// Scores both batches under an already fitted model.
pub fn legan_step_with_model<T: Scalar>(
    model: &GaussianModel<T>,
    real: &EmbeddingBatch<T>,
    fake: &EmbeddingBatch<T>,
    epoch: usize,
    batch: usize,
) -> Result<LeganRecord<T>> {
    let (mean_r, mean_f) = (batch_mean_embedding(real), batch_mean_embedding(fake));
    let l_real = model.likelihood(mean_r);
    let l_fake = model.likelihood(mean_f);
    let (log_r, log_f) = (model.log_likelihood(mean_r), model.log_likelihood(mean_f));
    let per_image = |b: &EmbeddingBatch<T>| {
        sorted_sum(b.values.iter().map(|&a| model.likelihood(a))) / T::from_usize_lossy(b.len())
    };
    let log_per_image = |b: &EmbeddingBatch<T>| {
        let logs: Vec<T> = b.values.iter().map(|&a| model.log_likelihood(a)).collect();
        let top = logs.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
        top + (sorted_sum(logs.iter().map(|&v| (v - top).exp())) / T::from_usize_lossy(b.len()))
            .ln()
    };
    let (pr, pf) = (per_image(real), per_image(fake));
    Ok(LeganRecord {
        epoch,
        batch,
        model: *model,
        l_real,
        l_fake,
        l_diff: legan_diff(l_real, l_fake),
        l_ratio: ratio_or_log_ratio(l_real, l_fake, || (log_r, log_f))?,
        log_l_real: log_r,
        log_l_fake: log_f,
        per_image: PerImageMeasures {
            l_real: pr,
            l_fake: pf,
            l_diff: legan_diff(pr, pf),
            l_ratio: ratio_or_log_ratio(pr, pf, || (log_per_image(real), log_per_image(fake)))?,
        },
    })
}

/// [`legan_ratio`], except that when a density has underflowed to zero the
/// ratio is taken from the log-densities, `exp(−|log ℓ_r − log ℓ_f|)`, which
/// may itself be 0.
fn ratio_or_log_ratio<T: Scalar>(l_real: T, l_fake: T, logs: impl FnOnce() -> (T, T)) -> Result<T> {
    if l_real > T::zero() && l_fake > T::zero() {
        return legan_ratio(l_real, l_fake);
    }
    let (a, b) = logs();
    Ok((-(a - b).abs()).exp())
}

/// Real and fake embedding counts over shared uniform bins.
#[derive(Clone, Debug, PartialEq)]
pub struct HistogramDump<T> {
    pub epoch: usize,
    /// `bins + 1` strictly increasing edges.
    pub edges: Vec<T>,
    pub real: Vec<usize>,
    pub fake: Vec<usize>,
    /// All pooled values were equal; a single unit-width bin centered on
    /// the value holds everything.
    pub degenerate: bool,
}

/// Uniform bins over `[min, max]` of the pooled embeddings. Bins are
/// half-open except the last, which includes `max`.
pub fn embedding_histogram<T: Scalar>(
    real: &EmbeddingBatch<T>,
    fake: &EmbeddingBatch<T>,
    bins: usize,
    epoch: usize,
) -> Result<HistogramDump<T>> {
    if bins < 2 {
        return Err(LeganError::invalid(
            "embedding_histogram",
            format!("need at least 2 bins, got {bins}"),
        ));
    }
    let pooled = real.values.iter().chain(&fake.values);
    let lo = pooled.clone().fold(T::infinity(), |m, &v| m.min(v));
    let hi = pooled.fold(T::neg_infinity(), |m, &v| m.max(v));
    if lo == hi {
        let half = T::lit(0.5);
        return Ok(HistogramDump {
            epoch,
            edges: vec![lo - half, lo + half],
            real: vec![real.len()],
            fake: vec![fake.len()],
            degenerate: true,
        });
    }
    let width = (hi - lo) / T::from_usize_lossy(bins);
    let mut edges: Vec<T> = (0..bins)
        .map(|i| lo + width * T::from_usize_lossy(i))
        .collect();
    edges.push(hi);
    let count = |b: &EmbeddingBatch<T>| {
        let mut counts = vec![0usize; bins];
        for &v in &b.values {
            let idx = ((v - lo) / width)
                .floor()
                .to_usize()
                .unwrap_or(0)
                .min(bins - 1);
            counts[idx] += 1;
        }
        counts
    };
    Ok(HistogramDump {
        epoch,
        edges,
        real: count(real),
        fake: count(fake),
        degenerate: false,
    })
}

impl<T: Scalar> HistogramDump<T> {
    /// Plain-text form:
    ///
    /// ```text
    /// epoch <e> edges <x0> <x1> ... <xB>
    /// real <c1> ... <cB>
    /// fake <c1> ... <cB>
    /// ```
    pub fn to_text(&self) -> String {
        let mut s = format!("epoch {} edges", self.epoch);
        for e in &self.edges {
            let _ = write!(s, " {e}");
        }
        for (label, counts) in [("real", &self.real), ("fake", &self.fake)] {
            s.push('\n');
            s.push_str(label);
            for c in counts {
                let _ = write!(s, " {c}");
            }
        }
        s.push('\n');
        s
    }

    /// Parses [`to_text`](Self::to_text) output. Errors carry the 1-based
    /// line number.
    pub fn parse(text: &str) -> std::result::Result<Self, (usize, String)> {
        let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
        if lines.len() != 3 {
            return Err((
                lines.len().min(3) + 1,
                format!("expected 3 lines, found {}", lines.len()),
            ));
        }
        let mut head = lines[0].split_whitespace();
        if head.next() != Some("epoch") {
            return Err((1, "header must start with 'epoch'".into()));
        }
        let epoch = head
            .next()
            .and_then(|e| e.parse().ok())
            .ok_or((1, "bad epoch".to_string()))?;
        if head.next() != Some("edges") {
            return Err((1, "missing 'edges'".into()));
        }
        let edges = head
            .map(|e| e.parse::<f64>().map(T::lit))
            .collect::<std::result::Result<Vec<T>, _>>()
            .map_err(|_| (1, "bad edge value".to_string()))?;
        if edges.len() < 2 {
            return Err((1, "need at least two edges".into()));
        }
        if edges.windows(2).any(|w| !(w[0] < w[1])) {
            return Err((1, "edges must be strictly increasing".into()));
        }
        let counts = |line_no: usize, label: &str| {
            let mut it = lines[line_no - 1].split_whitespace();
            if it.next() != Some(label) {
                return Err((line_no, format!("line must start with '{label}'")));
            }
            let c = it
                .map(|v| v.parse::<usize>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| (line_no, "bad count".to_string()))?;
            if c.len() != edges.len() - 1 {
                return Err((
                    line_no,
                    format!("{} counts for {} bins", c.len(), edges.len() - 1),
                ));
            }
            Ok(c)
        };
        let real = counts(2, "real")?;
        let fake = counts(3, "fake")?;
        Ok(HistogramDump {
            epoch,
            degenerate: edges.len() == 2 && real.len() == 1,
            edges,
            real,
            fake,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn real(v: &[f64]) -> EmbeddingBatch<f64> {
        EmbeddingBatch::real(v.to_vec()).unwrap()
    }

    fn fake(v: &[f64]) -> EmbeddingBatch<f64> {
        EmbeddingBatch::fake(v.to_vec()).unwrap()
    }

    #[test]
    fn fit_symmetric_pair() {
        let m = fit_gaussian(&real(&[-1.0, 1.0])).unwrap();
        assert_eq!((m.mu_r, m.var_r, m.floored), (0.0, 1.0, false));
        let m = fit_gaussian(&real(&[0.0, 2.0])).unwrap();
        assert_eq!((m.mu_r, m.var_r), (1.0, 1.0));
    }

    #[test]
    fn fit_degenerate_floors_variance() {
        let m = fit_gaussian(&real(&[1.0, 1.0, 1.0])).unwrap();
        assert_eq!(m.mu_r, 1.0);
        assert_eq!(m.var_r, VARIANCE_FLOOR);
        assert!(m.floored);
    }

    #[test]
    fn fit_rejects_small_or_fake_batches() {
        assert!(fit_gaussian(&real(&[1.0])).is_err());
        assert!(fit_gaussian(&fake(&[1.0, 2.0])).is_err());
        assert!(EmbeddingBatch::<f64>::real(vec![]).is_err());
        assert!(EmbeddingBatch::real(vec![f64::NAN, 1.0]).is_err());
    }

    #[test]
    fn density_values() {
        let m = GaussianModel::<f64>::new(0.0, 1.0);
        assert!((m.likelihood(0.0) - 0.398_942_280_401_432_7).abs() < 1e-15);
        assert!((m.likelihood(1.0) - 0.241_970_724_519_143_37).abs() < 1e-15);
        assert!((m.log_likelihood(1.0) - m.likelihood(1.0).ln()).abs() < 1e-14);
    }

    #[test]
    fn batch_mean_cases() {
        assert_eq!(batch_mean_embedding(&real(&[1.0, 2.0, 3.0])), 2.0);
        assert_eq!(batch_mean_embedding(&fake(&[7.5])), 7.5);
    }

    #[test]
    fn diff_and_ratio() {
        assert!((legan_diff(0.3f64, 0.1) - 0.2).abs() < 1e-15);
        assert_eq!(legan_diff(0.4, 0.4), 0.0);
        assert_eq!(legan_ratio(0.5, 0.5).unwrap(), 1.0);
        assert_eq!(legan_ratio(0.2, 0.8).unwrap(), 0.25);
        assert_eq!(legan_ratio(0.8, 0.2).unwrap(), 0.25);
        assert!(legan_ratio(0.0, 0.2).is_err());
        assert!(legan_ratio(0.3, -0.2).is_err());
    }

    #[test]
    fn underflowed_density_falls_back_to_log_ratio() {
        // var 1e-2 and the fake mean 5 units away: the density is ~e^-1250.
        let r = legan_step(&real(&[-0.1, 0.1]), &fake(&[5.0]), 0, 0).unwrap();
        assert_eq!(r.l_fake, 0.0);
        assert_eq!(r.l_ratio, 0.0);
        assert!(r.log_l_fake < -1000.0);
        let close = legan_step(&real(&[-0.1, 0.1]), &fake(&[3.7]), 0, 0).unwrap();
        let direct = close.l_fake / close.l_real;
        assert!(direct > 0.0 && (close.l_ratio - direct).abs() <= 1e-12 * direct);
        assert_eq!(r.per_image.l_ratio, 0.0);
    }

    #[test]
    fn identical_batches_give_neutral_measures() {
        let v = [0.3, -0.7, 1.1, 0.2];
        let r = legan_step(&real(&v), &fake(&v), 0, 0).unwrap();
        assert_eq!(r.l_diff, 0.0);
        assert_eq!(r.l_ratio, 1.0);
    }

    #[test]
    fn ema_blends_models() {
        let mut ema = GaussianEma::new(0.5).unwrap();
        let a = ema.update(&GaussianModel::new(0.0, 1.0));
        assert_eq!((a.mu_r, a.var_r), (0.0, 1.0));
        let b = ema.update(&GaussianModel::new(2.0, 3.0));
        assert_eq!((b.mu_r, b.var_r), (1.0, 2.0));
        assert!(GaussianEma::new(1.0f64).is_err());
    }

    #[test]
    fn histogram_edge_convention() {
        let h = embedding_histogram(&real(&[0.0, 0.5]), &fake(&[1.0]), 2, 3).unwrap();
        assert_eq!(h.edges, vec![0.0, 0.5, 1.0]);
        assert_eq!(h.real, vec![1, 1]);
        assert_eq!(h.fake, vec![0, 1]);
        let h = embedding_histogram(&real(&[0.0, 1.0]), &fake(&[0.0]), 2, 0).unwrap();
        assert_eq!(h.real, vec![1, 1]);
    }

    #[test]
    fn histogram_degenerate_and_invalid() {
        let h = embedding_histogram(&real(&[2.0, 2.0]), &fake(&[2.0]), 4, 0).unwrap();
        assert!(h.degenerate);
        assert_eq!((h.real.clone(), h.fake.clone()), (vec![2], vec![1]));
        assert!(h.edges[0] < h.edges[1]);
        assert!(embedding_histogram(&real(&[0.0, 1.0]), &fake(&[1.0]), 1, 0).is_err());
    }

    #[test]
    fn histogram_text_round_trip() {
        let h = embedding_histogram(&real(&[0.0, 0.5, 0.25]), &fake(&[1.0, 0.1]), 4, 7).unwrap();
        let text = h.to_text();
        assert!(text.starts_with("epoch 7 edges 0 0.25 0.5 0.75 1\n"));
        assert_eq!(HistogramDump::<f64>::parse(&text).unwrap(), h);
        let err = HistogramDump::<f64>::parse("epoch 1 edges 0 1\nreal 1\nfake x\n").unwrap_err();
        assert_eq!(err.0, 3);
    }
}
