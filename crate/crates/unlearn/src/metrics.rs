//! Evaluation: forget fraction, time-to-unlearn, Fréchet distance over
//! classifier features, digit histograms, and speed-up ratios.
//!
//! All functions here are read-only over model snapshots; none of them
//! mutate anything, so they can run concurrently with each other.

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{ClassifierModel, NoiseBatch, VaeModel};

/// Eigenvalues of a covariance may dip below zero by at most this times
/// the trace before the matrix is rejected as non-PSD.
pub const PSD_TOLERANCE: f64 = 1e-6;

/// Gaussian fit of a feature batch.
#[derive(Debug, Clone)]
pub struct GaussianStats {
    pub mean: Array1<f64>,
    pub cov: Array2<f64>,
    pub n: usize,
}

/// Sample mean and unbiased sample covariance of row-wise features.
pub fn gaussian_stats(features: &Array2<f64>) -> Result<GaussianStats> {
    let n = features.nrows();
    if n < 2 {
        return Err(Error::InsufficientSamples { needed: 2, got: n });
    }
    let f = features.ncols();
    let mean = features.mean_axis(Axis(0)).expect("n >= 2");
    let mut cov = Array2::<f64>::zeros((f, f));
    for row in features.rows() {
        let d = &row.to_owned() - &mean;
        for i in 0..f {
            for j in i..f {
                cov[(i, j)] += d[i] * d[j];
            }
        }
    }
    let denom = (n - 1) as f64;
    for i in 0..f {
        for j in i..f {
            let v = cov[(i, j)] / denom;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    Ok(GaussianStats { mean, cov, n })
}

/// Symmetric eigendecomposition with a PSD check; eigenvalues below zero
/// (within tolerance) are clamped to zero.
fn psd_eigen(cov: &Array2<f64>) -> Result<(Vec<f64>, nalgebra::DMatrix<f64>)> {
    let f = cov.nrows();
    let m = nalgebra::DMatrix::from_fn(f, f, |i, j| 0.5 * (cov[(i, j)] + cov[(j, i)]));
    let trace: f64 = (0..f).map(|i| m[(i, i)]).sum();
    let eig = nalgebra::SymmetricEigen::new(m);
    let floor = -PSD_TOLERANCE * trace.abs().max(1e-300);
    let mut vals = Vec::with_capacity(f);
    for &l in eig.eigenvalues.iter() {
        if l < floor {
            return Err(Error::NonPsdCovariance { min_eig: l });
        }
        vals.push(l.max(0.0));
    }
    Ok((vals, eig.eigenvectors))
}

/// Squared Fréchet distance between two Gaussians:
/// `‖μ_a−μ_b‖² + Tr(Σ_a + Σ_b − 2(Σ_a^{1/2} Σ_b Σ_a^{1/2})^{1/2})`.
///
/// Computed via symmetric eigendecompositions with negative-eigenvalue
/// clamping at zero.
pub fn frechet_distance(a: &GaussianStats, b: &GaussianStats) -> Result<f64> {
    assert_eq!(a.mean.len(), b.mean.len(), "feature dims must agree");
    let f = a.mean.len();

    let (la, ua) = psd_eigen(&a.cov)?;
    // validate b's covariance up front as well
    let (_, _) = psd_eigen(&b.cov)?;

    // S = Σ_a^{1/2}
    let sqrt_la = nalgebra::DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
        f,
        la.iter().map(|l| l.sqrt()),
    ));
    let s = &ua * sqrt_la * ua.transpose();
    let bmat = nalgebra::DMatrix::from_fn(f, f, |i, j| b.cov[(i, j)]);
    let inner = &s * bmat * &s;
    // symmetrize before decomposing; the product drifts slightly
    let inner = 0.5 * (&inner + inner.transpose());
    let eig = nalgebra::SymmetricEigen::new(inner);
    let tr_sqrt: f64 = eig.eigenvalues.iter().map(|l| l.max(0.0).sqrt()).sum();

    let mean_sq: f64 = a
        .mean
        .iter()
        .zip(b.mean.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    let tr_a: f64 = (0..f).map(|i| a.cov[(i, i)]).sum();
    let tr_b: f64 = (0..f).map(|i| b.cov[(i, i)]).sum();

    Ok(mean_sq + tr_a + tr_b - 2.0 * tr_sqrt)
}

/// Fraction of `n_monitor` generated samples the frozen classifier labels
/// as forget (retain probability below ½).
pub fn forget_fraction(
    model: &VaeModel,
    classifier: &ClassifierModel,
    n_monitor: usize,
    seed: u64,
) -> Result<f64> {
    let noise = NoiseBatch::sample(n_monitor, model.latent_dim(), seed);
    let y = model.generate(&noise)?;
    let p = classifier.classify_prob(&y)?;
    let forget = p.iter().filter(|&&v| v < 0.5).count();
    Ok(forget as f64 / n_monitor as f64)
}

/// Normalized class frequencies over generated samples.
pub fn digit_histogram(
    model: &VaeModel,
    classifier: &ClassifierModel,
    n_samples: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let noise = NoiseBatch::sample(n_samples, model.latent_dim(), seed);
    let y = model.generate(&noise)?;
    let classes = classifier.predict_class(&y)?;
    let mut counts = vec![0usize; classifier.n_classes()];
    for c in classes {
        counts[c] += 1;
    }
    Ok(counts
        .into_iter()
        .map(|c| c as f64 / n_samples as f64)
        .collect())
}

/// Fréchet distance between classifier-feature statistics of generated
/// samples and real images, `n_fid` of each.
pub fn fid(
    model: &VaeModel,
    classifier: &ClassifierModel,
    real_images: &Array2<f64>,
    n_fid: usize,
    seed: u64,
) -> Result<f64> {
    let needed = classifier.feature_dim() + 1;
    if n_fid < needed || real_images.nrows() < n_fid {
        return Err(Error::InsufficientSamples {
            needed: needed.max(n_fid),
            got: real_images.nrows().min(n_fid),
        });
    }
    let noise = NoiseBatch::sample(n_fid, model.latent_dim(), seed);
    let generated = model.generate(&noise)?;
    let gen_feat = classifier.features(&generated)?;
    let real_feat = classifier.features(&real_images.slice(ndarray::s![..n_fid, ..]).to_owned())?;
    let ga = gaussian_stats(&gen_feat)?;
    let gb = gaussian_stats(&real_feat)?;
    frechet_distance(&ga, &gb)
}

/// Factor by which classifier guidance shrinks the time to unlearn.
pub fn speed_up(time_base: f64, time_hat: f64) -> f64 {
    debug_assert!(time_base > 0.0 && time_hat > 0.0);
    time_base / time_hat
}

// ───────────────────────── run records ─────────────────────────

/// One monitored step of an unlearning run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepRecord {
    /// 1-based step index.
    pub step: usize,
    pub forget_fraction: f64,
    /// Cumulative wall time of gradient computation + parameter updates
    /// only; monitoring is instrumentation and excluded.
    pub cum_update_time_s: f64,
    pub retain_loss: f64,
    /// Rule-specific diagnostics (cos_sq, d_kl, p_r, forget_loss, ...).
    pub extra: Vec<(String, f64)>,
}

/// Full log of one unlearning run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub algorithm: String,
    pub seed: u64,
    pub steps: Vec<StepRecord>,
    /// Step at which a non-finite gradient aborted the run, if any.
    pub diverged_at: Option<usize>,
    pub fid_before: Option<f64>,
    pub fid_after: Option<f64>,
}

impl RunRecord {
    /// Cumulative update time at the first step whose forget fraction
    /// drops below `threshold`; `None` when never reached.
    pub fn time_to_unlearn(&self, threshold: f64) -> Option<f64> {
        time_to_unlearn(self, threshold)
    }

    /// First step index whose forget fraction drops below `threshold`.
    pub fn steps_to_threshold(&self, threshold: f64) -> Option<usize> {
        self.steps
            .iter()
            .find(|s| s.forget_fraction < threshold)
            .map(|s| s.step)
    }

    /// Mean update time per executed step.
    pub fn time_per_step(&self) -> f64 {
        match self.steps.last() {
            Some(last) => last.cum_update_time_s / self.steps.len() as f64,
            None => 0.0,
        }
    }
}

/// Cumulative update time at the first threshold crossing.
pub fn time_to_unlearn(record: &RunRecord, threshold: f64) -> Option<f64> {
    record
        .steps
        .iter()
        .find(|s| s.forget_fraction < threshold)
        .map(|s| s.cum_update_time_s)
}
