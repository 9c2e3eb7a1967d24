//! The generative model being unlearned and the frozen classifier used
//! for guidance, monitoring, and feature extraction.
//!
//! Both are small fully-connected networks over flattened pixel vectors,
//! evaluated in `f64` on the differentiation tape. Model structs own a
//! flat [`ParamVector`](crate::autodiff::ParamVector); a forward pass
//! unpacks it into tape leaves, so the same code path serves plain
//! evaluation (constant leaves) and training (differentiable leaves).

mod checkpoint;
mod classifier;
mod noise;
mod vae;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointHeader};
pub use classifier::{ClassifierModel, ClassifierVars};
pub use noise::NoiseBatch;
pub use vae::{reparameterize, DecoderHead, VaeModel, VaeVars};

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

/// Normal init with 1/√fan_in scaling for a (fan_in, fan_out) weight.
pub(crate) fn init_weight(rng: &mut ChaCha12Rng, rows: usize, cols: usize) -> Vec<f64> {
    let scale = 1.0 / (rows as f64).sqrt();
    (0..rows * cols)
        .map(|_| rng.sample::<f64, _>(StandardNormal) * scale)
        .collect()
}

pub(crate) fn check_finite_arr(arr: &Array2<f64>, what: &'static str) -> crate::Result<()> {
    if arr.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(crate::Error::NonFiniteActivation(what))
    }
}
