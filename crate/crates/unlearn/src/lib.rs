//! Machine unlearning for small deep generative models via loss-gradient
//! orthogonalization.
//!
//! A trained generative model `M_θ` is updated so that it stops producing
//! samples resembling a designated *forget* subset of its training data,
//! while keeping the quality and coverage it learned from the *retain*
//! subset. The toolkit implements ten update rules on a common footing —
//! plain gradient ascent, alternating ascent/descent, two flavors of
//! gradient surgery, orthogonality-regularized descent, and their
//! classifier-guided variants — together with the training, evaluation,
//! and experiment machinery needed to compare them reproducibly.
//!
//! Crate layout:
//!
//! - [`autodiff`] — tape-based reverse-mode differentiation with
//!   second-order support, plus flat parameter/gradient vectors.
//! - [`models`] — the small MLP VAE being unlearned and the frozen
//!   retain/forget classifier used for guidance and evaluation.
//! - [`losses`] — VAE objectives, the squared-cosine orthogonality
//!   regularizer, and the Bernoulli KL guidance term.
//! - [`rules`] — the update rules and the unlearning run loop.
//! - [`metrics`] — forget fraction, time-to-unlearn, Fréchet distance
//!   over classifier features, digit histograms.
//! - [`data`] — IDX ingestion, retain/forget partitioning, seeded
//!   batch streams.
//! - [`exp`] — experiment configs, baseline training, seeded sweeps,
//!   aggregation, and plot/report emission behind the CLI.

pub mod autodiff;
pub mod data;
pub mod error;
pub mod exp;
pub mod losses;
pub mod metrics;
pub mod models;
pub mod rules;

#[doc(hidden)]
pub mod book;

pub use error::{Error, Result};
