//! The unlearning update rules and their run loop.
//!
//! All rules share one shape: compute per-batch mean gradients of the
//! training loss over retain and forget mini-batches (optionally with the
//! classifier-guidance KL term folded in), then move the flat parameter
//! vector by a plain `θ ← θ ± η·(vector)` step. No momentum, no adaptive
//! scaling. The orthogonalization rules differentiate a regularized
//! objective instead, which rides on the tape's second-order support.

mod run;

pub use run::{run, RunOutput, StepState};

use std::fmt;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::autodiff::{
    axpy, collect_grad, dot, norm, GradVector, ParamVector, Tape, DEGENERATE_NORM,
};
use crate::error::{Error, Result};
use crate::losses::{objective_pair_t, uno_graph, LossConfig};
use crate::models::{ClassifierModel, VaeModel};

/// The ten update rules.
///
/// Config files and CLI flags use the short names: `A`, `A-D`, `SA`, `S`,
/// `UNO`, `UNO-S`, `S-hat`, `UNO-hat`, `UNO-S-hat`, `H`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Algorithm {
    /// Gradient ascent on the forget loss.
    #[serde(rename = "A")]
    Ascent,
    /// Alternating ascent (forget) and descent (retain).
    #[serde(rename = "A-D")]
    AscentDescent,
    /// Surgery with ascent in the forget direction.
    #[serde(rename = "SA")]
    SurgeryAscent,
    /// Surgery with descent in the retain direction.
    #[serde(rename = "S")]
    Surgery,
    /// Descent on the orthogonality-regularized retain loss.
    #[serde(rename = "UNO")]
    Uno,
    /// Alternating orthogonalization and surgery.
    #[serde(rename = "UNO-S")]
    UnoS,
    /// Surgery with the guidance KL folded into both gradients.
    #[serde(rename = "S-hat")]
    SurgeryHat,
    /// Orthogonalization with the guidance KL term.
    #[serde(rename = "UNO-hat")]
    UnoHat,
    /// Alternating guided orthogonalization and guided surgery.
    #[serde(rename = "UNO-S-hat")]
    UnoSHat,
    /// Histogram unlearning: descent on retain loss + guidance KL only.
    #[serde(rename = "H")]
    Histogram,
}

impl Algorithm {
    pub const ALL: [Algorithm; 10] = [
        Algorithm::Ascent,
        Algorithm::AscentDescent,
        Algorithm::SurgeryAscent,
        Algorithm::Surgery,
        Algorithm::Uno,
        Algorithm::UnoS,
        Algorithm::SurgeryHat,
        Algorithm::UnoHat,
        Algorithm::UnoSHat,
        Algorithm::Histogram,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::Ascent => "A",
            Algorithm::AscentDescent => "A-D",
            Algorithm::SurgeryAscent => "SA",
            Algorithm::Surgery => "S",
            Algorithm::Uno => "UNO",
            Algorithm::UnoS => "UNO-S",
            Algorithm::SurgeryHat => "S-hat",
            Algorithm::UnoHat => "UNO-hat",
            Algorithm::UnoSHat => "UNO-S-hat",
            Algorithm::Histogram => "H",
        }
    }

    /// Whether the rule consumes the frozen classifier during updates.
    pub fn guided(&self) -> bool {
        matches!(
            self,
            Algorithm::SurgeryHat
                | Algorithm::UnoHat
                | Algorithm::UnoSHat
                | Algorithm::Histogram
        )
    }

    /// The unguided counterpart used for speed-up pairing, when one exists.
    pub fn base_of_hat(&self) -> Option<Algorithm> {
        match self {
            Algorithm::SurgeryHat => Some(Algorithm::Surgery),
            Algorithm::UnoHat => Some(Algorithm::Uno),
            Algorithm::UnoSHat => Some(Algorithm::UnoS),
            _ => None,
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .iter()
            .copied()
            .find(|a| a.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown algorithm {s:?}")))
    }
}

/// Settings of one unlearning run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UnlearnConfig {
    pub algorithm: Algorithm,
    /// Learning rate η.
    pub eta: f64,
    /// Total update steps K.
    pub steps: usize,
    /// Forget-fraction stop threshold.
    pub threshold: f64,
    /// Generated samples per monitoring evaluation.
    pub n_monitor: usize,
    /// Stop as soon as the monitored fraction crosses the threshold
    /// (default: run all K steps, as the reference protocol does).
    #[serde(default)]
    pub stop_at_threshold: bool,
    pub loss: LossConfig,
    pub seed: u64,
}

impl UnlearnConfig {
    /// Benchmark defaults for the digit task: η = 1e-3, K = 530, B = 128,
    /// B·β_o = B·β_h = 10³, α = 1e-8, threshold 0.02, 500-sample monitor.
    pub fn benchmark_defaults(algorithm: Algorithm, seed: u64) -> Self {
        UnlearnConfig {
            algorithm,
            eta: 1e-3,
            steps: 530,
            threshold: 0.02,
            n_monitor: 500,
            stop_at_threshold: false,
            loss: LossConfig {
                beta_o_times_b: 1e3,
                beta_h_times_b: 1e3,
                alpha: 1e-8,
                batch_size: 128,
                n_generate: 128,
                stop_grad_forget: false,
            },
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        // η = 0 is allowed: it gives a monitored no-op run
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return Err(Error::Config(format!(
                "eta must be non-negative, got {}",
                self.eta
            )));
        }
        if self.steps == 0 {
            return Err(Error::Config("need at least one step".into()));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Config(format!(
                "threshold must lie in (0,1), got {}",
                self.threshold
            )));
        }
        if self.n_monitor == 0 {
            return Err(Error::Config("n_monitor must be positive".into()));
        }
        self.loss.validate()
    }
}

/// Splitmix64: cheap, well-mixed seed derivation for independent RNG
/// streams. `mix_seed(mix_seed(master, a), b)` derives nested streams.
pub fn mix_seed(base: u64, salt: u64) -> u64 {
    let mut z = base ^ salt.wrapping_mul(0x9e3779b97f4a7c15);
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// `a − (a·b / b·b)·b`: removes from `a` its projection onto `b`.
///
/// Returns `a` unchanged when `‖b‖` is below the degeneracy guard. The
/// denominator is the direct dot product `b·b`, so exactly parallel
/// inputs cancel exactly.
pub fn project_out(a: &GradVector, b: &GradVector) -> GradVector {
    let bb = dot(b, b).expect("congruent layouts");
    if bb < DEGENERATE_NORM * DEGENERATE_NORM {
        return a.clone();
    }
    let coeff = dot(a, b).expect("congruent layouts") / bb;
    axpy(-coeff, b, a).expect("congruent layouts")
}

/// `θ ← θ + η·g_f` (gradient ascent on the forget loss).
pub fn step_ascent(params: &mut ParamVector, g_f: &GradVector, eta: f64) {
    params.axpy_inplace(eta, g_f).expect("congruent layouts");
}

/// `θ ← θ − η·g` (plain descent).
pub fn step_descent(params: &mut ParamVector, g: &GradVector, eta: f64) {
    params.axpy_inplace(-eta, g).expect("congruent layouts");
}

/// Odd `k`: ascent along `g_f`; even `k`: descent along `g_r`.
pub fn step_ascent_descent(
    params: &mut ParamVector,
    k: usize,
    g_r: &GradVector,
    g_f: &GradVector,
    eta: f64,
) {
    if k % 2 == 1 {
        step_ascent(params, g_f, eta);
    } else {
        step_descent(params, g_r, eta);
    }
}

/// `θ ← θ + η·(g_f − proj_{g_r} g_f)`: ascend only where the forget
/// direction does not disturb the retain gradient.
pub fn step_surgery_ascent(
    params: &mut ParamVector,
    g_r: &GradVector,
    g_f: &GradVector,
    eta: f64,
) {
    let projected = project_out(g_f, g_r);
    params.axpy_inplace(eta, &projected).expect("congruent layouts");
}

/// `θ ← θ − η·(g_r − proj_{g_f} g_r)`: descend on the retain loss only in
/// directions orthogonal to the forget gradient.
pub fn step_surgery(params: &mut ParamVector, g_r: &GradVector, g_f: &GradVector, eta: f64) {
    let projected = project_out(g_r, g_f);
    params.axpy_inplace(-eta, &projected).expect("congruent layouts");
}

/// Diagnostics surfaced by one update step.
#[derive(Debug, Clone, Default)]
pub struct StepOutcome {
    /// Mean retain-batch training loss at the pre-update parameters, when
    /// the rule computed it as part of its objective.
    pub retain_loss: Option<f64>,
    pub extra: Vec<(String, f64)>,
}

/// Per-batch mean gradients `(g_r, g_f)` of the training loss, with the
/// `β_h ∇d_KL` guidance term added to both when `guidance` is supplied
/// and `β_h ≠ 0`.
#[allow(clippy::too_many_arguments)]
pub fn compute_gradients(
    model: &VaeModel,
    retain_x: &Array2<f64>,
    forget_x: &Array2<f64>,
    eps_r: &Array2<f64>,
    eps_f: &Array2<f64>,
    guidance: Option<(&ClassifierModel, &Array2<f64>)>,
    cfg: &LossConfig,
) -> Result<(GradVector, GradVector, StepOutcome)> {
    let mut tape = Tape::new();
    let vars = model.vars(&mut tape);
    let pair = objective_pair_t(
        &mut tape, model, &vars, retain_x, forget_x, eps_r, eps_f, guidance, cfg,
    );
    let gr_vars = tape.backward(pair.retain_obj, &vars.all);
    let gf_vars = tape.backward(pair.forget_obj, &vars.all);
    let g_r = collect_grad(&tape, &gr_vars, model.params()).check_finite()?;
    let g_f = collect_grad(&tape, &gf_vars, model.params()).check_finite()?;
    let mut outcome = StepOutcome {
        retain_loss: Some(pair.retain_loss),
        extra: vec![("forget_loss".into(), pair.forget_loss)],
    };
    if let Some(d) = pair.d_kl {
        outcome.extra.push(("d_kl".into(), d));
    }
    if let Some(p) = pair.p_r {
        outcome.extra.push(("p_r".into(), p));
    }
    Ok((g_r, g_f, outcome))
}

/// Gradient of the forget objective alone (the ascent rule's input).
fn forget_gradient(
    model: &VaeModel,
    forget_x: &Array2<f64>,
    eps_f: &Array2<f64>,
) -> Result<GradVector> {
    let mut tape = Tape::new();
    let vars = model.vars(&mut tape);
    let xf = tape.constant(forget_x.clone());
    let ef = tape.constant(eps_f.clone());
    let loss = crate::losses::vae_loss_t(&mut tape, model, &vars, xf, ef);
    let g = tape.backward(loss, &vars.all);
    collect_grad(&tape, &g, model.params()).check_finite()
}

/// Gradient of the retain objective alone.
fn retain_gradient(
    model: &VaeModel,
    retain_x: &Array2<f64>,
    eps_r: &Array2<f64>,
) -> Result<(GradVector, f64)> {
    let mut tape = Tape::new();
    let vars = model.vars(&mut tape);
    let xr = tape.constant(retain_x.clone());
    let er = tape.constant(eps_r.clone());
    let loss = crate::losses::vae_loss_t(&mut tape, model, &vars, xr, er);
    let value = tape.scalar(loss);
    let g = tape.backward(loss, &vars.all);
    Ok((
        collect_grad(&tape, &g, model.params()).check_finite()?,
        value,
    ))
}

/// One descent step on the (possibly guided, possibly orthogonality-
/// regularized) objective: `θ ← θ − η ∇θ L`. Serves UNO, UNO-hat, H, and
/// the orthogonalization half of the alternating rules.
#[allow(clippy::too_many_arguments)]
pub fn step_uno(
    model: &mut VaeModel,
    retain_x: &Array2<f64>,
    forget_x: &Array2<f64>,
    eps_r: &Array2<f64>,
    eps_f: &Array2<f64>,
    guidance: Option<(&ClassifierModel, &Array2<f64>)>,
    cfg: &LossConfig,
    eta: f64,
) -> Result<StepOutcome> {
    let mut tape = Tape::new();
    let vars = model.vars(&mut tape);
    let graph = uno_graph(
        &mut tape, model, &vars, retain_x, forget_x, eps_r, eps_f, guidance, cfg,
    );
    let g_vars = tape.backward(graph.loss, &vars.all);
    let g = collect_grad(&tape, &g_vars, model.params()).check_finite()?;
    step_descent(model.params_mut(), &g, eta);

    let mut extra = vec![("forget_loss".into(), graph.forget_loss)];
    if let Some(c) = graph.cos_sq {
        extra.push(("cos_sq".into(), c));
    }
    if let Some(d) = graph.d_kl {
        extra.push(("d_kl".into(), d));
    }
    if let Some(p) = graph.p_r {
        extra.push(("p_r".into(), p));
    }
    Ok(StepOutcome {
        retain_loss: Some(graph.retain_loss),
        extra,
    })
}

/// Histogram unlearning: descent on `L_r + β_h·d_KL`. Identical to the
/// orthogonalization step with `β_o = 0`.
#[allow(clippy::too_many_arguments)]
pub fn step_h(
    model: &mut VaeModel,
    retain_x: &Array2<f64>,
    forget_x: &Array2<f64>,
    eps_r: &Array2<f64>,
    eps_f: &Array2<f64>,
    guidance: Option<(&ClassifierModel, &Array2<f64>)>,
    cfg: &LossConfig,
    eta: f64,
) -> Result<StepOutcome> {
    let mut zeroed = *cfg;
    zeroed.beta_o_times_b = 0.0;
    step_uno(
        model, retain_x, forget_x, eps_r, eps_f, guidance, &zeroed, eta,
    )
}

/// Applies one step of `algorithm` at (1-based) step index `k`.
///
/// `gen_z` must be `Some` exactly when the algorithm is guided with a
/// nonzero `β_h`; it holds the prior draws for the generated batch.
#[allow(clippy::too_many_arguments)]
pub fn unlearn_step(
    algorithm: Algorithm,
    k: usize,
    model: &mut VaeModel,
    classifier: &ClassifierModel,
    retain_x: &Array2<f64>,
    forget_x: &Array2<f64>,
    eps_r: &Array2<f64>,
    eps_f: &Array2<f64>,
    gen_z: Option<&Array2<f64>>,
    loss_cfg: &LossConfig,
    eta: f64,
) -> Result<StepOutcome> {
    let guidance = gen_z.map(|z| (classifier, z));
    match algorithm {
        Algorithm::Ascent => {
            let g_f = forget_gradient(model, forget_x, eps_f)?;
            step_ascent(model.params_mut(), &g_f, eta);
            Ok(StepOutcome::default())
        }
        Algorithm::AscentDescent => {
            if k % 2 == 1 {
                let g_f = forget_gradient(model, forget_x, eps_f)?;
                step_ascent(model.params_mut(), &g_f, eta);
                Ok(StepOutcome::default())
            } else {
                let (g_r, retain_loss) = retain_gradient(model, retain_x, eps_r)?;
                step_descent(model.params_mut(), &g_r, eta);
                Ok(StepOutcome {
                    retain_loss: Some(retain_loss),
                    extra: vec![],
                })
            }
        }
        Algorithm::SurgeryAscent => {
            let (g_r, g_f, outcome) = compute_gradients(
                model, retain_x, forget_x, eps_r, eps_f, None, loss_cfg,
            )?;
            step_surgery_ascent(model.params_mut(), &g_r, &g_f, eta);
            Ok(outcome)
        }
        Algorithm::Surgery | Algorithm::SurgeryHat => {
            let (g_r, g_f, outcome) = compute_gradients(
                model, retain_x, forget_x, eps_r, eps_f, guidance, loss_cfg,
            )?;
            step_surgery(model.params_mut(), &g_r, &g_f, eta);
            Ok(outcome)
        }
        Algorithm::Uno | Algorithm::UnoHat => step_uno(
            model, retain_x, forget_x, eps_r, eps_f, guidance, loss_cfg, eta,
        ),
        Algorithm::UnoS | Algorithm::UnoSHat => {
            if k % 2 == 1 {
                step_uno(
                    model, retain_x, forget_x, eps_r, eps_f, guidance, loss_cfg, eta,
                )
            } else {
                let (g_r, g_f, outcome) = compute_gradients(
                    model, retain_x, forget_x, eps_r, eps_f, guidance, loss_cfg,
                )?;
                step_surgery(model.params_mut(), &g_r, &g_f, eta);
                Ok(outcome)
            }
        }
        Algorithm::Histogram => step_h(
            model, retain_x, forget_x, eps_r, eps_f, guidance, loss_cfg, eta,
        ),
    }
}
