//! Scalar objectives: VAE training losses, the squared-cosine
//! orthogonality regularizer, and the Bernoulli-KL guidance term.
//!
//! Everything here comes in two flavors where it matters: a tape-level
//! builder (suffix `_t`) that participates in differentiation, and an
//! eager wrapper returning plain numbers. The update rules compose the
//! builders; diagnostics and tests use the wrappers.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::autodiff::{
    cosine_sq_vars, dot, norm, vars_norm, GradVector, Tape, Var, DEGENERATE_NORM,
};
use crate::error::{Error, Result};
use crate::models::{ClassifierModel, DecoderHead, VaeModel, VaeVars};

/// Decoder outputs are clamped to `[ε, 1−ε]` inside Bernoulli log terms;
/// the loss is undefined at saturated pixels.
pub const DECODER_CLAMP: f64 = 1e-7;

/// `p_r` is clamped to `[ε_p, 1−ε_p]` before the KL logs.
pub const PROB_CLAMP: f64 = 1e-12;

/// Loss weights and batch sizes.
///
/// The regularizer weights are stored as the *products* `B·β_o` and
/// `B·β_h`; the effective weights divide the batch size out. `alpha` is
/// the small positive target slack of the guidance KL term.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LossConfig {
    pub beta_o_times_b: f64,
    pub beta_h_times_b: f64,
    pub alpha: f64,
    pub batch_size: usize,
    pub n_generate: usize,
    /// Ablation toggle: treat the forget gradient as a constant inside the
    /// cosine regularizer instead of differentiating through it.
    #[serde(default)]
    pub stop_grad_forget: bool,
}

impl LossConfig {
    pub fn beta_o(&self) -> f64 {
        self.beta_o_times_b / self.batch_size as f64
    }

    pub fn beta_h(&self) -> f64 {
        self.beta_h_times_b / self.batch_size as f64
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 0.5) {
            return Err(Error::Config(format!(
                "alpha must lie in (0, 0.5), got {}",
                self.alpha
            )));
        }
        if self.batch_size == 0 || self.n_generate == 0 {
            return Err(Error::Config("batch sizes must be positive".into()));
        }
        if !(self.beta_o_times_b.is_finite() && self.beta_h_times_b.is_finite()) {
            return Err(Error::Config("regularizer weights must be finite".into()));
        }
        Ok(())
    }
}

/// VAE training loss on the tape: mean over the batch of reconstruction
/// plus ½·KL(q(z|x) ‖ N(0,I)), with `z = μ + σ⊙ε`.
pub fn vae_loss_t(
    tape: &mut Tape,
    model: &VaeModel,
    vars: &VaeVars,
    x: Var,
    eps: Var,
) -> Var {
    let batch = tape.value(x).nrows();
    let inv_b = 1.0 / batch as f64;

    let (mu, s) = model.encode_t(tape, vars, x);
    let sigma = tape.exp(s);
    let se = tape.mul(sigma, eps);
    let z = tape.add(mu, se);
    let xbar = model.decode_t(tape, vars, z);

    let rec = match model.head() {
        DecoderHead::Bernoulli => {
            // −Σᵢ x log x̄ + (1−x) log(1−x̄), clamped away from saturation
            let xc = tape.clamp(xbar, DECODER_CLAMP, 1.0 - DECODER_CLAMP);
            let ln_x = tape.ln(xc);
            let neg_xc = tape.neg(xc);
            let one_minus = tape.add_scalar(neg_xc, 1.0);
            let ln_1mx = tape.ln(one_minus);
            let t1 = tape.mul(x, ln_x);
            let neg_x = tape.neg(x);
            let one_minus_x = tape.add_scalar(neg_x, 1.0);
            let t2 = tape.mul(one_minus_x, ln_1mx);
            let ll = tape.add(t1, t2);
            let total = tape.sum(ll);
            tape.scale(total, -inv_b)
        }
        DecoderHead::Gaussian => {
            let diff = tape.sub(x, xbar);
            let sq = tape.mul(diff, diff);
            let total = tape.sum(sq);
            tape.scale(total, inv_b)
        }
    };

    // ½ Σᵢ (μ² + σ² − log σ² − 1), with σ² = exp(2s) and log σ² = 2s
    let mu2 = tape.mul(mu, mu);
    let two_s = tape.scale(s, 2.0);
    let sig2 = tape.exp(two_s);
    let a = tape.add(mu2, sig2);
    let b = tape.sub(a, two_s);
    let c = tape.add_scalar(b, -1.0);
    let kl_total = tape.sum(c);
    let kl = tape.scale(kl_total, 0.5 * inv_b);

    tape.add(rec, kl)
}

/// Training loss under the model's own decoder head.
pub fn vae_loss(model: &VaeModel, x: &Array2<f64>, eps: &Array2<f64>) -> Result<f64> {
    let mut tape = Tape::new();
    let vars = model.vars(&mut tape);
    let xv = tape.constant(x.clone());
    let ev = tape.constant(eps.clone());
    let loss = vae_loss_t(&mut tape, model, &vars, xv, ev);
    let v = tape.scalar(loss);
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFiniteLoss)
    }
}

/// Bernoulli-head VAE loss (binary cross-entropy reconstruction).
pub fn vae_loss_bernoulli(model: &VaeModel, x: &Array2<f64>, eps: &Array2<f64>) -> Result<f64> {
    assert_eq!(model.head(), DecoderHead::Bernoulli);
    vae_loss(model, x, eps)
}

/// Gaussian-head VAE loss (squared-error reconstruction).
pub fn vae_loss_gaussian(model: &VaeModel, x: &Array2<f64>, eps: &Array2<f64>) -> Result<f64> {
    assert_eq!(model.head(), DecoderHead::Gaussian);
    vae_loss(model, x, eps)
}

/// Squared cosine of two flat gradients, `(g_r·g_f / ‖g_r‖‖g_f‖)²`.
///
/// Defined as zero when either norm is below the degeneracy guard.
pub fn cosine_sq(g_r: &GradVector, g_f: &GradVector) -> f64 {
    let (nr, nf) = (norm(g_r), norm(g_f));
    if nr < DEGENERATE_NORM || nf < DEGENERATE_NORM {
        return 0.0;
    }
    let c = dot(g_r, g_f).expect("congruent layouts") / (nr * nf);
    c * c
}

/// KL divergence between Bernoulli(p_r) and the target Bernoulli(1−α).
///
/// `p_r` is clamped to `[ε_p, 1−ε_p]` before the logs, which makes the
/// value finite everywhere and zero (up to clamping error) at `p_r = 1−α`.
pub fn bernoulli_kl(p_r: f64, alpha: f64) -> f64 {
    debug_assert!(alpha > 0.0 && alpha < 0.5);
    let p = p_r.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    p * (p / (1.0 - alpha)).ln() + (1.0 - p) * ((1.0 - p) / alpha).ln()
}

/// Tape version of [`bernoulli_kl`] for a scalar node `p_r`.
pub fn bernoulli_kl_t(tape: &mut Tape, p_r: Var, alpha: f64) -> Var {
    let p = tape.clamp(p_r, PROB_CLAMP, 1.0 - PROB_CLAMP);
    let ln_p = tape.ln(p);
    let t1_inner = tape.add_scalar(ln_p, -(1.0 - alpha).ln());
    let t1 = tape.mul(p, t1_inner);
    let neg_p = tape.neg(p);
    let one_m = tape.add_scalar(neg_p, 1.0);
    let ln_1m = tape.ln(one_m);
    let t2_inner = tape.add_scalar(ln_1m, -alpha.ln());
    let t2 = tape.mul(one_m, t2_inner);
    tape.add(t1, t2)
}

/// Guidance subgraph: generate from fixed noise, score with the frozen
/// classifier, and form the Bernoulli KL toward `p_r = 1−α`.
pub struct GuidanceGraph {
    pub d_kl: Var,
    /// Mean retain probability at evaluation (diagnostic).
    pub p_r: f64,
}

pub fn guidance_dkl_t(
    tape: &mut Tape,
    model: &VaeModel,
    vars: &VaeVars,
    classifier: &ClassifierModel,
    z: &Array2<f64>,
    alpha: f64,
) -> GuidanceGraph {
    let zc = tape.constant(z.clone());
    let y = model.decode_t(tape, vars, zc);
    let cvars = classifier.vars_const(tape);
    let probs = classifier.prob_t(tape, &cvars, y);
    let p_r = tape.mean(probs);
    let p_r_value = tape.scalar(p_r);
    let d_kl = bernoulli_kl_t(tape, p_r, alpha);
    GuidanceGraph {
        d_kl,
        p_r: p_r_value,
    }
}

/// Mean retain probability over a batch of generated samples.
pub fn retain_probability(
    model: &VaeModel,
    classifier: &ClassifierModel,
    noise: &crate::models::NoiseBatch,
) -> Result<f64> {
    let y = model.generate(noise)?;
    let p = classifier.classify_prob(&y)?;
    Ok(p.sum() / p.len() as f64)
}

/// Retain and forget objectives on one tape, with the guidance KL folded
/// into both when active (the "hat" reading of the gradients).
pub struct ObjectivePair {
    pub retain_obj: Var,
    pub forget_obj: Var,
    pub retain_loss: f64,
    pub forget_loss: f64,
    pub d_kl: Option<f64>,
    pub p_r: Option<f64>,
}

/// Builds the per-batch objectives `L_r` and `L_f`; under guidance each
/// becomes `L + β_h·d_KL` with a shared KL subgraph, so gradients of both
/// carry the `β_h ∇d_KL` term.
#[allow(clippy::too_many_arguments)]
pub fn objective_pair_t(
    tape: &mut Tape,
    model: &VaeModel,
    vars: &VaeVars,
    retain_x: &Array2<f64>,
    forget_x: &Array2<f64>,
    eps_r: &Array2<f64>,
    eps_f: &Array2<f64>,
    guidance: Option<(&ClassifierModel, &Array2<f64>)>,
    cfg: &LossConfig,
) -> ObjectivePair {
    let xr = tape.constant(retain_x.clone());
    let er = tape.constant(eps_r.clone());
    let xf = tape.constant(forget_x.clone());
    let ef = tape.constant(eps_f.clone());

    let retain_base = vae_loss_t(tape, model, vars, xr, er);
    let retain_loss = tape.scalar(retain_base);
    let forget_base = vae_loss_t(tape, model, vars, xf, ef);
    let forget_loss = tape.scalar(forget_base);

    let beta_h = cfg.beta_h();
    let (retain_obj, forget_obj, d_kl, p_r) = match guidance {
        Some((classifier, z)) if beta_h != 0.0 => {
            let g = guidance_dkl_t(tape, model, vars, classifier, z, cfg.alpha);
            let d_kl_value = tape.scalar(g.d_kl);
            let weighted = tape.scale(g.d_kl, beta_h);
            let r = tape.add(retain_base, weighted);
            let f = tape.add(forget_base, weighted);
            (r, f, Some(d_kl_value), Some(g.p_r))
        }
        _ => (retain_base, forget_base, None, None),
    };
    ObjectivePair {
        retain_obj,
        forget_obj,
        retain_loss,
        forget_loss,
        d_kl,
        p_r,
    }
}

/// The orthogonality-regularized objective, with optional guidance.
///
/// Built on the caller's tape so the final scalar can be differentiated:
/// the retain objective (plus `β_h·d_KL` under guidance) is extended with
/// `β_o·cos²(g_r, g_f)` where both gradients are live tape expressions.
/// When either gradient is degenerate the regularizer and its gradient
/// are defined as zero, i.e. the term is omitted.
pub struct UnoGraph {
    /// The full scalar objective; differentiate this.
    pub loss: Var,
    /// Retain-batch training loss value (before regularizers).
    pub retain_loss: f64,
    /// Forget-batch training loss value.
    pub forget_loss: f64,
    /// Value of the squared cosine, when the term is active.
    pub cos_sq: Option<f64>,
    /// Value of the guidance KL, when guidance is active.
    pub d_kl: Option<f64>,
    /// Mean retain probability of generated samples, when guidance is active.
    pub p_r: Option<f64>,
}

#[allow(clippy::too_many_arguments)]
pub fn uno_graph(
    tape: &mut Tape,
    model: &VaeModel,
    vars: &VaeVars,
    retain_x: &Array2<f64>,
    forget_x: &Array2<f64>,
    eps_r: &Array2<f64>,
    eps_f: &Array2<f64>,
    guidance: Option<(&ClassifierModel, &Array2<f64>)>,
    cfg: &LossConfig,
) -> UnoGraph {
    let pair = objective_pair_t(
        tape, model, vars, retain_x, forget_x, eps_r, eps_f, guidance, cfg,
    );
    let ObjectivePair {
        retain_obj,
        forget_obj,
        retain_loss,
        forget_loss,
        d_kl,
        p_r,
    } = pair;

    let beta_o = cfg.beta_o();
    if beta_o == 0.0 {
        return UnoGraph {
            loss: retain_obj,
            retain_loss,
            forget_loss,
            cos_sq: None,
            d_kl,
            p_r,
        };
    }

    let param_vars = vars.all.clone();
    let g_r = tape.backward(retain_obj, &param_vars);
    let g_f_raw = tape.backward(forget_obj, &param_vars);
    let g_f: Vec<Var> = if cfg.stop_grad_forget {
        g_f_raw.iter().map(|v| tape.detach(*v)).collect()
    } else {
        g_f_raw
    };

    if vars_norm(tape, &g_r) < DEGENERATE_NORM || vars_norm(tape, &g_f) < DEGENERATE_NORM {
        return UnoGraph {
            loss: retain_obj,
            retain_loss,
            forget_loss,
            cos_sq: None,
            d_kl,
            p_r,
        };
    }

    let cos = cosine_sq_vars(tape, &g_r, &g_f);
    let cos_value = tape.scalar(cos);
    let weighted = tape.scale(cos, beta_o);
    let loss = tape.add(retain_obj, weighted);
    UnoGraph {
        loss,
        retain_loss,
        forget_loss,
        cos_sq: Some(cos_value),
        d_kl,
        p_r,
    }
}
