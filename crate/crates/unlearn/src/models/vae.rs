//! Variational autoencoder with a two-layer MLP encoder and decoder.
//!
//! The encoder maps a pixel batch to `(μ, s)` where `s` is an
//! unconstrained half-log-variance head; `σ = exp(s)` is strictly
//! positive by construction. The decoder maps latent codes back to pixel
//! space, through a sigmoid for the Bernoulli head or linearly for the
//! Gaussian head.

use std::sync::Arc;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Layout, ParamVector, Tape, Var};
use crate::error::Result;

use super::{check_finite_arr, init_weight, NoiseBatch};

/// Output distribution of the decoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecoderHead {
    /// Per-pixel Bernoulli parameters in (0,1); binary-cross-entropy
    /// reconstruction.
    Bernoulli,
    /// Unbounded pixel means; squared-error reconstruction.
    Gaussian,
}

/// The model `M_θ` subject to unlearning.
#[derive(Debug, Clone)]
pub struct VaeModel {
    params: ParamVector,
    input_dim: usize,
    hidden_dim: usize,
    latent_dim: usize,
    head: DecoderHead,
}

/// Tape leaves for one evaluation of the VAE, in canonical layout order.
#[derive(Debug, Clone)]
pub struct VaeVars {
    pub all: Vec<Var>,
}

impl VaeVars {
    fn enc_w1(&self) -> Var {
        self.all[0]
    }
    fn enc_b1(&self) -> Var {
        self.all[1]
    }
    fn enc_wmu(&self) -> Var {
        self.all[2]
    }
    fn enc_bmu(&self) -> Var {
        self.all[3]
    }
    fn enc_ws(&self) -> Var {
        self.all[4]
    }
    fn enc_bs(&self) -> Var {
        self.all[5]
    }
    fn dec_w1(&self) -> Var {
        self.all[6]
    }
    fn dec_b1(&self) -> Var {
        self.all[7]
    }
    fn dec_w2(&self) -> Var {
        self.all[8]
    }
    fn dec_b2(&self) -> Var {
        self.all[9]
    }
}

impl VaeModel {
    pub fn layout(input_dim: usize, hidden_dim: usize, latent_dim: usize) -> Arc<Layout> {
        Layout::new(&[
            ("enc.w1", input_dim, hidden_dim),
            ("enc.b1", 1, hidden_dim),
            ("enc.wmu", hidden_dim, latent_dim),
            ("enc.bmu", 1, latent_dim),
            ("enc.ws", hidden_dim, latent_dim),
            ("enc.bs", 1, latent_dim),
            ("dec.w1", latent_dim, hidden_dim),
            ("dec.b1", 1, hidden_dim),
            ("dec.w2", hidden_dim, input_dim),
            ("dec.b2", 1, input_dim),
        ])
    }

    /// Fresh model with seeded 1/√fan_in normal weights and zero biases.
    pub fn new(
        input_dim: usize,
        hidden_dim: usize,
        latent_dim: usize,
        head: DecoderHead,
        seed: u64,
    ) -> Self {
        let layout = Self::layout(input_dim, hidden_dim, latent_dim);
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut values = Vec::with_capacity(layout.total_len());
        for spec in layout.specs() {
            if spec.name.ends_with(".w1") || spec.name.ends_with(".w2") || spec.name.contains("wmu") || spec.name.contains("ws") {
                values.extend(init_weight(&mut rng, spec.rows, spec.cols));
            } else {
                values.extend(std::iter::repeat(0.0).take(spec.len()));
            }
        }
        VaeModel {
            params: ParamVector::new(layout, values),
            input_dim,
            hidden_dim,
            latent_dim,
            head,
        }
    }

    pub fn from_params(
        params: ParamVector,
        input_dim: usize,
        hidden_dim: usize,
        latent_dim: usize,
        head: DecoderHead,
    ) -> Self {
        assert_eq!(
            params.layout().total_len(),
            Self::layout(input_dim, hidden_dim, latent_dim).total_len()
        );
        VaeModel {
            params,
            input_dim,
            hidden_dim,
            latent_dim,
            head,
        }
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamVector {
        &mut self.params
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn head(&self) -> DecoderHead {
        self.head
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    /// Registers the parameters as differentiable tape leaves.
    pub fn vars(&self, tape: &mut Tape) -> VaeVars {
        VaeVars {
            all: crate::autodiff::param_vars(tape, &self.params),
        }
    }

    /// Registers the parameters as constants (evaluation only).
    pub fn vars_const(&self, tape: &mut Tape) -> VaeVars {
        let all = self
            .params
            .layout()
            .specs()
            .iter()
            .map(|spec| {
                let arr = Array2::from_shape_vec(
                    (spec.rows, spec.cols),
                    self.params.tensor(spec).to_vec(),
                )
                .expect("layout consistent");
                tape.constant(arr)
            })
            .collect();
        VaeVars { all }
    }

    /// Encoder on the tape: pixel batch → `(μ, s)` with `σ = exp(s)`.
    pub fn encode_t(&self, tape: &mut Tape, vars: &VaeVars, x: Var) -> (Var, Var) {
        let lin = tape.matmul(x, vars.enc_w1());
        let pre = tape.add_row(lin, vars.enc_b1());
        let h = tape.tanh(pre);
        let mu_lin = tape.matmul(h, vars.enc_wmu());
        let mu = tape.add_row(mu_lin, vars.enc_bmu());
        let s_lin = tape.matmul(h, vars.enc_ws());
        let s = tape.add_row(s_lin, vars.enc_bs());
        (mu, s)
    }

    /// Decoder on the tape: latent batch → pixel batch.
    pub fn decode_t(&self, tape: &mut Tape, vars: &VaeVars, z: Var) -> Var {
        let lin = tape.matmul(z, vars.dec_w1());
        let pre = tape.add_row(lin, vars.dec_b1());
        let h = tape.tanh(pre);
        let out_lin = tape.matmul(h, vars.dec_w2());
        let logits = tape.add_row(out_lin, vars.dec_b2());
        match self.head {
            DecoderHead::Bernoulli => tape.sigmoid(logits),
            DecoderHead::Gaussian => logits,
        }
    }

    /// `(μ, σ)` for a pixel batch; `σ` strictly positive.
    pub fn encode(&self, x: &Array2<f64>) -> Result<(Array2<f64>, Array2<f64>)> {
        let mut tape = Tape::new();
        let vars = self.vars_const(&mut tape);
        let xv = tape.constant(x.clone());
        let (mu, s) = self.encode_t(&mut tape, &vars, xv);
        let sigma = tape.exp(s);
        let mu = tape.value(mu).clone();
        let sigma = tape.value(sigma).clone();
        check_finite_arr(&mu, "encoder mean")?;
        check_finite_arr(&sigma, "encoder sigma")?;
        Ok((mu, sigma))
    }

    /// Reconstruction/generation for a latent batch.
    pub fn decode(&self, z: &Array2<f64>) -> Result<Array2<f64>> {
        let mut tape = Tape::new();
        let vars = self.vars_const(&mut tape);
        let zv = tape.constant(z.clone());
        let out = self.decode_t(&mut tape, &vars, zv);
        let out = tape.value(out).clone();
        check_finite_arr(&out, "decoder output")?;
        Ok(out)
    }

    /// Samples from the model: decode a batch of prior draws.
    pub fn generate(&self, noise: &NoiseBatch) -> Result<Array2<f64>> {
        assert_eq!(noise.z.ncols(), self.latent_dim, "noise dim must match d_z");
        self.decode(&noise.z)
    }
}

/// `z = μ + σ⊙ε`, the standard reparameterization.
pub fn reparameterize(
    mu: &Array2<f64>,
    sigma: &Array2<f64>,
    eps: &Array2<f64>,
) -> Array2<f64> {
    assert_eq!(mu.dim(), sigma.dim());
    assert_eq!(mu.dim(), eps.dim());
    mu + &(sigma * eps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn zero_model() -> VaeModel {
        let layout = VaeModel::layout(6, 4, 2);
        VaeModel::from_params(
            ParamVector::zeros(layout),
            6,
            4,
            2,
            DecoderHead::Bernoulli,
        )
    }

    #[test]
    fn zero_weight_encoder_gives_standard_posterior() {
        let m = zero_model();
        let x = Array2::from_elem((3, 6), 0.7);
        let (mu, sigma) = m.encode(&x).unwrap();
        assert!(mu.iter().all(|&v| v == 0.0));
        assert!(sigma.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn identical_inputs_give_identical_rows() {
        let m = VaeModel::new(6, 4, 2, DecoderHead::Bernoulli, 3);
        let mut x = Array2::zeros((2, 6));
        for j in 0..6 {
            x[(0, j)] = 0.1 * j as f64;
            x[(1, j)] = 0.1 * j as f64;
        }
        let (mu, sigma) = m.encode(&x).unwrap();
        assert_eq!(mu.row(0), mu.row(1));
        assert_eq!(sigma.row(0), sigma.row(1));
    }

    #[test]
    fn random_draws_stay_finite_with_positive_sigma() {
        let mut rng = ChaCha12Rng::seed_from_u64(17);
        for trial in 0..100 {
            let m = VaeModel::new(6, 4, 2, DecoderHead::Bernoulli, trial);
            let x = Array2::from_shape_fn((2, 6), |_| rng.gen::<f64>());
            let (mu, sigma) = m.encode(&x).unwrap();
            assert!(mu.iter().all(|v| v.is_finite()));
            assert!(sigma.iter().all(|&v| v > 0.0 && v.is_finite()));
        }
    }

    #[test]
    fn reparameterize_is_exact() {
        let mu = Array2::from_shape_vec((1, 2), vec![1.0, 2.0]).unwrap();
        let sigma = Array2::from_shape_vec((1, 2), vec![2.0, 1.0]).unwrap();
        let eps = Array2::from_shape_vec((1, 2), vec![0.5, -1.0]).unwrap();
        let z = reparameterize(&mu, &sigma, &eps);
        assert_eq!(z, Array2::from_shape_vec((1, 2), vec![2.0, 1.0]).unwrap());

        let zeros = Array2::zeros((1, 2));
        assert_eq!(reparameterize(&mu, &sigma, &zeros), mu);

        let ones = Array2::ones((1, 2));
        assert_eq!(reparameterize(&zeros, &ones, &eps), eps);
    }

    #[test]
    fn zero_weight_decoder_outputs_half() {
        let m = zero_model();
        let z = Array2::from_shape_vec((2, 2), vec![0.3, -0.7, 1.5, 0.0]).unwrap();
        let x = m.decode(&z).unwrap();
        assert!(x.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn decode_is_deterministic_and_in_unit_interval() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        for trial in 0..100 {
            let m = VaeModel::new(6, 4, 2, DecoderHead::Bernoulli, 1000 + trial);
            let z = Array2::from_shape_fn((3, 2), |_| rng.gen::<f64>() * 2.0 - 1.0);
            let a = m.decode(&z).unwrap();
            let b = m.decode(&z).unwrap();
            assert_eq!(a, b);
            assert!(a.iter().all(|&v| v > 0.0 && v < 1.0));
        }
    }

    #[test]
    fn generate_is_pure_in_seed_and_params() {
        let m = VaeModel::new(6, 4, 2, DecoderHead::Bernoulli, 11);
        let n1 = NoiseBatch::sample(500, 2, 99);
        let n2 = NoiseBatch::sample(500, 2, 99);
        let a = m.generate(&n1).unwrap();
        let b = m.generate(&n2).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.dim(), (500, 6));
    }

    #[test]
    fn gaussian_head_is_unbounded() {
        let layout = VaeModel::layout(4, 3, 2);
        let mut params = ParamVector::zeros(layout);
        // bias the output layer above 1 to show the head is linear
        let spec = params.layout().spec("dec.b2").clone();
        for v in &mut params.values_mut()[spec.offset..spec.offset + spec.len()] {
            *v = 2.5;
        }
        let m = VaeModel::from_params(params, 4, 3, 2, DecoderHead::Gaussian);
        let z = Array2::zeros((1, 2));
        let x = m.decode(&z).unwrap();
        assert!(x.iter().all(|&v| v == 2.5));
    }
}
