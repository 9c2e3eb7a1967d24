//! Frozen classifier `C_φ`: a shared tanh trunk with a binary
//! retain-vs-forget head and a 10-way class head.
//!
//! The binary probability guides classifier-aided unlearning and defines
//! the forget fraction; the 10-way head fills digit histograms; the trunk
//! activations are the feature embedding for Fréchet-distance scoring.

use std::sync::Arc;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::autodiff::{Layout, ParamVector, Tape, Var};
use crate::error::Result;

use super::{check_finite_arr, init_weight};

#[derive(Debug, Clone)]
pub struct ClassifierModel {
    params: ParamVector,
    input_dim: usize,
    hidden_dim: usize,
    n_classes: usize,
}

/// Tape leaves for one classifier evaluation.
#[derive(Debug, Clone)]
pub struct ClassifierVars {
    pub all: Vec<Var>,
}

impl ClassifierVars {
    fn trunk_w(&self) -> Var {
        self.all[0]
    }
    fn trunk_b(&self) -> Var {
        self.all[1]
    }
    fn bin_w(&self) -> Var {
        self.all[2]
    }
    fn bin_b(&self) -> Var {
        self.all[3]
    }
    fn multi_w(&self) -> Var {
        self.all[4]
    }
    fn multi_b(&self) -> Var {
        self.all[5]
    }
}

impl ClassifierModel {
    pub fn layout(input_dim: usize, hidden_dim: usize, n_classes: usize) -> Arc<Layout> {
        Layout::new(&[
            ("trunk.w", input_dim, hidden_dim),
            ("trunk.b", 1, hidden_dim),
            ("bin.w", hidden_dim, 1),
            ("bin.b", 1, 1),
            ("multi.w", hidden_dim, n_classes),
            ("multi.b", 1, n_classes),
        ])
    }

    pub fn new(input_dim: usize, hidden_dim: usize, n_classes: usize, seed: u64) -> Self {
        let layout = Self::layout(input_dim, hidden_dim, n_classes);
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut values = Vec::with_capacity(layout.total_len());
        for spec in layout.specs() {
            if spec.name.ends_with(".w") {
                values.extend(init_weight(&mut rng, spec.rows, spec.cols));
            } else {
                values.extend(std::iter::repeat(0.0).take(spec.len()));
            }
        }
        ClassifierModel {
            params: ParamVector::new(layout, values),
            input_dim,
            hidden_dim,
            n_classes,
        }
    }

    pub fn from_params(
        params: ParamVector,
        input_dim: usize,
        hidden_dim: usize,
        n_classes: usize,
    ) -> Self {
        ClassifierModel {
            params,
            input_dim,
            hidden_dim,
            n_classes,
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

    pub fn feature_dim(&self) -> usize {
        self.hidden_dim
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    /// FNV-1a over the parameter bit patterns; cheap frozen-contract check.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        for v in self.params.values() {
            for b in v.to_bits().to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
        }
        h
    }

    /// Differentiable leaves (training only).
    pub fn vars(&self, tape: &mut Tape) -> ClassifierVars {
        ClassifierVars {
            all: crate::autodiff::param_vars(tape, &self.params),
        }
    }

    /// Constant leaves: the frozen classifier as used during unlearning.
    /// Gradients still flow through the *input*.
    pub fn vars_const(&self, tape: &mut Tape) -> ClassifierVars {
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
        ClassifierVars { all }
    }

    /// Penultimate activations (the feature embedding).
    pub fn trunk_t(&self, tape: &mut Tape, vars: &ClassifierVars, x: Var) -> Var {
        let lin = tape.matmul(x, vars.trunk_w());
        let pre = tape.add_row(lin, vars.trunk_b());
        tape.tanh(pre)
    }

    /// Per-sample retain probability, shape (n, 1).
    pub fn prob_t(&self, tape: &mut Tape, vars: &ClassifierVars, x: Var) -> Var {
        let h = self.trunk_t(tape, vars, x);
        let lin = tape.matmul(h, vars.bin_w());
        let logit = tape.add_row(lin, vars.bin_b());
        tape.sigmoid(logit)
    }

    /// 10-way logits, shape (n, n_classes).
    pub fn multi_logits_t(&self, tape: &mut Tape, vars: &ClassifierVars, x: Var) -> Var {
        let h = self.trunk_t(tape, vars, x);
        let lin = tape.matmul(h, vars.multi_w());
        tape.add_row(lin, vars.multi_b())
    }

    /// Retain probabilities for a pixel batch, shape (n, 1).
    pub fn classify_prob(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        let mut tape = Tape::new();
        let vars = self.vars_const(&mut tape);
        let xv = tape.constant(x.clone());
        let p = self.prob_t(&mut tape, &vars, xv);
        let p = tape.value(p).clone();
        check_finite_arr(&p, "classifier probability")?;
        Ok(p)
    }

    /// Feature embedding for a pixel batch, shape (n, F).
    pub fn features(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        let mut tape = Tape::new();
        let vars = self.vars_const(&mut tape);
        let xv = tape.constant(x.clone());
        let h = self.trunk_t(&mut tape, &vars, xv);
        let h = tape.value(h).clone();
        check_finite_arr(&h, "classifier features")?;
        Ok(h)
    }

    /// 10-way logits for a pixel batch.
    pub fn multi_logits(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        let mut tape = Tape::new();
        let vars = self.vars_const(&mut tape);
        let xv = tape.constant(x.clone());
        let l = self.multi_logits_t(&mut tape, &vars, xv);
        let l = tape.value(l).clone();
        check_finite_arr(&l, "classifier logits")?;
        Ok(l)
    }

    /// Argmax class per sample.
    pub fn predict_class(&self, x: &Array2<f64>) -> Result<Vec<usize>> {
        let logits = self.multi_logits(x)?;
        Ok(logits
            .rows()
            .into_iter()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                    .map(|(i, _)| i)
                    .unwrap()
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn zero_head_classifier() -> ClassifierModel {
        // random trunk, zero binary head → probability exactly 0.5
        let mut m = ClassifierModel::new(6, 4, 10, 2);
        let spec = m.params().layout().spec("bin.w").clone();
        for v in &mut m.params_mut().values_mut()[spec.offset..spec.offset + spec.len()] {
            *v = 0.0;
        }
        m
    }

    #[test]
    fn zero_final_layer_gives_half_probability() {
        let m = zero_head_classifier();
        let x = Array2::from_elem((4, 6), 0.3);
        let p = m.classify_prob(&x).unwrap();
        assert!(p.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn probabilities_threshold_consistently() {
        let m = ClassifierModel::new(6, 4, 10, 7);
        let x = Array2::from_shape_fn((8, 6), |(i, j)| ((i * 7 + j) % 5) as f64 / 5.0);
        let p = m.classify_prob(&x).unwrap();
        let hard: Vec<bool> = p.iter().map(|&v| v >= 0.5).collect();
        let hard2: Vec<bool> = p.iter().map(|&v| !(v < 0.5)).collect();
        assert_eq!(hard, hard2);
        assert!(p.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn features_are_deterministic_with_fixed_shape() {
        let m = ClassifierModel::new(6, 4, 10, 9);
        let x = Array2::from_shape_fn((5, 6), |(i, j)| (i + j) as f64 / 10.0);
        let f1 = m.features(&x).unwrap();
        let f2 = m.features(&x).unwrap();
        assert_eq!(f1, f2);
        assert_eq!(f1.dim(), (5, 4));
    }

    #[test]
    fn checksum_tracks_parameter_changes() {
        let m = ClassifierModel::new(6, 4, 10, 1);
        let c1 = m.checksum();
        let mut m2 = m.clone();
        assert_eq!(c1, m2.checksum());
        m2.params_mut().values_mut()[0] += 1e-9;
        assert_ne!(c1, m2.checksum());
    }
}
