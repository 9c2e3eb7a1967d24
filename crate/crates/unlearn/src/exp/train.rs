//! Baseline training of the original VAE and the frozen classifier.
//!
//! Training uses Adam; only the *unlearning* rules are restricted to
//! plain `θ ± η·g` updates. The classifier trains its binary
//! retain/forget head and its 10-way class head jointly on a shared
//! trunk, with a held-out slice for accuracy reporting.

use std::path::Path;

use ndarray::Array2;
use rand::{seq::SliceRandom, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{collect_grad, GradVector, ParamVector, Tape, Var};
use crate::data::{load_idx, sample_normal, BatchStream, LabeledDataset};
use crate::error::{Error, Result};
use crate::losses::vae_loss_t;
use crate::models::{ClassifierModel, VaeModel};
use crate::rules::mix_seed;

use super::ExperimentConfig;

/// Standard Adam with bias correction.
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u32,
}

impl Adam {
    pub fn new(lr: f64, n_params: usize) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut ParamVector, grad: &GradVector) {
        self.t += 1;
        let b1t = 1.0 - self.beta1.powi(self.t as i32);
        let b2t = 1.0 - self.beta2.powi(self.t as i32);
        for ((p, g), (m, v)) in params
            .values_mut()
            .iter_mut()
            .zip(grad.values())
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let mhat = *m / b1t;
            let vhat = *v / b2t;
            *p -= self.lr * mhat / (vhat.sqrt() + self.eps);
        }
    }
}

/// Trains the original model on the full dataset with its configured
/// loss. Returns the model and the mean training loss of the last epoch.
pub fn train_vae(
    dataset: &LabeledDataset,
    cfg: &ExperimentConfig,
    seed: u64,
) -> Result<(VaeModel, f64)> {
    let input_dim = dataset.input_dim();
    let mut model = VaeModel::new(
        input_dim,
        cfg.vae.hidden_dim,
        cfg.vae.latent_dim,
        cfg.vae.head,
        mix_seed(seed, 10),
    );
    let mut stream = BatchStream::new((0..dataset.len()).collect(), mix_seed(seed, 11));
    let mut eps_rng = ChaCha12Rng::seed_from_u64(mix_seed(seed, 12));
    let mut adam = Adam::new(cfg.vae.learning_rate, model.n_params());

    let b = cfg.vae.batch_size;
    let batches_per_epoch = stream.epoch_len(b);
    let mut last_epoch_mean = f64::NAN;
    for _epoch in 0..cfg.vae.epochs {
        let mut epoch_sum = 0.0;
        for _ in 0..batches_per_epoch {
            let x = stream.next_images(dataset, b);
            let eps = sample_normal(&mut eps_rng, x.nrows(), cfg.vae.latent_dim);
            let mut tape = Tape::new();
            let vars = model.vars(&mut tape);
            let xc = tape.constant(x);
            let ec = tape.constant(eps);
            let loss = vae_loss_t(&mut tape, &model, &vars, xc, ec);
            let value = tape.scalar(loss);
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss);
            }
            epoch_sum += value;
            let g_vars = tape.backward(loss, &vars.all);
            let g = collect_grad(&tape, &g_vars, model.params()).check_finite()?;
            adam.step(model.params_mut(), &g);
        }
        last_epoch_mean = epoch_sum / batches_per_epoch as f64;
    }
    Ok((model, last_epoch_mean))
}

/// Softmax cross-entropy of logits against one-hot labels, with the
/// standard constant row-max shift (gradient-exact).
fn cross_entropy_t(tape: &mut Tape, logits: Var, onehot: &Array2<f64>) -> Var {
    let n = onehot.nrows();
    let rowmax = {
        let v = tape.value(logits);
        Array2::from_shape_fn((n, 1), |(i, _)| {
            v.row(i).iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        })
    };
    let rowmax = tape.constant(rowmax);
    let neg_max = tape.neg(rowmax);
    let shifted = tape.add_col(logits, neg_max);
    let e = tape.exp(shifted);
    let se = tape.sum_cols(e);
    let ln_se = tape.ln(se);
    let lse = tape.sub(ln_se, neg_max);
    let oh = tape.constant(onehot.clone());
    let picked = tape.mul(logits, oh);
    let z_y = tape.sum_cols(picked);
    let per_sample = tape.sub(lse, z_y);
    tape.mean(per_sample)
}

/// Binary cross-entropy of probabilities in (0,1) against 0/1 targets.
fn binary_cross_entropy_t(tape: &mut Tape, probs: Var, targets: &Array2<f64>) -> Var {
    let p = tape.clamp(probs, 1e-7, 1.0 - 1e-7);
    let ln_p = tape.ln(p);
    let neg_p = tape.neg(p);
    let one_m = tape.add_scalar(neg_p, 1.0);
    let ln_1m = tape.ln(one_m);
    let y = tape.constant(targets.clone());
    let neg_y = tape.neg(y);
    let one_m_y = tape.add_scalar(neg_y, 1.0);
    let t1 = tape.mul(y, ln_p);
    let t2 = tape.mul(one_m_y, ln_1m);
    let ll = tape.add(t1, t2);
    let m = tape.mean(ll);
    tape.neg(m)
}

/// Held-out accuracy report of the trained classifier.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ClassifierAccuracy {
    pub binary: f64,
    pub multiclass: f64,
}

/// Trains the retain/forget classifier (binary head + 10-way head on a
/// shared trunk) on a train split and reports held-out accuracy.
pub fn train_classifier(
    dataset: &LabeledDataset,
    cfg: &ExperimentConfig,
    seed: u64,
) -> Result<(ClassifierModel, ClassifierAccuracy)> {
    let input_dim = dataset.input_dim();
    let n_classes = 10;
    let mut model = ClassifierModel::new(
        input_dim,
        cfg.classifier.hidden_dim,
        n_classes,
        mix_seed(seed, 20),
    );

    // seeded train/holdout split
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut rng = ChaCha12Rng::seed_from_u64(mix_seed(seed, 21));
    order.shuffle(&mut rng);
    let holdout_n = ((dataset.len() as f64) * cfg.classifier.holdout_fraction).round() as usize;
    let holdout: Vec<usize> = order[..holdout_n].to_vec();
    let train: Vec<usize> = order[holdout_n..].to_vec();

    let forget = &cfg.data.forget_labels;
    let is_retain = |l: u8| !forget.contains(&l);

    let mut stream = BatchStream::new(train.clone(), mix_seed(seed, 22));
    let mut adam = Adam::new(cfg.classifier.learning_rate, model.params().len());
    let b = cfg.classifier.batch_size;
    let batches_per_epoch = stream.epoch_len(b);

    for _epoch in 0..cfg.classifier.epochs {
        for _ in 0..batches_per_epoch {
            let idx = stream.next_batch(b);
            let x = dataset.gather(&idx);
            let bin_targets = Array2::from_shape_fn((idx.len(), 1), |(i, _)| {
                if is_retain(dataset.labels[idx[i]]) {
                    1.0
                } else {
                    0.0
                }
            });
            let onehot = Array2::from_shape_fn((idx.len(), n_classes), |(i, j)| {
                if dataset.labels[idx[i]] as usize == j {
                    1.0
                } else {
                    0.0
                }
            });

            let mut tape = Tape::new();
            let vars = model.vars(&mut tape);
            let xc = tape.constant(x);
            let probs = model.prob_t(&mut tape, &vars, xc);
            let bce = binary_cross_entropy_t(&mut tape, probs, &bin_targets);
            let logits = model.multi_logits_t(&mut tape, &vars, xc);
            let ce = cross_entropy_t(&mut tape, logits, &onehot);
            let loss = tape.add(bce, ce);
            if !tape.scalar(loss).is_finite() {
                return Err(Error::NonFiniteLoss);
            }
            let g_vars = tape.backward(loss, &vars.all);
            let g = collect_grad(&tape, &g_vars, model.params()).check_finite()?;
            adam.step(model.params_mut(), &g);
        }
    }

    // held-out accuracy
    let hx = dataset.gather(&holdout);
    let probs = model.classify_prob(&hx)?;
    let classes = model.predict_class(&hx)?;
    let mut bin_ok = 0usize;
    let mut multi_ok = 0usize;
    for (i, &idx) in holdout.iter().enumerate() {
        let label = dataset.labels[idx];
        let retain = is_retain(label);
        if (probs[(i, 0)] >= 0.5) == retain {
            bin_ok += 1;
        }
        if classes[i] == label as usize {
            multi_ok += 1;
        }
    }
    let acc = ClassifierAccuracy {
        binary: bin_ok as f64 / holdout.len() as f64,
        multiclass: multi_ok as f64 / holdout.len() as f64,
    };
    Ok((model, acc))
}

/// What `train` writes next to the checkpoints.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub n_samples: usize,
    pub input_dim: usize,
    pub vae_params: usize,
    pub classifier_params: usize,
    pub vae_final_epoch_loss: f64,
    pub classifier_accuracy: ClassifierAccuracy,
    pub master_seed: u64,
}

/// Loads data, applies desk-scale subsetting, trains both models, and
/// writes `vae.ckpt`, `classifier.ckpt`, and `training_summary.json`.
pub fn cmd_train(cfg: &ExperimentConfig, out_dir: &Path) -> Result<TrainingSummary> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let dataset = load_dataset(cfg)?;

    let (vae, vae_loss) = train_vae(&dataset, cfg, cfg.master_seed)?;
    let (classifier, acc) = train_classifier(&dataset, cfg, cfg.master_seed)?;

    vae.save(&out_dir.join("vae.ckpt"))?;
    classifier.save(&out_dir.join("classifier.ckpt"))?;

    let summary = TrainingSummary {
        n_samples: dataset.len(),
        input_dim: dataset.input_dim(),
        vae_params: vae.n_params(),
        classifier_params: classifier.params().len(),
        vae_final_epoch_loss: vae_loss,
        classifier_accuracy: acc,
        master_seed: cfg.master_seed,
    };
    std::fs::write(
        out_dir.join("training_summary.json"),
        serde_json::to_vec_pretty(&summary).expect("serializable"),
    )?;
    Ok(summary)
}

/// Loads and (when configured) subsets the dataset.
pub fn load_dataset(cfg: &ExperimentConfig) -> Result<LabeledDataset> {
    let ds = load_idx(&cfg.data.images, &cfg.data.labels)?;
    Ok(match cfg.data.subset {
        Some(n) if n < ds.len() => ds.seeded_subset(n, mix_seed(cfg.master_seed, 30)),
        _ => ds,
    })
}
