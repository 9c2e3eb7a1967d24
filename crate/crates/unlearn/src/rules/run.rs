//! The unlearning run loop: seeded batch streams, timed updates, per-step
//! monitoring, and divergence handling.

use std::time::Instant;

use ndarray::Array2;
use rand_chacha::ChaCha12Rng;

use crate::data::{sample_normal, BatchStream, LabeledDataset, Partition};
use crate::error::{Error, Result};
use crate::metrics::{forget_fraction, RunRecord, StepRecord};
use crate::models::{ClassifierModel, VaeModel};

use super::{mix_seed, unlearn_step, UnlearnConfig};

/// Mutable state advanced by each update step. Given the run seed and
/// config, advancing it is fully deterministic.
pub struct StepState {
    /// 1-based index of the next step.
    pub k: usize,
    pub model: VaeModel,
    pub retain_stream: BatchStream,
    pub forget_stream: BatchStream,
    pub(crate) eps_rng: ChaCha12Rng,
    pub(crate) gen_rng: ChaCha12Rng,
}

impl StepState {
    pub fn new(
        cfg: &UnlearnConfig,
        model: VaeModel,
        partition: &Partition,
    ) -> Self {
        use rand::SeedableRng;
        StepState {
            k: 1,
            model,
            retain_stream: BatchStream::new(
                partition.retain_indices.clone(),
                mix_seed(cfg.seed, 1),
            ),
            forget_stream: BatchStream::new(
                partition.forget_indices.clone(),
                mix_seed(cfg.seed, 2),
            ),
            eps_rng: ChaCha12Rng::seed_from_u64(mix_seed(cfg.seed, 3)),
            gen_rng: ChaCha12Rng::seed_from_u64(mix_seed(cfg.seed, 4)),
        }
    }
}

/// A finished (or aborted) run: the trajectory record plus the final
/// parameters. On divergence the model is the last finite state.
pub struct RunOutput {
    pub record: RunRecord,
    pub model: VaeModel,
}

/// Executes `cfg.steps` updates of the configured algorithm, recording
/// after each step the forget fraction over `cfg.n_monitor` generated
/// samples and the cumulative update-only wall time.
///
/// Monitoring, batch acquisition, and diagnostics run outside the timer:
/// the timed region is gradient computation plus the parameter update.
/// A non-finite gradient aborts the run, keeping the partial trajectory
/// and the last finite parameters.
pub fn run(
    cfg: &UnlearnConfig,
    model: &VaeModel,
    classifier: &ClassifierModel,
    dataset: &LabeledDataset,
    partition: &Partition,
    run_id: &str,
) -> Result<RunOutput> {
    cfg.validate()?;
    let classifier_checksum = classifier.checksum();
    let guided = cfg.algorithm.guided() && cfg.loss.beta_h() != 0.0;
    let b = cfg.loss.batch_size;
    let dz = model.latent_dim();

    let mut state = StepState::new(cfg, model.clone(), partition);
    let mut record = RunRecord {
        run_id: run_id.to_string(),
        algorithm: cfg.algorithm.name().to_string(),
        seed: cfg.seed,
        steps: Vec::with_capacity(cfg.steps),
        diverged_at: None,
        fid_before: None,
        fid_after: None,
    };
    let mut cum_time = 0.0f64;
    let mut last_good = state.model.params().clone();

    for k in 1..=cfg.steps {
        state.k = k;
        let retain_x = state.retain_stream.next_images(dataset, b);
        let forget_x = state.forget_stream.next_images(dataset, b);
        let eps_r = sample_normal(&mut state.eps_rng, retain_x.nrows(), dz);
        let eps_f = sample_normal(&mut state.eps_rng, forget_x.nrows(), dz);
        let gen_z: Option<Array2<f64>> = if guided {
            Some(sample_normal(&mut state.gen_rng, cfg.loss.n_generate, dz))
        } else {
            None
        };

        let started = Instant::now();
        let stepped = unlearn_step(
            cfg.algorithm,
            k,
            &mut state.model,
            classifier,
            &retain_x,
            &forget_x,
            &eps_r,
            &eps_f,
            gen_z.as_ref(),
            &cfg.loss,
            cfg.eta,
        );
        let elapsed = started.elapsed().as_secs_f64();

        let outcome = match stepped {
            Ok(o) => o,
            Err(Error::NonFiniteGradient { .. }) => {
                record.diverged_at = Some(k);
                break;
            }
            Err(e) => return Err(e),
        };
        cum_time += elapsed;

        // diagnostics and monitoring, outside the timed region
        let retain_loss = match outcome.retain_loss {
            Some(v) => v,
            None => crate::losses::vae_loss(&state.model, &retain_x, &eps_r)
                .unwrap_or(f64::NAN),
        };
        let fraction = match forget_fraction(
            &state.model,
            classifier,
            cfg.n_monitor,
            mix_seed(cfg.seed, 1000 + k as u64),
        ) {
            Ok(f) => f,
            Err(Error::NonFiniteActivation(_)) => {
                // parameters blew past representable range between the
                // finite-gradient check and generation
                record.diverged_at = Some(k);
                state.model =
                    VaeModel::from_params(
                        last_good.clone(),
                        state.model.input_dim(),
                        state.model.hidden_dim(),
                        state.model.latent_dim(),
                        state.model.head(),
                    );
                break;
            }
            Err(e) => return Err(e),
        };
        last_good = state.model.params().clone();

        record.steps.push(StepRecord {
            step: k,
            forget_fraction: fraction,
            cum_update_time_s: cum_time,
            retain_loss,
            extra: outcome.extra,
        });

        if cfg.stop_at_threshold && fraction < cfg.threshold {
            break;
        }
    }

    assert_eq!(
        classifier.checksum(),
        classifier_checksum,
        "classifier must stay frozen across a run"
    );

    Ok(RunOutput {
        record,
        model: state.model,
    })
}
