//! The `unlearn` subcommand: seeded repeats of every configured
//! algorithm, per-run CSV/JSON artifacts, and the aggregate report.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{partition_by_label, LabeledDataset, Partition};
use crate::error::{Error, Result};
use crate::metrics::{fid, RunRecord};
use crate::models::{ClassifierModel, VaeModel};
use crate::rules::{mix_seed, run, Algorithm, UnlearnConfig};

use super::report::{aggregate, AggregateReport};
use super::train::load_dataset;
use super::ExperimentConfig;

/// Per-run JSON summary, written next to the trajectory CSV.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub run_id: String,
    pub algorithm: String,
    pub run_index: usize,
    pub seed: u64,
    pub threshold: f64,
    pub reached: bool,
    pub time_to_unlearn: Option<f64>,
    pub steps_to_threshold: Option<usize>,
    pub total_update_time_s: f64,
    pub time_per_step_s: f64,
    pub steps_executed: usize,
    pub diverged_at: Option<usize>,
    pub final_forget_fraction: Option<f64>,
    pub fid_before: f64,
    pub fid_after: Option<f64>,
    pub config: UnlearnConfig,
}

/// Everything a sweep produced, for callers that want to keep going
/// in-process (tests, plots).
pub struct SweepArtifacts {
    pub out_dir: PathBuf,
    pub summaries: Vec<RunSummary>,
    pub records: Vec<RunRecord>,
    pub aggregate: AggregateReport,
}

fn write_run_csv(path: &Path, record: &RunRecord) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "run_id",
        "algorithm",
        "step",
        "forget_fraction",
        "cum_update_time_s",
        "retain_loss",
        "extra_loss_terms",
    ])
    .map_err(csv_err)?;
    for s in &record.steps {
        let extra = s
            .extra
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect::<Vec<_>>()
            .join(";");
        w.write_record([
            record.run_id.as_str(),
            record.algorithm.as_str(),
            &s.step.to_string(),
            &s.forget_fraction.to_string(),
            &s.cum_update_time_s.to_string(),
            &s.retain_loss.to_string(),
            &extra,
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// One seeded run plus its FID-after evaluation and artifact files.
#[allow(clippy::too_many_arguments)]
fn execute_run(
    cfg: &ExperimentConfig,
    algorithm: Algorithm,
    run_index: usize,
    model: &VaeModel,
    classifier: &ClassifierModel,
    dataset: &LabeledDataset,
    partition: &Partition,
    fid_before: f64,
    runs_dir: &Path,
) -> Result<(RunSummary, RunRecord)> {
    let ucfg = cfg.unlearn_config(algorithm, run_index);
    let run_id = format!("{}-{:02}", algorithm.name(), run_index);
    let output = run(&ucfg, model, classifier, dataset, partition, &run_id)?;
    let mut record = output.record;
    record.fid_before = Some(fid_before);

    let fid_after = fid(
        &output.model,
        classifier,
        &dataset.images,
        cfg.eval.n_fid,
        mix_seed(ucfg.seed, 60),
    )
    .ok();
    record.fid_after = fid_after;

    let algo_dir = runs_dir.join(algorithm.name());
    std::fs::create_dir_all(&algo_dir)?;
    write_run_csv(&algo_dir.join(format!("run_{run_index:02}.csv")), &record)?;

    let summary = RunSummary {
        run_id: run_id.clone(),
        algorithm: algorithm.name().to_string(),
        run_index,
        seed: ucfg.seed,
        threshold: ucfg.threshold,
        reached: record.time_to_unlearn(ucfg.threshold).is_some(),
        time_to_unlearn: record.time_to_unlearn(ucfg.threshold),
        steps_to_threshold: record.steps_to_threshold(ucfg.threshold),
        total_update_time_s: record
            .steps
            .last()
            .map(|s| s.cum_update_time_s)
            .unwrap_or(0.0),
        time_per_step_s: record.time_per_step(),
        steps_executed: record.steps.len(),
        diverged_at: record.diverged_at,
        final_forget_fraction: record.steps.last().map(|s| s.forget_fraction),
        fid_before,
        fid_after,
        config: ucfg,
    };
    std::fs::write(
        algo_dir.join(format!("run_{run_index:02}.json")),
        serde_json::to_vec_pretty(&summary).expect("serializable"),
    )?;
    Ok((summary, record))
}

/// Runs `repeats` seeded runs of every configured algorithm against the
/// checkpoints in `out_dir`, writing per-run artifacts and the aggregate.
///
/// Individual failed runs (non-finite gradients) are kept as partial
/// trajectories; hard errors (missing files, bad configs) abort the
/// sweep.
pub fn cmd_unlearn(cfg: &ExperimentConfig, out_dir: &Path, workers: usize) -> Result<SweepArtifacts> {
    cfg.validate()?;
    let model = VaeModel::load(&out_dir.join("vae.ckpt"))?;
    let classifier = ClassifierModel::load(&out_dir.join("classifier.ckpt"))?;
    let dataset = load_dataset(cfg)?;
    let partition = partition_by_label(&dataset, &cfg.data.forget_labels)?;

    let fid_before = fid(
        &model,
        &classifier,
        &dataset.images,
        cfg.eval.n_fid,
        mix_seed(cfg.master_seed, 40),
    )?;

    let runs_dir = out_dir.join("runs");
    std::fs::create_dir_all(&runs_dir)?;

    let jobs: Vec<(Algorithm, usize)> = cfg
        .unlearn
        .algorithms
        .iter()
        .flat_map(|&a| (0..cfg.unlearn.repeats).map(move |i| (a, i)))
        .collect();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let results: Vec<Result<(RunSummary, RunRecord)>> = pool.install(|| {
        jobs.par_iter()
            .map(|&(alg, idx)| {
                execute_run(
                    cfg, alg, idx, &model, &classifier, &dataset, &partition, fid_before,
                    &runs_dir,
                )
            })
            .collect()
    });

    let mut summaries = Vec::with_capacity(results.len());
    let mut records = Vec::with_capacity(results.len());
    for r in results {
        let (s, rec) = r?;
        summaries.push(s);
        records.push(rec);
    }
    // deterministic artifact order regardless of scheduling
    summaries.sort_by(|a, b| (&a.algorithm, a.run_index).cmp(&(&b.algorithm, b.run_index)));
    records.sort_by(|a, b| a.run_id.cmp(&b.run_id));

    let aggregate = aggregate(cfg, &summaries);
    std::fs::write(
        out_dir.join("aggregate.json"),
        serde_json::to_vec_pretty(&aggregate).expect("serializable"),
    )?;
    std::fs::write(out_dir.join("aggregate.txt"), aggregate.to_table())?;

    Ok(SweepArtifacts {
        out_dir: out_dir.to_path_buf(),
        summaries,
        records,
        aggregate,
    })
}
