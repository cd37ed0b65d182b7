//! Subcommand implementations. Each command validates everything it can
//! before creating the output directory, so configuration mistakes never
//! leave half-written runs behind; failures after that point are runtime
//! errors.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use stochacq::active::{
    run_experiment, summarize, write_aggregate_csv, write_records_jsonl, write_summary_csv,
    LoopConfig, RunRecord,
};
use stochacq::datasets::{make_splits, write_csv, Dataset};
use stochacq::diagnostics::{
    bench_acquisition, frozen_score_replay, rank_trajectory, score_distribution, RankSubset,
};
use stochacq::rng::RngState;
use stochacq::sampling::{PolicyKind, ScoreVector};

use crate::config::{policy_for, Config};
use crate::output::{
    create_out_dir, file_writer, io_error, write_bench_csv, write_bench_slopes_csv,
    write_frozen_csv, write_rank_csv, write_scoredist_csv, write_text, Metadata,
};
use crate::{CliError, DiagnoseKind};

const SUMMARY_NOTE: &str =
    "# ci=95% normal approximation, half-width 1.96*sd/sqrt(n)\n";

fn runtime(e: stochacq::Error) -> CliError {
    CliError::runtime(e.to_string())
}

fn make_out_dir(config: &Config) -> Result<(PathBuf, String), CliError> {
    let hash = config.hash()?;
    let dir = create_out_dir(&config.run.out_dir, &hash)
        .map_err(io_error("creating output directory"))?;
    write_text(&dir.join("config.toml"), &config.snapshot_toml()?)?;
    Ok((dir, hash))
}

fn write_experiment_outputs(
    dir: &Path,
    trials: &[Vec<RunRecord>],
) -> Result<(), CliError> {
    let records_path = dir.join("records.jsonl");
    write_records_jsonl(trials, file_writer(&records_path)?).map_err(runtime)?;
    let aggregate_path = dir.join("aggregate.csv");
    write_aggregate_csv(trials, file_writer(&aggregate_path)?).map_err(runtime)?;
    let summary_path = dir.join("summary.csv");
    let mut w = file_writer(&summary_path)?;
    w.write_all(SUMMARY_NOTE.as_bytes())
        .map_err(io_error("writing summary.csv"))?;
    write_summary_csv(&summarize(trials), w).map_err(runtime)?;
    Ok(())
}

pub fn cmd_run(config: &Config) -> Result<PathBuf, CliError> {
    let (dataset, loop_config) = config.prepare_experiment()?;
    let (dir, hash) = make_out_dir(config)?;
    log::info!(
        "run {hash}: {} on {}, {} trials x {} steps",
        loop_config.policy.descriptor(),
        dataset.name(),
        config.run.trials,
        loop_config.num_steps
    );
    let trials = run_experiment(
        &dataset,
        &config.split_spec(),
        &loop_config,
        config.run.trials,
        &RngState::new(config.run.seed),
    )
    .map_err(runtime)?;
    write_experiment_outputs(&dir, &trials)?;
    Ok(dir)
}

const ABLATION_KINDS: [PolicyKind; 3] =
    [PolicyKind::Softmax, PolicyKind::Power, PolicyKind::SoftRank];

pub fn cmd_ablate_beta(config: &Config, betas: &[f64]) -> Result<PathBuf, CliError> {
    if betas.is_empty() {
        return Err(CliError::config("betas: at least one coldness value required"));
    }
    if let Some(bad) = betas.iter().find(|b| !(**b >= 0.0 && b.is_finite())) {
        return Err(CliError::config(format!(
            "betas: {bad} is not a finite nonnegative coldness"
        )));
    }
    let (dataset, base) = config.prepare_experiment()?;
    let (dir, hash) = make_out_dir(config)?;
    log::info!(
        "ablation {hash}: {} stochastic policies x {} coldness values",
        ABLATION_KINDS.len(),
        betas.len()
    );

    let mut merged: Vec<Vec<RunRecord>> = Vec::new();
    let mut summary_arms = Vec::new();
    for kind in ABLATION_KINDS {
        for &beta in betas {
            let policy = policy_for(kind, beta)
                .map_err(|e| CliError::config(format!("betas: {e}")))?;
            let arm = LoopConfig { policy, ..base.clone() };
            log::info!("ablation arm {}", arm.policy.descriptor());
            let trials = run_experiment(
                &dataset,
                &config.split_spec(),
                &arm,
                config.run.trials,
                &RngState::new(config.run.seed),
            )
            .map_err(runtime)?;
            summary_arms.push((kind, beta, summarize(&trials)));
            merged.extend(trials);
        }
    }
    write_experiment_outputs(&dir, &merged)?;

    // The merged summary gains leading policy/beta key columns.
    let path = dir.join("ablate_summary.csv");
    let mut w = file_writer(&path)?;
    w.write_all(SUMMARY_NOTE.as_bytes()).map_err(io_error("writing ablate_summary.csv"))?;
    let mut csv = csv::Writer::from_writer(w);
    let csv_err = |e: csv::Error| CliError::runtime(format!("writing ablate_summary.csv: {e}"));
    csv.write_record([
        "policy",
        "beta",
        "step",
        "train_size",
        "n_trials",
        "mean_accuracy",
        "ci95_accuracy",
        "mean_macro_f1",
        "ci95_macro_f1",
    ])
    .map_err(csv_err)?;
    for (kind, beta, rows) in &summary_arms {
        for r in rows {
            csv.write_record(&[
                kind.name().to_string(),
                format!("{beta}"),
                r.step.to_string(),
                r.train_size.to_string(),
                r.n_trials.to_string(),
                format!("{}", r.mean_accuracy),
                format!("{}", r.ci95_accuracy),
                format!("{}", r.mean_macro_f1),
                format!("{}", r.ci95_macro_f1),
            ])
            .map_err(csv_err)?;
        }
    }
    csv.flush().map_err(io_error("flushing ablate_summary.csv"))?;
    Ok(dir)
}

/// Pool size left after the trial-0 split, for pre-run budget checks.
fn trial0_pool(config: &Config, dataset: &Dataset) -> Result<usize, CliError> {
    let split = make_splits(
        dataset,
        config.split.initial_train,
        config.split.test_fraction,
        &RngState::new(config.run.seed).with_trial(0),
    )
    .map_err(|e| CliError::config(format!("split: {e}")))?;
    Ok(split.pool().len())
}

pub fn cmd_diagnose(config: &Config, kind: DiagnoseKind) -> Result<PathBuf, CliError> {
    let section = &config.diagnose;
    match kind {
        DiagnoseKind::Rank => {
            let subset: RankSubset = section
                .subset
                .parse()
                .map_err(|e| CliError::config(format!("diagnose.subset: {e}")))?;
            let dataset = config.build_dataset()?;
            let loop_config = config.loop_config()?;
            let budget = section.reference_step + section.horizon;
            if trial0_pool(config, &dataset)? < budget.max(1) {
                return Err(CliError::config(format!(
                    "diagnose.horizon: needs {budget} pool points past the split"
                )));
            }
            let (dir, hash) = make_out_dir(config)?;
            log::info!("rank diagnostic {hash}: horizon {}", section.horizon);
            let trajectory = rank_trajectory(
                &dataset,
                &config.split_spec(),
                &loop_config,
                section.reference_step,
                section.horizon,
                subset,
                &RngState::new(config.run.seed).with_trial(0),
            )
            .map_err(runtime)?;
            let meta = Metadata {
                config_hash: &hash,
                seed: config.run.seed,
                extra: vec![
                    ("kernel", "boxcar".to_string()),
                    ("subset", subset.to_string()),
                    ("reference_step", section.reference_step.to_string()),
                ],
            };
            write_rank_csv(&dir.join("rank.csv"), &trajectory, &meta)?;
            Ok(dir)
        }
        DiagnoseKind::Frozen => {
            let dataset = config.build_dataset()?;
            let loop_config = config.loop_config()?;
            let budget = section.freeze_step + section.horizon;
            if trial0_pool(config, &dataset)? < budget.max(1) {
                return Err(CliError::config(format!(
                    "diagnose.horizon: needs {budget} pool points past the split"
                )));
            }
            let (dir, hash) = make_out_dir(config)?;
            log::info!("frozen-score diagnostic {hash}: horizon {}", section.horizon);
            let curves = frozen_score_replay(
                &dataset,
                &config.split_spec(),
                &loop_config,
                section.freeze_step,
                section.horizon,
                &RngState::new(config.run.seed).with_trial(0),
            )
            .map_err(runtime)?;
            let meta = Metadata {
                config_hash: &hash,
                seed: config.run.seed,
                extra: vec![
                    ("freeze_step", section.freeze_step.to_string()),
                    ("mean_deficit", format!("{}", curves.mean_deficit())),
                ],
            };
            write_frozen_csv(&dir.join("frozen.csv"), &curves, &meta)?;
            Ok(dir)
        }
        DiagnoseKind::Scoredist => {
            let scores = section.scores.clone().ok_or_else(|| {
                CliError::config("diagnose.scores: required for the scoredist diagnostic")
            })?;
            let scores = ScoreVector::new(scores)
                .map_err(|e| CliError::config(format!("diagnose.scores: {e}")))?;
            let table = score_distribution(&scores, &section.policies, &section.betas)
                .map_err(|e| CliError::config(format!("diagnose: {e}")))?;
            let (dir, hash) = make_out_dir(config)?;
            let meta = Metadata { config_hash: &hash, seed: config.run.seed, extra: Vec::new() };
            write_scoredist_csv(&dir.join("scoredist.csv"), &table, &meta)?;
            Ok(dir)
        }
    }
}

pub fn cmd_bench(config: &Config) -> Result<PathBuf, CliError> {
    let section = &config.bench;
    let policies = section.policies()?;
    if section.repeats == 0 {
        return Err(CliError::config("bench.repeats: must be positive"));
    }
    if section.pool_sizes.is_empty() || section.batch_sizes.is_empty() || policies.is_empty() {
        return Err(CliError::config("bench: pool_sizes, batch_sizes, policies must be nonempty"));
    }
    if let (Some(&max_b), Some(&min_m)) =
        (section.batch_sizes.iter().max(), section.pool_sizes.iter().min())
    {
        if max_b > min_m {
            return Err(CliError::config(format!(
                "bench.batch_sizes: batch size {max_b} exceeds pool size {min_m}"
            )));
        }
    }
    let (dir, hash) = make_out_dir(config)?;
    log::info!(
        "benchmark {hash}: {} policies, {} pool sizes, {} batch sizes, {} repeats",
        policies.len(),
        section.pool_sizes.len(),
        section.batch_sizes.len(),
        section.repeats
    );
    let table = bench_acquisition(
        &section.pool_sizes,
        &section.batch_sizes,
        &policies,
        section.repeats,
        &RngState::new(config.run.seed),
    )
    .map_err(runtime)?;
    let meta = Metadata {
        config_hash: &hash,
        seed: config.run.seed,
        extra: vec![("repeats", section.repeats.to_string())],
    };
    write_bench_csv(&dir.join("bench.csv"), &table, &meta)?;
    write_bench_slopes_csv(&dir.join("bench_slopes.csv"), &table, &meta)?;
    Ok(dir)
}

pub fn cmd_gen_data(config: &Config, out: Option<&Path>) -> Result<PathBuf, CliError> {
    let out = out.ok_or_else(|| {
        CliError::config("out: gen-data needs --out FILE for the generated CSV")
    })?;
    let dataset = config.build_dataset()?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io_error("creating output parent directory"))?;
    }
    log::info!("writing {} rows to {}", dataset.len(), out.display());
    write_csv(&dataset, file_writer(out)?).map_err(runtime)?;
    Ok(out.to_path_buf())
}
