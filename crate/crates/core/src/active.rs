//! The pool-based active-learning loop: train on the labeled set, score the
//! pool, acquire a batch, move it into the labeled set, evaluate, repeat.
//!
//! A trial owns three disjoint dataset-index sets (train, pool, test). Every
//! step trains a fresh ensemble on the current train set (reusing the
//! previous parameters instead when `reinit_each_step` is off), scores the
//! pool in ascending dataset-index order, and hands the scores to
//! [`acquire_batch`]; the pool-relative selection is mapped back to dataset
//! indices immediately so nothing aliases as the pool shrinks. Records carry
//! everything needed for plots and for byte-level reproducibility checks,
//! with wall-clock timings kept in separate fields so the deterministic
//! payload can be compared in isolation.

use std::collections::BTreeMap;
use std::io;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::datasets::{make_splits, Dataset, SplitIndices};
use crate::error::{Error, Result};
use crate::model::{Ensemble, MlpArchitecture, TrainConfig};
use crate::rng::{Purpose, RngState};
use crate::sampling::{acquire_batch, AcquisitionPolicy, BatchSelection, ScoreVector};
use crate::scoring::{score_pool, ScoreKind};

/// Anything that can score pool candidates given the current model. The
/// real scorers are [`ScoreKind`]s; tests and diagnostics substitute stubs
/// with fixed or index-keyed scores.
pub trait PoolScorer {
    /// Scores `pool` (dataset indices, ascending) in order.
    fn score(&self, ensemble: &Ensemble, dataset: &Dataset, pool: &[usize]) -> Result<ScoreVector>;
}

impl PoolScorer for ScoreKind {
    fn score(&self, ensemble: &Ensemble, dataset: &Dataset, pool: &[usize]) -> Result<ScoreVector> {
        let samples = ensemble.predict_samples(dataset.feature_rows(pool).view());
        Ok(score_pool(&samples, *self))
    }
}

/// Initial split sizes; the concrete index sets are drawn per trial.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub initial_train: usize,
    pub test_fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoopConfig {
    pub policy: AcquisitionPolicy,
    pub score_kind: ScoreKind,
    pub batch_size: usize,
    pub num_steps: usize,
    pub ensemble_size: usize,
    pub hidden_dims: Vec<usize>,
    pub train: TrainConfig,
    pub reinit_each_step: bool,
}

impl LoopConfig {
    /// Experiment defaults: coldness-1 power acquisition on BALD, batches of
    /// 10, a K=10 ensemble of input→[64, 64]→C rectifier MLPs reinitialized
    /// every step.
    pub fn new(policy: AcquisitionPolicy, score_kind: ScoreKind) -> Self {
        Self {
            policy,
            score_kind,
            batch_size: 10,
            num_steps: 10,
            ensemble_size: 10,
            hidden_dims: vec![64, 64],
            train: TrainConfig::default(),
            reinit_each_step: true,
        }
    }

    pub fn validate(&self, initial_pool_size: usize) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::parameter("batch_size", "must be positive"));
        }
        if self.num_steps == 0 {
            return Err(Error::parameter("num_steps", "must be positive"));
        }
        if self.ensemble_size == 0 {
            return Err(Error::parameter("ensemble_size", "must be positive"));
        }
        if self.batch_size * self.num_steps > initial_pool_size {
            return Err(Error::parameter(
                "batch_size",
                format!(
                    "batch_size ({}) x num_steps ({}) exceeds pool size {initial_pool_size}",
                    self.batch_size, self.num_steps
                ),
            ));
        }
        self.train.validate()
    }
}

/// Mutable per-trial loop state. The three index sets stay sorted,
/// pairwise disjoint, and jointly constant; `apply_selection` is the only
/// way indices move.
#[derive(Clone, Debug)]
pub struct ActiveState {
    train: Vec<usize>,
    pool: Vec<usize>,
    test: Vec<usize>,
    step: usize,
    history: Vec<BatchSelection>,
    ensemble: Option<Ensemble>,
}

impl ActiveState {
    pub fn new(split: &SplitIndices) -> Self {
        Self {
            train: split.train0().to_vec(),
            pool: split.pool().to_vec(),
            test: split.test().to_vec(),
            step: 0,
            history: Vec::new(),
            ensemble: None,
        }
    }

    pub fn train(&self) -> &[usize] {
        &self.train
    }

    pub fn pool(&self) -> &[usize] {
        &self.pool
    }

    pub fn test(&self) -> &[usize] {
        &self.test
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn history(&self) -> &[BatchSelection] {
        &self.history
    }

    /// Stores a trained ensemble for the next refit to continue from when
    /// [`LoopConfig::reinit_each_step`] is off.
    pub fn store_ensemble(&mut self, ensemble: Ensemble) {
        self.ensemble = Some(ensemble);
    }

    /// Moves `selected` dataset indices from pool to train, records them in
    /// the history, and advances the step counter.
    pub fn apply_selection(&mut self, selected: Vec<usize>) -> Result<()> {
        let mut in_pool = vec![false; selected.len()];
        for (k, &i) in selected.iter().enumerate() {
            if selected[..k].contains(&i) {
                return Err(Error::input(format!("index {i} selected twice")));
            }
            in_pool[k] = self.pool.binary_search(&i).is_ok();
            if !in_pool[k] {
                return Err(Error::input(format!("index {i} is not in the pool")));
            }
        }
        self.pool.retain(|i| !selected.contains(i));
        self.train.extend_from_slice(&selected);
        self.train.sort_unstable();
        self.history.push(BatchSelection::new(selected));
        self.step += 1;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub per_group_accuracy: Option<BTreeMap<usize, f64>>,
    pub predictive_parity: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreSummary {
    pub min: f64,
    pub mean: f64,
    pub max: f64,
}

impl ScoreSummary {
    fn of(scores: &ScoreVector) -> Self {
        let v = scores.values();
        Self {
            min: v.iter().cloned().fold(f64::INFINITY, f64::min),
            mean: v.iter().sum::<f64>() / v.len() as f64,
            max: v.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

/// One step's results. `selected` holds dataset indices in acquisition
/// order; the final evaluation-only record of a trial has no selection and
/// no score summary. Timing fields are wall-clock and excluded from
/// reproducibility comparisons.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub trial: usize,
    pub step: usize,
    pub train_size: usize,
    pub selected: Vec<usize>,
    pub scores: Option<ScoreSummary>,
    pub metrics: Metrics,
    pub t_train_s: f64,
    pub t_score_s: f64,
    pub t_acquire_s: f64,
    pub seed: u64,
    pub policy: String,
    pub score_kind: String,
    pub beta: Option<f64>,
}

fn beta_of(policy: &AcquisitionPolicy) -> Option<f64> {
    policy.kind.is_stochastic().then(|| policy.coldness.value())
}

/// Metrics from already-computed predictions. Macro-F1 averages F1 over the
/// classes present in `y_true` (2TP/(2TP+FP+FN), zero when the class was
/// never predicted correctly); predictive parity is the maximum pairwise
/// gap in per-group accuracy, present only when groups are.
pub fn metrics_from_predictions(
    y_true: &[usize],
    y_pred: &[usize],
    groups: Option<&[usize]>,
    num_classes: usize,
) -> Metrics {
    assert_eq!(y_true.len(), y_pred.len());
    assert!(!y_true.is_empty(), "empty evaluation set");
    let n = y_true.len();
    let correct = y_true.iter().zip(y_pred).filter(|(a, b)| a == b).count();
    let accuracy = correct as f64 / n as f64;

    let mut tp = vec![0usize; num_classes];
    let mut fp = vec![0usize; num_classes];
    let mut fn_ = vec![0usize; num_classes];
    let mut support = vec![0usize; num_classes];
    for (&t, &p) in y_true.iter().zip(y_pred) {
        support[t] += 1;
        if t == p {
            tp[t] += 1;
        } else {
            fp[p] += 1;
            fn_[t] += 1;
        }
    }
    let mut f1_sum = 0.0;
    let mut f1_classes = 0usize;
    for c in 0..num_classes {
        if support[c] == 0 {
            continue;
        }
        f1_classes += 1;
        let denom = 2 * tp[c] + fp[c] + fn_[c];
        if denom > 0 {
            f1_sum += 2.0 * tp[c] as f64 / denom as f64;
        }
    }
    let macro_f1 = f1_sum / f1_classes as f64;

    let (per_group_accuracy, predictive_parity) = match groups {
        Some(groups) => {
            assert_eq!(groups.len(), n);
            let mut totals: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
            for ((&t, &p), &g) in y_true.iter().zip(y_pred).zip(groups) {
                let entry = totals.entry(g).or_insert((0, 0));
                entry.0 += usize::from(t == p);
                entry.1 += 1;
            }
            let accs: BTreeMap<usize, f64> =
                totals.into_iter().map(|(g, (c, n))| (g, c as f64 / n as f64)).collect();
            let max = accs.values().cloned().fold(f64::NEG_INFINITY, f64::max);
            let min = accs.values().cloned().fold(f64::INFINITY, f64::min);
            (Some(accs), Some(max - min))
        }
        None => (None, None),
    };
    Metrics { accuracy, macro_f1, per_group_accuracy, predictive_parity }
}

/// Evaluates the ensemble's mean-prediction argmax on the test indices.
pub fn evaluate(ensemble: &Ensemble, dataset: &Dataset, test: &[usize]) -> Result<Metrics> {
    if test.is_empty() {
        return Err(Error::input("empty test set"));
    }
    let preds = ensemble.predict_classes(dataset.feature_rows(test).view());
    let truth = dataset.labels_at(test);
    let groups = dataset.subgroup().map(|g| test.iter().map(|&i| g[i]).collect::<Vec<_>>());
    Ok(metrics_from_predictions(&truth, &preds, groups.as_deref(), dataset.num_classes()))
}

/// Trains this step's model on the current labeled set without touching the
/// state: a fresh ensemble when `reinit_each_step`, otherwise continued
/// training of the carried parameters. Randomness comes from the trial
/// stream labeled with the current step.
pub fn train_step_model(
    state: &ActiveState,
    dataset: &Dataset,
    config: &LoopConfig,
    trial_rng: &RngState,
) -> Result<Ensemble> {
    let step_rng = trial_rng.with_step(state.step as u64);
    let ensemble = match (&state.ensemble, config.reinit_each_step) {
        (Some(e), false) => e.clone(),
        _ => {
            let arch = MlpArchitecture::new(
                dataset.dim(),
                config.hidden_dims.clone(),
                dataset.num_classes(),
            )?;
            Ensemble::init(arch, config.ensemble_size, &step_rng)?
        }
    };
    ensemble.train(
        dataset.feature_rows(state.train()).view(),
        &dataset.labels_at(state.train()),
        &config.train,
        &step_rng,
    )
}

/// One acquisition step: train, score the pool, acquire, move indices,
/// evaluate. Returns `Ok(None)` when the pool cannot fill another batch.
pub fn al_step(
    state: &mut ActiveState,
    dataset: &Dataset,
    config: &LoopConfig,
    trial_rng: &RngState,
) -> Result<Option<RunRecord>> {
    al_step_with(state, dataset, config, &config.score_kind.clone(), trial_rng)
}

/// [`al_step`] with an explicit scorer, for stubbed tests and diagnostics.
pub fn al_step_with(
    state: &mut ActiveState,
    dataset: &Dataset,
    config: &LoopConfig,
    scorer: &dyn PoolScorer,
    trial_rng: &RngState,
) -> Result<Option<RunRecord>> {
    if state.pool.len() < config.batch_size {
        return Ok(None);
    }
    let step = state.step;
    let step_rng = trial_rng.with_step(step as u64);
    let train_size = state.train.len();

    let t = Instant::now();
    let trained = train_step_model(state, dataset, config, trial_rng)?;
    let t_train_s = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let scores = scorer.score(&trained, dataset, &state.pool)?;
    if scores.len() != state.pool.len() {
        return Err(Error::input(format!(
            "scorer returned {} scores for {} pool candidates",
            scores.len(),
            state.pool.len()
        )));
    }
    let t_score_s = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let selection = acquire_batch(
        &scores,
        &config.policy,
        config.batch_size,
        &step_rng.with_purpose(Purpose::Acquire),
    )?;
    let t_acquire_s = t.elapsed().as_secs_f64();

    let selected: Vec<usize> = selection.indices().iter().map(|&p| state.pool[p]).collect();
    let summary = ScoreSummary::of(&scores);
    state.apply_selection(selected.clone())?;
    state.ensemble = Some(trained.clone());

    let metrics = evaluate(&trained, dataset, &state.test)?;
    Ok(Some(RunRecord {
        trial: 0,
        step,
        train_size,
        selected,
        scores: Some(summary),
        metrics,
        t_train_s,
        t_score_s,
        t_acquire_s,
        seed: trial_rng.seed(),
        policy: config.policy.kind.name().to_string(),
        score_kind: config.score_kind.name().to_string(),
        beta: beta_of(&config.policy),
    }))
}

/// Trains and evaluates on the final labeled set without acquiring,
/// closing the accuracy-vs-train-size curve.
fn final_record(
    state: &mut ActiveState,
    dataset: &Dataset,
    config: &LoopConfig,
    trial_rng: &RngState,
) -> Result<RunRecord> {
    let t = Instant::now();
    let trained = train_step_model(state, dataset, config, trial_rng)?;
    let t_train_s = t.elapsed().as_secs_f64();
    let metrics = evaluate(&trained, dataset, &state.test)?;
    state.ensemble = Some(trained);
    Ok(RunRecord {
        trial: 0,
        step: state.step,
        train_size: state.train.len(),
        selected: Vec::new(),
        scores: None,
        metrics,
        t_train_s,
        t_score_s: 0.0,
        t_acquire_s: 0.0,
        seed: trial_rng.seed(),
        policy: config.policy.kind.name().to_string(),
        score_kind: config.score_kind.name().to_string(),
        beta: beta_of(&config.policy),
    })
}

/// Runs `num_trials` independent trials: each draws its own split and runs
/// `num_steps` acquisition steps plus a final evaluation-only record, so a
/// completed trial has `num_steps + 1` records. Trial t uses the trial-t
/// stream of `rng` throughout; any failure aborts with the trial index.
pub fn run_experiment(
    dataset: &Dataset,
    split: &SplitSpec,
    config: &LoopConfig,
    num_trials: usize,
    rng: &RngState,
) -> Result<Vec<Vec<RunRecord>>> {
    run_experiment_with(dataset, split, config, &config.score_kind.clone(), num_trials, rng)
}

/// [`run_experiment`] with an explicit scorer.
pub fn run_experiment_with(
    dataset: &Dataset,
    split: &SplitSpec,
    config: &LoopConfig,
    scorer: &dyn PoolScorer,
    num_trials: usize,
    rng: &RngState,
) -> Result<Vec<Vec<RunRecord>>> {
    if num_trials == 0 {
        return Err(Error::parameter("num_trials", "must be positive"));
    }
    let mut trials = Vec::with_capacity(num_trials);
    for trial in 0..num_trials {
        let run = || -> Result<Vec<RunRecord>> {
            let trial_rng = rng.with_trial(trial as u64);
            let indices = make_splits(dataset, split.initial_train, split.test_fraction, &trial_rng)?;
            config.validate(indices.pool().len())?;
            let mut state = ActiveState::new(&indices);
            let mut records = Vec::with_capacity(config.num_steps + 1);
            for _ in 0..config.num_steps {
                match al_step_with(&mut state, dataset, config, scorer, &trial_rng)? {
                    Some(record) => records.push(record),
                    None => break,
                }
            }
            records.push(final_record(&mut state, dataset, config, &trial_rng)?);
            Ok(records)
        };
        match run() {
            Ok(mut records) => {
                for r in &mut records {
                    r.trial = trial;
                }
                trials.push(records);
            }
            Err(e) => return Err(Error::Trial { trial, source: Box::new(e) }),
        }
    }
    Ok(trials)
}

/// Per-step aggregation over trials: mean and 95% normal-approximation
/// confidence half-width (1.96·sd/sqrt(n), sample sd) of accuracy and
/// macro-F1.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SummaryRow {
    pub step: usize,
    pub train_size: usize,
    pub n_trials: usize,
    pub mean_accuracy: f64,
    pub ci95_accuracy: f64,
    pub mean_macro_f1: f64,
    pub ci95_macro_f1: f64,
}

fn mean_and_ci(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, 1.96 * (var / n).sqrt())
}

pub fn summarize(trials: &[Vec<RunRecord>]) -> Vec<SummaryRow> {
    let mut by_step: BTreeMap<usize, (usize, Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for trial in trials {
        for r in trial {
            let entry = by_step.entry(r.step).or_insert((r.train_size, Vec::new(), Vec::new()));
            entry.1.push(r.metrics.accuracy);
            entry.2.push(r.metrics.macro_f1);
        }
    }
    by_step
        .into_iter()
        .map(|(step, (train_size, accs, f1s))| {
            let (mean_accuracy, ci95_accuracy) = mean_and_ci(&accs);
            let (mean_macro_f1, ci95_macro_f1) = mean_and_ci(&f1s);
            SummaryRow {
                step,
                train_size,
                n_trials: accs.len(),
                mean_accuracy,
                ci95_accuracy,
                mean_macro_f1,
                ci95_macro_f1,
            }
        })
        .collect()
}

/// One JSON record per line, trials in order.
pub fn write_records_jsonl(trials: &[Vec<RunRecord>], mut w: impl io::Write) -> Result<()> {
    for record in trials.iter().flatten() {
        serde_json::to_writer(&mut w, record)
            .map_err(|e| Error::input(format!("record serialization failed: {e}")))?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

const AGGREGATE_HEADER: [&str; 13] = [
    "policy",
    "score_kind",
    "beta",
    "trial",
    "step",
    "train_size",
    "accuracy",
    "macro_f1",
    "predictive_parity",
    "t_train_s",
    "t_score_s",
    "t_acquire_s",
    "seed",
];

fn opt_float(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| format!("{v}"))
}

/// Flat per-step CSV across trials, one row per record.
pub fn write_aggregate_csv(trials: &[Vec<RunRecord>], w: impl io::Write) -> Result<()> {
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(AGGREGATE_HEADER).map_err(csv_error)?;
    for r in trials.iter().flatten() {
        csv.write_record(&[
            r.policy.clone(),
            r.score_kind.clone(),
            opt_float(r.beta),
            r.trial.to_string(),
            r.step.to_string(),
            r.train_size.to_string(),
            format!("{}", r.metrics.accuracy),
            format!("{}", r.metrics.macro_f1),
            opt_float(r.metrics.predictive_parity),
            format!("{}", r.t_train_s),
            format!("{}", r.t_score_s),
            format!("{}", r.t_acquire_s),
            r.seed.to_string(),
        ])
        .map_err(csv_error)?;
    }
    csv.into_inner().map_err(|e| Error::input(e.to_string()))?.flush()?;
    Ok(())
}

pub fn write_summary_csv(rows: &[SummaryRow], w: impl io::Write) -> Result<()> {
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record([
        "step",
        "train_size",
        "n_trials",
        "mean_accuracy",
        "ci95_accuracy",
        "mean_macro_f1",
        "ci95_macro_f1",
    ])
    .map_err(csv_error)?;
    for r in rows {
        csv.write_record(&[
            r.step.to_string(),
            r.train_size.to_string(),
            r.n_trials.to_string(),
            format!("{}", r.mean_accuracy),
            format!("{}", r.ci95_accuracy),
            format!("{}", r.mean_macro_f1),
            format!("{}", r.ci95_macro_f1),
        ])
        .map_err(csv_error)?;
    }
    csv.into_inner().map_err(|e| Error::input(e.to_string()))?.flush()?;
    Ok(())
}

fn csv_error(e: csv::Error) -> Error {
    Error::input(format!("CSV write failed: {e}"))
}
