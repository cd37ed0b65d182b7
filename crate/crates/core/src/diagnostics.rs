//! Investigative diagnostics for acquisition behavior: how fast score
//! rankings decay as training progresses, how much stale scores hurt when
//! replayed as if fresh, what the exact selection distribution looks like
//! across coldness values, and how acquisition wall time scales with pool
//! and batch size.
//!
//! Everything here composes the public loop pieces (`train_step_model`,
//! `PoolScorer`, `acquire_batch`, `ActiveState::apply_selection`) rather
//! than duplicating loop mechanics, so a diagnostic run draws the same
//! random streams as the experiment loop would.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use crate::active::{
    evaluate, train_step_model, ActiveState, LoopConfig, PoolScorer, SplitSpec,
};
use crate::datasets::{make_splits, Dataset};
use crate::error::{Error, Result};
use crate::rng::{Purpose, RngState};
use crate::sampling::{acquire_batch, descending_ranks, AcquisitionPolicy, PolicyKind, ScoreVector};

/// Fractional (average-tie) ranks, 1-based, ascending by value.
pub fn fractional_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_unstable_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start;
        while end + 1 < order.len() && values[order[end + 1]] == values[order[start]] {
            end += 1;
        }
        // 1-based ranks start+1 ..= end+1 averaged over the tie run.
        let rank = (start + end + 2) as f64 / 2.0;
        for &i in &order[start..=end] {
            ranks[i] = rank;
        }
        start = end + 1;
    }
    ranks
}

/// Spearman rank correlation: the Pearson correlation of fractional ranks.
/// Identical sequences short-circuit to exactly 1 after the degeneracy
/// checks, so self-correlation never picks up rounding noise.
pub fn spearman_rho(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::parameter("b", "length mismatch"));
    }
    if a.len() < 2 {
        return Err(Error::parameter("a", "need at least 2 points"));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::parameter("a", "values must be finite"));
    }
    let ra = fractional_ranks(a);
    let rb = fractional_ranks(b);
    let var = |r: &[f64]| {
        let m = r.iter().sum::<f64>() / r.len() as f64;
        r.iter().map(|v| (v - m).powi(2)).sum::<f64>()
    };
    let (va, vb) = (var(&ra), var(&rb));
    if va == 0.0 || vb == 0.0 {
        return Err(Error::UndefinedCorrelation(
            "zero rank variance".into(),
        ));
    }
    if a == b {
        return Ok(1.0);
    }
    let ma = ra.iter().sum::<f64>() / ra.len() as f64;
    let mb = rb.iter().sum::<f64>() / rb.len() as f64;
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    Ok((cov / (va * vb).sqrt()).clamp(-1.0, 1.0))
}

/// Symmetric boxcar moving average. A window whose members are all equal
/// passes through untouched, so constant stretches stay bitwise constant.
pub fn parzen_smooth(values: &[f64], width: usize) -> Vec<f64> {
    assert!(width > 0, "window width must be positive");
    let half = width / 2;
    (0..values.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + (width - 1) - half).min(values.len() - 1);
            let window = &values[lo..=hi];
            if window.iter().all(|v| *v == window[0]) {
                window[0]
            } else {
                window.iter().sum::<f64>() / window.len() as f64
            }
        })
        .collect()
}

/// Which slice of the evaluation set a rank trajectory tracks, fixed by the
/// reference-step ranking.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RankSubset {
    All,
    /// Highest-scored fraction at the reference step, in (0, 1].
    Top(f64),
    /// Lowest-scored fraction at the reference step, in (0, 1].
    Bottom(f64),
}

impl RankSubset {
    fn fraction(self) -> Option<f64> {
        match self {
            RankSubset::All => None,
            RankSubset::Top(f) | RankSubset::Bottom(f) => Some(f),
        }
    }

    pub fn validate(self) -> Result<()> {
        match self.fraction() {
            Some(f) if !(f > 0.0 && f <= 1.0) => {
                Err(Error::parameter("subset", "fraction must be in (0, 1]"))
            }
            _ => Ok(()),
        }
    }

    fn count(self, n: usize) -> usize {
        match self.fraction() {
            None => n,
            Some(f) => (f * n as f64).ceil() as usize,
        }
    }

    /// Member positions (into the evaluation set) given reference scores.
    fn members(self, reference: &[f64]) -> Result<Vec<usize>> {
        let count = self.count(reference.len());
        if count < 2 {
            return Err(Error::parameter(
                "subset",
                format!("{count} point(s) selected, need at least 2"),
            ));
        }
        let mut order: Vec<usize> = (0..reference.len()).collect();
        match self {
            RankSubset::All => return Ok(order),
            RankSubset::Top(_) => order
                .sort_unstable_by(|&a, &b| reference[b].total_cmp(&reference[a]).then(a.cmp(&b))),
            RankSubset::Bottom(_) => order
                .sort_unstable_by(|&a, &b| reference[a].total_cmp(&reference[b]).then(a.cmp(&b))),
        }
        let mut members = order[..count].to_vec();
        members.sort_unstable();
        Ok(members)
    }
}

impl fmt::Display for RankSubset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RankSubset::All => write!(f, "all"),
            RankSubset::Top(frac) => write!(f, "top:{frac}"),
            RankSubset::Bottom(frac) => write!(f, "bottom:{frac}"),
        }
    }
}

impl FromStr for RankSubset {
    type Err = Error;

    /// Accepts `all`, `top:F`, `bottom:F` with F a fraction (`0.1`) or
    /// percentage (`10%`).
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::parameter("subset", format!("unrecognized subset {s:?}"));
        if s.eq_ignore_ascii_case("all") {
            return Ok(RankSubset::All);
        }
        let (kind, frac) = s.split_once(':').ok_or_else(bad)?;
        let frac = frac.trim();
        let value = match frac.strip_suffix('%') {
            Some(pct) => pct.trim().parse::<f64>().map_err(|_| bad())? / 100.0,
            None => frac.parse::<f64>().map_err(|_| bad())?,
        };
        let subset = match kind.trim().to_ascii_lowercase().as_str() {
            "top" => RankSubset::Top(value),
            "bottom" => RankSubset::Bottom(value),
            _ => return Err(bad()),
        };
        subset.validate()?;
        Ok(subset)
    }
}

/// Spearman correlation of evaluation-set scores against the
/// reference-step scores, per acquisition offset.
#[derive(Clone, Debug)]
pub struct RankTrajectory {
    pub reference_step: usize,
    pub subset: RankSubset,
    pub offsets: Vec<usize>,
    /// Smoothed correlations (boxcar window, see `parzen_smooth`).
    pub rho: Vec<f64>,
    /// Unsmoothed correlations.
    pub rho_raw: Vec<f64>,
    /// Labeled-set size at each offset.
    pub train_sizes: Vec<usize>,
    /// Points acquired since the loop started, at each offset.
    pub acquired: Vec<usize>,
}

const PARZEN_WIDTH: usize = 10;

/// Runs a single-point acquisition loop and tracks how the evaluation-set
/// score ranking drifts from its state at `reference_step`. Batch size is
/// forced to 1 regardless of `config.batch_size`.
pub fn rank_trajectory(
    dataset: &Dataset,
    split: &SplitSpec,
    config: &LoopConfig,
    reference_step: usize,
    horizon: usize,
    subset: RankSubset,
    rng: &RngState,
) -> Result<RankTrajectory> {
    rank_trajectory_with(
        dataset,
        split,
        config,
        &config.score_kind,
        reference_step,
        horizon,
        subset,
        rng,
    )
}

/// [`rank_trajectory`] with an explicit scorer.
#[allow(clippy::too_many_arguments)]
pub fn rank_trajectory_with(
    dataset: &Dataset,
    split: &SplitSpec,
    config: &LoopConfig,
    scorer: &dyn PoolScorer,
    reference_step: usize,
    horizon: usize,
    subset: RankSubset,
    rng: &RngState,
) -> Result<RankTrajectory> {
    subset.validate()?;
    let config = LoopConfig {
        batch_size: 1,
        num_steps: (reference_step + horizon).max(1),
        ..config.clone()
    };
    let indices = make_splits(dataset, split.initial_train, split.test_fraction, rng)?;
    config.validate(indices.pool().len())?;
    let mut state = ActiveState::new(&indices);
    let eval_set = state.test().to_vec();

    let step_scores = |state: &mut ActiveState| -> Result<Vec<f64>> {
        let model = train_step_model(state, dataset, &config, rng)?;
        let scores = scorer.score(&model, dataset, &eval_set)?;
        let step_rng = rng.with_step(state.step() as u64);
        let pool_scores = scorer.score(&model, dataset, state.pool())?;
        let selection =
            acquire_batch(&pool_scores, &config.policy, 1, &step_rng.with_purpose(Purpose::Acquire))?;
        let selected = state.pool()[selection.indices()[0]];
        state.store_ensemble(model);
        state.apply_selection(vec![selected])?;
        Ok(scores.values().to_vec())
    };

    for _ in 0..reference_step {
        step_scores(&mut state)?;
    }

    let mut offsets = Vec::with_capacity(horizon + 1);
    let mut rho_raw = Vec::with_capacity(horizon + 1);
    let mut train_sizes = Vec::with_capacity(horizon + 1);
    let mut acquired = Vec::with_capacity(horizon + 1);
    let mut reference: Option<(Vec<f64>, Vec<usize>)> = None;
    for offset in 0..=horizon {
        train_sizes.push(state.train().len());
        acquired.push(state.step());
        let scores = step_scores(&mut state)?;
        if reference.is_none() {
            let members = subset.members(&scores)?;
            reference = Some((scores.clone(), members));
        }
        let (ref_scores, members) = reference.as_ref().expect("set on first offset");
        let pick = |s: &[f64]| members.iter().map(|&i| s[i]).collect::<Vec<f64>>();
        rho_raw.push(spearman_rho(&pick(ref_scores), &pick(&scores))?);
        offsets.push(offset);
    }
    let rho = parzen_smooth(&rho_raw, PARZEN_WIDTH);
    Ok(RankTrajectory {
        reference_step,
        subset,
        offsets,
        rho,
        rho_raw,
        train_sizes,
        acquired,
    })
}

/// Paired accuracy curves: acquiring by stale frozen scores vs. re-scoring
/// every step, both retrained with identical streams.
#[derive(Clone, Debug)]
pub struct ReplayCurves {
    pub freeze_step: usize,
    pub train_sizes: Vec<usize>,
    pub frozen_accuracy: Vec<f64>,
    pub fresh_accuracy: Vec<f64>,
}

impl ReplayCurves {
    /// Mean accuracy shortfall of the frozen branch (fresh minus frozen).
    pub fn mean_deficit(&self) -> f64 {
        let n = self.fresh_accuracy.len() as f64;
        self.fresh_accuracy
            .iter()
            .zip(&self.frozen_accuracy)
            .map(|(fresh, frozen)| fresh - frozen)
            .sum::<f64>()
            / n
    }
}

/// Freezes the pool scores at `freeze_step`, then follows two branches for
/// `horizon` single acquisitions: one consuming the frozen scores in
/// descending order, one re-scoring with the current model each step.
pub fn frozen_score_replay(
    dataset: &Dataset,
    split: &SplitSpec,
    config: &LoopConfig,
    freeze_step: usize,
    horizon: usize,
    rng: &RngState,
) -> Result<ReplayCurves> {
    frozen_score_replay_with(dataset, split, config, &config.score_kind, freeze_step, horizon, rng)
}

/// [`frozen_score_replay`] with an explicit scorer.
pub fn frozen_score_replay_with(
    dataset: &Dataset,
    split: &SplitSpec,
    config: &LoopConfig,
    scorer: &dyn PoolScorer,
    freeze_step: usize,
    horizon: usize,
    rng: &RngState,
) -> Result<ReplayCurves> {
    let config = LoopConfig {
        batch_size: 1,
        num_steps: (freeze_step + horizon).max(1),
        ..config.clone()
    };
    let indices = make_splits(dataset, split.initial_train, split.test_fraction, rng)?;
    config.validate(indices.pool().len())?;
    let mut state = ActiveState::new(&indices);

    for _ in 0..freeze_step {
        let model = train_step_model(&state, dataset, &config, rng)?;
        let step_rng = rng.with_step(state.step() as u64);
        let scores = scorer.score(&model, dataset, state.pool())?;
        let selection =
            acquire_batch(&scores, &config.policy, 1, &step_rng.with_purpose(Purpose::Acquire))?;
        let selected = state.pool()[selection.indices()[0]];
        state.store_ensemble(model);
        state.apply_selection(vec![selected])?;
    }

    let frozen_model = train_step_model(&state, dataset, &config, rng)?;
    let frozen_scores = scorer.score(&frozen_model, dataset, state.pool())?;
    state.store_ensemble(frozen_model);
    let mut frozen_order: Vec<(f64, usize)> = frozen_scores
        .values()
        .iter()
        .copied()
        .zip(state.pool().iter().copied())
        .collect();
    frozen_order.sort_unstable_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));

    // Frozen branch: walk the stale ranking.
    let mut frozen_state = state.clone();
    let mut frozen_accuracy = Vec::with_capacity(horizon + 1);
    let mut train_sizes = Vec::with_capacity(horizon + 1);
    let mut cursor = frozen_order.into_iter().map(|(_, i)| i);
    for offset in 0..=horizon {
        let model = train_step_model(&frozen_state, dataset, &config, rng)?;
        frozen_accuracy.push(evaluate(&model, dataset, frozen_state.test())?.accuracy);
        train_sizes.push(frozen_state.train().len());
        frozen_state.store_ensemble(model);
        if offset < horizon {
            let next = cursor.next().expect("pool budget validated");
            frozen_state.apply_selection(vec![next])?;
        }
    }

    // Fresh branch: ordinary re-scored acquisition.
    let mut fresh_state = state;
    let mut fresh_accuracy = Vec::with_capacity(horizon + 1);
    for offset in 0..=horizon {
        let model = train_step_model(&fresh_state, dataset, &config, rng)?;
        fresh_accuracy.push(evaluate(&model, dataset, fresh_state.test())?.accuracy);
        if offset < horizon {
            let step_rng = rng.with_step(fresh_state.step() as u64);
            let scores = scorer.score(&model, dataset, fresh_state.pool())?;
            let selection = acquire_batch(
                &scores,
                &config.policy,
                1,
                &step_rng.with_purpose(Purpose::Acquire),
            )?;
            let selected = fresh_state.pool()[selection.indices()[0]];
            fresh_state.store_ensemble(model);
            fresh_state.apply_selection(vec![selected])?;
        }
    }

    Ok(ReplayCurves { freeze_step, train_sizes, frozen_accuracy, fresh_accuracy })
}

/// Exact selection probabilities for one stochastic policy at one coldness.
#[derive(Clone, Debug)]
pub struct DistributionColumn {
    pub policy: PolicyKind,
    pub beta: f64,
    pub probability: Vec<f64>,
    pub log_probability: Vec<f64>,
}

/// Candidates sorted by descending score with one probability column per
/// (policy, coldness) pair.
#[derive(Clone, Debug)]
pub struct ScoreDistribution {
    /// Original candidate indices, in row order.
    pub candidate: Vec<usize>,
    pub score: Vec<f64>,
    pub columns: Vec<DistributionColumn>,
}

fn policy_weights(scores: &[f64], kind: PolicyKind, beta: f64) -> Result<Vec<f64>> {
    Ok(match kind {
        PolicyKind::Softmax => {
            let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            scores.iter().map(|s| (beta * (s - max)).exp()).collect()
        }
        PolicyKind::Power => {
            if scores.iter().any(|s| *s < 0.0) {
                return Err(Error::parameter("scores", "power needs nonnegative scores"));
            }
            scores.iter().map(|s| s.powf(beta)).collect()
        }
        PolicyKind::SoftRank => {
            descending_ranks(scores).iter().map(|r| (*r as f64).powf(-beta)).collect()
        }
        PolicyKind::TopB | PolicyKind::Uniform => {
            return Err(Error::parameter("kinds", "only stochastic policies have distributions"));
        }
    })
}

/// Normalized single-draw selection probabilities for every (kind, beta)
/// combination, rows sorted by descending score.
pub fn score_distribution(
    scores: &ScoreVector,
    kinds: &[PolicyKind],
    betas: &[f64],
) -> Result<ScoreDistribution> {
    if kinds.is_empty() || betas.is_empty() {
        return Err(Error::parameter("kinds", "need at least one policy and one coldness"));
    }
    if let Some(beta) = betas.iter().find(|b| !(**b > 0.0 && b.is_finite())) {
        return Err(Error::parameter("betas", format!("coldness {beta} not in (0, inf)")));
    }
    let values = scores.values();
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_unstable_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));

    let mut columns = Vec::with_capacity(kinds.len() * betas.len());
    for &kind in kinds {
        for &beta in betas {
            let weights = policy_weights(values, kind, beta)?;
            let total: f64 = weights.iter().sum();
            if !(total.is_finite() && total > 0.0) {
                return Err(Error::parameter(
                    "scores",
                    format!("degenerate weight total {total} for {} at beta {beta}", kind.name()),
                ));
            }
            let probability: Vec<f64> = order.iter().map(|&i| weights[i] / total).collect();
            let log_probability = probability.iter().map(|p| p.ln()).collect();
            columns.push(DistributionColumn { policy: kind, beta, probability, log_probability });
        }
    }
    Ok(ScoreDistribution {
        candidate: order.clone(),
        score: order.iter().map(|&i| values[i]).collect(),
        columns,
    })
}

/// Wall-time statistics for one (policy, pool size, batch size) cell.
#[derive(Clone, Debug)]
pub struct BenchmarkRecord {
    pub policy: String,
    pub pool_size: usize,
    pub batch_size: usize,
    pub median_s: f64,
    pub mean_s: f64,
    pub sd_s: f64,
}

/// Benchmark table plus a least-squares slope of median time vs. pool size
/// per policy (seconds per candidate).
#[derive(Clone, Debug)]
pub struct BenchmarkTable {
    pub records: Vec<BenchmarkRecord>,
    pub slopes: Vec<(String, f64)>,
}

impl BenchmarkTable {
    pub fn median(&self, policy: &str, pool_size: usize, batch_size: usize) -> Option<f64> {
        self.records
            .iter()
            .find(|r| r.policy == policy && r.pool_size == pool_size && r.batch_size == batch_size)
            .map(|r| r.median_s)
    }
}

fn least_squares_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        0.0
    } else {
        sxy / sxx
    }
}

/// Times `acquire_batch` on synthetic uniform scores over the grid of pool
/// sizes, batch sizes, and policies. Each cell gets one warmup call plus
/// `repeats` timed calls on per-repeat noise streams; training is never
/// involved.
pub fn bench_acquisition(
    pool_sizes: &[usize],
    batch_sizes: &[usize],
    policies: &[AcquisitionPolicy],
    repeats: usize,
    rng: &RngState,
) -> Result<BenchmarkTable> {
    if repeats == 0 {
        return Err(Error::parameter("repeats", "must be positive"));
    }
    if pool_sizes.is_empty() || batch_sizes.is_empty() || policies.is_empty() {
        return Err(Error::parameter("pool_sizes", "empty benchmark grid"));
    }
    let bench_rng = rng.with_purpose(Purpose::Bench);
    let mut records = Vec::new();
    for (pi, &m) in pool_sizes.iter().enumerate() {
        let mut stream = bench_rng.with_lane(pi as u64).stream();
        let scores =
            ScoreVector::new((0..m).map(|_| stream.next_uniform()).collect())?;
        for &b in batch_sizes {
            if b > m {
                return Err(Error::parameter(
                    "batch_sizes",
                    format!("batch size {b} exceeds pool size {m}"),
                ));
            }
            for policy in policies {
                let noise = bench_rng.with_step(records.len() as u64);
                acquire_batch(&scores, policy, b, &noise.with_lane(0))?;
                let mut times = Vec::with_capacity(repeats);
                for rep in 0..repeats {
                    let rep_rng = noise.with_lane(rep as u64 + 1);
                    let start = Instant::now();
                    let selection = acquire_batch(&scores, policy, b, &rep_rng)?;
                    let elapsed = start.elapsed().as_secs_f64();
                    std::hint::black_box(selection);
                    times.push(elapsed);
                }
                times.sort_unstable_by(f64::total_cmp);
                let median_s = times[times.len() / 2];
                let mean_s = times.iter().sum::<f64>() / times.len() as f64;
                let sd_s = if times.len() < 2 {
                    0.0
                } else {
                    (times.iter().map(|t| (t - mean_s).powi(2)).sum::<f64>()
                        / (times.len() - 1) as f64)
                        .sqrt()
                };
                records.push(BenchmarkRecord {
                    policy: policy.descriptor(),
                    pool_size: m,
                    batch_size: b,
                    median_s,
                    mean_s,
                    sd_s,
                });
            }
        }
    }
    let mut slopes = Vec::with_capacity(policies.len());
    for policy in policies {
        let name = policy.descriptor();
        let points: Vec<(f64, f64)> = records
            .iter()
            .filter(|r| r.policy == name)
            .map(|r| (r.pool_size as f64, r.median_s))
            .collect();
        slopes.push((name, least_squares_slope(&points)));
    }
    Ok(BenchmarkTable { records, slopes })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::gen_repeated_clusters;
    use crate::model::{Ensemble, TrainConfig};
    use crate::scoring::ScoreKind;
    use proptest::prelude::*;

    #[test]
    fn fractional_ranks_average_ties() {
        assert_eq!(fractional_ranks(&[10.0, 20.0, 20.0, 30.0]), vec![1.0, 2.5, 2.5, 4.0]);
        assert_eq!(fractional_ranks(&[5.0, 1.0, 3.0]), vec![3.0, 1.0, 2.0]);
        assert_eq!(fractional_ranks(&[2.0, 2.0, 2.0]), vec![2.0, 2.0, 2.0]);
    }

    #[test]
    fn spearman_examples() {
        assert_eq!(spearman_rho(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 1.0);
        assert_eq!(spearman_rho(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap(), -1.0);
        let rho = spearman_rho(&[1.0, 2.0, 3.0, 4.0], &[2.0, 1.0, 4.0, 3.0]).unwrap();
        assert!((rho - 0.6).abs() < 1e-15, "{rho}");
    }

    #[test]
    fn spearman_rejects_degenerate_input() {
        assert!(matches!(
            spearman_rho(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]),
            Err(Error::UndefinedCorrelation(_))
        ));
        assert!(matches!(
            spearman_rho(&[1.0, 2.0], &[1.0]),
            Err(Error::Parameter { .. })
        ));
        assert!(matches!(spearman_rho(&[1.0], &[1.0]), Err(Error::Parameter { .. })));
        assert!(matches!(
            spearman_rho(&[1.0, f64::NAN], &[1.0, 2.0]),
            Err(Error::Parameter { .. })
        ));
    }

    proptest! {
        #[test]
        fn spearman_is_symmetric_and_bounded(
            pairs in proptest::collection::vec((-50i32..50, -50i32..50), 2..40)
        ) {
            let a: Vec<f64> = pairs.iter().map(|p| p.0 as f64).collect();
            let b: Vec<f64> = pairs.iter().map(|p| p.1 as f64).collect();
            match (spearman_rho(&a, &b), spearman_rho(&b, &a)) {
                (Ok(ab), Ok(ba)) => {
                    prop_assert_eq!(ab, ba);
                    prop_assert!((-1.0..=1.0).contains(&ab));
                }
                (Err(Error::UndefinedCorrelation(_)), Err(Error::UndefinedCorrelation(_))) => {}
                (x, y) => prop_assert!(false, "asymmetric outcome: {:?} vs {:?}", x, y),
            }
        }

        #[test]
        fn spearman_ignores_monotone_transforms(
            pairs in proptest::collection::vec((-50i32..50, -50i32..50), 3..30)
        ) {
            let a: Vec<f64> = pairs.iter().map(|p| p.0 as f64).collect();
            let b: Vec<f64> = pairs.iter().map(|p| p.1 as f64).collect();
            let Ok(base) = spearman_rho(&a, &b) else { return Ok(()) };
            let affine: Vec<f64> = a.iter().map(|x| 2.0 * x + 1.0).collect();
            let cubed: Vec<f64> = a.iter().map(|x| x.powi(3)).collect();
            let exped: Vec<f64> = b.iter().map(|x| (x / 10.0).exp()).collect();
            prop_assert_eq!(spearman_rho(&affine, &b).unwrap(), base);
            prop_assert_eq!(spearman_rho(&cubed, &b).unwrap(), base);
            prop_assert_eq!(spearman_rho(&a, &exped).unwrap(), base);
        }

        #[test]
        fn parzen_stays_inside_the_envelope(
            values in proptest::collection::vec(-1e6f64..1e6, 1..60),
            width in 1usize..15
        ) {
            let out = parzen_smooth(&values, width);
            prop_assert_eq!(out.len(), values.len());
            let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            for v in out {
                prop_assert!(v >= lo - 1e-9 && v <= hi + 1e-9);
            }
        }
    }

    #[test]
    fn parzen_preserves_constants_exactly() {
        let input = vec![0.1; 23];
        assert_eq!(parzen_smooth(&input, 10), input);
        let smoothed = parzen_smooth(&[1.0, 1.0, 5.0, 1.0, 1.0], 3);
        assert_eq!(smoothed[0], 1.0);
        assert!((smoothed[2] - 7.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn subset_parsing_round_trips() {
        assert_eq!("all".parse::<RankSubset>().unwrap(), RankSubset::All);
        assert_eq!("top:10%".parse::<RankSubset>().unwrap(), RankSubset::Top(0.1));
        assert_eq!("bottom:0.01".parse::<RankSubset>().unwrap(), RankSubset::Bottom(0.01));
        assert!("top:0".parse::<RankSubset>().is_err());
        assert!("middle:0.5".parse::<RankSubset>().is_err());
        assert_eq!(RankSubset::Top(0.1).to_string(), "top:0.1");
    }

    struct FixedByIndex;

    impl PoolScorer for FixedByIndex {
        fn score(&self, _: &Ensemble, _: &Dataset, pool: &[usize]) -> Result<ScoreVector> {
            ScoreVector::new(pool.iter().map(|&i| i as f64 * 0.37).collect())
        }
    }

    fn cheap_config() -> LoopConfig {
        LoopConfig {
            ensemble_size: 1,
            hidden_dims: vec![4],
            train: TrainConfig { max_epochs: 0, ..TrainConfig::default() },
            ..LoopConfig::new(AcquisitionPolicy::top_b(), ScoreKind::Bald)
        }
    }

    #[test]
    fn fixed_scores_hold_rank_correlation_at_one() {
        let dataset = gen_repeated_clusters(2, 30, 1, 0.1, 2, &RngState::new(50)).unwrap();
        let split = SplitSpec { initial_train: 10, test_fraction: 0.25 };
        let t = rank_trajectory_with(
            &dataset,
            &split,
            &cheap_config(),
            &FixedByIndex,
            2,
            8,
            RankSubset::All,
            &RngState::new(50).with_trial(0),
        )
        .unwrap();
        assert_eq!(t.offsets, (0..=8).collect::<Vec<_>>());
        assert_eq!(t.rho_raw, vec![1.0; 9]);
        assert_eq!(t.rho, vec![1.0; 9]);
        assert_eq!(t.train_sizes, (0..=8).map(|n| 12 + n).collect::<Vec<_>>());
        assert_eq!(t.acquired, (2..=10).collect::<Vec<_>>());
    }

    #[test]
    fn rank_trajectory_rejects_tiny_subsets() {
        let dataset = gen_repeated_clusters(2, 30, 1, 0.1, 2, &RngState::new(51)).unwrap();
        let split = SplitSpec { initial_train: 10, test_fraction: 0.25 };
        let err = rank_trajectory_with(
            &dataset,
            &split,
            &cheap_config(),
            &FixedByIndex,
            0,
            3,
            RankSubset::Top(0.01),
            &RngState::new(51),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Parameter { name, .. } if name == "subset"));
    }

    #[test]
    fn rank_trajectory_with_real_scores_stays_bounded() {
        let dataset = gen_repeated_clusters(2, 20, 1, 0.4, 2, &RngState::new(52)).unwrap();
        let split = SplitSpec { initial_train: 6, test_fraction: 0.25 };
        let mut config = cheap_config();
        config.train = TrainConfig { learning_rate: 0.05, max_epochs: 5, ..TrainConfig::default() };
        config.ensemble_size = 2;
        let t = rank_trajectory(
            &dataset,
            &split,
            &config,
            0,
            6,
            RankSubset::Top(0.5),
            &RngState::new(52).with_trial(0),
        )
        .unwrap();
        assert_eq!(t.rho_raw[0], 1.0);
        assert!(t.rho_raw.iter().all(|r| (-1.0..=1.0).contains(r)));
        assert!(t.rho.iter().all(|r| (-1.0..=1.0).contains(r)));
    }

    #[test]
    fn replay_with_fixed_scores_has_zero_deficit() {
        let dataset = gen_repeated_clusters(2, 30, 1, 0.1, 2, &RngState::new(53)).unwrap();
        let split = SplitSpec { initial_train: 10, test_fraction: 0.25 };
        let curves = frozen_score_replay_with(
            &dataset,
            &split,
            &cheap_config(),
            &FixedByIndex,
            2,
            6,
            &RngState::new(53).with_trial(0),
        )
        .unwrap();
        assert_eq!(curves.frozen_accuracy.len(), 7);
        assert_eq!(curves.fresh_accuracy, curves.frozen_accuracy);
        assert_eq!(curves.mean_deficit(), 0.0);
        assert_eq!(curves.train_sizes, (0..=6).map(|n| 12 + n).collect::<Vec<_>>());
    }

    #[test]
    fn replay_horizon_zero_is_a_single_shared_point() {
        let dataset = gen_repeated_clusters(2, 20, 1, 0.3, 2, &RngState::new(54)).unwrap();
        let split = SplitSpec { initial_train: 8, test_fraction: 0.25 };
        let mut config = cheap_config();
        config.train = TrainConfig { learning_rate: 0.05, max_epochs: 4, ..TrainConfig::default() };
        let curves =
            frozen_score_replay(&dataset, &split, &config, 1, 0, &RngState::new(54)).unwrap();
        assert_eq!(curves.train_sizes.len(), 1);
        assert_eq!(curves.frozen_accuracy, curves.fresh_accuracy);
        assert_eq!(curves.mean_deficit(), 0.0);
    }

    #[test]
    fn distribution_examples_are_exact() {
        let scores = ScoreVector::new(vec![1.0, 2.0, 3.0]).unwrap();
        let table =
            score_distribution(&scores, &[PolicyKind::Power], &[1.0, 2.0]).unwrap();
        assert_eq!(table.candidate, vec![2, 1, 0]);
        assert_eq!(table.score, vec![3.0, 2.0, 1.0]);
        assert_eq!(table.columns[0].probability, vec![3.0 / 6.0, 2.0 / 6.0, 1.0 / 6.0]);
        assert_eq!(table.columns[1].probability, vec![9.0 / 14.0, 4.0 / 14.0, 1.0 / 14.0]);
        for column in &table.columns {
            for (p, lp) in column.probability.iter().zip(&column.log_probability) {
                assert_eq!(*lp, p.ln());
            }
        }
    }

    #[test]
    fn tiny_coldness_flattens_softmax() {
        let scores = ScoreVector::new(vec![0.0, 0.3, 0.7, 1.0]).unwrap();
        let table = score_distribution(&scores, &[PolicyKind::Softmax], &[0.01]).unwrap();
        let p = &table.columns[0].probability;
        let ratio = p.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            / p.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(ratio < 1.05, "{ratio}");
    }

    #[test]
    fn distribution_rejects_bad_requests() {
        let scores = ScoreVector::new(vec![1.0, 2.0]).unwrap();
        assert!(score_distribution(&scores, &[PolicyKind::Softmax], &[0.0]).is_err());
        assert!(score_distribution(&scores, &[PolicyKind::TopB], &[1.0]).is_err());
        assert!(score_distribution(&scores, &[], &[1.0]).is_err());
        let negative = ScoreVector::new(vec![-1.0, 2.0]).unwrap();
        assert!(score_distribution(&negative, &[PolicyKind::Power], &[1.0]).is_err());
    }

    proptest! {
        #[test]
        fn distribution_rows_normalize(
            scores in proptest::collection::vec(0.01f64..10.0, 2..12),
            beta in 0.1f64..5.0
        ) {
            let scores = ScoreVector::new(scores).unwrap();
            let kinds = [PolicyKind::Softmax, PolicyKind::Power, PolicyKind::SoftRank];
            let table = score_distribution(&scores, &kinds, &[beta]).unwrap();
            for column in &table.columns {
                let total: f64 = column.probability.iter().sum();
                prop_assert!((total - 1.0).abs() < 1e-12, "{} sums to {}", column.policy.name(), total);
                prop_assert!(column.probability.iter().all(|p| *p >= 0.0));
            }
        }
    }

    #[test]
    fn monte_carlo_frequencies_match_the_distribution() {
        let scores = ScoreVector::new(vec![0.5, 1.0, 2.0, 3.5]).unwrap();
        let configs = [
            AcquisitionPolicy::softmax(2.0).unwrap(),
            AcquisitionPolicy::power(1.5).unwrap(),
            AcquisitionPolicy::soft_rank(1.0).unwrap(),
        ];
        let draws: u64 = 200_000;
        for policy in configs {
            let table =
                score_distribution(&scores, &[policy.kind], &[policy.coldness.value()]).unwrap();
            let rng = RngState::new(55).with_purpose(Purpose::Acquire);
            let mut counts = vec![0usize; scores.len()];
            for draw in 0..draws {
                let sel = acquire_batch(&scores, &policy, 1, &rng.with_lane(draw)).unwrap();
                counts[sel.indices()[0]] += 1;
            }
            let tv: f64 = table
                .candidate
                .iter()
                .zip(&table.columns[0].probability)
                .map(|(&i, p)| (counts[i] as f64 / draws as f64 - p).abs())
                .sum::<f64>()
                / 2.0;
            assert!(tv < 0.01, "{} TV {tv:.4}", policy.descriptor());
        }
    }

    #[test]
    fn benchmark_smoke_test() {
        let policies = [AcquisitionPolicy::top_b(), AcquisitionPolicy::power(1.0).unwrap()];
        let table =
            bench_acquisition(&[1000, 2000], &[10], &policies, 3, &RngState::new(56)).unwrap();
        assert_eq!(table.records.len(), 4);
        assert!(table.records.iter().all(|r| r.median_s > 0.0 && r.mean_s > 0.0));
        assert_eq!(table.slopes.len(), 2);
        assert!(table.median("power(beta=1)", 1000, 10).is_some());
        assert!(bench_acquisition(&[10], &[20], &policies, 3, &RngState::new(56)).is_err());
        assert!(bench_acquisition(&[10], &[2], &policies, 0, &RngState::new(56)).is_err());
    }
}
