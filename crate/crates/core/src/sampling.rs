//! Stochastic batch acquisition via Gumbel-perturbed top-k selection.
//!
//! Taking the top k of keys `s_i + ε_i` with `ε_i ~ Gumbel(0, β⁻¹)` i.i.d.
//! draws an ordered sample without replacement from
//! `Categorical(exp(β·s_i) / Σ_j exp(β·s_j))`: the Gumbel-Top-k trick.
//! Three key shapes give three sampling distributions over candidates:
//!
//! | policy    | key                | selection probability ∝ |
//! |-----------|--------------------|--------------------------|
//! | softmax   | `s_i + ε_i`        | `exp(β·s_i)`             |
//! | power     | `ln(s_i) + ε_i`    | `s_i^β`                  |
//! | soft-rank | `−ln(r_i) + ε_i`   | `r_i^(−β)`               |
//!
//! where `r_i` is the descending rank of `s_i` (best score has rank 1).
//! `β → ∞` recovers plain top-k on the scores; `β = 0` is defined as exact
//! uniform sampling without replacement. [`swor_batch_probability`] computes
//! the exact ordered sampling-without-replacement probability from the
//! product formula and serves as the distribution oracle in tests.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{gumbel_from_uniform, RngState};

/// Scores below this are treated as zero by the power policy and mapped to
/// key −∞ (a zero-score point must not be sampled while finite keys remain).
pub const POWER_FLOOR: f64 = 1e-12;

/// Acquisition scores, one per pool candidate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreVector(Vec<f64>);

impl ScoreVector {
    /// Validates length ≥ 1 and finiteness of every entry.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::input("score vector is empty"));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::input(format!("score {i} is not finite: {}", values[i])));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        false // construction guarantees length >= 1
    }
}

/// Inverse noise scale β ≥ 0 of the Gumbel perturbation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Coldness(f64);

impl Coldness {
    pub fn new(beta: f64) -> Result<Self> {
        if !beta.is_finite() || beta < 0.0 {
            return Err(Error::parameter("beta", format!("must be finite and >= 0, got {beta}")));
        }
        Ok(Self(beta))
    }

    pub fn value(&self) -> f64 {
        self.0
    }

    pub fn is_zero(&self) -> bool {
        self.0 == 0.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyKind {
    TopB,
    Uniform,
    Softmax,
    Power,
    SoftRank,
}

impl PolicyKind {
    pub fn is_stochastic(self) -> bool {
        matches!(self, PolicyKind::Softmax | PolicyKind::Power | PolicyKind::SoftRank)
    }

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::TopB => "top-b",
            PolicyKind::Uniform => "uniform",
            PolicyKind::Softmax => "softmax",
            PolicyKind::Power => "power",
            PolicyKind::SoftRank => "soft-rank",
        }
    }
}

impl std::fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Policy kind plus coldness. Coldness is carried but ignored for TopB and
/// Uniform.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionPolicy {
    pub kind: PolicyKind,
    pub coldness: Coldness,
}

impl AcquisitionPolicy {
    pub fn new(kind: PolicyKind, coldness: Coldness) -> Self {
        Self { kind, coldness }
    }

    pub fn top_b() -> Self {
        Self::new(PolicyKind::TopB, Coldness(1.0))
    }

    pub fn uniform() -> Self {
        Self::new(PolicyKind::Uniform, Coldness(1.0))
    }

    pub fn softmax(beta: f64) -> Result<Self> {
        Ok(Self::new(PolicyKind::Softmax, Coldness::new(beta)?))
    }

    pub fn power(beta: f64) -> Result<Self> {
        Ok(Self::new(PolicyKind::Power, Coldness::new(beta)?))
    }

    pub fn soft_rank(beta: f64) -> Result<Self> {
        Ok(Self::new(PolicyKind::SoftRank, Coldness::new(beta)?))
    }

    /// Descriptor like `power(beta=1)` for records and logs.
    pub fn descriptor(&self) -> String {
        if self.kind.is_stochastic() {
            format!("{}(beta={})", self.kind, self.coldness.value())
        } else {
            self.kind.to_string()
        }
    }
}

/// Ordered batch of selected candidate indices, best first.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchSelection(Vec<usize>);

impl BatchSelection {
    pub fn new(indices: Vec<usize>) -> Self {
        Self(indices)
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Descending ranks of `scores`: the largest score gets rank 1; exact ties
/// are broken by ascending index, so ranks are always a permutation of 1..=M.
pub fn descending_ranks(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_unstable_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut ranks = vec![0usize; scores.len()];
    for (pos, &i) in order.iter().enumerate() {
        ranks[i] = pos + 1;
    }
    ranks
}

/// Clamps negative power/soft-rank scores to zero, warning once per call.
fn clamp_nonnegative(scores: &[f64], kind: PolicyKind) -> Vec<f64> {
    let negatives = scores.iter().filter(|&&s| s < 0.0).count();
    if negatives > 0 {
        log::warn!("{kind}: clamping {negatives} negative score(s) to 0");
    }
    scores.iter().map(|&s| s.max(0.0)).collect()
}

/// Builds perturbed keys from caller-supplied noise. This is [`perturb`]
/// with the noise vector made explicit so tests can stub ε; `eps` must
/// already be scaled to Gumbel(0, β⁻¹).
pub fn keys_with_noise(scores: &[f64], kind: PolicyKind, eps: &[f64]) -> Result<Vec<f64>> {
    if eps.len() != scores.len() {
        return Err(Error::parameter(
            "eps",
            format!("noise length {} != score length {}", eps.len(), scores.len()),
        ));
    }
    match kind {
        PolicyKind::Softmax => Ok(scores.iter().zip(eps).map(|(&s, &e)| s + e).collect()),
        PolicyKind::Power => {
            let s = clamp_nonnegative(scores, kind);
            Ok(s.iter()
                .zip(eps)
                .map(|(&s, &e)| if s < POWER_FLOOR { f64::NEG_INFINITY } else { s.ln() + e })
                .collect())
        }
        PolicyKind::SoftRank => {
            let s = clamp_nonnegative(scores, kind);
            let ranks = descending_ranks(&s);
            Ok(ranks.iter().zip(eps).map(|(&r, &e)| -(r as f64).ln() + e).collect())
        }
        other => Err(Error::parameter("policy", format!("{other} is not a perturbing policy"))),
    }
}

/// Perturbs scores into selection keys per the policy's key shape, with
/// ε_i ~ Gumbel(0, β⁻¹) i.i.d.
///
/// The noise for candidate `i` is drawn at counter `i` of `rng`'s stream, so
/// it depends only on (rng labels, i): two policies handed the same state
/// see the same ε vector, and pool iteration order is irrelevant.
///
/// β = 0 is rejected here (the Gumbel scale would be infinite); callers
/// route β = 0 to uniform sampling; see [`acquire_batch`].
pub fn perturb(scores: &ScoreVector, policy: &AcquisitionPolicy, rng: &RngState) -> Result<Vec<f64>> {
    if !policy.kind.is_stochastic() {
        return Err(Error::parameter(
            "policy",
            format!("{} does not perturb scores", policy.kind),
        ));
    }
    let beta = policy.coldness.value();
    if beta == 0.0 {
        return Err(Error::parameter("beta", "beta = 0 must be routed to uniform sampling"));
    }
    let scale = 1.0 / beta;
    let eps: Vec<f64> = (0..scores.len())
        .map(|i| gumbel_from_uniform(rng.uniform_at(i as u64), 0.0, scale))
        .collect();
    keys_with_noise(scores.values(), policy.kind, &eps)
}

/// Indices of the `k` largest keys, descending by key, exact ties broken by
/// ascending index. −∞ keys sort last, so they are selected only when fewer
/// than `k` finite keys exist.
pub fn select_top_k(keys: &[f64], k: usize) -> Result<BatchSelection> {
    if k == 0 {
        return Err(Error::parameter("k", "must be >= 1"));
    }
    if k > keys.len() {
        return Err(Error::parameter(
            "k",
            format!("k = {k} exceeds number of keys {}", keys.len()),
        ));
    }
    if let Some(i) = keys.iter().position(|v| v.is_nan()) {
        return Err(Error::parameter("keys", format!("key {i} is NaN")));
    }
    let mut pairs: Vec<(f64, usize)> = keys.iter().cloned().zip(0..).collect();
    let by_key_desc =
        |a: &(f64, usize), b: &(f64, usize)| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1));
    if k < pairs.len() {
        pairs.select_nth_unstable_by(k - 1, by_key_desc);
        pairs.truncate(k);
    }
    pairs.sort_unstable_by(by_key_desc);
    Ok(BatchSelection::new(pairs.into_iter().map(|(_, i)| i).collect()))
}

/// Uniform sample without replacement as top-b of i.i.d. uniform keys.
/// Keys are indexed by candidate, so this is deterministic in (rng, M, b).
fn uniform_batch(m: usize, b: usize, rng: &RngState) -> Result<BatchSelection> {
    let keys: Vec<f64> = (0..m).map(|i| rng.uniform_at(i as u64)).collect();
    select_top_k(&keys, b)
}

/// Draws an ordered acquisition batch of size `b`.
///
/// * `TopB`: top-b of the raw scores.
/// * `Uniform`, or any stochastic kind with β = 0: uniform sample without
///   replacement.
/// * `Softmax`/`Power`/`SoftRank` with β > 0: top-b of [`perturb`] keys. If
///   fewer than `b` keys are finite (power with floored scores), the finite
///   ones are taken first and the shortfall is filled uniformly without
///   replacement from the floored candidates.
pub fn acquire_batch(
    scores: &ScoreVector,
    policy: &AcquisitionPolicy,
    b: usize,
    rng: &RngState,
) -> Result<BatchSelection> {
    let m = scores.len();
    if b == 0 {
        return Err(Error::parameter("b", "must be >= 1"));
    }
    if b > m {
        return Err(Error::parameter("b", format!("batch size {b} exceeds pool size {m}")));
    }
    match policy.kind {
        PolicyKind::TopB => select_top_k(scores.values(), b),
        PolicyKind::Uniform => uniform_batch(m, b, rng),
        _ if policy.coldness.is_zero() => uniform_batch(m, b, rng),
        _ => {
            let keys = perturb(scores, policy, rng)?;
            let finite = keys.iter().filter(|k| k.is_finite()).count();
            if finite >= b {
                return select_top_k(&keys, b);
            }
            // Shortfall: every finite key wins a slot, the rest is a uniform
            // draw from the floored candidates on a dedicated noise stream.
            let mut indices = if finite > 0 {
                select_top_k(&keys, finite)?.0
            } else {
                Vec::new()
            };
            let fill_rng = rng.with_purpose(crate::rng::Purpose::Fill);
            let mut floored: Vec<(f64, usize)> = keys
                .iter()
                .enumerate()
                .filter(|(_, k)| !k.is_finite())
                .map(|(i, _)| (fill_rng.uniform_at(i as u64), i))
                .collect();
            floored.sort_unstable_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            indices.extend(floored.into_iter().take(b - finite).map(|(_, i)| i));
            Ok(BatchSelection::new(indices))
        }
    }
}

/// Exact probability of drawing `selection` (in order) when sampling without
/// replacement with the given positive weights:
/// ∏_{j=1..k} w_{i_j} / Σ_{ℓ ∈ remaining_j} w_ℓ.
///
/// This is the analytic distribution the Gumbel-top-k selection must follow,
/// used as the oracle in distribution tests.
pub fn swor_batch_probability(weights: &[f64], selection: &BatchSelection) -> Result<f64> {
    if selection.is_empty() {
        return Err(Error::parameter("selection", "must contain at least one index"));
    }
    if let Some(i) = weights.iter().position(|w| !(w.is_finite() && *w > 0.0)) {
        return Err(Error::parameter("weights", format!("weight {i} = {} is not > 0", weights[i])));
    }
    let mut taken = vec![false; weights.len()];
    let mut remaining: f64 = weights.iter().sum();
    let mut prob = 1.0;
    for &i in selection.indices() {
        if i >= weights.len() {
            return Err(Error::parameter("selection", format!("index {i} out of range")));
        }
        if taken[i] {
            return Err(Error::parameter("selection", format!("index {i} selected twice")));
        }
        taken[i] = true;
        prob *= weights[i] / remaining;
        remaining -= weights[i];
    }
    Ok(prob)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngState;
    use std::f64::consts::E;

    #[test]
    fn score_vector_rejects_empty_and_non_finite() {
        assert!(ScoreVector::new(vec![]).is_err());
        assert!(ScoreVector::new(vec![1.0, f64::NAN]).is_err());
        assert!(ScoreVector::new(vec![1.0, f64::INFINITY]).is_err());
        assert!(ScoreVector::new(vec![0.0]).is_ok());
    }

    #[test]
    fn coldness_domain() {
        assert!(Coldness::new(-0.1).is_err());
        assert!(Coldness::new(f64::NAN).is_err());
        assert!(Coldness::new(0.0).unwrap().is_zero());
        assert_eq!(Coldness::new(2.5).unwrap().value(), 2.5);
    }

    #[test]
    fn power_keys_of_geometric_sequence() {
        let keys = keys_with_noise(&[1.0, E, E * E], PolicyKind::Power, &[0.0; 3]).unwrap();
        assert_eq!(keys, vec![0.0, 1.0, 2.0]);
    }

    #[test]
    fn soft_rank_keys_from_rank_definition() {
        let keys = keys_with_noise(&[0.9, 0.1, 0.5], PolicyKind::SoftRank, &[0.0; 3]).unwrap();
        assert_eq!(keys[0], 0.0); // rank 1
        assert!((keys[1] - -(3.0f64.ln())).abs() < 1e-15);
        assert!((keys[2] - -(2.0f64.ln())).abs() < 1e-15);
    }

    #[test]
    fn power_floors_zero_scores_to_neg_infinity() {
        let keys = keys_with_noise(&[2.0, 0.0, 3.0], PolicyKind::Power, &[0.0; 3]).unwrap();
        assert_eq!(keys[0], 2.0f64.ln());
        assert_eq!(keys[1], f64::NEG_INFINITY);
        assert_eq!(keys[2], 3.0f64.ln());
    }

    #[test]
    fn negative_scores_clamp_to_zero_for_power_and_soft_rank() {
        let keys = keys_with_noise(&[-0.5, 1.0], PolicyKind::Power, &[0.0; 2]).unwrap();
        assert_eq!(keys[0], f64::NEG_INFINITY);
        // After clamping, -0.5 and -0.2 tie at zero; ranks fall back to index order.
        let keys = keys_with_noise(&[-0.5, -0.2, 3.0], PolicyKind::SoftRank, &[0.0; 3]).unwrap();
        assert_eq!(keys[0], -(2.0f64.ln()));
        assert!((keys[1] - -(3.0f64.ln())).abs() < 1e-15);
        assert_eq!(keys[2], 0.0);
    }

    #[test]
    fn descending_ranks_break_ties_by_index() {
        assert_eq!(descending_ranks(&[0.9, 0.1, 0.5]), vec![1, 3, 2]);
        assert_eq!(descending_ranks(&[7.0, 7.0, 1.0]), vec![1, 2, 3]);
    }

    #[test]
    fn select_top_k_examples() {
        assert_eq!(select_top_k(&[0.1, 5.0, 3.0], 2).unwrap().indices(), &[1, 2]);
        assert_eq!(select_top_k(&[7.0, 7.0, 1.0], 2).unwrap().indices(), &[0, 1]);
        assert_eq!(
            select_top_k(&[f64::NEG_INFINITY, 2.0, f64::NEG_INFINITY], 1).unwrap().indices(),
            &[1]
        );
    }

    #[test]
    fn select_top_k_domain_errors() {
        assert!(select_top_k(&[1.0, 2.0], 3).is_err());
        assert!(select_top_k(&[1.0, 2.0], 0).is_err());
        assert!(select_top_k(&[1.0, f64::NAN], 1).is_err());
    }

    #[test]
    fn select_top_k_matches_full_sort_on_random_keys() {
        let rng = RngState::new(314).with_purpose(crate::rng::Purpose::Bench);
        for round in 0..50u64 {
            let m = 1 + (rng.value_at(round) % 40) as usize;
            let keys: Vec<f64> = (0..m)
                .map(|i| rng.with_lane(round).uniform_at(i as u64).mul_add(4.0, -2.0))
                .collect();
            let k = 1 + (rng.value_at(round ^ 0xffff) % m as u64) as usize;
            let mut order: Vec<usize> = (0..m).collect();
            order.sort_by(|&a, &b| keys[b].total_cmp(&keys[a]).then(a.cmp(&b)));
            assert_eq!(select_top_k(&keys, k).unwrap().indices(), &order[..k]);
        }
    }

    #[test]
    fn top_b_acquisition() {
        let scores = ScoreVector::new(vec![1.0, 2.0, 3.0]).unwrap();
        let sel =
            acquire_batch(&scores, &AcquisitionPolicy::top_b(), 2, &RngState::new(0)).unwrap();
        assert_eq!(sel.indices(), &[2, 1]);
    }

    #[test]
    fn acquire_batch_domain_errors() {
        let scores = ScoreVector::new(vec![1.0, 2.0]).unwrap();
        let rng = RngState::new(0);
        assert!(acquire_batch(&scores, &AcquisitionPolicy::top_b(), 3, &rng).is_err());
        assert!(acquire_batch(&scores, &AcquisitionPolicy::top_b(), 0, &rng).is_err());
    }

    #[test]
    fn perturb_rejects_beta_zero_and_non_stochastic_kinds() {
        let scores = ScoreVector::new(vec![1.0, 2.0]).unwrap();
        let rng = RngState::new(0);
        assert!(perturb(&scores, &AcquisitionPolicy::softmax(0.0).unwrap(), &rng).is_err());
        assert!(perturb(&scores, &AcquisitionPolicy::top_b(), &rng).is_err());
        assert!(perturb(&scores, &AcquisitionPolicy::uniform(), &rng).is_err());
    }

    #[test]
    fn softmax_single_pick_frequencies() {
        // P(i) = exp(s_i)/Σ = i/6 for s = [ln 1, ln 2, ln 3].
        let scores = ScoreVector::new(vec![1.0f64.ln(), 2.0f64.ln(), 3.0f64.ln()]).unwrap();
        let policy = AcquisitionPolicy::softmax(1.0).unwrap();
        let rng = RngState::new(2001);
        let n = 200_000u64;
        let mut counts = [0usize; 3];
        for t in 0..n {
            let sel = acquire_batch(&scores, &policy, 1, &rng.with_lane(t)).unwrap();
            counts[sel.indices()[0]] += 1;
        }
        for (i, &c) in counts.iter().enumerate() {
            let freq = c as f64 / n as f64;
            let want = (i + 1) as f64 / 6.0;
            assert!((freq - want).abs() < 0.005, "softmax pick {i}: {freq} vs {want}");
        }
    }

    #[test]
    fn power_single_pick_frequencies() {
        // P(i) ∝ s_i for β = 1.
        let scores = ScoreVector::new(vec![1.0, 2.0, 3.0]).unwrap();
        let policy = AcquisitionPolicy::power(1.0).unwrap();
        let rng = RngState::new(2002);
        let n = 200_000u64;
        let mut counts = [0usize; 3];
        for t in 0..n {
            let sel = acquire_batch(&scores, &policy, 1, &rng.with_lane(t)).unwrap();
            counts[sel.indices()[0]] += 1;
        }
        for (i, &c) in counts.iter().enumerate() {
            let freq = c as f64 / n as f64;
            let want = (i + 1) as f64 / 6.0;
            assert!((freq - want).abs() < 0.005, "power pick {i}: {freq} vs {want}");
        }
    }

    #[test]
    fn power_shortfall_fills_uniformly_from_floored_pool() {
        let scores = ScoreVector::new(vec![2.0, 0.0, 3.0, 0.0]).unwrap();
        let policy = AcquisitionPolicy::power(1.0).unwrap();
        let rng = RngState::new(5);
        let sel = acquire_batch(&scores, &policy, 3, &rng).unwrap();
        assert_eq!(sel.len(), 3);
        // The two finite-key candidates come first in key order.
        let finite_first: Vec<usize> = sel.indices()[..2].to_vec();
        assert!(finite_first == vec![2, 0] || finite_first == vec![0, 2]);
        assert!(sel.indices()[2] == 1 || sel.indices()[2] == 3);
        // All-zero scores: the whole batch is a uniform fill.
        let zeros = ScoreVector::new(vec![0.0, 0.0, 0.0]).unwrap();
        let sel = acquire_batch(&zeros, &policy, 2, &rng).unwrap();
        assert_eq!(sel.len(), 2);
        assert_ne!(sel.indices()[0], sel.indices()[1]);
        // Fill marginals are uniform-ish over many seeds.
        let mut counts = [0usize; 3];
        for t in 0..30_000u64 {
            let s = acquire_batch(&zeros, &policy, 1, &rng.with_lane(t)).unwrap();
            counts[s.indices()[0]] += 1;
        }
        for &c in &counts {
            let freq = c as f64 / 30_000.0;
            assert!((freq - 1.0 / 3.0).abs() < 0.01, "fill marginal {freq}");
        }
    }

    #[test]
    fn beta_zero_routes_to_the_uniform_path_exactly() {
        let scores = ScoreVector::new(vec![5.0, 1.0, 3.0, 2.0]).unwrap();
        for t in 0..200u64 {
            let rng = RngState::new(60).with_lane(t);
            let uni = acquire_batch(&scores, &AcquisitionPolicy::uniform(), 2, &rng).unwrap();
            for kind in [PolicyKind::Softmax, PolicyKind::Power, PolicyKind::SoftRank] {
                let policy = AcquisitionPolicy::new(kind, Coldness::new(0.0).unwrap());
                let sel = acquire_batch(&scores, &policy, 2, &rng).unwrap();
                assert_eq!(sel, uni, "beta=0 {kind} differs from uniform");
            }
        }
    }

    #[test]
    fn acquisition_is_deterministic_byte_for_byte() {
        let scores = ScoreVector::new(vec![0.3, 1.4, 0.9, 2.2, 0.1]).unwrap();
        let rng = RngState::new(99).with_trial(1).with_step(2);
        for policy in [
            AcquisitionPolicy::top_b(),
            AcquisitionPolicy::uniform(),
            AcquisitionPolicy::softmax(0.7).unwrap(),
            AcquisitionPolicy::power(2.0).unwrap(),
            AcquisitionPolicy::soft_rank(1.0).unwrap(),
        ] {
            let a = acquire_batch(&scores, &policy, 3, &rng).unwrap();
            let b = acquire_batch(&scores, &policy, 3, &rng).unwrap();
            assert_eq!(
                serde_json::to_vec(&a).unwrap(),
                serde_json::to_vec(&b).unwrap(),
                "{} not deterministic",
                policy.descriptor()
            );
        }
    }

    #[test]
    fn swor_probability_examples() {
        let p = swor_batch_probability(&[1.0, 1.0], &BatchSelection::new(vec![0, 1])).unwrap();
        assert_eq!(p, 0.5);
        let p = swor_batch_probability(&[1.0, 2.0, 3.0], &BatchSelection::new(vec![2, 1])).unwrap();
        assert!((p - 1.0 / 3.0).abs() < 1e-15);
        let p = swor_batch_probability(&[5.0], &BatchSelection::new(vec![0])).unwrap();
        assert_eq!(p, 1.0);
    }

    #[test]
    fn swor_probability_domain_errors() {
        let w = [1.0, 2.0];
        assert!(swor_batch_probability(&w, &BatchSelection::new(vec![])).is_err());
        assert!(swor_batch_probability(&w, &BatchSelection::new(vec![0, 0])).is_err());
        assert!(swor_batch_probability(&w, &BatchSelection::new(vec![2])).is_err());
        assert!(swor_batch_probability(&[0.0, 1.0], &BatchSelection::new(vec![0])).is_err());
        assert!(swor_batch_probability(&[-1.0, 1.0], &BatchSelection::new(vec![1])).is_err());
    }

    #[test]
    fn swor_probabilities_sum_to_one_over_all_ordered_pairs() {
        let w = [1.0, 2.0, 3.0, 5.0];
        let mut total = 0.0;
        for i in 0..4 {
            for j in 0..4 {
                if i != j {
                    total += swor_batch_probability(&w, &BatchSelection::new(vec![i, j])).unwrap();
                }
            }
        }
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn shared_noise_makes_power_equal_softmax_on_log_scores() {
        let rng = RngState::new(424);
        for round in 0..200u64 {
            let gen = rng.with_lane(round);
            let m = 2 + (gen.value_at(1_000_000) % 30) as usize;
            let scores: Vec<f64> =
                (0..m).map(|i| 1e-6 + gen.uniform_at(i as u64) * 10.0).collect();
            let logs: Vec<f64> = scores.iter().map(|s| s.ln()).collect();
            let b = 1 + (gen.value_at(2_000_000) % m.min(10) as u64) as usize;
            let noise_rng = rng.with_step(round);
            let p = acquire_batch(
                &ScoreVector::new(scores).unwrap(),
                &AcquisitionPolicy::power(1.7).unwrap(),
                b,
                &noise_rng,
            )
            .unwrap();
            let s = acquire_batch(
                &ScoreVector::new(logs).unwrap(),
                &AcquisitionPolicy::softmax(1.7).unwrap(),
                b,
                &noise_rng,
            )
            .unwrap();
            assert_eq!(p, s, "round {round}");
        }
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(100))]

            #[test]
            fn selections_are_distinct_in_range_and_sized(
                seed in any::<u64>(),
                m in 1usize..40,
                kind in prop::sample::select(vec![
                    PolicyKind::TopB, PolicyKind::Uniform,
                    PolicyKind::Softmax, PolicyKind::Power, PolicyKind::SoftRank,
                ]),
            ) {
                let rng = RngState::new(seed);
                let scores: Vec<f64> =
                    (0..m).map(|i| rng.with_lane(7).uniform_at(i as u64) * 3.0).collect();
                let b = 1 + (seed % m as u64) as usize;
                let policy = AcquisitionPolicy::new(kind, Coldness::new(1.3).unwrap());
                let sel = acquire_batch(
                    &ScoreVector::new(scores).unwrap(), &policy, b, &rng,
                ).unwrap();
                prop_assert_eq!(sel.len(), b);
                let mut seen = vec![false; m];
                for &i in sel.indices() {
                    prop_assert!(i < m);
                    prop_assert!(!seen[i]);
                    seen[i] = true;
                }
            }

            #[test]
            fn soft_rank_ignores_monotone_score_transforms(
                seed in any::<u64>(),
                m in 2usize..30,
            ) {
                let rng = RngState::new(seed);
                let scores: Vec<f64> =
                    (0..m).map(|i| 0.1 + rng.with_lane(3).uniform_at(i as u64) * 5.0).collect();
                let policy = AcquisitionPolicy::soft_rank(0.8).unwrap();
                let b = 1 + (seed % m.min(6) as u64) as usize;
                let noise = rng.with_step(1);
                let base = acquire_batch(
                    &ScoreVector::new(scores.clone()).unwrap(), &policy, b, &noise,
                ).unwrap();
                for transform in [
                    |s: f64| 2.0 * s + 1.0,
                    |s: f64| s * s * s,
                    |s: f64| s.exp(),
                ] {
                    let mapped: Vec<f64> = scores.iter().map(|&s| transform(s)).collect();
                    let sel = acquire_batch(
                        &ScoreVector::new(mapped).unwrap(), &policy, b, &noise,
                    ).unwrap();
                    prop_assert_eq!(&sel, &base);
                }
            }

            #[test]
            fn swor_probability_in_unit_interval(
                k in 1usize..5,
                weights in prop::collection::vec(0.01f64..100.0, 5..12),
            ) {
                let sel = BatchSelection::new((0..k).collect());
                let p = swor_batch_probability(&weights, &sel).unwrap();
                prop_assert!(p > 0.0 && p <= 1.0);
            }
        }
    }
}
