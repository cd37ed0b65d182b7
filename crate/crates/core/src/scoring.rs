//! Single-point uncertainty scores over Monte-Carlo predictive samples.
//!
//! Scores take a `(M candidates × K posterior samples × C classes)` tensor of
//! class probabilities. Predictive entropy is the entropy of the posterior
//! mean prediction; BALD is the mutual information between prediction and
//! model parameters, estimated as entropy-of-mean minus mean-of-entropies.
//! Entropy measures total uncertainty, BALD only the epistemic part: a point
//! every member finds ambiguous in the same way has high entropy but zero
//! BALD.

use ndarray::{Array1, Array3, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampling::ScoreVector;

/// Class-probability tensor of shape (M, K, C): M pool candidates, K
/// posterior samples (ensemble members), C classes.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictiveSamples {
    probs: Array3<f64>,
}

impl PredictiveSamples {
    /// Validates shape (M ≥ 1, K ≥ 1, C ≥ 2), entry range [0, 1], and
    /// per-(candidate, sample) row sums of 1 within 1e-6.
    pub fn new(probs: Array3<f64>) -> Result<Self> {
        let (m, k, c) = probs.dim();
        if m == 0 || k == 0 {
            return Err(Error::input(format!("empty sample tensor: shape ({m}, {k}, {c})")));
        }
        if c < 2 {
            return Err(Error::input(format!("need at least 2 classes, got {c}")));
        }
        for ((i, j, l), &v) in probs.indexed_iter() {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::input(format!(
                    "probability out of range at ({i}, {j}, {l}): {v}"
                )));
            }
        }
        for (i, candidate) in probs.outer_iter().enumerate() {
            for (j, row) in candidate.outer_iter().enumerate() {
                let sum: f64 = row.sum();
                if (sum - 1.0).abs() > 1e-6 {
                    return Err(Error::input(format!(
                        "row ({i}, {j}) sums to {sum}, expected 1"
                    )));
                }
            }
        }
        Ok(Self { probs })
    }

    pub fn num_candidates(&self) -> usize {
        self.probs.dim().0
    }

    pub fn num_members(&self) -> usize {
        self.probs.dim().1
    }

    pub fn num_classes(&self) -> usize {
        self.probs.dim().2
    }

    pub fn probs(&self) -> &Array3<f64> {
        &self.probs
    }

    pub fn member_row(&self, candidate: usize, member: usize) -> ArrayView1<'_, f64> {
        self.probs.slice(ndarray::s![candidate, member, ..])
    }

    /// Posterior mean prediction: arithmetic mean over the K sample rows.
    /// Panics if `candidate` is out of bounds.
    pub fn mean_prediction(&self, candidate: usize) -> Array1<f64> {
        self.probs.index_axis(Axis(0), candidate).mean_axis(Axis(0)).unwrap()
    }
}

/// Which per-candidate uncertainty score to compute.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoreKind {
    Entropy,
    Bald,
}

impl ScoreKind {
    pub fn name(self) -> &'static str {
        match self {
            ScoreKind::Entropy => "entropy",
            ScoreKind::Bald => "bald",
        }
    }
}

impl std::fmt::Display for ScoreKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Shannon entropy in nats, with 0·ln 0 = 0. Probabilities are clamped to
/// [1e-12, 1] inside the logarithm only, so simplex corners stay exact.
pub fn distribution_entropy(probs: ArrayView1<'_, f64>) -> f64 {
    -probs.iter().map(|&p| p * p.clamp(1e-12, 1.0).ln()).sum::<f64>()
}

/// Entropy of the posterior mean prediction (total uncertainty).
pub fn entropy_score(samples: &PredictiveSamples, candidate: usize) -> f64 {
    distribution_entropy(samples.mean_prediction(candidate).view())
}

/// Mutual information between prediction and parameters (epistemic
/// uncertainty): entropy of the mean minus mean of the per-sample entropies.
///
/// Differences below 1e-12 nats snap to exactly 0. That clamps the tiny
/// negatives Monte-Carlo estimation produces and also the ~1e-16 round-off
/// residue of the K-fold mean, so identical sample rows score exactly 0.
pub fn bald_score(samples: &PredictiveSamples, candidate: usize) -> f64 {
    let total = entropy_score(samples, candidate);
    let member_mean = samples
        .probs
        .index_axis(Axis(0), candidate)
        .outer_iter()
        .map(distribution_entropy)
        .sum::<f64>()
        / samples.num_members() as f64;
    let mi = total - member_mean;
    if mi < 1e-12 {
        0.0
    } else {
        mi
    }
}

/// Scores every candidate with the chosen kind.
pub fn score_pool(samples: &PredictiveSamples, kind: ScoreKind) -> ScoreVector {
    let scores: Vec<f64> = (0..samples.num_candidates())
        .map(|i| match kind {
            ScoreKind::Entropy => entropy_score(samples, i),
            ScoreKind::Bald => bald_score(samples, i),
        })
        .collect();
    ScoreVector::new(scores).expect("entropy and BALD scores are finite and non-empty")
}
