//! TOML experiment configuration: parsing, flag/env resolution, conversion
//! into library types, and the validation pass that runs before any output
//! directory is created.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use stochacq::active::{LoopConfig, SplitSpec};
use stochacq::datasets::{
    gen_high_aleatoric, gen_imbalanced_groups, gen_repeated_clusters, load_csv, CsvSchema, Dataset,
};
use stochacq::model::TrainConfig;
use stochacq::rng::RngState;
use stochacq::sampling::{AcquisitionPolicy, PolicyKind};
use stochacq::scoring::ScoreKind;

use crate::CliError;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DatasetSpec {
    /// Gaussian class blobs with exact duplicate-cluster copies.
    RepeatedClusters {
        classes: usize,
        per_class: usize,
        repeats: usize,
        noise_sd: f64,
        dim: usize,
    },
    /// Two subgroups per class with a majority/minority split.
    ImbalancedGroups {
        classes: usize,
        per_class: usize,
        majority_fraction: f64,
        dim: usize,
    },
    /// Clean blobs plus a label-noise occluded subgroup.
    HighAleatoric {
        classes: usize,
        per_class: usize,
        occlusion_fraction: f64,
        dim: usize,
    },
    /// Load from a header-first CSV file.
    Csv {
        path: PathBuf,
        label_column: String,
        group_column: Option<String>,
    },
}

impl DatasetSpec {
    pub fn build(&self, rng: &RngState) -> stochacq::Result<Dataset> {
        match self {
            DatasetSpec::RepeatedClusters { classes, per_class, repeats, noise_sd, dim } => {
                gen_repeated_clusters(*classes, *per_class, *repeats, *noise_sd, *dim, rng)
            }
            DatasetSpec::ImbalancedGroups { classes, per_class, majority_fraction, dim } => {
                gen_imbalanced_groups(*classes, *per_class, *majority_fraction, *dim, rng)
            }
            DatasetSpec::HighAleatoric { classes, per_class, occlusion_fraction, dim } => {
                gen_high_aleatoric(*classes, *per_class, *occlusion_fraction, *dim, rng)
            }
            DatasetSpec::Csv { path, label_column, group_column } => {
                let schema = CsvSchema {
                    label_column: label_column.clone(),
                    group_column: group_column.clone(),
                };
                load_csv(path, &schema)
            }
        }
    }
}

fn default_test_fraction() -> f64 {
    0.2
}

fn default_initial_train() -> usize {
    20
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSection {
    pub initial_train: usize,
    pub test_fraction: f64,
}

impl Default for SplitSection {
    fn default() -> Self {
        Self { initial_train: default_initial_train(), test_fraction: default_test_fraction() }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoopSection {
    pub policy: PolicyKind,
    /// Coldness for stochastic policies; must stay unset for top-b and
    /// uniform. Defaults to 1.
    pub beta: Option<f64>,
    pub score_kind: ScoreKind,
    pub batch_size: usize,
    pub num_steps: usize,
    pub ensemble_size: usize,
    pub hidden_dims: Vec<usize>,
    pub reinit_each_step: bool,
}

impl Default for LoopSection {
    fn default() -> Self {
        Self {
            policy: PolicyKind::Power,
            beta: None,
            score_kind: ScoreKind::Bald,
            batch_size: 10,
            num_steps: 10,
            ensemble_size: 10,
            hidden_dims: vec![64, 64],
            reinit_each_step: true,
        }
    }
}

/// Builds a policy of the given kind, applying `beta` only where coldness
/// is meaningful.
pub fn policy_for(kind: PolicyKind, beta: f64) -> stochacq::Result<AcquisitionPolicy> {
    Ok(match kind {
        PolicyKind::TopB => AcquisitionPolicy::top_b(),
        PolicyKind::Uniform => AcquisitionPolicy::uniform(),
        PolicyKind::Softmax => AcquisitionPolicy::softmax(beta)?,
        PolicyKind::Power => AcquisitionPolicy::power(beta)?,
        PolicyKind::SoftRank => AcquisitionPolicy::soft_rank(beta)?,
    })
}

impl LoopSection {
    pub fn policy(&self) -> Result<AcquisitionPolicy, CliError> {
        if !self.policy.is_stochastic() {
            if self.beta.is_some() {
                return Err(CliError::config(format!(
                    "loop.beta: not meaningful for the {} policy",
                    self.policy.name()
                )));
            }
            return Ok(policy_for(self.policy, 0.0).expect("deterministic policy"));
        }
        policy_for(self.policy, self.beta.unwrap_or(1.0))
            .map_err(|e| CliError::config(format!("loop.beta: {e}")))
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub trials: usize,
    pub seed: u64,
    pub out_dir: PathBuf,
}

impl Default for RunSection {
    fn default() -> Self {
        Self { trials: 5, seed: 42, out_dir: PathBuf::from("runs") }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnoseSection {
    /// Rank-trajectory reference step.
    pub reference_step: usize,
    /// Replay freeze step.
    pub freeze_step: usize,
    /// Acquisitions to follow after the reference/freeze point.
    pub horizon: usize,
    /// Evaluation subset for rank trajectories: `all`, `top:F`, `bottom:F`.
    pub subset: String,
    /// Explicit score vector for the `scoredist` diagnostic.
    pub scores: Option<Vec<f64>>,
    pub betas: Vec<f64>,
    pub policies: Vec<PolicyKind>,
}

impl Default for DiagnoseSection {
    fn default() -> Self {
        Self {
            reference_step: 0,
            freeze_step: 0,
            horizon: 30,
            subset: "all".to_string(),
            scores: None,
            betas: vec![1.0],
            policies: vec![PolicyKind::Power, PolicyKind::Softmax],
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSection {
    pub pool_sizes: Vec<usize>,
    pub batch_sizes: Vec<usize>,
    pub policies: Vec<PolicyKind>,
    /// Coldness applied to every stochastic policy in the grid.
    pub beta: f64,
    pub repeats: usize,
}

impl Default for BenchSection {
    fn default() -> Self {
        Self {
            pool_sizes: vec![10_000, 100_000],
            batch_sizes: vec![10, 100, 500],
            policies: vec![
                PolicyKind::TopB,
                PolicyKind::Softmax,
                PolicyKind::Power,
                PolicyKind::SoftRank,
            ],
            beta: 1.0,
            repeats: 5,
        }
    }
}

impl BenchSection {
    pub fn policies(&self) -> Result<Vec<AcquisitionPolicy>, CliError> {
        self.policies
            .iter()
            .map(|&kind| {
                policy_for(kind, self.beta)
                    .map_err(|e| CliError::config(format!("bench.beta: {e}")))
            })
            .collect()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub split: SplitSection,
    #[serde(rename = "loop", default)]
    pub loop_: LoopSection,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub diagnose: DiagnoseSection,
    #[serde(default)]
    pub bench: BenchSection,
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| {
            CliError::config(format!("config {}: {e}", path.display()))
        })?;
        toml::from_str(&text)
            .map_err(|e| CliError::config(format!("config {}: {e}", path.display())))
    }

    /// Applies command-line/environment overrides.
    pub fn resolve(mut self, seed: Option<u64>, out: Option<PathBuf>, trials: Option<usize>) -> Self {
        if let Some(seed) = seed {
            self.run.seed = seed;
        }
        if let Some(out) = out {
            self.run.out_dir = out;
        }
        if let Some(trials) = trials {
            self.run.trials = trials;
        }
        self
    }

    pub fn split_spec(&self) -> SplitSpec {
        SplitSpec {
            initial_train: self.split.initial_train,
            test_fraction: self.split.test_fraction,
        }
    }

    pub fn loop_config(&self) -> Result<LoopConfig, CliError> {
        Ok(LoopConfig {
            policy: self.loop_.policy()?,
            score_kind: self.loop_.score_kind,
            batch_size: self.loop_.batch_size,
            num_steps: self.loop_.num_steps,
            ensemble_size: self.loop_.ensemble_size,
            hidden_dims: self.loop_.hidden_dims.clone(),
            train: self.train,
            reinit_each_step: self.loop_.reinit_each_step,
        })
    }

    pub fn build_dataset(&self) -> Result<Dataset, CliError> {
        self.dataset
            .build(&RngState::new(self.run.seed))
            .map_err(|e| CliError::config(format!("dataset: {e}")))
    }

    /// Everything an experiment command needs, checked before any output
    /// is created: dataset construction, policy/loop assembly, and a dry
    /// split of trial 0 so infeasible sizes surface as config errors.
    pub fn prepare_experiment(&self) -> Result<(Dataset, LoopConfig), CliError> {
        if self.run.trials == 0 {
            return Err(CliError::config("run.trials: must be positive"));
        }
        let dataset = self.build_dataset()?;
        let config = self.loop_config()?;
        let rng = RngState::new(self.run.seed);
        let split = stochacq::datasets::make_splits(
            &dataset,
            self.split.initial_train,
            self.split.test_fraction,
            &rng.with_trial(0),
        )
        .map_err(|e| CliError::config(format!("split: {e}")))?;
        config
            .validate(split.pool().len())
            .map_err(|e| CliError::config(format!("loop: {e}")))?;
        Ok((dataset, config))
    }

    /// Canonical TOML for the resolved config; also the hash input (with
    /// the output directory blanked so relocating runs keeps the hash).
    pub fn snapshot_toml(&self) -> Result<String, CliError> {
        toml::to_string_pretty(self)
            .map_err(|e| CliError::config(format!("config serialization: {e}")))
    }

    pub fn hash(&self) -> Result<String, CliError> {
        let mut hashed = self.clone();
        hashed.run.out_dir = PathBuf::new();
        let canonical = hashed.snapshot_toml()?;
        Ok(format!("{:016x}", fnv1a64(canonical.as_bytes()))[..8].to_string())
    }
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[dataset]
kind = "repeated-clusters"
classes = 2
per_class = 30
repeats = 1
noise_sd = 0.1
dim = 2
"#;

    #[test]
    fn minimal_config_gets_defaults() {
        let config: Config = toml::from_str(MINIMAL).unwrap();
        assert_eq!(config.run.trials, 5);
        assert_eq!(config.run.seed, 42);
        assert_eq!(config.loop_.policy, PolicyKind::Power);
        assert_eq!(config.loop_.hidden_dims, vec![64, 64]);
        let policy = config.loop_.policy().unwrap();
        assert_eq!(policy.coldness.value(), 1.0);
        assert_eq!(config.train.learning_rate, 0.001);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let bad = format!("{MINIMAL}\n[loop]\nbatch_sizes = 3\n");
        assert!(toml::from_str::<Config>(&bad).is_err());
        let bad = format!("{MINIMAL}\n[runn]\ntrials = 3\n");
        assert!(toml::from_str::<Config>(&bad).is_err());
    }

    #[test]
    fn beta_is_rejected_for_deterministic_policies() {
        let text = format!("{MINIMAL}\n[loop]\npolicy = \"top-b\"\nbeta = 2.0\n");
        let config: Config = toml::from_str(&text).unwrap();
        let err = config.loop_.policy().unwrap_err();
        assert!(err.to_string().contains("loop.beta"));
    }

    #[test]
    fn overrides_replace_config_values() {
        let config: Config = toml::from_str(MINIMAL).unwrap();
        let resolved = config.resolve(Some(7), Some(PathBuf::from("elsewhere")), Some(2));
        assert_eq!(resolved.run.seed, 7);
        assert_eq!(resolved.run.trials, 2);
        assert_eq!(resolved.run.out_dir, PathBuf::from("elsewhere"));
    }

    #[test]
    fn hash_ignores_out_dir_but_not_seed() {
        let config: Config = toml::from_str(MINIMAL).unwrap();
        let base = config.hash().unwrap();
        let moved = config.clone().resolve(None, Some(PathBuf::from("x")), None);
        assert_eq!(moved.hash().unwrap(), base);
        let reseeded = config.resolve(Some(7), None, None);
        assert_ne!(reseeded.hash().unwrap(), base);
    }

    #[test]
    fn infeasible_batch_budget_is_a_config_error() {
        let text = format!("{MINIMAL}\n[loop]\nbatch_size = 50\nnum_steps = 10\n");
        let config: Config = toml::from_str(&text).unwrap();
        let err = config.prepare_experiment().unwrap_err();
        assert!(err.to_string().contains("batch_size"), "{err}");
    }

    #[test]
    fn dataset_specs_build() {
        let rng = RngState::new(1);
        let spec = DatasetSpec::ImbalancedGroups {
            classes: 2,
            per_class: 20,
            majority_fraction: 0.8,
            dim: 2,
        };
        assert_eq!(spec.build(&rng).unwrap().len(), 40);
        let spec = DatasetSpec::HighAleatoric {
            classes: 2,
            per_class: 15,
            occlusion_fraction: 0.2,
            dim: 2,
        };
        let data = spec.build(&rng).unwrap();
        assert_eq!(data.len(), 30);
        assert!(data.subgroup().is_some());
    }
}
