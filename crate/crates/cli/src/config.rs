//! The experiment configuration: one strict JSON document per run family.

use std::path::Path;

use judgerl::data::{DataConfig, SamplingStrategy, Split, TaskKind};
use judgerl::grpo::TrainConfig;
use judgerl::optim::AdamWConfig;
use judgerl::policy::Dims;
use judgerl::sft::{PrimeConfig, SftConfig};
use judgerl::vocab::Vocabulary;
use judgerl::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub hidden: usize,
    pub thinking_tokens: usize,
    pub max_len: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            hidden: Dims::DEFAULT_HIDDEN,
            thinking_tokens: judgerl::vocab::DEFAULT_THINKING_TOKENS,
            max_len: judgerl::eval::DEFAULT_MAX_LEN,
        }
    }
}

/// Format priming of the base policy that every trainer starts from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrimeSection {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub thinking_min: usize,
    pub thinking_max: usize,
}

impl Default for PrimeSection {
    fn default() -> Self {
        let p = PrimeConfig::default();
        Self {
            learning_rate: p.learning_rate,
            batch_size: p.batch_size,
            steps: p.steps,
            thinking_min: p.thinking_min,
            thinking_max: p.thinking_max,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RlSection {
    pub group_size: usize,
    pub clip_eps: f64,
    pub kl_beta: f64,
    pub alpha: f64,
    pub learning_rate: f64,
    pub adam: AdamWConfig,
    pub max_grad_norm: f64,
    pub global_batch: usize,
    pub rollout_batch: usize,
    pub ppo_epochs: usize,
    pub max_steps: usize,
    pub eval_every: usize,
    pub temperature: f64,
    pub strategy: SamplingStrategy,
    /// Write every sampled trace with its rewards to `rewards.jsonl`.
    pub trace_rewards: bool,
}

impl Default for RlSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            group_size: t.group_size,
            clip_eps: t.clip_eps,
            kl_beta: t.kl_beta,
            alpha: t.alpha,
            learning_rate: t.learning_rate,
            adam: t.adam,
            max_grad_norm: t.max_grad_norm,
            global_batch: t.global_batch,
            rollout_batch: t.rollout_batch,
            ppo_epochs: t.ppo_epochs,
            max_steps: t.max_steps,
            eval_every: t.eval_every,
            temperature: t.temperature,
            strategy: t.strategy,
            trace_rewards: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SftSection {
    pub learning_rate: f64,
    pub adam: AdamWConfig,
    pub max_grad_norm: f64,
    pub batch_size: usize,
    pub max_steps: usize,
    pub eval_every: usize,
    pub strategy: SamplingStrategy,
}

impl Default for SftSection {
    fn default() -> Self {
        let s = SftConfig::default();
        Self {
            learning_rate: s.learning_rate,
            adam: s.adam,
            max_grad_norm: s.max_grad_norm,
            batch_size: s.batch_size,
            max_steps: s.max_steps,
            eval_every: s.eval_every,
            strategy: s.strategy,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    /// Splits evaluated by `report`; pointwise tasks on the first, pairwise on `ood`.
    pub splits: Vec<Split>,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            splits: vec![Split::Test, Split::Ood],
        }
    }
}

/// Everything that determines a run. The output directory is the only field
/// excluded from the hash.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[derive(Default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub data: DataConfig,
    pub model: ModelSection,
    pub prime: PrimeSection,
    pub rl: RlSection,
    pub sft: SftSection,
    pub eval: EvalSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<String>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        if self.model.hidden == 0 || self.model.max_len == 0 {
            return Err(Error::Config(
                "model.hidden and model.max_len must be positive".into(),
            ));
        }
        self.prime_config().validate()?;
        self.train_config(None).validate()?;
        self.sft_config(None).validate()?;
        if self.eval.splits.is_empty() {
            return Err(Error::Config("eval.splits is empty".into()));
        }
        Ok(())
    }

    /// Canonical serialization without the output directory.
    pub fn canonical_json(&self) -> String {
        let c = Self {
            out: None,
            ..self.clone()
        };
        serde_json::to_string(&c).expect("config serializes")
    }

    pub fn hash(&self) -> String {
        judgerl::sha256_hex(self.canonical_json().as_bytes())
    }

    /// Hash of the inputs that determine the dataset.
    pub fn data_hash(&self) -> String {
        let key = serde_json::json!({ "data": self.data, "seed": self.seed });
        judgerl::sha256_hex(key.to_string().as_bytes())
    }

    pub fn vocabulary(&self) -> Vocabulary {
        Vocabulary::with_thinking_tokens(self.model.thinking_tokens)
    }

    pub fn dims(&self) -> Dims {
        Dims {
            vocab: self.vocabulary().len(),
            hidden: self.model.hidden,
        }
    }

    pub fn prime_config(&self) -> PrimeConfig {
        PrimeConfig {
            hidden: self.model.hidden,
            learning_rate: self.prime.learning_rate,
            batch_size: self.prime.batch_size,
            steps: self.prime.steps,
            thinking_min: self.prime.thinking_min,
            thinking_max: self.prime.thinking_max,
            seed: self.seed,
        }
    }

    pub fn train_config(&self, tasks: Option<Vec<TaskKind>>) -> TrainConfig {
        let r = &self.rl;
        TrainConfig {
            group_size: r.group_size,
            clip_eps: r.clip_eps,
            kl_beta: r.kl_beta,
            alpha: r.alpha,
            learning_rate: r.learning_rate,
            adam: r.adam,
            max_grad_norm: r.max_grad_norm,
            global_batch: r.global_batch,
            rollout_batch: r.rollout_batch,
            ppo_epochs: r.ppo_epochs,
            max_steps: r.max_steps,
            eval_every: r.eval_every,
            temperature: r.temperature,
            max_len: self.model.max_len,
            tasks,
            strategy: r.strategy,
            seed: self.seed,
        }
    }

    pub fn sft_config(&self, tasks: Option<Vec<TaskKind>>) -> SftConfig {
        let s = &self.sft;
        SftConfig {
            learning_rate: s.learning_rate,
            adam: s.adam,
            max_grad_norm: s.max_grad_norm,
            batch_size: s.batch_size,
            max_steps: s.max_steps,
            eval_every: s.eval_every,
            max_len: self.model.max_len,
            tasks,
            strategy: s.strategy,
            seed: self.seed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_and_validates() {
        let c = ExperimentConfig::default();
        let text = serde_json::to_string_pretty(&c).unwrap();
        assert_eq!(ExperimentConfig::from_json(&text).unwrap(), c);
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let mut v = serde_json::to_value(ExperimentConfig::default()).unwrap();
        v["rl"]["entropy_bonus"] = serde_json::json!(0.1);
        assert!(ExperimentConfig::from_json(&v.to_string()).is_err());
    }

    #[test]
    fn output_directory_does_not_change_the_hash() {
        let a = ExperimentConfig::default();
        let b = ExperimentConfig {
            out: Some("elsewhere".into()),
            ..a.clone()
        };
        assert_eq!(a.hash(), b.hash());
        let c = ExperimentConfig {
            seed: 1,
            ..a.clone()
        };
        assert_ne!(a.hash(), c.hash());
        assert_ne!(a.data_hash(), c.data_hash());
    }

    #[test]
    fn invalid_sections_are_config_errors() {
        let mut c = ExperimentConfig::default();
        c.rl.group_size = 1;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
    }
}
