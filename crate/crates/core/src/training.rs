//! Log rows, resumable state and persistence hooks shared by both trainers.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Example, Split, TaskKind};
use crate::error::{Error, Result};
use crate::optim::OptimizerState;
use crate::policy::{Dims, PolicyParameters};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainRole {
    Grpo,
    Sft,
    Base,
}

/// One optimizer step of a training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogRow {
    pub step: usize,
    pub role: TrainRole,
    pub loss: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_r_acc: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_r_for: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_kl: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clip_fraction: Option<f64>,
    pub lr: f64,
    pub grad_norm: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub val_r_acc: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub val_macro_f1: Option<f64>,
    /// Validation score per task slug at evaluation steps.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub val_per_task: Option<BTreeMap<String, f64>>,
    pub example_ids: Vec<String>,
}

impl LogRow {
    /// The score used for checkpoint selection, if this row is an evaluation point.
    pub fn selection_score(&self) -> Option<f64> {
        match self.role {
            TrainRole::Grpo => self.val_r_acc,
            TrainRole::Sft | TrainRole::Base => self.val_macro_f1,
        }
    }
}

/// Best evaluation point so far.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BestRecord {
    pub step: usize,
    pub score: f64,
    pub params: Vec<f64>,
}

/// Everything needed to continue a run exactly where it stopped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainState {
    pub role: TrainRole,
    pub config_hash: String,
    pub step: usize,
    pub dims: Dims,
    pub params: Vec<f64>,
    pub optimizer: OptimizerState,
    pub best: Option<BestRecord>,
    pub log: Vec<LogRow>,
}

impl TrainState {
    pub fn new(role: TrainRole, config_hash: String, params: &PolicyParameters) -> Self {
        Self {
            role,
            config_hash,
            step: 0,
            dims: params.dims(),
            params: params.flat().to_vec(),
            optimizer: OptimizerState::new(params.flat().len()),
            best: None,
            log: Vec::new(),
        }
    }

    pub fn policy(&self) -> Result<PolicyParameters> {
        PolicyParameters::from_flat(self.dims, self.params.clone())
    }

    pub fn check_resumable(&self, role: TrainRole, config_hash: &str) -> Result<()> {
        if self.role != role || self.config_hash != config_hash {
            return Err(Error::Config(format!(
                "resume state belongs to a {:?} run with config {}, not {:?} with {}",
                self.role, self.config_hash, role, config_hash
            )));
        }
        Ok(())
    }

    /// Records an evaluation score; returns true when it is a new best.
    pub(crate) fn offer_best(&mut self, score: f64) -> bool {
        if self.best.as_ref().is_none_or(|b| score > b.score) {
            self.best = Some(BestRecord {
                step: self.step,
                score,
                params: self.params.clone(),
            });
            true
        } else {
            false
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Result of a finished run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub best_step: usize,
    pub best_score: f64,
    pub best: PolicyParameters,
    pub last: PolicyParameters,
    pub log: Vec<LogRow>,
}

impl TrainOutcome {
    pub fn from_state(state: TrainState) -> Result<Self> {
        let best = state
            .best
            .clone()
            .ok_or_else(|| Error::Contract("run finished without an evaluation point".into()))?;
        Ok(Self {
            best_step: best.step,
            best_score: best.score,
            best: PolicyParameters::from_flat(state.dims, best.params)?,
            last: state.policy()?,
            log: state.log,
        })
    }
}

/// Persistence and interruption hooks.
pub trait TrainObserver {
    /// Called whenever the selection score improves.
    fn on_improvement(
        &mut self,
        _step: usize,
        _score: f64,
        _params: &PolicyParameters,
    ) -> Result<()> {
        Ok(())
    }

    /// Called at every resumable boundary; returning `false` stops the run there.
    fn on_checkpoint(&mut self, _state: &TrainState) -> Result<bool> {
        Ok(true)
    }
}

/// Observer that persists nothing and never interrupts.
pub struct NoObserver;

impl TrainObserver for NoObserver {}

/// Training tasks: the configured subset, or every task present in the train split.
pub(crate) fn resolve_tasks(
    dataset: &Dataset,
    tasks: Option<&[TaskKind]>,
) -> Result<Vec<TaskKind>> {
    let present = dataset.tasks_in(Split::Train);
    match tasks {
        None => Ok(present),
        Some(list) => {
            if list.is_empty() {
                return Err(Error::Config("task subset is empty".into()));
            }
            for t in list {
                if t.is_pairwise() {
                    return Err(Error::Config(format!(
                        "{t} is held out and cannot be trained on"
                    )));
                }
                if !present.contains(t) {
                    return Err(Error::Config(format!("train split has no {t} examples")));
                }
            }
            Ok(list.to_vec())
        }
    }
}

pub(crate) fn examples_for<'a>(
    dataset: &'a Dataset,
    split: Split,
    tasks: &[TaskKind],
) -> Vec<&'a Example> {
    dataset
        .split(split)
        .iter()
        .filter(|e| tasks.contains(&e.task))
        .collect()
}
