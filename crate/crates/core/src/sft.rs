//! Supervised fine-tuning on bare verdicts, and the format-priming stage that
//! produces the shared starting policy.

use std::collections::BTreeMap;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::{
    encode_example, random_example, sample_batch, DataConfig, Dataset, Example, SamplingStrategy,
    Split, TaskKind,
};
use crate::error::{Error, Result};
use crate::eval::evaluate_examples;
use crate::optim::{clip_grad_norm, cosine_lr, AdamWConfig, OptimizerState};
use crate::policy::{accumulate_weighted_grad, init_params, Dims, PolicyParameters};
use crate::rewards::VerdictForm;
use crate::rng::substream;
use crate::training::{examples_for, resolve_tasks, LogRow, TrainObserver, TrainRole, TrainState};
use crate::vocab::{tok, Vocabulary};

const SFT_STREAM: u64 = 0x5F7;
const PRIME_STREAM: u64 = 0xBA5E;

/// Gold continuation for one example.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SftTarget {
    pub example_id: String,
    pub tokens: Vec<u32>,
}

/// `[label, EOS]`. Pairwise tasks are held out and have no supervised target.
pub fn render_target(example: &Example) -> Result<SftTarget> {
    if example.task.is_pairwise() {
        return Err(Error::Contract(format!(
            "{} is a held-out pairwise example and has no training target",
            example.id
        )));
    }
    Ok(SftTarget {
        example_id: example.id.clone(),
        tokens: vec![example.gold.token(), tok::EOS],
    })
}

/// Mean teacher-forced negative log-likelihood per target token, with its gradient.
pub fn sft_loss(
    params: &PolicyParameters,
    batch: &[(Vec<u32>, Vec<u32>)],
) -> Result<(f64, Vec<f64>)> {
    let tokens: usize = batch.iter().map(|(_, t)| t.len()).sum();
    if batch.is_empty() || tokens == 0 {
        return Err(Error::Contract(
            "supervised batch has no target tokens".into(),
        ));
    }
    let w = -1.0 / tokens as f64;
    let mut grad = vec![0.0; params.flat().len()];
    let mut total = 0.0;
    for (prompt, target) in batch {
        let weights = vec![w; target.len()];
        let lps = accumulate_weighted_grad(params, prompt, &[(target, &weights)], &mut grad)?;
        total += lps[0].iter().sum::<f64>();
    }
    let loss = -total / tokens as f64;
    if !loss.is_finite() {
        return Err(Error::numerical("supervised loss", format!("{loss}")));
    }
    Ok((loss, grad))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SftConfig {
    pub learning_rate: f64,
    pub adam: AdamWConfig,
    pub max_grad_norm: f64,
    pub batch_size: usize,
    pub max_steps: usize,
    pub eval_every: usize,
    pub max_len: usize,
    /// Training tasks; `None` trains on every task in the train split.
    pub tasks: Option<Vec<TaskKind>>,
    pub strategy: SamplingStrategy,
    pub seed: u64,
}

impl Default for SftConfig {
    fn default() -> Self {
        Self {
            learning_rate: 3e-3,
            adam: AdamWConfig {
                weight_decay: 1e-5,
                ..AdamWConfig::default()
            },
            max_grad_norm: 1.0,
            batch_size: 32,
            max_steps: 1000,
            eval_every: 50,
            max_len: crate::eval::DEFAULT_MAX_LEN,
            tasks: None,
            strategy: SamplingStrategy::Proportional,
            seed: 0,
        }
    }
}

impl SftConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.batch_size == 0 || self.max_steps == 0 || self.eval_every == 0 || self.max_len == 0
        {
            return Err(Error::Config(
                "batch_size, max_steps, eval_every and max_len must be positive".into(),
            ));
        }
        self.adam.validate()
    }

    pub fn hash(&self) -> String {
        crate::sha256_hex(
            serde_json::to_string(self)
                .expect("config serializes")
                .as_bytes(),
        )
    }

    pub fn lr_at(&self, step: usize) -> f64 {
        cosine_lr(self.learning_rate, step, self.max_steps)
    }
}

/// Supervised training from `init`, selecting the checkpoint with the best
/// validation Macro-F1 (mean over training tasks, bare form).
pub fn sft_train(
    config: &SftConfig,
    dataset: &Dataset,
    vocab: &Vocabulary,
    init: &PolicyParameters,
    resume: Option<TrainState>,
    observer: &mut dyn TrainObserver,
) -> Result<TrainState> {
    config.validate()?;
    let tasks = resolve_tasks(dataset, config.tasks.as_deref())?;
    let val = examples_for(dataset, Split::Val, &tasks);
    if val.is_empty() {
        return Err(Error::Contract(
            "validation split has no examples for the training tasks".into(),
        ));
    }
    let hash = config.hash();
    let mut state = match resume {
        Some(s) => {
            s.check_resumable(TrainRole::Sft, &hash)?;
            s
        }
        None => TrainState::new(TrainRole::Sft, hash, init),
    };
    let mut params = state.policy()?;
    while state.step < config.max_steps {
        let mut rng = substream(config.seed, &[SFT_STREAM, state.step as u64]);
        let batch = sample_batch(
            dataset,
            Split::Train,
            Some(&tasks),
            config.strategy,
            config.batch_size,
            &mut rng,
        )?;
        let rows = batch
            .iter()
            .map(|e| Ok((encode_example(e, vocab)?, render_target(e)?.tokens)))
            .collect::<Result<Vec<_>>>()?;
        let ids: Vec<String> = batch.iter().map(|e| e.id.clone()).collect();
        let lr = config.lr_at(state.step);
        let (loss, mut grad) =
            sft_loss(&params, &rows).map_err(|e| with_batch(state.step + 1, &ids, e))?;
        let grad_norm = clip_grad_norm(&mut grad, config.max_grad_norm);
        state
            .optimizer
            .update(&config.adam, params.flat_mut(), &grad, lr)
            .map_err(|e| with_batch(state.step + 1, &ids, e))?;
        state.step += 1;
        state.params.copy_from_slice(params.flat());
        let mut row = LogRow {
            step: state.step,
            role: TrainRole::Sft,
            loss,
            mean_r_acc: None,
            mean_r_for: None,
            mean_kl: None,
            clip_fraction: None,
            lr,
            grad_norm,
            val_r_acc: None,
            val_macro_f1: None,
            val_per_task: None,
            example_ids: ids,
        };
        if state.step % config.eval_every == 0 || state.step == config.max_steps {
            let (reports, _) =
                evaluate_examples(&params, vocab, &val, VerdictForm::Sft, config.max_len)?;
            let score = reports.iter().map(|r| r.macro_f1).sum::<f64>() / reports.len() as f64;
            let per_task: BTreeMap<String, f64> = reports
                .iter()
                .map(|r| (r.task.slug().to_string(), r.macro_f1))
                .collect();
            row.val_macro_f1 = Some(score);
            row.val_per_task = Some(per_task);
            if state.offer_best(score) {
                observer.on_improvement(state.step, score, &params)?;
            }
        }
        state.log.push(row);
        if !observer.on_checkpoint(&state)? {
            break;
        }
    }
    Ok(state)
}

fn with_batch(step: usize, ids: &[String], err: Error) -> Error {
    match err {
        Error::Numerical { location, detail } => Error::Numerical {
            location: format!("step {step}, batch [{}]: {location}", ids.join(", ")),
            detail,
        },
        other => other,
    }
}

/// Settings of the format-priming stage.
///
/// Priming teaches the reasoning-form grammar on every task family, including the
/// pairwise ones, with labels drawn uniformly from each task's alphabet. The label
/// closes the reasoning span and is repeated in the box, so the primed policy
/// answers consistently with its own reasoning while carrying no task knowledge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrimeConfig {
    pub hidden: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub thinking_min: usize,
    pub thinking_max: usize,
    pub seed: u64,
}

impl Default for PrimeConfig {
    fn default() -> Self {
        Self {
            hidden: Dims::DEFAULT_HIDDEN,
            learning_rate: 3e-3,
            batch_size: 32,
            steps: 3000,
            thinking_min: 0,
            thinking_max: 2,
            seed: 0,
        }
    }
}

impl PrimeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.batch_size == 0 || self.steps == 0 {
            return Err(Error::Config(
                "hidden, batch_size and steps must be positive".into(),
            ));
        }
        if self.thinking_min > self.thinking_max {
            return Err(Error::Config("thinking_min exceeds thinking_max".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        Ok(())
    }
}

/// `THINK_OPEN t* label THINK_CLOSE BOX_OPEN KEY label BOX_CLOSE EOS`: random thinking
/// tokens, then a label drawn uniformly from the task's alphabet that closes the
/// reasoning and is repeated as the boxed answer.
fn random_verdict(
    rng: &mut crate::rng::Rng,
    task: TaskKind,
    vocab: &Vocabulary,
    config: &PrimeConfig,
) -> Vec<u32> {
    let think = vocab.thinking_ids();
    let len = rng.gen_range(config.thinking_min..=config.thinking_max);
    let mut out = vec![tok::THINK_OPEN];
    if !think.is_empty() {
        out.extend((0..len).map(|_| rng.gen_range(think.clone())));
    }
    let label = task.labels()[rng.gen_range(0..2)].token();
    out.extend([
        label,
        tok::THINK_CLOSE,
        tok::BOX_OPEN,
        tok::JSON_LABEL_KEY,
        label,
        tok::BOX_CLOSE,
        tok::EOS,
    ]);
    out
}

/// Trains a fresh initialization to emit well-formed, content-free verdicts.
pub fn prime_format(
    config: &PrimeConfig,
    data: &DataConfig,
    vocab: &Vocabulary,
) -> Result<(PolicyParameters, Vec<LogRow>)> {
    config.validate()?;
    data.validate()?;
    let dims = Dims {
        vocab: vocab.len(),
        hidden: config.hidden,
    };
    let mut params = init_params(config.seed, dims)?;
    let adam = AdamWConfig::default();
    let mut opt = OptimizerState::new(params.flat().len());
    let mut log = Vec::with_capacity(config.steps);
    for step in 0..config.steps {
        let mut rng = substream(config.seed, &[PRIME_STREAM, step as u64]);
        let mut rows = Vec::with_capacity(config.batch_size);
        for i in 0..config.batch_size {
            let task = TaskKind::ALL[rng.gen_range(0..TaskKind::ALL.len())];
            let ex = random_example(&mut rng, data, task, format!("prime-{step}-{i}"))?;
            rows.push((
                encode_example(&ex, vocab)?,
                random_verdict(&mut rng, task, vocab, config),
            ));
        }
        let (loss, mut grad) = sft_loss(&params, &rows)?;
        let grad_norm = clip_grad_norm(&mut grad, 1.0);
        let lr = cosine_lr(config.learning_rate, step, config.steps);
        opt.update(&adam, params.flat_mut(), &grad, lr)?;
        log.push(LogRow {
            step: step + 1,
            role: TrainRole::Base,
            loss,
            mean_r_acc: None,
            mean_r_for: None,
            mean_kl: None,
            clip_fraction: None,
            lr,
            grad_norm,
            val_r_acc: None,
            val_macro_f1: None,
            val_per_task: None,
            example_ids: Vec::new(),
        });
    }
    Ok((params, log))
}
