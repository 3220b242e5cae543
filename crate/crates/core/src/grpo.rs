//! Group relative policy optimization over the unified verdict dataset.
//!
//! Each rollout freezes the current parameters as the old policy, samples `G`
//! outputs per prompt, normalizes their rewards within the group, then takes
//! optimizer steps on the clipped token-level surrogate with a k3 KL penalty
//! towards the frozen reference policy.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::data::{
    encode_example, sample_batch, Dataset, Example, Label, SamplingStrategy, Split, TaskKind,
};
use crate::error::{Error, Result};
use crate::eval::evaluate_examples;
use crate::optim::{clip_grad_norm, AdamWConfig};
use crate::policy::{
    backprop_continuations, continuation_logprobs, sample_from_state, Decoding, GenerationTrace,
    PolicyParameters,
};
use crate::rewards::{score_output, ParseFailure, RewardBreakdown, RewardTraceRow, VerdictForm};
use crate::rng::{substream, Rng};
use crate::training::{examples_for, resolve_tasks, LogRow, TrainObserver, TrainRole, TrainState};
use crate::vocab::Vocabulary;

/// Groups whose reward spread is below this carry no signal.
pub const DEGENERATE_STD: f64 = 1e-8;

const ROLLOUT_STREAM: u64 = 0x6770;
const GROUP_STREAM: u64 = 0x6771;

/// The `G` scored samples for one prompt.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutGroup {
    pub example_id: String,
    pub task: TaskKind,
    pub gold: Label,
    pub prompt: Vec<u32>,
    pub traces: Vec<GenerationTrace>,
    pub rewards: Vec<RewardBreakdown>,
    pub failures: Vec<ParseFailure>,
    /// Empty until [`RolloutGroup::assign_advantages`] runs.
    pub advantages: Vec<f64>,
}

impl RolloutGroup {
    pub fn totals(&self) -> Vec<f64> {
        self.rewards.iter().map(|r| r.r_total).collect()
    }

    pub fn assign_advantages(&mut self) -> Result<()> {
        self.advantages = compute_advantages(&self.totals())?;
        Ok(())
    }

    pub fn reward_rows(&self) -> Vec<RewardTraceRow> {
        self.traces
            .iter()
            .zip(&self.rewards)
            .zip(&self.failures)
            .map(|((t, r), f)| RewardTraceRow {
                example_id: self.example_id.clone(),
                output_tokens: t.output.clone(),
                failure: *f,
                r_acc: r.r_acc,
                r_for: r.r_for,
                r_total: r.r_total,
            })
            .collect()
    }

    fn output_tokens(&self) -> usize {
        self.traces.iter().map(|t| t.output.len()).sum()
    }
}

/// Samples `group_size` continuations of `prompt` and scores each in reasoning form.
#[allow(clippy::too_many_arguments)]
pub fn collect_group(
    params: &PolicyParameters,
    example: &Example,
    prompt: &[u32],
    group_size: usize,
    decoding: Decoding,
    max_len: usize,
    alpha: f64,
    rng: &mut Rng,
) -> Result<RolloutGroup> {
    if group_size < 2 {
        return Err(Error::Contract(format!(
            "group size must be at least 2, got {group_size}"
        )));
    }
    let h = params.prompt_state(prompt)?;
    let mut traces = Vec::with_capacity(group_size);
    let mut rewards = Vec::with_capacity(group_size);
    let mut failures = Vec::with_capacity(group_size);
    for _ in 0..group_size {
        let trace = sample_from_state(params, prompt, h.clone(), decoding, max_len, rng)?;
        let (parsed, reward) = score_output(&trace.output, example.gold, VerdictForm::Rl, alpha)?;
        traces.push(trace);
        rewards.push(reward);
        failures.push(parsed.failure);
    }
    Ok(RolloutGroup {
        example_id: example.id.clone(),
        task: example.task,
        gold: example.gold,
        prompt: prompt.to_vec(),
        traces,
        rewards,
        failures,
        advantages: Vec::new(),
    })
}

/// `(r_i - mean) / std` with the population standard deviation; all zeros when
/// the spread is below [`DEGENERATE_STD`].
///
/// Deviations are taken from the group minimum first, so adding a constant that
/// keeps every reward exactly representable leaves the result bit-identical.
pub fn compute_advantages(rewards: &[f64]) -> Result<Vec<f64>> {
    let g = rewards.len();
    if g < 2 {
        return Err(Error::Contract(format!(
            "advantages need at least 2 rewards, got {g}"
        )));
    }
    if let Some(i) = rewards.iter().position(|r| !r.is_finite()) {
        return Err(Error::numerical(format!("reward {i}"), "non-finite value"));
    }
    let lo = rewards.iter().copied().fold(f64::INFINITY, f64::min);
    let d: Vec<f64> = rewards.iter().map(|r| r - lo).collect();
    let mean = d.iter().sum::<f64>() / g as f64;
    let var = d.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / g as f64;
    let std = var.sqrt();
    if std.is_nan() || std < DEGENERATE_STD {
        return Ok(vec![0.0; g]);
    }
    Ok(d.iter().map(|x| (x - mean) / std).collect())
}

/// Per-token importance ratios `exp(log π_θ - log π_old)` of a trace.
pub fn ratio_terms(
    params: &PolicyParameters,
    old: &PolicyParameters,
    trace: &GenerationTrace,
) -> Result<Vec<f64>> {
    let cur = continuation_logprobs(params, &params.prompt_state(&trace.prompt)?, &trace.output)?;
    let prev = continuation_logprobs(old, &old.prompt_state(&trace.prompt)?, &trace.output)?;
    cur.iter()
        .zip(&prev)
        .enumerate()
        .map(|(k, (a, b))| {
            let r = (a - b).exp();
            if r.is_finite() && r > 0.0 {
                Ok(r)
            } else {
                Err(Error::numerical(
                    format!("output position {k}"),
                    format!("ratio {r}"),
                ))
            }
        })
        .collect()
}

/// `r - 1 - ln r` with `ln r = log π_ref - log π_θ`.
pub fn k3(log_ref: f64, log_cur: f64) -> f64 {
    let lr = log_ref - log_cur;
    lr.exp() - 1.0 - lr
}

/// Mean per-token k3 estimate of `KL(π_θ || π_ref)` along a trace.
pub fn kl_estimate(
    params: &PolicyParameters,
    reference: &PolicyParameters,
    trace: &GenerationTrace,
) -> Result<f64> {
    if trace.output.is_empty() {
        return Ok(0.0);
    }
    let cur = continuation_logprobs(params, &params.prompt_state(&trace.prompt)?, &trace.output)?;
    let refp = continuation_logprobs(
        reference,
        &reference.prompt_state(&trace.prompt)?,
        &trace.output,
    )?;
    let total: f64 = cur.iter().zip(&refp).map(|(c, r)| k3(*r, *c)).sum();
    if !total.is_finite() {
        return Err(Error::numerical("kl estimate", "non-finite value"));
    }
    Ok(total / cur.len() as f64)
}

/// Loss, gradient and diagnostics of one minibatch.
#[derive(Debug, Clone)]
pub struct Objective {
    pub loss: f64,
    pub grad: Vec<f64>,
    pub surrogate: f64,
    pub mean_kl: f64,
    pub clip_fraction: f64,
    pub tokens: usize,
}

/// `-(1/N) Σ min(ρ A, clip(ρ, 1-ε, 1+ε) A) + β · mean k3` over all `N` output
/// tokens of `groups`, with its exact gradient. At the clip boundary the unclipped
/// branch is taken.
pub fn grpo_objective(
    params: &PolicyParameters,
    old: &PolicyParameters,
    reference: &PolicyParameters,
    groups: &[RolloutGroup],
    clip_eps: f64,
    kl_beta: f64,
) -> Result<Objective> {
    if groups.is_empty() {
        return Err(Error::Contract("objective needs at least one group".into()));
    }
    if !(clip_eps > 0.0 && clip_eps < 1.0) {
        return Err(Error::Contract(format!(
            "clip_eps {clip_eps} outside (0, 1)"
        )));
    }
    for g in groups {
        if g.advantages.len() != g.traces.len() {
            return Err(Error::Contract(format!(
                "group {} has no advantages",
                g.example_id
            )));
        }
    }
    let n: usize = groups.iter().map(RolloutGroup::output_tokens).sum();
    if n == 0 {
        return Err(Error::Contract("groups contain no output tokens".into()));
    }
    let inv_n = 1.0 / n as f64;
    let mut grad = vec![0.0; params.flat().len()];
    let (mut surrogate, mut kl, mut clipped) = (0.0, 0.0, 0usize);
    for g in groups {
        let h_old = old.prompt_state(&g.prompt)?;
        let h_ref = reference.prompt_state(&g.prompt)?;
        let mut old_lp = Vec::with_capacity(g.traces.len());
        let mut ref_lp = Vec::with_capacity(g.traces.len());
        for t in &g.traces {
            old_lp.push(continuation_logprobs(old, &h_old, &t.output)?);
            ref_lp.push(continuation_logprobs(reference, &h_ref, &t.output)?);
        }
        let outputs: Vec<&[u32]> = g.traces.iter().map(|t| t.output.as_slice()).collect();
        backprop_continuations(
            params,
            &g.prompt,
            &outputs,
            |i, lps| {
                let a = g.advantages[i];
                let mut w = Vec::with_capacity(lps.len());
                for (k, &lp) in lps.iter().enumerate() {
                    let rho = (lp - old_lp[i][k]).exp();
                    if !rho.is_finite() {
                        return Err(Error::numerical(
                            format!("{} trace {i} position {k}", g.example_id),
                            format!("ratio {rho}"),
                        ));
                    }
                    let is_clipped =
                        (a > 0.0 && rho > 1.0 + clip_eps) || (a < 0.0 && rho < 1.0 - clip_eps);
                    let kl_t = k3(ref_lp[i][k], lp);
                    let r = (ref_lp[i][k] - lp).exp();
                    kl += kl_t;
                    let mut wt = kl_beta * (1.0 - r) * inv_n;
                    if is_clipped {
                        clipped += 1;
                        surrogate += rho.clamp(1.0 - clip_eps, 1.0 + clip_eps) * a;
                    } else {
                        surrogate += rho * a;
                        wt -= a * rho * inv_n;
                    }
                    w.push(wt);
                }
                Ok(w)
            },
            &mut grad,
        )?;
    }
    let mean_kl = kl * inv_n;
    let loss = -surrogate * inv_n + kl_beta * mean_kl;
    if !loss.is_finite() {
        return Err(Error::numerical("objective", format!("loss {loss}")));
    }
    Ok(Objective {
        loss,
        grad,
        surrogate: surrogate * inv_n,
        mean_kl,
        clip_fraction: clipped as f64 * inv_n,
        tokens: n,
    })
}

/// Gradient of the plain policy-gradient loss `-(1/N) Σ A_i log π_θ(o_t)`.
pub fn policy_gradient(params: &PolicyParameters, groups: &[RolloutGroup]) -> Result<Vec<f64>> {
    let n: usize = groups.iter().map(RolloutGroup::output_tokens).sum();
    if n == 0 {
        return Err(Error::Contract("groups contain no output tokens".into()));
    }
    let mut grad = vec![0.0; params.flat().len()];
    for g in groups {
        let outputs: Vec<&[u32]> = g.traces.iter().map(|t| t.output.as_slice()).collect();
        backprop_continuations(
            params,
            &g.prompt,
            &outputs,
            |i, lps| Ok(vec![-g.advantages[i] / n as f64; lps.len()]),
            &mut grad,
        )?;
    }
    Ok(grad)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub group_size: usize,
    pub clip_eps: f64,
    pub kl_beta: f64,
    pub alpha: f64,
    pub learning_rate: f64,
    pub adam: AdamWConfig,
    /// Global gradient-norm cap; 0 disables.
    pub max_grad_norm: f64,
    /// Prompts per optimizer step.
    pub global_batch: usize,
    /// Prompts sampled under one old snapshot.
    pub rollout_batch: usize,
    /// Passes over each rollout batch.
    pub ppo_epochs: usize,
    pub max_steps: usize,
    pub eval_every: usize,
    pub temperature: f64,
    pub max_len: usize,
    /// Training tasks; `None` trains on every task in the train split.
    pub tasks: Option<Vec<TaskKind>>,
    pub strategy: SamplingStrategy,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            group_size: 20,
            clip_eps: 0.2,
            kl_beta: 0.01,
            alpha: 0.1,
            learning_rate: 3e-3,
            adam: AdamWConfig::default(),
            max_grad_norm: 1.0,
            global_batch: 32,
            rollout_batch: 64,
            ppo_epochs: 1,
            max_steps: 2000,
            eval_every: 50,
            temperature: 1.0,
            max_len: crate::eval::DEFAULT_MAX_LEN,
            tasks: None,
            strategy: SamplingStrategy::Proportional,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.group_size < 2 {
            return bad("group_size must be at least 2");
        }
        if !(self.clip_eps > 0.0 && self.clip_eps < 1.0) {
            return bad("clip_eps must lie in (0, 1)");
        }
        if !(self.kl_beta >= 0.0 && self.kl_beta.is_finite()) {
            return bad("kl_beta must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad("alpha must lie in [0, 1]");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.global_batch == 0
            || self.rollout_batch == 0
            || !self.rollout_batch.is_multiple_of(self.global_batch)
        {
            return bad("rollout_batch must be a positive multiple of global_batch");
        }
        if self.ppo_epochs == 0 || self.max_steps == 0 || self.eval_every == 0 || self.max_len == 0
        {
            return bad("ppo_epochs, max_steps, eval_every and max_len must be positive");
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return bad("temperature must be positive");
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

    pub fn updates_per_rollout(&self) -> usize {
        self.rollout_batch / self.global_batch * self.ppo_epochs
    }

    fn decoding(&self) -> Decoding {
        Decoding::Sample {
            temperature: self.temperature,
        }
    }
}

/// Extra hook for the raw rollouts, used for reward-trace logs.
pub trait RolloutObserver: TrainObserver {
    fn on_rollout(&mut self, _rollout: usize, _groups: &[RolloutGroup]) -> Result<()> {
        Ok(())
    }
}

impl RolloutObserver for crate::training::NoObserver {}

/// Runs (or resumes) GRPO from `reference` until `max_steps` or until the
/// observer stops it. Returns the state at the stopping point.
pub fn train(
    config: &TrainConfig,
    dataset: &Dataset,
    vocab: &Vocabulary,
    reference: &PolicyParameters,
    resume: Option<TrainState>,
    observer: &mut dyn RolloutObserver,
) -> Result<TrainState> {
    config.validate()?;
    if reference.dims().vocab != vocab.len() {
        return Err(Error::Contract(format!(
            "policy has {} output symbols, vocabulary {}",
            reference.dims().vocab,
            vocab.len()
        )));
    }
    let tasks = resolve_tasks(dataset, config.tasks.as_deref())?;
    let val = examples_for(dataset, Split::Val, &tasks);
    if val.is_empty() {
        return Err(Error::Contract(
            "validation split has no examples for the training tasks".into(),
        ));
    }
    let prompts: HashMap<&str, Vec<u32>> = examples_for(dataset, Split::Train, &tasks)
        .into_iter()
        .map(|e| Ok((e.id.as_str(), encode_example(e, vocab)?)))
        .collect::<Result<_>>()?;

    let hash = config.hash();
    let mut state = match resume {
        Some(s) => {
            s.check_resumable(TrainRole::Grpo, &hash)?;
            if s.step % config.updates_per_rollout() != 0 && s.step < config.max_steps {
                return Err(Error::Contract(format!(
                    "step {} is not a rollout boundary",
                    s.step
                )));
            }
            s
        }
        None => TrainState::new(TrainRole::Grpo, hash, reference),
    };
    let mut params = state.policy()?;

    while state.step < config.max_steps {
        let rollout = state.step / config.updates_per_rollout();
        let mut rng = substream(config.seed, &[ROLLOUT_STREAM, rollout as u64]);
        let batch = sample_batch(
            dataset,
            Split::Train,
            Some(&tasks),
            config.strategy,
            config.rollout_batch,
            &mut rng,
        )?;
        let old = params.clone();
        let mut groups = Vec::with_capacity(batch.len());
        for (j, ex) in batch.iter().enumerate() {
            let mut grng = substream(config.seed, &[GROUP_STREAM, rollout as u64, j as u64]);
            let mut g = collect_group(
                &old,
                ex,
                &prompts[ex.id.as_str()],
                config.group_size,
                config.decoding(),
                config.max_len,
                config.alpha,
                &mut grng,
            )?;
            g.assign_advantages()?;
            groups.push(g);
        }
        observer.on_rollout(rollout, &groups)?;

        'epochs: for _ in 0..config.ppo_epochs {
            for chunk in groups.chunks(config.global_batch) {
                if state.step >= config.max_steps {
                    break 'epochs;
                }
                let ids: Vec<String> = chunk.iter().map(|g| g.example_id.clone()).collect();
                let mut obj = grpo_objective(
                    &params,
                    &old,
                    reference,
                    chunk,
                    config.clip_eps,
                    config.kl_beta,
                )
                .map_err(|e| divergence(state.step + 1, &ids, e))?;
                let grad_norm = clip_grad_norm(&mut obj.grad, config.max_grad_norm);
                state
                    .optimizer
                    .update(
                        &config.adam,
                        params.flat_mut(),
                        &obj.grad,
                        config.learning_rate,
                    )
                    .map_err(|e| divergence(state.step + 1, &ids, e))?;
                if !params.is_finite() {
                    return Err(divergence(
                        state.step + 1,
                        &ids,
                        Error::numerical("parameters", "non-finite after update"),
                    ));
                }
                state.step += 1;
                state.params.copy_from_slice(params.flat());
                let rewards: Vec<&RewardBreakdown> =
                    chunk.iter().flat_map(|g| &g.rewards).collect();
                let mean = |f: fn(&RewardBreakdown) -> f64| {
                    rewards.iter().map(|r| f(r)).sum::<f64>() / rewards.len() as f64
                };
                let mut row = LogRow {
                    step: state.step,
                    role: TrainRole::Grpo,
                    loss: obj.loss,
                    mean_r_acc: Some(mean(|r| r.r_acc)),
                    mean_r_for: Some(mean(|r| r.r_for)),
                    mean_kl: Some(obj.mean_kl),
                    clip_fraction: Some(obj.clip_fraction),
                    lr: config.learning_rate,
                    grad_norm,
                    val_r_acc: None,
                    val_macro_f1: None,
                    val_per_task: None,
                    example_ids: ids,
                };
                if state.step % config.eval_every == 0 || state.step == config.max_steps {
                    let (reports, _) =
                        evaluate_examples(&params, vocab, &val, VerdictForm::Rl, config.max_len)?;
                    let n: usize = reports.iter().map(|r| r.n).sum();
                    let score = reports
                        .iter()
                        .map(|r| r.mean_r_acc * r.n as f64)
                        .sum::<f64>()
                        / n as f64;
                    let per_task: BTreeMap<String, f64> = reports
                        .iter()
                        .map(|r| (r.task.slug().to_string(), r.mean_r_acc))
                        .collect();
                    row.val_r_acc = Some(score);
                    row.val_per_task = Some(per_task);
                    if state.offer_best(score) {
                        observer.on_improvement(state.step, score, &params)?;
                    }
                }
                state.log.push(row);
            }
        }
        if !observer.on_checkpoint(&state)? {
            break;
        }
    }
    Ok(state)
}

fn divergence(step: usize, ids: &[String], err: Error) -> Error {
    match err {
        Error::Numerical { location, detail } => Error::Numerical {
            location: format!("step {step}, batch [{}]: {location}", ids.join(", ")),
            detail,
        },
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{init_params, Dims};
    use crate::vocab::tok;
    use proptest::prelude::*;

    fn assert_close(a: &[f64], b: &[f64], tol: f64) {
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() <= tol, "{x} vs {y}");
        }
    }

    #[test]
    fn worked_advantages() {
        assert_eq!(
            compute_advantages(&[1.0, 1.0, 0.0, 0.0]).unwrap(),
            vec![1.0, 1.0, -1.0, -1.0]
        );
        assert_eq!(compute_advantages(&[0.9, 0.9, 0.9]).unwrap(), vec![0.0; 3]);
        let s3 = 3f64.sqrt();
        assert_close(
            &compute_advantages(&[1.0, 0.0, 0.0, 0.0]).unwrap(),
            &[s3, -1.0 / s3, -1.0 / s3, -1.0 / s3],
            1e-12,
        );
        assert!(compute_advantages(&[1.0]).is_err());
    }

    proptest! {
        #[test]
        fn advantages_are_standardized(r in prop::collection::vec(0.0f64..1.0, 2..64)) {
            let a = compute_advantages(&r).unwrap();
            if a.iter().all(|&x| x == 0.0) {
                return Ok(());
            }
            let n = a.len() as f64;
            let mean = a.iter().sum::<f64>() / n;
            let std = (a.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
            prop_assert!(mean.abs() < 1e-9);
            prop_assert!((std - 1.0).abs() < 1e-6);
        }

        #[test]
        fn dyadic_shift_and_scale_are_exact(
            k in prop::collection::vec(0u32..16, 2..64),
            shift in -8i32..8,
            pow in -4i32..5,
        ) {
            let r: Vec<f64> = k.iter().map(|&x| f64::from(x) / 16.0).collect();
            let base = compute_advantages(&r).unwrap();
            let shifted: Vec<f64> = r.iter().map(|x| x + f64::from(shift)).collect();
            let scaled: Vec<f64> = r.iter().map(|x| x * 2f64.powi(pow)).collect();
            prop_assert_eq!(&compute_advantages(&shifted).unwrap(), &base);
            prop_assert_eq!(&compute_advantages(&scaled).unwrap(), &base);
        }
    }

    #[test]
    fn k3_value() {
        assert!((k3(2f64.ln(), 0.0) - (1.0 - 2f64.ln())).abs() < 1e-15);
        assert_eq!(k3(-1.3, -1.3), 0.0);
    }

    fn small() -> PolicyParameters {
        init_params(
            3,
            Dims {
                vocab: 48,
                hidden: 8,
            },
        )
        .unwrap()
    }

    fn example() -> Example {
        serde_json::from_str(
            r#"{"id":"safety_point-train-0","task":"SafetyPoint","claim":null,
            "scenes":[{"objects":[{"shape":"circle","color":"red","size":"small","hazard":true}],"noise_level":0}],
            "gold":"Unsafe","split":"train"}"#,
        )
        .unwrap()
    }

    fn groups(p: &PolicyParameters, seed: u64) -> Vec<RolloutGroup> {
        let ex = example();
        let prompt = encode_example(&ex, &Vocabulary::default()).unwrap();
        (0..2)
            .map(|j| {
                let mut rng = substream(seed, &[j]);
                let mut g = collect_group(
                    p,
                    &ex,
                    &prompt,
                    6,
                    Decoding::Sample { temperature: 1.0 },
                    6,
                    0.1,
                    &mut rng,
                )
                .unwrap();
                // Random advantages so the test does not depend on reward luck.
                let fake: Vec<f64> = (0..6)
                    .map(|i| ((i * 7 + j as usize * 3) % 5) as f64)
                    .collect();
                g.advantages = compute_advantages(&fake).unwrap();
                g
            })
            .collect()
    }

    #[test]
    fn on_policy_surrogate_matches_policy_gradient() {
        let p = small();
        let gs = groups(&p, 1);
        for g in &gs {
            for t in &g.traces {
                assert!(ratio_terms(&p, &p, t).unwrap().iter().all(|&r| r == 1.0));
                assert_eq!(kl_estimate(&p, &p, t).unwrap(), 0.0);
            }
        }
        let obj = grpo_objective(&p, &p, &p, &gs, 0.2, 0.0).unwrap();
        let pg = policy_gradient(&p, &gs).unwrap();
        assert_close(&obj.grad, &pg, 1e-9);
        // Token-weighted mean advantage; zero when all traces have equal length.
        let n = obj.tokens as f64;
        let expected: f64 = gs
            .iter()
            .flat_map(|g| {
                g.traces
                    .iter()
                    .zip(&g.advantages)
                    .map(|(t, a)| a * t.output.len() as f64)
            })
            .sum::<f64>()
            / n;
        assert!((obj.loss + expected).abs() < 1e-12);
        assert_eq!(obj.clip_fraction, 0.0);
    }

    #[test]
    fn objective_gradient_matches_finite_differences() {
        let old = small();
        let reference = init_params(
            4,
            Dims {
                vocab: 48,
                hidden: 8,
            },
        )
        .unwrap();
        let gs = groups(&old, 2);
        // Nearby point so ratios differ from one but stay inside the clip range.
        let p = crate::policy::interpolate_params(&old, &reference, 0.02).unwrap();
        let obj = grpo_objective(&p, &old, &reference, &gs, 0.2, 0.5).unwrap();
        assert_eq!(obj.clip_fraction, 0.0);
        let report = crate::gradcheck::check_gradient(
            &p,
            &obj.grad,
            |q| Ok(grpo_objective(q, &old, &reference, &gs, 0.2, 0.5)?.loss),
            1e-5,
            100,
            &mut substream(9, &[]),
        )
        .unwrap();
        assert!(report.passes(1e-4), "{report:?}");
    }

    fn single_token_group(
        advantage: f64,
        bias: f64,
    ) -> (PolicyParameters, PolicyParameters, RolloutGroup) {
        // d=1 policy whose output bias alone sets the first-token distribution.
        let dims = Dims {
            vocab: 48,
            hidden: 1,
        };
        let old = PolicyParameters::zeros(dims);
        let mut cur = old.clone();
        cur.b_o_mut()[tok::YES as usize] = bias;
        let trace = GenerationTrace {
            prompt: vec![tok::TASK_QUALITY, tok::EOP],
            output: vec![tok::YES],
            logprobs: vec![-(48f64).ln()],
            termination: crate::policy::Termination::MaxLen,
        };
        let g = RolloutGroup {
            example_id: "x".into(),
            task: TaskKind::QualityPoint,
            gold: Label::Yes,
            prompt: trace.prompt.clone(),
            traces: vec![trace],
            rewards: vec![],
            failures: vec![],
            advantages: vec![advantage],
        };
        (cur, old, g)
    }

    #[test]
    fn clipped_single_token_loss() {
        // Choose the bias so that ρ = 1.5: softmax ratio e^b / (e^b + 47) * 48 = 1.5.
        let b = (1.5f64 * 47.0 / (48.0 - 1.5)).ln();
        let (cur, old, g) = single_token_group(1.0, b);
        let rho = ratio_terms(&cur, &old, &g.traces[0]).unwrap()[0];
        assert!((rho - 1.5).abs() < 1e-12);
        let obj = grpo_objective(&cur, &old, &old, std::slice::from_ref(&g), 0.2, 0.0).unwrap();
        assert!((obj.loss + 1.2).abs() < 1e-12);
        assert_eq!(obj.clip_fraction, 1.0);
        assert!(obj.grad.iter().all(|&x| x == 0.0));
        // Inside the clip range the clipped and unclipped losses agree.
        let small_b = (1.1f64 * 47.0 / (48.0 - 1.1)).ln();
        let (cur, old, g) = single_token_group(-1.0, small_b);
        let obj = grpo_objective(&cur, &old, &old, &[g], 0.2, 0.0).unwrap();
        assert!((obj.loss - 1.1).abs() < 1e-12);
    }

    #[test]
    fn greedy_group_is_constant_and_groups_reproduce() {
        let p = small();
        let ex = example();
        let prompt = encode_example(&ex, &Vocabulary::default()).unwrap();
        let g = collect_group(
            &p,
            &ex,
            &prompt,
            4,
            Decoding::Greedy,
            5,
            0.1,
            &mut substream(0, &[]),
        )
        .unwrap();
        assert!(g.traces.windows(2).all(|w| w[0] == w[1]));
        assert!(g.rewards.windows(2).all(|w| w[0] == w[1]));
        let a = collect_group(
            &p,
            &ex,
            &prompt,
            2,
            Decoding::Sample { temperature: 1.0 },
            5,
            0.1,
            &mut substream(5, &[1]),
        )
        .unwrap();
        let b = collect_group(
            &p,
            &ex,
            &prompt,
            2,
            Decoding::Sample { temperature: 1.0 },
            5,
            0.1,
            &mut substream(5, &[1]),
        )
        .unwrap();
        assert_eq!(a, b);
        for row in a.reward_rows() {
            let (_, r) = score_output(&row.output_tokens, ex.gold, VerdictForm::Rl, 0.1).unwrap();
            assert_eq!(r.r_total, row.r_total);
        }
        assert!(collect_group(
            &p,
            &ex,
            &prompt,
            1,
            Decoding::Greedy,
            5,
            0.1,
            &mut substream(0, &[])
        )
        .is_err());
    }
}
