//! Command implementations behind the binary: data, training, evaluation, checks.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use judgerl::data::{generate_dataset, Dataset, DatasetManifest, Split, TaskKind, MANIFEST_FILE};
use judgerl::eval::{evaluate_suite, predictions_csv, EvalReport};
use judgerl::gradcheck::{fidelity_suite, FidelityConfig, FidelityReport, MAX_RELATIVE_ERROR};
use judgerl::grpo::{self, RolloutGroup, RolloutObserver};
use judgerl::policy::{Checkpoint, PolicyParameters};
use judgerl::rewards::{RewardTraceRow, VerdictForm};
use judgerl::sft::{prime_format, sft_train};
use judgerl::training::{TrainObserver, TrainState};
use judgerl::vocab::Vocabulary;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};
use crate::workspace::*;

/// Result of `gen-data`.
#[derive(Debug, Clone)]
pub struct DataOutcome {
    pub dir: PathBuf,
    pub manifest: DatasetManifest,
    /// True when a matching dataset was already on disk and nothing was written.
    pub reused: bool,
}

/// Generates the dataset for `config` unless an identical one already exists.
pub fn gen_data(config: &ExperimentConfig, ws: &Workspace) -> CliResult<DataOutcome> {
    let dir = ws.data_dir(config);
    if dir.join(MANIFEST_FILE).exists() {
        let ds = Dataset::load(&dir)?;
        if ds.manifest.config_hash == config.data.hash() && ds.manifest.seed == config.seed {
            return Ok(DataOutcome {
                dir,
                manifest: ds.manifest,
                reused: true,
            });
        }
        return Err(CliError::Usage(format!(
            "{} holds a dataset from a different configuration",
            dir.display()
        )));
    }
    let ds = generate_dataset(&config.data, config.seed)?;
    let tmp = dir.with_extension(format!("tmp{}", std::process::id()));
    if tmp.exists() {
        fs::remove_dir_all(&tmp)?;
    }
    ds.write(&tmp)?;
    fs::rename(&tmp, &dir)?;
    Ok(DataOutcome {
        dir,
        manifest: ds.manifest,
        reused: false,
    })
}

/// Loads the dataset for `config`, generating it first if needed.
pub fn ensure_data(config: &ExperimentConfig, ws: &Workspace) -> CliResult<Dataset> {
    let out = gen_data(config, ws)?;
    Ok(Dataset::load(&out.dir)?)
}

/// Persisted summary of a finished or interrupted run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub mode: Mode,
    pub task: Option<TaskKind>,
    pub steps: usize,
    pub max_steps: usize,
    pub completed: bool,
    pub best_step: Option<usize>,
    pub best_score: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    pub dir: PathBuf,
    pub summary: RunSummary,
    /// True when the run was already complete and nothing was trained.
    pub reused: bool,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    pub resume: bool,
    /// Stop (as if killed) once this many optimizer steps are persisted.
    pub halt_after_step: Option<usize>,
}

fn checkpoint_note(config: &ExperimentConfig, step: usize) -> String {
    format!("seed={} step={}", config.seed, step)
}

fn write_log(
    dir: &Path,
    config: &ExperimentConfig,
    log: &[judgerl::training::LogRow],
) -> CliResult<()> {
    let rows: Vec<Stamped<&judgerl::training::LogRow>> =
        log.iter().map(|r| Stamped::new(config, r)).collect();
    write_text(&dir.join(LOG_FILE), &judgerl::io::to_jsonl(&rows)?)
}

fn write_record(dir: &Path, config: &ExperimentConfig, record: &RunRecord) -> CliResult<()> {
    write_text(
        &dir.join(CONFIG_FILE),
        &(serde_json::to_string_pretty(config)? + "\n"),
    )?;
    write_json(&dir.join(RUN_FILE), record)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

/// Loads the primed base policy, priming it first if it is not on disk.
pub fn ensure_base(
    config: &ExperimentConfig,
    ws: &Workspace,
) -> CliResult<(PathBuf, PolicyParameters)> {
    let dir = ws.run_dir(config, Mode::Base, None);
    let vocab = config.vocabulary();
    let ckpt = dir.join(BEST_FILE);
    if dir.join(SUMMARY_FILE).exists() {
        return Ok((dir, Checkpoint::load(&ckpt)?.params(Some(&vocab))?));
    }
    let _lock = RunLock::acquire(&dir)?;
    let record = RunRecord {
        mode: Mode::Base,
        task: None,
        config_hash: config.hash(),
        seed: config.seed,
        data_id: Workspace::data_id(config),
        base_id: None,
    };
    write_record(&dir, config, &record)?;
    let (params, log) = prime_format(&config.prime_config(), &config.data, &vocab)?;
    Checkpoint::new(&params, &vocab, checkpoint_note(config, log.len())).save(&ckpt)?;
    write_log(&dir, config, &log)?;
    let summary = RunSummary {
        mode: Mode::Base,
        task: None,
        steps: log.len(),
        max_steps: config.prime.steps,
        completed: true,
        best_step: None,
        best_score: None,
    };
    write_json(&dir.join(SUMMARY_FILE), &Stamped::new(config, &summary))?;
    Ok((dir, params))
}

/// Writes best checkpoints as they improve and resumable state at a fixed cadence.
struct RunObserver<'a> {
    dir: &'a Path,
    config: &'a ExperimentConfig,
    vocab: &'a Vocabulary,
    every: usize,
    last_saved: usize,
    max_steps: usize,
    halt_after: Option<usize>,
    trace_rewards: bool,
    pending_traces: Vec<RewardTraceRow>,
}

impl RunObserver<'_> {
    fn persist(&mut self, state: &TrainState) -> judgerl::Result<()> {
        judgerl::io::write_atomic(&self.dir.join(STATE_FILE), state.to_json()?.as_bytes())?;
        write_log(self.dir, self.config, &state.log).map_err(core_error)?;
        if !self.pending_traces.is_empty() {
            let rows: Vec<Stamped<&RewardTraceRow>> = self
                .pending_traces
                .iter()
                .map(|r| Stamped::new(self.config, r))
                .collect();
            let mut f = OpenOptions::new()
                .create(true)
                .append(true)
                .open(self.dir.join(REWARDS_FILE))?;
            f.write_all(judgerl::io::to_jsonl(&rows)?.as_bytes())?;
            self.pending_traces.clear();
        }
        self.last_saved = state.step;
        Ok(())
    }
}

fn core_error(e: CliError) -> judgerl::Error {
    match e {
        CliError::Core(e) => e,
        other => judgerl::Error::Contract(other.to_string()),
    }
}

impl TrainObserver for RunObserver<'_> {
    fn on_improvement(
        &mut self,
        step: usize,
        score: f64,
        params: &PolicyParameters,
    ) -> judgerl::Result<()> {
        Checkpoint::new(params, self.vocab, checkpoint_note(self.config, step))
            .save(&self.dir.join(BEST_FILE))?;
        judgerl::io::write_json_pretty(&self.dir.join(BEST_SIDECAR), &BestSidecar { step, score })
    }

    fn on_checkpoint(&mut self, state: &TrainState) -> judgerl::Result<bool> {
        let halt = self.halt_after.is_some_and(|h| state.step >= h);
        if halt || state.step >= self.last_saved + self.every || state.step >= self.max_steps {
            self.persist(state)?;
        }
        Ok(!halt)
    }
}

impl RolloutObserver for RunObserver<'_> {
    fn on_rollout(&mut self, _rollout: usize, groups: &[RolloutGroup]) -> judgerl::Result<()> {
        if self.trace_rewards {
            self.pending_traces
                .extend(groups.iter().flat_map(RolloutGroup::reward_rows));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BestSidecar {
    pub step: usize,
    pub score: f64,
}

/// Trains (or resumes) one run of `mode`, creating the dataset and base policy as needed.
pub fn train(
    config: &ExperimentConfig,
    ws: &Workspace,
    mode: Mode,
    task: Option<TaskKind>,
    options: &TrainOptions,
) -> CliResult<TrainResult> {
    let started = Instant::now();
    match (mode.needs_task(), task) {
        (true, None) => return Err(CliError::Usage(format!("{mode} needs --task"))),
        (false, Some(_)) => {
            return Err(CliError::Usage(format!(
                "{mode} trains on every task; drop --task"
            )))
        }
        _ => {}
    }
    if let Some(t) = task {
        if t.is_pairwise() {
            return Err(CliError::Usage(format!(
                "{t} is held out for evaluation and cannot be trained on"
            )));
        }
    }
    let dataset = ensure_data(config, ws)?;
    if mode == Mode::Base {
        let existed = ws
            .run_dir(config, Mode::Base, None)
            .join(SUMMARY_FILE)
            .exists();
        let (dir, _) = ensure_base(config, ws)?;
        let summary: Stamped<RunSummary> = read_json(&dir.join(SUMMARY_FILE))?;
        return Ok(TrainResult {
            dir,
            summary: summary.body,
            reused: existed,
            seconds: started.elapsed().as_secs_f64(),
        });
    }
    let (base_dir, base) = ensure_base(config, ws)?;
    let vocab = config.vocabulary();
    let dir = ws.run_dir(config, mode, task);
    let _lock = RunLock::acquire(&dir)?;
    let (max_steps, every) = if mode.is_rl() {
        (config.rl.max_steps, config.rl.eval_every)
    } else {
        (config.sft.max_steps, config.sft.eval_every)
    };

    let summary_path = dir.join(SUMMARY_FILE);
    if summary_path.exists() {
        let done: Stamped<RunSummary> = read_json(&summary_path)?;
        if done.body.completed {
            return Ok(TrainResult {
                dir,
                summary: done.body,
                reused: true,
                seconds: started.elapsed().as_secs_f64(),
            });
        }
    }
    let state_path = dir.join(STATE_FILE);
    let resume_state = if state_path.exists() {
        if !options.resume {
            return Err(CliError::Usage(format!(
                "{} holds an interrupted run; pass --resume to continue it",
                dir.display()
            )));
        }
        Some(TrainState::from_json(&fs::read_to_string(&state_path)?)?)
    } else {
        None
    };
    if resume_state.is_none() {
        let _ = fs::remove_file(dir.join(REWARDS_FILE));
    }
    let record = RunRecord {
        mode,
        task,
        config_hash: config.hash(),
        seed: config.seed,
        data_id: Workspace::data_id(config),
        base_id: base_dir
            .file_name()
            .map(|s| s.to_string_lossy().into_owned()),
    };
    write_record(&dir, config, &record)?;

    let mut observer = RunObserver {
        dir: &dir,
        config,
        vocab: &vocab,
        every: every.max(1),
        last_saved: resume_state.as_ref().map_or(0, |s| s.step),
        max_steps,
        halt_after: options.halt_after_step,
        trace_rewards: mode.is_rl() && config.rl.trace_rewards,
        pending_traces: Vec::new(),
    };
    let tasks = task.map(|t| vec![t]);
    let state = if mode.is_rl() {
        grpo::train(
            &config.train_config(tasks),
            &dataset,
            &vocab,
            &base,
            resume_state,
            &mut observer,
        )?
    } else {
        sft_train(
            &config.sft_config(tasks),
            &dataset,
            &vocab,
            &base,
            resume_state,
            &mut observer,
        )?
    };
    if state.step != observer.last_saved {
        observer.persist(&state)?;
    }

    let completed = state.step >= max_steps;
    if completed {
        let params = state.policy()?;
        Checkpoint::new(&params, &vocab, checkpoint_note(config, state.step))
            .save(&dir.join(LAST_FILE))?;
        if let Some(best) = &state.best {
            let best_params = PolicyParameters::from_flat(state.dims, best.params.clone())?;
            Checkpoint::new(&best_params, &vocab, checkpoint_note(config, best.step))
                .save(&dir.join(BEST_FILE))?;
            write_json(
                &dir.join(BEST_SIDECAR),
                &BestSidecar {
                    step: best.step,
                    score: best.score,
                },
            )?;
        }
    }
    let summary = RunSummary {
        mode,
        task,
        steps: state.step,
        max_steps,
        completed,
        best_step: state.best.as_ref().map(|b| b.step),
        best_score: state.best.as_ref().map(|b| b.score),
    };
    write_json(&summary_path, &Stamped::new(config, &summary))?;
    Ok(TrainResult {
        dir,
        summary,
        reused: false,
        seconds: started.elapsed().as_secs_f64(),
    })
}

/// Loads a checkpoint, mapping a missing file to a usage error.
pub fn load_checkpoint(path: &Path, vocab: &Vocabulary) -> CliResult<PolicyParameters> {
    if !path.is_file() {
        return Err(CliError::Usage(format!(
            "checkpoint {} not found",
            path.display()
        )));
    }
    Ok(Checkpoint::load(path)?.params(Some(vocab))?)
}

/// Output form of a checkpoint: explicit, else that of the run it belongs to, else reasoning form.
pub fn infer_form(checkpoint: &Path, explicit: Option<VerdictForm>) -> VerdictForm {
    explicit
        .or_else(|| {
            checkpoint
                .parent()
                .and_then(|d| read_run_record(d).ok())
                .map(|r| r.mode.form())
        })
        .unwrap_or(VerdictForm::Rl)
}

#[derive(Debug, Clone)]
pub struct EvalOutcome {
    pub dir: PathBuf,
    pub report: EvalReport,
}

/// Evaluates one checkpoint on one split; writes `report.json`, `report.txt`, `predictions.csv`.
pub fn eval(
    config: &ExperimentConfig,
    ws: &Workspace,
    checkpoint: &Path,
    split: Split,
    form: Option<VerdictForm>,
) -> CliResult<EvalOutcome> {
    let vocab = config.vocabulary();
    let params = load_checkpoint(checkpoint, &vocab)?;
    let form = infer_form(checkpoint, form);
    let dataset = ensure_data(config, ws)?;
    let bytes = fs::read(checkpoint)?;
    let checkpoint_id = short(&judgerl::sha256_hex(&bytes));
    let key = format!(
        "{checkpoint_id}|{split}|{form:?}|{}",
        Workspace::data_id(config)
    );
    let dir = ws
        .root
        .join("evals")
        .join(short(&judgerl::sha256_hex(key.as_bytes())));
    let (report, rows) = evaluate_suite(
        &params,
        &vocab,
        &dataset,
        split,
        form,
        config.model.max_len,
        &checkpoint_id,
    )?;
    write_json(&dir.join("report.json"), &Stamped::new(config, &report))?;
    write_text(&dir.join("report.txt"), &report.to_table())?;
    write_text(&dir.join("predictions.csv"), &predictions_csv(&rows))?;
    Ok(EvalOutcome { dir, report })
}

/// Runs the gradient fidelity suite; a failing suite is a check failure.
pub fn grad_check(config: &ExperimentConfig, corrupt: bool) -> CliResult<FidelityReport> {
    let cfg = FidelityConfig {
        dims: config.dims(),
        seed: config.seed,
        corrupt_scale: corrupt.then_some(1.01),
        ..FidelityConfig::default()
    };
    let report = fidelity_suite(&cfg)?;
    if !report.passes() {
        let worst = report.max_relative_error();
        return Err(CliError::Check(format!(
            "gradient check failed: max relative error {worst:.3e} exceeds {MAX_RELATIVE_ERROR:e}"
        )));
    }
    Ok(report)
}
