//! On-disk layout: `data/<hash>/`, `runs/<mode>/<hash>/`, `evals/<id>/`, `reports/<id>/`.

use std::fmt;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use judgerl::data::TaskKind;
use judgerl::rewards::VerdictForm;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};

/// Hash prefix length used in directory names.
pub const ID_LEN: usize = 16;

pub const RUN_FILE: &str = "run.json";
pub const CONFIG_FILE: &str = "config.json";
pub const STATE_FILE: &str = "state.json";
pub const LOG_FILE: &str = "log.jsonl";
pub const REWARDS_FILE: &str = "rewards.jsonl";
pub const BEST_FILE: &str = "best.ckpt.json";
pub const BEST_SIDECAR: &str = "best.json";
pub const LAST_FILE: &str = "last.ckpt.json";
pub const SUMMARY_FILE: &str = "summary.json";
pub const LOCK_FILE: &str = "run.lock";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Format-primed starting policy shared by every trainer.
    Base,
    SftSingle,
    SftUnified,
    RlSingle,
    MtRl,
}

impl Mode {
    pub const ALL: [Mode; 5] = [
        Mode::Base,
        Mode::SftSingle,
        Mode::SftUnified,
        Mode::RlSingle,
        Mode::MtRl,
    ];

    pub fn slug(self) -> &'static str {
        match self {
            Mode::Base => "base",
            Mode::SftSingle => "sft-single",
            Mode::SftUnified => "sft-unified",
            Mode::RlSingle => "rl-single",
            Mode::MtRl => "mt-rl",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.slug() == s)
    }

    pub fn needs_task(self) -> bool {
        matches!(self, Mode::SftSingle | Mode::RlSingle)
    }

    pub fn is_rl(self) -> bool {
        matches!(self, Mode::RlSingle | Mode::MtRl)
    }

    /// Output grammar the mode's policy is trained to emit.
    pub fn form(self) -> VerdictForm {
        match self {
            Mode::SftSingle | Mode::SftUnified => VerdictForm::Sft,
            Mode::Base | Mode::RlSingle | Mode::MtRl => VerdictForm::Rl,
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.slug())
    }
}

/// Identity of a run, stored as `run.json` in its directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunRecord {
    pub mode: Mode,
    pub task: Option<TaskKind>,
    pub config_hash: String,
    pub seed: u64,
    pub data_id: String,
    /// Base run this one starts from (absent for the base itself).
    pub base_id: Option<String>,
}

impl RunRecord {
    /// Short human label, e.g. `rl-single:safety_point`.
    pub fn label(&self) -> String {
        match self.task {
            Some(t) => format!("{}:{}", self.mode, t.slug()),
            None => self.mode.to_string(),
        }
    }
}

/// Root of all artifacts (the `--out` directory).
#[derive(Debug, Clone)]
pub struct Workspace {
    pub root: PathBuf,
}

pub fn short(hash: &str) -> String {
    hash[..ID_LEN.min(hash.len())].to_string()
}

impl Workspace {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn data_id(config: &ExperimentConfig) -> String {
        short(&config.data_hash())
    }

    pub fn data_dir(&self, config: &ExperimentConfig) -> PathBuf {
        self.root.join("data").join(Self::data_id(config))
    }

    /// The base run depends only on data, model, priming and seed.
    pub fn base_id(config: &ExperimentConfig) -> String {
        let key = serde_json::json!({
            "data": config.data,
            "model": config.model,
            "prime": config.prime,
            "seed": config.seed,
        });
        short(&judgerl::sha256_hex(key.to_string().as_bytes()))
    }

    pub fn run_id(config: &ExperimentConfig, mode: Mode, task: Option<TaskKind>) -> String {
        if mode == Mode::Base {
            return Self::base_id(config);
        }
        let key = format!(
            "{}|{}|{}",
            config.canonical_json(),
            mode.slug(),
            task.map_or("", |t| t.slug())
        );
        short(&judgerl::sha256_hex(key.as_bytes()))
    }

    pub fn run_dir(
        &self,
        config: &ExperimentConfig,
        mode: Mode,
        task: Option<TaskKind>,
    ) -> PathBuf {
        self.root
            .join("runs")
            .join(mode.slug())
            .join(Self::run_id(config, mode, task))
    }

    /// Workspace that owns a run directory (`<root>/runs/<mode>/<id>`).
    pub fn of_run_dir(dir: &Path) -> CliResult<Self> {
        dir.parent()
            .and_then(Path::parent)
            .and_then(Path::parent)
            .map(|p| Self::new(p.to_path_buf()))
            .ok_or_else(|| CliError::Usage(format!("{} is not a run directory", dir.display())))
    }
}

pub fn read_run_record(dir: &Path) -> CliResult<RunRecord> {
    let path = dir.join(RUN_FILE);
    let text = fs::read_to_string(&path)
        .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
    Ok(serde_json::from_str(&text)?)
}

/// Exclusive writer lock on a run directory, released on drop.
#[derive(Debug)]
pub struct RunLock {
    path: PathBuf,
}

impl RunLock {
    pub fn acquire(dir: &Path) -> CliResult<Self> {
        fs::create_dir_all(dir)?;
        let path = dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                writeln!(f, "{}", std::process::id())?;
                Ok(Self { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                let holder = fs::read_to_string(&path).unwrap_or_default();
                Err(CliError::Usage(format!(
                    "{} is locked by process {}; remove {} if that process is gone",
                    dir.display(),
                    holder.trim(),
                    path.display()
                )))
            }
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// A JSON artifact stamped with the config hash and seed that produced it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Stamped<T> {
    pub config_hash: String,
    pub seed: u64,
    #[serde(flatten)]
    pub body: T,
}

impl<T> Stamped<T> {
    pub fn new(config: &ExperimentConfig, body: T) -> Self {
        Self {
            config_hash: config.hash(),
            seed: config.seed,
            body,
        }
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    Ok(judgerl::io::write_json_pretty(path, value)?)
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    Ok(judgerl::io::write_atomic(path, text.as_bytes())?)
}
