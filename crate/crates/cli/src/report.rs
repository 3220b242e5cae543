//! Comparison tables and learning curves across finished runs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use judgerl::data::{Dataset, Split, TaskKind};
use judgerl::eval::{evaluate_suite, generalization_eval, GeneralizationReport, NamedPolicy};
use judgerl::policy::{init_params, PolicyParameters};
use judgerl::rewards::VerdictForm;
use serde::{Deserialize, Serialize};

use crate::commands::load_checkpoint;
use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};
use crate::workspace::*;

/// Name of the untrained-initialization row.
pub const OFF_THE_SHELF: &str = "off-the-shelf";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub name: String,
    pub run_id: Option<String>,
    pub config_hash: String,
    pub seed: u64,
    pub form: VerdictForm,
    /// Pointwise Macro-F1 per task on the pointwise split.
    pub pointwise: BTreeMap<TaskKind, f64>,
    pub pointwise_format: f64,
    /// Pairwise Macro-F1 per task on the held-out split.
    pub pairwise: BTreeMap<TaskKind, f64>,
    pub pairwise_mean: f64,
    pub pairwise_format: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub data_id: String,
    pub pointwise_split: Split,
    pub rows: Vec<ComparisonRow>,
}

impl Comparison {
    pub fn row(&self, name: &str) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.name == name)
    }

    pub fn to_table(&self) -> String {
        let point: Vec<TaskKind> = TaskKind::ALL
            .into_iter()
            .filter(|t| !t.is_pairwise())
            .collect();
        let pair: Vec<TaskKind> = TaskKind::ALL
            .into_iter()
            .filter(|t| t.is_pairwise())
            .collect();
        let mut out = String::new();
        let _ = write!(out, "{:<28} {:<4}", "policy", "form");
        for t in point.iter().chain(&pair) {
            let _ = write!(out, " {:>14}", t.slug());
        }
        let _ = writeln!(
            out,
            " {:>10} {:>10} {:>10}",
            "pair_mean", "fmt_point", "fmt_pair"
        );
        for r in &self.rows {
            let form = match r.form {
                VerdictForm::Rl => "rl",
                VerdictForm::Sft => "sft",
            };
            let _ = write!(out, "{:<28} {:<4}", r.name, form);
            for t in &point {
                let _ = write!(out, " {:>14}", cell(r.pointwise.get(t)));
            }
            for t in &pair {
                let _ = write!(out, " {:>14}", cell(r.pairwise.get(t)));
            }
            let _ = writeln!(
                out,
                " {:>10.4} {:>10.4} {:>10.4}",
                r.pairwise_mean, r.pointwise_format, r.pairwise_format
            );
        }
        out
    }
}

fn cell(v: Option<&f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"))
}

struct LoadedRun {
    dir: PathBuf,
    record: RunRecord,
    config: ExperimentConfig,
    params: PolicyParameters,
}

fn load_run(dir: &Path) -> CliResult<LoadedRun> {
    let record = read_run_record(dir)?;
    let config = ExperimentConfig::load(&dir.join(CONFIG_FILE))?;
    let params = load_checkpoint(&dir.join(BEST_FILE), &config.vocabulary())?;
    Ok(LoadedRun {
        dir: dir.to_path_buf(),
        record,
        config,
        params,
    })
}

#[derive(Debug, Clone)]
pub struct ReportOutcome {
    pub dir: PathBuf,
    pub comparison: Comparison,
    pub generalization: GeneralizationReport,
}

/// Evaluates the untrained initialization and every run's best checkpoint on the
/// pointwise split and the held-out pairwise split, and writes learning curves.
pub fn report(run_dirs: &[PathBuf], out: Option<&Path>) -> CliResult<ReportOutcome> {
    if run_dirs.is_empty() {
        return Err(CliError::Usage(
            "report needs at least one run directory".into(),
        ));
    }
    let runs = run_dirs
        .iter()
        .map(|d| load_run(d))
        .collect::<CliResult<Vec<_>>>()?;
    let first = &runs[0];
    if let Some(r) = runs
        .iter()
        .find(|r| r.record.data_id != first.record.data_id)
    {
        return Err(CliError::Usage(format!(
            "{} uses dataset {}, not {}",
            r.dir.display(),
            r.record.data_id,
            first.record.data_id
        )));
    }
    let ws = Workspace::of_run_dir(&first.dir)?;
    let dataset = Dataset::load(&ws.root.join("data").join(&first.record.data_id))?;
    let base_config = &first.config;
    let vocab = base_config.vocabulary();
    let max_len = base_config.model.max_len;
    let pointwise_split = base_config
        .eval
        .splits
        .iter()
        .copied()
        .find(|s| *s != Split::Ood)
        .unwrap_or(Split::Test);

    let untrained = init_params(base_config.seed, base_config.dims())?;
    let mut entries: Vec<(String, Option<&LoadedRun>, &PolicyParameters, VerdictForm)> = vec![(
        format!("{OFF_THE_SHELF}/s{}", base_config.seed),
        None,
        &untrained,
        VerdictForm::Rl,
    )];
    for r in &runs {
        let name = format!("{}/s{}", r.record.label(), r.record.seed);
        if entries.iter().any(|e| e.0 == name) {
            return Err(CliError::Usage(format!("run {name} listed twice")));
        }
        entries.push((name, Some(r), &r.params, r.record.mode.form()));
    }

    let named: Vec<NamedPolicy<'_>> = entries
        .iter()
        .map(|(name, _, params, form)| NamedPolicy {
            name: name.clone(),
            params,
            form: *form,
        })
        .collect();
    let generalization = generalization_eval(&named, &vocab, &dataset, max_len)?;

    let mut rows = Vec::with_capacity(entries.len());
    for ((name, run, params, form), g) in entries.iter().zip(&generalization.rows) {
        let (point, _) = evaluate_suite(
            params,
            &vocab,
            &dataset,
            pointwise_split,
            *form,
            max_len,
            name,
        )?;
        let (config_hash, seed, run_id) = match run {
            Some(r) => (
                r.record.config_hash.clone(),
                r.record.seed,
                r.dir.file_name().map(|s| s.to_string_lossy().into_owned()),
            ),
            None => (base_config.hash(), base_config.seed, None),
        };
        rows.push(ComparisonRow {
            name: name.clone(),
            run_id,
            config_hash,
            seed,
            form: *form,
            pointwise: point.tasks.iter().map(|t| (t.task, t.macro_f1)).collect(),
            pointwise_format: point.format_adherence(),
            pairwise: g.macro_f1.clone(),
            pairwise_mean: g.mean_macro_f1,
            pairwise_format: g.format_adherence,
        });
    }
    let comparison = Comparison {
        data_id: first.record.data_id.clone(),
        pointwise_split,
        rows,
    };

    let dir = match out {
        Some(p) => p.to_path_buf(),
        None => {
            let key: Vec<String> = runs.iter().map(|r| r.dir.display().to_string()).collect();
            ws.root
                .join("reports")
                .join(short(&judgerl::sha256_hex(key.join("\n").as_bytes())))
        }
    };
    write_json(&dir.join("comparison.json"), &comparison)?;
    write_text(&dir.join("comparison.txt"), &comparison.to_table())?;
    write_json(&dir.join("generalization.json"), &generalization)?;
    for r in &runs {
        let name = format!("{}-s{}", r.record.label().replace(':', "-"), r.record.seed);
        write_text(
            &dir.join("curves").join(format!("{name}.csv")),
            &learning_curve(&r.dir)?,
        )?;
    }
    Ok(ReportOutcome {
        dir,
        comparison,
        generalization,
    })
}

/// Per-step CSV `step,loss,r_acc,r_for,kl,val` from a run's `log.jsonl`; absent values are empty.
pub fn learning_curve(run_dir: &Path) -> CliResult<String> {
    let text = fs::read_to_string(run_dir.join(LOG_FILE))?;
    let mut out = String::from("step,loss,r_acc,r_for,kl,val\n");
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let v: serde_json::Value = serde_json::from_str(line)?;
        let field = |k: &str| {
            v.get(k)
                .and_then(serde_json::Value::as_f64)
                .map_or(String::new(), |x| x.to_string())
        };
        let val = v
            .get("val_r_acc")
            .or_else(|| v.get("val_macro_f1"))
            .and_then(serde_json::Value::as_f64)
            .map_or(String::new(), |x| x.to_string());
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            field("step"),
            field("loss"),
            field("mean_r_acc"),
            field("mean_r_for"),
            field("mean_kl"),
            val
        );
    }
    Ok(out)
}
