//! Greedy prediction, Macro-F1 and per-task evaluation reports.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::{encode_example, Dataset, Example, Label, Split, TaskKind};
use crate::error::{Error, Result};
use crate::policy::{sample_sequence, Decoding, PolicyParameters};
use crate::rewards::{format_reward, parse_output, ParseFailure, ParsedVerdict, VerdictForm};
use crate::rng::substream;
use crate::vocab::Vocabulary;

/// Default generation cap: longest verdict plus a bounded thinking span.
pub const DEFAULT_MAX_LEN: usize = 48;

/// Greedy-decodes a continuation of `prompt` and parses it under `form`.
pub fn predict(
    params: &PolicyParameters,
    prompt: &[u32],
    form: VerdictForm,
    max_len: usize,
) -> Result<(ParsedVerdict, Vec<u32>)> {
    // Greedy decoding never touches the generator.
    let mut rng = substream(0, &[]);
    let trace = sample_sequence(params, prompt, Decoding::Greedy, max_len, &mut rng)?;
    Ok((parse_output(&trace.output).require(form), trace.output))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub label: Label,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl ClassMetrics {
    fn from_counts(label: Label, tp: usize, fp: usize, fn_: usize) -> Self {
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Self {
            label,
            tp,
            fp,
            fn_,
            precision,
            recall,
            f1,
        }
    }
}

/// Per-class counts. A missing prediction, or one outside `label_set`, adds a false
/// negative to the gold class and a false positive to no class.
pub fn class_metrics(
    predictions: &[Option<Label>],
    golds: &[Label],
    label_set: &[Label],
) -> Result<Vec<ClassMetrics>> {
    if predictions.len() != golds.len() {
        return Err(Error::Contract(format!(
            "{} predictions for {} gold labels",
            predictions.len(),
            golds.len()
        )));
    }
    if let Some(g) = golds.iter().find(|g| !label_set.contains(g)) {
        return Err(Error::Contract(format!(
            "gold label {g} outside the label set"
        )));
    }
    Ok(label_set
        .iter()
        .map(|&c| {
            let (mut tp, mut fp, mut fn_) = (0, 0, 0);
            for (p, &g) in predictions.iter().zip(golds) {
                match (*p == Some(c), g == c) {
                    (true, true) => tp += 1,
                    (true, false) => fp += 1,
                    (false, true) => fn_ += 1,
                    (false, false) => {}
                }
            }
            ClassMetrics::from_counts(c, tp, fp, fn_)
        })
        .collect())
}

/// Unweighted mean of per-class F1 over `label_set`.
pub fn macro_f1(
    predictions: &[Option<Label>],
    golds: &[Label],
    label_set: &[Label],
) -> Result<f64> {
    let classes = class_metrics(predictions, golds, label_set)?;
    Ok(mean_f1(&classes))
}

fn mean_f1(classes: &[ClassMetrics]) -> f64 {
    if classes.is_empty() {
        return 0.0;
    }
    classes.iter().map(|c| c.f1).sum::<f64>() / classes.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskReport {
    pub task: TaskKind,
    pub n: usize,
    pub macro_f1: f64,
    pub classes: Vec<ClassMetrics>,
    pub format_adherence: f64,
    pub mean_r_acc: f64,
    /// Counts per parse outcome, `none` included.
    pub failures: BTreeMap<ParseFailure, usize>,
}

impl TaskReport {
    /// Macro-F1 recomputed from the report's own confusion counts.
    pub fn recomputed_macro_f1(&self) -> f64 {
        let classes: Vec<ClassMetrics> = self
            .classes
            .iter()
            .map(|c| ClassMetrics::from_counts(c.label, c.tp, c.fp, c.fn_))
            .collect();
        mean_f1(&classes)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalMeta {
    pub checkpoint_id: String,
    pub split: Split,
    pub seed: u64,
    pub form: VerdictForm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub meta: EvalMeta,
    pub tasks: Vec<TaskReport>,
}

impl EvalReport {
    pub fn task(&self, task: TaskKind) -> Option<&TaskReport> {
        self.tasks.iter().find(|t| t.task == task)
    }

    /// Fraction of all evaluated examples whose output followed the required form.
    pub fn format_adherence(&self) -> f64 {
        let n: usize = self.tasks.iter().map(|t| t.n).sum();
        let ok: f64 = self
            .tasks
            .iter()
            .map(|t| t.format_adherence * t.n as f64)
            .sum();
        if n == 0 {
            0.0
        } else {
            ok / n as f64
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    /// Aligned plain-text table, one row per task.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "checkpoint {}  split {}  form {:?}  seed {}",
            self.meta.checkpoint_id, self.meta.split, self.meta.form, self.meta.seed
        );
        let _ = writeln!(
            out,
            "{:<14} {:>5} {:>9} {:>8} {:>8} {:>14} {:>14}",
            "task", "n", "macro_f1", "format", "r_acc", "f1[neg]", "f1[pos]"
        );
        for t in &self.tasks {
            let f1 = |i: usize| {
                t.classes
                    .get(i)
                    .map(|c| format!("{}={:.4}", c.label, c.f1))
                    .unwrap_or_default()
            };
            let _ = writeln!(
                out,
                "{:<14} {:>5} {:>9.4} {:>8.4} {:>8.4} {:>14} {:>14}",
                t.task.slug(),
                t.n,
                t.macro_f1,
                t.format_adherence,
                t.mean_r_acc,
                f1(0),
                f1(1)
            );
        }
        out
    }
}

/// One per-example prediction, for offline analysis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub example_id: String,
    pub task: TaskKind,
    pub gold: Label,
    pub predicted: Option<Label>,
    pub failure: ParseFailure,
    pub output_tokens: Vec<u32>,
}

pub fn predictions_csv(rows: &[PredictionRow]) -> String {
    let mut out = String::from("example_id,task,gold,predicted,failure,output_tokens\n");
    for r in rows {
        let tokens: Vec<String> = r.output_tokens.iter().map(u32::to_string).collect();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.example_id,
            r.task.slug(),
            r.gold,
            r.predicted.map(|l| l.to_string()).unwrap_or_default(),
            r.failure.name(),
            tokens.join(" ")
        );
    }
    out
}

/// Scores `examples` (any mix of tasks) and groups the results per task, in
/// [`TaskKind::ALL`] order.
pub fn evaluate_examples(
    params: &PolicyParameters,
    vocab: &Vocabulary,
    examples: &[&Example],
    form: VerdictForm,
    max_len: usize,
) -> Result<(Vec<TaskReport>, Vec<PredictionRow>)> {
    let mut rows = Vec::with_capacity(examples.len());
    for ex in examples {
        let prompt = encode_example(ex, vocab)?;
        let (parsed, output) = predict(params, &prompt, form, max_len)?;
        rows.push(PredictionRow {
            example_id: ex.id.clone(),
            task: ex.task,
            gold: ex.gold,
            predicted: parsed.label,
            failure: parsed.failure,
            output_tokens: output,
        });
    }
    let mut reports = Vec::new();
    for task in TaskKind::ALL {
        let mine: Vec<&PredictionRow> = rows.iter().filter(|r| r.task == task).collect();
        if mine.is_empty() {
            continue;
        }
        let preds: Vec<Option<Label>> = mine.iter().map(|r| r.predicted).collect();
        let golds: Vec<Label> = mine.iter().map(|r| r.gold).collect();
        let classes = class_metrics(&preds, &golds, &task.labels())?;
        let mut failures: BTreeMap<ParseFailure, usize> = BTreeMap::new();
        let mut formatted = 0usize;
        let mut correct = 0usize;
        for r in &mine {
            *failures.entry(r.failure).or_default() += 1;
            let parsed = ParsedVerdict {
                form: r.predicted.map(|_| form),
                thinking_span: None,
                label: r.predicted,
                failure: r.failure,
            };
            if format_reward(&parsed, form) == 1.0 {
                formatted += 1;
            }
            if r.predicted == Some(r.gold) {
                correct += 1;
            }
        }
        reports.push(TaskReport {
            task,
            n: mine.len(),
            macro_f1: mean_f1(&classes),
            classes,
            format_adherence: ratio(formatted, mine.len()),
            mean_r_acc: ratio(correct, mine.len()),
            failures,
        });
    }
    Ok((reports, rows))
}

/// Evaluates every example of `split`.
pub fn evaluate_suite(
    params: &PolicyParameters,
    vocab: &Vocabulary,
    dataset: &Dataset,
    split: Split,
    form: VerdictForm,
    max_len: usize,
    meta_id: &str,
) -> Result<(EvalReport, Vec<PredictionRow>)> {
    let examples: Vec<&Example> = dataset.split(split).iter().collect();
    let (tasks, rows) = evaluate_examples(params, vocab, &examples, form, max_len)?;
    Ok((
        EvalReport {
            meta: EvalMeta {
                checkpoint_id: meta_id.to_string(),
                split,
                seed: dataset.manifest.seed,
                form,
            },
            tasks,
        },
        rows,
    ))
}

/// A checkpoint to compare on the held-out pairwise split, under its native form.
pub struct NamedPolicy<'a> {
    pub name: String,
    pub params: &'a PolicyParameters,
    pub form: VerdictForm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneralizationRow {
    pub name: String,
    pub form: VerdictForm,
    pub macro_f1: BTreeMap<TaskKind, f64>,
    pub format_adherence: f64,
    /// Mean over the pairwise tasks.
    pub mean_macro_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneralizationReport {
    pub seed: u64,
    pub rows: Vec<GeneralizationRow>,
}

impl GeneralizationReport {
    pub fn row(&self, name: &str) -> Option<&GeneralizationRow> {
        self.rows.iter().find(|r| r.name == name)
    }

    /// `a - b` on the mean pairwise Macro-F1, if both rows exist.
    pub fn gap(&self, a: &str, b: &str) -> Option<f64> {
        Some(self.row(a)?.mean_macro_f1 - self.row(b)?.mean_macro_f1)
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<20} {:>5} {:>12} {:>12} {:>9} {:>8}",
            "policy", "form", "align_pair", "safety_pair", "mean", "format"
        );
        for r in &self.rows {
            let get = |t| r.macro_f1.get(&t).copied().unwrap_or(f64::NAN);
            let _ = writeln!(
                out,
                "{:<20} {:>5} {:>12.4} {:>12.4} {:>9.4} {:>8.4}",
                r.name,
                format!("{:?}", r.form).to_lowercase(),
                get(TaskKind::AlignPair),
                get(TaskKind::SafetyPair),
                r.mean_macro_f1,
                r.format_adherence
            );
        }
        out
    }
}

/// Side-by-side pairwise Macro-F1 of each policy, rows in the given order.
pub fn generalization_eval(
    policies: &[NamedPolicy<'_>],
    vocab: &Vocabulary,
    dataset: &Dataset,
    max_len: usize,
) -> Result<GeneralizationReport> {
    let examples: Vec<&Example> = dataset.split(Split::Ood).iter().collect();
    if examples.is_empty() {
        return Err(Error::Contract("dataset has no ood split".into()));
    }
    let mut rows = Vec::with_capacity(policies.len());
    for p in policies {
        let (tasks, _) = evaluate_examples(p.params, vocab, &examples, p.form, max_len)?;
        let macro_f1: BTreeMap<TaskKind, f64> =
            tasks.iter().map(|t| (t.task, t.macro_f1)).collect();
        let n: usize = tasks.iter().map(|t| t.n).sum();
        let formatted: f64 = tasks.iter().map(|t| t.format_adherence * t.n as f64).sum();
        rows.push(GeneralizationRow {
            name: p.name.clone(),
            form: p.form,
            mean_macro_f1: macro_f1.values().sum::<f64>() / macro_f1.len() as f64,
            macro_f1,
            format_adherence: formatted / n as f64,
        });
    }
    Ok(GeneralizationReport {
        seed: dataset.manifest.seed,
        rows,
    })
}
