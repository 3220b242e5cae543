//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any fails.
//!
//! Run a subset by naming criteria: `cargo test --release --test acceptance -- C1 C5`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use judgerl::data::{encode_example, generate_dataset, DataConfig, Label, Split, TaskKind};
use judgerl::eval::{evaluate_suite, macro_f1};
use judgerl::gradcheck::{check_gradient, fidelity_suite, FidelityConfig, MAX_RELATIVE_ERROR};
use judgerl::grpo::{
    collect_group, compute_advantages, grpo_objective, k3, kl_estimate, policy_gradient,
    ratio_terms, RolloutGroup, DEGENERATE_STD,
};
use judgerl::policy::{
    init_params, interpolate_params, sequence_log_prob, Checkpoint, Decoding, Dims,
    PolicyParameters,
};
use judgerl::rewards::{parse_output, total_reward, VerdictForm};
use judgerl::rng::substream;
use judgerl::vocab::{tok, Vocabulary};
use judgerl_cli::commands::{self, TrainOptions};
use judgerl_cli::report::{report, Comparison, OFF_THE_SHELF};
use judgerl_cli::workspace::*;
use judgerl_cli::{ExperimentConfig, Mode, Workspace};
use rand::Rng as _;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

type Criterion = (&'static str, &'static str, fn() -> Outcome);

const CRITERIA: [Criterion; 8] = [
    ("C1", "gradient fidelity", gradient_fidelity),
    (
        "C2",
        "reward arithmetic and parser golden table",
        reward_arithmetic,
    ),
    ("C3", "advantage properties", advantage_properties),
    ("C4", "grpo identities", grpo_identities),
    ("C5", "macro-f1 oracle equivalence", macro_f1_oracle),
    ("C6", "rl learnability (median of 3 seeds)", rl_learnability),
    (
        "C7",
        "pairwise generalization gap (median of 3 seeds)",
        generalization_gap,
    ),
    ("C8", "determinism and persistence", determinism),
];

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.iter().any(|a| a == "--list") {
        for (id, _, _) in CRITERIA {
            println!("{id}: test");
        }
        return;
    }
    let filters: Vec<&String> = args.iter().filter(|a| !a.starts_with('-')).collect();
    let mut failed = Vec::new();
    for (id, name, run) in CRITERIA {
        if !filters.is_empty() && !filters.iter().any(|f| *f == id) {
            continue;
        }
        let t = Instant::now();
        let o = run();
        println!(
            "{id} {} {name}: {} [{:.1}s]",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            t.elapsed().as_secs_f64()
        );
        if !o.pass {
            failed.push(id);
        }
    }
    if !failed.is_empty() {
        println!("failed criteria: {}", failed.join(" "));
        std::process::exit(1);
    }
}

// ---------------------------------------------------------------- C1

fn gradient_fidelity() -> Outcome {
    let t = Instant::now();
    let report = fidelity_suite(&FidelityConfig::default()).expect("fidelity suite runs");
    let secs = t.elapsed().as_secs_f64();
    let worst = report.max_relative_error();
    outcome(
        worst <= MAX_RELATIVE_ERROR && secs < 60.0,
        format!("max relative error {worst:.3e} (<= 1e-4), 20 instances x 100 coordinates in {secs:.2}s (< 60s)"),
    )
}

// ---------------------------------------------------------------- C2

/// Hand-derived expectations; each line is the exact serialized verdict.
fn golden_table() -> Vec<(Vec<u32>, &'static str)> {
    use tok::*;
    let t1 = THINK_0;
    let t2 = THINK_0 + 1;
    vec![
        (
            vec![
                THINK_OPEN,
                t1,
                t2,
                THINK_CLOSE,
                BOX_OPEN,
                JSON_LABEL_KEY,
                SAFE,
                BOX_CLOSE,
                EOS,
            ],
            r#"{"form":"rl","thinking_span":[1,3],"label":"Safe","failure":"none"}"#,
        ),
        (
            vec![
                THINK_OPEN,
                THINK_CLOSE,
                BOX_OPEN,
                JSON_LABEL_KEY,
                NO,
                BOX_CLOSE,
            ],
            r#"{"form":"rl","thinking_span":[1,1],"label":"No","failure":"none"}"#,
        ),
        (
            vec![
                THINK_OPEN,
                YES,
                THINK_CLOSE,
                BOX_OPEN,
                JSON_LABEL_KEY,
                YES,
                BOX_CLOSE,
                EOS,
            ],
            r#"{"form":"rl","thinking_span":[1,2],"label":"Yes","failure":"none"}"#,
        ),
        (
            vec![UNSAFE, EOS],
            r#"{"form":"sft","thinking_span":null,"label":"Unsafe","failure":"none"}"#,
        ),
        (
            vec![FIRST],
            r#"{"form":"sft","thinking_span":null,"label":"First","failure":"none"}"#,
        ),
        (
            vec![],
            r#"{"form":null,"thinking_span":null,"label":null,"failure":"no_think_open"}"#,
        ),
        (
            vec![BOX_OPEN, JSON_LABEL_KEY, SAFE, BOX_CLOSE],
            r#"{"form":null,"thinking_span":null,"label":null,"failure":"no_think_open"}"#,
        ),
        (
            vec![THINK_OPEN, t1, t2],
            r#"{"form":null,"thinking_span":null,"label":null,"failure":"no_think_close"}"#,
        ),
        (
            vec![THINK_OPEN, t1, THINK_OPEN, THINK_CLOSE],
            r#"{"form":null,"thinking_span":null,"label":null,"failure":"multiple_think_blocks"}"#,
        ),
        (
            vec![
                THINK_OPEN,
                THINK_CLOSE,
                THINK_OPEN,
                THINK_CLOSE,
                BOX_OPEN,
                JSON_LABEL_KEY,
                YES,
                BOX_CLOSE,
            ],
            r#"{"form":null,"thinking_span":null,"label":null,"failure":"multiple_think_blocks"}"#,
        ),
        (
            vec![THINK_OPEN, t1, THINK_CLOSE, YES, EOS],
            r#"{"form":null,"thinking_span":null,"label":null,"failure":"no_box"}"#,
        ),
        (
            vec![THINK_OPEN, THINK_CLOSE, BOX_OPEN, SAFE, BOX_CLOSE],
            r#"{"form":null,"thinking_span":null,"label":null,"failure":"malformed_json"}"#,
        ),
        (
            vec![THINK_OPEN, THINK_CLOSE, BOX_OPEN, JSON_LABEL_KEY, SAFE],
            r#"{"form":null,"thinking_span":null,"label":null,"failure":"malformed_json"}"#,
        ),
        (
            vec![
                THINK_OPEN,
                THINK_CLOSE,
                BOX_OPEN,
                JSON_LABEL_KEY,
                GREEN,
                BOX_CLOSE,
            ],
            r#"{"form":null,"thinking_span":null,"label":null,"failure":"unknown_label"}"#,
        ),
        (
            vec![
                THINK_OPEN,
                THINK_CLOSE,
                BOX_OPEN,
                JSON_LABEL_KEY,
                NO,
                BOX_CLOSE,
                t1,
                EOS,
            ],
            r#"{"form":null,"thinking_span":null,"label":null,"failure":"trailing_tokens"}"#,
        ),
        (
            vec![SAFE, SAFE],
            r#"{"form":null,"thinking_span":null,"label":null,"failure":"no_think_open"}"#,
        ),
    ]
}

fn reward_arithmetic() -> Outcome {
    let mut lattice_ok = true;
    for i in 0..=10 {
        let alpha = f64::from(i) / 10.0;
        let points = [0.0, alpha, 1.0 - alpha, 1.0];
        for (acc, fmt, want) in [
            (0.0, 0.0, 0.0),
            (0.0, 1.0, alpha),
            (1.0, 0.0, 1.0 - alpha),
            (1.0, 1.0, 1.0),
        ] {
            let r = total_reward(acc, fmt, alpha).expect("alpha in range");
            lattice_ok &= r == want && points.contains(&r);
        }
    }
    let table = golden_table();
    let mismatches: Vec<String> = table
        .iter()
        .filter_map(|(seq, want)| {
            let got = serde_json::to_string(&parse_output(seq)).expect("verdict serializes");
            (got != *want).then(|| format!("{seq:?}: {got}"))
        })
        .collect();
    let failures: std::collections::BTreeSet<&str> = table
        .iter()
        .map(|(_, w)| w.split("\"failure\":\"").nth(1).unwrap_or(""))
        .collect();
    outcome(
        lattice_ok && mismatches.is_empty() && table.len() >= 12 && failures.len() == 8,
        format!(
            "lattice exact at 11 alphas: {lattice_ok}; golden table {}/{} byte-exact covering {} outcomes{}",
            table.len() - mismatches.len(),
            table.len(),
            failures.len(),
            if mismatches.is_empty() {
                String::new()
            } else {
                format!("; mismatches {mismatches:?}")
            }
        ),
    )
}

// ---------------------------------------------------------------- C3

fn advantage_properties() -> Outcome {
    let mut rng = substream(0xACCE, &[3]);
    let (mut worst_mean, mut worst_std, mut degenerate) = (0.0f64, 0.0f64, 0usize);
    let mut invariance_ok = true;
    let mut degenerate_ok = true;
    for i in 0..10_000 {
        let g = rng.gen_range(2..=64);
        // Half the vectors on the reward lattice (many ties), half continuous; the
        // invariance checks use dyadic values so that shifted rewards stay exact.
        let rewards: Vec<f64> = if i % 2 == 0 {
            let alpha = 0.125;
            (0..g)
                .map(|_| [0.0, alpha, 1.0 - alpha, 1.0][rng.gen_range(0..4)])
                .collect()
        } else {
            (0..g).map(|_| rng.gen::<f64>()).collect()
        };
        let a = compute_advantages(&rewards).expect("group of at least two");
        let n = g as f64;
        let mean_r = rewards.iter().sum::<f64>() / n;
        let spread = (rewards.iter().map(|r| (r - mean_r).powi(2)).sum::<f64>() / n).sqrt();
        if spread < DEGENERATE_STD {
            degenerate += 1;
            degenerate_ok &= a.iter().all(|&x| x == 0.0);
        } else {
            let mean = a.iter().sum::<f64>() / n;
            let std = (a.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
            worst_mean = worst_mean.max(mean.abs());
            worst_std = worst_std.max((std - 1.0).abs());
        }
        if i % 2 == 0 {
            let shift = f64::from(rng.gen_range(-8i32..=8));
            let scale = 2f64.powi(rng.gen_range(-4..=4));
            let shifted: Vec<f64> = rewards.iter().map(|r| r + shift).collect();
            let scaled: Vec<f64> = rewards.iter().map(|r| r * scale).collect();
            invariance_ok &= compute_advantages(&shifted).unwrap() == a
                && compute_advantages(&scaled).unwrap() == a;
        }
    }
    let worked = compute_advantages(&[1.0, 1.0, 0.0, 0.0]).unwrap() == vec![1.0, 1.0, -1.0, -1.0];
    outcome(
        worst_mean <= 1e-9 && worst_std <= 1e-6 && invariance_ok && degenerate_ok && worked,
        format!(
            "10000 vectors: max |mean| {worst_mean:.2e}, max |std-1| {worst_std:.2e}, {degenerate} degenerate all-zero: {degenerate_ok}, exact shift/scale invariance: {invariance_ok}, [1,1,0,0] -> [1,1,-1,-1]: {worked}"
        ),
    )
}

// ---------------------------------------------------------------- C4

fn sample_groups(p: &PolicyParameters, seed: u64, vocab: &Vocabulary) -> Vec<RolloutGroup> {
    let ds = generate_dataset(&DataConfig::scaled(0.05), seed).expect("dataset");
    let train = ds.split(Split::Train);
    let mut rng = substream(seed, &[0xC4]);
    (0..3)
        .map(|j| {
            let ex = &train[rng.gen_range(0..train.len())];
            let prompt = encode_example(ex, vocab).unwrap();
            let mut g = collect_group(
                p,
                ex,
                &prompt,
                8,
                Decoding::Sample { temperature: 1.0 },
                8,
                0.1,
                &mut substream(seed, &[j]),
            )
            .unwrap();
            let fake: Vec<f64> = (0..8).map(|_| rng.gen::<f64>()).collect();
            g.advantages = compute_advantages(&fake).unwrap();
            g
        })
        .collect()
}

fn unclipped_loss(
    p: &PolicyParameters,
    old: &PolicyParameters,
    reference: &PolicyParameters,
    groups: &[RolloutGroup],
    beta: f64,
) -> f64 {
    let (mut s, mut kl, mut n) = (0.0, 0.0, 0usize);
    for g in groups {
        for (t, a) in g.traces.iter().zip(&g.advantages) {
            let (_, cur) = sequence_log_prob(p, &g.prompt, &t.output).unwrap();
            let (_, o) = sequence_log_prob(old, &g.prompt, &t.output).unwrap();
            let (_, r) = sequence_log_prob(reference, &g.prompt, &t.output).unwrap();
            for k in 0..cur.len() {
                s += (cur[k] - o[k]).exp() * a;
                kl += (r[k] - cur[k]).exp() - (r[k] - cur[k]) - 1.0;
                n += 1;
            }
        }
    }
    -s / n as f64 + beta * kl / n as f64
}

fn grpo_identities() -> Outcome {
    let vocab = Vocabulary::default();
    let dims = Dims {
        vocab: vocab.len(),
        hidden: 16,
    };
    let (mut ratios_one, mut kl_zero, mut inactive_ok) = (true, true, true);
    let (mut worst_pg, mut worst_loss, mut worst_fd) = (0.0f64, 0.0f64, 0.0f64);
    for trial in 0..20u64 {
        let p = init_params(100 + trial, dims).unwrap();
        let groups = sample_groups(&p, trial, &vocab);
        for g in &groups {
            for t in &g.traces {
                ratios_one &= ratio_terms(&p, &p, t).unwrap().iter().all(|&r| r == 1.0);
                kl_zero &= kl_estimate(&p, &p, t).unwrap() == 0.0;
            }
        }
        let on = grpo_objective(&p, &p, &p, &groups, 0.2, 0.04).unwrap();
        kl_zero &= on.mean_kl == 0.0;
        let pg = policy_gradient(&p, &groups).unwrap();
        worst_pg = on
            .grad
            .iter()
            .zip(&pg)
            .fold(worst_pg, |m, (a, b)| m.max((a - b).abs()));

        // Nearby policy: ratios move off one but stay strictly inside the clip range.
        let reference = init_params(200 + trial, dims).unwrap();
        let q = interpolate_params(&p, &reference, 0.01).unwrap();
        let eps = 0.2;
        let inside = groups.iter().all(|g| {
            g.traces.iter().all(|t| {
                ratio_terms(&q, &p, t)
                    .unwrap()
                    .iter()
                    .all(|&r| r > 1.0 - eps && r < 1.0 + eps)
            })
        });
        let obj = grpo_objective(&q, &p, &reference, &groups, eps, 0.04).unwrap();
        if inside {
            let plain = unclipped_loss(&q, &p, &reference, &groups, 0.04);
            worst_loss = worst_loss.max((obj.loss - plain).abs());
            inactive_ok &= obj.clip_fraction == 0.0;
            let fd = check_gradient(
                &q,
                &obj.grad,
                |x| Ok(unclipped_loss(x, &p, &reference, &groups, 0.04)),
                1e-5,
                30,
                &mut substream(trial, &[0xFD]),
            )
            .unwrap();
            worst_fd = worst_fd.max(fd.max_relative_error);
        } else {
            inactive_ok = false;
        }
    }
    let k3_zero = k3(-0.7, -0.7) == 0.0;
    outcome(
        ratios_one && kl_zero && k3_zero && worst_pg <= 1e-9 && inactive_ok && worst_loss <= 1e-12 && worst_fd <= 1e-4,
        format!(
            "20 trials: ratios == 1 at pi=pi_old: {ratios_one}; max |clipped grad - policy gradient| {worst_pg:.2e}; KL == 0 at pi=pi_ref: {kl_zero}; clip-inactive: loss matches unclipped within {worst_loss:.2e}, gradient vs unclipped finite differences {worst_fd:.2e}"
        ),
    )
}

// ---------------------------------------------------------------- C5

/// Full confusion matrix over the label set plus an "absent" column, F1 = 2tp / (2tp + fp + fn).
fn oracle_macro_f1(preds: &[Option<Label>], golds: &[Label], labels: &[Label]) -> f64 {
    let k = labels.len();
    let mut m = vec![vec![0usize; k + 1]; k];
    for (p, g) in preds.iter().zip(golds) {
        let gi = labels.iter().position(|l| l == g).unwrap();
        let pi = p
            .and_then(|p| labels.iter().position(|l| *l == p))
            .unwrap_or(k);
        m[gi][pi] += 1;
    }
    let mut total = 0.0;
    #[allow(clippy::needless_range_loop)]
    for c in 0..k {
        let tp = m[c][c];
        let fp: usize = (0..k).filter(|&g| g != c).map(|g| m[g][c]).sum();
        let fn_: usize = (0..=k).filter(|&p| p != c).map(|p| m[c][p]).sum();
        let den = 2 * tp + fp + fn_;
        total += if den == 0 {
            0.0
        } else {
            2.0 * tp as f64 / den as f64
        };
    }
    total / k as f64
}

fn macro_f1_oracle() -> Outcome {
    let mut rng = substream(0xF1, &[]);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let task = [
            TaskKind::AlignPoint,
            TaskKind::SafetyPoint,
            TaskKind::SafetyPair,
        ][rng.gen_range(0..3)];
        let labels = task.labels();
        let n = rng.gen_range(1..=40);
        let golds: Vec<Label> = (0..n).map(|_| labels[rng.gen_range(0..2)]).collect();
        let preds: Vec<Option<Label>> = (0..n)
            .map(|_| match rng.gen_range(0..10) {
                0 => None,
                1 => Some(Label::ALL[rng.gen_range(0..Label::ALL.len())]),
                _ => Some(labels[rng.gen_range(0..2)]),
            })
            .collect();
        let got = macro_f1(&preds, &golds, &labels).unwrap();
        worst = worst.max((got - oracle_macro_f1(&preds, &golds, &labels)).abs());
    }
    use Label::{No, Yes};
    let worked = macro_f1(
        &[Some(Yes), Some(No), Some(No), Some(No)],
        &[Yes, Yes, No, No],
        &[Yes, No],
    )
    .unwrap();
    outcome(
        worst <= 1e-12 && (worked - 0.7333).abs() < 5e-5,
        format!("1000 random vectors: max |module - oracle| {worst:.2e}; worked example {worked:.4} (0.7333)"),
    )
}

// ---------------------------------------------------------------- C6 / C7

struct SeedResult {
    seed: u64,
    comparison: Comparison,
    rl_seconds: f64,
}

fn seed_results() -> &'static [SeedResult] {
    static CELL: std::sync::OnceLock<Vec<SeedResult>> = std::sync::OnceLock::new();
    CELL.get_or_init(|| {
        let root = tempfile::tempdir().expect("tempdir");
        let ws = Workspace::new(root.path());
        (0..3)
            .map(|seed| {
                let config = ExperimentConfig {
                    seed,
                    ..ExperimentConfig::default()
                };
                let t = Instant::now();
                let rl = commands::train(&config, &ws, Mode::MtRl, None, &TrainOptions::default())
                    .expect("mt-rl run");
                let rl_seconds = t.elapsed().as_secs_f64();
                let sft = commands::train(
                    &config,
                    &ws,
                    Mode::SftUnified,
                    None,
                    &TrainOptions::default(),
                )
                .expect("sft run");
                let base = ws.run_dir(&config, Mode::Base, None);
                let out = report(&[base, rl.dir, sft.dir], None).expect("report");
                println!(
                    "    seed {seed}: mt-rl {rl_seconds:.0}s\n{}",
                    indent(&out.comparison.to_table())
                );
                SeedResult {
                    seed,
                    comparison: out.comparison,
                    rl_seconds,
                }
            })
            .collect()
    })
}

fn indent(s: &str) -> String {
    s.lines()
        .map(|l| format!("      {l}\n"))
        .collect::<String>()
        .trim_end()
        .to_string()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn row<'a>(r: &'a SeedResult, prefix: &str) -> &'a judgerl_cli::report::ComparisonRow {
    r.comparison
        .row(&format!("{prefix}/s{}", r.seed))
        .unwrap_or_else(|| panic!("row {prefix} missing"))
}

fn rl_learnability() -> Outcome {
    let results = seed_results();
    let mut per_task = BTreeMap::new();
    for task in [
        TaskKind::AlignPoint,
        TaskKind::SafetyPoint,
        TaskKind::QualityPoint,
    ] {
        per_task.insert(
            task,
            median(
                results
                    .iter()
                    .map(|r| row(r, "mt-rl").pointwise[&task])
                    .collect(),
            ),
        );
    }
    let format = median(
        results
            .iter()
            .map(|r| row(r, "mt-rl").pointwise_format)
            .collect(),
    );
    let slowest = results.iter().map(|r| r.rl_seconds).fold(0.0, f64::max);
    let pass = format >= 0.95 && per_task.values().all(|&f| f >= 0.90) && slowest <= 1200.0;
    let tasks: Vec<String> = per_task
        .iter()
        .map(|(t, f)| format!("{} {f:.3}", t.slug()))
        .collect();
    outcome(
        pass,
        format!(
            "median test macro-f1 {} (each >= 0.90); median format {format:.3} (>= 0.95); slowest seed {slowest:.0}s (<= 1200s)",
            tasks.join(", ")
        ),
    )
}

fn generalization_gap() -> Outcome {
    let results = seed_results();
    let gaps: Vec<f64> = results
        .iter()
        .map(|r| row(r, "mt-rl").pairwise_mean - row(r, "sft-unified").pairwise_mean)
        .collect();
    let gap = median(gaps.clone());
    let rl = median(
        results
            .iter()
            .map(|r| row(r, "mt-rl").pairwise_mean)
            .collect(),
    );
    let sft = median(
        results
            .iter()
            .map(|r| row(r, "sft-unified").pairwise_mean)
            .collect(),
    );
    let untrained = median(
        results
            .iter()
            .map(|r| row(r, OFF_THE_SHELF).pairwise_mean)
            .collect(),
    );
    let base = median(
        results
            .iter()
            .map(|r| row(r, "base").pairwise_mean)
            .collect(),
    );
    outcome(
        gap >= 0.10,
        format!(
            "median pairwise macro-f1 mt-rl {rl:.3} vs sft-unified {sft:.3}, gap {gap:+.3} (>= +0.10; per seed {gaps:.3?}); reported: untrained {untrained:.3}, primed base {base:.3}, sft-unified minus untrained {:+.3}",
            sft - untrained
        ),
    )
}

// ---------------------------------------------------------------- C8

fn quick_config() -> ExperimentConfig {
    let mut c = ExperimentConfig::default();
    c.prime.steps = 300;
    c.rl.max_steps = 40;
    c.rl.eval_every = 10;
    c.rl.trace_rewards = true;
    c.sft.max_steps = 40;
    c.sft.eval_every = 10;
    c
}

fn files_under(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(dir).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

fn identical_trees(a: &Path, b: &Path) -> bool {
    let fa = files_under(a);
    fa == files_under(b)
        && !fa.is_empty()
        && fa
            .iter()
            .all(|f| fs::read(a.join(f)).unwrap() == fs::read(b.join(f)).unwrap())
}

fn determinism() -> Outcome {
    let config = quick_config();
    let (ra, rb) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (wa, wb) = (Workspace::new(ra.path()), Workspace::new(rb.path()));
    let opts = TrainOptions::default();
    let mut run_dirs = Vec::new();
    for ws in [&wa, &wb] {
        let rl = commands::train(&config, ws, Mode::MtRl, None, &opts).unwrap();
        let sft = commands::train(&config, ws, Mode::SftUnified, None, &opts).unwrap();
        let base = ws.run_dir(&config, Mode::Base, None);
        report(
            &[base.clone(), rl.dir.clone(), sft.dir.clone()],
            Some(&ws.root.join("report")),
        )
        .unwrap();
        run_dirs.push((base, rl.dir, sft.dir));
    }
    let data_same = identical_trees(&wa.data_dir(&config), &wb.data_dir(&config));
    let runs_same = identical_trees(&wa.root.join("runs"), &wb.root.join("runs"));
    let report_same = identical_trees(&wa.root.join("report"), &wb.root.join("report"));

    // Save -> load -> evaluate reproduces the report exactly.
    let vocab = config.vocabulary();
    let ds = judgerl::data::Dataset::load(&wa.data_dir(&config)).unwrap();
    let rl_dir = &run_dirs[0].1;
    let params = Checkpoint::load(&rl_dir.join(BEST_FILE))
        .unwrap()
        .params(Some(&vocab))
        .unwrap();
    let before = evaluate_suite(
        &params,
        &vocab,
        &ds,
        Split::Test,
        VerdictForm::Rl,
        config.model.max_len,
        "ck",
    )
    .unwrap();
    let path = ra.path().join("roundtrip.ckpt.json");
    Checkpoint::new(&params, &vocab, "roundtrip")
        .save(&path)
        .unwrap();
    let loaded = Checkpoint::load(&path)
        .unwrap()
        .params(Some(&vocab))
        .unwrap();
    let after = evaluate_suite(
        &loaded,
        &vocab,
        &ds,
        Split::Test,
        VerdictForm::Rl,
        config.model.max_len,
        "ck",
    )
    .unwrap();
    let eval_same = loaded.flat() == params.flat()
        && before == after
        && serde_json::to_string(&before.0).unwrap() == serde_json::to_string(&after.0).unwrap();

    // Interrupted and resumed runs select the same best checkpoint as an uninterrupted one.
    let rc = tempfile::tempdir().unwrap();
    let wc = Workspace::new(rc.path());
    let mut resume_same = true;
    for mode in [Mode::MtRl, Mode::SftUnified] {
        let halted = commands::train(
            &config,
            &wc,
            mode,
            None,
            &TrainOptions {
                resume: false,
                halt_after_step: Some(17),
            },
        )
        .unwrap();
        resume_same &= !halted.summary.completed;
        let resumed = commands::train(
            &config,
            &wc,
            mode,
            None,
            &TrainOptions {
                resume: true,
                halt_after_step: None,
            },
        )
        .unwrap();
        let straight = wa.run_dir(&config, mode, None);
        for f in [
            BEST_FILE,
            BEST_SIDECAR,
            STATE_FILE,
            LOG_FILE,
            LAST_FILE,
            SUMMARY_FILE,
        ] {
            resume_same &=
                fs::read(resumed.dir.join(f)).unwrap() == fs::read(straight.join(f)).unwrap();
        }
        if mode == Mode::MtRl {
            resume_same &= fs::read(resumed.dir.join(REWARDS_FILE)).unwrap()
                == fs::read(straight.join(REWARDS_FILE)).unwrap();
        }
    }
    outcome(
        data_same && runs_same && report_same && eval_same && resume_same,
        format!(
            "byte-identical datasets {data_same}, run logs and checkpoints {runs_same}, reports {report_same}; save-load-eval exact {eval_same}; kill-and-resume selects the same best checkpoint {resume_same}"
        ),
    )
}
