//! Dataset construction, persistence and batch sampling.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::example::{Example, Split};
use super::scene::{generate_scene, Color, SceneConfig, Shape};
use super::task::{ground_truth, is_pair_tie, Claim, Label, Quantifier, TaskKind};
use crate::error::{Error, Result};
use crate::rng::{substream, Rng};
use crate::sha256_hex;

/// Requested class counts for one task in one split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassCounts {
    pub negative: usize,
    pub positive: usize,
}

impl ClassCounts {
    pub fn total(&self) -> usize {
        self.negative + self.positive
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSplitSpec {
    pub task: TaskKind,
    pub split: Split,
    pub counts: ClassCounts,
}

/// `(total, negative, positive)` examples in one split.
pub type SplitSizes = (usize, usize, usize);

/// Reference split sizes the pointwise tasks are modeled on, in train/val/test order.
pub const REFERENCE_COUNTS: [(TaskKind, [SplitSizes; 3]); 3] = [
    // image-text alignment benchmark
    (
        TaskKind::AlignPoint,
        [(5544, 2535, 3009), (693, 302, 391), (693, 309, 384)],
    ),
    // unsafe-content benchmark
    (
        TaskKind::SafetyPoint,
        [(7298, 2954, 4344), (811, 317, 494), (2037, 777, 1260)],
    ),
    // naturalness-quality benchmark
    (
        TaskKind::QualityPoint,
        [(4839, 2440, 2399), (605, 285, 320), (605, 300, 305)],
    ),
];

/// Default number of examples per pairwise task in the ood split.
pub const DEFAULT_OOD_PER_TASK: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub scene: SceneConfig,
    /// `QualityPoint` is `No` iff `noise_level > quality_threshold`.
    pub quality_threshold: u32,
    /// Probability that a claim slot is "any" (both slots "any" is re-drawn).
    pub claim_any_prob: f64,
    /// Probability of a `present` quantifier for pointwise claims.
    pub claim_present_prob: f64,
    /// Upper bound on the fraction of exact ties among pairwise examples.
    pub pair_tie_max_fraction: f64,
    /// Rejection-sampling budget: draws allowed per requested example.
    pub max_draws_per_example: usize,
    pub tasks: Vec<TaskSplitSpec>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self::scaled(0.1)
    }
}

impl DataConfig {
    /// Reference split sizes scaled by `factor` (each class rounded independently)
    /// plus [`DEFAULT_OOD_PER_TASK`] balanced pairwise examples per pairwise task.
    pub fn scaled(factor: f64) -> Self {
        let round = |n: usize| (n as f64 * factor).round() as usize;
        let mut tasks = Vec::new();
        for (task, splits) in REFERENCE_COUNTS {
            for (split, (_, neg, pos)) in [Split::Train, Split::Val, Split::Test]
                .into_iter()
                .zip(splits)
            {
                tasks.push(TaskSplitSpec {
                    task,
                    split,
                    counts: ClassCounts {
                        negative: round(neg),
                        positive: round(pos),
                    },
                });
            }
        }
        for task in TaskKind::PAIRWISE {
            tasks.push(TaskSplitSpec {
                task,
                split: Split::Ood,
                counts: ClassCounts {
                    negative: DEFAULT_OOD_PER_TASK / 2,
                    positive: DEFAULT_OOD_PER_TASK - DEFAULT_OOD_PER_TASK / 2,
                },
            });
        }
        Self {
            scene: SceneConfig::default(),
            quality_threshold: 2,
            claim_any_prob: 0.25,
            claim_present_prob: 0.5,
            pair_tie_max_fraction: 0.05,
            max_draws_per_example: 1000,
            tasks,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        for (name, p) in [
            ("claim_any_prob", self.claim_any_prob),
            ("claim_present_prob", self.claim_present_prob),
            ("pair_tie_max_fraction", self.pair_tie_max_fraction),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {p}")));
            }
        }
        if self.claim_any_prob >= 1.0 {
            return Err(Error::Config("claim_any_prob must be below 1".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for spec in &self.tasks {
            if !spec.split.admits(spec.task) {
                return Err(Error::Config(format!(
                    "task {} cannot appear in split {}",
                    spec.task, spec.split
                )));
            }
            if !seen.insert((spec.task, spec.split)) {
                return Err(Error::Config(format!(
                    "duplicate entry for {} / {}",
                    spec.task, spec.split
                )));
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON serialization.
    pub fn hash(&self) -> String {
        sha256_hex(
            serde_json::to_string(self)
                .expect("config serializes")
                .as_bytes(),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub task: TaskKind,
    pub split: Split,
    pub count: usize,
    pub negative_label: Label,
    pub negative: usize,
    pub positive_label: Label,
    pub positive: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub seed: u64,
    pub config_hash: String,
    pub quality_threshold: u32,
    /// Split name to JSONL file name (relative to the manifest).
    pub files: BTreeMap<Split, String>,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn hash(&self) -> String {
        sha256_hex(
            serde_json::to_string(self)
                .expect("manifest serializes")
                .as_bytes(),
        )
    }

    pub fn entry(&self, task: TaskKind, split: Split) -> Option<&ManifestEntry> {
        self.entries
            .iter()
            .find(|e| e.task == task && e.split == split)
    }

    pub fn count(&self, split: Split) -> usize {
        self.entries
            .iter()
            .filter(|e| e.split == split)
            .map(|e| e.count)
            .sum()
    }
}

/// A generated or loaded dataset: manifest plus every split's examples.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub splits: BTreeMap<Split, Vec<Example>>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> &[Example] {
        self.splits.get(&split).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn tasks_in(&self, split: Split) -> Vec<TaskKind> {
        let mut tasks: Vec<TaskKind> = self.split(split).iter().map(|e| e.task).collect();
        tasks.sort();
        tasks.dedup();
        tasks
    }

    /// Re-derives every gold label and checks the manifest counts.
    pub fn verify(&self) -> Result<()> {
        for (split, examples) in &self.splits {
            for ex in examples {
                if ex.split != *split {
                    return Err(Error::Contract(format!(
                        "{} stored under split {split}",
                        ex.id
                    )));
                }
                ex.validate(self.manifest.quality_threshold)?;
            }
        }
        for entry in &self.manifest.entries {
            let mut neg = 0;
            let mut pos = 0;
            for ex in self
                .split(entry.split)
                .iter()
                .filter(|e| e.task == entry.task)
            {
                if ex.gold == entry.negative_label {
                    neg += 1;
                } else {
                    pos += 1;
                }
            }
            if (neg, pos) != (entry.negative, entry.positive) || neg + pos != entry.count {
                return Err(Error::Contract(format!(
                    "manifest {} / {} says {} ({}/{}), data has ({neg}/{pos})",
                    entry.task, entry.split, entry.count, entry.negative, entry.positive
                )));
            }
        }
        let listed: usize = self.manifest.entries.iter().map(|e| e.count).sum();
        let stored: usize = self.splits.values().map(Vec::len).sum();
        if listed != stored {
            return Err(Error::Contract(format!(
                "manifest lists {listed} examples, splits hold {stored}"
            )));
        }
        Ok(())
    }

    /// Writes `<split>.jsonl` files and `manifest.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        for (split, file) in &self.manifest.files {
            let mut w = BufWriter::new(fs::File::create(dir.join(file))?);
            for ex in self.split(*split) {
                serde_json::to_writer(&mut w, ex)?;
                w.write_all(b"\n")?;
            }
            w.flush()?;
        }
        let mut manifest = serde_json::to_string_pretty(&self.manifest)?;
        manifest.push('\n');
        fs::write(dir.join(MANIFEST_FILE), manifest)?;
        Ok(())
    }

    /// Loads a dataset directory written by [`Dataset::write`] and verifies it.
    pub fn load(dir: &Path) -> Result<Self> {
        let manifest: DatasetManifest =
            serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST_FILE))?)?;
        let mut splits = BTreeMap::new();
        for (split, file) in &manifest.files {
            let reader = BufReader::new(fs::File::open(dir.join(file))?);
            let mut examples = Vec::new();
            for line in reader.lines() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                examples.push(parse_example_line(&line)?);
            }
            splits.insert(*split, examples);
        }
        let ds = Self { manifest, splits };
        ds.verify()?;
        Ok(ds)
    }
}

pub const MANIFEST_FILE: &str = "manifest.json";

/// Parses one JSONL record.
pub fn parse_example_line(line: &str) -> Result<Example> {
    Ok(serde_json::from_str(line)?)
}

fn draw_claim(rng: &mut Rng, config: &DataConfig, force_present: bool) -> Claim {
    loop {
        let shape =
            (rng.gen::<f64>() >= config.claim_any_prob).then(|| Shape::ALL[rng.gen_range(0..3)]);
        let color =
            (rng.gen::<f64>() >= config.claim_any_prob).then(|| Color::ALL[rng.gen_range(0..3)]);
        if shape.is_none() && color.is_none() {
            continue;
        }
        let quantifier = if force_present || rng.gen::<f64>() < config.claim_present_prob {
            Quantifier::Present
        } else {
            Quantifier::Absent
        };
        return Claim {
            shape,
            color,
            quantifier,
        };
    }
}

fn draw_candidate(
    rng: &mut Rng,
    config: &DataConfig,
    task: TaskKind,
) -> Result<(Option<Claim>, Vec<super::scene::Scene>)> {
    let claim = task
        .has_claim()
        .then(|| draw_claim(rng, config, task.is_pairwise()));
    let scenes = (0..task.arity())
        .map(|_| generate_scene(rng, &config.scene))
        .collect::<Result<Vec<_>>>()?;
    Ok((claim, scenes))
}

/// One unbalanced example of `task`, drawn straight from the scene and claim priors.
pub fn random_example(
    rng: &mut Rng,
    config: &DataConfig,
    task: TaskKind,
    id: String,
) -> Result<Example> {
    let (claim, scenes) = draw_candidate(rng, config, task)?;
    let gold = ground_truth(task, claim.as_ref(), &scenes, config.quality_threshold)?;
    Ok(Example {
        id,
        task,
        claim,
        scenes,
        gold,
        split: if task.is_pairwise() {
            Split::Ood
        } else {
            Split::Train
        },
    })
}

fn generate_task_split(
    config: &DataConfig,
    seed: u64,
    index: usize,
    spec: &TaskSplitSpec,
) -> Result<Vec<Example>> {
    let mut rng = substream(seed, &[0xDA7A, index as u64]);
    let [neg_label, _] = spec.task.labels();
    let want = spec.counts;
    let total = want.total();
    let max_ties = (config.pair_tie_max_fraction * total as f64).floor() as usize;
    let budget = config.max_draws_per_example.saturating_mul(total.max(1));
    let (mut neg, mut pos, mut ties) = (0usize, 0usize, 0usize);
    let mut out = Vec::with_capacity(total);
    let mut draws = 0usize;
    while out.len() < total {
        if draws == budget {
            return Err(Error::Generation(format!(
                "{} / {}: reached {neg}/{pos} of {}/{} after {draws} draws",
                spec.task, spec.split, want.negative, want.positive
            )));
        }
        draws += 1;
        let (claim, scenes) = draw_candidate(&mut rng, config, spec.task)?;
        let tie = is_pair_tie(spec.task, claim.as_ref(), &scenes);
        if tie && ties >= max_ties {
            continue;
        }
        let gold = ground_truth(spec.task, claim.as_ref(), &scenes, config.quality_threshold)?;
        let slot = if gold == neg_label {
            &mut neg
        } else {
            &mut pos
        };
        let cap = if gold == neg_label {
            want.negative
        } else {
            want.positive
        };
        if *slot >= cap {
            continue;
        }
        *slot += 1;
        ties += usize::from(tie);
        out.push(Example {
            id: format!("{}-{}-{:05}", spec.task.slug(), spec.split, out.len()),
            task: spec.task,
            claim,
            scenes,
            gold,
            split: spec.split,
        });
    }
    Ok(out)
}

/// Generates every configured task/split in memory.
pub fn generate_dataset(config: &DataConfig, seed: u64) -> Result<Dataset> {
    config.validate()?;
    let mut splits: BTreeMap<Split, Vec<Example>> = BTreeMap::new();
    let mut entries = Vec::new();
    for (index, spec) in config.tasks.iter().enumerate() {
        let examples = generate_task_split(config, seed, index, spec)?;
        let [negative_label, positive_label] = spec.task.labels();
        entries.push(ManifestEntry {
            task: spec.task,
            split: spec.split,
            count: examples.len(),
            negative_label,
            negative: spec.counts.negative,
            positive_label,
            positive: spec.counts.positive,
        });
        splits.entry(spec.split).or_default().extend(examples);
    }
    let files = splits
        .keys()
        .map(|s| (*s, format!("{}.jsonl", s.name())))
        .collect();
    Ok(Dataset {
        manifest: DatasetManifest {
            seed,
            config_hash: config.hash(),
            quality_threshold: config.quality_threshold,
            files,
            entries,
        },
        splits,
    })
}

/// Generates the dataset and writes it to `dir`, returning the manifest.
pub fn build_dataset(config: &DataConfig, seed: u64, dir: &Path) -> Result<DatasetManifest> {
    let ds = generate_dataset(config, seed)?;
    ds.write(dir)?;
    Ok(ds.manifest)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplingStrategy {
    /// Every example equally likely, so tasks are drawn in proportion to their size.
    Proportional,
    /// Pick a task uniformly, then an example within it.
    UniformTask,
}

/// Draws `batch_size` examples with replacement from `split`, optionally restricted
/// to a task subset.
pub fn sample_batch<'a>(
    dataset: &'a Dataset,
    split: Split,
    tasks: Option<&[TaskKind]>,
    strategy: SamplingStrategy,
    batch_size: usize,
    rng: &mut Rng,
) -> Result<Vec<&'a Example>> {
    let pool: Vec<&Example> = dataset
        .split(split)
        .iter()
        .filter(|e| tasks.is_none_or(|t| t.contains(&e.task)))
        .collect();
    if pool.is_empty() {
        return Err(Error::Contract(format!(
            "split {split} has no eligible examples"
        )));
    }
    Ok(match strategy {
        SamplingStrategy::Proportional => (0..batch_size)
            .map(|_| pool[rng.gen_range(0..pool.len())])
            .collect(),
        SamplingStrategy::UniformTask => {
            let mut by_task: BTreeMap<TaskKind, Vec<&Example>> = BTreeMap::new();
            for e in pool {
                by_task.entry(e.task).or_default().push(e);
            }
            let groups: Vec<Vec<&Example>> = by_task.into_values().collect();
            (0..batch_size)
                .map(|_| {
                    let g = &groups[rng.gen_range(0..groups.len())];
                    g[rng.gen_range(0..g.len())]
                })
                .collect()
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> DataConfig {
        DataConfig {
            tasks: vec![
                TaskSplitSpec {
                    task: TaskKind::SafetyPoint,
                    split: Split::Train,
                    counts: ClassCounts {
                        negative: 5,
                        positive: 5,
                    },
                },
                TaskSplitSpec {
                    task: TaskKind::SafetyPair,
                    split: Split::Ood,
                    counts: ClassCounts {
                        negative: 20,
                        positive: 20,
                    },
                },
            ],
            ..DataConfig::default()
        }
    }

    #[test]
    fn default_scaling_matches_reference_tenth() {
        let c = DataConfig::default();
        let find = |t, s| {
            c.tasks
                .iter()
                .find(|x| x.task == t && x.split == s)
                .unwrap()
                .counts
        };
        let nat = find(TaskKind::QualityPoint, Split::Train);
        assert_eq!((nat.total(), nat.negative, nat.positive), (484, 244, 240));
        let safety = find(TaskKind::SafetyPoint, Split::Test);
        assert_eq!((safety.negative, safety.positive), (78, 126));
        let ood = find(TaskKind::AlignPair, Split::Ood);
        assert_eq!(ood.total(), 200);
    }

    #[test]
    fn rejection_sampling_hits_requested_counts() {
        let ds = generate_dataset(&small_config(), 3).unwrap();
        let e = ds
            .manifest
            .entry(TaskKind::SafetyPoint, Split::Train)
            .unwrap();
        assert_eq!((e.count, e.negative, e.positive), (10, 5, 5));
        ds.verify().unwrap();
        let ties = ds
            .split(Split::Ood)
            .iter()
            .filter(|e| is_pair_tie(e.task, e.claim.as_ref(), &e.scenes))
            .count();
        assert!(ties <= 2, "ties {ties}");
    }

    #[test]
    fn unreachable_ratio_is_generation_error() {
        let mut c = small_config();
        c.scene.hazard_prob = 0.0;
        c.max_draws_per_example = 50;
        assert!(matches!(generate_dataset(&c, 0), Err(Error::Generation(_))));
    }

    #[test]
    fn pointwise_in_ood_rejected() {
        let mut c = small_config();
        c.tasks[0].split = Split::Ood;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn write_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = build_dataset(&small_config(), 11, dir.path()).unwrap();
        let ds = Dataset::load(dir.path()).unwrap();
        assert_eq!(ds.manifest, m);
        assert_eq!(ds, generate_dataset(&small_config(), 11).unwrap());
    }

    #[test]
    fn batch_edge_cases() {
        let ds = generate_dataset(&small_config(), 1).unwrap();
        let mut rng = substream(0, &[]);
        let b = sample_batch(
            &ds,
            Split::Train,
            None,
            SamplingStrategy::Proportional,
            0,
            &mut rng,
        )
        .unwrap();
        assert!(b.is_empty());
        let b = sample_batch(
            &ds,
            Split::Train,
            None,
            SamplingStrategy::Proportional,
            50,
            &mut rng,
        )
        .unwrap();
        assert!(b.iter().all(|e| e.task == TaskKind::SafetyPoint));
        assert!(sample_batch(
            &ds,
            Split::Val,
            None,
            SamplingStrategy::UniformTask,
            3,
            &mut rng
        )
        .is_err());
    }
}
