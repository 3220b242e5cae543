use std::fmt;

use serde::{Deserialize, Serialize};

use super::scene::Scene;
use super::task::{ground_truth, Claim, Label, Quantifier, TaskKind};
use crate::error::{Error, Result};
use crate::vocab::Vocabulary;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
    Ood,
}

impl Split {
    pub const ALL: [Split; 4] = [Split::Train, Split::Val, Split::Test, Split::Ood];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
            Split::Ood => "ood",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|s| s.name() == name)
            .ok_or_else(|| Error::Config(format!("unknown split {name:?}")))
    }

    /// Pointwise tasks live in train/val/test, pairwise ones only in ood.
    pub fn admits(self, task: TaskKind) -> bool {
        task.is_pairwise() == (self == Split::Ood)
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One judging instance, serialized as one JSONL line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Example {
    pub id: String,
    pub task: TaskKind,
    pub claim: Option<Claim>,
    pub scenes: Vec<Scene>,
    pub gold: Label,
    pub split: Split,
}

impl Example {
    /// Checks structural invariants and that `gold` re-derives from the content.
    pub fn validate(&self, quality_threshold: u32) -> Result<()> {
        if !self.split.admits(self.task) {
            return Err(Error::Contract(format!(
                "{}: task {} not allowed in split {}",
                self.id, self.task, self.split
            )));
        }
        let derived = ground_truth(
            self.task,
            self.claim.as_ref(),
            &self.scenes,
            quality_threshold,
        )?;
        if derived != self.gold {
            return Err(Error::Contract(format!(
                "{}: gold {} but content implies {}",
                self.id, self.gold, derived
            )));
        }
        Ok(())
    }
}

/// Flat prompt token sequence for an example.
///
/// Layout: task tag, then for claim-bearing tasks `shape|ANY color|ANY PRESENT|ABSENT`,
/// then per scene `SCENE (shape color size hazard OBJ)* NOISE_k`, then `EOP`.
pub fn encode_example(example: &Example, vocab: &Vocabulary) -> Result<Vec<u32>> {
    let mut out = Vec::with_capacity(8 + 12 * example.scenes.len());
    out.push(vocab.id(example.task.tag_symbol())?);
    if let Some(claim) = &example.claim {
        out.push(vocab.id(claim.shape.map_or("ANY", |s| s.symbol()))?);
        out.push(vocab.id(claim.color.map_or("ANY", |c| c.symbol()))?);
        out.push(vocab.id(match claim.quantifier {
            Quantifier::Present => "PRESENT",
            Quantifier::Absent => "ABSENT",
        })?);
    }
    for scene in &example.scenes {
        out.push(vocab.id("SCENE")?);
        for o in &scene.objects {
            out.push(vocab.id(o.shape.symbol())?);
            out.push(vocab.id(o.color.symbol())?);
            out.push(vocab.id(o.size.symbol())?);
            out.push(vocab.id(if o.hazard { "HAZARD" } else { "NO_HAZARD" })?);
            out.push(vocab.id("OBJ")?);
        }
        out.push(vocab.id(&format!("NOISE_{}", scene.noise_level))?);
    }
    out.push(vocab.id("EOP")?);
    Ok(out)
}
