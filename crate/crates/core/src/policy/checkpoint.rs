use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::{Dims, PolicyParameters};
use crate::error::{Error, Result};
use crate::vocab::Vocabulary;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

/// On-disk policy checkpoint. Parameters are decimal strings so that every `f64`
/// round-trips exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format_version: u32,
    pub dims: Dims,
    pub vocabulary: Vocabulary,
    pub flat_params: Vec<String>,
    pub rng_note: String,
}

impl Checkpoint {
    pub fn new(
        params: &PolicyParameters,
        vocabulary: &Vocabulary,
        rng_note: impl Into<String>,
    ) -> Self {
        Self {
            format_version: CHECKPOINT_FORMAT_VERSION,
            dims: params.dims(),
            vocabulary: vocabulary.clone(),
            flat_params: params.flat().iter().map(|x| format!("{x:?}")).collect(),
            rng_note: rng_note.into(),
        }
    }

    /// Parses the parameters, validating version, dims and (optionally) that the
    /// stored vocabulary hashes to `expected`.
    pub fn params(&self, expected: Option<&Vocabulary>) -> Result<PolicyParameters> {
        if self.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported checkpoint version {}",
                self.format_version
            )));
        }
        if self.dims.vocab != self.vocabulary.len() {
            return Err(Error::Format(format!(
                "dims declare {} symbols, vocabulary has {}",
                self.dims.vocab,
                self.vocabulary.len()
            )));
        }
        if let Some(v) = expected {
            if v.hash() != self.vocabulary.hash() {
                return Err(Error::Format("checkpoint vocabulary hash mismatch".into()));
            }
        }
        let flat = self
            .flat_params
            .iter()
            .enumerate()
            .map(|(i, s)| {
                s.parse::<f64>()
                    .map_err(|e| Error::Format(format!("parameter {i} ({s:?}): {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        PolicyParameters::from_flat(self.dims, flat).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string(self).expect("checkpoint serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, self.to_json().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}
