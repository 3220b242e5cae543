//! Token vocabulary shared by the prompt encoder, the policy and the verdict parser.
//!
//! The first [`FIXED_SYMBOLS`] entries have a stable layout so that the rest of the
//! crate can refer to them through the constants in [`tok`]. Free "thinking" tokens
//! are appended after them.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Stable ids of the fixed part of the vocabulary.
pub mod tok {
    pub const PAD: u32 = 0;
    pub const EOP: u32 = 1;
    pub const EOS: u32 = 2;

    pub const TASK_ALIGN: u32 = 3;
    pub const TASK_SAFETY: u32 = 4;
    pub const TASK_QUALITY: u32 = 5;
    pub const TASK_ALIGN_PAIR: u32 = 6;
    pub const TASK_SAFETY_PAIR: u32 = 7;

    pub const SCENE: u32 = 8;
    pub const OBJ: u32 = 9;

    pub const CIRCLE: u32 = 10;
    pub const SQUARE: u32 = 11;
    pub const TRIANGLE: u32 = 12;
    pub const RED: u32 = 13;
    pub const GREEN: u32 = 14;
    pub const BLUE: u32 = 15;
    pub const SMALL: u32 = 16;
    pub const LARGE: u32 = 17;
    pub const HAZARD: u32 = 18;
    pub const NO_HAZARD: u32 = 19;

    pub const ANY: u32 = 20;
    pub const PRESENT: u32 = 21;
    pub const ABSENT: u32 = 22;

    /// `NOISE_0` .. `NOISE_5` occupy consecutive ids starting here.
    pub const NOISE_0: u32 = 23;
    pub const NOISE_LEVELS: u32 = 6;

    pub const THINK_OPEN: u32 = 29;
    pub const THINK_CLOSE: u32 = 30;
    pub const BOX_OPEN: u32 = 31;
    pub const BOX_CLOSE: u32 = 32;
    pub const JSON_LABEL_KEY: u32 = 33;

    pub const YES: u32 = 34;
    pub const NO: u32 = 35;
    pub const SAFE: u32 = 36;
    pub const UNSAFE: u32 = 37;
    pub const FIRST: u32 = 38;
    pub const SECOND: u32 = 39;

    /// First free thinking token.
    pub const THINK_0: u32 = 40;
}

const FIXED: [&str; 40] = [
    "PAD",
    "EOP",
    "EOS",
    "TASK_ALIGN",
    "TASK_SAFETY",
    "TASK_QUALITY",
    "TASK_ALIGN_PAIR",
    "TASK_SAFETY_PAIR",
    "SCENE",
    "OBJ",
    "CIRCLE",
    "SQUARE",
    "TRIANGLE",
    "RED",
    "GREEN",
    "BLUE",
    "SMALL",
    "LARGE",
    "HAZARD",
    "NO_HAZARD",
    "ANY",
    "PRESENT",
    "ABSENT",
    "NOISE_0",
    "NOISE_1",
    "NOISE_2",
    "NOISE_3",
    "NOISE_4",
    "NOISE_5",
    "THINK_OPEN",
    "THINK_CLOSE",
    "BOX_OPEN",
    "BOX_CLOSE",
    "JSON_LABEL_KEY",
    "YES",
    "NO",
    "SAFE",
    "UNSAFE",
    "FIRST",
    "SECOND",
];

/// Number of symbols with a fixed id.
pub const FIXED_SYMBOLS: usize = FIXED.len();

/// Default number of free thinking tokens (gives a 48-symbol vocabulary).
pub const DEFAULT_THINKING_TOKENS: usize = 8;

/// Ordered, immutable symbol table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    symbols: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, u32>,
}

impl Vocabulary {
    /// The fixed symbols followed by `thinking_tokens` free tokens `THINK_0..`.
    pub fn with_thinking_tokens(thinking_tokens: usize) -> Self {
        let symbols = FIXED
            .iter()
            .map(|s| s.to_string())
            .chain((0..thinking_tokens).map(|i| format!("THINK_{i}")))
            .collect();
        Self::from_symbols(symbols).expect("built-in vocabulary is well formed")
    }

    /// Validates that `symbols` starts with the fixed layout and has no duplicates.
    pub fn from_symbols(symbols: Vec<String>) -> Result<Self> {
        if symbols.len() < FIXED_SYMBOLS {
            return Err(Error::Format(format!(
                "vocabulary has {} symbols, at least {FIXED_SYMBOLS} required",
                symbols.len()
            )));
        }
        for (i, expected) in FIXED.iter().enumerate() {
            if symbols[i] != *expected {
                return Err(Error::Format(format!(
                    "vocabulary slot {i} is {:?}, expected {expected:?}",
                    symbols[i]
                )));
            }
        }
        let mut index = HashMap::with_capacity(symbols.len());
        for (i, s) in symbols.iter().enumerate() {
            if index.insert(s.clone(), i as u32).is_some() {
                return Err(Error::Format(format!("duplicate vocabulary symbol {s:?}")));
            }
        }
        Ok(Self { symbols, index })
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    pub fn id(&self, symbol: &str) -> Result<u32> {
        self.index
            .get(symbol)
            .copied()
            .ok_or_else(|| Error::Encoding(format!("symbol {symbol:?} not in vocabulary")))
    }

    pub fn symbol(&self, id: u32) -> Result<&str> {
        self.symbols
            .get(id as usize)
            .map(String::as_str)
            .ok_or_else(|| Error::Encoding(format!("token id {id} outside vocabulary")))
    }

    /// Ids of the free thinking tokens.
    pub fn thinking_ids(&self) -> std::ops::Range<u32> {
        tok::THINK_0..self.symbols.len() as u32
    }

    /// SHA-256 over the newline-joined symbol list, hex encoded.
    pub fn hash(&self) -> String {
        let mut hasher = Sha256::new();
        for s in &self.symbols {
            hasher.update(s.as_bytes());
            hasher.update(b"\n");
        }
        hex::encode(hasher.finalize())
    }
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::with_thinking_tokens(DEFAULT_THINKING_TOKENS)
    }
}

impl TryFrom<Vec<String>> for Vocabulary {
    type Error = Error;

    fn try_from(symbols: Vec<String>) -> Result<Self> {
        Self::from_symbols(symbols)
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.symbols
    }
}

/// Tokens that delimit the verdict grammar; they may not appear inside a thinking span.
pub fn is_structural(id: u32) -> bool {
    matches!(
        id,
        tok::PAD
            | tok::EOP
            | tok::EOS
            | tok::THINK_OPEN
            | tok::THINK_CLOSE
            | tok::BOX_OPEN
            | tok::BOX_CLOSE
            | tok::JSON_LABEL_KEY
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_has_48_symbols() {
        let v = Vocabulary::default();
        assert_eq!(v.len(), 48);
        assert_eq!(v.id("THINK_7").unwrap(), 47);
        assert_eq!(v.id("SECOND").unwrap(), tok::SECOND);
        assert_eq!(v.id("NOISE_5").unwrap(), tok::NOISE_0 + 5);
        assert_eq!(v.id("THINK_OPEN").unwrap(), tok::THINK_OPEN);
    }

    #[test]
    fn rejects_duplicates_and_bad_layout() {
        let mut s: Vec<String> = Vocabulary::default().symbols().to_vec();
        s.push("THINK_0".into());
        assert!(Vocabulary::from_symbols(s).is_err());
        let mut s: Vec<String> = Vocabulary::default().symbols().to_vec();
        s.swap(3, 4);
        assert!(Vocabulary::from_symbols(s).is_err());
    }

    #[test]
    fn unknown_symbol_is_encoding_error() {
        let v = Vocabulary::default();
        assert!(matches!(v.id("NOISE_6"), Err(Error::Encoding(_))));
        assert!(v.symbol(48).is_err());
    }

    #[test]
    fn serde_round_trip_keeps_index() {
        let v = Vocabulary::default();
        let s = serde_json::to_string(&v).unwrap();
        let back: Vocabulary = serde_json::from_str(&s).unwrap();
        assert_eq!(back.id("BLUE").unwrap(), tok::BLUE);
        assert_eq!(back.hash(), v.hash());
    }
}
