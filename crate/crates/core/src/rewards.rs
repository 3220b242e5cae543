//! Verdict grammar, verdict extraction and the composite format + accuracy reward.
//!
//! Reasoning form (the JSON label object lives inside the box):
//!
//! ```text
//! THINK_OPEN  t*  THINK_CLOSE  BOX_OPEN  JSON_LABEL_KEY  <label>  BOX_CLOSE  [EOS]
//! ```
//!
//! where `t` is any non-structural token. Bare form: `<label> [EOS]`.

use serde::{Deserialize, Serialize};

use crate::data::Label;
use crate::error::{Error, Result};
use crate::vocab::{is_structural, tok};

/// Output form a policy is asked to produce.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VerdictForm {
    /// Reasoning span followed by a boxed JSON label.
    Rl,
    /// A single label token.
    Sft,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseFailure {
    None,
    NoThinkOpen,
    NoThinkClose,
    MultipleThinkBlocks,
    NoBox,
    MalformedJson,
    UnknownLabel,
    TrailingTokens,
}

impl ParseFailure {
    pub const ALL: [ParseFailure; 8] = [
        ParseFailure::None,
        ParseFailure::NoThinkOpen,
        ParseFailure::NoThinkClose,
        ParseFailure::MultipleThinkBlocks,
        ParseFailure::NoBox,
        ParseFailure::MalformedJson,
        ParseFailure::UnknownLabel,
        ParseFailure::TrailingTokens,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ParseFailure::None => "none",
            ParseFailure::NoThinkOpen => "no_think_open",
            ParseFailure::NoThinkClose => "no_think_close",
            ParseFailure::MultipleThinkBlocks => "multiple_think_blocks",
            ParseFailure::NoBox => "no_box",
            ParseFailure::MalformedJson => "malformed_json",
            ParseFailure::UnknownLabel => "unknown_label",
            ParseFailure::TrailingTokens => "trailing_tokens",
        }
    }
}

/// Result of parsing one output sequence. `label` is present iff `failure` is `None`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedVerdict {
    pub form: Option<VerdictForm>,
    /// Half-open token range strictly between the thinking tags.
    pub thinking_span: Option<(usize, usize)>,
    pub label: Option<Label>,
    pub failure: ParseFailure,
}

impl ParsedVerdict {
    fn fail(failure: ParseFailure) -> Self {
        Self {
            form: None,
            thinking_span: None,
            label: None,
            failure,
        }
    }

    /// Re-interprets the verdict under a required form; a valid verdict of the
    /// other form becomes the failure that form's grammar hits first.
    pub fn require(self, form: VerdictForm) -> Self {
        match (self.form, form) {
            (Some(VerdictForm::Sft), VerdictForm::Rl) => Self::fail(ParseFailure::NoThinkOpen),
            (Some(VerdictForm::Rl), VerdictForm::Sft) => Self::fail(ParseFailure::UnknownLabel),
            _ => self,
        }
    }
}

/// Parses `tokens` against both grammars. Total: every input yields one verdict,
/// and failures report the first grammar rule violated.
pub fn parse_output(tokens: &[u32]) -> ParsedVerdict {
    use ParseFailure as F;
    let body = match tokens.split_last() {
        Some((&tok::EOS, rest)) => rest,
        _ => tokens,
    };
    if let [only] = body {
        if let Some(label) = Label::from_token(*only) {
            return ParsedVerdict {
                form: Some(VerdictForm::Sft),
                thinking_span: None,
                label: Some(label),
                failure: F::None,
            };
        }
    }
    if body.first() != Some(&tok::THINK_OPEN) {
        return ParsedVerdict::fail(F::NoThinkOpen);
    }
    let mut close = None;
    for (i, &t) in body.iter().enumerate().skip(1) {
        match t {
            tok::THINK_CLOSE => {
                close = Some(i);
                break;
            }
            tok::THINK_OPEN => return ParsedVerdict::fail(F::MultipleThinkBlocks),
            t if is_structural(t) => return ParsedVerdict::fail(F::NoThinkClose),
            _ => {}
        }
    }
    let Some(close) = close else {
        return ParsedVerdict::fail(F::NoThinkClose);
    };
    let rest = &body[close + 1..];
    if rest
        .iter()
        .any(|&t| t == tok::THINK_OPEN || t == tok::THINK_CLOSE)
    {
        return ParsedVerdict::fail(F::MultipleThinkBlocks);
    }
    if rest.first() != Some(&tok::BOX_OPEN) {
        return ParsedVerdict::fail(F::NoBox);
    }
    if rest.get(1) != Some(&tok::JSON_LABEL_KEY) {
        return ParsedVerdict::fail(F::MalformedJson);
    }
    let label = match rest.get(2) {
        None => return ParsedVerdict::fail(F::MalformedJson),
        Some(&t) => match Label::from_token(t) {
            Some(l) => l,
            None if t == tok::BOX_CLOSE => return ParsedVerdict::fail(F::MalformedJson),
            None => return ParsedVerdict::fail(F::UnknownLabel),
        },
    };
    if rest.get(3) != Some(&tok::BOX_CLOSE) {
        return ParsedVerdict::fail(F::MalformedJson);
    }
    if rest.len() > 4 {
        return ParsedVerdict::fail(F::TrailingTokens);
    }
    ParsedVerdict {
        form: Some(VerdictForm::Rl),
        thinking_span: Some((1, close)),
        label: Some(label),
        failure: F::None,
    }
}

/// `1.0` iff the verdict is well formed and of the required form.
pub fn format_reward(parsed: &ParsedVerdict, required: VerdictForm) -> f64 {
    if parsed.failure == ParseFailure::None && parsed.form == Some(required) {
        1.0
    } else {
        0.0
    }
}

/// `1.0` iff a label was extracted and equals `gold`.
pub fn accuracy_reward(parsed: &ParsedVerdict, gold: Label) -> f64 {
    if parsed.label == Some(gold) {
        1.0
    } else {
        0.0
    }
}

/// `(1 - alpha) * r_acc + alpha * r_for`.
pub fn total_reward(r_acc: f64, r_for: f64, alpha: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Contract(format!("alpha {alpha} outside [0, 1]")));
    }
    if r_acc == r_for {
        // (1 - alpha) * x + alpha * x can round away from x.
        return Ok(r_acc);
    }
    Ok((1.0 - alpha) * r_acc + alpha * r_for)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub r_acc: f64,
    pub r_for: f64,
    pub alpha: f64,
    pub r_total: f64,
}

/// Parses `tokens` under `form` and scores them against `gold`.
pub fn score_output(
    tokens: &[u32],
    gold: Label,
    form: VerdictForm,
    alpha: f64,
) -> Result<(ParsedVerdict, RewardBreakdown)> {
    let parsed = parse_output(tokens).require(form);
    let r_acc = accuracy_reward(&parsed, gold);
    let r_for = format_reward(&parsed, form);
    let r_total = total_reward(r_acc, r_for, alpha)?;
    Ok((
        parsed,
        RewardBreakdown {
            r_acc,
            r_for,
            alpha,
            r_total,
        },
    ))
}

/// One audit row of the reward-trace log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardTraceRow {
    pub example_id: String,
    pub output_tokens: Vec<u32>,
    pub failure: ParseFailure,
    pub r_acc: f64,
    pub r_for: f64,
    pub r_total: f64,
}
