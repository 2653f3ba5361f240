//! Model text input assembly and the joint output grammar.
//!
//! Input grammar (byte-exact):
//!
//! ```text
//! input    = "dialog_history:" history [" retrieved_entities: " names]
//! history  = " none" | { " " speaker ": " text }
//! names    = name { "; " name }
//! ```
//!
//! With no retrieved entities the section is omitted entirely, so a plain
//! input is always an exact prefix of its retrieval-augmented counterpart.
//!
//! Output grammar:
//!
//! ```text
//! output = "[ASR] " transcript " [DST] " state
//! state  = "none" | slot { "; " slot }
//! slot   = domain "-" slot_name "=" value
//! ```
//!
//! Parsing is total: malformed model output degrades to warnings, never to
//! errors, because generated sequences cannot be trusted to follow the
//! grammar.

use serde::{Deserialize, Serialize};

use crate::data::{DialogState, EntityPool, SlotValue, Speaker};
use crate::error::{Error, Result};
use crate::retriever::RankedEntity;

const ASR_TAG: &str = "[ASR]";
const DST_TAG: &str = "[DST]";

/// A fully assembled model text input.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AssembledInput {
    pub text: String,
    pub history_turn_count: usize,
    pub entity_count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseWarning {
    MissingAsrTag,
    MissingDstTag,
    MalformedSlot,
}

/// The parsed form of a predictor's raw output sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedOutput {
    pub transcript: String,
    pub state: DialogState,
    pub warnings: Vec<ParseWarning>,
}

/// One history entry as the model sees it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HistoryTurn {
    pub speaker: Speaker,
    pub text: String,
}

impl HistoryTurn {
    pub fn new(speaker: Speaker, text: impl Into<String>) -> Self {
        HistoryTurn {
            speaker,
            text: text.into(),
        }
    }
}

/// Canonical serialization of a dialog state: slots sorted by (domain,
/// slot), `domain-slot=value` joined by `"; "`; the empty state is "none".
pub fn format_dialog_state(state: &DialogState) -> String {
    if state.is_empty() {
        return "none".to_string();
    }
    state
        .iter()
        .map(|(d, s, v)| format!("{d}-{s}={v}"))
        .collect::<Vec<_>>()
        .join("; ")
}

/// The joint output sequence for a transcript and state.
pub fn format_model_output(transcript: &str, state: &DialogState) -> String {
    format!("{ASR_TAG} {transcript} {DST_TAG} {}", format_dialog_state(state))
}

fn parse_state_text(text: &str, warnings: &mut Vec<ParseWarning>) -> DialogState {
    let mut state = DialogState::empty();
    let text = text.trim();
    if text.is_empty() || text == "none" {
        return state;
    }
    for item in text.split(';') {
        let item = item.trim();
        if item.is_empty() {
            continue;
        }
        let parsed = (|| {
            let eq = item.find('=')?;
            let (key, value) = (&item[..eq], &item[eq + 1..]);
            let dash = key.find('-')?;
            let (domain, slot) = (&key[..dash], &key[dash + 1..]);
            SlotValue::new(domain.trim(), slot.trim(), value.trim()).ok()
        })();
        match parsed {
            // later items overwrite earlier ones for the same key
            Some(sv) => state.set(sv),
            None => warnings.push(ParseWarning::MalformedSlot),
        }
    }
    state
}

/// Parses a raw output sequence. Total: every string maps to a
/// [`ParsedOutput`], with degradation reported through warnings.
pub fn parse_model_output(raw: &str) -> ParsedOutput {
    let mut warnings = Vec::new();
    let (transcript, state_text) = match raw.find(ASR_TAG) {
        Some(asr_pos) => {
            let rest = &raw[asr_pos + ASR_TAG.len()..];
            match rest.find(DST_TAG) {
                Some(dst_pos) => (
                    rest[..dst_pos].trim().to_string(),
                    Some(&rest[dst_pos + DST_TAG.len()..]),
                ),
                None => {
                    warnings.push(ParseWarning::MissingDstTag);
                    (rest.trim().to_string(), None)
                }
            }
        }
        None => {
            warnings.push(ParseWarning::MissingAsrTag);
            match raw.find(DST_TAG) {
                Some(dst_pos) => (String::new(), Some(&raw[dst_pos + DST_TAG.len()..])),
                None => {
                    warnings.push(ParseWarning::MissingDstTag);
                    (String::new(), None)
                }
            }
        }
    };
    let state = match state_text {
        Some(text) => parse_state_text(text, &mut warnings),
        None => DialogState::empty(),
    };
    ParsedOutput {
        transcript,
        state,
        warnings,
    }
}

/// Concatenates dialog history and retrieved entities into the model input.
/// Entity names appear in ranked order. With `retrieved` empty the output
/// is exactly the baseline (history-only) input.
pub fn assemble_input(
    history: &[HistoryTurn],
    retrieved: &[RankedEntity],
    pool: &EntityPool,
) -> Result<AssembledInput> {
    let mut text = String::from("dialog_history:");
    if history.is_empty() {
        text.push_str(" none");
    } else {
        for turn in history {
            text.push(' ');
            text.push_str(turn.speaker.as_str());
            text.push_str(": ");
            text.push_str(&turn.text);
        }
    }
    if !retrieved.is_empty() {
        text.push_str(" retrieved_entities: ");
        let names = retrieved
            .iter()
            .map(|r| {
                pool.get(r.entity_id)
                    .map(|e| e.name.as_str())
                    .ok_or(Error::UnknownEntity(r.entity_id))
            })
            .collect::<Result<Vec<_>>>()?;
        text.push_str(&names.join("; "));
    }
    Ok(AssembledInput {
        text,
        history_turn_count: history.len(),
        entity_count: retrieved.len(),
    })
}

/// Appends the predicted user transcript (never the reference) and, when
/// present, the following agent turn. Value semantics: the input history is
/// left untouched.
pub fn update_history(
    history: &[HistoryTurn],
    predicted_transcript: &str,
    agent_text: Option<&str>,
) -> Vec<HistoryTurn> {
    let mut next = history.to_vec();
    next.push(HistoryTurn::new(Speaker::User, predicted_transcript));
    if let Some(agent) = agent_text {
        next.push(HistoryTurn::new(Speaker::Agent, agent));
    }
    next
}
