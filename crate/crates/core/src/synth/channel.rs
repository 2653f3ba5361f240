//! Noisy-channel text corruption standing in for recognition errors.
//!
//! Corruption applies per-character independent events to letters and
//! digits: substitution (always to a different character of the same
//! class), deletion, or insertion of a random same-class character after
//! the original. Whitespace and punctuation are never touched. Characters
//! inside designated entity spans use the three base probabilities rescaled
//! so that their sum equals the entity override rate.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Mention;
use crate::error::{Error, Result};
use crate::rng::rng_from_seed;

/// Per-character corruption probabilities plus the channel seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelConfig {
    pub p_sub: f64,
    pub p_del: f64,
    pub p_ins: f64,
    pub seed: u64,
}

impl ChannelConfig {
    /// Splits a total per-character error rate into substitution-heavy
    /// sub/del/ins probabilities (70/15/15).
    pub fn with_total_rate(rate: f64, seed: u64) -> Self {
        ChannelConfig {
            p_sub: rate * 0.70,
            p_del: rate * 0.15,
            p_ins: rate * 0.15,
            seed,
        }
    }

    pub fn total_rate(&self) -> f64 {
        self.p_sub + self.p_del + self.p_ins
    }

    pub fn validate(&self) -> Result<()> {
        for (label, p) in [("p_sub", self.p_sub), ("p_del", self.p_del), ("p_ins", self.p_ins)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Validation(format!("{label} must be in [0,1], got {p}")));
            }
        }
        if self.total_rate() > 1.0 + 1e-12 {
            return Err(Error::Validation(format!(
                "p_sub + p_del + p_ins must be <= 1, got {}",
                self.total_rate()
            )));
        }
        Ok(())
    }
}

impl Default for ChannelConfig {
    fn default() -> Self {
        // Matches the default non-entity character error rate of 2%.
        ChannelConfig::with_total_rate(0.02, 0)
    }
}

/// A character range of the input, in char offsets, half-open.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn of_mention(m: &Mention) -> Self {
        Span { start: m.start, end: m.end }
    }
}

/// One tracked span's fate after corruption.
#[derive(Debug, Clone, PartialEq)]
pub struct CorruptedSpan {
    /// The span in the original text.
    pub input: Span,
    /// The surface form the span turned into.
    pub surface: String,
    /// Where the surface sits in the corrupted output, in char offsets.
    pub output: Span,
}

#[derive(Clone, Copy)]
enum CharClass {
    Letter,
    Digit,
    Other,
}

fn class_of(c: char) -> CharClass {
    if c.is_ascii_lowercase() || c.is_ascii_uppercase() {
        CharClass::Letter
    } else if c.is_ascii_digit() {
        CharClass::Digit
    } else {
        CharClass::Other
    }
}

fn substitute(c: char, rng: &mut impl Rng) -> char {
    match class_of(c) {
        CharClass::Letter => {
            let base = if c.is_ascii_uppercase() { b'A' } else { b'a' };
            let cur = c as u8 - base;
            let pick = rng.gen_range(0..25u8);
            let next = if pick >= cur { pick + 1 } else { pick };
            (base + next) as char
        }
        CharClass::Digit => {
            let cur = c as u8 - b'0';
            let pick = rng.gen_range(0..9u8);
            let next = if pick >= cur { pick + 1 } else { pick };
            (b'0' + next) as char
        }
        CharClass::Other => c,
    }
}

fn random_of_class(class: CharClass, rng: &mut impl Rng) -> char {
    match class {
        CharClass::Letter => (b'a' + rng.gen_range(0..26u8)) as char,
        CharClass::Digit => (b'0' + rng.gen_range(0..10u8)) as char,
        CharClass::Other => unreachable!("only letters and digits are inserted"),
    }
}

fn validated_spans(spans: &[Span], n_chars: usize) -> Result<Vec<Span>> {
    let mut sorted = spans.to_vec();
    sorted.sort_by_key(|s| (s.start, s.end));
    let mut prev_end = 0usize;
    for s in &sorted {
        if s.start >= s.end || s.end > n_chars {
            return Err(Error::Validation(format!(
                "span {}..{} out of bounds (text has {n_chars} chars)",
                s.start, s.end
            )));
        }
        if s.start < prev_end {
            return Err(Error::Validation("overlapping spans".into()));
        }
        prev_end = s.end;
    }
    Ok(sorted)
}

/// Corrupts `text` through the channel, tracking what each span turned
/// into. Spans listed in `entity_spans` are corrupted at `entity_rate`
/// (the base probabilities rescaled to that total); everything else uses
/// the base probabilities. `tracked_spans` are corrupted at base rates but
/// still reported.
pub fn corrupt_with_tracking(
    text: &str,
    channel: &ChannelConfig,
    entity_spans: &[Span],
    tracked_spans: &[Span],
    entity_rate: f64,
) -> Result<(String, Vec<CorruptedSpan>, Vec<CorruptedSpan>)> {
    channel.validate()?;
    if !(0.0..=1.0).contains(&entity_rate) {
        return Err(Error::Validation(format!(
            "entity rate override must be in [0,1], got {entity_rate}"
        )));
    }
    let chars: Vec<char> = text.chars().collect();
    let entity_spans = validated_spans(entity_spans, chars.len())?;
    let tracked_spans = validated_spans(tracked_spans, chars.len())?;
    {
        // entity and tracked spans must not overlap each other either
        let mut all: Vec<Span> = entity_spans.iter().chain(&tracked_spans).copied().collect();
        all.sort_by_key(|s| (s.start, s.end));
        for w in all.windows(2) {
            if w[1].start < w[0].end {
                return Err(Error::Validation("overlapping spans".into()));
            }
        }
    }

    let base = (channel.p_sub, channel.p_del, channel.p_ins);
    let total = channel.total_rate();
    let inside = if total > 0.0 {
        let scale = entity_rate / total;
        (channel.p_sub * scale, channel.p_del * scale, channel.p_ins * scale)
    } else {
        // degenerate channel: spend the whole override on substitutions
        (entity_rate, 0.0, 0.0)
    };

    let mut rng = rng_from_seed(channel.seed);
    // per-character output, so span surfaces can be reassembled exactly
    let mut outputs: Vec<String> = Vec::with_capacity(chars.len());
    let in_entity = |i: usize| entity_spans.iter().any(|s| s.start <= i && i < s.end);
    for (i, &c) in chars.iter().enumerate() {
        let class = class_of(c);
        if matches!(class, CharClass::Other) || c.is_whitespace() {
            outputs.push(c.to_string());
            continue;
        }
        let (p_sub, p_del, p_ins) = if in_entity(i) { inside } else { base };
        let u: f64 = rng.gen();
        let mut out = String::new();
        if u < p_sub {
            out.push(substitute(c, &mut rng));
        } else if u < p_sub + p_del {
            // deleted
        } else if u < p_sub + p_del + p_ins {
            out.push(c);
            out.push(random_of_class(class, &mut rng));
        } else {
            out.push(c);
        }
        outputs.push(out);
    }

    // prefix char counts of the output per input position
    let mut out_offsets = Vec::with_capacity(chars.len() + 1);
    let mut acc = 0usize;
    for o in &outputs {
        out_offsets.push(acc);
        acc += o.chars().count();
    }
    out_offsets.push(acc);

    let corrupted: String = outputs.concat();
    let collect = |spans: &[Span]| -> Vec<CorruptedSpan> {
        spans
            .iter()
            .map(|s| CorruptedSpan {
                input: *s,
                surface: outputs[s.start..s.end].concat(),
                output: Span {
                    start: out_offsets[s.start],
                    end: out_offsets[s.end],
                },
            })
            .collect()
    };
    let entity_out = collect(&entity_spans);
    let tracked_out = collect(&tracked_spans);
    Ok((corrupted, entity_out, tracked_out))
}

/// Corrupts `text` through the channel. Characters inside `entity_spans`
/// use the probabilities rescaled to `entity_rate_override`; others use the
/// base probabilities. Deterministic in the channel seed.
pub fn corrupt_text(
    text: &str,
    channel: &ChannelConfig,
    entity_spans: &[Span],
    entity_rate_override: f64,
) -> Result<String> {
    let (corrupted, _, _) =
        corrupt_with_tracking(text, channel, entity_spans, &[], entity_rate_override)?;
    Ok(corrupted)
}
