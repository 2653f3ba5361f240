//! The predictor contract and the simulated predictors.
//!
//! A predictor maps (frames, assembled input, per-turn seed) to one raw
//! output sequence. The reference transcript, state, and generator-known
//! mention spans reach simulators only through [`TurnContext::reference`]
//! — the declared simulation inputs — never through any side channel, and
//! the harness builds that context itself, so runs stay honest.

use crate::data::{DialogState, FrameSequence, Mention, SlotValue};
use crate::prompt::{format_model_output, AssembledInput};
use crate::synth::{corrupt_with_tracking, ChannelConfig, CorruptedSpan, Span};
use crate::text::levenshtein_chars;

/// Raw model output, to be parsed by
/// [`parse_model_output`](crate::prompt::parse_model_output).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PredictorOutput {
    pub raw_sequence: String,
}

/// The reference side of a turn, exposed to simulators as declared
/// simulation inputs.
#[derive(Debug, Clone, Copy)]
pub struct TurnReference<'a> {
    pub transcript: &'a str,
    pub state: &'a DialogState,
    pub mentions: &'a [Mention],
}

/// Everything a predictor may look at for one turn.
pub struct TurnContext<'a> {
    pub frames: &'a FrameSequence,
    pub assembled: &'a AssembledInput,
    pub per_turn_seed: u64,
    pub reference: TurnReference<'a>,
    /// Names of the entities the selection policy passed downstream, in
    /// ranked order. Empty when retrieval is off.
    pub selected_names: &'a [String],
}

/// A deterministic per-turn model stand-in.
pub trait Predictor: Send + Sync {
    fn kind(&self) -> &'static str;
    fn predict(&self, ctx: &TurnContext<'_>) -> PredictorOutput;
}

/// Emits the references verbatim; the end-to-end sanity oracle.
pub struct OraclePredictor;

/// Emits a single output sequence carrying the reference transcript and
/// state.
pub fn oracle_predict(reference: &TurnReference<'_>) -> PredictorOutput {
    PredictorOutput {
        raw_sequence: format_model_output(reference.transcript, reference.state),
    }
}

impl Predictor for OraclePredictor {
    fn kind(&self) -> &'static str {
        "oracle"
    }

    fn predict(&self, ctx: &TurnContext<'_>) -> PredictorOutput {
        oracle_predict(&ctx.reference)
    }
}

/// Collapses a corrupted surface into a usable slot value: internal
/// whitespace collapsed, ends trimmed. A surface corrupted away to nothing
/// yields `None` (the slot is dropped, a deletion downstream).
fn surface_to_value(surface: &str) -> Option<String> {
    let collapsed = surface.split_whitespace().collect::<Vec<_>>().join(" ");
    if collapsed.is_empty() {
        None
    } else {
        Some(collapsed)
    }
}

fn apply_mention_value(state: &mut DialogState, mention: &Mention, surface: &str) {
    match surface_to_value(surface) {
        Some(value) => {
            if let Ok(sv) = SlotValue::new(mention.domain.clone(), mention.slot.clone(), value) {
                state.set(sv);
            } else {
                state.remove(&mention.domain, &mention.slot);
            }
        }
        None => state.remove(&mention.domain, &mention.slot),
    }
}

struct Corruption {
    transcript: String,
    /// Per entity mention, aligned with the entity mentions of the turn.
    entity_spans: Vec<CorruptedSpan>,
    state: DialogState,
}

/// Runs the noisy channel over a turn: the transcript is corrupted (entity
/// spans at the entity rate, everything else — including time digits — at
/// the base rates) and each mentioned slot value is replaced by its surface
/// form in the corrupted transcript.
fn corrupt_turn(
    reference: &TurnReference<'_>,
    channel: &ChannelConfig,
    entity_rate: f64,
    per_turn_seed: u64,
) -> Corruption {
    let turn_channel = ChannelConfig {
        seed: crate::rng::derive_seed_n(channel.seed, "turn", per_turn_seed),
        ..*channel
    };
    let entity_mentions: Vec<&Mention> =
        reference.mentions.iter().filter(|m| m.is_entity()).collect();
    let other_mentions: Vec<&Mention> =
        reference.mentions.iter().filter(|m| !m.is_entity()).collect();
    let entity_spans: Vec<Span> = entity_mentions.iter().map(|m| Span::of_mention(m)).collect();
    let other_spans: Vec<Span> = other_mentions.iter().map(|m| Span::of_mention(m)).collect();

    let (transcript, entity_out, other_out) = corrupt_with_tracking(
        reference.transcript,
        &turn_channel,
        &entity_spans,
        &other_spans,
        entity_rate,
    )
    .expect("generator-produced mentions are valid spans");

    let mut state = reference.state.clone();
    for (mention, span) in entity_mentions.iter().zip(&entity_out) {
        apply_mention_value(&mut state, mention, &span.surface);
    }
    for (mention, span) in other_mentions.iter().zip(&other_out) {
        apply_mention_value(&mut state, mention, &span.surface);
    }
    Corruption {
        transcript,
        entity_spans: entity_out,
        state,
    }
}

/// The baseline simulator: a noisy channel over the reference turn.
pub fn channel_predict(
    reference: &TurnReference<'_>,
    channel: &ChannelConfig,
    entity_rate: f64,
    per_turn_seed: u64,
) -> PredictorOutput {
    let c = corrupt_turn(reference, channel, entity_rate, per_turn_seed);
    PredictorOutput {
        raw_sequence: format_model_output(&c.transcript, &c.state),
    }
}

/// Returns the selected entity name with the smallest normalized
/// Levenshtein distance to `span` if that distance is within
/// `max_normalized_edit` (ties keep the earlier selection), otherwise the
/// span unchanged. The flag reports whether the text actually changed.
pub fn bias_correct(
    span: &str,
    selected: &[String],
    max_normalized_edit: f64,
) -> (String, bool) {
    let span_len = span.chars().count();
    let mut best: Option<(f64, &str)> = None;
    for name in selected {
        let name_len = name.chars().count();
        let denom = span_len.max(name_len);
        let normalized = if denom == 0 {
            0.0
        } else {
            levenshtein_chars(span, name) as f64 / denom as f64
        };
        if best.map_or(true, |(d, _)| normalized < d) {
            best = Some((normalized, name));
        }
    }
    match best {
        Some((dist, name)) if dist <= max_normalized_edit => {
            let corrected = name != span;
            (name.to_string(), corrected)
        }
        _ => (span.to_string(), false),
    }
}

/// The retrieval-biased simulator: the noisy channel followed by
/// [`bias_correct`] over every corrupted entity span, in both the
/// transcript and the matching state values.
pub fn biased_channel_predict(
    reference: &TurnReference<'_>,
    channel: &ChannelConfig,
    entity_rate: f64,
    selected_names: &[String],
    max_normalized_edit: f64,
    per_turn_seed: u64,
) -> PredictorOutput {
    let mut c = corrupt_turn(reference, channel, entity_rate, per_turn_seed);

    let entity_mentions: Vec<&Mention> =
        reference.mentions.iter().filter(|m| m.is_entity()).collect();
    let chars: Vec<char> = c.transcript.chars().collect();
    let mut rebuilt = String::new();
    let mut cursor = 0usize;
    for (mention, span) in entity_mentions.iter().zip(&c.entity_spans) {
        let (fixed, corrected) = bias_correct(&span.surface, selected_names, max_normalized_edit);
        rebuilt.extend(&chars[cursor..span.output.start]);
        rebuilt.push_str(&fixed);
        cursor = span.output.end;
        if corrected {
            apply_mention_value(&mut c.state, mention, &fixed);
        }
    }
    rebuilt.extend(&chars[cursor..]);

    PredictorOutput {
        raw_sequence: format_model_output(&rebuilt, &c.state),
    }
}

/// Baseline channel simulator as a [`Predictor`].
pub struct ChannelPredictor {
    pub channel: ChannelConfig,
    pub entity_rate: f64,
}

impl Predictor for ChannelPredictor {
    fn kind(&self) -> &'static str {
        "channel"
    }

    fn predict(&self, ctx: &TurnContext<'_>) -> PredictorOutput {
        channel_predict(&ctx.reference, &self.channel, self.entity_rate, ctx.per_turn_seed)
    }
}

/// Retrieval-biased channel simulator as a [`Predictor`].
pub struct BiasedChannelPredictor {
    pub channel: ChannelConfig,
    pub entity_rate: f64,
    pub max_normalized_edit: f64,
}

pub const DEFAULT_MAX_NORMALIZED_EDIT: f64 = 0.3;

impl Predictor for BiasedChannelPredictor {
    fn kind(&self) -> &'static str {
        "biased-channel"
    }

    fn predict(&self, ctx: &TurnContext<'_>) -> PredictorOutput {
        biased_channel_predict(
            &ctx.reference,
            &self.channel,
            self.entity_rate,
            ctx.selected_names,
            self.max_normalized_edit,
            ctx.per_turn_seed,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompt::parse_model_output;

    fn reference_turn() -> (String, DialogState, Vec<Mention>) {
        let text = "i need a train from bermondsey to ely".to_string();
        let mut state = DialogState::empty();
        state.set(SlotValue::new("train", "departure", "bermondsey").unwrap());
        state.set(SlotValue::new("train", "arrival", "ely").unwrap());
        let mentions = vec![
            Mention {
                start: 20,
                end: 30,
                domain: "train".into(),
                slot: "departure".into(),
                entity_id: Some(0),
            },
            Mention {
                start: 34,
                end: 37,
                domain: "train".into(),
                slot: "arrival".into(),
                entity_id: Some(1),
            },
        ];
        (text, state, mentions)
    }

    #[test]
    fn oracle_roundtrips_references() {
        let (text, state, mentions) = reference_turn();
        let reference = TurnReference {
            transcript: &text,
            state: &state,
            mentions: &mentions,
        };
        let parsed = parse_model_output(&oracle_predict(&reference).raw_sequence);
        assert_eq!(parsed.transcript, text);
        assert_eq!(parsed.state, state);
        assert!(parsed.warnings.is_empty());
    }

    #[test]
    fn zero_rate_channel_equals_oracle() {
        let (text, state, mentions) = reference_turn();
        let reference = TurnReference {
            transcript: &text,
            state: &state,
            mentions: &mentions,
        };
        let channel = ChannelConfig { p_sub: 0.0, p_del: 0.0, p_ins: 0.0, seed: 1 };
        let out = channel_predict(&reference, &channel, 0.0, 7);
        assert_eq!(out, oracle_predict(&reference));
    }

    #[test]
    fn corrupted_entity_propagates_into_the_state() {
        let (text, state, mentions) = reference_turn();
        let reference = TurnReference {
            transcript: &text,
            state: &state,
            mentions: &mentions,
        };
        // rate-1 substitution inside entity spans only
        let channel = ChannelConfig { p_sub: 1e-9, p_del: 0.0, p_ins: 0.0, seed: 5 };
        let out = channel_predict(&reference, &channel, 1.0, 3);
        let parsed = parse_model_output(&out.raw_sequence);
        let dep = parsed.state.get("train", "departure").unwrap();
        assert_ne!(dep, "bermondsey");
        assert_eq!(dep.chars().count(), 10);
        assert!(parsed.transcript.contains(dep));
    }

    #[test]
    fn filler_corruption_leaves_the_state_exact() {
        let (text, state, mentions) = reference_turn();
        let reference = TurnReference {
            transcript: &text,
            state: &state,
            mentions: &mentions,
        };
        // heavy corruption outside spans, none inside
        let channel = ChannelConfig { p_sub: 0.9, p_del: 0.05, p_ins: 0.05, seed: 2 };
        let out = channel_predict(&reference, &channel, 0.0, 11);
        let parsed = parse_model_output(&out.raw_sequence);
        assert_eq!(parsed.state, state);
        assert_ne!(parsed.transcript, text);
    }

    #[test]
    fn bias_correct_restores_the_misrecognized_station() {
        let selected = vec!["ely".to_string(), "bermondsey".to_string()];
        let (fixed, corrected) = bias_correct("bermondsay", &selected, 0.3);
        assert_eq!(fixed, "bermondsey");
        assert!(corrected);
    }

    #[test]
    fn bias_correct_leaves_distant_or_exact_spans_alone() {
        let selected = vec!["bermondsey".to_string()];
        let (fixed, corrected) = bias_correct("zzzzzzzzzz", &selected, 0.3);
        assert_eq!(fixed, "zzzzzzzzzz");
        assert!(!corrected);

        let (fixed, corrected) = bias_correct("bermondsey", &selected, 0.3);
        assert_eq!(fixed, "bermondsey");
        assert!(!corrected);

        let (fixed, corrected) = bias_correct("anything", &[], 0.3);
        assert_eq!(fixed, "anything");
        assert!(!corrected);
    }

    #[test]
    fn bias_correct_breaks_ties_by_selection_order() {
        let selected = vec!["abcx".to_string(), "abcy".to_string()];
        let (fixed, _) = bias_correct("abcz", &selected, 0.5);
        assert_eq!(fixed, "abcx");
    }

    #[test]
    fn biased_prediction_repairs_transcript_and_state() {
        // two 10-char station names: 0.15 per-char substitution stays well
        // inside the 0.3 normalized edit threshold
        let text = "i need a train from bermondsey to paddington".to_string();
        let mut state = DialogState::empty();
        state.set(SlotValue::new("train", "departure", "bermondsey").unwrap());
        state.set(SlotValue::new("train", "arrival", "paddington").unwrap());
        let mentions = vec![
            Mention {
                start: 20,
                end: 30,
                domain: "train".into(),
                slot: "departure".into(),
                entity_id: Some(0),
            },
            Mention {
                start: 34,
                end: 44,
                domain: "train".into(),
                slot: "arrival".into(),
                entity_id: Some(1),
            },
        ];
        let reference = TurnReference {
            transcript: &text,
            state: &state,
            mentions: &mentions,
        };
        let channel = ChannelConfig { p_sub: 1e-9, p_del: 0.0, p_ins: 0.0, seed: 5 };

        // sanity: the baseline actually corrupts at least one value
        let baseline = parse_model_output(&channel_predict(&reference, &channel, 0.15, 3).raw_sequence);
        assert_ne!(baseline.state, state, "baseline should err on this seed");

        let selected = vec!["bermondsey".to_string(), "paddington".to_string()];
        let out = biased_channel_predict(&reference, &channel, 0.15, &selected, 0.3, 3);
        let parsed = parse_model_output(&out.raw_sequence);
        assert_eq!(parsed.state, state, "selection within threshold restores values");
        assert_eq!(parsed.transcript, text);
    }

    #[test]
    fn biased_prediction_without_selection_matches_the_baseline() {
        let (text, state, mentions) = reference_turn();
        let reference = TurnReference {
            transcript: &text,
            state: &state,
            mentions: &mentions,
        };
        let channel = ChannelConfig { p_sub: 1e-9, p_del: 0.0, p_ins: 0.0, seed: 5 };
        let baseline = channel_predict(&reference, &channel, 0.6, 3);
        let biased = biased_channel_predict(&reference, &channel, 0.6, &[], 0.3, 3);
        assert_eq!(biased, baseline);
    }

    #[test]
    fn zero_rates_make_the_biased_predictor_an_oracle() {
        let (text, state, mentions) = reference_turn();
        let reference = TurnReference {
            transcript: &text,
            state: &state,
            mentions: &mentions,
        };
        let channel = ChannelConfig { p_sub: 0.0, p_del: 0.0, p_ins: 0.0, seed: 5 };
        let selected = vec!["bermondsey".to_string()];
        let out = biased_channel_predict(&reference, &channel, 0.0, &selected, 0.3, 3);
        assert_eq!(out, oracle_predict(&reference));
    }
}
