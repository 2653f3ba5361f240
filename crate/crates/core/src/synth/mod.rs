//! Seeded synthetic data: entity pools, dialog corpora with cumulative
//! states, pseudo-audio frames, and the noisy-channel corrupter.
//!
//! Generation is a pure function of the config. Dialogs draw from seeds
//! derived by hashing `(global_seed, dialog_id)` and frames from
//! `(global_seed, dialog_id, turn_index)`, so per-dialog work is position
//! based: generating in parallel produces the same bytes as generating
//! sequentially.

mod channel;
mod pseudo_audio;

pub use channel::{corrupt_text, corrupt_with_tracking, ChannelConfig, CorruptedSpan, Span};
pub use pseudo_audio::{synthesize_frames, trigram_base_vector};

use std::collections::HashSet;
use std::ops::RangeInclusive;

use rand::Rng;
use rand_xoshiro::Xoshiro256StarStar;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{
    frames_key, Dialog, DialogState, Entity, EntityCategory, EntityPool, FrameStore, Mention,
    SlotValue, Speaker, Turn,
};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from_seed};

/// Distribution of user-turn kinds by how many entities they mention.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TurnMix {
    pub one_entity: f64,
    pub two_entity: f64,
    pub zero_entity: f64,
}

impl Default for TurnMix {
    fn default() -> Self {
        TurnMix {
            one_entity: 0.60,
            two_entity: 0.15,
            zero_entity: 0.25,
        }
    }
}

impl TurnMix {
    pub fn validate(&self) -> Result<()> {
        for (label, p) in [
            ("one_entity", self.one_entity),
            ("two_entity", self.two_entity),
            ("zero_entity", self.zero_entity),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Validation(format!(
                    "turn mix {label} must be in [0,1], got {p}"
                )));
            }
        }
        let sum = self.one_entity + self.two_entity + self.zero_entity;
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Validation(format!(
                "turn mix probabilities must sum to 1, got {sum}"
            )));
        }
        Ok(())
    }
}

/// Everything the generators need. `user_turns_per_dialog` counts user
/// turns; each is followed by an agent reply.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_entities: usize,
    pub n_dialogs: usize,
    pub user_turns_per_dialog: RangeInclusive<usize>,
    pub frame_dim: usize,
    pub frame_noise_sigma: f64,
    pub entity_char_error_rate: f64,
    pub other_char_error_rate: f64,
    pub frame_jitter: bool,
    pub turn_mix: TurnMix,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 0,
            n_entities: 500,
            n_dialogs: 200,
            user_turns_per_dialog: 2..=5,
            frame_dim: 16,
            frame_noise_sigma: 0.1,
            entity_char_error_rate: 0.08,
            other_char_error_rate: 0.02,
            frame_jitter: true,
            turn_mix: TurnMix::default(),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_entities == 0 {
            return Err(Error::Validation("n_entities must be positive".into()));
        }
        if self.frame_dim == 0 {
            return Err(Error::Validation("frame_dim must be positive".into()));
        }
        if self.user_turns_per_dialog.is_empty() || *self.user_turns_per_dialog.start() == 0 {
            return Err(Error::Validation(
                "user_turns_per_dialog must be a non-empty range starting at >= 1".into(),
            ));
        }
        if self.frame_noise_sigma < 0.0 {
            return Err(Error::Validation("frame_noise_sigma must be >= 0".into()));
        }
        for (label, p) in [
            ("entity_char_error_rate", self.entity_char_error_rate),
            ("other_char_error_rate", self.other_char_error_rate),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Validation(format!("{label} must be in [0,1], got {p}")));
            }
        }
        self.turn_mix.validate()
    }

    /// The noisy channel implied by this config's non-entity rate.
    pub fn channel(&self, seed: u64) -> ChannelConfig {
        ChannelConfig::with_total_rate(self.other_char_error_rate, seed)
    }
}

// Names are composed from a fixed onset x nucleus syllable inventory
// (24 * 10 = 240 syllables), three syllables per base. The wide inventory
// keeps trigram overlap between distinct entities low.
const ONSETS: [&str; 24] = [
    "b", "br", "c", "cl", "d", "dr", "f", "fl", "g", "gr", "h", "k", "l", "m", "n", "p", "pr",
    "r", "s", "st", "t", "tr", "v", "w",
];
const NUCLEI: [&str; 10] = ["a", "ar", "e", "el", "i", "in", "o", "or", "u", "un"];

const HOTEL_SUFFIXES: [&str; 5] = ["hotel", "house", "lodge", "inn", "arms"];
const RESTAURANT_SUFFIXES: [&str; 5] = ["kitchen", "bistro", "grill", "table", "garden"];
const ATTRACTION_SUFFIXES: [&str; 5] = ["museum", "gallery", "park", "hall", "gardens"];

fn syllable_word(rng: &mut Xoshiro256StarStar, n_syllables: usize) -> String {
    let mut word = String::new();
    for _ in 0..n_syllables {
        word.push_str(ONSETS[rng.gen_range(0..ONSETS.len())]);
        word.push_str(NUCLEI[rng.gen_range(0..NUCLEI.len())]);
    }
    word
}

fn candidate_name(
    rng: &mut Xoshiro256StarStar,
    category: EntityCategory,
    attempt: usize,
) -> String {
    // widen the name space if earlier attempts kept colliding
    let extra = usize::from(attempt >= 20);
    let suffixes: &[&str] = match category {
        EntityCategory::HotelName => &HOTEL_SUFFIXES,
        EntityCategory::RestaurantName => &RESTAURANT_SUFFIXES,
        EntityCategory::AttractionName => &ATTRACTION_SUFFIXES,
        // place names carry no suffix word, so they get a longer base
        EntityCategory::City | EntityCategory::Station => {
            return syllable_word(rng, 4 + extra)
        }
    };
    let base = syllable_word(rng, 3 + extra);
    format!("{base} {}", suffixes[rng.gen_range(0..suffixes.len())])
}

/// Generates `n_entities` pronounceable entities, categories assigned
/// round-robin, names unique under lowercase comparison. Deterministic in
/// the seed.
pub fn generate_entity_pool(config: &SynthConfig) -> Result<EntityPool> {
    config.validate()?;
    let mut rng = rng_from_seed(derive_seed(config.seed, &["entity-pool"]));
    let mut seen: HashSet<String> = HashSet::new();
    let mut entities = Vec::with_capacity(config.n_entities);
    for id in 0..config.n_entities {
        let category = EntityCategory::ALL[id % EntityCategory::ALL.len()];
        let mut attempt = 0usize;
        let name = loop {
            let name = candidate_name(&mut rng, category, attempt);
            if seen.insert(name.clone()) {
                break name;
            }
            attempt += 1;
            if attempt > 10_000 {
                return Err(Error::Validation(
                    "entity name space exhausted; reduce n_entities".into(),
                ));
            }
        };
        entities.push(Entity::new(id as u32, name, category)?);
    }
    EntityPool::new(entities)
}

enum TurnKind {
    OneEntity(EntityCategory),
    /// One city or station alone, as a departure or arrival.
    SingleEndpoint { arrival: bool },
    Train,
    TimeLeave,
    TimeArrive,
    Filler,
}

fn sample_kind(rng: &mut Xoshiro256StarStar, mix: &TurnMix) -> TurnKind {
    let u: f64 = rng.gen();
    if u < mix.one_entity {
        let v: f64 = rng.gen();
        if v < 0.30 {
            TurnKind::OneEntity(EntityCategory::HotelName)
        } else if v < 0.60 {
            TurnKind::OneEntity(EntityCategory::RestaurantName)
        } else if v < 0.75 {
            TurnKind::OneEntity(EntityCategory::AttractionName)
        } else if v < 0.875 {
            TurnKind::SingleEndpoint { arrival: true }
        } else {
            TurnKind::SingleEndpoint { arrival: false }
        }
    } else if u < mix.one_entity + mix.two_entity {
        TurnKind::Train
    } else {
        let v: f64 = rng.gen();
        if v < 0.2 {
            TurnKind::TimeLeave
        } else if v < 0.4 {
            TurnKind::TimeArrive
        } else {
            TurnKind::Filler
        }
    }
}

const HOTEL_TEMPLATES: [(&str, &str); 3] = [
    ("book the hotel ", ""),
    ("i want to stay at ", ""),
    ("find me the hotel ", ""),
];
const RESTAURANT_TEMPLATES: [(&str, &str); 3] = [
    ("book a table at ", ""),
    ("find the restaurant ", ""),
    ("i want to eat at ", ""),
];
const ATTRACTION_TEMPLATES: [(&str, &str); 2] =
    [("i want to visit ", ""), ("tell me about ", "")];
const TRAIN_TEMPLATES: [(&str, &str, &str); 2] = [
    ("a train from ", " to ", ""),
    ("train leaving ", " going to ", ""),
];
const GO_TO_TEMPLATES: [(&str, &str); 2] = [("i want to go to ", ""), ("take me to ", "")];
const LEAVE_FROM_TEMPLATES: [(&str, &str); 2] =
    [("i am leaving from ", ""), ("i travel from ", "")];
const TIME_LEAVE_TEMPLATES: [(&str, &str); 2] =
    [("leaving at ", ""), ("depart at ", "")];
const TIME_ARRIVE_TEMPLATES: [(&str, &str); 2] =
    [("arrive by ", ""), ("get there by ", "")];
const FILLER_TEXTS: [&str; 4] = [
    "thank you so much",
    "that sounds great",
    "what else can you tell me",
    "okay then",
];
const AGENT_REPLIES: [&str; 5] = [
    "sure, i can help with that",
    "of course, one moment",
    "okay, anything else",
    "done, is there anything more",
    "alright, noted",
];

fn fill1(template: (&str, &str), value: &str) -> (String, usize, usize) {
    let start = template.0.chars().count();
    let end = start + value.chars().count();
    (format!("{}{}{}", template.0, value, template.1), start, end)
}

fn fill2(
    template: (&str, &str, &str),
    first: &str,
    second: &str,
) -> (String, (usize, usize), (usize, usize)) {
    let s1 = template.0.chars().count();
    let e1 = s1 + first.chars().count();
    let s2 = e1 + template.1.chars().count();
    let e2 = s2 + second.chars().count();
    (
        format!("{}{}{}{}{}", template.0, first, template.1, second, template.2),
        (s1, e1),
        (s2, e2),
    )
}

struct CategoryLists<'a> {
    hotels: Vec<&'a Entity>,
    restaurants: Vec<&'a Entity>,
    attractions: Vec<&'a Entity>,
    /// Cities and stations, usable as train endpoints.
    endpoints: Vec<&'a Entity>,
}

impl<'a> CategoryLists<'a> {
    fn of(pool: &'a EntityPool) -> Self {
        CategoryLists {
            hotels: pool.by_category(EntityCategory::HotelName).collect(),
            restaurants: pool.by_category(EntityCategory::RestaurantName).collect(),
            attractions: pool.by_category(EntityCategory::AttractionName).collect(),
            endpoints: pool
                .entities()
                .iter()
                .filter(|e| {
                    matches!(e.category, EntityCategory::City | EntityCategory::Station)
                })
                .collect(),
        }
    }

    fn one_entity_list(&self, category: EntityCategory) -> &[&'a Entity] {
        match category {
            EntityCategory::HotelName => &self.hotels,
            EntityCategory::RestaurantName => &self.restaurants,
            EntityCategory::AttractionName => &self.attractions,
            _ => &[],
        }
    }
}

fn one_entity_slot(category: EntityCategory) -> (&'static str, &'static str) {
    match category {
        EntityCategory::HotelName => ("hotel", "name"),
        EntityCategory::RestaurantName => ("restaurant", "name"),
        EntityCategory::AttractionName => ("attraction", "name"),
        _ => unreachable!("one-entity turns only use name categories"),
    }
}

fn pick<'a, T: Copy>(rng: &mut Xoshiro256StarStar, items: &'a [T]) -> T {
    items[rng.gen_range(0..items.len())]
}

fn generate_dialog(
    config: &SynthConfig,
    lists: &CategoryLists<'_>,
    dialog_index: usize,
) -> Result<(Dialog, Vec<(String, crate::data::FrameSequence)>)> {
    let dialog_id = format!("d{dialog_index:04}");
    let mut rng = rng_from_seed(derive_seed(config.seed, &["dialog", &dialog_id]));
    let n_user = rng.gen_range(config.user_turns_per_dialog.clone());

    let mut state = DialogState::empty();
    let mut turns = Vec::with_capacity(n_user * 2);
    for u in 0..n_user {
        let index = 2 * u;
        let (text, mentions) = match sample_kind(&mut rng, &config.turn_mix) {
            TurnKind::OneEntity(category) => {
                let list = lists.one_entity_list(category);
                if list.is_empty() {
                    return Err(Error::Validation(format!(
                        "entity pool has no {category} entities required by a sampled template"
                    )));
                }
                let entity = list[rng.gen_range(0..list.len())];
                let template = match category {
                    EntityCategory::HotelName => pick(&mut rng, &HOTEL_TEMPLATES),
                    EntityCategory::RestaurantName => pick(&mut rng, &RESTAURANT_TEMPLATES),
                    _ => pick(&mut rng, &ATTRACTION_TEMPLATES),
                };
                let (text, start, end) = fill1(template, &entity.name);
                let (domain, slot) = one_entity_slot(category);
                state.set(SlotValue::new(domain, slot, entity.name.clone())?);
                (
                    text,
                    vec![Mention {
                        start,
                        end,
                        domain: domain.into(),
                        slot: slot.into(),
                        entity_id: Some(entity.id),
                    }],
                )
            }
            TurnKind::SingleEndpoint { arrival } => {
                if lists.endpoints.is_empty() {
                    return Err(Error::Validation(
                        "entity pool has no city/station entities \
                         required by a sampled endpoint template"
                            .into(),
                    ));
                }
                let entity = lists.endpoints[rng.gen_range(0..lists.endpoints.len())];
                let (template, slot) = if arrival {
                    (pick(&mut rng, &GO_TO_TEMPLATES), "arrival")
                } else {
                    (pick(&mut rng, &LEAVE_FROM_TEMPLATES), "departure")
                };
                let (text, start, end) = fill1(template, &entity.name);
                state.set(SlotValue::new("train", slot, entity.name.clone())?);
                (
                    text,
                    vec![Mention {
                        start,
                        end,
                        domain: "train".into(),
                        slot: slot.into(),
                        entity_id: Some(entity.id),
                    }],
                )
            }
            TurnKind::Train => {
                if lists.endpoints.len() < 2 {
                    return Err(Error::Validation(
                        "entity pool needs at least two city/station entities \
                         required by a sampled train template"
                            .into(),
                    ));
                }
                let n = lists.endpoints.len();
                let i = rng.gen_range(0..n);
                let j = (i + 1 + rng.gen_range(0..n - 1)) % n;
                let (dep, arr) = (lists.endpoints[i], lists.endpoints[j]);
                let template = pick(&mut rng, &TRAIN_TEMPLATES);
                let (text, span1, span2) = fill2(template, &dep.name, &arr.name);
                state.set(SlotValue::new("train", "departure", dep.name.clone())?);
                state.set(SlotValue::new("train", "arrival", arr.name.clone())?);
                (
                    text,
                    vec![
                        Mention {
                            start: span1.0,
                            end: span1.1,
                            domain: "train".into(),
                            slot: "departure".into(),
                            entity_id: Some(dep.id),
                        },
                        Mention {
                            start: span2.0,
                            end: span2.1,
                            domain: "train".into(),
                            slot: "arrival".into(),
                            entity_id: Some(arr.id),
                        },
                    ],
                )
            }
            kind @ (TurnKind::TimeLeave | TurnKind::TimeArrive) => {
                let value = format!(
                    "{:02}:{:02}",
                    rng.gen_range(0..24u32),
                    rng.gen_range(0..60u32)
                );
                let (template, slot) = match kind {
                    TurnKind::TimeLeave => (pick(&mut rng, &TIME_LEAVE_TEMPLATES), "leaveat"),
                    _ => (pick(&mut rng, &TIME_ARRIVE_TEMPLATES), "arriveby"),
                };
                let (text, start, end) = fill1(template, &value);
                state.set(SlotValue::new("train", slot, value)?);
                (
                    text,
                    vec![Mention {
                        start,
                        end,
                        domain: "train".into(),
                        slot: slot.into(),
                        entity_id: None,
                    }],
                )
            }
            TurnKind::Filler => (pick(&mut rng, &FILLER_TEXTS).to_string(), vec![]),
        };

        turns.push(Turn {
            index,
            speaker: Speaker::User,
            reference_text: text,
            frames_key: Some(frames_key(&dialog_id, index)),
            reference_state: Some(state.clone()),
            mentions,
        });
        turns.push(Turn {
            index: index + 1,
            speaker: Speaker::Agent,
            reference_text: pick(&mut rng, &AGENT_REPLIES).to_string(),
            frames_key: None,
            reference_state: None,
            mentions: vec![],
        });
    }

    let dialog = Dialog::new(dialog_id.clone(), turns)?;
    let mut frames = Vec::new();
    for turn in dialog.user_turns() {
        let key = turn.frames_key.clone().expect("user turns carry keys");
        let frame_seed = derive_seed(
            config.seed,
            &["frames", &dialog_id, &turn.index.to_string()],
        );
        let seq = synthesize_frames(&turn.reference_text, config, frame_seed)?;
        frames.push((key, seq));
    }
    Ok((dialog, frames))
}

/// Generates a corpus over the pool: alternating dialogs with cumulative
/// states, plus the frame store holding pseudo-audio for every user turn.
/// Fully deterministic in the seed; parallel generation produces the same
/// bytes as sequential generation.
pub fn generate_corpus(
    config: &SynthConfig,
    pool: &EntityPool,
) -> Result<(Vec<Dialog>, FrameStore)> {
    config.validate()?;
    if pool.is_empty() {
        return Err(Error::Validation("entity pool is empty".into()));
    }
    let lists = CategoryLists::of(pool);
    let results: Vec<_> = (0..config.n_dialogs)
        .into_par_iter()
        .map(|d| generate_dialog(config, &lists, d))
        .collect::<Result<Vec<_>>>()?;

    let mut dialogs = Vec::with_capacity(results.len());
    let mut store = FrameStore::new(config.frame_dim);
    for (dialog, frames) in results {
        for (key, seq) in frames {
            store.insert(key, seq)?;
        }
        dialogs.push(dialog);
    }
    Ok((dialogs, store))
}
