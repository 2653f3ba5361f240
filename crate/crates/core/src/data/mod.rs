//! Core domain types: entities, dialog states, dialogs, and value mentions.
//!
//! All types are immutable after construction and safe to share read-only
//! across threads. Validation happens in constructors (or in
//! [`Dialog::validate`]) so that downstream code can rely on the invariants.

mod files;
mod frames;
mod tensors;

pub use files::{
    dialog_corpus_to_jsonl, entity_pool_to_jsonl, load_dialog_corpus, load_entity_pool,
    save_dialog_corpus, save_entity_pool,
};
pub use frames::{FrameSequence, FrameStore};
pub use tensors::{fingerprint_from_tensor, fingerprint_to_tensor, NamedTensor, TensorFile};

use std::collections::BTreeMap;
use std::fmt;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// The closed set of entity categories available as retrieval candidates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntityCategory {
    HotelName,
    RestaurantName,
    AttractionName,
    City,
    Station,
}

impl EntityCategory {
    pub const ALL: [EntityCategory; 5] = [
        EntityCategory::HotelName,
        EntityCategory::RestaurantName,
        EntityCategory::AttractionName,
        EntityCategory::City,
        EntityCategory::Station,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            EntityCategory::HotelName => "hotel_name",
            EntityCategory::RestaurantName => "restaurant_name",
            EntityCategory::AttractionName => "attraction_name",
            EntityCategory::City => "city",
            EntityCategory::Station => "station",
        }
    }
}

impl fmt::Display for EntityCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A single retrieval candidate.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entity {
    pub id: u32,
    pub name: String,
    pub category: EntityCategory,
}

impl Entity {
    pub fn new(id: u32, name: impl Into<String>, category: EntityCategory) -> Result<Self> {
        let name = name.into();
        if name.trim().is_empty() {
            return Err(Error::Validation(format!(
                "entity {id}: name is empty after trimming"
            )));
        }
        Ok(Entity { id, name, category })
    }
}

/// An ordered pool of entities with strictly increasing ids and names that
/// are unique under lowercase comparison.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EntityPool {
    entities: Vec<Entity>,
}

impl EntityPool {
    pub fn new(entities: Vec<Entity>) -> Result<Self> {
        let mut seen_names: BTreeMap<String, u32> = BTreeMap::new();
        let mut last_id: Option<u32> = None;
        for e in &entities {
            if e.name.trim().is_empty() {
                return Err(Error::Validation(format!(
                    "entity {}: name is empty after trimming",
                    e.id
                )));
            }
            if let Some(prev) = last_id {
                if e.id <= prev {
                    return Err(Error::Validation(format!(
                        "entity ids must be strictly increasing: {} after {}",
                        e.id, prev
                    )));
                }
            }
            last_id = Some(e.id);
            let key = e.name.to_lowercase();
            if let Some(other) = seen_names.insert(key, e.id) {
                return Err(Error::Validation(format!(
                    "duplicate entity name (case-insensitive): {:?} (ids {} and {})",
                    e.name, other, e.id
                )));
            }
        }
        Ok(EntityPool { entities })
    }

    pub fn entities(&self) -> &[Entity] {
        &self.entities
    }

    pub fn len(&self) -> usize {
        self.entities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entities.is_empty()
    }

    /// Looks an entity up by id. Ids are strictly increasing, so this is a
    /// binary search.
    pub fn get(&self, id: u32) -> Option<&Entity> {
        self.entities
            .binary_search_by_key(&id, |e| e.id)
            .ok()
            .map(|i| &self.entities[i])
    }

    pub fn by_category(&self, category: EntityCategory) -> impl Iterator<Item = &Entity> {
        self.entities.iter().filter(move |e| e.category == category)
    }
}

/// One `domain-slot=value` assignment.
///
/// Components are non-empty, contain no `=`, `;`, or newline, and carry no
/// leading or trailing whitespace. The domain additionally contains no `-`
/// so the serialized `domain-slot` key splits unambiguously.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SlotValue {
    pub domain: String,
    pub slot: String,
    pub value: String,
}

impl SlotValue {
    pub fn new(
        domain: impl Into<String>,
        slot: impl Into<String>,
        value: impl Into<String>,
    ) -> Result<Self> {
        let sv = SlotValue {
            domain: domain.into(),
            slot: slot.into(),
            value: value.into(),
        };
        sv.validate()?;
        Ok(sv)
    }

    pub fn validate(&self) -> Result<()> {
        for (label, s) in [
            ("domain", &self.domain),
            ("slot", &self.slot),
            ("value", &self.value),
        ] {
            if s.is_empty() {
                return Err(Error::Validation(format!("slot {label} is empty")));
            }
            if s.trim() != s {
                return Err(Error::Validation(format!(
                    "slot {label} {s:?} has leading or trailing whitespace"
                )));
            }
            if s.contains(['=', ';', '\n']) {
                return Err(Error::Validation(format!(
                    "slot {label} {s:?} contains a forbidden character (=, ; or newline)"
                )));
            }
        }
        if self.domain.contains('-') {
            return Err(Error::Validation(format!(
                "slot domain {:?} contains '-'",
                self.domain
            )));
        }
        Ok(())
    }
}

/// A cumulative dialog state: at most one value per (domain, slot) key,
/// canonically ordered by key.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DialogState {
    slots: BTreeMap<(String, String), String>,
}

impl DialogState {
    pub fn empty() -> Self {
        DialogState::default()
    }

    pub fn from_slot_values(values: Vec<SlotValue>) -> Result<Self> {
        let mut state = DialogState::empty();
        for sv in values {
            sv.validate()?;
            let key = (sv.domain.clone(), sv.slot.clone());
            if state.slots.contains_key(&key) {
                return Err(Error::Validation(format!(
                    "duplicate slot key {}-{}",
                    sv.domain, sv.slot
                )));
            }
            state.slots.insert(key, sv.value);
        }
        Ok(state)
    }

    /// Inserts or overwrites the value for the slot's key.
    pub fn set(&mut self, sv: SlotValue) {
        self.slots.insert((sv.domain, sv.slot), sv.value);
    }

    pub fn remove(&mut self, domain: &str, slot: &str) {
        self.slots.remove(&(domain.to_string(), slot.to_string()));
    }

    pub fn get(&self, domain: &str, slot: &str) -> Option<&str> {
        self.slots
            .get(&(domain.to_string(), slot.to_string()))
            .map(String::as_str)
    }

    pub fn contains_key(&self, domain: &str, slot: &str) -> bool {
        self.get(domain, slot).is_some()
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    /// Iterates slots in canonical (domain, slot) order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &str, &str)> {
        self.slots
            .iter()
            .map(|((d, s), v)| (d.as_str(), s.as_str(), v.as_str()))
    }

    /// The canonical sorted list of slot values.
    pub fn slot_values(&self) -> Vec<SlotValue> {
        self.slots
            .iter()
            .map(|((d, s), v)| SlotValue {
                domain: d.clone(),
                slot: s.clone(),
                value: v.clone(),
            })
            .collect()
    }

    /// True when every key of `prev` is still present here (values may have
    /// changed). This is the cumulativity rule for successive user turns.
    pub fn extends(&self, prev: &DialogState) -> bool {
        prev.slots.keys().all(|k| self.slots.contains_key(k))
    }
}

impl Serialize for DialogState {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        self.slot_values().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for DialogState {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let values = Vec::<SlotValue>::deserialize(deserializer)?;
        DialogState::from_slot_values(values).map_err(D::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Speaker {
    User,
    Agent,
}

impl Speaker {
    pub fn as_str(&self) -> &'static str {
        match self {
            Speaker::User => "user",
            Speaker::Agent => "agent",
        }
    }
}

/// A value-bearing span of a user turn's reference text, in character
/// offsets (half-open). Entity mentions carry the entity id; time mentions
/// carry `None`.
///
/// Mentions are produced by the corpus generator so downstream consumers
/// never have to re-discover spans by string search.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mention {
    pub start: usize,
    pub end: usize,
    pub domain: String,
    pub slot: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entity_id: Option<u32>,
}

impl Mention {
    pub fn is_entity(&self) -> bool {
        self.entity_id.is_some()
    }
}

/// One turn of a dialog. User turns carry a frames key, a cumulative
/// reference state, and the mentions that set it; agent turns carry only
/// text.
#[derive(Debug, Clone, PartialEq)]
pub struct Turn {
    pub index: usize,
    pub speaker: Speaker,
    pub reference_text: String,
    pub frames_key: Option<String>,
    pub reference_state: Option<DialogState>,
    pub mentions: Vec<Mention>,
}

/// A multi-turn conversation with alternating speakers starting at a user
/// turn.
#[derive(Debug, Clone, PartialEq)]
pub struct Dialog {
    pub dialog_id: String,
    pub turns: Vec<Turn>,
}

impl Dialog {
    pub fn new(dialog_id: impl Into<String>, turns: Vec<Turn>) -> Result<Self> {
        let dialog = Dialog {
            dialog_id: dialog_id.into(),
            turns,
        };
        dialog.validate()?;
        Ok(dialog)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| {
            Err(Error::Validation(format!(
                "dialog {}: {msg}",
                self.dialog_id
            )))
        };
        let mut prev_user_state: Option<&DialogState> = None;
        for (i, turn) in self.turns.iter().enumerate() {
            if turn.index != i {
                return fail(format!("turn index {} at position {i}", turn.index));
            }
            let expected = if i % 2 == 0 { Speaker::User } else { Speaker::Agent };
            if turn.speaker != expected {
                return fail(format!(
                    "speakers must alternate starting with user (turn {i} is {})",
                    turn.speaker.as_str()
                ));
            }
            match turn.speaker {
                Speaker::User => {
                    if turn.frames_key.is_none() {
                        return fail(format!("user turn {i} has no frames_key"));
                    }
                    let state = match &turn.reference_state {
                        Some(s) => s,
                        None => return fail(format!("user turn {i} has no reference state")),
                    };
                    if let Some(prev) = prev_user_state {
                        if !state.extends(prev) {
                            return fail(format!(
                                "user turn {i} drops a slot key set in an earlier turn \
                                 (states are cumulative)"
                            ));
                        }
                    }
                    prev_user_state = Some(state);
                    self.validate_mentions(turn)?;
                }
                Speaker::Agent => {
                    if turn.frames_key.is_some() || turn.reference_state.is_some() {
                        return fail(format!(
                            "agent turn {i} must not carry frames_key or state"
                        ));
                    }
                    if !turn.mentions.is_empty() {
                        return fail(format!("agent turn {i} must not carry mentions"));
                    }
                }
            }
        }
        Ok(())
    }

    fn validate_mentions(&self, turn: &Turn) -> Result<()> {
        let n_chars = turn.reference_text.chars().count();
        let mut prev_end = 0usize;
        for m in &turn.mentions {
            if m.start >= m.end || m.end > n_chars {
                return Err(Error::Validation(format!(
                    "dialog {}: turn {} mention span {}..{} out of bounds (text has {} chars)",
                    self.dialog_id, turn.index, m.start, m.end, n_chars
                )));
            }
            if m.start < prev_end {
                return Err(Error::Validation(format!(
                    "dialog {}: turn {} has overlapping or unsorted mention spans",
                    self.dialog_id, turn.index
                )));
            }
            prev_end = m.end;
        }
        Ok(())
    }

    pub fn user_turns(&self) -> impl Iterator<Item = &Turn> {
        self.turns.iter().filter(|t| t.speaker == Speaker::User)
    }
}

/// The canonical frames key for a user turn.
pub fn frames_key(dialog_id: &str, turn_index: usize) -> String {
    format!("{dialog_id}/{turn_index}")
}
