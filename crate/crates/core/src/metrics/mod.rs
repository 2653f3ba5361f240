//! Evaluation metrics: word error rate, joint goal accuracy, and
//! categorical slot error rate.
//!
//! Comparisons normalize values by lowercasing and collapsing whitespace;
//! an optional number normalizer (off by default) additionally folds
//! spelled-out clock words ("three pm") onto digits ("3pm"). SER follows
//! the substitution/deletion/insertion convention: per turn, a reference
//! slot with a differing hypothesis value is a substitution, a missing one
//! a deletion, and a hypothesis slot absent from the reference an
//! insertion; rates divide by per-category reference occurrences.

mod report;

pub use report::{build_report, MetricsReport, ModelEval};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::DialogState;
use crate::error::{Error, Result};
use crate::text::normalize_for_match;

/// Word-level alignment counts. The rate is (S + D + I) / max(1, N_ref) and
/// may exceed 1 through insertions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct WerBreakdown {
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
    pub reference_word_count: usize,
}

impl WerBreakdown {
    pub fn edits(&self) -> usize {
        self.substitutions + self.deletions + self.insertions
    }

    pub fn rate(&self) -> f64 {
        self.edits() as f64 / self.reference_word_count.max(1) as f64
    }

    pub fn add(&mut self, other: &WerBreakdown) {
        self.substitutions += other.substitutions;
        self.deletions += other.deletions;
        self.insertions += other.insertions;
        self.reference_word_count += other.reference_word_count;
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
struct AlignCell {
    cost: u32,
    subs: u32,
    dels: u32,
    ins: u32,
}

impl AlignCell {
    const ZERO: AlignCell = AlignCell { cost: 0, subs: 0, dels: 0, ins: 0 };

    /// Deterministic preference: fewest edits, then fewest substitutions,
    /// then fewest deletions.
    fn better_than(&self, other: &AlignCell) -> bool {
        (self.cost, self.subs, self.dels) < (other.cost, other.subs, other.dels)
    }
}

/// Minimal word-level edit alignment after lowercasing and whitespace
/// tokenization.
pub fn wer(reference: &str, hypothesis: &str) -> WerBreakdown {
    let reference = reference.to_lowercase();
    let hypothesis = hypothesis.to_lowercase();
    let r: Vec<&str> = reference.split_whitespace().collect();
    let h: Vec<&str> = hypothesis.split_whitespace().collect();

    let cols = h.len() + 1;
    let mut prev: Vec<AlignCell> = (0..cols)
        .map(|j| AlignCell { cost: j as u32, ins: j as u32, ..AlignCell::ZERO })
        .collect();
    let mut curr = vec![AlignCell::ZERO; cols];
    for (i, &rw) in r.iter().enumerate() {
        curr[0] = AlignCell {
            cost: (i + 1) as u32,
            dels: (i + 1) as u32,
            ..AlignCell::ZERO
        };
        for (j, &hw) in h.iter().enumerate() {
            let mut best = if rw == hw {
                prev[j]
            } else {
                AlignCell {
                    cost: prev[j].cost + 1,
                    subs: prev[j].subs + 1,
                    ..prev[j]
                }
            };
            let del = AlignCell {
                cost: prev[j + 1].cost + 1,
                dels: prev[j + 1].dels + 1,
                ..prev[j + 1]
            };
            if del.better_than(&best) {
                best = del;
            }
            let ins = AlignCell {
                cost: curr[j].cost + 1,
                ins: curr[j].ins + 1,
                ..curr[j]
            };
            if ins.better_than(&best) {
                best = ins;
            }
            curr[j + 1] = best;
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    let final_cell = prev[h.len()];
    WerBreakdown {
        substitutions: final_cell.subs as usize,
        deletions: final_cell.dels as usize,
        insertions: final_cell.ins as usize,
        reference_word_count: r.len(),
    }
}

/// Folds spelled-out clock words onto digits: number words become digits
/// and a digit followed by "am"/"pm" merges ("three pm" -> "3pm").
pub fn normalize_numbers(s: &str) -> String {
    const WORDS: [(&str, &str); 13] = [
        ("zero", "0"),
        ("one", "1"),
        ("two", "2"),
        ("three", "3"),
        ("four", "4"),
        ("five", "5"),
        ("six", "6"),
        ("seven", "7"),
        ("eight", "8"),
        ("nine", "9"),
        ("ten", "10"),
        ("eleven", "11"),
        ("twelve", "12"),
    ];
    let mapped: Vec<String> = s
        .split_whitespace()
        .map(|token| {
            WORDS
                .iter()
                .find(|(w, _)| *w == token)
                .map(|(_, d)| d.to_string())
                .unwrap_or_else(|| token.to_string())
        })
        .collect();
    let mut out: Vec<String> = Vec::with_capacity(mapped.len());
    for token in mapped {
        let merge = matches!(token.as_str(), "am" | "pm")
            && out
                .last()
                .is_some_and(|prev| prev.chars().all(|c| c.is_ascii_digit()));
        if merge {
            out.last_mut().unwrap().push_str(&token);
        } else {
            out.push(token);
        }
    }
    out.join(" ")
}

fn normalize_value(s: &str, numbers: bool) -> String {
    let base = normalize_for_match(s);
    if numbers {
        normalize_numbers(&base)
    } else {
        base
    }
}

fn normalized_slots(state: &DialogState, numbers: bool) -> BTreeMap<(String, String), String> {
    state
        .iter()
        .map(|(d, s, v)| {
            (
                (normalize_for_match(d), normalize_for_match(s)),
                normalize_value(v, numbers),
            )
        })
        .collect()
}

/// Joint goal accuracy: the fraction of turns whose hypothesis state equals
/// the reference state exactly as a set after normalization.
pub fn jga(
    references: &[DialogState],
    hypotheses: &[DialogState],
    normalize_numbers_flag: bool,
) -> Result<f64> {
    if references.len() != hypotheses.len() {
        return Err(Error::LengthMismatch {
            left: references.len(),
            right: hypotheses.len(),
        });
    }
    if references.is_empty() {
        return Err(Error::EmptyInput("jga needs at least one turn"));
    }
    let matches = references
        .iter()
        .zip(hypotheses)
        .filter(|(r, h)| {
            normalized_slots(r, normalize_numbers_flag) == normalized_slots(h, normalize_numbers_flag)
        })
        .count();
    Ok(matches as f64 / references.len() as f64)
}

/// The slot categories of the SER table.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(rename_all = "snake_case")]
pub enum SlotCategory {
    HotelName,
    RestaurantName,
    TrainDepartureCity,
    TrainArrivalCity,
    TrainDepartureTime,
    TrainArrivalTime,
}

impl SlotCategory {
    pub const ALL: [SlotCategory; 6] = [
        SlotCategory::HotelName,
        SlotCategory::RestaurantName,
        SlotCategory::TrainDepartureCity,
        SlotCategory::TrainArrivalCity,
        SlotCategory::TrainDepartureTime,
        SlotCategory::TrainArrivalTime,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            SlotCategory::HotelName => "hotel name",
            SlotCategory::RestaurantName => "restaurant name",
            SlotCategory::TrainDepartureCity => "train departure city",
            SlotCategory::TrainArrivalCity => "train arrival city",
            SlotCategory::TrainDepartureTime => "train departure time",
            SlotCategory::TrainArrivalTime => "train arrival time",
        }
    }
}

/// Maps normalized (domain, slot) keys to SER categories.
pub type CategoryMap = BTreeMap<(String, String), SlotCategory>;

/// The map for the corpora this crate generates.
pub fn default_category_map() -> CategoryMap {
    let mut map = CategoryMap::new();
    let mut add = |d: &str, s: &str, c: SlotCategory| {
        map.insert((d.to_string(), s.to_string()), c);
    };
    add("hotel", "name", SlotCategory::HotelName);
    add("restaurant", "name", SlotCategory::RestaurantName);
    add("train", "departure", SlotCategory::TrainDepartureCity);
    add("train", "arrival", SlotCategory::TrainArrivalCity);
    add("train", "leaveat", SlotCategory::TrainDepartureTime);
    add("train", "arriveby", SlotCategory::TrainArrivalTime);
    map
}

/// Per-category error counts. `zero_denominator` flags categories that
/// accumulated errors without any reference occurrence (the rate divides by
/// a clamped denominator of 1 in that case).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SerEntry {
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
    pub reference_count: usize,
    pub zero_denominator: bool,
}

impl SerEntry {
    pub fn errors(&self) -> usize {
        self.substitutions + self.deletions + self.insertions
    }

    pub fn rate(&self) -> f64 {
        self.errors() as f64 / self.reference_count.max(1) as f64
    }
}

/// The full SER table plus the count of slot occurrences whose (domain,
/// slot) key had no category mapping.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SerReport {
    pub per_category: BTreeMap<SlotCategory, SerEntry>,
    pub ignored_pairs: usize,
}

impl SerReport {
    pub fn get(&self, category: SlotCategory) -> SerEntry {
        self.per_category.get(&category).copied().unwrap_or_default()
    }
}

/// Categorical slot error rate over aligned turn lists.
pub fn categorical_ser(
    references: &[DialogState],
    hypotheses: &[DialogState],
    category_map: &CategoryMap,
    normalize_numbers_flag: bool,
) -> Result<SerReport> {
    if references.len() != hypotheses.len() {
        return Err(Error::LengthMismatch {
            left: references.len(),
            right: hypotheses.len(),
        });
    }
    let mut report = SerReport::default();
    for c in SlotCategory::ALL {
        report.per_category.insert(c, SerEntry::default());
    }
    for (r, h) in references.iter().zip(hypotheses) {
        let r_slots = normalized_slots(r, normalize_numbers_flag);
        let h_slots = normalized_slots(h, normalize_numbers_flag);
        for (key, r_value) in &r_slots {
            let Some(&category) = category_map.get(key) else {
                report.ignored_pairs += 1;
                continue;
            };
            let entry = report.per_category.get_mut(&category).unwrap();
            entry.reference_count += 1;
            match h_slots.get(key) {
                Some(h_value) if h_value == r_value => {}
                Some(_) => entry.substitutions += 1,
                None => entry.deletions += 1,
            }
        }
        for key in h_slots.keys() {
            if r_slots.contains_key(key) {
                continue;
            }
            match category_map.get(key) {
                Some(&category) => {
                    report.per_category.get_mut(&category).unwrap().insertions += 1
                }
                None => report.ignored_pairs += 1,
            }
        }
    }
    for entry in report.per_category.values_mut() {
        entry.zero_denominator = entry.reference_count == 0 && entry.errors() > 0;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::SlotValue;

    fn state_of(pairs: &[(&str, &str, &str)]) -> DialogState {
        let mut state = DialogState::empty();
        for &(d, s, v) in pairs {
            state.set(SlotValue::new(d, s, v).unwrap());
        }
        state
    }

    #[test]
    fn wer_of_identical_strings_is_zero() {
        let w = wer("book a hotel", "book a hotel");
        assert_eq!(w.edits(), 0);
        assert_eq!(w.rate(), 0.0);
    }

    #[test]
    fn wer_counts_one_substitution() {
        let w = wer("book a hotel", "book the hotel");
        assert_eq!(
            (w.substitutions, w.deletions, w.insertions),
            (1, 0, 0)
        );
        assert!((w.rate() - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn wer_counts_insertions_past_one() {
        let w = wer("a b", "a x b y");
        assert_eq!((w.substitutions, w.deletions, w.insertions), (0, 0, 2));
        assert_eq!(w.rate(), 1.0);
    }

    #[test]
    fn wer_of_empty_hypothesis_is_all_deletions() {
        let w = wer("one two three", "");
        assert_eq!(w.deletions, 3);
        assert_eq!(w.rate(), 1.0);
    }

    #[test]
    fn wer_of_empty_reference_counts_insertions_against_clamped_denominator() {
        let w = wer("", "a b");
        assert_eq!(w.insertions, 2);
        assert_eq!(w.reference_word_count, 0);
        assert_eq!(w.rate(), 2.0);
    }

    #[test]
    fn wer_is_case_insensitive() {
        assert_eq!(wer("Book A Hotel", "book a hotel").edits(), 0);
    }

    #[test]
    fn jga_counts_exact_state_matches() {
        let r = vec![
            state_of(&[("hotel", "name", "acorn house")]),
            state_of(&[("train", "arrival", "ely")]),
        ];
        let h_all = r.clone();
        assert_eq!(jga(&r, &h_all, false).unwrap(), 1.0);

        let h_half = vec![
            state_of(&[("hotel", "name", "acorn house")]),
            state_of(&[("train", "arrival", "oops")]),
        ];
        assert_eq!(jga(&r, &h_half, false).unwrap(), 0.5);
    }

    #[test]
    fn jga_normalizes_case_and_whitespace() {
        let r = vec![state_of(&[("hotel", "name", "Acorn  House")])];
        let h = vec![state_of(&[("hotel", "name", "acorn house")])];
        assert_eq!(jga(&r, &h, false).unwrap(), 1.0);
    }

    #[test]
    fn jga_rejects_length_mismatch() {
        let r = vec![DialogState::empty()];
        assert!(jga(&r, &[], false).is_err());
    }

    #[test]
    fn number_normalization_folds_clock_words() {
        assert_eq!(normalize_numbers("three pm"), "3pm");
        assert_eq!(normalize_numbers("leave at eleven am sharp"), "leave at 11am sharp");
        let r = vec![state_of(&[("train", "leaveat", "three pm")])];
        let h = vec![state_of(&[("train", "leaveat", "3pm")])];
        assert_eq!(jga(&r, &h, false).unwrap(), 0.0, "off by default");
        assert_eq!(jga(&r, &h, true).unwrap(), 1.0);
    }

    #[test]
    fn ser_identical_states_are_all_zero() {
        let r = vec![state_of(&[("hotel", "name", "x"), ("train", "arrival", "y")])];
        let report = categorical_ser(&r, &r.clone(), &default_category_map(), false).unwrap();
        for c in SlotCategory::ALL {
            assert_eq!(report.get(c).rate(), 0.0);
        }
        assert_eq!(report.ignored_pairs, 0);
    }

    #[test]
    fn ser_substitution_rate_of_one() {
        let r = vec![state_of(&[("hotel", "name", "x")])];
        let h = vec![state_of(&[("hotel", "name", "y")])];
        let report = categorical_ser(&r, &h, &default_category_map(), false).unwrap();
        let entry = report.get(SlotCategory::HotelName);
        assert_eq!(entry.substitutions, 1);
        assert_eq!(entry.reference_count, 1);
        assert_eq!(entry.rate(), 1.0);
    }

    #[test]
    fn ser_insertion_with_zero_denominator_is_flagged() {
        let r = vec![DialogState::empty()];
        let h = vec![state_of(&[("hotel", "name", "y")])];
        let report = categorical_ser(&r, &h, &default_category_map(), false).unwrap();
        let entry = report.get(SlotCategory::HotelName);
        assert_eq!(entry.insertions, 1);
        assert_eq!(entry.reference_count, 0);
        assert!(entry.zero_denominator);
        assert_eq!(entry.rate(), 1.0, "denominator clamps to 1");
    }

    #[test]
    fn ser_ignores_unmapped_pairs_with_a_count() {
        let r = vec![state_of(&[("attraction", "name", "x"), ("hotel", "name", "h")])];
        let h = vec![state_of(&[("attraction", "name", "x"), ("hotel", "name", "h"), ("spa", "name", "z")])];
        let report = categorical_ser(&r, &h, &default_category_map(), false).unwrap();
        assert_eq!(report.ignored_pairs, 2, "one reference + one hypothesis occurrence");
        assert_eq!(report.get(SlotCategory::HotelName).rate(), 0.0);
    }

    #[test]
    fn ser_reference_counts_total_matches_slot_count_under_total_map() {
        let r = vec![
            state_of(&[("hotel", "name", "a"), ("train", "leaveat", "08:00")]),
            state_of(&[("hotel", "name", "a"), ("train", "leaveat", "08:00"), ("train", "arrival", "b")]),
        ];
        let report = categorical_ser(&r, &r.clone(), &default_category_map(), false).unwrap();
        let total: usize = SlotCategory::ALL
            .iter()
            .map(|&c| report.get(c).reference_count)
            .sum();
        assert_eq!(total, 5);
    }
}
