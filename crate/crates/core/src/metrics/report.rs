//! Comparison reports over one or more runs: a JGA/WER row per model plus
//! the per-category SER table, rendered as aligned plain text and as
//! one-JSON-object-per-row machine output.

use std::collections::BTreeMap;

use serde_json::json;

use crate::data::{Dialog, DialogState, Speaker};
use crate::error::{Error, Result};
use crate::harness::RunResult;

use super::{categorical_ser, jga, wer, CategoryMap, SerReport, SlotCategory, WerBreakdown};

/// Aggregate metrics of one labeled run.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelEval {
    pub label: String,
    pub jga: f64,
    pub wer: WerBreakdown,
    pub ser: SerReport,
    pub turns: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub rows: Vec<ModelEval>,
}

impl MetricsReport {
    /// Aligned plain-text tables.
    pub fn render_text(&self) -> String {
        let label_width = self
            .rows
            .iter()
            .map(|r| r.label.len())
            .chain(std::iter::once("model".len()))
            .max()
            .unwrap_or(5);
        let mut out = String::new();
        out.push_str(&format!("{:<label_width$}  {:>8}  {:>8}\n", "model", "jga", "wer"));
        for row in &self.rows {
            out.push_str(&format!(
                "{:<label_width$}  {:>8.4}  {:>8.4}\n",
                row.label,
                row.jga,
                row.wer.rate()
            ));
        }
        out.push('\n');
        out.push_str("slot error rate by category\n");
        let cat_width = SlotCategory::ALL
            .iter()
            .map(|c| c.label().len())
            .max()
            .unwrap()
            .max("category".len());
        out.push_str(&format!("{:<cat_width$}", "category"));
        for row in &self.rows {
            out.push_str(&format!("  {:>width$}", row.label, width = row.label.len().max(8)));
        }
        out.push('\n');
        for category in SlotCategory::ALL {
            out.push_str(&format!("{:<cat_width$}", category.label()));
            for row in &self.rows {
                let entry = row.ser.get(category);
                let width = row.label.len().max(8);
                let mut cell = format!("{:.4}", entry.rate());
                if entry.zero_denominator {
                    cell.push('*');
                }
                out.push_str(&format!("  {cell:>width$}"));
            }
            out.push('\n');
        }
        let ignored: Vec<String> = self
            .rows
            .iter()
            .filter(|r| r.ser.ignored_pairs > 0)
            .map(|r| format!("{} {}", r.label, r.ser.ignored_pairs))
            .collect();
        if !ignored.is_empty() {
            out.push_str(&format!(
                "unmapped slot pairs ignored: {}\n",
                ignored.join(", ")
            ));
        }
        out
    }

    /// One JSON object per model row, carrying the same numbers as the text.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for row in &self.rows {
            let ser: BTreeMap<&str, serde_json::Value> = SlotCategory::ALL
                .iter()
                .map(|&c| {
                    let e = row.ser.get(c);
                    (
                        c.label(),
                        json!({
                            "substitutions": e.substitutions,
                            "deletions": e.deletions,
                            "insertions": e.insertions,
                            "reference_count": e.reference_count,
                            "rate": e.rate(),
                            "zero_denominator": e.zero_denominator,
                        }),
                    )
                })
                .collect();
            let record = json!({
                "label": row.label,
                "turns": row.turns,
                "jga": row.jga,
                "wer": {
                    "substitutions": row.wer.substitutions,
                    "deletions": row.wer.deletions,
                    "insertions": row.wer.insertions,
                    "reference_word_count": row.wer.reference_word_count,
                    "rate": row.wer.rate(),
                },
                "ser": ser,
                "ignored_pairs": row.ser.ignored_pairs,
            });
            out.push_str(&serde_json::to_string(&record).expect("report row serializes"));
            out.push('\n');
        }
        out
    }
}

/// Collects the (dialog_id, turn) -> (reference text, reference state) map
/// of a corpus.
fn reference_map(corpus: &[Dialog]) -> BTreeMap<(String, usize), (&str, &DialogState)> {
    let mut map = BTreeMap::new();
    for dialog in corpus {
        for turn in &dialog.turns {
            if turn.speaker != Speaker::User {
                continue;
            }
            map.insert(
                (dialog.dialog_id.clone(), turn.index),
                (
                    turn.reference_text.as_str(),
                    turn.reference_state.as_ref().expect("user turns carry state"),
                ),
            );
        }
    }
    map
}

/// Scores each labeled run against the corpus references. Every run must
/// cover exactly the corpus's user turns.
pub fn build_report(
    runs: &[(String, &RunResult)],
    corpus: &[Dialog],
    category_map: &CategoryMap,
    normalize_numbers: bool,
) -> Result<MetricsReport> {
    if runs.is_empty() {
        return Err(Error::EmptyInput("report needs at least one run"));
    }
    let references = reference_map(corpus);
    let mut rows = Vec::with_capacity(runs.len());
    for (label, run) in runs {
        if run.records.len() != references.len() {
            return Err(Error::Validation(format!(
                "run {label:?} has {} records but the corpus has {} user turns",
                run.records.len(),
                references.len()
            )));
        }
        let mut ref_states: Vec<DialogState> = Vec::with_capacity(run.records.len());
        let mut hyp_states: Vec<DialogState> = Vec::with_capacity(run.records.len());
        let mut total_wer = WerBreakdown::default();
        for record in &run.records {
            let key = (record.dialog_id.clone(), record.turn);
            let (ref_text, ref_state) = references.get(&key).ok_or_else(|| {
                Error::Validation(format!(
                    "run {label:?} covers turn {}/{} absent from the corpus",
                    record.dialog_id, record.turn
                ))
            })?;
            total_wer.add(&wer(ref_text, &record.transcript));
            ref_states.push((*ref_state).clone());
            hyp_states.push(record.state.clone());
        }
        rows.push(ModelEval {
            label: label.clone(),
            jga: jga(&ref_states, &hyp_states, normalize_numbers)?,
            wer: total_wer,
            ser: categorical_ser(&ref_states, &hyp_states, category_map, normalize_numbers)?,
            turns: run.records.len(),
        });
    }
    Ok(MetricsReport { rows })
}
