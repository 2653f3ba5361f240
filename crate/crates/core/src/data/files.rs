//! Line-oriented JSON file formats for entity pools and dialog corpora.
//!
//! Pool files hold one `{"id", "name", "category"}` object per line. Corpus
//! files hold one dialog per line:
//! `{"dialog_id", "turns": [{"speaker", "text", "frames_key"?, "state"?, "mentions"?}]}`
//! where user turns carry `frames_key` and a cumulative `state` and agent
//! turns carry neither. `mentions` is optional generator metadata; readers
//! that do not know it simply ignore it.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Dialog, DialogState, Entity, EntityPool, Mention, SlotValue, Speaker, Turn};
use crate::error::{Error, Result};

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        message: message.into(),
    }
}

pub fn load_entity_pool(path: &Path) -> Result<EntityPool> {
    let file = File::open(path)?;
    let reader = BufReader::new(file);
    let mut entities = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let entity: Entity = serde_json::from_str(&line)
            .map_err(|e| parse_err(path, i + 1, format!("malformed entity record: {e}")))?;
        if entity.name.trim().is_empty() {
            return Err(parse_err(path, i + 1, "entity name is empty"));
        }
        entities.push(entity);
    }
    EntityPool::new(entities)
}

pub fn entity_pool_to_jsonl(pool: &EntityPool) -> String {
    let mut out = String::new();
    for e in pool.entities() {
        out.push_str(&serde_json::to_string(e).expect("entity serializes"));
        out.push('\n');
    }
    out
}

pub fn save_entity_pool(pool: &EntityPool, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(entity_pool_to_jsonl(pool).as_bytes())?;
    w.flush()?;
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct DialogRecord {
    dialog_id: String,
    turns: Vec<TurnRecord>,
}

#[derive(Serialize, Deserialize)]
struct TurnRecord {
    speaker: Speaker,
    text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    frames_key: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    state: Option<Vec<SlotValue>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    mentions: Vec<Mention>,
}

impl DialogRecord {
    fn from_dialog(dialog: &Dialog) -> Self {
        DialogRecord {
            dialog_id: dialog.dialog_id.clone(),
            turns: dialog
                .turns
                .iter()
                .map(|t| TurnRecord {
                    speaker: t.speaker,
                    text: t.reference_text.clone(),
                    frames_key: t.frames_key.clone(),
                    state: t.reference_state.as_ref().map(|s| s.slot_values()),
                    mentions: t.mentions.clone(),
                })
                .collect(),
        }
    }

    fn into_dialog(self) -> Result<Dialog> {
        let turns = self
            .turns
            .into_iter()
            .enumerate()
            .map(|(i, t)| {
                let state = t.state.map(DialogState::from_slot_values).transpose()?;
                Ok(Turn {
                    index: i,
                    speaker: t.speaker,
                    reference_text: t.text,
                    frames_key: t.frames_key,
                    reference_state: state,
                    mentions: t.mentions,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Dialog::new(self.dialog_id, turns)
    }
}

pub fn load_dialog_corpus(path: &Path) -> Result<Vec<Dialog>> {
    let file = File::open(path)?;
    let reader = BufReader::new(file);
    let mut dialogs = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: DialogRecord = serde_json::from_str(&line)
            .map_err(|e| parse_err(path, i + 1, format!("malformed dialog record: {e}")))?;
        let dialog = record
            .into_dialog()
            .map_err(|e| parse_err(path, i + 1, e.to_string()))?;
        dialogs.push(dialog);
    }
    Ok(dialogs)
}

pub fn dialog_corpus_to_jsonl(corpus: &[Dialog]) -> String {
    let mut out = String::new();
    for d in corpus {
        let record = DialogRecord::from_dialog(d);
        out.push_str(&serde_json::to_string(&record).expect("dialog serializes"));
        out.push('\n');
    }
    out
}

pub fn save_dialog_corpus(corpus: &[Dialog], path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(dialog_corpus_to_jsonl(corpus).as_bytes())?;
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::EntityCategory;

    fn tmp(content: &str) -> tempfile::NamedTempFile {
        use std::io::Write as _;
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn pool_roundtrip_preserves_order() {
        let pool = EntityPool::new(vec![
            Entity::new(0, "acorn house", EntityCategory::HotelName).unwrap(),
            Entity::new(1, "ely", EntityCategory::City).unwrap(),
            Entity::new(2, "bermondsey", EntityCategory::Station).unwrap(),
        ])
        .unwrap();
        let f = tmp(&entity_pool_to_jsonl(&pool));
        let loaded = load_entity_pool(f.path()).unwrap();
        assert_eq!(loaded, pool);
        // serialize-load-serialize is the identity
        assert_eq!(entity_pool_to_jsonl(&loaded), entity_pool_to_jsonl(&pool));
    }

    #[test]
    fn pool_load_reports_line_numbers() {
        let f = tmp("{\"id\":0,\"name\":\"a\",\"category\":\"city\"}\nnot json\n");
        let err = load_entity_pool(f.path()).unwrap_err();
        assert!(err.to_string().contains(":2:"), "got: {err}");
    }

    #[test]
    fn pool_load_rejects_unknown_category() {
        let f = tmp("{\"id\":0,\"name\":\"a\",\"category\":\"castle\"}\n");
        let err = load_entity_pool(f.path()).unwrap_err();
        assert!(err.to_string().contains("malformed entity record"));
    }

    #[test]
    fn pool_load_rejects_duplicate_name() {
        let f = tmp(
            "{\"id\":0,\"name\":\"Acorn Hotel\",\"category\":\"hotel_name\"}\n\
             {\"id\":1,\"name\":\"acorn hotel\",\"category\":\"hotel_name\"}\n",
        );
        let err = load_entity_pool(f.path()).unwrap_err();
        assert!(err.to_string().contains("duplicate entity name"));
    }

    #[test]
    fn empty_pool_file_loads_as_empty_pool() {
        let f = tmp("");
        let pool = load_entity_pool(f.path()).unwrap();
        assert!(pool.is_empty());
    }

    #[test]
    fn corpus_roundtrip() {
        let corpus_json = concat!(
            "{\"dialog_id\":\"d0\",\"turns\":[",
            "{\"speaker\":\"user\",\"text\":\"book acorn house\",\"frames_key\":\"d0/0\",",
            "\"state\":[{\"domain\":\"hotel\",\"slot\":\"name\",\"value\":\"acorn house\"}],",
            "\"mentions\":[{\"start\":5,\"end\":16,\"domain\":\"hotel\",\"slot\":\"name\",\"entity_id\":3}]},",
            "{\"speaker\":\"agent\",\"text\":\"sure\"},",
            "{\"speaker\":\"user\",\"text\":\"thanks\",\"frames_key\":\"d0/2\",",
            "\"state\":[{\"domain\":\"hotel\",\"slot\":\"name\",\"value\":\"acorn house\"}]}",
            "]}\n"
        );
        let f = tmp(corpus_json);
        let corpus = load_dialog_corpus(f.path()).unwrap();
        assert_eq!(corpus.len(), 1);
        assert_eq!(corpus[0].turns.len(), 3);
        assert_eq!(
            corpus[0].turns.iter().map(|t| t.index).collect::<Vec<_>>(),
            vec![0, 1, 2]
        );
        assert_eq!(corpus[0].turns[0].mentions.len(), 1);

        let f2 = tmp(&dialog_corpus_to_jsonl(&corpus));
        let corpus2 = load_dialog_corpus(f2.path()).unwrap();
        assert_eq!(corpus2, corpus);
    }

    #[test]
    fn corpus_rejects_consecutive_user_turns() {
        let corpus_json = concat!(
            "{\"dialog_id\":\"d0\",\"turns\":[",
            "{\"speaker\":\"user\",\"text\":\"a\",\"frames_key\":\"d0/0\",\"state\":[]},",
            "{\"speaker\":\"user\",\"text\":\"b\",\"frames_key\":\"d0/1\",\"state\":[]}",
            "]}\n"
        );
        let err = load_dialog_corpus(tmp(corpus_json).path()).unwrap_err();
        assert!(err.to_string().contains("alternate"), "got: {err}");
    }

    #[test]
    fn corpus_rejects_dropped_state() {
        let corpus_json = concat!(
            "{\"dialog_id\":\"d0\",\"turns\":[",
            "{\"speaker\":\"user\",\"text\":\"a\",\"frames_key\":\"d0/0\",",
            "\"state\":[{\"domain\":\"hotel\",\"slot\":\"name\",\"value\":\"x\"}]},",
            "{\"speaker\":\"agent\",\"text\":\"ok\"},",
            "{\"speaker\":\"user\",\"text\":\"b\",\"frames_key\":\"d0/2\",\"state\":[]}",
            "]}\n"
        );
        let err = load_dialog_corpus(tmp(corpus_json).path()).unwrap_err();
        assert!(err.to_string().contains("cumulative"), "got: {err}");
    }

    #[test]
    fn corpus_rejects_user_turn_without_frames_key() {
        let corpus_json = concat!(
            "{\"dialog_id\":\"d0\",\"turns\":[",
            "{\"speaker\":\"user\",\"text\":\"a\",\"state\":[]}",
            "]}\n"
        );
        let err = load_dialog_corpus(tmp(corpus_json).path()).unwrap_err();
        assert!(err.to_string().contains("frames_key"), "got: {err}");
    }
}
