//! Auto-regressive turn-by-turn inference over a corpus.
//!
//! For each user turn the harness (1) retrieves and selects entities when
//! retrieval is configured, (2) assembles the model input from the history
//! built so far plus the selection, (3) calls the predictor, (4) parses its
//! output, and (5) extends the history with the *predicted* transcript —
//! never the reference — followed by the reference agent reply. Dialogs are
//! independent units of work; turns within a dialog are strictly
//! sequential.

mod predictors;

pub use predictors::{
    bias_correct, biased_channel_predict, channel_predict, oracle_predict,
    BiasedChannelPredictor, ChannelPredictor, OraclePredictor, Predictor, PredictorOutput,
    TurnContext, TurnReference, DEFAULT_MAX_NORMALIZED_EDIT,
};

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dialog, DialogState, EntityPool, FrameStore, Speaker};
use crate::encoder::{encode_unit, EncoderInput, EncoderParams, UnitEmbedding};
use crate::error::{Error, Result};
use crate::prompt::{assemble_input, parse_model_output, update_history, HistoryTurn, ParseWarning};
use crate::retriever::{
    search_exact, select_entities, EntityIndex, PartitionedIndex, RankedEntity, SelectionPolicy,
};
use crate::rng::derive_seed;

/// Either search structure behind one interface.
pub enum SearchIndex {
    Exact(EntityIndex),
    Partitioned(PartitionedIndex),
}

impl SearchIndex {
    pub fn base(&self) -> &EntityIndex {
        match self {
            SearchIndex::Exact(i) => i,
            SearchIndex::Partitioned(p) => p.base(),
        }
    }

    pub fn search(&self, query: &UnitEmbedding, k: usize) -> Vec<RankedEntity> {
        match self {
            SearchIndex::Exact(i) => search_exact(i, query, k),
            SearchIndex::Partitioned(p) => p.search(query, k),
        }
    }
}

/// Retrieval configuration for a run.
pub struct Retrieval<'a> {
    pub index: &'a SearchIndex,
    pub params: &'a EncoderParams,
    pub policy: SelectionPolicy,
}

/// One selected entity as recorded in run output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectedEntity {
    pub id: u32,
    pub similarity: f64,
}

/// Per-user-turn outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnOutcome {
    pub dialog_id: String,
    pub turn: usize,
    pub transcript: String,
    pub state: DialogState,
    pub selected: Vec<SelectedEntity>,
    pub warnings: Vec<ParseWarning>,
}

/// Run-level metadata. Deliberately excludes anything execution-dependent
/// (timestamps, parallelism) so serialized runs are byte-stable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub predictor: String,
    pub policy: Option<SelectionPolicy>,
    pub seed: u64,
}

/// All turn outcomes of a corpus run, ordered by (dialog_id, turn).
#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub meta: RunMeta,
    pub records: Vec<TurnOutcome>,
}

impl RunResult {
    /// One metadata line followed by one JSON object per user turn.
    pub fn to_jsonl(&self) -> String {
        let mut out = serde_json::to_string(&self.meta).expect("meta serializes");
        out.push('\n');
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(self.to_jsonl().as_bytes())?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let reader = BufReader::new(File::open(path)?);
        let mut lines = reader.lines();
        let meta_line = lines
            .next()
            .ok_or_else(|| Error::Validation("run file is empty".into()))??;
        let meta: RunMeta = serde_json::from_str(&meta_line).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: 1,
            message: format!("malformed run metadata: {e}"),
        })?;
        let mut records = Vec::new();
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let record: TurnOutcome = serde_json::from_str(&line).map_err(|e| Error::Parse {
                path: path.display().to_string(),
                line: i + 2,
                message: format!("malformed run record: {e}"),
            })?;
            records.push(record);
        }
        Ok(RunResult { meta, records })
    }
}

/// Runs one dialog auto-regressively. `run_seed` feeds the per-turn seeds,
/// derived from (run_seed, dialog_id, turn index).
pub fn run_dialog(
    predictor: &dyn Predictor,
    dialog: &Dialog,
    frames: &FrameStore,
    retrieval: Option<&Retrieval<'_>>,
    run_seed: u64,
) -> Result<Vec<TurnOutcome>> {
    let empty_pool = EntityPool::default();
    let pool = retrieval.map_or(&empty_pool, |r| r.index.base().pool());

    let mut history: Vec<HistoryTurn> = Vec::new();
    let mut records = Vec::new();
    for (i, turn) in dialog.turns.iter().enumerate() {
        if turn.speaker != Speaker::User {
            continue;
        }
        let key = turn
            .frames_key
            .as_deref()
            .ok_or_else(|| Error::Validation("user turn without frames_key".into()))?;
        let seq = frames.get(key)?;

        let (selected, selected_names) = match retrieval {
            Some(r) => {
                let query = encode_unit(r.params, EncoderInput::Audio(seq))?;
                let ranked = r.index.search(&query, r.policy.k_max);
                let selected = select_entities(&ranked, &r.policy)?;
                let names = selected
                    .iter()
                    .map(|s| {
                        pool.get(s.entity_id)
                            .map(|e| e.name.clone())
                            .ok_or(Error::UnknownEntity(s.entity_id))
                    })
                    .collect::<Result<Vec<_>>>()?;
                (selected, names)
            }
            None => (Vec::new(), Vec::new()),
        };

        let assembled = assemble_input(&history, &selected, pool)?;
        let reference = TurnReference {
            transcript: &turn.reference_text,
            state: turn
                .reference_state
                .as_ref()
                .ok_or_else(|| Error::Validation("user turn without reference state".into()))?,
            mentions: &turn.mentions,
        };
        let ctx = TurnContext {
            frames: seq,
            assembled: &assembled,
            per_turn_seed: derive_seed(run_seed, &[&dialog.dialog_id, &i.to_string()]),
            reference,
            selected_names: &selected_names,
        };
        let output = predictor.predict(&ctx);
        let parsed = parse_model_output(&output.raw_sequence);

        let agent_text = dialog
            .turns
            .get(i + 1)
            .filter(|t| t.speaker == Speaker::Agent)
            .map(|t| t.reference_text.as_str());
        history = update_history(&history, &parsed.transcript, agent_text);

        records.push(TurnOutcome {
            dialog_id: dialog.dialog_id.clone(),
            turn: i,
            transcript: parsed.transcript,
            state: parsed.state,
            selected: selected
                .iter()
                .map(|r| SelectedEntity {
                    id: r.entity_id,
                    similarity: r.similarity,
                })
                .collect(),
            warnings: parsed.warnings,
        });
    }
    Ok(records)
}

/// Maps [`run_dialog`] over a corpus. Output is ordered by dialog_id
/// regardless of execution order, and is byte-identical for any
/// `parallelism` degree.
pub fn run_corpus(
    predictor: &dyn Predictor,
    corpus: &[Dialog],
    frames: &FrameStore,
    retrieval: Option<&Retrieval<'_>>,
    run_seed: u64,
    parallelism: usize,
) -> Result<RunResult> {
    if parallelism == 0 {
        return Err(Error::Validation("parallelism must be >= 1".into()));
    }
    let run_one = |dialog: &Dialog| -> Result<Vec<TurnOutcome>> {
        run_dialog(predictor, dialog, frames, retrieval, run_seed)
            .map_err(|e| e.context(format!("dialog {}", dialog.dialog_id)))
    };
    let mut per_dialog: Vec<(&str, Vec<TurnOutcome>)> = if parallelism == 1 {
        corpus
            .iter()
            .map(|d| Ok((d.dialog_id.as_str(), run_one(d)?)))
            .collect::<Result<_>>()?
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(parallelism)
            .build()
            .map_err(|e| Error::Validation(format!("thread pool: {e}")))?;
        pool.install(|| {
            corpus
                .par_iter()
                .map(|d| Ok((d.dialog_id.as_str(), run_one(d)?)))
                .collect::<Result<Vec<_>>>()
        })?
    };
    per_dialog.sort_by(|a, b| a.0.cmp(b.0));

    let records = per_dialog.into_iter().flat_map(|(_, r)| r).collect();
    Ok(RunResult {
        meta: RunMeta {
            predictor: predictor.kind().to_string(),
            policy: retrieval.map(|r| r.policy),
            seed: run_seed,
        },
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::EncoderDims;
    use crate::synth::{generate_corpus, generate_entity_pool, ChannelConfig, SynthConfig};
    use std::sync::Mutex;

    fn setup(seed: u64, n_dialogs: usize) -> (SynthConfig, crate::data::EntityPool, Vec<Dialog>, FrameStore) {
        let cfg = SynthConfig {
            seed,
            n_entities: 20,
            n_dialogs,
            ..SynthConfig::default()
        };
        let pool = generate_entity_pool(&cfg).unwrap();
        let (corpus, frames) = generate_corpus(&cfg, &pool).unwrap();
        (cfg, pool, corpus, frames)
    }

    #[test]
    fn oracle_run_reproduces_references() {
        let (_, _, corpus, frames) = setup(3, 5);
        let result = run_corpus(&OraclePredictor, &corpus, &frames, None, 1, 1).unwrap();
        let user_turns: usize = corpus.iter().map(|d| d.user_turns().count()).sum();
        assert_eq!(result.records.len(), user_turns);
        for dialog in &corpus {
            for turn in dialog.user_turns() {
                let record = result
                    .records
                    .iter()
                    .find(|r| r.dialog_id == dialog.dialog_id && r.turn == turn.index)
                    .unwrap();
                assert_eq!(record.transcript, turn.reference_text);
                assert_eq!(&record.state, turn.reference_state.as_ref().unwrap());
                assert!(record.warnings.is_empty());
            }
        }
    }

    #[test]
    fn without_retrieval_every_input_has_no_entities() {
        struct AssertNoEntities;
        impl Predictor for AssertNoEntities {
            fn kind(&self) -> &'static str {
                "assert"
            }
            fn predict(&self, ctx: &TurnContext<'_>) -> PredictorOutput {
                assert_eq!(ctx.assembled.entity_count, 0);
                assert!(!ctx.assembled.text.contains("retrieved_entities"));
                oracle_predict(&ctx.reference)
            }
        }
        let (_, _, corpus, frames) = setup(4, 3);
        run_corpus(&AssertNoEntities, &corpus, &frames, None, 1, 1).unwrap();
    }

    #[test]
    fn history_carries_the_predicted_transcript_verbatim() {
        // the predictor mangles turn 0 and records what it sees afterwards
        struct Mangler {
            seen: Mutex<Vec<String>>,
        }
        impl Predictor for Mangler {
            fn kind(&self) -> &'static str {
                "mangler"
            }
            fn predict(&self, ctx: &TurnContext<'_>) -> PredictorOutput {
                self.seen.lock().unwrap().push(ctx.assembled.text.clone());
                if ctx.assembled.history_turn_count == 0 {
                    PredictorOutput {
                        raw_sequence: "[ASR] zzz mangled zzz [DST] none".into(),
                    }
                } else {
                    oracle_predict(&ctx.reference)
                }
            }
        }
        let (_, _, corpus, frames) = setup(5, 1);
        let predictor = Mangler { seen: Mutex::new(Vec::new()) };
        run_corpus(&predictor, &corpus[..1], &frames, None, 1, 1).unwrap();
        let seen = predictor.seen.into_inner().unwrap();
        assert!(seen.len() >= 2, "needs at least two user turns");
        assert!(
            seen[1].contains("user: zzz mangled zzz"),
            "turn-1 input must contain the mangled transcript: {}",
            seen[1]
        );
        let reference_text = &corpus[0].turns[0].reference_text;
        assert!(
            !seen[1].contains(reference_text.as_str()),
            "turn-1 input must not contain the reference transcript"
        );
    }

    #[test]
    fn parallelism_does_not_change_the_output() {
        let (_, _, corpus, frames) = setup(6, 8);
        let channel = ChannelConfig::with_total_rate(0.05, 9);
        let predictor = ChannelPredictor { channel, entity_rate: 0.1 };
        let a = run_corpus(&predictor, &corpus, &frames, None, 2, 1).unwrap();
        let b = run_corpus(&predictor, &corpus, &frames, None, 2, 8).unwrap();
        assert_eq!(a.to_jsonl(), b.to_jsonl());
    }

    #[test]
    fn rerun_with_same_seed_is_identical() {
        let (_, _, corpus, frames) = setup(7, 4);
        let channel = ChannelConfig::with_total_rate(0.05, 3);
        let predictor = ChannelPredictor { channel, entity_rate: 0.1 };
        let a = run_corpus(&predictor, &corpus, &frames, None, 5, 1).unwrap();
        let b = run_corpus(&predictor, &corpus, &frames, None, 5, 1).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn missing_frames_key_is_reported_with_dialog_context() {
        let (_, _, corpus, _) = setup(8, 2);
        let empty = FrameStore::new(16);
        let err = run_corpus(&OraclePredictor, &corpus, &empty, None, 1, 1).unwrap_err();
        assert!(err.to_string().contains("dialog d0000"), "got: {err}");
    }

    #[test]
    fn retrieval_fills_selected_entities() {
        let (synth, pool, corpus, frames) = setup(9, 3);
        let params = EncoderParams::init(EncoderDims::default(), 2);
        let index = SearchIndex::Exact(EntityIndex::build(&params, &pool).unwrap());
        let retrieval = Retrieval {
            index: &index,
            params: &params,
            // untrained encoder: accept anything in the top 3
            policy: SelectionPolicy { k_max: 3, similarity_threshold: -1.0 },
        };
        let result =
            run_corpus(&OraclePredictor, &corpus, &frames, Some(&retrieval), 1, 1).unwrap();
        assert!(result.records.iter().all(|r| r.selected.len() == 3));
        assert_eq!(result.meta.policy, Some(retrieval.policy));
        let _ = synth;
    }

    #[test]
    fn run_file_roundtrip() {
        let (_, _, corpus, frames) = setup(10, 3);
        let result = run_corpus(&OraclePredictor, &corpus, &frames, None, 1, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.jsonl");
        result.save(&path).unwrap();
        let loaded = RunResult::load(&path).unwrap();
        assert_eq!(loaded, result);
    }
}
