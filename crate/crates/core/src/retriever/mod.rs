//! Entity embedding index, cosine search, the top-k/threshold selection
//! policy, and recall/precision evaluation.
//!
//! Scores are cosine similarities of unit embeddings. A ranked list is
//! always ordered by similarity descending with ties broken by entity id
//! ascending; [`search_exact`] is the correctness oracle that the
//! partitioned index is measured against.

mod partition;

pub use partition::PartitionedIndex;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{
    entity_pool_to_jsonl, fingerprint_from_tensor, fingerprint_to_tensor, EntityPool,
    FrameSequence, NamedTensor, TensorFile,
};
use crate::encoder::{encode_unit, EncoderInput, EncoderParams, UnitEmbedding};
use crate::error::{Error, Result};
use crate::rng::fnv1a64;

/// One search hit. Ranks are 1-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedEntity {
    pub entity_id: u32,
    pub similarity: f64,
    pub rank: usize,
}

/// The top-k / similarity-threshold intersection rule. The threshold is a
/// cosine similarity; callers thinking in cosine distance should negate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionPolicy {
    pub k_max: usize,
    pub similarity_threshold: f64,
}

impl Default for SelectionPolicy {
    fn default() -> Self {
        SelectionPolicy {
            k_max: 10,
            similarity_threshold: 0.78,
        }
    }
}

impl SelectionPolicy {
    pub fn validate(&self) -> Result<()> {
        if self.k_max == 0 {
            return Err(Error::Validation("k_max must be >= 1".into()));
        }
        if !(-1.0..=1.0).contains(&self.similarity_threshold) {
            return Err(Error::Validation(format!(
                "similarity threshold must be in [-1,1], got {}",
                self.similarity_threshold
            )));
        }
        Ok(())
    }
}

/// An immutable index of one embedding per pool entity.
#[derive(Debug, Clone, PartialEq)]
pub struct EntityIndex {
    pool: EntityPool,
    embeddings: Vec<UnitEmbedding>,
    params_fingerprint: u64,
}

/// Fingerprint of a pool's canonical serialization.
pub fn pool_fingerprint(pool: &EntityPool) -> u64 {
    fnv1a64(entity_pool_to_jsonl(pool).as_bytes())
}

impl EntityIndex {
    /// Embeds every entity name with the encoder.
    pub fn build(params: &EncoderParams, pool: &EntityPool) -> Result<Self> {
        if pool.is_empty() {
            return Err(Error::EmptyInput("cannot index an empty entity pool"));
        }
        let embeddings = pool
            .entities()
            .iter()
            .map(|e| encode_unit(params, EncoderInput::Text(&e.name)))
            .collect::<Result<Vec<_>>>()?;
        Ok(EntityIndex {
            pool: pool.clone(),
            embeddings,
            params_fingerprint: params.fingerprint(),
        })
    }

    /// Reassembles an index from its parts, validating counts and norms.
    pub fn from_parts(
        pool: EntityPool,
        embeddings: Vec<UnitEmbedding>,
        params_fingerprint: u64,
    ) -> Result<Self> {
        if pool.is_empty() {
            return Err(Error::EmptyInput("cannot index an empty entity pool"));
        }
        if embeddings.len() != pool.len() {
            return Err(Error::ShapeMismatch(format!(
                "index has {} embeddings for {} entities",
                embeddings.len(),
                pool.len()
            )));
        }
        Ok(EntityIndex {
            pool,
            embeddings,
            params_fingerprint,
        })
    }

    pub fn pool(&self) -> &EntityPool {
        &self.pool
    }

    pub fn embeddings(&self) -> &[UnitEmbedding] {
        &self.embeddings
    }

    pub fn params_fingerprint(&self) -> u64 {
        self.params_fingerprint
    }

    pub fn len(&self) -> usize {
        self.embeddings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.embeddings.is_empty()
    }

    /// Serializes the index (fingerprints + embeddings) in the tensor
    /// container format. The pool itself lives in its own file; loading
    /// checks it against the stored fingerprint.
    pub fn save(&self, path: &Path) -> Result<()> {
        let dim = self.embeddings[0].dim();
        let mut data = Vec::with_capacity(self.embeddings.len() * dim);
        for e in &self.embeddings {
            data.extend_from_slice(e.as_slice());
        }
        let tf = TensorFile {
            tensors: vec![
                fingerprint_to_tensor("params_fingerprint", self.params_fingerprint),
                fingerprint_to_tensor("pool_fingerprint", pool_fingerprint(&self.pool)),
                NamedTensor::new(
                    "embeddings",
                    vec![self.embeddings.len() as u32, dim as u32],
                    data,
                )?,
            ],
        };
        tf.save(path)
    }

    pub fn load(path: &Path, pool: EntityPool) -> Result<Self> {
        let tf = TensorFile::load(path)?;
        let params_fp = fingerprint_from_tensor(
            tf.get("params_fingerprint")
                .ok_or_else(|| Error::ShapeMismatch("missing params_fingerprint tensor".into()))?,
        )?;
        let pool_fp = fingerprint_from_tensor(
            tf.get("pool_fingerprint")
                .ok_or_else(|| Error::ShapeMismatch("missing pool_fingerprint tensor".into()))?,
        )?;
        if pool_fp != pool_fingerprint(&pool) {
            return Err(Error::Validation(
                "index was built against a different entity pool".into(),
            ));
        }
        let emb = tf
            .get("embeddings")
            .ok_or_else(|| Error::ShapeMismatch("missing embeddings tensor".into()))?;
        let (n, dim) = match emb.dims.as_slice() {
            [n, d] => (*n as usize, *d as usize),
            other => {
                return Err(Error::ShapeMismatch(format!(
                    "embeddings tensor must be rank 2, got {other:?}"
                )))
            }
        };
        let embeddings = (0..n)
            .map(|i| UnitEmbedding::new(emb.data[i * dim..(i + 1) * dim].to_vec()))
            .collect::<Result<Vec<_>>>()?;
        EntityIndex::from_parts(pool, embeddings, params_fp)
    }
}

/// Sorts scored entities and keeps the top k. The shared ordering contract:
/// similarity descending, entity id ascending on ties.
pub(crate) fn rank_top_k(mut scored: Vec<(u32, f64)>, k: usize) -> Vec<RankedEntity> {
    scored.sort_unstable_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .expect("similarities are finite")
            .then_with(|| a.0.cmp(&b.0))
    });
    scored.truncate(k);
    scored
        .into_iter()
        .enumerate()
        .map(|(i, (entity_id, similarity))| RankedEntity {
            entity_id,
            similarity,
            rank: i + 1,
        })
        .collect()
}

/// Full scan: the k nearest entities by cosine similarity.
pub fn search_exact(index: &EntityIndex, query: &UnitEmbedding, k: usize) -> Vec<RankedEntity> {
    let scored: Vec<(u32, f64)> = index
        .pool
        .entities()
        .iter()
        .zip(&index.embeddings)
        .map(|(e, emb)| (e.id, crate::encoder::cosine_score(query, emb)))
        .collect();
    rank_top_k(scored, k)
}

/// Applies the selection policy: the first `min(k_max, len)` entries,
/// filtered to similarity >= threshold. Input order (and ranks) are
/// preserved. Errors if the input violates the ranked-list ordering
/// contract.
pub fn select_entities(
    ranked: &[RankedEntity],
    policy: &SelectionPolicy,
) -> Result<Vec<RankedEntity>> {
    policy.validate()?;
    for w in ranked.windows(2) {
        let ordered = w[0].similarity > w[1].similarity
            || (w[0].similarity == w[1].similarity && w[0].entity_id < w[1].entity_id);
        if !ordered {
            return Err(Error::NotSorted);
        }
    }
    Ok(ranked
        .iter()
        .take(policy.k_max)
        .filter(|r| r.similarity >= policy.similarity_threshold)
        .cloned()
        .collect())
}

/// Recall/precision table rows for fixed cutoffs plus the selection policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrieverEvalReport {
    pub per_k: Vec<KRow>,
    pub policy: PolicyRow,
    pub queries: usize,
    pub total_relevant: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KRow {
    pub k: usize,
    pub recall: f64,
    pub precision: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyRow {
    pub k_max: usize,
    pub similarity_threshold: f64,
    pub mean_selected: f64,
    pub recall: f64,
    pub precision: f64,
}

impl RetrieverEvalReport {
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "retriever evaluation over {} queries ({} relevant entities)\n",
            self.queries, self.total_relevant
        ));
        out.push_str(&format!("{:>6}  {:>8}  {:>9}\n", "top-k", "recall", "precision"));
        for row in &self.per_k {
            out.push_str(&format!(
                "{:>6}  {:>8.4}  {:>9.4}\n",
                row.k, row.recall, row.precision
            ));
        }
        out.push_str(&format!(
            "policy (k_max={}, threshold={:.2}): mean selected {:.2}, recall {:.4}, precision {:.4}\n",
            self.policy.k_max,
            self.policy.similarity_threshold,
            self.policy.mean_selected,
            self.policy.recall,
            self.policy.precision
        ));
        out
    }
}

/// One evaluation item: a query's frames and the ids of the entities its
/// utterance actually mentions (possibly none).
pub type EvalItem = (FrameSequence, Vec<u32>);

/// Micro-averaged recall@k and precision@k over an evaluation set, plus the
/// same figures for the selection policy. Queries with no relevant
/// entities contribute to precision denominators only.
pub fn evaluate_retriever(
    index: &EntityIndex,
    params: &EncoderParams,
    eval_set: &[EvalItem],
    ks: &[usize],
    policy: &SelectionPolicy,
) -> Result<RetrieverEvalReport> {
    policy.validate()?;
    if eval_set.is_empty() {
        return Err(Error::EmptyInput("evaluation set is empty"));
    }
    for (_, refs) in eval_set {
        for id in refs {
            if index.pool.get(*id).is_none() {
                return Err(Error::UnknownEntity(*id));
            }
        }
    }
    let max_k = ks.iter().copied().max().unwrap_or(0).max(policy.k_max);

    let mut hits_at_k = vec![0usize; ks.len()];
    let mut total_relevant = 0usize;
    let mut policy_hits = 0usize;
    let mut policy_selected = 0usize;
    for (frames, refs) in eval_set {
        let query = encode_unit(params, EncoderInput::Audio(frames))?;
        let ranked = search_exact(index, &query, max_k);
        total_relevant += refs.len();
        for (ki, &k) in ks.iter().enumerate() {
            hits_at_k[ki] += ranked
                .iter()
                .take(k)
                .filter(|r| refs.contains(&r.entity_id))
                .count();
        }
        let selected = select_entities(&ranked, policy)?;
        policy_selected += selected.len();
        policy_hits += selected
            .iter()
            .filter(|r| refs.contains(&r.entity_id))
            .count();
    }

    let q = eval_set.len() as f64;
    let recall_denom = total_relevant.max(1) as f64;
    let per_k = ks
        .iter()
        .zip(&hits_at_k)
        .map(|(&k, &hits)| KRow {
            k,
            recall: hits as f64 / recall_denom,
            precision: hits as f64 / (k as f64 * q),
        })
        .collect();
    let policy_row = PolicyRow {
        k_max: policy.k_max,
        similarity_threshold: policy.similarity_threshold,
        mean_selected: policy_selected as f64 / q,
        recall: policy_hits as f64 / recall_denom,
        precision: if policy_selected == 0 {
            0.0
        } else {
            policy_hits as f64 / policy_selected as f64
        },
    };
    Ok(RetrieverEvalReport {
        per_k,
        policy: policy_row,
        queries: eval_set.len(),
        total_relevant,
    })
}
