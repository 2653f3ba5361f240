//! Contrastive training of the dual encoder.
//!
//! Each batch embeds its queries (utterance audio) and candidates (entity
//! name text), scores every pair by cosine similarity, and minimizes the
//! in-batch InfoNCE loss with Adam. Because the trunk and output projection
//! are shared between the two paths, their gradients are the sum of the
//! query-side and candidate-side contributions. Training is single-threaded
//! and bit-deterministic in the seed.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{Dialog, Entity, EntityPool, FrameSequence, FrameStore};
use crate::error::{Error, Result};
use crate::rng::{derive_seed_n, rng_from_seed};

use super::loss::{contrastive_loss, duplicate_mask};
use super::{
    forward, ElementSource, EncoderDims, EncoderInput, EncoderParams, ForwardTrace,
};

/// Optimization settings. The loss is row-wise (query -> candidate) unless
/// `symmetric` also averages in the transposed direction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub temperature: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_epsilon: f64,
    pub seed: u64,
    pub symmetric: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            temperature: 0.05,
            batch_size: 64,
            epochs: 20,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_epsilon: 1e-8,
            seed: 0,
            symmetric: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.temperature <= 0.0 {
            return Err(Error::Validation(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Validation("batch_size must be >= 1".into()));
        }
        if self.learning_rate <= 0.0 {
            return Err(Error::Validation("learning_rate must be positive".into()));
        }
        Ok(())
    }
}

/// One training example: an utterance's frames paired with an entity
/// mentioned in its reference transcript.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainPair {
    pub query: FrameSequence,
    pub positive: Entity,
}

/// Extracts training pairs from a corpus: one pair per entity mention of
/// every user turn. Turns without entity mentions contribute nothing.
pub fn training_pairs_from_corpus(
    corpus: &[Dialog],
    frames: &FrameStore,
    pool: &EntityPool,
) -> Result<Vec<TrainPair>> {
    let mut pairs = Vec::new();
    for dialog in corpus {
        for turn in dialog.user_turns() {
            let key = turn
                .frames_key
                .as_deref()
                .ok_or_else(|| Error::Validation("user turn without frames_key".into()))?;
            for mention in &turn.mentions {
                let Some(id) = mention.entity_id else { continue };
                let entity = pool.get(id).ok_or(Error::UnknownEntity(id))?;
                pairs.push(TrainPair {
                    query: frames.get(key)?.clone(),
                    positive: entity.clone(),
                });
            }
        }
    }
    Ok(pairs)
}

/// Dense gradients, one buffer per parameter tensor, in f64.
pub(crate) struct ParamGrads {
    pub text_embedding: Vec<f64>,
    pub audio_proj_w: Vec<f64>,
    pub audio_proj_b: Vec<f64>,
    pub trunk_w: Vec<f64>,
    pub trunk_b: Vec<f64>,
    pub output_proj: Vec<f64>,
}

impl ParamGrads {
    fn zeros(d: &EncoderDims) -> Self {
        ParamGrads {
            text_embedding: vec![0.0; d.vocab * d.input_dim],
            audio_proj_w: vec![0.0; d.frame_dim * d.input_dim],
            audio_proj_b: vec![0.0; d.input_dim],
            trunk_w: vec![0.0; d.input_dim * d.hidden_dim],
            trunk_b: vec![0.0; d.hidden_dim],
            output_proj: vec![0.0; d.hidden_dim * d.embed_dim],
        }
    }
}

/// Backpropagates `d_embedding` (gradient at the normalized embedding) of
/// one unit into the parameter gradients.
fn backprop_unit(
    params: &EncoderParams,
    trace: &ForwardTrace,
    d_embedding: &[f64],
    grads: &mut ParamGrads,
) {
    let d = &params.dims;

    // normalization: e = o / |o|
    let e_dot = trace
        .embedding
        .iter()
        .zip(d_embedding)
        .map(|(&e, &g)| e * g)
        .sum::<f64>();
    let d_out: Vec<f64> = trace
        .embedding
        .iter()
        .zip(d_embedding)
        .map(|(&e, &g)| (g - e * e_dot) / trace.norm)
        .collect();

    // output projection: out[m] = sum_k pooled[k] * Wo[k, m]
    let mut d_pooled = vec![0.0f64; d.hidden_dim];
    for k in 0..d.hidden_dim {
        let row = &params.output_proj[k * d.embed_dim..(k + 1) * d.embed_dim];
        let grow = &mut grads.output_proj[k * d.embed_dim..(k + 1) * d.embed_dim];
        let pk = trace.pooled[k];
        let mut acc = 0.0;
        for m in 0..d.embed_dim {
            grow[m] += pk * d_out[m];
            acc += f64::from(row[m]) * d_out[m];
        }
        d_pooled[k] = acc;
    }

    // mean pooling: every element receives d_pooled / n
    let n = trace.elements.len() as f64;
    let d_hidden_scale = 1.0 / n;

    for element in &trace.elements {
        // trunk: h = tanh(x W_t + b_t)
        let mut d_x = vec![0.0f64; d.input_dim];
        let mut d_z = vec![0.0f64; d.hidden_dim];
        for k in 0..d.hidden_dim {
            let dh = d_pooled[k] * d_hidden_scale;
            let h = element.hidden[k];
            d_z[k] = dh * (1.0 - h * h);
            grads.trunk_b[k] += d_z[k];
        }
        for j in 0..d.input_dim {
            let row = &params.trunk_w[j * d.hidden_dim..(j + 1) * d.hidden_dim];
            let grow = &mut grads.trunk_w[j * d.hidden_dim..(j + 1) * d.hidden_dim];
            let xj = element.input_vec[j];
            let mut acc = 0.0;
            for k in 0..d.hidden_dim {
                grow[k] += xj * d_z[k];
                acc += f64::from(row[k]) * d_z[k];
            }
            d_x[j] = acc;
        }

        match &element.source {
            ElementSource::AudioFrame(frame) => {
                for i in 0..d.frame_dim {
                    let grow = &mut grads.audio_proj_w[i * d.input_dim..(i + 1) * d.input_dim];
                    let fi = frame[i];
                    for j in 0..d.input_dim {
                        grow[j] += fi * d_x[j];
                    }
                }
                for j in 0..d.input_dim {
                    grads.audio_proj_b[j] += d_x[j];
                }
            }
            ElementSource::TextToken(buckets) => {
                let inv = 1.0 / buckets.len() as f64;
                for &b in buckets {
                    let grow = &mut grads.text_embedding[b * d.input_dim..(b + 1) * d.input_dim];
                    for j in 0..d.input_dim {
                        grow[j] += d_x[j] * inv;
                    }
                }
            }
        }
    }
}

/// Forward + backward over one batch. Returns the loss and the summed
/// gradients across both encoder paths.
pub(crate) fn batch_forward_backward(
    params: &EncoderParams,
    batch: &[&TrainPair],
    temperature: f64,
    symmetric: bool,
) -> Result<(f64, ParamGrads)> {
    let b = batch.len();
    let query_traces: Vec<ForwardTrace> = batch
        .iter()
        .map(|p| forward(params, EncoderInput::Audio(&p.query)))
        .collect::<Result<_>>()?;
    let cand_traces: Vec<ForwardTrace> = batch
        .iter()
        .map(|p| forward(params, EncoderInput::Text(&p.positive.name)))
        .collect::<Result<_>>()?;

    let embed_dim = params.dims.embed_dim;
    let mut sims = vec![0.0f64; b * b];
    for i in 0..b {
        for j in 0..b {
            sims[i * b + j] = query_traces[i]
                .embedding
                .iter()
                .zip(&cand_traces[j].embedding)
                .map(|(&q, &c)| q * c)
                .sum();
        }
    }

    let names: Vec<&str> = batch.iter().map(|p| p.positive.name.as_str()).collect();
    let mask = duplicate_mask(&names);

    let (loss, d_sims) = if symmetric {
        let (row_loss, row_grad) = contrastive_loss(&sims, b, temperature, &mask)?;
        let mut sims_t = vec![0.0f64; b * b];
        for i in 0..b {
            for j in 0..b {
                sims_t[i * b + j] = sims[j * b + i];
            }
        }
        // text equality is symmetric, so the same mask applies transposed
        let (col_loss, col_grad) = contrastive_loss(&sims_t, b, temperature, &mask)?;
        let mut combined = vec![0.0f64; b * b];
        for i in 0..b {
            for j in 0..b {
                combined[i * b + j] = 0.5 * (row_grad[i * b + j] + col_grad[j * b + i]);
            }
        }
        (0.5 * (row_loss + col_loss), combined)
    } else {
        contrastive_loss(&sims, b, temperature, &mask)?
    };

    let mut grads = ParamGrads::zeros(&params.dims);
    for i in 0..b {
        let mut d_query = vec![0.0f64; embed_dim];
        for j in 0..b {
            let g = d_sims[i * b + j];
            if g == 0.0 {
                continue;
            }
            for m in 0..embed_dim {
                d_query[m] += g * cand_traces[j].embedding[m];
            }
        }
        backprop_unit(params, &query_traces[i], &d_query, &mut grads);
    }
    for j in 0..b {
        let mut d_cand = vec![0.0f64; embed_dim];
        for i in 0..b {
            let g = d_sims[i * b + j];
            if g == 0.0 {
                continue;
            }
            for m in 0..embed_dim {
                d_cand[m] += g * query_traces[i].embedding[m];
            }
        }
        backprop_unit(params, &cand_traces[j], &d_cand, &mut grads);
    }

    Ok((loss, grads))
}

struct AdamState {
    m: ParamGrads,
    v: ParamGrads,
    t: u64,
}

impl AdamState {
    fn new(d: &EncoderDims) -> Self {
        AdamState {
            m: ParamGrads::zeros(d),
            v: ParamGrads::zeros(d),
            t: 0,
        }
    }

    fn step(&mut self, params: &mut EncoderParams, grads: &ParamGrads, cfg: &TrainConfig) {
        self.t += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.t as i32);
        let bc2 = 1.0 - cfg.beta2.powi(self.t as i32);
        let update = |theta: &mut [f32], g: &[f64], m: &mut [f64], v: &mut [f64]| {
            for i in 0..theta.len() {
                m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
                v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                let step = cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.adam_epsilon);
                theta[i] = (f64::from(theta[i]) - step) as f32;
            }
        };
        update(
            &mut params.text_embedding,
            &grads.text_embedding,
            &mut self.m.text_embedding,
            &mut self.v.text_embedding,
        );
        update(
            &mut params.audio_proj_w,
            &grads.audio_proj_w,
            &mut self.m.audio_proj_w,
            &mut self.v.audio_proj_w,
        );
        update(
            &mut params.audio_proj_b,
            &grads.audio_proj_b,
            &mut self.m.audio_proj_b,
            &mut self.v.audio_proj_b,
        );
        update(
            &mut params.trunk_w,
            &grads.trunk_w,
            &mut self.m.trunk_w,
            &mut self.v.trunk_w,
        );
        update(
            &mut params.trunk_b,
            &grads.trunk_b,
            &mut self.m.trunk_b,
            &mut self.v.trunk_b,
        );
        update(
            &mut params.output_proj,
            &grads.output_proj,
            &mut self.m.output_proj,
            &mut self.v.output_proj,
        );
    }
}

/// Mini-batch training with a seeded per-epoch shuffle. Returns the final
/// parameters and the mean batch loss per epoch.
pub fn train_retriever(
    pairs: &[TrainPair],
    params0: &EncoderParams,
    config: &TrainConfig,
) -> Result<(EncoderParams, Vec<f64>)> {
    config.validate()?;
    if pairs.is_empty() {
        return Err(Error::EmptyInput("training requires at least one pair"));
    }
    for p in pairs {
        if p.query.dim() != params0.dims.frame_dim {
            return Err(Error::DimMismatch {
                expected: params0.dims.frame_dim,
                found: p.query.dim(),
            });
        }
    }

    let mut params = params0.clone();
    let mut adam = AdamState::new(&params.dims);
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..pairs.len()).collect();
        let mut rng = rng_from_seed(derive_seed_n(config.seed, "epoch", epoch as u64));
        order.shuffle(&mut rng);

        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&TrainPair> = chunk.iter().map(|&i| &pairs[i]).collect();
            let (loss, grads) =
                batch_forward_backward(&params, &batch, config.temperature, config.symmetric)?;
            adam.step(&mut params, &grads, config);
            epoch_loss += loss;
            batches += 1;
        }
        history.push(epoch_loss / batches as f64);
    }
    Ok((params, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_corpus, generate_entity_pool, SynthConfig};

    fn tiny_setup(seed: u64) -> (EncoderParams, Vec<TrainPair>) {
        let synth = SynthConfig {
            seed,
            n_entities: 20,
            n_dialogs: 12,
            user_turns_per_dialog: 2..=3,
            ..SynthConfig::default()
        };
        let pool = generate_entity_pool(&synth).unwrap();
        let (corpus, frames) = generate_corpus(&synth, &pool).unwrap();
        let pairs = training_pairs_from_corpus(&corpus, &frames, &pool).unwrap();
        assert!(pairs.len() >= 8, "need a handful of pairs, got {}", pairs.len());
        let params = EncoderParams::init(EncoderDims::default(), seed);
        (params, pairs)
    }

    #[test]
    fn batch_of_one_never_updates_params() {
        let (params, pairs) = tiny_setup(5);
        let cfg = TrainConfig {
            batch_size: 1,
            epochs: 2,
            seed: 5,
            ..TrainConfig::default()
        };
        let (trained, history) = train_retriever(&pairs[..4], &params, &cfg).unwrap();
        assert!(history.iter().all(|&l| l == 0.0));
        assert_eq!(trained, params);
    }

    #[test]
    fn training_reduces_the_loss() {
        let (params, pairs) = tiny_setup(6);
        let cfg = TrainConfig {
            batch_size: 8,
            epochs: 6,
            seed: 6,
            ..TrainConfig::default()
        };
        let (_, history) = train_retriever(&pairs, &params, &cfg).unwrap();
        assert!(history.len() == 6);
        assert!(
            history[5] < history[0],
            "loss should drop: {history:?}"
        );
    }

    #[test]
    fn same_seed_trains_to_bit_identical_weights() {
        let (params, pairs) = tiny_setup(7);
        let cfg = TrainConfig {
            batch_size: 8,
            epochs: 3,
            seed: 9,
            ..TrainConfig::default()
        };
        let (a, ha) = train_retriever(&pairs, &params, &cfg).unwrap();
        let (b, hb) = train_retriever(&pairs, &params, &cfg).unwrap();
        assert_eq!(ha, hb);
        assert_eq!(a.to_bytes(), b.to_bytes());
    }

    #[test]
    fn empty_pair_list_is_an_error() {
        let params = EncoderParams::init(EncoderDims::default(), 0);
        assert!(train_retriever(&[], &params, &TrainConfig::default()).is_err());
    }

    #[test]
    fn symmetric_loss_also_trains() {
        let (params, pairs) = tiny_setup(8);
        let cfg = TrainConfig {
            batch_size: 8,
            epochs: 3,
            seed: 8,
            symmetric: true,
            ..TrainConfig::default()
        };
        let (_, history) = train_retriever(&pairs, &params, &cfg).unwrap();
        assert!(history[2] < history[0], "{history:?}");
    }

    #[test]
    fn pairs_from_corpus_follow_mentions() {
        let synth = SynthConfig {
            seed: 4,
            n_entities: 15,
            n_dialogs: 10,
            ..SynthConfig::default()
        };
        let pool = generate_entity_pool(&synth).unwrap();
        let (corpus, frames) = generate_corpus(&synth, &pool).unwrap();
        let pairs = training_pairs_from_corpus(&corpus, &frames, &pool).unwrap();
        let mention_count: usize = corpus
            .iter()
            .flat_map(|d| d.user_turns())
            .flat_map(|t| &t.mentions)
            .filter(|m| m.entity_id.is_some())
            .count();
        assert_eq!(pairs.len(), mention_count);
    }
}
