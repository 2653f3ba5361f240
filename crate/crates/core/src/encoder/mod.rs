//! The shared dual encoder.
//!
//! One trunk serves both modalities: a text front-end (hashed-trigram
//! bucket embeddings averaged per whitespace token) and an audio front-end
//! (an affine projection per frame, with optional decimation-by-2). Each
//! element then passes through a tanh trunk layer, the sequence is mean
//! pooled, projected to the embedding dimension, and L2 normalized.
//! Queries (utterance audio) and candidates (entity name text) share the
//! trunk and output projection; only the front-ends are modality specific.
//!
//! All arithmetic is carried out in f64 while parameters are stored as f32,
//! which keeps serialized weights bit-exact and gradient checks sharp.

mod gradcheck;
mod loss;
mod train;

pub use gradcheck::{grad_check, seeded_check_batch};
pub use loss::{contrastive_loss, duplicate_mask};
pub use train::{train_retriever, training_pairs_from_corpus, TrainConfig, TrainPair};

use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::data::{FrameSequence, NamedTensor, TensorFile};
use crate::error::{Error, Result};
use crate::rng::{fnv1a64, rng_from_seed};
use crate::text::char_trigrams;

use rand::Rng;

/// Layer sizes of the encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderDims {
    /// Hashed-trigram bucket count for the text front-end.
    pub vocab: usize,
    /// Audio frame dimension.
    pub frame_dim: usize,
    /// Shared front-end output dimension.
    pub input_dim: usize,
    /// Trunk hidden dimension.
    pub hidden_dim: usize,
    /// Final embedding dimension.
    pub embed_dim: usize,
}

impl Default for EncoderDims {
    fn default() -> Self {
        EncoderDims {
            vocab: 4096,
            frame_dim: 16,
            input_dim: 32,
            hidden_dim: 64,
            embed_dim: 64,
        }
    }
}

impl EncoderDims {
    pub fn validate(&self) -> Result<()> {
        for (label, d) in [
            ("vocab", self.vocab),
            ("frame_dim", self.frame_dim),
            ("input_dim", self.input_dim),
            ("hidden_dim", self.hidden_dim),
            ("embed_dim", self.embed_dim),
        ] {
            if d == 0 {
                return Err(Error::Validation(format!("encoder dim {label} must be positive")));
            }
        }
        Ok(())
    }
}

/// All trainable weights. Matrices are row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub dims: EncoderDims,
    /// Mirrors the upstream sequence-length reduction: when set, the audio
    /// front-end keeps every second frame.
    pub decimate_audio: bool,
    /// vocab x input_dim
    pub text_embedding: Vec<f32>,
    /// frame_dim x input_dim
    pub audio_proj_w: Vec<f32>,
    /// input_dim
    pub audio_proj_b: Vec<f32>,
    /// input_dim x hidden_dim
    pub trunk_w: Vec<f32>,
    /// hidden_dim
    pub trunk_b: Vec<f32>,
    /// hidden_dim x embed_dim
    pub output_proj: Vec<f32>,
}

const TENSOR_TEXT_EMBEDDING: &str = "text_embedding_table";
const TENSOR_AUDIO_W: &str = "audio_projection_weight";
const TENSOR_AUDIO_B: &str = "audio_projection_bias";
const TENSOR_TRUNK_W: &str = "trunk_weight";
const TENSOR_TRUNK_B: &str = "trunk_bias";
const TENSOR_OUTPUT: &str = "output_projection";
const TENSOR_DECIMATION: &str = "audio_decimation";

impl EncoderParams {
    /// Seeded uniform initialization, biases zero.
    pub fn init(dims: EncoderDims, seed: u64) -> Self {
        dims.validate().expect("dims validated by callers");
        let mut rng = rng_from_seed(seed);
        let mut uniform = |n: usize, scale: f64| -> Vec<f32> {
            (0..n).map(|_| (rng.gen_range(-scale..scale)) as f32).collect()
        };
        // The audio path starts hot enough that per-frame tanh features land
        // in the saturating region: each trigram frame then contributes a
        // near-sign code in the hidden space instead of collapsing onto a
        // frame_dim-dimensional linear statistic under mean pooling. The
        // text path starts small so token codes stay nearly linear in the
        // bucket embeddings, which the optimizer can place freely.
        let text_scale = 0.05;
        let audio_scale = 1.0;
        let trunk_scale = 0.5;
        let out_scale = 1.0 / (dims.hidden_dim as f64).sqrt();
        EncoderParams {
            dims,
            decimate_audio: false,
            text_embedding: uniform(dims.vocab * dims.input_dim, text_scale),
            audio_proj_w: uniform(dims.frame_dim * dims.input_dim, audio_scale),
            audio_proj_b: vec![0.0; dims.input_dim],
            trunk_w: uniform(dims.input_dim * dims.hidden_dim, trunk_scale),
            trunk_b: vec![0.0; dims.hidden_dim],
            output_proj: uniform(dims.hidden_dim * dims.embed_dim, out_scale),
        }
    }

    pub fn to_tensor_file(&self) -> TensorFile {
        let d = &self.dims;
        let t = |name: &str, dims: Vec<u32>, data: &[f32]| {
            NamedTensor::new(name, dims, data.to_vec()).expect("consistent shapes")
        };
        TensorFile {
            tensors: vec![
                t(
                    TENSOR_TEXT_EMBEDDING,
                    vec![d.vocab as u32, d.input_dim as u32],
                    &self.text_embedding,
                ),
                t(
                    TENSOR_AUDIO_W,
                    vec![d.frame_dim as u32, d.input_dim as u32],
                    &self.audio_proj_w,
                ),
                t(TENSOR_AUDIO_B, vec![d.input_dim as u32], &self.audio_proj_b),
                t(
                    TENSOR_TRUNK_W,
                    vec![d.input_dim as u32, d.hidden_dim as u32],
                    &self.trunk_w,
                ),
                t(TENSOR_TRUNK_B, vec![d.hidden_dim as u32], &self.trunk_b),
                t(
                    TENSOR_OUTPUT,
                    vec![d.hidden_dim as u32, d.embed_dim as u32],
                    &self.output_proj,
                ),
                t(
                    TENSOR_DECIMATION,
                    vec![1],
                    &[if self.decimate_audio { 1.0 } else { 0.0 }],
                ),
            ],
        }
    }

    pub fn from_tensor_file(tf: &TensorFile) -> Result<Self> {
        let expected = [
            TENSOR_TEXT_EMBEDDING,
            TENSOR_AUDIO_W,
            TENSOR_AUDIO_B,
            TENSOR_TRUNK_W,
            TENSOR_TRUNK_B,
            TENSOR_OUTPUT,
            TENSOR_DECIMATION,
        ];
        if tf.tensors.len() != expected.len() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} tensors, found {}",
                expected.len(),
                tf.tensors.len()
            )));
        }
        for (t, name) in tf.tensors.iter().zip(expected) {
            if t.name != name {
                return Err(Error::ShapeMismatch(format!(
                    "expected tensor {name:?}, found {:?}",
                    t.name
                )));
            }
        }
        let rank2 = |t: &NamedTensor| -> Result<(usize, usize)> {
            match t.dims.as_slice() {
                [r, c] => Ok((*r as usize, *c as usize)),
                _ => Err(Error::ShapeMismatch(format!(
                    "tensor {:?} must have rank 2, got dims {:?}",
                    t.name, t.dims
                ))),
            }
        };
        let rank1 = |t: &NamedTensor| -> Result<usize> {
            match t.dims.as_slice() {
                [n] => Ok(*n as usize),
                _ => Err(Error::ShapeMismatch(format!(
                    "tensor {:?} must have rank 1, got dims {:?}",
                    t.name, t.dims
                ))),
            }
        };
        let (vocab, input_dim) = rank2(&tf.tensors[0])?;
        let (frame_dim, input_dim2) = rank2(&tf.tensors[1])?;
        let bias_dim = rank1(&tf.tensors[2])?;
        let (trunk_in, hidden_dim) = rank2(&tf.tensors[3])?;
        let trunk_bias = rank1(&tf.tensors[4])?;
        let (out_in, embed_dim) = rank2(&tf.tensors[5])?;
        let dec = rank1(&tf.tensors[6])?;
        if input_dim2 != input_dim
            || bias_dim != input_dim
            || trunk_in != input_dim
            || trunk_bias != hidden_dim
            || out_in != hidden_dim
            || dec != 1
        {
            return Err(Error::ShapeMismatch(
                "tensor dims are mutually inconsistent".into(),
            ));
        }
        let dims = EncoderDims {
            vocab,
            frame_dim,
            input_dim,
            hidden_dim,
            embed_dim,
        };
        dims.validate()?;
        Ok(EncoderParams {
            dims,
            decimate_audio: tf.tensors[6].data[0] != 0.0,
            text_embedding: tf.tensors[0].data.clone(),
            audio_proj_w: tf.tensors[1].data.clone(),
            audio_proj_b: tf.tensors[2].data.clone(),
            trunk_w: tf.tensors[3].data.clone(),
            trunk_b: tf.tensors[4].data.clone(),
            output_proj: tf.tensors[5].data.clone(),
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.to_tensor_file().to_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Self::from_tensor_file(&TensorFile::from_bytes(bytes)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_tensor_file().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_tensor_file(&TensorFile::load(path)?)
    }

    /// Hash of the serialized parameters; indexes remember which weights
    /// embedded them.
    pub fn fingerprint(&self) -> u64 {
        fnv1a64(&self.to_bytes())
    }
}

/// An L2-normalized embedding (norm 1 within 1e-6).
#[derive(Debug, Clone, PartialEq)]
pub struct UnitEmbedding(Vec<f32>);

impl UnitEmbedding {
    pub fn new(v: Vec<f32>) -> Result<Self> {
        let norm = v.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-6 {
            return Err(Error::Validation(format!(
                "embedding norm {norm} is not 1 within 1e-6"
            )));
        }
        Ok(UnitEmbedding(v))
    }

    fn from_normalized(v: Vec<f32>) -> Self {
        UnitEmbedding(v)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }
}

/// Cosine similarity of two unit embeddings: their dot product, clamped to
/// [-1, 1] against rounding.
pub fn cosine_score(a: &UnitEmbedding, b: &UnitEmbedding) -> f64 {
    dot_f32(a.as_slice(), b.as_slice()).clamp(-1.0, 1.0)
}

pub(crate) fn dot_f32(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| f64::from(x) * f64::from(y))
        .sum()
}

/// Either modality the encoder accepts.
#[derive(Debug, Clone, Copy)]
pub enum EncoderInput<'a> {
    Audio(&'a FrameSequence),
    Text(&'a str),
}

/// Encodes one unit (an utterance's frames or an entity name) to a unit
/// embedding. Pure function of (params, input).
pub fn encode_unit(params: &EncoderParams, input: EncoderInput<'_>) -> Result<UnitEmbedding> {
    let trace = forward(params, input)?;
    let v: Vec<f32> = trace.embedding.iter().map(|&x| x as f32).collect();
    Ok(UnitEmbedding::from_normalized(v))
}

// ---------------------------------------------------------------------------
// forward pass internals (shared with training)
// ---------------------------------------------------------------------------

pub(crate) enum ElementSource {
    /// The frame values that entered the audio projection.
    AudioFrame(Vec<f64>),
    /// The trigram buckets whose embedding rows were averaged.
    TextToken(Vec<usize>),
}

pub(crate) struct ElementTrace {
    pub source: ElementSource,
    /// Front-end output, length input_dim.
    pub input_vec: Vec<f64>,
    /// tanh trunk output, length hidden_dim.
    pub hidden: Vec<f64>,
}

pub(crate) struct ForwardTrace {
    pub elements: Vec<ElementTrace>,
    /// Mean-pooled hidden vector.
    pub pooled: Vec<f64>,
    pub norm: f64,
    /// Normalized embedding in f64.
    pub embedding: Vec<f64>,
}

pub(crate) fn trigram_bucket(gram: &str, vocab: usize) -> usize {
    (fnv1a64(gram.as_bytes()) % vocab as u64) as usize
}

/// y[c] = sum_r x[r] * w[r * cols + c] (+ b[c])
fn affine(x: &[f64], w: &[f32], b: Option<&[f32]>, cols: usize) -> Vec<f64> {
    let mut y: Vec<f64> = match b {
        Some(b) => b.iter().map(|&v| f64::from(v)).collect(),
        None => vec![0.0; cols],
    };
    for (r, &xv) in x.iter().enumerate() {
        let row = &w[r * cols..(r + 1) * cols];
        for (c, &wv) in row.iter().enumerate() {
            y[c] += xv * f64::from(wv);
        }
    }
    y
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Mean over hidden vectors. Consecutive identical vectors are collapsed
/// into (value, count) runs and the counts reduced by their gcd, so that
/// duplicating every element k times reproduces the exact same arithmetic
/// and therefore the exact same mean.
fn mean_pool(elements: &[ElementTrace]) -> Vec<f64> {
    let dim = elements[0].hidden.len();
    let mut runs: Vec<(usize, usize)> = Vec::new(); // (element index, count)
    for (i, e) in elements.iter().enumerate() {
        match runs.last_mut() {
            Some((first, count)) if elements[*first].hidden == e.hidden => *count += 1,
            _ => runs.push((i, 1)),
        }
    }
    let g = runs.iter().fold(0usize, |acc, &(_, c)| gcd(acc, c));
    let total: usize = runs.iter().map(|&(_, c)| c / g).sum();
    let mut pooled = vec![0.0f64; dim];
    for &(first, count) in &runs {
        let weight = (count / g) as f64;
        for (p, &h) in pooled.iter_mut().zip(&elements[first].hidden) {
            *p += h * weight;
        }
    }
    for p in &mut pooled {
        *p /= total as f64;
    }
    pooled
}

pub(crate) fn forward(params: &EncoderParams, input: EncoderInput<'_>) -> Result<ForwardTrace> {
    let d = &params.dims;
    let mut elements: Vec<ElementTrace> = Vec::new();

    match input {
        EncoderInput::Audio(seq) => {
            if seq.dim() != d.frame_dim {
                return Err(Error::DimMismatch {
                    expected: d.frame_dim,
                    found: seq.dim(),
                });
            }
            let step = if params.decimate_audio { 2 } else { 1 };
            for frame in seq.frames().step_by(step) {
                let x: Vec<f64> = frame.iter().map(|&v| f64::from(v)).collect();
                let input_vec = affine(&x, &params.audio_proj_w, Some(&params.audio_proj_b), d.input_dim);
                elements.push(ElementTrace {
                    source: ElementSource::AudioFrame(x),
                    input_vec,
                    hidden: vec![],
                });
            }
        }
        EncoderInput::Text(text) => {
            let lowered = text.to_lowercase();
            for token in lowered.split_whitespace() {
                let buckets: Vec<usize> = char_trigrams(token)
                    .iter()
                    .map(|g| trigram_bucket(g, d.vocab))
                    .collect();
                if buckets.is_empty() {
                    continue;
                }
                let mut input_vec = vec![0.0f64; d.input_dim];
                for &b in &buckets {
                    let row = &params.text_embedding[b * d.input_dim..(b + 1) * d.input_dim];
                    for (acc, &v) in input_vec.iter_mut().zip(row) {
                        *acc += f64::from(v);
                    }
                }
                let inv = 1.0 / buckets.len() as f64;
                for v in &mut input_vec {
                    *v *= inv;
                }
                elements.push(ElementTrace {
                    source: ElementSource::TextToken(buckets),
                    input_vec,
                    hidden: vec![],
                });
            }
        }
    }

    if elements.is_empty() {
        return Err(Error::EmptyInput("encoder input has no elements"));
    }

    for e in &mut elements {
        let z = affine(&e.input_vec, &params.trunk_w, Some(&params.trunk_b), d.hidden_dim);
        e.hidden = z.into_iter().map(f64::tanh).collect();
    }

    let pooled = mean_pool(&elements);
    let out = affine(&pooled, &params.output_proj, None, d.embed_dim);
    let norm = out.iter().map(|&v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(Error::ZeroVector);
    }
    let embedding = out.iter().map(|&v| v / norm).collect();
    Ok(ForwardTrace {
        elements,
        pooled,
        norm,
        embedding,
    })
}
