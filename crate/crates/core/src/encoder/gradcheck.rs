//! Verification of the hand-derived gradients against central finite
//! differences.

use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from_seed};
use crate::synth::{generate_corpus, generate_entity_pool, SynthConfig};

use rand::seq::SliceRandom;

use super::train::{batch_forward_backward, training_pairs_from_corpus, TrainPair};
use super::{trigram_bucket, EncoderDims, EncoderParams};
use crate::text::char_trigrams;

const SAMPLE_SEED: u64 = 0x6772_6164; // fixed coordinate-sampling seed

#[derive(Clone, Copy)]
enum TensorId {
    TextEmbedding,
    AudioW,
    AudioB,
    TrunkW,
    TrunkB,
    Output,
}

fn tensor_mut<'a>(params: &'a mut EncoderParams, id: TensorId) -> &'a mut [f32] {
    match id {
        TensorId::TextEmbedding => &mut params.text_embedding,
        TensorId::AudioW => &mut params.audio_proj_w,
        TensorId::AudioB => &mut params.audio_proj_b,
        TensorId::TrunkW => &mut params.trunk_w,
        TensorId::TrunkB => &mut params.trunk_b,
        TensorId::Output => &mut params.output_proj,
    }
}

fn grad_at(grads: &super::train::ParamGrads, id: TensorId, idx: usize) -> f64 {
    match id {
        TensorId::TextEmbedding => grads.text_embedding[idx],
        TensorId::AudioW => grads.audio_proj_w[idx],
        TensorId::AudioB => grads.audio_proj_b[idx],
        TensorId::TrunkW => grads.trunk_w[idx],
        TensorId::TrunkB => grads.trunk_b[idx],
        TensorId::Output => grads.output_proj[idx],
    }
}

fn batch_loss(params: &EncoderParams, batch: &[&TrainPair], tau: f64) -> Result<f64> {
    batch_forward_backward(params, batch, tau, false).map(|(loss, _)| loss)
}

/// Compares analytic gradients of the batch loss against central finite
/// differences on a fixed sample of at least 100 parameter coordinates
/// (about 24 per tensor, text-embedding coordinates drawn from rows the
/// batch actually touches). Returns the maximum relative error.
pub fn grad_check(
    params: &EncoderParams,
    batch: &[TrainPair],
    tau: f64,
    epsilon: f64,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::EmptyInput("grad check requires a batch"));
    }
    if !(1e-6..=1e-3).contains(&epsilon) {
        return Err(Error::Validation(format!(
            "epsilon must be in [1e-6, 1e-3], got {epsilon}"
        )));
    }
    let refs: Vec<&TrainPair> = batch.iter().collect();
    let (_, analytic) = batch_forward_backward(params, &refs, tau, false)?;

    let d = params.dims;
    let mut coords: Vec<(TensorId, usize)> = Vec::new();
    let mut rng = rng_from_seed(derive_seed(SAMPLE_SEED, &["coords"]));
    let mut sample_from = |id: TensorId, len: usize, take: usize| {
        let mut all: Vec<usize> = (0..len).collect();
        all.shuffle(&mut rng);
        for &idx in all.iter().take(take) {
            coords.push((id, idx));
        }
    };
    sample_from(TensorId::AudioW, d.frame_dim * d.input_dim, 24);
    sample_from(TensorId::AudioB, d.input_dim, 24);
    sample_from(TensorId::TrunkW, d.input_dim * d.hidden_dim, 24);
    sample_from(TensorId::TrunkB, d.hidden_dim, 24);
    sample_from(TensorId::Output, d.hidden_dim * d.embed_dim, 24);

    // text-embedding rows the candidate names actually reach
    let mut touched: Vec<usize> = Vec::new();
    for pair in batch {
        for token in pair.positive.name.to_lowercase().split_whitespace() {
            for gram in char_trigrams(token) {
                touched.push(trigram_bucket(&gram, d.vocab));
            }
        }
    }
    touched.sort_unstable();
    touched.dedup();
    let mut text_coords: Vec<usize> = touched
        .iter()
        .flat_map(|&row| (0..d.input_dim).map(move |j| row * d.input_dim + j))
        .collect();
    text_coords.shuffle(&mut rng);
    for &idx in text_coords.iter().take(24) {
        coords.push((TensorId::TextEmbedding, idx));
    }

    let mut work = params.clone();
    let mut max_rel = 0.0f64;
    for &(id, idx) in &coords {
        let orig = tensor_mut(&mut work, id)[idx];
        let center = f64::from(orig);
        let plus = (center + epsilon) as f32;
        let minus = (center - epsilon) as f32;
        // use the deltas that survived f32 rounding
        let d_plus = f64::from(plus) - center;
        let d_minus = center - f64::from(minus);
        if d_plus + d_minus == 0.0 {
            return Err(Error::Validation(format!(
                "epsilon {epsilon} vanishes at parameter value {center}"
            )));
        }
        tensor_mut(&mut work, id)[idx] = plus;
        let loss_plus = batch_loss(&work, &refs, tau)?;
        tensor_mut(&mut work, id)[idx] = minus;
        let loss_minus = batch_loss(&work, &refs, tau)?;
        tensor_mut(&mut work, id)[idx] = orig;

        let numeric = (loss_plus - loss_minus) / (d_plus + d_minus);
        let exact = grad_at(&analytic, id, idx);
        let denom = numeric.abs().max(exact.abs()).max(1e-8);
        max_rel = max_rel.max((numeric - exact).abs() / denom);
    }
    Ok(max_rel)
}

/// Builds a seeded (params, batch) fixture for gradient checks: a small
/// synthetic pool and corpus provide `batch_size` real training pairs.
pub fn seeded_check_batch(seed: u64, batch_size: usize) -> Result<(EncoderParams, Vec<TrainPair>)> {
    let synth = SynthConfig {
        seed,
        n_entities: 25,
        n_dialogs: 4 + 2 * batch_size,
        user_turns_per_dialog: 2..=3,
        ..SynthConfig::default()
    };
    let pool = generate_entity_pool(&synth)?;
    let (corpus, frames) = generate_corpus(&synth, &pool)?;
    let mut pairs = training_pairs_from_corpus(&corpus, &frames, &pool)?;
    if pairs.len() < batch_size {
        return Err(Error::Validation(format!(
            "fixture produced only {} pairs, need {batch_size}",
            pairs.len()
        )));
    }
    pairs.truncate(batch_size);
    let params = EncoderParams::init(EncoderDims::default(), derive_seed(seed, &["params"]));
    Ok((params, pairs))
}
