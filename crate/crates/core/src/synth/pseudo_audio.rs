//! Pseudo-audio synthesis: text to frame sequences.
//!
//! Each character trigram of the lowercased text maps to a fixed base
//! vector obtained by hashing (FNV-1a 64 over the trigram's UTF-8 bytes
//! with the coordinate index mixed in, scaled to [-1, 1]). The base vector
//! is emitted 1-3 times (seeded jitter) and each emission is perturbed by
//! Gaussian noise. The mapping from a trigram to its base vector never
//! depends on the seed, which is what lets an encoder learn to read the
//! "audio" back into text.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::data::FrameSequence;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from_seed, Fnv1a64};
use crate::text::char_trigrams;

use super::SynthConfig;

/// The seed-independent base vector of a trigram.
pub fn trigram_base_vector(gram: &str, dim: usize) -> Vec<f32> {
    (0..dim)
        .map(|coord| {
            let mut h = Fnv1a64::new();
            h.write(gram.as_bytes());
            h.write(&(coord as u32).to_le_bytes());
            // top 53 bits -> [0,1) -> [-1,1)
            let unit = (h.finish() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
            (unit * 2.0 - 1.0) as f32
        })
        .collect()
}

/// Synthesizes a frame sequence for `text`. Deterministic in
/// `(text, config, per_call_seed)`; with `frame_noise_sigma == 0` and
/// jitter disabled the output depends on the text alone.
pub fn synthesize_frames(
    text: &str,
    config: &SynthConfig,
    per_call_seed: u64,
) -> Result<FrameSequence> {
    if text.is_empty() {
        return Err(Error::EmptyInput("cannot synthesize frames for empty text"));
    }
    let dim = config.frame_dim;
    let grams = char_trigrams(&text.to_lowercase());
    // separate streams so a sigma=0 rerun reproduces the repeat pattern
    let mut repeat_rng = rng_from_seed(derive_seed(per_call_seed, &["repeat"]));
    let mut noise_rng = rng_from_seed(derive_seed(per_call_seed, &["noise"]));
    let sigma = config.frame_noise_sigma;

    let mut data = Vec::with_capacity(grams.len() * dim);
    for gram in &grams {
        let base = trigram_base_vector(gram, dim);
        let repeats = if config.frame_jitter {
            repeat_rng.gen_range(1..=3)
        } else {
            1
        };
        for _ in 0..repeats {
            for &b in &base {
                let noise = if sigma > 0.0 {
                    let n: f64 = noise_rng.sample(StandardNormal);
                    (n * sigma) as f32
                } else {
                    0.0
                };
                data.push(b + noise);
            }
        }
    }
    FrameSequence::new(dim, data)
}
