// temporary probe for tuning; will be replaced by the acceptance suite

use retrack_core::data::FrameStore;
use retrack_core::encoder::{
    cosine_score, encode_unit, train_retriever, training_pairs_from_corpus, EncoderDims,
    EncoderInput, EncoderParams, TrainConfig,
};
use retrack_core::retriever::{evaluate_retriever, EntityIndex, SelectionPolicy};
use retrack_core::rng::derive_seed;
use retrack_core::synth::{generate_corpus, generate_entity_pool, SynthConfig};
use retrack_core::{Dialog, EntityPool};

fn eval_items(
    corpus: &[Dialog],
    frames: &FrameStore,
    limit: usize,
) -> Vec<(retrack_core::FrameSequence, Vec<u32>)> {
    let mut items = Vec::new();
    'outer: for dialog in corpus {
        for turn in dialog.user_turns() {
            let key = turn.frames_key.as_deref().unwrap();
            let refs: Vec<u32> = turn.mentions.iter().filter_map(|m| m.entity_id).collect();
            items.push((frames.get(key).unwrap().clone(), refs));
            if items.len() >= limit {
                break 'outer;
            }
        }
    }
    items
}

fn run_config(label: &str, synth: SynthConfig, train_cfg: TrainConfig) {
    use retrack_core::retriever::search_exact;
    use std::collections::BTreeMap;

    let t0 = std::time::Instant::now();
    let pool: EntityPool = generate_entity_pool(&synth).unwrap();
    let (train_corpus, train_frames) = generate_corpus(&synth, &pool).unwrap();
    let mut pairs = training_pairs_from_corpus(&train_corpus, &train_frames, &pool).unwrap();
    pairs.truncate(2000);

    let params0 = EncoderParams::init(EncoderDims::default(), derive_seed(42, &["init"]));
    let (params, history) = train_retriever(&pairs, &params0, &train_cfg).unwrap();

    let eval_synth = SynthConfig {
        seed: derive_seed(42, &["eval"]),
        n_dialogs: 200,
        ..synth.clone()
    };
    let (eval_corpus, eval_frames) = generate_corpus(&eval_synth, &pool).unwrap();
    let items = eval_items(&eval_corpus, &eval_frames, 500);

    let index = EntityIndex::build(&params, &pool).unwrap();
    let report = evaluate_retriever(
        &index,
        &params,
        &items,
        &[1, 3, 5, 10, 20],
        &SelectionPolicy::default(),
    )
    .unwrap();

    // positive-pair similarity distribution on eval queries
    let mut pos_sims: Vec<f64> = Vec::new();
    for (frames, refs) in &items {
        if refs.is_empty() {
            continue;
        }
        let q = encode_unit(&params, EncoderInput::Audio(frames)).unwrap();
        for id in refs {
            let pos = index
                .pool()
                .entities()
                .iter()
                .position(|e| e.id == *id)
                .unwrap();
            pos_sims.push(cosine_score(&q, &index.embeddings()[pos]));
        }
    }
    pos_sims.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let pct = |p: f64| pos_sims[((pos_sims.len() - 1) as f64 * p) as usize];

    // recall@10 per category, split by mentions-per-query
    let mut cat_hits: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for (frames, refs) in &items {
        if refs.is_empty() {
            continue;
        }
        let q = encode_unit(&params, EncoderInput::Audio(frames)).unwrap();
        let top: Vec<u32> = search_exact(&index, &q, 10)
            .into_iter()
            .map(|r| r.entity_id)
            .collect();
        for id in refs {
            let cat = index.pool().get(*id).unwrap().category.as_str();
            let key = format!("{cat}/{}", if refs.len() > 1 { "pair" } else { "single" });
            let e = cat_hits.entry(key).or_insert((0, 0));
            e.1 += 1;
            if top.contains(id) {
                e.0 += 1;
            }
        }
    }

    println!(
        "== {label}: loss {:.3} -> {:.3}, elapsed {:?}",
        history[0],
        history[history.len() - 1],
        t0.elapsed()
    );
    for (cat, (hit, total)) in &cat_hits {
        println!("  recall@10 {cat}: {:.3} ({hit}/{total})", *hit as f64 / *total as f64);
    }
    println!(
        "positive sims: p10 {:.3} p25 {:.3} p50 {:.3} p75 {:.3} p90 {:.3}; frac>=0.78 {:.3}",
        pct(0.10),
        pct(0.25),
        pct(0.50),
        pct(0.75),
        pct(0.90),
        pos_sims.iter().filter(|&&s| s >= 0.78).count() as f64 / pos_sims.len() as f64
    );
    println!("{}", report.render_text());

    // criterion-4 style check: partitioned search vs exact
    {
        use retrack_core::retriever::PartitionedIndex;
        let pindex = PartitionedIndex::build(index.clone(), 16, 4, 42).unwrap();
        let mut overlap = 0usize;
        let mut total = 0usize;
        for (frames, _) in &items {
            let q = encode_unit(&params, EncoderInput::Audio(frames)).unwrap();
            let exact: Vec<u32> = search_exact(&index, &q, 10).into_iter().map(|r| r.entity_id).collect();
            let part: Vec<u32> = pindex.search(&q, 10).into_iter().map(|r| r.entity_id).collect();
            overlap += part.iter().filter(|id| exact.contains(id)).count();
            total += exact.len();
        }
        println!("partitioned recall@10 vs exact: {:.4}", overlap as f64 / total as f64);
    }

    // criterion-6 style check: baseline vs biased end to end
    {
        use retrack_core::harness::{run_corpus, BiasedChannelPredictor, ChannelPredictor, Retrieval, SearchIndex};
        use retrack_core::metrics::{build_report, default_category_map};
        use retrack_core::synth::ChannelConfig;
        let channel = ChannelConfig::with_total_rate(synth.other_char_error_rate, derive_seed(42, &["channel"]));
        let baseline = ChannelPredictor { channel, entity_rate: synth.entity_char_error_rate };
        let biased = BiasedChannelPredictor { channel, entity_rate: synth.entity_char_error_rate, max_normalized_edit: 0.3 };
        let eval_synth = SynthConfig { seed: derive_seed(42, &["eval"]), n_dialogs: 200, ..synth.clone() };
        let (eval_corpus, eval_frames) = generate_corpus(&eval_synth, &pool).unwrap();
        let search = SearchIndex::Exact(index.clone());
        let retrieval = Retrieval { index: &search, params: &params, policy: SelectionPolicy::default() };
        let run_base = run_corpus(&baseline, &eval_corpus, &eval_frames, None, 7, 1).unwrap();
        let run_aug = run_corpus(&biased, &eval_corpus, &eval_frames, Some(&retrieval), 7, 1).unwrap();
        let report = build_report(
            &[("baseline".to_string(), &run_base), ("augmented".to_string(), &run_aug)],
            &eval_corpus,
            &default_category_map(),
            false,
        ).unwrap();
        println!("{}", report.render_text());
    }
}

#[test]
fn probe_defaults() {
    run_config(
        "defaults (noise on, 20 epochs)",
        SynthConfig {
            seed: 42,
            n_entities: 500,
            n_dialogs: 700,
            ..SynthConfig::default()
        },
        TrainConfig { seed: 42, ..TrainConfig::default() },
    );
}

#[test]
fn probe_grid() {
    let synth = SynthConfig {
        seed: 42,
        n_entities: 500,
        n_dialogs: 700,
        ..SynthConfig::default()
    };
    for (tau, epochs, lr, symmetric) in [(0.20, 60, 2e-3, true)] {
        run_config(
            &format!("tau {tau} epochs {epochs} lr {lr} sym {symmetric}"),
            synth.clone(),
            TrainConfig {
                seed: 42,
                temperature: tau,
                epochs,
                learning_rate: lr,
                symmetric,
                ..TrainConfig::default()
            },
        );
    }
}
