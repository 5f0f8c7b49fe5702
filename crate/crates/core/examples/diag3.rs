//! Lambda1 x noise grid, 20 runs per cell.
use ramm_core::corpus::{synth_generate, Split, SynthConfig};
use ramm_core::narrative::NarrativeStore;
use ramm_core::training::{
    evaluate, train_variant, ClassificationPath, Schedule, TrainConfig, Variant,
};
use ramm_core::{Corpus, ModelConfig};

fn synth(seed: u64) -> (Corpus, NarrativeStore) {
    let cfg = SynthConfig {
        num_clusters: 8,
        items_per_cluster: 50,
        num_domains: 4,
        text_dim: 8,
        image_dim: 8,
        narrative_dim: 64,
        noise_scale: 0.1,
        seed,
        train_fraction: 0.8,
        ..SynthConfig::default()
    };
    let (corpus, embeddings) = synth_generate(&cfg).unwrap();
    (
        corpus,
        NarrativeStore::from_embeddings(&embeddings).unwrap(),
    )
}

fn cfg_b(seed: u64, l1: f64) -> TrainConfig {
    TrainConfig {
        lr: 2e-2,
        weight_decay: 0.1,
        warmup_steps: 20,
        schedule: Schedule::Cosine,
        epochs: 1000,
        max_steps: Some(500),
        batch_size: 64,
        lambda1: l1,
        latent_dim: 32,
        seed,
        model: ModelConfig::default(),
        ..TrainConfig::default()
    }
}

fn main() {
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let tasks: Vec<(Corpus, NarrativeStore)> = (0..5).map(synth).collect();
    for l1 in [0.35f64, 0.5, 1.0] {
        // margin at this lambda1 (5 corpus seeds, 1 train seed each)
        let mut fulls = Vec::new();
        let mut margins = Vec::new();
        for (ci, (corpus, store)) in tasks.iter().enumerate() {
            let cfg = cfg_b(ci as u64, l1);
            let acc = |v| {
                let o = train_variant(corpus, store, &cfg, v).unwrap();
                evaluate(
                    &o.model,
                    corpus,
                    Split::Test,
                    ClassificationPath::Demonstration,
                )
                .unwrap()
                .accuracy
            };
            let f = acc(Variant::Full);
            fulls.push(f);
            margins.push(f - acc(Variant::AnaFeatureSelect));
        }
        println!(
            "l1={l1}: full mean {:.4} min {:.4} margin {:+.4}",
            mean(&fulls),
            fulls.iter().cloned().fold(f64::INFINITY, f64::min),
            mean(&margins)
        );
        for p in [0.0f64, 0.2, 0.4, 0.6] {
            let mut accs = Vec::new();
            for (ci, (corpus, store)) in tasks.iter().enumerate() {
                for t in 0..4u64 {
                    let mut cfg = cfg_b(ci as u64 + 1000 * t, l1);
                    cfg.noise_ratio = p;
                    let o = train_variant(corpus, store, &cfg, Variant::Full).unwrap();
                    accs.push(
                        evaluate(
                            &o.model,
                            corpus,
                            Split::Test,
                            ClassificationPath::Demonstration,
                        )
                        .unwrap()
                        .accuracy,
                    );
                }
            }
            println!("  l1={l1} p={p:.1}: mean {:.4}", mean(&accs));
        }
    }
}
