//! Training loop, composite objective, evaluation, and ablation variants.
//!
//! The loop is single-threaded and fully seeded: batch shuffling,
//! reparameterization noise, and retrieval-noise injection each draw from
//! their own labeled stream, so identical configs produce bitwise-identical
//! step logs and checkpoints.

mod gradcheck;
mod metrics;
mod opt;
mod step;

pub use gradcheck::{grad_check, grad_check_with_fault, GradCheckReport, GroupCheck, LossSelector};
pub use metrics::{auc_mann_whitney, ConfusionCounts, DomainMetrics, EvalReport};
pub use opt::{scheduled_lr, AdamW, Schedule};

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Split};
use crate::error::TrainError;
use crate::model::{Model, ModelConfig};
use crate::narrative::NarrativeStore;
use crate::retrieval::{
    feature_retrieve, homogeneous_retrieve, inject_retrieval_noise, sra_select,
};
use crate::seeding::rng_for;
use step::{forward_backward, CiblMode, LossWeights, StepItem};

/// Hyperparameters of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub warmup_steps: u64,
    pub schedule: Schedule,
    pub epochs: u64,
    pub batch_size: usize,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub k_in: usize,
    pub k_out: usize,
    pub tau: f64,
    /// Latent dimension d_z of the variational code.
    pub latent_dim: usize,
    pub seed: u64,
    pub bce_epsilon: f64,
    /// Fraction of each retrieved set replaced with random train items.
    pub noise_ratio: f64,
    /// Optional hard cap on optimizer steps (the epoch budget otherwise).
    pub max_steps: Option<u64>,
    /// Let gradients flow into candidate encodings through the fusion
    /// weighted sum (stopped by default).
    pub backprop_neighbors: bool,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Architecture knobs; feature/narrative dims and d_z are overridden
    /// from the corpus, store, and `latent_dim` at train time.
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            weight_decay: 0.01,
            warmup_steps: 100,
            schedule: Schedule::Cosine,
            epochs: 3,
            batch_size: 4,
            lambda1: 0.2,
            lambda2: 0.1,
            lambda3: 0.2,
            k_in: 3,
            k_out: 2,
            tau: 0.1,
            latent_dim: 32,
            seed: 0,
            bce_epsilon: 1e-7,
            noise_ratio: 0.0,
            max_steps: None,
            backprop_neighbors: false,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.to_string()));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive and finite");
        }
        if self.weight_decay < 0.0 {
            return bad("weight_decay must be non-negative");
        }
        if self.batch_size < 2 {
            return bad("batch_size must be at least 2 (in-batch negatives)");
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.lambda1 < 0.0 || self.lambda2 < 0.0 || self.lambda3 < 0.0 {
            return bad("loss weights must be non-negative");
        }
        if !(self.tau > 0.0) {
            return bad("tau must be positive");
        }
        if self.latent_dim == 0 {
            return bad("latent_dim must be at least 1");
        }
        if !(self.bce_epsilon > 0.0 && self.bce_epsilon < 0.5) {
            return bad("bce_epsilon must lie in (0, 0.5)");
        }
        if !(0.0..=1.0).contains(&self.noise_ratio) {
            return bad("noise_ratio must lie in [0, 1]");
        }
        Ok(())
    }
}

/// Components of one step's objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub alpha: f64,
    pub align: f64,
    pub recon: f64,
    pub compress: f64,
    pub total: f64,
}

/// Batch-mean binary cross-entropy with predictions clamped to
/// `[eps, 1-eps]`.
pub fn bce_loss(predictions: &[f64], labels: &[f64], eps: f64) -> Result<f64, TrainError> {
    if predictions.len() != labels.len() {
        return Err(TrainError::BatchMismatch {
            predictions: predictions.len(),
            labels: labels.len(),
        });
    }
    if predictions.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    let mut sum = 0.0;
    for (&p, &y) in predictions.iter().zip(labels) {
        let p = p.clamp(eps, 1.0 - eps);
        sum -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
    }
    Ok(sum / predictions.len() as f64)
}

/// Compose the weighted objective, keeping the components for logging.
pub fn total_loss(
    alpha: f64,
    align: f64,
    recon: f64,
    compress: f64,
    lambda1: f64,
    lambda2: f64,
    lambda3: f64,
) -> LossBreakdown {
    LossBreakdown {
        alpha,
        align,
        recon,
        compress,
        total: alpha + lambda1 * align + lambda2 * recon + lambda3 * compress,
    }
}

/// One structured log record per optimizer step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub lr: f64,
    pub alpha: f64,
    pub align: f64,
    pub recon: f64,
    pub compress: f64,
    pub total: f64,
}

/// Write a step log as newline-delimited records.
pub fn write_step_log(path: impl AsRef<Path>, log: &[StepRecord]) -> std::io::Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for record in log {
        writeln!(
            w,
            "{}",
            serde_json::to_string(record).expect("records serialize")
        )?;
    }
    w.flush()
}

/// Serialize a step log to NDJSON bytes (used for bitwise comparisons).
pub fn step_log_bytes(log: &[StepRecord]) -> Vec<u8> {
    let mut out = Vec::new();
    for record in log {
        out.extend_from_slice(
            serde_json::to_string(record)
                .expect("records serialize")
                .as_bytes(),
        );
        out.push(b'\n');
    }
    out
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainStats {
    pub demo_encodes: u64,
    pub solo_encodes: u64,
    pub sra_selections: u64,
    pub retrievals: u64,
    pub steps: u64,
}

pub struct TrainOutcome {
    pub model: Model,
    pub log: Vec<StepRecord>,
    pub stats: TrainStats,
}

/// Ablation variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    Full,
    /// Classify from the bare item representation; no demonstration.
    NoSra,
    /// Retrieval restricted to the query's domain (k_in = 5, k_out = 0).
    AnaInDomainOnly,
    /// Retrieval ranked by image/text feature similarity instead of
    /// narrative similarity.
    AnaFeatureSelect,
    /// `z := h` in the alignment loss; recon/compress dropped.
    CiblForceAlign,
    /// Plain negative-free contrastive pull between `h` and `h⁺`.
    CiblSimpleLoss,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Full,
        Variant::NoSra,
        Variant::AnaInDomainOnly,
        Variant::AnaFeatureSelect,
        Variant::CiblForceAlign,
        Variant::CiblSimpleLoss,
    ];
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Variant::Full => "full",
            Variant::NoSra => "-SRA",
            Variant::AnaInDomainOnly => "-ANA (In-domain. only)",
            Variant::AnaFeatureSelect => "-ANA (CLIP. select)",
            Variant::CiblForceAlign => "-CIBL (Force. Align)",
            Variant::CiblSimpleLoss => "-CIBL (Simple. Loss)",
        };
        write!(f, "{name}")
    }
}

impl FromStr for Variant {
    type Err = TrainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "full" | "Full" => Ok(Variant::Full),
            "-SRA" | "sra" | "no-sra" => Ok(Variant::NoSra),
            "-ANA (In-domain. only)" | "ana-in-domain" => Ok(Variant::AnaInDomainOnly),
            "-ANA (CLIP. select)" | "ana-feature-select" => Ok(Variant::AnaFeatureSelect),
            "-CIBL (Force. Align)" | "cibl-force-align" => Ok(Variant::CiblForceAlign),
            "-CIBL (Simple. Loss)" | "cibl-simple-loss" => Ok(Variant::CiblSimpleLoss),
            other => Err(TrainError::UnknownVariant(other.to_string())),
        }
    }
}

/// Which representation feeds the classifier at evaluation time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClassificationPath {
    Demonstration,
    Solo,
}

impl Variant {
    pub fn classification_path(self) -> ClassificationPath {
        match self {
            Variant::NoSra => ClassificationPath::Solo,
            _ => ClassificationPath::Demonstration,
        }
    }

    fn cibl_mode(self) -> CiblMode {
        match self {
            Variant::CiblForceAlign => CiblMode::ForceAlign,
            Variant::CiblSimpleLoss => CiblMode::SimpleContrastive,
            _ => CiblMode::Full,
        }
    }
}

/// Architecture config resolved against a corpus and store.
pub fn resolve_model_config(
    cfg: &TrainConfig,
    corpus: &Corpus,
    store: &NarrativeStore,
) -> ModelConfig {
    ModelConfig {
        feature_dim: corpus.text_dim() + corpus.image_dim(),
        narrative_dim: store.dim(),
        latent_dim: cfg.latent_dim,
        tau: cfg.tau,
        ..cfg.model.clone()
    }
}

/// Train the full model.
pub fn train(
    corpus: &Corpus,
    store: &NarrativeStore,
    cfg: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    train_variant(corpus, store, cfg, Variant::Full)
}

/// Train one pipeline variant.
pub fn train_variant(
    corpus: &Corpus,
    store: &NarrativeStore,
    cfg: &TrainConfig,
    variant: Variant,
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    let train_pos = corpus.split_positions(Split::Train).to_vec();
    if train_pos.is_empty() {
        return Err(TrainError::EmptyTrainSplit);
    }
    if train_pos.len() < cfg.batch_size {
        return Err(TrainError::TrainSplitTooSmall {
            got: train_pos.len(),
            batch: cfg.batch_size,
        });
    }
    for &p in &train_pos {
        let id = &corpus.item_at(p).id;
        if store.embedding(id).is_none() {
            return Err(TrainError::StoreGap { id: id.clone() });
        }
    }

    let (k_in, k_out) = match variant {
        Variant::AnaInDomainOnly => (5, 0),
        _ => (cfg.k_in, cfg.k_out),
    };

    let mcfg = resolve_model_config(cfg, corpus, store);
    let mut model = Model::init(&mcfg, cfg.seed);

    // Demonstrations and retrieval sets are pure functions of the frozen
    // corpus/store, so compute them once up front.
    let mut stats = TrainStats::default();
    let use_sra = variant != Variant::NoSra;
    let mut demos: Vec<Option<usize>> = Vec::with_capacity(train_pos.len());
    let mut retrievals: Vec<Vec<String>> = Vec::with_capacity(train_pos.len());
    for &p in &train_pos {
        let item = corpus.item_at(p);
        if use_sra {
            let choice = sra_select(corpus, item)?;
            stats.sra_selections += 1;
            demos.push(Some(
                corpus
                    .position(&choice.chosen_id)
                    .expect("demo id in corpus"),
            ));
        } else {
            demos.push(None);
        }
        let result = match variant {
            Variant::AnaFeatureSelect => feature_retrieve(corpus, &item.id, k_in, k_out)?,
            _ => homogeneous_retrieve(store, corpus, &item.id, k_in, k_out)?,
        };
        stats.retrievals += 1;
        retrievals.push(result.union().into_iter().map(|s| s.id).collect());
    }

    let steps_per_epoch = (train_pos.len() / cfg.batch_size) as u64;
    if steps_per_epoch == 0 {
        return Err(TrainError::TrainSplitTooSmall {
            got: train_pos.len(),
            batch: cfg.batch_size,
        });
    }
    let total_steps = (cfg.epochs * steps_per_epoch)
        .min(cfg.max_steps.unwrap_or(u64::MAX))
        .max(1);

    let weights = LossWeights {
        lambda1: cfg.lambda1,
        lambda2: cfg.lambda2,
        lambda3: cfg.lambda3,
        tau: cfg.tau,
        bce_eps: cfg.bce_epsilon,
        include_alpha: true,
        mode: variant.cibl_mode(),
        backprop_neighbors: cfg.backprop_neighbors,
    };
    let mut opt = AdamW::new(
        cfg.adam_beta1,
        cfg.adam_beta2,
        cfg.adam_eps,
        cfg.weight_decay,
    );
    let mut rng_shuffle = rng_for(cfg.seed, "shuffle");
    let mut rng_reparam = rng_for(cfg.seed, "reparam");
    let mut rng_noise = rng_for(cfg.seed, "retrieval-noise");

    let mut log = Vec::new();
    let mut step: u64 = 0;
    'outer: for _ in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..train_pos.len()).collect();
        order.shuffle(&mut rng_shuffle);
        for chunk in order.chunks_exact(cfg.batch_size) {
            step += 1;
            let mut batch = Vec::with_capacity(chunk.len());
            for &ti in chunk {
                let pos = train_pos[ti];
                let item = corpus.item_at(pos);
                let mut cand_ids = retrievals[ti].clone();
                if cfg.noise_ratio > 0.0 {
                    inject_retrieval_noise(
                        &mut cand_ids,
                        corpus,
                        &item.id,
                        cfg.noise_ratio,
                        &mut rng_noise,
                    );
                }
                let candidates = cand_ids
                    .iter()
                    .map(|id| corpus.get(id).expect("candidate id in corpus"))
                    .collect();
                let candidate_embeddings = cand_ids
                    .iter()
                    .map(|id| {
                        store
                            .embedding(id)
                            .expect("candidate embedding in store")
                            .to_vec()
                    })
                    .collect();
                let eps: Vec<f64> = (0..cfg.latent_dim)
                    .map(|_| rng_reparam.sample(StandardNormal))
                    .collect();
                batch.push(StepItem {
                    item,
                    demo: demos[ti].map(|p| corpus.item_at(p)),
                    candidates,
                    query_embedding: store.embedding(&item.id).map(<[f64]>::to_vec),
                    candidate_embeddings,
                    eps,
                });
            }
            let lr = scheduled_lr(cfg.schedule, cfg.lr, step, cfg.warmup_steps, total_steps);
            let (breakdown, counts) = forward_backward(&mut model, &batch, &weights)?;
            if !breakdown.total.is_finite() {
                return Err(TrainError::NonFiniteLoss { step });
            }
            let mut refs = model.param_refs();
            opt.step(&mut refs, lr);
            drop(refs);
            stats.demo_encodes += counts.demo_encodes;
            stats.solo_encodes += counts.solo_encodes;
            log.push(StepRecord {
                step,
                lr,
                alpha: breakdown.alpha,
                align: breakdown.align,
                recon: breakdown.recon,
                compress: breakdown.compress,
                total: breakdown.total,
            });
            if step >= total_steps {
                break 'outer;
            }
        }
    }
    stats.steps = step;

    Ok(TrainOutcome { model, log, stats })
}

/// Score a split: demonstration selection (or bare encoding), classify at
/// threshold 0.5, and aggregate Acc/F1/AUC plus per-domain metrics.
pub fn evaluate(
    model: &Model,
    corpus: &Corpus,
    split: Split,
    path: ClassificationPath,
) -> Result<EvalReport, TrainError> {
    let positions = corpus.split_positions(split);
    if positions.is_empty() {
        return Err(TrainError::EmptySplit {
            split: split.to_string(),
        });
    }
    let mut records = Vec::with_capacity(positions.len());
    for &p in positions {
        let item = corpus.item_at(p);
        let h = match path {
            ClassificationPath::Demonstration => {
                let choice = sra_select(corpus, item)?;
                let demo = corpus.get(&choice.chosen_id).expect("demo id in corpus");
                model.encoder.encode_with_demo(item, demo)?
            }
            ClassificationPath::Solo => model.encoder.encode(item)?,
        };
        let out = model.head.classify(&h, crate::encoder::DEFAULT_PROB_EPS)?;
        records.push((item.domain.clone(), item.label, out.prob));
    }
    Ok(EvalReport::from_scores(&split.to_string(), &records, 0.5))
}

/// Outcome of one ablation run.
pub struct AblationRun {
    pub variant: Variant,
    pub report: EvalReport,
    pub outcome: TrainOutcome,
}

/// Train a variant and evaluate it on the test split with the matching
/// classification path.
pub fn ablate(
    corpus: &Corpus,
    store: &NarrativeStore,
    cfg: &TrainConfig,
    variant: Variant,
) -> Result<AblationRun, TrainError> {
    let outcome = train_variant(corpus, store, cfg, variant)?;
    let report = evaluate(
        &outcome.model,
        corpus,
        Split::Test,
        variant.classification_path(),
    )?;
    Ok(AblationRun {
        variant,
        report,
        outcome,
    })
}
