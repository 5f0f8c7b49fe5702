//! Synthetic narrative-cluster generator.
//!
//! Each cluster is a group of items pushing one underlying claim: all of its
//! items share a narrative center on the unit sphere, a domain, and (under
//! the per-cluster rule) a label. Feature vectors are built so that the
//! label is recoverable from cluster identity but not from any linear
//! functional of a single item's features: the label is the parity of two
//! signs carried by one text coordinate and one image coordinate, and all
//! remaining coordinates are high-variance nuisance that dominates feature
//! cosine similarity.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::CorpusError;
use crate::seeding::rng_for;

use super::{Corpus, NewsItem, Split};

/// Amplitude of the label-carrying sign coordinate in each modality.
const SIGNAL_AMPLITUDE: f64 = 1.0;
/// Per-item noise on the sign coordinates.
const SIGNAL_NOISE: f64 = 0.25;
/// Spread of the per-cluster centers on nuisance coordinates.
const NUISANCE_CENTER_STD: f64 = 0.15;
/// Per-item noise on nuisance coordinates; large enough that feature
/// cosine carries almost no cluster information.
const NUISANCE_NOISE: f64 = 1.5;

const DOMAIN_NAMES: [&str; 9] = [
    "science",
    "military",
    "education",
    "international",
    "politics",
    "health",
    "finance",
    "entertainment",
    "society",
];

/// How labels are assigned to generated items.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabelRule {
    /// Every item of a cluster shares the cluster's label (sign parity).
    PerCluster,
    /// Label from a linear threshold on the item's own sign coordinates.
    FeatureThreshold,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub num_clusters: usize,
    pub items_per_cluster: usize,
    pub num_domains: usize,
    pub text_dim: usize,
    pub image_dim: usize,
    pub narrative_dim: usize,
    /// Std of the Gaussian perturbation around each narrative center
    /// (before re-normalization).
    pub noise_scale: f64,
    pub label_rule: LabelRule,
    pub seed: u64,
    pub train_fraction: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_clusters: 8,
            items_per_cluster: 50,
            num_domains: 4,
            text_dim: 16,
            image_dim: 16,
            narrative_dim: 64,
            noise_scale: 0.1,
            label_rule: LabelRule::PerCluster,
            seed: 7,
            train_fraction: 0.8,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), CorpusError> {
        let bad = |m: &str| Err(CorpusError::InvalidConfig(m.to_string()));
        if self.num_clusters == 0 {
            return bad("num_clusters must be >= 1");
        }
        if self.items_per_cluster == 0 {
            return bad("items_per_cluster must be >= 1");
        }
        if self.num_domains == 0 {
            return bad("num_domains must be >= 1");
        }
        if self.text_dim == 0 || self.image_dim == 0 || self.narrative_dim == 0 {
            return bad("feature dimensions must be >= 1");
        }
        if !self.noise_scale.is_finite() || self.noise_scale < 0.0 {
            return bad("noise_scale must be finite and non-negative");
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return bad("train_fraction must lie strictly between 0 and 1");
        }
        Ok(())
    }
}

/// Sign pattern of a cluster: one sign per modality, cycling over four
/// combinations. The per-cluster label is their parity, so no single
/// modality (and no linear readout) determines it.
fn cluster_signs(cluster: usize) -> (f64, f64) {
    match cluster % 4 {
        0 => (1.0, 1.0),
        1 => (1.0, -1.0),
        2 => (-1.0, 1.0),
        _ => (-1.0, -1.0),
    }
}

/// Label of a cluster under [`LabelRule::PerCluster`].
pub fn cluster_label(cluster: usize) -> u8 {
    let (s1, s2) = cluster_signs(cluster);
    u8::from(s1 * s2 < 0.0)
}

/// Domain name for a cluster (round-robin).
pub fn domain_name(cluster: usize, num_domains: usize) -> String {
    let idx = cluster % num_domains;
    DOMAIN_NAMES
        .get(idx)
        .map(|s| (*s).to_string())
        .unwrap_or_else(|| format!("domain_{}", idx + 1))
}

/// Parse the cluster index back out of a generated item id.
///
/// Generated ids have the shape `c{cluster:03}-n{item:04}`; this is a
/// stable contract used by test oracles.
pub fn cluster_index(item_id: &str) -> Option<usize> {
    let rest = item_id.strip_prefix('c')?;
    let (num, _) = rest.split_once('-')?;
    num.parse().ok()
}

fn unit_gaussian_vector<R: Rng>(dim: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let norm = crate::nn::l2_norm(&v);
        if norm > 1e-9 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Generate a clustered corpus plus its narrative embeddings.
///
/// Identical configs (including the seed) produce bitwise-identical output.
pub fn synth_generate(
    config: &SynthConfig,
) -> Result<(Corpus, BTreeMap<String, Vec<f64>>), CorpusError> {
    config.validate()?;
    let mut rng = rng_for(config.seed, "synth");

    // Narrative centers on the unit sphere.
    let centers: Vec<Vec<f64>> = (0..config.num_clusters)
        .map(|_| unit_gaussian_vector(config.narrative_dim, &mut rng))
        .collect();

    // Per-cluster nuisance centers on the non-sign coordinates.
    let nuisance_center = |rng: &mut rand_chacha::ChaCha12Rng, dim: usize| -> Vec<f64> {
        (0..dim.saturating_sub(1))
            .map(|_| NUISANCE_CENTER_STD * rng.sample::<f64, _>(StandardNormal))
            .collect()
    };
    let text_centers: Vec<Vec<f64>> = (0..config.num_clusters)
        .map(|_| nuisance_center(&mut rng, config.text_dim))
        .collect();
    let image_centers: Vec<Vec<f64>> = (0..config.num_clusters)
        .map(|_| nuisance_center(&mut rng, config.image_dim))
        .collect();

    let mut items = Vec::with_capacity(config.num_clusters * config.items_per_cluster);
    let mut embeddings = BTreeMap::new();

    for cluster in 0..config.num_clusters {
        let (s1, s2) = cluster_signs(cluster);
        let domain = domain_name(cluster, config.num_domains);
        let claim = format!(
            "Narrative thread {cluster}: a recurring {domain} claim pushed by many coordinated posts."
        );
        for j in 0..config.items_per_cluster {
            let id = format!("c{cluster:03}-n{j:04}");

            let mut text_features = Vec::with_capacity(config.text_dim);
            text_features
                .push(s1 * SIGNAL_AMPLITUDE + SIGNAL_NOISE * rng.sample::<f64, _>(StandardNormal));
            for &c in &text_centers[cluster] {
                text_features.push(c + NUISANCE_NOISE * rng.sample::<f64, _>(StandardNormal));
            }

            let mut image_features = Vec::with_capacity(config.image_dim);
            image_features
                .push(s2 * SIGNAL_AMPLITUDE + SIGNAL_NOISE * rng.sample::<f64, _>(StandardNormal));
            for &c in &image_centers[cluster] {
                image_features.push(c + NUISANCE_NOISE * rng.sample::<f64, _>(StandardNormal));
            }

            let mut emb: Vec<f64> = centers[cluster]
                .iter()
                .map(|&c| c + config.noise_scale * rng.sample::<f64, _>(StandardNormal))
                .collect();
            let norm = crate::nn::l2_norm(&emb);
            // noise_scale = 0 keeps the exact center; a cancellation to zero
            // norm cannot happen since centers are unit vectors
            emb.iter_mut().for_each(|x| *x /= norm);

            let label = match config.label_rule {
                LabelRule::PerCluster => cluster_label(cluster),
                LabelRule::FeatureThreshold => u8::from(text_features[0] + image_features[0] > 0.0),
            };

            items.push(NewsItem {
                id: id.clone(),
                domain: domain.clone(),
                label,
                split: Split::Train, // reassigned below
                text_features,
                image_features,
                narrative_text: Some(claim.clone()),
            });
            embeddings.insert(id, emb);
        }
    }

    // Seeded split assignment: exact train count, both splits non-empty.
    let n = items.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let want = (n as f64 * config.train_fraction).round() as usize;
    let n_train = want.clamp(1, n.saturating_sub(1).max(1));
    for (rank, &pos) in order.iter().enumerate() {
        items[pos].split = if rank < n_train {
            Split::Train
        } else {
            Split::Test
        };
    }

    let corpus = Corpus::from_items(items)?;
    Ok((corpus, embeddings))
}
