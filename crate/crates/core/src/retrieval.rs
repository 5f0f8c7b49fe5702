//! Domain-aware narrative retrieval and demonstration selection.
//!
//! Both operations scan the train split exactly (no approximate index) and
//! break score ties by ascending item id, so results are independent of
//! corpus storage order. The query is always excluded from its own
//! candidate pool, and only train items are ever retrieved, for queries
//! from either split. `oracle` holds naive full-sort reimplementations
//! used as test oracles.

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, NewsItem, Split};
use crate::error::RetrievalError;
use crate::narrative::NarrativeStore;

/// Cosine similarity in `[-1, 1]`.
pub fn cosine_sim(a: &[f64], b: &[f64]) -> Result<f64, RetrievalError> {
    if a.len() != b.len() {
        return Err(RetrievalError::DimensionMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(RetrievalError::ZeroVector { id: String::new() });
    }
    Ok(dot / (na.sqrt() * nb.sqrt()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredId {
    pub id: String,
    pub score: f64,
}

/// Ranking order: score descending, ties by ascending id.
fn ranks_before(a: &ScoredId, b: &ScoredId) -> bool {
    match b.score.partial_cmp(&a.score).expect("finite scores") {
        std::cmp::Ordering::Less => true,
        std::cmp::Ordering::Greater => false,
        std::cmp::Ordering::Equal => a.id < b.id,
    }
}

/// Homogeneous-set retrieval output: top in-domain and out-of-domain
/// train items by narrative similarity, query excluded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub query_id: String,
    pub in_domain: Vec<ScoredId>,
    pub out_domain: Vec<ScoredId>,
}

impl RetrievalResult {
    /// Union of both lists, merged preserving rank order.
    pub fn union(&self) -> Vec<ScoredId> {
        let mut all: Vec<ScoredId> = self
            .in_domain
            .iter()
            .chain(&self.out_domain)
            .cloned()
            .collect();
        all.sort_by(|a, b| {
            b.score
                .partial_cmp(&a.score)
                .expect("finite scores")
                .then_with(|| a.id.cmp(&b.id))
        });
        all
    }
}

/// Bounded insertion keeping the top `k` entries under the ranking order.
fn push_top_k(list: &mut Vec<ScoredId>, entry: ScoredId, k: usize) {
    if k == 0 {
        return;
    }
    let pos = list.partition_point(|e| ranks_before(e, &entry));
    if pos < k {
        list.insert(pos, entry);
        list.truncate(k);
    }
}

/// Similarity provider for ranked retrieval.
trait Scorer {
    fn score(&self, candidate: &NewsItem) -> Result<f64, RetrievalError>;
}

struct NarrativeScorer<'a> {
    store: &'a NarrativeStore,
    query: &'a [f64],
}

impl Scorer for NarrativeScorer<'_> {
    fn score(&self, candidate: &NewsItem) -> Result<f64, RetrievalError> {
        let emb = self.store.embedding(&candidate.id).ok_or_else(|| {
            RetrievalError::MissingEmbedding {
                id: candidate.id.clone(),
            }
        })?;
        cosine_sim(self.query, emb).map_err(|e| tag_zero(e, &candidate.id))
    }
}

struct FeatureScorer<'a> {
    query: &'a NewsItem,
}

impl Scorer for FeatureScorer<'_> {
    fn score(&self, candidate: &NewsItem) -> Result<f64, RetrievalError> {
        feature_similarity(self.query, candidate)
    }
}

fn tag_zero(e: RetrievalError, id: &str) -> RetrievalError {
    match e {
        RetrievalError::ZeroVector { .. } => RetrievalError::ZeroVector { id: id.to_string() },
        other => other,
    }
}

/// Mean of per-modality feature cosines, the score used for demonstration
/// selection and for the feature-similarity retrieval variant.
pub fn feature_similarity(query: &NewsItem, candidate: &NewsItem) -> Result<f64, RetrievalError> {
    let sim_v = cosine_sim(&query.image_features, &candidate.image_features)
        .map_err(|e| tag_zero(e, &candidate.id))?;
    let sim_t = cosine_sim(&query.text_features, &candidate.text_features)
        .map_err(|e| tag_zero(e, &candidate.id))?;
    Ok((sim_v + sim_t) / 2.0)
}

fn retrieve_with<S: Scorer>(
    scorer: &S,
    corpus: &Corpus,
    query_id: &str,
    query_domain: &str,
    k_in: usize,
    k_out: usize,
) -> Result<RetrievalResult, RetrievalError> {
    let mut in_domain = Vec::new();
    let mut out_domain = Vec::new();
    for candidate in corpus.split_items(Split::Train) {
        if candidate.id == query_id {
            continue;
        }
        let entry = ScoredId {
            id: candidate.id.clone(),
            score: scorer.score(candidate)?,
        };
        if candidate.domain == query_domain {
            push_top_k(&mut in_domain, entry, k_in);
        } else {
            push_top_k(&mut out_domain, entry, k_out);
        }
    }
    Ok(RetrievalResult {
        query_id: query_id.to_string(),
        in_domain,
        out_domain,
    })
}

/// Top `k_in` same-domain and `k_out` other-domain train items by narrative
/// cosine. Lists come back shorter than `k` when candidates are scarce.
pub fn homogeneous_retrieve(
    store: &NarrativeStore,
    corpus: &Corpus,
    query_id: &str,
    k_in: usize,
    k_out: usize,
) -> Result<RetrievalResult, RetrievalError> {
    let query_emb = store
        .embedding(query_id)
        .ok_or_else(|| RetrievalError::UnknownQuery {
            id: query_id.to_string(),
        })?;
    let query_item = corpus
        .get(query_id)
        .ok_or_else(|| RetrievalError::UnknownQuery {
            id: query_id.to_string(),
        })?;
    let scorer = NarrativeScorer {
        store,
        query: query_emb,
    };
    retrieve_with(&scorer, corpus, query_id, &query_item.domain, k_in, k_out)
}

/// Retrieval variant ranked by image/text feature similarity instead of
/// narrative similarity; same domain structure, exclusion, and tie rules.
pub fn feature_retrieve(
    corpus: &Corpus,
    query_id: &str,
    k_in: usize,
    k_out: usize,
) -> Result<RetrievalResult, RetrievalError> {
    let query_item = corpus
        .get(query_id)
        .ok_or_else(|| RetrievalError::UnknownQuery {
            id: query_id.to_string(),
        })?;
    let scorer = FeatureScorer { query: query_item };
    retrieve_with(&scorer, corpus, query_id, &query_item.domain, k_in, k_out)
}

/// The train item most similar to the query on averaged image/text cosine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemonstrationChoice {
    pub query_id: String,
    pub chosen_id: String,
    pub sim_v: f64,
    pub sim_t: f64,
}

impl DemonstrationChoice {
    pub fn score(&self) -> f64 {
        (self.sim_v + self.sim_t) / 2.0
    }
}

/// Pick the demonstration for a query: argmax of the averaged modality
/// cosines over the train split, query excluded, ties by ascending id.
pub fn sra_select(
    corpus: &Corpus,
    query: &NewsItem,
) -> Result<DemonstrationChoice, RetrievalError> {
    let mut best: Option<(f64, DemonstrationChoice)> = None;
    for candidate in corpus.split_items(Split::Train) {
        if candidate.id == query.id {
            continue;
        }
        let sim_v = cosine_sim(&query.image_features, &candidate.image_features)
            .map_err(|e| tag_zero(e, &candidate.id))?;
        let sim_t = cosine_sim(&query.text_features, &candidate.text_features)
            .map_err(|e| tag_zero(e, &candidate.id))?;
        let score = (sim_v + sim_t) / 2.0;
        let better = match &best {
            None => true,
            Some((best_score, best_choice)) => {
                score > *best_score
                    || (score == *best_score && candidate.id < best_choice.chosen_id)
            }
        };
        if better {
            best = Some((
                score,
                DemonstrationChoice {
                    query_id: query.id.clone(),
                    chosen_id: candidate.id.clone(),
                    sim_v,
                    sim_t,
                },
            ));
        }
    }
    best.map(|(_, choice)| choice)
        .ok_or_else(|| RetrievalError::EmptyPool {
            id: query.id.clone(),
        })
}

/// Replace the first `floor(ratio * len)` entries of a ranked id list with
/// random train items not already present and distinct from the query.
pub fn inject_retrieval_noise<R: rand::Rng>(
    ids: &mut [String],
    corpus: &Corpus,
    query_id: &str,
    ratio: f64,
    rng: &mut R,
) {
    let replace = ((ratio.clamp(0.0, 1.0)) * ids.len() as f64).floor() as usize;
    if replace == 0 {
        return;
    }
    let kept: std::collections::HashSet<&str> = ids[replace..].iter().map(String::as_str).collect();
    let mut pool: Vec<&str> = corpus
        .split_items(Split::Train)
        .map(|i| i.id.as_str())
        .filter(|id| *id != query_id && !kept.contains(id))
        .collect();
    use rand::seq::SliceRandom;
    let (picked, _) = pool.partial_shuffle(rng, replace);
    for (slot, pick) in ids[..replace].iter_mut().zip(picked.iter()) {
        *slot = (*pick).to_string();
    }
}

/// Naive full-sort reimplementations with identical contracts, used as
/// test oracles for the main operations.
pub mod oracle {
    use super::*;

    /// Full-scan, full-sort homogeneous retrieval.
    pub fn brute_force_retrieve(
        store: &NarrativeStore,
        corpus: &Corpus,
        query_id: &str,
        k_in: usize,
        k_out: usize,
    ) -> Result<RetrievalResult, RetrievalError> {
        let query_emb = store
            .embedding(query_id)
            .ok_or_else(|| RetrievalError::UnknownQuery {
                id: query_id.to_string(),
            })?;
        let query_item = corpus
            .get(query_id)
            .ok_or_else(|| RetrievalError::UnknownQuery {
                id: query_id.to_string(),
            })?;

        let mut in_domain = Vec::new();
        let mut out_domain = Vec::new();
        for candidate in corpus.split_items(Split::Train) {
            if candidate.id == query_id {
                continue;
            }
            let emb =
                store
                    .embedding(&candidate.id)
                    .ok_or_else(|| RetrievalError::MissingEmbedding {
                        id: candidate.id.clone(),
                    })?;
            let score = cosine_sim(query_emb, emb).map_err(|e| tag_zero(e, &candidate.id))?;
            let entry = ScoredId {
                id: candidate.id.clone(),
                score,
            };
            if candidate.domain == query_item.domain {
                in_domain.push(entry);
            } else {
                out_domain.push(entry);
            }
        }
        let order = |a: &ScoredId, b: &ScoredId| {
            b.score
                .partial_cmp(&a.score)
                .expect("finite scores")
                .then_with(|| a.id.cmp(&b.id))
        };
        in_domain.sort_by(order);
        out_domain.sort_by(order);
        in_domain.truncate(k_in);
        out_domain.truncate(k_out);
        Ok(RetrievalResult {
            query_id: query_id.to_string(),
            in_domain,
            out_domain,
        })
    }

    /// Full-scan, full-sort demonstration selection.
    pub fn brute_force_select(
        corpus: &Corpus,
        query: &NewsItem,
    ) -> Result<DemonstrationChoice, RetrievalError> {
        let mut scored = Vec::new();
        for candidate in corpus.split_items(Split::Train) {
            if candidate.id == query.id {
                continue;
            }
            let sim_v = cosine_sim(&query.image_features, &candidate.image_features)
                .map_err(|e| tag_zero(e, &candidate.id))?;
            let sim_t = cosine_sim(&query.text_features, &candidate.text_features)
                .map_err(|e| tag_zero(e, &candidate.id))?;
            scored.push((candidate.id.clone(), sim_v, sim_t));
        }
        if scored.is_empty() {
            return Err(RetrievalError::EmptyPool {
                id: query.id.clone(),
            });
        }
        scored.sort_by(|a, b| {
            let sa = (a.1 + a.2) / 2.0;
            let sb = (b.1 + b.2) / 2.0;
            sb.partial_cmp(&sa)
                .expect("finite scores")
                .then_with(|| a.0.cmp(&b.0))
        });
        let (chosen_id, sim_v, sim_t) = scored.swap_remove(0);
        Ok(DemonstrationChoice {
            query_id: query.id.clone(),
            chosen_id,
            sim_v,
            sim_t,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::NewsItem;
    use crate::narrative::{NarrativeRecord, NarrativeStore};

    fn item(id: &str, domain: &str, split: Split, text: Vec<f64>, image: Vec<f64>) -> NewsItem {
        NewsItem {
            id: id.into(),
            domain: domain.into(),
            label: 0,
            split,
            text_features: text,
            image_features: image,
            narrative_text: None,
        }
    }

    fn store_from(entries: &[(&str, Vec<f64>)]) -> NarrativeStore {
        NarrativeStore::build(entries.iter().map(|(id, v)| NarrativeRecord {
            item_id: (*id).to_string(),
            narrative_text: String::new(),
            embedding: v.clone(),
        }))
        .unwrap()
    }

    fn angle_embedding(degrees: f64) -> Vec<f64> {
        let r = degrees.to_radians();
        vec![r.cos(), r.sin()]
    }

    #[test]
    fn cosine_identities() {
        assert_eq!(cosine_sim(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(cosine_sim(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        let c = cosine_sim(&[1.0, 1.0], &[1.0, 0.0]).unwrap();
        assert!((c - 0.70710678).abs() < 1e-8);
    }

    #[test]
    fn cosine_rejects_zero_and_mismatched_vectors() {
        assert!(matches!(
            cosine_sim(&[0.0, 0.0], &[1.0, 0.0]),
            Err(RetrievalError::ZeroVector { .. })
        ));
        assert!(matches!(
            cosine_sim(&[1.0], &[1.0, 0.0]),
            Err(RetrievalError::DimensionMismatch { left: 1, right: 2 })
        ));
    }

    /// Five 2-d embeddings at fixed angles; hand-ranked expectations.
    fn angle_fixture() -> (Corpus, NarrativeStore) {
        let corpus = Corpus::from_items(vec![
            item("u", "D1", Split::Train, vec![1.0], vec![1.0]),
            item("a", "D1", Split::Train, vec![1.0], vec![1.0]),
            item("b", "D1", Split::Train, vec![1.0], vec![1.0]),
            item("c", "D2", Split::Train, vec![1.0], vec![1.0]),
            item("d", "D2", Split::Train, vec![1.0], vec![1.0]),
        ])
        .unwrap();
        let store = store_from(&[
            ("u", angle_embedding(0.0)),
            ("a", angle_embedding(10.0)),
            ("b", angle_embedding(80.0)),
            ("c", angle_embedding(5.0)),
            ("d", angle_embedding(60.0)),
        ]);
        (corpus, store)
    }

    #[test]
    fn retrieval_ranks_by_angle_within_domains() {
        let (corpus, store) = angle_fixture();
        let result = homogeneous_retrieve(&store, &corpus, "u", 1, 1).unwrap();
        assert_eq!(result.in_domain.len(), 1);
        assert_eq!(result.in_domain[0].id, "a");
        assert_eq!(result.out_domain.len(), 1);
        assert_eq!(result.out_domain[0].id, "c");
    }

    #[test]
    fn lone_domain_query_gets_empty_in_domain_list() {
        let corpus = Corpus::from_items(vec![
            item("u", "only", Split::Train, vec![1.0], vec![1.0]),
            item("x", "other", Split::Train, vec![1.0], vec![1.0]),
        ])
        .unwrap();
        let store = store_from(&[("u", vec![1.0, 0.0]), ("x", vec![1.0, 0.1])]);
        let result = homogeneous_retrieve(&store, &corpus, "u", 3, 3).unwrap();
        assert!(result.in_domain.is_empty());
        assert_eq!(result.out_domain.len(), 1);
    }

    #[test]
    fn equal_scores_rank_lower_id_first() {
        let corpus = Corpus::from_items(vec![
            item("q", "D", Split::Train, vec![1.0], vec![1.0]),
            item("z2", "D", Split::Train, vec![1.0], vec![1.0]),
            item("z1", "D", Split::Train, vec![1.0], vec![1.0]),
        ])
        .unwrap();
        let same = vec![0.6, 0.8];
        let store = store_from(&[("q", vec![1.0, 0.0]), ("z1", same.clone()), ("z2", same)]);
        let result = homogeneous_retrieve(&store, &corpus, "q", 2, 0).unwrap();
        assert_eq!(result.in_domain[0].id, "z1");
        assert_eq!(result.in_domain[1].id, "z2");
    }

    #[test]
    fn retrieval_errors_on_unknown_query() {
        let (corpus, store) = angle_fixture();
        assert!(matches!(
            homogeneous_retrieve(&store, &corpus, "nope", 1, 1),
            Err(RetrievalError::UnknownQuery { .. })
        ));
    }

    #[test]
    fn union_preserves_rank_order() {
        let (corpus, store) = angle_fixture();
        let result = homogeneous_retrieve(&store, &corpus, "u", 2, 2).unwrap();
        let union = result.union();
        let scores: Vec<f64> = union.iter().map(|e| e.score).collect();
        let mut sorted = scores.clone();
        sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
        assert_eq!(scores, sorted);
        assert_eq!(union.len(), 4);
    }

    #[test]
    fn sra_prefers_exact_feature_match() {
        let corpus = Corpus::from_items(vec![
            item("t1", "D", Split::Train, vec![1.0, 0.0], vec![0.0, 1.0]),
            item("t2", "D", Split::Train, vec![0.0, 1.0], vec![1.0, 0.0]),
        ])
        .unwrap();
        let query = item("q", "D", Split::Test, vec![1.0, 0.0], vec![0.0, 1.0]);
        let choice = sra_select(&corpus, &query).unwrap();
        assert_eq!(choice.chosen_id, "t1");
        assert!((choice.score() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sra_singleton_pool_is_forced() {
        let corpus = Corpus::from_items(vec![item(
            "t",
            "D",
            Split::Train,
            vec![1.0, 0.5],
            vec![0.5, 1.0],
        )])
        .unwrap();
        let query = item("q", "D", Split::Test, vec![-1.0, 0.2], vec![0.3, -1.0]);
        assert_eq!(sra_select(&corpus, &query).unwrap().chosen_id, "t");
    }

    #[test]
    fn sra_excludes_query_and_errors_on_empty_pool() {
        let query = item("q", "D", Split::Train, vec![1.0], vec![1.0]);
        let corpus = Corpus::from_items(vec![query.clone()]).unwrap();
        assert!(matches!(
            sra_select(&corpus, &query),
            Err(RetrievalError::EmptyPool { .. })
        ));
    }

    #[test]
    fn sra_matches_exhaustive_scoring() {
        let corpus = Corpus::from_items(vec![
            item("t1", "D", Split::Train, vec![0.9, 0.1], vec![0.2, 0.8]),
            item("t2", "D", Split::Train, vec![0.4, 0.6], vec![0.7, 0.3]),
            item("t3", "D", Split::Train, vec![-0.5, 0.5], vec![0.5, 0.5]),
        ])
        .unwrap();
        let query = item("q", "D", Split::Test, vec![1.0, 0.0], vec![0.0, 1.0]);
        let fast = sra_select(&corpus, &query).unwrap();
        let slow = oracle::brute_force_select(&corpus, &query).unwrap();
        assert_eq!(fast, slow);
    }

    #[test]
    fn oracle_agrees_on_truncation_and_errors() {
        let (corpus, store) = angle_fixture();
        // k larger than pool
        let fast = homogeneous_retrieve(&store, &corpus, "u", 10, 10).unwrap();
        let slow = oracle::brute_force_retrieve(&store, &corpus, "u", 10, 10).unwrap();
        assert_eq!(fast, slow);
        assert_eq!(fast.in_domain.len(), 2);
        assert_eq!(fast.out_domain.len(), 2);
    }

    #[test]
    fn retrieved_items_are_train_only() {
        let corpus = Corpus::from_items(vec![
            item("q", "D", Split::Test, vec![1.0], vec![1.0]),
            item("tr", "D", Split::Train, vec![1.0], vec![1.0]),
            item("te", "D", Split::Test, vec![1.0], vec![1.0]),
        ])
        .unwrap();
        let store = store_from(&[
            ("q", vec![1.0, 0.0]),
            ("tr", vec![0.9, 0.1]),
            ("te", vec![1.0, 0.0]),
        ]);
        let result = homogeneous_retrieve(&store, &corpus, "q", 5, 5).unwrap();
        assert_eq!(result.in_domain.len(), 1);
        assert_eq!(result.in_domain[0].id, "tr");
    }

    #[test]
    fn noise_injection_replaces_top_ranked_prefix() {
        let mut items: Vec<NewsItem> = (0..10)
            .map(|i| item(&format!("t{i}"), "D", Split::Train, vec![1.0], vec![1.0]))
            .collect();
        items.push(item("q", "D", Split::Test, vec![1.0], vec![1.0]));
        let corpus = Corpus::from_items(items).unwrap();
        let mut ids: Vec<String> = (0..5).map(|i| format!("t{i}")).collect();
        let kept = ids[2..].to_vec();
        let mut rng = crate::seeding::rng_for(3, "retrieval-noise");
        inject_retrieval_noise(&mut ids, &corpus, "q", 0.5, &mut rng);
        // floor(0.5 * 5) = 2 replacements, suffix untouched
        assert_eq!(&ids[2..], kept.as_slice());
        for id in &ids[..2] {
            assert_ne!(id, "q");
            assert!(!kept.contains(id));
        }
        let unique: std::collections::HashSet<&String> = ids.iter().collect();
        assert_eq!(unique.len(), ids.len());
    }

    #[test]
    fn zero_ratio_injects_nothing() {
        let corpus = Corpus::from_items(vec![
            item("t0", "D", Split::Train, vec![1.0], vec![1.0]),
            item("q", "D", Split::Test, vec![1.0], vec![1.0]),
        ])
        .unwrap();
        let mut ids = vec!["t0".to_string()];
        let before = ids.clone();
        let mut rng = crate::seeding::rng_for(3, "retrieval-noise");
        inject_retrieval_noise(&mut ids, &corpus, "q", 0.0, &mut rng);
        assert_eq!(ids, before);
    }
}
