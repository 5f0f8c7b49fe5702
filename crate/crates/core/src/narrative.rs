//! Abstract-narrative extraction and embedding.
//!
//! An item's one-sentence narrative can come from an external generation
//! endpoint or, offline, straight from the corpus record. Narratives are
//! embedded either by ingesting precomputed vectors or with the built-in
//! deterministic feature-hashed character-n-gram embedder; stores hold
//! unit-norm vectors so downstream cosine reduces to a dot product.

use std::collections::BTreeMap;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::corpus::NewsItem;
use crate::error::NarrativeError;
use crate::nn::l2_norm;
use crate::seeding::fnv1a64;

/// System prompt of the narrative-distillation template.
pub const SYSTEM_PROMPT: &str = "\
You are an expert AI assistant specializing in media analysis and misinformation detection.
Your task is to analyze multimodal news content (text and image) and distill its core abstract narrative or central claim into a single, concise sentence.
Constraints:
- Focus strictly on the underlying message, not superficial details.
- Remain objective and neutral; do not judge the veracity of the claim.
- The output MUST be a single sentence.
- Your response must contain ONLY the narrative sentence, with no preamble, explanations.";

const USER_PROMPT_TEMPLATE: &str = "\
Example 1:
Text: \"Explosive footage! A poll worker in XX County was caught on a hidden camera shredding pro-government ballots to rig the election. The proof is undeniable!\"
Image: [Multimodal Input: A blurry image of a person standing near paper bins.]
Core Narrative: Election fraud has been proven beyond doubt.

Example 2:
Text: \"Data never lies! This 90-degree voting curve is statistically impossible unless there is some algorithm at work to cheat!\"
Image: [Multimodal Input: A line graph of vote counts showing a sudden, sharp vertical spike.]
Core Narrative: Election fraud has been proven beyond doubt.

Final Query:
Text: {text_content}
Image: [Multimodal Input: News image.]
Core Narrative:";

/// Textual payload of an item, if any.
fn item_text(item: &NewsItem) -> Option<&str> {
    item.narrative_text
        .as_deref()
        .filter(|t| !t.trim().is_empty())
}

/// Render the user half of the template for one item.
pub fn build_user_prompt(item: &NewsItem) -> Result<String, NarrativeError> {
    let text = item_text(item).ok_or_else(|| NarrativeError::MissingText {
        id: item.id.clone(),
    })?;
    Ok(USER_PROMPT_TEMPLATE.replace("{text_content}", text))
}

/// Render the full narrative-distillation prompt (system section, the two
/// worked examples, and the item's text at the final query slot).
pub fn build_prompt(item: &NewsItem) -> Result<String, NarrativeError> {
    Ok(format!("{SYSTEM_PROMPT}\n\n{}", build_user_prompt(item)?))
}

/// Request body sent to a narrative-generation endpoint.
#[derive(Debug, Clone, Serialize)]
pub struct NarrativeRequest {
    pub model: String,
    pub system_prompt: String,
    pub user_prompt: String,
    pub temperature: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub image_ref: Option<String>,
}

#[derive(Debug, Deserialize)]
struct NarrativeResponse {
    narrative: String,
}

/// Connection settings for an external narrative endpoint.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EndpointConfig {
    pub endpoint: String,
    #[serde(default)]
    pub api_key: Option<String>,
    pub model: String,
    /// Decoding temperature forwarded on each request.
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
}

fn default_temperature() -> f64 {
    0.7
}
fn default_retries() -> u32 {
    3
}
fn default_timeout_secs() -> u64 {
    30
}

/// Narrative source: offline pass-through or an HTTP endpoint.
#[derive(Debug, Clone)]
pub enum NarrativeClient {
    /// Return the item's own `narrative_text` verbatim.
    Offline,
    Http(EndpointConfig),
}

impl NarrativeClient {
    pub fn offline() -> Self {
        NarrativeClient::Offline
    }
}

/// Produce the one-sentence narrative for an item.
pub fn extract_narrative(
    client: &NarrativeClient,
    item: &NewsItem,
) -> Result<String, NarrativeError> {
    match client {
        NarrativeClient::Offline => {
            item_text(item)
                .map(str::to_string)
                .ok_or_else(|| NarrativeError::MissingText {
                    id: item.id.clone(),
                })
        }
        NarrativeClient::Http(cfg) => {
            let request = NarrativeRequest {
                model: cfg.model.clone(),
                system_prompt: SYSTEM_PROMPT.to_string(),
                user_prompt: build_user_prompt(item)?,
                temperature: cfg.temperature,
                image_ref: None,
            };
            let narrative = post_with_retries(cfg, &request)?;
            if narrative.trim().is_empty() {
                return Err(NarrativeError::EmptyResponse {
                    id: item.id.clone(),
                });
            }
            Ok(narrative)
        }
    }
}

fn post_with_retries(
    cfg: &EndpointConfig,
    request: &NarrativeRequest,
) -> Result<String, NarrativeError> {
    let attempts = cfg.max_retries.max(1);
    let agent = ureq::AgentBuilder::new()
        .timeout(Duration::from_secs(cfg.timeout_secs))
        .build();
    let mut last_error = String::new();
    for attempt in 1..=attempts {
        let mut req = agent
            .post(&cfg.endpoint)
            .set("content-type", "application/json");
        if let Some(key) = &cfg.api_key {
            req = req.set("authorization", &format!("Bearer {key}"));
        }
        match req.send_json(request) {
            Ok(resp) => match resp.into_json::<NarrativeResponse>() {
                Ok(body) => return Ok(body.narrative),
                Err(e) => last_error = format!("attempt {attempt}: bad response body: {e}"),
            },
            Err(e) => last_error = format!("attempt {attempt}: {e}"),
        }
    }
    Err(NarrativeError::Endpoint {
        attempts,
        message: last_error,
    })
}

/// Deterministic feature-hashed character-n-gram embedding (n = 1..=3),
/// ℓ2-normalized. A pure function of `(text, dim, seed)`.
pub fn embed_narrative(text: &str, dim: usize, seed: u64) -> Result<Vec<f64>, NarrativeError> {
    if text.trim().is_empty() {
        return Err(NarrativeError::EmptyText);
    }
    if dim < 2 {
        return Err(NarrativeError::InvalidDim(dim));
    }
    let chars: Vec<char> = text.chars().collect();
    let mut v = vec![0.0f64; dim];
    let mut buf = [0u8; 4];
    for n in 1..=3usize {
        if chars.len() < n {
            break;
        }
        for window in chars.windows(n) {
            // hash = fnv over (n marker, utf-8 bytes of the gram), seeded
            let mut h = fnv1a64(seed ^ (n as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15), &[]);
            for &ch in window {
                h = fnv1a64(h, ch.encode_utf8(&mut buf).as_bytes());
            }
            let bucket = ((h >> 1) % dim as u64) as usize;
            let sign = if h & 1 == 1 { 1.0 } else { -1.0 };
            v[bucket] += sign;
        }
    }
    let norm = l2_norm(&v);
    if norm < 1e-12 {
        return Err(NarrativeError::ZeroNorm {
            id: "<embedding>".into(),
        });
    }
    v.iter_mut().for_each(|x| *x /= norm);
    Ok(v)
}

/// One item's narrative and its unit-norm embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NarrativeRecord {
    pub item_id: String,
    pub narrative_text: String,
    pub embedding: Vec<f64>,
}

/// Immutable map from item id to narrative record; uniform embedding
/// dimension, all embeddings unit norm.
#[derive(Debug, Clone, PartialEq)]
pub struct NarrativeStore {
    records: BTreeMap<String, NarrativeRecord>,
    dim: usize,
}

impl NarrativeStore {
    /// Normalize and index records; rejects mixed dimensions, duplicate
    /// ids, and zero-norm embeddings.
    pub fn build(
        records: impl IntoIterator<Item = NarrativeRecord>,
    ) -> Result<Self, NarrativeError> {
        let mut map = BTreeMap::new();
        let mut dim: Option<usize> = None;
        for mut record in records {
            match dim {
                None => dim = Some(record.embedding.len()),
                Some(d) if d != record.embedding.len() => {
                    return Err(NarrativeError::DimensionMismatch {
                        expected: d,
                        found: record.embedding.len(),
                    })
                }
                _ => {}
            }
            let norm = l2_norm(&record.embedding);
            if norm < 1e-12 {
                return Err(NarrativeError::ZeroNorm {
                    id: record.item_id.clone(),
                });
            }
            record.embedding.iter_mut().for_each(|x| *x /= norm);
            let id = record.item_id.clone();
            if map.insert(id.clone(), record).is_some() {
                return Err(NarrativeError::DuplicateId { id });
            }
        }
        Ok(Self {
            records: map,
            dim: dim.unwrap_or(0),
        })
    }

    /// Build from a raw id -> vector table; narrative text left empty.
    pub fn from_embeddings(map: &BTreeMap<String, Vec<f64>>) -> Result<Self, NarrativeError> {
        Self::build(map.iter().map(|(id, v)| NarrativeRecord {
            item_id: id.clone(),
            narrative_text: String::new(),
            embedding: v.clone(),
        }))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&NarrativeRecord> {
        self.records.get(id)
    }

    pub fn embedding(&self, id: &str) -> Option<&[f64]> {
        self.records.get(id).map(|r| r.embedding.as_slice())
    }

    pub fn records(&self) -> impl Iterator<Item = &NarrativeRecord> {
        self.records.values()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Split;

    fn item_with_text(text: Option<&str>) -> NewsItem {
        NewsItem {
            id: "u1".into(),
            domain: "science".into(),
            label: 0,
            split: Split::Train,
            text_features: vec![0.0; 4],
            image_features: vec![0.0; 4],
            narrative_text: text.map(str::to_string),
        }
    }

    #[test]
    fn prompt_contains_core_narrative_marker_three_times() {
        let prompt = build_prompt(&item_with_text(Some("X"))).unwrap();
        assert_eq!(prompt.matches("Core Narrative:").count(), 3);
    }

    #[test]
    fn prompt_embeds_item_text_verbatim_once() {
        let text = "A suspiciously specific claim about turbines.";
        let prompt = build_prompt(&item_with_text(Some(text))).unwrap();
        assert_eq!(prompt.matches(text).count(), 1);
    }

    #[test]
    fn prompt_requires_textual_payload() {
        assert!(matches!(
            build_prompt(&item_with_text(None)),
            Err(NarrativeError::MissingText { .. })
        ));
        assert!(matches!(
            build_prompt(&item_with_text(Some("   "))),
            Err(NarrativeError::MissingText { .. })
        ));
    }

    #[test]
    fn identical_text_gives_identical_prompts() {
        let a = build_prompt(&item_with_text(Some("same"))).unwrap();
        let mut other = item_with_text(Some("same"));
        other.id = "u2".into();
        let b = build_prompt(&other).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn offline_extraction_returns_text_verbatim() {
        let text = "Election fraud has been proven beyond doubt.";
        let item = item_with_text(Some(text));
        let narrative = extract_narrative(&NarrativeClient::Offline, &item).unwrap();
        assert_eq!(narrative, text);
    }

    #[test]
    fn offline_extraction_without_text_errors() {
        let item = item_with_text(None);
        assert!(matches!(
            extract_narrative(&NarrativeClient::Offline, &item),
            Err(NarrativeError::MissingText { .. })
        ));
    }

    #[test]
    fn embedder_is_deterministic_and_unit_norm() {
        let a = embed_narrative("the same text", 32, 5).unwrap();
        let b = embed_narrative("the same text", 32, 5).unwrap();
        assert_eq!(a, b);
        assert!((l2_norm(&a) - 1.0).abs() < 1e-6);
        let c = embed_narrative("the same text", 32, 6).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn embedder_rejects_empty_text_and_tiny_dims() {
        assert!(matches!(
            embed_narrative("", 32, 0),
            Err(NarrativeError::EmptyText)
        ));
        assert!(matches!(
            embed_narrative("x", 1, 0),
            Err(NarrativeError::InvalidDim(1))
        ));
    }

    #[test]
    fn store_normalizes_on_build() {
        let store = NarrativeStore::build([NarrativeRecord {
            item_id: "a".into(),
            narrative_text: "t".into(),
            embedding: vec![3.0, 4.0],
        }])
        .unwrap();
        let emb = store.embedding("a").unwrap();
        assert!((emb[0] - 0.6).abs() < 1e-12);
        assert!((emb[1] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn store_rejects_mixed_dims_and_duplicates() {
        let rec = |id: &str, dim: usize| NarrativeRecord {
            item_id: id.into(),
            narrative_text: String::new(),
            embedding: vec![1.0; dim],
        };
        assert!(matches!(
            NarrativeStore::build([rec("a", 8), rec("b", 16)]),
            Err(NarrativeError::DimensionMismatch {
                expected: 8,
                found: 16
            })
        ));
        assert!(matches!(
            NarrativeStore::build([rec("a", 8), rec("a", 8)]),
            Err(NarrativeError::DuplicateId { .. })
        ));
    }

    #[test]
    fn store_of_three_unit_vectors() {
        let recs = (0..3).map(|i| {
            let mut v = vec![0.0; 4];
            v[i] = 1.0;
            NarrativeRecord {
                item_id: format!("r{i}"),
                narrative_text: String::new(),
                embedding: v,
            }
        });
        let store = NarrativeStore::build(recs).unwrap();
        assert_eq!(store.len(), 3);
        assert_eq!(store.dim(), 4);
    }

    /// Serve one canned HTTP response per queued entry on a local port.
    fn spawn_mock_server(responses: Vec<(u16, String)>) -> (String, std::thread::JoinHandle<()>) {
        use std::io::{Read, Write};
        let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let handle = std::thread::spawn(move || {
            for (status, body) in responses {
                let (mut stream, _) = listener.accept().unwrap();
                let mut buf = [0u8; 4096];
                let _ = stream.read(&mut buf);
                let response = format!(
                    "HTTP/1.1 {status} OK\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                    body.len()
                );
                stream.write_all(response.as_bytes()).unwrap();
            }
        });
        (format!("http://{addr}"), handle)
    }

    fn http_client(endpoint: String, retries: u32) -> NarrativeClient {
        NarrativeClient::Http(EndpointConfig {
            endpoint,
            api_key: Some("k".into()),
            model: "test-model".into(),
            temperature: 0.7,
            max_retries: retries,
            timeout_secs: 5,
        })
    }

    #[test]
    fn http_extraction_passes_narrative_through() {
        let (endpoint, handle) =
            spawn_mock_server(vec![(200, "{\"narrative\":\"s\"}".to_string())]);
        let item = item_with_text(Some("raw text"));
        let narrative = extract_narrative(&http_client(endpoint, 1), &item).unwrap();
        assert_eq!(narrative, "s");
        handle.join().unwrap();
    }

    #[test]
    fn http_extraction_retries_then_succeeds() {
        let (endpoint, handle) = spawn_mock_server(vec![
            (500, "{}".to_string()),
            (200, "{\"narrative\":\"ok\"}".to_string()),
        ]);
        let item = item_with_text(Some("raw text"));
        let narrative = extract_narrative(&http_client(endpoint, 3), &item).unwrap();
        assert_eq!(narrative, "ok");
        handle.join().unwrap();
    }

    #[test]
    fn http_extraction_reports_attempt_count() {
        let (endpoint, handle) =
            spawn_mock_server(vec![(500, "{}".to_string()), (500, "{}".to_string())]);
        let item = item_with_text(Some("raw text"));
        match extract_narrative(&http_client(endpoint, 2), &item) {
            Err(NarrativeError::Endpoint { attempts, .. }) => assert_eq!(attempts, 2),
            other => panic!("unexpected: {other:?}"),
        }
        handle.join().unwrap();
    }

    #[test]
    fn http_empty_narrative_is_rejected() {
        let (endpoint, handle) =
            spawn_mock_server(vec![(200, "{\"narrative\":\"  \"}".to_string())]);
        let item = item_with_text(Some("raw text"));
        assert!(matches!(
            extract_narrative(&http_client(endpoint, 1), &item),
            Err(NarrativeError::EmptyResponse { .. })
        ));
        handle.join().unwrap();
    }
}
