//! News-corpus data model and file ingestion.
//!
//! A corpus file is newline-delimited JSON, one record per line. Embedding
//! tables come in a textual (NDJSON) and a binary flavor; both map item ids
//! to fixed-dimension vectors.

mod synth;

pub use synth::{
    cluster_index, cluster_label, domain_name, synth_generate, LabelRule, SynthConfig,
};

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::CorpusError;

/// Dataset partition an item belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Split::Train => write!(f, "train"),
            Split::Test => write!(f, "test"),
        }
    }
}

/// One multimodal news sample: pre-extracted text/image feature vectors,
/// a domain label, a binary veracity label, and optionally the raw claim
/// text used for narrative extraction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NewsItem {
    pub id: String,
    pub domain: String,
    pub label: u8,
    pub split: Split,
    pub text_features: Vec<f64>,
    pub image_features: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub narrative_text: Option<String>,
}

impl NewsItem {
    pub fn is_fake(&self) -> bool {
        self.label == 1
    }
}

/// Immutable, index-backed collection of [`NewsItem`]s.
///
/// Indices are built once at construction; lookups never mutate, so a
/// corpus can be shared read-only across workers.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    items: Vec<NewsItem>,
    by_id: HashMap<String, usize>,
    domain_index: BTreeMap<String, Vec<usize>>,
    train_index: Vec<usize>,
    test_index: Vec<usize>,
}

impl Corpus {
    /// Validate and index a set of items. Record numbers in errors are
    /// 1-based positions in `items`.
    pub fn from_items(items: Vec<NewsItem>) -> Result<Self, CorpusError> {
        let mut by_id = HashMap::with_capacity(items.len());
        let mut domain_index: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        let mut train_index = Vec::new();
        let mut test_index = Vec::new();
        let mut text_dim: Option<usize> = None;
        let mut image_dim: Option<usize> = None;

        for (pos, item) in items.iter().enumerate() {
            let line = pos + 1;
            if item.label > 1 {
                return Err(CorpusError::InvalidLabel {
                    label: i64::from(item.label),
                    line,
                });
            }
            match text_dim {
                None => text_dim = Some(item.text_features.len()),
                Some(d) if d != item.text_features.len() => {
                    return Err(CorpusError::DimensionMismatch {
                        field: "text_features",
                        line,
                        expected: d,
                        found: item.text_features.len(),
                    })
                }
                _ => {}
            }
            match image_dim {
                None => image_dim = Some(item.image_features.len()),
                Some(d) if d != item.image_features.len() => {
                    return Err(CorpusError::DimensionMismatch {
                        field: "image_features",
                        line,
                        expected: d,
                        found: item.image_features.len(),
                    })
                }
                _ => {}
            }
            if by_id.insert(item.id.clone(), pos).is_some() {
                return Err(CorpusError::DuplicateId {
                    id: item.id.clone(),
                    line,
                });
            }
            domain_index
                .entry(item.domain.clone())
                .or_default()
                .push(pos);
            match item.split {
                Split::Train => train_index.push(pos),
                Split::Test => test_index.push(pos),
            }
        }

        Ok(Self {
            items,
            by_id,
            domain_index,
            train_index,
            test_index,
        })
    }

    /// Parse a newline-delimited record file. Blank lines are ignored;
    /// errors carry the 1-based line number of the offending record.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, CorpusError> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let reader = BufReader::new(file);

        let mut items = Vec::new();
        let mut lines = Vec::new(); // source line per parsed item
        for (idx, line) in reader.lines().enumerate() {
            let lineno = idx + 1;
            let line = line.map_err(|source| CorpusError::Io {
                path: path.display().to_string(),
                source,
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let item: NewsItem =
                serde_json::from_str(&line).map_err(|e| CorpusError::Malformed {
                    line: lineno,
                    message: e.to_string(),
                })?;
            items.push(item);
            lines.push(lineno);
        }

        // Re-map validation record numbers to source line numbers.
        Self::from_items(items).map_err(|e| match e {
            CorpusError::DuplicateId { id, line } => CorpusError::DuplicateId {
                id,
                line: lines[line - 1],
            },
            CorpusError::DimensionMismatch {
                field,
                line,
                expected,
                found,
            } => CorpusError::DimensionMismatch {
                field,
                line: lines[line - 1],
                expected,
                found,
            },
            CorpusError::InvalidLabel { label, line } => CorpusError::InvalidLabel {
                label,
                line: lines[line - 1],
            },
            other => other,
        })
    }

    /// Write the corpus back as newline-delimited records, one per item,
    /// in storage order.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CorpusError> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut w = BufWriter::new(file);
        for item in &self.items {
            let line = serde_json::to_string(item).expect("corpus items serialize");
            writeln!(w, "{line}").map_err(|source| CorpusError::Io {
                path: path.display().to_string(),
                source,
            })?;
        }
        w.flush().map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn items(&self) -> &[NewsItem] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&NewsItem> {
        self.by_id.get(id).map(|&pos| &self.items[pos])
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.by_id.get(id).copied()
    }

    pub fn item_at(&self, pos: usize) -> &NewsItem {
        &self.items[pos]
    }

    pub fn domains(&self) -> impl Iterator<Item = &str> {
        self.domain_index.keys().map(String::as_str)
    }

    /// Item positions for a domain, in storage order.
    pub fn domain_positions(&self, domain: &str) -> &[usize] {
        self.domain_index
            .get(domain)
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    /// Item ids for a domain, in storage order.
    pub fn domain_ids(&self, domain: &str) -> Vec<&str> {
        self.domain_positions(domain)
            .iter()
            .map(|&p| self.items[p].id.as_str())
            .collect()
    }

    /// Item positions for a split, in storage order.
    pub fn split_positions(&self, split: Split) -> &[usize] {
        match split {
            Split::Train => &self.train_index,
            Split::Test => &self.test_index,
        }
    }

    pub fn split_items(&self, split: Split) -> impl Iterator<Item = &NewsItem> {
        self.split_positions(split).iter().map(|&p| &self.items[p])
    }

    pub fn text_dim(&self) -> usize {
        self.items.first().map_or(0, |i| i.text_features.len())
    }

    pub fn image_dim(&self) -> usize {
        self.items.first().map_or(0, |i| i.image_features.len())
    }
}

/// Magic prefix of the binary embedding table format.
pub const EMBEDDING_MAGIC: &[u8; 8] = b"RAMMEMB1";

#[derive(Debug, Serialize, Deserialize)]
struct EmbeddingRow {
    id: String,
    vector: Vec<f64>,
}

/// Load an embedding table, textual or binary (detected by magic bytes).
///
/// Every vector must have exactly `expected_dim` finite entries.
pub fn load_embeddings(
    path: impl AsRef<Path>,
    expected_dim: usize,
) -> Result<BTreeMap<String, Vec<f64>>, CorpusError> {
    let path = path.as_ref();
    let mut file = File::open(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut head = [0u8; 8];
    let n = file.read(&mut head).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    drop(file);
    if n == 8 && &head == EMBEDDING_MAGIC {
        load_embeddings_binary(path, expected_dim)
    } else {
        load_embeddings_text(path, expected_dim)
    }
}

fn check_vector(id: &str, v: &[f64], expected_dim: usize) -> Result<(), CorpusError> {
    if v.len() != expected_dim {
        return Err(CorpusError::EmbeddingDimension {
            id: id.to_string(),
            expected: expected_dim,
            found: v.len(),
        });
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(CorpusError::NonFiniteEmbedding { id: id.to_string() });
    }
    Ok(())
}

fn load_embeddings_text(
    path: &Path,
    expected_dim: usize,
) -> Result<BTreeMap<String, Vec<f64>>, CorpusError> {
    let file = File::open(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let reader = BufReader::new(file);
    let mut map = BTreeMap::new();
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let row: EmbeddingRow =
            serde_json::from_str(&line).map_err(|e| CorpusError::Malformed {
                line: lineno,
                message: e.to_string(),
            })?;
        check_vector(&row.id, &row.vector, expected_dim)?;
        if map.insert(row.id.clone(), row.vector).is_some() {
            return Err(CorpusError::DuplicateId {
                id: row.id,
                line: lineno,
            });
        }
    }
    Ok(map)
}

fn load_embeddings_binary(
    path: &Path,
    expected_dim: usize,
) -> Result<BTreeMap<String, Vec<f64>>, CorpusError> {
    let io_err = |source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut file = BufReader::new(File::open(path).map_err(io_err)?);
    let io_err = |source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    };
    let malformed = |message: String| CorpusError::Malformed { line: 0, message };

    let mut magic = [0u8; 8];
    file.read_exact(&mut magic).map_err(io_err)?;
    if &magic != EMBEDDING_MAGIC {
        return Err(malformed("bad magic in binary embedding table".into()));
    }
    let mut u32buf = [0u8; 4];
    file.read_exact(&mut u32buf).map_err(io_err)?;
    let count = u32::from_le_bytes(u32buf) as usize;
    file.read_exact(&mut u32buf).map_err(io_err)?;
    let dim = u32::from_le_bytes(u32buf) as usize;
    if dim != expected_dim {
        return Err(CorpusError::EmbeddingDimension {
            id: "<header>".into(),
            expected: expected_dim,
            found: dim,
        });
    }

    let mut map = BTreeMap::new();
    for entry in 0..count {
        let mut u16buf = [0u8; 2];
        file.read_exact(&mut u16buf).map_err(io_err)?;
        let id_len = u16::from_le_bytes(u16buf) as usize;
        let mut id_bytes = vec![0u8; id_len];
        file.read_exact(&mut id_bytes).map_err(io_err)?;
        let id = String::from_utf8(id_bytes)
            .map_err(|e| malformed(format!("entry {entry}: id is not utf-8: {e}")))?;
        let mut vector = Vec::with_capacity(dim);
        let mut f32buf = [0u8; 4];
        for _ in 0..dim {
            file.read_exact(&mut f32buf).map_err(io_err)?;
            vector.push(f64::from(f32::from_le_bytes(f32buf)));
        }
        check_vector(&id, &vector, expected_dim)?;
        if map.insert(id.clone(), vector).is_some() {
            return Err(CorpusError::DuplicateId {
                id,
                line: entry + 1,
            });
        }
    }
    Ok(map)
}

/// Write an embedding table as NDJSON rows, keyed order.
pub fn save_embeddings_text(
    path: impl AsRef<Path>,
    map: &BTreeMap<String, Vec<f64>>,
) -> Result<(), CorpusError> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut w = BufWriter::new(file);
    for (id, vector) in map {
        let row = EmbeddingRow {
            id: id.clone(),
            vector: vector.clone(),
        };
        let line = serde_json::to_string(&row).expect("embedding rows serialize");
        writeln!(w, "{line}").map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })?;
    }
    w.flush().map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Write an embedding table in the binary format (values stored as f32).
pub fn save_embeddings_binary(
    path: impl AsRef<Path>,
    map: &BTreeMap<String, Vec<f64>>,
) -> Result<(), CorpusError> {
    let path = path.as_ref();
    let io_err = |source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    };
    let dim = map.values().next().map_or(0, Vec::len);
    let mut w = BufWriter::new(File::create(path).map_err(io_err)?);
    let io_err = |source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    };
    w.write_all(EMBEDDING_MAGIC).map_err(io_err)?;
    w.write_all(&(map.len() as u32).to_le_bytes())
        .map_err(io_err)?;
    w.write_all(&(dim as u32).to_le_bytes()).map_err(io_err)?;
    for (id, vector) in map {
        assert_eq!(vector.len(), dim, "uniform dimensions required");
        w.write_all(&(id.len() as u16).to_le_bytes())
            .map_err(io_err)?;
        w.write_all(id.as_bytes()).map_err(io_err)?;
        for &v in vector {
            w.write_all(&(v as f32).to_le_bytes()).map_err(io_err)?;
        }
    }
    w.flush().map_err(io_err)
}

/// Check that every embedding id exists in the companion corpus.
pub fn cross_check_ids(
    map: &BTreeMap<String, Vec<f64>>,
    corpus: &Corpus,
) -> Result<(), CorpusError> {
    for id in map.keys() {
        if corpus.get(id).is_none() {
            return Err(CorpusError::UnknownId { id: id.clone() });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn item(id: &str, domain: &str, label: u8, split: Split, dt: usize, dv: usize) -> NewsItem {
        NewsItem {
            id: id.into(),
            domain: domain.into(),
            label,
            split,
            text_features: vec![0.5; dt],
            image_features: vec![-0.5; dv],
            narrative_text: None,
        }
    }

    #[test]
    fn load_two_records_in_file_order() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("c.ndjson");
        let a = serde_json::to_string(&item("a", "d1", 0, Split::Train, 2, 2)).unwrap();
        let b = serde_json::to_string(&item("b", "d1", 1, Split::Test, 2, 2)).unwrap();
        std::fs::write(&path, format!("{a}\n{b}\n")).unwrap();
        let corpus = Corpus::load(&path).unwrap();
        assert_eq!(corpus.len(), 2);
        assert_eq!(corpus.items()[0].id, "a");
        assert_eq!(corpus.items()[1].id, "b");
    }

    #[test]
    fn duplicate_id_is_reported_with_name() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("c.ndjson");
        let a = serde_json::to_string(&item("a", "d1", 0, Split::Train, 2, 2)).unwrap();
        std::fs::write(&path, format!("{a}\n{a}\n")).unwrap();
        let err = Corpus::load(&path).unwrap_err();
        match err {
            CorpusError::DuplicateId { id, line } => {
                assert_eq!(id, "a");
                assert_eq!(line, 2);
            }
            other => panic!("unexpected error: {other}"),
        }
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("c.ndjson");
        let a = serde_json::to_string(&item("a", "d1", 0, Split::Train, 16, 2)).unwrap();
        let b = serde_json::to_string(&item("b", "d1", 0, Split::Train, 8, 2)).unwrap();
        std::fs::write(&path, format!("{a}\n{b}\n")).unwrap();
        match Corpus::load(&path).unwrap_err() {
            CorpusError::DimensionMismatch {
                field,
                line,
                expected,
                found,
            } => {
                assert_eq!(field, "text_features");
                assert_eq!(line, 2);
                assert_eq!(expected, 16);
                assert_eq!(found, 8);
            }
            other => panic!("unexpected error: {other}"),
        }
    }

    #[test]
    fn unknown_split_is_malformed_with_line() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("c.ndjson");
        let a = serde_json::to_string(&item("a", "d1", 0, Split::Train, 2, 2)).unwrap();
        let bad = a.replace("train", "validation");
        std::fs::write(&path, format!("{a}\n{bad}\n")).unwrap();
        match Corpus::load(&path).unwrap_err() {
            CorpusError::Malformed { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error: {other}"),
        }
    }

    #[test]
    fn corpus_round_trips() {
        let items = vec![
            item("a", "d1", 0, Split::Train, 3, 2),
            item("b", "d2", 1, Split::Test, 3, 2),
        ];
        let corpus = Corpus::from_items(items).unwrap();
        let dir = tempdir().unwrap();
        let path = dir.path().join("c.ndjson");
        corpus.save(&path).unwrap();
        let reloaded = Corpus::load(&path).unwrap();
        assert_eq!(corpus, reloaded);
    }

    #[test]
    fn text_embeddings_parse() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("e.ndjson");
        std::fs::write(
            &path,
            "{\"id\":\"a\",\"vector\":[1.0,0.0]}\n{\"id\":\"b\",\"vector\":[0.0,1.0]}\n",
        )
        .unwrap();
        let map = load_embeddings(&path, 2).unwrap();
        assert_eq!(map.len(), 2);
        assert_eq!(map["a"], vec![1.0, 0.0]);
    }

    #[test]
    fn embedding_dimension_error() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("e.ndjson");
        std::fs::write(&path, "{\"id\":\"a\",\"vector\":[1.0,0.0,0.0]}\n").unwrap();
        match load_embeddings(&path, 2).unwrap_err() {
            CorpusError::EmbeddingDimension {
                id,
                expected,
                found,
            } => {
                assert_eq!(id, "a");
                assert_eq!(expected, 2);
                assert_eq!(found, 3);
            }
            other => panic!("unexpected error: {other}"),
        }
    }

    #[test]
    fn embedding_non_finite_error() {
        // JSON cannot express NaN/inf (such rows fail at parse), so the
        // finite check bites on the binary format, whose f32 payload can.
        let dir = tempdir().unwrap();
        let path = dir.path().join("e.bin");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(EMBEDDING_MAGIC);
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&2u32.to_le_bytes());
        bytes.extend_from_slice(&1u16.to_le_bytes());
        bytes.push(b'a');
        bytes.extend_from_slice(&1.0f32.to_le_bytes());
        bytes.extend_from_slice(&f32::INFINITY.to_le_bytes());
        std::fs::write(&path, bytes).unwrap();
        match load_embeddings(&path, 2).unwrap_err() {
            CorpusError::NonFiniteEmbedding { id } => assert_eq!(id, "a"),
            other => panic!("unexpected error: {other}"),
        }
    }

    #[test]
    fn binary_embeddings_round_trip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("e.bin");
        let mut map = BTreeMap::new();
        map.insert("a".to_string(), vec![0.25, -1.5]);
        map.insert("bb".to_string(), vec![3.0, 4.0]);
        save_embeddings_binary(&path, &map).unwrap();
        let loaded = load_embeddings(&path, 2).unwrap();
        assert_eq!(loaded, map); // values chosen exactly representable in f32
    }

    #[test]
    fn cross_check_flags_foreign_ids() {
        let corpus = Corpus::from_items(vec![item("a", "d1", 0, Split::Train, 2, 2)]).unwrap();
        let mut map = BTreeMap::new();
        map.insert("zz".to_string(), vec![1.0, 0.0]);
        match cross_check_ids(&map, &corpus).unwrap_err() {
            CorpusError::UnknownId { id } => assert_eq!(id, "zz"),
            other => panic!("unexpected error: {other}"),
        }
    }
}
