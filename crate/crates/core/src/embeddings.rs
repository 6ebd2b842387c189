//! Entity embedding sources: a JSON-lines sidecar of precomputed vectors, or
//! a built-in featurizer whose projection is trained with the rest of the
//! model.

use std::collections::HashMap;
use std::io::BufRead;
use std::path::Path;

use serde::Deserialize;

use crate::document::Entity;
use crate::error::{Error, Result};

/// Number of geometry features appended after the trigram hash buckets.
pub const GEOMETRY_FEATURES: usize = 8;

/// Count clip for a hash bucket.
const MAX_COUNT: f64 = 3.0;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    dim: usize,
    vectors: HashMap<(String, i64), Vec<f64>>,
}

#[derive(Deserialize)]
struct Line {
    doc_id: String,
    entity_id: i64,
    vector: Vec<f64>,
}

impl EmbeddingStore {
    pub fn from_reader(reader: impl BufRead) -> Result<Self> {
        let mut dim = None;
        let mut vectors = HashMap::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::io("<embeddings>", e))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: Line = serde_json::from_str(&line).map_err(|e| Error::Json {
                offset: e.column().saturating_sub(1),
                message: format!("embeddings line {}: {e}", lineno + 1),
            })?;
            let expected = *dim.get_or_insert(rec.vector.len());
            if rec.vector.len() != expected {
                return Err(Error::EmbeddingDim { expected, found: rec.vector.len() });
            }
            if rec.vector.iter().any(|v| !v.is_finite()) {
                return Err(Error::Validation(format!(
                    "embedding for ({}, {}) is not finite",
                    rec.doc_id, rec.entity_id
                )));
            }
            vectors.insert((rec.doc_id, rec.entity_id), rec.vector);
        }
        Ok(Self { dim: dim.unwrap_or(0), vectors })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_reader(std::io::BufReader::new(file))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    /// Fails unless the stored vectors have dimension `expected`.
    pub fn check_dim(&self, expected: usize) -> Result<()> {
        if !self.vectors.is_empty() && self.dim != expected {
            return Err(Error::EmbeddingDim { expected, found: self.dim });
        }
        Ok(())
    }

    pub fn get(&self, doc_id: &str, entity_id: i64) -> Result<&[f64]> {
        self.vectors
            .get(&(doc_id.to_string(), entity_id))
            .map(Vec::as_slice)
            .ok_or_else(|| Error::MissingEmbedding { doc_id: doc_id.to_string(), entity_id })
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Character trigram counts hashed into `hash_dim` buckets (FNV-1a), each
/// count clipped at 3. Text shorter than three characters hashes as a whole.
pub fn trigram_hash(text: &str, hash_dim: usize) -> Vec<f64> {
    let mut out = vec![0.0; hash_dim];
    if hash_dim == 0 || text.is_empty() {
        return out;
    }
    let chars: Vec<char> = text.chars().collect();
    let mut bump = |gram: &[char]| {
        let s: String = gram.iter().collect();
        let slot = (fnv1a(s.as_bytes()) % hash_dim as u64) as usize;
        out[slot] = (out[slot] + 1.0).min(MAX_COUNT);
    };
    if chars.len() < 3 {
        bump(&chars);
    } else {
        chars.windows(3).for_each(&mut bump);
    }
    out
}

/// Page-normalized `x0, y0, x1, y1, width, height, center-x, center-y`.
pub fn geometry_features(entity: &Entity, page_width: f64, page_height: f64) -> [f64; GEOMETRY_FEATURES] {
    let w = if page_width > 0.0 { page_width } else { 1.0 };
    let h = if page_height > 0.0 { page_height } else { 1.0 };
    let b = entity.span_box;
    let (cx, cy) = b.center();
    [b.x0 / w, b.y0 / h, b.x1 / w, b.y1 / h, b.width() / w, b.height() / h, cx / w, cy / h]
}

/// Raw featurizer input: trigram buckets followed by geometry features.
pub fn featurize_input(entity: &Entity, page_width: f64, page_height: f64, hash_dim: usize) -> Vec<f64> {
    let mut v = trigram_hash(&entity.text, hash_dim);
    v.extend_from_slice(&geometry_features(entity, page_width, page_height));
    v
}

/// Where entity embeddings come from.
#[derive(Debug, Clone)]
pub enum EmbeddingProvider {
    /// Trainable projection of [`featurize_input`].
    Featurizer { hash_dim: usize },
    /// Fixed vectors from a sidecar file.
    Precomputed(EmbeddingStore),
}

impl EmbeddingProvider {
    /// Vectors from the sidecar at `path` (checked against `feature_dim`), or
    /// the featurizer when there is none.
    pub fn open(path: Option<&Path>, feature_dim: usize, hash_dim: usize) -> Result<Self> {
        match path {
            Some(p) => {
                let store = EmbeddingStore::load(p)?;
                store.check_dim(feature_dim)?;
                Ok(EmbeddingProvider::Precomputed(store))
            }
            None => Ok(EmbeddingProvider::Featurizer { hash_dim }),
        }
    }

    /// Input vector for one entity: featurizer input, or the stored embedding.
    pub fn input(&self, doc_id: &str, entity: &Entity, page: (f64, f64)) -> Result<Vec<f64>> {
        match self {
            EmbeddingProvider::Featurizer { hash_dim } => Ok(featurize_input(entity, page.0, page.1, *hash_dim)),
            EmbeddingProvider::Precomputed(store) => store.get(doc_id, entity.id).map(<[f64]>::to_vec),
        }
    }

    pub fn input_dim(&self, feature_dim: usize) -> usize {
        match self {
            EmbeddingProvider::Featurizer { hash_dim } => hash_dim + GEOMETRY_FEATURES,
            EmbeddingProvider::Precomputed(_) => feature_dim,
        }
    }
}
