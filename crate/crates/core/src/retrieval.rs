//! Chunked BM25 retrieval over the knowledge corpus.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::KnowledgeDoc;

pub const INDEX_FORMAT_VERSION: u32 = 1;
pub const DEFAULT_K1: f64 = 0.9;
pub const DEFAULT_B: f64 = 0.4;
pub const DEFAULT_CHUNK_WORDS: usize = 256;
pub const DEFAULT_TOP_K: usize = 5;

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("duplicate document title: {0}")]
    DuplicateTitle(String),
    #[error("chunk size must be at least one word")]
    ZeroChunk,
    #[error("unsupported index version {0}")]
    Version(u32),
    #[error("index (de)serialization failed: {0}")]
    Serde(#[from] serde_json::Error),
}

/// Lowercase, strip non-alphanumerics, drop empties.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|w| {
            w.chars()
                .filter(|c| c.is_alphanumeric())
                .flat_map(char::to_lowercase)
                .collect::<String>()
        })
        .filter(|w| !w.is_empty())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chunk {
    pub doc_title: String,
    pub ordinal: usize,
    pub text: String,
    pub term_counts: BTreeMap<String, u32>,
    /// Number of terms after tokenization.
    pub length: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Bm25Params {
            k1: DEFAULT_K1,
            b: DEFAULT_B,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Index {
    pub version: u32,
    pub chunk_words: usize,
    pub params: Bm25Params,
    pub chunks: Vec<Chunk>,
    pub doc_freq: BTreeMap<String, u32>,
    pub avg_length: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hit<'a> {
    pub chunk: &'a Chunk,
    pub score: f64,
}

/// Split every document into consecutive runs of at most `chunk_words`
/// whitespace words and index them.
pub fn build_index(docs: &[KnowledgeDoc], chunk_words: usize) -> Result<Index, RetrievalError> {
    build_index_with(docs, chunk_words, Bm25Params::default())
}

pub fn build_index_with(
    docs: &[KnowledgeDoc],
    chunk_words: usize,
    params: Bm25Params,
) -> Result<Index, RetrievalError> {
    if chunk_words == 0 {
        return Err(RetrievalError::ZeroChunk);
    }
    let mut seen = HashSet::new();
    let mut chunks = Vec::new();
    for doc in docs {
        if !seen.insert(doc.title.as_str()) {
            return Err(RetrievalError::DuplicateTitle(doc.title.clone()));
        }
        let words: Vec<&str> = doc.text.split_whitespace().collect();
        for (ordinal, window) in words.chunks(chunk_words).enumerate() {
            let text = window.join(" ");
            let terms = tokenize(&text);
            let mut term_counts = BTreeMap::new();
            for t in &terms {
                *term_counts.entry(t.clone()).or_insert(0) += 1;
            }
            chunks.push(Chunk {
                doc_title: doc.title.clone(),
                ordinal,
                text,
                term_counts,
                length: terms.len() as u32,
            });
        }
    }

    let mut doc_freq = BTreeMap::new();
    for chunk in &chunks {
        for term in chunk.term_counts.keys() {
            *doc_freq.entry(term.clone()).or_insert(0) += 1;
        }
    }
    let avg_length = if chunks.is_empty() {
        0.0
    } else {
        chunks.iter().map(|c| c.length as f64).sum::<f64>() / chunks.len() as f64
    };
    Ok(Index {
        version: INDEX_FORMAT_VERSION,
        chunk_words,
        params,
        chunks,
        doc_freq,
        avg_length,
    })
}

impl Index {
    pub fn len(&self) -> usize {
        self.chunks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }

    pub fn has_title(&self, title: &str) -> bool {
        self.chunks.iter().any(|c| c.doc_title == title)
    }

    /// `ln(1 + (N - df + 0.5) / (df + 0.5))`.
    pub fn idf(&self, term: &str) -> f64 {
        let n = self.chunks.len() as f64;
        let df = self.doc_freq.get(term).copied().unwrap_or(0) as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    fn score(&self, chunk: &Chunk, terms: &[String]) -> f64 {
        let Bm25Params { k1, b } = self.params;
        let norm = if self.avg_length > 0.0 {
            chunk.length as f64 / self.avg_length
        } else {
            0.0
        };
        terms
            .iter()
            .filter_map(|t| {
                let tf = *chunk.term_counts.get(t)? as f64;
                Some(self.idf(t) * (tf * (k1 + 1.0)) / (tf + k1 * (1.0 - b + b * norm)))
            })
            .sum()
    }

    /// Rank chunks for `query`; at most `k` hits with positive score. Query
    /// terms count once each. Ties go to (title, ordinal) order. With
    /// `restrict_title`, only that document's chunks are scored.
    pub fn search(&self, query: &str, k: usize, restrict_title: Option<&str>) -> Vec<Hit<'_>> {
        let mut terms = tokenize(query);
        let mut seen = HashSet::new();
        terms.retain(|t| seen.insert(t.clone()));

        let mut hits: Vec<Hit> = self
            .chunks
            .iter()
            .filter(|c| restrict_title.is_none_or(|t| c.doc_title == t))
            .map(|chunk| Hit {
                chunk,
                score: self.score(chunk, &terms),
            })
            .filter(|h| h.score > 0.0)
            .collect();
        hits.sort_by(|a, b| {
            b.score
                .partial_cmp(&a.score)
                .unwrap_or(Ordering::Equal)
                .then_with(|| a.chunk.doc_title.cmp(&b.chunk.doc_title))
                .then_with(|| a.chunk.ordinal.cmp(&b.chunk.ordinal))
        });
        hits.truncate(k);
        hits
    }

    pub fn to_json(&self) -> Result<String, RetrievalError> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self, RetrievalError> {
        let index: Index = serde_json::from_str(text)?;
        if index.version != INDEX_FORMAT_VERSION {
            return Err(RetrievalError::Version(index.version));
        }
        Ok(index)
    }

    /// Chunk counts per title, for reporting.
    pub fn chunks_per_title(&self) -> HashMap<&str, usize> {
        let mut out = HashMap::new();
        for c in &self.chunks {
            *out.entry(c.doc_title.as_str()).or_insert(0) += 1;
        }
        out
    }
}
