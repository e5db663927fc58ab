//! Coarse-grained candidate recall backends under one top-K contract.
//!
//! All three backends are exhaustive: BM25 walks the postings of the query
//! terms, the dense and Hamming backends scan every stored row. Results are
//! ordered best-first with ties broken by ascending id.

mod binary;
pub(crate) mod bm25;
mod code;
mod flat;

use std::cmp::Ordering;
use std::collections::BinaryHeap;

pub use binary::{binary_code_bytes, load_binary_index, save_binary_index, BinaryIndex, BINARY_INDEX_MAGIC};
pub use bm25::{
    bm25_idf, bm25_term_score, bm25_tokenize, is_cjk, load_inverted_index, save_inverted_index, Bm25Params,
    InvertedIndex, Posting, BM25_MAGIC,
};
pub use code::{hamming_distance, pack, unpack, PackedCode};
pub use flat::{flat_code_bytes, load_flat_index, save_flat_index, FlatIndex, Similarity, FLAT_INDEX_MAGIC};

/// One retrieved candidate. For Hamming search `score` holds the distance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub id: u64,
    pub score: f64,
}

/// Ranked hits, at most K of them.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SearchResult {
    pub hits: Vec<Hit>,
}

impl SearchResult {
    pub fn len(&self) -> usize {
        self.hits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hits.is_empty()
    }

    pub fn ids(&self) -> Vec<u64> {
        self.hits.iter().map(|h| h.id).collect()
    }

    /// Keep only the first `k` hits.
    pub fn truncated(&self, k: usize) -> SearchResult {
        SearchResult {
            hits: self.hits.iter().take(k).copied().collect(),
        }
    }
}

/// Heap entry ordered so that the *worst* kept candidate sits on top.
#[derive(Debug, Clone, Copy)]
struct Entry {
    /// Smaller is better.
    key: f64,
    id: u64,
}

impl PartialEq for Entry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Entry {}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        self.key.total_cmp(&other.key).then(self.id.cmp(&other.id))
    }
}

/// Bounded max-heap that retains the K best `(key, id)` pairs, smallest key
/// first.
#[derive(Debug)]
pub(crate) struct TopK {
    k: usize,
    heap: BinaryHeap<Entry>,
}

impl TopK {
    pub(crate) fn new(k: usize) -> Self {
        TopK {
            k,
            heap: BinaryHeap::with_capacity(k + 1),
        }
    }

    /// Offer a candidate with `key` where smaller is better.
    #[inline]
    pub(crate) fn push(&mut self, key: f64, id: u64) {
        // -0.0 and 0.0 must compare equal so the id tie rule applies
        let e = Entry { key: key + 0.0, id };
        if self.heap.len() < self.k {
            self.heap.push(e);
        } else if let Some(top) = self.heap.peek() {
            if e < *top {
                self.heap.pop();
                self.heap.push(e);
            }
        }
    }

    /// Current admission bound, if the heap is full.
    #[inline]
    pub(crate) fn worst_key(&self) -> Option<f64> {
        if self.heap.len() == self.k {
            self.heap.peek().map(|e| e.key)
        } else {
            None
        }
    }

    /// Finish; `negate` flips keys back into scores for descending backends.
    pub(crate) fn into_result(self, negate: bool) -> SearchResult {
        let mut v = self.heap.into_vec();
        v.sort();
        SearchResult {
            hits: v
                .into_iter()
                .map(|e| Hit {
                    id: e.id,
                    score: if negate { -e.key + 0.0 } else { e.key },
                })
                .collect(),
        }
    }
}

pub(crate) fn check_k(k: usize) -> crate::error::Result<()> {
    if k == 0 {
        return Err(crate::error::Error::InvalidArgument("K must be at least 1".into()));
    }
    Ok(())
}
