//! Okapi BM25 over an in-memory inverted index.
//!
//! `idf(t) = ln((N − df + 0.5)/(df + 0.5) + 1)` (non-negative variant) and
//! `tf' = tf·(k1 + 1) / (tf + k1·(1 − b + b·|D|/avgdl))`.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use super::{check_k, SearchResult, TopK};
use crate::binio::{self, Reader};
use crate::corpus::Utterance;
use crate::error::{Error, Result};

pub const BM25_MAGIC: &[u8; 8] = b"DSHCBM25";
const BM25_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Bm25Params { k1: 1.2, b: 0.75 }
    }
}

/// Han ideographs, kana, and Hangul syllables.
pub fn is_cjk(c: char) -> bool {
    matches!(c as u32,
        0x3040..=0x30FF
        | 0x3400..=0x4DBF
        | 0x4E00..=0x9FFF
        | 0xAC00..=0xD7AF
        | 0xF900..=0xFAFF
        | 0x20000..=0x2FA1F)
}

/// CJK characters become single-character tokens; runs of other
/// alphanumerics become lowercased words; anything else separates.
pub fn bm25_tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut word = String::new();
    for c in text.chars() {
        if is_cjk(c) {
            if !word.is_empty() {
                out.push(std::mem::take(&mut word));
            }
            out.push(c.to_string());
        } else if c.is_alphanumeric() {
            word.extend(c.to_lowercase());
        } else if !word.is_empty() {
            out.push(std::mem::take(&mut word));
        }
    }
    if !word.is_empty() {
        out.push(word);
    }
    out
}

pub fn bm25_idf(n_docs: u64, df: u64) -> f64 {
    let n = n_docs as f64;
    let df = df as f64;
    ((n - df + 0.5) / (df + 0.5) + 1.0).ln()
}

pub fn bm25_term_score(idf: f64, tf: u32, doc_len: u32, avgdl: f64, p: Bm25Params) -> f64 {
    let tf = tf as f64;
    idf * (tf * (p.k1 + 1.0)) / (tf + p.k1 * (1.0 - p.b + p.b * doc_len as f64 / avgdl))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Posting {
    /// Position of the document in the index (not its external id).
    pub doc: u32,
    pub tf: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InvertedIndex {
    postings: BTreeMap<String, Vec<Posting>>,
    doc_len: Vec<u32>,
    ids: Vec<u64>,
    avgdl: f64,
    params: Bm25Params,
}

impl InvertedIndex {
    pub fn build(docs: &[Utterance], params: Bm25Params) -> Result<Self> {
        if docs.is_empty() {
            return Err(Error::Empty("cannot index an empty corpus".into()));
        }
        let mut postings: BTreeMap<String, Vec<Posting>> = BTreeMap::new();
        let mut doc_len = Vec::with_capacity(docs.len());
        for (pos, doc) in docs.iter().enumerate() {
            let toks = bm25_tokenize(&doc.text);
            doc_len.push(toks.len() as u32);
            let mut tf: BTreeMap<String, u32> = BTreeMap::new();
            for t in toks {
                *tf.entry(t).or_insert(0) += 1;
            }
            for (t, c) in tf {
                postings.entry(t).or_default().push(Posting { doc: pos as u32, tf: c });
            }
        }
        let ids = docs.iter().map(|d| d.id).collect();
        Ok(Self::assemble(postings, doc_len, ids, params))
    }

    fn assemble(
        postings: BTreeMap<String, Vec<Posting>>,
        doc_len: Vec<u32>,
        ids: Vec<u64>,
        params: Bm25Params,
    ) -> Self {
        let total: u64 = doc_len.iter().map(|&l| l as u64).sum();
        let avgdl = total as f64 / doc_len.len() as f64;
        InvertedIndex {
            postings,
            doc_len,
            ids,
            avgdl,
            params,
        }
    }

    pub fn n_docs(&self) -> usize {
        self.doc_len.len()
    }

    pub fn avgdl(&self) -> f64 {
        self.avgdl
    }

    pub fn params(&self) -> Bm25Params {
        self.params
    }

    pub fn doc_len(&self) -> &[u32] {
        &self.doc_len
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn postings(&self, term: &str) -> &[Posting] {
        self.postings.get(term).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn df(&self, term: &str) -> usize {
        self.postings(term).len()
    }

    pub fn vocabulary(&self) -> impl Iterator<Item = &str> {
        self.postings.keys().map(String::as_str)
    }

    /// Bytes of the term dictionary plus postings (4-byte doc, 4-byte tf).
    pub fn code_bytes(&self) -> u64 {
        self.postings
            .iter()
            .map(|(t, p)| t.len() as u64 + 8 * p.len() as u64)
            .sum()
    }

    /// Distinct query terms in first-occurrence order.
    pub fn query_terms(text: &str) -> Vec<String> {
        let mut seen = HashSet::new();
        bm25_tokenize(text)
            .into_iter()
            .filter(|t| seen.insert(t.clone()))
            .collect()
    }

    /// Top-K documents by BM25. Documents sharing no term with the query are
    /// never returned.
    pub fn search(&self, query: &str, k: usize) -> Result<SearchResult> {
        check_k(k)?;
        let terms = Self::query_terms(query);
        let n = self.n_docs() as u64;
        let mut scores = vec![0.0f64; self.n_docs()];
        let mut touched: Vec<u32> = Vec::new();
        let mut hit = vec![false; self.n_docs()];
        for t in &terms {
            let plist = self.postings(t);
            if plist.is_empty() {
                continue;
            }
            let idf = bm25_idf(n, plist.len() as u64);
            for p in plist {
                let d = p.doc as usize;
                scores[d] += bm25_term_score(idf, p.tf, self.doc_len[d], self.avgdl, self.params);
                if !hit[d] {
                    hit[d] = true;
                    touched.push(p.doc);
                }
            }
        }
        let mut heap = TopK::new(k);
        for d in touched {
            heap.push(-scores[d as usize], self.ids[d as usize]);
        }
        Ok(heap.into_result(true))
    }

    pub fn search_batch(&self, queries: &[&str], k: usize) -> Result<Vec<SearchResult>> {
        queries.iter().map(|q| self.search(q, k)).collect()
    }
}

/// Versioned, length-prefixed layout (all integers little-endian):
///
/// ```text
/// "DSHCBM25" | u32 version=1 | f64 k1 | f64 b | u32 N
/// N × (u64 id, u32 doc_len)
/// u32 term_count
/// term_count × (u32 byte_len, utf8 bytes, u32 posting_count, posting_count × (u32 doc, u32 tf))
/// ```
///
/// Terms appear in byte-lexicographic order.
pub fn save_inverted_index(index: &InvertedIndex, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    buf.extend_from_slice(BM25_MAGIC);
    buf.extend_from_slice(&BM25_VERSION.to_le_bytes());
    buf.extend_from_slice(&index.params.k1.to_le_bytes());
    buf.extend_from_slice(&index.params.b.to_le_bytes());
    buf.extend_from_slice(&(index.n_docs() as u32).to_le_bytes());
    for (id, len) in index.ids.iter().zip(&index.doc_len) {
        buf.extend_from_slice(&id.to_le_bytes());
        buf.extend_from_slice(&len.to_le_bytes());
    }
    buf.extend_from_slice(&(index.postings.len() as u32).to_le_bytes());
    for (term, plist) in &index.postings {
        buf.extend_from_slice(&(term.len() as u32).to_le_bytes());
        buf.extend_from_slice(term.as_bytes());
        buf.extend_from_slice(&(plist.len() as u32).to_le_bytes());
        for p in plist {
            buf.extend_from_slice(&p.doc.to_le_bytes());
            buf.extend_from_slice(&p.tf.to_le_bytes());
        }
    }
    let mut w = binio::create(path)?;
    binio::write_all(&mut w, &buf, path)?;
    binio::finish(w, path)
}

pub fn load_inverted_index(path: impl AsRef<Path>) -> Result<InvertedIndex> {
    decode_inverted_index(&binio::read_all(path.as_ref())?)
}

pub(crate) fn decode_inverted_index(bytes: &[u8]) -> Result<InvertedIndex> {
    let mut r = Reader::new(bytes);
    r.magic(BM25_MAGIC)?;
    let version = r.u32()?;
    if version != BM25_VERSION {
        return Err(Error::InvalidArgument(format!(
            "unsupported postings version {version}"
        )));
    }
    let params = Bm25Params {
        k1: r.f64()?,
        b: r.f64()?,
    };
    let n = r.u32()? as usize;
    if n == 0 {
        return Err(Error::Empty("postings file has no documents".into()));
    }
    let mut ids = Vec::with_capacity(n.min(r.remaining() / 12));
    let mut doc_len = Vec::with_capacity(ids.capacity());
    for _ in 0..n {
        ids.push(r.u64()?);
        doc_len.push(r.u32()?);
    }
    let terms = r.u32()? as usize;
    let mut postings = BTreeMap::new();
    for _ in 0..terms {
        let len = r.u32()? as usize;
        let term = std::str::from_utf8(r.bytes(len)?)
            .map_err(|e| Error::InvalidArgument(format!("term is not UTF-8: {e}")))?
            .to_string();
        let count = r.u32()? as usize;
        let mut plist = Vec::with_capacity(count.min(r.remaining() / 8));
        for _ in 0..count {
            let doc = r.u32()?;
            let tf = r.u32()?;
            if doc as usize >= n {
                return Err(Error::InvalidArgument(format!("posting references doc {doc} of {n}")));
            }
            plist.push(Posting { doc, tf });
        }
        postings.insert(term, plist);
    }
    r.expect_end()?;
    Ok(InvertedIndex::assemble(postings, doc_len, ids, params))
}
