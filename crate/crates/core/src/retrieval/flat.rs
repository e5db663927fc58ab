use std::path::Path;

use super::{check_k, SearchResult, TopK};
use crate::binio::{self, Reader};
use crate::corpus::EmbeddingStore;
use crate::error::{Error, Result};
use crate::scalar::{self, Scalar};

pub const FLAT_INDEX_MAGIC: &[u8; 8] = b"DSHCFLT1";

/// Bytes of the f32 matrix for an `n × d` flat index.
pub fn flat_code_bytes(n: u64, d: u64) -> u64 {
    n * d * 4
}

/// Matching degree used by the dense scan.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Similarity {
    #[default]
    Dot,
    Cosine,
}

/// Dense `n × d` matrix searched by exhaustive inner-product scan.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatIndex<T> {
    d: usize,
    data: Vec<T>,
    ids: Vec<u64>,
    similarity: Similarity,
    norms: Vec<T>,
}

impl<T: Scalar> FlatIndex<T> {
    pub fn new(d: usize, data: Vec<T>, ids: Vec<u64>) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidArgument("dimension must be positive".into()));
        }
        if data.len() != ids.len() * d {
            return Err(Error::DimensionMismatch {
                expected: ids.len() * d,
                got: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("flat index matrix".into()));
        }
        Ok(FlatIndex {
            d,
            data,
            ids,
            similarity: Similarity::Dot,
            norms: Vec::new(),
        })
    }

    /// Index every row of `store` under ids `0..n`.
    pub fn from_store(store: &EmbeddingStore<T>) -> Self {
        FlatIndex {
            d: store.d(),
            data: store.as_slice().to_vec(),
            ids: (0..store.n() as u64).collect(),
            similarity: Similarity::Dot,
            norms: Vec::new(),
        }
    }

    pub fn with_similarity(mut self, similarity: Similarity) -> Self {
        self.similarity = similarity;
        self.norms = match similarity {
            Similarity::Dot => Vec::new(),
            Similarity::Cosine => self.rows().map(|r| scalar::dot(r, r).sqrt()).collect(),
        };
        self
    }

    pub fn similarity(&self) -> Similarity {
        self.similarity
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn rows(&self) -> impl Iterator<Item = &[T]> {
        self.data.chunks_exact(self.d)
    }

    pub fn code_bytes(&self) -> u64 {
        flat_code_bytes(self.len() as u64, self.d as u64)
    }

    /// Matching degree between stored row `i` and `query`.
    pub fn score(&self, i: usize, query: &[T]) -> T {
        let row = &self.data[i * self.d..(i + 1) * self.d];
        let s = scalar::dot(row, query);
        match self.similarity {
            Similarity::Dot => s,
            Similarity::Cosine => {
                let denom = self.norms[i] * scalar::dot(query, query).sqrt();
                if denom > T::zero() {
                    s / denom
                } else {
                    T::zero()
                }
            }
        }
    }

    pub fn search(&self, query: &[T], k: usize) -> Result<SearchResult> {
        Ok(self.search_batch(&[query], k)?.pop().unwrap())
    }

    /// K largest matching degrees per query, ties by ascending id. Rows are
    /// streamed once per batch.
    pub fn search_batch(&self, queries: &[&[T]], k: usize) -> Result<Vec<SearchResult>> {
        check_k(k)?;
        for q in queries {
            if q.len() != self.d {
                return Err(Error::DimensionMismatch {
                    expected: self.d,
                    got: q.len(),
                });
            }
        }
        let qnorms: Vec<T> = queries.iter().map(|q| scalar::dot(q, q).sqrt()).collect();
        let mut heaps: Vec<TopK> = queries.iter().map(|_| TopK::new(k)).collect();
        for (i, (row, &id)) in self.rows().zip(&self.ids).enumerate() {
            for ((q, heap), &qn) in queries.iter().zip(heaps.iter_mut()).zip(&qnorms) {
                let mut s = scalar::dot(row, q);
                if self.similarity == Similarity::Cosine {
                    let denom = self.norms[i] * qn;
                    s = if denom > T::zero() { s / denom } else { T::zero() };
                }
                let key = -s.as_f64();
                match heap.worst_key() {
                    Some(w) if key > w => {}
                    _ => heap.push(key, id),
                }
            }
        }
        Ok(heaps.into_iter().map(|h| h.into_result(true)).collect())
    }

    pub fn cast<U: Scalar>(&self) -> FlatIndex<U> {
        FlatIndex {
            d: self.d,
            data: self.data.iter().map(|v| U::from_f64_lossy(v.as_f64())).collect(),
            ids: self.ids.clone(),
            similarity: Similarity::Dot,
            norms: Vec::new(),
        }
        .with_similarity(self.similarity)
    }
}

/// `DSHCFLT1 | u32 n | u32 d | f32 matrix | n u64 ids`.
pub fn save_flat_index<T: Scalar>(index: &FlatIndex<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let n = u32::try_from(index.len()).map_err(|_| Error::Overflow("n exceeds u32".into()))?;
    let mut buf = Vec::with_capacity(16 + index.data.len() * 4 + index.len() * 8);
    buf.extend_from_slice(FLAT_INDEX_MAGIC);
    buf.extend_from_slice(&n.to_le_bytes());
    buf.extend_from_slice(&(index.d as u32).to_le_bytes());
    for v in &index.data {
        buf.extend_from_slice(&v.to_f32_lossy().to_le_bytes());
    }
    for id in &index.ids {
        buf.extend_from_slice(&id.to_le_bytes());
    }
    let mut w = binio::create(path)?;
    binio::write_all(&mut w, &buf, path)?;
    binio::finish(w, path)
}

pub fn load_flat_index<T: Scalar>(path: impl AsRef<Path>) -> Result<FlatIndex<T>> {
    decode_flat_index(&binio::read_all(path.as_ref())?)
}

pub(crate) fn decode_flat_index<T: Scalar>(bytes: &[u8]) -> Result<FlatIndex<T>> {
    let mut r = Reader::new(bytes);
    r.magic(FLAT_INDEX_MAGIC)?;
    let n = r.u32()? as u64;
    let d = r.u32()? as u64;
    let mat = r.exact_payload(binio::checked_size(&[n, d, 4], "flat index matrix")?)?;
    let ids = r.exact_payload(binio::checked_size(&[n, 8], "flat index ids")?)?;
    r.expect_end()?;
    let data = mat
        .chunks_exact(4)
        .map(|c| T::from_storage(f32::from_le_bytes(c.try_into().unwrap())))
        .collect();
    let ids = ids
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    FlatIndex::new(d as usize, data, ids)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_rows() -> FlatIndex<f64> {
        let s = 0.5f64.sqrt();
        FlatIndex::new(2, vec![1.0, 0.0, 0.0, 1.0, s, s, -1.0, 0.0], vec![0, 1, 2, 3]).unwrap()
    }

    #[test]
    fn self_query_ranks_first() {
        let idx = unit_rows();
        for i in 0..4 {
            let q: Vec<f64> = idx.rows().nth(i).unwrap().to_vec();
            assert_eq!(idx.search(&q, 1).unwrap().ids(), vec![i as u64]);
        }
    }

    #[test]
    fn k_exceeding_n_returns_all() {
        let idx = unit_rows();
        let r = idx.search(&[1.0, 0.0], 10).unwrap();
        assert_eq!(r.len(), 4);
        assert_eq!(r.ids(), vec![0, 2, 1, 3]);
        assert!(idx.search(&[1.0], 1).is_err());
    }

    #[test]
    fn equal_scores_prefer_lower_id() {
        let idx = FlatIndex::new(1, vec![2.0, 1.0, 2.0], vec![5, 6, 2]).unwrap();
        assert_eq!(idx.search(&[1.0], 3).unwrap().ids(), vec![2, 5, 6]);
    }

    #[test]
    fn cosine_ignores_row_scale() {
        let idx = FlatIndex::new(2, vec![10.0, 0.0, 0.6, 0.8], vec![0, 1])
            .unwrap()
            .with_similarity(Similarity::Cosine);
        let r = idx.search(&[0.0, 1.0], 2).unwrap();
        assert_eq!(r.ids(), vec![1, 0]);
        assert!((r.hits[0].score - 0.8).abs() < 1e-12);
        let dot = idx.clone().with_similarity(Similarity::Dot);
        assert_eq!(dot.search(&[1.0, 0.1], 1).unwrap().ids(), vec![0]);
    }

    #[test]
    fn roundtrip() {
        let idx = FlatIndex::<f32>::new(3, (0..12).map(|i| i as f32 * 0.25).collect(), vec![9, 8, 7, 6]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.bin");
        save_flat_index(&idx, &p).unwrap();
        assert_eq!(std::fs::metadata(&p).unwrap().len(), 16 + 48 + 32);
        assert_eq!(load_flat_index::<f32>(&p).unwrap(), idx);
        assert_eq!(idx.code_bytes(), 48);
    }
}
