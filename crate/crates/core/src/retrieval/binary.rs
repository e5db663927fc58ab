use std::path::Path;

use super::code::PackedCode;
use super::{check_k, SearchResult, TopK};
use crate::binio::{self, Reader};
use crate::error::{Error, Result};
use crate::hashopt::SignCode;

pub const BINARY_INDEX_MAGIC: &[u8; 8] = b"DSHCIDX1";

/// Bytes needed for `n` packed codes of `h` bits.
pub fn binary_code_bytes(n: u64, h: u64) -> u64 {
    n * h.div_ceil(8)
}

/// Packed hash codes searched by exhaustive Hamming scan.
///
/// Codes are kept as little-endian 64-bit words in memory; the file layout
/// uses `ceil(h/8)` bytes per code.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryIndex {
    h: usize,
    words_per_code: usize,
    words: Vec<u64>,
    ids: Vec<u64>,
}

fn to_words(bytes: &[u8], out: &mut Vec<u64>, words_per_code: usize) {
    let start = out.len();
    for chunk in bytes.chunks(8) {
        let mut b = [0u8; 8];
        b[..chunk.len()].copy_from_slice(chunk);
        out.push(u64::from_le_bytes(b));
    }
    out.resize(start + words_per_code, 0);
}

impl BinaryIndex {
    pub fn new(h: usize) -> Result<Self> {
        if h == 0 {
            return Err(Error::InvalidArgument("code length must be positive".into()));
        }
        Ok(BinaryIndex {
            h,
            words_per_code: h.div_ceil(64),
            words: Vec::new(),
            ids: Vec::new(),
        })
    }

    pub fn from_codes(codes: &[PackedCode], ids: &[u64]) -> Result<Self> {
        let h = codes
            .first()
            .map(|c| c.h())
            .ok_or_else(|| Error::Empty("no codes".into()))?;
        if codes.len() != ids.len() {
            return Err(Error::DimensionMismatch {
                expected: codes.len(),
                got: ids.len(),
            });
        }
        let mut idx = Self::new(h)?;
        for (c, &id) in codes.iter().zip(ids) {
            idx.push(c, id)?;
        }
        Ok(idx)
    }

    /// Index ±1 codes with ids `0..n`.
    pub fn from_sign_codes(codes: &[SignCode]) -> Result<Self> {
        let packed: Vec<PackedCode> = codes.iter().map(super::code::pack).collect();
        let ids: Vec<u64> = (0..codes.len() as u64).collect();
        Self::from_codes(&packed, &ids)
    }

    pub fn push(&mut self, code: &PackedCode, id: u64) -> Result<()> {
        if code.h() != self.h {
            return Err(Error::DimensionMismatch {
                expected: self.h,
                got: code.h(),
            });
        }
        to_words(code.as_bytes(), &mut self.words, self.words_per_code);
        self.ids.push(id);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn h(&self) -> usize {
        self.h
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn code(&self, i: usize) -> PackedCode {
        let bytes: Vec<u8> = self.words[i * self.words_per_code..(i + 1) * self.words_per_code]
            .iter()
            .flat_map(|w| w.to_le_bytes())
            .take(self.h.div_ceil(8))
            .collect();
        PackedCode::from_bytes(bytes, self.h).expect("stored code is well formed")
    }

    pub fn code_bytes(&self) -> u64 {
        binary_code_bytes(self.len() as u64, self.h as u64)
    }

    fn query_words(&self, q: &PackedCode) -> Result<Vec<u64>> {
        if q.h() != self.h {
            return Err(Error::DimensionMismatch {
                expected: self.h,
                got: q.h(),
            });
        }
        let mut w = Vec::with_capacity(self.words_per_code);
        to_words(q.as_bytes(), &mut w, self.words_per_code);
        Ok(w)
    }

    /// K nearest codes by Hamming distance, ties by ascending id.
    pub fn search(&self, query: &PackedCode, k: usize) -> Result<SearchResult> {
        Ok(self.search_batch(std::slice::from_ref(query), k)?.pop().unwrap())
    }

    /// One linear pass over the index serving every query in the batch.
    pub fn search_batch(&self, queries: &[PackedCode], k: usize) -> Result<Vec<SearchResult>> {
        check_k(k)?;
        let qs: Vec<Vec<u64>> = queries.iter().map(|q| self.query_words(q)).collect::<Result<_>>()?;
        let mut heaps: Vec<TopK> = qs.iter().map(|_| TopK::new(k)).collect();
        let wpc = self.words_per_code;
        for (row, &id) in self.words.chunks_exact(wpc).zip(&self.ids) {
            for (q, heap) in qs.iter().zip(heaps.iter_mut()) {
                let mut dist = 0u32;
                for (a, b) in row.iter().zip(q) {
                    dist += (a ^ b).count_ones();
                }
                let dist = dist as f64;
                match heap.worst_key() {
                    Some(w) if dist > w => {}
                    _ => heap.push(dist, id),
                }
            }
        }
        Ok(heaps.into_iter().map(|h| h.into_result(false)).collect())
    }
}

/// `DSHCIDX1 | u32 n | u32 h | n·ceil(h/8) code bytes | n u64 ids`.
pub fn save_binary_index(index: &BinaryIndex, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let n = u32::try_from(index.len()).map_err(|_| Error::Overflow("n exceeds u32".into()))?;
    let bpc = index.h.div_ceil(8);
    let mut buf = Vec::with_capacity(16 + index.len() * (bpc + 8));
    buf.extend_from_slice(BINARY_INDEX_MAGIC);
    buf.extend_from_slice(&n.to_le_bytes());
    buf.extend_from_slice(&(index.h as u32).to_le_bytes());
    for row in index.words.chunks_exact(index.words_per_code) {
        let bytes: Vec<u8> = row.iter().flat_map(|w| w.to_le_bytes()).take(bpc).collect();
        buf.extend_from_slice(&bytes);
    }
    for id in &index.ids {
        buf.extend_from_slice(&id.to_le_bytes());
    }
    let mut w = binio::create(path)?;
    binio::write_all(&mut w, &buf, path)?;
    binio::finish(w, path)
}

pub fn load_binary_index(path: impl AsRef<Path>) -> Result<BinaryIndex> {
    decode_binary_index(&binio::read_all(path.as_ref())?)
}

pub(crate) fn decode_binary_index(bytes: &[u8]) -> Result<BinaryIndex> {
    let mut r = Reader::new(bytes);
    r.magic(BINARY_INDEX_MAGIC)?;
    let n = r.u32()? as u64;
    let h = r.u32()? as u64;
    let code_len = binio::checked_size(&[n, h.div_ceil(8)], "binary index codes")?;
    let id_len = binio::checked_size(&[n, 8], "binary index ids")?;
    let codes = r.exact_payload(code_len)?;
    let ids = r.exact_payload(id_len)?;
    r.expect_end()?;
    let mut idx = BinaryIndex::new(h as usize)?;
    let bpc = (h as usize).div_ceil(8);
    for (c, id) in codes.chunks_exact(bpc.max(1)).zip(ids.chunks_exact(8)) {
        let code = PackedCode::from_bytes(c.to_vec(), h as usize)?;
        idx.push(&code, u64::from_le_bytes(id.try_into().unwrap()))?;
    }
    Ok(idx)
}
