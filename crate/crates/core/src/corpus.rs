//! Conversation corpora, embedding stores, and labeled training pairs.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array2;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::binio::{self, Reader};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const EMBEDDING_MAGIC: &[u8; 8] = b"DSHCEMB1";

/// Default dense embedding width, matching a BERT-base pooled output.
pub const DEFAULT_DIM: usize = 768;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Utterance {
    pub id: u64,
    pub text: String,
}

/// Paired contexts/responses plus the deduplicated response database.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    pub contexts: Vec<Utterance>,
    pub responses: Vec<Utterance>,
    pub database: Vec<Utterance>,
    /// `response_db_ids[i]` is the database id holding response `i`.
    pub response_db_ids: Vec<u64>,
}

impl Corpus {
    /// Ground-truth positives as `(context id, database id)`.
    pub fn positives(&self) -> Vec<(u64, u64)> {
        self.contexts
            .iter()
            .zip(&self.response_db_ids)
            .map(|(c, &r)| (c.id, r))
            .collect()
    }
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus> {
    let path = path.as_ref();
    let bytes = binio::read_all(path)?;
    let text = String::from_utf8(bytes).map_err(|e| Error::Parse {
        line: 0,
        msg: format!("invalid UTF-8: {e}"),
    })?;
    parse_corpus(&text)
}

/// Parse `context<TAB>response` lines. Blank lines are skipped.
pub fn parse_corpus(text: &str) -> Result<Corpus> {
    let mut corpus = Corpus::default();
    let mut seen: HashMap<String, u64> = HashMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = lineno + 1;
        let raw = raw.strip_suffix('\r').unwrap_or(raw);
        if raw.is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.split('\t').collect();
        if fields.len() != 2 {
            return Err(Error::Parse {
                line,
                msg: format!("expected 2 fields, found {}", fields.len()),
            });
        }
        let (ctx, resp) = (fields[0].trim(), fields[1].trim());
        if ctx.is_empty() || resp.is_empty() {
            return Err(Error::Parse {
                line,
                msg: "empty utterance".into(),
            });
        }
        let id = corpus.contexts.len() as u64;
        corpus.contexts.push(Utterance {
            id,
            text: ctx.to_string(),
        });
        corpus.responses.push(Utterance {
            id,
            text: resp.to_string(),
        });
        let next = corpus.database.len() as u64;
        let db_id = *seen.entry(resp.to_string()).or_insert_with(|| {
            corpus.database.push(Utterance {
                id: next,
                text: resp.to_string(),
            });
            next
        });
        corpus.response_db_ids.push(db_id);
    }
    if corpus.contexts.is_empty() {
        return Err(Error::Empty("corpus has no pairs".into()));
    }
    Ok(corpus)
}

/// Row-major `n × d` matrix of embeddings; row `i` belongs to id `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore<T> {
    vectors: Array2<T>,
}

impl<T: Scalar> EmbeddingStore<T> {
    pub fn new(vectors: Array2<T>) -> Result<Self> {
        if let Some(pos) = vectors.iter().position(|v| !v.is_finite()) {
            let d = vectors.ncols().max(1);
            return Err(Error::NonFinite(format!(
                "embedding row {} column {}",
                pos / d,
                pos % d
            )));
        }
        let vectors = if vectors.is_standard_layout() {
            vectors
        } else {
            vectors.as_standard_layout().into_owned()
        };
        Ok(EmbeddingStore { vectors })
    }

    pub fn from_rows(rows: &[Vec<T>], d: usize) -> Result<Self> {
        let mut flat = Vec::with_capacity(rows.len() * d);
        for r in rows {
            if r.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: r.len(),
                });
            }
            flat.extend_from_slice(r);
        }
        let m = Array2::from_shape_vec((rows.len(), d), flat).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        Self::new(m)
    }

    pub fn empty(d: usize) -> Self {
        EmbeddingStore {
            vectors: Array2::zeros((0, d)),
        }
    }

    pub fn n(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn d(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn vectors(&self) -> &Array2<T> {
        &self.vectors
    }

    pub fn row(&self, i: usize) -> &[T] {
        let d = self.d();
        &self.vectors.as_slice().expect("standard layout")[i * d..(i + 1) * d]
    }

    pub fn as_slice(&self) -> &[T] {
        self.vectors.as_slice().expect("standard layout")
    }

    pub fn cast<U: Scalar>(&self) -> EmbeddingStore<U> {
        EmbeddingStore {
            vectors: self.vectors.mapv(|v| U::from_f64_lossy(v.as_f64())),
        }
    }

    /// Gather rows by id into a new `len × d` matrix.
    pub fn gather(&self, ids: &[u64]) -> Result<Array2<T>> {
        let d = self.d();
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            let i = id as usize;
            if i >= self.n() {
                return Err(Error::InvalidArgument(format!(
                    "id {id} out of range for store of {} rows",
                    self.n()
                )));
            }
            out.extend_from_slice(self.row(i));
        }
        Ok(Array2::from_shape_vec((ids.len(), d), out).expect("shape"))
    }
}

/// Bytes taken by the f32 payload of an `n × d` store.
pub fn embedding_payload_bytes(n: u64, d: u64) -> u64 {
    n * d * 4
}

pub fn save_embeddings<T: Scalar>(store: &EmbeddingStore<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let n = u32::try_from(store.n()).map_err(|_| Error::Overflow("n exceeds u32".into()))?;
    let d = u32::try_from(store.d()).map_err(|_| Error::Overflow("d exceeds u32".into()))?;
    let mut w = binio::create(path)?;
    let mut buf = Vec::with_capacity(16 + store.n() * store.d() * 4);
    buf.extend_from_slice(EMBEDDING_MAGIC);
    buf.extend_from_slice(&n.to_le_bytes());
    buf.extend_from_slice(&d.to_le_bytes());
    for v in store.as_slice() {
        buf.extend_from_slice(&v.to_f32_lossy().to_le_bytes());
    }
    binio::write_all(&mut w, &buf, path)?;
    binio::finish(w, path)
}

pub fn load_embeddings<T: Scalar>(path: impl AsRef<Path>) -> Result<EmbeddingStore<T>> {
    let bytes = binio::read_all(path.as_ref())?;
    decode_embeddings(&bytes)
}

pub fn decode_embeddings<T: Scalar>(bytes: &[u8]) -> Result<EmbeddingStore<T>> {
    let mut r = Reader::new(bytes);
    r.magic(EMBEDDING_MAGIC)?;
    let n = r.u32()? as u64;
    let d = r.u32()? as u64;
    let len = binio::checked_size(&[n, d, 4], "embedding payload")?;
    let payload = r.exact_payload(len)?;
    r.expect_end()?;
    let data: Vec<T> = payload
        .chunks_exact(4)
        .map(|c| T::from_storage(f32::from_le_bytes(c.try_into().unwrap())))
        .collect();
    let m =
        Array2::from_shape_vec((n as usize, d as usize), data).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    EmbeddingStore::new(m)
}

fn fnv1a(bytes: &[u8], n: u8) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in std::iter::once(&n).chain(bytes) {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Deterministic stand-in for a trained sentence encoder.
///
/// Character 1/2/3-grams are counted, each distinct gram selects a row of an
/// implicit seed-derived ±1 matrix, and the weighted sum is L2-normalized.
/// The empty string maps to the first basis vector.
pub fn synth_embed<T: Scalar>(text: &str, d: usize, seed: u64) -> Vec<T> {
    assert!(d >= 1, "embedding dimension must be positive");
    let chars: Vec<char> = text.chars().collect();
    if chars.is_empty() {
        let mut e = vec![T::zero(); d];
        e[0] = T::one();
        return e;
    }
    let mut grams: BTreeMap<u64, f64> = BTreeMap::new();
    let mut buf = String::new();
    for n in 1..=3usize {
        for w in chars.windows(n) {
            buf.clear();
            buf.extend(w.iter());
            *grams.entry(fnv1a(buf.as_bytes(), n as u8)).or_insert(0.0) += 1.0;
        }
    }
    let mut acc = vec![0.0f64; d];
    for (&g, &count) in &grams {
        let mut rng = ChaCha8Rng::seed_from_u64(splitmix(seed ^ splitmix(g)));
        let mut bits = 0u64;
        for (j, a) in acc.iter_mut().enumerate() {
            if j % 64 == 0 {
                bits = rng.next_u64();
            }
            let s = if (bits >> (j % 64)) & 1 == 1 { 1.0 } else { -1.0 };
            *a += s * count;
        }
    }
    let norm = acc.iter().map(|v| v * v).sum::<f64>().sqrt();
    acc.iter().map(|v| T::from_f64_lossy(v / norm)).collect()
}

/// Embed a list of utterances into a store, row `i` = utterance `i`.
pub fn embed_utterances<T: Scalar>(utts: &[Utterance], d: usize, seed: u64) -> Result<EmbeddingStore<T>> {
    let rows: Vec<Vec<T>> = utts.iter().map(|u| synth_embed(&u.text, d, seed)).collect();
    EmbeddingStore::from_rows(&rows, d)
}

/// One labeled training instance for the hashing module.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PairExample {
    pub ctx_id: u64,
    pub can_id: u64,
    /// Similarity label, 0 or 1.
    pub label: u8,
}

/// Expand positives with `negatives_per_positive` uniform negatives each.
///
/// Negatives for positive `(c, r)` are drawn from `0..database_size` minus
/// `r`, independently and with replacement.
pub fn make_pairs(
    positives: &[(u64, u64)],
    database_size: usize,
    negatives_per_positive: usize,
    seed: u64,
) -> Result<Vec<PairExample>> {
    if database_size < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 database entries, have {database_size}"
        )));
    }
    if negatives_per_positive == 0 || negatives_per_positive >= database_size {
        return Err(Error::InvalidArgument(format!(
            "negatives per positive must be in 1..{database_size}, got {negatives_per_positive}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(positives.len() * (1 + negatives_per_positive));
    for &(ctx_id, can_id) in positives {
        if can_id as usize >= database_size {
            return Err(Error::InvalidArgument(format!(
                "positive candidate {can_id} outside database of {database_size}"
            )));
        }
        out.push(PairExample {
            ctx_id,
            can_id,
            label: 1,
        });
        for _ in 0..negatives_per_positive {
            let mut neg = rng.random_range(0..database_size as u64 - 1);
            if neg >= can_id {
                neg += 1;
            }
            out.push(PairExample {
                ctx_id,
                can_id: neg,
                label: 0,
            });
        }
    }
    Ok(out)
}

pub fn make_corpus_pairs(corpus: &Corpus, negatives_per_positive: usize, seed: u64) -> Result<Vec<PairExample>> {
    make_pairs(&corpus.positives(), corpus.database.len(), negatives_per_positive, seed)
}

/// `ctx_id<TAB>can_id<TAB>S` lines.
pub fn format_pairs_tsv(pairs: &[PairExample]) -> String {
    let mut s = String::new();
    for p in pairs {
        let _ = writeln!(s, "{}\t{}\t{}", p.ctx_id, p.can_id, p.label);
    }
    s
}

pub fn parse_pairs_tsv(text: &str) -> Result<Vec<PairExample>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        if raw.trim().is_empty() {
            continue;
        }
        let line = i + 1;
        let f: Vec<&str> = raw.trim_end_matches('\r').split('\t').collect();
        if f.len() != 3 {
            return Err(Error::Parse {
                line,
                msg: format!("expected 3 fields, found {}", f.len()),
            });
        }
        let num = |s: &str| {
            s.parse::<u64>().map_err(|e| Error::Parse {
                line,
                msg: format!("bad integer {s:?}: {e}"),
            })
        };
        let label = num(f[2])?;
        if label > 1 {
            return Err(Error::Parse {
                line,
                msg: format!("label must be 0 or 1, got {label}"),
            });
        }
        out.push(PairExample {
            ctx_id: num(f[0])?,
            can_id: num(f[1])?,
            label: label as u8,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn duplicate_responses_collapse() {
        let c = parse_corpus("hi\thello\nhi\thello\n").unwrap();
        assert_eq!(c.contexts.len(), 2);
        assert_eq!(c.database.len(), 1);
        assert_eq!(c.response_db_ids, vec![0, 0]);
    }

    #[test]
    fn distinct_pairs_counted() {
        let c = parse_corpus("a\tb\nc\td\ne\tf").unwrap();
        assert_eq!(c.contexts.len(), 3);
        assert_eq!(c.database.len(), 3);
        assert_eq!(c.contexts[2].id, 2);
    }

    #[test]
    fn single_column_line_is_rejected() {
        let err = parse_corpus("only one field\n").unwrap_err();
        assert_eq!(err.to_string(), "line 1: expected 2 fields, found 1");
        let err = parse_corpus("a\tb\nbad\n").unwrap_err();
        assert!(err.to_string().starts_with("line 2: expected 2 fields"));
    }

    #[test]
    fn empty_file_is_an_error() {
        assert!(matches!(parse_corpus(""), Err(Error::Empty(_))));
        assert!(matches!(parse_corpus("\n\n"), Err(Error::Empty(_))));
    }

    #[test]
    fn whitespace_only_text_rejected() {
        assert!(parse_corpus("  \tb").is_err());
    }

    #[test]
    fn embedding_roundtrip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.bin");
        let s = EmbeddingStore::new(array![[1.0f32, -0.5, 3.25], [f32::MIN_POSITIVE, 0.1, -0.0]]).unwrap();
        save_embeddings(&s, &p).unwrap();
        let back: EmbeddingStore<f32> = load_embeddings(&p).unwrap();
        assert_eq!(back.n(), 2);
        assert_eq!(back.d(), 3);
        let bits = |s: &EmbeddingStore<f32>| s.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&s), bits(&back));
        assert_eq!(std::fs::metadata(&p).unwrap().len(), 16 + 2 * 3 * 4);
    }

    fn header(n: u32, d: u32) -> Vec<u8> {
        let mut b = EMBEDDING_MAGIC.to_vec();
        b.extend_from_slice(&n.to_le_bytes());
        b.extend_from_slice(&d.to_le_bytes());
        b
    }

    #[test]
    fn short_payload_is_truncated() {
        let mut b = header(5, 2);
        b.extend(std::iter::repeat_n(0u8, 4 * 2 * 4));
        assert!(matches!(decode_embeddings::<f32>(&b), Err(Error::Truncated { .. })));
    }

    #[test]
    fn distinct_decode_errors() {
        let mut b = header(1, 1);
        b[0] = b'X';
        assert!(matches!(decode_embeddings::<f32>(&b), Err(Error::BadMagic { .. })));
        let mut b = header(1, 1);
        b.extend_from_slice(&1.0f32.to_le_bytes());
        b.push(0);
        assert!(matches!(decode_embeddings::<f32>(&b), Err(Error::TrailingBytes(1))));
        let mut b = header(1, 1);
        b.extend_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(decode_embeddings::<f32>(&b), Err(Error::NonFinite(_))));
    }

    #[test]
    fn huge_header_overflows() {
        let b = header(u32::MAX, u32::MAX);
        assert!(matches!(decode_embeddings::<f32>(&b), Err(Error::Overflow(_))));
    }

    #[test]
    fn full_database_dense_payload() {
        assert_eq!(embedding_payload_bytes(109_105, 768), 335_170_560);
    }

    #[test]
    fn synth_embed_deterministic_and_unit() {
        let a: Vec<f64> = synth_embed("how are you today", 64, 7);
        let b: Vec<f64> = synth_embed("how are you today", 64, 7);
        assert_eq!(a, b);
        let c: Vec<f64> = synth_embed("how are you today", 64, 8);
        assert_ne!(a, c);
        let norm: f64 = a.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-12);
    }

    #[test]
    fn synth_embed_empty_is_first_basis_vector() {
        let e: Vec<f32> = synth_embed("", 5, 1);
        assert_eq!(e, vec![1.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn pair_counts() {
        let c = parse_corpus("a\tb\nc\td\n").unwrap();
        let p = make_corpus_pairs(&c, 1, 3).unwrap();
        assert_eq!(p.len(), 4);
        assert_eq!(p.iter().filter(|x| x.label == 1).count(), 2);
        assert!(make_corpus_pairs(&c, 2, 3).is_err());
    }

    #[test]
    fn negatives_exclude_positive() {
        let pos: Vec<(u64, u64)> = (0..50).map(|i| (i, i % 7)).collect();
        let pairs = make_pairs(&pos, 7, 3, 11).unwrap();
        assert_eq!(pairs.len(), 50 * 4);
        for chunk in pairs.chunks(4) {
            assert_eq!(chunk[0].label, 1);
            for neg in &chunk[1..] {
                assert_eq!(neg.label, 0);
                assert_ne!(neg.can_id, chunk[0].can_id);
                assert!(neg.can_id < 7);
            }
        }
        assert_eq!(pairs, make_pairs(&pos, 7, 3, 11).unwrap());
    }

    #[test]
    fn pairs_tsv_roundtrip() {
        let pos = [(0, 1), (1, 0), (2, 2)];
        let pairs = make_pairs(&pos, 3, 1, 5).unwrap();
        let text = format_pairs_tsv(&pairs);
        assert_eq!(text.lines().count(), 6);
        assert_eq!(parse_pairs_tsv(&text).unwrap(), pairs);
        assert!(parse_pairs_tsv("1\t2\t3\n").is_err());
    }
}
