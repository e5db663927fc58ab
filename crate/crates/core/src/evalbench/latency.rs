//! Batched wall-clock search timing.
//!
//! Only index search is timed; query encoding happens beforehand.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::retrieval::{BinaryIndex, FlatIndex, InvertedIndex, PackedCode, SearchResult};
use crate::scalar::Scalar;

/// Anything that answers a batch of queries with ranked results.
pub trait SearchBackend {
    type Query;

    fn search_batch(&self, queries: &[Self::Query], k: usize) -> Result<Vec<SearchResult>>;
}

impl SearchBackend for BinaryIndex {
    type Query = PackedCode;

    fn search_batch(&self, queries: &[PackedCode], k: usize) -> Result<Vec<SearchResult>> {
        BinaryIndex::search_batch(self, queries, k)
    }
}

impl<T: Scalar> SearchBackend for FlatIndex<T> {
    type Query = Vec<T>;

    fn search_batch(&self, queries: &[Vec<T>], k: usize) -> Result<Vec<SearchResult>> {
        let views: Vec<&[T]> = queries.iter().map(Vec::as_slice).collect();
        FlatIndex::search_batch(self, &views, k)
    }
}

impl SearchBackend for InvertedIndex {
    type Query = String;

    fn search_batch(&self, queries: &[String], k: usize) -> Result<Vec<SearchResult>> {
        queries.iter().map(|q| self.search(q, k)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    /// Queries per batch.
    pub bsz: usize,
    pub ks: Vec<usize>,
    /// Minimum number of timed batches per K.
    pub repetitions: usize,
    /// Untimed batches run before timing starts.
    pub warmup: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            bsz: 16,
            ks: vec![20, 100],
            repetitions: 20,
            warmup: 3,
            seed: 0,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.bsz == 0 {
            return Err(Error::InvalidArgument("bsz must be at least 1".into()));
        }
        if self.ks.is_empty() || self.ks.contains(&0) {
            return Err(Error::InvalidArgument("K list must be non-empty and positive".into()));
        }
        if self.repetitions == 0 {
            return Err(Error::InvalidArgument("repetitions must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub k: usize,
    pub median_ms: f64,
    pub p95_ms: f64,
    pub mean_ms: f64,
    pub batches: usize,
}

#[derive(Debug, Clone)]
pub struct LatencyRun {
    pub stats: LatencyStats,
    /// Results of every query, in query order, from the first timed pass.
    pub results: Vec<SearchResult>,
}

/// Nearest-rank percentile of an unsorted sample.
pub fn percentile(samples: &[f64], p: f64) -> f64 {
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let rank = ((p / 100.0) * s.len() as f64).ceil() as usize;
    s[rank.clamp(1, s.len()) - 1]
}

pub fn median(samples: &[f64]) -> f64 {
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let m = s.len() / 2;
    if s.len().is_multiple_of(2) {
        (s[m - 1] + s[m]) / 2.0
    } else {
        s[m]
    }
}

/// Time `backend` on `queries` grouped into batches of `cfg.bsz`.
///
/// After `cfg.warmup` untimed batches, batches are timed in order, cycling,
/// until every batch has run once and at least `cfg.repetitions` samples
/// exist.
pub fn measure_latency<B: SearchBackend>(
    backend: &B,
    queries: &[B::Query],
    cfg: &BenchConfig,
) -> Result<Vec<LatencyRun>> {
    cfg.validate()?;
    let batches: Vec<&[B::Query]> = queries.chunks(cfg.bsz).collect();
    if batches.len() < cfg.warmup + 1 {
        return Err(Error::InvalidArgument(format!(
            "{} queries form {} batches of {}; need at least {}",
            queries.len(),
            batches.len(),
            cfg.bsz,
            cfg.warmup + 1
        )));
    }
    let mut runs = Vec::with_capacity(cfg.ks.len());
    for &k in &cfg.ks {
        for b in batches.iter().cycle().take(cfg.warmup) {
            std::hint::black_box(backend.search_batch(b, k)?);
        }
        let total = cfg.repetitions.max(batches.len());
        let mut samples = Vec::with_capacity(total);
        let mut results = Vec::with_capacity(queries.len());
        for (i, b) in batches.iter().cycle().take(total).enumerate() {
            let start = Instant::now();
            let out = backend.search_batch(b, k)?;
            let ms = start.elapsed().as_secs_f64() * 1e3;
            samples.push(ms.max(f64::MIN_POSITIVE));
            if i < batches.len() {
                results.extend(out);
            }
        }
        runs.push(LatencyRun {
            stats: LatencyStats {
                k,
                median_ms: median(&samples),
                p95_ms: percentile(&samples, 95.0),
                mean_ms: samples.iter().sum::<f64>() / samples.len() as f64,
                batches: samples.len(),
            },
            results,
        });
    }
    Ok(runs)
}
