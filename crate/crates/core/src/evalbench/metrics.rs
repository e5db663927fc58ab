use crate::corpus::EmbeddingStore;
use crate::retrieval::SearchResult;
use crate::scalar::{self, Scalar};

/// 1 when `truth` is among the first `k` hits.
pub fn coverage_at_k(result: &SearchResult, truth: u64, k: usize) -> bool {
    result.hits.iter().take(k).any(|h| h.id == truth)
}

/// Fraction of queries whose ground truth is recalled in the top `k`.
pub fn mean_coverage(results: &[SearchResult], truths: &[u64], k: usize) -> f64 {
    if results.is_empty() {
        return 0.0;
    }
    let hits = results
        .iter()
        .zip(truths)
        .filter(|(r, &t)| coverage_at_k(r, t, k))
        .count();
    hits as f64 / results.len() as f64
}

/// Relevance judge for (query, candidate) pairs, returning a score in [0, 1].
pub trait RelevanceScorer {
    fn score(&self, query_index: usize, candidate_id: u64) -> f64;
}

impl<F: Fn(usize, u64) -> f64> RelevanceScorer for F {
    fn score(&self, query_index: usize, candidate_id: u64) -> f64 {
        self(query_index, candidate_id)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ConstantScorer(pub f64);

impl RelevanceScorer for ConstantScorer {
    fn score(&self, _: usize, _: u64) -> f64 {
        self.0
    }
}

/// `(1 + cos(query, candidate)) / 2` over reference embeddings.
#[derive(Debug, Clone, Copy)]
pub struct ShiftedCosineScorer<'a, T> {
    pub queries: &'a EmbeddingStore<T>,
    pub candidates: &'a EmbeddingStore<T>,
}

impl<T: Scalar> RelevanceScorer for ShiftedCosineScorer<'_, T> {
    fn score(&self, query_index: usize, candidate_id: u64) -> f64 {
        let q = self.queries.row(query_index);
        let c = self.candidates.row(candidate_id as usize);
        let denom = (scalar::dot(q, q) * scalar::dot(c, c)).sqrt().as_f64();
        if denom == 0.0 {
            return 0.5;
        }
        let cos = (scalar::dot(q, c).as_f64() / denom).clamp(-1.0, 1.0);
        (1.0 + cos) / 2.0
    }
}

/// Mean judged relevance of the top `k` hits; `None` for an empty result.
pub fn correlation_at_k(
    result: &SearchResult,
    query_index: usize,
    scorer: &dyn RelevanceScorer,
    k: usize,
) -> Option<f64> {
    let top: Vec<_> = result.hits.iter().take(k).collect();
    if top.is_empty() {
        return None;
    }
    Some(top.iter().map(|h| scorer.score(query_index, h.id)).sum::<f64>() / top.len() as f64)
}

/// Average of per-query correlations, skipping queries with no hits.
pub fn mean_correlation(results: &[SearchResult], scorer: &dyn RelevanceScorer, k: usize) -> Option<f64> {
    let vals: Vec<f64> = results
        .iter()
        .enumerate()
        .filter_map(|(q, r)| correlation_at_k(r, q, scorer, k))
        .collect();
    if vals.is_empty() {
        None
    } else {
        Some(vals.iter().sum::<f64>() / vals.len() as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::retrieval::Hit;

    fn result(ids: &[u64]) -> SearchResult {
        SearchResult {
            hits: ids.iter().map(|&id| Hit { id, score: 0.0 }).collect(),
        }
    }

    #[test]
    fn coverage_cases() {
        let r = result(&[4, 2, 9]);
        assert!(coverage_at_k(&r, 4, 20));
        assert!(!coverage_at_k(&r, 7, 20));
        assert!(!coverage_at_k(&r, 9, 2));
        assert_eq!(mean_coverage(&[r.clone(), r], &[9, 1], 3), 0.5);
    }

    #[test]
    fn correlation_cases() {
        let r = result(&[1, 2, 3]);
        assert_eq!(correlation_at_k(&r, 0, &ConstantScorer(1.0), 20), Some(1.0));
        let by_id = |_: usize, id: u64| id as f64 / 10.0;
        assert_eq!(correlation_at_k(&r, 0, &by_id, 1), Some(0.1));
        assert_eq!(correlation_at_k(&result(&[]), 0, &by_id, 5), None);
        assert_eq!(
            mean_correlation(&[result(&[]), r], &ConstantScorer(0.25), 5),
            Some(0.25)
        );
    }

    #[test]
    fn shifted_cosine_range() {
        let q = EmbeddingStore::<f64>::from_rows(&[vec![1.0, 0.0]], 2).unwrap();
        let c = EmbeddingStore::<f64>::from_rows(&[vec![2.0, 0.0], vec![-1.0, 0.0], vec![0.0, 3.0]], 2).unwrap();
        let s = ShiftedCosineScorer {
            queries: &q,
            candidates: &c,
        };
        assert_eq!(s.score(0, 0), 1.0);
        assert_eq!(s.score(0, 1), 0.0);
        assert_eq!(s.score(0, 2), 0.5);
    }
}
