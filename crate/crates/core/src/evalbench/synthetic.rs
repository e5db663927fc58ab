//! Seeded clustered embeddings standing in for a real response database.

use ndarray::Array2;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::corpus::{EmbeddingStore, Utterance};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub n_clusters: usize,
    pub per_cluster: usize,
    pub d: usize,
    /// Per-component standard deviation of the candidate perturbation.
    pub noise: f64,
    /// Per-component standard deviation of query/context perturbations.
    pub query_noise: f64,
    pub n_queries: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            n_clusters: 50,
            per_cluster: 200,
            d: 768,
            noise: 0.1,
            query_noise: 0.025,
            n_queries: 1000,
            seed: 0,
        }
    }
}

/// Candidates, held-out queries with their ground truth, and one training
/// context per candidate.
#[derive(Debug, Clone)]
pub struct SyntheticBenchmark {
    pub candidates: EmbeddingStore<f32>,
    pub candidate_texts: Vec<Utterance>,
    pub cluster_of: Vec<usize>,
    pub queries: EmbeddingStore<f32>,
    pub query_texts: Vec<Utterance>,
    /// `truth[q]` is the candidate id query `q` was derived from.
    pub truth: Vec<u64>,
    pub train_contexts: EmbeddingStore<f32>,
    pub train_texts: Vec<Utterance>,
    /// Training positives `(context id, candidate id)`.
    pub train_positives: Vec<(u64, u64)>,
}

fn normalized(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

fn perturb(base: &[f64], sigma: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut v: Vec<f64> = base
        .iter()
        .map(|&b| b + sigma * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
        .collect();
    normalized(&mut v);
    v
}

fn to_store(rows: &[Vec<f64>], d: usize) -> Result<EmbeddingStore<f32>> {
    let flat: Vec<f32> = rows.iter().flatten().map(|&v| v as f32).collect();
    EmbeddingStore::new(Array2::from_shape_vec((rows.len(), d), flat).expect("shape"))
}

const TOPIC_WORDS: usize = 40;
const SHARED_WORDS: usize = 300;
const SYLLABLES: [&str; 16] = [
    "ka", "lo", "mi", "ne", "su", "ta", "ri", "po", "ve", "da", "zu", "he", "ba", "fo", "gi", "ye",
];

fn word(n: usize) -> String {
    let mut s = String::new();
    let mut x = n + 1;
    while x > 0 {
        s.push_str(SYLLABLES[x % 16]);
        x /= 16;
    }
    s
}

fn topic_word(cluster: usize, rng: &mut ChaCha8Rng) -> String {
    word(SHARED_WORDS + cluster * TOPIC_WORDS + rng.random_range(0..TOPIC_WORDS))
}

fn shared_word(rng: &mut ChaCha8Rng) -> String {
    word(rng.random_range(0..SHARED_WORDS))
}

fn candidate_text(cluster: usize, rng: &mut ChaCha8Rng) -> String {
    let mut words: Vec<String> = (0..6).map(|_| topic_word(cluster, rng)).collect();
    words.extend((0..4).map(|_| shared_word(rng)));
    words.join(" ")
}

/// A query echoes a few words of its source plus fresh topic and filler words.
fn derived_text(source: &str, cluster: usize, rng: &mut ChaCha8Rng) -> String {
    let src: Vec<&str> = source.split(' ').collect();
    let mut words: Vec<String> = (0..3)
        .map(|_| src[rng.random_range(0..src.len())].to_string())
        .collect();
    words.extend((0..2).map(|_| topic_word(cluster, rng)));
    words.extend((0..2).map(|_| shared_word(rng)));
    words.join(" ")
}

/// Cluster centers are isotropic Gaussian draws normalized to unit length;
/// each candidate is its center plus Gaussian noise, renormalized. Queries
/// and training contexts are fresh perturbations of known candidates.
pub fn build_synthetic_benchmark(cfg: &SyntheticConfig) -> Result<SyntheticBenchmark> {
    if cfg.n_clusters < 2 || cfg.per_cluster == 0 || cfg.d == 0 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 clusters, 1 candidate per cluster, and d >= 1 (got {}, {}, {})",
            cfg.n_clusters, cfg.per_cluster, cfg.d
        )));
    }
    if !(cfg.noise >= 0.0 && cfg.query_noise >= 0.0) {
        return Err(Error::InvalidArgument("noise levels must be non-negative".into()));
    }
    let n = cfg.n_clusters * cfg.per_cluster;
    if cfg.n_queries > n {
        return Err(Error::InvalidArgument(format!(
            "{} queries requested but only {n} candidates",
            cfg.n_queries
        )));
    }
    let d = cfg.d;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let centers: Vec<Vec<f64>> = (0..cfg.n_clusters)
        .map(|_| perturb(&vec![0.0; d], 1.0, &mut rng))
        .collect();

    let mut cand = Vec::with_capacity(n);
    let mut cluster_of = Vec::with_capacity(n);
    let mut candidate_texts = Vec::with_capacity(n);
    for (c, center) in centers.iter().enumerate() {
        for _ in 0..cfg.per_cluster {
            cand.push(perturb(center, cfg.noise, &mut rng));
            cluster_of.push(c);
            candidate_texts.push(Utterance {
                id: candidate_texts.len() as u64,
                text: candidate_text(c, &mut rng),
            });
        }
    }

    let mut train = Vec::with_capacity(n);
    let mut train_texts = Vec::with_capacity(n);
    for (i, base) in cand.iter().enumerate() {
        train.push(perturb(base, cfg.query_noise, &mut rng));
        train_texts.push(Utterance {
            id: i as u64,
            text: derived_text(&candidate_texts[i].text, cluster_of[i], &mut rng),
        });
    }

    let mut truth: Vec<u64> = sample(&mut rng, n, cfg.n_queries)
        .into_iter()
        .map(|i| i as u64)
        .collect();
    truth.sort_unstable();
    let mut queries = Vec::with_capacity(truth.len());
    let mut query_texts = Vec::with_capacity(truth.len());
    for (q, &t) in truth.iter().enumerate() {
        let t = t as usize;
        queries.push(perturb(&cand[t], cfg.query_noise, &mut rng));
        query_texts.push(Utterance {
            id: q as u64,
            text: derived_text(&candidate_texts[t].text, cluster_of[t], &mut rng),
        });
    }

    Ok(SyntheticBenchmark {
        candidates: to_store(&cand, d)?,
        candidate_texts,
        cluster_of,
        queries: to_store(&queries, d)?,
        query_texts,
        truth,
        train_contexts: to_store(&train, d)?,
        train_texts,
        train_positives: (0..n as u64).map(|i| (i, i)).collect(),
    })
}
