//! File-level steps behind the command-line tool: dataset materialization,
//! training, index building, and benchmarking.
//!
//! A dataset directory holds
//!
//! ```text
//! candidates.emb      DSHCEMB1, one row per database id
//! candidates.tsv      id<TAB>text
//! queries.emb         DSHCEMB1, held-out queries
//! queries.tsv         text<TAB>truth id
//! train_contexts.emb  DSHCEMB1, contexts referenced by train.tsv
//! train.tsv           ctx_id<TAB>can_id<TAB>S
//! ```

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::corpus::{
    embed_utterances, load_embeddings, make_pairs, parse_pairs_tsv, save_embeddings, Corpus, EmbeddingStore,
    PairExample, Utterance,
};
use crate::error::{Error, Result};
use crate::evalbench::{
    build_synthetic_benchmark, mean_correlation, mean_coverage, measure_latency, BackendReport, BenchConfig,
    EvalReport, LatencyRun, SearchBackend, ShiftedCosineScorer, SyntheticConfig,
};
use crate::hashopt::{load_model, train, HashModel, Side, TrainConfig, TrainOutcome, TrainingSet};
use crate::retrieval::{
    load_binary_index, load_flat_index, load_inverted_index, pack, save_binary_index, save_flat_index,
    save_inverted_index, BinaryIndex, Bm25Params, FlatIndex, InvertedIndex, PackedCode,
};

pub const CANDIDATES_EMB: &str = "candidates.emb";
pub const CANDIDATES_TSV: &str = "candidates.tsv";
pub const QUERIES_EMB: &str = "queries.emb";
pub const QUERIES_TSV: &str = "queries.tsv";
pub const TRAIN_CONTEXTS_EMB: &str = "train_contexts.emb";
pub const TRAIN_TSV: &str = "train.tsv";

/// Everything needed to train and evaluate all three backends.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub candidates: EmbeddingStore<f32>,
    pub candidate_texts: Vec<Utterance>,
    pub queries: EmbeddingStore<f32>,
    pub query_texts: Vec<String>,
    /// `truth[q]` is the database id answering query `q`.
    pub truth: Vec<u64>,
    pub train_contexts: EmbeddingStore<f32>,
    pub pairs: Vec<PairExample>,
}

impl Dataset {
    pub fn validate(&self) -> Result<()> {
        let n = self.candidates.n();
        let d = self.candidates.d();
        for (what, store) in [("queries", &self.queries), ("training contexts", &self.train_contexts)] {
            if store.d() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: store.d(),
                });
            }
            if store.n() == 0 {
                return Err(Error::Empty(format!("dataset has no {what}")));
            }
        }
        if self.candidate_texts.len() != n {
            return Err(Error::InvalidArgument(format!(
                "{} candidate texts for {n} candidate vectors",
                self.candidate_texts.len()
            )));
        }
        if self.query_texts.len() != self.queries.n() || self.truth.len() != self.queries.n() {
            return Err(Error::InvalidArgument(format!(
                "{} query vectors but {} texts and {} truth ids",
                self.queries.n(),
                self.query_texts.len(),
                self.truth.len()
            )));
        }
        if let Some(&t) = self.truth.iter().find(|&&t| t as usize >= n) {
            return Err(Error::InvalidArgument(format!("truth id {t} outside database of {n}")));
        }
        for p in &self.pairs {
            if p.ctx_id as usize >= self.train_contexts.n() || p.can_id as usize >= n {
                return Err(Error::InvalidArgument(format!(
                    "training pair ({}, {}) references a missing row",
                    p.ctx_id, p.can_id
                )));
            }
        }
        Ok(())
    }
}

/// Seeded clustered benchmark; `negatives` uniform negatives per positive.
pub fn synthetic_dataset(cfg: &SyntheticConfig, negatives: usize) -> Result<Dataset> {
    let b = build_synthetic_benchmark(cfg)?;
    let pairs = make_pairs(&b.train_positives, b.candidates.n(), negatives, cfg.seed)?;
    Ok(Dataset {
        candidates: b.candidates,
        candidate_texts: b.candidate_texts,
        queries: b.queries,
        query_texts: b.query_texts.into_iter().map(|u| u.text).collect(),
        truth: b.truth,
        train_contexts: b.train_contexts,
        pairs,
    })
}

/// Embed a context/response corpus with the hashed n-gram embedder.
///
/// The last `n_queries` pairs are held out as queries; the rest become
/// training positives.
pub fn corpus_dataset(corpus: &Corpus, n_queries: usize, d: usize, negatives: usize, seed: u64) -> Result<Dataset> {
    let total = corpus.contexts.len();
    if n_queries == 0 || n_queries >= total {
        return Err(Error::InvalidArgument(format!(
            "need 1..{total} held-out queries, got {n_queries}"
        )));
    }
    let split = total - n_queries;
    let candidates = embed_utterances(&corpus.database, d, seed)?;
    let train_contexts = embed_utterances(&corpus.contexts[..split], d, seed)?;
    let queries = embed_utterances(&corpus.contexts[split..], d, seed)?;
    let positives = &corpus.positives()[..split];
    let pairs = make_pairs(positives, corpus.database.len(), negatives, seed)?;
    Ok(Dataset {
        candidates,
        candidate_texts: corpus.database.clone(),
        queries,
        query_texts: corpus.contexts[split..].iter().map(|u| u.text.clone()).collect(),
        truth: corpus.response_db_ids[split..].to_vec(),
        train_contexts,
        pairs,
    })
}

fn clean(text: &str) -> String {
    text.replace(['\t', '\n', '\r'], " ")
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn write_dataset(dataset: &Dataset, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    dataset.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    save_embeddings(&dataset.candidates, dir.join(CANDIDATES_EMB))?;
    save_embeddings(&dataset.queries, dir.join(QUERIES_EMB))?;
    save_embeddings(&dataset.train_contexts, dir.join(TRAIN_CONTEXTS_EMB))?;
    let cands: String = dataset
        .candidate_texts
        .iter()
        .map(|u| format!("{}\t{}\n", u.id, clean(&u.text)))
        .collect();
    write_text(&dir.join(CANDIDATES_TSV), &cands)?;
    let queries: String = dataset
        .query_texts
        .iter()
        .zip(&dataset.truth)
        .map(|(t, id)| format!("{}\t{id}\n", clean(t)))
        .collect();
    write_text(&dir.join(QUERIES_TSV), &queries)?;
    write_text(&dir.join(TRAIN_TSV), &crate::corpus::format_pairs_tsv(&dataset.pairs))
}

/// Split `a<TAB>b` lines, naming the file in errors.
fn two_columns(path: &Path) -> Result<Vec<(String, String)>> {
    let text = read_text(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let (a, b) = line.split_once('\t').ok_or_else(|| Error::Parse {
            line: i + 1,
            msg: format!("{}: expected 2 tab-separated fields", path.display()),
        })?;
        out.push((a.to_string(), b.to_string()));
    }
    Ok(out)
}

fn parse_id(s: &str, line: usize) -> Result<u64> {
    s.trim().parse().map_err(|e| Error::Parse {
        line,
        msg: format!("bad id {s:?}: {e}"),
    })
}

pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let candidate_texts = two_columns(&dir.join(CANDIDATES_TSV))?
        .into_iter()
        .enumerate()
        .map(|(i, (id, text))| {
            Ok(Utterance {
                id: parse_id(&id, i + 1)?,
                text,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut query_texts = Vec::new();
    let mut truth = Vec::new();
    for (i, (text, id)) in two_columns(&dir.join(QUERIES_TSV))?.into_iter().enumerate() {
        query_texts.push(text);
        truth.push(parse_id(&id, i + 1)?);
    }
    let dataset = Dataset {
        candidates: load_embeddings(dir.join(CANDIDATES_EMB))?,
        candidate_texts,
        queries: load_embeddings(dir.join(QUERIES_EMB))?,
        query_texts,
        truth,
        train_contexts: load_embeddings(dir.join(TRAIN_CONTEXTS_EMB))?,
        pairs: parse_pairs_tsv(&read_text(&dir.join(TRAIN_TSV))?)?,
    };
    dataset.validate()?;
    Ok(dataset)
}

/// Initialize an `h`-bit model from `cfg.seed` and train it on the dataset.
pub fn train_hash(dataset: &Dataset, h: usize, cfg: &TrainConfig) -> Result<TrainOutcome<f32>> {
    let model = HashModel::init(dataset.candidates.d(), h, cfg.seed)?;
    train(
        model,
        TrainingSet {
            contexts: &dataset.train_contexts,
            candidates: &dataset.candidates,
            pairs: &dataset.pairs,
        },
        cfg,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Backend {
    Bm25,
    Dense,
    Hash,
}

impl Backend {
    pub const ALL: [Backend; 3] = [Backend::Bm25, Backend::Dense, Backend::Hash];

    /// Row label used in reports.
    pub fn method_name(self, h: Option<usize>) -> String {
        match (self, h) {
            (Backend::Bm25, _) => "BM25".into(),
            (Backend::Dense, _) => "Dense".into(),
            (Backend::Hash, Some(h)) => format!("DSHC-{h}"),
            (Backend::Hash, None) => "DSHC".into(),
        }
    }
}

impl fmt::Display for Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Backend::Bm25 => "bm25",
            Backend::Dense => "dense",
            Backend::Hash => "hash",
        })
    }
}

impl FromStr for Backend {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bm25" => Ok(Backend::Bm25),
            "dense" => Ok(Backend::Dense),
            "hash" => Ok(Backend::Hash),
            other => Err(Error::InvalidArgument(format!(
                "unknown backend {other:?}; expected bm25, dense, or hash"
            ))),
        }
    }
}

/// Build one backend's index over the dataset's candidates and save it.
/// The hash backend needs a trained model.
pub fn build_index(
    backend: Backend,
    dataset: &Dataset,
    model: Option<&HashModel<f32>>,
    out: impl AsRef<Path>,
) -> Result<()> {
    let out = out.as_ref();
    match backend {
        Backend::Bm25 => save_inverted_index(
            &InvertedIndex::build(&dataset.candidate_texts, Bm25Params::default())?,
            out,
        ),
        Backend::Dense => save_flat_index(&FlatIndex::from_store(&dataset.candidates), out),
        Backend::Hash => {
            let model = model.ok_or_else(|| Error::InvalidArgument("the hash backend needs a model".into()))?;
            let codes = model.export_codes(Side::Candidate, &dataset.candidates)?;
            save_binary_index(&BinaryIndex::from_sign_codes(&codes)?, out)
        }
    }
}

/// Index files to evaluate. The hash entry carries its model path.
#[derive(Debug, Clone, Default)]
pub struct BenchInputs {
    pub bm25: Option<PathBuf>,
    pub dense: Option<PathBuf>,
    pub hash: Option<(PathBuf, PathBuf)>,
}

fn file_len(path: &Path) -> Result<u64> {
    Ok(fs::metadata(path).map_err(|e| Error::io(path, e))?.len())
}

fn evaluate<B: SearchBackend>(
    method: String,
    index: &B,
    queries: &[B::Query],
    dataset: &Dataset,
    cfg: &BenchConfig,
    code_bytes: u64,
    file_bytes: u64,
) -> Result<BackendReport> {
    let runs: Vec<LatencyRun> = measure_latency(index, queries, cfg)?;
    let scorer = ShiftedCosineScorer {
        queries: &dataset.queries,
        candidates: &dataset.candidates,
    };
    let mut report = BackendReport {
        method,
        coverage: Vec::new(),
        correlation: Vec::new(),
        code_bytes,
        file_bytes,
        latency: Vec::new(),
    };
    for run in runs {
        let k = run.stats.k;
        report
            .coverage
            .push((k, mean_coverage(&run.results, &dataset.truth, k)));
        report.correlation.push((k, mean_correlation(&run.results, &scorer, k)));
        report.latency.push(run.stats);
    }
    Ok(report)
}

/// Coverage, correlation, storage, and latency for every supplied index, in
/// BM25, dense, hash order.
pub fn run_bench(dataset: &Dataset, inputs: &BenchInputs, cfg: &BenchConfig) -> Result<EvalReport> {
    let mut backends = Vec::new();
    if let Some(path) = &inputs.bm25 {
        let index = load_inverted_index(path)?;
        check_rows(index.n_docs(), dataset)?;
        let queries = dataset.query_texts.clone();
        let code = index.code_bytes();
        backends.push(evaluate(
            "BM25".into(),
            &index,
            &queries,
            dataset,
            cfg,
            code,
            file_len(path)?,
        )?);
    }
    if let Some(path) = &inputs.dense {
        let index: FlatIndex<f32> = load_flat_index(path)?;
        check_rows(index.len(), dataset)?;
        let queries: Vec<Vec<f32>> = (0..dataset.queries.n())
            .map(|i| dataset.queries.row(i).to_vec())
            .collect();
        let code = index.code_bytes();
        backends.push(evaluate(
            "Dense".into(),
            &index,
            &queries,
            dataset,
            cfg,
            code,
            file_len(path)?,
        )?);
    }
    if let Some((path, model_path)) = &inputs.hash {
        let index = load_binary_index(path)?;
        check_rows(index.len(), dataset)?;
        let model: HashModel<f32> = load_model(model_path)?;
        if model.h() != index.h() {
            return Err(Error::DimensionMismatch {
                expected: index.h(),
                got: model.h(),
            });
        }
        let queries: Vec<PackedCode> = model
            .export_codes(Side::Context, &dataset.queries)?
            .iter()
            .map(pack)
            .collect();
        let name = Backend::Hash.method_name(Some(index.h()));
        let code = index.code_bytes();
        backends.push(evaluate(name, &index, &queries, dataset, cfg, code, file_len(path)?)?);
    }
    if backends.is_empty() {
        return Err(Error::InvalidArgument("no index supplied to benchmark".into()));
    }
    Ok(EvalReport {
        ks: cfg.ks.clone(),
        bsz: cfg.bsz,
        n_queries: dataset.queries.n(),
        n_candidates: dataset.candidates.n(),
        backends,
    })
}

fn check_rows(rows: usize, dataset: &Dataset) -> Result<()> {
    if rows != dataset.candidates.n() {
        return Err(Error::InvalidArgument(format!(
            "index holds {rows} rows but the dataset has {} candidates",
            dataset.candidates.n()
        )));
    }
    Ok(())
}

pub const REPORT_JSON: &str = "report.json";
pub const SUMMARY_CSV: &str = "summary.csv";
pub const STORAGE_CSV: &str = "storage.csv";
pub const LATENCY_CSV: &str = "latency.csv";

pub fn save_report(report: &EvalReport, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let json = serde_json::to_string_pretty(report)
        .map_err(|e| Error::InvalidArgument(format!("cannot serialize report: {e}")))?;
    write_text(path, &json)
}

pub fn load_report(path: impl AsRef<Path>) -> Result<EvalReport> {
    let path = path.as_ref();
    serde_json::from_str(&read_text(path)?).map_err(|e| Error::Parse {
        line: e.line(),
        msg: format!("{}: {e}", path.display()),
    })
}

/// Write the summary, storage, and latency CSVs into `dir`.
pub fn write_report_tables(report: &EvalReport, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let tables = crate::evalbench::emit_report(report);
    let mut written = Vec::new();
    for (name, body) in [
        (SUMMARY_CSV, &tables.summary),
        (STORAGE_CSV, &tables.storage),
        (LATENCY_CSV, &tables.latency),
    ] {
        let p = dir.join(name);
        write_text(&p, body)?;
        written.push(p);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::parse_corpus;

    fn tiny() -> SyntheticConfig {
        SyntheticConfig {
            n_clusters: 4,
            per_cluster: 30,
            d: 16,
            n_queries: 80,
            seed: 5,
            ..Default::default()
        }
    }

    #[test]
    fn dataset_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let ds = synthetic_dataset(&tiny(), 1).unwrap();
        write_dataset(&ds, dir.path()).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        assert_eq!(back.candidates, ds.candidates);
        assert_eq!(back.queries, ds.queries);
        assert_eq!(back.train_contexts, ds.train_contexts);
        assert_eq!(back.candidate_texts, ds.candidate_texts);
        assert_eq!(back.query_texts, ds.query_texts);
        assert_eq!(back.truth, ds.truth);
        assert_eq!(back.pairs, ds.pairs);
    }

    #[test]
    fn corpus_holds_out_last_pairs() {
        let text: String = (0..10).map(|i| format!("ctx {i}\tresp {}\n", i % 7)).collect();
        let corpus = parse_corpus(&text).unwrap();
        let ds = corpus_dataset(&corpus, 3, 8, 1, 0).unwrap();
        assert_eq!(ds.candidates.n(), 7);
        assert_eq!(ds.train_contexts.n(), 7);
        assert_eq!(ds.query_texts, vec!["ctx 7", "ctx 8", "ctx 9"]);
        assert_eq!(ds.truth, vec![0, 1, 2]);
        assert_eq!(ds.pairs.len(), 14);
        assert!(corpus_dataset(&corpus, 10, 8, 1, 0).is_err());
    }

    #[test]
    fn missing_file_names_path() {
        let dir = tempfile::tempdir().unwrap();
        let err = load_dataset(dir.path()).unwrap_err().to_string();
        assert!(err.contains(CANDIDATES_TSV), "{err}");
    }

    #[test]
    fn backend_names_parse() {
        for b in Backend::ALL {
            assert_eq!(b.to_string().parse::<Backend>().unwrap(), b);
        }
        assert!("faiss".parse::<Backend>().is_err());
        assert_eq!(Backend::Hash.method_name(Some(128)), "DSHC-128");
    }

    #[test]
    fn bench_three_backends() {
        let dir = tempfile::tempdir().unwrap();
        let ds = synthetic_dataset(&tiny(), 1).unwrap();
        let cfg = TrainConfig {
            epochs: 1,
            ..Default::default()
        };
        let model = train_hash(&ds, 16, &cfg).unwrap().model;
        let model_path = dir.path().join("m.bin");
        crate::hashopt::save_model(&model, &model_path).unwrap();
        let mut inputs = BenchInputs::default();
        for b in Backend::ALL {
            let p = dir.path().join(format!("{b}.idx"));
            build_index(b, &ds, Some(&model), &p).unwrap();
            match b {
                Backend::Bm25 => inputs.bm25 = Some(p),
                Backend::Dense => inputs.dense = Some(p),
                Backend::Hash => inputs.hash = Some((p, model_path.clone())),
            }
        }
        let bench = BenchConfig {
            repetitions: 3,
            ..Default::default()
        };
        let report = run_bench(&ds, &inputs, &bench).unwrap();
        let names: Vec<_> = report.backends.iter().map(|b| b.method.as_str()).collect();
        assert_eq!(names, ["BM25", "Dense", "DSHC-16"]);
        let dense = &report.backends[1];
        assert_eq!(dense.code_bytes, 120 * 16 * 4);
        assert_eq!(report.backends[2].code_bytes, 120 * 2);
        for b in &report.backends {
            assert!(b.file_bytes >= b.code_bytes);
            for (_, c) in &b.coverage {
                assert!((0.0..=1.0).contains(c));
            }
        }

        let rp = dir.path().join(REPORT_JSON);
        save_report(&report, &rp).unwrap();
        assert_eq!(load_report(&rp).unwrap(), report);
        let files = write_report_tables(&report, dir.path().join("tables")).unwrap();
        let summary = fs::read_to_string(&files[0]).unwrap();
        assert_eq!(summary.lines().count(), 4);
    }

    #[test]
    fn hash_backend_needs_model() {
        let dir = tempfile::tempdir().unwrap();
        let ds = synthetic_dataset(&tiny(), 1).unwrap();
        assert!(build_index(Backend::Hash, &ds, None, dir.path().join("x")).is_err());
    }
}
