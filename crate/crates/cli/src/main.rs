use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;

use dshc_core::corpus::{load_corpus, synth_embed, DEFAULT_DIM};
use dshc_core::evalbench::{emit_report, format_size, BenchConfig, SyntheticConfig};
use dshc_core::hashopt::{load_model, save_model, HashModel, Side, TrainConfig, SWEEP_DIMS};
use dshc_core::pipeline::{self, Backend, BenchInputs};
use dshc_core::retrieval::{load_binary_index, load_flat_index, load_inverted_index, pack, SearchResult};

/// Candidate recall with deep semantic hashing codes, BM25, and dense scans.
#[derive(Debug, Parser)]
#[command(name = "dshc", version, args_override_self = true)]
struct Cli {
    /// TOML file with one table per subcommand; command-line flags win.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Repeat for more log output on stderr.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a dataset directory from the seeded clustered benchmark or a corpus TSV.
    EmbedSynthetic(EmbedArgs),
    /// Train a hash model on a dataset directory.
    TrainHash(TrainArgs),
    /// Build a bm25, dense, or hash index over the dataset's candidates.
    BuildIndex(BuildArgs),
    /// Query an index and print `rank<TAB>id<TAB>score` lines.
    Search(SearchArgs),
    /// Measure coverage, correlation, storage, and latency.
    Bench(BenchArgs),
    /// Render a benchmark report as CSV tables.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct EmbedArgs {
    /// Output dataset directory.
    #[arg(long)]
    out: PathBuf,
    /// Embed this context<TAB>response corpus instead of synthesizing clusters.
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long, default_value_t = 50)]
    clusters: usize,
    #[arg(long, default_value_t = 200)]
    per_cluster: usize,
    /// Embedding width.
    #[arg(long, default_value_t = DEFAULT_DIM)]
    dim: usize,
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
    #[arg(long, default_value_t = 0.025)]
    query_noise: f64,
    /// Held-out queries.
    #[arg(long, default_value_t = 1000)]
    queries: usize,
    /// Uniform negatives per training positive.
    #[arg(long, default_value_t = 1)]
    negatives: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Dataset directory.
    #[arg(long)]
    data: PathBuf,
    /// Code length h in bits.
    #[arg(long)]
    dim: usize,
    /// Output model file.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 5)]
    epochs: usize,
    #[arg(long, default_value_t = 64)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 1e-4)]
    gamma_min: f64,
    #[arg(long, default_value_t = 1e-1)]
    gamma_max: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write the per-step loss trace as CSV.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct BuildArgs {
    #[arg(long, value_parser = parse_backend)]
    backend: Backend,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Trained model, required for the hash backend.
    #[arg(long)]
    model: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SearchArgs {
    #[arg(long, value_parser = parse_backend)]
    backend: Backend,
    #[arg(long)]
    index: PathBuf,
    /// Trained model, required for the hash backend.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Dataset whose held-out query `--query` is searched.
    #[arg(long, requires = "query", conflicts_with = "text")]
    data: Option<PathBuf>,
    #[arg(long, requires = "data")]
    query: Option<usize>,
    /// Free text, embedded with the hashed n-gram embedder for dense and hash.
    #[arg(long, required_unless_present = "data")]
    text: Option<String>,
    /// Seed for embedding `--text`.
    #[arg(long, default_value_t = 0)]
    embed_seed: u64,
    #[arg(long, default_value_t = 20)]
    k: usize,
}

#[derive(Debug, Args)]
struct BenchArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    bm25: Option<PathBuf>,
    #[arg(long)]
    dense: Option<PathBuf>,
    #[arg(long, requires = "model")]
    hash: Option<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
    /// Output report (JSON).
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 16)]
    bsz: usize,
    #[arg(long, value_delimiter = ',', default_values_t = [20, 100])]
    k: Vec<usize>,
    #[arg(long, default_value_t = 20)]
    repetitions: usize,
    #[arg(long, default_value_t = 3)]
    warmup: usize,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Report written by `bench`.
    #[arg(long)]
    input: PathBuf,
    /// Directory for summary.csv, storage.csv, and latency.csv.
    #[arg(long)]
    out_dir: PathBuf,
}

fn parse_backend(s: &str) -> Result<Backend, String> {
    s.parse().map_err(|e: dshc_core::Error| e.to_string())
}

/// Turn the `[subcommand]` table of a TOML config into flags.
fn config_flags(path: &Path, subcommand: &str, given: &[String]) -> Result<Vec<OsString>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let doc: toml::Table = toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
    let Some(section) = doc.get(subcommand) else {
        return Ok(Vec::new());
    };
    let Some(table) = section.as_table() else {
        bail!("config {}: [{subcommand}] must be a table", path.display());
    };
    let mut flags = Vec::new();
    for (key, value) in table {
        let flag = format!("--{}", key.replace('_', "-"));
        if given.contains(&flag) {
            continue;
        }
        let scalar = |v: &toml::Value| -> Result<String> {
            Ok(match v {
                toml::Value::String(s) => s.clone(),
                toml::Value::Integer(i) => i.to_string(),
                toml::Value::Float(f) => f.to_string(),
                other => bail!("config key {key}: unsupported value {other}"),
            })
        };
        match value {
            toml::Value::Boolean(true) => flags.push(flag.into()),
            toml::Value::Boolean(false) => {}
            toml::Value::Array(items) => {
                let joined: Vec<String> = items.iter().map(scalar).collect::<Result<_>>()?;
                flags.push(flag.into());
                flags.push(joined.join(",").into());
            }
            v => {
                flags.push(flag.into());
                flags.push(scalar(v)?.into());
            }
        }
    }
    Ok(flags)
}

/// Splice config-file flags in right after the subcommand name. Keys also
/// given on the command line are dropped so list flags do not accumulate.
fn with_config(args: Vec<OsString>) -> Result<Vec<OsString>> {
    let mut config = None;
    let mut sub_pos = None;
    let mut it = args.iter().enumerate().skip(1);
    while let Some((i, a)) = it.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            config = it.next().map(|(_, v)| PathBuf::from(v));
        } else if let Some(v) = s.strip_prefix("--config=") {
            config = Some(PathBuf::from(v));
        } else if sub_pos.is_none() && !s.starts_with('-') {
            sub_pos = Some(i);
        }
    }
    let (Some(config), Some(pos)) = (config, sub_pos) else {
        return Ok(args);
    };
    let sub = args[pos].to_string_lossy().into_owned();
    let given: Vec<String> = args[pos + 1..]
        .iter()
        .filter_map(|a| {
            let a = a.to_string_lossy();
            a.starts_with("--")
                .then(|| a.split('=').next().unwrap_or_default().to_string())
        })
        .collect();
    let flags = config_flags(&config, &sub, &given)?;
    let mut out = args[..=pos].to_vec();
    out.extend(flags);
    out.extend_from_slice(&args[pos + 1..]);
    Ok(out)
}

fn embed(a: &EmbedArgs) -> Result<()> {
    let dataset = if let Some(path) = &a.corpus {
        let corpus = load_corpus(path)?;
        pipeline::corpus_dataset(&corpus, a.queries, a.dim, a.negatives, a.seed)?
    } else {
        let cfg = SyntheticConfig {
            n_clusters: a.clusters,
            per_cluster: a.per_cluster,
            d: a.dim,
            noise: a.noise,
            query_noise: a.query_noise,
            n_queries: a.queries,
            seed: a.seed,
        };
        pipeline::synthetic_dataset(&cfg, a.negatives)?
    };
    pipeline::write_dataset(&dataset, &a.out)?;
    info!(
        "wrote {} candidates, {} queries, {} training pairs (d={}) to {}",
        dataset.candidates.n(),
        dataset.queries.n(),
        dataset.pairs.len(),
        dataset.candidates.d(),
        a.out.display()
    );
    Ok(())
}

fn train_hash(a: &TrainArgs) -> Result<()> {
    if a.dim == 0 {
        bail!("--dim must be positive");
    }
    if !SWEEP_DIMS.contains(&a.dim) {
        info!("code length {} is outside the usual sweep {SWEEP_DIMS:?}", a.dim);
    }
    let dataset = pipeline::load_dataset(&a.data)?;
    let cfg = TrainConfig {
        gamma_min: a.gamma_min,
        gamma_max: a.gamma_max,
        epochs: a.epochs,
        batch_size: a.batch_size,
        learning_rate: a.lr,
        seed: a.seed,
        ..Default::default()
    };
    let outcome = pipeline::train_hash(&dataset, a.dim, &cfg)?;
    for (e, loss) in outcome.epoch_mean_loss.iter().enumerate() {
        info!("epoch {}: mean loss {loss:.6}", e + 1);
    }
    save_model(&outcome.model, &a.out)?;
    if let Some(path) = &a.trace {
        let mut csv = String::from("epoch,step,gamma,preserved,hash,quantization,total\n");
        for r in &outcome.trace {
            let _ = writeln!(
                csv,
                "{},{},{},{},{},{},{}",
                r.epoch, r.step, r.gamma, r.preserved, r.hash, r.quantization, r.total
            );
        }
        std::fs::write(path, csv).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn require_model(model: &Option<PathBuf>) -> Result<HashModel<f32>> {
    let Some(path) = model else {
        bail!("the hash backend needs --model");
    };
    Ok(load_model(path)?)
}

fn build_index(a: &BuildArgs) -> Result<()> {
    let dataset = pipeline::load_dataset(&a.data)?;
    let model = match a.backend {
        Backend::Hash => Some(require_model(&a.model)?),
        _ => None,
    };
    pipeline::build_index(a.backend, &dataset, model.as_ref(), &a.out)?;
    info!("wrote {} index to {}", a.backend, a.out.display());
    Ok(())
}

enum Query {
    Row(Vec<f32>, String),
    Text(String),
}

impl Query {
    fn text(&self) -> &str {
        match self {
            Query::Row(_, t) | Query::Text(t) => t,
        }
    }

    fn vector(&self, d: usize, seed: u64) -> Result<Vec<f32>> {
        match self {
            Query::Row(v, _) if v.len() == d => Ok(v.clone()),
            Query::Row(v, _) => bail!("query has width {} but the index expects {d}", v.len()),
            Query::Text(t) => Ok(synth_embed(t, d, seed)),
        }
    }
}

fn search(a: &SearchArgs) -> Result<SearchResult> {
    let query = match (&a.data, a.query, &a.text) {
        (Some(dir), Some(q), _) => {
            let ds = pipeline::load_dataset(dir)?;
            if q >= ds.queries.n() {
                bail!("query {q} out of range; the dataset has {} queries", ds.queries.n());
            }
            Query::Row(ds.queries.row(q).to_vec(), ds.query_texts[q].clone())
        }
        (_, _, Some(t)) => Query::Text(t.clone()),
        _ => bail!("give either --data with --query, or --text"),
    };
    Ok(match a.backend {
        Backend::Bm25 => load_inverted_index(&a.index)?.search(query.text(), a.k)?,
        Backend::Dense => {
            let index = load_flat_index::<f32>(&a.index)?;
            index.search(&query.vector(index.d(), a.embed_seed)?, a.k)?
        }
        Backend::Hash => {
            let model = require_model(&a.model)?;
            let index = load_binary_index(&a.index)?;
            if model.h() != index.h() {
                bail!("model has h={} but the index has h={}", model.h(), index.h());
            }
            let o = model.encode(Side::Context, &query.vector(model.d(), a.embed_seed)?)?;
            index.search(&pack(&dshc_core::hashopt::sign_quantize(&o)), a.k)?
        }
    })
}

fn bench(a: &BenchArgs) -> Result<()> {
    let dataset = pipeline::load_dataset(&a.data)?;
    let inputs = BenchInputs {
        bm25: a.bm25.clone(),
        dense: a.dense.clone(),
        hash: match (&a.hash, &a.model) {
            (Some(i), Some(m)) => Some((i.clone(), m.clone())),
            _ => None,
        },
    };
    let cfg = BenchConfig {
        bsz: a.bsz,
        ks: a.k.clone(),
        repetitions: a.repetitions,
        warmup: a.warmup,
        ..Default::default()
    };
    let report = pipeline::run_bench(&dataset, &inputs, &cfg)?;
    for b in &report.backends {
        info!(
            "{}: coverage {:?}, code {}",
            b.method,
            b.coverage,
            format_size(b.code_bytes)
        );
    }
    pipeline::save_report(&report, &a.out)?;
    Ok(())
}

fn report(a: &ReportArgs) -> Result<()> {
    let report = pipeline::load_report(&a.input)?;
    if report.backends.is_empty() {
        bail!("{} contains no backends", a.input.display());
    }
    pipeline::write_report_tables(&report, &a.out_dir)?;
    print!("{}", emit_report(&report).summary);
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::EmbedSynthetic(a) => embed(a),
        Command::TrainHash(a) => train_hash(a),
        Command::BuildIndex(a) => build_index(a),
        Command::Search(a) => {
            let result = search(a)?;
            let mut out = String::new();
            for (rank, hit) in result.hits.iter().enumerate() {
                let _ = writeln!(out, "{}\t{}\t{}", rank + 1, hit.id, hit.score);
            }
            print!("{out}");
            Ok(())
        }
        Command::Bench(a) => bench(a),
        Command::Report(a) => report(a),
    }
}

/// Error chain on one line, skipping causes already quoted by their parent.
fn describe(e: &anyhow::Error) -> String {
    let mut msg = e.to_string();
    for cause in e.chain().skip(1) {
        let c = cause.to_string();
        if !msg.contains(&c) {
            msg = format!("{msg}: {c}");
        }
    }
    msg
}

fn main() -> ExitCode {
    let args = match with_config(std::env::args_os().collect()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            return ExitCode::from(2);
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    let level = match cli.verbose {
        0 => "info",
        1 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(1)
        }
    }
}
