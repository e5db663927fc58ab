use std::path::Path;
use std::process::{Command, Output};

fn dshc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dshc"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn dshc")
}

fn ok(args: &[&str]) -> Output {
    let out = dshc(args);
    assert_eq!(
        out.status.code(),
        Some(0),
        "dshc {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// embed-synthetic, train-hash, and the three indices over 1,000 documents.
fn smoke_setup(dir: &Path) {
    let data = dir.join("data");
    ok(&[
        "embed-synthetic",
        "--out",
        s(&data),
        "--clusters",
        "10",
        "--per-cluster",
        "100",
        "--dim",
        "64",
        "--queries",
        "200",
        "--seed",
        "3",
    ]);
    ok(&[
        "train-hash",
        "--data",
        s(&data),
        "--dim",
        "32",
        "--out",
        s(&dir.join("model.bin")),
    ]);
    for b in ["bm25", "dense"] {
        ok(&[
            "build-index",
            "--backend",
            b,
            "--data",
            s(&data),
            "--out",
            s(&dir.join(format!("{b}.idx"))),
        ]);
    }
    ok(&[
        "build-index",
        "--backend",
        "hash",
        "--data",
        s(&data),
        "--model",
        s(&dir.join("model.bin")),
        "--out",
        s(&dir.join("hash.idx")),
    ]);
}

#[test]
fn smoke_pipeline_reports_three_backends() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    smoke_setup(dir);
    let report = dir.join("report.json");
    ok(&[
        "bench",
        "--data",
        s(&dir.join("data")),
        "--bm25",
        s(&dir.join("bm25.idx")),
        "--dense",
        s(&dir.join("dense.idx")),
        "--hash",
        s(&dir.join("hash.idx")),
        "--model",
        s(&dir.join("model.bin")),
        "--out",
        s(&report),
    ]);
    let out = ok(&["report", "--input", s(&report), "--out-dir", s(&dir.join("tables"))]);
    let stdout = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = stdout.lines().collect();
    assert_eq!(
        lines[0],
        "Method,Top-20,Top-100,Correlation-20,Correlation-100,code_bytes,file_bytes,latency20,latency100"
    );
    assert_eq!(lines.len(), 4);
    assert!(lines[1].starts_with("BM25,"));
    assert!(lines[2].starts_with("Dense,"));
    assert!(lines[3].starts_with("DSHC-32,"));
    for f in ["summary.csv", "storage.csv", "latency.csv"] {
        assert!(dir.join("tables").join(f).is_file(), "{f} missing");
    }

    // k lines of rank, id, distance
    let out = ok(&[
        "search",
        "--backend",
        "hash",
        "--index",
        s(&dir.join("hash.idx")),
        "--model",
        s(&dir.join("model.bin")),
        "--data",
        s(&dir.join("data")),
        "--query",
        "0",
        "--k",
        "20",
    ]);
    let stdout = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = stdout.lines().collect();
    assert_eq!(lines.len(), 20);
    let mut last = 0u32;
    for (i, line) in lines.iter().enumerate() {
        let f: Vec<&str> = line.split('\t').collect();
        assert_eq!(f.len(), 3, "{line}");
        assert_eq!(f[0], (i + 1).to_string());
        f[1].parse::<u64>().unwrap();
        let dist: u32 = f[2].parse().unwrap();
        assert!(dist >= last && dist <= 32);
        last = dist;
    }

    let out = ok(&[
        "search",
        "--backend",
        "bm25",
        "--index",
        s(&dir.join("bm25.idx")),
        "--text",
        "zzzzqqq",
        "--k",
        "5",
    ]);
    assert!(out.stdout.is_empty());
}

#[test]
fn identical_runs_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    smoke_setup(a.path());
    smoke_setup(b.path());
    for f in [
        "model.bin",
        "bm25.idx",
        "dense.idx",
        "hash.idx",
        "data/train.tsv",
        "data/candidates.emb",
    ] {
        let x = std::fs::read(a.path().join(f)).unwrap();
        let y = std::fs::read(b.path().join(f)).unwrap();
        assert!(x == y, "{f} differs between runs");
    }
}

#[test]
fn missing_embedding_file_exits_one_naming_path() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("nowhere");
    let out = dshc(&[
        "build-index",
        "--backend",
        "dense",
        "--data",
        s(&data),
        "--out",
        s(&tmp.path().join("x")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains(s(&data)), "{err}");
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(dshc(&["frobnicate"]).status.code(), Some(2));
    let out = dshc(&["train-hash", "--data", "d", "--out", "m"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--dim"));
    assert_eq!(
        dshc(&["build-index", "--backend", "faiss", "--data", "d", "--out", "o"])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn help_exits_zero() {
    let out = dshc(&["--help"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    for sub in [
        "embed-synthetic",
        "train-hash",
        "build-index",
        "search",
        "bench",
        "report",
    ] {
        assert!(text.contains(sub), "{sub} missing from help");
    }
}

#[test]
fn config_file_supplies_defaults_and_flags_win() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    smoke_setup(dir);
    let cfg = dir.join("dshc.toml");
    std::fs::write(&cfg, "[search]\nk = 3\nbackend = \"dense\"\n").unwrap();
    let (index, data) = (dir.join("dense.idx"), dir.join("data"));
    let base = [
        "--config",
        s(&cfg),
        "search",
        "--index",
        s(&index),
        "--data",
        s(&data),
        "--query",
        "1",
    ];
    let out = ok(&base);
    assert_eq!(String::from_utf8(out.stdout).unwrap().lines().count(), 3);
    let mut args = base.to_vec();
    args.extend(["--k", "7"]);
    let out = ok(&args);
    assert_eq!(String::from_utf8(out.stdout).unwrap().lines().count(), 7);
}
