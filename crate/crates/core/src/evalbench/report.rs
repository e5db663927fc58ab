use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::latency::LatencyStats;
use super::storage::format_size;

/// Effectiveness, storage, and latency for one backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendReport {
    pub method: String,
    /// `(K, Coverage@K)` in K order.
    pub coverage: Vec<(usize, f64)>,
    /// `(K, Correlation@K)`; `None` when no query returned hits.
    pub correlation: Vec<(usize, Option<f64>)>,
    pub code_bytes: u64,
    pub file_bytes: u64,
    pub latency: Vec<LatencyStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub ks: Vec<usize>,
    pub bsz: usize,
    pub n_queries: usize,
    pub n_candidates: usize,
    pub backends: Vec<BackendReport>,
}

/// Rendered CSV artifacts.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportTables {
    /// One row per backend: coverage, correlation, storage, median latency.
    pub summary: String,
    /// Storage breakdown for plotting.
    pub storage: String,
    /// Median, p95, and mean latency per backend and K.
    pub latency: String,
}

fn cell(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x:.4}"),
        None => "NA".into(),
    }
}

fn lookup<V: Copy>(pairs: &[(usize, V)], k: usize) -> Option<V> {
    pairs.iter().find(|(kk, _)| *kk == k).map(|(_, v)| *v)
}

pub fn emit_report(report: &EvalReport) -> ReportTables {
    let ks = &report.ks;
    let mut summary = String::from("Method");
    for k in ks {
        let _ = write!(summary, ",Top-{k}");
    }
    for k in ks {
        let _ = write!(summary, ",Correlation-{k}");
    }
    summary.push_str(",code_bytes,file_bytes");
    for k in ks {
        let _ = write!(summary, ",latency{k}");
    }
    summary.push('\n');

    let mut storage = String::from("Method,code_bytes,file_bytes,code_size,file_size\n");
    let mut latency = String::from("Method,K,bsz,median_ms,p95_ms,mean_ms,batches\n");

    for b in &report.backends {
        summary.push_str(&b.method);
        for &k in ks {
            let _ = write!(summary, ",{}", cell(lookup(&b.coverage, k)));
        }
        for &k in ks {
            let _ = write!(summary, ",{}", cell(lookup(&b.correlation, k).flatten()));
        }
        let _ = write!(summary, ",{},{}", b.code_bytes, b.file_bytes);
        for &k in ks {
            let med = b.latency.iter().find(|l| l.k == k).map(|l| l.median_ms);
            let _ = write!(summary, ",{}", cell(med));
        }
        summary.push('\n');

        let _ = writeln!(
            storage,
            "{},{},{},{},{}",
            b.method,
            b.code_bytes,
            b.file_bytes,
            format_size(b.code_bytes),
            format_size(b.file_bytes)
        );
        for l in &b.latency {
            let _ = writeln!(
                latency,
                "{},{},{},{:.4},{:.4},{:.4},{}",
                b.method, l.k, report.bsz, l.median_ms, l.p95_ms, l.mean_ms, l.batches
            );
        }
    }
    ReportTables {
        summary,
        storage,
        latency,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn backend(name: &str, lat: f64) -> BackendReport {
        BackendReport {
            method: name.into(),
            coverage: vec![(20, 0.5), (100, 0.75)],
            correlation: vec![(20, Some(0.123456)), (100, None)],
            code_bytes: 1000,
            file_bytes: 1200,
            latency: vec![
                LatencyStats {
                    k: 20,
                    median_ms: lat,
                    p95_ms: lat * 2.0,
                    mean_ms: lat,
                    batches: 20,
                },
                LatencyStats {
                    k: 100,
                    median_ms: lat,
                    p95_ms: lat,
                    mean_ms: lat,
                    batches: 20,
                },
            ],
        }
    }

    #[test]
    fn three_backends_three_rows() {
        let r = EvalReport {
            ks: vec![20, 100],
            bsz: 16,
            n_queries: 10,
            n_candidates: 100,
            backends: vec![backend("BM25", 1.0), backend("Dense", 2.0), backend("DSHC-128", 0.5)],
        };
        let t = emit_report(&r);
        let lines: Vec<&str> = t.summary.lines().collect();
        assert_eq!(
            lines[0],
            "Method,Top-20,Top-100,Correlation-20,Correlation-100,code_bytes,file_bytes,latency20,latency100"
        );
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[1], "BM25,0.5000,0.7500,0.1235,NA,1000,1200,1.0000,1.0000");
        assert_eq!(t.storage.lines().count(), 4);
        assert_eq!(t.latency.lines().count(), 7);
    }
}
