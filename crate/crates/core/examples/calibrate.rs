//! Train DSHC on the synthetic benchmark and compare recall with the dense scan.
//!
//! cargo run --release -p dshc-core --example calibrate -- [h] [epochs] [query_noise]

use std::time::Instant;

use dshc_core::evalbench::{mean_coverage, SyntheticConfig};
use dshc_core::hashopt::{Side, TrainConfig};
use dshc_core::pipeline;
use dshc_core::retrieval::{pack, BinaryIndex, FlatIndex};

fn arg<T: std::str::FromStr>(i: usize, default: T) -> T {
    std::env::args().nth(i).and_then(|s| s.parse().ok()).unwrap_or(default)
}

fn main() -> dshc_core::Result<()> {
    let h: usize = arg(1, 128);
    let epochs: usize = arg(2, 5);
    let cfg = SyntheticConfig {
        query_noise: arg(3, SyntheticConfig::default().query_noise),
        ..Default::default()
    };
    let ds = pipeline::synthetic_dataset(&cfg, 1)?;
    let qs: Vec<&[f32]> = (0..ds.queries.n()).map(|i| ds.queries.row(i)).collect();
    let dense = FlatIndex::from_store(&ds.candidates).search_batch(&qs, 100)?;
    println!(
        "dense    cov@20={:.4} cov@100={:.4}",
        mean_coverage(&dense, &ds.truth, 20),
        mean_coverage(&dense, &ds.truth, 100)
    );

    let start = Instant::now();
    let out = pipeline::train_hash(
        &ds,
        h,
        &TrainConfig {
            epochs,
            ..Default::default()
        },
    )?;
    println!(
        "trained in {:.1}s; epoch means {:?}",
        start.elapsed().as_secs_f64(),
        out.epoch_mean_loss
    );
    let m = &out.model;
    let index = BinaryIndex::from_sign_codes(&m.export_codes(Side::Candidate, &ds.candidates)?)?;
    let q: Vec<_> = m.export_codes(Side::Context, &ds.queries)?.iter().map(pack).collect();
    let hits = index.search_batch(&q, 100)?;
    println!(
        "DSHC-{h} cov@20={:.4} cov@100={:.4}",
        mean_coverage(&hits, &ds.truth, 20),
        mean_coverage(&hits, &ds.truth, 100)
    );
    Ok(())
}
