//! Score a request through the serving path, hot-swap a newer behavior
//! snapshot, and run a short latency benchmark across history lengths.
//!
//! ```bash
//! cargo run --release --example serving_bench
//! ```

use sim_core::domain::Behavior;
use sim_core::serving::{bench, bench_corpus, bench_request, BenchConfig, Service};
use sim_core::model::SimModel;

fn main() -> sim_core::Result<()> {
    let cfg = BenchConfig {
        seq_lens: vec![1_000, 20_000],
        rates: vec![200.0],
        requests_per_level: 100,
        ..BenchConfig::default()
    };
    let corpus = bench_corpus(&cfg)?;
    let service = Service::new(SimModel::new(cfg.model_config(), 1)?, corpus.tree.clone())?;

    let users = &corpus.profiles[0].1;
    let req = bench_request(&corpus, &cfg, users, 0);
    let out = service.score(&req)?;
    println!(
        "user {} scored {} candidates with {} category lookups; first score {:.4}",
        req.user_id,
        out.response.scores.len(),
        out.lookups,
        out.response.scores[0]
    );

    let snap = service.snapshot();
    let newer = snap.insert(req.user_id, Behavior::new(7, req.candidates[0].category_id, snap.build_timestamp() + 1));
    service.snapshot_swap(newer)?;
    println!("swapped to snapshot built at {}", service.snapshot().build_timestamp());
    // an older snapshot is refused and the current one stays
    assert!(service.snapshot_swap(snap.as_ref().clone()).is_err());

    for r in bench(&service, &corpus, &cfg)? {
        println!(
            "T={:>6} {:>6.1} rps  p50 {:.3} ms  p99 {:.3} ms  mean SBS {:.1}",
            r.seq_len, r.throughput_rps, r.p50_ms, r.p99_ms, r.mean_sbs_len
        );
    }
    Ok(())
}
