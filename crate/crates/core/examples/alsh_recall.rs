//! Recall and scanned fraction of the ALSH index as the number of probed
//! buckets grows, on a random Gaussian corpus.
//!
//! ```bash
//! cargo run --release --example alsh_recall
//! ```

use sim_core::cli::alsh_random_recall;
use sim_core::gsu::AlshConfig;

fn main() -> sim_core::Result<()> {
    println!("{:>7} {:>8} {:>8} {:>9}", "probes", "recall", "scanned", "mean_us");
    for probes in [1, 4, 16, 24, 64] {
        let cfg = AlshConfig {
            probes_per_table: probes,
            ..AlshConfig::default()
        };
        let r = alsh_random_recall(&cfg, 10_000, 16, 200, 50, 7)?;
        println!(
            "{probes:>7} {:>8.3} {:>8.3} {:>9.1}",
            r.recall,
            r.scanned_fraction.unwrap_or(1.0),
            r.mean_us
        );
    }
    Ok(())
}
