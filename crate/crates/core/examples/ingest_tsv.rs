//! Turn a tab-separated review log with string ids into a dataset and
//! train on it.
//!
//! ```bash
//! cargo run --release --example ingest_tsv
//! ```

use std::fmt::Write as _;

use sim_core::datagen::{ingest, IngestSchema};
use sim_core::model::{ModelConfig, SimModel};
use sim_core::trainer::train;

fn main() -> sim_core::Result<()> {
    let shelves = ["books", "music", "garden", "kitchen", "toys"];
    let mut tsv = String::new();
    for user in 0..300u64 {
        for j in 0..40u64 {
            let shelf = shelves[((user + j * j) % 5) as usize];
            let item = format!("{shelf}-{}", (user * 7 + j) % 30);
            writeln!(tsv, "user{user}\t{item}\t{shelf}\t{}", 1_500_000_000 + user * 13 + j * 86_400).unwrap();
        }
    }
    let dir = tempfile::tempdir()?;
    let path = dir.path().join("reviews.tsv");
    std::fs::write(&path, tsv)?;

    let (ds, report) = ingest(&path, IngestSchema::Reviews, 10, 1)?;
    println!("{report:?}");

    let (train_set, test_set) = ds.split_by_user(0.2, 0);
    let mut model = SimModel::new(ModelConfig::hard(ds.n_items, ds.n_categories), 1)?;
    let rep = train(&mut model, &train_set, &test_set, 3, 1)?;
    let last = rep.epochs.last().unwrap();
    println!("after {} epochs: loss {:.4}, held-out auc {:?}", rep.epochs.len(), last.mean_loss, last.heldout_auc);
    Ok(())
}
