//! Train the hard-search model and the mean-pooling baseline on a synthetic
//! dataset, then compare them on held-out users.
//!
//! ```bash
//! cargo run --release --example train_and_eval
//! ```

use sim_core::datagen::{generate, GenConfig};
use sim_core::eval::compare_models;
use sim_core::model::{ModelConfig, SimModel};
use sim_core::trainer::train;

fn main() -> sim_core::Result<()> {
    let ds = generate(&GenConfig {
        users: 3_000,
        ..GenConfig::default()
    })?;
    let (train_set, test_set) = ds.split_by_user(0.2, 0);
    println!("{} training samples, {} held out", train_set.len(), test_set.len());

    let mut sim = SimModel::new(ModelConfig::hard(ds.n_items, ds.n_categories), 1)?;
    let report = train(&mut sim, &train_set, &test_set, 2, 1)?;
    for e in &report.epochs {
        println!("hard   epoch {} loss {:.4} auc {:.4}", e.epoch, e.mean_loss, e.heldout_auc.unwrap_or(f64::NAN));
    }
    let mut avg = SimModel::new(ModelConfig::avg_pool(ds.n_items, ds.n_categories), 1)?;
    train(&mut avg, &train_set, &[], 2, 1)?;

    let cmp = compare_models(&test_set, &avg, &sim)?;
    println!("avg-pool auc {:.4}", cmp.a.auc.unwrap_or(f64::NAN));
    println!("hard     auc {:.4}", cmp.b.auc.unwrap_or(f64::NAN));
    println!("delta auc {:+.4}", cmp.delta_auc.unwrap_or(f64::NAN));
    Ok(())
}
