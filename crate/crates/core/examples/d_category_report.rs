//! How long ago did each clicked user last touch the clicked category?
//! Prints the distribution for the top-scored clicks of a trained model.
//!
//! ```bash
//! cargo run --release --example d_category_report
//! ```

use sim_core::datagen::{generate, GenConfig};
use sim_core::eval::{d_category, d_category_distribution, evaluate, DistributionBins};
use sim_core::model::{ModelConfig, SimModel};
use sim_core::trainer::train;

fn main() -> sim_core::Result<()> {
    let ds = generate(&GenConfig {
        users: 2_000,
        ..GenConfig::default()
    })?;
    let (train_set, test_set) = ds.split_by_user(0.2, 0);

    let all: Vec<i64> = test_set.iter().filter(|s| s.label).map(d_category).collect();
    println!("all held-out clicks ({}):", all.len());
    for bin in d_category_distribution(&all, DistributionBins::default()) {
        println!("  {:>10} {}", bin.label, bin.count);
    }

    let mut model = SimModel::new(ModelConfig::hard(ds.n_items, ds.n_categories), 3)?;
    train(&mut model, &train_set, &[], 2, 3)?;
    let rep = evaluate(&model, &test_set)?;
    println!("top-decile clicks of the trained model ({}):", rep.top_decile_clicks);
    for bin in &rep.histogram {
        println!("  {:>10} {}", bin.label, bin.count);
    }
    println!(
        "mean d_category {:.2} days, share with history {:.3}",
        rep.mean_d_category.unwrap_or(f64::NAN),
        rep.p_d_gt_neg1.unwrap_or(f64::NAN)
    );
    Ok(())
}
