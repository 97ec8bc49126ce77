//! Compare hand-written gradients against central differences for every
//! parameter tensor of a small soft-search model.
//!
//! ```bash
//! cargo run --release --example gradient_check
//! ```

use sim_core::datagen::{generate, GenConfig};
use sim_core::model::{ModelConfig, SimModel};
use sim_core::trainer::finite_difference_check;

fn main() -> sim_core::Result<()> {
    let ds = generate(&GenConfig {
        users: 4,
        items: 20,
        categories: 4,
        min_seq_len: 5,
        max_seq_len: 12,
        samples_per_user: 1,
        short_len: 2,
        ..GenConfig::default()
    })?;
    let cfg = ModelConfig {
        hidden: vec![16, 8],
        heads: 2,
        sbs_len: 8,
        aux_sample_len: 8,
        short_len: 2,
        ..ModelConfig::soft(ds.n_items, ds.n_categories)
    };
    let model = SimModel::new(cfg, 3)?;
    let report = finite_difference_check(&model, &ds.samples, 1e-4, 1e-3)?;
    println!("{:<24} {:>7} {:>7} {:>10}", "tensor", "checked", "skipped", "rel_err");
    for t in &report.tensors {
        println!("{:<24} {:>7} {:>7} {:>10.2e}", t.tensor, t.checked, t.skipped, t.max_rel_error);
    }
    println!("worst relative error {:.2e}", report.max_rel_error());
    Ok(())
}
