//! Compare the two first-stage searches on one user: the category filter
//! and the learned inner-product ranking, exact and via the ALSH index.
//!
//! ```bash
//! cargo run --release --example hard_vs_soft_search
//! ```

use std::collections::HashSet;

use sim_core::datagen::{generate, GenConfig};
use sim_core::domain::Behavior;
use sim_core::gsu::{hard_search_seq, soft_search_exact, AlshConfig, SoftSearchIndex};
use sim_core::model::{ModelConfig, SimModel};

fn main() -> sim_core::Result<()> {
    let ds = generate(&GenConfig {
        users: 200,
        min_seq_len: 1_500,
        max_seq_len: 2_000,
        ..GenConfig::default()
    })?;
    let sample = &ds.samples[0];
    let model = SimModel::new(ModelConfig::soft(ds.n_items, ds.n_categories), 1)?;
    let k = 50;

    let hard = hard_search_seq(&sample.long_seq, sample.candidate.category_id, k);
    let soft = soft_search_exact(&sample.long_seq, &sample.candidate, &model, k);
    let index = SoftSearchIndex::build(&sample.long_seq, &model, &AlshConfig::default())?;
    let approx = index.search(&sample.candidate, &model, k);

    println!("history of {} behaviors, candidate category {}", sample.long_seq.len(), sample.candidate.category_id);
    println!("hard search kept {} (all in the candidate's category)", hard.len());
    let same_cat = soft.iter().filter(|b| b.category_id == sample.candidate.category_id).count();
    println!("soft search kept {} ({} in the candidate's category, untrained model)", soft.len(), same_cat);
    let exact: HashSet<Behavior> = soft.iter().copied().collect();
    let found = approx.iter().filter(|b| exact.contains(b)).count();
    println!("ALSH recovered {found}/{} of the exact soft result", soft.len());
    Ok(())
}
