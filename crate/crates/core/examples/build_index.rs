//! Build a user behavior tree from a log, persist it, and run category
//! lookups against the reloaded snapshot.
//!
//! ```bash
//! cargo run --release --example build_index
//! ```

use sim_core::behavior_store::UserBehaviorTree;
use sim_core::datagen::{generate, GenConfig};
use sim_core::domain::Behavior;

fn main() -> sim_core::Result<()> {
    let ds = generate(&GenConfig {
        users: 500,
        ..GenConfig::default()
    })?;
    let tree = UserBehaviorTree::build(ds.behavior_log());
    println!("built: {:?}", tree.stats());

    let dir = tempfile::tempdir()?;
    let path = dir.path().join("ubt.bin");
    tree.save(&path)?;
    let loaded = UserBehaviorTree::load(&path)?;
    println!("reloaded {} users, {} bytes on disk", loaded.num_users(), std::fs::metadata(&path)?.len());

    let user = 0;
    let node = loaded.user(user).expect("user 0 exists");
    let (top_cat, top_len) = node.categories().map(|(c, l)| (c, l.len())).max_by_key(|&(_, n)| n).unwrap();
    println!("user {user}: {} behaviors across {} categories", node.total(), node.num_categories());
    println!("largest category {top_cat} holds {top_len}; the 5 most recent:");
    for b in loaded.query(user, top_cat, 5).iter() {
        println!("  item {:>6} at t={}", b.item_id, b.timestamp);
    }

    // snapshots are immutable; inserting yields a new tree
    let newer = loaded.insert(user, Behavior::new(42, top_cat, loaded.build_timestamp() + 60));
    println!(
        "after insert: old snapshot has {}, new snapshot has {} in category {top_cat}",
        loaded.user(user).unwrap().category(top_cat).len(),
        newer.user(user).unwrap().category(top_cat).len()
    );
    Ok(())
}
