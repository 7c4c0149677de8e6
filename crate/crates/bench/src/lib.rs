//! Shared fixtures for the benchmarks: the desk configuration and a small
//! demonstration set built from it.

use std::path::Path;

use hapfuse_core::policy::train::TrainSet;
use hapfuse_core::world::generate_episodes;
use hapfuse_core::{Episode, RunConfig};

/// `configs/desk.toml` from the workspace root.
pub fn desk_config() -> RunConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/desk.toml");
    RunConfig::load(&path).expect("desk config loads")
}

pub fn episodes(cfg: &RunConfig, n: usize) -> Vec<Episode> {
    generate_episodes(&cfg.world, n, 0).expect("expert demonstrations")
}

pub fn train_set(cfg: &RunConfig, n: usize) -> TrainSet {
    TrainSet::new(&episodes(cfg, n), cfg).expect("training set")
}
