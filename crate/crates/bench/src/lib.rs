//! Shared fixtures for the pipeline benchmarks.

use traypick_core::experiment::{perceive, Perception};
use traypick_core::{generate_scene, ExperimentConfig, TrayScene};

/// A default-config tray of `archetype` and what the planner sees of it.
pub fn fixture(archetype: &str, seed: u64) -> (ExperimentConfig, TrayScene, Perception) {
    let cfg = ExperimentConfig::for_archetype(archetype);
    let scene = generate_scene(&cfg.scene_config(), &cfg.library, seed).expect("default config generates");
    let seen = perceive(&cfg, &scene, seed).expect("default config perceives");
    (cfg, scene, seen)
}
