//! Shared fixtures for the pipeline benchmarks: pre-built training graphs
//! so each benchmark times exactly one stage.

use edgetrain_core::autodiff::{build_training_graph, TrainConfig, TrainingGraph};
use edgetrain_core::models::{build_cct, CctConfig};
use edgetrain_core::peft::{apply_strategy, LoraConfig, Strategy};

/// Full training step for one preset of the default transformer.
pub fn preset_training_graph(strategy: Strategy) -> TrainingGraph {
    let cfg = CctConfig::default();
    let base = build_cct(&cfg).expect("reference model builds");
    let graph = apply_strategy(&base, strategy, cfg.blocks, &LoraConfig::default())
        .expect("preset applies");
    build_training_graph(&graph, &TrainConfig::default()).expect("training graph builds")
}
