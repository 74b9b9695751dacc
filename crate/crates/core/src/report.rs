//! Cross-preset summaries: one row per tuning preset collecting parameter
//! sizes, step FLOPs, planned memory peaks, transfer volumes, and modeled
//! latencies. The CLI renders these rows as CSV and JSON; the numbers come
//! straight from the pipeline stages and are deterministic for a fixed
//! model configuration.

use serde::{Deserialize, Serialize};

use crate::autodiff::{build_training_graph, TrainConfig};
use crate::ir::TensorKind;
use crate::memplan::{plan, MemHierarchy};
use crate::models::{build_cct, CctConfig};
use crate::peft::{apply_strategy, trainable_bytes, LoraConfig, Strategy};
use crate::perf::{estimate, Engine, HwConfig};
use crate::Result;

/// Everything the pipeline knows about one preset, flattened.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PresetRow {
    pub strategy: Strategy,
    pub trainable_params: u64,
    pub trainable_bytes: u64,
    pub total_params: u64,
    /// FLOPs of one full training step (forward, backward, updates).
    pub step_flops: u64,
    /// Packed arena extents and footprint split from the memory planner.
    pub l2_peak: u64,
    pub l3_peak: u64,
    pub dynamic_peak: u64,
    pub static_bytes: u64,
    /// Per-step DMA volume, both directions, from the transfer ledger.
    pub l3_l2_transfer_bytes: u64,
    pub l2_l1_transfer_bytes: u64,
    /// Modeled step latencies and derived figures.
    pub cluster_ms: f64,
    pub accel_ms: f64,
    pub speedup: f64,
    pub accel_steps_per_second: f64,
    pub accel_kernel_flop_per_cycle: f64,
}

/// Build, differentiate, plan and cost one preset of the transformer model.
pub fn preset_row(
    strategy: Strategy,
    cfg: &CctConfig,
    train: &TrainConfig,
    lora: &LoraConfig,
    hier: &MemHierarchy,
    hw: &HwConfig,
) -> Result<PresetRow> {
    let base = build_cct(cfg)?;
    let graph = apply_strategy(&base, strategy, cfg.blocks, lora)?;
    let tg = build_training_graph(&graph, train)?;
    let mp = plan(&tg, hier)?;
    let cluster = estimate(&tg.graph, &mp, hw, Engine::ClusterOnly)?;
    let accel = estimate(&tg.graph, &mp, hw, Engine::Accelerated)?;
    let total_params = tg
        .graph
        .tensors
        .values()
        .filter(|t| matches!(t.kind, TensorKind::Weight | TensorKind::Bias))
        .map(|t| t.elements())
        .sum();
    let trainable_params = tg
        .graph
        .tensors
        .values()
        .filter(|t| t.trainable)
        .map(|t| t.elements())
        .sum();
    Ok(PresetRow {
        strategy,
        trainable_params,
        trainable_bytes: trainable_bytes(&tg.graph),
        total_params,
        step_flops: cluster.total_flops,
        l2_peak: mp.report.l2_peak,
        l3_peak: mp.report.l3_peak,
        dynamic_peak: mp.report.dynamic_peak,
        static_bytes: mp.report.static_bytes,
        l3_l2_transfer_bytes: mp.ledger.l3_l2_total(),
        l2_l1_transfer_bytes: mp.ledger.l2_l1_total(),
        cluster_ms: cluster.seconds * 1e3,
        accel_ms: accel.seconds * 1e3,
        speedup: cluster.seconds / accel.seconds,
        accel_steps_per_second: accel.steps_per_second,
        accel_kernel_flop_per_cycle: accel.kernel_flop_per_cycle,
    })
}

/// One row per preset, in a fixed order.
pub fn preset_table(
    cfg: &CctConfig,
    train: &TrainConfig,
    lora: &LoraConfig,
    hier: &MemHierarchy,
    hw: &HwConfig,
) -> Result<Vec<PresetRow>> {
    Strategy::ALL
        .iter()
        .map(|&s| preset_row(s, cfg, train, lora, hier, hw))
        .collect()
}

/// Trainable-state and compute cost per preset. Sizes in KB (10^3 bytes),
/// FLOPs in millions, matching how such budgets are quoted.
pub fn size_csv(rows: &[PresetRow]) -> String {
    let mut s = String::from("strategy,trainable_params,trainable_kb,total_params,step_mflops\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{:.2},{},{:.2}\n",
            r.strategy.as_str(),
            r.trainable_params,
            r.trainable_bytes as f64 / 1e3,
            r.total_params,
            r.step_flops as f64 / 1e6
        ));
    }
    s
}

/// Modeled step latency per preset on both engines.
pub fn latency_csv(rows: &[PresetRow]) -> String {
    let mut s =
        String::from("strategy,cluster_ms,accel_ms,speedup,steps_per_second,kernel_flop_per_cycle\n");
    for r in rows {
        s.push_str(&format!(
            "{},{:.3},{:.3},{:.3},{:.2},{:.2}\n",
            r.strategy.as_str(),
            r.cluster_ms,
            r.accel_ms,
            r.speedup,
            r.accel_steps_per_second,
            r.accel_kernel_flop_per_cycle
        ));
    }
    s
}

/// Planned memory footprint and DMA volume per preset.
pub fn memory_csv(rows: &[PresetRow]) -> String {
    let mut s = String::from(
        "strategy,dynamic_peak_bytes,static_bytes,l2_peak_bytes,l3_peak_bytes,l3_l2_transfer_bytes,l2_l1_transfer_bytes\n",
    );
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.strategy.as_str(),
            r.dynamic_peak,
            r.static_bytes,
            r.l2_peak,
            r.l3_peak,
            r.l3_l2_transfer_bytes,
            r.l2_l1_transfer_bytes
        ));
    }
    s
}
