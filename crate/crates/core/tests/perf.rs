use std::collections::BTreeMap;

use edgetrain_core::autodiff::{build_training_graph, TrainConfig};
use edgetrain_core::memplan::{plan, MemHierarchy, MemPlan};
use edgetrain_core::models::{build_cct, build_deep_ae, build_toy_mlp, CctConfig};
use edgetrain_core::peft::{apply_strategy, LoraConfig, Strategy};
use edgetrain_core::perf::{
    calibrate, estimate, graph_flops, max_rel_error, node_flops, reference_anchors,
    CalibrationCase, CostSkeleton, Engine, HwConfig,
};

fn planned_preset(strategy: Strategy) -> (edgetrain_core::ir::Graph, MemPlan) {
    let cfg = CctConfig::default();
    let base = build_cct(&cfg).unwrap();
    let graph = apply_strategy(&base, strategy, cfg.blocks, &LoraConfig::default()).unwrap();
    let tg = build_training_graph(&graph, &TrainConfig::default()).unwrap();
    let mp = plan(&tg, &MemHierarchy::default()).unwrap();
    (tg.graph, mp)
}

#[test]
fn toy_step_flops_match_hand_counted_values() {
    // 2x6 -> 5 -> 3 MLP, batch 2. Every node is small enough to count on
    // paper: GEMM costs 2MNK (+MN for bias), the loss 5/element, its
    // backward 2/element, reductions 1/element reduced, updates 2/param.
    let mlp = build_toy_mlp(2, 6, 5, 3, 41).unwrap();
    let tg = build_training_graph(&mlp, &TrainConfig::default()).unwrap();
    let by_name: BTreeMap<&str, u64> = tg
        .graph
        .nodes
        .iter()
        .map(|n| (n.name.as_str(), node_flops(&tg.graph, n)))
        .collect();
    let expected = [
        ("fw000_fc1", 2 * 2 * 5 * 6 + 2 * 5),
        ("fw001_relu1", 10),
        ("fw002_fc2", 2 * 2 * 3 * 5 + 2 * 3),
        ("loss_ce", 5 * 6),
        ("bw0000_dx_loss_ce", 2 * 6),
        ("bw0001_dwa_fw002_fc2", 2 * 2 * 5 * 3),
        ("bw0001_dwb_fw002_fc2", 2 * 5 * 3 * 2),
        ("bw0001_db_fw002_fc2", 6),
        ("bw0002_dx_fw001_relu1", 10),
        ("bw0003_dwb_fw000_fc1", 2 * 6 * 5 * 2),
        ("bw0003_db_fw000_fc1", 10),
        ("upd_fc1.w", 60),
        ("upd_fc1.b", 10),
        ("upd_fc2.w", 30),
        ("upd_fc2.b", 6),
    ];
    for (name, want) in expected {
        assert_eq!(by_name.get(name), Some(&want), "flop count for {name}");
    }
    assert_eq!(graph_flops(&tg.graph), 620);
}

#[test]
fn preset_step_flops_are_stable() {
    let cfg = CctConfig::default();
    let base = build_cct(&cfg).unwrap();
    let pinned: &[(Strategy, u64)] = &[
        (Strategy::LinearProbe, 71_843_822),
        (Strategy::Ft1, 102_044_910),
        (Strategy::Ft2, 132_194_030),
        (Strategy::Lora1, 84_955_886),
        (Strategy::Lora2, 104_381_166),
        (Strategy::FullFt, 211_972_400),
    ];
    for &(strategy, want) in pinned {
        let g = apply_strategy(&base, strategy, cfg.blocks, &LoraConfig::default()).unwrap();
        let tg = build_training_graph(&g, &TrainConfig::default()).unwrap();
        assert_eq!(graph_flops(&tg.graph), want, "step flops for {strategy}");
    }
}

#[test]
fn adapters_cost_fewer_flops_than_the_blocks_they_replace() {
    let cfg = CctConfig::default();
    let base = build_cct(&cfg).unwrap();
    let step = |s: Strategy| {
        let g = apply_strategy(&base, s, cfg.blocks, &LoraConfig::default()).unwrap();
        graph_flops(&build_training_graph(&g, &TrainConfig::default()).unwrap().graph)
    };
    let lp = step(Strategy::LinearProbe);
    let lora1 = step(Strategy::Lora1);
    let ft1 = step(Strategy::Ft1);
    let lora2 = step(Strategy::Lora2);
    let ft2 = step(Strategy::Ft2);
    let full = step(Strategy::FullFt);
    assert!(lp < lora1 && lora1 < ft1 && ft1 < lora2 && lora2 < ft2 && ft2 < full);
}

fn fixture_cases() -> Vec<CalibrationCase> {
    let mut cases = Vec::new();
    for anchor in reference_anchors() {
        let strategy: Strategy = anchor.strategy.parse().unwrap();
        let (graph, mp) = planned_preset(strategy);
        let skeleton = CostSkeleton::build(&graph, &mp).unwrap();
        cases.push(CalibrationCase {
            name: format!("{}-cluster", anchor.strategy),
            skeleton: skeleton.clone(),
            engine: Engine::ClusterOnly,
            measured_ms: anchor.cluster_ms,
        });
        cases.push(CalibrationCase {
            name: format!("{}-accel", anchor.strategy),
            skeleton,
            engine: Engine::Accelerated,
            measured_ms: anchor.accel_ms,
        });
    }
    cases
}

#[test]
fn calibration_reproduces_the_reference_anchors_tightly() {
    let cases = fixture_cases();
    let fitted = calibrate(&cases, &HwConfig::default()).unwrap();
    let err = max_rel_error(&cases, &fitted).unwrap();
    assert!(
        err < 0.02,
        "fitted model should sit within measurement rounding of the anchors, got {:.2}%",
        err * 100.0
    );
}

#[test]
fn offload_speedups_stay_in_the_two_to_four_band() {
    let fitted = calibrate(&fixture_cases(), &HwConfig::default()).unwrap();
    let mut speedups: Vec<(Strategy, f64)> = Vec::new();
    for strategy in Strategy::ALL {
        let (graph, mp) = planned_preset(strategy);
        let cluster = estimate(&graph, &mp, &fitted, Engine::ClusterOnly).unwrap();
        let accel = estimate(&graph, &mp, &fitted, Engine::Accelerated).unwrap();
        let speedup = cluster.seconds / accel.seconds;
        assert!(
            (2.0..=4.0).contains(&speedup),
            "{strategy}: offload speedup {speedup:.3} outside [2, 4]"
        );
        speedups.push((strategy, speedup));
    }
    let lp = speedups[0].1;
    for &(strategy, s) in &speedups[1..] {
        assert!(
            lp > s,
            "pure-forward linear probing should benefit most from offload: lp {lp:.3} vs {strategy} {s:.3}"
        );
    }
}

#[test]
fn accelerated_block_tuning_clears_ten_steps_per_second() {
    let fitted = calibrate(&fixture_cases(), &HwConfig::default()).unwrap();
    for strategy in [Strategy::Ft2, Strategy::Lora2] {
        let (graph, mp) = planned_preset(strategy);
        let report = estimate(&graph, &mp, &fitted, Engine::Accelerated).unwrap();
        assert!(
            report.steps_per_second >= 10.0,
            "{strategy}: {:.2} steps/s",
            report.steps_per_second
        );
    }
}

#[test]
fn batched_autoencoder_keeps_the_accelerator_above_ten_flop_per_cycle() {
    let fitted = calibrate(&fixture_cases(), &HwConfig::default()).unwrap();
    let ae = build_deep_ae(32, 7).unwrap();
    let tg = build_training_graph(&ae, &TrainConfig::default()).unwrap();
    let mp = plan(&tg, &MemHierarchy::default()).unwrap();
    let report = estimate(&tg.graph, &mp, &fitted, Engine::Accelerated).unwrap();
    assert!(
        report.kernel_flop_per_cycle > 10.0,
        "offloaded kernels reach {:.2} FLOP/cycle",
        report.kernel_flop_per_cycle
    );
}
