//! Prints per-preset planner numbers for the reference CCT so band tests can
//! be sanity-checked by hand. Not part of the shipped pipeline.

use edgetrain_core::autodiff::{build_training_graph, TrainConfig};
use edgetrain_core::ir::TensorKind;
use edgetrain_core::memplan::{liveness, pack_extent, plan, MemHierarchy};
use edgetrain_core::models::{build_cct, CctConfig};
use edgetrain_core::peft::{apply_strategy, trainable_bytes, LoraConfig, Strategy};

fn main() {
    let hier = MemHierarchy::default();
    let cfg = CctConfig::default();
    for strategy in Strategy::ALL {
        let base = build_cct(&cfg).unwrap();
        let graph = apply_strategy(&base, strategy, cfg.blocks, &LoraConfig::default()).unwrap();
        let tb = trainable_bytes(&graph);
        let tg = build_training_graph(&graph, &TrainConfig::default()).unwrap();
        let mp = plan(&tg, &hier).unwrap();
        let r = &mp.report;
        // Full-streaming bound: every node stages distinct inputs in and
        // outputs back out across the L3/L2 boundary.
        let mut stream = 0u64;
        for node in &tg.graph.nodes {
            let mut seen: Vec<&str> = Vec::new();
            for i in &node.inputs {
                if !seen.contains(&i.as_str()) {
                    seen.push(i);
                    stream += tg.graph.tensors[i].byte_size();
                }
            }
            for o in &node.outputs {
                stream += tg.graph.tensors[o].byte_size();
            }
        }
        // Packed-arena variant of the dynamic peak: the extent a dedicated
        // training-state arena would need, fragmentation included.
        let is_static = |name: &str| {
            tg.graph.inputs.contains(&name.to_string())
                || matches!(
                    tg.graph.tensors[name].kind,
                    TensorKind::Weight | TensorKind::Bias | TensorKind::Constant
                )
        };
        let dyn_ivs: Vec<_> = liveness(&tg)
            .unwrap()
            .into_iter()
            .filter(|iv| !is_static(&iv.tensor))
            .collect();
        let packed = pack_extent(&dyn_ivs);
        // Streaming regime: L2 too small for the training working set, as at
        // full dataset scale.
        let tight = MemHierarchy {
            l1: 128 * 1024,
            l2: 256 * 1024,
            l3: 32 * 1024 * 1024,
        };
        let mps = plan(&tg, &tight).unwrap();
        println!(
            "{:10} trainable={:>9} B  dyn={:>9} B  packed={:>9} B  static={:>9} B  l2_peak={:>9}  l3_peak={:>9}  l3l2={:>11}  l2l1={:>12}  stream={:>12}  tight_l3l2={:>12}  tiles={}",
            strategy.as_str(),
            tb,
            r.dynamic_peak,
            packed,
            r.static_bytes,
            r.l2_peak,
            r.l3_peak,
            mp.ledger.l3_l2_total(),
            mp.ledger.l2_l1_total(),
            stream,
            mps.ledger.l3_l2_total(),
            mp.tiles.len(),
        );
    }
}
