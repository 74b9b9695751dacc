use edgetrain_core::autodiff::{build_training_graph, TrainConfig};
use edgetrain_core::ir::OpClass;
use edgetrain_core::memplan::{plan, MemHierarchy};
use edgetrain_core::models::{build_cct, build_deep_ae, CctConfig};
use edgetrain_core::peft::{apply_strategy, LoraConfig, Strategy};
use edgetrain_core::perf::{estimate, node_flops, CostSkeleton, Engine, HwConfig};

fn main() {
    let cfg = CctConfig::default();
    let base = build_cct(&cfg).unwrap();
    let hier = MemHierarchy::default();
    println!("preset | Mflops | gemmMf | otherMf | gemm_nodes | nodes | MB32 | MB21");
    for strategy in Strategy::ALL {
        let graph = apply_strategy(&base, strategy, cfg.blocks, &LoraConfig::default()).unwrap();
        let tg = build_training_graph(&graph, &TrainConfig::default()).unwrap();
        let mp = plan(&tg, &hier).unwrap();
        let sk = CostSkeleton::build(&tg.graph, &mp).unwrap();
        let total: u64 = sk.total_flops();
        let gemm: u64 = sk.nodes.iter().filter(|n| n.gemm_class).map(|n| n.flops).sum();
        let gemm_nodes = sk.nodes.iter().filter(|n| n.gemm_class && n.flops > 0).count();
        let b32: u64 = sk.nodes.iter().map(|n| n.bytes_l3_l2).sum();
        let b21: u64 = sk.nodes.iter().map(|n| n.bytes_l2_l1).sum();
        println!(
            "{:?} | {:.2} | {:.2} | {:.2} | {} | {} | {:.2} | {:.2}",
            strategy,
            total as f64 / 1e6,
            gemm as f64 / 1e6,
            (total - gemm) as f64 / 1e6,
            gemm_nodes,
            sk.nodes.len(),
            b32 as f64 / 1e6,
            b21 as f64 / 1e6
        );
    }

    // Modeled latencies under the current default parameters.
    let hw0 = HwConfig::default();
    println!("\npreset | cluster_ms | accel_ms | speedup | accel_kernel_f/c");
    for strategy in Strategy::ALL {
        let graph = apply_strategy(&base, strategy, cfg.blocks, &LoraConfig::default()).unwrap();
        let tg = build_training_graph(&graph, &TrainConfig::default()).unwrap();
        let mp = plan(&tg, &hier).unwrap();
        let cl = estimate(&tg.graph, &mp, &hw0, Engine::ClusterOnly).unwrap();
        let ac = estimate(&tg.graph, &mp, &hw0, Engine::Accelerated).unwrap();
        println!(
            "{:?} | {:.2} | {:.2} | {:.3} | {:.2}",
            strategy,
            cl.seconds * 1e3,
            ac.seconds * 1e3,
            cl.seconds / ac.seconds,
            ac.kernel_flop_per_cycle
        );
    }

    // Per-op flop breakdown for one preset to sanity-check conventions.
    let graph = apply_strategy(&base, Strategy::FullFt, cfg.blocks, &LoraConfig::default()).unwrap();
    let tg = build_training_graph(&graph, &TrainConfig::default()).unwrap();
    let mut per_op: std::collections::BTreeMap<String, (u64, u64)> = Default::default();
    for n in &tg.graph.nodes {
        let e = per_op.entry(format!("{:?}", n.op)).or_default();
        e.0 += 1;
        e.1 += node_flops(&tg.graph, n);
    }
    println!("\nfull-ft per-op (count, Mflops):");
    for (op, (cnt, fl)) in &per_op {
        println!("  {op}: {cnt} x, {:.3} M", *fl as f64 / 1e6);
    }

    // Deep autoencoder at batch 32 on both engines with default params.
    let ae = build_deep_ae(32, 7).unwrap();
    let ae_tg = build_training_graph(&ae, &TrainConfig::default()).unwrap();
    let ae_mp = plan(&ae_tg, &hier).unwrap();
    let hw = HwConfig::default();
    for engine in [Engine::ClusterOnly, Engine::Accelerated] {
        let rep = estimate(&ae_tg.graph, &ae_mp, &hw, engine).unwrap();
        println!(
            "\ndeep-ae b32 {engine}: {:.2} Mflops, {:.2} ms, {:.2} f/c whole, {:.2} f/c kernel",
            rep.total_flops as f64 / 1e6,
            rep.seconds * 1e3,
            rep.flop_per_cycle,
            rep.kernel_flop_per_cycle
        );
    }
    let ae_sk = CostSkeleton::build(&ae_tg.graph, &ae_mp).unwrap();
    let ae_gemm: u64 = ae_sk.nodes.iter().filter(|n| n.gemm_class).map(|n| n.flops).sum();
    let ae_nodes = ae_sk.nodes.iter().filter(|n| n.gemm_class && n.flops > 0).count();
    println!(
        "deep-ae b32: gemm {:.2} M / total {:.2} M, {} offloads",
        ae_gemm as f64 / 1e6,
        ae_sk.total_flops() as f64 / 1e6,
        ae_nodes
    );

    let _ = OpClass::Gemm;
}
