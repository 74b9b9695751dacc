//! `edgetrain`: command-line front end for the training-graph compiler.
//!
//! Subcommands chain through content-hashed artifacts in an output
//! directory:
//!
//! ```text
//! build --model cct --out run/            -> run/graph.json (+ .blob)
//! diff  --graph run/graph.json --strategy lora-2 --out run/
//! plan  --graph run/training.json --out run/
//! run   --graph run/training.json --steps 20 --out run/
//! estimate --graph run/training.json --plan run/plan.json --out run/
//! emit  --graph run/training.json --plan run/plan.json --out run/
//! report --out run/                        -> CSVs over all presets
//! ```
//!
//! Identical invocations produce byte-identical artifacts. Failures print
//! one JSON line to stderr and exit 1 (user error) or 2 (internal
//! invariant); success prints a short human summary to stdout.

mod artifact;

use std::collections::BTreeMap;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use edgetrain_core::autodiff::{build_training_graph, TrainConfig, TrainingGraph};
use edgetrain_core::codegen::{emit, EmitOptions};
use edgetrain_core::exec::run_training;
use edgetrain_core::ir::{parse_graph, serialize_graph, Graph, TensorKind};
use edgetrain_core::memplan::{plan, MemHierarchy, MemPlan};
use edgetrain_core::models::{build_cct, build_deep_ae, build_toy_mlp, CctConfig};
use edgetrain_core::peft::{apply_strategy, trainable_bytes, LoraConfig, Strategy};
use edgetrain_core::perf::{estimate, Engine, HwConfig};
use edgetrain_core::report::{latency_csv, memory_csv, preset_table, size_csv};

use artifact::{Artifact, CliError};

#[derive(Parser)]
#[command(
    name = "edgetrain",
    version,
    about = "Compile, plan, cost and emit on-device training steps for edge SoCs"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Construct a model graph and write it as an artifact.
    Build(BuildArgs),
    /// Apply a tuning strategy and differentiate into a training step.
    Diff(DiffArgs),
    /// Plan memory placement, tiling and transfers for a training graph.
    Plan(PlanArgs),
    /// Execute training steps with the reference interpreter.
    Run(RunArgs),
    /// Model step latency on the cluster and with the GEMM accelerator.
    Estimate(EstimateArgs),
    /// Generate the standalone C program for one training step.
    Emit(EmitArgs),
    /// Summarize every tuning preset as CSV and JSON.
    Report(ReportArgs),
}

#[derive(Args)]
struct BuildArgs {
    /// Model to construct: toy-mlp, deep-ae, cct, cct-tiny.
    #[arg(long)]
    model: String,
    /// Override the model's parameter-init seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Batch size for models that take one (toy-mlp, deep-ae).
    #[arg(long, default_value_t = 1)]
    batch: usize,
    /// Output directory for artifacts.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DiffArgs {
    /// Graph artifact from `build`.
    #[arg(long)]
    graph: PathBuf,
    /// Tuning preset: lp, ft-1, ft-2, lora-1, lora-2, full. Omit to train
    /// the graph as-is.
    #[arg(long)]
    strategy: Option<String>,
    /// Adapter rank for the lora presets.
    #[arg(long, default_value_t = 4)]
    rank: usize,
    /// Adapter scaling numerator (scale = alpha / rank).
    #[arg(long, default_value_t = 4.0)]
    alpha: f64,
    /// SGD learning rate baked into the update nodes.
    #[arg(long, default_value_t = 0.05)]
    lr: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PlanArgs {
    /// Training artifact from `diff`.
    #[arg(long)]
    graph: PathBuf,
    /// Memory overrides, e.g. "L1=131072,L2=2097152,L3=33554432".
    #[arg(long)]
    mem: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    /// Training artifact from `diff`.
    #[arg(long)]
    graph: PathBuf,
    /// Number of optimizer steps over the synthetic batches.
    #[arg(long, default_value_t = 20)]
    steps: usize,
    /// Seed for the synthetic input batches.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EstimateArgs {
    /// Training artifact from `diff`.
    #[arg(long)]
    graph: PathBuf,
    /// Plan artifact from `plan` (must descend from the same training graph).
    #[arg(long)]
    plan: PathBuf,
    /// Hardware config as JSON; defaults to the reference SoC.
    #[arg(long)]
    hw: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EmitArgs {
    /// Training artifact from `diff`.
    #[arg(long)]
    graph: PathBuf,
    /// Plan artifact from `plan` (must descend from the same training graph).
    #[arg(long)]
    plan: PathBuf,
    /// Emit every GEMM as a single pass instead of using the tile plans.
    #[arg(long)]
    untiled: bool,
    /// Seed for the fixture's synthetic inputs.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// Memory overrides, e.g. "L2=2097152".
    #[arg(long)]
    mem: Option<String>,
    /// Hardware config as JSON; defaults to the reference SoC.
    #[arg(long)]
    hw: Option<PathBuf>,
    /// Report on the reduced test model instead of the full transformer.
    #[arg(long)]
    tiny: bool,
    #[arg(long)]
    out: PathBuf,
}

fn main() {
    if let Err(e) = dispatch() {
        eprintln!("{}", e.json());
        std::process::exit(e.exit_code());
    }
}

fn dispatch() -> Result<(), CliError> {
    let cli = Cli::try_parse().map_err(|e| {
        use clap::error::ErrorKind;
        if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
            print!("{e}");
            std::process::exit(0);
        }
        CliError::User(e.to_string())
    })?;
    match cli.cmd {
        Cmd::Build(a) => cmd_build(&a),
        Cmd::Diff(a) => cmd_diff(&a),
        Cmd::Plan(a) => cmd_plan(&a),
        Cmd::Run(a) => cmd_run(&a),
        Cmd::Estimate(a) => cmd_estimate(&a),
        Cmd::Emit(a) => cmd_emit(&a),
        Cmd::Report(a) => cmd_report(&a),
    }
}

fn param_count(graph: &Graph) -> u64 {
    graph
        .tensors
        .values()
        .filter(|t| matches!(t.kind, TensorKind::Weight | TensorKind::Bias))
        .map(|t| t.elements())
        .sum()
}

fn cmd_build(a: &BuildArgs) -> Result<(), CliError> {
    let (graph, blocks) = match a.model.as_str() {
        "toy-mlp" => (build_toy_mlp(a.batch, 6, 5, 3, a.seed.unwrap_or(41))?, 0usize),
        "deep-ae" => (build_deep_ae(a.batch, a.seed.unwrap_or(7))?, 0),
        "cct" | "cct-tiny" => {
            let mut cfg = if a.model == "cct" {
                CctConfig::default()
            } else {
                CctConfig::tiny()
            };
            if let Some(seed) = a.seed {
                cfg.seed = seed;
            }
            (build_cct(&cfg)?, cfg.blocks)
        }
        other => {
            return Err(CliError::User(format!(
                "unknown model `{other}` (expected toy-mlp, deep-ae, cct, cct-tiny)"
            )))
        }
    };
    let (doc, blob) = serialize_graph(&graph)?;
    let payload = json!({
        "model": a.model,
        "blocks": blocks,
        "doc": serde_json::from_str::<serde_json::Value>(&doc)?,
    });
    let hash = artifact::write(&a.out, "graph", "graph", BTreeMap::new(), payload, &blob)?;
    println!(
        "graph {}: {} nodes, {} params -> {}",
        a.model,
        graph.nodes.len(),
        param_count(&graph),
        a.out.join("graph.json").display()
    );
    println!("hash {hash}");
    Ok(())
}

/// Reconstruct the base graph a `graph` artifact carries.
fn graph_from_artifact(art: &Artifact) -> Result<(Graph, usize), CliError> {
    let doc = serde_json::to_string(&art.payload["doc"])?;
    let graph = parse_graph(&doc, &art.blob)?;
    let blocks = art.payload["blocks"].as_u64().unwrap_or(0) as usize;
    Ok((graph, blocks))
}

fn cmd_diff(a: &DiffArgs) -> Result<(), CliError> {
    let art = artifact::read(&a.graph, "graph")?;
    let (base, blocks) = graph_from_artifact(&art)?;
    let strategy = match &a.strategy {
        Some(s) => Some(s.parse::<Strategy>().map_err(CliError::from)?),
        None => None,
    };
    let lora = LoraConfig {
        rank: a.rank,
        alpha: a.alpha,
        ..LoraConfig::default()
    };
    let tuned = match strategy {
        Some(s) => apply_strategy(&base, s, blocks, &lora)?,
        None => base,
    };
    let train = TrainConfig {
        lr: a.lr,
        ..TrainConfig::default()
    };
    let tg = build_training_graph(&tuned, &train)?;

    // The artifact records the recipe (base graph + strategy + configs);
    // downstream stages rebuild the training graph deterministically.
    let payload = json!({
        "strategy": strategy.map(|s| s.as_str()),
        "lora": lora,
        "train": train,
        "blocks": blocks,
        "base_doc": art.payload["doc"],
    });
    let parents = BTreeMap::from([("graph".to_string(), art.hash.clone())]);
    let hash = artifact::write(&a.out, "training", "training", parents, payload, &art.blob)?;
    println!(
        "training graph: {} nodes, {} trainable bytes ({} params updated) -> {}",
        tg.graph.nodes.len(),
        trainable_bytes(&tg.graph),
        tg.updates.len(),
        a.out.join("training.json").display()
    );
    println!("hash {hash}");
    Ok(())
}

/// Rebuild the training graph a `training` artifact describes.
fn training_from_artifact(art: &Artifact) -> Result<TrainingGraph, CliError> {
    let doc = serde_json::to_string(&art.payload["base_doc"])?;
    let base = parse_graph(&doc, &art.blob)?;
    let blocks = art.payload["blocks"].as_u64().unwrap_or(0) as usize;
    let lora: LoraConfig = serde_json::from_value(art.payload["lora"].clone())?;
    let train: TrainConfig = serde_json::from_value(art.payload["train"].clone())?;
    let tuned = match art.payload["strategy"].as_str() {
        Some(s) => apply_strategy(&base, s.parse::<Strategy>()?, blocks, &lora)?,
        None => base,
    };
    Ok(build_training_graph(&tuned, &train)?)
}

fn cmd_plan(a: &PlanArgs) -> Result<(), CliError> {
    let art = artifact::read(&a.graph, "training")?;
    let tg = training_from_artifact(&art)?;
    let hier = match &a.mem {
        Some(spec) => MemHierarchy::parse_override(spec)?,
        None => MemHierarchy::default(),
    };
    let mp = plan(&tg, &hier)?;
    let payload = serde_json::to_value(&mp)?;
    let parents = BTreeMap::from([("training".to_string(), art.hash.clone())]);
    let hash = artifact::write(&a.out, "plan", "plan", parents, payload, &[])?;
    println!(
        "plan: L2 peak {} B, L3 peak {} B, dynamic peak {} B, DMA {}/{} B -> {}",
        mp.report.l2_peak,
        mp.report.l3_peak,
        mp.report.dynamic_peak,
        mp.ledger.l3_l2_total(),
        mp.ledger.l2_l1_total(),
        a.out.join("plan.json").display()
    );
    println!("hash {hash}");
    Ok(())
}

/// Deterministic synthetic feeds for every graph input. Labels become
/// rotating one-hot rows; everything else gets a hash-derived value in
/// roughly [-0.33, 0.33].
fn synth_feeds(tg: &TrainingGraph, seed: u64) -> Result<BTreeMap<String, Vec<f32>>, CliError> {
    let mut feeds = BTreeMap::new();
    for name in &tg.graph.inputs {
        let spec = tg.graph.tensor(name)?;
        let n = spec.elements() as usize;
        let data = if name == "label" {
            let classes = *spec.shape.last().unwrap();
            let mut label = vec![0.0f32; n];
            for b in 0..n / classes {
                label[b * classes + (seed as usize + b * 7 + 3) % classes] = 1.0;
            }
            label
        } else {
            (0..n)
                .map(|i| {
                    let mut x = (i as u64 + 1).wrapping_mul(0x9e3779b97f4a7c15) ^ seed;
                    x ^= x >> 30;
                    x = x.wrapping_mul(0xbf58476d1ce4e5b9);
                    ((x % 1000) as f32 - 499.5) / 1500.0
                })
                .collect()
        };
        feeds.insert(name.clone(), data);
    }
    Ok(feeds)
}

fn cmd_run(a: &RunArgs) -> Result<(), CliError> {
    let art = artifact::read(&a.graph, "training")?;
    let tg = training_from_artifact(&art)?;
    let batches: Vec<BTreeMap<String, Vec<f32>>> = (0..4)
        .map(|i| synth_feeds(&tg, a.seed.wrapping_add(i)))
        .collect::<Result<_, _>>()?;
    let losses = run_training::<f32>(&tg, &batches, a.steps)?;
    let payload = json!({
        "steps": a.steps,
        "seed": a.seed,
        "losses": losses,
        "initial_loss": losses.first(),
        "final_loss": losses.last(),
    });
    let parents = BTreeMap::from([("training".to_string(), art.hash.clone())]);
    let hash = artifact::write(&a.out, "run", "run", parents, payload, &[])?;
    println!(
        "run: {} steps, loss {:.6} -> {:.6} -> {}",
        a.steps,
        losses.first().copied().unwrap_or(f64::NAN),
        losses.last().copied().unwrap_or(f64::NAN),
        a.out.join("run.json").display()
    );
    println!("hash {hash}");
    Ok(())
}

fn load_hw(path: &Option<PathBuf>) -> Result<HwConfig, CliError> {
    let hw = match path {
        Some(p) => serde_json::from_str::<HwConfig>(&std::fs::read_to_string(p)?)?,
        None => HwConfig::default(),
    };
    hw.validate()?;
    Ok(hw)
}

fn cmd_estimate(a: &EstimateArgs) -> Result<(), CliError> {
    let training = artifact::read(&a.graph, "training")?;
    let plan_art = artifact::read(&a.plan, "plan")?;
    plan_art.require_parent("training", &training.hash)?;
    let tg = training_from_artifact(&training)?;
    let mp: MemPlan = serde_json::from_value(plan_art.payload.clone())?;
    let hw = load_hw(&a.hw)?;
    let cluster = estimate(&tg.graph, &mp, &hw, Engine::ClusterOnly)?;
    let accel = estimate(&tg.graph, &mp, &hw, Engine::Accelerated)?;
    let speedup = cluster.seconds / accel.seconds;
    let payload = json!({
        "hw": hw,
        "cluster": cluster,
        "accelerated": accel,
        "speedup": speedup,
    });
    let parents = BTreeMap::from([
        ("training".to_string(), training.hash.clone()),
        ("plan".to_string(), plan_art.hash.clone()),
    ]);
    let hash = artifact::write(&a.out, "estimate", "estimate", parents, payload, &[])?;
    println!(
        "estimate: cluster {:.2} ms, accelerated {:.2} ms ({speedup:.2}x, {:.1} steps/s) -> {}",
        cluster.seconds * 1e3,
        accel.seconds * 1e3,
        accel.steps_per_second,
        a.out.join("estimate.json").display()
    );
    println!("hash {hash}");
    Ok(())
}

fn cmd_emit(a: &EmitArgs) -> Result<(), CliError> {
    let training = artifact::read(&a.graph, "training")?;
    let plan_art = artifact::read(&a.plan, "plan")?;
    plan_art.require_parent("training", &training.hash)?;
    let tg = training_from_artifact(&training)?;
    let mp: MemPlan = serde_json::from_value(plan_art.payload.clone())?;
    let feeds = synth_feeds(&tg, a.seed)?;
    let opts = EmitOptions { tiled: !a.untiled };
    let prog = emit(&tg, &mp, &feeds, &opts)?;
    let cdir = a.out.join("csrc");
    prog.write_to(&cdir)?;
    let files: BTreeMap<String, String> = prog
        .files
        .iter()
        .map(|(name, content)| (name.clone(), artifact::sha256_hex(content)))
        .collect();
    let payload = json!({
        "tiled": !a.untiled,
        "seed": a.seed,
        "files": files,
    });
    let parents = BTreeMap::from([
        ("training".to_string(), training.hash.clone()),
        ("plan".to_string(), plan_art.hash.clone()),
    ]);
    let hash = artifact::write(&a.out, "emit", "emit", parents, payload, &[])?;
    println!(
        "emit: {} files -> {} (build with `make step`, run `./step fixture.bin`)",
        prog.files.len(),
        cdir.display()
    );
    println!("hash {hash}");
    Ok(())
}

fn cmd_report(a: &ReportArgs) -> Result<(), CliError> {
    let hier = match &a.mem {
        Some(spec) => MemHierarchy::parse_override(spec)?,
        None => MemHierarchy::default(),
    };
    let hw = load_hw(&a.hw)?;
    let cfg = if a.tiny {
        CctConfig::tiny()
    } else {
        CctConfig::default()
    };
    let rows = preset_table(&cfg, &TrainConfig::default(), &LoraConfig::default(), &hier, &hw)?;

    std::fs::create_dir_all(&a.out)?;
    std::fs::write(a.out.join("sizes.csv"), size_csv(&rows))?;
    std::fs::write(a.out.join("latency.csv"), latency_csv(&rows))?;
    std::fs::write(a.out.join("memory.csv"), memory_csv(&rows))?;
    let payload = json!({
        "model": if a.tiny { "cct-tiny" } else { "cct" },
        "rows": rows,
        "csv": ["sizes.csv", "latency.csv", "memory.csv"],
    });
    let hash = artifact::write(&a.out, "report", "report", BTreeMap::new(), payload, &[])?;

    println!("preset      trainable_kb   mflops   dyn_peak_kb   cluster_ms   accel_ms   speedup");
    for r in &rows {
        println!(
            "{:<10} {:>13.2} {:>8.1} {:>13.1} {:>12.2} {:>10.2} {:>9.2}",
            r.strategy.as_str(),
            r.trainable_bytes as f64 / 1e3,
            r.step_flops as f64 / 1e6,
            r.dynamic_peak as f64 / 1e3,
            r.cluster_ms,
            r.accel_ms,
            r.speedup
        );
    }
    println!("csv -> {}", a.out.display());
    println!("hash {hash}");
    Ok(())
}
