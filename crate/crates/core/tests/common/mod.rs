//! Helpers shared across the integration suites: deterministic synthetic
//! feeds, a randomized small-graph generator for gradient checking, random
//! liveness instances for the allocator oracle, and a compile-and-run
//! harness for emitted C programs.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::Command;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use edgetrain_core::autodiff::{TrainingGraph, UpdateBinding};
use edgetrain_core::codegen::{emit, EmitOptions};
use edgetrain_core::exec::{rel_error, StepResult};
use edgetrain_core::ir::{AttrValue, Graph, OpKind, TensorKind};
use edgetrain_core::memplan::{LiveInterval, MemPlan};
use edgetrain_core::models::GraphBuilder;

/// Deterministic non-trivial feeds for every graph input: rotating one-hot
/// labels, hash-derived values elsewhere.
pub fn synth_feeds(tg: &TrainingGraph, seed: u64) -> BTreeMap<String, Vec<f32>> {
    let mut feeds = BTreeMap::new();
    for name in &tg.graph.inputs {
        let spec = tg.graph.tensor(name).unwrap();
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
    feeds
}

// ---------------------------------------------------------------------------
// Randomized small graphs for gradient checks.
// ---------------------------------------------------------------------------

pub struct RandomCase {
    pub graph: Graph,
    pub feeds: BTreeMap<String, Vec<f64>>,
}

/// Build a random shape-consistent forward graph of at most six nodes (a
/// body of up to five drawn from every differentiable op kind, then a dense
/// head so the loss always has a `[batch, classes]` input and at least one
/// parameter trains). Deterministic in `seed`.
pub fn random_small_graph(seed: u64) -> RandomCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(2) + 1);
    let mut b = GraphBuilder::new(seed.wrapping_mul(31) + 7);

    let batch = rng.gen_range(1..=2usize);
    let mut shape: Vec<usize> = if rng.gen_bool(0.5) {
        let c = rng.gen_range(1..=3usize);
        let hw = rng.gen_range(4..=6usize);
        vec![batch, c, hw, hw]
    } else {
        vec![batch, rng.gen_range(3..=6usize)]
    };
    let mut cur = b.input("x", &shape);

    let body = rng.gen_range(1..=5usize);
    for j in 0..body {
        let (next, next_shape) = random_node(&mut b, &mut rng, &cur, &shape, j);
        cur = next;
        shape = next_shape;
    }

    // Head: flatten if needed, then project to a small class count.
    if shape.len() != 2 {
        let flat: usize = shape[1..].iter().product();
        cur = b.reshape("flatten", &cur, &[shape[0] as i64, flat as i64], "flat");
        shape = vec![shape[0], flat];
    }
    let classes = rng.gen_range(2..=4usize);
    let w = b.weight("head.w", &[shape[1], classes]);
    let bias = b.bias("head.b", classes);
    let out = b.gemm("head", &cur, &w, Some(&bias), false, false, "logits");
    let graph = b.finish(&[&out]).expect("random graph is well-formed");

    let mut feed_rng = ChaCha8Rng::seed_from_u64(seed ^ 0xfeed_f00d);
    let mut feeds: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let x_elems = graph.tensor("x").unwrap().elements() as usize;
    feeds.insert(
        "x".into(),
        (0..x_elems).map(|_| feed_rng.gen_range(-1.0..1.0)).collect(),
    );
    let mut label = vec![0.0f64; batch * classes];
    for r in 0..batch {
        label[r * classes + feed_rng.gen_range(0..classes)] = 1.0;
    }
    feeds.insert("label".into(), label);

    RandomCase { graph, feeds }
}

/// Append one random op consuming `cur`; returns the new tensor and shape.
fn random_node(
    b: &mut GraphBuilder,
    rng: &mut ChaCha8Rng,
    cur: &str,
    shape: &[usize],
    j: usize,
) -> (String, Vec<usize>) {
    const N_OPS: usize = 14;
    let out = format!("t{j}");
    let rank = shape.len();
    let elems: usize = shape.iter().product();
    let start = rng.gen_range(0..N_OPS);
    for k in 0..N_OPS {
        match (start + k) % N_OPS {
            0 => return (b.unary(OpKind::ReLU, "relu", cur, &out), shape.to_vec()),
            1 => return (b.unary(OpKind::GeLU, "gelu", cur, &out), shape.to_vec()),
            2 => return (b.softmax("sm", cur, -1, &out), shape.to_vec()),
            3 => {
                let f = rng.gen_range(0.5..1.5);
                return (b.scale("sc", cur, f, &out), shape.to_vec());
            }
            4 => {
                let p = rand_param(b, rng, &format!("p{j}_add"), shape, -0.5..0.5);
                return (b.add("add", cur, &p, &out), shape.to_vec());
            }
            5 => {
                let p = rand_param(b, rng, &format!("p{j}_mul"), shape, 0.5..1.5);
                b.node(OpKind::Mul, "mul", BTreeMap::new(), &[cur, &p], &[&out]);
                return (out, shape.to_vec());
            }
            6 => {
                let d = *shape.last().unwrap();
                let g = rand_param(b, rng, &format!("p{j}_g"), &[d], 0.8..1.2);
                let beta = rand_param(b, rng, &format!("p{j}_b"), &[d], -0.2..0.2);
                return (b.layernorm("ln", cur, &g, &beta, &out), shape.to_vec());
            }
            7 if rank == 2 => {
                let n = rng.gen_range(2..=5usize);
                let w = b.weight(&format!("p{j}_w"), &[shape[1], n]);
                let bias = rng.gen_bool(0.5).then(|| b.bias(&format!("p{j}_bias"), n));
                let y = b.gemm("mm", cur, &w, bias.as_deref(), false, false, &out);
                return (y, vec![shape[0], n]);
            }
            8 if rank == 4 => {
                // Keep the batch axis in front so the head stays valid.
                let perm = [[0i64, 2, 3, 1], [0, 3, 1, 2], [0, 2, 1, 3]][rng.gen_range(0..3)];
                let y = b.transpose("tr", cur, &perm, &out);
                let ns: Vec<usize> = perm.iter().map(|&p| shape[p as usize]).collect();
                return (y, ns);
            }
            9 if rank == 4 => {
                let flat: usize = shape[1..].iter().product();
                let y = b.reshape("rs", cur, &[shape[0] as i64, flat as i64], &out);
                return (y, vec![shape[0], flat]);
            }
            10 if *shape.last().unwrap() >= 3 => {
                let len = *shape.last().unwrap() as i64;
                let y = b.slice("sl", cur, rank as i64 - 1, 0, len - 1, &out);
                let mut ns = shape.to_vec();
                *ns.last_mut().unwrap() -= 1;
                return (y, ns);
            }
            11 => {
                let len = *shape.last().unwrap() as i64;
                let attrs: BTreeMap<String, AttrValue> = [
                    ("axis".to_string(), AttrValue::Int(rank as i64 - 1)),
                    ("start".to_string(), AttrValue::Int(1)),
                    ("size".to_string(), AttrValue::Int(len + 2)),
                ]
                .into_iter()
                .collect();
                b.node(OpKind::Pad, "pad", attrs, &[cur], &[&out]);
                let mut ns = shape.to_vec();
                *ns.last_mut().unwrap() += 2;
                return (out, ns);
            }
            12 if rank == 4 && shape[2] >= 3 && elems <= 512 => {
                let cout = rng.gen_range(1..=3usize);
                let w = b.weight(&format!("p{j}_cw"), &[cout, shape[1], 3, 3]);
                let bias = b.bias(&format!("p{j}_cb"), cout);
                let y = b.conv("conv", cur, &w, &bias, 3, 1, 1, &out);
                return (y, vec![shape[0], cout, shape[2], shape[3]]);
            }
            13 if rank == 4 && shape[2] >= 2 && shape[3] >= 2 => {
                let y = b.maxpool("mp", cur, 2, 2, 0, &out);
                let ho = (shape[2] - 2) / 2 + 1;
                let wo = (shape[3] - 2) / 2 + 1;
                return (y, vec![shape[0], shape[1], ho, wo]);
            }
            _ => continue,
        }
    }
    // ReLU applies to anything, so the loop above always returns.
    unreachable!("no applicable op");
}

fn rand_param(
    b: &mut GraphBuilder,
    rng: &mut ChaCha8Rng,
    name: &str,
    shape: &[usize],
    range: std::ops::Range<f64>,
) -> String {
    let n: usize = shape.iter().product();
    let data: Vec<f32> = (0..n).map(|_| rng.gen_range(range.clone()) as f32).collect();
    b.param_with(name, shape, TensorKind::Weight, data)
}

// ---------------------------------------------------------------------------
// Random liveness instances for the allocator oracle.
// ---------------------------------------------------------------------------

/// Up to `max_tensors` intervals with word-aligned sizes over a short
/// schedule — small enough for the factorial brute-force packer.
pub fn random_intervals(seed: u64, max_tensors: usize) -> Vec<LiveInterval> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(7919) + 3);
    let n = rng.gen_range(2..=max_tensors);
    let len = rng.gen_range(3..=10usize);
    (0..n)
        .map(|i| {
            let first_def = rng.gen_range(0..len);
            let last_use = rng.gen_range(first_def..len);
            LiveInterval {
                tensor: format!("t{i}"),
                first_def,
                last_use,
                bytes: 4 * rng.gen_range(1..=64u64),
            }
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Compile-and-run harness for emitted C programs.
// ---------------------------------------------------------------------------

pub struct CRun {
    pub loss: f64,
    pub dma_l3_l2_bytes: u64,
    pub dma_l2_l1_bytes: u64,
    /// Updated-parameter tensor -> plain sum.
    pub sums: BTreeMap<String, f64>,
    /// Updated-parameter tensor -> absolute sum (conditioning scale: a
    /// signed sum that cancels cannot be more accurate than its magnitude
    /// budget allows, so errors are measured against this).
    pub sum_scales: BTreeMap<String, f64>,
    /// Gradient tensor -> absolute sum.
    pub abs_sums: BTreeMap<String, f64>,
}

/// Emit a program into `$CARGO_TARGET_TMPDIR/{case}`, build it with the
/// system C compiler under the strict warning profile, run it on its
/// fixture, and parse the JSON line it prints.
pub fn compile_and_run(
    tg: &TrainingGraph,
    mp: &MemPlan,
    feeds: &BTreeMap<String, Vec<f32>>,
    opts: &EmitOptions,
    tmpdir: &str,
    case: &str,
    extra_cflags: &[&str],
) -> CRun {
    let dir = PathBuf::from(tmpdir).join(case);
    let prog = emit(tg, mp, feeds, opts).unwrap();
    prog.write_to(&dir).unwrap();

    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".to_string());
    let mut args: Vec<&str> = vec![
        "-std=c99",
        "-Wall",
        "-Wextra",
        "-Werror",
        "-O2",
        "-ffp-contract=off",
    ];
    args.extend_from_slice(extra_cflags);
    args.extend_from_slice(&["-o", "step", "main.c", "schedule.c", "kernels.c", "-lm"]);
    let build = Command::new(&cc)
        .args(&args)
        .current_dir(&dir)
        .output()
        .expect("C compiler not runnable");
    assert!(
        build.status.success(),
        "{case}: C build failed:\n{}",
        String::from_utf8_lossy(&build.stderr)
    );

    let run = Command::new("./step")
        .arg("fixture.bin")
        .current_dir(&dir)
        .output()
        .expect("emitted program not runnable");
    assert!(
        run.status.success(),
        "{case}: emitted program failed:\n{}",
        String::from_utf8_lossy(&run.stderr)
    );

    let v: serde_json::Value = serde_json::from_slice(&run.stdout).unwrap_or_else(|e| {
        panic!(
            "{case}: bad JSON ({e}): {}",
            String::from_utf8_lossy(&run.stdout)
        )
    });
    let map = |key: &str| -> BTreeMap<String, f64> {
        v[key]
            .as_object()
            .unwrap()
            .iter()
            .map(|(k, val)| (k.clone(), val.as_f64().unwrap()))
            .collect()
    };
    CRun {
        loss: v["loss"].as_f64().unwrap(),
        dma_l3_l2_bytes: v["dma_l3_l2_bytes"].as_u64().unwrap(),
        dma_l2_l1_bytes: v["dma_l2_l1_bytes"].as_u64().unwrap(),
        sums: map("sums"),
        sum_scales: map("sum_scales"),
        abs_sums: map("abs_sums"),
    }
}

/// The worst relative disagreement between a C run and the interpreter,
/// over the loss, updated-parameter sums (scaled by their magnitude
/// budgets) and gradient absolute sums.
pub fn max_disagreement(
    updates: &[UpdateBinding],
    oracle: &StepResult<f32>,
    c: &CRun,
) -> f64 {
    let mut worst: f64 = rel_error(c.loss, oracle.loss);
    for b in updates {
        let updated = &oracle.updated[&b.weight];
        let want: f64 = updated.iter().map(|&v| v as f64).sum();
        let want_scale: f64 = updated.iter().map(|&v| (v as f64).abs()).sum();
        // A signed sum may cancel almost completely, so measure its error
        // against the absolute-sum scale, not against the cancelled value.
        worst = worst.max((c.sums[&b.updated] - want).abs() / want_scale.max(1e-8));
        worst = worst.max(rel_error(c.sum_scales[&b.updated], want_scale));
        let want_abs: f64 = oracle.gradients[&b.weight]
            .iter()
            .map(|&v| (v as f64).abs())
            .sum();
        worst = worst.max(rel_error(c.abs_sums[&b.gradient], want_abs));
    }
    worst
}
