//! C99 backend: turns a planned training graph into a self-contained,
//! dependency-free source tree that executes one optimizer step.
//!
//! The emitted program owns one statically sized arena per memory level,
//! with every tensor at the byte offset the allocator assigned. Off-chip
//! (L3-placed) operands are staged through a dedicated window with plain
//! `memcpy` — one copy per consuming node in, one per produced tensor out —
//! so the program's DMA byte counters reproduce the planner's transfer
//! ledger exactly. L1 traffic is counted (same ledger rule) but not
//! physically copied: the host has a flat address space and the copies
//! would only re-measure what the counters already state.
//!
//! Kernels are portable scalar C with the same loop orders as the host
//! interpreter, so results agree bit for bit when the accumulation order is
//! unchanged (untiled, or tiled with an unsplit reduction) and within
//! floating-point regrouping error otherwise. The program reads its inputs
//! and initial weights from `fixture.bin` and prints one JSON line with the
//! loss, the DMA counters, and per-tensor checksums.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use crate::autodiff::TrainingGraph;
use crate::ir::{topo_schedule, DType, Graph, NodeSpec, OpKind};
use crate::memplan::{transfer_volume, MemLevel, MemPlan, Placement, TilePlan, TransferRow};
use crate::{Error, Result};

/// Static C sources shipped with every emitted program.
const KERNELS_H: &str = include_str!("c/kernels.h");
const KERNELS_C: &str = include_str!("c/kernels.c");

#[derive(Debug, Clone, Copy)]
pub struct EmitOptions {
    /// Emit GEMM-class nodes through their tile plans. Untiled emission
    /// ignores the plans and runs each GEMM as one pass.
    pub tiled: bool,
}

impl Default for EmitOptions {
    fn default() -> Self {
        EmitOptions { tiled: true }
    }
}

/// A generated source tree, held in memory until written out.
#[derive(Debug, Clone)]
pub struct EmittedProgram {
    /// File name -> content. `fixture.bin` is binary; the rest is C/text.
    pub files: BTreeMap<String, Vec<u8>>,
    /// Tensors whose plain sums the program prints (updated weights).
    pub sum_tensors: Vec<String>,
    /// Tensors whose absolute sums the program prints (gradients).
    pub abs_sum_tensors: Vec<String>,
}

impl EmittedProgram {
    /// Write every file into `dir` (created if missing).
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for (name, content) in &self.files {
            std::fs::write(dir.join(name), content)?;
        }
        Ok(())
    }

    pub fn source(&self, name: &str) -> Option<&str> {
        self.files.get(name).and_then(|b| std::str::from_utf8(b).ok())
    }
}

fn emission_err(subject: &str, reason: impl Into<String>) -> Error {
    Error::Emission {
        subject: subject.to_string(),
        reason: reason.into(),
    }
}

/// Shortest C float literal that parses back to exactly `v`.
fn c_f32(v: f32) -> String {
    let mut s = format!("{v}");
    if !s.contains('.') && !s.contains('e') && !s.contains("inf") && !s.contains("NaN") {
        s.push_str(".0");
    }
    s.push('f');
    s
}

fn axis_norm(axis: i64, rank: usize) -> usize {
    if axis < 0 {
        (rank as i64 + axis) as usize
    } else {
        axis as usize
    }
}

fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer: usize = shape[..axis].iter().product();
    let len = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    (outer, len, inner)
}

fn arena_name(level: MemLevel) -> &'static str {
    match level {
        MemLevel::L1 => "l1_arena",
        MemLevel::L2 => "l2_arena",
        MemLevel::L3 => "l3_arena",
    }
}

struct Emitter<'a> {
    graph: &'a Graph,
    order: Vec<usize>,
    placements: &'a BTreeMap<String, Placement>,
    tiles: Option<&'a BTreeMap<String, TilePlan>>,
    /// Ledger rows grouped by schedule position.
    rows_at: Vec<Vec<&'a TransferRow>>,
    /// (schedule position, tensor) -> float offset in the staging window.
    stage_offsets: BTreeMap<(usize, String), u64>,
    stage_floats: u64,
    conv_scratch_floats: u64,
    /// Arena extents in floats, keyed by level.
    extents: BTreeMap<MemLevel, u64>,
}

impl<'a> Emitter<'a> {
    fn shape(&self, name: &str) -> Result<Vec<usize>> {
        Ok(self.graph.tensor(name)?.shape.clone())
    }

    fn elems(&self, name: &str) -> Result<u64> {
        Ok(self.graph.tensor(name)?.elements())
    }

    fn placement(&self, name: &str) -> Result<&Placement> {
        self.placements
            .get(name)
            .ok_or_else(|| emission_err(name, "tensor missing from the allocation plan"))
    }

    /// Home location of a tensor as a C pointer expression.
    fn home_ptr(&self, name: &str) -> Result<String> {
        let p = self.placement(name)?;
        Ok(format!("({} + {})", arena_name(p.level), p.offset / 4))
    }

    /// Pointer a kernel at position `at` should use: the staged copy when
    /// the tensor moves through the staging window there, its home otherwise.
    fn ptr(&self, at: usize, name: &str) -> Result<String> {
        if let Some(off) = self.stage_offsets.get(&(at, name.to_string())) {
            return Ok(format!("(l2_stage + {off})"));
        }
        self.home_ptr(name)
    }
}

/// Generate the full program for one training step.
pub fn emit(
    tg: &TrainingGraph,
    mp: &MemPlan,
    feeds: &BTreeMap<String, Vec<f32>>,
    opts: &EmitOptions,
) -> Result<EmittedProgram> {
    let graph = &tg.graph;
    let order = topo_schedule(graph)?;

    // Validate coverage and compute arena extents.
    let mut extents: BTreeMap<MemLevel, u64> = BTreeMap::new();
    for (name, spec) in &graph.tensors {
        if spec.dtype != DType::F32 {
            return Err(emission_err(name, "backend only emits FP32 tensors"));
        }
        let p = mp
            .alloc
            .placements
            .get(name)
            .ok_or_else(|| emission_err(name, "tensor missing from the allocation plan"))?;
        if p.offset % 4 != 0 {
            return Err(emission_err(name, format!("byte offset {} not float-aligned", p.offset)));
        }
        let end = p.offset + spec.byte_size();
        let e = extents.entry(p.level).or_default();
        *e = (*e).max(end);
    }

    // The ledger must describe the emission's staging behaviour, so
    // recompute it when tiling is disabled (tile counts change L1 traffic).
    let empty_tiles = BTreeMap::new();
    let ledger_storage;
    let ledger = if opts.tiled {
        &mp.ledger
    } else {
        ledger_storage = transfer_volume(graph, &order, &mp.alloc, &empty_tiles)?;
        &ledger_storage
    };

    let mut rows_at: Vec<Vec<&TransferRow>> = vec![Vec::new(); order.len()];
    for row in &ledger.rows {
        let slot = rows_at
            .get_mut(row.at)
            .ok_or_else(|| emission_err(&row.tensor, "ledger row points past the schedule"))?;
        slot.push(row);
    }

    // Assign staging-window offsets: per node, every tensor that crosses the
    // L3/L2 boundary gets a slot; the window is sized for the worst node.
    let mut stage_offsets: BTreeMap<(usize, String), u64> = BTreeMap::new();
    let mut stage_floats = 0u64;
    for (at, rows) in rows_at.iter().enumerate() {
        let mut cursor = 0u64;
        for row in rows {
            let crosses_l3 = matches!(
                (row.src, row.dst),
                (MemLevel::L3, MemLevel::L2) | (MemLevel::L2, MemLevel::L3)
            );
            if !crosses_l3 {
                continue;
            }
            let key = (at, row.tensor.clone());
            if stage_offsets.contains_key(&key) {
                continue;
            }
            stage_offsets.insert(key, cursor);
            cursor += row.bytes / 4;
        }
        stage_floats = stage_floats.max(cursor);
    }

    // Every L3-placed operand must be covered by a staging row, or the
    // kernel would read/write a location no transfer reaches.
    for (pos, &idx) in order.iter().enumerate() {
        let node = &graph.nodes[idx];
        for name in node.inputs.iter().chain(&node.outputs) {
            let p = mp
                .alloc
                .placements
                .get(name)
                .ok_or_else(|| emission_err(name, "tensor missing from the allocation plan"))?;
            if p.level == MemLevel::L3 && !stage_offsets.contains_key(&(pos, name.clone())) {
                return Err(emission_err(
                    name,
                    format!("off-chip tensor used by `{}` has no transfer row", node.name),
                ));
            }
        }
    }

    // Conv2D runs its GEMM into a scratch matrix before the NCHW shuffle.
    let mut conv_scratch_floats = 0u64;
    for node in &graph.nodes {
        if node.op == OpKind::Conv2D {
            let (m, n, _) = crate::ir::gemm_dims(graph, node)
                .ok_or_else(|| emission_err(&node.name, "convolution with unknown dimensions"))?;
            conv_scratch_floats = conv_scratch_floats.max((m as u64) * (n as u64));
        }
    }

    let em = Emitter {
        graph,
        order: order.clone(),
        placements: &mp.alloc.placements,
        tiles: if opts.tiled { Some(&mp.tiles) } else { None },
        rows_at,
        stage_offsets,
        stage_floats,
        conv_scratch_floats,
        extents,
    };

    // Fixture: graph inputs and initial parameter values, sorted by name.
    let mut fixture_names: BTreeSet<String> = graph.initializers.keys().cloned().collect();
    for name in &graph.inputs {
        fixture_names.insert(name.clone());
    }
    let mut fixture = Vec::new();
    let mut fixture_entries: Vec<(String, u64)> = Vec::new();
    for name in &fixture_names {
        let expect = em.elems(name)?;
        let data: &[f32] = match feeds.get(name) {
            Some(v) => v,
            None => graph
                .initializers
                .get(name)
                .ok_or_else(|| emission_err(name, "graph input has no feed"))?,
        };
        if data.len() as u64 != expect {
            return Err(emission_err(
                name,
                format!("feed has {} elements, tensor needs {expect}", data.len()),
            ));
        }
        for v in data {
            fixture.extend_from_slice(&v.to_le_bytes());
        }
        fixture_entries.push((name.clone(), expect));
    }
    if fixture_entries.is_empty() {
        return Err(Error::Emission {
            subject: "fixture".into(),
            reason: "graph has no inputs or initializers".into(),
        });
    }

    let sum_tensors: Vec<String> = tg.updates.iter().map(|u| u.updated.clone()).collect();
    let abs_sum_tensors: Vec<String> = tg.updates.iter().map(|u| u.gradient.clone()).collect();

    let mut files = BTreeMap::new();
    files.insert("kernels.h".to_string(), KERNELS_H.as_bytes().to_vec());
    files.insert("kernels.c".to_string(), KERNELS_C.as_bytes().to_vec());
    files.insert("buffers.h".to_string(), emit_buffers_h(&em)?.into_bytes());
    files.insert("schedule.c".to_string(), emit_schedule_c(&em)?.into_bytes());
    files.insert(
        "main.c".to_string(),
        emit_main_c(&em, tg, &fixture_entries, &sum_tensors, &abs_sum_tensors)?.into_bytes(),
    );
    files.insert("Makefile".to_string(), MAKEFILE.as_bytes().to_vec());
    files.insert("fixture.bin".to_string(), fixture);
    files.insert(
        "manifest.json".to_string(),
        serde_json::to_vec_pretty(&serde_json::json!({
            "sources": ["main.c", "schedule.c", "kernels.c", "kernels.h", "buffers.h"],
            "build": "cc -std=c99 -Wall -Wextra -Werror -O2 -ffp-contract=off -o step main.c schedule.c kernels.c -lm",
            "tiled": opts.tiled,
            "nodes": order.len(),
            "fixture": fixture_entries.iter().map(|(n, c)| serde_json::json!({"tensor": n, "floats": c})).collect::<Vec<_>>(),
            "loss": tg.loss,
            "sum_tensors": sum_tensors,
            "abs_sum_tensors": abs_sum_tensors,
        }))?,
    );

    Ok(EmittedProgram {
        files,
        sum_tensors,
        abs_sum_tensors,
    })
}

const MAKEFILE: &str = "CC ?= cc\n\
CFLAGS ?= -std=c99 -Wall -Wextra -Werror -O2 -ffp-contract=off\n\
\n\
step: main.c schedule.c kernels.c kernels.h buffers.h\n\
\t$(CC) $(CFLAGS) -o step main.c schedule.c kernels.c -lm\n\
\n\
# Bounds-checking profile: every arena access is instrumented.\n\
step_checked: main.c schedule.c kernels.c kernels.h buffers.h\n\
\t$(CC) $(CFLAGS) -fsanitize=address,undefined -o step_checked main.c schedule.c kernels.c -lm\n\
\n\
run: step\n\
\t./step fixture.bin\n\
\n\
clean:\n\
\trm -f step step_checked\n\
\n\
.PHONY: run clean\n";

fn emit_buffers_h(em: &Emitter) -> Result<String> {
    let mut s = String::new();
    s.push_str("/* Static buffer map generated from the allocation plan. */\n");
    s.push_str("#ifndef BUFFERS_H\n#define BUFFERS_H\n\n");
    for (&level, &floats) in &em.extents {
        if floats > 0 {
            s.push_str(&format!(
                "#define {}_FLOATS {}\nextern float {}[{}_FLOATS];\n",
                arena_name(level).to_uppercase(),
                floats / 4,
                arena_name(level),
                arena_name(level).to_uppercase()
            ));
        }
    }
    if em.stage_floats > 0 {
        s.push_str(&format!(
            "#define L2_STAGE_FLOATS {}\nextern float l2_stage[L2_STAGE_FLOATS];\n",
            em.stage_floats
        ));
    }
    if em.conv_scratch_floats > 0 {
        s.push_str(&format!(
            "#define CONV_SCRATCH_FLOATS {}\nextern float conv_scratch[CONV_SCRATCH_FLOATS];\n",
            em.conv_scratch_floats
        ));
    }
    s.push_str("\n/* tensor -> arena, float offset, float count:\n");
    for (name, p) in em.placements {
        let floats = em.elems(name)?;
        s.push_str(&format!(
            " *   {name}: {} +{} x{}\n",
            arena_name(p.level),
            p.offset / 4,
            floats
        ));
    }
    s.push_str(" */\n\n#endif /* BUFFERS_H */\n");
    Ok(s)
}

fn emit_schedule_c(em: &Emitter) -> Result<String> {
    let mut s = String::new();
    s.push_str("/* One training step in allocation-plan order. Generated code. */\n");
    s.push_str("#include <string.h>\n\n#include \"buffers.h\"\n#include \"kernels.h\"\n\n");
    for (&level, &floats) in &em.extents {
        if floats > 0 {
            s.push_str(&format!(
                "float {}[{}_FLOATS];\n",
                arena_name(level),
                arena_name(level).to_uppercase()
            ));
        }
    }
    if em.stage_floats > 0 {
        s.push_str("float l2_stage[L2_STAGE_FLOATS];\n");
    }
    if em.conv_scratch_floats > 0 {
        s.push_str("float conv_scratch[CONV_SCRATCH_FLOATS];\n");
    }
    s.push_str("\nunsigned long long dma_l3_l2_bytes = 0;\nunsigned long long dma_l2_l1_bytes = 0;\n\n");
    s.push_str("void run_step(void);\n\nvoid run_step(void) {\n");

    for (pos, &idx) in em.order.iter().enumerate() {
        let node = &em.graph.nodes[idx];
        s.push_str(&format!("    /* {pos:03} {} ({:?}) */\n", node.name, node.op));

        // Stage off-chip inputs in, count L1 traffic, run, stage outputs out.
        let mut l2_l1 = 0u64;
        for row in &em.rows_at[pos] {
            match (row.src, row.dst) {
                (MemLevel::L3, MemLevel::L2) => {
                    let off = em.stage_offsets[&(pos, row.tensor.clone())];
                    let home = em.home_ptr(&row.tensor)?;
                    s.push_str(&format!(
                        "    memcpy(l2_stage + {off}, {home}, {}); /* in: {} */\n",
                        row.bytes, row.tensor
                    ));
                    s.push_str(&format!("    dma_l3_l2_bytes += {}ULL;\n", row.bytes));
                }
                (MemLevel::L2, MemLevel::L1) | (MemLevel::L1, MemLevel::L2) => {
                    l2_l1 += row.bytes;
                }
                _ => {}
            }
        }
        if l2_l1 > 0 {
            s.push_str(&format!("    dma_l2_l1_bytes += {l2_l1}ULL;\n"));
        }

        for line in emit_node(em, pos, node)? {
            s.push_str("    ");
            s.push_str(&line);
            s.push('\n');
        }

        for row in &em.rows_at[pos] {
            if (row.src, row.dst) == (MemLevel::L2, MemLevel::L3) {
                let off = em.stage_offsets[&(pos, row.tensor.clone())];
                let home = em.home_ptr(&row.tensor)?;
                s.push_str(&format!(
                    "    memcpy({home}, l2_stage + {off}, {}); /* out: {} */\n",
                    row.bytes, row.tensor
                ));
                s.push_str(&format!("    dma_l3_l2_bytes += {}ULL;\n", row.bytes));
            }
        }
    }
    s.push_str("}\n");
    Ok(s)
}

/// Emit the kernel call(s) for one node, mirroring the host interpreter's
/// argument derivation exactly.
fn emit_node(em: &Emitter, pos: usize, node: &NodeSpec) -> Result<Vec<String>> {
    let p = |name: &str| em.ptr(pos, name);
    let input = |i: usize| -> Result<String> {
        node.inputs
            .get(i)
            .map(|n| p(n))
            .ok_or_else(|| emission_err(&node.name, format!("missing input {i}")))?
    };
    let output = |i: usize| -> Result<String> {
        node.outputs
            .get(i)
            .map(|n| p(n))
            .ok_or_else(|| emission_err(&node.name, format!("missing output {i}")))?
    };

    let mut lines = Vec::new();
    match node.op {
        OpKind::Gemm => {
            let sa = em.shape(&node.inputs[0])?;
            let sb = em.shape(&node.inputs[1])?;
            let ta = node.attr_int("trans_a")? != 0;
            let tb = node.attr_int("trans_b")? != 0;
            let (m, k) = if ta { (sa[1], sa[0]) } else { (sa[0], sa[1]) };
            let n = if tb { sb[0] } else { sb[1] };
            let bias = if node.inputs.len() == 3 {
                input(2)?
            } else {
                "NULL".to_string()
            };
            lines.push(gemm_call(
                em, node, &input(0)?, sa[1], ta, &input(1)?, sb[1], tb, &bias, m, n, k,
                &output(0)?,
            ));
        }
        OpKind::Conv2D => {
            let sx = em.shape(&node.inputs[0])?;
            let (n, c, h, w) = (sx[0], sx[1], sx[2], sx[3]);
            let cout = em.shape(&node.inputs[1])?[0];
            let kernel = node.attr_int("kernel")? as usize;
            let stride = node.attr_int("stride")? as usize;
            let padding = node.attr_int("padding")? as usize;
            let ho = (h + 2 * padding - kernel) / stride + 1;
            let wo = (w + 2 * padding - kernel) / stride + 1;
            let ck2 = c * kernel * kernel;
            let cols = n * ho * wo;
            lines.push(format!(
                "k_im2col({}, {n}, {c}, {h}, {w}, {kernel}, {stride}, {padding}, {});",
                input(0)?,
                output(1)?
            ));
            lines.push(gemm_call(
                em, node, &input(1)?, ck2, false, &output(1)?, cols, false, "NULL", cout, cols,
                ck2, "conv_scratch",
            ));
            lines.push(format!(
                "k_conv_finish(conv_scratch, {}, {n}, {cout}, {ho}, {wo}, {});",
                input(2)?,
                output(0)?
            ));
        }
        OpKind::MaxPool2D | OpKind::MaxPool2DBackward => {
            let sx = em.shape(&node.inputs[0])?;
            let kernel = node.attr_int("kernel")?;
            let stride = node.attr_int("stride")?;
            let padding = node.attr_int("padding")?;
            let (fun, extra) = if node.op == OpKind::MaxPool2D {
                ("k_maxpool", String::new())
            } else {
                ("k_maxpool_backward", format!("{}, ", input(1)?))
            };
            lines.push(format!(
                "{fun}({}, {extra}{}, {}, {}, {}, {kernel}, {stride}, {padding}, {});",
                input(0)?,
                sx[0],
                sx[1],
                sx[2],
                sx[3],
                output(0)?
            ));
        }
        OpKind::Add | OpKind::Mul => {
            let fun = if node.op == OpKind::Add { "k_add" } else { "k_mul" };
            lines.push(format!(
                "{fun}({}, {}, {}, {});",
                input(0)?,
                input(1)?,
                em.elems(&node.outputs[0])?,
                output(0)?
            ));
        }
        OpKind::Scale => {
            let factor = c_f32(node.attr_float("factor")? as f32);
            lines.push(format!(
                "k_scale({}, {factor}, {}, {});",
                input(0)?,
                em.elems(&node.outputs[0])?,
                output(0)?
            ));
        }
        OpKind::Transpose => {
            let shape = em.shape(&node.inputs[0])?;
            let perm: Vec<usize> = node.attr_ints("perm")?.iter().map(|&v| v as usize).collect();
            if shape.len() > 8 {
                return Err(emission_err(&node.name, "transpose rank exceeds 8"));
            }
            let fmt = |v: &[usize]| {
                v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ")
            };
            lines.push(format!(
                "k_transpose({}, (const size_t[]){{{}}}, (const size_t[]){{{}}}, {}, {}, {});",
                input(0)?,
                fmt(&shape),
                fmt(&perm),
                shape.len(),
                em.elems(&node.inputs[0])?,
                output(0)?
            ));
        }
        OpKind::Reshape => {
            lines.push(format!(
                "k_copy({}, {}, {});",
                input(0)?,
                em.elems(&node.inputs[0])?,
                output(0)?
            ));
        }
        OpKind::Slice => {
            let shape = em.shape(&node.inputs[0])?;
            let axis = node.attr_int("axis")? as usize;
            let (outer, len, inner) = axis_split(&shape, axis);
            let start = node.attr_int("start")?;
            let end = node.attr_int("end")?;
            lines.push(format!(
                "k_slice({}, {outer}, {len}, {inner}, {start}, {end}, {});",
                input(0)?,
                output(0)?
            ));
        }
        OpKind::Pad => {
            let shape = em.shape(&node.inputs[0])?;
            let axis = node.attr_int("axis")? as usize;
            let (outer, len, inner) = axis_split(&shape, axis);
            let start = node.attr_int("start")?;
            let size = node.attr_int("size")?;
            lines.push(format!(
                "k_pad({}, {outer}, {len}, {inner}, {start}, {size}, {});",
                input(0)?,
                output(0)?
            ));
        }
        OpKind::ReLU | OpKind::GeLU => {
            let fun = if node.op == OpKind::ReLU { "k_relu" } else { "k_gelu" };
            lines.push(format!(
                "{fun}({}, {}, {});",
                input(0)?,
                em.elems(&node.inputs[0])?,
                output(0)?
            ));
        }
        OpKind::ReluBackward | OpKind::GeluBackward => {
            let fun = if node.op == OpKind::ReluBackward {
                "k_relu_backward"
            } else {
                "k_gelu_backward"
            };
            lines.push(format!(
                "{fun}({}, {}, {}, {});",
                input(0)?,
                input(1)?,
                em.elems(&node.inputs[0])?,
                output(0)?
            ));
        }
        OpKind::Softmax | OpKind::SoftmaxBackward => {
            let shape = em.shape(&node.inputs[0])?;
            let axis = axis_norm(node.attr_int("axis")?, shape.len());
            let (outer, len, inner) = axis_split(&shape, axis);
            if node.op == OpKind::Softmax {
                lines.push(format!(
                    "k_softmax({}, {outer}, {len}, {inner}, {});",
                    input(0)?,
                    output(0)?
                ));
            } else {
                lines.push(format!(
                    "k_softmax_backward({}, {}, {outer}, {len}, {inner}, {});",
                    input(0)?,
                    input(1)?,
                    output(0)?
                ));
            }
        }
        OpKind::LayerNorm => {
            let shape = em.shape(&node.inputs[0])?;
            let d = *shape.last().unwrap();
            let rows = em.elems(&node.inputs[0])? as usize / d;
            let eps = c_f32(node.attr_float("eps")? as f32);
            lines.push(format!(
                "k_layernorm({}, {rows}, {d}, {}, {}, {eps}, {});",
                input(0)?,
                input(1)?,
                input(2)?,
                output(0)?
            ));
        }
        OpKind::LayerNormBackward => {
            let shape = em.shape(&node.inputs[0])?;
            let d = *shape.last().unwrap();
            let rows = em.elems(&node.inputs[0])? as usize / d;
            let eps = c_f32(node.attr_float("eps")? as f32);
            lines.push(format!(
                "k_layernorm_backward({}, {rows}, {d}, {}, {}, {eps}, {});",
                input(0)?,
                input(1)?,
                input(2)?,
                output(0)?
            ));
        }
        OpKind::LayerNormParamBackward => {
            let shape = em.shape(&node.inputs[0])?;
            let d = *shape.last().unwrap();
            let rows = em.elems(&node.inputs[0])? as usize / d;
            let eps = c_f32(node.attr_float("eps")? as f32);
            lines.push(format!(
                "k_layernorm_param_backward({}, {rows}, {d}, {}, {eps}, {}, {});",
                input(0)?,
                input(1)?,
                output(0)?,
                output(1)?
            ));
        }
        OpKind::CrossEntropyLoss => {
            let shape = em.shape(&node.inputs[0])?;
            lines.push(format!(
                "*{} = k_cross_entropy({}, {}, {}, {});",
                output(0)?,
                input(0)?,
                input(1)?,
                shape[0],
                shape[1]
            ));
        }
        OpKind::CrossEntropyBackward => {
            let shape = em.shape(&node.inputs[0])?;
            lines.push(format!(
                "k_cross_entropy_backward({}, {}, {}, {}, {});",
                input(0)?,
                input(1)?,
                shape[0],
                shape[1],
                output(0)?
            ));
        }
        OpKind::BiasBackward => {
            let shape = em.shape(&node.inputs[0])?;
            let axis = axis_norm(node.attr_int("axis")?, shape.len());
            let (outer, len, inner) = axis_split(&shape, axis);
            lines.push(format!(
                "k_bias_backward({}, {outer}, {len}, {inner}, {});",
                input(0)?,
                output(0)?
            ));
        }
        OpKind::Col2Im => {
            let c = node.attr_int("channels")? as u64;
            let h = node.attr_int("height")? as u64;
            let w = node.attr_int("width")? as u64;
            let kernel = node.attr_int("kernel")?;
            let stride = node.attr_int("stride")?;
            let padding = node.attr_int("padding")?;
            let n = em.elems(&node.outputs[0])? / (c * h * w);
            lines.push(format!(
                "k_col2im({}, {n}, {c}, {h}, {w}, {kernel}, {stride}, {padding}, {});",
                input(0)?,
                output(0)?
            ));
        }
        OpKind::SgdUpdate => {
            let lr = c_f32(node.attr_float("lr")? as f32);
            lines.push(format!(
                "k_sgd_update({}, {}, {lr}, {}, {});",
                input(0)?,
                input(1)?,
                em.elems(&node.outputs[0])?,
                output(0)?
            ));
        }
        OpKind::Accumulate => {
            let len = em.elems(&node.outputs[0])?;
            lines.push(format!("k_copy({}, {len}, {});", input(0)?, output(0)?));
            for i in 1..node.inputs.len() {
                lines.push(format!(
                    "k_accumulate_add({}, {len}, {});",
                    input(i)?,
                    output(0)?
                ));
            }
        }
    }
    Ok(lines)
}

/// A GEMM call, tiled when a plan exists for this node and tiling is on.
#[allow(clippy::too_many_arguments)]
fn gemm_call(
    em: &Emitter,
    node: &NodeSpec,
    a: &str,
    a_cols: usize,
    ta: bool,
    b: &str,
    b_cols: usize,
    tb: bool,
    bias: &str,
    m: usize,
    n: usize,
    k: usize,
    out: &str,
) -> String {
    let (ta, tb) = (ta as u8, tb as u8);
    if let Some(tile) = em.tiles.and_then(|t| t.get(&node.name)) {
        format!(
            "k_gemm_tiled({a}, {a_cols}, {ta}, {b}, {b_cols}, {tb}, {bias}, {m}, {n}, {k}, {}, {}, {}, {out});",
            tile.mt, tile.nt, tile.kt
        )
    } else {
        format!("k_gemm({a}, {a_cols}, {ta}, {b}, {b_cols}, {tb}, {bias}, {m}, {n}, {k}, {out});")
    }
}

fn emit_main_c(
    em: &Emitter,
    tg: &TrainingGraph,
    fixture_entries: &[(String, u64)],
    sum_tensors: &[String],
    abs_sum_tensors: &[String],
) -> Result<String> {
    let mut s = String::new();
    s.push_str("/* Entry point: load fixture, run one step, print JSON. Generated code. */\n");
    s.push_str("#include <math.h>\n#include <stdio.h>\n#include <stddef.h>\n\n#include \"buffers.h\"\n\n");
    s.push_str("extern void run_step(void);\nextern unsigned long long dma_l3_l2_bytes;\nextern unsigned long long dma_l2_l1_bytes;\n\n");

    s.push_str("static const struct { const char *name; float *dst; size_t floats; } fixture_map[] = {\n");
    for (name, floats) in fixture_entries {
        s.push_str(&format!(
            "    {{\"{name}\", {}, {floats}}},\n",
            em.home_ptr(name)?
        ));
    }
    s.push_str("};\n\n");

    let manifest = |list: &[String]| -> Result<String> {
        let mut m = String::new();
        for name in list {
            m.push_str(&format!(
                "    {{\"{name}\", {}, {}}},\n",
                em.home_ptr(name)?,
                em.elems(name)?
            ));
        }
        Ok(m)
    };
    s.push_str("static const struct { const char *name; const float *ptr; size_t floats; } sum_map[] = {\n");
    s.push_str(&manifest(sum_tensors)?);
    s.push_str("};\n\n");
    s.push_str("static const struct { const char *name; const float *ptr; size_t floats; } abs_map[] = {\n");
    s.push_str(&manifest(abs_sum_tensors)?);
    s.push_str("};\n\n");

    s.push_str(
        "static double tensor_sum(const float *p, size_t n) {\n    double s = 0.0;\n    for (size_t i = 0; i < n; i++) {\n        s += (double)p[i];\n    }\n    return s;\n}\n\n",
    );
    s.push_str(
        "static double tensor_abs_sum(const float *p, size_t n) {\n    double s = 0.0;\n    for (size_t i = 0; i < n; i++) {\n        s += (double)fabsf(p[i]);\n    }\n    return s;\n}\n\n",
    );

    s.push_str("int main(int argc, char **argv) {\n");
    s.push_str("    const char *path = argc > 1 ? argv[1] : \"fixture.bin\";\n");
    s.push_str("    FILE *f = fopen(path, \"rb\");\n");
    s.push_str("    if (!f) {\n        fprintf(stderr, \"cannot open fixture %s\\n\", path);\n        return 1;\n    }\n");
    s.push_str("    for (size_t e = 0; e < sizeof(fixture_map) / sizeof(fixture_map[0]); e++) {\n");
    s.push_str("        size_t got = fread(fixture_map[e].dst, sizeof(float), fixture_map[e].floats, f);\n");
    s.push_str("        if (got != fixture_map[e].floats) {\n            fprintf(stderr, \"fixture truncated at %s\\n\", fixture_map[e].name);\n            fclose(f);\n            return 1;\n        }\n    }\n");
    s.push_str("    if (fgetc(f) != EOF) {\n        fprintf(stderr, \"fixture has trailing bytes\\n\");\n        fclose(f);\n        return 1;\n    }\n    fclose(f);\n\n");
    s.push_str("    run_step();\n\n");

    let loss_ptr = em.home_ptr(&tg.loss)?;
    s.push_str(&format!(
        "    printf(\"{{\\\"loss\\\":%.17g\", (double)*{loss_ptr});\n"
    ));
    s.push_str("    printf(\",\\\"dma_l3_l2_bytes\\\":%llu,\\\"dma_l2_l1_bytes\\\":%llu\", dma_l3_l2_bytes, dma_l2_l1_bytes);\n");
    s.push_str("    printf(\",\\\"sums\\\":{\");\n");
    s.push_str("    for (size_t e = 0; e < sizeof(sum_map) / sizeof(sum_map[0]); e++) {\n");
    s.push_str("        printf(\"%s\\\"%s\\\":%.17g\", e ? \",\" : \"\", sum_map[e].name, tensor_sum(sum_map[e].ptr, sum_map[e].floats));\n    }\n");
    s.push_str("    printf(\"},\\\"sum_scales\\\":{\");\n");
    s.push_str("    for (size_t e = 0; e < sizeof(sum_map) / sizeof(sum_map[0]); e++) {\n");
    s.push_str("        printf(\"%s\\\"%s\\\":%.17g\", e ? \",\" : \"\", sum_map[e].name, tensor_abs_sum(sum_map[e].ptr, sum_map[e].floats));\n    }\n");
    s.push_str("    printf(\"},\\\"abs_sums\\\":{\");\n");
    s.push_str("    for (size_t e = 0; e < sizeof(abs_map) / sizeof(abs_map[0]); e++) {\n");
    s.push_str("        printf(\"%s\\\"%s\\\":%.17g\", e ? \",\" : \"\", abs_map[e].name, tensor_abs_sum(abs_map[e].ptr, abs_map[e].floats));\n    }\n");
    s.push_str("    printf(\"}}\\n\");\n");
    s.push_str("    return 0;\n}\n");
    Ok(s)
}
