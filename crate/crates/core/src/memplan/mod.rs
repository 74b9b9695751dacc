//! Static memory planning for a training step.
//!
//! The planner turns a training graph into:
//!
//! 1. [`liveness`] intervals over the deterministic schedule — weights and
//!    inputs live for the whole step, activations from definition to last
//!    (possibly backward) use, gradients from their producing backward node
//!    to the final update phase.
//! 2. An [`AllocationPlan`]: byte offsets per tensor inside per-level
//!    arenas, greedy strip packing with spill from L2 to L3 when the
//!    on-chip budget is exceeded.
//! 3. Per-node [`TilePlan`]s splitting GEMM-class ops against the L1
//!    scratchpad with double buffering.
//! 4. A [`TransferLedger`] accounting the DMA bytes the plan implies.
//!
//! The update phase is double-buffered: `*.next` tensors get their own
//! storage (masters stay read-only within the step), and every buffer the
//! optimizer phase reads is held until the phase completes — the updates run
//! as one fused streaming pass over the parameter set, which leaves no safe
//! point to recycle gradient bytes mid-phase.

mod alloc;
mod tile;
mod transfer;

pub use alloc::{allocate, brute_force_optimal_peak, pack_extent};
pub use tile::{plan_tiles, tile_gemm, TilePlan};
pub use transfer::{transfer_volume, TransferLedger, TransferRow};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::autodiff::TrainingGraph;
use crate::ir::{Graph, TensorKind};
use crate::{Error, Result};

/// The three-level memory system: L1 tile scratchpad, on-chip L2, external
/// L3. Capacities in bytes.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MemHierarchy {
    pub l1: u64,
    pub l2: u64,
    pub l3: u64,
}

impl Default for MemHierarchy {
    fn default() -> Self {
        MemHierarchy {
            l1: 128 * 1024,
            l2: 2 * 1024 * 1024,
            l3: 32 * 1024 * 1024,
        }
    }
}

impl MemHierarchy {
    pub fn validate(&self) -> Result<()> {
        if self.l1 == 0 || self.l2 == 0 || self.l3 == 0 {
            return Err(Error::Config("memory capacities must be positive".into()));
        }
        if !(self.l1 < self.l2 && self.l2 < self.l3) {
            return Err(Error::Config(format!(
                "memory capacities must increase outward: L1 {} < L2 {} < L3 {}",
                self.l1, self.l2, self.l3
            )));
        }
        Ok(())
    }

    /// Parse `L1=131072,L2=2097152,L3=33554432` style overrides on top of
    /// the defaults.
    pub fn parse_override(spec: &str) -> Result<Self> {
        let mut hier = MemHierarchy::default();
        for part in spec.split(',').filter(|p| !p.is_empty()) {
            let (key, value) = part
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("bad memory override `{part}`")))?;
            let bytes: u64 = value
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad byte count in `{part}`")))?;
            match key.trim().to_ascii_lowercase().as_str() {
                "l1" => hier.l1 = bytes,
                "l2" => hier.l2 = bytes,
                "l3" => hier.l3 = bytes,
                other => return Err(Error::Config(format!("unknown memory level `{other}`"))),
            }
        }
        hier.validate()?;
        Ok(hier)
    }
}

/// Placement level for planned tensors. L1 never holds whole tensors —
/// only transient tiles — so placements use L2/L3.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MemLevel {
    L1,
    L2,
    L3,
}

impl std::fmt::Display for MemLevel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            MemLevel::L1 => "l1",
            MemLevel::L2 => "l2",
            MemLevel::L3 => "l3",
        })
    }
}

/// One tensor's lifetime over the schedule, inclusive on both ends.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LiveInterval {
    pub tensor: String,
    pub first_def: usize,
    pub last_use: usize,
    pub bytes: u64,
}

impl LiveInterval {
    pub fn overlaps(&self, other: &LiveInterval) -> bool {
        self.first_def <= other.last_use && other.first_def <= self.last_use
    }
}

/// A tensor's assigned arena slot.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Placement {
    pub level: MemLevel,
    pub offset: u64,
    pub interval: LiveInterval,
}

/// Offsets for every tensor plus arena extents.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AllocationPlan {
    pub placements: BTreeMap<String, Placement>,
    pub l2_peak: u64,
    pub l3_peak: u64,
    pub schedule_len: usize,
    pub policy: String,
}

impl AllocationPlan {
    /// Exhaustive safety check: same-level tensors with overlapping
    /// lifetimes must occupy disjoint byte ranges, and arena extents must
    /// respect the hierarchy.
    pub fn verify(&self, hier: &MemHierarchy) -> Result<()> {
        let all: Vec<&Placement> = self.placements.values().collect();
        for (i, a) in all.iter().enumerate() {
            for b in &all[i + 1..] {
                if a.level == b.level
                    && a.interval.overlaps(&b.interval)
                    && a.offset < b.offset + b.interval.bytes
                    && b.offset < a.offset + a.interval.bytes
                {
                    return Err(Error::Validation {
                        subject: format!("{} / {}", a.interval.tensor, b.interval.tensor),
                        reason: "overlapping live tensors share bytes".into(),
                    });
                }
            }
        }
        if self.l2_peak > hier.l2 {
            return Err(Error::Capacity {
                level: "l2".into(),
                needed: self.l2_peak,
                capacity: hier.l2,
            });
        }
        if self.l3_peak > hier.l3 {
            return Err(Error::Capacity {
                level: "l3".into(),
                needed: self.l3_peak,
                capacity: hier.l3,
            });
        }
        Ok(())
    }
}

/// Peak-usage summary of a plan.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PeakReport {
    /// Packed arena extents.
    pub l2_peak: u64,
    pub l3_peak: u64,
    /// Max concurrent live bytes per level — a lower bound on any packing.
    pub l2_live_bound: u64,
    pub l3_live_bound: u64,
    /// Peak concurrent footprint of activations, gradients and other
    /// training state, regardless of level. Weights, biases, constants and
    /// graph inputs are excluded: this is the memory that *training* adds
    /// over inference.
    pub dynamic_peak: u64,
    /// The excluded baseline: weights + biases + constants + inputs.
    pub static_bytes: u64,
}

/// The full planning bundle for one training graph.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MemPlan {
    pub hierarchy: MemHierarchy,
    pub alloc: AllocationPlan,
    pub tiles: BTreeMap<String, TilePlan>,
    pub ledger: TransferLedger,
    pub report: PeakReport,
}

/// Compute live intervals for every planned tensor of a training graph.
///
/// Weights, biases, constants and graph inputs span the whole step.
/// Produced tensors live from their producer to their last consumer; step
/// outputs (the loss and the `.next` weights) stay live to the end. Buffers
/// read by the update phase are held until its last node: the optimizer runs
/// as one fused streaming pass, so gradient storage is only reclaimed when
/// the whole phase has drained.
pub fn liveness(tg: &TrainingGraph) -> Result<Vec<LiveInterval>> {
    let graph = &tg.graph;
    let order = crate::ir::topo_schedule(graph)?;
    let t_end = order.len().saturating_sub(1);
    let mut pos_of_node: BTreeMap<&str, usize> = BTreeMap::new();
    for (p, &idx) in order.iter().enumerate() {
        pos_of_node.insert(graph.nodes[idx].name.as_str(), p);
    }
    // End of the optimizer phase, if the graph has one.
    let update_end = order
        .iter()
        .enumerate()
        .filter(|(_, &idx)| graph.nodes[idx].op == crate::ir::OpKind::SgdUpdate)
        .map(|(p, _)| p)
        .max();
    let optimizer_reads: std::collections::BTreeSet<&str> = graph
        .nodes
        .iter()
        .filter(|n| n.op == crate::ir::OpKind::SgdUpdate)
        .flat_map(|n| n.inputs.iter().map(String::as_str))
        .collect();

    let mut intervals = Vec::new();
    for (name, spec) in &graph.tensors {
        let bytes = spec.byte_size();
        let whole_step = graph.inputs.contains(name)
            || matches!(
                spec.kind,
                TensorKind::Weight | TensorKind::Bias | TensorKind::Constant
            )
            || graph.initializers.contains_key(name);
        let (first_def, mut last_use) = if whole_step {
            (0, t_end)
        } else {
            let producer = graph
                .producers()
                .get(name.as_str())
                .copied()
                .ok_or_else(|| Error::Validation {
                    subject: name.clone(),
                    reason: "tensor has no producer and is not a graph input".into(),
                })?;
            let def = pos_of_node[graph.nodes[producer].name.as_str()];
            let mut last = def;
            for node in &graph.nodes {
                if node.inputs.iter().any(|i| i == name) {
                    let p = pos_of_node[node.name.as_str()];
                    if p < def {
                        return Err(Error::Validation {
                            subject: name.clone(),
                            reason: "tensor used before defined in schedule".into(),
                        });
                    }
                    last = last.max(p);
                }
            }
            (def, last)
        };
        if graph.outputs.contains(name) || graph.loss.as_deref() == Some(name) {
            last_use = t_end;
        }
        if optimizer_reads.contains(name.as_str()) {
            if let Some(end) = update_end {
                last_use = last_use.max(end);
            }
        }
        intervals.push(LiveInterval {
            tensor: name.clone(),
            first_def,
            last_use,
            bytes,
        });
    }
    Ok(intervals)
}

/// Max concurrent live bytes over the schedule for a set of intervals.
pub fn live_lower_bound(intervals: &[LiveInterval], schedule_len: usize) -> u64 {
    let mut delta = vec![0i64; schedule_len + 2];
    for iv in intervals {
        delta[iv.first_def] += iv.bytes as i64;
        delta[iv.last_use + 1] -= iv.bytes as i64;
    }
    let mut best = 0i64;
    let mut cur = 0i64;
    for d in delta {
        cur += d;
        best = best.max(cur);
    }
    best as u64
}

/// Summarize a plan's peaks and the training-specific dynamic footprint.
pub fn peak_report(graph: &Graph, plan: &AllocationPlan) -> PeakReport {
    let is_static = |name: &str| -> bool {
        graph.inputs.contains(&name.to_string())
            || graph
                .tensors
                .get(name)
                .map(|t| {
                    matches!(
                        t.kind,
                        TensorKind::Weight | TensorKind::Bias | TensorKind::Constant
                    )
                })
                .unwrap_or(false)
    };
    let mut dynamic = Vec::new();
    let mut static_bytes = 0u64;
    let mut by_level: BTreeMap<MemLevel, Vec<LiveInterval>> = BTreeMap::new();
    for p in plan.placements.values() {
        by_level.entry(p.level).or_default().push(p.interval.clone());
        if is_static(&p.interval.tensor) {
            static_bytes += p.interval.bytes;
        } else {
            dynamic.push(p.interval.clone());
        }
    }
    let bound = |level: MemLevel| -> u64 {
        by_level
            .get(&level)
            .map(|ivs| live_lower_bound(ivs, plan.schedule_len))
            .unwrap_or(0)
    };
    PeakReport {
        l2_peak: plan.l2_peak,
        l3_peak: plan.l3_peak,
        l2_live_bound: bound(MemLevel::L2),
        l3_live_bound: bound(MemLevel::L3),
        dynamic_peak: live_lower_bound(&dynamic, plan.schedule_len),
        static_bytes,
    }
}

/// Run the whole midend: liveness, allocation with spill, tiling, transfer
/// accounting, peak summary.
pub fn plan(tg: &TrainingGraph, hier: &MemHierarchy) -> Result<MemPlan> {
    hier.validate()?;
    let intervals = liveness(tg)?;
    let order = crate::ir::topo_schedule(&tg.graph)?;
    let alloc = allocate(&intervals, hier, order.len())?;
    alloc.verify(hier)?;
    let tiles = plan_tiles(&tg.graph, hier)?;
    let ledger = transfer_volume(&tg.graph, &order, &alloc, &tiles)?;
    let report = peak_report(&tg.graph, &alloc);
    Ok(MemPlan {
        hierarchy: *hier,
        alloc,
        tiles,
        ledger,
        report,
    })
}
