//! Analytical latency/throughput model for a two-engine SoC: a RISC-V
//! compute cluster and a GEMM accelerator behind the same L1 scratchpad.
//!
//! FLOP counting conventions (fixed, documented, used everywhere):
//!
//! * GEMM-class nodes: `2·M·N·K`, plus `M·N` when a bias operand is fused
//!   (convolutions report their post-im2col dimensions).
//! * Elementwise: 1 FLOP per output element for ReLU/Add/Mul/Scale and
//!   their backwards; `Accumulate` costs `inputs−1` per element.
//! * Special functions per element: GeLU 10 (tanh-form evaluation), its
//!   backward 14, Softmax 5 / backward 4, LayerNorm 8 / data backward 12 /
//!   parameter backward 3, cross-entropy 5 / backward 2.
//! * Reductions and scatters: 1 per element reduced or scattered
//!   (bias gradients, `Col2Im`, pooling backward); pooling forward costs one
//!   comparison per window element.
//! * Pure data movement (Transpose/Reshape/Slice/Pad) is 0 FLOPs — it is
//!   charged as DMA time, not arithmetic.
//! * `SgdUpdate` is 2 per parameter.
//!
//! Latency model: every node runs as `max(compute, L3↔L2 DMA, L2↔L1 DMA)`
//! (double-buffered engines overlap), plus a fixed offload-setup latency for
//! nodes dispatched to the accelerator. Compute cycles divide FLOPs by an
//! engine's peak rate times a calibrated efficiency; GEMM-class and other
//! work calibrate separately on the cluster because MAC-bound inner loops
//! and scalar special-function loops achieve very different rates.

mod anchors;

pub use anchors::{reference_anchors, AnchorPoint};

use serde::{Deserialize, Serialize};

use crate::ir::{gemm_dims, Graph, NodeSpec, OpClass, OpKind};
use crate::memplan::MemPlan;
use crate::{Error, Result};

/// Machine description plus calibrated efficiency factors.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct HwConfig {
    pub clock_hz: f64,
    /// Cluster peak FLOP/cycle (8 FPUs × 1 op).
    pub cluster_peak: f64,
    /// Accelerator peak FLOP/cycle on GEMM.
    pub accel_peak: f64,
    /// Fraction of cluster peak achieved on GEMM-class inner loops.
    pub cluster_gemm_eff: f64,
    /// Fraction of cluster peak achieved on elementwise/special loops.
    pub cluster_other_eff: f64,
    /// Fraction of accelerator peak achieved on offloaded GEMMs.
    pub accel_eff: f64,
    /// Fixed cycles to configure and launch one accelerator offload.
    pub accel_setup_cycles: f64,
    /// DMA bandwidth, bytes per cycle.
    pub bw_l3_l2: f64,
    pub bw_l2_l1: f64,
}

impl Default for HwConfig {
    fn default() -> Self {
        HwConfig {
            clock_hz: 360.0e6,
            cluster_peak: 8.0,
            accel_peak: 96.0,
            cluster_gemm_eff: 0.235,
            cluster_other_eff: 0.35,
            accel_eff: 0.12,
            accel_setup_cycles: 155_000.0,
            bw_l3_l2: 1.0,
            bw_l2_l1: 8.0,
        }
    }
}

impl HwConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("clock_hz", self.clock_hz),
            ("cluster_peak", self.cluster_peak),
            ("accel_peak", self.accel_peak),
            ("bw_l3_l2", self.bw_l3_l2),
            ("bw_l2_l1", self.bw_l2_l1),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [
            ("cluster_gemm_eff", self.cluster_gemm_eff),
            ("cluster_other_eff", self.cluster_other_eff),
            ("accel_eff", self.accel_eff),
        ] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::Config(format!("{name} must be in (0, 1], got {v}")));
            }
        }
        if self.accel_setup_cycles < 0.0 {
            return Err(Error::Config("accel_setup_cycles must be non-negative".into()));
        }
        Ok(())
    }
}

/// Which engines execute the step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Engine {
    /// Everything on the RISC-V cluster.
    ClusterOnly,
    /// GEMM-class nodes offloaded to the accelerator, rest on the cluster.
    Accelerated,
}

impl std::fmt::Display for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Engine::ClusterOnly => "cluster",
            Engine::Accelerated => "accelerated",
        })
    }
}

/// Arithmetic cost of one node under the documented conventions.
pub fn node_flops(graph: &Graph, node: &NodeSpec) -> u64 {
    let out_elems = |i: usize| -> u64 {
        node.outputs
            .get(i)
            .and_then(|n| graph.tensors.get(n))
            .map(|t| t.elements())
            .unwrap_or(0)
    };
    let in_elems = |i: usize| -> u64 {
        node.inputs
            .get(i)
            .and_then(|n| graph.tensors.get(n))
            .map(|t| t.elements())
            .unwrap_or(0)
    };
    use OpKind::*;
    match node.op {
        Gemm | Conv2D => {
            let Some((m, n, k)) = gemm_dims(graph, node) else {
                return 0;
            };
            let mac = 2 * (m as u64) * (n as u64) * (k as u64);
            let bias = if node.inputs.len() > 2 {
                (m * n) as u64
            } else {
                0
            };
            mac + bias
        }
        MaxPool2D => {
            let window = node
                .attr_int("kernel")
                .map(|k| (k * k) as u64)
                .unwrap_or(1);
            out_elems(0) * window
        }
        Add | Mul | Scale | ReLU | ReluBackward | MaxPool2DBackward | BiasBackward | Col2Im => {
            // 1 per element moved through the arithmetic (reductions and
            // scatters count their input side).
            out_elems(0).max(in_elems(0))
        }
        Accumulate => out_elems(0) * (node.inputs.len().saturating_sub(1) as u64),
        GeLU => out_elems(0) * 10,
        GeluBackward => out_elems(0) * 14,
        Softmax => out_elems(0) * 5,
        SoftmaxBackward => out_elems(0) * 4,
        LayerNorm => out_elems(0) * 8,
        LayerNormBackward => out_elems(0) * 12,
        LayerNormParamBackward => in_elems(1) * 3,
        CrossEntropyLoss => in_elems(0) * 5,
        CrossEntropyBackward => out_elems(0) * 2,
        SgdUpdate => out_elems(0) * 2,
        Transpose | Reshape | Slice | Pad => 0,
    }
}

/// Total arithmetic cost of a graph.
pub fn graph_flops(graph: &Graph) -> u64 {
    graph.nodes.iter().map(|n| node_flops(graph, n)).sum()
}

/// Per-node cost inputs, independent of hardware parameters. Calibration
/// re-evaluates candidate configurations against skeletons, so extracting
/// them once keeps the search cheap.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CostSkeleton {
    pub nodes: Vec<NodeSkeleton>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NodeSkeleton {
    pub name: String,
    pub flops: u64,
    /// True for GEMM-class nodes, the offload candidates.
    pub gemm_class: bool,
    pub bytes_l3_l2: u64,
    pub bytes_l2_l1: u64,
}

impl CostSkeleton {
    /// Extract per-node FLOPs and DMA bytes from a graph and its plan.
    pub fn build(graph: &Graph, mp: &MemPlan) -> Result<CostSkeleton> {
        let order = crate::ir::topo_schedule(graph)?;
        let mut nodes: Vec<NodeSkeleton> = order
            .iter()
            .map(|&idx| {
                let n = &graph.nodes[idx];
                NodeSkeleton {
                    name: n.name.clone(),
                    flops: node_flops(graph, n),
                    gemm_class: n.op.class() == OpClass::Gemm,
                    bytes_l3_l2: 0,
                    bytes_l2_l1: 0,
                }
            })
            .collect();
        for row in &mp.ledger.rows {
            let slot = nodes.get_mut(row.at).ok_or_else(|| Error::Validation {
                subject: row.node.clone(),
                reason: "ledger row points past the schedule".into(),
            })?;
            use crate::memplan::MemLevel::*;
            match (row.src, row.dst) {
                (L3, L2) | (L2, L3) => slot.bytes_l3_l2 += row.bytes,
                (L2, L1) | (L1, L2) => slot.bytes_l2_l1 += row.bytes,
                _ => {}
            }
        }
        Ok(CostSkeleton { nodes })
    }

    pub fn total_flops(&self) -> u64 {
        self.nodes.iter().map(|n| n.flops).sum()
    }
}

/// One node's modeled cost.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NodeCost {
    pub name: String,
    pub engine: Engine,
    pub flops: u64,
    pub compute_cycles: f64,
    pub dma_cycles: f64,
    /// max(compute, DMA) + setup: what the node adds to the critical path.
    pub cycles: f64,
}

/// Full latency/throughput estimate of one training step.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CostReport {
    pub engine: Engine,
    pub total_flops: u64,
    pub compute_cycles: f64,
    pub dma_cycles: f64,
    pub setup_cycles: f64,
    pub total_cycles: f64,
    pub seconds: f64,
    pub steps_per_second: f64,
    /// Whole-step achieved arithmetic intensity.
    pub flop_per_cycle: f64,
    /// Achieved FLOP/cycle of the offloaded kernels alone (arithmetic time,
    /// setup excluded) — the accelerator-efficiency figure of merit. Equals
    /// the cluster GEMM rate when nothing is offloaded.
    pub kernel_flop_per_cycle: f64,
    pub nodes: Vec<NodeCost>,
}

fn node_cost(n: &NodeSkeleton, hw: &HwConfig, engine: Engine) -> NodeCost {
    let offloaded = engine == Engine::Accelerated && n.gemm_class && n.flops > 0;
    let compute_rate = if offloaded {
        hw.accel_peak * hw.accel_eff
    } else if n.gemm_class {
        hw.cluster_peak * hw.cluster_gemm_eff
    } else {
        hw.cluster_peak * hw.cluster_other_eff
    };
    let compute_cycles = n.flops as f64 / compute_rate;
    let dma_cycles = (n.bytes_l3_l2 as f64 / hw.bw_l3_l2).max(n.bytes_l2_l1 as f64 / hw.bw_l2_l1);
    let setup = if offloaded { hw.accel_setup_cycles } else { 0.0 };
    NodeCost {
        name: n.name.clone(),
        engine: if offloaded {
            Engine::Accelerated
        } else {
            Engine::ClusterOnly
        },
        flops: n.flops,
        compute_cycles,
        dma_cycles,
        cycles: compute_cycles.max(dma_cycles) + setup,
    }
}

/// Model the latency of one training step from its cost skeleton.
pub fn estimate_skeleton(sk: &CostSkeleton, hw: &HwConfig, engine: Engine) -> Result<CostReport> {
    hw.validate()?;
    let nodes: Vec<NodeCost> = sk.nodes.iter().map(|n| node_cost(n, hw, engine)).collect();
    let total_cycles: f64 = nodes.iter().map(|n| n.cycles).sum();
    let compute_cycles: f64 = nodes.iter().map(|n| n.compute_cycles).sum();
    let dma_cycles: f64 = nodes.iter().map(|n| n.dma_cycles).sum();
    let offloaded: Vec<&NodeCost> = nodes
        .iter()
        .filter(|n| n.engine == Engine::Accelerated)
        .collect();
    let setup_cycles = offloaded.len() as f64 * hw.accel_setup_cycles;
    let (kernel_flops, kernel_cycles) = if offloaded.is_empty() {
        let gemm: Vec<&NodeCost> = nodes.iter().filter(|n| n.flops > 0).collect();
        (
            gemm.iter().map(|n| n.flops).sum::<u64>() as f64,
            gemm.iter().map(|n| n.compute_cycles).sum::<f64>(),
        )
    } else {
        (
            offloaded.iter().map(|n| n.flops).sum::<u64>() as f64,
            offloaded.iter().map(|n| n.compute_cycles).sum::<f64>(),
        )
    };
    let total_flops = sk.total_flops();
    let seconds = total_cycles / hw.clock_hz;
    Ok(CostReport {
        engine,
        total_flops,
        compute_cycles,
        dma_cycles,
        setup_cycles,
        total_cycles,
        seconds,
        steps_per_second: if seconds > 0.0 { 1.0 / seconds } else { f64::INFINITY },
        flop_per_cycle: if total_cycles > 0.0 {
            total_flops as f64 / total_cycles
        } else {
            0.0
        },
        kernel_flop_per_cycle: if kernel_cycles > 0.0 {
            kernel_flops / kernel_cycles
        } else {
            0.0
        },
        nodes,
    })
}

/// Model the latency of one training step for a planned graph.
pub fn estimate(graph: &Graph, mp: &MemPlan, hw: &HwConfig, engine: Engine) -> Result<CostReport> {
    let sk = CostSkeleton::build(graph, mp)?;
    estimate_skeleton(&sk, hw, engine)
}

/// One measured latency the calibration must reproduce.
#[derive(Debug, Clone)]
pub struct CalibrationCase {
    pub name: String,
    pub skeleton: CostSkeleton,
    pub engine: Engine,
    pub measured_ms: f64,
}

/// Largest relative error of the model against the cases, under `hw`.
pub fn max_rel_error(cases: &[CalibrationCase], hw: &HwConfig) -> Result<f64> {
    let mut worst = 0.0f64;
    for case in cases {
        let report = estimate_skeleton(&case.skeleton, hw, case.engine)?;
        let modeled_ms = report.seconds * 1e3;
        let err = (modeled_ms - case.measured_ms).abs() / case.measured_ms;
        worst = worst.max(err);
    }
    Ok(worst)
}

/// Fit the efficiency factors and the offload setup cost to measured step
/// latencies. Bandwidths, peaks and the clock are machine constants and stay
/// fixed. Errors if the anchor set is degenerate (fewer than two cases, or a
/// case with no work or a non-positive measurement) or if no configuration
/// reproduces every anchor within 15%.
pub fn calibrate(cases: &[CalibrationCase], base: &HwConfig) -> Result<HwConfig> {
    if cases.len() < 2 {
        return Err(Error::Config(format!(
            "calibration needs at least two anchors, got {}",
            cases.len()
        )));
    }
    for case in cases {
        if case.measured_ms <= 0.0 {
            return Err(Error::Config(format!(
                "anchor `{}` has non-positive latency",
                case.name
            )));
        }
        if case.skeleton.total_flops() == 0 {
            return Err(Error::Config(format!(
                "anchor `{}` models a graph with no arithmetic",
                case.name
            )));
        }
    }
    let has_accel = cases.iter().any(|c| c.engine == Engine::Accelerated);

    // Coarse grid over the efficiency factors, then coordinate refinement.
    let mut best = *base;
    let mut best_err = f64::INFINITY;
    let gemm_grid = [0.05, 0.1, 0.15, 0.2, 0.3, 0.4, 0.6];
    let other_grid = [0.1, 0.2, 0.3, 0.4, 0.6, 0.8, 1.0];
    let accel_grid = [0.05, 0.1, 0.15, 0.2, 0.3, 0.5];
    let setup_grid = [0.0, 5e3, 15e3, 30e3, 60e3, 120e3];
    for &g in &gemm_grid {
        for &o in &other_grid {
            let accel_options: &[f64] = if has_accel { &accel_grid } else { &[base.accel_eff] };
            for &a in accel_options {
                let setup_options: &[f64] = if has_accel {
                    &setup_grid
                } else {
                    &[base.accel_setup_cycles]
                };
                for &s in setup_options {
                    let hw = HwConfig {
                        cluster_gemm_eff: g,
                        cluster_other_eff: o,
                        accel_eff: a,
                        accel_setup_cycles: s,
                        ..*base
                    };
                    let err = max_rel_error(cases, &hw)?;
                    if err < best_err {
                        best_err = err;
                        best = hw;
                    }
                }
            }
        }
    }

    // Pattern search around the grid winner. The objective is a max of
    // relative errors, so single-coordinate moves can stall on a ridge;
    // trying every corner of the step box avoids that.
    let mut step = 0.5;
    while step > 1e-4 {
        let mut improved = false;
        let current = [
            best.cluster_gemm_eff,
            best.cluster_other_eff,
            best.accel_eff,
            best.accel_setup_cycles,
        ];
        for pattern in 0..81u32 {
            let mut trial = current;
            let mut digits = pattern;
            for value in trial.iter_mut() {
                match digits % 3 {
                    1 => *value *= 1.0 - step,
                    2 => *value *= 1.0 + step,
                    _ => {}
                }
                digits /= 3;
            }
            let hw = HwConfig {
                cluster_gemm_eff: trial[0].clamp(1e-3, 1.0),
                cluster_other_eff: trial[1].clamp(1e-3, 1.0),
                accel_eff: trial[2].clamp(1e-3, 1.0),
                accel_setup_cycles: trial[3].max(0.0),
                ..best
            };
            let err = max_rel_error(cases, &hw)?;
            if err + 1e-12 < best_err {
                best_err = err;
                best = hw;
                improved = true;
            }
        }
        if !improved {
            step *= 0.5;
        }
    }

    if best_err > 0.15 {
        return Err(Error::Config(format!(
            "calibration cannot reproduce the anchors: best max relative error {:.1}% > 15%",
            best_err * 100.0
        )));
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn skeleton(parts: &[(u64, bool, u64, u64)]) -> CostSkeleton {
        CostSkeleton {
            nodes: parts
                .iter()
                .enumerate()
                .map(|(i, &(flops, gemm_class, b32, b21))| NodeSkeleton {
                    name: format!("n{i}"),
                    flops,
                    gemm_class,
                    bytes_l3_l2: b32,
                    bytes_l2_l1: b21,
                })
                .collect(),
        }
    }

    #[test]
    fn compute_bound_node_is_priced_by_engine_rate() {
        let sk = skeleton(&[(8_000_000, true, 0, 0)]);
        let hw = HwConfig {
            cluster_gemm_eff: 0.25,
            ..HwConfig::default()
        };
        let cluster = estimate_skeleton(&sk, &hw, Engine::ClusterOnly).unwrap();
        // 8 MFLOP at 8 FLOP/cycle × 0.25 = 4M cycles.
        assert!((cluster.total_cycles - 4.0e6).abs() < 1.0);
        let accel = estimate_skeleton(&sk, &hw, Engine::Accelerated).unwrap();
        // Accelerator peak times its efficiency, plus one offload setup.
        let expected = 8.0e6 / (hw.accel_peak * hw.accel_eff) + hw.accel_setup_cycles;
        assert!((accel.total_cycles - expected).abs() < 1.0);
    }

    #[test]
    fn dma_bound_node_is_priced_by_bandwidth() {
        let sk = skeleton(&[(100, false, 1_000_000, 800_000)]);
        let hw = HwConfig::default();
        let report = estimate_skeleton(&sk, &hw, Engine::ClusterOnly).unwrap();
        // L3 path: 1e6 / 1 = 1e6 cycles; L1 path: 8e5/8 = 1e5; compute tiny.
        assert!((report.total_cycles - 1.0e6).abs() < 1.0);
    }

    #[test]
    fn calibration_recovers_synthetic_truth() {
        let truth = HwConfig {
            cluster_gemm_eff: 0.22,
            cluster_other_eff: 0.45,
            accel_eff: 0.18,
            accel_setup_cycles: 25_000.0,
            ..HwConfig::default()
        };
        let sks = [
            skeleton(&[(60_000_000, true, 0, 2_000_000), (9_000_000, false, 0, 1_000_000)]),
            skeleton(&[(95_000_000, true, 0, 4_000_000), (16_000_000, false, 0, 2_500_000)]),
            skeleton(&[(130_000_000, true, 0, 6_000_000), (22_000_000, false, 0, 3_000_000)]),
        ];
        let mut cases = Vec::new();
        for (i, sk) in sks.iter().enumerate() {
            for engine in [Engine::ClusterOnly, Engine::Accelerated] {
                let ms = estimate_skeleton(sk, &truth, engine).unwrap().seconds * 1e3;
                cases.push(CalibrationCase {
                    name: format!("case{i}-{engine}"),
                    skeleton: sk.clone(),
                    engine,
                    measured_ms: ms,
                });
            }
        }
        let fitted = calibrate(&cases, &HwConfig::default()).unwrap();
        let err = max_rel_error(&cases, &fitted).unwrap();
        assert!(err < 0.01, "exactly generatable anchors refit tightly, got {err}");
    }

    #[test]
    fn calibration_rejects_degenerate_anchor_sets() {
        let sk = skeleton(&[(1_000_000, true, 0, 0)]);
        let one = vec![CalibrationCase {
            name: "only".into(),
            skeleton: sk.clone(),
            engine: Engine::ClusterOnly,
            measured_ms: 10.0,
        }];
        assert!(calibrate(&one, &HwConfig::default()).is_err());

        let empty_work = vec![
            CalibrationCase {
                name: "a".into(),
                skeleton: skeleton(&[(0, false, 0, 0)]),
                engine: Engine::ClusterOnly,
                measured_ms: 10.0,
            },
            CalibrationCase {
                name: "b".into(),
                skeleton: sk,
                engine: Engine::ClusterOnly,
                measured_ms: 12.0,
            },
        ];
        assert!(calibrate(&empty_work, &HwConfig::default()).is_err());
    }

    #[test]
    fn contradictory_anchors_fail_loudly() {
        // The same skeleton cannot take both 1 ms and 100 ms on one engine.
        let sk = skeleton(&[(50_000_000, true, 0, 0)]);
        let cases = vec![
            CalibrationCase {
                name: "fast".into(),
                skeleton: sk.clone(),
                engine: Engine::ClusterOnly,
                measured_ms: 1.0,
            },
            CalibrationCase {
                name: "slow".into(),
                skeleton: sk,
                engine: Engine::ClusterOnly,
                measured_ms: 100.0,
            },
        ];
        let err = calibrate(&cases, &HwConfig::default());
        assert!(err.is_err());
    }
}
