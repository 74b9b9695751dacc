//! GEMM tiling against the L1 scratchpad.
//!
//! Every GEMM-class node (dense layers and the GEMM inside a lowered
//! convolution) is split into (Mt, Nt, Kt) tiles such that one A tile, one
//! B tile, one C tile, plus an FP32 accumulator when K is split, all fit in
//! L1 twice over (double buffering, so the DMA engine can fill the next
//! tile set while the current one computes). The search maximizes tile
//! volume Mt·Nt·Kt and is deterministic: candidates for Mt/Nt are the
//! distinct ceiling-division classes of M/N (every other tile size wastes
//! volume at the remainder for the same iteration count), Kt comes from the
//! budget closed-form, and ties prefer larger Mt, then Nt, then Kt.

use serde::{Deserialize, Serialize};

use crate::ir::{gemm_dims, Graph, OpClass};
use crate::{Error, Result};

use super::MemHierarchy;

const ELEM_BYTES: u64 = 4;
const BUFFER_FACTOR: u64 = 2;

/// Tiling of one GEMM-class node.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TilePlan {
    pub node: String,
    /// Full GEMM dims (post-im2col for convolutions).
    pub m: usize,
    pub n: usize,
    pub k: usize,
    /// Tile dims; remainder tiles clamp to the edge.
    pub mt: usize,
    pub nt: usize,
    pub kt: usize,
    /// Iteration counts per dim (ceiling divisions).
    pub tiles_m: usize,
    pub tiles_n: usize,
    pub tiles_k: usize,
    /// 2 = double buffering.
    pub buffer_factor: usize,
    /// L1 bytes used by one buffer set (A + B + C [+ accumulator]).
    pub per_tile_bytes: u64,
    /// K is split, so partial sums accumulate in an L1-resident FP32 tile.
    pub uses_accumulator: bool,
}

impl TilePlan {
    pub fn total_tiles(&self) -> usize {
        self.tiles_m * self.tiles_n * self.tiles_k
    }
}

fn ceil_div(a: usize, b: usize) -> usize {
    a.div_ceil(b)
}

/// Distinct values of ceil(dim / q): the useful tile-size candidates.
/// Any other size covers the dim in the same number of iterations as one of
/// these but with smaller tiles, so it can never win the volume search.
fn tile_candidates(dim: usize) -> Vec<usize> {
    let set: std::collections::BTreeSet<usize> = (1..=dim).map(|q| ceil_div(dim, q)).collect();
    set.into_iter().rev().collect()
}

fn tile_bytes(mt: usize, nt: usize, kt: usize, split_k: bool) -> u64 {
    let acc = if split_k { mt * nt } else { 0 };
    (mt * kt + kt * nt + mt * nt + acc) as u64 * ELEM_BYTES * BUFFER_FACTOR
}

/// Pick the max-volume feasible tile for an M×N×K GEMM under the L1 budget.
pub fn tile_gemm(node: &str, m: usize, n: usize, k: usize, hier: &MemHierarchy) -> Result<TilePlan> {
    if m == 0 || n == 0 || k == 0 {
        return Err(Error::Infeasible(format!(
            "degenerate GEMM {m}×{n}×{k} in node `{node}`"
        )));
    }
    let budget_elems = hier.l1 / (ELEM_BYTES * BUFFER_FACTOR);
    let mut best: Option<(usize, usize, usize)> = None;
    let mut best_key = (0usize, 0usize, 0usize, 0usize); // (volume, mt, nt, kt)
    for &mt in &tile_candidates(m) {
        for &nt in &tile_candidates(n) {
            // Unsplit K first: no accumulator tile needed.
            let kt = if (mt * k + k * nt + mt * nt) as u64 <= budget_elems {
                k
            } else {
                // Split K: budget covers A + B + C + accumulator.
                let fixed = 2 * mt * nt;
                if fixed as u64 >= budget_elems {
                    continue;
                }
                let room = budget_elems as usize - fixed;
                let kt = room / (mt + nt);
                if kt == 0 {
                    continue;
                }
                kt.min(k)
            };
            let key = (mt * nt * kt, mt, nt, kt);
            if key > best_key {
                best_key = key;
                best = Some((mt, nt, kt));
            }
        }
    }
    let (mt, nt, kt) = best.ok_or_else(|| {
        Error::Infeasible(format!(
            "GEMM {m}×{n}×{k} in node `{node}` has no feasible tile within {} B of L1",
            hier.l1
        ))
    })?;
    let split_k = kt < k;
    Ok(TilePlan {
        node: node.to_string(),
        m,
        n,
        k,
        mt,
        nt,
        kt,
        tiles_m: ceil_div(m, mt),
        tiles_n: ceil_div(n, nt),
        tiles_k: ceil_div(k, kt),
        buffer_factor: BUFFER_FACTOR as usize,
        per_tile_bytes: tile_bytes(mt, nt, kt, split_k),
        uses_accumulator: split_k,
    })
}

/// Tile every GEMM-class node of a graph.
pub fn plan_tiles(graph: &Graph, hier: &MemHierarchy) -> Result<std::collections::BTreeMap<String, TilePlan>> {
    let mut tiles = std::collections::BTreeMap::new();
    for node in &graph.nodes {
        if node.op.class() != OpClass::Gemm {
            continue;
        }
        if let Some((m, n, k)) = gemm_dims(graph, node) {
            tiles.insert(node.name.clone(), tile_gemm(&node.name, m, n, k, hier)?);
        }
    }
    Ok(tiles)
}
