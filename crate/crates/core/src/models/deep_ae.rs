//! Deep bottleneck autoencoder over flat vectors.
//!
//! Ten dense layers, ReLU between all but the last:
//! 640-128-128-128-128-8-128-128-128-128-640. The narrow 8-wide bottleneck
//! and uniform 128-wide trunk keep every weight matrix small enough to stay
//! cluster-resident while still adding up to ~266K parameters.

use crate::ir::{Graph, OpKind};
use crate::Result;

use super::GraphBuilder;

/// Layer widths, input to output.
pub const DEEP_AE_WIDTHS: [usize; 11] = [640, 128, 128, 128, 128, 8, 128, 128, 128, 128, 640];

pub fn build_deep_ae(batch: usize, seed: u64) -> Result<Graph> {
    let mut b = GraphBuilder::new(seed);
    let mut x = b.input("x", &[batch, DEEP_AE_WIDTHS[0]]);
    for (i, pair) in DEEP_AE_WIDTHS.windows(2).enumerate() {
        let (d_in, d_out) = (pair[0], pair[1]);
        b.weight(&format!("enc{i}.w"), &[d_in, d_out]);
        b.bias(&format!("enc{i}.b"), d_out);
        x = b.gemm(
            &format!("fc{i}"),
            &x,
            &format!("enc{i}.w"),
            Some(&format!("enc{i}.b")),
            false,
            false,
            &format!("h{i}"),
        );
        if i + 2 < DEEP_AE_WIDTHS.len() {
            x = b.unary(OpKind::ReLU, &format!("relu{i}"), &x, &format!("h{i}_act"));
        }
    }
    let out = x;
    b.finish(&[&out])
}
