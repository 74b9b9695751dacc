//! Reference model builders.
//!
//! Three architectures exercise the whole pipeline:
//!
//! * [`build_cct`] — a compact convolutional transformer for 32×32 RGB
//!   classification: two-stage conv tokenizer, transformer encoder blocks
//!   with fused QKV projections, attention sequence pooling, linear head.
//! * [`build_deep_ae`] — a deep bottleneck autoencoder over flat vectors.
//! * [`build_toy_mlp`] — two dense layers, small enough for brute-force and
//!   finite-difference oracles.

mod builder;
mod cct;
mod deep_ae;

pub use builder::GraphBuilder;
pub use cct::{build_cct, CctConfig};
pub use deep_ae::{build_deep_ae, DEEP_AE_WIDTHS};

use crate::ir::Graph;
use crate::Result;

/// Two dense layers with a ReLU in between; logits out.
pub fn build_toy_mlp(batch: usize, d_in: usize, d_hidden: usize, classes: usize, seed: u64) -> Result<Graph> {
    let mut b = GraphBuilder::new(seed);
    b.input("image", &[batch, d_in]);
    b.weight("fc1.w", &[d_in, d_hidden]);
    b.bias("fc1.b", d_hidden);
    b.weight("fc2.w", &[d_hidden, classes]);
    b.bias("fc2.b", classes);
    b.gemm("fc1", "image", "fc1.w", Some("fc1.b"), false, false, "h");
    b.unary(crate::ir::OpKind::ReLU, "relu1", "h", "h_act");
    b.gemm("fc2", "h_act", "fc2.w", Some("fc2.b"), false, false, "logits");
    b.finish(&["logits"])
}
