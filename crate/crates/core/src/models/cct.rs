//! Compact convolutional transformer.
//!
//! Layout for the default configuration (32×32×3 input, 10 classes):
//!
//! ```text
//! conv 3→64 (3×3, pad 1) · ReLU · maxpool 3×3/2   → [1, 64, 16, 16]
//! conv 64→128 (3×3, pad 1) · ReLU · maxpool 3×3/2 → [1, 128, 8, 8]
//! flatten + transpose                              → tokens [64, 128]
//! 2 × encoder block (pre-norm, 2 heads, MLP 128)
//! final layernorm
//! attention sequence pooling                       → [1, 128]
//! linear head                                      → [1, 10]
//! ```
//!
//! Multi-head attention uses one fused QKV projection (d → 3d) followed by
//! zero-copy slices per head; per-head context vectors are padded back to
//! model width and added, which keeps the op vocabulary free of a dedicated
//! concat. The sequence pool scores every token with a trainable vector,
//! softmaxes over the sequence, and takes the weighted sum of tokens.

use crate::ir::{Graph, OpKind, TensorKind};
use crate::Result;

use super::GraphBuilder;

#[derive(Debug, Clone)]
pub struct CctConfig {
    /// Input height/width (square images).
    pub image: usize,
    pub in_channels: usize,
    /// Channels after each tokenizer conv stage; the last entry is the
    /// transformer model width.
    pub channels: [usize; 2],
    pub heads: usize,
    pub blocks: usize,
    pub mlp_dim: usize,
    pub classes: usize,
    pub seed: u64,
}

impl Default for CctConfig {
    fn default() -> Self {
        CctConfig {
            image: 32,
            in_channels: 3,
            channels: [64, 128],
            heads: 2,
            blocks: 2,
            mlp_dim: 128,
            classes: 10,
            seed: 7,
        }
    }
}

impl CctConfig {
    /// Shrunk variant for tests that need full coverage without the cost of
    /// the real model.
    pub fn tiny() -> Self {
        CctConfig {
            image: 8,
            in_channels: 3,
            channels: [8, 16],
            heads: 2,
            blocks: 2,
            mlp_dim: 16,
            classes: 4,
            seed: 11,
        }
    }

    pub fn d_model(&self) -> usize {
        self.channels[1]
    }

    /// Sequence length after the two stride-2 pools.
    pub fn tokens(&self) -> usize {
        let side = self.image / 4;
        side * side
    }
}

fn encoder_block(b: &mut GraphBuilder, cfg: &CctConfig, i: usize, x: &str) -> String {
    let d = cfg.d_model();
    let dh = d / cfg.heads;
    let p = format!("blk{i}");

    b.param(&format!("{p}.ln1.g"), &[d], TensorKind::Weight, 0.0);
    b.param(&format!("{p}.ln1.b"), &[d], TensorKind::Bias, 0.0);
    set_ln_init(b, &format!("{p}.ln1.g"), d);
    b.weight(&format!("{p}.attn.qkv.w"), &[d, 3 * d]);
    b.bias(&format!("{p}.attn.qkv.b"), 3 * d);
    b.weight(&format!("{p}.attn.proj.w"), &[d, d]);
    b.bias(&format!("{p}.attn.proj.b"), d);
    b.param(&format!("{p}.ln2.g"), &[d], TensorKind::Weight, 0.0);
    b.param(&format!("{p}.ln2.b"), &[d], TensorKind::Bias, 0.0);
    set_ln_init(b, &format!("{p}.ln2.g"), d);
    b.weight(&format!("{p}.mlp.fc1.w"), &[d, cfg.mlp_dim]);
    b.bias(&format!("{p}.mlp.fc1.b"), cfg.mlp_dim);
    b.weight(&format!("{p}.mlp.fc2.w"), &[cfg.mlp_dim, d]);
    b.bias(&format!("{p}.mlp.fc2.b"), d);

    let ln1 = b.layernorm(
        &format!("{p}_ln1"),
        x,
        &format!("{p}.ln1.g"),
        &format!("{p}.ln1.b"),
        &format!("{p}.x_ln1"),
    );
    let qkv = b.gemm(
        &format!("{p}_qkv"),
        &ln1,
        &format!("{p}.attn.qkv.w"),
        Some(&format!("{p}.attn.qkv.b")),
        false,
        false,
        &format!("{p}.qkv"),
    );

    // Per-head attention over zero-copy slices of the fused projection.
    let mut ctx_sum: Option<String> = None;
    for h in 0..cfg.heads {
        let hq = h * dh;
        let q = b.slice(&format!("{p}_q{h}"), &qkv, 1, hq as i64, (hq + dh) as i64, &format!("{p}.q{h}"));
        let k = b.slice(
            &format!("{p}_k{h}"),
            &qkv,
            1,
            (d + hq) as i64,
            (d + hq + dh) as i64,
            &format!("{p}.k{h}"),
        );
        let v = b.slice(
            &format!("{p}_v{h}"),
            &qkv,
            1,
            (2 * d + hq) as i64,
            (2 * d + hq + dh) as i64,
            &format!("{p}.v{h}"),
        );
        let scores = b.gemm(&format!("{p}_att{h}_qk"), &q, &k, None, false, true, &format!("{p}.s{h}"));
        let scaled = b.scale(
            &format!("{p}_att{h}_scale"),
            &scores,
            1.0 / (dh as f64).sqrt(),
            &format!("{p}.ss{h}"),
        );
        let probs = b.softmax(&format!("{p}_att{h}_sm"), &scaled, 1, &format!("{p}.a{h}"));
        let ctx = b.gemm(&format!("{p}_att{h}_av"), &probs, &v, None, false, false, &format!("{p}.c{h}"));
        // Pad the head context back to model width at its own offset; the
        // padded tensors sum to the concatenated context.
        let attrs: std::collections::BTreeMap<_, _> = [
            ("axis".to_string(), crate::ir::AttrValue::Int(1)),
            ("start".to_string(), crate::ir::AttrValue::Int(hq as i64)),
            ("size".to_string(), crate::ir::AttrValue::Int(d as i64)),
        ]
        .into_iter()
        .collect();
        b.node(OpKind::Pad, &format!("{p}_ctx{h}_pad"), attrs, &[&ctx], &[&format!("{p}.cp{h}")]);
        ctx_sum = Some(match ctx_sum {
            None => format!("{p}.cp{h}"),
            Some(acc) => b.add(&format!("{p}_ctx{h}_sum"), &acc, &format!("{p}.cp{h}"), &format!("{p}.ctx{h}")),
        });
    }
    let ctx = ctx_sum.expect("at least one head");

    let proj = b.gemm(
        &format!("{p}_proj"),
        &ctx,
        &format!("{p}.attn.proj.w"),
        Some(&format!("{p}.attn.proj.b")),
        false,
        false,
        &format!("{p}.proj"),
    );
    let res1 = b.add(&format!("{p}_res1"), x, &proj, &format!("{p}.res1"));

    let ln2 = b.layernorm(
        &format!("{p}_ln2"),
        &res1,
        &format!("{p}.ln2.g"),
        &format!("{p}.ln2.b"),
        &format!("{p}.x_ln2"),
    );
    let fc1 = b.gemm(
        &format!("{p}_fc1"),
        &ln2,
        &format!("{p}.mlp.fc1.w"),
        Some(&format!("{p}.mlp.fc1.b")),
        false,
        false,
        &format!("{p}.fc1"),
    );
    let act = b.unary(OpKind::GeLU, &format!("{p}_gelu"), &fc1, &format!("{p}.fc1_act"));
    let fc2 = b.gemm(
        &format!("{p}_fc2"),
        &act,
        &format!("{p}.mlp.fc2.w"),
        Some(&format!("{p}.mlp.fc2.b")),
        false,
        false,
        &format!("{p}.fc2"),
    );
    b.add(&format!("{p}_res2"), &res1, &fc2, &format!("{p}.res2"))
}

/// LayerNorm gains start at one, not random.
fn set_ln_init(b: &mut GraphBuilder, name: &str, d: usize) {
    b.graph_mut().initializers.insert(name.into(), vec![1.0; d]);
}

pub fn build_cct(cfg: &CctConfig) -> Result<Graph> {
    let mut b = GraphBuilder::new(cfg.seed);
    let (c1, d) = (cfg.channels[0], cfg.channels[1]);
    let img = cfg.image;
    let seq = cfg.tokens();

    b.input("image", &[1, cfg.in_channels, img, img]);
    b.weight("tok.conv1.w", &[c1, cfg.in_channels, 3, 3]);
    b.bias("tok.conv1.b", c1);
    b.weight("tok.conv2.w", &[d, c1, 3, 3]);
    b.bias("tok.conv2.b", d);

    let x = b.conv("tok_conv1", "image", "tok.conv1.w", "tok.conv1.b", 3, 1, 1, "tok.c1");
    let x = b.unary(OpKind::ReLU, "tok_relu1", &x, "tok.c1_act");
    let x = b.maxpool("tok_pool1", &x, 3, 2, 1, "tok.p1");
    let x = b.conv("tok_conv2", &x, "tok.conv2.w", "tok.conv2.b", 3, 1, 1, "tok.c2");
    let x = b.unary(OpKind::ReLU, "tok_relu2", &x, "tok.c2_act");
    let x = b.maxpool("tok_pool2", &x, 3, 2, 1, "tok.p2");
    // [1, d, s, s] -> [d, seq] -> tokens [seq, d]
    let x = b.reshape("tok_flat", &x, &[d as i64, seq as i64], "tok.flat");
    let mut x = b.transpose("tok_tokens", &x, &[1, 0], "tokens");

    for i in 0..cfg.blocks {
        x = encoder_block(&mut b, cfg, i, &x);
    }

    b.param("ln_f.g", &[d], TensorKind::Weight, 0.0);
    b.param("ln_f.b", &[d], TensorKind::Bias, 0.0);
    set_ln_init(&mut b, "ln_f.g", d);
    let x = b.layernorm("ln_f", &x, "ln_f.g", "ln_f.b", "x_final");

    // Attention pooling: score tokens, softmax over the sequence, weighted
    // sum back over token features.
    b.weight("pool.w", &[d, 1]);
    b.bias("pool.b", 1);
    let scores = b.gemm("pool_score", &x, "pool.w", Some("pool.b"), false, false, "pool.scores");
    let scores_t = b.transpose("pool_t", &scores, &[1, 0], "pool.scores_t");
    let att = b.softmax("pool_sm", &scores_t, 1, "pool.att");
    let pooled = b.gemm("pool_mix", &att, &x, None, false, false, "pooled");

    b.weight("head.w", &[d, cfg.classes]);
    b.bias("head.b", cfg.classes);
    b.gemm("head", &pooled, "head.w", Some("head.b"), false, false, "logits");

    b.finish(&["logits"])
}
