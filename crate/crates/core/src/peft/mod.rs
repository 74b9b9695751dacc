//! Parameter-efficient tuning: low-rank adapters and freezing presets.
//!
//! [`apply_lora`] rewrites selected dense layers `y = x·W₀ + b` into
//! `y = x·W₀ + b + (α/r)·(x·A)·B` with `A: [d_in, r]` random and `B: [r,
//! d_out]` zero. Zero `B` makes the rewrite transparent: the adapted graph
//! computes bit-identical outputs until the first optimizer step, which is
//! what the insertion tests pin down. The base weight keeps its values and
//! its (frozen) tensor; only `A` and `B` train.
//!
//! [`apply_strategy`] maps the six tuning presets onto a classifier graph
//! built by [`crate::models::build_cct`]: linear probe, partial fine-tuning
//! of the last one or two encoder blocks, low-rank adapters on the same
//! spans, and full fine-tuning.

use std::collections::BTreeMap;

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ir::{AttrValue, Graph, NodeSpec, OpKind, TensorKind, TensorSpec};
use crate::{Error, Result};

/// Low-rank adapter settings.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LoraConfig {
    pub rank: usize,
    pub alpha: f64,
    pub seed: u64,
}

impl Default for LoraConfig {
    fn default() -> Self {
        LoraConfig {
            rank: 4,
            alpha: 4.0,
            seed: 0x10ad,
        }
    }
}

/// Which subset of the model trains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    /// Classifier head only.
    LinearProbe,
    /// Head plus the last encoder block.
    Ft1,
    /// Head plus the last two encoder blocks.
    Ft2,
    /// Head plus low-rank adapters on the last block's dense layers.
    Lora1,
    /// Head plus low-rank adapters on all encoder blocks' dense layers.
    Lora2,
    /// Everything trains.
    FullFt,
}

impl Strategy {
    pub const ALL: [Strategy; 6] = [
        Strategy::LinearProbe,
        Strategy::Ft1,
        Strategy::Ft2,
        Strategy::Lora1,
        Strategy::Lora2,
        Strategy::FullFt,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Strategy::LinearProbe => "lp",
            Strategy::Ft1 => "ft1",
            Strategy::Ft2 => "ft2",
            Strategy::Lora1 => "lora1",
            Strategy::Lora2 => "lora2",
            Strategy::FullFt => "full",
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lp" | "linear-probe" => Ok(Strategy::LinearProbe),
            "ft1" | "ft-1" => Ok(Strategy::Ft1),
            "ft2" | "ft-2" => Ok(Strategy::Ft2),
            "lora1" | "lora-1" => Ok(Strategy::Lora1),
            "lora2" | "lora-2" => Ok(Strategy::Lora2),
            "full" | "full-ft" => Ok(Strategy::FullFt),
            other => Err(Error::Config(format!(
                "unknown tuning strategy `{other}` (expected lp|ft1|ft2|lora1|lora2|full)"
            ))),
        }
    }
}

/// Insert low-rank adapters on the dense layers whose weight tensors are
/// named in `targets`. Each target must be consumed by exactly one
/// untransposed Gemm. Adapter tensors are `{w}.lora_a` / `{w}.lora_b`.
pub fn apply_lora(graph: &Graph, targets: &[String], cfg: &LoraConfig) -> Result<Graph> {
    if cfg.rank == 0 {
        return Err(Error::Config("adapter rank must be positive".into()));
    }
    let mut g = graph.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut sorted = targets.to_vec();
    sorted.sort();
    sorted.dedup();
    for w in &sorted {
        inject_adapter(&mut g, w, cfg, &mut rng)?;
    }
    crate::ir::infer_shapes(&mut g)?;
    g.validate()?;
    Ok(g)
}

fn inject_adapter(g: &mut Graph, w: &str, cfg: &LoraConfig, rng: &mut ChaCha8Rng) -> Result<()> {
    let spec = g.tensor(w)?.clone();
    if spec.shape.len() != 2 {
        return Err(Error::Config(format!(
            "adapter target `{w}` must be a 2-D weight, got {:?}",
            spec.shape
        )));
    }
    let (d_in, d_out) = (spec.shape[0], spec.shape[1]);
    let consumers: Vec<usize> = g
        .nodes
        .iter()
        .enumerate()
        .filter(|(_, n)| n.inputs.get(1).map(String::as_str) == Some(w) && n.op == OpKind::Gemm)
        .map(|(i, _)| i)
        .collect();
    if consumers.len() != 1 {
        return Err(Error::Config(format!(
            "adapter target `{w}` must feed exactly one dense layer, found {}",
            consumers.len()
        )));
    }
    let idx = consumers[0];
    if g.nodes[idx].attr_int("trans_b")? != 0 {
        return Err(Error::Config(format!(
            "adapter target `{w}` is consumed transposed; adapters expect y = x·W"
        )));
    }
    let x = g.nodes[idx].inputs[0].clone();
    let y = g.nodes[idx].outputs[0].clone();
    let base_node = g.nodes[idx].name.clone();

    // Rewire the base layer to an internal tensor; the public output name
    // now comes from the Add at the end of the adapter path.
    let y_base = format!("{y}.base");
    let y_spec = g.tensor(&y)?.clone();
    g.tensors.insert(y_base.clone(), TensorSpec::new(y_spec.shape.clone(), TensorKind::Activation));
    g.nodes[idx].outputs[0] = y_base.clone();

    let a_name = format!("{w}.lora_a");
    let b_name = format!("{w}.lora_b");
    let bound = 1.0 / (cfg.rank as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound);
    let a_init: Vec<f32> = (0..d_in * cfg.rank).map(|_| dist.sample(rng) as f32).collect();
    let mut a_spec = TensorSpec::new(vec![d_in, cfg.rank], TensorKind::Weight);
    a_spec.trainable = true;
    let mut b_spec = TensorSpec::new(vec![cfg.rank, d_out], TensorKind::Weight);
    b_spec.trainable = true;
    g.tensors.insert(a_name.clone(), a_spec);
    g.tensors.insert(b_name.clone(), b_spec);
    g.initializers.insert(a_name.clone(), a_init);
    g.initializers.insert(b_name.clone(), vec![0.0; cfg.rank * d_out]);

    let xa = format!("{y}.lora_xa");
    let delta = format!("{y}.lora_delta");
    let scaled = format!("{y}.lora_scaled");
    for t in [&xa, &delta, &scaled] {
        g.tensors.insert(t.clone(), TensorSpec::new(Vec::new(), TensorKind::Activation));
    }
    let gemm_attrs = |ta: bool, tb: bool| -> BTreeMap<String, AttrValue> {
        [
            ("trans_a".to_string(), AttrValue::Int(ta as i64)),
            ("trans_b".to_string(), AttrValue::Int(tb as i64)),
        ]
        .into_iter()
        .collect()
    };
    g.nodes.push(NodeSpec {
        name: format!("{base_node}_lora_a"),
        op: OpKind::Gemm,
        attrs: gemm_attrs(false, false),
        inputs: vec![x, a_name],
        outputs: vec![xa.clone()],
    });
    g.nodes.push(NodeSpec {
        name: format!("{base_node}_lora_b"),
        op: OpKind::Gemm,
        attrs: gemm_attrs(false, false),
        inputs: vec![xa, b_name],
        outputs: vec![delta.clone()],
    });
    g.nodes.push(NodeSpec {
        name: format!("{base_node}_lora_scale"),
        op: OpKind::Scale,
        attrs: [(
            "factor".to_string(),
            AttrValue::Float(cfg.alpha / cfg.rank as f64),
        )]
        .into_iter()
        .collect(),
        inputs: vec![delta],
        outputs: vec![scaled.clone()],
    });
    g.nodes.push(NodeSpec {
        name: format!("{base_node}_lora_add"),
        op: OpKind::Add,
        attrs: BTreeMap::new(),
        inputs: vec![y_base, scaled],
        outputs: vec![y],
    });
    Ok(())
}

/// The dense-layer weight tensors adapters attach to within encoder block `i`.
fn block_linear_weights(i: usize) -> Vec<String> {
    vec![
        format!("blk{i}.attn.qkv.w"),
        format!("blk{i}.attn.proj.w"),
        format!("blk{i}.mlp.fc1.w"),
        format!("blk{i}.mlp.fc2.w"),
    ]
}

/// Apply a tuning preset to a classifier graph with `blocks` encoder blocks.
/// Freezes everything, then unfreezes (or adapts) the preset's subset.
pub fn apply_strategy(
    graph: &Graph,
    strategy: Strategy,
    blocks: usize,
    lora: &LoraConfig,
) -> Result<Graph> {
    if blocks == 0 {
        return Err(Error::Config("model has no encoder blocks".into()));
    }
    let mut g = graph.clone();
    for spec in g.tensors.values_mut() {
        spec.trainable = false;
    }
    let unfreeze = |g: &mut Graph, name: &str| -> Result<()> {
        g.tensors
            .get_mut(name)
            .map(|t| t.trainable = true)
            .ok_or_else(|| Error::UnknownTensor(name.to_string()))
    };
    let unfreeze_prefix = |g: &mut Graph, prefix: &str| {
        for (name, spec) in g.tensors.iter_mut() {
            if name.starts_with(prefix) && g_is_param(spec) {
                spec.trainable = true;
            }
        }
    };

    unfreeze(&mut g, "head.w")?;
    unfreeze(&mut g, "head.b")?;

    match strategy {
        Strategy::LinearProbe => {}
        Strategy::Ft1 => unfreeze_prefix(&mut g, &format!("blk{}.", blocks - 1)),
        Strategy::Ft2 => {
            let lo = blocks.saturating_sub(2);
            for i in lo..blocks {
                unfreeze_prefix(&mut g, &format!("blk{i}."));
            }
        }
        Strategy::Lora1 | Strategy::Lora2 => {
            let lo = if strategy == Strategy::Lora1 { blocks - 1 } else { 0 };
            let targets: Vec<String> = (lo..blocks).flat_map(block_linear_weights).collect();
            g = apply_lora(&g, &targets, lora)?;
        }
        Strategy::FullFt => {
            for spec in g.tensors.values_mut() {
                if g_is_param(spec) {
                    spec.trainable = true;
                }
            }
        }
    }
    Ok(g)
}

fn g_is_param(spec: &TensorSpec) -> bool {
    matches!(spec.kind, TensorKind::Weight | TensorKind::Bias)
}

/// Bytes of trainable parameters under each preset — the quantity a tuning
/// strategy is judged by on devices where parameter state competes with
/// activations for on-chip memory.
pub fn trainable_bytes(graph: &Graph) -> u64 {
    graph
        .tensors
        .values()
        .filter(|t| t.trainable)
        .map(|t| t.byte_size())
        .sum()
}
