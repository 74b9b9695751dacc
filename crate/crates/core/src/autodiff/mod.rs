//! Reverse-mode differentiation as a static graph transformation.
//!
//! [`build_training_graph`] extends a forward graph with gradient tensors,
//! backward nodes, explicit [`OpKind::Accumulate`] nodes where a tensor feeds
//! several consumers, and one [`OpKind::SgdUpdate`] per trainable parameter.
//! No tape, no interpreter hooks: the result is an ordinary [`Graph`] that
//! serializes, schedules, plans and executes like any other.
//!
//! Two structural rules matter downstream:
//!
//! * Activation gradients are only materialized for tensors that
//!   transitively depend on a trainable parameter, so backpropagation stops
//!   at the deepest trainable layer and frozen prefixes cost nothing.
//! * Node names encode the phase: forward builders use `fw…`, backward
//!   nodes are `bw{j:04}_{role}…` with `j` the reverse position of the
//!   forward node, and update nodes are `upd_{weight}`. Under the
//!   lexicographic tie-break of [`crate::ir::topo_schedule`] the schedule
//!   therefore runs forward, then the backward sweep, then a dedicated
//!   update phase ordered by weight name. Parameter gradients consequently
//!   stay live from their producing backward node until the update phase —
//!   which is exactly why low-rank adapters shrink the training footprint:
//!   the gradient mass held during the backward sweep collapses from full
//!   weight matrices to the adapter factors.
//!
//! Updates are double-buffered: `upd_{w}` reads the master weight and writes
//! a fresh `{w}.next` tensor which is a step output. Masters are read-only
//! within a step, so the update phase streams over the parameter set without
//! read-write hazards and a failed step never leaves weights half-written.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::ir::{
    infer_shapes, topo_schedule, AttrValue, Graph, NodeSpec, OpKind, TensorKind, TensorSpec,
};
use crate::{Error, Result};

/// Optimizer/loss settings for one fine-tuning run. The loss is always
/// softmax cross-entropy; `batch_size` is the leading dimension the builders
/// and loss attachment agree on.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub steps: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.05,
            batch_size: 1,
            steps: 200,
        }
    }
}

/// Binding between a trainable parameter, its gradient tensor, and the
/// tensor holding its post-update value.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UpdateBinding {
    pub weight: String,
    pub gradient: String,
    pub updated: String,
}

/// A forward graph extended with loss, backward and update nodes.
#[derive(Debug, Clone)]
pub struct TrainingGraph {
    /// The full training-step graph.
    pub graph: Graph,
    /// Forward plus loss only — what the finite-difference oracle runs.
    pub forward: Graph,
    /// Name of the scalar loss tensor.
    pub loss: String,
    /// One entry per trainable parameter, sorted by weight name.
    pub updates: Vec<UpdateBinding>,
}

/// Append a cross-entropy loss over the graph's first output (the logits)
/// and a matching one-hot label input. No-op if the graph already has a
/// loss tensor.
pub fn attach_loss(graph: &mut Graph) -> Result<()> {
    if graph.loss.is_some() {
        return Ok(());
    }
    let logits = graph
        .outputs
        .first()
        .cloned()
        .ok_or_else(|| Error::Config("graph has no outputs to attach a loss to".into()))?;
    let shape = graph.tensor(&logits)?.shape.clone();
    if shape.len() != 2 {
        return Err(Error::Config(format!(
            "loss expects 2-D [batch, classes] logits, `{logits}` is {shape:?}"
        )));
    }
    for name in ["label", "loss"] {
        if graph.tensors.contains_key(name) {
            return Err(Error::Config(format!(
                "tensor name `{name}` is reserved for loss attachment"
            )));
        }
    }
    graph
        .tensors
        .insert("label".into(), TensorSpec::new(shape.clone(), TensorKind::Input));
    graph
        .tensors
        .insert("loss".into(), TensorSpec::new(vec![1], TensorKind::Activation));
    graph.inputs.push("label".into());
    graph.nodes.push(NodeSpec {
        name: "loss_ce".into(),
        op: OpKind::CrossEntropyLoss,
        attrs: BTreeMap::new(),
        inputs: vec![logits, "label".into()],
        outputs: vec!["loss".into()],
    });
    graph.loss = Some("loss".into());
    Ok(())
}

/// Differentiate `forward` with respect to every trainable tensor and append
/// SGD update subgraphs. The input graph must be loss-attached or have 2-D
/// logits as its first output (a loss is attached automatically).
pub fn build_training_graph(forward: &Graph, cfg: &TrainConfig) -> Result<TrainingGraph> {
    let mut g = forward.clone();
    attach_loss(&mut g)?;
    g.validate()?;
    infer_shapes(&mut g)?;
    for node in &g.nodes {
        if node.op.is_training_only() {
            return Err(Error::NonDifferentiable {
                node: node.name.clone(),
                op: node.op.to_string(),
            });
        }
    }
    let loss = g.loss.clone().expect("attached above");
    let fw = g.clone();

    let trainable: BTreeSet<String> = g
        .tensors
        .iter()
        .filter(|(_, t)| t.trainable)
        .map(|(n, _)| n.clone())
        .collect();
    if trainable.is_empty() {
        return Err(Error::Config("graph has no trainable tensors".into()));
    }

    let order = topo_schedule(&g)?;

    // requires_grad: tensors transitively downstream of a trainable.
    let mut requires: BTreeSet<&str> = trainable.iter().map(String::as_str).collect();
    for &idx in &order {
        let node = &g.nodes[idx];
        if node.inputs.iter().any(|i| requires.contains(i.as_str())) {
            for out in &node.outputs {
                requires.insert(out);
            }
        }
    }
    if !requires.contains(loss.as_str()) {
        return Err(Error::Config(
            "no trainable tensor reaches the loss; nothing to differentiate".into(),
        ));
    }

    // reaches_loss: tensors with a forward path into the loss.
    let mut reaches: BTreeSet<&str> = BTreeSet::new();
    reaches.insert(loss.as_str());
    for &idx in order.iter().rev() {
        let node = &g.nodes[idx];
        if node.outputs.iter().any(|o| reaches.contains(o.as_str())) {
            for inp in &node.inputs {
                reaches.insert(inp);
            }
        }
    }

    // A node takes part in the backward sweep iff some input needs a
    // gradient and some output feeds the loss.
    let active: Vec<bool> = g
        .nodes
        .iter()
        .map(|n| {
            n.inputs.iter().any(|i| requires.contains(i.as_str()))
                && n.outputs.iter().any(|o| reaches.contains(o.as_str()))
        })
        .collect();

    // Contribution counts per tensor: one per (active consumer, input slot).
    let mut contrib_total: BTreeMap<&str, usize> = BTreeMap::new();
    for (idx, node) in g.nodes.iter().enumerate() {
        if !active[idx] {
            continue;
        }
        for inp in &node.inputs {
            if requires.contains(inp.as_str()) {
                *contrib_total.entry(inp).or_insert(0) += 1;
            }
        }
    }
    let contrib_total: BTreeMap<String, usize> = contrib_total
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();

    let mut builder = BackwardBuilder {
        fw: &fw,
        g: &mut g,
        contrib_total,
        contribs: BTreeMap::new(),
    };

    for (j, &idx) in order.iter().rev().enumerate() {
        if !active[idx] {
            continue;
        }
        let node = fw.nodes[idx].clone();
        builder.emit_node_backward(j, &node, &loss)?;
    }

    // Updates, one per trainable parameter, forming the final schedule phase.
    let mut updates = Vec::new();
    for w in &trainable {
        let grad = builder.finalize_param_grad(w)?;
        let updated = format!("{w}.next");
        let shape = builder.g.tensor(w)?.shape.clone();
        builder.g.tensors.insert(
            updated.clone(),
            TensorSpec {
                shape,
                dtype: crate::ir::DType::F32,
                kind: TensorKind::OptState,
                trainable: false,
                grad_of: None,
            },
        );
        builder.g.nodes.push(NodeSpec {
            // `upd_` sorts after every `bw…` name, so the scheduler defers
            // all updates into one final phase that runs after gradient
            // accumulation is complete. Updates are double-buffered: each
            // writes a fresh `.next` tensor and masters stay read-only for
            // the whole step, so the update phase can stream (w, d.w) pairs
            // through DMA without read-write hazards.
            name: format!("upd_{w}"),
            op: OpKind::SgdUpdate,
            attrs: [("lr".to_string(), AttrValue::Float(cfg.lr))]
                .into_iter()
                .collect(),
            inputs: vec![w.clone(), grad.clone()],
            outputs: vec![updated.clone()],
        });
        updates.push(UpdateBinding {
            weight: w.clone(),
            gradient: grad,
            updated,
        });
    }
    // Next-step weights are step outputs: the caller (interpreter or
    // generated runtime) swaps them in before the next batch.
    for u in &updates {
        g.outputs.push(u.updated.clone());
    }

    infer_shapes(&mut g)?;
    g.validate()?;
    Ok(TrainingGraph {
        graph: g,
        forward: fw,
        loss,
        updates,
    })
}

struct BackwardBuilder<'a> {
    fw: &'a Graph,
    g: &'a mut Graph,
    /// Expected number of gradient contributions per forward tensor.
    contrib_total: BTreeMap<String, usize>,
    /// Collected contribution tensor names per forward tensor.
    contribs: BTreeMap<String, Vec<String>>,
}

impl<'a> BackwardBuilder<'a> {
    fn new_grad_tensor(&mut self, name: String, grad_of: Option<String>) -> String {
        self.g.tensors.insert(
            name.clone(),
            TensorSpec {
                shape: Vec::new(),
                dtype: crate::ir::DType::F32,
                kind: TensorKind::Gradient,
                trainable: false,
                grad_of,
            },
        );
        name
    }

    fn push_node(
        &mut self,
        name: String,
        op: OpKind,
        attrs: BTreeMap<String, AttrValue>,
        inputs: Vec<String>,
        outputs: Vec<String>,
    ) {
        self.g.nodes.push(NodeSpec {
            name,
            op,
            attrs,
            inputs,
            outputs,
        });
    }

    /// Register a gradient contribution for forward tensor `t`. Returns the
    /// tensor name the producing rule must write into: `d.{t}` when `t` has a
    /// single consumer, else a `d.{t}.c{i}` partial later folded by an
    /// explicit Accumulate.
    fn contribution_name(&mut self, t: &str) -> String {
        let total = self.contrib_total.get(t).copied().unwrap_or(0);
        let list = self.contribs.entry(t.to_string()).or_default();
        let name = if total <= 1 {
            format!("d.{t}")
        } else {
            format!("d.{t}.c{}", list.len())
        };
        list.push(name.clone());
        name
    }

    /// Record an existing tensor as a contribution (pass-through gradients,
    /// e.g. both addends of Add receive the upstream tensor unchanged).
    fn contribute_existing(&mut self, t: &str, grad: &str) {
        self.contribs
            .entry(t.to_string())
            .or_default()
            .push(grad.to_string());
    }

    /// The finalized upstream gradient for tensor `t`, folding partials with
    /// an Accumulate node when `t` fed several consumers. `j` names the node.
    fn upstream(&mut self, j: usize, t: &str) -> Option<String> {
        let list = self.contribs.get(t)?.clone();
        match list.len() {
            0 => None,
            1 => Some(list[0].clone()),
            _ => {
                let out = format!("d.{t}");
                if !self.g.tensors.contains_key(&out) {
                    self.new_grad_tensor(out.clone(), Some(t.to_string()));
                    self.push_node(
                        format!("bw{j:04}_acc_{t}"),
                        OpKind::Accumulate,
                        BTreeMap::new(),
                        list,
                        vec![out.clone()],
                    );
                }
                Some(out)
            }
        }
    }

    /// Finalize the gradient of a parameter (no producing node to hang the
    /// accumulation on, so it happens at update-emission time).
    fn finalize_param_grad(&mut self, w: &str) -> Result<String> {
        let list = self.contribs.get(w).cloned().unwrap_or_default();
        match list.len() {
            0 => Err(Error::Config(format!(
                "trainable tensor `{w}` has no path to the loss"
            ))),
            1 => Ok(list[0].clone()),
            _ => {
                let out = format!("d.{w}");
                if !self.g.tensors.contains_key(&out) {
                    self.new_grad_tensor(out.clone(), Some(w.to_string()));
                    self.push_node(
                        format!("bw9998_wacc_{w}"),
                        OpKind::Accumulate,
                        BTreeMap::new(),
                        list,
                        vec![out.clone()],
                    );
                }
                Ok(out)
            }
        }
    }

    fn needs(&self, t: &str) -> bool {
        self.fw.tensor(t).map(|s| s.trainable).unwrap_or(false)
            || self.contrib_total.contains_key(t)
    }

    fn shape(&self, t: &str) -> Result<Vec<usize>> {
        Ok(self.fw.tensor(t)?.shape.clone())
    }

    fn emit_node_backward(&mut self, j: usize, node: &NodeSpec, loss: &str) -> Result<()> {
        use OpKind::*;

        // The loss node seeds the sweep: dL/dL = 1 is folded into the fused
        // cross-entropy backward.
        if node.op == CrossEntropyLoss {
            if node.outputs[0] != loss {
                return Err(Error::Validation {
                    subject: node.name.clone(),
                    reason: "auxiliary cross-entropy nodes are not differentiable".into(),
                });
            }
            let logits = node.inputs[0].clone();
            if self.needs(&logits) {
                let out = self.contribution_name(&logits);
                let grad_of = out == format!("d.{logits}");
                self.new_grad_tensor(out.clone(), grad_of.then(|| logits.clone()));
                self.push_node(
                    format!("bw{j:04}_dx_{}", node.name),
                    CrossEntropyBackward,
                    BTreeMap::new(),
                    vec![logits, node.inputs[1].clone()],
                    vec![out],
                );
            }
            return Ok(());
        }

        let dy = match self.upstream(j, &node.outputs[0]) {
            Some(d) => d,
            None => return Ok(()), // output off the loss path
        };

        // Helper to allocate the contribution tensor for input `t`.
        macro_rules! grad_out {
            ($t:expr) => {{
                let t: &str = $t;
                let out = self.contribution_name(t);
                let canonical = out == format!("d.{t}");
                self.new_grad_tensor(out.clone(), canonical.then(|| t.to_string()));
                out
            }};
        }

        match node.op {
            Gemm => {
                let a = node.inputs[0].clone();
                let b = node.inputs[1].clone();
                let ta = node.attr_int("trans_a")? != 0;
                let tb = node.attr_int("trans_b")? != 0;
                let flags = |x: bool, y: bool| -> BTreeMap<String, AttrValue> {
                    [
                        ("trans_a".to_string(), AttrValue::Int(x as i64)),
                        ("trans_b".to_string(), AttrValue::Int(y as i64)),
                    ]
                    .into_iter()
                    .collect()
                };
                if self.needs(&a) {
                    let out = grad_out!(&a);
                    // dA = Δ·op(B)ᵀ, transposed again when A itself was used
                    // transposed (see gemm_backward tests for all four cases).
                    if !ta {
                        self.push_node(
                            format!("bw{j:04}_dwa_{}", node.name),
                            Gemm,
                            flags(false, !tb),
                            vec![dy.clone(), b.clone()],
                            vec![out],
                        );
                    } else {
                        self.push_node(
                            format!("bw{j:04}_dwa_{}", node.name),
                            Gemm,
                            flags(tb, true),
                            vec![b.clone(), dy.clone()],
                            vec![out],
                        );
                    }
                }
                if self.needs(&b) {
                    let out = grad_out!(&b);
                    if !tb {
                        self.push_node(
                            format!("bw{j:04}_dwb_{}", node.name),
                            Gemm,
                            flags(!ta, false),
                            vec![a.clone(), dy.clone()],
                            vec![out],
                        );
                    } else {
                        self.push_node(
                            format!("bw{j:04}_dwb_{}", node.name),
                            Gemm,
                            flags(true, ta),
                            vec![dy.clone(), a.clone()],
                            vec![out],
                        );
                    }
                }
                if node.inputs.len() == 3 && self.needs(&node.inputs[2]) {
                    let bias = node.inputs[2].clone();
                    let out = grad_out!(&bias);
                    self.push_node(
                        format!("bw{j:04}_db_{}", node.name),
                        BiasBackward,
                        [("axis".to_string(), AttrValue::Int(1))].into_iter().collect(),
                        vec![dy.clone()],
                        vec![out],
                    );
                }
            }
            Conv2D => {
                let x = node.inputs[0].clone();
                let w = node.inputs[1].clone();
                let bias = node.inputs[2].clone();
                let col = node.outputs[1].clone();
                let sx = self.shape(&x)?;
                let sw = self.shape(&w)?;
                let sy = self.shape(&node.outputs[0])?;
                let (n, cout, ho, wo) = (sy[0], sy[1], sy[2], sy[3]);
                let ck2 = sw[1] * sw[2] * sw[3];
                let attrs = node.attrs.clone();
                // Flatten Δ to [Cout, N·Ho·Wo] (transpose needed when N > 1).
                let dmat = format!("d.{}.mat", node.outputs[0]);
                self.new_grad_tensor(dmat.clone(), None);
                if n == 1 {
                    self.push_node(
                        format!("bw{j:04}_dmr_{}", node.name),
                        Reshape,
                        [(
                            "shape".to_string(),
                            AttrValue::Ints(vec![cout as i64, (n * ho * wo) as i64]),
                        )]
                        .into_iter()
                        .collect(),
                        vec![dy.clone()],
                        vec![dmat.clone()],
                    );
                } else {
                    let dperm = format!("d.{}.perm", node.outputs[0]);
                    self.new_grad_tensor(dperm.clone(), None);
                    self.push_node(
                        format!("bw{j:04}_dmt_{}", node.name),
                        Transpose,
                        [("perm".to_string(), AttrValue::Ints(vec![1, 0, 2, 3]))]
                            .into_iter()
                            .collect(),
                        vec![dy.clone()],
                        vec![dperm.clone()],
                    );
                    self.push_node(
                        format!("bw{j:04}_dmr_{}", node.name),
                        Reshape,
                        [(
                            "shape".to_string(),
                            AttrValue::Ints(vec![cout as i64, (n * ho * wo) as i64]),
                        )]
                        .into_iter()
                        .collect(),
                        vec![dperm],
                        vec![dmat.clone()],
                    );
                }
                if self.needs(&w) {
                    // dW_mat = Δ_mat · colᵀ, then back to OIHW.
                    let dwmat = format!("d.{w}.mat");
                    self.new_grad_tensor(dwmat.clone(), None);
                    self.push_node(
                        format!("bw{j:04}_dwm_{}", node.name),
                        Gemm,
                        [
                            ("trans_a".to_string(), AttrValue::Int(0)),
                            ("trans_b".to_string(), AttrValue::Int(1)),
                        ]
                        .into_iter()
                        .collect(),
                        vec![dmat.clone(), col.clone()],
                        vec![dwmat.clone()],
                    );
                    let out = grad_out!(&w);
                    self.push_node(
                        format!("bw{j:04}_dwr_{}", node.name),
                        Reshape,
                        [(
                            "shape".to_string(),
                            AttrValue::Ints(sw.iter().map(|&d| d as i64).collect()),
                        )]
                        .into_iter()
                        .collect(),
                        vec![dwmat],
                        vec![out],
                    );
                }
                if self.needs(&bias) {
                    let out = grad_out!(&bias);
                    self.push_node(
                        format!("bw{j:04}_db_{}", node.name),
                        BiasBackward,
                        [("axis".to_string(), AttrValue::Int(1))].into_iter().collect(),
                        vec![dy.clone()],
                        vec![out],
                    );
                }
                if self.needs(&x) {
                    // dcol = W_matᵀ · Δ_mat, scattered back to the image.
                    let wmat = format!("d.{}.wmat", node.name);
                    self.new_grad_tensor(wmat.clone(), None);
                    self.push_node(
                        format!("bw{j:04}_dxw_{}", node.name),
                        Reshape,
                        [(
                            "shape".to_string(),
                            AttrValue::Ints(vec![cout as i64, ck2 as i64]),
                        )]
                        .into_iter()
                        .collect(),
                        vec![w.clone()],
                        vec![wmat.clone()],
                    );
                    let dcol = format!("d.{col}");
                    self.new_grad_tensor(dcol.clone(), Some(col.clone()));
                    self.push_node(
                        format!("bw{j:04}_dxc_{}", node.name),
                        Gemm,
                        [
                            ("trans_a".to_string(), AttrValue::Int(1)),
                            ("trans_b".to_string(), AttrValue::Int(0)),
                        ]
                        .into_iter()
                        .collect(),
                        vec![wmat, dmat.clone()],
                        vec![dcol.clone()],
                    );
                    let out = grad_out!(&x);
                    let mut c2i = attrs.clone();
                    c2i.insert("channels".into(), AttrValue::Int(sx[1] as i64));
                    c2i.insert("height".into(), AttrValue::Int(sx[2] as i64));
                    c2i.insert("width".into(), AttrValue::Int(sx[3] as i64));
                    self.push_node(
                        format!("bw{j:04}_dxi_{}", node.name),
                        Col2Im,
                        c2i,
                        vec![dcol],
                        vec![out],
                    );
                }
            }
            MaxPool2D => {
                let x = node.inputs[0].clone();
                if self.needs(&x) {
                    let out = grad_out!(&x);
                    self.push_node(
                        format!("bw{j:04}_dx_{}", node.name),
                        MaxPool2DBackward,
                        node.attrs.clone(),
                        vec![x, dy.clone()],
                        vec![out],
                    );
                }
            }
            Add => {
                for inp in node.inputs.clone() {
                    if self.needs(&inp) {
                        self.contribute_existing(&inp, &dy);
                    }
                }
            }
            Mul => {
                let a = node.inputs[0].clone();
                let b = node.inputs[1].clone();
                for (slot, (t, other)) in [(a.clone(), b.clone()), (b, a)].into_iter().enumerate() {
                    if self.needs(&t) {
                        let out = grad_out!(&t);
                        self.push_node(
                            format!("bw{j:04}_dx{slot}_{}", node.name),
                            Mul,
                            BTreeMap::new(),
                            vec![dy.clone(), other.clone()],
                            vec![out],
                        );
                    }
                }
            }
            Scale => {
                let x = node.inputs[0].clone();
                if self.needs(&x) {
                    let out = grad_out!(&x);
                    self.push_node(
                        format!("bw{j:04}_dx_{}", node.name),
                        Scale,
                        node.attrs.clone(),
                        vec![dy.clone()],
                        vec![out],
                    );
                }
            }
            Transpose => {
                let x = node.inputs[0].clone();
                if self.needs(&x) {
                    let perm: Vec<usize> =
                        node.attr_ints("perm")?.iter().map(|&p| p as usize).collect();
                    let mut inv = vec![0i64; perm.len()];
                    for (i, &p) in perm.iter().enumerate() {
                        inv[p] = i as i64;
                    }
                    let out = grad_out!(&x);
                    self.push_node(
                        format!("bw{j:04}_dx_{}", node.name),
                        Transpose,
                        [("perm".to_string(), AttrValue::Ints(inv))].into_iter().collect(),
                        vec![dy.clone()],
                        vec![out],
                    );
                }
            }
            Reshape => {
                let x = node.inputs[0].clone();
                if self.needs(&x) {
                    let shape = self.shape(&x)?;
                    let out = grad_out!(&x);
                    self.push_node(
                        format!("bw{j:04}_dx_{}", node.name),
                        Reshape,
                        [(
                            "shape".to_string(),
                            AttrValue::Ints(shape.iter().map(|&d| d as i64).collect()),
                        )]
                        .into_iter()
                        .collect(),
                        vec![dy.clone()],
                        vec![out],
                    );
                }
            }
            Slice => {
                let x = node.inputs[0].clone();
                if self.needs(&x) {
                    let axis = node.attr_int("axis")?;
                    let start = node.attr_int("start")?;
                    let size = self.shape(&x)?[axis as usize] as i64;
                    let out = grad_out!(&x);
                    self.push_node(
                        format!("bw{j:04}_dx_{}", node.name),
                        Pad,
                        [
                            ("axis".to_string(), AttrValue::Int(axis)),
                            ("start".to_string(), AttrValue::Int(start)),
                            ("size".to_string(), AttrValue::Int(size)),
                        ]
                        .into_iter()
                        .collect(),
                        vec![dy.clone()],
                        vec![out],
                    );
                }
            }
            Pad => {
                let x = node.inputs[0].clone();
                if self.needs(&x) {
                    let axis = node.attr_int("axis")?;
                    let start = node.attr_int("start")?;
                    let width = self.shape(&x)?[axis as usize] as i64;
                    let out = grad_out!(&x);
                    self.push_node(
                        format!("bw{j:04}_dx_{}", node.name),
                        Slice,
                        [
                            ("axis".to_string(), AttrValue::Int(axis)),
                            ("start".to_string(), AttrValue::Int(start)),
                            ("end".to_string(), AttrValue::Int(start + width)),
                        ]
                        .into_iter()
                        .collect(),
                        vec![dy.clone()],
                        vec![out],
                    );
                }
            }
            ReLU | GeLU => {
                let x = node.inputs[0].clone();
                if self.needs(&x) {
                    let out = grad_out!(&x);
                    self.push_node(
                        format!("bw{j:04}_dx_{}", node.name),
                        if node.op == ReLU {
                            ReluBackward
                        } else {
                            GeluBackward
                        },
                        BTreeMap::new(),
                        vec![x, dy.clone()],
                        vec![out],
                    );
                }
            }
            Softmax => {
                let x = node.inputs[0].clone();
                if self.needs(&x) {
                    let out = grad_out!(&x);
                    self.push_node(
                        format!("bw{j:04}_dx_{}", node.name),
                        SoftmaxBackward,
                        node.attrs.clone(),
                        vec![node.outputs[0].clone(), dy.clone()],
                        vec![out],
                    );
                }
            }
            LayerNorm => {
                let x = node.inputs[0].clone();
                let gamma = node.inputs[1].clone();
                let beta = node.inputs[2].clone();
                if self.needs(&x) {
                    let out = grad_out!(&x);
                    self.push_node(
                        format!("bw{j:04}_dx_{}", node.name),
                        LayerNormBackward,
                        node.attrs.clone(),
                        vec![x.clone(), gamma.clone(), dy.clone()],
                        vec![out],
                    );
                }
                if self.needs(&gamma) || self.needs(&beta) {
                    let dgamma = grad_out!(&gamma);
                    let dbeta = grad_out!(&beta);
                    self.push_node(
                        format!("bw{j:04}_dp_{}", node.name),
                        LayerNormParamBackward,
                        node.attrs.clone(),
                        vec![x, dy.clone()],
                        vec![dgamma, dbeta],
                    );
                }
            }
            op => {
                return Err(Error::NonDifferentiable {
                    node: node.name.clone(),
                    op: op.to_string(),
                });
            }
        }
        Ok(())
    }
}
