//! Reference execution of graphs on the host.
//!
//! The interpreter walks the deterministic schedule and dispatches each node
//! to the naive kernels in [`kernels`]. It exists to pin down semantics:
//! training-step results here are the oracle for the C backend, and the FP64
//! mode feeds the finite-difference gradient checks. Nothing in this module
//! tries to be fast.

pub mod kernels;

pub use kernels::Scalar;

use std::collections::BTreeMap;

use crate::autodiff::TrainingGraph;
use crate::ir::{Graph, NodeSpec, OpKind};
use crate::{Error, Result};

/// All tensor values after one pass over the schedule, plus per-tensor
/// checksums (f64 element sums) for cheap cross-backend comparison.
pub struct RunResult<T> {
    pub values: BTreeMap<String, Vec<T>>,
    pub checksums: BTreeMap<String, f64>,
}

impl<T: Scalar> RunResult<T> {
    pub fn value(&self, name: &str) -> Result<&[T]> {
        self.values
            .get(name)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::UnknownTensor(name.to_string()))
    }

    pub fn scalar(&self, name: &str) -> Result<f64> {
        let v = self.value(name)?;
        if v.len() != 1 {
            return Err(Error::Numeric {
                node: name.into(),
                reason: format!("expected scalar, got {} elements", v.len()),
            });
        }
        Ok(v[0].to_f64_val())
    }
}

/// Execute `graph` with the given input feeds. Feeds may also override
/// initializers (used by the training loop and the finite-difference oracle).
/// Every node output is checked for non-finite values.
pub fn run_graph<T: Scalar>(
    graph: &Graph,
    feeds: &BTreeMap<String, Vec<T>>,
) -> Result<RunResult<T>> {
    let order = crate::ir::topo_schedule(graph)?;
    let mut values: BTreeMap<String, Vec<T>> = BTreeMap::new();
    for (name, data) in &graph.initializers {
        values.insert(name.clone(), data.iter().map(|&v| T::from_f32(v)).collect());
    }
    for (name, data) in feeds {
        let spec = graph.tensor(name)?;
        if spec.elements() != data.len() as u64 {
            return Err(Error::Config(format!(
                "feed `{name}` has {} elements, shape {:?} needs {}",
                data.len(),
                spec.shape,
                spec.elements()
            )));
        }
        values.insert(name.clone(), data.clone());
    }
    for name in &graph.inputs {
        if !values.contains_key(name) {
            return Err(Error::Config(format!("missing feed for graph input `{name}`")));
        }
    }

    let mut checksums = BTreeMap::new();
    for idx in order {
        let node = &graph.nodes[idx];
        eval_node(graph, node, &mut values)?;
        for out in &node.outputs {
            let data = &values[out];
            for &v in data.iter() {
                if !v.is_finite() {
                    return Err(Error::Numeric {
                        node: node.name.clone(),
                        reason: format!("non-finite value in output `{out}`"),
                    });
                }
            }
            checksums.insert(out.clone(), data.iter().map(|v| v.to_f64_val()).sum());
        }
    }
    Ok(RunResult { values, checksums })
}

/// Result of one optimizer step on a training graph.
pub struct StepResult<T> {
    pub loss: f64,
    /// Parameter name -> gradient value.
    pub gradients: BTreeMap<String, Vec<T>>,
    /// Parameter name -> post-update value.
    pub updated: BTreeMap<String, Vec<T>>,
    pub checksums: BTreeMap<String, f64>,
}

/// Run one training step (forward, backward, updates) and collect the
/// per-parameter gradients and updated values.
pub fn run_step<T: Scalar>(
    tg: &TrainingGraph,
    feeds: &BTreeMap<String, Vec<T>>,
) -> Result<StepResult<T>> {
    let run = run_graph(&tg.graph, feeds)?;
    let loss = run.scalar(&tg.loss)?;
    let mut gradients = BTreeMap::new();
    let mut updated = BTreeMap::new();
    for b in &tg.updates {
        gradients.insert(b.weight.clone(), run.value(&b.gradient)?.to_vec());
        updated.insert(b.weight.clone(), run.value(&b.updated)?.to_vec());
    }
    Ok(StepResult {
        loss,
        gradients,
        updated,
        checksums: run.checksums,
    })
}

/// Run `steps` optimizer steps, cycling through `batches` (each batch is a
/// full feed map). Updated weights from each step feed the next. Returns the
/// per-step losses.
pub fn run_training<T: Scalar>(
    tg: &TrainingGraph,
    batches: &[BTreeMap<String, Vec<T>>],
    steps: usize,
) -> Result<Vec<f64>> {
    if batches.is_empty() {
        return Err(Error::Config("training needs at least one batch".into()));
    }
    let mut weights: BTreeMap<String, Vec<T>> = BTreeMap::new();
    let mut losses = Vec::with_capacity(steps);
    for step in 0..steps {
        let mut feeds = batches[step % batches.len()].clone();
        for (name, value) in &weights {
            feeds.insert(name.clone(), value.clone());
        }
        let result = run_step(tg, &feeds)?;
        for (name, value) in result.updated {
            weights.insert(name, value);
        }
        losses.push(result.loss);
    }
    Ok(losses)
}

/// Central-difference gradient of the graph loss with respect to `param`,
/// computed in FP64. `indices` restricts the check to selected elements
/// (None = dense). Step size `eps` is applied symmetrically.
pub fn finite_diff_grad(
    graph: &Graph,
    feeds: &BTreeMap<String, Vec<f64>>,
    param: &str,
    indices: Option<&[usize]>,
    eps: f64,
) -> Result<Vec<f64>> {
    let loss_name = graph
        .loss
        .clone()
        .ok_or_else(|| Error::Config("graph has no loss tensor".into()))?;
    let base: Vec<f64> = match feeds.get(param) {
        Some(v) => v.clone(),
        None => graph
            .initializers
            .get(param)
            .ok_or_else(|| Error::UnknownTensor(param.to_string()))?
            .iter()
            .map(|&v| v as f64)
            .collect(),
    };
    let all_indices: Vec<usize>;
    let indices = match indices {
        Some(ix) => ix,
        None => {
            all_indices = (0..base.len()).collect();
            &all_indices
        }
    };
    let mut grad = Vec::with_capacity(indices.len());
    let mut feeds = feeds.clone();
    for &i in indices {
        let mut plus = base.clone();
        plus[i] += eps;
        feeds.insert(param.to_string(), plus);
        let lp = run_graph(graph, &feeds)?.scalar(&loss_name)?;
        let mut minus = base.clone();
        minus[i] -= eps;
        feeds.insert(param.to_string(), minus);
        let lm = run_graph(graph, &feeds)?.scalar(&loss_name)?;
        grad.push((lp - lm) / (2.0 * eps));
    }
    feeds.insert(param.to_string(), base);
    Ok(grad)
}

/// Relative error with an absolute guard for near-zero gradients.
pub fn rel_error(a: f64, b: f64) -> f64 {
    let denom = a.abs().max(b.abs()).max(1e-8);
    (a - b).abs() / denom
}

fn axis_norm(axis: i64, rank: usize) -> usize {
    if axis < 0 {
        (rank as i64 + axis) as usize
    } else {
        axis as usize
    }
}

fn eval_node<T: Scalar>(
    graph: &Graph,
    node: &NodeSpec,
    values: &mut BTreeMap<String, Vec<T>>,
) -> Result<()> {
    let get = |name: &str| -> Result<&Vec<T>> {
        values.get(name).ok_or_else(|| Error::Numeric {
            node: node.name.clone(),
            reason: format!("input `{name}` has no value"),
        })
    };
    let shape = |name: &str| -> Result<Vec<usize>> { Ok(graph.tensor(name)?.shape.clone()) };
    let out_elems = |i: usize| -> Result<usize> {
        Ok(graph.tensor(&node.outputs[i])?.elements() as usize)
    };

    let mut outs: Vec<Vec<T>> = Vec::with_capacity(node.outputs.len());
    match node.op {
        OpKind::Gemm => {
            let a = get(&node.inputs[0])?;
            let b = get(&node.inputs[1])?;
            let sa = shape(&node.inputs[0])?;
            let sb = shape(&node.inputs[1])?;
            let ta = node.attr_int("trans_a")? != 0;
            let tb = node.attr_int("trans_b")? != 0;
            let (m, k) = if ta { (sa[1], sa[0]) } else { (sa[0], sa[1]) };
            let n = if tb { sb[0] } else { sb[1] };
            let bias = if node.inputs.len() == 3 {
                Some(get(&node.inputs[2])?.as_slice())
            } else {
                None
            };
            let mut out = vec![T::zero(); m * n];
            kernels::gemm(a, sa[1], ta, b, sb[1], tb, bias, m, n, k, &mut out);
            outs.push(out);
        }
        OpKind::Conv2D => {
            let x = get(&node.inputs[0])?;
            let w = get(&node.inputs[1])?;
            let b = get(&node.inputs[2])?;
            let sx = shape(&node.inputs[0])?;
            let (n, c, h, wd) = (sx[0], sx[1], sx[2], sx[3]);
            let cout = shape(&node.inputs[1])?[0];
            let kernel = node.attr_int("kernel")? as usize;
            let stride = node.attr_int("stride")? as usize;
            let padding = node.attr_int("padding")? as usize;
            let ho = (h + 2 * padding - kernel) / stride + 1;
            let wo = (wd + 2 * padding - kernel) / stride + 1;
            let ck2 = c * kernel * kernel;
            let cols = n * ho * wo;
            let mut col = vec![T::zero(); ck2 * cols];
            kernels::im2col(x, n, c, h, wd, kernel, stride, padding, &mut col);
            // W as [Cout, C·k²] is the flat weight layout already.
            let mut ymat = vec![T::zero(); cout * cols];
            kernels::gemm(w, ck2, false, &col, cols, false, None, cout, cols, ck2, &mut ymat);
            let mut y = vec![T::zero(); n * cout * ho * wo];
            for ni in 0..n {
                for co in 0..cout {
                    for p in 0..ho * wo {
                        y[(ni * cout + co) * ho * wo + p] =
                            ymat[co * cols + ni * ho * wo + p] + b[co];
                    }
                }
            }
            outs.push(y);
            outs.push(col);
        }
        OpKind::MaxPool2D => {
            let x = get(&node.inputs[0])?;
            let s = shape(&node.inputs[0])?;
            let kernel = node.attr_int("kernel")? as usize;
            let stride = node.attr_int("stride")? as usize;
            let padding = node.attr_int("padding")? as usize;
            let mut out = vec![T::zero(); out_elems(0)?];
            kernels::maxpool(x, s[0], s[1], s[2], s[3], kernel, stride, padding, &mut out);
            outs.push(out);
        }
        OpKind::Add => {
            let a = get(&node.inputs[0])?;
            let b = get(&node.inputs[1])?;
            outs.push(a.iter().zip(b).map(|(&x, &y)| x + y).collect());
        }
        OpKind::Mul => {
            let a = get(&node.inputs[0])?;
            let b = get(&node.inputs[1])?;
            outs.push(a.iter().zip(b).map(|(&x, &y)| x * y).collect());
        }
        OpKind::Scale => {
            let a = get(&node.inputs[0])?;
            let f = T::from_f64(node.attr_float("factor")?);
            outs.push(a.iter().map(|&x| x * f).collect());
        }
        OpKind::Transpose => {
            let x = get(&node.inputs[0])?;
            let s = shape(&node.inputs[0])?;
            let perm: Vec<usize> = node.attr_ints("perm")?.iter().map(|&p| p as usize).collect();
            let mut out = vec![T::zero(); x.len()];
            kernels::transpose(x, &s, &perm, &mut out);
            outs.push(out);
        }
        OpKind::Reshape => {
            outs.push(get(&node.inputs[0])?.clone());
        }
        OpKind::Slice => {
            let x = get(&node.inputs[0])?;
            let s = shape(&node.inputs[0])?;
            let axis = node.attr_int("axis")? as usize;
            let start = node.attr_int("start")? as usize;
            let end = node.attr_int("end")? as usize;
            let mut out = vec![T::zero(); out_elems(0)?];
            kernels::slice(x, &s, axis, start, end, &mut out);
            outs.push(out);
        }
        OpKind::Pad => {
            let x = get(&node.inputs[0])?;
            let s = shape(&node.inputs[0])?;
            let axis = node.attr_int("axis")? as usize;
            let start = node.attr_int("start")? as usize;
            let size = node.attr_int("size")? as usize;
            let mut out = vec![T::zero(); out_elems(0)?];
            kernels::pad(x, &s, axis, start, size, &mut out);
            outs.push(out);
        }
        OpKind::ReLU => {
            let x = get(&node.inputs[0])?;
            let mut out = vec![T::zero(); x.len()];
            kernels::relu(x, &mut out);
            outs.push(out);
        }
        OpKind::GeLU => {
            let x = get(&node.inputs[0])?;
            let mut out = vec![T::zero(); x.len()];
            kernels::gelu(x, &mut out);
            outs.push(out);
        }
        OpKind::Softmax => {
            let x = get(&node.inputs[0])?;
            let s = shape(&node.inputs[0])?;
            let axis = axis_norm(node.attr_int("axis")?, s.len());
            let mut out = vec![T::zero(); x.len()];
            kernels::softmax(x, &s, axis, &mut out);
            outs.push(out);
        }
        OpKind::LayerNorm => {
            let x = get(&node.inputs[0])?;
            let gamma = get(&node.inputs[1])?;
            let beta = get(&node.inputs[2])?;
            let s = shape(&node.inputs[0])?;
            let d = *s.last().unwrap();
            let eps = node.attr_float("eps")?;
            let mut out = vec![T::zero(); x.len()];
            kernels::layernorm(x, d, gamma, beta, eps, &mut out);
            outs.push(out);
        }
        OpKind::CrossEntropyLoss => {
            let logits = get(&node.inputs[0])?;
            let onehot = get(&node.inputs[1])?;
            let s = shape(&node.inputs[0])?;
            let loss = kernels::cross_entropy(logits, onehot, s[0], s[1]);
            outs.push(vec![loss]);
        }
        OpKind::SgdUpdate => {
            let w = get(&node.inputs[0])?;
            let g = get(&node.inputs[1])?;
            let lr = T::from_f64(node.attr_float("lr")?);
            outs.push(w.iter().zip(g).map(|(&wv, &gv)| wv - lr * gv).collect());
        }
        OpKind::Accumulate => {
            let mut acc = get(&node.inputs[0])?.clone();
            for name in &node.inputs[1..] {
                let v = get(name)?;
                for (a, &b) in acc.iter_mut().zip(v) {
                    *a = *a + b;
                }
            }
            outs.push(acc);
        }
        OpKind::ReluBackward => {
            let x = get(&node.inputs[0])?;
            let dy = get(&node.inputs[1])?;
            let mut dx = vec![T::zero(); x.len()];
            kernels::relu_backward(x, dy, &mut dx);
            outs.push(dx);
        }
        OpKind::GeluBackward => {
            let x = get(&node.inputs[0])?;
            let dy = get(&node.inputs[1])?;
            let mut dx = vec![T::zero(); x.len()];
            kernels::gelu_backward(x, dy, &mut dx);
            outs.push(dx);
        }
        OpKind::SoftmaxBackward => {
            let y = get(&node.inputs[0])?;
            let dy = get(&node.inputs[1])?;
            let s = shape(&node.inputs[0])?;
            let axis = axis_norm(node.attr_int("axis")?, s.len());
            let mut dx = vec![T::zero(); y.len()];
            kernels::softmax_backward(y, dy, &s, axis, &mut dx);
            outs.push(dx);
        }
        OpKind::LayerNormBackward => {
            let x = get(&node.inputs[0])?;
            let gamma = get(&node.inputs[1])?;
            let dy = get(&node.inputs[2])?;
            let s = shape(&node.inputs[0])?;
            let d = *s.last().unwrap();
            let eps = node.attr_float("eps")?;
            let mut dx = vec![T::zero(); x.len()];
            kernels::layernorm_backward(x, d, gamma, dy, eps, &mut dx);
            outs.push(dx);
        }
        OpKind::LayerNormParamBackward => {
            let x = get(&node.inputs[0])?;
            let dy = get(&node.inputs[1])?;
            let s = shape(&node.inputs[0])?;
            let d = *s.last().unwrap();
            let eps = node.attr_float("eps")?;
            let mut dgamma = vec![T::zero(); d];
            let mut dbeta = vec![T::zero(); d];
            kernels::layernorm_param_backward(x, d, dy, eps, &mut dgamma, &mut dbeta);
            outs.push(dgamma);
            outs.push(dbeta);
        }
        OpKind::MaxPool2DBackward => {
            let x = get(&node.inputs[0])?;
            let dy = get(&node.inputs[1])?;
            let s = shape(&node.inputs[0])?;
            let kernel = node.attr_int("kernel")? as usize;
            let stride = node.attr_int("stride")? as usize;
            let padding = node.attr_int("padding")? as usize;
            let mut dx = vec![T::zero(); x.len()];
            kernels::maxpool_backward(
                x, dy, s[0], s[1], s[2], s[3], kernel, stride, padding, &mut dx,
            );
            outs.push(dx);
        }
        OpKind::CrossEntropyBackward => {
            let logits = get(&node.inputs[0])?;
            let onehot = get(&node.inputs[1])?;
            let s = shape(&node.inputs[0])?;
            let mut d = vec![T::zero(); logits.len()];
            kernels::cross_entropy_backward(logits, onehot, s[0], s[1], &mut d);
            outs.push(d);
        }
        OpKind::BiasBackward => {
            let dy = get(&node.inputs[0])?;
            let s = shape(&node.inputs[0])?;
            let axis = axis_norm(node.attr_int("axis")?, s.len());
            let mut db = vec![T::zero(); s[axis]];
            kernels::bias_backward(dy, &s, axis, &mut db);
            outs.push(db);
        }
        OpKind::Col2Im => {
            let dcol = get(&node.inputs[0])?;
            let c = node.attr_int("channels")? as usize;
            let h = node.attr_int("height")? as usize;
            let w = node.attr_int("width")? as usize;
            let kernel = node.attr_int("kernel")? as usize;
            let stride = node.attr_int("stride")? as usize;
            let padding = node.attr_int("padding")? as usize;
            let n = out_elems(0)? / (c * h * w);
            let mut dx = vec![T::zero(); n * c * h * w];
            kernels::col2im(dcol, n, c, h, w, kernel, stride, padding, &mut dx);
            outs.push(dx);
        }
    }

    for (name, data) in node.outputs.iter().zip(outs) {
        let expect = graph.tensor(name)?.elements() as usize;
        if data.len() != expect {
            return Err(Error::Numeric {
                node: node.name.clone(),
                reason: format!(
                    "kernel produced {} elements for `{name}`, shape needs {expect}",
                    data.len()
                ),
            });
        }
        values.insert(name.clone(), data);
    }
    Ok(())
}
