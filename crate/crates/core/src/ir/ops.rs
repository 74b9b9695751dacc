//! Per-operator signatures: arity, attribute sets, shape rules, and the
//! engine class used by the cost model.

use crate::{Error, Result};

use super::{Graph, NodeSpec, OpKind};

/// Engine class for cost and placement decisions. `Gemm`-class nodes (plain
/// GEMMs and im2col-lowered convolutions) are the only accelerator
/// candidates; `Special` covers exp/tanh/div-heavy kernels that run far below
/// FMA throughput on the cluster; `Move` nodes shuffle bytes without math.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpClass {
    Gemm,
    Elementwise,
    Special,
    Move,
}

impl OpKind {
    pub fn class(self) -> OpClass {
        use OpKind::*;
        match self {
            Gemm | Conv2D => OpClass::Gemm,
            GeLU | Softmax | LayerNorm | CrossEntropyLoss | GeluBackward | SoftmaxBackward
            | LayerNormBackward | LayerNormParamBackward | CrossEntropyBackward => {
                OpClass::Special
            }
            Transpose | Reshape | Slice | Pad => OpClass::Move,
            _ => OpClass::Elementwise,
        }
    }

    /// Kinds that only appear in training graphs; differentiating a graph
    /// that already contains one is an error.
    pub fn is_training_only(self) -> bool {
        use OpKind::*;
        matches!(
            self,
            SgdUpdate
                | Accumulate
                | ReluBackward
                | GeluBackward
                | SoftmaxBackward
                | LayerNormBackward
                | LayerNormParamBackward
                | MaxPool2DBackward
                | CrossEntropyBackward
                | BiasBackward
                | Col2Im
        )
    }
}

/// Exact attribute key set for each op kind.
pub fn attr_keys(op: OpKind) -> &'static [&'static str] {
    use OpKind::*;
    match op {
        Gemm => &["trans_a", "trans_b"],
        Conv2D => &["kernel", "stride", "padding"],
        MaxPool2D | MaxPool2DBackward => &["kernel", "stride", "padding"],
        Scale => &["factor"],
        Transpose => &["perm"],
        Reshape => &["shape"],
        Slice => &["axis", "start", "end"],
        Pad => &["axis", "start", "size"],
        Softmax | SoftmaxBackward => &["axis"],
        LayerNorm | LayerNormBackward | LayerNormParamBackward => &["eps"],
        SgdUpdate => &["lr"],
        BiasBackward => &["axis"],
        Col2Im => &["channels", "height", "width", "kernel", "stride", "padding"],
        _ => &[],
    }
}

/// (min inputs, max inputs, outputs) per op kind.
fn arity(op: OpKind) -> (usize, usize, usize) {
    use OpKind::*;
    match op {
        Gemm => (2, 3, 1),
        Conv2D => (3, 3, 2),
        MaxPool2D => (1, 1, 1),
        Add | Mul => (2, 2, 1),
        Scale | Transpose | Reshape | Slice | Pad | ReLU | GeLU | Softmax => (1, 1, 1),
        LayerNorm => (3, 3, 1),
        CrossEntropyLoss | CrossEntropyBackward => (2, 2, 1),
        SgdUpdate => (2, 2, 1),
        Accumulate => (2, usize::MAX, 1),
        ReluBackward | GeluBackward | SoftmaxBackward | MaxPool2DBackward => (2, 2, 1),
        LayerNormBackward => (3, 3, 1),
        LayerNormParamBackward => (2, 2, 2),
        BiasBackward | Col2Im => (1, 1, 1),
    }
}

pub(super) fn check_arity(node: &NodeSpec) -> Result<()> {
    let (min_in, max_in, n_out) = arity(node.op);
    if node.inputs.len() < min_in || node.inputs.len() > max_in {
        return Err(Error::Validation {
            subject: node.name.clone(),
            reason: format!(
                "{} takes {}..={} inputs, got {}",
                node.op,
                min_in,
                if max_in == usize::MAX {
                    "N".to_string()
                } else {
                    max_in.to_string()
                },
                node.inputs.len()
            ),
        });
    }
    if node.outputs.len() != n_out {
        return Err(Error::Validation {
            subject: node.name.clone(),
            reason: format!(
                "{} produces {} outputs, got {}",
                node.op,
                n_out,
                node.outputs.len()
            ),
        });
    }
    Ok(())
}

pub(super) fn check_attrs(node: &NodeSpec) -> Result<()> {
    let expected = attr_keys(node.op);
    for key in expected {
        if !node.attrs.contains_key(*key) {
            return Err(Error::Validation {
                subject: node.name.clone(),
                reason: format!("{} requires attribute `{key}`", node.op),
            });
        }
    }
    for key in node.attrs.keys() {
        if !expected.contains(&key.as_str()) {
            return Err(Error::Validation {
                subject: node.name.clone(),
                reason: format!("{} does not take attribute `{key}`", node.op),
            });
        }
    }
    Ok(())
}

fn shape_err(node: &NodeSpec, reason: impl Into<String>) -> Error {
    Error::Shape {
        node: node.name.clone(),
        reason: reason.into(),
    }
}

/// Output spatial extent of a convolution/pool window.
pub(crate) fn window_out(input: usize, kernel: usize, stride: usize, padding: usize) -> usize {
    (input + 2 * padding - kernel) / stride + 1
}

/// Dimensions of the GEMM a node performs, as (m, n, k), if it is GEMM-class.
/// Convolutions report their post-im2col dimensions.
pub fn gemm_dims(graph: &Graph, node: &NodeSpec) -> Option<(usize, usize, usize)> {
    match node.op {
        OpKind::Gemm => {
            let a = &graph.tensors.get(&node.inputs[0])?.shape;
            let b = &graph.tensors.get(&node.inputs[1])?.shape;
            let ta = node.attr_int("trans_a").ok()? != 0;
            let tb = node.attr_int("trans_b").ok()? != 0;
            let (m, k) = mat_dims(a, ta)?;
            let (_, n) = mat_dims(b, tb)?;
            Some((m, n, k))
        }
        OpKind::Conv2D => {
            let x = &graph.tensors.get(&node.inputs[0])?.shape;
            let w = &graph.tensors.get(&node.inputs[1])?.shape;
            if x.len() != 4 || w.len() != 4 {
                return None;
            }
            let kernel = node.attr_int("kernel").ok()? as usize;
            let stride = node.attr_int("stride").ok()? as usize;
            let padding = node.attr_int("padding").ok()? as usize;
            let ho = window_out(x[2], kernel, stride, padding);
            let wo = window_out(x[3], kernel, stride, padding);
            // W_mat [Cout, C·k²] × col [C·k², N·Ho·Wo]
            Some((w[0], x[0] * ho * wo, x[1] * kernel * kernel))
        }
        _ => None,
    }
}

/// Interpret a (possibly transposed) 2-D shape as (rows, cols).
fn mat_dims(shape: &[usize], trans: bool) -> Option<(usize, usize)> {
    if shape.len() != 2 {
        return None;
    }
    Some(if trans {
        (shape[1], shape[0])
    } else {
        (shape[0], shape[1])
    })
}

/// Compute the output shapes a node must produce given the current tensor
/// shapes in `graph`. Order matches `node.outputs`.
pub fn output_shapes(graph: &Graph, node: &NodeSpec) -> Result<Vec<Vec<usize>>> {
    use OpKind::*;
    let input = |i: usize| -> Result<&[usize]> {
        let name = node
            .inputs
            .get(i)
            .ok_or_else(|| shape_err(node, format!("missing input {i}")))?;
        Ok(graph.tensor(name)?.shape.as_slice())
    };
    match node.op {
        Gemm => {
            let a = input(0)?;
            let b = input(1)?;
            let ta = node.attr_int("trans_a")? != 0;
            let tb = node.attr_int("trans_b")? != 0;
            let (m, ka) = mat_dims(a, ta)
                .ok_or_else(|| shape_err(node, format!("operand A is not 2-D: {a:?}")))?;
            let (kb, n) = mat_dims(b, tb)
                .ok_or_else(|| shape_err(node, format!("operand B is not 2-D: {b:?}")))?;
            if ka != kb {
                return Err(shape_err(
                    node,
                    format!("inner dimensions disagree: {ka} vs {kb}"),
                ));
            }
            if node.inputs.len() == 3 {
                let bias = input(2)?;
                if bias != [n] {
                    return Err(shape_err(
                        node,
                        format!("bias shape {bias:?} does not match output columns {n}"),
                    ));
                }
            }
            Ok(vec![vec![m, n]])
        }
        Conv2D => {
            let x = input(0)?;
            let w = input(1)?;
            let b = input(2)?;
            if x.len() != 4 || w.len() != 4 {
                return Err(shape_err(node, "Conv2D operands must be 4-D NCHW"));
            }
            let kernel = node.attr_int("kernel")? as usize;
            let stride = node.attr_int("stride")? as usize;
            let padding = node.attr_int("padding")? as usize;
            if w[1] != x[1] || w[2] != kernel || w[3] != kernel {
                return Err(shape_err(
                    node,
                    format!("weight shape {w:?} inconsistent with input {x:?} kernel {kernel}"),
                ));
            }
            if b != [w[0]] {
                return Err(shape_err(node, format!("bias shape {b:?} != [{}]", w[0])));
            }
            let ho = window_out(x[2], kernel, stride, padding);
            let wo = window_out(x[3], kernel, stride, padding);
            Ok(vec![
                vec![x[0], w[0], ho, wo],
                vec![x[1] * kernel * kernel, x[0] * ho * wo],
            ])
        }
        MaxPool2D => {
            let x = input(0)?;
            if x.len() != 4 {
                return Err(shape_err(node, "MaxPool2D input must be 4-D NCHW"));
            }
            let kernel = node.attr_int("kernel")? as usize;
            let stride = node.attr_int("stride")? as usize;
            let padding = node.attr_int("padding")? as usize;
            Ok(vec![vec![
                x[0],
                x[1],
                window_out(x[2], kernel, stride, padding),
                window_out(x[3], kernel, stride, padding),
            ]])
        }
        Add | Mul => {
            let a = input(0)?;
            let b = input(1)?;
            if a != b {
                return Err(shape_err(node, format!("shape mismatch {a:?} vs {b:?}")));
            }
            Ok(vec![a.to_vec()])
        }
        Scale | ReLU | GeLU | Softmax => Ok(vec![input(0)?.to_vec()]),
        Transpose => {
            let x = input(0)?;
            let perm = node.attr_ints("perm")?;
            if perm.len() != x.len() {
                return Err(shape_err(
                    node,
                    format!("perm {perm:?} does not match rank {}", x.len()),
                ));
            }
            let mut seen = vec![false; x.len()];
            let mut out = vec![0; x.len()];
            for (i, &p) in perm.iter().enumerate() {
                let p = p as usize;
                if p >= x.len() || seen[p] {
                    return Err(shape_err(node, format!("invalid perm {perm:?}")));
                }
                seen[p] = true;
                out[i] = x[p];
            }
            Ok(vec![out])
        }
        Reshape => {
            let x = input(0)?;
            let shape: Vec<usize> = node.attr_ints("shape")?.iter().map(|&d| d as usize).collect();
            let in_n: usize = x.iter().product();
            let out_n: usize = shape.iter().product();
            if in_n != out_n {
                return Err(shape_err(
                    node,
                    format!("cannot reshape {x:?} ({in_n}) to {shape:?} ({out_n})"),
                ));
            }
            Ok(vec![shape])
        }
        Slice => {
            let x = input(0)?;
            let axis = node.attr_int("axis")? as usize;
            let start = node.attr_int("start")? as usize;
            let end = node.attr_int("end")? as usize;
            if axis >= x.len() || start >= end || end > x[axis] {
                return Err(shape_err(
                    node,
                    format!("slice [{start}, {end}) on axis {axis} of {x:?} out of range"),
                ));
            }
            let mut out = x.to_vec();
            out[axis] = end - start;
            Ok(vec![out])
        }
        Pad => {
            let x = input(0)?;
            let axis = node.attr_int("axis")? as usize;
            let start = node.attr_int("start")? as usize;
            let size = node.attr_int("size")? as usize;
            if axis >= x.len() || start + x[axis] > size {
                return Err(shape_err(
                    node,
                    format!("pad of {x:?} at {start} into size {size} on axis {axis} invalid"),
                ));
            }
            let mut out = x.to_vec();
            out[axis] = size;
            Ok(vec![out])
        }
        LayerNorm => {
            let x = input(0)?;
            let gamma = input(1)?;
            let beta = input(2)?;
            let d = *x
                .last()
                .ok_or_else(|| shape_err(node, "LayerNorm input is scalar"))?;
            if gamma != [d] || beta != [d] {
                return Err(shape_err(
                    node,
                    format!("affine params {gamma:?}/{beta:?} must be [{d}]"),
                ));
            }
            Ok(vec![x.to_vec()])
        }
        CrossEntropyLoss => {
            let logits = input(0)?;
            let onehot = input(1)?;
            if logits.len() != 2 || logits != onehot {
                return Err(shape_err(
                    node,
                    format!("logits {logits:?} and one-hot labels {onehot:?} must match as [batch, classes]"),
                ));
            }
            Ok(vec![vec![1]])
        }
        SgdUpdate => {
            let w = input(0)?;
            let g = input(1)?;
            if w != g {
                return Err(shape_err(
                    node,
                    format!("weight {w:?} and gradient {g:?} shapes differ"),
                ));
            }
            Ok(vec![w.to_vec()])
        }
        Accumulate => {
            let first = input(0)?.to_vec();
            for i in 1..node.inputs.len() {
                if input(i)? != first.as_slice() {
                    return Err(shape_err(node, "accumulate operands must share one shape"));
                }
            }
            Ok(vec![first])
        }
        ReluBackward | GeluBackward | SoftmaxBackward | MaxPool2DBackward => {
            // dx has the shape of the forward input (= input 0 here).
            let x = input(0)?;
            let dy = input(1)?;
            match node.op {
                MaxPool2DBackward => {
                    let kernel = node.attr_int("kernel")? as usize;
                    let stride = node.attr_int("stride")? as usize;
                    let padding = node.attr_int("padding")? as usize;
                    let expect = vec![
                        x[0],
                        x[1],
                        window_out(x[2], kernel, stride, padding),
                        window_out(x[3], kernel, stride, padding),
                    ];
                    if dy != expect.as_slice() {
                        return Err(shape_err(
                            node,
                            format!("upstream gradient {dy:?} does not match pooled {expect:?}"),
                        ));
                    }
                }
                _ => {
                    if x != dy {
                        return Err(shape_err(
                            node,
                            format!("gradient shape {dy:?} does not match activation {x:?}"),
                        ));
                    }
                }
            }
            Ok(vec![x.to_vec()])
        }
        LayerNormBackward => {
            let x = input(0)?;
            let dy = input(2)?;
            if x != dy {
                return Err(shape_err(node, "x and dy shapes differ"));
            }
            Ok(vec![x.to_vec()])
        }
        LayerNormParamBackward => {
            let x = input(0)?;
            let d = *x.last().ok_or_else(|| shape_err(node, "scalar input"))?;
            Ok(vec![vec![d], vec![d]])
        }
        CrossEntropyBackward => Ok(vec![input(0)?.to_vec()]),
        BiasBackward => {
            let dy = input(0)?;
            let axis = node.attr_int("axis")?;
            let axis = if axis < 0 {
                (dy.len() as i64 + axis) as usize
            } else {
                axis as usize
            };
            if axis >= dy.len() {
                return Err(shape_err(node, "bias axis out of range"));
            }
            Ok(vec![vec![dy[axis]]])
        }
        Col2Im => {
            let dcol = input(0)?;
            let channels = node.attr_int("channels")? as usize;
            let height = node.attr_int("height")? as usize;
            let width = node.attr_int("width")? as usize;
            let kernel = node.attr_int("kernel")? as usize;
            let stride = node.attr_int("stride")? as usize;
            let padding = node.attr_int("padding")? as usize;
            let ho = window_out(height, kernel, stride, padding);
            let wo = window_out(width, kernel, stride, padding);
            if dcol.len() != 2 || dcol[0] != channels * kernel * kernel || dcol[1] % (ho * wo) != 0
            {
                return Err(shape_err(
                    node,
                    format!("col gradient {dcol:?} inconsistent with attributes"),
                ));
            }
            let n = dcol[1] / (ho * wo);
            Ok(vec![vec![n, channels, height, width]])
        }
    }
}

/// Resolve every tensor shape by walking the schedule: empty shapes are
/// filled from the op rules, declared shapes are checked. Idempotent.
pub fn infer_shapes(graph: &mut Graph) -> Result<()> {
    let order = super::topo_schedule(graph)?;
    for idx in order {
        let node = graph.nodes[idx].clone();
        for name in &node.inputs {
            if graph.tensor(name)?.shape.is_empty() {
                return Err(shape_err(
                    &node,
                    format!("input `{name}` has no shape and no producer ran before this node"),
                ));
            }
        }
        let shapes = output_shapes(graph, &node)?;
        for (out, shape) in node.outputs.iter().zip(shapes) {
            let spec = graph.tensors.get_mut(out).expect("validated");
            if spec.shape.is_empty() {
                spec.shape = shape;
            } else if spec.shape != shape {
                return Err(shape_err(
                    &node,
                    format!(
                        "output `{out}` declared as {:?} but rule gives {shape:?}",
                        spec.shape
                    ),
                ));
            }
        }
    }
    Ok(())
}
