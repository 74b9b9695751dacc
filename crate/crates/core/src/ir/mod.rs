//! Static graph intermediate representation.
//!
//! A [`Graph`] is a DAG of [`NodeSpec`] operators over named [`TensorSpec`]
//! tensors. Shapes are static, every tensor has at most one producer, and the
//! whole structure serializes to a JSON document plus a little-endian FP32
//! blob store (see [`serialize_graph`] / [`parse_graph`]). Training graphs
//! (gradients, accumulation, optimizer updates) reuse the same node schema —
//! differentiation is a graph-to-graph transformation, not an interpreter
//! feature.

mod ops;
mod schedule;
mod serial;

pub use ops::{attr_keys, gemm_dims, infer_shapes, output_shapes, OpClass};
pub use schedule::topo_schedule;
pub use serial::{parse_graph, serialize_graph};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Element type of a tensor. Blob storage is always FP32; FP64 exists only
/// as an execution mode for the finite-difference oracle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DType {
    #[serde(rename = "fp32")]
    F32,
    #[serde(rename = "fp64")]
    F64,
}

impl DType {
    pub fn byte_size(self) -> u64 {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

/// Role of a tensor in the training step. The memory planner keys lifetime
/// and placement decisions off this.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TensorKind {
    Input,
    Weight,
    Bias,
    Activation,
    Gradient,
    OptState,
    Constant,
}

/// Declared properties of one named tensor. The name itself is the key in
/// [`Graph::tensors`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub shape: Vec<usize>,
    pub dtype: DType,
    pub kind: TensorKind,
    #[serde(default, skip_serializing_if = "is_false")]
    pub trainable: bool,
    /// For gradient tensors: the forward tensor this is the gradient of.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grad_of: Option<String>,
}

fn is_false(b: &bool) -> bool {
    !*b
}

impl TensorSpec {
    pub fn new(shape: Vec<usize>, kind: TensorKind) -> Self {
        TensorSpec {
            shape,
            dtype: DType::F32,
            kind,
            trainable: false,
            grad_of: None,
        }
    }

    pub fn elements(&self) -> u64 {
        self.shape.iter().map(|&d| d as u64).product()
    }

    pub fn byte_size(&self) -> u64 {
        self.elements() * self.dtype.byte_size()
    }
}

/// Operator vocabulary. Forward primitives first, then the training-only and
/// backward kinds emitted by the differentiator. GEMM and convolution
/// gradients stay plain `Gemm` nodes (plus `Col2Im` for the convolution data
/// gradient); the remaining backward kinds exist because their gradient
/// functions are not expressible as compositions of the forward primitives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize, Hash)]
pub enum OpKind {
    Gemm,
    Conv2D,
    MaxPool2D,
    Add,
    Mul,
    Scale,
    Transpose,
    Reshape,
    Slice,
    Pad,
    ReLU,
    GeLU,
    Softmax,
    LayerNorm,
    CrossEntropyLoss,
    SgdUpdate,
    Accumulate,
    ReluBackward,
    GeluBackward,
    SoftmaxBackward,
    LayerNormBackward,
    LayerNormParamBackward,
    MaxPool2DBackward,
    CrossEntropyBackward,
    BiasBackward,
    Col2Im,
}

impl OpKind {
    pub fn as_str(self) -> &'static str {
        match self {
            OpKind::Gemm => "Gemm",
            OpKind::Conv2D => "Conv2D",
            OpKind::MaxPool2D => "MaxPool2D",
            OpKind::Add => "Add",
            OpKind::Mul => "Mul",
            OpKind::Scale => "Scale",
            OpKind::Transpose => "Transpose",
            OpKind::Reshape => "Reshape",
            OpKind::Slice => "Slice",
            OpKind::Pad => "Pad",
            OpKind::ReLU => "ReLU",
            OpKind::GeLU => "GeLU",
            OpKind::Softmax => "Softmax",
            OpKind::LayerNorm => "LayerNorm",
            OpKind::CrossEntropyLoss => "CrossEntropyLoss",
            OpKind::SgdUpdate => "SgdUpdate",
            OpKind::Accumulate => "Accumulate",
            OpKind::ReluBackward => "ReluBackward",
            OpKind::GeluBackward => "GeluBackward",
            OpKind::SoftmaxBackward => "SoftmaxBackward",
            OpKind::LayerNormBackward => "LayerNormBackward",
            OpKind::LayerNormParamBackward => "LayerNormParamBackward",
            OpKind::MaxPool2DBackward => "MaxPool2DBackward",
            OpKind::CrossEntropyBackward => "CrossEntropyBackward",
            OpKind::BiasBackward => "BiasBackward",
            OpKind::Col2Im => "Col2Im",
        }
    }
}

impl std::fmt::Display for OpKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Attribute scalar: integer, float, or integer list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AttrValue {
    Int(i64),
    Float(f64),
    Ints(Vec<i64>),
}

impl AttrValue {
    pub fn as_int(&self) -> Option<i64> {
        match self {
            AttrValue::Int(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_float(&self) -> Option<f64> {
        match self {
            AttrValue::Float(v) => Some(*v),
            AttrValue::Int(v) => Some(*v as f64),
            _ => None,
        }
    }

    pub fn as_ints(&self) -> Option<&[i64]> {
        match self {
            AttrValue::Ints(v) => Some(v),
            _ => None,
        }
    }
}

/// One operator instance: a named node reading input tensors and producing
/// output tensors, with an attribute set fixed by the op kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub name: String,
    pub op: OpKind,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub attrs: BTreeMap<String, AttrValue>,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
}

impl NodeSpec {
    pub fn attr_int(&self, key: &str) -> Result<i64> {
        self.attrs
            .get(key)
            .and_then(AttrValue::as_int)
            .ok_or_else(|| Error::Validation {
                subject: self.name.clone(),
                reason: format!("missing integer attribute `{key}`"),
            })
    }

    pub fn attr_float(&self, key: &str) -> Result<f64> {
        self.attrs
            .get(key)
            .and_then(AttrValue::as_float)
            .ok_or_else(|| Error::Validation {
                subject: self.name.clone(),
                reason: format!("missing float attribute `{key}`"),
            })
    }

    pub fn attr_ints(&self, key: &str) -> Result<&[i64]> {
        self.attrs
            .get(key)
            .and_then(AttrValue::as_ints)
            .ok_or_else(|| Error::Validation {
                subject: self.name.clone(),
                reason: format!("missing integer-list attribute `{key}`"),
            })
    }
}

/// A complete computation graph plus its constant data.
///
/// `initializers` holds the FP32 payload for weights/biases/constants keyed
/// by tensor name; serialization concatenates them into a blob store with an
/// offset/length index in the JSON document.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Graph {
    pub tensors: BTreeMap<String, TensorSpec>,
    pub nodes: Vec<NodeSpec>,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub loss: Option<String>,
    pub initializers: BTreeMap<String, Vec<f32>>,
}

impl Graph {
    pub fn tensor(&self, name: &str) -> Result<&TensorSpec> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::UnknownTensor(name.to_string()))
    }

    pub fn node(&self, name: &str) -> Option<&NodeSpec> {
        self.nodes.iter().find(|n| n.name == name)
    }

    /// Map from tensor name to the index of its producing node.
    pub fn producers(&self) -> BTreeMap<&str, usize> {
        let mut map = BTreeMap::new();
        for (idx, node) in self.nodes.iter().enumerate() {
            for out in &node.outputs {
                map.insert(out.as_str(), idx);
            }
        }
        map
    }

    /// Map from tensor name to indices of nodes reading it.
    pub fn consumers(&self) -> BTreeMap<&str, Vec<usize>> {
        let mut map: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (idx, node) in self.nodes.iter().enumerate() {
            for inp in &node.inputs {
                map.entry(inp.as_str()).or_default().push(idx);
            }
        }
        map
    }

    /// Total parameter count: elements of all weight/bias tensors (gradients,
    /// activations and optimizer state excluded).
    pub fn parameter_count(&self) -> u64 {
        self.tensors
            .values()
            .filter(|t| matches!(t.kind, TensorKind::Weight | TensorKind::Bias))
            .map(TensorSpec::elements)
            .sum()
    }

    /// Bytes of all trainable tensors.
    pub fn trainable_bytes(&self) -> u64 {
        self.tensors
            .values()
            .filter(|t| t.trainable)
            .map(TensorSpec::byte_size)
            .sum()
    }

    /// Structural validation: name/reference integrity, producer uniqueness,
    /// arity and attribute exactness per op kind, initializer consistency,
    /// and acyclicity. Shape checks live in [`infer_shapes`].
    pub fn validate(&self) -> Result<()> {
        let mut produced: BTreeMap<&str, &str> = BTreeMap::new();
        let mut node_names: BTreeMap<&str, ()> = BTreeMap::new();
        for node in &self.nodes {
            if node.name.is_empty() {
                return Err(Error::Validation {
                    subject: "<unnamed node>".into(),
                    reason: "empty node name".into(),
                });
            }
            if node_names.insert(&node.name, ()).is_some() {
                return Err(Error::Validation {
                    subject: node.name.clone(),
                    reason: "duplicate node name".into(),
                });
            }
            ops::check_arity(node)?;
            ops::check_attrs(node)?;
            for name in node.inputs.iter().chain(node.outputs.iter()) {
                if !self.tensors.contains_key(name) {
                    return Err(Error::Validation {
                        subject: node.name.clone(),
                        reason: format!("references undeclared tensor `{name}`"),
                    });
                }
            }
            for out in &node.outputs {
                if let Some(prev) = produced.insert(out, &node.name) {
                    return Err(Error::Validation {
                        subject: out.clone(),
                        reason: format!("produced by both `{prev}` and `{}`", node.name),
                    });
                }
            }
        }
        for name in self.inputs.iter().chain(self.outputs.iter()) {
            if !self.tensors.contains_key(name) {
                return Err(Error::UnknownTensor(name.clone()));
            }
        }
        for name in &self.inputs {
            if produced.contains_key(name.as_str()) {
                return Err(Error::Validation {
                    subject: name.clone(),
                    reason: "graph input has a producer node".into(),
                });
            }
        }
        if let Some(loss) = &self.loss {
            if !self.tensors.contains_key(loss) {
                return Err(Error::UnknownTensor(loss.clone()));
            }
        }
        for (name, data) in &self.initializers {
            let spec = self.tensor(name)?;
            if spec.elements() != data.len() as u64 {
                return Err(Error::Validation {
                    subject: name.clone(),
                    reason: format!(
                        "initializer has {} elements, shape {:?} needs {}",
                        data.len(),
                        spec.shape,
                        spec.elements()
                    ),
                });
            }
            if produced.contains_key(name.as_str()) {
                return Err(Error::Validation {
                    subject: name.clone(),
                    reason: "initialized tensor is also produced by a node".into(),
                });
            }
        }
        for (name, spec) in &self.tensors {
            if let Some(of) = &spec.grad_of {
                if !self.tensors.contains_key(of) {
                    return Err(Error::Validation {
                        subject: name.clone(),
                        reason: format!("grad_of references unknown tensor `{of}`"),
                    });
                }
            }
        }
        topo_schedule(self)?;
        Ok(())
    }
}
