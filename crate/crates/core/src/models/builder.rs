//! Small fluent helper for assembling graphs by hand.
//!
//! Node names get a monotonically increasing `fw{idx:03}_` prefix so the
//! deterministic scheduler visits layers in construction order and backward
//! indices line up with forward ones.

use std::collections::BTreeMap;

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::ir::{AttrValue, DType, Graph, NodeSpec, OpKind, TensorKind, TensorSpec};

pub struct GraphBuilder {
    g: Graph,
    next: usize,
    rng: ChaCha8Rng,
}

impl GraphBuilder {
    pub fn new(seed: u64) -> Self {
        GraphBuilder {
            g: Graph::default(),
            next: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn input(&mut self, name: &str, shape: &[usize]) -> String {
        self.g
            .tensors
            .insert(name.into(), TensorSpec::new(shape.to_vec(), TensorKind::Input));
        self.g.inputs.push(name.into());
        name.into()
    }

    /// Trainable parameter initialized from U(-bound, bound).
    pub fn param(&mut self, name: &str, shape: &[usize], kind: TensorKind, bound: f64) -> String {
        let mut spec = TensorSpec::new(shape.to_vec(), kind);
        spec.trainable = true;
        let n = spec.elements() as usize;
        let data = if bound == 0.0 {
            vec![0.0f32; n]
        } else {
            let dist = Uniform::new_inclusive(-bound, bound);
            (0..n).map(|_| dist.sample(&mut self.rng) as f32).collect()
        };
        self.g.tensors.insert(name.into(), spec);
        self.g.initializers.insert(name.into(), data);
        name.into()
    }

    pub fn weight(&mut self, name: &str, shape: &[usize]) -> String {
        let fan_in: usize = shape[1..].iter().product::<usize>().max(1);
        let bound = (1.0 / fan_in as f64).sqrt();
        self.param(name, shape, TensorKind::Weight, bound)
    }

    pub fn bias(&mut self, name: &str, len: usize) -> String {
        self.param(name, &[len], TensorKind::Bias, 0.0)
    }

    /// Explicit initializer values (used by tests and adapter init).
    pub fn param_with(&mut self, name: &str, shape: &[usize], kind: TensorKind, data: Vec<f32>) -> String {
        let mut spec = TensorSpec::new(shape.to_vec(), kind);
        spec.trainable = true;
        assert_eq!(spec.elements() as usize, data.len(), "initializer length for {name}");
        self.g.tensors.insert(name.into(), spec);
        self.g.initializers.insert(name.into(), data);
        name.into()
    }

    fn activation(&mut self, name: &str) -> String {
        self.g
            .tensors
            .insert(name.into(), TensorSpec::new(Vec::new(), TensorKind::Activation));
        name.into()
    }

    pub fn node(
        &mut self,
        op: OpKind,
        tag: &str,
        attrs: BTreeMap<String, AttrValue>,
        inputs: &[&str],
        outputs: &[&str],
    ) {
        let name = format!("fw{:03}_{tag}", self.next);
        self.next += 1;
        for out in outputs {
            if !self.g.tensors.contains_key(**&out as &str) {
                self.activation(out);
            }
        }
        self.g.nodes.push(NodeSpec {
            name,
            op,
            attrs,
            inputs: inputs.iter().map(|s| s.to_string()).collect(),
            outputs: outputs.iter().map(|s| s.to_string()).collect(),
        });
    }

    pub fn gemm(&mut self, tag: &str, a: &str, b: &str, bias: Option<&str>, ta: bool, tb: bool, out: &str) -> String {
        let attrs: BTreeMap<String, AttrValue> = [
            ("trans_a".to_string(), AttrValue::Int(ta as i64)),
            ("trans_b".to_string(), AttrValue::Int(tb as i64)),
        ]
        .into_iter()
        .collect();
        let mut inputs = vec![a, b];
        if let Some(c) = bias {
            inputs.push(c);
        }
        self.node(OpKind::Gemm, tag, attrs, &inputs, &[out]);
        out.into()
    }

    pub fn conv(&mut self, tag: &str, x: &str, w: &str, b: &str, kernel: i64, stride: i64, padding: i64, out: &str) -> String {
        let attrs: BTreeMap<String, AttrValue> = [
            ("kernel".to_string(), AttrValue::Int(kernel)),
            ("stride".to_string(), AttrValue::Int(stride)),
            ("padding".to_string(), AttrValue::Int(padding)),
        ]
        .into_iter()
        .collect();
        let col = format!("{out}.col");
        self.node(OpKind::Conv2D, tag, attrs, &[x, w, b], &[out, &col]);
        out.into()
    }

    pub fn maxpool(&mut self, tag: &str, x: &str, kernel: i64, stride: i64, padding: i64, out: &str) -> String {
        let attrs: BTreeMap<String, AttrValue> = [
            ("kernel".to_string(), AttrValue::Int(kernel)),
            ("stride".to_string(), AttrValue::Int(stride)),
            ("padding".to_string(), AttrValue::Int(padding)),
        ]
        .into_iter()
        .collect();
        self.node(OpKind::MaxPool2D, tag, attrs, &[x], &[out]);
        out.into()
    }

    pub fn unary(&mut self, op: OpKind, tag: &str, x: &str, out: &str) -> String {
        self.node(op, tag, BTreeMap::new(), &[x], &[out]);
        out.into()
    }

    pub fn add(&mut self, tag: &str, a: &str, b: &str, out: &str) -> String {
        self.node(OpKind::Add, tag, BTreeMap::new(), &[a, b], &[out]);
        out.into()
    }

    pub fn softmax(&mut self, tag: &str, x: &str, axis: i64, out: &str) -> String {
        let attrs = [("axis".to_string(), AttrValue::Int(axis))].into_iter().collect();
        self.node(OpKind::Softmax, tag, attrs, &[x], &[out]);
        out.into()
    }

    pub fn layernorm(&mut self, tag: &str, x: &str, gamma: &str, beta: &str, out: &str) -> String {
        let attrs = [("eps".to_string(), AttrValue::Float(1e-5))].into_iter().collect();
        self.node(OpKind::LayerNorm, tag, attrs, &[x, gamma, beta], &[out]);
        out.into()
    }

    pub fn transpose(&mut self, tag: &str, x: &str, perm: &[i64], out: &str) -> String {
        let attrs = [("perm".to_string(), AttrValue::Ints(perm.to_vec()))].into_iter().collect();
        self.node(OpKind::Transpose, tag, attrs, &[x], &[out]);
        out.into()
    }

    pub fn reshape(&mut self, tag: &str, x: &str, shape: &[i64], out: &str) -> String {
        let attrs = [("shape".to_string(), AttrValue::Ints(shape.to_vec()))].into_iter().collect();
        self.node(OpKind::Reshape, tag, attrs, &[x], &[out]);
        out.into()
    }

    pub fn slice(&mut self, tag: &str, x: &str, axis: i64, start: i64, end: i64, out: &str) -> String {
        let attrs: BTreeMap<String, AttrValue> = [
            ("axis".to_string(), AttrValue::Int(axis)),
            ("start".to_string(), AttrValue::Int(start)),
            ("end".to_string(), AttrValue::Int(end)),
        ]
        .into_iter()
        .collect();
        self.node(OpKind::Slice, tag, attrs, &[x], &[out]);
        out.into()
    }

    pub fn scale(&mut self, tag: &str, x: &str, factor: f64, out: &str) -> String {
        let attrs = [("factor".to_string(), AttrValue::Float(factor))].into_iter().collect();
        self.node(OpKind::Scale, tag, attrs, &[x], &[out]);
        out.into()
    }

    /// Mark `name` non-trainable after the fact (used by tuning presets).
    pub fn freeze(&mut self, name: &str) {
        if let Some(t) = self.g.tensors.get_mut(name) {
            t.trainable = false;
        }
    }

    pub fn finish(mut self, outputs: &[&str]) -> crate::Result<Graph> {
        self.g.outputs = outputs.iter().map(|s| s.to_string()).collect();
        crate::ir::infer_shapes(&mut self.g)?;
        self.g.validate()?;
        Ok(self.g)
    }

    pub fn graph_mut(&mut self) -> &mut Graph {
        &mut self.g
    }

    pub fn fill(&mut self, lo: f64, hi: f64, n: usize) -> Vec<f32> {
        let dist = Uniform::new(lo, hi);
        (0..n).map(|_| dist.sample(&mut self.rng) as f32).collect()
    }

    pub fn dtype_of(&self, name: &str) -> Option<DType> {
        self.g.tensors.get(name).map(|t| t.dtype)
    }
}
