//! Graph serialization: a JSON document plus a binary blob store.
//!
//! The document carries structure under the top-level keys `tensors`,
//! `nodes`, `inputs`, `outputs`, `loss`, `initializers`; initializer payloads
//! are little-endian IEEE-754 FP32 values, row-major, concatenated into one
//! blob with a per-tensor byte offset/length index in the document. Maps are
//! ordered, so serialization is byte-deterministic.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

use super::{Graph, NodeSpec, TensorSpec};

#[derive(Serialize, Deserialize)]
struct BlobRef {
    offset: u64,
    length: u64,
}

#[derive(Serialize, Deserialize)]
struct GraphDoc {
    tensors: BTreeMap<String, TensorSpec>,
    nodes: Vec<NodeSpec>,
    inputs: Vec<String>,
    outputs: Vec<String>,
    loss: Option<String>,
    initializers: BTreeMap<String, BlobRef>,
}

/// Render `graph` as `(json document, blob store)`. Round-trips through
/// [`parse_graph`] to an identical graph.
pub fn serialize_graph(graph: &Graph) -> Result<(String, Vec<u8>)> {
    let mut blob = Vec::new();
    let mut index = BTreeMap::new();
    for (name, data) in &graph.initializers {
        let offset = blob.len() as u64;
        for v in data {
            blob.extend_from_slice(&v.to_le_bytes());
        }
        index.insert(
            name.clone(),
            BlobRef {
                offset,
                length: blob.len() as u64 - offset,
            },
        );
    }
    let doc = GraphDoc {
        tensors: graph.tensors.clone(),
        nodes: graph.nodes.clone(),
        inputs: graph.inputs.clone(),
        outputs: graph.outputs.clone(),
        loss: graph.loss.clone(),
        initializers: index,
    };
    Ok((serde_json::to_string_pretty(&doc)?, blob))
}

/// Parse a graph from its JSON document and blob store, validating structure
/// and initializer bounds.
pub fn parse_graph(json: &str, blob: &[u8]) -> Result<Graph> {
    let doc: GraphDoc =
        serde_json::from_str(json).map_err(|e| Error::Parse(format!("graph document: {e}")))?;
    let mut initializers = BTreeMap::new();
    for (name, blobref) in doc.initializers {
        let start = blobref.offset as usize;
        let end = start + blobref.length as usize;
        if blobref.length % 4 != 0 || end > blob.len() {
            return Err(Error::Parse(format!(
                "initializer `{name}` [{start}, {end}) outside blob of {} bytes or misaligned",
                blob.len()
            )));
        }
        let data: Vec<f32> = blob[start..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        initializers.insert(name, data);
    }
    let graph = Graph {
        tensors: doc.tensors,
        nodes: doc.nodes,
        inputs: doc.inputs,
        outputs: doc.outputs,
        loss: doc.loss,
        initializers,
    };
    graph.validate()?;
    Ok(graph)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{infer_shapes, AttrValue, DType, OpKind, TensorKind};

    fn sample_graph() -> Graph {
        let mut g = Graph::default();
        g.tensors.insert(
            "x".into(),
            TensorSpec::new(vec![1, 4], TensorKind::Input),
        );
        let mut w = TensorSpec::new(vec![4, 3], TensorKind::Weight);
        w.trainable = true;
        g.tensors.insert("w".into(), w);
        g.tensors
            .insert("b".into(), TensorSpec::new(vec![3], TensorKind::Bias));
        g.tensors.insert(
            "y".into(),
            TensorSpec::new(vec![], TensorKind::Activation),
        );
        g.nodes.push(NodeSpec {
            name: "fc".into(),
            op: OpKind::Gemm,
            attrs: [
                ("trans_a".to_string(), AttrValue::Int(0)),
                ("trans_b".to_string(), AttrValue::Int(0)),
            ]
            .into_iter()
            .collect(),
            inputs: vec!["x".into(), "w".into(), "b".into()],
            outputs: vec!["y".into()],
        });
        g.inputs = vec!["x".into()];
        g.outputs = vec!["y".into()];
        g.initializers
            .insert("w".into(), (0..12).map(|i| i as f32 * 0.5).collect());
        g.initializers.insert("b".into(), vec![0.0, -1.0, 2.5]);
        infer_shapes(&mut g).unwrap();
        g
    }

    #[test]
    fn round_trip_is_identity() {
        let g = sample_graph();
        let (json, blob) = serialize_graph(&g).unwrap();
        let parsed = parse_graph(&json, &blob).unwrap();
        assert_eq!(g, parsed);
        // And serialization itself is deterministic.
        let (json2, blob2) = serialize_graph(&parsed).unwrap();
        assert_eq!(json, json2);
        assert_eq!(blob, blob2);
    }

    #[test]
    fn document_has_pinned_top_level_keys() {
        let g = sample_graph();
        let (json, _) = serialize_graph(&g).unwrap();
        let value: serde_json::Value = serde_json::from_str(&json).unwrap();
        for key in ["tensors", "nodes", "inputs", "outputs", "loss", "initializers"] {
            assert!(value.get(key).is_some(), "missing top-level key {key}");
        }
    }

    #[test]
    fn blob_is_little_endian_fp32_with_index() {
        let g = sample_graph();
        let (json, blob) = serialize_graph(&g).unwrap();
        let value: serde_json::Value = serde_json::from_str(&json).unwrap();
        let idx = &value["initializers"]["b"];
        let offset = idx["offset"].as_u64().unwrap() as usize;
        let length = idx["length"].as_u64().unwrap() as usize;
        assert_eq!(length, 12);
        let second = f32::from_le_bytes([
            blob[offset + 4],
            blob[offset + 5],
            blob[offset + 6],
            blob[offset + 7],
        ]);
        assert_eq!(second, -1.0);
    }

    #[test]
    fn out_of_range_blob_ref_is_rejected() {
        let g = sample_graph();
        let (json, blob) = serialize_graph(&g).unwrap();
        let err = parse_graph(&json, &blob[..blob.len() - 4]).unwrap_err();
        assert!(matches!(err, Error::Parse(_)), "{err}");
    }

    #[test]
    fn unknown_tensor_reference_is_rejected() {
        let mut g = sample_graph();
        g.nodes[0].inputs[0] = "ghost".into();
        let (json, blob) = serialize_graph(&g).unwrap();
        let err = parse_graph(&json, &blob).unwrap_err();
        assert!(err.to_string().contains("ghost"), "{err}");
    }

    #[test]
    fn dtype_tags_are_stable() {
        assert_eq!(serde_json::to_string(&DType::F32).unwrap(), "\"fp32\"");
        assert_eq!(serde_json::to_string(&DType::F64).unwrap(), "\"fp64\"");
    }
}
