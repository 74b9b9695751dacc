//! Deterministic topological scheduling.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, BTreeMap};

use crate::{Error, Result};

use super::Graph;

/// Topologically order the nodes of `graph`, breaking ties between
/// simultaneously-ready nodes by lexicographic node name. The result is the
/// canonical execution schedule: liveness analysis, the transfer ledger, the
/// interpreter and the C backend all follow it, so two runs of the pipeline
/// see byte-identical orderings.
///
/// Returns indices into `graph.nodes`. Fails with [`Error::Cycle`] naming one
/// offending cycle if the graph is not a DAG.
pub fn topo_schedule(graph: &Graph) -> Result<Vec<usize>> {
    let producers = graph.producers();
    // Dependency edges: node -> nodes producing its inputs.
    let mut pending: Vec<usize> = vec![0; graph.nodes.len()];
    let mut dependents: Vec<Vec<usize>> = vec![Vec::new(); graph.nodes.len()];
    for (idx, node) in graph.nodes.iter().enumerate() {
        let mut seen = BTreeMap::new();
        for input in &node.inputs {
            if let Some(&p) = producers.get(input.as_str()) {
                // A node reading two outputs of one producer depends on it once.
                if p != idx && seen.insert(p, ()).is_none() {
                    pending[idx] += 1;
                    dependents[p].push(idx);
                }
            }
        }
    }

    let mut ready: BinaryHeap<Reverse<(&str, usize)>> = BinaryHeap::new();
    for (idx, node) in graph.nodes.iter().enumerate() {
        if pending[idx] == 0 {
            ready.push(Reverse((node.name.as_str(), idx)));
        }
    }

    let mut order = Vec::with_capacity(graph.nodes.len());
    while let Some(Reverse((_, idx))) = ready.pop() {
        order.push(idx);
        for &dep in &dependents[idx] {
            pending[dep] -= 1;
            if pending[dep] == 0 {
                ready.push(Reverse((graph.nodes[dep].name.as_str(), dep)));
            }
        }
    }

    if order.len() != graph.nodes.len() {
        return Err(Error::Cycle(describe_cycle(graph, &pending)));
    }
    Ok(order)
}

/// Walk the unscheduled subgraph to print one concrete cycle.
fn describe_cycle(graph: &Graph, pending: &[usize]) -> String {
    let producers = graph.producers();
    let stuck: Vec<usize> = (0..graph.nodes.len()).filter(|&i| pending[i] > 0).collect();
    if stuck.is_empty() {
        return "<unknown>".into();
    }
    // Follow producer edges from a stuck node until a node repeats.
    let mut path = Vec::new();
    let mut seen: BTreeMap<usize, usize> = BTreeMap::new();
    let mut cur = stuck[0];
    loop {
        if let Some(&at) = seen.get(&cur) {
            let names: Vec<&str> = path[at..].iter().map(|&i: &usize| graph.nodes[i].name.as_str()).collect();
            return format!("{} -> {}", names.join(" -> "), names[0]);
        }
        seen.insert(cur, path.len());
        path.push(cur);
        let next = graph.nodes[cur]
            .inputs
            .iter()
            .filter_map(|t| producers.get(t.as_str()).copied())
            .find(|&p| pending[p] > 0);
        match next {
            Some(p) => cur = p,
            None => return graph.nodes[cur].name.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{NodeSpec, OpKind, TensorKind, TensorSpec};
    use std::collections::BTreeMap;

    fn relu(name: &str, input: &str, output: &str) -> NodeSpec {
        NodeSpec {
            name: name.into(),
            op: OpKind::ReLU,
            attrs: BTreeMap::new(),
            inputs: vec![input.into()],
            outputs: vec![output.into()],
        }
    }

    fn add(name: &str, a: &str, b: &str, out: &str) -> NodeSpec {
        NodeSpec {
            name: name.into(),
            op: OpKind::Add,
            attrs: BTreeMap::new(),
            inputs: vec![a.into(), b.into()],
            outputs: vec![out.into()],
        }
    }

    fn graph_with(nodes: Vec<NodeSpec>, tensors: &[&str]) -> Graph {
        let mut g = Graph::default();
        for t in tensors {
            g.tensors.insert(
                t.to_string(),
                TensorSpec::new(vec![4], TensorKind::Activation),
            );
        }
        g.nodes = nodes;
        g
    }

    #[test]
    fn diamond_breaks_ties_lexicographically() {
        // src -> {n2, n1} -> join; n1 and n2 become ready together.
        let g = graph_with(
            vec![
                relu("src", "x", "a"),
                relu("n2", "a", "c"),
                relu("n1", "a", "b"),
                add("join", "b", "c", "y"),
            ],
            &["x", "a", "b", "c", "y"],
        );
        let order = topo_schedule(&g).unwrap();
        let names: Vec<&str> = order.iter().map(|&i| g.nodes[i].name.as_str()).collect();
        assert_eq!(names, vec!["src", "n1", "n2", "join"]);
    }

    #[test]
    fn cycle_is_reported_with_member_names() {
        let g = graph_with(
            vec![relu("p", "b", "a"), relu("q", "a", "b")],
            &["a", "b"],
        );
        let err = topo_schedule(&g).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("cycle"), "{msg}");
        assert!(msg.contains('p') && msg.contains('q'), "{msg}");
    }

    #[test]
    fn schedule_is_stable_across_runs() {
        let g = graph_with(
            vec![
                relu("b", "x", "t1"),
                relu("a", "x", "t2"),
                add("c", "t1", "t2", "y"),
            ],
            &["x", "t1", "t2", "y"],
        );
        let first = topo_schedule(&g).unwrap();
        for _ in 0..10 {
            assert_eq!(topo_schedule(&g).unwrap(), first);
        }
    }
}
