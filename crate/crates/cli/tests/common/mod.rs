//! Exhaustive re-derivation of the enclosing-subgraph rule from raw string
//! records, sharing no code with the builder.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use dgakt::store::{RawInteraction, Vocabulary};
use dgakt::subgraph::{EnclosingSubgraph, NodeKey};

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Key {
    Student(String),
    Exercise(String),
    Kc(String),
}

/// Edge as (src, dst, features); features stored at single precision like
/// the builder's.
pub type OracleEdge = (Key, Key, [f64; 4]);

#[derive(Debug)]
pub struct OracleGraph {
    pub nodes: BTreeMap<Key, u8>,
    pub edges: Vec<OracleEdge>,
    pub label: bool,
}

fn single(x: f64) -> f64 {
    x as f32 as f64
}

fn sort_edges(edges: &mut [OracleEdge]) {
    edges.sort_by(|a, b| {
        (&a.0, &a.1)
            .cmp(&(&b.0, &b.1))
            .then_with(|| a.2.partial_cmp(&b.2).expect("finite features"))
    });
}

impl OracleGraph {
    /// Same nodes and labels, and the same edge multiset with features
    /// within `tol`.
    pub fn matches(&self, other: &OracleGraph, tol: f64) -> Result<(), String> {
        if self.nodes != other.nodes {
            return Err(format!("nodes differ: {:?} vs {:?}", self.nodes, other.nodes));
        }
        if self.label != other.label {
            return Err("labels differ".into());
        }
        if self.edges.len() != other.edges.len() {
            return Err(format!("edge counts differ: {} vs {}", self.edges.len(), other.edges.len()));
        }
        for (a, b) in self.edges.iter().zip(&other.edges) {
            let close = a.2.iter().zip(&b.2).all(|(x, y)| (x - y).abs() <= tol);
            if a.0 != b.0 || a.1 != b.1 || !close {
                return Err(format!("edge {a:?} vs {b:?}"));
            }
        }
        Ok(())
    }
}

/// Record indices in chronological order; ties keep input order.
pub fn chronological(records: &[RawInteraction]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..records.len()).collect();
    // Insertion sort: stable by construction.
    for i in 1..order.len() {
        let mut j = i;
        while j > 0 && records[order[j - 1]].timestamp > records[order[j]].timestamp {
            order.swap(j - 1, j);
            j -= 1;
        }
    }
    order
}

/// `target` and `subsequence` index into `records`; every record is visible.
pub fn enumerate(
    records: &[RawInteraction],
    subsequence: &[usize],
    target: usize,
    include_kcs: bool,
) -> OracleGraph {
    let order = chronological(records);
    let mut prior = vec![0u32; records.len()];
    for (pos, &i) in order.iter().enumerate() {
        prior[i] = order[..pos]
            .iter()
            .filter(|&&j| records[j].student_id == records[i].student_id)
            .count() as u32;
    }
    let kcs_of = |exercise: &str| -> BTreeSet<String> {
        records
            .iter()
            .find(|r| r.exercise_id == exercise)
            .map(|r| r.kc_ids.iter().cloned().collect())
            .unwrap_or_default()
    };

    let t = &records[target];
    let mut nodes = BTreeMap::new();
    nodes.insert(Key::Student(t.student_id.clone()), 0u8);
    nodes.insert(Key::Exercise(t.exercise_id.clone()), 1);
    for r in records {
        if r.exercise_id == t.exercise_id && r.student_id != t.student_id {
            nodes.insert(Key::Student(r.student_id.clone()), 2);
        }
    }
    for &i in subsequence {
        if records[i].exercise_id != t.exercise_id {
            nodes.insert(Key::Exercise(records[i].exercise_id.clone()), 3);
        }
    }
    let exercises: Vec<String> = nodes
        .keys()
        .filter_map(|k| match k {
            Key::Exercise(e) => Some(e.clone()),
            _ => None,
        })
        .collect();
    let target_kcs = kcs_of(&t.exercise_id);
    if include_kcs {
        for e in &exercises {
            for k in kcs_of(e) {
                let label = if target_kcs.contains(&k) { 4 } else { 5 };
                nodes.insert(Key::Kc(k), label);
            }
        }
    }

    let linked: Vec<usize> = (0..records.len())
        .filter(|&i| {
            let r = &records[i];
            let s = Key::Student(r.student_id.clone());
            let e = Key::Exercise(r.exercise_id.clone());
            nodes.contains_key(&s)
                && nodes.contains_key(&e)
                && !(r.student_id == t.student_id && r.exercise_id == t.exercise_id)
        })
        .collect();
    let dist = |i: usize| (t.timestamp - records[i].timestamp).abs() as f64;
    let lo = linked.iter().map(|&i| dist(i)).fold(f64::INFINITY, f64::min);
    let hi = linked.iter().map(|&i| dist(i)).fold(f64::NEG_INFINITY, f64::max);

    let mut edges = Vec::new();
    for &i in &linked {
        let r = &records[i];
        let ts = if hi == lo { 1.0 } else { 1.0 - (dist(i) - lo) / (hi - lo) };
        let prev = f64::from(prior[i].min(128)) / 128.0;
        let f = [1.0, single(ts), single(prev), f64::from(r.response)];
        let s = Key::Student(r.student_id.clone());
        let e = Key::Exercise(r.exercise_id.clone());
        edges.push((s.clone(), e.clone(), f));
        edges.push((e, s, f));
    }
    if include_kcs {
        for e in &exercises {
            for k in kcs_of(e) {
                let (a, b) = (Key::Exercise(e.clone()), Key::Kc(k));
                edges.push((a.clone(), b.clone(), [0.0; 4]));
                edges.push((b, a, [0.0; 4]));
            }
        }
    }
    sort_edges(&mut edges);
    OracleGraph {
        nodes,
        edges,
        label: t.response == 1,
    }
}

/// The builder's output in the oracle's terms.
pub fn from_builder(graph: &EnclosingSubgraph, vocab: &Vocabulary) -> OracleGraph {
    let key = |k: NodeKey| match k {
        NodeKey::Student(s) => Key::Student(vocab.student_name(s).to_owned()),
        NodeKey::Exercise(e) => Key::Exercise(vocab.exercise_name(e).to_owned()),
        NodeKey::Kc(c) => Key::Kc(vocab.kc_name(c).to_owned()),
    };
    let nodes = graph
        .nodes
        .iter()
        .zip(&graph.labels)
        .map(|(&k, &l)| (key(k), l as u8))
        .collect();
    let mut edges: Vec<OracleEdge> = graph
        .edges
        .iter()
        .map(|e| {
            let f = e.feature.to_array().map(f64::from);
            (key(graph.nodes[e.src as usize]), key(graph.nodes[e.dst as usize]), f)
        })
        .collect();
    sort_edges(&mut edges);
    OracleGraph {
        nodes,
        edges,
        label: graph.label,
    }
}
