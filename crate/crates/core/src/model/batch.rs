use std::sync::Arc;

use crate::autodiff::{Segments, Tensor};
use crate::error::{Error, Result};
use crate::subgraph::{EnclosingSubgraph, EDGE_FEATURES, LABEL_COUNT};

/// Disjoint union of subgraphs, flattened for the tape's segment ops.
///
/// Real nodes of graph `g` occupy rows `offsets[g]..offsets[g + 1]`. The
/// virtual nodes are not rows here; they are the `graph_count` segments of
/// `node_graph`.
#[derive(Clone, Debug)]
pub struct GraphBatch {
    pub graph_count: usize,
    pub offsets: Vec<usize>,
    /// `N×6` one-hot labels of the real nodes.
    pub node_features: Tensor,
    /// `E×4` directed edge features.
    pub edge_features: Tensor,
    pub edge_src: Arc<[u32]>,
    pub edge_dst: Arc<[u32]>,
    /// Edges grouped by destination node.
    pub edge_segments: Arc<Segments>,
    /// Real nodes grouped by graph.
    pub node_graph: Arc<Segments>,
    /// `N×μ` one-hot virtual-edge types; `None` when any graph lacks a
    /// virtual node.
    pub type_features: Option<Tensor>,
    pub target_students: Arc<[u32]>,
    pub target_exercises: Arc<[u32]>,
    pub labels: Vec<f64>,
}

impl GraphBatch {
    pub fn new(graphs: &[&EnclosingSubgraph]) -> Result<Self> {
        Self::assemble(graphs, true)
    }

    pub(crate) fn assemble(graphs: &[&EnclosingSubgraph], validate: bool) -> Result<Self> {
        if graphs.is_empty() {
            return Err(Error::InvalidArgument("empty subgraph batch".into()));
        }
        let type_count = graphs[0].type_count as usize;
        let with_types = graphs.iter().all(|g| g.has_virtual_node() && g.type_count as usize == type_count);

        let nodes: usize = graphs.iter().map(|g| g.node_count()).sum();
        let edges: usize = graphs.iter().map(|g| g.edges.len()).sum();
        let mut offsets = Vec::with_capacity(graphs.len() + 1);
        let mut node_features = Tensor::zeros(nodes, LABEL_COUNT);
        let mut type_features = Tensor::zeros(if with_types { nodes } else { 0 }, type_count);
        let mut edge_features = Tensor::zeros(edges, EDGE_FEATURES);
        let mut src = Vec::with_capacity(edges);
        let mut dst = Vec::with_capacity(edges);
        let mut node_graph = Vec::with_capacity(nodes);
        let mut students = Vec::with_capacity(graphs.len());
        let mut exercises = Vec::with_capacity(graphs.len());
        let mut labels = Vec::with_capacity(graphs.len());

        let mut base = 0usize;
        for (gi, g) in graphs.iter().enumerate() {
            if validate {
                g.validate()?;
            }
            offsets.push(base);
            for (i, &label) in g.labels.iter().enumerate() {
                node_features.set(base + i, label as usize, 1.0);
                node_graph.push(gi as u32);
                if with_types {
                    type_features.set(base + i, g.global_types[i] as usize, 1.0);
                }
            }
            for e in &g.edges {
                let row = src.len();
                src.push((base + e.src as usize) as u32);
                dst.push((base + e.dst as usize) as u32);
                let f = e.feature.to_array();
                for (c, &v) in f.iter().enumerate() {
                    edge_features.set(row, c, v as f64);
                }
            }
            students.push((base + g.target.0 as usize) as u32);
            exercises.push((base + g.target.1 as usize) as u32);
            labels.push(if g.label { 1.0 } else { 0.0 });
            base += g.node_count();
        }
        offsets.push(base);

        Ok(Self {
            graph_count: graphs.len(),
            offsets,
            node_features,
            edge_features,
            edge_segments: Arc::new(Segments::new(dst.clone(), nodes)?),
            edge_src: src.into(),
            edge_dst: dst.into(),
            node_graph: Arc::new(Segments::new(node_graph, graphs.len())?),
            type_features: with_types.then_some(type_features),
            target_students: students.into(),
            target_exercises: exercises.into(),
            labels,
        })
    }

    pub fn node_count(&self) -> usize {
        self.node_features.rows()
    }

    pub fn edge_count(&self) -> usize {
        self.edge_features.rows()
    }

    /// `E×K` weights `1/in-degree(dst)`, the attention-free local average.
    pub fn uniform_edge_weights(&self, heads: usize) -> Tensor {
        let deg = self.edge_segments.sizes();
        let mut out = Tensor::zeros(self.edge_count(), heads);
        for (e, &d) in self.edge_dst.iter().enumerate() {
            out.row_mut(e).fill(1.0 / deg[d as usize] as f64);
        }
        out
    }

    /// `N×K` weights `1/|nodes in graph|`, the attention-free global mean.
    pub fn uniform_node_weights(&self, heads: usize) -> Tensor {
        let sizes = self.node_graph.sizes();
        let mut out = Tensor::zeros(self.node_count(), heads);
        for (v, &g) in self.node_graph.ids().iter().enumerate() {
            out.row_mut(v).fill(1.0 / sizes[g as usize] as f64);
        }
        out
    }
}
