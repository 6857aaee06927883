//! Enclosing subgraph construction around a target (student, exercise)
//! interaction.
//!
//! A subgraph holds the target student and exercise, the other exercises of
//! the target's subsequence, the students who attempted the target exercise,
//! and the KCs of every selected exercise. Every interaction between a
//! selected student and a selected exercise becomes a pair of directed edges,
//! except interactions between the target student and the target exercise.
//! A receive-only virtual node summarizes the whole subgraph.

mod codec;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::store::{ExerciseId, Interaction, InteractionLog, KcId, StudentId, Subsequence};

pub use codec::{decode_batch, encode_batch, BATCH_MAGIC, BATCH_VERSION};

/// Width of the one-hot node features.
pub const LABEL_COUNT: usize = 6;
/// Width of [`EdgeFeatureVector`].
pub const EDGE_FEATURES: usize = 4;
/// Previous-interaction counts saturate here before normalization.
pub const PREV_COUNT_CAP: u32 = 128;

/// Role of a node, which doubles as its initial one-hot feature.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[repr(u8)]
pub enum NodeLabel {
    TargetStudent = 0,
    TargetExercise = 1,
    NeighborStudent = 2,
    ContextExercise = 3,
    /// KC of the target exercise.
    TargetKc = 4,
    /// KC attached only to context exercises.
    ContextKc = 5,
}

impl NodeLabel {
    pub fn from_u8(value: u8) -> Result<Self> {
        Ok(match value {
            0 => Self::TargetStudent,
            1 => Self::TargetExercise,
            2 => Self::NeighborStudent,
            3 => Self::ContextExercise,
            4 => Self::TargetKc,
            5 => Self::ContextKc,
            other => {
                return Err(Error::MalformedSubgraph(format!(
                    "node label {other} outside 0..{LABEL_COUNT}"
                )))
            }
        })
    }

    /// Coarse student/exercise/KC kind.
    pub fn kind(self) -> u8 {
        match self {
            Self::TargetStudent | Self::NeighborStudent => 0,
            Self::TargetExercise | Self::ContextExercise => 1,
            Self::TargetKc | Self::ContextKc => 2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NodeKey {
    Student(StudentId),
    Exercise(ExerciseId),
    Kc(KcId),
}

/// How nodes are typed on their edge into the virtual node.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeTypeScheme {
    /// One type per node label (six types).
    #[default]
    Labels,
    /// Student, exercise, KC (three types).
    Kinds,
}

impl NodeTypeScheme {
    pub fn count(self) -> usize {
        match self {
            Self::Labels => LABEL_COUNT,
            Self::Kinds => 3,
        }
    }

    pub fn type_of(self, label: NodeLabel) -> u8 {
        match self {
            Self::Labels => label as u8,
            Self::Kinds => label.kind(),
        }
    }
}

/// `[is_interaction, ts_norm, prev_norm, response]`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EdgeFeatureVector {
    pub is_interaction: f32,
    pub ts_norm: f32,
    pub prev_norm: f32,
    pub response: f32,
}

impl EdgeFeatureVector {
    pub const KC_LINK: Self = Self {
        is_interaction: 0.0,
        ts_norm: 0.0,
        prev_norm: 0.0,
        response: 0.0,
    };

    pub fn to_array(self) -> [f32; EDGE_FEATURES] {
        [self.is_interaction, self.ts_norm, self.prev_norm, self.response]
    }

    pub fn from_array(a: [f32; EDGE_FEATURES]) -> Self {
        Self {
            is_interaction: a[0],
            ts_norm: a[1],
            prev_norm: a[2],
            response: a[3],
        }
    }
}

/// Which interaction-edge channels are kept; masked channels read as zero.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureMask {
    pub timestamp: bool,
    pub prev_count: bool,
}

impl Default for FeatureMask {
    fn default() -> Self {
        Self {
            timestamp: true,
            prev_count: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubgraphConfig {
    /// Most-recent-first cap on neighbor students; `None` disables it.
    pub neighbor_cap: Option<usize>,
    pub include_kcs: bool,
    pub virtual_node: bool,
    pub node_types: NodeTypeScheme,
    pub feature_mask: FeatureMask,
}

impl Default for SubgraphConfig {
    fn default() -> Self {
        Self {
            neighbor_cap: Some(32),
            include_kcs: true,
            virtual_node: true,
            node_types: NodeTypeScheme::Labels,
            feature_mask: FeatureMask::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub src: u32,
    pub dst: u32,
    pub feature: EdgeFeatureVector,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnclosingSubgraph {
    /// Real nodes. The virtual node, when present, is implicit at index
    /// `nodes.len()`.
    pub nodes: Vec<NodeKey>,
    pub labels: Vec<NodeLabel>,
    /// Directed edges between real nodes, both directions materialized.
    pub edges: Vec<Edge>,
    /// Type of each real node's edge into the virtual node; empty when the
    /// subgraph has no virtual node.
    pub global_types: Vec<u8>,
    pub type_count: u8,
    /// (target student node, target exercise node).
    pub target: (u32, u32),
    pub label: bool,
    pub target_timestamp: i64,
}

/// The target interaction at `position` of a subsequence.
#[derive(Clone, Copy, Debug)]
pub struct Target<'a> {
    pub subsequence: &'a Subsequence,
    pub position: usize,
}

impl<'a> Target<'a> {
    pub fn new(subsequence: &'a Subsequence, position: usize) -> Result<Self> {
        if position >= subsequence.rows.len() {
            return Err(Error::InvalidArgument(format!(
                "target position {position} outside a subsequence of {}",
                subsequence.rows.len()
            )));
        }
        Ok(Self {
            subsequence,
            position,
        })
    }

    pub fn interaction(&self) -> &'a Interaction {
        &self.subsequence.rows[self.position]
    }
}

/// Node groups chosen for a target, before edges are added.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SelectedNodes {
    pub student: StudentId,
    pub exercise: ExerciseId,
    pub neighbors: Vec<StudentId>,
    pub context: Vec<ExerciseId>,
    /// KCs with label [`NodeLabel::TargetKc`] or [`NodeLabel::ContextKc`].
    pub kcs: Vec<(KcId, NodeLabel)>,
}

impl SelectedNodes {
    /// Node keys and labels in subgraph order: target student, target
    /// exercise, neighbor students, context exercises, KCs.
    pub fn ordered(&self) -> (Vec<NodeKey>, Vec<NodeLabel>) {
        let mut keys = vec![NodeKey::Student(self.student), NodeKey::Exercise(self.exercise)];
        let mut labels = vec![NodeLabel::TargetStudent, NodeLabel::TargetExercise];
        for &s in &self.neighbors {
            keys.push(NodeKey::Student(s));
            labels.push(NodeLabel::NeighborStudent);
        }
        for &e in &self.context {
            keys.push(NodeKey::Exercise(e));
            labels.push(NodeLabel::ContextExercise);
        }
        for &(k, label) in &self.kcs {
            keys.push(NodeKey::Kc(k));
            labels.push(label);
        }
        (keys, labels)
    }
}

pub fn select_nodes(log: &InteractionLog, target: Target<'_>, config: &SubgraphConfig) -> SelectedNodes {
    let row = target.interaction();
    let (student, exercise) = (row.student, row.exercise);

    let mut context = Vec::new();
    for (i, r) in target.subsequence.rows.iter().enumerate() {
        if i != target.position && r.exercise != exercise && !context.contains(&r.exercise) {
            context.push(r.exercise);
        }
    }

    let mut latest: HashMap<StudentId, i64> = HashMap::new();
    for r in log.exercise_rows(exercise) {
        if r.student != student {
            let t = latest.entry(r.student).or_insert(r.timestamp);
            *t = (*t).max(r.timestamp);
        }
    }
    let mut neighbors: Vec<(StudentId, i64)> = latest.into_iter().collect();
    neighbors.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    if let Some(cap) = config.neighbor_cap {
        neighbors.truncate(cap);
    }

    let mut kcs: Vec<(KcId, NodeLabel)> = Vec::new();
    if config.include_kcs {
        for &k in log.kcs_of(exercise) {
            kcs.push((k, NodeLabel::TargetKc));
        }
        for &e in &context {
            for &k in log.kcs_of(e) {
                if !kcs.iter().any(|(known, _)| *known == k) {
                    kcs.push((k, NodeLabel::ContextKc));
                }
            }
        }
    }

    SelectedNodes {
        student,
        exercise,
        neighbors: neighbors.into_iter().map(|(s, _)| s).collect(),
        context,
        kcs,
    }
}

/// An undirected relation between two selected nodes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Link {
    /// Student node, exercise node, and the interaction behind it.
    Interaction(u32, u32, Interaction),
    /// Exercise node, KC node.
    Kc(u32, u32),
}

/// Enumerates relations among the selected nodes, excluding every
/// interaction between the target student and the target exercise.
pub fn build_links(log: &InteractionLog, selected: &SelectedNodes) -> Vec<Link> {
    let (keys, _) = selected.ordered();
    let index: HashMap<NodeKey, u32> = keys.iter().enumerate().map(|(i, &k)| (k, i as u32)).collect();

    let mut links = Vec::new();
    for (si, key) in keys.iter().enumerate() {
        let NodeKey::Student(s) = *key else { continue };
        for r in log.student_rows(s) {
            if s == selected.student && r.exercise == selected.exercise {
                continue;
            }
            if let Some(&ei) = index.get(&NodeKey::Exercise(r.exercise)) {
                links.push(Link::Interaction(si as u32, ei, *r));
            }
        }
    }
    for (ei, key) in keys.iter().enumerate() {
        let NodeKey::Exercise(e) = *key else { continue };
        for &k in log.kcs_of(e) {
            if let Some(&ki) = index.get(&NodeKey::Kc(k)) {
                links.push(Link::Kc(ei as u32, ki));
            }
        }
    }
    links
}

/// Features of one interaction edge. `ts_abs_min`/`ts_abs_max` span the
/// subgraph's interaction edges; equal bounds give `ts_norm = 1`.
pub fn compute_edge_feature(
    interaction: &Interaction,
    target_timestamp: i64,
    ts_abs_min: i64,
    ts_abs_max: i64,
    prev_count: u32,
) -> EdgeFeatureVector {
    let ts_abs = (target_timestamp - interaction.timestamp).abs();
    let ts_norm = if ts_abs_max == ts_abs_min {
        1.0
    } else {
        1.0 - (ts_abs - ts_abs_min) as f64 / (ts_abs_max - ts_abs_min) as f64
    };
    let prev_norm = prev_count.min(PREV_COUNT_CAP) as f64 / PREV_COUNT_CAP as f64;
    EdgeFeatureVector {
        is_interaction: 1.0,
        ts_norm: ts_norm as f32,
        prev_norm: prev_norm as f32,
        response: if interaction.response { 1.0 } else { 0.0 },
    }
}

/// Turns links into directed edges (both directions, identical features).
pub fn build_edges(links: &[Link], target_timestamp: i64, mask: FeatureMask) -> Vec<Edge> {
    let ts_abs = links.iter().filter_map(|l| match l {
        Link::Interaction(_, _, r) => Some((target_timestamp - r.timestamp).abs()),
        Link::Kc(..) => None,
    });
    let (lo, hi) = ts_abs.fold((i64::MAX, i64::MIN), |(lo, hi), t| (lo.min(t), hi.max(t)));

    let mut edges = Vec::with_capacity(links.len() * 2);
    for link in links {
        let (a, b, feature) = match *link {
            Link::Interaction(s, e, r) => {
                let mut f = compute_edge_feature(&r, target_timestamp, lo, hi, r.prior_count);
                if !mask.timestamp {
                    f.ts_norm = 0.0;
                }
                if !mask.prev_count {
                    f.prev_norm = 0.0;
                }
                (s, e, f)
            }
            Link::Kc(e, k) => (e, k, EdgeFeatureVector::KC_LINK),
        };
        edges.push(Edge {
            src: a,
            dst: b,
            feature,
        });
        edges.push(Edge {
            src: b,
            dst: a,
            feature,
        });
    }
    edges
}

/// `|V|×6` one-hot rows, plus a trailing zero row for the virtual node.
pub fn one_hot_node_features(labels: &[u8], virtual_node: bool) -> Result<Tensor> {
    let rows = labels.len() + usize::from(virtual_node);
    let mut out = Tensor::zeros(rows, LABEL_COUNT);
    for (i, &label) in labels.iter().enumerate() {
        let label = NodeLabel::from_u8(label)?;
        out.set(i, label as usize, 1.0);
    }
    Ok(out)
}

/// Adds the virtual node: one typed edge from every real node into it.
pub fn attach_subgraph_node(graph: &mut EnclosingSubgraph, scheme: NodeTypeScheme) -> Result<()> {
    if graph.nodes.len() < 2 {
        return Err(Error::MalformedSubgraph(format!(
            "virtual node needs at least 2 real nodes, found {}",
            graph.nodes.len()
        )));
    }
    graph.type_count = scheme.count() as u8;
    graph.global_types = graph.labels.iter().map(|&l| scheme.type_of(l)).collect();
    Ok(())
}

/// Full construction for one target. Deterministic in its inputs.
pub fn build(log: &InteractionLog, target: Target<'_>, config: &SubgraphConfig) -> Result<EnclosingSubgraph> {
    let selected = select_nodes(log, target, config);
    let links = build_links(log, &selected);
    let row = target.interaction();
    let edges = build_edges(&links, row.timestamp, config.feature_mask);
    let (nodes, labels) = selected.ordered();
    let mut graph = EnclosingSubgraph {
        nodes,
        labels,
        edges,
        global_types: Vec::new(),
        type_count: config.node_types.count() as u8,
        target: (0, 1),
        label: row.response,
        target_timestamp: row.timestamp,
    };
    if config.virtual_node {
        attach_subgraph_node(&mut graph, config.node_types)?;
    }
    Ok(graph)
}

impl EnclosingSubgraph {
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn has_virtual_node(&self) -> bool {
        !self.global_types.is_empty()
    }

    pub fn virtual_index(&self) -> Option<usize> {
        self.has_virtual_node().then_some(self.nodes.len())
    }

    pub fn node_features(&self) -> Tensor {
        let labels: Vec<u8> = self.labels.iter().map(|&l| l as u8).collect();
        one_hot_node_features(&labels, self.has_virtual_node()).expect("labels are valid by type")
    }

    /// `(src, virtual node, one-hot type)` for each global edge.
    pub fn global_edges(&self) -> impl Iterator<Item = (usize, usize, Vec<f64>)> + '_ {
        let g = self.nodes.len();
        self.global_types.iter().enumerate().map(move |(v, &t)| {
            let mut onehot = vec![0.0; self.type_count as usize];
            onehot[t as usize] = 1.0;
            (v, g, onehot)
        })
    }

    pub fn interaction_edge_count(&self) -> usize {
        self.edges.iter().filter(|e| e.feature.is_interaction > 0.0).count()
    }

    /// Checks the structural invariants.
    pub fn validate(&self) -> Result<()> {
        let n = self.nodes.len();
        let bad = |msg: String| Err(Error::MalformedSubgraph(msg));
        if self.labels.len() != n {
            return bad(format!("{} labels for {n} nodes", self.labels.len()));
        }
        let (s, e) = (self.target.0 as usize, self.target.1 as usize);
        if s >= n || e >= n {
            return bad(format!("target indices {:?} outside {n} nodes", self.target));
        }
        if self.labels[s] != NodeLabel::TargetStudent || self.labels[e] != NodeLabel::TargetExercise {
            return bad("target indices do not point at the label-0 and label-1 nodes".into());
        }
        let count = |l: NodeLabel| self.labels.iter().filter(|&&x| x == l).count();
        if count(NodeLabel::TargetStudent) != 1 || count(NodeLabel::TargetExercise) != 1 {
            return bad("expected exactly one target student and one target exercise".into());
        }
        for edge in &self.edges {
            if edge.src as usize >= n || edge.dst as usize >= n {
                return bad(format!("edge {}->{} outside {n} nodes", edge.src, edge.dst));
            }
            let pair = (edge.src as usize, edge.dst as usize);
            if pair == (s, e) || pair == (e, s) {
                return bad("target student and exercise are connected".into());
            }
        }
        if self.has_virtual_node() {
            if self.global_types.len() != n {
                return bad(format!("{} global edges for {n} nodes", self.global_types.len()));
            }
            if self.global_types.iter().any(|&t| t >= self.type_count) {
                return bad("global edge type out of range".into());
            }
        }
        Ok(())
    }

    /// Relabels nodes so that old node `i` becomes node `perm[i]`.
    pub fn permute(&self, perm: &[usize]) -> Result<Self> {
        let n = self.nodes.len();
        let mut seen = vec![false; n];
        if perm.len() != n || perm.iter().any(|&p| p >= n || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::InvalidArgument(format!(
                "not a permutation of {n} nodes"
            )));
        }
        let mut nodes = self.nodes.clone();
        let mut labels = self.labels.clone();
        let mut global_types = self.global_types.clone();
        for (old, &new) in perm.iter().enumerate() {
            nodes[new] = self.nodes[old];
            labels[new] = self.labels[old];
            if self.has_virtual_node() {
                global_types[new] = self.global_types[old];
            }
        }
        let edges = self
            .edges
            .iter()
            .map(|e| Edge {
                src: perm[e.src as usize] as u32,
                dst: perm[e.dst as usize] as u32,
                feature: e.feature,
            })
            .collect();
        Ok(Self {
            nodes,
            labels,
            edges,
            global_types,
            type_count: self.type_count,
            target: (perm[self.target.0 as usize] as u32, perm[self.target.1 as usize] as u32),
            label: self.label,
            target_timestamp: self.target_timestamp,
        })
    }

    pub fn to_debug_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}
