//! Per-target attention export: the subgraph, the final-layer attention of
//! the virtual node over real nodes, and the prediction.

use std::fmt::Write as _;

use dgakt::checkpoint::Checkpoint;
use dgakt::model::{GraphBatch, Model, ModelSpec, PredictionTriple};
use dgakt::store::{InteractionLog, Vocabulary};
use dgakt::subgraph::{self, EnclosingSubgraph, NodeKey, NodeLabel, Target};
use dgakt::train::TargetSet;
use dgakt::{Error, Result};
use serde::Serialize;

use crate::config::RunConfig;

/// Shades in the graphviz `blues8` scheme.
pub const SHADES: usize = 8;

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct TargetKey {
    pub student: String,
    pub exercise: String,
    pub timestamp: i64,
}

impl std::str::FromStr for TargetKey {
    type Err = Error;

    /// `student:exercise:timestamp`; keys may themselves contain colons,
    /// so the exercise is everything between the first and last colon.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("target `{s}` is not student:exercise:timestamp"));
        let (student, rest) = s.split_once(':').ok_or_else(bad)?;
        let (exercise, ts) = rest.rsplit_once(':').ok_or_else(bad)?;
        let timestamp = ts.trim().parse().map_err(|_| bad())?;
        Ok(Self {
            student: student.to_owned(),
            exercise: exercise.to_owned(),
            timestamp,
        })
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct NodeExport {
    pub index: usize,
    pub kind: &'static str,
    pub key: String,
    pub label: &'static str,
    /// Final-layer β of each head; absent without a global branch.
    pub beta: Option<Vec<f64>>,
    pub beta_mean: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct EdgeExport {
    pub src: usize,
    pub dst: usize,
    pub is_interaction: bool,
    pub ts_norm: f32,
    pub prev_norm: f32,
    pub response: f32,
}

#[derive(Clone, Debug, Serialize)]
pub struct AttentionExport {
    pub target: TargetKey,
    pub label: bool,
    pub prediction: PredictionTriple,
    pub heads: usize,
    pub nodes: Vec<NodeExport>,
    /// One entry per undirected edge.
    pub edges: Vec<EdgeExport>,
}

fn label_name(label: NodeLabel) -> &'static str {
    match label {
        NodeLabel::TargetStudent => "target_student",
        NodeLabel::TargetExercise => "target_exercise",
        NodeLabel::NeighborStudent => "neighbor_student",
        NodeLabel::ContextExercise => "context_exercise",
        NodeLabel::TargetKc => "target_kc",
        NodeLabel::ContextKc => "context_kc",
    }
}

fn describe(vocab: &Vocabulary, key: NodeKey) -> (&'static str, String) {
    match key {
        NodeKey::Student(s) => ("student", vocab.student_name(s).to_owned()),
        NodeKey::Exercise(e) => ("exercise", vocab.exercise_name(e).to_owned()),
        NodeKey::Kc(k) => ("kc", vocab.kc_name(k).to_owned()),
    }
}

/// Builds the export for `target`. The subgraph is drawn from the whole log
/// (segmented as one split), not from the train/val/test partition.
pub fn explain(log: &InteractionLog, model: &Model, spec: &ModelSpec, target: &TargetKey) -> Result<AttentionExport> {
    let vocab = log.vocab();
    let row = vocab
        .student(&target.student)
        .zip(vocab.exercise(&target.exercise))
        .and_then(|(s, e)| {
            log.rows()
                .iter()
                .find(|r| r.student == s && r.exercise == e && r.timestamp == target.timestamp)
        })
        .ok_or_else(|| Error::UnknownKey {
            kind: "target",
            key: format!("{}:{}:{}", target.student, target.exercise, target.timestamp),
        })?;

    let set = TargetSet::new(log.clone(), log, spec.hyper.subsequence_len)?;
    let (sub, position) = set
        .subsequences
        .iter()
        .find_map(|sub| Some((sub, sub.rows.iter().position(|r| r.id == row.id)?)))
        .expect("every row lies in one subsequence");
    let graph = subgraph::build(log, Target::new(sub, position)?, &spec.subgraph_config())?;
    export(vocab, model, &graph, target.clone())
}

fn export(
    vocab: &Vocabulary,
    model: &Model,
    graph: &EnclosingSubgraph,
    target: TargetKey,
) -> Result<AttentionExport> {
    let record = model.predict(&GraphBatch::new(&[graph])?)?;
    let beta = record.beta.last().filter(|_| graph.has_virtual_node());
    let heads = model.hyper.heads;
    let nodes = graph
        .nodes
        .iter()
        .zip(&graph.labels)
        .enumerate()
        .map(|(index, (&key, &label))| {
            let (kind, name) = describe(vocab, key);
            let per_head = beta.map(|b| (0..heads).map(|h| b.get(index, h)).collect::<Vec<f64>>());
            let mean = per_head.as_ref().map(|v| v.iter().sum::<f64>() / heads as f64);
            NodeExport {
                index,
                kind,
                key: name,
                label: label_name(label),
                beta: per_head,
                beta_mean: mean,
            }
        })
        .collect();
    let edges = graph
        .edges
        .iter()
        .filter(|e| e.src < e.dst)
        .map(|e| EdgeExport {
            src: e.src as usize,
            dst: e.dst as usize,
            is_interaction: e.feature.is_interaction > 0.5,
            ts_norm: e.feature.ts_norm,
            prev_norm: e.feature.prev_norm,
            response: e.feature.response,
        })
        .collect();
    Ok(AttentionExport {
        target,
        label: graph.label,
        prediction: record.triples[0],
        heads,
        nodes,
        edges,
    })
}

/// Explains a target with a saved checkpoint; the log comes from `config`,
/// everything about the model from the checkpoint.
pub fn explain_checkpoint(checkpoint: &Checkpoint, config: &RunConfig, target: &TargetKey) -> Result<AttentionExport> {
    let log = crate::pipeline::load_log(config)?;
    explain(&log, &checkpoint.model()?, &checkpoint.spec, target)
}

/// Shade `1..=8` of a node: its β relative to the largest β in the graph.
pub fn shade(beta: f64, max_beta: f64) -> usize {
    if max_beta <= 0.0 {
        return 1;
    }
    ((beta / max_beta * SHADES as f64).ceil() as usize).clamp(1, SHADES)
}

fn quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '"' | '\\' => {
                out.push('\\');
                out.push(c);
            }
            '\n' => out.push_str("\\n"),
            _ => out.push(c),
        }
    }
    out.push('"');
    out
}

impl AttentionExport {
    pub fn to_dot(&self) -> String {
        let max_beta = self.nodes.iter().filter_map(|n| n.beta_mean).fold(0.0, f64::max);
        let mut out = String::new();
        let _ = writeln!(out, "graph enclosing {{");
        let _ = writeln!(
            out,
            "  label={};",
            quote(&format!(
                "{}:{}:{} label={} p={:.4}",
                self.target.student,
                self.target.exercise,
                self.target.timestamp,
                u8::from(self.label),
                self.prediction.blended
            ))
        );
        let _ = writeln!(out, "  node [style=filled, colorscheme=blues8];");
        for n in &self.nodes {
            let shape = match n.kind {
                "student" => "ellipse",
                "exercise" => "box",
                _ => "diamond",
            };
            let mut attrs = format!("label={}, shape={shape}", quote(&n.key));
            if let Some(b) = n.beta_mean {
                let s = shade(b, max_beta);
                let _ = write!(attrs, ", fillcolor={s}, tooltip={}", quote(&format!("beta={b:.4}")));
                if s >= 6 {
                    attrs.push_str(", fontcolor=white");
                }
            } else {
                attrs.push_str(", fillcolor=white");
            }
            if n.label.starts_with("target") {
                attrs.push_str(", penwidth=2");
            }
            let _ = writeln!(out, "  n{} [{attrs}];", n.index);
        }
        for e in &self.edges {
            let style = if e.is_interaction { "solid" } else { "dashed" };
            let _ = writeln!(out, "  n{} -- n{} [style={style}];", e.src, e.dst);
        }
        out.push_str("}\n");
        out
    }
}
