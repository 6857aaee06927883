//! The dual attention network.
//!
//! Each of the `L` layers runs a local step over the real nodes (edge-aware
//! multi-head attention, then an attention-weighted message sum) followed by
//! a global step in which the virtual node attends over every real node.
//! The per-layer target-node embeddings feed the local head and the
//! per-layer virtual-node embeddings feed the global head.

mod batch;
mod loss;
mod params;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::subgraph::{FeatureMask, NodeTypeScheme, SubgraphConfig};

pub use batch::GraphBatch;
pub use loss::{compute_loss, loss_on_tape, LossValues, LossVars, CLAMP};
pub use params::{count_parameters, Layout, ParamSpec, VIRTUAL_INIT_WIDTH};

/// Negative slope of the LeakyReLU on attention scores.
pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyperparams {
    pub layers: usize,
    pub heads: usize,
    pub hidden: usize,
    /// Attention projection width; defaults to `hidden`.
    pub attn_dim: Option<usize>,
    /// Message width per head; defaults to `hidden`.
    pub message_dim: Option<usize>,
    /// Prediction head hidden width; defaults to `hidden`.
    pub head_dim: Option<usize>,
    pub gamma: f64,
    pub lambda: f64,
    pub subsequence_len: usize,
    /// Neighbor student cap; 0 disables it.
    pub neighbor_cap: usize,
    pub biases: bool,
    pub node_types: NodeTypeScheme,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            layers: 2,
            heads: 4,
            hidden: 32,
            attn_dim: None,
            message_dim: None,
            head_dim: None,
            gamma: 0.5,
            lambda: 0.5,
            subsequence_len: 8,
            neighbor_cap: 32,
            biases: false,
            node_types: NodeTypeScheme::Labels,
        }
    }
}

impl Hyperparams {
    pub fn attn_width(&self) -> usize {
        self.attn_dim.unwrap_or(self.hidden)
    }

    pub fn message_width(&self) -> usize {
        self.message_dim.unwrap_or(self.hidden)
    }

    pub fn head_width(&self) -> usize {
        self.head_dim.unwrap_or(self.hidden)
    }

    pub fn neighbor_limit(&self) -> Option<usize> {
        (self.neighbor_cap > 0).then_some(self.neighbor_cap)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("layers", Some(self.layers)),
            ("heads", Some(self.heads)),
            ("hidden", Some(self.hidden)),
            ("attn_dim", self.attn_dim),
            ("message_dim", self.message_dim),
            ("head_dim", self.head_dim),
        ];
        for (name, value) in positive {
            if value == Some(0) {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::Config(format!("gamma must lie in [0, 1], got {}", self.gamma)));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!(
                "lambda must be finite and >= 0, got {}",
                self.lambda
            )));
        }
        if self.subsequence_len < 2 {
            return Err(Error::Config(format!(
                "subsequence_len must be at least 2, got {}",
                self.subsequence_len
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GlobalBranch {
    #[default]
    Attention,
    /// Virtual node takes the plain mean of the real nodes.
    UniformMean,
    /// No virtual node and no global head.
    Off,
}

/// Structural switches used by the ablation variants.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    /// When false, each node averages its in-neighbors uniformly.
    pub local_attention: bool,
    pub global: GlobalBranch,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            local_attention: true,
            global: GlobalBranch::Attention,
        }
    }
}

/// Everything needed to rebuild a model and the subgraphs it expects.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSpec {
    pub hyper: Hyperparams,
    pub arch: Architecture,
    pub include_kcs: bool,
    pub feature_mask: FeatureMask,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self::new(Hyperparams::default())
    }
}

impl ModelSpec {
    pub fn new(hyper: Hyperparams) -> Self {
        Self {
            hyper,
            arch: Architecture::default(),
            include_kcs: true,
            feature_mask: FeatureMask::default(),
        }
    }

    pub fn subgraph_config(&self) -> SubgraphConfig {
        SubgraphConfig {
            neighbor_cap: self.hyper.neighbor_limit(),
            include_kcs: self.include_kcs,
            virtual_node: self.arch.global != GlobalBranch::Off,
            node_types: self.hyper.node_types,
            feature_mask: self.feature_mask,
        }
    }
}

/// `(r̂_global, r̂_local, r̂)` for one target.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionTriple {
    pub global: Option<f64>,
    pub local: f64,
    pub blended: f64,
}

/// `γ·global + (1−γ)·local`.
pub fn blend(global: f64, local: f64, gamma: f64) -> f64 {
    gamma * global + (1.0 - gamma) * local
}

/// Tape handles produced by one forward pass.
#[derive(Clone, Debug)]
pub struct TapeForward {
    pub x_g: Option<Var>,
    pub x_tau: Var,
    pub global: Option<Var>,
    pub local: Var,
    pub blended: Var,
    /// Per layer, `E×K` local coefficients.
    pub alpha: Vec<Var>,
    /// Per layer, `N×K` global coefficients.
    pub beta: Vec<Var>,
}

/// Values of a forward pass without gradients.
#[derive(Clone, Debug)]
pub struct ForwardRecord {
    pub triples: Vec<PredictionTriple>,
    pub x_g: Option<Tensor>,
    pub x_tau: Tensor,
    pub alpha: Vec<Tensor>,
    pub beta: Vec<Tensor>,
}

#[derive(Clone, Debug)]
pub struct Model {
    pub hyper: Hyperparams,
    pub arch: Architecture,
    pub layout: Layout,
    pub params: Vec<Tensor>,
}

impl Model {
    pub fn new(hyper: Hyperparams, arch: Architecture, seed: u64) -> Result<Self> {
        hyper.validate()?;
        let layout = Layout::new(&hyper);
        let params = layout.initialize(seed);
        Ok(Self {
            hyper,
            arch,
            layout,
            params,
        })
    }

    /// Wraps existing tensors, checking them against the layout.
    pub fn from_named(hyper: Hyperparams, arch: Architecture, named: Vec<(String, Tensor)>) -> Result<Self> {
        hyper.validate()?;
        let layout = Layout::new(&hyper);
        layout.check(&named)?;
        Ok(Self {
            hyper,
            arch,
            layout,
            params: named.into_iter().map(|(_, t)| t).collect(),
        })
    }

    pub fn named_params(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.layout.specs().iter().map(|s| s.name.as_str()).zip(&self.params)
    }

    pub fn count_parameters(&self) -> usize {
        count_parameters(&self.params)
    }

    /// Fusion weight actually used; zero without a global branch.
    pub fn effective_gamma(&self) -> f64 {
        match self.arch.global {
            GlobalBranch::Off => 0.0,
            _ => self.hyper.gamma,
        }
    }

    /// Records the forward pass on `tape` with `vars` bound to the
    /// parameters in layout order.
    pub fn forward(&self, tape: &mut Tape, vars: &[Var], batch: &GraphBatch) -> Result<TapeForward> {
        if vars.len() != self.layout.len() {
            return Err(Error::shape(
                "model_forward",
                format!("{} parameter vars for {} tensors", vars.len(), self.layout.len()),
            ));
        }
        let k = self.hyper.heads;
        let p = |i: usize| vars[i];
        let with_global = self.arch.global != GlobalBranch::Off;
        let types = match (&batch.type_features, self.arch.global) {
            (Some(m), GlobalBranch::Attention) => Some(tape.constant(m.clone())),
            (None, GlobalBranch::Attention) => {
                return Err(Error::MalformedSubgraph(
                    "global attention needs a virtual node in every subgraph".into(),
                ))
            }
            _ => None,
        };

        let mut h = tape.constant(batch.node_features.clone());
        let f = tape.constant(batch.edge_features.clone());
        let mut hg = tape.constant(Tensor::zeros(batch.graph_count, VIRTUAL_INIT_WIDTH));
        let uniform_alpha =
            (!self.arch.local_attention).then(|| tape.constant(batch.uniform_edge_weights(k)));
        let uniform_beta = (self.arch.global == GlobalBranch::UniformMean)
            .then(|| tape.constant(batch.uniform_node_weights(k)));
        let node_graph: Arc<[u32]> = Arc::from(batch.node_graph.ids());

        let mut hs = Vec::with_capacity(self.hyper.layers);
        let mut hgs = Vec::with_capacity(self.hyper.layers);
        let mut alphas = Vec::new();
        let mut betas = Vec::new();
        for l in 0..self.hyper.layers {
            let li = self.layout.local[l];
            let alpha = match uniform_alpha {
                Some(u) => u,
                None => {
                    // attn([W_i h_i ‖ W_j h_j ‖ W_f f]) splits into three
                    // per-head dot products, folded into the weights first.
                    let v_dst = tape.head_dot(p(li.w_dst), p(li.a_dst))?;
                    let v_src = tape.head_dot(p(li.w_src), p(li.a_src))?;
                    let v_edge = tape.head_dot(p(li.w_edge), p(li.a_edge))?;
                    let s_dst = tape.matmul(h, v_dst)?;
                    let s_src = tape.matmul(h, v_src)?;
                    let s_dst = tape.gather_rows(s_dst, batch.edge_dst.clone())?;
                    let s_src = tape.gather_rows(s_src, batch.edge_src.clone())?;
                    let s_edge = tape.matmul(f, v_edge)?;
                    let s = tape.add(s_dst, s_src)?;
                    let s = tape.add(s, s_edge)?;
                    let eps = tape.leaky_relu(s, LEAKY_SLOPE);
                    tape.segment_softmax(eps, batch.edge_segments.clone())?
                }
            };
            alphas.push(alpha);
            let msg = tape.matmul(h, p(li.w_msg))?;
            let agg = tape.segment_weighted_sum(
                alpha,
                msg,
                Some(batch.edge_src.clone()),
                batch.edge_segments.clone(),
            )?;
            let mut z = tape.matmul(agg, p(li.w_out))?;
            if let Some(b) = li.b_out {
                z = tape.add_row(z, p(b))?;
            }
            h = tape.elu(z);
            hs.push(h);

            if !with_global {
                continue;
            }
            let gi = self.layout.global[l];
            let beta = match (uniform_beta, types) {
                (Some(u), _) => u,
                (None, Some(m)) => {
                    let v_virtual = tape.head_dot(p(gi.w_virtual), p(gi.a_virtual))?;
                    let v_node = tape.head_dot(p(gi.w_node), p(gi.a_node))?;
                    let v_type = tape.head_dot(p(gi.w_type), p(gi.a_type))?;
                    let s_virtual = tape.matmul(hg, v_virtual)?;
                    let s_virtual = tape.gather_rows(s_virtual, node_graph.clone())?;
                    let s_node = tape.matmul(h, v_node)?;
                    let s_type = tape.matmul(m, v_type)?;
                    let s = tape.add(s_virtual, s_node)?;
                    let s = tape.add(s, s_type)?;
                    let eps = tape.leaky_relu(s, LEAKY_SLOPE);
                    tape.segment_softmax(eps, batch.node_graph.clone())?
                }
                (None, None) => unreachable!("type features checked above"),
            };
            betas.push(beta);
            let msg = tape.matmul(h, p(gi.w_msg))?;
            let agg = tape.segment_weighted_sum(beta, msg, None, batch.node_graph.clone())?;
            let mut z = tape.matmul(agg, p(gi.w_out))?;
            if let Some(b) = gi.b_out {
                z = tape.add_row(z, p(b))?;
            }
            hg = tape.elu(z);
            hgs.push(hg);
        }

        let mut parts = Vec::with_capacity(2 * hs.len());
        for &hl in &hs {
            parts.push(tape.gather_rows(hl, batch.target_students.clone())?);
        }
        for &hl in &hs {
            parts.push(tape.gather_rows(hl, batch.target_exercises.clone())?);
        }
        let x_tau = tape.concat_cols(&parts)?;
        let local = self.head(tape, vars, self.layout.psi, x_tau)?;

        let (x_g, global, blended) = if with_global {
            let x_g = tape.concat_cols(&hgs)?;
            let global = self.head(tape, vars, self.layout.phi, x_g)?;
            let gamma = self.hyper.gamma;
            let a = tape.scale(global, gamma);
            let b = tape.scale(local, 1.0 - gamma);
            (Some(x_g), Some(global), tape.add(a, b)?)
        } else {
            (None, None, local)
        };

        Ok(TapeForward {
            x_g,
            x_tau,
            global,
            local,
            blended,
            alpha: alphas,
            beta: betas,
        })
    }

    /// `σ(W1 (W0 x))`, with optional biases.
    fn head(&self, tape: &mut Tape, vars: &[Var], idx: params::HeadIdx, x: Var) -> Result<Var> {
        let mut z = tape.matmul(x, vars[idx.w0])?;
        if let Some(b) = idx.b0 {
            z = tape.add_row(z, vars[b])?;
        }
        let mut z = tape.matmul(z, vars[idx.w1])?;
        if let Some(b) = idx.b1 {
            z = tape.add_row(z, vars[b])?;
        }
        Ok(tape.sigmoid(z))
    }

    /// Forward plus loss with the parameters bound as gradient leaves.
    pub fn loss_graph(&self, tape: &mut Tape, batch: &GraphBatch) -> Result<(Vec<Var>, TapeForward, LossVars)> {
        let vars: Vec<Var> = self.params.iter().map(|t| tape.param(t.clone())).collect();
        let out = self.forward(tape, &vars, batch)?;
        let loss = self.loss(tape, &out, &batch.labels)?;
        Ok((vars, out, loss))
    }

    pub fn loss(&self, tape: &mut Tape, out: &TapeForward, labels: &[f64]) -> Result<LossVars> {
        loss_on_tape(tape, out.global, out.local, labels, self.effective_gamma(), self.effective_lambda())
    }

    /// Consistency weight actually used; zero without a global branch.
    pub fn effective_lambda(&self) -> f64 {
        match self.arch.global {
            GlobalBranch::Off => 0.0,
            _ => self.hyper.lambda,
        }
    }

    /// Gradient-free forward pass.
    pub fn predict(&self, batch: &GraphBatch) -> Result<ForwardRecord> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = self.params.iter().map(|t| tape.constant(t.clone())).collect();
        let out = self.forward(&mut tape, &vars, batch)?;
        let column = |v: Var| tape.value(v).data().to_vec();
        let local = column(out.local);
        let global = out.global.map(column);
        let blended = column(out.blended);
        let triples = (0..batch.graph_count)
            .map(|i| PredictionTriple {
                global: global.as_ref().map(|g| g[i]),
                local: local[i],
                blended: blended[i],
            })
            .collect();
        Ok(ForwardRecord {
            triples,
            x_g: out.x_g.map(|v| tape.value(v).clone()),
            x_tau: tape.value(out.x_tau).clone(),
            alpha: out.alpha.iter().map(|&v| tape.value(v).clone()).collect(),
            beta: out.beta.iter().map(|&v| tape.value(v).clone()).collect(),
        })
    }
}
