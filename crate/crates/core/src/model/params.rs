use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Hyperparams;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::subgraph::{EDGE_FEATURES, LABEL_COUNT};

/// Width of the virtual node's initial (all-zero) embedding.
pub const VIRTUAL_INIT_WIDTH: usize = LABEL_COUNT;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Init {
    /// Glorot uniform with the given fan-in/fan-out.
    Glorot(usize, usize),
    Zero,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    init: Init,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct LocalIdx {
    pub w_dst: usize,
    pub w_src: usize,
    pub w_edge: usize,
    pub a_dst: usize,
    pub a_src: usize,
    pub a_edge: usize,
    pub w_msg: usize,
    pub w_out: usize,
    pub b_out: Option<usize>,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct GlobalIdx {
    pub w_virtual: usize,
    pub w_node: usize,
    pub w_type: usize,
    pub a_virtual: usize,
    pub a_node: usize,
    pub a_type: usize,
    pub w_msg: usize,
    pub w_out: usize,
    pub b_out: Option<usize>,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct HeadIdx {
    pub w0: usize,
    pub b0: Option<usize>,
    pub w1: usize,
    pub b1: Option<usize>,
}

/// Names, shapes and positions of every parameter tensor.
#[derive(Clone, Debug)]
pub struct Layout {
    pub(crate) specs: Vec<ParamSpec>,
    pub(crate) local: Vec<LocalIdx>,
    pub(crate) global: Vec<GlobalIdx>,
    pub(crate) phi: HeadIdx,
    pub(crate) psi: HeadIdx,
}

struct Builder {
    specs: Vec<ParamSpec>,
}

impl Builder {
    fn add(&mut self, name: String, rows: usize, cols: usize, init: Init) -> usize {
        self.specs.push(ParamSpec {
            name,
            rows,
            cols,
            init,
        });
        self.specs.len() - 1
    }

    fn glorot(&mut self, name: String, rows: usize, cols: usize, fan: (usize, usize)) -> usize {
        self.add(name, rows, cols, Init::Glorot(fan.0, fan.1))
    }

    fn bias(&mut self, enabled: bool, name: String, cols: usize) -> Option<usize> {
        enabled.then(|| self.add(name, 1, cols, Init::Zero))
    }
}

impl Layout {
    pub fn new(hyper: &Hyperparams) -> Self {
        let (k, dh) = (hyper.heads, hyper.hidden);
        let (da, dm, dp) = (hyper.attn_width(), hyper.message_width(), hyper.head_width());
        let mu = hyper.node_types.count();
        let mut b = Builder { specs: Vec::new() };

        let mut local = Vec::new();
        for l in 1..=hyper.layers {
            let d_in = if l == 1 { LABEL_COUNT } else { dh };
            let p = |s: &str| format!("local{l}.{s}");
            local.push(LocalIdx {
                w_dst: b.glorot(p("w_dst"), d_in, k * da, (d_in, da)),
                w_src: b.glorot(p("w_src"), d_in, k * da, (d_in, da)),
                w_edge: b.glorot(p("w_edge"), EDGE_FEATURES, k * da, (EDGE_FEATURES, da)),
                a_dst: b.glorot(p("attn_dst"), k, da, (3 * da, 1)),
                a_src: b.glorot(p("attn_src"), k, da, (3 * da, 1)),
                a_edge: b.glorot(p("attn_edge"), k, da, (3 * da, 1)),
                w_msg: b.glorot(p("w_msg"), d_in, k * dm, (d_in, dm)),
                w_out: b.glorot(p("w_out"), k * dm, dh, (k * dm, dh)),
                b_out: b.bias(hyper.biases, p("b_out"), dh),
            });
        }

        let mut global = Vec::new();
        for l in 1..=hyper.layers {
            let d_g = if l == 1 { VIRTUAL_INIT_WIDTH } else { dh };
            let p = |s: &str| format!("global{l}.{s}");
            global.push(GlobalIdx {
                w_virtual: b.glorot(p("w_virtual"), d_g, k * da, (d_g, da)),
                w_node: b.glorot(p("w_node"), dh, k * da, (dh, da)),
                w_type: b.glorot(p("w_type"), mu, k * da, (mu, da)),
                a_virtual: b.glorot(p("attn_virtual"), k, da, (3 * da, 1)),
                a_node: b.glorot(p("attn_node"), k, da, (3 * da, 1)),
                a_type: b.glorot(p("attn_type"), k, da, (3 * da, 1)),
                w_msg: b.glorot(p("w_msg"), dh, k * dm, (dh, dm)),
                w_out: b.glorot(p("w_out"), k * dm, dh, (k * dm, dh)),
                b_out: b.bias(hyper.biases, p("b_out"), dh),
            });
        }

        let mut head = |name: &str, d_in: usize| HeadIdx {
            w0: b.glorot(format!("{name}.w0"), d_in, dp, (d_in, dp)),
            b0: b.bias(hyper.biases, format!("{name}.b0"), dp),
            w1: b.glorot(format!("{name}.w1"), dp, 1, (dp, 1)),
            b1: b.bias(hyper.biases, format!("{name}.b1"), 1),
        };
        let phi = head("head_global", hyper.layers * dh);
        let psi = head("head_local", 2 * hyper.layers * dh);

        Self {
            specs: b.specs,
            local,
            global,
            phi,
            psi,
        }
    }

    pub fn specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    pub fn len(&self) -> usize {
        self.specs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.specs.is_empty()
    }

    /// Total scalar count implied by the shapes.
    pub fn scalar_count(&self) -> usize {
        self.specs.iter().map(|s| s.rows * s.cols).sum()
    }

    /// Indices of the local prediction head's tensors.
    pub fn local_head_indices(&self) -> Vec<usize> {
        let h = self.psi;
        [Some(h.w0), h.b0, Some(h.w1), h.b1].into_iter().flatten().collect()
    }

    /// Indices of the global prediction head's tensors.
    pub fn global_head_indices(&self) -> Vec<usize> {
        let h = self.phi;
        [Some(h.w0), h.b0, Some(h.w1), h.b1].into_iter().flatten().collect()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.specs.iter().position(|s| s.name == name)
    }

    /// Seeded initialization: Glorot uniform per head block, zero biases.
    pub fn initialize(&self, seed: u64) -> Vec<Tensor> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.specs
            .iter()
            .map(|s| match s.init {
                Init::Zero => Tensor::zeros(s.rows, s.cols),
                Init::Glorot(fan_in, fan_out) => {
                    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                    let data = (0..s.rows * s.cols).map(|_| rng.gen_range(-bound..=bound)).collect();
                    Tensor::from_vec(s.rows, s.cols, data).expect("shape matches length")
                }
            })
            .collect()
    }

    /// Checks a tensor list against this layout, naming the first mismatch.
    pub fn check(&self, named: &[(String, Tensor)]) -> Result<()> {
        if named.len() != self.specs.len() {
            return Err(Error::Config(format!(
                "expected {} parameter tensors, found {}",
                self.specs.len(),
                named.len()
            )));
        }
        for (spec, (name, t)) in self.specs.iter().zip(named) {
            if spec.name != *name {
                return Err(Error::Config(format!(
                    "expected parameter tensor {}, found {name}",
                    spec.name
                )));
            }
            if t.shape() != [spec.rows, spec.cols] {
                return Err(Error::TensorMismatch {
                    name: name.clone(),
                    expected: [spec.rows, spec.cols],
                    found: t.shape(),
                });
            }
        }
        Ok(())
    }
}

/// Total scalar count across all tensors.
pub fn count_parameters(params: &[Tensor]) -> usize {
    params.iter().map(Tensor::len).sum()
}
