//! Checkpoint files.
//!
//! Layout: magic `DGKT`, `u32` version, `u32` entry count, then entries of
//! `u8` tag, `u16` name length, name, `u64` payload length, payload. Tags:
//! 1 tensor (`u32` rows, `u32` cols, `f64` data), 2 `f64`, 3 `u64`,
//! 4 UTF-8 string. All integers and floats are little-endian.

use std::collections::BTreeMap;
use std::path::Path;

use crate::autodiff::{AdamConfig, AdamState, Tensor};
use crate::error::{Error, Result};
use crate::model::{Hyperparams, Layout, Model, ModelSpec};

pub const MAGIC: [u8; 4] = *b"DGKT";
pub const VERSION: u32 = 1;

const TAG_TENSOR: u8 = 1;
const TAG_F64: u8 = 2;
const TAG_U64: u8 = 3;
const TAG_STR: u8 = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub spec: ModelSpec,
    /// Parameters in layout order.
    pub params: Vec<(String, Tensor)>,
    pub adam: AdamState,
    pub epoch: usize,
    pub best_val_auc: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
enum Entry {
    Tensor(Tensor),
    F64(f64),
    U64(u64),
    Str(String),
}

impl Checkpoint {
    pub fn capture(spec: &ModelSpec, model: &Model, adam: &AdamState, epoch: usize, best_val_auc: f64, seed: u64) -> Self {
        Self {
            spec: spec.clone(),
            params: model.named_params().map(|(n, t)| (n.to_owned(), t.clone())).collect(),
            adam: adam.clone(),
            epoch,
            best_val_auc,
            seed,
        }
    }

    pub fn model(&self) -> Result<Model> {
        Model::from_named(self.spec.hyper.clone(), self.spec.arch, self.params.clone())
    }

    /// Fails with the first tensor whose shape differs from what `hyper`
    /// implies.
    pub fn check_shapes(&self, hyper: &Hyperparams) -> Result<()> {
        let layout = Layout::new(hyper);
        for spec in layout.specs() {
            let found = self.params.iter().find(|(n, _)| *n == spec.name);
            match found {
                Some((_, t)) if t.shape() == [spec.rows, spec.cols] => {}
                Some((name, t)) => {
                    return Err(Error::TensorMismatch {
                        name: name.clone(),
                        expected: [spec.rows, spec.cols],
                        found: t.shape(),
                    })
                }
                None => {
                    return Err(Error::Config(format!(
                        "checkpoint has no tensor `{}`",
                        spec.name
                    )))
                }
            }
        }
        if self.params.len() != layout.len() {
            return Err(Error::Config(format!(
                "checkpoint has {} tensors, configuration expects {}",
                self.params.len(),
                layout.len()
            )));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let c = self.adam.config;
        let mut entries: Vec<(String, Entry)> = vec![
            ("spec".into(), Entry::Str(serde_json::to_string(&self.spec)?)),
            ("epoch".into(), Entry::U64(self.epoch as u64)),
            ("best_val_auc".into(), Entry::F64(self.best_val_auc)),
            ("seed".into(), Entry::U64(self.seed)),
            ("adam.lr".into(), Entry::F64(c.lr)),
            ("adam.beta1".into(), Entry::F64(c.beta1)),
            ("adam.beta2".into(), Entry::F64(c.beta2)),
            ("adam.eps".into(), Entry::F64(c.eps)),
            ("adam.t".into(), Entry::U64(self.adam.t)),
        ];
        for (i, (name, t)) in self.params.iter().enumerate() {
            entries.push((format!("param/{name}"), Entry::Tensor(t.clone())));
            entries.push((format!("adam.m/{name}"), Entry::Tensor(self.adam.m[i].clone())));
            entries.push((format!("adam.v/{name}"), Entry::Tensor(self.adam.v[i].clone())));
        }

        let mut out = Vec::new();
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
        for (name, entry) in &entries {
            let (tag, payload) = match entry {
                Entry::Tensor(t) => {
                    let mut p = Vec::with_capacity(8 + 8 * t.len());
                    p.extend_from_slice(&(t.rows() as u32).to_le_bytes());
                    p.extend_from_slice(&(t.cols() as u32).to_le_bytes());
                    for v in t.data() {
                        p.extend_from_slice(&v.to_le_bytes());
                    }
                    (TAG_TENSOR, p)
                }
                Entry::F64(v) => (TAG_F64, v.to_le_bytes().to_vec()),
                Entry::U64(v) => (TAG_U64, v.to_le_bytes().to_vec()),
                Entry::Str(s) => (TAG_STR, s.as_bytes().to_vec()),
            };
            out.push(tag);
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
            out.extend_from_slice(&payload);
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut entries = read_entries(bytes)?;
        let mut take = |name: &str| {
            entries.remove(name).ok_or_else(|| Error::Format {
                expected: format!("checkpoint entry `{name}`"),
                found: "nothing".into(),
            })
        };
        let wrong = |name: &str, kind: &str| Error::Format {
            expected: format!("{kind} entry `{name}`"),
            found: "another type".into(),
        };
        macro_rules! get {
            ($name:expr, $variant:ident) => {
                match take($name)? {
                    Entry::$variant(v) => v,
                    _ => return Err(wrong($name, stringify!($variant))),
                }
            };
        }
        let spec_json = get!("spec", Str);
        let spec: ModelSpec = serde_json::from_str(&spec_json).map_err(|e| Error::Format {
            expected: "model spec JSON".into(),
            found: e.to_string(),
        })?;
        spec.hyper.validate()?;
        let epoch = get!("epoch", U64) as usize;
        let best_val_auc = get!("best_val_auc", F64);
        let seed = get!("seed", U64);
        let config = AdamConfig {
            lr: get!("adam.lr", F64),
            beta1: get!("adam.beta1", F64),
            beta2: get!("adam.beta2", F64),
            eps: get!("adam.eps", F64),
        };
        let t = get!("adam.t", U64);

        let layout = Layout::new(&spec.hyper);
        let mut params = Vec::with_capacity(layout.len());
        let mut m = Vec::with_capacity(layout.len());
        let mut v = Vec::with_capacity(layout.len());
        for s in layout.specs() {
            for (prefix, dest) in [("param", &mut params), ("adam.m", &mut m), ("adam.v", &mut v)] {
                let key = format!("{prefix}/{}", s.name);
                let tensor = get!(key.as_str(), Tensor);
                if tensor.shape() != [s.rows, s.cols] {
                    return Err(Error::TensorMismatch {
                        name: s.name.clone(),
                        expected: [s.rows, s.cols],
                        found: tensor.shape(),
                    });
                }
                dest.push(tensor);
            }
        }
        if let Some(extra) = entries.keys().next() {
            return Err(Error::Format {
                expected: "no further checkpoint entries".into(),
                found: format!("`{extra}`"),
            });
        }
        let names = layout.specs().iter().map(|s| s.name.clone());
        Ok(Self {
            spec,
            params: names.zip(params).collect(),
            adam: AdamState { config, m, v, t },
            epoch,
            best_val_auc,
            seed,
        })
    }

    /// Writes through a temporary file and renames it into place.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn read_entries(bytes: &[u8]) -> Result<BTreeMap<String, Entry>> {
    let truncated = || Error::Format {
        expected: "complete checkpoint".into(),
        found: format!("file truncated at {} bytes", bytes.len()),
    };
    let mut pos = 0usize;
    let mut take = |n: usize| -> Result<&[u8]> {
        let end = pos.checked_add(n).filter(|&e| e <= bytes.len()).ok_or_else(truncated)?;
        let s = &bytes[pos..end];
        pos = end;
        Ok(s)
    };
    let magic = take(4)?;
    if magic != MAGIC {
        return Err(Error::Format {
            expected: "magic DGKT".into(),
            found: format!("{:?}", String::from_utf8_lossy(magic)),
        });
    }
    let version = u32::from_le_bytes(take(4)?.try_into().unwrap());
    if version != VERSION {
        return Err(Error::Format {
            expected: format!("checkpoint version {VERSION}"),
            found: format!("version {version}"),
        });
    }
    let count = u32::from_le_bytes(take(4)?.try_into().unwrap());
    let mut entries = BTreeMap::new();
    for _ in 0..count {
        let tag = take(1)?[0];
        let name_len = u16::from_le_bytes(take(2)?.try_into().unwrap()) as usize;
        let name = String::from_utf8(take(name_len)?.to_vec()).map_err(|_| Error::Format {
            expected: "UTF-8 entry name".into(),
            found: "invalid bytes".into(),
        })?;
        let len = u64::from_le_bytes(take(8)?.try_into().unwrap());
        let payload = take(usize::try_from(len).map_err(|_| truncated())?)?;
        let bad = |what: &str| Error::Format {
            expected: format!("{what} payload for `{name}`"),
            found: format!("{} bytes", payload.len()),
        };
        let entry = match tag {
            TAG_TENSOR => {
                if payload.len() < 8 {
                    return Err(bad("tensor"));
                }
                let rows = u32::from_le_bytes(payload[..4].try_into().unwrap()) as usize;
                let cols = u32::from_le_bytes(payload[4..8].try_into().unwrap()) as usize;
                let data = &payload[8..];
                if rows.checked_mul(cols).and_then(|n| n.checked_mul(8)) != Some(data.len()) {
                    return Err(bad("tensor"));
                }
                let values = data.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
                Entry::Tensor(Tensor::from_vec(rows, cols, values)?)
            }
            TAG_F64 | TAG_U64 => {
                let raw: [u8; 8] = payload.try_into().map_err(|_| bad("8-byte"))?;
                if tag == TAG_F64 {
                    Entry::F64(f64::from_le_bytes(raw))
                } else {
                    Entry::U64(u64::from_le_bytes(raw))
                }
            }
            TAG_STR => Entry::Str(String::from_utf8(payload.to_vec()).map_err(|_| bad("UTF-8"))?),
            other => {
                return Err(Error::Format {
                    expected: "entry tag 1-4".into(),
                    found: format!("tag {other} for `{name}`"),
                })
            }
        };
        entries.insert(name, entry);
    }
    if pos != bytes.len() {
        return Err(Error::Format {
            expected: "end of checkpoint".into(),
            found: format!("{} trailing bytes", bytes.len() - pos),
        });
    }
    Ok(entries)
}
