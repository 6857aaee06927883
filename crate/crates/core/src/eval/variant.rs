use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{GlobalBranch, ModelSpec};

/// The full model and its six ablations.
///
/// | id | local attention | global attention | KC nodes | timestamp | prev count |
/// |----|-----------------|------------------|----------|-----------|------------|
/// | V1 | uniform mean    | uniform mean     | yes      | yes       | yes        |
/// | V2 | yes             | no virtual node  | yes      | yes       | yes        |
/// | V3 | yes             | yes              | no       | yes       | yes        |
/// | V4 | yes             | yes              | yes      | zeroed    | yes        |
/// | V5 | yes             | yes              | yes      | yes       | zeroed     |
/// | V6 | yes             | yes              | yes      | zeroed    | zeroed     |
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "FULL")]
    Full,
    V1,
    V2,
    V3,
    V4,
    V5,
    V6,
}

impl Variant {
    pub const ALL: [Variant; 7] = [
        Variant::Full,
        Variant::V1,
        Variant::V2,
        Variant::V3,
        Variant::V4,
        Variant::V5,
        Variant::V6,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "FULL",
            Variant::V1 => "V1",
            Variant::V2 => "V2",
            Variant::V3 => "V3",
            Variant::V4 => "V4",
            Variant::V5 => "V5",
            Variant::V6 => "V6",
        }
    }

    /// Applies this variant's switches on top of `spec`. Response features
    /// are never masked.
    pub fn apply(self, spec: &ModelSpec) -> ModelSpec {
        let mut out = spec.clone();
        match self {
            Variant::Full => {}
            Variant::V1 => {
                out.arch.local_attention = false;
                out.arch.global = GlobalBranch::UniformMean;
            }
            Variant::V2 => {
                out.arch.global = GlobalBranch::Off;
                out.hyper.gamma = 0.0;
            }
            Variant::V3 => out.include_kcs = false,
            Variant::V4 => out.feature_mask.timestamp = false,
            Variant::V5 => out.feature_mask.prev_count = false,
            Variant::V6 => {
                out.feature_mask.timestamp = false;
                out.feature_mask.prev_count = false;
            }
        }
        out
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::UnknownKey {
                kind: "variant",
                key: s.to_owned(),
            })
    }
}
