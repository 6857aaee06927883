//! Knowledge tracing with dual graph attention over enclosing subgraphs.
//!
//! Each prediction target (a student answering an exercise) is turned into a
//! small graph of nearby students, exercises and knowledge concepts. A local
//! attention branch and a global virtual-node branch each predict the
//! response, and the two predictions are blended.

pub mod autodiff;
pub mod checkpoint;
pub mod error;
pub mod eval;
pub mod model;
pub mod store;
pub mod subgraph;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
