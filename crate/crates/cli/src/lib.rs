//! Configuration, pipeline commands and attention export behind the
//! `dgakt` binary.

pub mod config;
pub mod explain;
pub mod pipeline;
