//! Library surface of the `pid` command-line tool, exposed so integration
//! tests can drive the pipeline directly.

pub mod config;
pub mod detect;
pub mod pipeline;
pub mod reference;
