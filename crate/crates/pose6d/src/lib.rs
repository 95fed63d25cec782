//! File formats, evaluation reports and the command-line front end for
//! [`pose6d_core`].
//!
//! The `pose6d` binary chains `synth → encode → decode → eval`; the same
//! stages are available in-process through [`run`] and [`report`], and
//! produce byte-identical output.

pub mod bench;
pub mod cli;
pub mod config;
pub mod formats;
pub mod ply;
pub mod report;
pub mod run;

pub use pose6d_core as core;
