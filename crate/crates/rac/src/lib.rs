//! File formats, experiment grids and the command-line driver around
//! `rac-core`.

pub mod cli;
pub mod experiment;
pub mod matrix_file;
pub mod output;
pub mod scenario_file;
pub mod trace_files;

pub use rac_core;
