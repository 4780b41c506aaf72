//! Experiment harness for `seqloc`: JSON scenario files, the six Monte Carlo
//! studies, summary statistics and CSV/SVG output.

pub mod batch_io;
pub mod config;
pub mod experiments;
pub mod output;
pub mod stats;
