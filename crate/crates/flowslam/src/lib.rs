//! File formats, parallel pipeline stages and the `flowslam` command line.

pub mod cli;
pub mod io;
pub mod pipeline;
pub mod sequence;
