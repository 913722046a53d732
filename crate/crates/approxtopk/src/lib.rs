//! Host-side companion to `approxtopk-core`: threaded search, vecs file IO,
//! ground truth with caching, benchmarks, roofline spec files and the
//! `approxtopk` command line tool.

pub mod bench;
pub mod calibrate;
pub mod error;
pub mod parallel;
pub mod specfile;
pub mod synth;
pub mod truth;
pub mod vecs;

pub use approxtopk_core as core;
pub use error::{Error, Result};
pub use parallel::{default_workers, search_parallel};
