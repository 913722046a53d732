//! Approximate top-k similarity search by fused scoring and binned
//! reduction.
//!
//! The database is cut into `L` contiguous bins of `2^W` rows. One pass
//! scores every query against every row and keeps only the best score and
//! index per bin ([`kernel`]); an optional second pass picks the exact top-k
//! among the `L` survivors ([`rescore`]). `L` comes from a birthday-problem
//! recall model ([`recall`]): top-k rows sharing a bin are the only source
//! of error. [`roofline`] reasons about the cost of the pass in terms of
//! FLOPs, bytes and coefficient-wise operations.
//!
//! The crate is `no_std` with `alloc`. The `std` feature enables runtime CPU
//! feature detection for the scoring microkernel.
#![cfg_attr(not(any(test, feature = "std")), no_std)]

extern crate alloc;

pub mod error;
pub mod kernel;
pub mod metric;
pub mod microkernel;
pub mod oracle;
pub mod recall;
pub mod rescore;
pub mod roofline;

pub use error::{Error, Result};
pub use kernel::{
    count_flops, default_layout, partial_reduce, precompute_half_norms, BlockLayout, CandidateSet,
    PartialReduce,
};
pub use metric::{compare, score, DenseMatrix, Direction, Metric, ScoredIndex};
pub use oracle::{brute_force_topk, measure_recall, RecallReport, RecallScore};
pub use recall::{
    approx_min_bins, expected_recall, min_bins, plan_bins, simulate_recall, BinPlan, RecallEstimate,
};
pub use rescore::{exact_rescore, search, SearchOutput, SearchParams, TopKResult};
pub use roofline::{Bound, HardwareSpec, KernelProfile, RooflineReport};
