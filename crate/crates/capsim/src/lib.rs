//! GPU-free simulation of CUDA-Graph-style kernel launch optimization.
//!
//! The crate models iterative GPU workloads as an executable launch IR
//! (`ir`), decides whether each launch block can be captured into a replayable
//! graph (`eligibility`), rewrites blocks that cannot (`transform`), captures
//! them (`capture`), replaces per-replay data copies with pointer updates
//! (`indirection`), prices every variant with a two-resource discrete-event
//! cost model (`costsim`), and keeps a graph only where it wins (`selector`).
//! A reference interpreter (`interp`) executes both eager and replayed forms
//! so every rewrite can be checked for value equivalence, not just cost.

pub mod capture;
pub mod cli;
pub mod costsim;
pub mod eligibility;
pub mod fixtures;
pub mod indirection;
pub mod interp;
pub mod ir;
pub mod par;
pub mod report;
pub mod rng;
pub mod selector;
pub mod transform;
pub mod workload;

pub use ir::{Block, Node, Program, TensorDesc};
