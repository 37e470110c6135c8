//! Robust static output feedback synthesis for polytopic uncertain systems.
//!
//! A particle swarm with differential evolution on its cognitive memories
//! searches over gain matrices; every candidate gain is scored by solving
//! the mixed H2/H∞ LMI conditions as a small semidefinite program.

// Dense kernels index several arrays in lockstep, and `!(x > 0.0)` is the
// idiom used throughout to reject NaN together with out-of-range values.
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod benchmarks;
pub mod cli;
pub mod evolve;
pub mod linalg;
pub mod lmi;
pub mod oracle;
pub mod plant;
pub mod sdp;
