//! Domain-adaptation losses and the curricular self-training loop.

pub mod discrepancy;
pub mod reverse;
pub mod selftrain;
