#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod baselines;
pub mod eigen;
pub mod error;
pub mod experiments;
pub mod odmd;
pub mod signal;
pub mod spectral;
pub mod trace;
