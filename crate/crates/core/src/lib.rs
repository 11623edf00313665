// NaN-rejecting checks are written as negated comparisons on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod alloc;
pub mod anomaly;
pub mod augment;
pub mod corpus;
pub mod dsp;
pub mod metrics;
pub mod net;
pub mod pipeline;
pub mod seed;
