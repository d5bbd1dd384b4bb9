// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod env;
pub mod features;
pub mod geometry;
pub mod nnet;
pub mod pretrain;
pub mod proxy;
pub mod rl;
pub mod surrogate;
