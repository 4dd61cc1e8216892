#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod numcore;
pub mod model;
pub mod rng;
pub mod losses;
pub mod data;
pub mod kv;
pub mod trainer;
pub mod eval;
pub mod cli;
