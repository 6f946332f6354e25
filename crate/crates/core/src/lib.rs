// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod corpus;
pub mod embed_store;
pub mod error;
pub mod metric;
pub mod miner;
pub mod selector;
pub mod stance;
pub mod synthetic;

pub use error::{Error, Result};
