pub mod data;
pub mod error;
pub mod mlp;
pub mod seed;

pub use error::{Error, Result};
pub mod rebalance;
pub mod venn;
pub mod metrics;
pub mod featsel;
pub mod harness;
pub mod cli;
