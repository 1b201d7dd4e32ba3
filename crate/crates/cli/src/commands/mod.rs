//! One module per sub-command. Every `run` returns the number of per-item
//! failures; anything unrecoverable comes back as an error instead.

pub mod encode;
pub mod evaluate;
pub mod extract;
pub mod graph_optimize;
pub mod index;
pub mod label;
pub mod localize;
pub mod query;
pub mod synth;
