//! Repository-level dataset construction for code completion models: context
//! composers, filtering, packing, evaluation and RoPE numerics.

pub mod cli;
pub mod composers;
pub mod error;
pub mod eval;
pub mod filter;
pub mod jsonl;
pub mod model;
pub mod packing;
pub mod pipeline;
pub mod pysurface;
pub mod relevance;
pub mod rope;
pub mod sweep;
pub mod tokenizer;
