//! Inductive text classification over per-document multi-relation word
//! graphs, combining a transformer sequence encoder with adaptive message
//! passing and a Bi-GRU fusion.

pub mod corpus;
pub mod embeddings;
pub mod graph;
pub mod model;
pub mod train;

pub use textgsl_autodiff as autodiff;

pub type TextGsl64 = model::TextGsl<f64>;
pub type TextGsl32 = model::TextGsl<f32>;
pub type DocInput64 = model::DocInput<f64>;
