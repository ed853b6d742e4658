//! Structure-aware self-attention for AMR-to-text generation.

pub mod numerics;
pub mod penman;
pub mod pipeline;
pub mod model;
pub mod eval;
pub mod relation_repr;
pub mod training;
