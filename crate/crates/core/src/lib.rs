//! Evaluation harness for text-to-image models on human image synthesis:
//! aesthetic scoring, defect detection, concept coverage and bias audits,
//! all reproducible offline from recorded backend transcripts.

pub mod backends;
pub mod image;
pub mod promptforge;
pub mod schema;
pub mod aesthetics;
pub mod nn;
pub mod stats;
pub mod realism;
pub mod coverage;
pub mod fairness;
pub mod config;
pub mod pipeline;
pub mod fixtures;
