//! Diffusion-based adaptive negative sampling for knowledge graph
//! completion.
//!
//! Pipeline: load a [`kg::KnowledgeGraph`], compute structural features
//! ([`graph`]), pretrain a translational [`pretrain::Scorer`], score entity
//! difficulty ([`dam`]), then train with diffusion-generated negatives
//! ([`diffusion`]) under a curriculum ([`curriculum`]). [`eval`] reports
//! filtered MRR and Hits@N.

pub mod checkpoint;
pub mod config;
pub mod curriculum;
pub mod dam;
pub mod diffusion;
pub mod error;
pub mod eval;
pub mod graph;
pub mod kg;
pub mod micrograd;
pub mod pretrain;
pub mod rng;
pub mod trainer;

pub use error::{Error, ErrorClass, Result};
