//! Continual knowledge-graph embedding: split a graph into a sequence of
//! learning sessions, train TransE or Analogy embeddings under one of seven
//! continual-learning methods, and evaluate link prediction with
//! continual-learning metrics (ACC, FWT, BWT, REM, MS, SSS, LCA).

pub mod autodiff;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod methods;
pub mod model;
pub mod report;
pub mod rng;
pub mod runner;
pub mod sampler;
pub mod synth;
pub mod trainer;
pub mod vae;

pub use error::{Error, Result};
