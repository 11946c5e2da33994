//! Case-based reasoning with retrieval-augmented generation for the
//! Math-24 puzzle: exact-arithmetic solvers, a deterministic card-image
//! codec, a from-scratch latent network for similarity retrieval, prompt
//! construction for LLM answering, and a seeded evaluation harness.

pub mod codec;
pub mod config;
pub mod domain;
pub mod evaluation;
pub mod features;
pub mod network;
pub mod provider;
pub mod query;
pub mod repository;
pub mod retrieval;
