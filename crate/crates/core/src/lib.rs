//! Analysis results as data.
//!
//! Clinical analysis datasets are parsed and validated ([`ingest`]),
//! registered into a single-file relational store ([`schema`], [`store`]),
//! analysed by versioned standards ([`standards`]) built on pure kernels
//! ([`stats`]), and rendered back out of the store without recomputation
//! ([`render`]).

pub mod error;
pub mod ingest;
pub mod render;
pub mod schema;
pub mod standards;
pub mod stats;
pub mod store;

pub use error::{Error, ErrorClass, Result};
