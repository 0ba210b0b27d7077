//! Conditional junction-tree variational autoencoder for property-controlled
//! molecule generation.

pub mod chem;
pub mod corpus;
pub mod junctree;
pub mod model;
pub mod nn;
pub mod training;
