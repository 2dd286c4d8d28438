//! Multi-SMILES variational autoencoder with grammar-constrained decoding and
//! latent-space property optimization.

pub mod grammar;
pub mod latentopt;
pub mod molgraph;
pub mod nn;
pub mod rng;
pub mod smiles;
pub mod tensor;
pub mod vae;
