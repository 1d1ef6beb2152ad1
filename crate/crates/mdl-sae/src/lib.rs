//! Sparse autoencoders selected by minimum description length.
//!
//! The crate trains desk-scale sparse autoencoders (ReLU+L1, TopK,
//! BatchTopK), measures the description length of their latent codes via
//! discretized per-feature entropies, and selects the candidate with the
//! shortest description among those meeting a reconstruction tolerance.
//! Closed-form boolean toy models (feature splitting, hierarchical coding)
//! come with an exact enumeration oracle for cross-checking.
//!
//! Modules:
//! - [`math`] — dense kernels, entropy, scalar quantization, seeded RNG
//! - [`sae`] — autoencoder architectures, gradients, training loop
//! - [`codec`] — description-length measurement and precision search
//! - [`toys`] — feature-splitting and hierarchy toy models
//! - [`ingest`] — IDX image parsing and synthetic datasets
//! - [`sweep`] — hyperparameter sweeps and MDL selection
//! - [`cli`] — command implementations, checkpoints, report files

pub mod cli;
pub mod codec;
pub mod ingest;
pub mod math;
pub mod sae;
pub mod sweep;
pub mod toys;
