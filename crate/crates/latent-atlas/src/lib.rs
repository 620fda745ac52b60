//! Latent-space analytics engine.
//!
//! The crate maps emergent properties in high-dimensional data in five steps:
//!
//! 1. [`dataio`] loads observation-by-feature matrices, rescales them to
//!    \[0,1\], and manages the variables of interest.
//! 2. [`embedder`] fits a nonlinear embedding (k-NN graph, fuzzy graph,
//!    SGD layout) and projects out-of-sample points into it.
//! 3. [`dls`] rescales the embedding to the unit cube and discretizes it
//!    into a pixel grid at an automatically chosen resolution.
//! 4. [`statmap`] correlates per-pixel Gaussian proximity fields with a
//!    variable of interest and extracts signed suprathreshold clusters,
//!    which [`profiler`] turns into per-feature effect-size profiles.
//! 5. [`predictor`] trains cross-validated random-forest ensembles on the
//!    embedding coordinates to score unseen observations.
//!
//! [`pipeline`] orchestrates the whole flow from a single JSON config and
//! backs the `latent-atlas` command-line binary.

pub mod dataio;
pub mod dls;
pub mod embedder;
pub mod error;
pub mod pipeline;
pub mod predictor;
pub mod profiler;
pub mod render;
pub mod seed;
pub mod statmap;

pub use error::{Error, Result};
