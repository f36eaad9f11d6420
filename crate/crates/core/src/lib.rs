//! Single-image defocus map estimation.
//!
//! Edge patches are classified into a ladder of Gaussian blur levels from
//! hand-crafted and learned features; the sparse estimates are denoised with a
//! confidence-weighted joint bilateral filter and propagated to every pixel
//! through a matting Laplacian.

pub mod apps;
pub mod config;
pub mod datagen;
pub mod descriptor;
pub mod edges;
pub mod error;
pub mod features;
pub mod filter;
pub mod image;
pub mod io;
pub mod nn;
pub mod par;
pub mod pipeline;
pub mod propagate;
pub mod rng;
pub mod sparsemap;

pub use config::Config;
pub use edges::{EdgeLabel, EdgeMap, PatchSample, Scale};
pub use error::{Error, Result};
pub use image::Image;
pub use nn::Model;
pub use pipeline::{estimate, Estimate};
pub use rng::Rng;
