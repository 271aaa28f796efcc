//! Benchmark library for posterior-sampling quality of Plug&Play
//! diffusion methods in sparse-view CT.
//!
//! The prior is an analytic Gaussian mixture, so the true posterior,
//! the exact time-dependent scores, and both evaluation criteria
//! (measurement consistency and posterior-prior similarity) are
//! available in closed form at desk scale.

pub mod bench;
pub mod error;
pub mod gmm;
pub mod guidance;
pub mod image;
pub mod io;
pub mod metrics;
pub mod oracle;
pub mod tomo;

pub use error::{Error, Result};
pub use gmm::{make_phantoms, make_prior_from_templates, Covariance, Gmm1d, GmmPrior};
pub use image::{Image, ImageGrid};
