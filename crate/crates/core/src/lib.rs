//! Panchromatic-guided hyperspectral image denoising.
//!
//! A noisy cube `Y` is modelled as `U Vᵀ + E + S`: a low-rank part whose
//! spatial coefficient images `U` are regularized by a total variation
//! weighted from the gradients of an aligned panchromatic image, dense
//! Gaussian noise `E` and sparse noise `S`. The model is solved by ADMM.

pub mod admm;
pub mod error;
pub mod io;
pub mod linalg;
pub mod metrics;
pub mod noise;
pub mod synthetic;
pub mod tensor;
pub mod weighting;

pub use admm::{denoise, denoise_with_reference, Denoised, SolverConfig, WeightsMode};
pub use error::{Error, Result};
pub use tensor::{Field, HyperCube, PanImage};
