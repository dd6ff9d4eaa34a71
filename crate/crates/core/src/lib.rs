//! Color image denoising with a truncated nuclear-minus-Frobenius low-rank
//! prior and channel/patch-adaptive weights, solved per patch group by ADMM.

pub mod admm;
pub mod config;
pub mod error;
pub mod image;
pub mod linalg;
pub mod metrics;
pub mod noise_model;
pub mod patch;
pub mod prox;
pub mod synth;

pub use error::{Error, Result};
pub use image::ColorImage;
