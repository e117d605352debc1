pub mod attacks;
pub mod autodiff;
pub mod backends;
pub mod error;
pub mod external;
pub mod harness;
pub mod image;
pub mod metrics;
pub mod nn;
pub mod purification;
pub mod rng;
pub mod synthetic;
pub mod warp;

pub use error::{Error, Result};
pub use image::{clamp_pixels, clip_linf, cosine_sim, ImageTensor, Perturbation};
pub use rng::RngState;
