//! Carotid plaque segmentation: a parallel three-decoder encoder–decoder
//! network with pyramid dilated convolutions and squeeze-excitation fusion,
//! trained with Dice, cross-entropy or SSIM loss, followed by max-contour
//! morphological refinement.

pub mod autograd;
pub mod data;
pub mod error;
pub mod gradsuite;
pub mod losses;
pub mod mask;
pub mod metrics;
pub mod nn;
pub mod panet;
pub mod postprocess;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use mask::BinaryMask;
pub use tensor::{Scalar, Tensor};
