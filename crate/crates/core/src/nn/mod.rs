//! Layers of the segmentation network, each a forward kernel plus its
//! backward rule on the [`Tape`](crate::autograd::Tape).

mod activation;
mod conv;
pub mod init;
mod norm;
mod pdc;
mod pool;
mod se;

pub use activation::Activation;
pub use conv::{conv2d, upsample2x, Conv2d, ConvSpec, Upsample2x};
pub use norm::{batchnorm2d, BatchNorm2d, Mode};
pub use pdc::{PdcBlock, PDC_DILATIONS};
pub use se::{channel_gate, linear, SeBlock};
