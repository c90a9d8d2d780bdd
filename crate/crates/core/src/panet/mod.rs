//! Network assembly, parameter reporting and checkpoints.

mod checkpoint;
mod config;
mod model;

pub use checkpoint::{
    from_bytes, load_checkpoint, load_checkpoint_expecting, save_checkpoint, to_bytes, MAGIC, VERSION,
};
pub use config::{ModelConfig, ENCODER_STAGES, TOTAL_STRIDE};
pub use model::{PaNet, ParamRow, ParamSummary, DECODER_TAPS};
