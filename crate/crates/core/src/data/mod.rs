//! Image I/O, augmentation, synthetic phantoms and fold splitting.

mod augment;
mod dataset;
mod image;
mod phantom;
mod split;

pub use augment::{
    augment, augment_all, elastic_deform, hflip, rot180, rotate, vflip, AugTag, AugmentConfig, ElasticParams, Sample,
};
pub use dataset::{image_path, mask_path, read_dataset, read_manifest, write_dataset, ManifestRow, MANIFEST};
pub use image::{decode_gray8, encode_pgm, encode_png, load_image, load_mask, save_image, save_mask, GrayImage};
pub use phantom::{synth_dataset, synth_phantom, PhantomConfig};
pub use split::{kfold, Fold, FoldSplit};
