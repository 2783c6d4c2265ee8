//! Unpaired photo/drawing corpora: manifests, preprocessing, facial-region
//! masks and batch sampling.

mod manifest;
mod masks;
mod preprocess;
mod sampler;
pub mod synthetic;

pub use manifest::{
    load_manifest, ImageKind, ImageRecord, Manifest, ManifestCounts, Origin, StyleTag,
    MANIFEST_HEADER,
};
pub use masks::{
    dilation_radius, region_masks, save_mask_set, FaceParser, Mask, MaskDirParser,
    RegionMaskSet, TemplateParser, EYES, LIPS, LOCAL_REGIONS, LOWER_LIP, NOSE, UPPER_LIP,
};
pub use preprocess::{
    channels_for, decode_image, load_image, load_image_bytes, preprocess, CropMode,
};
pub use sampler::{sample_unpaired_batch, step_rng, UnpairedBatch};
