//! Manifest parsing, image loading and synthetic fixtures.

mod fixture;
mod image;
mod manifest;

pub use self::fixture::{
    label_rect, make_synthetic_fixture, render_fixture_image, FixtureConfig, LabelMix, Rect,
    FIXTURE_MANIFEST,
};
pub use self::image::{
    load_batch, load_image, load_image_file, record_seed, rotate, AugmentationConfig, LoadMode,
    IMAGENET_MEAN, IMAGENET_STD,
};
pub use self::manifest::{
    parse_manifest, parse_manifest_from, patient_id_from_path, split_train_val, study_id_from_path,
    summarize_labels, DatasetManifest, LabelCounts, LabelDistribution, Projection, Sex,
    StudyRecord, ViewPosition, PATH_COLUMN,
};
