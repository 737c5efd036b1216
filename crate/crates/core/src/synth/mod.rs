//! Synthetic facial-video corpus, face cropping, label manipulation and the
//! on-disk dataset layout.

mod labels;
mod ppg;
mod render;
mod store;
mod video;

pub use labels::{apply_desync, mask_labels};
pub use ppg::{generate_ppg, HrComponent, HrProfile, MAX_HR_SLOPE_BPM_PER_S};
pub use render::{
    generate_corpus, generate_record, render_video, LabeledRecord, PatchConfig, PatchGeom, SkinEllipse, SynthConfig,
    TruthMeta,
};
pub use store::{load_dataset, load_record, store_dataset};
pub use video::{crop_boxes, crop_face, crop_map, CropBox, LandmarkSequence, VideoClip, CROP_SCALE, CROP_SIZE};
