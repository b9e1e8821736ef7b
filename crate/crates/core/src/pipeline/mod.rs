//! From scenes to annual height maps.
//!
//! Scenes are filtered to the leaf-on season and ranked by cloudiness;
//! training patches are cut around clear, labelled center pixels; inference
//! runs over overlapping windows; masked predictions of one year are
//! combined by a per-pixel median.

mod composite;
mod patches;
mod scene;
mod select;
mod tiling;

pub use composite::{annual_composite, median, median_composite, AnnualMap};
pub use patches::{count_valid_patches, extract_patches, location_id};
pub use scene::{
    landcover, manifest_csv, mask_invalid, parse_date, parse_manifest, read_manifest, Scene, SceneRecord, BAND_NAMES,
    CLOUD_LIMIT, MANIFEST_HEADER,
};
pub use select::{in_season, select_scenes, select_training_scenes, MAX_SCENES, TRAIN_SCENES};
pub use tiling::{predict_raster, predict_raster_tiled, predict_scene, predict_scenes, tile_spans, TileSpan, OVERLAP, TILE};
