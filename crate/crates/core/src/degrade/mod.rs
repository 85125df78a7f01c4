//! Composite degradation imaging model and paired dataset synthesis.
//!
//! A clear image `J` is degraded in a fixed order: low light, then rain or
//! snow, then haze. Each stage is usable on its own; [`compose`] chains the
//! flagged ones and records the sampled parameters.

mod compose;
mod dataset;
mod image;
mod procedural;
mod stages;
mod streaks;

pub use compose::{compose, derive_seed, mix64, stage_seed, DegradationSpec, Manifest, Stage};
pub use dataset::{
    read_manifest, synthesize_dataset, write_manifest, write_procedural_scenes, PairRecord, SynthesisOptions,
    MANIFEST_FILE,
};
pub use image::Image;
pub use procedural::procedural_scene;
pub use stages::{
    apply_haze, apply_low_light, apply_rain, apply_snow, estimate_illumination, DepthMap, IlluminationMap,
    StreakKind, StreakLayer,
};
pub use streaks::{generate_streaks, StreakParams, SNOW_COLOR};
