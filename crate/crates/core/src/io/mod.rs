//! Scene ingestion and result export.

pub mod export;
pub mod formats;
pub mod scene;

pub use export::{export_planes, export_reconstruction, load_config, load_planes, load_run, RunRecord};
pub use scene::{load_ground_truth, load_scene, write_scene, write_synth, GroundTruth, SceneManifest};
