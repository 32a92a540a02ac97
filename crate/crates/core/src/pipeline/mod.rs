//! End-to-end label generation: configuration, manifests, the staged runner,
//! evaluation and a synthetic dataset writer.

mod config;
mod eval;
mod manifest;
mod run;
mod synthetic;

pub use config::{stream_seed, CanonicalizeStage, EstimatorKind, PipelineConfig};
pub use eval::{load_training_pairs, run_eval, write_eval, EvalReport, PckRow, ValidationRow, PCK_ALPHAS};
pub use manifest::{ImageEntry, Manifest};
pub use run::{
    cells_path, fused_path, grid_shape, prepare_image, run_pipeline, worker_count, write_run, ImageReport, PairReport, PairValidation,
    PreparedImage, RunOutput, RunReport, StageStats, ValidationFilter, LABELS_FILE, REPORT_FILE, VALIDATION_FILE,
};
pub use synthetic::{write_synthetic_dataset, SyntheticDataset};
