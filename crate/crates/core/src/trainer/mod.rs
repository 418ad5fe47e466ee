//! Training loop, evaluation, ablations and checkpoints.

mod ablate;
mod checkpoint;
mod config;
mod eval;
mod model;
mod train;

pub use ablate::{ablate, extra_variants, ladder, removal_variants, variant, AblationRow, AblationTable, Variant};
pub use checkpoint::{config_hash, Checkpoint};
pub use config::{DataConfig, MaskConfig, ModelConfig, OptimConfig, Preset, Toggles, TrainConfig};
pub use eval::{evaluate, load_dataset, mask_at, render_novel, EvalReport, Metrics, ViewMetrics, REPORT_HEADER};
pub use model::{Model, ModelOutputs, RaySamples};
pub use train::{lipschitz_bound_product, table_learning_rate, train, LogRecord, TrainRun};
