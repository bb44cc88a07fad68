//! Data loading, synthetic corpora, training, evaluation, ablations and
//! checkpoints.

pub mod ablation;
pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod featurize;
pub mod metrics;
pub mod synth;
pub mod train;

pub use ablation::{ablate, format_records, format_table, grid_cells, AblationGrid, AblationRow};
pub use checkpoint::{Checkpoint, FORMAT_VERSION};
pub use config::{TrainConfig, PRESETS};
pub use dataset::{load_dataset, parse_dataset, DataFormat, Dataset, DatasetRecord};
pub use featurize::{FitReport, Featurizer};
pub use metrics::{compute_metrics, weighted_f1, ClassMetrics, MetricsReport};
pub use synth::{generate_synthetic, SYNTH_CLASSES};
pub use train::{evaluate, predict_classes, train, EpochLog, TrainOutcome};
