//! Dataset container, normalisation statistics and the rescaling batch generator.

mod features;
mod format;
mod generator;

pub use features::{
    column_from_raw, compute_stats, input_names, output_names, rescale_inputs, rescaled_features, FeatureStat, FeatureStats, LhfMode,
    NormalizationReference, OutputMode, QMode, RescalingConfig, TMode,
};
pub use format::{read_dataset, write_dataset, Dataset, DatasetHeader, FieldSpec, FORMAT_VERSION, MAGIC, X_FIELDS, Y_FIELDS};
pub use generator::{Batch, BatchGenerator, EpochBatches};
