//! Shared fixtures for the benchmarks.

use climvar::dataset::{compute_stats, Dataset, FeatureStats, NormalizationReference, RescalingConfig};
use climvar::synth::{generate_dataset, SynthConfig};
use climvar::thermo::{ClimateTag, Constants};

/// Synthetic columns at the default 30 levels.
pub fn columns(n: usize, climate: ClimateTag, seed: u64) -> Dataset {
    generate_dataset(&SynthConfig::default(), climate, n, seed).expect("default synth config is valid")
}

/// Statistics for `config` fitted on `data`.
pub fn stats(data: &Dataset, config: &RescalingConfig) -> FeatureStats {
    compute_stats(&[data], config, NormalizationReference::Training, &Constants::default()).expect("stats")
}
