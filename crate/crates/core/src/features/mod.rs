//! Technical indicators, realized range volatility and sample construction.

mod indicators;
mod preprocess;
mod rrv;
mod samples;

pub use indicators::{indicator_series, ols_slope, population_std, Indicator, INDICATORS, MAX_LOOKBACK};
pub use preprocess::{
    fill_row, forward_fill, percentile_sorted, winsorize_cross_section, winsorize_with,
    zero_fill, zscore_cross_section, FillPolicy,
};
pub use rrv::{compute_rrv, rrv_from_ranges};
pub use samples::{
    build_samples, compute_attributes, compute_indicators, fill_missing, indicator_names,
    read_sample_cache, write_feature_dump, write_sample_cache, FeatureSample, IndicatorMatrix,
    SampleSet, StockAttribute, N_INDICATORS, SAMPLE_SCHEMA_VERSION,
};
