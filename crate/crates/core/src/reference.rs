//! Published calibration tables bundled with the crate.

use crate::model::{
    counts_from_json, distribution_from_json, ConditionalDistribution, CountsTable,
};

pub const DESIGN_COUNTS_JSON: &str = include_str!("../fixtures/design_counts.json");
pub const DESIGN_DISTRIBUTION_JSON: &str = include_str!("../fixtures/design_distribution.json");
pub const COMMISSIONING_COUNTS_JSON: &str = include_str!("../fixtures/commissioning_counts.json");
pub const COMMISSIONING_DISTRIBUTION_JSON: &str =
    include_str!("../fixtures/commissioning_distribution.json");

/// Counts from the experiment-design run.
pub fn design_counts() -> CountsTable {
    counts_from_json(DESIGN_COUNTS_JSON).expect("bundled table parses")
}

/// Maximum-likelihood fit of [`design_counts`].
pub fn design_distribution() -> ConditionalDistribution {
    distribution_from_json(DESIGN_DISTRIBUTION_JSON).expect("bundled table parses")
}

/// Counts from the commissioning run.
pub fn commissioning_counts() -> CountsTable {
    counts_from_json(COMMISSIONING_COUNTS_JSON).expect("bundled table parses")
}

/// Maximum-likelihood fit of [`commissioning_counts`].
pub fn commissioning_distribution() -> ConditionalDistribution {
    distribution_from_json(COMMISSIONING_DISTRIBUTION_JSON).expect("bundled table parses")
}
