//! Regional histogram statistics of perfusion maps and the feature tables
//! built from them.

mod dip;
mod region;
mod table;

pub use dip::dip_statistic;
pub use region::{quantile_sorted, region_stats, RegionStats, Stat};
pub use table::{
    asymmetry_feature_names, asymmetry_features, extract_pmds, regional_feature_names, ClassLabel,
    FeatureName, MapKind, PmdTable, Scope,
};
pub(crate) use table::fmt_value;
