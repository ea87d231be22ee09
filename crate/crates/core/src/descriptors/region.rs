use serde::{Deserialize, Serialize};

use super::dip_statistic;
use crate::atlas::{LabelVolume, RegionTable};
use crate::volume::Volume3D;
use crate::{Error, Result};

/// The seven histogram statistics, in canonical column order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stat {
    Mean,
    Median,
    Sd,
    Iqr,
    Skewness,
    Kurtosis,
    Dip,
}

impl Stat {
    pub const ALL: [Stat; 7] = [
        Stat::Mean,
        Stat::Median,
        Stat::Sd,
        Stat::Iqr,
        Stat::Skewness,
        Stat::Kurtosis,
        Stat::Dip,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stat::Mean => "mean",
            Stat::Median => "median",
            Stat::Sd => "sd",
            Stat::Iqr => "iqr",
            Stat::Skewness => "skewness",
            Stat::Kurtosis => "kurtosis",
            Stat::Dip => "dip",
        }
    }

    pub fn from_name(s: &str) -> Option<Stat> {
        Stat::ALL.into_iter().find(|st| st.name() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RegionStats {
    pub mean: Option<f64>,
    pub median: Option<f64>,
    pub sd: Option<f64>,
    pub iqr: Option<f64>,
    pub skewness: Option<f64>,
    pub kurtosis: Option<f64>,
    pub dip: Option<f64>,
}

impl RegionStats {
    pub fn get(&self, s: Stat) -> Option<f64> {
        self.to_array()[s as usize]
    }

    pub fn to_array(&self) -> [Option<f64>; 7] {
        [self.mean, self.median, self.sd, self.iqr, self.skewness, self.kurtosis, self.dip]
    }

    /// Statistics of an arbitrary multiset of finite values.
    pub fn from_values(values: &[f64]) -> RegionStats {
        let n = values.len();
        if n == 0 {
            return RegionStats::default();
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let nf = n as f64;
        let mean = v.iter().sum::<f64>() / nf;
        let (m2, m3, m4) = v.iter().fold((0.0, 0.0, 0.0), |(a, b, c), &x| {
            let d = x - mean;
            let d2 = d * d;
            (a + d2, b + d2 * d, c + d2 * d2)
        });
        let sd = if n > 1 { (m2 / (nf - 1.0)).sqrt() } else { 0.0 };
        let mut out = RegionStats {
            mean: Some(mean),
            median: Some(quantile_sorted(&v, 0.5)),
            sd: Some(sd),
            iqr: Some(quantile_sorted(&v, 0.75) - quantile_sorted(&v, 0.25)),
            ..Default::default()
        };
        if n >= 3 && sd > 0.0 {
            let (m2, m3, m4) = (m2 / nf, m3 / nf, m4 / nf);
            out.skewness = Some(m3 / m2.powf(1.5));
            out.kurtosis = Some(m4 / (m2 * m2) - 3.0);
            out.dip = Some(dip_statistic(&v));
        }
        out
    }
}

/// Linear interpolation between order statistics at 1-based position
/// `1 + (n - 1) p`.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    assert!(n > 0, "quantile of an empty sample");
    let h = (n - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Statistics of `map` over the voxels labelled `region`. An id missing from
/// `table` is an error; a known region with no voxels gives all-missing stats.
pub fn region_stats(
    map: &Volume3D,
    labels: &LabelVolume,
    table: &RegionTable,
    region: u32,
) -> Result<RegionStats> {
    if map.dims() != labels.dims() {
        return Err(Error::invalid("map and label grids differ"));
    }
    if !table.contains(region) {
        return Err(Error::invalid(format!("region {region} is not in the region table")));
    }
    let values: Vec<f64> = labels
        .data()
        .iter()
        .zip(map.data())
        .filter(|(&l, _)| l == region)
        .map(|(_, &v)| v)
        .collect();
    Ok(RegionStats::from_values(&values))
}
