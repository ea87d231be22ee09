use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{LogRegModel, Preprocessor};
use crate::atlas::{slug, RegionPairing, RegionTable};
use crate::descriptors::{fmt_value, FeatureName, MapKind, Scope, Stat};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapFeature {
    pub feature: String,
    pub mean_abs: f64,
    /// 1 = least influential.
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapReport {
    pub base_value: f64,
    pub features: Vec<ShapFeature>,
    /// Per-sample attributions, samples x features (log-odds).
    #[serde(skip)]
    pub values: Vec<Vec<f64>>,
}

/// Exact attributions of a linear model against a column-mean background:
/// `φᵢⱼ = wⱼ (zᵢⱼ − μⱼ)`, base value `w·μ + b`.
pub fn linear_shap(
    model: &LogRegModel,
    pre: &Preprocessor,
    columns: &[String],
    x_raw: &[Vec<Option<f64>>],
) -> Result<ShapReport> {
    let p = model.weights.len();
    if pre.n_features() != p || columns.len() != p {
        return Err(Error::invalid("model, preprocessor and column counts differ"));
    }
    if x_raw.is_empty() {
        return Err(Error::invalid("SHAP needs at least one sample"));
    }
    let z = pre.transform(x_raw);
    let n = z.len() as f64;
    let mu: Vec<f64> = (0..p).map(|j| z.iter().map(|r| r[j]).sum::<f64>() / n).collect();
    let base_value = model.weights.iter().zip(&mu).map(|(w, m)| w * m).sum::<f64>() + model.intercept;
    let values: Vec<Vec<f64>> = z
        .iter()
        .map(|r| (0..p).map(|j| model.weights[j] * (r[j] - mu[j])).collect())
        .collect();
    let mean_abs: Vec<f64> = (0..p).map(|j| values.iter().map(|r| r[j].abs()).sum::<f64>() / n).collect();
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| mean_abs[a].total_cmp(&mean_abs[b]).then(a.cmp(&b)));
    let mut rank = vec![0; p];
    for (r, &j) in order.iter().enumerate() {
        rank[j] = r + 1;
    }
    Ok(ShapReport {
        base_value,
        features: (0..p)
            .map(|j| ShapFeature { feature: columns[j].clone(), mean_abs: mean_abs[j], rank: rank[j] })
            .collect(),
        values,
    })
}

impl ShapReport {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["feature", "mean_abs_shap", "rank"])?;
        for f in &self.features {
            wtr.write_record([f.feature.clone(), fmt_value(Some(f.mean_abs)), f.rank.to_string()])?;
        }
        wtr.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupRank {
    pub group: String,
    pub n_features: usize,
    pub mean_rank: f64,
    /// `mean_rank` rounded for display.
    pub rank: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupedRanks {
    pub by_map: Vec<GroupRank>,
    /// Seven statistics, then their seven asymmetry variants.
    pub by_stat: Vec<GroupRank>,
    /// Regions in table order, then asymmetry pairs in pairing order.
    pub by_region: Vec<GroupRank>,
    /// Features whose names are not canonical PMD names.
    pub ungrouped: Vec<String>,
}

/// Average SHAP rank of the features sharing an image type, a statistic, or a
/// region. Group order follows `table` and `pairing`; empty groups are omitted.
pub fn group_ranks(report: &ShapReport, table: &RegionTable, pairing: &RegionPairing) -> GroupedRanks {
    let mut by_map: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    let mut by_stat: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    let mut by_region: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    let mut ungrouped = Vec::new();

    let region_pos: BTreeMap<String, usize> =
        table.regions().iter().enumerate().map(|(i, r)| (slug(&r.name), i)).collect();
    let pair_pos: BTreeMap<String, usize> = pairing
        .pairs
        .iter()
        .enumerate()
        .map(|(i, p)| (slug(&p.base), table.len() + i))
        .collect();

    for f in &report.features {
        let parsed = FeatureName::parse(&f.feature).and_then(|name| {
            let (asym, pos) = match &name.scope {
                Scope::Region(r) => (false, *region_pos.get(r)?),
                Scope::Asymmetry(b) => (true, *pair_pos.get(b)?),
            };
            Some((name.map as usize, name.stat as usize + if asym { 7 } else { 0 }, pos))
        });
        match parsed {
            Some((m, s, r)) => {
                by_map.entry(m).or_default().push(f.rank);
                by_stat.entry(s).or_default().push(f.rank);
                by_region.entry(r).or_default().push(f.rank);
            }
            None => ungrouped.push(f.feature.clone()),
        }
    }

    let summarise = |groups: BTreeMap<usize, Vec<usize>>, name: &dyn Fn(usize) -> String| -> Vec<GroupRank> {
        groups
            .into_iter()
            .map(|(k, ranks)| {
                let mean_rank = ranks.iter().sum::<usize>() as f64 / ranks.len() as f64;
                GroupRank { group: name(k), n_features: ranks.len(), mean_rank, rank: mean_rank.round() as i64 }
            })
            .collect()
    };
    GroupedRanks {
        by_map: summarise(by_map, &|k| MapKind::ALL[k].name().to_string()),
        by_stat: summarise(by_stat, &|k| {
            if k < 7 {
                Stat::ALL[k].name().to_string()
            } else {
                format!("{}_asym", Stat::ALL[k - 7].name())
            }
        }),
        by_region: summarise(by_region, &|k| {
            if k < table.len() {
                table.regions()[k].name.clone()
            } else {
                format!("{} (asymmetry)", pairing.pairs[k - table.len()].base)
            }
        }),
        ungrouped,
    }
}

impl GroupedRanks {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["category", "group", "n_features", "mean_rank", "rank"])?;
        for (cat, rows) in [("map", &self.by_map), ("stat", &self.by_stat), ("region", &self.by_region)] {
            for g in rows {
                wtr.write_record([
                    cat.to_string(),
                    g.group.clone(),
                    g.n_features.to_string(),
                    fmt_value(Some(g.mean_rank)),
                    g.rank.to_string(),
                ])?;
            }
        }
        wtr.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}
