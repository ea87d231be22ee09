//! Group-difference screening: Wilcoxon rank-sum, Cohen's d, Bonferroni
//! adjustment, and normalized cross-correlation of maps.

use std::collections::HashSet;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::descriptors::{fmt_value, FeatureName, PmdTable};
use crate::volume::{Mask3D, Volume3D};
use crate::{Error, Result};

/// Largest group size for the exact null distribution.
pub const EXACT_MAX_N: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankSumResult {
    /// Rank sum of `x`, midranks for ties.
    pub statistic: f64,
    pub p_value: f64,
    pub exact: bool,
}

/// Midranks (1-based) of `values`.
pub fn midranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Number of size-`k` subsets of {1..n} with each possible sum, indexed by sum.
fn subset_sum_counts(n: usize, k: usize) -> Vec<u64> {
    let max_sum = n * (n + 1) / 2;
    // table[j][s]: subsets of size j with sum s
    let mut table = vec![vec![0u64; max_sum + 1]; k + 1];
    table[0][0] = 1;
    for v in 1..=n {
        for j in (1..=k.min(v)).rev() {
            for s in (v..=max_sum).rev() {
                table[j][s] += table[j - 1][s - v];
            }
        }
    }
    table.swap_remove(k)
}

pub fn wilcoxon_rank_sum(x: &[f64], y: &[f64]) -> Result<RankSumResult> {
    rank_sum(x, y, true)
}

/// Rank-sum test forced onto the normal approximation, whatever the sizes.
pub fn wilcoxon_rank_sum_normal(x: &[f64], y: &[f64]) -> Result<RankSumResult> {
    rank_sum(x, y, false)
}

fn rank_sum(x: &[f64], y: &[f64], allow_exact: bool) -> Result<RankSumResult> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::invalid("rank-sum test needs both samples non-empty"));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::invalid("rank-sum test needs finite values"));
    }
    let (n1, n2) = (x.len(), y.len());
    let n = n1 + n2;
    let pooled: Vec<f64> = x.iter().chain(y).copied().collect();
    let ranks = midranks(&pooled);
    let w: f64 = ranks[..n1].iter().sum();

    let mut sorted = pooled.clone();
    sorted.sort_by(f64::total_cmp);
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < n {
        let j = sorted[i..].iter().take_while(|&&v| v == sorted[i]).count();
        tie_term += (j * j * j - j) as f64;
        i += j;
    }

    if allow_exact && n1 <= EXACT_MAX_N && n2 <= EXACT_MAX_N && tie_term == 0.0 {
        let counts = subset_sum_counts(n, n1);
        let total: u64 = counts.iter().sum();
        let w_int = w.round() as usize;
        let lower: u64 = counts[..=w_int].iter().sum();
        let upper: u64 = counts[w_int..].iter().sum();
        let p = (2.0 * lower.min(upper) as f64 / total as f64).min(1.0);
        return Ok(RankSumResult { statistic: w, p_value: p, exact: true });
    }

    let (n1f, n2f, nf) = (n1 as f64, n2 as f64, n as f64);
    let mean = n1f * (nf + 1.0) / 2.0;
    let var = n1f * n2f / 12.0 * ((nf + 1.0) - tie_term / (nf * (nf - 1.0)));
    let p = if var <= 0.0 {
        1.0
    } else {
        let z = ((w - mean).abs() - 0.5).max(0.0) / var.sqrt();
        let normal = Normal::standard();
        (2.0 * normal.sf(z)).min(1.0)
    };
    Ok(RankSumResult { statistic: w, p_value: p, exact: false })
}

fn mean_var(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let ss = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>();
    (m, ss / (n - 1.0))
}

/// Standardized mean difference `(mean(x) - mean(y)) / s_pooled`. With zero
/// pooled SD the result is 0 for equal means and ±∞ otherwise.
pub fn cohens_d(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() < 2 || y.len() < 2 {
        return Err(Error::invalid("Cohen's d needs at least two values per group"));
    }
    let (mx, vx) = mean_var(x);
    let (my, vy) = mean_var(y);
    let (n1, n2) = (x.len() as f64, y.len() as f64);
    let s = (((n1 - 1.0) * vx + (n2 - 1.0) * vy) / (n1 + n2 - 2.0)).sqrt();
    let diff = mx - my;
    Ok(if s > 0.0 {
        diff / s
    } else if diff == 0.0 {
        0.0
    } else {
        diff.signum() * f64::INFINITY
    })
}

pub fn bonferroni(p_raw: f64, m: usize) -> f64 {
    (p_raw * m.max(1) as f64).min(1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScreenMode {
    Regional,
    Asymmetry,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScreenConfig {
    pub alpha: f64,
    pub min_abs_d: f64,
    /// Bonferroni comparison count; `None` uses the number of distinct
    /// regions (regional mode) or pairs (asymmetry mode) in the table.
    #[serde(default)]
    pub m: Option<usize>,
}

impl Default for ScreenConfig {
    fn default() -> Self {
        Self { alpha: 0.05, min_abs_d: 0.3, m: None }
    }
}

impl ScreenConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::invalid("alpha must lie in (0, 1)"));
        }
        if !(self.min_abs_d >= 0.0) {
            return Err(Error::invalid("effect-size threshold must be non-negative"));
        }
        if self.m == Some(0) {
            return Err(Error::invalid("comparison count must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreenResult {
    pub feature: String,
    pub n_stroke: usize,
    pub n_seizure: usize,
    pub p_raw: f64,
    pub p_adj: f64,
    /// Positive when stroke > seizure.
    pub cohen_d: f64,
    pub significant: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreenReport {
    pub mode: ScreenMode,
    pub m: usize,
    pub results: Vec<ScreenResult>,
    /// Features skipped because a group had fewer than two observed values.
    pub excluded: Vec<String>,
}

impl ScreenReport {
    pub fn significant(&self) -> impl Iterator<Item = &ScreenResult> {
        self.results.iter().filter(|r| r.significant)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["feature", "n_stroke", "n_seizure", "p_raw", "p_adj", "cohen_d", "significant"])?;
        for r in &self.results {
            wtr.write_record([
                r.feature.clone(),
                r.n_stroke.to_string(),
                r.n_seizure.to_string(),
                fmt_value(Some(r.p_raw)),
                fmt_value(Some(r.p_adj)),
                fmt_value(Some(r.cohen_d)),
                r.significant.to_string(),
            ])?;
        }
        wtr.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    /// Whitespace-separated `rank -log10(p_adj) cohen_d` rows for plotting.
    pub fn write_plot_data<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "# rank neg_log10_p_adj cohen_d feature")?;
        for (i, r) in self.results.iter().enumerate() {
            writeln!(w, "{} {:?} {:?} {}", i + 1, -r.p_adj.log10(), r.cohen_d, r.feature)?;
        }
        Ok(())
    }
}

pub fn screen(table: &PmdTable, mode: ScreenMode, cfg: &ScreenConfig) -> Result<ScreenReport> {
    cfg.validate()?;
    let (n_pos, n_neg) = table.class_counts();
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Cohort("screening needs both stroke and seizure subjects".into()));
    }
    let cols: Vec<(usize, FeatureName)> = table
        .columns
        .iter()
        .enumerate()
        .filter_map(|(j, c)| FeatureName::parse(c).map(|f| (j, f)))
        .filter(|(_, f)| f.is_asymmetry() == (mode == ScreenMode::Asymmetry))
        .collect();
    let m = cfg.m.unwrap_or_else(|| {
        let scopes: HashSet<_> = cols.iter().map(|(_, f)| &f.scope).collect();
        scopes.len().max(1)
    });

    let outcomes: Vec<Option<ScreenResult>> = cols
        .par_iter()
        .map(|(j, _)| {
            let (mut xs, mut ys) = (Vec::new(), Vec::new());
            for (row, label) in table.rows.iter().zip(&table.labels) {
                if let Some(v) = row[*j] {
                    if label.is_positive() {
                        xs.push(v)
                    } else {
                        ys.push(v)
                    }
                }
            }
            let d = cohens_d(&xs, &ys).ok()?;
            let w = wilcoxon_rank_sum(&xs, &ys).ok()?;
            let p_adj = bonferroni(w.p_value, m);
            Some(ScreenResult {
                feature: table.columns[*j].clone(),
                n_stroke: xs.len(),
                n_seizure: ys.len(),
                p_raw: w.p_value,
                p_adj,
                cohen_d: d,
                significant: p_adj < cfg.alpha && d.abs() > cfg.min_abs_d,
            })
        })
        .collect();

    let mut results = Vec::with_capacity(outcomes.len());
    let mut excluded = Vec::new();
    for ((j, _), o) in cols.iter().zip(outcomes) {
        match o {
            Some(r) => results.push(r),
            None => {
                log::warn!("feature {} excluded: a group has fewer than two observed values", table.columns[*j]);
                excluded.push(table.columns[*j].clone());
            }
        }
    }
    results.sort_by(|a, b| b.cohen_d.abs().total_cmp(&a.cohen_d.abs()));
    Ok(ScreenReport { mode, m, results, excluded })
}

/// Pearson correlation of two maps over the masked voxels.
pub fn ncc(a: &Volume3D, b: &Volume3D, mask: &Mask3D) -> Result<f64> {
    if !a.geometry().same_grid(b.geometry()) {
        return Err(Error::invalid("maps are on different grids"));
    }
    mask.check_dims(a.dims())?;
    let idx: Vec<usize> = mask.indices().collect();
    if idx.len() < 2 {
        return Err(Error::invalid("NCC needs at least two masked voxels"));
    }
    let n = idx.len() as f64;
    let ma = idx.iter().map(|&i| a.data()[i]).sum::<f64>() / n;
    let mb = idx.iter().map(|&i| b.data()[i]).sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for &i in &idx {
        let (da, db) = (a.data()[i] - ma, b.data()[i] - mb);
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::invalid("NCC is undefined for a map constant over the mask"));
    }
    Ok((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::descriptors::ClassLabel;
    use crate::volume::Geometry;
    use proptest::prelude::*;

    #[test]
    fn exact_two_by_two() {
        let r = wilcoxon_rank_sum(&[1.0, 2.0], &[3.0, 4.0]).unwrap();
        assert!(r.exact);
        assert_eq!(r.statistic, 3.0);
        assert_eq!(r.p_value, 1.0 / 3.0);
    }

    #[test]
    fn subset_counts_sum_to_binomial() {
        let c = subset_sum_counts(24, 12);
        assert_eq!(c.iter().sum::<u64>(), 2_704_156);
        assert_eq!(subset_sum_counts(4, 2), vec![0, 0, 0, 1, 1, 2, 1, 1, 0, 0, 0]);
    }

    #[test]
    fn identical_large_samples_are_null() {
        let x: Vec<f64> = (0..30).map(|i| (i % 7) as f64).collect();
        let r = wilcoxon_rank_sum(&x, &x).unwrap();
        assert!(!r.exact);
        assert!(r.p_value >= 0.99);
    }

    #[test]
    fn separated_twenties_tiny_p() {
        let x: Vec<f64> = (0..20).map(f64::from).collect();
        let y: Vec<f64> = (100..120).map(f64::from).collect();
        let r = wilcoxon_rank_sum(&x, &y).unwrap();
        assert!(!r.exact);
        assert!(r.p_value < 1e-6);
    }

    #[test]
    fn midranks_average_ties() {
        assert_eq!(midranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn rank_sum_rejects_empty_or_nan() {
        assert!(wilcoxon_rank_sum(&[], &[1.0]).is_err());
        assert!(wilcoxon_rank_sum(&[f64::NAN], &[1.0]).is_err());
    }

    #[test]
    fn cohens_d_examples() {
        assert_eq!(cohens_d(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).unwrap(), -3.0);
        assert_eq!(cohens_d(&[1.0, 5.0], &[1.0, 5.0]).unwrap(), 0.0);
        assert_eq!(cohens_d(&[2.0, 2.0], &[2.0, 2.0]).unwrap(), 0.0);
        assert_eq!(cohens_d(&[3.0, 3.0], &[2.0, 2.0]).unwrap(), f64::INFINITY);
        assert!(cohens_d(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn bonferroni_examples() {
        assert!((bonferroni(0.0004, 113) - 0.0452).abs() < 1e-15);
        assert_eq!(bonferroni(0.5, 113), 1.0);
        assert_eq!(bonferroni(0.0123, 1), 0.0123);
    }

    fn table(cols: &[&str], rows: Vec<(ClassLabel, Vec<Option<f64>>)>) -> PmdTable {
        PmdTable::new(
            (0..rows.len()).map(|i| format!("s{i}")).collect(),
            rows.iter().map(|r| r.0).collect(),
            cols.iter().map(|c| c.to_string()).collect(),
            rows.into_iter().map(|r| r.1).collect(),
        )
        .unwrap()
    }

    #[test]
    fn screen_excludes_all_missing_and_sorts_by_effect() {
        let cols = ["tmax_mean_left_a", "tmax_mean_right_a", "tmax_sd_left_a", "tmax_mean_asym_a"];
        let mut rows = Vec::new();
        for i in 0..6 {
            let v = i as f64;
            rows.push((ClassLabel::Stroke, vec![Some(10.0 + v), Some(v), Some(v), Some(1.0)]));
            rows.push((ClassLabel::Seizure, vec![Some(v), Some(v + 0.5), None, Some(1.0)]));
        }
        let t = table(&cols, rows);
        let r = screen(&t, ScreenMode::Regional, &ScreenConfig::default()).unwrap();
        assert_eq!(r.m, 2);
        assert_eq!(r.excluded, vec!["tmax_sd_left_a".to_string()]);
        assert_eq!(r.results[0].feature, "tmax_mean_left_a");
        assert!(r.results[0].significant && r.results[0].cohen_d > 0.0);
        assert!(!r.results[1].significant);
        let a = screen(&t, ScreenMode::Asymmetry, &ScreenConfig::default()).unwrap();
        assert_eq!(a.results.len(), 1);
        assert_eq!(a.results[0].cohen_d, 0.0);
    }

    #[test]
    fn screen_needs_both_classes() {
        let t = table(&["cbf_mean_x"], vec![(ClassLabel::Stroke, vec![Some(1.0)])]);
        assert!(matches!(
            screen(&t, ScreenMode::Regional, &ScreenConfig::default()),
            Err(Error::Cohort(_))
        ));
    }

    fn vol(v: Vec<f64>) -> Volume3D {
        let g = Geometry::with_spacing([v.len(), 1, 1], [1.0; 3]).unwrap();
        Volume3D::new(g, v).unwrap()
    }

    #[test]
    fn ncc_examples() {
        let a = vol(vec![1.0, 4.0, 2.0, 8.0, 5.0]);
        let neg = vol(a.data().iter().map(|x| -x).collect());
        let m = Mask3D::full(a.dims());
        assert!((ncc(&a, &a, &m).unwrap() - 1.0).abs() < 1e-15);
        assert!((ncc(&a, &neg, &m).unwrap() + 1.0).abs() < 1e-15);
        assert!(ncc(&a, &vol(vec![3.0; 5]), &m).is_err());
    }

    fn sample() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-100.0f64..100.0, 2..15)
    }

    proptest! {
        #[test]
        fn rank_sum_invariant_under_increasing_transform(
            x in prop::collection::vec(-1000i32..1000, 1..15),
            y in prop::collection::vec(-1000i32..1000, 1..15),
        ) {
            // t^3 + 5t - 2 is strictly increasing and exact in f64 on this range.
            let f = |v: &Vec<i32>| v.iter().map(|&t| { let t = t as f64; t * t * t + 5.0 * t - 2.0 }).collect::<Vec<_>>();
            let (x, y): (Vec<f64>, Vec<f64>) = (x.iter().map(|&t| t as f64).collect(), y.iter().map(|&t| t as f64).collect());
            let a = wilcoxon_rank_sum(&x, &y).unwrap();
            let to_i = |v: &Vec<f64>| v.iter().map(|&t| t as i32).collect::<Vec<_>>();
            let b = wilcoxon_rank_sum(&f(&to_i(&x)), &f(&to_i(&y))).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn cohens_d_antisymmetric(x in sample(), y in sample()) {
            let d1 = cohens_d(&x, &y).unwrap();
            let d2 = cohens_d(&y, &x).unwrap();
            prop_assert_eq!(d1, -d2);
        }

        #[test]
        fn ncc_symmetric_and_affine_invariant(
            v in prop::collection::vec((-50.0f64..50.0, -50.0f64..50.0), 3..30),
            scale in 0.01f64..100.0,
            shift in -100.0f64..100.0,
        ) {
            let a = vol(v.iter().map(|p| p.0).collect());
            let b = vol(v.iter().map(|p| p.1).collect());
            let m = Mask3D::full(a.dims());
            if let (Ok(r1), Ok(r2)) = (ncc(&a, &b, &m), ncc(&b, &a, &m)) {
                prop_assert!((r1 - r2).abs() < 1e-12);
                let a2 = vol(a.data().iter().map(|x| x * scale + shift).collect());
                let r3 = ncc(&a2, &b, &m).unwrap();
                prop_assert!((r1 - r3).abs() < 1e-9);
            }
        }
    }
}
