use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::ConcentrationSeries;
use crate::atlas::LabelVolume;
use crate::{Error, Result};

/// Constants of the AIF scoring heuristic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AifConfig {
    /// Voxels averaged into each slice's AIF.
    pub top_n: usize,
    /// Fraction of peak that marks bolus arrival.
    pub arrival_fraction: f64,
}

impl Default for AifConfig {
    fn default() -> Self {
        Self { top_n: 5, arrival_fraction: 0.1 }
    }
}

impl AifConfig {
    pub fn validate(&self) -> Result<()> {
        if self.top_n == 0 {
            return Err(Error::invalid("aif top_n must be at least 1"));
        }
        if !(self.arrival_fraction > 0.0 && self.arrival_fraction < 1.0) {
            return Err(Error::invalid("aif arrival_fraction must lie in (0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurveShape {
    pub peak: f64,
    pub peak_index: usize,
    /// Full width at half maximum in seconds.
    pub fwhm: f64,
    /// First sample time above `arrival_fraction * peak`, seconds.
    pub arrival: f64,
}

impl CurveShape {
    pub fn of(curve: &[f64], dt: f64, arrival_fraction: f64) -> Option<Self> {
        let (peak_index, peak) = curve
            .iter()
            .copied()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |b, (i, v)| if v > b.1 { (i, v) } else { b });
        if !(peak > 0.0) {
            return None;
        }
        let half = 0.5 * peak;
        let left = (0..peak_index)
            .rev()
            .find(|&i| curve[i] < half)
            .map_or(0.0, |i| i as f64 + (half - curve[i]) / (curve[i + 1] - curve[i]));
        let right = (peak_index + 1..curve.len())
            .find(|&j| curve[j] < half)
            .map_or((curve.len() - 1) as f64, |j| {
                (j - 1) as f64 + (curve[j - 1] - half) / (curve[j - 1] - curve[j])
            });
        let mut fwhm = (right - left) * dt;
        if !(fwhm > 0.0) {
            fwhm = dt;
        }
        let thr = arrival_fraction * peak;
        let arrival = curve.iter().position(|&c| c > thr).unwrap_or(peak_index) as f64 * dt;
        Some(Self { peak, peak_index, fwhm, arrival })
    }

    pub fn score(&self, dt: f64) -> f64 {
        self.peak / (self.fwhm * self.arrival.max(dt))
    }
}

/// `peak / (fwhm * max(arrival, dt))`, or `None` when the curve never rises
/// above zero.
pub fn curve_score(curve: &[f64], dt: f64, cfg: &AifConfig) -> Option<f64> {
    CurveShape::of(curve, dt, cfg.arrival_fraction).map(|s| s.score(dt))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceCandidate {
    pub slice: usize,
    pub score: f64,
    pub voxels: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AifResult {
    pub curve: Vec<f64>,
    pub slice: usize,
    pub voxels: Vec<usize>,
    pub score: f64,
    pub slices: Vec<SliceCandidate>,
}

pub fn select_aif(
    conc: &ConcentrationSeries,
    labels: &LabelVolume,
    search_label_ids: &[u32],
    cfg: &AifConfig,
) -> Result<AifResult> {
    cfg.validate()?;
    let geom = conc.geometry();
    if labels.dims() != geom.dims {
        return Err(Error::invalid("label volume and DSC grid differ"));
    }
    let dt = conc.dt();
    let nt = conc.nt();
    let sxy = geom.dims[0] * geom.dims[1];

    let mut by_slice: BTreeMap<usize, Vec<(usize, f64)>> = BTreeMap::new();
    let mut any = false;
    for idx in labels.voxels_in(search_label_ids) {
        if !conc.is_valid(idx) {
            continue;
        }
        any = true;
        if let Some(s) = curve_score(conc.curve(idx), dt, cfg) {
            by_slice.entry(idx / sxy).or_default().push((idx, s));
        }
    }
    if !any {
        return Err(Error::invalid("AIF search region is empty within the brain mask"));
    }

    let mut best: Option<(SliceCandidate, Vec<f64>)> = None;
    let mut slices = Vec::with_capacity(by_slice.len());
    for (slice, mut cands) in by_slice {
        cands.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        cands.truncate(cfg.top_n);
        let mut mean = vec![0.0; nt];
        for &(idx, _) in &cands {
            for (m, &c) in mean.iter_mut().zip(conc.curve(idx)) {
                *m += c;
            }
        }
        let k = cands.len() as f64;
        mean.iter_mut().for_each(|m| *m = (*m / k).max(0.0));
        let Some(score) = curve_score(&mean, dt, cfg) else { continue };
        let mut voxels: Vec<usize> = cands.iter().map(|c| c.0).collect();
        voxels.sort_unstable();
        let cand = SliceCandidate { slice, score, voxels };
        if best.as_ref().map_or(true, |(b, _)| score > b.score) {
            best = Some((cand.clone(), mean));
        }
        slices.push(cand);
    }
    let (chosen, curve) = best.ok_or(Error::NoAif)?;
    Ok(AifResult {
        curve,
        slice: chosen.slice,
        voxels: chosen.voxels,
        score: chosen.score,
        slices,
    })
}
