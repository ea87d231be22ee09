use crate::volume::{Geometry, Mask3D, Volume4D};
use crate::{Error, Result};

/// Number of leading timepoints that seed the baseline estimate.
const BASELINE_SEED: usize = 5;
const MIN_TIMEPOINTS: usize = 10;

/// Concentration curves for every voxel, stored voxel-major so a curve is a
/// contiguous slice.
#[derive(Debug, Clone)]
pub struct ConcentrationSeries {
    geom: Geometry,
    nt: usize,
    dt: f64,
    baseline_end: usize,
    data: Vec<f64>,
    valid: Vec<bool>,
}

impl ConcentrationSeries {
    pub fn new(
        geom: Geometry,
        nt: usize,
        dt: f64,
        baseline_end: usize,
        data: Vec<f64>,
        valid: Vec<bool>,
    ) -> Result<Self> {
        if data.len() != geom.len() * nt || valid.len() != geom.len() {
            return Err(Error::invalid("concentration buffer size mismatch"));
        }
        if !(dt > 0.0) || nt < 2 {
            return Err(Error::invalid("concentration series needs dt > 0 and nt >= 2"));
        }
        Ok(Self { geom, nt, dt, baseline_end, data, valid })
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geom
    }

    pub fn nt(&self) -> usize {
        self.nt
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn baseline_end(&self) -> usize {
        self.baseline_end
    }

    pub fn curve(&self, idx: usize) -> &[f64] {
        &self.data[idx * self.nt..(idx + 1) * self.nt]
    }

    pub fn is_valid(&self, idx: usize) -> bool {
        self.valid[idx]
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    /// Scale every curve by `c`; used by invariance checks.
    pub fn scaled(&self, c: f64) -> Self {
        let mut out = self.clone();
        out.data.iter_mut().for_each(|v| *v *= c);
        out
    }
}

/// Index of the last pre-bolus timepoint of `signal` (the masked mean).
///
/// Starts from the first five samples; each later sample is compared to
/// mean - 3 SD of the samples before it and joins the baseline if it does not
/// drop below.
pub fn detect_baseline_end(signal: &[f64]) -> Result<usize> {
    if signal.len() <= BASELINE_SEED {
        return Err(Error::NoBolus);
    }
    let mut sum: f64 = signal[..BASELINE_SEED].iter().sum();
    let mut sum_sq: f64 = signal[..BASELINE_SEED].iter().map(|v| v * v).sum();
    for (t, &s) in signal.iter().enumerate().skip(BASELINE_SEED) {
        let n = t as f64;
        let mean = sum / n;
        let var = ((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0);
        if s < mean - 3.0 * var.sqrt() {
            return Ok(t - 1);
        }
        sum += s;
        sum_sq += s * s;
    }
    Err(Error::NoBolus)
}

pub fn signal_to_concentration(v: &Volume4D, mask: &Mask3D, te: f64) -> Result<ConcentrationSeries> {
    let nt = v.nt();
    if nt < MIN_TIMEPOINTS {
        return Err(Error::invalid(format!("need at least {MIN_TIMEPOINTS} timepoints, got {nt}")));
    }
    if !(te > 0.0) {
        return Err(Error::invalid("echo time must be positive"));
    }
    mask.check_dims(v.geometry().dims)?;
    let idx: Vec<usize> = mask.indices().collect();
    if idx.is_empty() {
        return Err(Error::EmptyMask);
    }
    let global: Vec<f64> = (0..nt)
        .map(|t| idx.iter().map(|&i| v.at(i, t)).sum::<f64>() / idx.len() as f64)
        .collect();
    let baseline_end = detect_baseline_end(&global)?;

    let nvox = v.n_voxels();
    let mut data = vec![0.0; nvox * nt];
    let mut valid = vec![false; nvox];
    for &i in &idx {
        let s0 = (0..=baseline_end).map(|t| v.at(i, t)).sum::<f64>() / (baseline_end + 1) as f64;
        if !(s0 > 0.0) {
            continue;
        }
        valid[i] = true;
        let eps = 1e-6 * s0;
        let out = &mut data[i * nt..(i + 1) * nt];
        for (t, c) in out.iter_mut().enumerate() {
            *c = -(v.at(i, t).max(eps) / s0).ln() / te;
        }
    }
    ConcentrationSeries::new(v.geometry().clone(), nt, v.tr(), baseline_end, data, valid)
}
