use rayon::prelude::*;

use super::{AifResult, ConcentrationSeries, DeconvConfig, TsvdOperator};
use crate::volume::{Mask3D, Volume3D};
use crate::{Error, Result};

/// CBF floor below which MTT is reported as 0.
pub const EPS_CBF: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct PerfusionMaps {
    pub cbf: Volume3D,
    pub cbv: Volume3D,
    pub mtt: Volume3D,
    pub tmax: Volume3D,
    pub normalized: bool,
    pub mask: Mask3D,
}

impl PerfusionMaps {
    pub const NAMES: [&'static str; 4] = ["cbf", "cbv", "mtt", "tmax"];

    /// Maps in canonical order (cbf, cbv, mtt, tmax).
    pub fn maps(&self) -> [&Volume3D; 4] {
        [&self.cbf, &self.cbv, &self.mtt, &self.tmax]
    }

    pub fn named(&self) -> impl Iterator<Item = (&'static str, &Volume3D)> {
        Self::NAMES.into_iter().zip(self.maps())
    }

    /// Every map divided by its own whole-brain mean.
    pub fn normalized(&self) -> Result<PerfusionMaps> {
        if self.normalized {
            return Ok(self.clone());
        }
        Ok(PerfusionMaps {
            cbf: normalize_map(&self.cbf, &self.mask)?,
            cbv: normalize_map(&self.cbv, &self.mask)?,
            mtt: normalize_map(&self.mtt, &self.mask)?,
            tmax: normalize_map(&self.tmax, &self.mask)?,
            normalized: true,
            mask: self.mask.clone(),
        })
    }
}

pub fn compute_maps(
    conc: &ConcentrationSeries,
    aif: &AifResult,
    mask: &Mask3D,
    cfg: &DeconvConfig,
) -> Result<PerfusionMaps> {
    let geom = conc.geometry();
    mask.check_dims(geom.dims)?;
    let dt = conc.dt();
    let op = TsvdOperator::from_config(&aif.curve, dt, cfg)?;
    let aif_area: f64 = aif.curve.iter().sum();
    if !(aif_area > 0.0) {
        return Err(Error::NoAif);
    }
    let idx: Vec<usize> = mask.indices().filter(|&i| conc.is_valid(i)).collect();
    let values: Vec<[f64; 4]> = idx
        .par_iter()
        .map(|&i| -> Result<[f64; 4]> {
            let c = conc.curve(i);
            let k = op.apply(c)?;
            let (arg, kmax) = k
                .iter()
                .map(|&v| v.max(0.0))
                .enumerate()
                .fold((0, 0.0), |b, (j, v)| if v > b.1 { (j, v) } else { b });
            let cbf = kmax * cfg.flow_scale;
            let cbv = c.iter().sum::<f64>() / aif_area * cfg.flow_scale;
            let mtt = if cbf > EPS_CBF { cbv / cbf } else { 0.0 };
            Ok([cbf, cbv, mtt, arg as f64 * dt])
        })
        .collect::<Result<_>>()?;

    let mut out = [(); 4].map(|_| vec![0.0; geom.len()]);
    for (&i, v) in idx.iter().zip(&values) {
        for m in 0..4 {
            out[m][i] = v[m];
        }
    }
    let [cbf, cbv, mtt, tmax] = out;
    Ok(PerfusionMaps {
        cbf: Volume3D::new(geom.clone(), cbf)?,
        cbv: Volume3D::new(geom.clone(), cbv)?,
        mtt: Volume3D::new(geom.clone(), mtt)?,
        tmax: Volume3D::new(geom.clone(), tmax)?,
        normalized: false,
        mask: mask.clone(),
    })
}

/// Divide by the mean over `mask`; voxels outside the mask are divided too.
pub fn normalize_map(map: &Volume3D, mask: &Mask3D) -> Result<Volume3D> {
    mask.check_dims(map.dims())?;
    let n = mask.count();
    if n == 0 {
        return Err(Error::EmptyMask);
    }
    let mean = mask.indices().map(|i| map.data()[i]).sum::<f64>() / n as f64;
    if mean == 0.0 || !mean.is_finite() {
        return Err(Error::invalid("map has zero mean over the brain mask"));
    }
    map.with_data(map.data().iter().map(|v| v / mean).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Geometry;

    fn geom(n: usize) -> Geometry {
        Geometry::with_spacing([n, 1, 1], [1.0; 3]).unwrap()
    }

    #[test]
    fn constant_map_normalizes_to_one() {
        let g = geom(6);
        let m = Mask3D::new([6, 1, 1], vec![true, true, true, false, true, false]).unwrap();
        let v = Volume3D::filled(g, 5.0);
        let n = normalize_map(&v, &m).unwrap();
        assert!(m.indices().all(|i| n.data()[i] == 1.0));
    }

    #[test]
    fn normalized_mean_is_one_and_idempotent() {
        let g = geom(7);
        let m = Mask3D::new([7, 1, 1], vec![true, false, true, true, true, false, true]).unwrap();
        let v = Volume3D::new(g, vec![0.3, 9.0, 1.7, 2.9, 0.01, -4.0, 7.3]).unwrap();
        let n = normalize_map(&v, &m).unwrap();
        let mean: f64 = m.indices().map(|i| n.data()[i]).sum::<f64>() / m.count() as f64;
        assert!((mean - 1.0).abs() < 1e-12);
        let n2 = normalize_map(&n, &m).unwrap();
        for (a, b) in n.data().iter().zip(n2.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_mean_rejected() {
        let g = geom(3);
        let v = Volume3D::new(g, vec![1.0, -1.0, 0.0]).unwrap();
        assert!(normalize_map(&v, &Mask3D::full([3, 1, 1])).is_err());
    }

    fn small_series() -> (ConcentrationSeries, AifResult, Mask3D) {
        let nt = 30;
        let aif: Vec<f64> = (0..nt)
            .map(|i| {
                let s = (i as f64 - 4.0).max(0.0) / 1.5;
                s * s * (-s).exp()
            })
            .collect();
        let g = geom(3);
        let mut data = vec![0.0; 3 * nt];
        let tissue = crate::phantom::synth_tissue_curve(&aif, 0.01, 4.0, 1.0);
        data[..nt].copy_from_slice(&tissue);
        data[nt..2 * nt].copy_from_slice(&tissue);
        let conc = ConcentrationSeries::new(g, nt, 1.0, 4, data, vec![true; 3]).unwrap();
        let a = AifResult { curve: aif, slice: 0, voxels: vec![], score: 1.0, slices: vec![] };
        let mask = Mask3D::new([3, 1, 1], vec![true, false, true]).unwrap();
        (conc, a, mask)
    }

    #[test]
    fn unmasked_voxels_are_zero_and_central_volume_holds() {
        let (conc, aif, mask) = small_series();
        let m = compute_maps(&conc, &aif, &mask, &DeconvConfig::default()).unwrap();
        for map in m.maps() {
            assert_eq!(map.data()[1], 0.0);
        }
        let (cbf, cbv, mtt) = (m.cbf.data()[0], m.cbv.data()[0], m.mtt.data()[0]);
        assert!(cbf > 0.0);
        assert!((mtt * cbf - cbv).abs() <= 1e-12 * cbv);
        let area: f64 = aif.curve.iter().sum();
        let tissue: f64 = conc.curve(0).iter().sum();
        assert!((cbv * area / 6000.0 - tissue).abs() < 1e-12 * tissue);
        // zero tissue curve inside the mask
        assert_eq!(m.mtt.data()[2], 0.0);
        assert_eq!(m.tmax.data()[2], 0.0);
    }

    #[test]
    fn tmax_within_series_span() {
        let (conc, aif, mask) = small_series();
        let m = compute_maps(&conc, &aif, &mask, &DeconvConfig::default()).unwrap();
        let span = (conc.nt() - 1) as f64 * conc.dt();
        assert!(m.tmax.data().iter().all(|&t| (0.0..=span).contains(&t)));
    }
}
