use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::phantom::FLOW_SCALE;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DeconvConfig {
    /// Singular values below `fraction * max` are discarded.
    pub fraction: f64,
    /// Lower bound on the number of singular values kept.
    pub min_kept: usize,
    /// Multiplier from per-second flow to the reported CBF/CBV unit.
    pub flow_scale: f64,
}

impl Default for DeconvConfig {
    fn default() -> Self {
        Self { fraction: 0.2, min_kept: 1, flow_scale: FLOW_SCALE }
    }
}

impl DeconvConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.fraction > 0.0 && self.fraction < 1.0) {
            return Err(Error::invalid("truncation fraction must lie in (0, 1)"));
        }
        if self.min_kept == 0 {
            return Err(Error::invalid("min_kept must be at least 1"));
        }
        if !(self.flow_scale > 0.0 && self.flow_scale.is_finite()) {
            return Err(Error::invalid("flow_scale must be positive"));
        }
        Ok(())
    }
}

/// Truncated pseudo-inverse of the AIF convolution matrix, factorised once and
/// applied to every tissue curve.
#[derive(Debug, Clone)]
pub struct TsvdOperator {
    n: usize,
    /// Row-major n x n.
    pinv: Vec<f64>,
    kept: usize,
}

impl TsvdOperator {
    /// The fraction is checked separately from `DeconvConfig::validate` so
    /// that a fraction of 0 (no truncation) can be used in checks.
    pub fn new(aif: &[f64], dt: f64, fraction: f64, min_kept: usize) -> Result<Self> {
        let n = aif.len();
        if n < 2 {
            return Err(Error::invalid("deconvolution needs curves of length >= 2"));
        }
        if !(dt > 0.0) {
            return Err(Error::invalid("dt must be positive"));
        }
        if !aif.iter().any(|&a| a > 0.0) {
            return Err(Error::invalid("AIF has no positive sample"));
        }
        if !(0.0..1.0).contains(&fraction) {
            return Err(Error::invalid("truncation fraction must lie in [0, 1)"));
        }
        let a = DMatrix::from_fn(n, n, |i, j| if j <= i { dt * aif[i - j] } else { 0.0 });
        let svd = a.svd(true, true);
        let (u, v_t) = (svd.u.expect("u requested"), svd.v_t.expect("v_t requested"));
        let sigma = &svd.singular_values;
        let smax = sigma.max();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| sigma[b].total_cmp(&sigma[a]).then(a.cmp(&b)));
        let keep: Vec<usize> = order
            .iter()
            .enumerate()
            .filter(|&(rank, &i)| (sigma[i] >= fraction * smax || rank < min_kept) && sigma[i] > 0.0)
            .map(|(_, &i)| i)
            .collect();
        assert!(!keep.is_empty(), "no singular value survives truncation");
        let mut pinv = vec![0.0; n * n];
        for r in 0..n {
            for c in 0..n {
                let mut acc = 0.0;
                for &k in &keep {
                    acc += v_t[(k, r)] * u[(c, k)] / sigma[k];
                }
                pinv[r * n + c] = acc;
            }
        }
        Ok(Self { n, pinv, kept: keep.len() })
    }

    pub fn from_config(aif: &[f64], dt: f64, cfg: &DeconvConfig) -> Result<Self> {
        cfg.validate()?;
        Self::new(aif, dt, cfg.fraction, cfg.min_kept)
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn kept(&self) -> usize {
        self.kept
    }

    /// Flow-scaled residue `k` for one tissue curve.
    pub fn apply(&self, tissue: &[f64]) -> Result<Vec<f64>> {
        if tissue.len() != self.n {
            return Err(Error::invalid(format!(
                "tissue curve has {} samples, AIF has {}",
                tissue.len(),
                self.n
            )));
        }
        Ok(self
            .pinv
            .chunks_exact(self.n)
            .map(|row| row.iter().zip(tissue).map(|(p, c)| p * c).sum())
            .collect())
    }
}

/// `k = V Σ⁺ Uᵀ c` for the lower-triangular Toeplitz matrix `A[i][j] = dt·aif[i−j]`.
pub fn deconvolve_tsvd(tissue: &[f64], aif: &[f64], dt: f64, cfg: &DeconvConfig) -> Result<Vec<f64>> {
    TsvdOperator::from_config(aif, dt, cfg)?.apply(tissue)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn aif() -> Vec<f64> {
        (0..30)
            .map(|i| {
                let s = (i as f64 - 3.0).max(0.0) / 2.0;
                s * s * s * (-s).exp()
            })
            .collect()
    }

    #[test]
    fn zero_tissue_gives_zero_residue() {
        let k = deconvolve_tsvd(&[0.0; 30], &aif(), 1.5, &DeconvConfig::default()).unwrap();
        assert!(k.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn untruncated_self_deconvolution_is_impulse() {
        // A short, well-conditioned AIF so the full inverse is accurate.
        let a = [1.0, 0.5, 0.25, 0.1, 0.0, 0.0];
        let dt = 2.0;
        let k = TsvdOperator::new(&a, dt, 0.0, 1).unwrap().apply(&a).unwrap();
        assert!((k[0] - 1.0 / dt).abs() < 1e-12);
        assert!(k[1..].iter().all(|x| x.abs() < 1e-12), "{k:?}");
    }

    #[test]
    fn doubling_tissue_doubles_residue() {
        let a = aif();
        let t: Vec<f64> = a.iter().enumerate().map(|(i, x)| x * 0.3 + (i as f64).sin() * 0.01).collect();
        let t2: Vec<f64> = t.iter().map(|x| 2.0 * x).collect();
        for f in [0.05, 0.2, 0.6] {
            let cfg = DeconvConfig { fraction: f, ..Default::default() };
            let k = deconvolve_tsvd(&t, &a, 1.0, &cfg).unwrap();
            let k2 = deconvolve_tsvd(&t2, &a, 1.0, &cfg).unwrap();
            for (x, y) in k.iter().zip(&k2) {
                assert_eq!(2.0 * x, *y);
            }
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let cfg = DeconvConfig::default();
        assert!(deconvolve_tsvd(&[1.0], &[1.0], 1.0, &cfg).is_err());
        assert!(deconvolve_tsvd(&[1.0, 0.0], &[0.0, 0.0], 1.0, &cfg).is_err());
        assert!(deconvolve_tsvd(&[1.0, 0.0, 0.0], &[1.0, 0.0], 1.0, &cfg).is_err());
        let bad = DeconvConfig { fraction: 1.0, ..Default::default() };
        assert!(deconvolve_tsvd(&[1.0, 0.0], &[1.0, 0.0], 1.0, &bad).is_err());
    }

    #[test]
    fn truncation_keeps_at_least_min_kept() {
        let op = TsvdOperator::new(&aif(), 1.0, 0.99, 3).unwrap();
        assert!(op.kept() >= 3);
    }

    proptest! {
        #[test]
        fn linear_in_tissue_and_inverse_in_aif(
            scale in 0.05f64..20.0,
            alpha in 0.05f64..20.0,
            noise in prop::collection::vec(-0.01f64..0.01, 30),
            fraction in 0.05f64..0.6,
        ) {
            let a = aif();
            let t: Vec<f64> = a.iter().zip(&noise).map(|(x, e)| 0.3 * x + e).collect();
            let cfg = DeconvConfig { fraction, ..Default::default() };
            let k = deconvolve_tsvd(&t, &a, 1.5, &cfg).unwrap();
            let peak = k.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let ts: Vec<f64> = t.iter().map(|x| scale * x).collect();
            let ks = deconvolve_tsvd(&ts, &a, 1.5, &cfg).unwrap();
            for (x, y) in k.iter().zip(&ks) {
                prop_assert!((scale * x - y).abs() <= 1e-12 * scale * peak.max(1e-300));
            }
            let aa: Vec<f64> = a.iter().map(|x| alpha * x).collect();
            let ka = deconvolve_tsvd(&t, &aa, 1.5, &cfg).unwrap();
            for (x, y) in k.iter().zip(&ka) {
                prop_assert!((x / alpha - y).abs() <= 1e-9 * peak / alpha);
            }
            let argmax = |v: &[f64]| v.iter().enumerate().fold((0, f64::MIN), |b, (i, &x)| if x > b.1 { (i, x) } else { b });
            let (i, top) = argmax(&k);
            let second = k.iter().enumerate().filter(|&(j, _)| j != i).fold(f64::MIN, |m, (_, &x)| m.max(x));
            if top - second > 1e-6 * peak {
                prop_assert_eq!(argmax(&ka).0, i);
            }
        }
    }
}
