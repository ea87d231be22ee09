//! Synthetic DSC acquisitions with analytically known perfusion.
//!
//! Tissue concentration is the arterial input convolved with an exponential
//! residue `R(t) = exp(-(t - delay) / mtt)` (zero before `delay`), scaled by
//! flow. Signal follows `S(t) = S0 * exp(-te * C(t))` with optional additive
//! Gaussian noise drawn from a counter-based stream keyed by (seed, voxel,
//! timepoint), so output never depends on thread scheduling.

use std::collections::{BTreeMap, HashMap, HashSet};

use rand::RngCore;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::atlas::{synthetic_labels, LabelVolume, RegionTable};
use crate::volume::{Geometry, Volume4D};
use crate::{Error, Result};

/// mL/100g/min expressed per second: CBF values in the phantom and in the
/// output maps use the clinical unit, concentrations use per-second flow.
pub const FLOW_SCALE: f64 = 6000.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaVariateParams {
    pub amplitude: f64,
    pub t0: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl GammaVariateParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.amplitude > 0.0 && self.alpha > 0.0 && self.beta > 0.0 && self.t0 >= 0.0) {
            return Err(Error::invalid(format!("invalid gamma-variate parameters {self:?}")));
        }
        Ok(())
    }

    /// Time of the maximum, `t0 + alpha * beta`.
    pub fn peak_time(&self) -> f64 {
        self.t0 + self.alpha * self.beta
    }
}

pub fn gamma_variate(p: &GammaVariateParams, t: f64) -> f64 {
    if t <= p.t0 {
        return 0.0;
    }
    let s = t - p.t0;
    p.amplitude * s.powf(p.alpha) * (-s / p.beta).exp()
}

/// Discrete convolution of `aif` with an exponential residue:
/// `C[i] = flow * dt * Σ_{j<=i} aif[j] * exp(-(i-j) dt / mtt)`.
pub fn synth_tissue_curve(aif: &[f64], flow: f64, mtt: f64, dt: f64) -> Vec<f64> {
    let decay = (-dt / mtt).exp();
    let mut out = Vec::with_capacity(aif.len());
    let mut acc = 0.0;
    for &a in aif {
        acc = acc * decay + flow * dt * a;
        out.push(acc);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionPerfusion {
    pub cbf: f64,
    pub mtt: f64,
    #[serde(default)]
    pub delay: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lesion {
    pub region: u32,
    pub cbf_multiplier: f64,
    pub mtt_multiplier: f64,
    /// Residue delay added to the region, seconds.
    #[serde(default)]
    pub delay: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhantomSpec {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub tr: f64,
    pub te: f64,
    pub n_timepoints: usize,
    pub s0: f64,
    pub aif: GammaVariateParams,
    /// Perfusion of any labelled region without an explicit entry.
    pub default_perfusion: RegionPerfusion,
    pub regions: BTreeMap<u32, RegionPerfusion>,
    pub lesions: Vec<Lesion>,
    /// Voxels whose concentration is the arterial input itself.
    pub vessels: Vec<[usize; 3]>,
    pub noise_sigma: f64,
    pub seed: u64,
    /// Forward-model sub-steps per repetition; 1 evaluates the convolution on
    /// the acquisition timebase.
    pub oversample: usize,
    pub flow_scale: f64,
}

impl Default for PhantomSpec {
    /// 64×64×10 grid, 80 repetitions at 1.5 s, uniform tissue (cbf 60,
    /// mtt 4 s), a 3 s residue delay in the left posterior superior temporal
    /// gyrus, and eight arterial voxels in the anterior cingulate on slice 5
    /// of the synthetic atlas.
    fn default() -> Self {
        let mut vessels = Vec::new();
        for (x, y) in [(10, 7), (11, 7), (10, 8), (11, 8)] {
            vessels.push([x, y, 5]);
            vessels.push([63 - x, y, 5]);
        }
        PhantomSpec {
            dims: [64, 64, 10],
            spacing: [1.8, 1.8, 5.0],
            tr: 1.5,
            te: 0.030,
            n_timepoints: 80,
            s0: 100.0,
            aif: GammaVariateParams {
                amplitude: 1.0,
                t0: 10.0,
                alpha: 3.0,
                beta: 1.5,
            },
            default_perfusion: RegionPerfusion {
                cbf: 60.0,
                mtt: 4.0,
                delay: 0.0,
            },
            regions: BTreeMap::new(),
            lesions: vec![Lesion {
                region: DEFAULT_DELAYED_REGION,
                cbf_multiplier: 1.0,
                mtt_multiplier: 1.0,
                delay: 3.0,
            }],
            vessels,
            noise_sigma: 0.0,
            seed: 42,
            oversample: 1,
            flow_scale: FLOW_SCALE,
        }
    }
}

/// "Left Superior Temporal Gyrus, posterior division" in the shipped table.
pub const DEFAULT_DELAYED_REGION: u32 = 10;

impl PhantomSpec {
    pub fn geometry(&self) -> Result<Geometry> {
        Geometry::with_spacing(self.dims, self.spacing)
    }

    pub fn validate(&self) -> Result<()> {
        self.geometry()?;
        if !(self.tr > 0.0 && self.te > 0.0 && self.s0 > 0.0) {
            return Err(Error::invalid("tr, te and s0 must be positive"));
        }
        if self.n_timepoints < 2 {
            return Err(Error::invalid("n_timepoints must be >= 2"));
        }
        self.aif.validate()?;
        let check = |what: String, p: &RegionPerfusion| -> Result<()> {
            if !(p.cbf >= 0.0 && p.mtt > 0.0 && p.delay >= 0.0) {
                return Err(Error::invalid(format!(
                    "{what}: need cbf >= 0, mtt > 0, delay >= 0, got {p:?}"
                )));
            }
            Ok(())
        };
        check("default_perfusion".into(), &self.default_perfusion)?;
        for (id, p) in &self.regions {
            check(format!("region {id}"), p)?;
        }
        for l in &self.lesions {
            if !(l.cbf_multiplier >= 0.0 && l.mtt_multiplier > 0.0 && l.delay >= 0.0) {
                return Err(Error::invalid(format!("invalid lesion {l:?}")));
            }
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::invalid("noise_sigma must be >= 0"));
        }
        if self.oversample == 0 || !(self.flow_scale > 0.0) {
            return Err(Error::invalid("oversample must be >= 1 and flow_scale > 0"));
        }
        for v in &self.vessels {
            if (0..3).any(|k| v[k] >= self.dims[k]) {
                return Err(Error::invalid(format!("vessel voxel {v:?} outside grid")));
            }
        }
        Ok(())
    }

    /// Effective perfusion of a region after lesions.
    pub fn region_perfusion(&self, id: u32) -> RegionPerfusion {
        let mut p = self.regions.get(&id).copied().unwrap_or(self.default_perfusion);
        for l in self.lesions.iter().filter(|l| l.region == id) {
            p.cbf *= l.cbf_multiplier;
            p.mtt *= l.mtt_multiplier;
            p.delay += l.delay;
        }
        p
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.n_timepoints).map(|i| i as f64 * self.tr).collect()
    }

    pub fn aif_curve(&self) -> Vec<f64> {
        self.times().iter().map(|&t| gamma_variate(&self.aif, t)).collect()
    }

    /// Noise-free tissue concentration on the acquisition timebase.
    pub fn tissue_curve(&self, p: &RegionPerfusion) -> Vec<f64> {
        let os = self.oversample;
        let h = self.tr / os as f64;
        let n = self.n_timepoints * os;
        let aif: Vec<f64> = (0..n).map(|i| gamma_variate(&self.aif, i as f64 * h)).collect();
        let fine = synth_tissue_curve(&aif, p.cbf / self.flow_scale, p.mtt, h);
        let shift = (p.delay / h).round() as usize;
        (0..self.n_timepoints)
            .map(|k| {
                let i = k * os;
                if i >= shift {
                    fine[i - shift]
                } else {
                    0.0
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionTruth {
    pub id: u32,
    pub cbf: f64,
    pub cbv: f64,
    pub mtt: f64,
    pub tmax: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub regions: Vec<RegionTruth>,
    pub times: Vec<f64>,
    pub aif: Vec<f64>,
}

impl GroundTruth {
    pub fn region(&self, id: u32) -> Option<&RegionTruth> {
        self.regions.iter().find(|r| r.id == id)
    }
}

/// Standard normal deviate for (seed, voxel, t), Box-Muller on two words of
/// the voxel's ChaCha8 stream positioned at timepoint `t`.
fn noise_at(seed: u64, voxel: usize, t: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(voxel as u64);
    rng.set_word_pos(4 * t as u128);
    let u1 = ((rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64);
    let u2 = (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// The first `per_region` voxels (in storage order) of each region in `ids`
/// on slice `z`. Used to place arterial voxels on grids other than the default.
pub fn vessels_in_regions(labels: &LabelVolume, ids: &[u32], z: usize, per_region: usize) -> Vec<[usize; 3]> {
    let [nx, ny, nz] = labels.dims();
    if z >= nz {
        return Vec::new();
    }
    let mut out = Vec::new();
    for &id in ids {
        let mut taken = 0;
        for y in 0..ny {
            for x in 0..nx {
                if taken < per_region && labels.get(x, y, z) == id {
                    out.push([x, y, z]);
                    taken += 1;
                }
            }
        }
    }
    out
}

/// Labels for the default grid: the synthetic parcellation of `table`.
pub fn phantom_labels(spec: &PhantomSpec, table: &RegionTable) -> Result<LabelVolume> {
    synthetic_labels(&spec.geometry()?, table)
}

pub fn generate_phantom(spec: &PhantomSpec, labels: &LabelVolume) -> Result<(Volume4D, GroundTruth)> {
    spec.validate()?;
    let geom = spec.geometry()?;
    if labels.dims() != spec.dims {
        return Err(Error::invalid(format!(
            "label dims {:?} do not match phantom dims {:?}",
            labels.dims(),
            spec.dims
        )));
    }
    let present: std::collections::BTreeSet<u32> =
        labels.data().iter().copied().filter(|&l| l != 0).collect();
    for l in &spec.lesions {
        if !present.contains(&l.region) {
            return Err(Error::invalid(format!(
                "lesion region {} is not present in the label volume",
                l.region
            )));
        }
    }
    for id in spec.regions.keys() {
        if !present.contains(id) {
            return Err(Error::invalid(format!(
                "region {id} is not present in the label volume"
            )));
        }
    }

    let aif = spec.aif_curve();
    let mut truth = Vec::new();
    let mut curves: HashMap<u32, Vec<f64>> = HashMap::new();
    for &id in &present {
        let p = spec.region_perfusion(id);
        curves.insert(id, spec.tissue_curve(&p));
        truth.push(RegionTruth {
            id,
            cbf: p.cbf,
            cbv: p.cbf * p.mtt,
            mtt: p.mtt,
            tmax: p.delay,
        });
    }
    let vessels: HashSet<usize> = spec
        .vessels
        .iter()
        .map(|v| geom.index(v[0], v[1], v[2]))
        .collect();

    let nvox = geom.len();
    let nt = spec.n_timepoints;
    let mut data = vec![0.0; nvox * nt];
    data.par_chunks_mut(nvox).enumerate().for_each(|(t, frame)| {
        for (idx, out) in frame.iter_mut().enumerate() {
            let label = labels.data()[idx];
            let conc = if vessels.contains(&idx) {
                aif[t]
            } else if label != 0 {
                curves[&label][t]
            } else {
                continue;
            };
            let mut s = spec.s0 * (-spec.te * conc).exp();
            if spec.noise_sigma > 0.0 {
                s += spec.noise_sigma * noise_at(spec.seed, idx, t);
            }
            *out = s;
        }
    });

    let vol = Volume4D::new(geom, nt, spec.tr, spec.te, data)?;
    Ok((
        vol,
        GroundTruth {
            regions: truth,
            times: spec.times(),
            aif,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gamma_variate_values() {
        let p = GammaVariateParams {
            amplitude: 1.0,
            t0: 0.0,
            alpha: 2.0,
            beta: 1.0,
        };
        assert_eq!(gamma_variate(&p, 0.0), 0.0);
        assert!((gamma_variate(&p, 2.0) - 4.0 * (-2.0f64).exp()).abs() < 1e-15);
        assert!((gamma_variate(&p, 2.0) - 0.5413).abs() < 1e-4);

        // Peak at t0 + alpha*beta: derivative sign change brackets it.
        let q = PhantomSpec::default().aif;
        let tp = q.peak_time();
        assert_eq!(tp, 14.5);
        let h = 1e-4;
        assert!(gamma_variate(&q, tp) > gamma_variate(&q, tp - h));
        assert!(gamma_variate(&q, tp) > gamma_variate(&q, tp + h));
    }

    #[test]
    fn tissue_curve_examples() {
        let aif = [1.0, 2.0, 0.5, 0.0];
        assert!(synth_tissue_curve(&aif, 0.0, 4.0, 1.5).iter().all(|&c| c == 0.0));

        let dt = 0.5;
        let mut impulse = vec![0.0; 20];
        impulse[0] = 1.0 / dt;
        let c = synth_tissue_curve(&impulse, 60.0, 4.0, dt);
        for (i, v) in c.iter().enumerate() {
            let expect = 60.0 * (-(i as f64) * dt / 4.0).exp();
            assert!((v - expect).abs() < 1e-12 * expect.max(1.0));
        }
    }

    #[test]
    fn tissue_curve_obeys_central_volume() {
        // Quadrature oracle: integrate the gamma variate on a fine grid
        // independently of the convolution.
        let spec = PhantomSpec::default();
        let h = 0.01;
        let n = (120.0 / h) as usize;
        let aif: Vec<f64> = (0..n).map(|i| gamma_variate(&spec.aif, i as f64 * h)).collect();
        let aif_area: f64 = aif.iter().sum::<f64>() * h;
        for mtt in [4.0, 6.0, 10.0] {
            let c = synth_tissue_curve(&aif, 1.0, mtt, h);
            let area: f64 = c.iter().sum::<f64>() * h;
            let ratio = area / aif_area;
            assert!((ratio / mtt - 1.0).abs() < 0.02, "mtt {mtt}: {ratio}");
        }
    }

    #[test]
    fn default_vessels_sit_in_cingulate() {
        let spec = PhantomSpec::default();
        let table = RegionTable::default_ho113();
        let labels = phantom_labels(&spec, &table).unwrap();
        let cing = table.cingulate_ids();
        for v in &spec.vessels {
            assert!(cing.contains(&labels.get(v[0], v[1], v[2])), "{v:?}");
        }
        assert_eq!(
            table.get(DEFAULT_DELAYED_REGION).unwrap().name,
            "Left Superior Temporal Gyrus, posterior division"
        );
    }

    fn small_spec() -> (PhantomSpec, LabelVolume) {
        let spec = PhantomSpec {
            dims: [32, 32, 10],
            n_timepoints: 40,
            vessels: vec![],
            ..PhantomSpec::default()
        };
        let labels = phantom_labels(&spec, &RegionTable::default_ho113()).unwrap();
        (spec, labels)
    }

    #[test]
    fn noiseless_baseline_is_s0_and_background_zero() {
        let (spec, labels) = small_spec();
        let (v, truth) = generate_phantom(&spec, &labels).unwrap();
        let arrival = (spec.aif.t0 / spec.tr).floor() as usize;
        for (idx, &l) in labels.data().iter().enumerate() {
            for t in 0..spec.n_timepoints {
                let s = v.at(idx, t);
                if l == 0 {
                    assert_eq!(s, 0.0);
                } else {
                    assert!(s <= spec.s0);
                    if t <= arrival {
                        assert_eq!(s, spec.s0);
                    }
                }
            }
        }
        for r in &truth.regions {
            assert_eq!(r.cbv, r.cbf * r.mtt);
        }
        assert_eq!(truth.region(DEFAULT_DELAYED_REGION).unwrap().tmax, 3.0);
    }

    #[test]
    fn same_seed_same_bits() {
        let (mut spec, labels) = small_spec();
        spec.noise_sigma = 2.0;
        let a = generate_phantom(&spec, &labels).unwrap().0;
        let b = generate_phantom(&spec, &labels).unwrap().0;
        assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
        spec.seed += 1;
        let c = generate_phantom(&spec, &labels).unwrap().0;
        assert_ne!(a, c);
    }

    #[test]
    fn noise_is_standard_normal() {
        let n = 20000;
        let xs: Vec<f64> = (0..n).map(|i| noise_at(7, i, 3)).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.03, "{mean}");
        assert!((var - 1.0).abs() < 0.05, "{var}");
    }

    #[test]
    fn higher_cbf_gives_lower_minimum_signal() {
        let (spec, _) = small_spec();
        let mut mins = Vec::new();
        for cbf in [20.0, 40.0, 80.0] {
            let p = RegionPerfusion {
                cbf,
                mtt: 4.0,
                delay: 0.0,
            };
            let c = spec.tissue_curve(&p);
            let min_s = c
                .iter()
                .map(|&x| spec.s0 * (-spec.te * x).exp())
                .fold(f64::INFINITY, f64::min);
            mins.push(min_s);
        }
        assert!(mins[0] > mins[1] && mins[1] > mins[2]);
    }

    #[test]
    fn unknown_lesion_region_is_rejected() {
        let (mut spec, labels) = small_spec();
        spec.lesions.push(Lesion {
            region: 999,
            cbf_multiplier: 0.5,
            mtt_multiplier: 1.0,
            delay: 0.0,
        });
        assert!(matches!(generate_phantom(&spec, &labels), Err(Error::Invalid(_))));
    }

    #[test]
    fn spec_json_round_trip() {
        let spec = PhantomSpec::default();
        let text = serde_json::to_string(&spec).unwrap();
        let back: PhantomSpec = serde_json::from_str(&text).unwrap();
        assert_eq!(back, spec);
    }
}
