//! Subject- and cohort-level drivers shared by the CLI commands.
//!
//! Cohort layout: `<root>/<class>/<subject>/dsc.nii` with `labels.nii` next
//! to it, optionally `mask.nii` and `affine.json` (label world → subject
//! world). `<class>` is `stroke` or `seizure`.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::Matrix4;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::PipelineConfig;
use crate::atlas::{affine_from_json, pair_regions, resample_labels, LabelVolume, RegionPairing, RegionTable};
use crate::descriptors::{
    asymmetry_feature_names, asymmetry_features, extract_pmds, regional_feature_names, ClassLabel, PmdTable,
};
use crate::model::{fit_fold, group_ranks, linear_shap, loo_cv, select_features, CvReport, GroupedRanks, ShapReport};
use crate::nifti::{read_labels, read_mask, read_nifti, write_labels, write_mask, write_nifti_3d, write_nifti_4d};
use crate::perfusion::{
    brain_mask, compute_maps, select_aif, signal_to_concentration, AifResult, PerfusionMaps,
};
use crate::phantom::{generate_phantom, phantom_labels, vessels_in_regions, Lesion, PhantomSpec, RegionPerfusion};
use crate::stats::{screen, ScreenMode, ScreenReport};
use crate::volume::{canonicalize_4d, Mask3D, Reorientation, Volume4D};
use crate::{Error, Result};

pub const DSC_FILE: &str = "dsc.nii";
pub const LABELS_FILE: &str = "labels.nii";
pub const MASK_FILE: &str = "mask.nii";
pub const AFFINE_FILE: &str = "affine.json";

const CLASSES: [ClassLabel; 2] = [ClassLabel::Seizure, ClassLabel::Stroke];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubjectInput {
    pub id: String,
    pub label: ClassLabel,
    pub dir: PathBuf,
}

/// Subjects under `root`, seizure before stroke, each class sorted by name.
pub fn discover_cohort(root: &Path) -> Result<Vec<SubjectInput>> {
    if !root.is_dir() {
        return Err(Error::Cohort(format!("{} is not a directory", root.display())));
    }
    let mut out: Vec<SubjectInput> = Vec::new();
    for class in CLASSES {
        let dir = root.join(class.name());
        if !dir.is_dir() {
            continue;
        }
        let mut names = Vec::new();
        for entry in fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))? {
            let entry = entry.map_err(|e| Error::io(&dir, e))?;
            if entry.path().join(DSC_FILE).is_file() {
                names.push(entry.file_name().to_string_lossy().into_owned());
            }
        }
        names.sort();
        for id in names {
            if out.iter().any(|s| s.id == id) {
                return Err(Error::Cohort(format!("subject id {id} appears under both classes")));
            }
            out.push(SubjectInput { dir: dir.join(&id), id, label: class });
        }
    }
    if out.is_empty() {
        return Err(Error::Cohort(format!("no subjects found under {}", root.display())));
    }
    Ok(out)
}

/// DSC series, labels and optional mask, all on the canonical (RAS) DSC grid.
pub struct SubjectData {
    pub dsc: Volume4D,
    pub labels: LabelVolume,
    pub mask: Option<Mask3D>,
}

/// Read a subject's files. Labels are resampled (nearest neighbour) onto the
/// DSC grid through `affine`, or through world coordinates when absent.
pub fn load_subject(dsc: &Path, labels: &Path, mask: Option<&Path>, affine: Option<&Path>) -> Result<SubjectData> {
    let v = canonicalize_4d(&read_nifti(dsc)?.into_4d()?)?;
    let geom = v.geometry().clone();
    let raw = read_labels(labels)?;
    let tf = match affine {
        Some(p) => affine_from_json(&fs::read_to_string(p).map_err(|e| Error::io(p, e))?)?,
        None => Matrix4::identity(),
    };
    let labels = resample_labels(&raw, &tf, &geom)?;
    let mask = match mask {
        Some(p) => {
            let (m, mg) = read_mask(p)?;
            let r = Reorientation::for_geometry(&mg)?;
            if r.target().dims != geom.dims {
                return Err(Error::invalid(format!(
                    "mask grid {:?} differs from the DSC grid {:?}",
                    r.target().dims,
                    geom.dims
                )));
            }
            Some(Mask3D::new(geom.dims, r.apply(m.data()))?)
        }
        None => None,
    };
    Ok(SubjectData { dsc: v, labels, mask })
}

pub fn load_subject_dir(dir: &Path) -> Result<SubjectData> {
    let opt = |name: &str| Some(dir.join(name)).filter(|p| p.is_file());
    load_subject(
        &dir.join(DSC_FILE),
        &dir.join(LABELS_FILE),
        opt(MASK_FILE).as_deref(),
        opt(AFFINE_FILE).as_deref(),
    )
}

#[derive(Debug, Clone)]
pub struct SubjectMaps {
    pub maps: PerfusionMaps,
    pub normalized: PerfusionMaps,
    pub aif: AifResult,
    pub baseline_end: usize,
    pub dt: f64,
    /// Labels restricted to the brain mask.
    pub labels: LabelVolume,
}

#[derive(Serialize)]
struct AifRecord<'a> {
    dt: f64,
    baseline_end: usize,
    #[serde(flatten)]
    aif: &'a AifResult,
}

/// Mask, concentration, AIF and the four maps for one subject.
pub fn analyze_subject(data: &SubjectData, cfg: &PipelineConfig, table: &RegionTable) -> Result<SubjectMaps> {
    let v = &data.dsc;
    let mask = match &data.mask {
        Some(m) => m.clone(),
        None => brain_mask(&v.extract_timepoint(0)?)?,
    };
    if mask.count() == 0 {
        return Err(Error::EmptyMask);
    }
    data.labels.validate(table)?;
    let conc = signal_to_concentration(v, &mask, v.te())?;
    let aif = select_aif(&conc, &data.labels, &cfg.aif_labels(table), &cfg.aif)?;
    let maps = compute_maps(&conc, &aif, &mask, &cfg.deconv)?;
    let normalized = maps.normalized()?;
    Ok(SubjectMaps {
        labels: data.labels.masked(&mask)?,
        maps,
        normalized,
        aif,
        baseline_end: conc.baseline_end(),
        dt: conc.dt(),
    })
}

/// Regional columns followed by asymmetry columns.
pub fn feature_columns(table: &RegionTable, pairing: &RegionPairing) -> Vec<String> {
    let mut c = regional_feature_names(table);
    c.extend(asymmetry_feature_names(pairing));
    c
}

pub fn pmd_row(
    s: &SubjectMaps,
    table: &RegionTable,
    pairing: &RegionPairing,
    normalized: bool,
) -> Result<Vec<Option<f64>>> {
    let maps = if normalized { &s.normalized } else { &s.maps };
    let mut row = extract_pmds(maps, &s.labels, table)?;
    let asym = asymmetry_features(&row, table, pairing)?;
    row.extend(asym);
    Ok(row)
}

/// Raw and normalized maps, the mask and the AIF record.
pub fn write_subject_maps(s: &SubjectMaps, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (name, map) in s.maps.named() {
        write_nifti_3d(map, dir.join(format!("{name}.nii")))?;
    }
    for (name, map) in s.normalized.named() {
        write_nifti_3d(map, dir.join(format!("{name}_norm.nii")))?;
    }
    write_mask(&s.maps.mask, s.maps.cbf.geometry(), dir.join(MASK_FILE))?;
    let rec = AifRecord { dt: s.dt, baseline_end: s.baseline_end, aif: &s.aif };
    write_text(&dir.join("aif.json"), &serde_json::to_string_pretty(&rec)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectFailure {
    pub subject: String,
    pub error: String,
}

pub struct CohortPmds {
    pub table: PmdTable,
    pub failures: Vec<SubjectFailure>,
}

/// PMD rows for every subject that processes; failures are logged and
/// skipped. Maps are written under `maps_dir/<subject>` when given.
pub fn build_pmd_table(
    subjects: &[SubjectInput],
    cfg: &PipelineConfig,
    table: &RegionTable,
    maps_dir: Option<&Path>,
) -> Result<CohortPmds> {
    let pairing = pair_regions(table);
    let rows: Vec<Result<Vec<Option<f64>>>> = subjects
        .par_iter()
        .map(|s| {
            let data = load_subject_dir(&s.dir)?;
            let m = analyze_subject(&data, cfg, table)?;
            if let Some(d) = maps_dir {
                write_subject_maps(&m, &d.join(&s.id))?;
            }
            pmd_row(&m, table, &pairing, cfg.normalized_pmds)
        })
        .collect();
    let (mut ids, mut labels, mut kept, mut failures) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (s, r) in subjects.iter().zip(rows) {
        match r {
            Ok(row) => {
                ids.push(s.id.clone());
                labels.push(s.label);
                kept.push(row);
            }
            Err(e) => {
                log::warn!("subject {} skipped: {e}", s.id);
                failures.push(SubjectFailure { subject: s.id.clone(), error: e.to_string() });
            }
        }
    }
    if kept.is_empty() {
        return Err(Error::Cohort("no subject could be processed".into()));
    }
    Ok(CohortPmds { table: PmdTable::new(ids, labels, feature_columns(table, &pairing), kept)?, failures })
}

pub fn shap_analysis(
    pmds: &PmdTable,
    cfg: &PipelineConfig,
    table: &RegionTable,
) -> Result<(ShapReport, GroupedRanks)> {
    let t = select_features(pmds, cfg.model.features);
    let fit = fit_fold(&t, None, cfg.model.lambda)?;
    let report = linear_shap(&fit.model, &fit.preprocessor, &t.columns, &t.rows)?;
    let groups = group_ranks(&report, table, &pair_regions(table));
    Ok((report, groups))
}

/// Serialize `body` with the config and its hash alongside.
pub fn with_config<T: Serialize>(cfg: &PipelineConfig, body: &T) -> Result<String> {
    let mut v = serde_json::json!({
        "config_hash": cfg.hash(),
        "config": serde_json::to_value(cfg)?,
    });
    match serde_json::to_value(body)? {
        serde_json::Value::Object(m) => v.as_object_mut().expect("object").extend(m),
        other => {
            v["result"] = other;
        }
    }
    Ok(serde_json::to_string_pretty(&v)?)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_with<F>(path: &Path, f: F) -> Result<()>
where
    F: FnOnce(&mut Vec<u8>) -> Result<()>,
{
    let mut buf = Vec::new();
    f(&mut buf)?;
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn write_screen(report: &ScreenReport, cfg: &PipelineConfig, out: &Path, stem: &str) -> Result<()> {
    write_with(&out.join(format!("{stem}.csv")), |b| report.write_csv(b))?;
    write_text(&out.join(format!("{stem}.json")), &with_config(cfg, report)?)?;
    write_with(&out.join(format!("{stem}.dat")), |b| {
        report.write_plot_data(b).map_err(|e| Error::io(stem, e))
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineSummary {
    pub n_subjects: usize,
    pub n_stroke: usize,
    pub n_seizure: usize,
    pub n_features: usize,
    pub failed: Vec<SubjectFailure>,
    pub significant_regional: usize,
    pub significant_asymmetry: usize,
    pub auc: f64,
    pub auc_ci: [f64; 2],
    pub outputs: Vec<String>,
}

pub const PIPELINE_OUTPUTS: [&str; 14] = [
    "pmd.csv",
    "pmd.json",
    "screen_regional.csv",
    "screen_regional.json",
    "screen_regional.dat",
    "screen_asymmetry.csv",
    "screen_asymmetry.json",
    "screen_asymmetry.dat",
    "cv_report.json",
    "shap.csv",
    "shap.json",
    "shap_groups.csv",
    "shap_groups.json",
    "summary.json",
];

/// Cohort → PMDs → screens → leave-one-out classifier → SHAP, written to `out`.
pub fn run_pipeline(root: &Path, out: &Path, cfg: &PipelineConfig, save_maps: bool) -> Result<PipelineSummary> {
    cfg.validate()?;
    let table = cfg.region_table()?;
    let subjects = discover_cohort(root)?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let maps_dir = out.join("maps");
    let cohort = build_pmd_table(&subjects, cfg, &table, save_maps.then_some(maps_dir.as_path()))?;
    let pmds = &cohort.table;
    let (n_stroke, n_seizure) = pmds.class_counts();
    if n_stroke < 2 || n_seizure < 2 {
        return Err(Error::Cohort(format!(
            "need at least two processed subjects per class (stroke {n_stroke}, seizure {n_seizure})"
        )));
    }

    pmds.save_csv(out.join("pmd.csv"))?;
    write_text(&out.join("pmd.json"), &with_config(cfg, pmds)?)?;
    let regional = screen(pmds, ScreenMode::Regional, &cfg.screening.regional())?;
    write_screen(&regional, cfg, out, "screen_regional")?;
    let asym = screen(pmds, ScreenMode::Asymmetry, &cfg.screening.asymmetry())?;
    write_screen(&asym, cfg, out, "screen_asymmetry")?;

    let cv: CvReport = loo_cv(&select_features(pmds, cfg.model.features), &cfg.model)?;
    write_text(&out.join("cv_report.json"), &with_config(cfg, &cv)?)?;

    let (shap, groups) = shap_analysis(pmds, cfg, &table)?;
    write_with(&out.join("shap.csv"), |b| shap.write_csv(b))?;
    write_text(&out.join("shap.json"), &with_config(cfg, &shap)?)?;
    write_with(&out.join("shap_groups.csv"), |b| groups.write_csv(b))?;
    write_text(&out.join("shap_groups.json"), &with_config(cfg, &groups)?)?;

    let summary = PipelineSummary {
        n_subjects: pmds.n_subjects(),
        n_stroke,
        n_seizure,
        n_features: pmds.n_features(),
        failed: cohort.failures,
        significant_regional: regional.significant().count(),
        significant_asymmetry: asym.significant().count(),
        auc: cv.metrics.auc,
        auc_ci: [cv.ci.auc.lower, cv.ci.auc.upper],
        outputs: PIPELINE_OUTPUTS.iter().map(|s| s.to_string()).collect(),
    };
    write_text(&out.join("summary.json"), &with_config(cfg, &summary)?)?;
    Ok(summary)
}

/// Synthetic two-class cohort. Stroke subjects get a hypoperfused, delayed
/// lesion in one left hemisphere region; seizure subjects a hyperperfused
/// region. Everything else varies only by a per-subject global CBF factor and
/// noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CohortSpec {
    pub n_stroke: usize,
    pub n_seizure: usize,
    pub dims: [usize; 3],
    pub n_timepoints: usize,
    pub noise_sigma: f64,
    pub seed: u64,
    /// Candidate lesion sites; the left hemisphere regions of the table when empty.
    pub lesion_regions: Vec<u32>,
    pub stroke_cbf: f64,
    pub stroke_mtt: f64,
    pub stroke_delay: f64,
    pub seizure_cbf: f64,
    /// Residue delay everywhere, so Tmax is not identically zero.
    pub tissue_delay: f64,
    /// Half-width of the uniform per-subject global CBF factor around 1.
    pub cbf_jitter: f64,
}

impl Default for CohortSpec {
    fn default() -> Self {
        Self {
            n_stroke: 6,
            n_seizure: 6,
            dims: [32, 32, 10],
            n_timepoints: 40,
            noise_sigma: 0.02,
            seed: 7,
            lesion_regions: Vec::new(),
            stroke_cbf: 0.4,
            stroke_mtt: 1.5,
            stroke_delay: 3.0,
            seizure_cbf: 1.5,
            tissue_delay: 1.5,
            cbf_jitter: 0.1,
        }
    }
}

impl CohortSpec {
    /// Phantom for subject `i` of `class` and the region it alters.
    pub fn subject_phantom(&self, class: ClassLabel, i: usize, table: &RegionTable) -> Result<(PhantomSpec, u32)> {
        let sites: Vec<u32> = if self.lesion_regions.is_empty() {
            table
                .regions()
                .iter()
                .filter(|r| r.hemisphere == crate::atlas::Hemisphere::Left)
                .map(|r| r.id)
                .collect()
        } else {
            self.lesion_regions.clone()
        };
        if sites.is_empty() {
            return Err(Error::invalid("no candidate lesion regions"));
        }
        let stream = (class == ClassLabel::Stroke) as u64;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream << 32 | i as u64);
        let region = sites[rng.random_range(0..sites.len())];
        let global = 1.0 + self.cbf_jitter * (2.0 * rng.random::<f64>() - 1.0);
        let base = PhantomSpec::default();
        let lesion = match class {
            ClassLabel::Stroke => Lesion {
                region,
                cbf_multiplier: self.stroke_cbf,
                mtt_multiplier: self.stroke_mtt,
                delay: self.stroke_delay,
            },
            ClassLabel::Seizure => Lesion { region, cbf_multiplier: self.seizure_cbf, mtt_multiplier: 1.0, delay: 0.0 },
        };
        let mut spec = PhantomSpec {
            dims: self.dims,
            n_timepoints: self.n_timepoints,
            default_perfusion: RegionPerfusion {
                cbf: base.default_perfusion.cbf * global,
                mtt: base.default_perfusion.mtt,
                delay: self.tissue_delay,
            },
            lesions: vec![lesion],
            vessels: Vec::new(),
            noise_sigma: self.noise_sigma,
            seed: rng.random(),
            ..base
        };
        let labels = phantom_labels(&spec, table)?;
        spec.vessels = vessels_in_regions(&labels, &table.cingulate_ids(), self.dims[2] / 2, 2);
        Ok((spec, region))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortManifestEntry {
    pub subject: String,
    pub label: ClassLabel,
    pub region: u32,
}

/// Write a synthetic cohort in the layout `discover_cohort` reads, plus
/// `cohort.json` listing each subject's altered region.
pub fn write_synthetic_cohort(root: &Path, spec: &CohortSpec, table: &RegionTable) -> Result<Vec<CohortManifestEntry>> {
    let jobs: Vec<(ClassLabel, usize)> = (0..spec.n_stroke)
        .map(|i| (ClassLabel::Stroke, i))
        .chain((0..spec.n_seizure).map(|i| (ClassLabel::Seizure, i)))
        .collect();
    let entries: Vec<CohortManifestEntry> = jobs
        .par_iter()
        .map(|&(class, i)| {
            let (ps, region) = spec.subject_phantom(class, i, table)?;
            let labels = phantom_labels(&ps, table)?;
            let (v, _) = generate_phantom(&ps, &labels)?;
            let subject = format!("{}_{:03}", class.name(), i + 1);
            let dir = root.join(class.name()).join(&subject);
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            write_nifti_4d(&v, dir.join(DSC_FILE))?;
            write_labels(&labels, dir.join(LABELS_FILE))?;
            Ok(CohortManifestEntry { subject, label: class, region })
        })
        .collect::<Result<_>>()?;
    let manifest = serde_json::json!({ "spec": spec, "subjects": entries });
    write_text(&root.join("cohort.json"), &serde_json::to_string_pretty(&manifest)?)?;
    Ok(entries)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn subject_phantoms_are_deterministic_and_distinct() {
        let table = RegionTable::default_ho113();
        let spec = CohortSpec::default();
        let (a, ra) = spec.subject_phantom(ClassLabel::Stroke, 0, &table).unwrap();
        let (b, rb) = spec.subject_phantom(ClassLabel::Stroke, 0, &table).unwrap();
        assert_eq!((a.clone(), ra), (b, rb));
        let (c, _) = spec.subject_phantom(ClassLabel::Stroke, 1, &table).unwrap();
        assert_ne!(a.seed, c.seed);
        assert!(!a.vessels.is_empty());
        let labels = phantom_labels(&a, &table).unwrap();
        let cing = table.cingulate_ids();
        assert!(a.vessels.iter().all(|v| cing.contains(&labels.get(v[0], v[1], v[2]))));
    }

    #[test]
    fn discover_rejects_missing_root() {
        assert!(matches!(discover_cohort(Path::new("/nonexistent/cohort")), Err(Error::Cohort(_))));
    }

    #[test]
    fn with_config_embeds_hash() {
        let cfg = PipelineConfig::default();
        let s = with_config(&cfg, &serde_json::json!({"x": 1})).unwrap();
        let v: serde_json::Value = serde_json::from_str(&s).unwrap();
        assert_eq!(v["config_hash"], cfg.hash());
        assert_eq!(v["x"], 1);
        let s = with_config(&cfg, &[1, 2]).unwrap();
        assert!(s.contains("\"result\""));
    }
}
