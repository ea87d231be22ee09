//! `dscpmd` command line.
//!
//! Exit codes: 0 success, 1 unexpected failure (e.g. writing outputs),
//! 2 invalid configuration or phantom spec, 3 unusable subject data,
//! 4 cohort too small or missing a class.

pub mod config;
pub mod pipeline;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

pub use config::{PipelineConfig, ScreeningConfig};
pub use pipeline::{
    analyze_subject, build_pmd_table, discover_cohort, feature_columns, load_subject, load_subject_dir, pmd_row,
    run_pipeline, shap_analysis, with_config, write_subject_maps, write_synthetic_cohort, CohortSpec, PipelineSummary,
    SubjectInput, SubjectMaps,
};

use crate::descriptors::PmdTable;
use crate::model::{loo_cv, select_features, FeatureSet};
use crate::nifti::{read_mask, read_nifti, write_labels, write_mask, write_nifti_4d};
use crate::perfusion::brain_mask;
use crate::phantom::{generate_phantom, phantom_labels, vessels_in_regions, PhantomSpec};
use crate::stats::{ncc, screen, ScreenMode};
use crate::volume::{canonicalize, canonicalize_4d, Mask3D};
use crate::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_SUBJECT: i32 = 3;
pub const EXIT_COHORT: i32 = 4;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub error: Error,
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        self.error.fmt(f)
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Tags an error with the exit code of the stage it came from. Cohort errors
/// keep their own code wherever they surface.
trait Stage<T> {
    fn at(self, code: i32) -> CliResult<T>;
}

impl<T> Stage<T> for crate::Result<T> {
    fn at(self, code: i32) -> CliResult<T> {
        self.map_err(|error| {
            let code = if matches!(error, Error::Cohort(_)) { EXIT_COHORT } else { code };
            CliError { code, error }
        })
    }
}

#[derive(Debug, Parser)]
#[command(name = "dscpmd", version, about = "DSC-MRI perfusion map descriptors, screening and classification")]
pub struct Cli {
    /// Pipeline configuration JSON.
    #[arg(long, short, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads (default: all cores). Outputs do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Features {
    All,
    Regional,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic DSC series with labels and ground truth.
    Phantom {
        /// Phantom spec JSON; the built-in default phantom when absent. Without a
        /// `vessels` list, pure-AIF voxels are placed in the cingulate.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        noise: Option<f64>,
    },
    /// Write a synthetic two-class cohort.
    Cohort {
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        n_stroke: Option<usize>,
        #[arg(long)]
        n_seizure: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Brain mask from the first timepoint of a DSC series.
    Mask {
        #[arg(long)]
        dsc: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// CBF, CBV, MTT and Tmax maps (raw and normalized) for one subject.
    Maps {
        #[arg(long)]
        dsc: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        mask: Option<PathBuf>,
        /// Label-to-subject affine JSON (16 numbers, row-major).
        #[arg(long)]
        affine: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Perfusion map descriptors for every subject of a cohort.
    Pmd {
        #[arg(long)]
        cohort: PathBuf,
        /// Output CSV.
        #[arg(long)]
        out: PathBuf,
        /// Also write each subject's maps under this directory.
        #[arg(long)]
        maps_dir: Option<PathBuf>,
    },
    /// Stroke vs seizure screen of the regional descriptors.
    Screen {
        #[arg(long)]
        pmd: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        min_d: Option<f64>,
        /// Bonferroni comparison count.
        #[arg(long)]
        m: Option<usize>,
    },
    /// Stroke vs seizure screen of the left/right asymmetry descriptors.
    AsymScreen {
        #[arg(long)]
        pmd: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        min_d: Option<f64>,
        #[arg(long)]
        m: Option<usize>,
    },
    /// Leave-one-out logistic regression with bootstrap intervals.
    Classify {
        #[arg(long)]
        pmd: PathBuf,
        /// Output JSON report.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        n_bootstrap: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum)]
        features: Option<Features>,
    },
    /// Linear SHAP attributions of the full-cohort model, with group ranks.
    Shap {
        #[arg(long)]
        pmd: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Normalized cross-correlation of two maps.
    Compare {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long)]
        mask: Option<PathBuf>,
    },
    /// Full cohort pipeline: descriptors, both screens, classifier and SHAP.
    Pipeline {
        #[arg(long)]
        cohort: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Keep per-subject maps under `<out>/maps`.
        #[arg(long)]
        save_maps: bool,
    },
}

/// Parse `args`, run, and return the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match run(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.code
        }
    }
}

pub fn run(cli: Cli) -> CliResult<()> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p).at(EXIT_CONFIG)?,
        None => PipelineConfig::default(),
    };
    if cli.threads.is_some() {
        cfg.threads = cli.threads;
    }
    cfg.validate().at(EXIT_CONFIG)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads.unwrap_or(0))
        .build()
        .map_err(|e| CliError { code: EXIT_FAILURE, error: Error::invalid(e.to_string()) })?;
    pool.install(|| dispatch(cli.command, cfg))
}

fn create_dir(p: &Path) -> CliResult<()> {
    fs::create_dir_all(p).map_err(|e| Error::io(p, e)).at(EXIT_FAILURE)
}

fn print_json<T: Serialize>(v: &T) {
    println!("{}", serde_json::to_string_pretty(v).expect("serializable"));
}

fn load_pmds(p: &Path) -> CliResult<PmdTable> {
    PmdTable::load_csv(p).at(EXIT_CONFIG)
}

fn dispatch(command: Command, mut cfg: PipelineConfig) -> CliResult<()> {
    match command {
        Command::Phantom { spec, out, seed, noise } => {
            let (mut ps, place_vessels) = match spec {
                Some(p) => {
                    let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e)).at(EXIT_CONFIG)?;
                    let raw: serde_json::Value = serde_json::from_str(&text).map_err(Error::from).at(EXIT_CONFIG)?;
                    let place = raw.get("vessels").is_none();
                    (serde_json::from_value::<PhantomSpec>(raw).map_err(Error::from).at(EXIT_CONFIG)?, place)
                }
                None => (PhantomSpec::default(), false),
            };
            if let Some(s) = seed {
                ps.seed = s;
            }
            if let Some(n) = noise {
                ps.noise_sigma = n;
            }
            let table = cfg.region_table().at(EXIT_CONFIG)?;
            if place_vessels {
                ps.vessels.clear();
                let labels = phantom_labels(&ps, &table).at(EXIT_CONFIG)?;
                ps.vessels = vessels_in_regions(&labels, &table.cingulate_ids(), ps.dims[2] / 2, 2);
            }
            ps.validate().at(EXIT_CONFIG)?;
            let labels = phantom_labels(&ps, &table).at(EXIT_CONFIG)?;
            let (v, truth) = generate_phantom(&ps, &labels).at(EXIT_CONFIG)?;
            create_dir(&out)?;
            write_nifti_4d(&v, out.join(pipeline::DSC_FILE)).at(EXIT_FAILURE)?;
            write_labels(&labels, out.join(pipeline::LABELS_FILE)).at(EXIT_FAILURE)?;
            let truth = serde_json::json!({ "spec": ps, "truth": truth });
            pipeline::write_text(&out.join("truth.json"), &serde_json::to_string_pretty(&truth).expect("json"))
                .at(EXIT_FAILURE)?;
        }
        Command::Cohort { spec, out, n_stroke, n_seizure, seed } => {
            let mut cs = match spec {
                Some(p) => {
                    let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e)).at(EXIT_CONFIG)?;
                    serde_json::from_str::<CohortSpec>(&text).map_err(Error::from).at(EXIT_CONFIG)?
                }
                None => CohortSpec::default(),
            };
            cs.n_stroke = n_stroke.unwrap_or(cs.n_stroke);
            cs.n_seizure = n_seizure.unwrap_or(cs.n_seizure);
            cs.seed = seed.unwrap_or(cs.seed);
            let table = cfg.region_table().at(EXIT_CONFIG)?;
            create_dir(&out)?;
            let entries = write_synthetic_cohort(&out, &cs, &table).at(EXIT_CONFIG)?;
            log::info!("wrote {} subjects to {}", entries.len(), out.display());
        }
        Command::Mask { dsc, out } => {
            let v = read_nifti(&dsc).and_then(|i| i.into_4d()).and_then(|v| canonicalize_4d(&v)).at(EXIT_SUBJECT)?;
            let m = v.extract_timepoint(0).and_then(|f| brain_mask(&f)).at(EXIT_SUBJECT)?;
            write_mask(&m, v.geometry(), &out).at(EXIT_FAILURE)?;
        }
        Command::Maps { dsc, labels, mask, affine, out } => {
            let table = cfg.region_table().at(EXIT_CONFIG)?;
            let data = load_subject(&dsc, &labels, mask.as_deref(), affine.as_deref()).at(EXIT_SUBJECT)?;
            let maps = analyze_subject(&data, &cfg, &table).at(EXIT_SUBJECT)?;
            write_subject_maps(&maps, &out).at(EXIT_FAILURE)?;
        }
        Command::Pmd { cohort, out, maps_dir } => {
            let table = cfg.region_table().at(EXIT_CONFIG)?;
            let subjects = discover_cohort(&cohort).at(EXIT_COHORT)?;
            let res = build_pmd_table(&subjects, &cfg, &table, maps_dir.as_deref()).at(EXIT_SUBJECT)?;
            res.table.save_csv(&out).at(EXIT_FAILURE)?;
            if !res.failures.is_empty() {
                log::warn!("{} subject(s) skipped", res.failures.len());
            }
        }
        Command::Screen { pmd, out, alpha, min_d, m } => {
            run_screen(ScreenMode::Regional, &pmd, &out, alpha, min_d, m, cfg)?;
        }
        Command::AsymScreen { pmd, out, alpha, min_d, m } => {
            run_screen(ScreenMode::Asymmetry, &pmd, &out, alpha, min_d, m, cfg)?;
        }
        Command::Classify { pmd, out, lambda, n_bootstrap, seed, features } => {
            let m = &mut cfg.model;
            m.lambda = lambda.unwrap_or(m.lambda);
            m.n_bootstrap = n_bootstrap.unwrap_or(m.n_bootstrap);
            m.seed = seed.unwrap_or(m.seed);
            if let Some(f) = features {
                m.features = match f {
                    Features::All => FeatureSet::All,
                    Features::Regional => FeatureSet::Regional,
                };
            }
            cfg.validate().at(EXIT_CONFIG)?;
            let t = load_pmds(&pmd)?;
            let report = loo_cv(&select_features(&t, cfg.model.features), &cfg.model).at(EXIT_COHORT)?;
            pipeline::write_text(&out, &with_config(&cfg, &report).at(EXIT_FAILURE)?).at(EXIT_FAILURE)?;
            print_json(&serde_json::json!({ "auc": report.metrics.auc, "auc_ci": report.ci.auc }));
        }
        Command::Shap { pmd, out } => {
            let table = cfg.region_table().at(EXIT_CONFIG)?;
            let t = load_pmds(&pmd)?;
            let (pos, neg) = t.class_counts();
            if pos == 0 || neg == 0 {
                return Err(CliError { code: EXIT_COHORT, error: Error::Cohort("SHAP needs both classes".into()) });
            }
            let (report, groups) = shap_analysis(&t, &cfg, &table).at(EXIT_CONFIG)?;
            create_dir(&out)?;
            pipeline::write_with(&out.join("shap.csv"), |b| report.write_csv(b)).at(EXIT_FAILURE)?;
            pipeline::write_text(&out.join("shap.json"), &with_config(&cfg, &report).at(EXIT_FAILURE)?)
                .at(EXIT_FAILURE)?;
            pipeline::write_with(&out.join("shap_groups.csv"), |b| groups.write_csv(b)).at(EXIT_FAILURE)?;
        }
        Command::Compare { a, b, mask } => {
            let load = |p: &Path| read_nifti(p).and_then(|i| i.into_3d()).and_then(|v| canonicalize(&v));
            let va = load(&a).at(EXIT_SUBJECT)?;
            let vb = load(&b).at(EXIT_SUBJECT)?;
            let m = match mask {
                Some(p) => read_mask(&p).at(EXIT_SUBJECT)?.0,
                None => Mask3D::full(va.dims()),
            };
            let r = ncc(&va, &vb, &m).at(EXIT_SUBJECT)?;
            print_json(&serde_json::json!({ "ncc": r }));
        }
        Command::Pipeline { cohort, out, save_maps } => {
            let summary = run_pipeline(&cohort, &out, &cfg, save_maps).at(EXIT_FAILURE)?;
            print_json(&summary);
        }
    }
    Ok(())
}

fn run_screen(
    mode: ScreenMode,
    pmd: &Path,
    out: &Path,
    alpha: Option<f64>,
    min_d: Option<f64>,
    m: Option<usize>,
    mut cfg: PipelineConfig,
) -> CliResult<()> {
    let sc = &mut cfg.screening;
    sc.alpha = alpha.unwrap_or(sc.alpha);
    sc.min_abs_d = min_d.unwrap_or(sc.min_abs_d);
    let stem = match mode {
        ScreenMode::Regional => {
            sc.m_regional = m.or(sc.m_regional);
            "screen_regional"
        }
        ScreenMode::Asymmetry => {
            sc.m_asymmetry = m.or(sc.m_asymmetry);
            "screen_asymmetry"
        }
    };
    cfg.validate().at(EXIT_CONFIG)?;
    let sc = match mode {
        ScreenMode::Regional => cfg.screening.regional(),
        ScreenMode::Asymmetry => cfg.screening.asymmetry(),
    };
    let t = load_pmds(pmd)?;
    let report = screen(&t, mode, &sc).at(EXIT_COHORT)?;
    create_dir(out)?;
    pipeline::write_screen(&report, &cfg, out, stem).at(EXIT_FAILURE)?;
    print_json(&serde_json::json!({ "m": report.m, "significant": report.significant().count() }));
    Ok(())
}
