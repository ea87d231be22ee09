//! Python bindings: descriptor statistics, synthetic data, the cohort
//! pipeline and the command line.

use std::path::Path;

use dscpmd::cli::{self, CohortSpec, PipelineConfig};
use dscpmd::descriptors::PmdTable;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

fn err(e: dscpmd::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn parse<T: serde::de::DeserializeOwned + Default>(json: Option<&str>) -> PyResult<T> {
    match json {
        Some(s) => serde_json::from_str(s).map_err(|e| PyValueError::new_err(e.to_string())),
        None => Ok(T::default()),
    }
}

fn config(json: Option<&str>) -> PyResult<PipelineConfig> {
    let cfg: PipelineConfig = parse(json)?;
    cfg.validate().map_err(err)?;
    Ok(cfg)
}

fn to_json<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("serializable")
}

/// Hartigan dip statistic of a sample.
#[pyfunction]
fn dip_statistic(x: Vec<f64>) -> f64 {
    dscpmd::descriptors::dip_statistic(&x)
}

/// Two-sided Wilcoxon rank-sum test: `(statistic, p_value, exact)`.
#[pyfunction]
fn wilcoxon_rank_sum(x: Vec<f64>, y: Vec<f64>) -> PyResult<(f64, f64, bool)> {
    let r = dscpmd::stats::wilcoxon_rank_sum(&x, &y).map_err(err)?;
    Ok((r.statistic, r.p_value, r.exact))
}

#[pyfunction]
fn cohens_d(x: Vec<f64>, y: Vec<f64>) -> PyResult<f64> {
    dscpmd::stats::cohens_d(&x, &y).map_err(err)
}

#[pyfunction]
fn bonferroni(p: f64, m: usize) -> f64 {
    dscpmd::stats::bonferroni(p, m)
}

/// Write a synthetic cohort under `root`; returns the manifest as JSON.
#[pyfunction]
#[pyo3(signature = (root, spec_json=None, config_json=None))]
fn write_cohort(root: &str, spec_json: Option<&str>, config_json: Option<&str>) -> PyResult<String> {
    let spec: CohortSpec = parse(spec_json)?;
    let table = config(config_json)?.region_table().map_err(err)?;
    let entries = cli::write_synthetic_cohort(Path::new(root), &spec, &table).map_err(err)?;
    Ok(to_json(&entries))
}

/// Run the full cohort pipeline; returns the summary as JSON.
#[pyfunction]
#[pyo3(signature = (cohort, out, config_json=None, save_maps=false))]
fn run_pipeline(cohort: &str, out: &str, config_json: Option<&str>, save_maps: bool) -> PyResult<String> {
    let cfg = config(config_json)?;
    let summary = cli::run_pipeline(Path::new(cohort), Path::new(out), &cfg, save_maps).map_err(err)?;
    Ok(to_json(&summary))
}

/// Load a descriptor CSV as `(subjects, labels, columns, rows)`, missing values as None.
#[pyfunction]
fn load_pmds(path: &str) -> PyResult<(Vec<String>, Vec<String>, Vec<String>, Vec<Vec<Option<f64>>>)> {
    let t = PmdTable::load_csv(path).map_err(err)?;
    let labels = t.labels.iter().map(|l| l.name().to_string()).collect();
    Ok((t.subjects, labels, t.columns, t.rows))
}

/// Run the command line with `args` (without the program name); returns the exit code.
#[pyfunction]
fn main(args: Vec<String>) -> i32 {
    cli::main_with_args(std::iter::once("dscpmd".to_string()).chain(args))
}

#[pymodule]
fn dscpmd_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(dip_statistic, m)?)?;
    m.add_function(wrap_pyfunction!(wilcoxon_rank_sum, m)?)?;
    m.add_function(wrap_pyfunction!(cohens_d, m)?)?;
    m.add_function(wrap_pyfunction!(bonferroni, m)?)?;
    m.add_function(wrap_pyfunction!(write_cohort, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    m.add_function(wrap_pyfunction!(load_pmds, m)?)?;
    m.add_function(wrap_pyfunction!(main, m)?)?;
    Ok(())
}
