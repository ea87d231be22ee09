use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::atlas::RegionTable;
use crate::model::ModelConfig;
use crate::perfusion::{AifConfig, DeconvConfig};
use crate::stats::ScreenConfig;
use crate::{Error, Result};

/// Screening thresholds shared by the regional and asymmetry screens.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScreeningConfig {
    pub alpha: f64,
    pub min_abs_d: f64,
    /// Bonferroni count for the regional screen (default: number of regions).
    pub m_regional: Option<usize>,
    /// Bonferroni count for the asymmetry screen (default: number of pairs).
    pub m_asymmetry: Option<usize>,
}

impl Default for ScreeningConfig {
    fn default() -> Self {
        let d = ScreenConfig::default();
        Self { alpha: d.alpha, min_abs_d: d.min_abs_d, m_regional: None, m_asymmetry: None }
    }
}

impl ScreeningConfig {
    pub fn regional(&self) -> ScreenConfig {
        ScreenConfig { alpha: self.alpha, min_abs_d: self.min_abs_d, m: self.m_regional }
    }

    pub fn asymmetry(&self) -> ScreenConfig {
        ScreenConfig { alpha: self.alpha, min_abs_d: self.min_abs_d, m: self.m_asymmetry }
    }
}

/// Everything that determines pipeline outputs. Loaded from one JSON
/// document; CLI flags override individual fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    /// Region table CSV; the shipped 113-region table when absent.
    pub region_table: Option<PathBuf>,
    /// Label ids searched for the AIF; the cingulate regions when absent.
    pub aif_search_labels: Option<Vec<u32>>,
    pub deconv: DeconvConfig,
    pub aif: AifConfig,
    /// Build PMDs from whole-brain-normalized maps (otherwise raw maps).
    pub normalized_pmds: bool,
    pub screening: ScreeningConfig,
    pub model: ModelConfig,
    /// Worker threads. Results do not depend on it, so it is left out of the
    /// serialized config and its hash.
    #[serde(skip_serializing)]
    pub threads: Option<usize>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            region_table: None,
            aif_search_labels: None,
            deconv: DeconvConfig::default(),
            aif: AifConfig::default(),
            normalized_pmds: true,
            screening: ScreeningConfig::default(),
            model: ModelConfig::default(),
            threads: None,
        }
    }
}

impl PipelineConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let p = path.as_ref();
        let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(p) = &self.region_table {
            if !p.is_file() {
                return Err(Error::invalid(format!("region table {} does not exist", p.display())));
            }
        }
        if self.aif_search_labels.as_ref().is_some_and(|v| v.is_empty()) {
            return Err(Error::invalid("aif_search_labels must not be empty"));
        }
        self.deconv.validate()?;
        self.aif.validate()?;
        self.screening.regional().validate()?;
        self.screening.asymmetry().validate()?;
        self.model.validate()?;
        if self.threads == Some(0) {
            return Err(Error::invalid("threads must be at least 1"));
        }
        Ok(())
    }

    pub fn region_table(&self) -> Result<RegionTable> {
        match &self.region_table {
            Some(p) => RegionTable::load(p),
            None => Ok(RegionTable::default_ho113()),
        }
    }

    pub fn aif_labels(&self, table: &RegionTable) -> Vec<u32> {
        self.aif_search_labels.clone().unwrap_or_else(|| table.cingulate_ids())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the compact JSON form.
    pub fn hash(&self) -> String {
        Sha256::digest(self.to_json().as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }
}
