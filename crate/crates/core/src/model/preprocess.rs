use serde::{Deserialize, Serialize};

use crate::descriptors::quantile_sorted;
use crate::{Error, Result};

/// Median imputation followed by z-scoring, both fitted on training rows only.
/// A feature with zero training SD is inert and always maps to 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preprocessor {
    pub medians: Vec<f64>,
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
    pub inert: Vec<bool>,
}

impl Preprocessor {
    pub fn fit<R: AsRef<[Option<f64>]>>(rows: &[R]) -> Result<Self> {
        let Some(first) = rows.first() else {
            return Err(Error::invalid("cannot fit a preprocessor on zero rows"));
        };
        let p = first.as_ref().len();
        if rows.iter().any(|r| r.as_ref().len() != p) {
            return Err(Error::invalid("ragged feature rows"));
        }
        let n = rows.len() as f64;
        let mut medians = vec![0.0; p];
        let mut means = vec![0.0; p];
        let mut sds = vec![0.0; p];
        let mut inert = vec![false; p];
        let mut col = Vec::with_capacity(rows.len());
        for j in 0..p {
            col.clear();
            col.extend(rows.iter().filter_map(|r| r.as_ref()[j]));
            // A column never observed in training imputes to 0 and is inert.
            let med = if col.is_empty() {
                0.0
            } else {
                col.sort_by(f64::total_cmp);
                quantile_sorted(&col, 0.5)
            };
            let filled = rows.iter().map(|r| r.as_ref()[j].unwrap_or(med));
            let mean = filled.clone().sum::<f64>() / n;
            let var = filled.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            medians[j] = med;
            means[j] = mean;
            sds[j] = var.sqrt();
            inert[j] = !(sds[j] > 0.0) || !sds[j].is_finite();
        }
        Ok(Self { medians, means, sds, inert })
    }

    pub fn n_features(&self) -> usize {
        self.medians.len()
    }

    pub fn transform_row(&self, row: &[Option<f64>]) -> Vec<f64> {
        row.iter()
            .enumerate()
            .map(|(j, v)| {
                if self.inert[j] {
                    0.0
                } else {
                    (v.unwrap_or(self.medians[j]) - self.means[j]) / self.sds[j]
                }
            })
            .collect()
    }

    pub fn transform<R: AsRef<[Option<f64>]>>(&self, rows: &[R]) -> Vec<Vec<f64>> {
        rows.iter().map(|r| self.transform_row(r.as_ref())).collect()
    }
}
