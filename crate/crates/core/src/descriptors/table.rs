use std::collections::HashSet;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{RegionStats, Stat};
use crate::atlas::{slug, LabelVolume, RegionPairing, RegionTable};
use crate::perfusion::PerfusionMaps;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MapKind {
    Cbf,
    Cbv,
    Mtt,
    Tmax,
}

impl MapKind {
    pub const ALL: [MapKind; 4] = [MapKind::Cbf, MapKind::Cbv, MapKind::Mtt, MapKind::Tmax];

    pub fn name(self) -> &'static str {
        PerfusionMaps::NAMES[self as usize]
    }

    pub fn from_name(s: &str) -> Option<MapKind> {
        MapKind::ALL.into_iter().find(|m| m.name() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Scope {
    /// Slug of the region name, e.g. `left_lingual_gyrus`.
    Region(String),
    /// Slug of the pair's base name, e.g. `lingual_gyrus`.
    Asymmetry(String),
}

/// Parsed `{map}_{stat}_{region}` or `{map}_{stat}_asym_{base}` column name.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct FeatureName {
    pub map: MapKind,
    pub stat: Stat,
    pub scope: Scope,
}

impl FeatureName {
    pub fn parse(name: &str) -> Option<FeatureName> {
        let mut it = name.splitn(3, '_');
        let map = MapKind::from_name(it.next()?)?;
        let stat = Stat::from_name(it.next()?)?;
        let rest = it.next().filter(|r| !r.is_empty())?;
        let scope = match rest.strip_prefix("asym_") {
            Some(base) if !base.is_empty() => Scope::Asymmetry(base.to_string()),
            _ => Scope::Region(rest.to_string()),
        };
        Some(FeatureName { map, stat, scope })
    }

    pub fn is_asymmetry(&self) -> bool {
        matches!(self.scope, Scope::Asymmetry(_))
    }
}

impl fmt::Display for FeatureName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.scope {
            Scope::Region(r) => write!(f, "{}_{}_{}", self.map.name(), self.stat.name(), r),
            Scope::Asymmetry(b) => write!(f, "{}_{}_asym_{}", self.map.name(), self.stat.name(), b),
        }
    }
}

/// Regional column names in canonical order: map, then statistic, then region
/// in table order.
pub fn regional_feature_names(table: &RegionTable) -> Vec<String> {
    let mut out = Vec::with_capacity(28 * table.len());
    for m in MapKind::ALL {
        for s in Stat::ALL {
            for r in table.regions() {
                out.push(format!("{}_{}_{}", m.name(), s.name(), slug(&r.name)));
            }
        }
    }
    out
}

pub fn asymmetry_feature_names(pairing: &RegionPairing) -> Vec<String> {
    let mut out = Vec::with_capacity(28 * pairing.pairs.len());
    for m in MapKind::ALL {
        for s in Stat::ALL {
            for p in &pairing.pairs {
                out.push(format!("{}_{}_asym_{}", m.name(), s.name(), slug(&p.base)));
            }
        }
    }
    out
}

/// Regional PMDs for one subject: 28 values per region, canonical order.
pub fn extract_pmds(maps: &PerfusionMaps, labels: &LabelVolume, table: &RegionTable) -> Result<Vec<Option<f64>>> {
    let dims = maps.cbf.dims();
    if labels.dims() != dims {
        return Err(Error::invalid("label grid differs from the perfusion maps"));
    }
    labels.validate(table)?;
    let index = labels.index_by_label();
    let empty = Vec::new();
    let nr = table.len();
    let jobs: Vec<(usize, usize)> = (0..4).flat_map(|m| (0..nr).map(move |r| (m, r))).collect();
    let stats: Vec<RegionStats> = jobs
        .par_iter()
        .map(|&(m, r)| {
            let map = maps.maps()[m].data();
            let vox = index.get(&table.regions()[r].id).unwrap_or(&empty);
            let values: Vec<f64> = vox.iter().map(|&i| map[i]).collect();
            RegionStats::from_values(&values)
        })
        .collect();
    let mut row = vec![None; 28 * nr];
    for (&(m, r), st) in jobs.iter().zip(&stats) {
        for (s, v) in st.to_array().into_iter().enumerate() {
            row[(m * 7 + s) * nr + r] = v;
        }
    }
    Ok(row)
}

/// `|left - right|` for every (map, stat, pair) of a regional row.
pub fn asymmetry_features(
    row: &[Option<f64>],
    table: &RegionTable,
    pairing: &RegionPairing,
) -> Result<Vec<Option<f64>>> {
    let nr = table.len();
    if row.len() != 28 * nr {
        return Err(Error::invalid(format!(
            "regional row has {} values, expected {}",
            row.len(),
            28 * nr
        )));
    }
    let pos: Vec<(usize, usize)> = pairing
        .pairs
        .iter()
        .map(|p| match (table.position(p.left), table.position(p.right)) {
            (Some(l), Some(r)) => Ok((l, r)),
            _ => Err(Error::invalid(format!("pair {} is not in the region table", p.base))),
        })
        .collect::<Result<_>>()?;
    let mut out = Vec::with_capacity(28 * pos.len());
    for family in 0..28 {
        let base = family * nr;
        for &(l, r) in &pos {
            out.push(match (row[base + l], row[base + r]) {
                (Some(a), Some(b)) => Some((a - b).abs()),
                _ => None,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassLabel {
    Stroke,
    Seizure,
}

impl ClassLabel {
    pub fn name(self) -> &'static str {
        match self {
            ClassLabel::Stroke => "stroke",
            ClassLabel::Seizure => "seizure",
        }
    }

    /// Stroke is the positive class.
    pub fn is_positive(self) -> bool {
        self == ClassLabel::Stroke
    }
}

impl FromStr for ClassLabel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "stroke" => Ok(ClassLabel::Stroke),
            "seizure" => Ok(ClassLabel::Seizure),
            other => Err(Error::invalid(format!("unknown class label {other:?}"))),
        }
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Subjects x features, missing values as `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PmdTable {
    pub subjects: Vec<String>,
    pub labels: Vec<ClassLabel>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Option<f64>>>,
}

/// Shortest round-trip decimal form; empty for missing.
pub(crate) fn fmt_value(v: Option<f64>) -> String {
    v.map(|x| format!("{x:?}")).unwrap_or_default()
}

impl PmdTable {
    pub fn new(
        subjects: Vec<String>,
        labels: Vec<ClassLabel>,
        columns: Vec<String>,
        rows: Vec<Vec<Option<f64>>>,
    ) -> Result<Self> {
        if subjects.len() != labels.len() || subjects.len() != rows.len() {
            return Err(Error::invalid("subject, label and row counts differ"));
        }
        if let Some(r) = rows.iter().position(|r| r.len() != columns.len()) {
            return Err(Error::invalid(format!(
                "row {r} has {} values for {} columns",
                rows[r].len(),
                columns.len()
            )));
        }
        let mut seen = HashSet::new();
        if let Some(c) = columns.iter().find(|c| !seen.insert(c.as_str())) {
            return Err(Error::invalid(format!("duplicate column {c}")));
        }
        Ok(Self { subjects, labels, columns, rows })
    }

    pub fn n_subjects(&self) -> usize {
        self.subjects.len()
    }

    pub fn n_features(&self) -> usize {
        self.columns.len()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn column(&self, j: usize) -> Vec<Option<f64>> {
        self.rows.iter().map(|r| r[j]).collect()
    }

    pub fn class_counts(&self) -> (usize, usize) {
        let pos = self.labels.iter().filter(|l| l.is_positive()).count();
        (pos, self.labels.len() - pos)
    }

    /// Keep the columns for which `keep(name)` is true, in order.
    pub fn select_columns(&self, keep: impl Fn(&str) -> bool) -> PmdTable {
        let idx: Vec<usize> = (0..self.columns.len()).filter(|&j| keep(&self.columns[j])).collect();
        PmdTable {
            subjects: self.subjects.clone(),
            labels: self.labels.clone(),
            columns: idx.iter().map(|&j| self.columns[j].clone()).collect(),
            rows: self.rows.iter().map(|r| idx.iter().map(|&j| r[j]).collect()).collect(),
        }
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let mut header = vec!["subject".to_string(), "label".to_string()];
        header.extend(self.columns.iter().cloned());
        wtr.write_record(&header)?;
        for ((s, l), row) in self.subjects.iter().zip(&self.labels).zip(&self.rows) {
            let mut rec = vec![s.clone(), l.name().to_string()];
            rec.extend(row.iter().map(|&v| fmt_value(v)));
            wtr.write_record(&rec)?;
        }
        wtr.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("in-memory write");
        String::from_utf8(buf).expect("utf-8 csv")
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
        let header = rdr.headers()?.clone();
        if header.len() < 2 || &header[0] != "subject" || &header[1] != "label" {
            return Err(Error::Parse { line: 1, reason: "header must start with subject,label".into() });
        }
        let columns: Vec<String> = header.iter().skip(2).map(str::to_string).collect();
        let (mut subjects, mut labels, mut rows) = (Vec::new(), Vec::new(), Vec::new());
        for (i, rec) in rdr.records().enumerate() {
            let line = i + 2;
            let rec = rec?;
            if rec.len() != header.len() {
                return Err(Error::Parse { line, reason: format!("expected {} fields", header.len()) });
            }
            subjects.push(rec[0].to_string());
            labels.push(rec[1].parse().map_err(|e: Error| Error::Parse { line, reason: e.to_string() })?);
            let row = rec
                .iter()
                .skip(2)
                .map(|f| {
                    let f = f.trim();
                    if f.is_empty() {
                        Ok(None)
                    } else {
                        f.parse::<f64>()
                            .map(Some)
                            .map_err(|_| Error::Parse { line, reason: format!("bad number {f:?}") })
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push(row);
        }
        PmdTable::new(subjects, labels, columns, rows)
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        let p = path.as_ref();
        let f = std::fs::File::open(p).map_err(|e| Error::io(p, e))?;
        Self::read_csv(std::io::BufReader::new(f))
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let p = path.as_ref();
        let f = std::fs::File::create(p).map_err(|e| Error::io(p, e))?;
        self.write_csv(std::io::BufWriter::new(f))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let t: PmdTable = serde_json::from_str(s)?;
        PmdTable::new(t.subjects, t.labels, t.columns, t.rows)
    }
}
