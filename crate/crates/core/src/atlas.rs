//! Region tables, contralateral pairing and label volumes.

use std::collections::HashMap;
use std::io::Read;
use std::path::Path;

use nalgebra::{Matrix4, Vector4};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::volume::{Geometry, Mask3D};
use crate::{Error, Result};

/// Harvard-Oxford derived list: 56 regions per hemisphere plus the brainstem.
pub const DEFAULT_REGION_CSV: &str = include_str!("../data/regions_ho113.csv");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Hemisphere {
    #[serde(rename = "L")]
    Left,
    #[serde(rename = "R")]
    Right,
    #[serde(rename = "M")]
    Midline,
}

impl Hemisphere {
    fn parse(code: &str) -> Option<Self> {
        match code.trim() {
            "L" | "l" => Some(Hemisphere::Left),
            "R" | "r" => Some(Hemisphere::Right),
            "M" | "m" => Some(Hemisphere::Midline),
            _ => None,
        }
    }

    pub fn code(self) -> &'static str {
        match self {
            Hemisphere::Left => "L",
            Hemisphere::Right => "R",
            Hemisphere::Midline => "M",
        }
    }

    pub fn opposite(self) -> Self {
        match self {
            Hemisphere::Left => Hemisphere::Right,
            Hemisphere::Right => Hemisphere::Left,
            Hemisphere::Midline => Hemisphere::Midline,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub id: u32,
    pub name: String,
    pub hemisphere: Hemisphere,
}

impl Region {
    /// Name without a leading "Left "/"Right " token.
    pub fn base_name(&self) -> &str {
        base_name(&self.name)
    }
}

fn base_name(name: &str) -> &str {
    for prefix in ["left ", "right "] {
        if name.len() > prefix.len() && name[..prefix.len()].eq_ignore_ascii_case(prefix) {
            return &name[prefix.len()..];
        }
    }
    name
}

/// Lowercase identifier safe for column names: runs of non-alphanumerics
/// collapse to a single underscore.
pub fn slug(name: &str) -> String {
    let mut out = String::with_capacity(name.len());
    let mut pending = false;
    for c in name.chars() {
        if c.is_ascii_alphanumeric() {
            if pending && !out.is_empty() {
                out.push('_');
            }
            pending = false;
            out.push(c.to_ascii_lowercase());
        } else if c != '\'' {
            pending = true;
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegionTable {
    regions: Vec<Region>,
    by_id: HashMap<u32, usize>,
}

impl RegionTable {
    pub fn new(regions: Vec<Region>) -> Result<Self> {
        if regions.is_empty() {
            return Err(Error::invalid("region table is empty"));
        }
        let mut by_id = HashMap::new();
        let mut names = HashMap::new();
        for (i, r) in regions.iter().enumerate() {
            if r.id == 0 {
                return Err(Error::invalid(format!("region `{}` has id 0", r.name)));
            }
            if by_id.insert(r.id, i).is_some() {
                return Err(Error::invalid(format!("duplicate region id {}", r.id)));
            }
            if names.insert(r.name.to_ascii_lowercase(), i).is_some() {
                return Err(Error::invalid(format!("duplicate region name `{}`", r.name)));
            }
        }
        Ok(RegionTable { regions, by_id })
    }

    /// Parse `id,name,hemisphere` CSV. Errors carry the 1-based file line.
    pub fn from_reader<R: Read>(rdr: R) -> Result<Self> {
        let mut csv = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(rdr);
        let headers = csv.headers()?.clone();
        if headers.is_empty() {
            return Err(Error::Parse {
                line: 1,
                reason: "empty region table".into(),
            });
        }
        let cols: Vec<&str> = headers.iter().collect();
        if cols != ["id", "name", "hemisphere"] {
            return Err(Error::Parse {
                line: 1,
                reason: format!("expected header `id,name,hemisphere`, got `{}`", cols.join(",")),
            });
        }
        let mut regions: Vec<Region> = Vec::new();
        let mut ids = HashMap::new();
        let mut names = HashMap::new();
        for rec in csv.records() {
            let rec = rec?;
            let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
            let err = |reason: String| Error::Parse { line, reason };
            if rec.len() != 3 {
                return Err(err(format!("expected 3 fields, got {}", rec.len())));
            }
            let id: u32 = rec[0]
                .parse()
                .map_err(|_| err(format!("bad id `{}`", &rec[0])))?;
            if id == 0 {
                return Err(err("id 0 is reserved for background".into()));
            }
            let name = rec[1].to_string();
            if name.is_empty() {
                return Err(err("empty region name".into()));
            }
            let hemisphere = Hemisphere::parse(&rec[2])
                .ok_or_else(|| err(format!("bad hemisphere code `{}`", &rec[2])))?;
            if let Some(prev) = ids.insert(id, line) {
                return Err(err(format!("duplicate id {id} (first seen on line {prev})")));
            }
            if let Some(prev) = names.insert(name.to_ascii_lowercase(), line) {
                return Err(err(format!("duplicate name `{name}` (first seen on line {prev})")));
            }
            regions.push(Region {
                id,
                name,
                hemisphere,
            });
        }
        if regions.is_empty() {
            return Err(Error::Parse {
                line: 1,
                reason: "region table has no rows".into(),
            });
        }
        RegionTable::new(regions)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        RegionTable::from_reader(f)
    }

    pub fn default_ho113() -> Self {
        RegionTable::from_reader(DEFAULT_REGION_CSV.as_bytes()).expect("shipped region table is valid")
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        w.write_record(["id", "name", "hemisphere"]).unwrap();
        for r in &self.regions {
            w.write_record([r.id.to_string().as_str(), &r.name, r.hemisphere.code()])
                .unwrap();
        }
        String::from_utf8(w.into_inner().unwrap()).unwrap()
    }

    pub fn regions(&self) -> &[Region] {
        &self.regions
    }

    pub fn len(&self) -> usize {
        self.regions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.regions.is_empty()
    }

    pub fn get(&self, id: u32) -> Option<&Region> {
        self.by_id.get(&id).map(|&i| &self.regions[i])
    }

    pub fn position(&self, id: u32) -> Option<usize> {
        self.by_id.get(&id).copied()
    }

    pub fn contains(&self, id: u32) -> bool {
        self.by_id.contains_key(&id)
    }

    /// Ids whose base name starts with `prefix` (case-insensitive).
    pub fn ids_with_base_prefix(&self, prefix: &str) -> Vec<u32> {
        let p = prefix.to_ascii_lowercase();
        self.regions
            .iter()
            .filter(|r| r.base_name().to_ascii_lowercase().starts_with(&p))
            .map(|r| r.id)
            .collect()
    }

    pub fn id_by_name(&self, name: &str) -> Option<u32> {
        self.regions
            .iter()
            .find(|r| r.name.eq_ignore_ascii_case(name))
            .map(|r| r.id)
    }

    /// Default AIF search region: the cingulate gyrus, both hemispheres.
    pub fn cingulate_ids(&self) -> Vec<u32> {
        self.ids_with_base_prefix("cingulate gyrus")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionPair {
    pub left: u32,
    pub right: u32,
    pub base: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionPairing {
    pub pairs: Vec<RegionPair>,
    pub unpaired: Vec<u32>,
}

/// Match L and R entries by base name. Midline and unmatched entries are
/// reported as unpaired, in table order.
pub fn pair_regions(table: &RegionTable) -> RegionPairing {
    let mut rights: HashMap<String, u32> = HashMap::new();
    for r in table.regions() {
        if r.hemisphere == Hemisphere::Right {
            rights
                .entry(r.base_name().to_ascii_lowercase())
                .or_insert(r.id);
        }
    }
    let mut pairs = Vec::new();
    let mut used = HashMap::new();
    for r in table.regions() {
        if r.hemisphere != Hemisphere::Left {
            continue;
        }
        let key = r.base_name().to_ascii_lowercase();
        if let Some(&right) = rights.get(&key) {
            if used.contains_key(&right) {
                continue;
            }
            used.insert(right, ());
            used.insert(r.id, ());
            pairs.push(RegionPair {
                left: r.id,
                right,
                base: r.base_name().to_string(),
            });
        }
    }
    let unpaired = table
        .regions()
        .iter()
        .filter(|r| !used.contains_key(&r.id))
        .map(|r| r.id)
        .collect();
    RegionPairing { pairs, unpaired }
}

/// Integer parcellation on an image grid; 0 is background.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelVolume {
    geom: Geometry,
    data: Vec<u32>,
}

impl LabelVolume {
    pub fn new(geom: Geometry, data: Vec<u32>) -> Result<Self> {
        if data.len() != geom.len() {
            return Err(Error::invalid("label data length does not match dims"));
        }
        Ok(LabelVolume { geom, data })
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geom
    }

    pub fn dims(&self) -> [usize; 3] {
        self.geom.dims
    }

    pub fn data(&self) -> &[u32] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> u32 {
        self.data[self.geom.index(x, y, z)]
    }

    /// Every nonzero label must name a table entry.
    pub fn validate(&self, table: &RegionTable) -> Result<()> {
        let mut seen = std::collections::BTreeSet::new();
        for &l in &self.data {
            if l != 0 && !table.contains(l) && seen.insert(l) {
                return Err(Error::invalid(format!(
                    "label {l} does not appear in the region table"
                )));
            }
        }
        Ok(())
    }

    /// Labels outside the mask set to background.
    pub fn masked(&self, mask: &Mask3D) -> Result<LabelVolume> {
        mask.check_dims(self.geom.dims)?;
        let data = self
            .data
            .iter()
            .zip(mask.data())
            .map(|(&l, &m)| if m { l } else { 0 })
            .collect();
        LabelVolume::new(self.geom.clone(), data)
    }

    pub fn foreground(&self) -> Mask3D {
        Mask3D::new(self.geom.dims, self.data.iter().map(|&l| l != 0).collect()).unwrap()
    }

    /// Linear indices of every voxel carrying one of `ids`.
    pub fn voxels_in(&self, ids: &[u32]) -> Vec<usize> {
        self.data
            .iter()
            .enumerate()
            .filter_map(|(i, l)| ids.contains(l).then_some(i))
            .collect()
    }

    /// Voxel index lists per label (sorted ascending within each list).
    pub fn index_by_label(&self) -> HashMap<u32, Vec<usize>> {
        let mut out: HashMap<u32, Vec<usize>> = HashMap::new();
        for (i, &l) in self.data.iter().enumerate() {
            if l != 0 {
                out.entry(l).or_default().push(i);
            }
        }
        out
    }
}

/// Nearest-neighbour resampling of `labels` onto `target`.
///
/// `transform` maps label-space world coordinates (mm) to subject-space world
/// coordinates. Target voxels that land outside the label grid get 0.
pub fn resample_labels(
    labels: &LabelVolume,
    transform: &Matrix4<f64>,
    target: &Geometry,
) -> Result<LabelVolume> {
    let src_inv = labels
        .geom
        .affine
        .try_inverse()
        .ok_or(Error::SingularAffine)?;
    let tf_inv = transform.try_inverse().ok_or(Error::SingularAffine)?;
    let m = src_inv * tf_inv * target.affine;
    let [sx, sy, sz] = labels.geom.dims;
    let data: Vec<u32> = (0..target.len())
        .into_par_iter()
        .map(|o| {
            let [x, y, z] = target.coords(o);
            let p = m * Vector4::new(x as f64, y as f64, z as f64, 1.0);
            let idx = |v: f64, n: usize| -> Option<usize> {
                let r = (v + 0.5).floor();
                (r >= 0.0 && r < n as f64).then_some(r as usize)
            };
            match (idx(p[0], sx), idx(p[1], sy), idx(p[2], sz)) {
                (Some(i), Some(j), Some(k)) => labels.get(i, j, k),
                _ => 0,
            }
        })
        .collect();
    LabelVolume::new(target.clone(), data)
}

/// Parse a 16-number row-major JSON array into an affine.
pub fn affine_from_json(text: &str) -> Result<Matrix4<f64>> {
    let v: Vec<f64> = serde_json::from_str(text)?;
    if v.len() != 16 {
        return Err(Error::invalid(format!(
            "affine JSON must hold 16 numbers, got {}",
            v.len()
        )));
    }
    Ok(Matrix4::from_row_slice(&v))
}

fn split(start: usize, len: usize, parts: usize, i: usize) -> (usize, usize) {
    (start + len * i / parts, start + len * (i + 1) / parts)
}

fn block_of(offset: usize, len: usize, parts: usize) -> usize {
    // inverse of `split`: which part contains `offset`
    (0..parts)
        .find(|&i| {
            let (a, b) = split(0, len, parts, i);
            offset >= a && offset < b
        })
        .unwrap_or(parts - 1)
}

/// Procedural, left/right mirror-symmetric parcellation of a brain-shaped box.
///
/// Paired regions tile each hemisphere as a 2 × n × 4 block grid (x, y, z);
/// unpaired regions share a midline slab. Voxel `x` and `nx - 1 - x` always
/// carry contralateral labels. The box fills the grid apart from a thin
/// background margin, so `label > 0` is the brain.
pub fn synthetic_labels(geom: &Geometry, table: &RegionTable) -> Result<LabelVolume> {
    let [nx, ny, nz] = geom.dims;
    let pairing = pair_regions(table);
    let k = pairing.pairs.len();
    if k == 0 {
        return Err(Error::invalid("synthetic atlas needs at least one L/R pair"));
    }
    let mx = (nx / 16).max(1);
    let my = (ny / 16).max(1);
    let mz = usize::from(nz >= 6);
    let brain_x = nx.saturating_sub(2 * mx);
    let brain_y = ny.saturating_sub(2 * my);
    let brain_z = nz.saturating_sub(2 * mz);

    let mut mid = if pairing.unpaired.is_empty() {
        0
    } else {
        (brain_x / 14).max(2)
    };
    if (brain_x - mid.min(brain_x)) % 2 == 1 {
        mid += 1;
    }
    let bx = 2usize;
    let bz = brain_z.min(4);
    let half = brain_x.saturating_sub(mid) / 2;
    let by = k.div_ceil(bx * bz.max(1));
    if half < bx || brain_y < by || bz == 0 || brain_y < pairing.unpaired.len().max(1) {
        return Err(Error::invalid(format!(
            "grid {:?} too small for a {k}-pair synthetic atlas",
            geom.dims
        )));
    }

    let x_left = mx;
    let x_mid = mx + half;
    let x_right = x_mid + mid;
    let mut data = vec![0u32; geom.len()];
    for z in mz..mz + brain_z {
        let zb = block_of(z - mz, brain_z, bz);
        for y in my..my + brain_y {
            let yb = block_of(y - my, brain_y, by);
            for x in x_left..x_mid {
                let xb = block_of(x - x_left, half, bx);
                let r = (zb * by + yb) * bx + xb;
                let pair = &pairing.pairs[r.min(k - 1)];
                data[geom.index(x, y, z)] = pair.left;
                data[geom.index(nx - 1 - x, y, z)] = pair.right;
            }
            if mid > 0 {
                let u = block_of(y - my, brain_y, pairing.unpaired.len());
                for x in x_mid..x_right {
                    data[geom.index(x, y, z)] = pairing.unpaired[u];
                }
            }
        }
    }
    LabelVolume::new(geom.clone(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn default_table_has_113_regions() {
        let t = RegionTable::default_ho113();
        assert_eq!(t.len(), 113);
        let left = t.regions().iter().filter(|r| r.hemisphere == Hemisphere::Left).count();
        let mid = t.regions().iter().filter(|r| r.hemisphere == Hemisphere::Midline).count();
        assert_eq!((left, mid), (56, 1));
        assert_eq!(t.cingulate_ids().len(), 4);
    }

    #[test]
    fn default_pairing_has_56_pairs_and_brainstem() {
        let t = RegionTable::default_ho113();
        let p = pair_regions(&t);
        assert_eq!(p.pairs.len(), 56);
        assert_eq!(p.unpaired.len(), 1);
        assert_eq!(t.get(p.unpaired[0]).unwrap().name, "Brain-Stem");
    }

    #[test]
    fn duplicate_id_names_the_line() {
        let csv = "id,name,hemisphere\n1,Left A,L\n2,Right A,R\n1,Left B,L\n";
        match RegionTable::from_reader(csv.as_bytes()) {
            Err(Error::Parse { line, reason }) => {
                assert_eq!(line, 4);
                assert!(reason.contains("duplicate id"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bad_inputs_are_rejected() {
        assert!(RegionTable::from_reader("".as_bytes()).is_err());
        assert!(RegionTable::from_reader("id,name,hemisphere\n".as_bytes()).is_err());
        assert!(RegionTable::from_reader("id,name,hemisphere\n1,A,X\n".as_bytes()).is_err());
        assert!(RegionTable::from_reader("id,name,hemisphere\n1,A,L\n2,a,R\n".as_bytes()).is_err());
        assert!(RegionTable::from_reader("id,label,hemi\n1,A,L\n".as_bytes()).is_err());
    }

    #[test]
    fn pairing_examples() {
        let one = RegionTable::from_reader("id,name,hemisphere\n1,Left Lingual Gyrus,L\n".as_bytes()).unwrap();
        let p = pair_regions(&one);
        assert!(p.pairs.is_empty());
        assert_eq!(p.unpaired, vec![1]);

        let two = RegionTable::from_reader(
            "id,name,hemisphere\n1,Left Lingual Gyrus,L\n2,right lingual gyrus,R\n".as_bytes(),
        )
        .unwrap();
        let p = pair_regions(&two);
        assert_eq!(
            p.pairs,
            vec![RegionPair {
                left: 1,
                right: 2,
                base: "Lingual Gyrus".into()
            }]
        );
    }

    #[test]
    fn pairing_symmetric_under_hemisphere_swap() {
        let t = RegionTable::default_ho113();
        let swapped = RegionTable::new(
            t.regions()
                .iter()
                .map(|r| Region {
                    hemisphere: r.hemisphere.opposite(),
                    ..r.clone()
                })
                .collect(),
        )
        .unwrap();
        let set = |p: &RegionPairing| {
            let mut v: Vec<(u32, u32)> = p
                .pairs
                .iter()
                .map(|q| (q.left.min(q.right), q.left.max(q.right)))
                .collect();
            v.sort();
            v
        };
        assert_eq!(set(&pair_regions(&t)), set(&pair_regions(&swapped)));
    }

    #[test]
    fn slug_is_column_safe() {
        assert_eq!(
            slug("Left Inferior Frontal Gyrus, pars triangularis"),
            "left_inferior_frontal_gyrus_pars_triangularis"
        );
        assert_eq!(slug("Right Heschl's Gyrus"), "right_heschls_gyrus");
        assert_eq!(slug("Brain-Stem"), "brain_stem");
    }

    fn grid(dims: [usize; 3]) -> Geometry {
        Geometry::with_spacing(dims, [1.0; 3]).unwrap()
    }

    #[test]
    fn synthetic_atlas_covers_every_region_and_mirrors() {
        let t = RegionTable::default_ho113();
        for dims in [[64, 64, 10], [32, 32, 10]] {
            let g = grid(dims);
            let l = synthetic_labels(&g, &t).unwrap();
            l.validate(&t).unwrap();
            let by = l.index_by_label();
            assert_eq!(by.len(), 113, "dims {dims:?}");
            let pairing = pair_regions(&t);
            let partner: HashMap<u32, u32> = pairing
                .pairs
                .iter()
                .flat_map(|p| [(p.left, p.right), (p.right, p.left)])
                .collect();
            for z in 0..dims[2] {
                for y in 0..dims[1] {
                    for x in 0..dims[0] {
                        let a = l.get(x, y, z);
                        let b = l.get(dims[0] - 1 - x, y, z);
                        let expect = partner.get(&a).copied().unwrap_or(a);
                        assert_eq!(b, expect);
                    }
                }
            }
        }
    }

    #[test]
    fn identity_resample_is_identity() {
        let t = RegionTable::default_ho113();
        let g = grid([32, 32, 10]);
        let l = synthetic_labels(&g, &t).unwrap();
        let r = resample_labels(&l, &Matrix4::identity(), &g).unwrap();
        assert_eq!(r, l);
    }

    #[test]
    fn one_voxel_translation_shifts_labels() {
        let g = Geometry::with_spacing([4, 2, 1], [2.0, 1.0, 1.0]).unwrap();
        let l = LabelVolume::new(g.clone(), vec![1, 2, 3, 4, 5, 6, 7, 8]).unwrap();
        let mut tf = Matrix4::identity();
        tf[(0, 3)] = 2.0;
        let r = resample_labels(&l, &tf, &g).unwrap();
        assert_eq!(r.data(), &[0, 1, 2, 3, 0, 5, 6, 7]);
    }

    #[test]
    fn singular_transform_is_rejected() {
        let g = grid([2, 2, 2]);
        let l = LabelVolume::new(g.clone(), vec![1; 8]).unwrap();
        assert!(matches!(
            resample_labels(&l, &Matrix4::zeros(), &g),
            Err(Error::SingularAffine)
        ));
    }

    #[test]
    fn affine_json_is_row_major() {
        let a = affine_from_json("[1,0,0,5, 0,1,0,0, 0,0,1,0, 0,0,0,1]").unwrap();
        assert_eq!(a[(0, 3)], 5.0);
        assert!(affine_from_json("[1,2,3]").is_err());
    }

    proptest! {
        #[test]
        fn resampling_keeps_vocabulary_and_is_deterministic(
            shift in prop::array::uniform3(-3.0f64..3.0),
            labels in prop::collection::vec(0u32..6, 24),
        ) {
            let g = grid([4, 3, 2]);
            let l = LabelVolume::new(g.clone(), labels).unwrap();
            let mut tf = Matrix4::identity();
            for k in 0..3 {
                tf[(k, 3)] = shift[k];
            }
            let a = resample_labels(&l, &tf, &g).unwrap();
            prop_assert_eq!(&a, &resample_labels(&l, &tf, &g).unwrap());
            let vocab: std::collections::BTreeSet<u32> = l.data().iter().copied().chain([0]).collect();
            prop_assert!(a.data().iter().all(|v| vocab.contains(v)));
        }
    }
}
