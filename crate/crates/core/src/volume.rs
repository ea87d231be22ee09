//! In-memory image model shared by every stage of the pipeline.
//!
//! Voxel data is stored x-fastest (NIfTI order). 4D series append time as the
//! slowest axis, so timepoint `t` occupies one contiguous block of
//! `nx * ny * nz` values.

use nalgebra::Matrix4;

use crate::{Error, Result};

/// Grid shape, voxel size (mm) and voxel→world transform.
#[derive(Debug, Clone, PartialEq)]
pub struct Geometry {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub affine: Matrix4<f64>,
}

impl Geometry {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], affine: Matrix4<f64>) -> Result<Self> {
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::invalid(format!("dims must be >= 1, got {dims:?}")));
        }
        if spacing.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::invalid(format!(
                "spacing must be positive, got {spacing:?}"
            )));
        }
        let last = affine.row(3);
        if last[0] != 0.0 || last[1] != 0.0 || last[2] != 0.0 || last[3] != 1.0 {
            return Err(Error::invalid("affine last row must be (0, 0, 0, 1)"));
        }
        Ok(Geometry {
            dims,
            spacing,
            affine,
        })
    }

    /// Geometry with a diagonal affine built from the spacing.
    pub fn with_spacing(dims: [usize; 3], spacing: [f64; 3]) -> Result<Self> {
        let affine = Matrix4::new(
            spacing[0], 0.0, 0.0, 0.0, //
            0.0, spacing[1], 0.0, 0.0, //
            0.0, 0.0, spacing[2], 0.0, //
            0.0, 0.0, 0.0, 1.0,
        );
        Geometry::new(dims, spacing, affine)
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let nx = self.dims[0];
        let ny = self.dims[1];
        [idx % nx, (idx / nx) % ny, idx / (nx * ny)]
    }

    /// World coordinate (mm) of a voxel centre.
    pub fn world(&self, voxel: [f64; 3]) -> [f64; 3] {
        let v = self.affine * nalgebra::Vector4::new(voxel[0], voxel[1], voxel[2], 1.0);
        [v[0], v[1], v[2]]
    }

    pub fn affine(&self) -> &Matrix4<f64> {
        &self.affine
    }

    pub fn same_grid(&self, other: &Geometry) -> bool {
        self.dims == other.dims
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Volume3D {
    geom: Geometry,
    data: Vec<f64>,
}

impl Volume3D {
    pub fn new(geom: Geometry, data: Vec<f64>) -> Result<Self> {
        if data.len() != geom.len() {
            return Err(Error::invalid(format!(
                "data length {} does not match dims {:?}",
                data.len(),
                geom.dims
            )));
        }
        Ok(Volume3D { geom, data })
    }

    pub fn filled(geom: Geometry, value: f64) -> Self {
        let n = geom.len();
        Volume3D {
            geom,
            data: vec![value; n],
        }
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geom
    }

    pub fn dims(&self) -> [usize; 3] {
        self.geom.dims
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> f64 {
        self.data[self.geom.index(x, y, z)]
    }

    /// Same geometry, new values.
    pub fn with_data(&self, data: Vec<f64>) -> Result<Volume3D> {
        Volume3D::new(self.geom.clone(), data)
    }
}

/// DSC time series. `tr` and `te` are in seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume4D {
    geom: Geometry,
    nt: usize,
    tr: f64,
    te: f64,
    data: Vec<f64>,
}

impl Volume4D {
    pub fn new(geom: Geometry, nt: usize, tr: f64, te: f64, data: Vec<f64>) -> Result<Self> {
        if nt < 2 {
            return Err(Error::invalid(format!("4D volume needs nt >= 2, got {nt}")));
        }
        if !(tr > 0.0) || !(te > 0.0) {
            return Err(Error::invalid(format!(
                "tr and te must be positive, got tr={tr} te={te}"
            )));
        }
        if data.len() != geom.len() * nt {
            return Err(Error::invalid(format!(
                "data length {} does not match dims {:?} x {nt}",
                data.len(),
                geom.dims
            )));
        }
        Ok(Volume4D {
            geom,
            nt,
            tr,
            te,
            data,
        })
    }

    /// Stack 3D frames (all sharing a grid) into a series.
    pub fn stack(frames: &[Volume3D], tr: f64, te: f64) -> Result<Self> {
        let first = frames
            .first()
            .ok_or_else(|| Error::invalid("cannot stack zero frames"))?;
        let mut data = Vec::with_capacity(first.data.len() * frames.len());
        for f in frames {
            if f.geom.dims != first.geom.dims {
                return Err(Error::invalid("frames have different dims"));
            }
            data.extend_from_slice(&f.data);
        }
        Volume4D::new(first.geom.clone(), frames.len(), tr, te, data)
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geom
    }

    pub fn dims(&self) -> [usize; 4] {
        let [nx, ny, nz] = self.geom.dims;
        [nx, ny, nz, self.nt]
    }

    pub fn nt(&self) -> usize {
        self.nt
    }

    pub fn tr(&self) -> f64 {
        self.tr
    }

    pub fn te(&self) -> f64 {
        self.te
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn n_voxels(&self) -> usize {
        self.geom.len()
    }

    /// Signal of voxel `idx` at time `t`.
    #[inline]
    pub fn at(&self, idx: usize, t: usize) -> f64 {
        self.data[idx + t * self.geom.len()]
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        let n = self.geom.len();
        &self.data[t * n..(t + 1) * n]
    }

    pub fn time_course(&self, idx: usize) -> Vec<f64> {
        (0..self.nt).map(|t| self.at(idx, t)).collect()
    }

    pub fn extract_timepoint(&self, t: usize) -> Result<Volume3D> {
        if t >= self.nt {
            return Err(Error::Index {
                index: t,
                len: self.nt,
            });
        }
        Volume3D::new(self.geom.clone(), self.frame(t).to_vec())
    }
}

/// Boolean voxel mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask3D {
    dims: [usize; 3],
    data: Vec<bool>,
}

impl Mask3D {
    pub fn new(dims: [usize; 3], data: Vec<bool>) -> Result<Self> {
        if data.len() != dims.iter().product::<usize>() {
            return Err(Error::invalid("mask length does not match dims"));
        }
        Ok(Mask3D { dims, data })
    }

    pub fn full(dims: [usize; 3]) -> Self {
        Mask3D {
            dims,
            data: vec![true; dims.iter().product()],
        }
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.data
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| b.then_some(i))
    }

    pub fn check_dims(&self, dims: [usize; 3]) -> Result<()> {
        if self.dims != dims {
            return Err(Error::invalid(format!(
                "mask dims {:?} do not match volume dims {dims:?}",
                self.dims
            )));
        }
        Ok(())
    }
}

/// Axis permutation and flips that bring a grid to the nearest RAS
/// orientation.
#[derive(Debug, Clone, PartialEq)]
pub struct Reorientation {
    /// `source_axis[i]` is the input voxel axis feeding output axis `i`.
    pub source_axis: [usize; 3],
    pub flip: [bool; 3],
    in_dims: [usize; 3],
    target: Geometry,
}

impl Reorientation {
    pub fn for_geometry(geom: &Geometry) -> Result<Self> {
        let rot = geom.affine.fixed_view::<3, 3>(0, 0).into_owned();
        let scale: f64 = (0..3).map(|j| rot.column(j).norm()).product();
        if !(scale > 0.0) || rot.determinant().abs() <= 1e-12 * scale {
            return Err(Error::SingularAffine);
        }
        // Normalise columns so the choice depends on direction only.
        let mut dir = rot;
        for j in 0..3 {
            let n = dir.column(j).norm();
            dir.column_mut(j).scale_mut(1.0 / n);
        }

        let mut row_used = [false; 3];
        let mut col_used = [false; 3];
        let mut source_axis = [0usize; 3];
        let mut flip = [false; 3];
        for _ in 0..3 {
            let mut best = (0usize, 0usize, -1.0f64);
            for i in 0..3 {
                if row_used[i] {
                    continue;
                }
                for j in 0..3 {
                    if col_used[j] {
                        continue;
                    }
                    let v = dir[(i, j)].abs();
                    if v > best.2 {
                        best = (i, j, v);
                    }
                }
            }
            let (i, j, _) = best;
            row_used[i] = true;
            col_used[j] = true;
            source_axis[i] = j;
            flip[i] = dir[(i, j)] < 0.0;
        }

        let in_dims = geom.dims;
        let dims = [
            in_dims[source_axis[0]],
            in_dims[source_axis[1]],
            in_dims[source_axis[2]],
        ];
        let spacing = [
            geom.spacing[source_axis[0]],
            geom.spacing[source_axis[1]],
            geom.spacing[source_axis[2]],
        ];
        // Output voxel -> input voxel.
        let mut t = Matrix4::<f64>::zeros();
        t[(3, 3)] = 1.0;
        for i in 0..3 {
            let j = source_axis[i];
            if flip[i] {
                t[(j, i)] = -1.0;
                t[(j, 3)] = (in_dims[j] - 1) as f64;
            } else {
                t[(j, i)] = 1.0;
            }
        }
        let target = Geometry::new(dims, spacing, geom.affine * t)?;
        Ok(Reorientation {
            source_axis,
            flip,
            in_dims,
            target,
        })
    }

    pub fn is_identity(&self) -> bool {
        self.source_axis == [0, 1, 2] && self.flip == [false; 3]
    }

    pub fn target(&self) -> &Geometry {
        &self.target
    }

    /// Input linear index for every output linear index.
    pub fn index_map(&self) -> Vec<usize> {
        let out = &self.target;
        let [inx, iny, _] = self.in_dims;
        (0..out.len())
            .map(|o| {
                let oc = out.coords(o);
                let mut ic = [0usize; 3];
                for i in 0..3 {
                    let j = self.source_axis[i];
                    ic[j] = if self.flip[i] {
                        self.in_dims[j] - 1 - oc[i]
                    } else {
                        oc[i]
                    };
                }
                ic[0] + inx * (ic[1] + iny * ic[2])
            })
            .collect()
    }

    pub fn apply<T: Copy>(&self, data: &[T]) -> Vec<T> {
        self.index_map().into_iter().map(|i| data[i]).collect()
    }
}

/// Reorient a 3D volume to the nearest RAS axis order; world coordinates of
/// every voxel are preserved.
pub fn canonicalize(v: &Volume3D) -> Result<Volume3D> {
    let r = Reorientation::for_geometry(&v.geom)?;
    if r.is_identity() {
        return Ok(v.clone());
    }
    Volume3D::new(r.target.clone(), r.apply(&v.data))
}

pub fn canonicalize_4d(v: &Volume4D) -> Result<Volume4D> {
    let r = Reorientation::for_geometry(&v.geom)?;
    if r.is_identity() {
        return Ok(v.clone());
    }
    let map = r.index_map();
    let mut data = Vec::with_capacity(v.data.len());
    for t in 0..v.nt {
        let frame = v.frame(t);
        data.extend(map.iter().map(|&i| frame[i]));
    }
    Volume4D::new(r.target.clone(), v.nt, v.tr, v.te, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ramp(dims: [usize; 3]) -> Volume3D {
        let g = Geometry::with_spacing(dims, [1.0, 2.0, 3.0]).unwrap();
        let n = g.len();
        Volume3D::new(g, (0..n).map(|i| i as f64).collect()).unwrap()
    }

    #[test]
    fn geometry_rejects_bad_inputs() {
        assert!(Geometry::with_spacing([0, 1, 1], [1.0; 3]).is_err());
        assert!(Geometry::with_spacing([1, 1, 1], [1.0, 0.0, 1.0]).is_err());
        let mut a = Matrix4::identity();
        a[(3, 0)] = 1.0;
        assert!(Geometry::new([1, 1, 1], [1.0; 3], a).is_err());
    }

    #[test]
    fn extract_and_restack() {
        let g = Geometry::with_spacing([3, 2, 2], [1.0; 3]).unwrap();
        let nt = 4;
        let data: Vec<f64> = (0..g.len() * nt).map(|i| i as f64 * 0.5).collect();
        let v = Volume4D::new(g, nt, 1.5, 0.03, data).unwrap();
        let frames: Vec<_> = (0..nt).map(|t| v.extract_timepoint(t).unwrap()).collect();
        let back = Volume4D::stack(&frames, 1.5, 0.03).unwrap();
        assert_eq!(back, v);
        assert!(matches!(
            v.extract_timepoint(nt),
            Err(Error::Index { index: 4, len: 4 })
        ));
    }

    #[test]
    fn ras_volume_is_unchanged() {
        let v = ramp([4, 3, 2]);
        assert_eq!(canonicalize(&v).unwrap(), v);
    }

    #[test]
    fn x_flip_is_undone() {
        let v = ramp([4, 3, 2]);
        let mut a = *v.geometry().affine();
        a[(0, 0)] = -1.0;
        a[(0, 3)] = 3.0;
        let g = Geometry::new(v.dims(), [1.0, 2.0, 3.0], a).unwrap();
        let flipped = Volume3D::new(g, v.data().to_vec()).unwrap();
        let c = canonicalize(&flipped).unwrap();
        assert_eq!(c.geometry().affine()[(0, 0)], 1.0);
        // data reversed along x
        assert_eq!(c.get(0, 0, 0), flipped.get(3, 0, 0));
        assert_eq!(c.get(3, 2, 1), flipped.get(0, 2, 1));
        assert_eq!(canonicalize(&c).unwrap(), c);
    }

    #[test]
    fn singular_affine_is_rejected() {
        let mut a = Matrix4::identity();
        a[(2, 2)] = 0.0;
        let g = Geometry::new([2, 2, 2], [1.0; 3], a).unwrap();
        let v = Volume3D::filled(g, 0.0);
        assert!(matches!(canonicalize(&v), Err(Error::SingularAffine)));
    }

    /// Every signed axis permutation: 6 permutations × 8 sign patterns.
    fn orientations() -> Vec<([usize; 3], [f64; 3])> {
        let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
        let mut out = Vec::new();
        for p in perms {
            for bits in 0..8 {
                let s = [0, 1, 2].map(|k| if bits >> k & 1 == 1 { -1.0 } else { 1.0 });
                out.push((p, s));
            }
        }
        out
    }

    fn oriented(dims: [usize; 3], spacing: [f64; 3], perm: [usize; 3], sign: [f64; 3], shift: [f64; 3]) -> Volume3D {
        // voxel axis j runs along world axis perm[j]
        let mut a = Matrix4::<f64>::identity();
        for j in 0..3 {
            a[(j, j)] = 0.0;
        }
        for j in 0..3 {
            a[(perm[j], j)] = sign[j] * spacing[j];
            a[(j, 3)] = shift[j];
        }
        let g = Geometry::new(dims, spacing, a).unwrap();
        let n = g.len();
        Volume3D::new(g, (0..n).map(|i| i as f64).collect()).unwrap()
    }

    #[test]
    fn all_48_orientations_reach_ras() {
        let dims = [3, 4, 5];
        let spacing = [1.0, 2.0, 3.0];
        let os = orientations();
        assert_eq!(os.len(), 48);
        for (perm, sign) in os {
            let v = oriented(dims, spacing, perm, sign, [5.0, -7.0, 11.0]);
            let c = canonicalize(&v).unwrap();
            let a = c.geometry().affine();
            for i in 0..3 {
                for j in 0..3 {
                    if i == j {
                        assert!(a[(i, j)] > 0.0, "{perm:?} {sign:?}");
                    } else {
                        assert_eq!(a[(i, j)], 0.0);
                    }
                }
            }
            assert_eq!(canonicalize(&c).unwrap(), c);
        }
    }

    proptest! {
        #[test]
        fn canonicalize_preserves_world_coordinates(
            o in 0usize..48,
            dims in prop::array::uniform3(1usize..5),
            spacing in prop::array::uniform3(0.5f64..3.0),
            shift in prop::array::uniform3(-50.0f64..50.0),
        ) {
            let (perm, sign) = orientations()[o];
            let v = oriented(dims, spacing, perm, sign, shift);
            let c = canonicalize(&v).unwrap();
            prop_assert_eq!(canonicalize(&c).unwrap(), c.clone());
            let mut seen = vec![false; v.data().len()];
            for idx in 0..c.data().len() {
                // the ramp value names the source voxel
                let src = c.data()[idx] as usize;
                prop_assert!(!seen[src]);
                seen[src] = true;
                let vc = c.geometry().coords(idx).map(|x| x as f64);
                let vs = v.geometry().coords(src).map(|x| x as f64);
                let (wc, ws) = (c.geometry().world(vc), v.geometry().world(vs));
                for k in 0..3 {
                    prop_assert!((wc[k] - ws[k]).abs() < 1e-9);
                }
            }
        }
    }
}
