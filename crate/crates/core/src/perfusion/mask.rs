//! Intensity-based brain mask: Otsu threshold, largest 6-connected
//! component, closing with the 6-neighbourhood and per-slice hole filling.

use std::collections::VecDeque;

use crate::volume::{Mask3D, Volume3D};
use crate::{Error, Result};

const BINS: usize = 256;

/// Otsu threshold over a 256-bin histogram spanning [min, max]. Voxels
/// strictly above the returned value are foreground. Ties in between-class
/// variance resolve to the lowest bin.
pub fn otsu_threshold(values: &[f64]) -> Result<f64> {
    let (lo, hi) = values
        .iter()
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if !(hi > lo) {
        return Err(Error::invalid("cannot threshold a constant volume"));
    }
    let width = (hi - lo) / BINS as f64;
    let mut hist = [0u64; BINS];
    for &v in values.iter().filter(|v| v.is_finite()) {
        let b = (((v - lo) / width) as usize).min(BINS - 1);
        hist[b] += 1;
    }
    let total: u64 = hist.iter().sum();
    let sum_all: f64 = hist.iter().enumerate().map(|(i, &c)| i as f64 * c as f64).sum();
    let mut w0 = 0u64;
    let mut sum0 = 0.0;
    let mut best = (0usize, -1.0f64);
    for (k, &c) in hist.iter().enumerate().take(BINS - 1) {
        w0 += c;
        sum0 += k as f64 * c as f64;
        let w1 = total - w0;
        if w0 == 0 || w1 == 0 {
            continue;
        }
        let m0 = sum0 / w0 as f64;
        let m1 = (sum_all - sum0) / w1 as f64;
        let between = w0 as f64 * w1 as f64 * (m0 - m1).powi(2);
        if between > best.1 {
            best = (k, between);
        }
    }
    Ok(lo + (best.0 + 1) as f64 * width)
}

fn neighbours(dims: [usize; 3], idx: usize) -> impl Iterator<Item = Option<usize>> {
    let [nx, ny, nz] = dims;
    let x = idx % nx;
    let y = (idx / nx) % ny;
    let z = idx / (nx * ny);
    let sxy = nx * ny;
    [
        (x > 0).then(|| idx - 1),
        (x + 1 < nx).then(|| idx + 1),
        (y > 0).then(|| idx - nx),
        (y + 1 < ny).then(|| idx + nx),
        (z > 0).then(|| idx - sxy),
        (z + 1 < nz).then(|| idx + sxy),
    ]
    .into_iter()
}

fn largest_component(dims: [usize; 3], fg: &[bool]) -> Vec<bool> {
    let mut comp = vec![u32::MAX; fg.len()];
    let mut best = (u32::MAX, 0usize);
    let mut next = 0u32;
    let mut queue = VecDeque::new();
    for start in 0..fg.len() {
        if !fg[start] || comp[start] != u32::MAX {
            continue;
        }
        let id = next;
        next += 1;
        comp[start] = id;
        queue.push_back(start);
        let mut size = 0usize;
        while let Some(i) = queue.pop_front() {
            size += 1;
            for n in neighbours(dims, i).flatten() {
                if fg[n] && comp[n] == u32::MAX {
                    comp[n] = id;
                    queue.push_back(n);
                }
            }
        }
        if size > best.1 {
            best = (id, size);
        }
    }
    comp.iter().map(|&c| c == best.0).collect()
}

/// Dilate then erode, as if the volume were padded with background. A padding
/// voxel's only in-grid face neighbour is the voxel it touches, so it is in
/// the dilation exactly when that voxel is in the input.
fn close(dims: [usize; 3], m: &[bool]) -> Vec<bool> {
    let dil: Vec<bool> = (0..m.len())
        .map(|i| m[i] || neighbours(dims, i).flatten().any(|n| m[n]))
        .collect();
    (0..m.len())
        .map(|i| dil[i] && neighbours(dims, i).all(|n| n.map_or(m[i], |n| dil[n])))
        .collect()
}

/// Fill background pockets not 4-connected to the slice border.
fn fill_holes_per_slice(dims: [usize; 3], m: &mut [bool]) {
    let [nx, ny, nz] = dims;
    let mut outside = vec![false; nx * ny];
    let mut queue = VecDeque::new();
    for z in 0..nz {
        let base = z * nx * ny;
        outside.iter_mut().for_each(|o| *o = false);
        for y in 0..ny {
            for x in 0..nx {
                let border = x == 0 || y == 0 || x + 1 == nx || y + 1 == ny;
                let i = x + nx * y;
                if border && !m[base + i] && !outside[i] {
                    outside[i] = true;
                    queue.push_back(i);
                }
            }
        }
        while let Some(i) = queue.pop_front() {
            let (x, y) = (i % nx, i / nx);
            let cand = [
                (x > 0).then(|| i - 1),
                (x + 1 < nx).then(|| i + 1),
                (y > 0).then(|| i - nx),
                (y + 1 < ny).then(|| i + nx),
            ];
            for n in cand.into_iter().flatten() {
                if !m[base + n] && !outside[n] {
                    outside[n] = true;
                    queue.push_back(n);
                }
            }
        }
        for i in 0..nx * ny {
            if !outside[i] {
                m[base + i] = true;
            }
        }
    }
}

/// Brain mask from the first timepoint of a DSC series.
pub fn brain_mask(first_timepoint: &Volume3D) -> Result<Mask3D> {
    let dims = first_timepoint.dims();
    let thr = otsu_threshold(first_timepoint.data())?;
    let fg: Vec<bool> = first_timepoint.data().iter().map(|&v| v > thr).collect();
    if !fg.iter().any(|&b| b) {
        return Err(Error::EmptyMask);
    }
    let mut m = close(dims, &largest_component(dims, &fg));
    fill_holes_per_slice(dims, &mut m);
    let mask = Mask3D::new(dims, m)?;
    if mask.count() == 0 {
        return Err(Error::EmptyMask);
    }
    Ok(mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Geometry;

    fn vol(dims: [usize; 3], f: impl Fn(usize, usize, usize) -> f64) -> Volume3D {
        let g = Geometry::with_spacing(dims, [1.0; 3]).unwrap();
        let mut data = vec![0.0; g.len()];
        for z in 0..dims[2] {
            for y in 0..dims[1] {
                for x in 0..dims[0] {
                    data[g.index(x, y, z)] = f(x, y, z);
                }
            }
        }
        Volume3D::new(g, data).unwrap()
    }

    fn inside(x: usize, y: usize, z: usize) -> bool {
        (2..10).contains(&x) && (2..9).contains(&y) && (1..5).contains(&z)
    }

    #[test]
    fn two_level_box_is_recovered_exactly() {
        let v = vol([12, 11, 6], |x, y, z| if inside(x, y, z) { 100.0 } else { 0.0 });
        let m = brain_mask(&v).unwrap();
        for (i, &b) in m.data().iter().enumerate() {
            let [x, y, z] = v.geometry().coords(i);
            assert_eq!(b, inside(x, y, z));
        }
    }

    #[test]
    fn constant_volume_errors() {
        let v = vol([4, 4, 4], |_, _, _| 5.0);
        assert!(brain_mask(&v).is_err());
    }

    #[test]
    fn count_invariant_under_scaling() {
        let v = vol([12, 11, 6], |x, y, z| {
            let base = if inside(x, y, z) { 80.0 } else { 3.0 };
            base + ((x * 7 + y * 3 + z * 11) % 13) as f64
        });
        let n = brain_mask(&v).unwrap().count();
        for c in [0.01, 3.0, 1234.5] {
            let s = v.with_data(v.data().iter().map(|x| x * c).collect()).unwrap();
            assert_eq!(brain_mask(&s).unwrap().count(), n, "scale {c}");
        }
    }

    #[test]
    fn small_specks_and_holes_are_cleaned() {
        let v = vol([12, 11, 6], |x, y, z| {
            if x == 0 && y == 0 && z == 0 {
                100.0 // detached speck
            } else if x == 5 && y == 5 && z == 2 {
                0.0 // interior hole
            } else if inside(x, y, z) {
                100.0
            } else {
                0.0
            }
        });
        let m = brain_mask(&v).unwrap();
        assert!(!m.data()[0]);
        assert!(m.data()[v.geometry().index(5, 5, 2)]);
    }
}
