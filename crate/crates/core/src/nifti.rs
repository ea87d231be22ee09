//! Minimal single-file NIfTI-1 reader and writer.
//!
//! Supported: `n+1` single files and `ni1` header/image pairs, datatypes
//! uint8, int16, int32, float32 and float64, either byte order on read. Files
//! are always written little-endian with `vox_offset = 352`. Echo time does not
//! fit in the header and travels in a `<stem>.json` sidecar
//! (`EchoTime`, `RepetitionTime`, seconds).

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix4, Quaternion, UnitQuaternion};
use serde::{Deserialize, Serialize};

use crate::atlas::LabelVolume;
use crate::volume::{Geometry, Mask3D, Volume3D, Volume4D};
use crate::{Error, Result};

pub const HEADER_SIZE: usize = 348;
pub const VOX_OFFSET: usize = 352;
pub const DEFAULT_TR: f64 = 1.5;
pub const DEFAULT_TE: f64 = 0.030;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Datatype {
    U8,
    I16,
    I32,
    F32,
    F64,
}

impl Datatype {
    fn from_code(code: i16) -> Result<Self> {
        Ok(match code {
            2 => Datatype::U8,
            4 => Datatype::I16,
            8 => Datatype::I32,
            16 => Datatype::F32,
            64 => Datatype::F64,
            other => {
                return Err(Error::Unsupported(format!("NIfTI datatype code {other}")));
            }
        })
    }

    fn code(self) -> i16 {
        match self {
            Datatype::U8 => 2,
            Datatype::I16 => 4,
            Datatype::I32 => 8,
            Datatype::F32 => 16,
            Datatype::F64 => 64,
        }
    }

    pub fn size(self) -> usize {
        match self {
            Datatype::U8 => 1,
            Datatype::I16 => 2,
            Datatype::I32 | Datatype::F32 => 4,
            Datatype::F64 => 8,
        }
    }
}

/// Either kind of image a `.nii` file can hold.
#[derive(Debug, Clone, PartialEq)]
pub enum NiftiImage {
    Volume3(Volume3D),
    Volume4(Volume4D),
}

impl NiftiImage {
    pub fn into_3d(self) -> Result<Volume3D> {
        match self {
            NiftiImage::Volume3(v) => Ok(v),
            NiftiImage::Volume4(_) => Err(Error::invalid("expected a 3D image, found 4D")),
        }
    }

    pub fn into_4d(self) -> Result<Volume4D> {
        match self {
            NiftiImage::Volume4(v) => Ok(v),
            NiftiImage::Volume3(_) => Err(Error::invalid("expected a 4D image, found 3D")),
        }
    }
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(rename_all = "PascalCase")]
struct Sidecar {
    #[serde(skip_serializing_if = "Option::is_none")]
    echo_time: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    repetition_time: Option<f64>,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

struct HeaderReader<'a> {
    buf: &'a [u8],
    big_endian: bool,
}

impl HeaderReader<'_> {
    fn bytes<const N: usize>(&self, off: usize) -> [u8; N] {
        let mut b = [0u8; N];
        b.copy_from_slice(&self.buf[off..off + N]);
        if self.big_endian {
            b.reverse();
        }
        b
    }

    fn i16(&self, off: usize) -> i16 {
        i16::from_le_bytes(self.bytes(off))
    }

    fn i32(&self, off: usize) -> i32 {
        i32::from_le_bytes(self.bytes(off))
    }

    fn f32(&self, off: usize) -> f32 {
        f32::from_le_bytes(self.bytes(off))
    }
}

fn format_err(field: &'static str, reason: impl Into<String>) -> Error {
    Error::Format {
        field,
        reason: reason.into(),
    }
}

struct Header {
    big_endian: bool,
    ndim: usize,
    dims: [usize; 4],
    datatype: Datatype,
    spacing: [f64; 3],
    tr: Option<f64>,
    vox_offset: usize,
    slope: f64,
    inter: f64,
    affine: Matrix4<f64>,
    two_file: bool,
}

fn parse_header(buf: &[u8]) -> Result<Header> {
    if buf.len() < HEADER_SIZE {
        return Err(format_err(
            "sizeof_hdr",
            format!("file has {} bytes, need at least {HEADER_SIZE}", buf.len()),
        ));
    }
    let le_dim0 = i16::from_le_bytes([buf[40], buf[41]]);
    let big_endian = !(1..=7).contains(&le_dim0);
    let h = HeaderReader { buf, big_endian };

    if h.i32(0) != HEADER_SIZE as i32 {
        return Err(format_err("sizeof_hdr", format!("expected 348, got {}", h.i32(0))));
    }
    let magic = &buf[344..348];
    let two_file = match magic {
        b"n+1\0" => false,
        b"ni1\0" => true,
        _ => return Err(format_err("magic", format!("unrecognised magic {magic:?}"))),
    };

    let ndim = h.i16(40);
    if ndim != 3 && ndim != 4 {
        return Err(format_err("dim[0]", format!("expected 3 or 4, got {ndim}")));
    }
    let mut dims = [1usize; 4];
    for (k, d) in dims.iter_mut().enumerate().take(ndim as usize) {
        let v = h.i16(42 + 2 * k);
        if v < 1 {
            return Err(format_err("dim", format!("dim[{}] = {v}", k + 1)));
        }
        *d = v as usize;
    }

    let datatype = Datatype::from_code(h.i16(70))?;
    let bitpix = h.i16(72);
    if bitpix as usize != datatype.size() * 8 {
        return Err(format_err(
            "bitpix",
            format!("{bitpix} does not match datatype {datatype:?}"),
        ));
    }

    let pixdim = |k: usize| h.f32(76 + 4 * k) as f64;
    let qfac = if pixdim(0) < 0.0 { -1.0 } else { 1.0 };
    let mut spacing = [0.0; 3];
    for (k, s) in spacing.iter_mut().enumerate() {
        let v = pixdim(k + 1);
        if !(v > 0.0 && v.is_finite()) {
            return Err(format_err("pixdim", format!("pixdim[{}] = {v}", k + 1)));
        }
        *s = v;
    }
    let units = buf[123];
    let time_scale = match units & 0x38 {
        16 => 1e-3,
        24 => 1e-6,
        _ => 1.0,
    };
    let tr = Some(pixdim(4) * time_scale).filter(|&t| t > 0.0 && t.is_finite());

    let vox = h.f32(108);
    if !(vox >= 0.0 && vox.is_finite()) {
        return Err(format_err("vox_offset", format!("{vox}")));
    }
    let vox_offset = vox as usize;
    if !two_file && vox_offset < HEADER_SIZE {
        return Err(format_err(
            "vox_offset",
            format!("{vox_offset} lies inside the header"),
        ));
    }

    let slope = h.f32(112) as f64;
    let slope = if slope == 0.0 || !slope.is_finite() { 1.0 } else { slope };
    let inter = h.f32(116) as f64;
    let inter = if inter.is_finite() { inter } else { 0.0 };

    let qform_code = h.i16(252);
    let sform_code = h.i16(254);
    let affine = if sform_code > 0 {
        let mut a = Matrix4::identity();
        for r in 0..3 {
            for c in 0..4 {
                a[(r, c)] = h.f32(280 + 16 * r + 4 * c) as f64;
            }
        }
        a
    } else if qform_code > 0 {
        let b = h.f32(256) as f64;
        let c = h.f32(260) as f64;
        let d = h.f32(264) as f64;
        let a = (1.0 - (b * b + c * c + d * d)).max(0.0).sqrt();
        let rot = UnitQuaternion::from_quaternion(Quaternion::new(a, b, c, d))
            .to_rotation_matrix()
            .into_inner();
        let mut m = Matrix4::identity();
        let scale = [spacing[0], spacing[1], spacing[2] * qfac];
        for r in 0..3 {
            for cc in 0..3 {
                m[(r, cc)] = rot[(r, cc)] * scale[cc];
            }
        }
        m[(0, 3)] = h.f32(268) as f64;
        m[(1, 3)] = h.f32(272) as f64;
        m[(2, 3)] = h.f32(276) as f64;
        m
    } else {
        Matrix4::new(
            spacing[0], 0.0, 0.0, 0.0, //
            0.0, spacing[1], 0.0, 0.0, //
            0.0, 0.0, spacing[2], 0.0, //
            0.0, 0.0, 0.0, 1.0,
        )
    };

    Ok(Header {
        big_endian,
        ndim: ndim as usize,
        dims,
        datatype,
        spacing,
        tr,
        vox_offset,
        slope,
        inter,
        affine,
        two_file,
    })
}

fn decode(raw: &[u8], dt: Datatype, big_endian: bool, slope: f64, inter: f64) -> Vec<f64> {
    let size = dt.size();
    raw.chunks_exact(size)
        .map(|c| {
            let mut b = [0u8; 8];
            b[..size].copy_from_slice(c);
            if big_endian {
                b[..size].reverse();
            }
            let v = match dt {
                Datatype::U8 => b[0] as f64,
                Datatype::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
                Datatype::I32 => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
                Datatype::F32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
                Datatype::F64 => f64::from_le_bytes(b),
            };
            v * slope + inter
        })
        .collect()
}

fn read_sidecar(path: &Path) -> Result<Sidecar> {
    let p = sidecar_path(path);
    if !p.exists() {
        return Ok(Sidecar::default());
    }
    let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Read a `.nii` file (or `.hdr`/`.img` pair) into a 3D or 4D volume.
pub fn read_nifti(path: impl AsRef<Path>) -> Result<NiftiImage> {
    let path = path.as_ref();
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    let h = parse_header(&buf)?;

    let nvox: usize = h.dims.iter().product();
    let nbytes = nvox * h.datatype.size();
    let image_buf;
    let raw = if h.two_file {
        let img = path.with_extension("img");
        image_buf = fs::read(&img).map_err(|e| Error::io(&img, e))?;
        image_buf
            .get(h.vox_offset..h.vox_offset + nbytes)
            .ok_or_else(|| format_err("dim", "image file shorter than dims imply"))?
    } else {
        buf.get(h.vox_offset..h.vox_offset + nbytes)
            .ok_or_else(|| format_err("dim", "file shorter than dims imply"))?
    };
    let data = decode(raw, h.datatype, h.big_endian, h.slope, h.inter);

    let geom = Geometry::new([h.dims[0], h.dims[1], h.dims[2]], h.spacing, h.affine)
        .map_err(|e| format_err("srow", e.to_string()))?;
    if h.ndim == 3 || h.dims[3] == 1 {
        return Ok(NiftiImage::Volume3(Volume3D::new(geom, data)?));
    }
    let side = read_sidecar(path)?;
    let tr = h
        .tr
        .or(side.repetition_time.filter(|&t| t > 0.0))
        .unwrap_or(DEFAULT_TR);
    let te = side.echo_time.filter(|&t| t > 0.0).unwrap_or(DEFAULT_TE);
    Ok(NiftiImage::Volume4(Volume4D::new(
        geom, h.dims[3], tr, te, data,
    )?))
}

fn header_bytes(geom: &Geometry, nt: Option<usize>, tr: f64, dt: Datatype) -> Vec<u8> {
    let mut h = vec![0u8; VOX_OFFSET];
    let put_i16 = |h: &mut [u8], off: usize, v: i16| h[off..off + 2].copy_from_slice(&v.to_le_bytes());
    let put_f32 = |h: &mut [u8], off: usize, v: f32| h[off..off + 4].copy_from_slice(&v.to_le_bytes());

    h[0..4].copy_from_slice(&(HEADER_SIZE as i32).to_le_bytes());
    h[38] = b'r';
    let ndim = if nt.is_some() { 4 } else { 3 };
    put_i16(&mut h, 40, ndim);
    for k in 0..3 {
        put_i16(&mut h, 42 + 2 * k, geom.dims[k] as i16);
    }
    put_i16(&mut h, 48, nt.unwrap_or(1) as i16);
    for k in 4..7 {
        put_i16(&mut h, 42 + 2 * k, 1);
    }
    put_i16(&mut h, 70, dt.code());
    put_i16(&mut h, 72, (dt.size() * 8) as i16);
    put_f32(&mut h, 76, 1.0);
    for k in 0..3 {
        put_f32(&mut h, 80 + 4 * k, geom.spacing[k] as f32);
    }
    if nt.is_some() {
        put_f32(&mut h, 92, tr as f32);
    }
    put_f32(&mut h, 108, VOX_OFFSET as f32);
    put_f32(&mut h, 112, 1.0);
    put_f32(&mut h, 116, 0.0);
    // mm + seconds
    h[123] = 2 | 8;
    put_i16(&mut h, 254, 1);
    for r in 0..3 {
        for c in 0..4 {
            put_f32(&mut h, 280 + 16 * r + 4 * c, geom.affine[(r, c)] as f32);
        }
    }
    h[344..348].copy_from_slice(b"n+1\0");
    h
}

fn encode(values: &[f64], dt: Datatype, out: &mut Vec<u8>) {
    out.reserve(values.len() * dt.size());
    for &v in values {
        match dt {
            Datatype::U8 => out.push(v.round().clamp(0.0, 255.0) as u8),
            Datatype::I16 => out.extend_from_slice(&(v.round() as i16).to_le_bytes()),
            Datatype::I32 => out.extend_from_slice(&(v.round() as i32).to_le_bytes()),
            Datatype::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
            Datatype::F64 => out.extend_from_slice(&v.to_le_bytes()),
        }
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Write a 3D volume as float32.
pub fn write_nifti_3d(v: &Volume3D, path: impl AsRef<Path>) -> Result<()> {
    write_nifti_3d_as(v, path, Datatype::F32)
}

pub fn write_nifti_3d_as(v: &Volume3D, path: impl AsRef<Path>, dt: Datatype) -> Result<()> {
    let mut bytes = header_bytes(v.geometry(), None, 0.0, dt);
    encode(v.data(), dt, &mut bytes);
    write_file(path.as_ref(), &bytes)
}

/// Write a 4D series as float32 plus its timing sidecar.
pub fn write_nifti_4d(v: &Volume4D, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut bytes = header_bytes(v.geometry(), Some(v.nt()), v.tr(), Datatype::F32);
    encode(v.data(), Datatype::F32, &mut bytes);
    write_file(path, &bytes)?;
    let side = Sidecar {
        echo_time: Some(v.te()),
        repetition_time: Some(v.tr()),
    };
    let side_path = sidecar_path(path);
    write_file(&side_path, serde_json::to_string_pretty(&side)?.as_bytes())
}

pub fn write_nifti(image: &NiftiImage, path: impl AsRef<Path>) -> Result<()> {
    match image {
        NiftiImage::Volume3(v) => write_nifti_3d(v, path),
        NiftiImage::Volume4(v) => write_nifti_4d(v, path),
    }
}

/// Masks are stored as uint8 (0/1).
pub fn write_mask(mask: &Mask3D, geom: &Geometry, path: impl AsRef<Path>) -> Result<()> {
    mask.check_dims(geom.dims)?;
    let mut bytes = header_bytes(geom, None, 0.0, Datatype::U8);
    bytes.extend(mask.data().iter().map(|&b| b as u8));
    write_file(path.as_ref(), &bytes)
}

pub fn read_mask(path: impl AsRef<Path>) -> Result<(Mask3D, Geometry)> {
    let v = read_nifti(path)?.into_3d()?;
    let mask = Mask3D::new(v.dims(), v.data().iter().map(|&x| x != 0.0).collect())?;
    Ok((mask, v.geometry().clone()))
}

/// Label volumes are stored as int32.
pub fn write_labels(labels: &LabelVolume, path: impl AsRef<Path>) -> Result<()> {
    let mut bytes = header_bytes(labels.geometry(), None, 0.0, Datatype::I32);
    for &l in labels.data() {
        bytes.extend_from_slice(&(l as i32).to_le_bytes());
    }
    write_file(path.as_ref(), &bytes)
}

pub fn read_labels(path: impl AsRef<Path>) -> Result<LabelVolume> {
    let v = read_nifti(path)?.into_3d()?;
    let mut data = Vec::with_capacity(v.data().len());
    for &x in v.data() {
        if !(x >= 0.0) || x.fract() != 0.0 || x > u32::MAX as f64 {
            return Err(Error::invalid(format!(
                "label volume holds non-integer or negative value {x}"
            )));
        }
        data.push(x as u32);
    }
    LabelVolume::new(v.geometry().clone(), data)
}
