//! NIfTI-1 single-file volume I/O.
//!
//! Little-endian NIfTI-1 only (.nii / .nii.gz), 348-byte header, geometry
//! taken from the sform (qform is ignored). Dense displacement fields are
//! stored as 3-component vector files (dim\[0\]=5, dim\[5\]=3). Volumes are
//! reoriented to canonical RAS axis order on load.

use crate::error::{Error, Result};
use crate::geometry::Geometry;
use crate::volume::{LabelVolume, Volume};
use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use nalgebra::Matrix4;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

const HEADER_SIZE: usize = 348;
const VOX_OFFSET: usize = 352;
const MAGIC: &[u8; 4] = b"n+1\0";
const GZIP_MAGIC: [u8; 2] = [0x1f, 0x8b];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    U8,
    I16,
    I32,
    F32,
}

impl Dtype {
    fn code(self) -> i16 {
        match self {
            Dtype::U8 => 2,
            Dtype::I16 => 4,
            Dtype::I32 => 8,
            Dtype::F32 => 16,
        }
    }

    fn bitpix(self) -> i16 {
        match self {
            Dtype::U8 => 8,
            Dtype::I16 => 16,
            Dtype::I32 => 32,
            Dtype::F32 => 32,
        }
    }

    fn bytes(self) -> usize {
        (self.bitpix() / 8) as usize
    }

    fn from_code(code: i16, path: &Path) -> Result<Self> {
        match code {
            2 => Ok(Dtype::U8),
            4 => Ok(Dtype::I16),
            8 => Ok(Dtype::I32),
            16 => Ok(Dtype::F32),
            other => Err(Error::UnsupportedDatatype { path: path.into(), code: other }),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Dtype::U8 => "uint8",
            Dtype::I16 => "int16",
            Dtype::I32 => "int32",
            Dtype::F32 => "float32",
        }
    }
}

impl std::str::FromStr for Dtype {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uint8" | "u8" => Ok(Dtype::U8),
            "int16" | "i16" => Ok(Dtype::I16),
            "int32" | "i32" => Ok(Dtype::I32),
            "float32" | "f32" => Ok(Dtype::F32),
            other => Err(Error::InvalidInput(format!("unknown dtype \"{other}\""))),
        }
    }
}

struct ParsedHeader {
    dims: [usize; 3],
    ncomp: usize,
    dtype: Dtype,
    scl_slope: f32,
    scl_inter: f32,
    geometry: Geometry,
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
    if raw.len() >= 2 && raw[..2] == GZIP_MAGIC {
        let mut out = Vec::new();
        GzDecoder::new(&raw[..]).read_to_end(&mut out).map_err(|e| Error::io(path, e))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if path.extension().map(|e| e == "gz").unwrap_or(false) {
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut enc = GzEncoder::new(file, flate2::Compression::fast());
        enc.write_all(bytes).map_err(|e| Error::io(path, e))?;
        enc.finish().map_err(|e| Error::io(path, e))?;
    } else {
        fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

fn le_i16(b: &[u8], off: usize) -> i16 {
    i16::from_le_bytes([b[off], b[off + 1]])
}

fn le_i32(b: &[u8], off: usize) -> i32 {
    i32::from_le_bytes([b[off], b[off + 1], b[off + 2], b[off + 3]])
}

fn le_f32(b: &[u8], off: usize) -> f32 {
    f32::from_le_bytes([b[off], b[off + 1], b[off + 2], b[off + 3]])
}

fn parse_header(bytes: &[u8], path: &Path) -> Result<ParsedHeader> {
    if bytes.len() < VOX_OFFSET {
        return Err(Error::TruncatedPayload {
            path: path.into(),
            expected: VOX_OFFSET,
            actual: bytes.len(),
        });
    }
    let magic: [u8; 4] = bytes[344..348].try_into().unwrap();
    if &magic != MAGIC {
        return Err(Error::BadMagic { path: path.into(), magic });
    }
    let sizeof_hdr = le_i32(bytes, 0);
    if sizeof_hdr != HEADER_SIZE as i32 {
        return Err(Error::BadHeaderSize { path: path.into(), size: sizeof_hdr });
    }
    let ndim = le_i16(bytes, 40);
    if !(1..=5).contains(&ndim) {
        return Err(Error::MalformedFile {
            path: path.into(),
            reason: format!("unsupported dimensionality {ndim}"),
        });
    }
    let mut dim = [1usize; 5];
    for (slot, d) in dim.iter_mut().enumerate().take(ndim as usize) {
        let v = le_i16(bytes, 40 + 2 * (slot + 1));
        if v < 1 {
            return Err(Error::MalformedFile {
                path: path.into(),
                reason: format!("dim[{}] = {v}", slot + 1),
            });
        }
        *d = v as usize;
    }
    let ncomp = dim[4];
    if dim[3] != 1 || !(ncomp == 1 || ncomp == 3) {
        return Err(Error::MalformedFile {
            path: path.into(),
            reason: format!("only 3D scalar or 3-vector files supported, dim = {dim:?}"),
        });
    }
    let dtype = Dtype::from_code(le_i16(bytes, 70), path)?;
    let sform_code = le_i16(bytes, 254);
    if sform_code < 1 {
        return Err(Error::MalformedFile {
            path: path.into(),
            reason: "sform absent (sform_code < 1)".into(),
        });
    }
    let mut affine = Matrix4::<f64>::identity();
    for (row, base) in [(0usize, 280usize), (1, 296), (2, 312)] {
        for col in 0..4 {
            affine[(row, col)] = le_f32(bytes, base + 4 * col) as f64;
        }
    }
    // sform is the single geometry source; spacing is its column norms.
    let spacing = [
        affine.fixed_view::<3, 1>(0, 0).norm(),
        affine.fixed_view::<3, 1>(0, 1).norm(),
        affine.fixed_view::<3, 1>(0, 2).norm(),
    ];
    let geometry = Geometry::new([dim[0], dim[1], dim[2]], spacing, affine)?;
    Ok(ParsedHeader {
        dims: [dim[0], dim[1], dim[2]],
        ncomp,
        dtype,
        scl_slope: le_f32(bytes, 112),
        scl_inter: le_f32(bytes, 116),
        geometry,
    })
}

fn payload<'a>(bytes: &'a [u8], hdr: &ParsedHeader, path: &Path) -> Result<&'a [u8]> {
    let n = hdr.dims[0] * hdr.dims[1] * hdr.dims[2] * hdr.ncomp;
    let expected = n * hdr.dtype.bytes();
    let avail = bytes.len().saturating_sub(VOX_OFFSET);
    if avail < expected {
        return Err(Error::TruncatedPayload { path: path.into(), expected, actual: avail });
    }
    Ok(&bytes[VOX_OFFSET..VOX_OFFSET + expected])
}

fn decode_f32(raw: &[u8], dtype: Dtype, slope: f32, inter: f32) -> Vec<f32> {
    let scale = slope != 0.0 && (slope != 1.0 || inter != 0.0);
    let apply = |v: f32| if scale { v * slope + inter } else { v };
    match dtype {
        Dtype::U8 => raw.iter().map(|&b| apply(b as f32)).collect(),
        Dtype::I16 => raw
            .chunks_exact(2)
            .map(|c| apply(i16::from_le_bytes([c[0], c[1]]) as f32))
            .collect(),
        Dtype::I32 => raw
            .chunks_exact(4)
            .map(|c| apply(i32::from_le_bytes(c.try_into().unwrap()) as f32))
            .collect(),
        Dtype::F32 => raw
            .chunks_exact(4)
            .map(|c| apply(f32::from_le_bytes(c.try_into().unwrap())))
            .collect(),
    }
}

/// Read an intensity volume, applying scl_slope/scl_inter when set and
/// reorienting to canonical RAS.
pub fn read_volume(path: impl AsRef<Path>) -> Result<Volume<f32>> {
    let path = path.as_ref();
    let bytes = read_bytes(path)?;
    let hdr = parse_header(&bytes, path)?;
    if hdr.ncomp != 1 {
        return Err(Error::MalformedFile {
            path: path.into(),
            reason: "expected scalar volume, found vector file".into(),
        });
    }
    let data = decode_f32(payload(&bytes, &hdr, path)?, hdr.dtype, hdr.scl_slope, hdr.scl_inter);
    Volume::new(hdr.geometry, data)?.to_canonical_ras()
}

/// Read an integer-coded label volume. Requires an integer datatype with no
/// intensity scaling; values must be non-negative.
pub fn read_labels(path: impl AsRef<Path>) -> Result<LabelVolume> {
    let path = path.as_ref();
    let bytes = read_bytes(path)?;
    let hdr = parse_header(&bytes, path)?;
    if hdr.ncomp != 1 {
        return Err(Error::MalformedFile {
            path: path.into(),
            reason: "expected scalar volume, found vector file".into(),
        });
    }
    if hdr.dtype == Dtype::F32 {
        return Err(Error::MalformedFile {
            path: path.into(),
            reason: "label volume stored as float32; use an integer datatype".into(),
        });
    }
    let scaled = hdr.scl_slope != 0.0 && (hdr.scl_slope != 1.0 || hdr.scl_inter != 0.0);
    if scaled {
        return Err(Error::MalformedFile {
            path: path.into(),
            reason: "label volume carries intensity scaling".into(),
        });
    }
    let raw = payload(&bytes, &hdr, path)?;
    let mut data = Vec::with_capacity(raw.len() / hdr.dtype.bytes());
    match hdr.dtype {
        Dtype::U8 => data.extend(raw.iter().map(|&b| b as u32)),
        Dtype::I16 => {
            for c in raw.chunks_exact(2) {
                let v = i16::from_le_bytes([c[0], c[1]]);
                if v < 0 {
                    return Err(Error::MalformedFile {
                        path: path.into(),
                        reason: format!("negative label code {v}"),
                    });
                }
                data.push(v as u32);
            }
        }
        Dtype::I32 => {
            for c in raw.chunks_exact(4) {
                let v = i32::from_le_bytes(c.try_into().unwrap());
                if v < 0 {
                    return Err(Error::MalformedFile {
                        path: path.into(),
                        reason: format!("negative label code {v}"),
                    });
                }
                data.push(v as u32);
            }
        }
        Dtype::F32 => unreachable!(),
    }
    Volume::new(hdr.geometry, data)?.to_canonical_ras()
}

fn header_bytes(geometry: &Geometry, dtype: Dtype, ncomp: usize) -> Vec<u8> {
    let mut h = vec![0u8; VOX_OFFSET];
    h[0..4].copy_from_slice(&(HEADER_SIZE as i32).to_le_bytes());
    let [nx, ny, nz] = geometry.dims();
    let ndim: i16 = if ncomp == 1 { 3 } else { 5 };
    let dim: [i16; 8] = [ndim, nx as i16, ny as i16, nz as i16, 1, ncomp as i16, 1, 1];
    for (slot, v) in dim.iter().enumerate() {
        h[40 + 2 * slot..40 + 2 * slot + 2].copy_from_slice(&v.to_le_bytes());
    }
    if ncomp == 3 {
        // NIFTI_INTENT_VECTOR
        h[68..70].copy_from_slice(&1007i16.to_le_bytes());
    }
    h[70..72].copy_from_slice(&dtype.code().to_le_bytes());
    h[72..74].copy_from_slice(&dtype.bitpix().to_le_bytes());
    let spacing = geometry.spacing();
    let pixdim: [f32; 8] =
        [1.0, spacing[0] as f32, spacing[1] as f32, spacing[2] as f32, 0.0, 0.0, 0.0, 0.0];
    for (slot, v) in pixdim.iter().enumerate() {
        h[76 + 4 * slot..76 + 4 * slot + 4].copy_from_slice(&v.to_le_bytes());
    }
    h[108..112].copy_from_slice(&(VOX_OFFSET as f32).to_le_bytes());
    h[112..116].copy_from_slice(&1.0f32.to_le_bytes()); // scl_slope
    h[116..120].copy_from_slice(&0.0f32.to_le_bytes()); // scl_inter
    h[123] = 2; // spatial units: mm
    h[254..256].copy_from_slice(&1i16.to_le_bytes()); // sform_code = 1
    let affine = geometry.vox2world();
    for (row, base) in [(0usize, 280usize), (1, 296), (2, 312)] {
        for col in 0..4 {
            let v = affine[(row, col)] as f32;
            h[base + 4 * col..base + 4 * col + 4].copy_from_slice(&v.to_le_bytes());
        }
    }
    h[344..348].copy_from_slice(MAGIC);
    h
}

/// Write an intensity volume. Integer dtypes round to nearest and error when
/// a value falls outside the representable range.
pub fn write_volume(v: &Volume<f32>, path: impl AsRef<Path>, dtype: Dtype) -> Result<()> {
    let path = path.as_ref();
    let mut bytes = header_bytes(v.geometry(), dtype, 1);
    match dtype {
        Dtype::F32 => {
            for &x in v.data() {
                bytes.extend_from_slice(&x.to_le_bytes());
            }
        }
        Dtype::U8 => {
            for &x in v.data() {
                let r = x.round();
                if !(0.0..=255.0).contains(&r) {
                    return Err(Error::InvalidInput(format!("value {x} not representable as uint8")));
                }
                bytes.push(r as u8);
            }
        }
        Dtype::I16 => {
            for &x in v.data() {
                let r = x.round();
                if !(i16::MIN as f32..=i16::MAX as f32).contains(&r) {
                    return Err(Error::InvalidInput(format!("value {x} not representable as int16")));
                }
                bytes.extend_from_slice(&(r as i16).to_le_bytes());
            }
        }
        Dtype::I32 => {
            for &x in v.data() {
                let r = x.round();
                if !(i32::MIN as f32..=i32::MAX as f32).contains(&r) {
                    return Err(Error::InvalidInput(format!("value {x} not representable as int32")));
                }
                bytes.extend_from_slice(&(r as i32).to_le_bytes());
            }
        }
    }
    write_bytes(path, &bytes)
}

/// Write a label volume losslessly; errors when a code exceeds the dtype range.
pub fn write_labels(v: &LabelVolume, path: impl AsRef<Path>, dtype: Dtype) -> Result<()> {
    let path = path.as_ref();
    let limit: u32 = match dtype {
        Dtype::U8 => u8::MAX as u32,
        Dtype::I16 => i16::MAX as u32,
        Dtype::I32 => i32::MAX as u32,
        Dtype::F32 => {
            return Err(Error::InvalidInput("labels must use an integer dtype".into()));
        }
    };
    if let Some(&bad) = v.data().iter().find(|&&c| c > limit) {
        return Err(Error::LabelOverflow { code: bad, dtype: dtype.name() });
    }
    let mut bytes = header_bytes(v.geometry(), dtype, 1);
    match dtype {
        Dtype::U8 => bytes.extend(v.data().iter().map(|&c| c as u8)),
        Dtype::I16 => {
            for &c in v.data() {
                bytes.extend_from_slice(&(c as i16).to_le_bytes());
            }
        }
        Dtype::I32 => {
            for &c in v.data() {
                bytes.extend_from_slice(&(c as i32).to_le_bytes());
            }
        }
        Dtype::F32 => unreachable!(),
    }
    write_bytes(path, &bytes)
}

/// Read a 3-component vector volume (dense displacement field, mm units).
pub fn read_vector_volume(path: impl AsRef<Path>) -> Result<(Geometry, Vec<[f32; 3]>)> {
    let path = path.as_ref();
    let bytes = read_bytes(path)?;
    let hdr = parse_header(&bytes, path)?;
    if hdr.ncomp != 3 {
        return Err(Error::MalformedFile {
            path: path.into(),
            reason: "expected a 3-component vector file (dim[5] = 3)".into(),
        });
    }
    let data = decode_f32(payload(&bytes, &hdr, path)?, hdr.dtype, hdr.scl_slope, hdr.scl_inter);
    let n = hdr.geometry.num_voxels();
    let mut vecs = vec![[0f32; 3]; n];
    for comp in 0..3 {
        for (i, v) in vecs.iter_mut().enumerate() {
            v[comp] = data[comp * n + i];
        }
    }
    Ok((hdr.geometry, vecs))
}

pub fn write_vector_volume(
    geometry: &Geometry,
    vecs: &[[f32; 3]],
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    if vecs.len() != geometry.num_voxels() {
        return Err(Error::InvalidInput("vector count != voxel count".into()));
    }
    let mut bytes = header_bytes(geometry, Dtype::F32, 3);
    for comp in 0..3 {
        for v in vecs {
            bytes.extend_from_slice(&v[comp].to_le_bytes());
        }
    }
    write_bytes(path, &bytes)
}

/// Read a 4x4 affine stored as 4 text lines of 4 whitespace-separated decimals.
pub fn read_affine_text(path: impl AsRef<Path>) -> Result<Matrix4<f64>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut m = Matrix4::<f64>::identity();
    let rows: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
    if rows.len() != 4 {
        return Err(Error::MalformedFile {
            path: path.into(),
            reason: format!("affine text needs 4 rows, found {}", rows.len()),
        });
    }
    for (r, line) in rows.iter().enumerate() {
        let vals: Vec<&str> = line.split_whitespace().collect();
        if vals.len() != 4 {
            return Err(Error::MalformedFile {
                path: path.into(),
                reason: format!("affine row {} needs 4 values, found {}", r + 1, vals.len()),
            });
        }
        for (c, tok) in vals.iter().enumerate() {
            m[(r, c)] = tok.parse::<f64>().map_err(|_| Error::MalformedFile {
                path: path.into(),
                reason: format!("bad number \"{tok}\" in affine row {}", r + 1),
            })?;
        }
    }
    Ok(m)
}

pub fn write_affine_text(m: &Matrix4<f64>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut text = String::new();
    for r in 0..4 {
        let row: Vec<String> = (0..4).map(|c| format!("{:.17}", m[(r, c)])).collect();
        text.push_str(&row.join(" "));
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Volume;

    fn geom(dims: [usize; 3], spacing: f64) -> Geometry {
        Geometry::axis_aligned(dims, [spacing; 3], [-4.0, 2.0, 7.5]).unwrap()
    }

    #[test]
    fn label_round_trip_u8() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("lbl.nii");
        let v = Volume::from_fn(geom([5, 4, 3], 0.35), |i, j, k| ((i + j + k) % 256) as u32);
        write_labels(&v, &path, Dtype::U8).unwrap();
        let r = read_labels(&path).unwrap();
        assert_eq!(r.data(), v.data());
        assert!(r.geometry().approx_eq(v.geometry(), 1e-6));
    }

    #[test]
    fn gzip_round_trip_matches_plain() {
        let dir = tempfile::tempdir().unwrap();
        let v = Volume::from_fn(geom([6, 6, 6], 1.0), |i, j, k| (i * 36 + j * 6 + k) as f32);
        let plain = dir.path().join("v.nii");
        let gz = dir.path().join("v.nii.gz");
        write_volume(&v, &plain, Dtype::F32).unwrap();
        write_volume(&v, &gz, Dtype::F32).unwrap();
        let a = read_volume(&plain).unwrap();
        let b = read_volume(&gz).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.data(), v.data());
    }

    #[test]
    fn wrong_magic_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.nii");
        let v: Volume<f32> = Volume::filled(geom([2, 2, 2], 1.0), 0.0);
        write_volume(&v, &path, Dtype::F32).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[344..348].copy_from_slice(b"XX1\0");
        std::fs::write(&path, bytes).unwrap();
        match read_volume(&path) {
            Err(Error::BadMagic { magic, .. }) => assert_eq!(&magic, b"XX1\0"),
            other => panic!("expected BadMagic, got {other:?}"),
        }
    }

    #[test]
    fn truncated_payload_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("short.nii");
        let v: Volume<f32> = Volume::filled(geom([4, 4, 4], 1.0), 1.0);
        write_volume(&v, &path, Dtype::F32).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 10]).unwrap();
        assert!(matches!(read_volume(&path), Err(Error::TruncatedPayload { .. })));
    }

    #[test]
    fn handwritten_sform_fixture_parses_exactly() {
        // 3x3x3 float32 file built byte by byte with a known sform.
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("fixture.nii");
        let srow_x: [f32; 4] = [0.5, 0.0, 0.0, -10.0];
        let srow_y: [f32; 4] = [0.0, 0.5, 0.0, 3.0];
        let srow_z: [f32; 4] = [0.0, 0.0, 0.5, 1.25];
        let mut h = vec![0u8; 352];
        h[0..4].copy_from_slice(&348i32.to_le_bytes());
        for (slot, v) in [3i16, 3, 3, 3, 1, 1, 1, 1].iter().enumerate() {
            h[40 + 2 * slot..42 + 2 * slot].copy_from_slice(&v.to_le_bytes());
        }
        h[70..72].copy_from_slice(&16i16.to_le_bytes());
        h[72..74].copy_from_slice(&32i16.to_le_bytes());
        for (slot, v) in [1.0f32, 0.5, 0.5, 0.5].iter().enumerate() {
            h[76 + 4 * slot..80 + 4 * slot].copy_from_slice(&v.to_le_bytes());
        }
        h[108..112].copy_from_slice(&352f32.to_le_bytes());
        h[254..256].copy_from_slice(&1i16.to_le_bytes());
        for (base, row) in [(280usize, srow_x), (296, srow_y), (312, srow_z)] {
            for (c, v) in row.iter().enumerate() {
                h[base + 4 * c..base + 4 * c + 4].copy_from_slice(&v.to_le_bytes());
            }
        }
        h[344..348].copy_from_slice(b"n+1\0");
        for i in 0..27 {
            h.extend_from_slice(&(i as f32).to_le_bytes());
        }
        std::fs::write(&path, h).unwrap();
        let v = read_volume(&path).unwrap();
        let affine = v.geometry().vox2world();
        assert_eq!(affine[(0, 0)], 0.5);
        assert_eq!(affine[(0, 3)], -10.0);
        assert_eq!(affine[(1, 3)], 3.0);
        assert_eq!(affine[(2, 3)], 1.25);
        assert_eq!(v.get(1, 0, 0), 1.0);
        assert_eq!(v.get(0, 1, 0), 3.0);
    }

    #[test]
    fn float_round_trip_within_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.nii");
        let v = Volume::from_fn(geom([4, 4, 4], 1.0), |i, j, k| {
            ((i as f64 * 0.173 + j as f64 * 1.618 + k as f64 * 2.718).sin() * 500.0) as f32
        });
        write_volume(&v, &path, Dtype::F32).unwrap();
        let r = read_volume(&path).unwrap();
        // float32 in, float32 out: exact.
        assert_eq!(r.data(), v.data());
    }

    #[test]
    fn label_overflow_guard() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("big.nii");
        let v = Volume::filled(geom([2, 2, 2], 1.0), 300u32);
        match write_labels(&v, &path, Dtype::U8) {
            Err(Error::LabelOverflow { code: 300, dtype: "uint8" }) => {}
            other => panic!("expected LabelOverflow, got {other:?}"),
        }
    }

    #[test]
    fn affine_text_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("xfm.txt");
        let mut m = Matrix4::<f64>::identity();
        m[(0, 3)] = -12.75;
        m[(1, 0)] = 0.125;
        write_affine_text(&m, &path).unwrap();
        let r = read_affine_text(&path).unwrap();
        assert_eq!(m, r);
    }

    #[test]
    fn vector_volume_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("warp.nii.gz");
        let g = geom([3, 4, 5], 1.0);
        let vecs: Vec<[f32; 3]> =
            (0..g.num_voxels()).map(|i| [i as f32, -(i as f32), 0.5 * i as f32]).collect();
        write_vector_volume(&g, &vecs, &path).unwrap();
        let (rg, rvecs) = read_vector_volume(&path).unwrap();
        assert!(rg.approx_eq(&g, 1e-6));
        assert_eq!(rvecs, vecs);
    }
}
