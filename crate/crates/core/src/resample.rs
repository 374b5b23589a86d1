//! Grid resampling and separable Gaussian smoothing.

use crate::error::{Error, Result};
use crate::geometry::Geometry;
use crate::volume::{BinaryMask, LabelVolume, Volume};
use nalgebra::{Matrix4, Vector4};
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Interp {
    Nearest,
    Trilinear,
}

/// Map from target voxel indices to source voxel indices.
fn grid_transform(src: &Geometry, target: &Geometry) -> Result<Matrix4<f64>> {
    let world2vox = src.world2vox().map_err(|_| Error::SingularAffine)?;
    Ok(world2vox * target.vox2world())
}

#[inline]
fn source_coords(m: &Matrix4<f64>, i: usize, j: usize, k: usize) -> [f64; 3] {
    let p = m * Vector4::new(i as f64, j as f64, k as f64, 1.0);
    [p[0], p[1], p[2]]
}

#[inline]
fn trilinear_at(v: &Volume<f32>, s: [f64; 3]) -> f64 {
    let f = [s[0].floor(), s[1].floor(), s[2].floor()];
    let t = [s[0] - f[0], s[1] - f[1], s[2] - f[2]];
    let (x0, y0, z0) = (f[0] as i64, f[1] as i64, f[2] as i64);
    let mut acc = 0.0f64;
    for dz in 0..2i64 {
        let wz = if dz == 0 { 1.0 - t[2] } else { t[2] };
        if wz == 0.0 {
            continue;
        }
        for dy in 0..2i64 {
            let wy = if dy == 0 { 1.0 - t[1] } else { t[1] };
            if wy == 0.0 {
                continue;
            }
            for dx in 0..2i64 {
                let wx = if dx == 0 { 1.0 - t[0] } else { t[0] };
                if wx == 0.0 {
                    continue;
                }
                acc += wx * wy * wz * v.get_or_zero(x0 + dx, y0 + dy, z0 + dz) as f64;
            }
        }
    }
    acc
}

#[inline]
fn nearest_index(s: f64) -> i64 {
    s.round() as i64
}

/// Resample an intensity volume onto `target`, sampling at world coordinates
/// through the inverse affine. Out-of-bounds samples take value 0.
pub fn resample(v: &Volume<f32>, target: &Geometry, interp: Interp) -> Result<Volume<f32>> {
    let m = grid_transform(v.geometry(), target)?;
    let [nx, ny, _nz] = target.dims();
    let mut data = vec![0f32; target.num_voxels()];
    data.par_chunks_mut(nx * ny).enumerate().for_each(|(k, slab)| {
        for j in 0..ny {
            for i in 0..nx {
                let s = source_coords(&m, i, j, k);
                slab[i + nx * j] = match interp {
                    Interp::Trilinear => trilinear_at(v, s) as f32,
                    Interp::Nearest => {
                        v.get_or_zero(nearest_index(s[0]), nearest_index(s[1]), nearest_index(s[2]))
                    }
                };
            }
        }
    });
    Volume::new(target.clone(), data)
}

/// Nearest-neighbor resampling for label volumes (labels must stay integral).
pub fn resample_labels(v: &LabelVolume, target: &Geometry) -> Result<LabelVolume> {
    let m = grid_transform(v.geometry(), target)?;
    let [nx, ny, _nz] = target.dims();
    let mut data = vec![0u32; target.num_voxels()];
    data.par_chunks_mut(nx * ny).enumerate().for_each(|(k, slab)| {
        for j in 0..ny {
            for i in 0..nx {
                let s = source_coords(&m, i, j, k);
                slab[i + nx * j] =
                    v.get_or_zero(nearest_index(s[0]), nearest_index(s[1]), nearest_index(s[2]));
            }
        }
    });
    Volume::new(target.clone(), data)
}

pub fn resample_mask(v: &BinaryMask, target: &Geometry) -> Result<BinaryMask> {
    let as_labels = v.map(|b| if b { 1u32 } else { 0 });
    Ok(resample_labels(&as_labels, target)?.map(|c| c != 0))
}

/// Separable Gaussian smoothing with per-axis sigma in mm. Kernels are
/// truncated at 3 sigma and renormalized over the in-bounds taps, which keeps
/// constant volumes exactly constant.
pub fn gaussian_smooth(v: &Volume<f32>, sigma_mm: [f64; 3]) -> Result<Volume<f32>> {
    if sigma_mm.iter().any(|&s| s < 0.0 || !s.is_finite()) {
        return Err(Error::InvalidInput(format!("sigma must be >= 0, got {sigma_mm:?}")));
    }
    let spacing = v.geometry().spacing();
    let [nx, ny, nz] = v.dims();
    let strides = [1usize, nx, nx * ny];
    let dims = [nx, ny, nz];
    // Convolve in f64 across all three passes; round once at the end.
    let mut data: Vec<f64> = v.data().iter().map(|&x| x as f64).collect();
    for axis in 0..3 {
        let sigma_vox = sigma_mm[axis] / spacing[axis];
        if sigma_vox == 0.0 {
            continue;
        }
        let radius = (3.0 * sigma_vox).ceil() as i64;
        let mut weights = Vec::with_capacity((2 * radius + 1) as usize);
        for t in -radius..=radius {
            weights.push((-(t as f64).powi(2) / (2.0 * sigma_vox * sigma_vox)).exp());
        }
        let total: f64 = weights.iter().sum();
        for w in &mut weights {
            *w /= total;
        }
        data = convolve_axis(&data, dims, strides, axis, radius, &weights);
    }
    Volume::new(v.geometry().clone(), data.into_iter().map(|x| x as f32).collect())
}

/// Smooth a raw f64 grid with an isotropic Gaussian in voxel units.
/// Used for low-resolution random fields before upsampling.
pub(crate) fn smooth_grid_f64(data: &[f64], dims: [usize; 3], sigma_vox: f64) -> Vec<f64> {
    if sigma_vox <= 0.0 {
        return data.to_vec();
    }
    let strides = [1usize, dims[0], dims[0] * dims[1]];
    let radius = (3.0 * sigma_vox).ceil() as i64;
    let mut weights = Vec::with_capacity((2 * radius + 1) as usize);
    for t in -radius..=radius {
        weights.push((-(t as f64).powi(2) / (2.0 * sigma_vox * sigma_vox)).exp());
    }
    let total: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= total;
    }
    let mut out = data.to_vec();
    for axis in 0..3 {
        if dims[axis] > 1 {
            out = convolve_axis(&out, dims, strides, axis, radius, &weights);
        }
    }
    out
}

fn convolve_axis(
    input: &[f64],
    dims: [usize; 3],
    strides: [usize; 3],
    axis: usize,
    radius: i64,
    weights: &[f64],
) -> Vec<f64> {
    let [nx, ny, _nz] = dims;
    let n_axis = dims[axis] as i64;
    let stride = strides[axis];
    let mut out = vec![0f64; input.len()];
    out.par_chunks_mut(nx * ny).enumerate().for_each(|(k, slab)| {
        for j in 0..ny {
            for i in 0..nx {
                let pos = [i, j, k][axis] as i64;
                let base = i + nx * j + nx * ny * k;
                let t_lo = (-radius).max(-pos);
                let t_hi = radius.min(n_axis - 1 - pos);
                let mut acc = 0.0f64;
                let mut wsum = 0.0f64;
                for t in t_lo..=t_hi {
                    let w = weights[(t + radius) as usize];
                    let idx = (base as i64 + t * stride as i64) as usize;
                    acc += w * input[idx];
                    wsum += w;
                }
                slab[i + nx * j] = acc / wsum;
            }
        }
    });
    out
}
