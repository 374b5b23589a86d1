//! Low-resolution random fields and their upsampling to the image grid.

use crate::resample::smooth_grid_f64;
use rand::Rng;
use rand_distr::StandardNormal;

/// Trilinear upsampling with corner alignment: control point (0,0,0) maps to
/// fine voxel (0,0,0) and control point (c-1,...) to fine voxel (n-1,...), so
/// when (n-1) is a multiple of (c-1) every control point lands exactly on a
/// fine voxel.
pub fn upsample_align_corners(ctrl: &[f64], ctrl_dims: [usize; 3], out_dims: [usize; 3]) -> Vec<f64> {
    let [cx, cy, cz] = ctrl_dims;
    let [nx, ny, nz] = out_dims;
    let scale = |n_out: usize, n_ctrl: usize| -> f64 {
        if n_out <= 1 {
            0.0
        } else {
            (n_ctrl.max(1) as f64 - 1.0) / (n_out as f64 - 1.0)
        }
    };
    let sx = scale(nx, cx);
    let sy = scale(ny, cy);
    let sz = scale(nz, cz);
    let cidx = |i: usize, j: usize, k: usize| i + cx * (j + cy * k);
    let mut out = Vec::with_capacity(nx * ny * nz);
    for k in 0..nz {
        let z = k as f64 * sz;
        let z0 = (z.floor() as usize).min(cz - 1);
        let z1 = (z0 + 1).min(cz - 1);
        let tz = z - z0 as f64;
        for j in 0..ny {
            let y = j as f64 * sy;
            let y0 = (y.floor() as usize).min(cy - 1);
            let y1 = (y0 + 1).min(cy - 1);
            let ty = y - y0 as f64;
            for i in 0..nx {
                let x = i as f64 * sx;
                let x0 = (x.floor() as usize).min(cx - 1);
                let x1 = (x0 + 1).min(cx - 1);
                let tx = x - x0 as f64;
                let c000 = ctrl[cidx(x0, y0, z0)];
                let c100 = ctrl[cidx(x1, y0, z0)];
                let c010 = ctrl[cidx(x0, y1, z0)];
                let c110 = ctrl[cidx(x1, y1, z0)];
                let c001 = ctrl[cidx(x0, y0, z1)];
                let c101 = ctrl[cidx(x1, y0, z1)];
                let c011 = ctrl[cidx(x0, y1, z1)];
                let c111 = ctrl[cidx(x1, y1, z1)];
                let c00 = c000 * (1.0 - tx) + c100 * tx;
                let c10 = c010 * (1.0 - tx) + c110 * tx;
                let c01 = c001 * (1.0 - tx) + c101 * tx;
                let c11 = c011 * (1.0 - tx) + c111 * tx;
                let c0 = c00 * (1.0 - ty) + c10 * ty;
                let c1 = c01 * (1.0 - ty) + c11 * ty;
                out.push(c0 * (1.0 - tz) + c1 * tz);
            }
        }
    }
    out
}

/// Standard-normal noise on a control grid.
pub fn control_noise(rng: &mut impl Rng, ctrl_dims: [usize; 3]) -> Vec<f64> {
    let n = ctrl_dims[0] * ctrl_dims[1] * ctrl_dims[2];
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

/// Smoothed control-grid noise rescaled to the requested standard deviation,
/// then upsampled to the image grid with corner alignment.
pub fn smoothed_noise_field(
    rng: &mut impl Rng,
    ctrl_dims: [usize; 3],
    smooth_sigma_vox: f64,
    target_std: f64,
    out_dims: [usize; 3],
) -> Vec<f64> {
    let n_out = out_dims[0] * out_dims[1] * out_dims[2];
    if target_std == 0.0 {
        return vec![0.0; n_out];
    }
    let raw = control_noise(rng, ctrl_dims);
    let smooth = smooth_grid_f64(&raw, ctrl_dims, smooth_sigma_vox);
    let n = smooth.len() as f64;
    let mean = smooth.iter().sum::<f64>() / n;
    let var = smooth.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    let gain = if std > 0.0 { target_std / std } else { 0.0 };
    let scaled: Vec<f64> = smooth.iter().map(|v| (v - mean) * gain).collect();
    upsample_align_corners(&scaled, ctrl_dims, out_dims)
}
