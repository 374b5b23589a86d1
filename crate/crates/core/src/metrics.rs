//! Segmentation evaluation: overlap ratios, surface distances, volume
//! agreement, and bounding-box extents.
//!
//! Surfaces are the centers of boundary voxels (mask voxels with at least one
//! non-mask face neighbor; the volume edge counts as outside). Surface
//! distances run through an exact Euclidean distance transform, so they scale
//! with anisotropic spacing and match a brute-force all-pairs scan.

use crate::error::{Error, Result};
use crate::volume::{require_same_geometry, BinaryMask};
use serde::Serialize;

/// The full per-pair report: seven metrics plus volumes and extents.
#[derive(Debug, Clone, Serialize)]
pub struct MetricReport {
    pub dice: f64,
    pub iou: f64,
    pub tpr: f64,
    pub fdr: f64,
    pub hd95_mm: f64,
    pub msd_mm: f64,
    pub volumetric_similarity: f64,
    pub volume_pred_mm3: f64,
    pub volume_ref_mm3: f64,
    pub extents_pred_mm: [f64; 3],
    pub extents_ref_mm: [f64; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

/// Voxel-wise true positive / false positive / false negative counts.
pub fn confusion_counts(pred: &BinaryMask, reference: &BinaryMask) -> Result<ConfusionCounts> {
    require_same_geometry(pred, reference, "prediction", "reference")?;
    let mut c = ConfusionCounts { tp: 0, fp: 0, fn_: 0 };
    for (&p, &r) in pred.data().iter().zip(reference.data()) {
        match (p, r) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => {}
        }
    }
    Ok(c)
}

/// Dice = 2 TP / (2 TP + FP + FN). Both masks empty counts as vacuous
/// agreement: 1.
pub fn dice(pred: &BinaryMask, reference: &BinaryMask) -> Result<f64> {
    let c = confusion_counts(pred, reference)?;
    Ok(dice_from_counts(&c))
}

pub fn dice_from_counts(c: &ConfusionCounts) -> f64 {
    let denom = 2 * c.tp + c.fp + c.fn_;
    if denom == 0 {
        1.0
    } else {
        2.0 * c.tp as f64 / denom as f64
    }
}

/// IoU = TP / (TP + FP + FN); both-empty convention 1.
pub fn iou(pred: &BinaryMask, reference: &BinaryMask) -> Result<f64> {
    let c = confusion_counts(pred, reference)?;
    let denom = c.tp + c.fp + c.fn_;
    Ok(if denom == 0 { 1.0 } else { c.tp as f64 / denom as f64 })
}

/// TPR = TP / (TP + FN); undefined on an empty reference.
pub fn tpr(pred: &BinaryMask, reference: &BinaryMask) -> Result<f64> {
    let c = confusion_counts(pred, reference)?;
    let denom = c.tp + c.fn_;
    if denom == 0 {
        return Err(Error::MetricUndefined {
            metric: "tpr",
            reason: "reference mask is empty (TP + FN = 0)".into(),
        });
    }
    Ok(c.tp as f64 / denom as f64)
}

/// FDR = FP / (FP + TP); undefined on an empty prediction.
pub fn fdr(pred: &BinaryMask, reference: &BinaryMask) -> Result<f64> {
    let c = confusion_counts(pred, reference)?;
    let denom = c.fp + c.tp;
    if denom == 0 {
        return Err(Error::MetricUndefined {
            metric: "fdr",
            reason: "prediction mask is empty (FP + TP = 0)".into(),
        });
    }
    Ok(c.fp as f64 / denom as f64)
}

/// Volumetric similarity of two volumes in mm^3: 1 - |vA - vB| / (vA + vB).
pub fn volumetric_similarity_from_volumes(v_a: f64, v_b: f64) -> Result<f64> {
    if v_a + v_b <= 0.0 {
        return Err(Error::MetricUndefined {
            metric: "volumetric_similarity",
            reason: "both structures are empty".into(),
        });
    }
    Ok(1.0 - (v_a - v_b).abs() / (v_a + v_b))
}

pub fn volume_mm3(mask: &BinaryMask) -> f64 {
    mask.count() as f64 * mask.geometry().voxel_volume_mm3()
}

pub fn volumetric_similarity(pred: &BinaryMask, reference: &BinaryMask) -> Result<f64> {
    require_same_geometry(pred, reference, "prediction", "reference")?;
    volumetric_similarity_from_volumes(volume_mm3(pred), volume_mm3(reference))
}

/// Per-axis extent of the tightest axis-aligned bounding box, in mm.
/// Axes are reported in canonical order: right-left / anterior-posterior /
/// superior-inferior.
pub fn bounding_extents(mask: &BinaryMask) -> Result<[f64; 3]> {
    let [nx, ny, nz] = mask.dims();
    let mut lo = [usize::MAX; 3];
    let mut hi = [0usize; 3];
    let mut any = false;
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                if mask.get(i, j, k) {
                    any = true;
                    let p = [i, j, k];
                    for axis in 0..3 {
                        lo[axis] = lo[axis].min(p[axis]);
                        hi[axis] = hi[axis].max(p[axis]);
                    }
                }
            }
        }
    }
    if !any {
        return Err(Error::EmptyMask("bounding_extents"));
    }
    let spacing = mask.geometry().spacing();
    Ok([
        (hi[0] - lo[0] + 1) as f64 * spacing[0],
        (hi[1] - lo[1] + 1) as f64 * spacing[1],
        (hi[2] - lo[2] + 1) as f64 * spacing[2],
    ])
}

/// Boundary voxels: mask voxels with at least one of the 6 face neighbors
/// outside the mask (voxels beyond the grid count as outside).
pub fn boundary_voxels(mask: &BinaryMask) -> Vec<[usize; 3]> {
    let [nx, ny, nz] = mask.dims();
    let mut out = Vec::new();
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                if !mask.get(i, j, k) {
                    continue;
                }
                let exposed = [[1i64, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]]
                    .iter()
                    .any(|d| !mask.get_or_zero(i as i64 + d[0], j as i64 + d[1], k as i64 + d[2]));
                if exposed {
                    out.push([i, j, k]);
                }
            }
        }
    }
    out
}

/// Exact squared Euclidean distance transform (lower envelope of parabolas),
/// one axis at a time, with per-axis spacing in mm. `f` holds 0 at seeds and
/// +inf elsewhere; returns squared mm distances to the nearest seed.
fn edt_squared(dims: [usize; 3], spacing: [f64; 3], mut f: Vec<f64>) -> Vec<f64> {
    let [nx, ny, _] = dims;
    let strides = [1usize, nx, nx * ny];
    for axis in 0..3 {
        let n = dims[axis];
        if n == 1 {
            continue;
        }
        let stride = strides[axis];
        let h = spacing[axis];
        let (da, db) = match axis {
            0 => (1, 2),
            1 => (0, 2),
            _ => (0, 1),
        };
        let mut line = vec![0f64; n];
        let mut d = vec![0f64; n];
        let mut v = vec![0usize; n];
        let mut z = vec![0f64; n + 1];
        for b in 0..dims[db] {
            for a in 0..dims[da] {
                let mut idx3 = [0usize; 3];
                idx3[da] = a;
                idx3[db] = b;
                let base = idx3[0] + nx * idx3[1] + nx * ny * idx3[2];
                for q in 0..n {
                    line[q] = f[base + q * stride];
                }
                // 1D lower envelope over the finite parabolas only; a line
                // with no finite entries stays at infinity.
                let mut k = 0usize;
                let mut started = false;
                for q in 0..n {
                    if !line[q].is_finite() {
                        continue;
                    }
                    if !started {
                        started = true;
                        v[0] = q;
                        z[0] = f64::NEG_INFINITY;
                        z[1] = f64::INFINITY;
                        continue;
                    }
                    let xq = q as f64 * h;
                    loop {
                        let xv = v[k] as f64 * h;
                        let s = ((line[q] + xq * xq) - (line[v[k]] + xv * xv))
                            / (2.0 * xq - 2.0 * xv);
                        if s <= z[k] {
                            k -= 1;
                        } else {
                            k += 1;
                            v[k] = q;
                            z[k] = s;
                            z[k + 1] = f64::INFINITY;
                            break;
                        }
                    }
                }
                if !started {
                    continue;
                }
                let mut k = 0usize;
                for q in 0..n {
                    let xq = q as f64 * h;
                    while z[k + 1] < xq {
                        k += 1;
                    }
                    let xv = v[k] as f64 * h;
                    d[q] = (xq - xv) * (xq - xv) + line[v[k]];
                }
                for q in 0..n {
                    f[base + q * stride] = d[q];
                }
            }
        }
    }
    f
}

/// Distances (mm) from each point of `from` to the nearest seed in `seeds`,
/// computed on the voxel grid.
fn directed_distances(
    dims: [usize; 3],
    spacing: [f64; 3],
    from: &[[usize; 3]],
    seeds: &[[usize; 3]],
) -> Vec<f64> {
    let [nx, ny, _] = dims;
    let n = dims[0] * dims[1] * dims[2];
    let mut f = vec![f64::INFINITY; n];
    for s in seeds {
        f[s[0] + nx * s[1] + nx * ny * s[2]] = 0.0;
    }
    let sq = edt_squared(dims, spacing, f);
    from.iter().map(|p| sq[p[0] + nx * p[1] + nx * ny * p[2]].sqrt()).collect()
}

/// Pooled directed boundary distances of both masks, in mm.
fn pooled_surface_distances(pred: &BinaryMask, reference: &BinaryMask) -> Result<(Vec<f64>, usize, usize)> {
    require_same_geometry(pred, reference, "prediction", "reference")?;
    let bp = boundary_voxels(pred);
    let br = boundary_voxels(reference);
    if bp.is_empty() {
        return Err(Error::EmptyMask("surface distance (prediction)"));
    }
    if br.is_empty() {
        return Err(Error::EmptyMask("surface distance (reference)"));
    }
    let dims = pred.dims();
    let spacing = pred.geometry().spacing();
    let mut pooled = directed_distances(dims, spacing, &bp, &br);
    pooled.extend(directed_distances(dims, spacing, &br, &bp));
    let (np, nr) = (bp.len(), br.len());
    Ok((pooled, np, nr))
}

/// Linear-interpolated quantile of a sorted sample.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let frac = pos - lo as f64;
    if lo + 1 >= n {
        sorted[n - 1]
    } else {
        sorted[lo] * (1.0 - frac) + sorted[lo + 1] * frac
    }
}

/// 95th percentile of the pooled directed boundary distances, in mm.
pub fn hausdorff95(pred: &BinaryMask, reference: &BinaryMask) -> Result<f64> {
    let (mut pooled, _, _) = pooled_surface_distances(pred, reference)?;
    pooled.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(quantile_sorted(&pooled, 0.95))
}

/// Mean of all directed boundary distances, in mm.
pub fn mean_surface_distance(pred: &BinaryMask, reference: &BinaryMask) -> Result<f64> {
    let (pooled, np, nr) = pooled_surface_distances(pred, reference)?;
    Ok(pooled.iter().sum::<f64>() / (np + nr) as f64)
}

/// Assemble the full report for one (prediction, reference) pair.
pub fn evaluate_pair(pred: &BinaryMask, reference: &BinaryMask) -> Result<MetricReport> {
    let c = confusion_counts(pred, reference)?;
    Ok(MetricReport {
        dice: dice_from_counts(&c),
        iou: iou(pred, reference)?,
        tpr: tpr(pred, reference)?,
        fdr: fdr(pred, reference)?,
        hd95_mm: hausdorff95(pred, reference)?,
        msd_mm: mean_surface_distance(pred, reference)?,
        volumetric_similarity: volumetric_similarity(pred, reference)?,
        volume_pred_mm3: volume_mm3(pred),
        volume_ref_mm3: volume_mm3(reference),
        extents_pred_mm: bounding_extents(pred)?,
        extents_ref_mm: bounding_extents(reference)?,
    })
}
