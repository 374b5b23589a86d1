//! Probabilistic-atlas construction, test-time FoV cropping, and the
//! ground-truth-free QC score.
//!
//! Registrations are consumed as external inputs: a subject-to-template
//! affine (4x4 text file) optionally composed with a dense displacement
//! field on the template grid.

use crate::error::{Error, Result};
use crate::geometry::Geometry;
use crate::metrics::dice;
use crate::resample::{resample, Interp};
use crate::volume::{BinaryMask, Side, Volume};
use nalgebra::{Matrix4, Vector4};
use std::path::Path;

/// Per-voxel claustrum probability in template space.
#[derive(Debug, Clone)]
pub struct ProbAtlas {
    volume: Volume<f32>,
    side: Side,
    source_count: usize,
}

impl ProbAtlas {
    pub fn new(volume: Volume<f32>, side: Side, source_count: usize) -> Result<Self> {
        let (lo, hi) = volume.min_max();
        if lo < 0.0 || hi > 1.0 {
            return Err(Error::InvalidInput(format!("atlas values outside [0,1]: [{lo}, {hi}]")));
        }
        Ok(Self { volume, side, source_count })
    }

    pub fn volume(&self) -> &Volume<f32> {
        &self.volume
    }

    pub fn side(&self) -> Side {
        self.side
    }

    pub fn source_count(&self) -> usize {
        self.source_count
    }

    /// The opposite hemisphere's atlas is the left-right mirror image.
    pub fn flipped(&self) -> Result<Self> {
        Ok(Self {
            volume: self.volume.flip_lr()?,
            side: match self.side {
                Side::Left => Side::Right,
                Side::Right => Side::Left,
            },
            source_count: self.source_count,
        })
    }
}

/// N binary claustrum labels resampled into template space, sorted by case id.
#[derive(Debug, Clone)]
pub struct ReferenceLabelSet {
    labels: Vec<(String, BinaryMask)>,
}

impl ReferenceLabelSet {
    pub fn new(mut labels: Vec<(String, BinaryMask)>) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::TooFewReferences { needed: 1, got: 0 });
        }
        labels.sort_by(|a, b| a.0.cmp(&b.0));
        let (first_id, first) = &labels[0];
        for (id, mask) in &labels {
            if !mask.geometry().approx_eq(first.geometry(), 1e-6) {
                return Err(Error::GeometryMismatch {
                    left: format!("reference {first_id}"),
                    right: format!("reference {id}"),
                });
            }
            if mask.is_empty_mask() {
                return Err(Error::EmptyMask("reference label set"));
            }
        }
        Ok(Self { labels })
    }

    /// Load every .nii/.nii.gz in a directory; case id = file stem.
    pub fn from_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let mut labels = Vec::new();
        let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
        for entry in entries {
            let entry = entry.map_err(|e| Error::io(dir, e))?;
            let path = entry.path();
            let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("").to_string();
            if !(name.ends_with(".nii") || name.ends_with(".nii.gz")) {
                continue;
            }
            let id = name.trim_end_matches(".nii.gz").trim_end_matches(".nii").to_string();
            let mask = crate::nifti::read_labels(&path)?.map(|c| c != 0);
            labels.push((id, mask));
        }
        Self::new(labels)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &BinaryMask)> {
        self.labels.iter().map(|(id, m)| (id.as_str(), m))
    }

    pub fn geometry(&self) -> &Geometry {
        self.labels[0].1.geometry()
    }
}

/// Subject-to-template transform: affine plus optional dense displacement
/// field sampled on the template grid (world-mm vectors).
#[derive(Debug, Clone)]
pub struct ExternalTransform {
    affine: Matrix4<f64>,
    warp: Option<(Geometry, Vec<[f32; 3]>)>,
}

impl ExternalTransform {
    pub fn new(affine: Matrix4<f64>, warp: Option<(Geometry, Vec<[f32; 3]>)>) -> Result<Self> {
        if affine.fixed_view::<3, 3>(0, 0).determinant() == 0.0 {
            return Err(Error::SingularAffine);
        }
        Ok(Self { affine, warp })
    }

    pub fn identity() -> Self {
        Self { affine: Matrix4::identity(), warp: None }
    }

    pub fn from_files(affine_path: impl AsRef<Path>, warp_path: Option<&Path>) -> Result<Self> {
        let affine = crate::nifti::read_affine_text(affine_path)?;
        let warp = match warp_path {
            Some(p) => Some(crate::nifti::read_vector_volume(p)?),
            None => None,
        };
        Self::new(affine, warp)
    }

    /// Map a subject world point into template world coordinates.
    pub fn map(&self, subject_world: [f64; 3]) -> [f64; 3] {
        let p = self.affine
            * Vector4::new(subject_world[0], subject_world[1], subject_world[2], 1.0);
        let mut out = [p[0], p[1], p[2]];
        if let Some((geom, disp)) = &self.warp {
            if let Ok(v) = geom.world_to_voxel(out) {
                let d = sample_vec_trilinear(disp, geom.dims(), v);
                out[0] += d[0];
                out[1] += d[1];
                out[2] += d[2];
            }
        }
        out
    }
}

fn sample_vec_trilinear(vecs: &[[f32; 3]], dims: [usize; 3], pos: [f64; 3]) -> [f64; 3] {
    let [nx, ny, nz] = dims;
    let f = [pos[0].floor(), pos[1].floor(), pos[2].floor()];
    let t = [pos[0] - f[0], pos[1] - f[1], pos[2] - f[2]];
    let (x0, y0, z0) = (f[0] as i64, f[1] as i64, f[2] as i64);
    let mut acc = [0.0f64; 3];
    for dz in 0..2i64 {
        let wz = if dz == 0 { 1.0 - t[2] } else { t[2] };
        for dy in 0..2i64 {
            let wy = if dy == 0 { 1.0 - t[1] } else { t[1] };
            for dx in 0..2i64 {
                let wx = if dx == 0 { 1.0 - t[0] } else { t[0] };
                let w = wx * wy * wz;
                if w == 0.0 {
                    continue;
                }
                let (x, y, z) = (x0 + dx, y0 + dy, z0 + dz);
                if x < 0 || y < 0 || z < 0 || x >= nx as i64 || y >= ny as i64 || z >= nz as i64 {
                    continue;
                }
                let idx = x as usize + nx * (y as usize + ny * z as usize);
                for c in 0..3 {
                    acc[c] += w * vecs[idx][c] as f64;
                }
            }
        }
    }
    acc
}

/// Voxel-wise mean of the aligned binary labels.
pub fn build_atlas(refs: &ReferenceLabelSet, side: Side) -> Result<ProbAtlas> {
    let n = refs.len();
    let geometry = refs.geometry().clone();
    let mut acc = vec![0u32; geometry.num_voxels()];
    for (_, mask) in refs.iter() {
        for (a, &m) in acc.iter_mut().zip(mask.data()) {
            if m {
                *a += 1;
            }
        }
    }
    let data: Vec<f32> = acc.into_iter().map(|c| c as f32 / n as f32).collect();
    ProbAtlas::new(Volume::new(geometry, data)?, side, n)
}

/// FoV cropping options; defaults follow the test-time protocol (60 mm cube,
/// 0.35 mm isotropic, dims padded to a multiple of 16 for the 5-level U-Net).
#[derive(Debug, Clone)]
pub struct CropFovOptions {
    pub cube_mm: f64,
    pub spacing_mm: f64,
    pub dims_multiple: usize,
    pub threshold: f32,
}

impl Default for CropFovOptions {
    fn default() -> Self {
        Self { cube_mm: 60.0, spacing_mm: 0.35, dims_multiple: 16, threshold: 0.001 }
    }
}

impl CropFovOptions {
    pub fn output_dim(&self) -> usize {
        let raw = self.cube_mm / self.spacing_mm;
        let m = self.dims_multiple.max(1) as f64;
        ((raw / m).ceil() * m) as usize
    }
}

/// Map the atlas into subject space through the transform, threshold it, and
/// crop a cube around the thresholded region's centroid, resampled to
/// isotropic model resolution. For the left hemisphere the cube is
/// left-right reversed before return, matching how the model was trained.
pub fn crop_fov(
    image: &Volume<f32>,
    atlas: &ProbAtlas,
    transform: &ExternalTransform,
    side: Side,
    opts: &CropFovOptions,
) -> Result<Volume<f32>> {
    if atlas.side() != side {
        return Err(Error::AtlasSideMismatch { atlas: atlas.side(), requested: side });
    }
    let atlas_vol = atlas.volume();
    let atlas_w2v = atlas_vol.geometry().world2vox()?;
    let [nx, ny, nz] = image.dims();
    let mut acc = [0f64; 3];
    let mut count = 0usize;
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                let subj_w = image.geometry().voxel_to_world([i as f64, j as f64, k as f64]);
                let tpl_w = transform.map(subj_w);
                let p = atlas_w2v * Vector4::new(tpl_w[0], tpl_w[1], tpl_w[2], 1.0);
                let value = trilinear_f32(atlas_vol, [p[0], p[1], p[2]]);
                if value >= opts.threshold as f64 {
                    acc[0] += subj_w[0];
                    acc[1] += subj_w[1];
                    acc[2] += subj_w[2];
                    count += 1;
                }
            }
        }
    }
    if count == 0 {
        return Err(Error::EmptyAtlasRegion);
    }
    let centroid = [acc[0] / count as f64, acc[1] / count as f64, acc[2] / count as f64];
    let dim = opts.output_dim();
    let spacing = [opts.spacing_mm; 3];
    let origin = [
        centroid[0] - opts.spacing_mm * (dim - 1) as f64 / 2.0,
        centroid[1] - opts.spacing_mm * (dim - 1) as f64 / 2.0,
        centroid[2] - opts.spacing_mm * (dim - 1) as f64 / 2.0,
    ];
    let target = Geometry::axis_aligned([dim, dim, dim], spacing, origin)?;
    let cube = resample(image, &target, Interp::Trilinear)?;
    match side {
        Side::Right => Ok(cube),
        Side::Left => cube.flip_lr(),
    }
}

fn trilinear_f32(v: &Volume<f32>, s: [f64; 3]) -> f64 {
    let f = [s[0].floor(), s[1].floor(), s[2].floor()];
    let t = [s[0] - f[0], s[1] - f[1], s[2] - f[2]];
    let (x0, y0, z0) = (f[0] as i64, f[1] as i64, f[2] as i64);
    let mut acc = 0.0f64;
    for dz in 0..2i64 {
        let wz = if dz == 0 { 1.0 - t[2] } else { t[2] };
        for dy in 0..2i64 {
            let wy = if dy == 0 { 1.0 - t[1] } else { t[1] };
            for dx in 0..2i64 {
                let wx = if dx == 0 { 1.0 - t[0] } else { t[0] };
                let w = wx * wy * wz;
                if w != 0.0 {
                    acc += w * v.get_or_zero(x0 + dx, y0 + dy, z0 + dz) as f64;
                }
            }
        }
    }
    acc
}

/// Binarize a template-space soft segmentation at 0.5 and return the maximum
/// Dice against the reference set with the winning case id (ties go to the
/// lowest id).
pub fn qc_score(seg_in_template: &Volume<f32>, refs: &ReferenceLabelSet) -> Result<(f64, String)> {
    let seg = seg_in_template.map(|v| v >= 0.5);
    if seg.is_empty_mask() {
        return Err(Error::EmptySegmentation);
    }
    let mut best: Option<(f64, String)> = None;
    for (id, mask) in refs.iter() {
        let d = dice(&seg, mask)?;
        let better = match &best {
            None => true,
            Some((score, _)) => d > *score,
        };
        if better {
            best = Some((d, id.to_string()));
        }
    }
    Ok(best.expect("reference set is nonempty"))
}

/// For each reference case, the maximum Dice against the other N-1 labels:
/// the expected range of satisfactory QC scores.
pub fn reference_qc_distribution(refs: &ReferenceLabelSet) -> Result<Vec<(String, f64)>> {
    if refs.len() < 2 {
        return Err(Error::TooFewReferences { needed: 2, got: refs.len() });
    }
    let mut out = Vec::with_capacity(refs.len());
    for (id, mask) in refs.iter() {
        let mut best = f64::NEG_INFINITY;
        for (other_id, other) in refs.iter() {
            if other_id == id {
                continue;
            }
            best = best.max(dice(mask, other)?);
        }
        out.push((id.to_string(), best));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geom(d: usize) -> Geometry {
        Geometry::axis_aligned([d, d, d], [1.0; 3], [0.0; 3]).unwrap()
    }

    fn ball(d: usize, center: [f64; 3], radius: f64) -> BinaryMask {
        Volume::from_fn(geom(d), |i, j, k| {
            let dx = i as f64 - center[0];
            let dy = j as f64 - center[1];
            let dz = k as f64 - center[2];
            dx * dx + dy * dy + dz * dz <= radius * radius
        })
    }

    fn refs_3() -> ReferenceLabelSet {
        ReferenceLabelSet::new(vec![
            ("case_a".into(), ball(16, [5.0, 5.0, 8.0], 4.0)),
            ("case_b".into(), ball(16, [11.0, 10.0, 8.0], 4.0)),
            ("case_c".into(), ball(16, [4.0, 12.0, 6.0], 3.0)),
        ])
        .unwrap()
    }

    #[test]
    fn single_label_atlas_is_that_label() {
        let refs =
            ReferenceLabelSet::new(vec![("only".into(), ball(12, [6.0; 3], 3.0))]).unwrap();
        let atlas = build_atlas(&refs, Side::Right).unwrap();
        assert!(atlas.volume().data().iter().all(|&v| v == 0.0 || v == 1.0));
        assert_eq!(atlas.source_count(), 1);
    }

    #[test]
    fn two_disjoint_labels_give_halves() {
        let a = ball(16, [4.0, 8.0, 8.0], 2.0);
        let b = ball(16, [12.0, 8.0, 8.0], 2.0);
        let refs = ReferenceLabelSet::new(vec![("a".into(), a), ("b".into(), b)]).unwrap();
        let atlas = build_atlas(&refs, Side::Right).unwrap();
        assert!(atlas.volume().data().iter().all(|&v| v == 0.0 || v == 0.5));
    }

    #[test]
    fn atlas_counts_are_exact() {
        let refs = refs_3();
        let atlas = build_atlas(&refs, Side::Right).unwrap();
        let n = atlas.source_count() as f64;
        for &v in atlas.volume().data() {
            let scaled = v as f64 * n;
            assert!((scaled - scaled.round()).abs() < 1e-6);
        }
        // oracle: accumulate by hand
        let mut acc = vec![0u32; 16 * 16 * 16];
        for (_, m) in refs.iter() {
            for (a, &b) in acc.iter_mut().zip(m.data()) {
                *a += b as u32;
            }
        }
        for (&v, &c) in atlas.volume().data().iter().zip(&acc) {
            assert!((v as f64 - c as f64 / 3.0).abs() < 1e-6);
        }
    }

    #[test]
    fn qc_of_exact_reference_is_one() {
        let refs = refs_3();
        let seg = refs.iter().nth(1).unwrap().1.map(|b| if b { 1.0f32 } else { 0.0 });
        let (score, id) = qc_score(&seg, &refs).unwrap();
        assert_eq!(score, 1.0);
        assert_eq!(id, "case_b");
    }

    #[test]
    fn qc_of_disjoint_segmentation_is_zero() {
        let refs = refs_3();
        let seg: Volume<f32> = Volume::from_fn(geom(16), |i, j, k| {
            if i < 2 && j < 2 && k < 2 { 1.0 } else { 0.0 }
        });
        let (score, _) = qc_score(&seg, &refs).unwrap();
        assert_eq!(score, 0.0);
    }

    #[test]
    fn qc_empty_segmentation_is_error() {
        let refs = refs_3();
        let seg: Volume<f32> = Volume::filled(geom(16), 0.2);
        assert!(matches!(qc_score(&seg, &refs), Err(Error::EmptySegmentation)));
    }

    #[test]
    fn qc_of_eroded_reference_matches_direct_dice() {
        let refs = refs_3();
        // erode case_a by one voxel (6-neighborhood)
        let (id, mask) = refs.iter().next().unwrap();
        assert_eq!(id, "case_a");
        let eroded: BinaryMask = Volume::from_fn(geom(16), |i, j, k| {
            mask.get(i, j, k)
                && [[1i64, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]]
                    .iter()
                    .all(|d| mask.get_or_zero(i as i64 + d[0], j as i64 + d[1], k as i64 + d[2]))
        });
        let expect = dice(&eroded, mask).unwrap();
        let seg = eroded.map(|b| if b { 1.0f32 } else { 0.0 });
        let (score, best) = qc_score(&seg, &refs).unwrap();
        assert_eq!(best, "case_a");
        assert!((score - expect).abs() < 1e-12);
    }

    #[test]
    fn reference_distribution_matches_pairwise_oracle() {
        let refs = refs_3();
        let dist = reference_qc_distribution(&refs).unwrap();
        let masks: Vec<(&str, &BinaryMask)> = refs.iter().collect();
        for (row, (id, score)) in dist.iter().enumerate() {
            assert_eq!(id, masks[row].0);
            let mut best = f64::NEG_INFINITY;
            for (col, (_, other)) in masks.iter().enumerate() {
                if col != row {
                    best = best.max(dice(masks[row].1, other).unwrap());
                }
            }
            assert_eq!(*score, best);
        }
    }

    #[test]
    fn identical_pair_distribution_is_ones() {
        let m = ball(12, [6.0; 3], 3.0);
        let refs =
            ReferenceLabelSet::new(vec![("a".into(), m.clone()), ("b".into(), m)]).unwrap();
        let dist = reference_qc_distribution(&refs).unwrap();
        assert!(dist.iter().all(|(_, s)| *s == 1.0));
    }

    #[test]
    fn distribution_needs_two_cases() {
        let refs = ReferenceLabelSet::new(vec![("a".into(), ball(8, [4.0; 3], 2.0))]).unwrap();
        assert!(matches!(
            reference_qc_distribution(&refs),
            Err(Error::TooFewReferences { needed: 2, got: 1 })
        ));
    }

    #[test]
    fn qc_self_excluded_equals_distribution_entry() {
        let refs = refs_3();
        let dist = reference_qc_distribution(&refs).unwrap();
        for (k, (id, expected)) in dist.iter().enumerate() {
            let others: Vec<(String, BinaryMask)> = refs
                .iter()
                .filter(|(oid, _)| oid != id)
                .map(|(oid, m)| (oid.to_string(), m.clone()))
                .collect();
            let others = ReferenceLabelSet::new(others).unwrap();
            let seg = refs
                .iter()
                .nth(k)
                .unwrap()
                .1
                .map(|b| if b { 1.0f32 } else { 0.0 });
            let (score, _) = qc_score(&seg, &others).unwrap();
            assert_eq!(score, *expected);
        }
    }

    #[test]
    fn crop_fov_output_dims_and_centering() {
        let g = Geometry::axis_aligned([80, 80, 80], [1.0; 3], [0.0; 3]).unwrap();
        let image = Volume::from_fn(g, |i, j, k| (i + j + k) as f32);
        // atlas directly in subject space (identity transform), blob at (30,40,50)
        let atlas_mask = ball(80, [30.0, 40.0, 50.0], 5.0);
        let atlas_vol = atlas_mask.map(|b| if b { 1.0f32 } else { 0.0 });
        let atlas = ProbAtlas::new(atlas_vol, Side::Right, 1).unwrap();
        let opts = CropFovOptions::default();
        assert_eq!(opts.output_dim(), 176);
        let fov =
            crop_fov(&image, &atlas, &ExternalTransform::identity(), Side::Right, &opts).unwrap();
        assert_eq!(fov.dims(), [176, 176, 176]);
        // cube center sits at the atlas centroid
        let center = fov.geometry().center_world();
        assert!((center[0] - 30.0).abs() < 0.5, "{center:?}");
        assert!((center[1] - 40.0).abs() < 0.5);
        assert!((center[2] - 50.0).abs() < 0.5);
    }

    #[test]
    fn crop_fov_left_commutes_with_flip() {
        let g = Geometry::axis_aligned([60, 60, 60], [1.0; 3], [0.0; 3]).unwrap();
        let image = Volume::from_fn(g, |i, j, k| ((i * 3 + j * 7 + k) % 97) as f32);
        let atlas_r = ProbAtlas::new(
            ball(60, [40.0, 30.0, 30.0], 4.0).map(|b| if b { 1.0f32 } else { 0.0 }),
            Side::Right,
            1,
        )
        .unwrap();
        let atlas_l = atlas_r.flipped().unwrap();
        let opts = CropFovOptions { cube_mm: 24.0, spacing_mm: 1.0, dims_multiple: 4, threshold: 0.001 };
        // left-side crop of the image equals flipped right-side crop of the
        // pre-flipped image
        let left = crop_fov(&image, &atlas_l, &ExternalTransform::identity(), Side::Left, &opts)
            .unwrap();
        let flipped_img = image.flip_lr().unwrap();
        let right = crop_fov(
            &flipped_img,
            &atlas_l.flipped().unwrap(),
            &ExternalTransform::identity(),
            Side::Right,
            &opts,
        )
        .unwrap();
        assert_eq!(left.data(), right.data());
    }

    #[test]
    fn empty_thresholded_region_is_registration_failure() {
        let g = geom(20);
        let image: Volume<f32> = Volume::filled(g.clone(), 1.0);
        let atlas = ProbAtlas::new(Volume::filled(g, 0.0f32), Side::Right, 1).unwrap();
        assert!(matches!(
            crop_fov(
                &image,
                &atlas,
                &ExternalTransform::identity(),
                Side::Right,
                &CropFovOptions::default()
            ),
            Err(Error::EmptyAtlasRegion)
        ));
    }

    #[test]
    fn atlas_side_mismatch_rejected() {
        let g = geom(10);
        let image: Volume<f32> = Volume::filled(g.clone(), 1.0);
        let atlas = ProbAtlas::new(Volume::filled(g, 0.5f32), Side::Right, 1).unwrap();
        assert!(matches!(
            crop_fov(
                &image,
                &atlas,
                &ExternalTransform::identity(),
                Side::Left,
                &CropFovOptions::default()
            ),
            Err(Error::AtlasSideMismatch { .. })
        ));
    }
}
