//! Whole-FoV training label construction: superimpose a claustrum mask on a
//! context segmentation, force a white-matter shell around the claustrum,
//! and cut the training FoV around the claustrum centroid.

use crate::config::KvFile;
use crate::error::{Error, Result};
use crate::geometry::Geometry;
use crate::resample::resample_labels;
use crate::volume::{require_same_geometry, BinaryMask, LabelVolume, Side, Volume};
use std::collections::BTreeMap;
use std::path::Path;

/// Structure-name to label-code table with the two designated codes every
/// pipeline stage needs.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize)]
pub struct LabelScheme {
    codes: BTreeMap<String, u32>,
    claustrum: u32,
    white_matter: u32,
}

pub const BACKGROUND_CODE: u32 = 0;

impl LabelScheme {
    pub fn new(codes: BTreeMap<String, u32>) -> Result<Self> {
        let mut seen = std::collections::BTreeSet::new();
        for (name, &code) in &codes {
            if !seen.insert(code) {
                return Err(Error::InvalidScheme(format!("duplicate code {code} (at \"{name}\")")));
            }
        }
        let get = |name: &str| {
            codes
                .get(name)
                .copied()
                .ok_or_else(|| Error::InvalidScheme(format!("missing required structure \"{name}\"")))
        };
        let claustrum = get("claustrum")?;
        let white_matter = get("white_matter")?;
        let background = get("background")?;
        if background != BACKGROUND_CODE {
            return Err(Error::InvalidScheme(format!("background must be code 0, got {background}")));
        }
        Ok(Self { codes, claustrum, white_matter })
    }

    /// Every key in the file is a structure name; claustrum, white_matter and
    /// background (= 0) are required.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let mut kv = KvFile::parse(path)?;
        let mut codes = BTreeMap::new();
        for (name, value) in kv.drain() {
            let code: u32 = value
                .parse()
                .map_err(|_| Error::InvalidScheme(format!("\"{name}\": bad code \"{value}\"")))?;
            codes.insert(name, code);
        }
        kv.finish()?;
        Self::new(codes)
    }

    pub fn claustrum(&self) -> u32 {
        self.claustrum
    }

    pub fn white_matter(&self) -> u32 {
        self.white_matter
    }

    pub fn codes(&self) -> &BTreeMap<String, u32> {
        &self.codes
    }

    /// All codes in ascending order (class list for the U-Net).
    pub fn sorted_codes(&self) -> Vec<u32> {
        let mut v: Vec<u32> = self.codes.values().copied().collect();
        v.sort_unstable();
        v
    }

    pub fn contains_code(&self, code: u32) -> bool {
        self.codes.values().any(|&c| c == code)
    }
}

/// Superimpose the claustrum mask on the context segmentation: every mask
/// voxel takes the claustrum code, everything else is untouched.
pub fn merge_claustrum(
    context: &LabelVolume,
    claustrum: &BinaryMask,
    scheme: &LabelScheme,
) -> Result<LabelVolume> {
    require_same_geometry(context, claustrum, "context labels", "claustrum mask")?;
    let code = scheme.claustrum();
    let data: Vec<u32> = context
        .data()
        .iter()
        .zip(claustrum.data())
        .map(|(&ctx, &cla)| if cla { code } else { ctx })
        .collect();
    Volume::new(context.geometry().clone(), data)
}

/// Connectivity for the white-matter shell.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Adjacency {
    Faces6,
    Full26,
}

impl Adjacency {
    pub fn offsets(self) -> Vec<[i64; 3]> {
        match self {
            Adjacency::Faces6 => vec![
                [1, 0, 0],
                [-1, 0, 0],
                [0, 1, 0],
                [0, -1, 0],
                [0, 0, 1],
                [0, 0, -1],
            ],
            Adjacency::Full26 => {
                let mut v = Vec::with_capacity(26);
                for dz in -1..=1i64 {
                    for dy in -1..=1i64 {
                        for dx in -1..=1i64 {
                            if (dx, dy, dz) != (0, 0, 0) {
                                v.push([dx, dy, dz]);
                            }
                        }
                    }
                }
                v
            }
        }
    }
}

/// Force every non-claustrum voxel adjacent to the claustrum to white matter.
/// Claustrum voxels are untouched; applying twice changes nothing.
pub fn enforce_wm_shell(
    labels: &LabelVolume,
    scheme: &LabelScheme,
    adjacency: Adjacency,
) -> LabelVolume {
    let [nx, ny, nz] = labels.dims();
    let cla = scheme.claustrum();
    let wm = scheme.white_matter();
    let offsets = adjacency.offsets();
    let mut out = labels.clone();
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                if labels.get(i, j, k) == cla {
                    continue;
                }
                let touches = offsets.iter().any(|d| {
                    labels.get_or_zero(i as i64 + d[0], j as i64 + d[1], k as i64 + d[2]) == cla
                });
                if touches {
                    out.set(i, j, k, wm);
                }
            }
        }
    }
    out
}

/// Options for [`prepare_training_label`]; defaults follow the training
/// protocol (56 mm FoV, 0.35 mm isotropic, 6-connectivity shell).
#[derive(Debug, Clone)]
pub struct PrepareOptions {
    pub fov_mm: f64,
    pub spacing_mm: f64,
    pub adjacency: Adjacency,
}

impl Default for PrepareOptions {
    fn default() -> Self {
        Self { fov_mm: 56.0, spacing_mm: 0.35, adjacency: Adjacency::Faces6 }
    }
}

/// Build one whole-FoV training label map.
///
/// Left-hemisphere inputs are left-right reversed first so all training labels
/// sit on the right. Merge happens before the crop; the white-matter shell is
/// applied last, on the final grid, so no background voxel stays adjacent to
/// the claustrum in the output.
pub fn prepare_training_label(
    context: &LabelVolume,
    claustrum: &BinaryMask,
    scheme: &LabelScheme,
    hemisphere: Side,
    opts: &PrepareOptions,
) -> Result<LabelVolume> {
    if claustrum.is_empty_mask() {
        return Err(Error::EmptyClaustrumMask);
    }
    let (context, claustrum) = match hemisphere {
        Side::Right => (context.clone(), claustrum.clone()),
        Side::Left => (context.flip_lr()?, claustrum.flip_lr()?),
    };
    let merged = merge_claustrum(&context, &claustrum, scheme)?;
    let centroid = claustrum.centroid_world().expect("mask checked nonempty");
    let n = (opts.fov_mm / opts.spacing_mm).round().max(1.0) as usize;
    let spacing = [opts.spacing_mm; 3];
    let origin = [
        centroid[0] - opts.spacing_mm * (n - 1) as f64 / 2.0,
        centroid[1] - opts.spacing_mm * (n - 1) as f64 / 2.0,
        centroid[2] - opts.spacing_mm * (n - 1) as f64 / 2.0,
    ];
    let target = Geometry::axis_aligned([n, n, n], spacing, origin)?;
    let cropped = resample_labels(&merged, &target)?;
    Ok(enforce_wm_shell(&cropped, scheme, opts.adjacency))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Geometry;

    fn scheme() -> LabelScheme {
        LabelScheme::new(BTreeMap::from([
            ("background".into(), 0),
            ("claustrum".into(), 1),
            ("white_matter".into(), 2),
            ("putamen".into(), 3),
            ("cortex".into(), 4),
        ]))
        .unwrap()
    }

    fn unit_geom(d: usize) -> Geometry {
        Geometry::axis_aligned([d, d, d], [1.0; 3], [0.0; 3]).unwrap()
    }

    #[test]
    fn empty_mask_merge_is_identity() {
        let g = unit_geom(4);
        let ctx = Volume::from_fn(g.clone(), |i, _, _| if i < 2 { 2u32 } else { 3 });
        let mask = Volume::filled(g, false);
        let merged = merge_claustrum(&ctx, &mask, &scheme()).unwrap();
        assert_eq!(merged, ctx);
    }

    #[test]
    fn mask_overwrites_putamen() {
        let g = unit_geom(4);
        let ctx = Volume::filled(g.clone(), 3u32); // all putamen
        let mut mask = Volume::filled(g, false);
        mask.set(1, 1, 1, true);
        mask.set(2, 2, 2, true);
        let merged = merge_claustrum(&ctx, &mask, &scheme()).unwrap();
        assert_eq!(merged.count_of(1), mask.count());
        assert_eq!(merged.get(1, 1, 1), 1);
        assert_eq!(merged.get(0, 0, 0), 3);
    }

    #[test]
    fn geometry_mismatch_rejected() {
        let ctx = Volume::filled(unit_geom(4), 2u32);
        let mask = Volume::filled(unit_geom(5), false);
        assert!(matches!(
            merge_claustrum(&ctx, &mask, &scheme()),
            Err(Error::GeometryMismatch { .. })
        ));
    }

    #[test]
    fn shell_wraps_single_voxel() {
        let g = unit_geom(5);
        let mut labels = Volume::filled(g, 3u32); // putamen block
        labels.set(2, 2, 2, 1);
        let out = enforce_wm_shell(&labels, &scheme(), Adjacency::Faces6);
        assert_eq!(out.get(2, 2, 2), 1);
        for d in Adjacency::Faces6.offsets() {
            assert_eq!(
                out.get((2 + d[0]) as usize, (2 + d[1]) as usize, (2 + d[2]) as usize),
                2
            );
        }
        // diagonal neighbor untouched under 6-connectivity
        assert_eq!(out.get(1, 1, 1), 3);
        assert_eq!(out.count_of(1), 1);
    }

    #[test]
    fn shell_is_idempotent() {
        let g = unit_geom(8);
        let labels = Volume::from_fn(g, |i, j, k| ((i * 7 + j * 3 + k) % 5) as u32);
        let once = enforce_wm_shell(&labels, &scheme(), Adjacency::Faces6);
        let twice = enforce_wm_shell(&once, &scheme(), Adjacency::Faces6);
        assert_eq!(once, twice);
    }

    #[test]
    fn shell_matches_bruteforce_neighbor_scan() {
        let g = unit_geom(9);
        let labels = Volume::from_fn(g.clone(), |i, j, k| ((i ^ j ^ k) % 5) as u32);
        let out = enforce_wm_shell(&labels, &scheme(), Adjacency::Faces6);
        // brute force: triple loop over all voxels and all 6 neighbors
        for k in 0..9usize {
            for j in 0..9 {
                for i in 0..9 {
                    let v = labels.get(i, j, k);
                    let mut expect = v;
                    if v != 1 {
                        let mut adjacent = false;
                        for d in [[1i64, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]] {
                            if labels.get_or_zero(i as i64 + d[0], j as i64 + d[1], k as i64 + d[2]) == 1 {
                                adjacent = true;
                            }
                        }
                        if adjacent {
                            expect = 2;
                        }
                    }
                    assert_eq!(out.get(i, j, k), expect, "at ({i},{j},{k})");
                }
            }
        }
    }

    #[test]
    fn prepared_label_has_contract_dims_and_centering() {
        let g = Geometry::axis_aligned([64, 64, 64], [1.0; 3], [0.0; 3]).unwrap();
        let ctx = Volume::filled(g.clone(), 2u32);
        let mut mask = Volume::filled(g, false);
        for dz in 0..3usize {
            for dy in 0..3 {
                for dx in 0..3 {
                    mask.set(30 + dx, 30 + dy, 30 + dz, true);
                }
            }
        }
        let opts = PrepareOptions { fov_mm: 56.0, spacing_mm: 0.35, adjacency: Adjacency::Faces6 };
        let out = prepare_training_label(&ctx, &mask, &scheme(), Side::Right, &opts).unwrap();
        assert_eq!(out.dims(), [160, 160, 160]);
        let cla_mask = out.mask_of(1);
        let c = cla_mask.centroid_voxel().unwrap();
        for axis in 0..3 {
            assert!((c[axis] - 79.5).abs() <= 1.0, "centroid off center: {c:?}");
        }
        // background never touches claustrum after the shell
        assert_eq!(out.count_of(0), 0); // context was all WM here
    }

    #[test]
    fn left_processing_commutes_with_flip() {
        let g = Geometry::axis_aligned([40, 40, 40], [1.0; 3], [0.0; 3]).unwrap();
        let ctx = Volume::from_fn(g.clone(), |i, _, _| if i < 20 { 3u32 } else { 2 });
        let mut mask = Volume::filled(g, false);
        for dx in 0..2usize {
            for dy in 0..4 {
                for dz in 0..4 {
                    mask.set(8 + dx, 18 + dy, 18 + dz, true);
                }
            }
        }
        let opts = PrepareOptions { fov_mm: 20.0, spacing_mm: 1.0, adjacency: Adjacency::Faces6 };
        let left = prepare_training_label(&ctx, &mask, &scheme(), Side::Left, &opts).unwrap();
        let pre_flipped = prepare_training_label(
            &ctx.flip_lr().unwrap(),
            &mask.flip_lr().unwrap(),
            &scheme(),
            Side::Right,
            &opts,
        )
        .unwrap();
        assert_eq!(left.data(), pre_flipped.data());
    }

    #[test]
    fn empty_claustrum_rejected() {
        let g = unit_geom(8);
        let ctx = Volume::filled(g.clone(), 2u32);
        let mask = Volume::filled(g, false);
        assert!(matches!(
            prepare_training_label(&ctx, &mask, &scheme(), Side::Right, &PrepareOptions::default()),
            Err(Error::EmptyClaustrumMask)
        ));
    }

    #[test]
    fn scheme_requires_background_zero() {
        let result = LabelScheme::new(BTreeMap::from([
            ("background".into(), 5),
            ("claustrum".into(), 1),
            ("white_matter".into(), 2),
        ]));
        assert!(result.is_err());
    }
}
