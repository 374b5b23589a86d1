//! Procedural claustrum phantoms: a thin curved sheet between a putamen-like
//! ellipsoid and a cortex shell, embedded in white matter. Stands in for real
//! specimens in the desk-scale harnesses.

use crate::error::{Error, Result};
use crate::geometry::Geometry;
use crate::labels::LabelScheme;
use crate::resample::gaussian_smooth;
use crate::rng;
use crate::volume::{LabelVolume, Volume};
use rand::Rng;
use rand_distr::StandardNormal;
use std::collections::BTreeMap;

/// Geometric description of one phantom case.
#[derive(Debug, Clone, serde::Serialize)]
pub struct PhantomSpec {
    pub dims: [usize; 3],
    pub spacing_mm: f64,
    /// Mid-surface radius of the claustrum sheet, mm.
    pub sheet_radius_mm: f64,
    /// Sheet thickness in voxels (>= 1).
    pub thickness_vox: f64,
    /// Angular half-extent of the sheet around its outward axis, degrees.
    pub angular_extent_deg: f64,
    /// Ventral finger-like protrusions along the lower sheet edge.
    pub finger_count: usize,
    pub seed: u64,
}

impl PhantomSpec {
    /// Randomized case on a d^3 grid; geometry jitter derives from the seed.
    pub fn randomized(dims: usize, spacing_mm: f64, seed: u64) -> Self {
        let mut r = rng::stream(seed, rng::stage::PHANTOM);
        let extent = dims as f64 * spacing_mm;
        Self {
            dims: [dims; 3],
            spacing_mm,
            sheet_radius_mm: extent * r.gen_range(0.30..0.36),
            thickness_vox: r.gen_range(2.0..3.0),
            angular_extent_deg: r.gen_range(50.0..70.0),
            finger_count: r.gen_range(0..4),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.thickness_vox < 1.0 {
            return Err(Error::InvalidInput("sheet thickness must be >= 1 voxel".into()));
        }
        if self.dims.iter().any(|&d| d < 8) || self.spacing_mm <= 0.0 {
            return Err(Error::InvalidInput("degenerate phantom geometry".into()));
        }
        Ok(())
    }
}

/// Label codes used by phantom cases.
pub fn phantom_scheme() -> LabelScheme {
    LabelScheme::new(BTreeMap::from([
        ("background".into(), 0u32),
        ("claustrum".into(), 1),
        ("white_matter".into(), 2),
        ("putamen".into(), 3),
        ("cortex".into(), 4),
    ]))
    .expect("static scheme is valid")
}

pub const PHANTOM_CLAUSTRUM: u32 = 1;
pub const PHANTOM_WM: u32 = 2;
pub const PHANTOM_PUTAMEN: u32 = 3;
pub const PHANTOM_CORTEX: u32 = 4;

/// One phantom case: labels plus a fixed-contrast rendered image that stands
/// in for the subject's real scan.
#[derive(Debug, Clone)]
pub struct PhantomCase {
    pub spec: PhantomSpec,
    pub labels: LabelVolume,
    pub image: Volume<f32>,
}

/// Build the labels and the rendered "real" image for a spec. Deterministic
/// in the spec's seed.
pub fn make_phantom(spec: &PhantomSpec) -> Result<PhantomCase> {
    spec.validate()?;
    let mut r = rng::stream(spec.seed, rng::stage::PHANTOM);
    // consume the jitter draws that randomized() used, so direct specs and
    // randomized specs share a stream layout
    let _ = r.gen_range(0.0..1.0f64);
    let _ = r.gen_range(0.0..1.0f64);
    let _ = r.gen_range(0.0..1.0f64);
    let _ = r.gen_range(0..4u32);

    let [nx, ny, nz] = spec.dims;
    let geometry = Geometry::axis_aligned(spec.dims, [spec.spacing_mm; 3], [0.0; 3])?;
    let center = [
        (nx as f64 - 1.0) / 2.0 + r.gen_range(-1.5..1.5),
        (ny as f64 - 1.0) / 2.0 + r.gen_range(-1.5..1.5),
        (nz as f64 - 1.0) / 2.0 + r.gen_range(-1.5..1.5),
    ];
    let radius_vox = spec.sheet_radius_mm / spec.spacing_mm;
    let half_thick = spec.thickness_vox / 2.0;
    let cos_extent = spec.angular_extent_deg.to_radians().cos();
    // outward axis of the sheet: lateral (+x) with a small random tilt
    let tilt_y: f64 = r.gen_range(-0.2..0.2);
    let tilt_z: f64 = r.gen_range(-0.2..0.2);
    let axis_norm = (1.0 + tilt_y * tilt_y + tilt_z * tilt_z).sqrt();
    let axis = [1.0 / axis_norm, tilt_y / axis_norm, tilt_z / axis_norm];
    // putamen: ellipsoid just inside the sheet
    let put_center = [
        center[0] + axis[0] * radius_vox * 0.25,
        center[1] + axis[1] * radius_vox * 0.25,
        center[2] + axis[2] * radius_vox * 0.25,
    ];
    let put_semi = [
        radius_vox * r.gen_range(0.38..0.45),
        radius_vox * r.gen_range(0.48..0.58),
        radius_vox * r.gen_range(0.48..0.58),
    ];
    // finger azimuths along the ventral (-z) edge
    let finger_azimuths: Vec<f64> =
        (0..spec.finger_count).map(|_| r.gen_range(-0.9..0.9)).collect();
    let gap = half_thick.max(1.0) + 1.0; // WM gap beyond the sheet, voxels
    let cortex_thick = 3.0f64;

    let labels = Volume::from_fn(geometry.clone(), |i, j, k| {
        let d = [i as f64 - center[0], j as f64 - center[1], k as f64 - center[2]];
        let rr = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
        if rr < 1e-9 {
            return PHANTOM_WM;
        }
        let cos_angle = (d[0] * axis[0] + d[1] * axis[1] + d[2] * axis[2]) / rr;
        let in_window = cos_angle >= cos_extent;
        // ventral fingers extend the sheet outward in narrow azimuth bands
        let mut local_outer = radius_vox + half_thick;
        if in_window && d[2] < 0.0 {
            let az = d[1].atan2(d[0]);
            for &fa in &finger_azimuths {
                if (az - fa).abs() < 0.12 {
                    local_outer = radius_vox + half_thick + 2.0;
                }
            }
        }
        let pd = [
            (i as f64 - put_center[0]) / put_semi[0],
            (j as f64 - put_center[1]) / put_semi[1],
            (k as f64 - put_center[2]) / put_semi[2],
        ];
        let in_putamen = pd[0] * pd[0] + pd[1] * pd[1] + pd[2] * pd[2] <= 1.0;

        if rr < radius_vox - half_thick {
            if in_putamen {
                PHANTOM_PUTAMEN
            } else {
                PHANTOM_WM
            }
        } else if rr < local_outer {
            if in_window {
                PHANTOM_CLAUSTRUM
            } else {
                PHANTOM_WM
            }
        } else if rr < radius_vox + half_thick + gap {
            PHANTOM_WM
        } else if rr < radius_vox + half_thick + gap + cortex_thick {
            PHANTOM_CORTEX
        } else {
            0
        }
    });

    if labels.count_of(PHANTOM_CLAUSTRUM) == 0 {
        return Err(Error::InvalidInput("phantom spec produced an empty claustrum".into()));
    }

    // render the matching "real" scan: fixed per-label means, mild noise,
    // light smoothing, normalized to [0,1]
    let means: BTreeMap<u32, f64> = BTreeMap::from([
        (0u32, 15.0),
        (PHANTOM_CLAUSTRUM, 110.0),
        (PHANTOM_WM, 210.0),
        (PHANTOM_PUTAMEN, 140.0),
        (PHANTOM_CORTEX, 90.0),
    ]);
    let noisy: Vec<f32> = labels
        .data()
        .iter()
        .map(|code| {
            let z: f64 = r.sample(StandardNormal);
            (means[code] + 3.0 * z) as f32
        })
        .collect();
    let raw = Volume::new(geometry, noisy)?;
    let smoothed = gaussian_smooth(&raw, [spec.spacing_mm * 0.5; 3])?;
    let (lo, hi) = smoothed.min_max();
    let image = smoothed.map(|v| (v - lo) / (hi - lo));

    Ok(PhantomCase { spec: spec.clone(), labels, image })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labels::{enforce_wm_shell, Adjacency};

    #[test]
    fn same_seed_same_phantom() {
        let spec = PhantomSpec::randomized(32, 0.35, 5);
        let a = make_phantom(&spec).unwrap();
        let b = make_phantom(&spec).unwrap();
        assert_eq!(a.labels, b.labels);
        assert_eq!(a.image.data(), b.image.data());
    }

    #[test]
    fn claustrum_count_in_sanity_band() {
        for seed in 0..5 {
            let spec = PhantomSpec::randomized(64, 0.35, seed);
            let case = make_phantom(&spec).unwrap();
            let n = case.labels.count_of(PHANTOM_CLAUSTRUM);
            assert!((500..20000).contains(&n), "seed {seed}: claustrum count {n}");
        }
    }

    #[test]
    fn labels_satisfy_prep_invariants() {
        let spec = PhantomSpec::randomized(48, 0.35, 9);
        let case = make_phantom(&spec).unwrap();
        let scheme = phantom_scheme();
        // WM shell is insertable and leaves the claustrum untouched
        let shelled = enforce_wm_shell(&case.labels, &scheme, Adjacency::Faces6);
        assert_eq!(
            shelled.count_of(PHANTOM_CLAUSTRUM),
            case.labels.count_of(PHANTOM_CLAUSTRUM)
        );
        // codes stay inside the scheme
        for code in case.labels.unique_codes() {
            assert!(scheme.contains_code(code), "code {code}");
        }
        // image is normalized
        let (lo, hi) = case.image.min_max();
        assert_eq!(lo, 0.0);
        assert_eq!(hi, 1.0);
    }

    #[test]
    fn structures_are_disjoint_by_construction() {
        // every voxel has exactly one code by construction of from_fn; check
        // the sheet actually separates putamen from cortex: no putamen voxel
        // is 6-adjacent to cortex
        let spec = PhantomSpec::randomized(48, 0.35, 3);
        let case = make_phantom(&spec).unwrap();
        let l = &case.labels;
        let [nx, ny, nz] = l.dims();
        for k in 0..nz {
            for j in 0..ny {
                for i in 0..nx {
                    if l.get(i, j, k) != PHANTOM_PUTAMEN {
                        continue;
                    }
                    for d in [[1i64, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]] {
                        let n = l.get_or_zero(i as i64 + d[0], j as i64 + d[1], k as i64 + d[2]);
                        assert_ne!(n, PHANTOM_CORTEX, "putamen touches cortex at ({i},{j},{k})");
                    }
                }
            }
        }
    }

    #[test]
    fn zero_thickness_rejected() {
        let mut spec = PhantomSpec::randomized(32, 0.35, 1);
        spec.thickness_vox = 0.5;
        assert!(make_phantom(&spec).is_err());
    }
}
