//! Dense 3D volumes with world-space geometry.
//!
//! Three kinds share one generic container: intensity volumes
//! (`Volume<f32>`), integer-coded segmentations ([`LabelVolume`]) and
//! boolean masks ([`BinaryMask`]). Data is stored x-fastest. All operations
//! return new volumes; nothing mutates in place, so values can be shared
//! freely across threads.

use crate::error::{Error, Result};
use crate::geometry::Geometry;

/// Hemisphere designation used by flipping pipelines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
}

impl std::str::FromStr for Side {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "left" | "l" => Ok(Side::Left),
            "right" | "r" => Ok(Side::Right),
            other => Err(Error::InvalidInput(format!("unknown side \"{other}\" (use left|right)"))),
        }
    }
}

/// Element types storable in a [`Volume`].
pub trait Voxel: Copy + Default + PartialEq + Send + Sync + 'static {
    /// Padding value used outside the source footprint.
    fn zero() -> Self {
        Self::default()
    }
    /// Finiteness guard; only meaningful for floats.
    fn is_valid(&self) -> bool {
        true
    }
}

impl Voxel for f32 {
    fn is_valid(&self) -> bool {
        self.is_finite()
    }
}
impl Voxel for u32 {}
impl Voxel for bool {}

/// Integer-coded segmentation sharing [`Volume`] geometry.
pub type LabelVolume = Volume<u32>;
/// Single-structure membership mask.
pub type BinaryMask = Volume<bool>;

#[derive(Debug, Clone, PartialEq)]
pub struct Volume<T: Voxel> {
    geometry: Geometry,
    data: Vec<T>,
}

impl<T: Voxel> Volume<T> {
    /// Build a volume, checking length and (for floats) finiteness.
    pub fn new(geometry: Geometry, data: Vec<T>) -> Result<Self> {
        if data.len() != geometry.num_voxels() {
            return Err(Error::InvalidGeometry(format!(
                "data length {} != voxel count {}",
                data.len(),
                geometry.num_voxels()
            )));
        }
        let bad = data.iter().filter(|v| !v.is_valid()).count();
        if bad > 0 {
            return Err(Error::NonFiniteData(bad));
        }
        Ok(Self { geometry, data })
    }

    pub fn filled(geometry: Geometry, value: T) -> Self {
        let n = geometry.num_voxels();
        Self { geometry, data: vec![value; n] }
    }

    /// Build from a per-voxel function of (i, j, k).
    pub fn from_fn(geometry: Geometry, mut f: impl FnMut(usize, usize, usize) -> T) -> Self {
        let [nx, ny, nz] = geometry.dims();
        let mut data = Vec::with_capacity(geometry.num_voxels());
        for k in 0..nz {
            for j in 0..ny {
                for i in 0..nx {
                    data.push(f(i, j, k));
                }
            }
        }
        Self { geometry, data }
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn dims(&self) -> [usize; 3] {
        self.geometry.dims()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> T {
        self.data[self.geometry.index(i, j, k)]
    }

    /// Value at integer voxel coordinates, zero outside the grid.
    #[inline]
    pub fn get_or_zero(&self, i: i64, j: i64, k: i64) -> T {
        let [nx, ny, nz] = self.geometry.dims();
        if i < 0 || j < 0 || k < 0 || i >= nx as i64 || j >= ny as i64 || k >= nz as i64 {
            T::zero()
        } else {
            self.data[self.geometry.index(i as usize, j as usize, k as usize)]
        }
    }

    pub fn set(&mut self, i: usize, j: usize, k: usize, value: T) {
        let idx = self.geometry.index(i, j, k);
        self.data[idx] = value;
    }

    pub fn map<U: Voxel>(&self, f: impl Fn(T) -> U) -> Volume<U> {
        Volume { geometry: self.geometry.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    /// Mirror along the voxel axis running world left-right. Geometry is kept,
    /// so tissue world positions mirror about the grid's mid plane on that
    /// axis; applying twice restores the input exactly.
    pub fn flip_lr(&self) -> Result<Self> {
        let axis = self.geometry.lr_axis()?;
        let [nx, ny, nz] = self.geometry.dims();
        let n = [nx, ny, nz];
        let mut out = self.data.clone();
        for k in 0..nz {
            for j in 0..ny {
                for i in 0..nx {
                    let mut src = [i, j, k];
                    src[axis] = n[axis] - 1 - src[axis];
                    out[self.geometry.index(i, j, k)] = self.get(src[0], src[1], src[2]);
                }
            }
        }
        Ok(Self { geometry: self.geometry.clone(), data: out })
    }

    /// Extract the voxel-axis-aligned box of the given physical size centered
    /// on the voxel nearest `center_world`. Regions outside the source are
    /// zero-padded; the output affine keeps retained voxels at their world
    /// positions.
    pub fn crop_world(&self, center_world: [f64; 3], size_mm: [f64; 3]) -> Result<Self> {
        if size_mm.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::InvalidInput(format!("crop size must be > 0, got {size_mm:?}")));
        }
        let spacing = self.geometry.spacing();
        let center_vox = self.geometry.world_to_voxel(center_world)?;
        let mut start = [0i64; 3];
        let mut out_dims = [0usize; 3];
        for axis in 0..3 {
            let n = (size_mm[axis] / spacing[axis]).round().max(1.0) as i64;
            let c = center_vox[axis].round() as i64;
            start[axis] = c - n.div_euclid(2);
            out_dims[axis] = n as usize;
        }
        let origin = self
            .geometry
            .voxel_to_world([start[0] as f64, start[1] as f64, start[2] as f64]);
        let mut vox2world = *self.geometry.vox2world();
        for row in 0..3 {
            vox2world[(row, 3)] = origin[row];
        }
        let geometry = Geometry::new(out_dims, spacing, vox2world)?;
        let mut data = Vec::with_capacity(geometry.num_voxels());
        for k in 0..out_dims[2] {
            for j in 0..out_dims[1] {
                for i in 0..out_dims[0] {
                    data.push(self.get_or_zero(
                        start[0] + i as i64,
                        start[1] + j as i64,
                        start[2] + k as i64,
                    ));
                }
            }
        }
        Ok(Self { geometry, data })
    }

    /// Reorder axes (and flip where needed) so voxel axes run
    /// +right/+anterior/+superior. World positions of voxels are untouched;
    /// only the storage order and affine change. Returns a clone when the
    /// volume is already canonical.
    pub fn to_canonical_ras(&self) -> Result<Self> {
        if self.geometry.is_canonical_ras()? {
            return Ok(self.clone());
        }
        let doms = self.geometry.dominant_axes()?;
        let in_dims = self.geometry.dims();
        let in_spacing = self.geometry.spacing();
        // vox_for_world[w] = (source voxel axis, flip?)
        let mut vox_for_world = [(0usize, false); 3];
        for (vox_axis, &(world_axis, sign)) in doms.iter().enumerate() {
            vox_for_world[world_axis] = (vox_axis, sign < 0.0);
        }
        let mut out_dims = [0usize; 3];
        let mut out_spacing = [0f64; 3];
        for w in 0..3 {
            out_dims[w] = in_dims[vox_for_world[w].0];
            out_spacing[w] = in_spacing[vox_for_world[w].0];
        }
        let src = self.geometry.vox2world();
        let mut m = nalgebra::Matrix4::<f64>::identity();
        let mut origin_vox = [0f64; 3];
        for w in 0..3 {
            let (va, flip) = vox_for_world[w];
            let sign = if flip { -1.0 } else { 1.0 };
            for row in 0..3 {
                m[(row, w)] = sign * src[(row, va)];
            }
            origin_vox[va] = if flip { (in_dims[va] - 1) as f64 } else { 0.0 };
        }
        let t = self.geometry.voxel_to_world(origin_vox);
        for row in 0..3 {
            m[(row, 3)] = t[row];
        }
        let geometry = Geometry::new(out_dims, out_spacing, m)?;
        let mut data = Vec::with_capacity(geometry.num_voxels());
        for k in 0..out_dims[2] {
            for j in 0..out_dims[1] {
                for i in 0..out_dims[0] {
                    let q = [i, j, k];
                    let mut p = [0usize; 3];
                    for w in 0..3 {
                        let (va, flip) = vox_for_world[w];
                        p[va] = if flip { in_dims[va] - 1 - q[w] } else { q[w] };
                    }
                    data.push(self.get(p[0], p[1], p[2]));
                }
            }
        }
        Ok(Self { geometry, data })
    }
}

impl Volume<f32> {
    /// Sum of all voxel values in f64.
    pub fn sum(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum()
    }

    pub fn min_max(&self) -> (f32, f32) {
        let mut lo = f32::INFINITY;
        let mut hi = f32::NEG_INFINITY;
        for &v in &self.data {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        (lo, hi)
    }
}

impl LabelVolume {
    /// Membership mask of one label code.
    pub fn mask_of(&self, code: u32) -> BinaryMask {
        self.map(|v| v == code)
    }

    pub fn count_of(&self, code: u32) -> usize {
        self.data.iter().filter(|&&v| v == code).count()
    }

    pub fn unique_codes(&self) -> std::collections::BTreeSet<u32> {
        self.data.iter().copied().collect()
    }
}

impl BinaryMask {
    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }

    pub fn is_empty_mask(&self) -> bool {
        !self.data.iter().any(|&v| v)
    }

    /// Mean position of member voxels, in continuous voxel coordinates.
    pub fn centroid_voxel(&self) -> Option<[f64; 3]> {
        let [nx, ny, nz] = self.dims();
        let mut acc = [0f64; 3];
        let mut n = 0usize;
        for k in 0..nz {
            for j in 0..ny {
                for i in 0..nx {
                    if self.get(i, j, k) {
                        acc[0] += i as f64;
                        acc[1] += j as f64;
                        acc[2] += k as f64;
                        n += 1;
                    }
                }
            }
        }
        if n == 0 {
            return None;
        }
        Some([acc[0] / n as f64, acc[1] / n as f64, acc[2] / n as f64])
    }

    pub fn centroid_world(&self) -> Option<[f64; 3]> {
        self.centroid_voxel().map(|v| self.geometry().voxel_to_world(v))
    }
}

/// Check two volumes share a grid to within 1e-6 mm.
pub fn require_same_geometry<A: Voxel, B: Voxel>(
    a: &Volume<A>,
    b: &Volume<B>,
    left: &str,
    right: &str,
) -> Result<()> {
    if a.geometry().approx_eq(b.geometry(), 1e-6) {
        Ok(())
    } else {
        Err(Error::GeometryMismatch { left: left.into(), right: right.into() })
    }
}
