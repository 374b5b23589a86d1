//! World-space geometry of a voxel grid.

use crate::error::{Error, Result};
use nalgebra::{Matrix3, Matrix4, Vector3, Vector4};

/// Relative tolerance tying the affine column norms to `spacing`.
const SPACING_REL_TOL: f64 = 1e-6;

/// Voxel grid geometry: dimensions, voxel spacing in mm, and the affine
/// mapping voxel indices to world mm coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Geometry {
    dims: [usize; 3],
    spacing: [f64; 3],
    vox2world: Matrix4<f64>,
}

impl Geometry {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], vox2world: Matrix4<f64>) -> Result<Self> {
        if dims.iter().any(|&d| d < 1) {
            return Err(Error::InvalidGeometry(format!("dims must be >= 1, got {dims:?}")));
        }
        if spacing.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::InvalidGeometry(format!("spacing must be > 0, got {spacing:?}")));
        }
        let linear = vox2world.fixed_view::<3, 3>(0, 0).into_owned();
        let det = linear.determinant();
        if det == 0.0 || !det.is_finite() {
            return Err(Error::InvalidGeometry("singular vox2world affine".into()));
        }
        for axis in 0..3 {
            let norm = linear.column(axis).norm();
            if (norm - spacing[axis]).abs() > SPACING_REL_TOL * spacing[axis] {
                return Err(Error::InvalidGeometry(format!(
                    "affine column {axis} norm {norm} disagrees with spacing {}",
                    spacing[axis]
                )));
            }
        }
        let bottom = vox2world.row(3);
        if bottom != Vector4::new(0.0, 0.0, 0.0, 1.0).transpose() {
            return Err(Error::InvalidGeometry("vox2world bottom row must be [0 0 0 1]".into()));
        }
        Ok(Self { dims, spacing, vox2world })
    }

    /// Axis-aligned RAS geometry with the given world position of voxel (0,0,0).
    pub fn axis_aligned(dims: [usize; 3], spacing: [f64; 3], origin: [f64; 3]) -> Result<Self> {
        let mut m = Matrix4::identity();
        for axis in 0..3 {
            m[(axis, axis)] = spacing[axis];
            m[(axis, 3)] = origin[axis];
        }
        Self::new(dims, spacing, m)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn vox2world(&self) -> &Matrix4<f64> {
        &self.vox2world
    }

    pub fn world2vox(&self) -> Result<Matrix4<f64>> {
        self.vox2world.try_inverse().ok_or(Error::SingularAffine)
    }

    pub fn num_voxels(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    /// Signed volume of one voxel in mm^3.
    pub fn voxel_volume_mm3(&self) -> f64 {
        self.vox2world.fixed_view::<3, 3>(0, 0).determinant().abs()
    }

    /// Flat index of voxel (i, j, k); data is stored x-fastest.
    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    pub fn voxel_to_world(&self, v: [f64; 3]) -> [f64; 3] {
        let p = self.vox2world * Vector4::new(v[0], v[1], v[2], 1.0);
        [p[0], p[1], p[2]]
    }

    pub fn world_to_voxel(&self, w: [f64; 3]) -> Result<[f64; 3]> {
        let inv = self.world2vox()?;
        let p = inv * Vector4::new(w[0], w[1], w[2], 1.0);
        Ok([p[0], p[1], p[2]])
    }

    /// World coordinates of the grid center (continuous voxel (n-1)/2).
    pub fn center_world(&self) -> [f64; 3] {
        self.voxel_to_world([
            (self.dims[0] - 1) as f64 / 2.0,
            (self.dims[1] - 1) as f64 / 2.0,
            (self.dims[2] - 1) as f64 / 2.0,
        ])
    }

    /// Physical extent covered per axis in mm.
    pub fn extent_mm(&self) -> [f64; 3] {
        [
            self.dims[0] as f64 * self.spacing[0],
            self.dims[1] as f64 * self.spacing[1],
            self.dims[2] as f64 * self.spacing[2],
        ]
    }

    /// For each voxel axis, the world axis it predominantly moves along and
    /// the sign of that motion. Errors if two voxel axes tie for one world
    /// direction (largest-|component| convention).
    pub fn dominant_axes(&self) -> Result<[(usize, f64); 3]> {
        let linear: Matrix3<f64> = self.vox2world.fixed_view::<3, 3>(0, 0).into_owned();
        let mut result = [(0usize, 0.0f64); 3];
        let mut claimed = [None::<usize>; 3];
        for vox_axis in 0..3 {
            let col: Vector3<f64> = linear.column(vox_axis).into_owned();
            let mut best = 0;
            for world_axis in 1..3 {
                if col[world_axis].abs() > col[best].abs() {
                    best = world_axis;
                }
            }
            // Exact tie in |component| leaves the axis identification undefined.
            for world_axis in 0..3 {
                if world_axis != best && col[world_axis].abs() == col[best].abs() {
                    return Err(Error::AmbiguousOrientation(vox_axis, world_axis));
                }
            }
            if let Some(prev) = claimed[best] {
                return Err(Error::AmbiguousOrientation(prev, vox_axis));
            }
            claimed[best] = Some(vox_axis);
            result[vox_axis] = (best, col[best].signum());
        }
        Ok(result)
    }

    /// Voxel axis running along the world left-right (x) direction.
    pub fn lr_axis(&self) -> Result<usize> {
        let doms = self.dominant_axes()?;
        for (vox_axis, &(world_axis, _)) in doms.iter().enumerate() {
            if world_axis == 0 {
                return Ok(vox_axis);
            }
        }
        unreachable!("dominant_axes returns a permutation")
    }

    /// True when voxel axes align with +right/+anterior/+superior in order.
    pub fn is_canonical_ras(&self) -> Result<bool> {
        let doms = self.dominant_axes()?;
        Ok(doms.iter().enumerate().all(|(i, &(w, s))| w == i && s > 0.0))
    }

    /// Same grid to within floating tolerance: dims equal, affines within
    /// `tol` mm elementwise.
    pub fn approx_eq(&self, other: &Geometry, tol: f64) -> bool {
        self.dims == other.dims
            && self
                .vox2world
                .iter()
                .zip(other.vox2world.iter())
                .all(|(a, b)| (a - b).abs() <= tol)
    }
}
