//! Pinhole camera geometry, pixel-to-ground lifting, and bird's-eye-view
//! grid rasterization/fusion.
//!
//! Pixels are lifted to 3D rays through the inverse intrinsic matrix,
//! mapped to the shared LiDAR (world) frame through the extrinsics, and
//! resolved in depth by intersecting the ray with the known ground plane.
//! The resulting points land on a regular BEV grid by floor division;
//! per-view grids are fused by per-cell union of instance ids and
//! summation of hit counts, which makes fusion a commutative monoid.

use std::collections::BTreeMap;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::DenseImage;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("focal lengths must be positive, got f_x={fx}, f_y={fy}")]
    InvalidFocalLength { fx: f64, fy: f64 },
    #[error("rotation is not a proper rotation (orthonormal, det +1) within 1e-9")]
    ImproperRotation,
    #[error("BEV spec must produce at least one cell per axis")]
    EmptyBevSpec,
    #[error("ray does not intersect the ground plane in front of the camera")]
    DegenerateRay,
    #[error("BEV grids have mismatched specs and cannot be fused")]
    SpecMismatch,
    #[error("cannot fuse an empty sequence of BEV grids")]
    EmptyFusion,
}

/// Pinhole intrinsics: focal lengths and principal point, in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub f_x: f64,
    pub f_y: f64,
    pub i_c: f64,
    pub j_c: f64,
}

impl CameraIntrinsics {
    pub fn new(f_x: f64, f_y: f64, i_c: f64, j_c: f64) -> Result<Self, GeometryError> {
        if f_x <= 0.0 || f_y <= 0.0 {
            return Err(GeometryError::InvalidFocalLength { fx: f_x, fy: f_y });
        }
        Ok(Self { f_x, f_y, i_c, j_c })
    }

    /// The 3x3 intrinsic matrix mapping camera rays to homogeneous pixels.
    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(
            self.f_x, 0.0, self.i_c, //
            0.0, self.f_y, self.j_c, //
            0.0, 0.0, 1.0,
        )
    }

    /// Closed-form inverse of [`Self::matrix`].
    pub fn inverse_matrix(&self) -> Matrix3<f64> {
        Matrix3::new(
            1.0 / self.f_x, 0.0, -self.i_c / self.f_x, //
            0.0, 1.0 / self.f_y, -self.j_c / self.f_y, //
            0.0, 0.0, 1.0,
        )
    }

    /// Project a camera-frame point (with positive depth) back to a pixel.
    pub fn project(&self, p_cam: &Vector3<f64>) -> (f64, f64) {
        (
            self.f_x * p_cam.x / p_cam.z + self.i_c,
            self.f_y * p_cam.y / p_cam.z + self.j_c,
        )
    }
}

/// Unit-scaled camera ray through pixel `(i, j)`:
/// `((i - i_c)/f_x, (j - j_c)/f_y, 1)`.
pub fn pixel_to_ray(intr: &CameraIntrinsics, pixel: (f64, f64)) -> Vector3<f64> {
    Vector3::new(
        (pixel.0 - intr.i_c) / intr.f_x,
        (pixel.1 - intr.j_c) / intr.f_y,
        1.0,
    )
}

/// Rigid transform from the camera frame to the LiDAR (world) frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraExtrinsics {
    rotation: [[f64; 3]; 3],
    translation: [f64; 3],
}

impl CameraExtrinsics {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, GeometryError> {
        let should_be_identity = rotation.transpose() * rotation;
        let ortho_err = (should_be_identity - Matrix3::identity()).abs().max();
        if ortho_err > 1e-9 || (rotation.determinant() - 1.0).abs() > 1e-9 {
            return Err(GeometryError::ImproperRotation);
        }
        let mut r = [[0.0; 3]; 3];
        for row in 0..3 {
            for col in 0..3 {
                r[row][col] = rotation[(row, col)];
            }
        }
        Ok(Self {
            rotation: r,
            translation: [translation.x, translation.y, translation.z],
        })
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        Matrix3::from_fn(|r, c| self.rotation[r][c])
    }

    pub fn translation(&self) -> Vector3<f64> {
        Vector3::from_column_slice(&self.translation)
    }

    /// Nadir pose: boresight straight down, camera x axis along world x,
    /// camera y axis along negative world y (keeps the rotation proper).
    pub fn nadir(position: Vector3<f64>) -> Self {
        let rotation = Matrix3::new(
            1.0, 0.0, 0.0, //
            0.0, -1.0, 0.0, //
            0.0, 0.0, -1.0,
        );
        Self::new(rotation, position).expect("nadir rotation is proper")
    }

    /// Pose looking from `position` toward `target`, right-handed frame.
    pub fn look_at(position: Vector3<f64>, target: Vector3<f64>) -> Result<Self, GeometryError> {
        let boresight = (target - position)
            .try_normalize(1e-12)
            .ok_or(GeometryError::DegenerateRay)?;
        // Reference axis for completing the frame; avoid near-parallel picks.
        let reference = if boresight.x.abs() < 0.9 {
            Vector3::x()
        } else {
            Vector3::y()
        };
        let y_cam = boresight
            .cross(&reference)
            .try_normalize(1e-12)
            .ok_or(GeometryError::DegenerateRay)?;
        let x_cam = y_cam.cross(&boresight);
        let rotation = Matrix3::from_columns(&[x_cam, y_cam, boresight]);
        Self::new(rotation, position)
    }

    /// Inverse transform (LiDAR frame back to camera frame).
    pub fn inverse(&self) -> Self {
        let r_inv = self.rotation().transpose();
        let t_inv = -(r_inv * self.translation());
        Self {
            rotation: {
                let mut r = [[0.0; 3]; 3];
                for row in 0..3 {
                    for col in 0..3 {
                        r[row][col] = r_inv[(row, col)];
                    }
                }
                r
            },
            translation: [t_inv.x, t_inv.y, t_inv.z],
        }
    }
}

/// Map a camera-frame point to the LiDAR frame: `R * p + T`.
pub fn camera_to_lidar(extr: &CameraExtrinsics, p_cam: &Vector3<f64>) -> Vector3<f64> {
    extr.rotation() * p_cam + extr.translation()
}

/// Extent and resolution of the 2D BEV plane in the LiDAR frame.
///
/// Axis `w` discretizes LiDAR X over `[w_min, w_max)`, axis `h` discretizes
/// LiDAR Y over `[h_min, h_max)`; cell counts are the floor of extent over
/// resolution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BevSpec {
    pub w_min: f64,
    pub w_max: f64,
    pub h_min: f64,
    pub h_max: f64,
    pub delta_w: f64,
    pub delta_h: f64,
}

impl BevSpec {
    pub fn new(
        w_min: f64,
        w_max: f64,
        h_min: f64,
        h_max: f64,
        delta_w: f64,
        delta_h: f64,
    ) -> Result<Self, GeometryError> {
        let spec = Self { w_min, w_max, h_min, h_max, delta_w, delta_h };
        if delta_w <= 0.0 || delta_h <= 0.0 || spec.w_cells() < 1 || spec.h_cells() < 1 {
            return Err(GeometryError::EmptyBevSpec);
        }
        Ok(spec)
    }

    pub fn w_cells(&self) -> usize {
        ((self.w_max - self.w_min) / self.delta_w).floor() as usize
    }

    pub fn h_cells(&self) -> usize {
        ((self.h_max - self.h_min) / self.delta_h).floor() as usize
    }

    /// Cell assignment by floor division; `None` outside the grid.
    pub fn cell_of(&self, x_lidar: f64, y_lidar: f64) -> Option<(usize, usize)> {
        if x_lidar < self.w_min || y_lidar < self.h_min {
            return None;
        }
        let w = ((x_lidar - self.w_min) / self.delta_w).floor();
        let h = ((y_lidar - self.h_min) / self.delta_h).floor();
        if w < 0.0 || h < 0.0 {
            return None;
        }
        let (w, h) = (w as usize, h as usize);
        if w >= self.w_cells() || h >= self.h_cells() {
            return None;
        }
        Some((w, h))
    }
}

/// One BEV cell: hit counts per contributing instance id.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BevCell {
    pub hits: BTreeMap<u32, u32>,
}

impl BevCell {
    pub fn count(&self) -> u32 {
        self.hits.values().sum()
    }

    pub fn ids(&self) -> impl Iterator<Item = u32> + '_ {
        self.hits.keys().copied()
    }
}

/// Rasterized BEV occupancy grid with per-cell instance id sets and counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BevGrid {
    pub spec: BevSpec,
    cells: Vec<BevCell>,
}

impl BevGrid {
    pub fn empty(spec: BevSpec) -> Self {
        let n = spec.w_cells() * spec.h_cells();
        Self { spec, cells: vec![BevCell::default(); n] }
    }

    #[inline]
    fn flat(&self, w: usize, h: usize) -> usize {
        debug_assert!(w < self.spec.w_cells() && h < self.spec.h_cells());
        h * self.spec.w_cells() + w
    }

    pub fn cell(&self, w: usize, h: usize) -> &BevCell {
        &self.cells[self.flat(w, h)]
    }

    pub fn add_hit(&mut self, w: usize, h: usize, id: u32) {
        let idx = self.flat(w, h);
        *self.cells[idx].hits.entry(id).or_insert(0) += 1;
    }

    pub fn occupied_cells(&self) -> usize {
        self.cells.iter().filter(|c| !c.hits.is_empty()).count()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.iter().all(|c| c.hits.is_empty())
    }

    /// Iterate `(w, h, cell)` over occupied cells in row-major order.
    pub fn iter_occupied(&self) -> impl Iterator<Item = (usize, usize, &BevCell)> + '_ {
        let w_cells = self.spec.w_cells();
        self.cells.iter().enumerate().filter_map(move |(idx, cell)| {
            if cell.hits.is_empty() {
                None
            } else {
                Some((idx % w_cells, idx / w_cells, cell))
            }
        })
    }

    /// Dense CSV export: one row per cell (`w,h,count,ids`), ids joined
    /// with `|`.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("w,h,count,ids\n");
        for h in 0..self.spec.h_cells() {
            for w in 0..self.spec.w_cells() {
                let cell = self.cell(w, h);
                let ids: Vec<String> = cell.ids().map(|id| id.to_string()).collect();
                out.push_str(&format!("{},{},{},{}\n", w, h, cell.count(), ids.join("|")));
            }
        }
        out
    }
}

/// Lift a pixel to its BEV cell by intersecting the camera ray with the
/// horizontal plane `z = ground_plane_height`.
///
/// Returns `Ok(None)` when the intersection falls outside the BEV extent,
/// and [`GeometryError::DegenerateRay`] when the ray is parallel to the
/// plane or the intersection lies behind the camera.
pub fn lift_pixel_to_bev(
    intr: &CameraIntrinsics,
    extr: &CameraExtrinsics,
    pixel: (f64, f64),
    ground_plane_height: f64,
    bev: &BevSpec,
) -> Result<Option<(usize, usize)>, GeometryError> {
    let point = lift_pixel_to_ground(intr, extr, pixel, ground_plane_height)?;
    Ok(bev.cell_of(point.x, point.y))
}

/// Ray-plane intersection in the LiDAR frame (shared by lifting and the
/// scenario renderer).
pub fn lift_pixel_to_ground(
    intr: &CameraIntrinsics,
    extr: &CameraExtrinsics,
    pixel: (f64, f64),
    ground_plane_height: f64,
) -> Result<Vector3<f64>, GeometryError> {
    let dir = extr.rotation() * pixel_to_ray(intr, pixel);
    if dir.z.abs() < 1e-15 {
        return Err(GeometryError::DegenerateRay);
    }
    let t = (ground_plane_height - extr.translation()[2]) / dir.z;
    if t <= 0.0 {
        return Err(GeometryError::DegenerateRay);
    }
    Ok(extr.translation() + dir * t)
}

/// Per-view projection diagnostics.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ProjectionStats {
    pub degenerate_pixels: usize,
    pub out_of_range_pixels: usize,
    pub projected_pixels: usize,
}

/// Project every non-background pixel of a view onto the BEV grid.
///
/// Degenerate pixels are skipped and tallied rather than failing the view.
pub fn project_view_to_bev(
    image: &DenseImage,
    intr: &CameraIntrinsics,
    extr: &CameraExtrinsics,
    bev: &BevSpec,
) -> (BevGrid, ProjectionStats) {
    let mut grid = BevGrid::empty(*bev);
    let mut stats = ProjectionStats::default();
    for i in 0..image.height {
        for j in 0..image.width {
            let id = image.instance_id(i, j);
            if id == 0 {
                continue;
            }
            match lift_pixel_to_bev(intr, extr, (i as f64, j as f64), 0.0, bev) {
                Ok(Some((w, h))) => {
                    grid.add_hit(w, h, id);
                    stats.projected_pixels += 1;
                }
                Ok(None) => stats.out_of_range_pixels += 1,
                Err(_) => stats.degenerate_pixels += 1,
            }
        }
    }
    (grid, stats)
}

/// Fuse per-UAV BEV grids: per-cell union of ids, sum of hit counts.
pub fn fuse_bev(grids: &[BevGrid]) -> Result<BevGrid, GeometryError> {
    let first = grids.first().ok_or(GeometryError::EmptyFusion)?;
    let mut fused = BevGrid::empty(first.spec);
    for grid in grids {
        if grid.spec != first.spec {
            return Err(GeometryError::SpecMismatch);
        }
        for (idx, cell) in grid.cells.iter().enumerate() {
            for (&id, &n) in &cell.hits {
                *fused.cells[idx].hits.entry(id).or_insert(0) += n;
            }
        }
    }
    Ok(fused)
}
