//! Pinhole cameras, LiDAR projection and projected-point coverage.
//!
//! Extrinsics always map LiDAR coordinates into the camera frame
//! (`q = R·p + t`); the inverse is derived on demand.

use std::collections::BTreeMap;

use nalgebra::{Matrix3, Matrix4, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point3 = nalgebra::Point3<f64>;

/// Points whose camera-frame depth is at or below this are behind the camera.
pub const BEHIND_EPS: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct CameraModel {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    width: u32,
    height: u32,
    extrinsic: Matrix4<f64>,
}

impl CameraModel {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: u32,
        height: u32,
        extrinsic: Matrix4<f64>,
    ) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0) || !fx.is_finite() || !fy.is_finite() {
            return Err(Error::InvalidParam(format!("focal lengths must be positive, got fx={fx} fy={fy}")));
        }
        if !cx.is_finite() || !cy.is_finite() {
            return Err(Error::InvalidParam("principal point must be finite".into()));
        }
        if width == 0 || height == 0 {
            return Err(Error::InvalidParam("image size must be positive".into()));
        }
        if extrinsic.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("extrinsic".into()));
        }
        let r: Matrix3<f64> = extrinsic.fixed_view::<3, 3>(0, 0).into();
        let ortho = (r * r.transpose() - Matrix3::identity()).abs().max();
        if ortho > 1e-5 || (r.determinant() - 1.0).abs() > 1e-5 {
            return Err(Error::InvalidParam(format!(
                "extrinsic rotation is not a proper rotation (orthogonality error {ortho:.2e}, det {:.6})",
                r.determinant()
            )));
        }
        let last = extrinsic.row(3);
        if last[0] != 0.0 || last[1] != 0.0 || last[2] != 0.0 || last[3] != 1.0 {
            return Err(Error::InvalidParam("extrinsic bottom row must be [0, 0, 0, 1]".into()));
        }
        Ok(Self { fx, fy, cx, cy, width, height, extrinsic })
    }

    /// Identity extrinsics: the LiDAR frame is the camera frame.
    pub fn with_identity_pose(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self> {
        Self::new(fx, fy, cx, cy, width, height, Matrix4::identity())
    }

    pub fn fx(&self) -> f64 {
        self.fx
    }
    pub fn fy(&self) -> f64 {
        self.fy
    }
    pub fn cx(&self) -> f64 {
        self.cx
    }
    pub fn cy(&self) -> f64 {
        self.cy
    }
    pub fn width(&self) -> u32 {
        self.width
    }
    pub fn height(&self) -> u32 {
        self.height
    }
    pub fn extrinsic(&self) -> &Matrix4<f64> {
        &self.extrinsic
    }

    pub fn intrinsics(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    /// Row-major intrinsics of a feature grid downsampled by `stride`:
    /// the first two rows are divided by `stride`.
    pub fn scaled_intrinsics(&self, stride: f64) -> [f64; 9] {
        let k = self.intrinsics();
        let mut out = [0.0; 9];
        for r in 0..3 {
            for c in 0..3 {
                out[r * 3 + c] = if r < 2 { k[(r, c)] / stride } else { k[(r, c)] };
            }
        }
        out
    }

    /// The same camera with the image resampled to `width×height`.
    pub fn resized(&self, width: u32, height: u32) -> Result<Self> {
        let sx = width as f64 / self.width as f64;
        let sy = height as f64 / self.height as f64;
        Self::new(self.fx * sx, self.fy * sy, self.cx * sx, self.cy * sy, width, height, self.extrinsic)
    }

    fn rotation(&self) -> Matrix3<f64> {
        self.extrinsic.fixed_view::<3, 3>(0, 0).into()
    }

    fn translation(&self) -> Vector3<f64> {
        self.extrinsic.fixed_view::<3, 1>(0, 3).into()
    }

    pub fn lidar_to_camera(&self, p: &Point3) -> Point3 {
        Point3::from(self.rotation() * p.coords + self.translation())
    }

    pub fn camera_to_lidar(&self, q: &Point3) -> Point3 {
        Point3::from(self.rotation().transpose() * (q.coords - self.translation()))
    }
}

/// A projected point: pixel coordinates in the native image and depth in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelDepth {
    pub u: f64,
    pub v: f64,
    pub depth: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Projection {
    Visible(PixelDepth),
    BehindCamera,
}

impl Projection {
    pub fn visible(self) -> Option<PixelDepth> {
        match self {
            Projection::Visible(p) => Some(p),
            Projection::BehindCamera => None,
        }
    }
}

/// Lifts pixel `(u, v)` at metric depth `d` into the LiDAR frame.
pub fn unproject(u: f64, v: f64, d: f64, cam: &CameraModel) -> Result<Point3> {
    if !(d > 0.0) {
        return Err(Error::InvalidParam(format!("depth must be positive, got {d}")));
    }
    let q = Point3::new(d * (u - cam.cx) / cam.fx, d * (v - cam.cy) / cam.fy, d);
    Ok(cam.camera_to_lidar(&q))
}

pub fn project(p: &Point3, cam: &CameraModel) -> Projection {
    let q = cam.lidar_to_camera(p);
    if q.z <= BEHIND_EPS {
        return Projection::BehindCamera;
    }
    Projection::Visible(PixelDepth {
        u: cam.fx * q.x / q.z + cam.cx,
        v: cam.fy * q.y / q.z + cam.cy,
        depth: q.z,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SparseDepth {
    pub u: u32,
    pub v: u32,
    pub depth: f32,
}

/// Per-cell metric depth from projected LiDAR points, at most one entry per
/// cell, sorted by `(v, u)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseDepthTarget {
    pub height: usize,
    pub width: usize,
    pub stride: f64,
    pub entries: Vec<SparseDepth>,
}

impl SparseDepthTarget {
    pub fn new(height: usize, width: usize, stride: f64, mut entries: Vec<SparseDepth>) -> Result<Self> {
        entries.sort_by_key(|e| (e.v, e.u));
        for pair in entries.windows(2) {
            if (pair[0].v, pair[0].u) == (pair[1].v, pair[1].u) {
                return Err(Error::InvalidParam(format!(
                    "duplicate target at cell ({}, {})",
                    pair[0].u, pair[0].v
                )));
            }
        }
        for e in &entries {
            if e.u as usize >= width || e.v as usize >= height {
                return Err(Error::InvalidParam(format!(
                    "target cell ({}, {}) outside {height}x{width} grid",
                    e.u, e.v
                )));
            }
            if !(e.depth > 0.0) || !e.depth.is_finite() {
                return Err(Error::InvalidParam(format!("target depth {} must be positive", e.depth)));
            }
        }
        Ok(Self { height, width, stride, entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Projects `points` into `cam`, bins them into a `grid_h×grid_w` grid whose
/// cells are `stride` native pixels wide, and keeps the nearest depth per cell.
pub fn lidar_to_sparse_depth(
    points: &[Point3],
    cam: &CameraModel,
    grid_h: usize,
    grid_w: usize,
    stride: f64,
) -> Result<SparseDepthTarget> {
    if !(stride >= 1.0) {
        return Err(Error::InvalidParam(format!("stride must be >= 1, got {stride}")));
    }
    let mut cells: BTreeMap<(u32, u32), f32> = BTreeMap::new();
    for p in points {
        let Some(px) = project(p, cam).visible() else { continue };
        let (cu, cv) = ((px.u / stride).floor(), (px.v / stride).floor());
        if !(cu >= 0.0 && cv >= 0.0 && cu < grid_w as f64 && cv < grid_h as f64) {
            continue;
        }
        let d = px.depth as f32;
        cells
            .entry((cv as u32, cu as u32))
            .and_modify(|cur| *cur = cur.min(d))
            .or_insert(d);
    }
    let entries = cells.into_iter().map(|((v, u), depth)| SparseDepth { u, v, depth }).collect();
    SparseDepthTarget::new(grid_h, grid_w, stride, entries)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoverageEntry {
    pub width: u32,
    pub height: u32,
    pub stride: f64,
    pub grid_width: usize,
    pub grid_height: usize,
    pub coverage: f64,
}

/// Fraction of feature-grid cells hit by at least one projected point, per
/// (input resolution, stride), averaged over cameras.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub entries: Vec<CoverageEntry>,
}

impl CoverageReport {
    pub fn get(&self, width: u32, height: u32, stride: f64) -> Option<f64> {
        self.entries
            .iter()
            .find(|e| e.width == width && e.height == height && e.stride == stride)
            .map(|e| e.coverage)
    }
}

/// Grid extent for an input size and stride; partial cells count.
pub fn grid_extent(size: u32, stride: f64) -> usize {
    ((size as f64 / stride).ceil() as usize).max(1)
}

/// `resolutions` are `(width, height)` of the resampled input image.
pub fn coverage_stats(
    points: &[Point3],
    cams: &[CameraModel],
    resolutions: &[(u32, u32)],
    strides: &[f64],
) -> Result<CoverageReport> {
    if cams.is_empty() || resolutions.is_empty() || strides.is_empty() {
        return Err(Error::InvalidParam("coverage needs cameras, resolutions and strides".into()));
    }
    let mut entries = Vec::new();
    for &(width, height) in resolutions {
        let resized: Vec<CameraModel> =
            cams.iter().map(|c| c.resized(width, height)).collect::<Result<_>>()?;
        for &stride in strides {
            let (gh, gw) = (grid_extent(height, stride), grid_extent(width, stride));
            let mut sum = 0.0;
            for cam in &resized {
                let t = lidar_to_sparse_depth(points, cam, gh, gw, stride)?;
                sum += t.len() as f64 / (gh * gw) as f64;
            }
            entries.push(CoverageEntry {
                width,
                height,
                stride,
                grid_width: gw,
                grid_height: gh,
                coverage: sum / resized.len() as f64,
            });
        }
    }
    Ok(CoverageReport { entries })
}
