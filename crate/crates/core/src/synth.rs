//! Synthetic rigs, scenes and inputs, so the whole pipeline runs without
//! external data.
//!
//! The scene is a flat ground plane at `z = GROUND_Z` enclosed by a vertical
//! cylindrical wall of radius `WALL_RADIUS` around the LiDAR origin.

use nalgebra::{Matrix3, Matrix4, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CameraModel, Point3};
use crate::tensor::{FeatureMap, Tensor};

pub const GROUND_Z: f64 = -1.8;
pub const WALL_RADIUS: f64 = 40.0;
/// Cameras sit on a ring of this radius, at this height.
const MOUNT_RADIUS: f64 = 0.5;
const MOUNT_HEIGHT: f64 = 0.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    /// Finest feature grid.
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub levels: usize,
    pub cameras: usize,
    pub seed: u64,
    /// Downsampling factor of the finest level.
    pub finest_stride: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self { height: 16, width: 44, channels: 12, levels: 3, cameras: 6, seed: 0, finest_stride: 4.0 }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.levels < 2 || self.cameras < 2 || self.channels == 0 {
            return Err(Error::InvalidParam(format!(
                "synthetic rig needs >= 2 levels, >= 2 cameras and channels > 0, got {} levels, {} cameras, {} channels",
                self.levels, self.cameras, self.channels
            )));
        }
        let div = 1usize << (self.levels - 1);
        if self.height % div != 0 || self.width % div != 0 {
            return Err(Error::InvalidParam(format!(
                "finest grid {}x{} must be divisible by {div} for {} levels",
                self.height, self.width, self.levels
            )));
        }
        if !(self.finest_stride >= 1.0) {
            return Err(Error::InvalidParam(format!("finest stride must be >= 1, got {}", self.finest_stride)));
        }
        Ok(())
    }

    /// `(height, width)` of level `i`, coarsest first.
    pub fn grid(&self, level: usize) -> (usize, usize) {
        let div = 1usize << (self.levels - 1 - level);
        (self.height / div, self.width / div)
    }

    pub fn image_size(&self) -> (u32, u32) {
        (
            (self.width as f64 * self.finest_stride) as u32,
            (self.height as f64 * self.finest_stride) as u32,
        )
    }

    pub fn strides(&self) -> Vec<f64> {
        (0..self.levels).map(|i| self.finest_stride * f64::powi(2.0, (self.levels - 1 - i) as i32)).collect()
    }
}

/// LiDAR→camera transform of a forward-looking camera at `yaw` (LiDAR frame:
/// x forward, y left, z up; camera: x right, y down, z forward).
pub fn ring_extrinsic(yaw: f64) -> Matrix4<f64> {
    let (s, c) = yaw.sin_cos();
    let r = Matrix3::new(s, -c, 0.0, 0.0, 0.0, -1.0, c, s, 0.0);
    let center = Vector3::new(MOUNT_RADIUS * c, MOUNT_RADIUS * s, MOUNT_HEIGHT);
    let t = -(r * center);
    let mut e = Matrix4::identity();
    e.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
    e.fixed_view_mut::<3, 1>(0, 3).copy_from(&t);
    e
}

/// `count` cameras evenly spaced in yaw, each with a ~70° horizontal field of view.
pub fn ring_cameras(count: usize, width: u32, height: u32) -> Result<Vec<CameraModel>> {
    let f = 0.7 * width as f64;
    (0..count)
        .map(|j| {
            let yaw = std::f64::consts::TAU * j as f64 / count as f64;
            CameraModel::new(f, f, width as f64 / 2.0, height as f64 / 2.0, width, height, ring_extrinsic(yaw))
        })
        .collect()
}

/// Distance along a LiDAR-frame ray to the scene, if it hits within `max`.
fn ray_hit(origin: &Vector3<f64>, dir: &Vector3<f64>, max: f64) -> Option<f64> {
    let mut best = f64::INFINITY;
    if dir.z < 0.0 {
        best = (GROUND_Z - origin.z) / dir.z;
    }
    // |o_xy + t d_xy| = R
    let a = dir.x * dir.x + dir.y * dir.y;
    if a > 0.0 {
        let b = 2.0 * (origin.x * dir.x + origin.y * dir.y);
        let c = origin.x * origin.x + origin.y * origin.y - WALL_RADIUS * WALL_RADIUS;
        let disc = b * b - 4.0 * a * c;
        if disc >= 0.0 {
            let t = (-b + disc.sqrt()) / (2.0 * a);
            if t > 0.0 {
                best = best.min(t);
            }
        }
    }
    (best.is_finite() && best > 0.0 && best <= max).then_some(best)
}

/// Spinning-LiDAR style sweep of the scene: `beams` elevations in
/// [-25°, 10°] times `steps` azimuths, with mild range noise.
pub fn lidar_sweep(beams: usize, steps: usize, seed: u64) -> Vec<Point3> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let origin = Vector3::zeros();
    let mut pts = Vec::with_capacity(beams * steps);
    for b in 0..beams {
        let el = (-25.0 + 35.0 * b as f64 / (beams.max(2) - 1) as f64).to_radians();
        for s in 0..steps {
            let az = std::f64::consts::TAU * s as f64 / steps as f64;
            let dir = Vector3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin());
            if let Some(t) = ray_hit(&origin, &dir, 70.0) {
                let t = t + rng.gen_range(-0.02..0.02);
                pts.push(Point3::from(dir * t));
            }
        }
    }
    pts
}

/// Metric depth of the scene per cell of an `h×w` grid over `cam`'s image,
/// clamped to `[d_min, d_max]`.
pub fn scene_depth(cam: &CameraModel, h: usize, w: usize, d_min: f64, d_max: f64) -> Vec<f32> {
    let sx = cam.width() as f64 / w as f64;
    let sy = cam.height() as f64 / h as f64;
    let origin = cam.camera_to_lidar(&Point3::origin()).coords;
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let u = (x as f64 + 0.5) * sx;
            let v = (y as f64 + 0.5) * sy;
            let q = Point3::new((u - cam.cx()) / cam.fx(), (v - cam.cy()) / cam.fy(), 1.0);
            let dir = cam.camera_to_lidar(&q).coords - origin;
            // dir has unit camera-frame depth, so the hit distance is the depth
            let d = ray_hit(&origin, &dir, f64::INFINITY).unwrap_or(d_max);
            out.push(d.clamp(d_min, d_max) as f32);
        }
    }
    out
}

/// Relative inverse depth `s/D + t` with a random per-map scale and shift,
/// as a monocular foundation model would report it.
pub fn pseudo_relative(depth: &[f32], h: usize, w: usize, seed: u64) -> Result<Tensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = rng.gen_range(0.5..5.0);
    let t = rng.gen_range(-1.0..1.0);
    Tensor::new(vec![h, w], depth.iter().map(|&d| (s / d as f64 + t) as f32).collect())
}

/// Smooth random `C×H×W` features: a few low-frequency sinusoids per channel.
pub fn smooth_features(c: usize, h: usize, w: usize, rng: &mut ChaCha8Rng) -> Result<FeatureMap> {
    let waves: Vec<[f64; 4]> = (0..c * 3)
        .map(|_| {
            [
                rng.gen_range(-0.6..0.6),
                rng.gen_range(-0.6..0.6),
                rng.gen_range(0.0..std::f64::consts::TAU),
                rng.gen_range(0.2..1.0),
            ]
        })
        .collect();
    FeatureMap::from_fn(c, h, w, |ch, y, x| {
        waves[ch * 3..ch * 3 + 3]
            .iter()
            .map(|[fy, fx, ph, amp]| amp * (fy * y as f64 + fx * x as f64 + ph).sin())
            .sum::<f64>() as f32
    })
}

/// A generated multi-camera, multi-level input.
#[derive(Debug, Clone)]
pub struct SynthRig {
    pub config: SynthConfig,
    pub cameras: Vec<CameraModel>,
    /// `[camera][level]`, coarsest first.
    pub features: Vec<Vec<FeatureMap>>,
    pub cloud: Vec<Point3>,
}

pub fn synth_rig(cfg: &SynthConfig) -> Result<SynthRig> {
    cfg.validate()?;
    let (iw, ih) = cfg.image_size();
    let cameras = ring_cameras(cfg.cameras, iw, ih)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let features = (0..cfg.cameras)
        .map(|_| {
            (0..cfg.levels)
                .map(|l| {
                    let (h, w) = cfg.grid(l);
                    smooth_features(cfg.channels, h, w, &mut rng)
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let cloud = lidar_sweep(32, 1024, cfg.seed.wrapping_add(1));
    Ok(SynthRig { config: *cfg, cameras, features, cloud })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{lidar_to_sparse_depth, project};

    #[test]
    fn extrinsics_are_rigid_and_look_outward() {
        for cam in ring_cameras(6, 704, 256).unwrap() {
            let center = cam.camera_to_lidar(&Point3::origin());
            let ahead = cam.camera_to_lidar(&Point3::new(0.0, 0.0, 10.0));
            let radial = Vector3::new(center.x, center.y, 0.0).normalize();
            assert!(((ahead - center).normalize().dot(&radial) - 1.0).abs() < 1e-9);
            let below = cam.lidar_to_camera(&Point3::new(center.x, center.y, center.z - 1.0));
            assert!(below.y > 0.0);
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = SynthConfig { height: 8, width: 16, channels: 6, levels: 2, cameras: 3, ..Default::default() };
        let a = synth_rig(&cfg).unwrap();
        let b = synth_rig(&cfg).unwrap();
        assert_eq!(a.features, b.features);
        assert_eq!(a.cloud, b.cloud);
        assert_eq!(a.features[0][0].dims(), (6, 4, 8));
        assert_eq!(a.features[2][1].dims(), (6, 8, 16));
        assert!(synth_rig(&SynthConfig { height: 9, ..cfg }).is_err());
    }

    #[test]
    fn lidar_agrees_with_scene_depth() {
        let cfg = SynthConfig::default();
        let rig = synth_rig(&cfg).unwrap();
        let cam = &rig.cameras[0];
        let (h, w) = (cfg.height, cfg.width);
        let t = lidar_to_sparse_depth(&rig.cloud, cam, h, w, cfg.finest_stride).unwrap();
        assert!(t.len() > 20);
        let dense = scene_depth(cam, h, w, 0.1, 100.0);
        // cell-center depth vs nearest point in the cell: close on smooth surfaces
        let close = t
            .entries
            .iter()
            .filter(|e| {
                let d = dense[e.v as usize * w + e.u as usize];
                ((d - e.depth) / d).abs() < 0.25
            })
            .count();
        assert!(close * 10 >= t.len() * 8, "{close}/{}", t.len());
        assert!(rig.cloud.iter().all(|p| project(p, cam).visible().is_none_or(|px| px.depth > 0.0)));
    }
}
