//! Calibration JSON and point-cloud CSV readers.

use std::path::Path;

use nalgebra::Matrix4;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CameraModel, Point3};

/// One camera as stored on disk; `extrinsic` is row-major LiDAR→camera.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    pub extrinsic: Vec<f64>,
}

impl CameraRecord {
    pub fn to_camera(&self) -> Result<CameraModel> {
        if self.extrinsic.len() != 16 {
            return Err(Error::Format(format!(
                "extrinsic must hold 16 row-major numbers, got {}",
                self.extrinsic.len()
            )));
        }
        let e = Matrix4::from_row_slice(&self.extrinsic);
        CameraModel::new(self.fx, self.fy, self.cx, self.cy, self.width, self.height, e)
    }

    pub fn from_camera(cam: &CameraModel, name: Option<String>) -> Self {
        let e = cam.extrinsic();
        Self {
            name,
            fx: cam.fx(),
            fy: cam.fy(),
            cx: cam.cx(),
            cy: cam.cy(),
            width: cam.width(),
            height: cam.height(),
            extrinsic: (0..16).map(|i| e[(i / 4, i % 4)]).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub cameras: Vec<CameraRecord>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum CalibrationFile {
    Wrapped(Calibration),
    Bare(Vec<CameraRecord>),
}

/// Accepts `{"cameras": [...]}` or a bare array of cameras.
pub fn parse_calibration(json: &str) -> Result<Vec<CameraModel>> {
    let records = match serde_json::from_str::<CalibrationFile>(json) {
        Ok(CalibrationFile::Wrapped(c)) => c.cameras,
        Ok(CalibrationFile::Bare(v)) => v,
        Err(e) => return Err(Error::Format(format!("calibration: {e}"))),
    };
    if records.is_empty() {
        return Err(Error::Format("calibration lists no cameras".into()));
    }
    records
        .iter()
        .enumerate()
        .map(|(i, r)| r.to_camera().map_err(|e| Error::InvalidParam(format!("camera {i}: {e}"))))
        .collect()
}

pub fn load_calibration(path: impl AsRef<Path>) -> Result<Vec<CameraModel>> {
    parse_calibration(&std::fs::read_to_string(path)?)
}

pub fn calibration_json(cams: &[CameraModel]) -> Result<String> {
    let c = Calibration { cameras: cams.iter().map(|c| CameraRecord::from_camera(c, None)).collect() };
    Ok(serde_json::to_string_pretty(&c)?)
}

/// Reads `x,y,z` per line; extra columns are ignored, blank lines and lines
/// starting with `#` are skipped. Errors carry the 1-based line number.
pub fn parse_point_cloud(text: &str) -> Result<Vec<Point3>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut points = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            Error::Format(format!("point cloud line {line}: {e}"))
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.iter().all(str::is_empty) {
            continue;
        }
        if rec.len() < 3 {
            return Err(Error::Format(format!("point cloud line {line}: expected x,y,z, got {} fields", rec.len())));
        }
        let mut xyz = [0.0f64; 3];
        for (i, slot) in xyz.iter_mut().enumerate() {
            *slot = rec[i]
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Format(format!("point cloud line {line}: bad number `{}`", &rec[i])))?;
        }
        points.push(Point3::new(xyz[0], xyz[1], xyz[2]));
    }
    Ok(points)
}

pub fn load_point_cloud(path: impl AsRef<Path>) -> Result<Vec<Point3>> {
    parse_point_cloud(&std::fs::read_to_string(path)?)
}

pub fn point_cloud_csv(points: &[Point3]) -> String {
    points.iter().map(|p| format!("{},{},{}\n", p.x, p.y, p.z)).collect()
}
