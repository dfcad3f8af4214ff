use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::tensor::Tensor;

/// Metric depth interval `[min, max]` in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthRange {
    pub min: f64,
    pub max: f64,
}

impl DepthRange {
    pub fn new(min: f64, max: f64) -> Result<Self> {
        if !(min.is_finite() && max.is_finite() && min < max) {
            return Err(Error::InvalidParam(format!("depth range needs min < max, got [{min}, {max}]")));
        }
        Ok(Self { min, max })
    }

    pub fn span(&self) -> f64 {
        self.max - self.min
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.min + self.max)
    }

    pub fn contains(&self, d: f64) -> bool {
        d >= self.min && d <= self.max
    }
}

impl Default for DepthRange {
    fn default() -> Self {
        Self { min: 1.0, max: 61.2 }
    }
}

/// Per-pixel metric depth, `H×W`.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap(Tensor);

impl DepthMap {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        Tensor::new(vec![height, width], data).map(Self)
    }

    pub fn full(height: usize, width: usize, value: f32) -> Result<Self> {
        Self::new(height, width, vec![value; height * width])
    }

    /// Accepts `H×W` or `1×H×W` tensors.
    pub fn from_tensor(t: Tensor) -> Result<Self> {
        match *t.shape() {
            [_, _] => Ok(Self(t)),
            [1, h, w] => t.reshape(vec![h, w]).map(Self),
            _ => shape_err(format!("depth map must be H×W, got {:?}", t.shape())),
        }
    }

    pub fn height(&self) -> usize {
        self.0.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.0.shape()[1]
    }

    pub fn at(&self, y: usize, x: usize) -> f32 {
        self.0.data()[y * self.width() + x]
    }

    pub fn data(&self) -> &[f32] {
        self.0.data()
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.0
            .data()
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }
}
