use freqpde::csdp::attractor_shift;
use freqpde::fspe::{dwt_haar, fuse_level, idwt_haar, LowpassParams};
use freqpde::geometry::coverage_stats;
use freqpde::synth::{lidar_sweep, ring_cameras};
use freqpde::weights::{seeded_init, WeightSet};
use freqpde::FeatureMap;
use wasm_bindgen::prelude::*;

fn js_err(e: freqpde::Error) -> JsValue {
    JsValue::from_str(&e.to_string())
}

/// Test pattern: concentric rings plus a vertical edge, `size×size`.
fn pattern(size: usize, freq: f64) -> FeatureMap {
    let mid = size as f64 / 2.0;
    FeatureMap::from_fn(1, size, size, |_, y, x| {
        let r = ((x as f64 - mid).powi(2) + (y as f64 - mid).powi(2)).sqrt();
        let edge = if x as f64 > size as f64 * 0.7 { 0.5 } else { 0.0 };
        ((r * freq).sin() * 0.5 + edge) as f32
    })
    .expect("pattern extent")
}

fn avg_pool(f: &FeatureMap) -> FeatureMap {
    let (c, h, w) = f.dims();
    FeatureMap::from_fn(c, h / 2, w / 2, |ch, y, x| {
        (f.at(ch, 2 * y, 2 * x) + f.at(ch, 2 * y + 1, 2 * x) + f.at(ch, 2 * y, 2 * x + 1) + f.at(ch, 2 * y + 1, 2 * x + 1))
            / 4.0
    })
    .expect("pooled extent")
}

#[wasm_bindgen]
pub struct FusionView {
    size: usize,
    input: Vec<f32>,
    bands: Vec<f32>,
    fused: Vec<f32>,
    band_energy: Vec<f64>,
    reconstruction_error: f32,
}

#[wasm_bindgen]
impl FusionView {
    #[wasm_bindgen(getter)]
    pub fn size(&self) -> usize {
        self.size
    }

    #[wasm_bindgen(getter)]
    pub fn input(&self) -> Vec<f32> {
        self.input.clone()
    }

    /// LL | LH over HL | HH, tiled into one `size×size` image.
    #[wasm_bindgen(getter)]
    pub fn bands(&self) -> Vec<f32> {
        self.bands.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn fused(&self) -> Vec<f32> {
        self.fused.clone()
    }

    /// Energy of LL, LH, HL, HH.
    #[wasm_bindgen(getter)]
    pub fn band_energy(&self) -> Vec<f64> {
        self.band_energy.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn reconstruction_error(&self) -> f32 {
        self.reconstruction_error
    }
}

/// Haar bands of a test pattern and one fusion step with its own pooled copy
/// as the coarse level. `seed = None` uses a zero low-pass predictor.
#[wasm_bindgen]
pub fn wavelet_fusion(size: usize, freq: f64, seed: Option<u32>) -> Result<FusionView, JsValue> {
    let size = (size.clamp(8, 256) / 4) * 4;
    let fine = pattern(size, freq);
    let quad = dwt_haar(&fine).map_err(js_err)?;
    let back = idwt_haar(&quad).map_err(js_err)?;
    let reconstruction_error = back.tensor().max_abs_diff(fine.tensor());

    let half = size / 2;
    let mut bands = vec![0.0f32; size * size];
    for (i, b) in [&quad.ll, &quad.lh, &quad.hl, &quad.hh].into_iter().enumerate() {
        let (oy, ox) = (i / 2 * half, i % 2 * half);
        for y in 0..half {
            bands[(oy + y) * size + ox..][..half].copy_from_slice(&b.plane(0)[y * half..][..half]);
        }
    }
    let band_energy = [&quad.ll, &quad.lh, &quad.hl, &quad.hh]
        .iter()
        .map(|b| b.data().iter().map(|&v| v as f64 * v as f64).sum())
        .collect();

    let geometry = LowpassParams::geometry("demo", 1, 3);
    let ws = match seed {
        Some(s) => seeded_init(s as u64, &geometry),
        None => WeightSet::zeros(&geometry),
    }
    .map_err(js_err)?;
    let params = LowpassParams::from_weights(&ws, "demo", 1, 3).map_err(js_err)?;
    let fused = fuse_level(&avg_pool(&fine), &fine, &params).map_err(js_err)?;

    Ok(FusionView {
        size,
        input: fine.data().to_vec(),
        bands,
        fused: fused.data().to_vec(),
        band_energy,
        reconstruction_error,
    })
}

/// One refinement step of `bins` uniform centers over `[d_min, d_max]`
/// towards `attractors`; the result is clamped and sorted.
#[wasm_bindgen]
pub fn refine_bins(bins: usize, d_min: f64, d_max: f64, attractors: &[f64], alpha: f64, beta: f64) -> Vec<f64> {
    let bins = bins.clamp(1, 512);
    let step = (d_max - d_min) / bins as f64;
    let mut out: Vec<f64> = (0..bins)
        .map(|k| {
            let c = d_min + step * (k as f64 + 0.5);
            (c + attractor_shift(c, attractors, alpha, beta)).clamp(d_min, d_max)
        })
        .collect();
    out.sort_by(f64::total_cmp);
    out
}

/// Mean fraction of feature cells hit by a synthetic 32-beam sweep, for each
/// stride, with six ring cameras at `width×height`.
#[wasm_bindgen]
pub fn coverage_curve(width: u32, height: u32, strides: &[f64], seed: u32) -> Result<Vec<f64>, JsValue> {
    let cams = ring_cameras(6, width.max(1), height.max(1)).map_err(js_err)?;
    let cloud = lidar_sweep(32, 1024, seed as u64);
    let report = coverage_stats(&cloud, &cams, &[(width, height)], strides).map_err(js_err)?;
    Ok(report.entries.iter().map(|e| e.coverage).collect())
}
