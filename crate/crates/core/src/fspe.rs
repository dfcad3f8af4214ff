//! Frequency-aware top-down pyramid fusion.
//!
//! A fusion step takes a coarse map `S_n` (`C×H×W`) and the next finer map
//! `S_{n-1}` (`C×2H×2W`):
//!
//! 1. predict a per-pixel `K×K` low-pass filter from `S_n` (3×3 conv, then
//!    softmax across the `K²` taps);
//! 2. filter `S_n` with it to get `S̄_n`;
//! 3. Haar-decompose `S_{n-1}` into `LL, LH, HL, HH`, add `S̄_n` to `LL`;
//! 4. invert the transform and add `S_{n-1}` back as a residual.

use crate::error::{shape_err, Error, Result};
use crate::par;
use crate::tensor::{conv2d_3x3, softmax_over_axis, FeatureMap, Tensor};
use crate::weights::{LayerSpec, WeightSet};

pub const DEFAULT_KERNEL: usize = 3;

/// Per-pixel `K×K` filter weights stored as `K²×H×W`. Tap `t` addresses
/// offset `(t / K - r, t % K - r)` with `r = (K - 1) / 2`.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterField {
    kernel: usize,
    weights: Tensor,
}

impl FilterField {
    /// Validates shape and the per-pixel simplex constraint.
    pub fn new(kernel: usize, weights: Tensor) -> Result<Self> {
        if kernel % 2 == 0 {
            return Err(Error::InvalidParam(format!("filter size {kernel} must be odd")));
        }
        let s = weights.shape();
        if s.len() != 3 || s[0] != kernel * kernel {
            return shape_err(format!("filter field for K={kernel} must be K²×H×W, got {s:?}"));
        }
        let field = Self { kernel, weights };
        let (min, worst) = field.simplex_error();
        if min < 0.0 || worst > 1e-6 {
            return Err(Error::InvalidParam(format!(
                "filter weights must be non-negative and sum to 1 (min {min}, sum error {worst})"
            )));
        }
        Ok(field)
    }

    pub fn kernel(&self) -> usize {
        self.kernel
    }

    pub fn height(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.weights.shape()[2]
    }

    pub fn weights(&self) -> &Tensor {
        &self.weights
    }

    /// `(smallest tap weight, largest |Σ taps − 1| over pixels)`.
    pub fn simplex_error(&self) -> (f32, f64) {
        let hw = self.height() * self.width();
        let d = self.weights.data();
        let min = d.iter().copied().fold(f32::INFINITY, f32::min);
        let worst = (0..hw)
            .map(|p| {
                let s: f64 = (0..self.kernel * self.kernel).map(|t| d[t * hw + p] as f64).sum();
                (s - 1.0).abs()
            })
            .fold(0.0, f64::max);
        (min, worst)
    }
}

/// The four Haar sub-bands of a feature map.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveletQuad {
    pub ll: FeatureMap,
    pub lh: FeatureMap,
    pub hl: FeatureMap,
    pub hh: FeatureMap,
}

impl WaveletQuad {
    pub fn new(ll: FeatureMap, lh: FeatureMap, hl: FeatureMap, hh: FeatureMap) -> Result<Self> {
        let d = ll.dims();
        if lh.dims() != d || hl.dims() != d || hh.dims() != d {
            return shape_err(format!(
                "sub-bands disagree: LL {:?}, LH {:?}, HL {:?}, HH {:?}",
                d,
                lh.dims(),
                hl.dims(),
                hh.dims()
            ));
        }
        Ok(Self { ll, lh, hl, hh })
    }

    pub fn energy(&self) -> f64 {
        [&self.ll, &self.lh, &self.hl, &self.hh]
            .iter()
            .flat_map(|b| b.data())
            .map(|&v| v as f64 * v as f64)
            .sum()
    }
}

/// Fused feature maps ordered coarsest first, with each level's stride
/// (downsampling factor relative to the input image).
#[derive(Debug, Clone, PartialEq)]
pub struct Pyramid {
    pub levels: Vec<FeatureMap>,
    pub strides: Vec<f64>,
}

/// Parameters of one low-pass filter predictor: a `K²×C×3×3` conv.
#[derive(Debug, Clone)]
pub struct LowpassParams {
    pub kernel_size: usize,
    pub weight: Tensor,
    pub bias: Tensor,
}

impl LowpassParams {
    pub fn geometry(prefix: &str, channels: usize, kernel_size: usize) -> [LayerSpec; 2] {
        LayerSpec::conv3x3(prefix, channels, kernel_size * kernel_size)
    }

    pub fn from_weights(
        ws: &WeightSet,
        prefix: &str,
        channels: usize,
        kernel_size: usize,
    ) -> Result<Self> {
        let k2 = kernel_size * kernel_size;
        Ok(Self {
            kernel_size,
            weight: ws.expect(&format!("{prefix}.weight"), &[k2, channels, 3, 3])?.clone(),
            bias: ws.expect(&format!("{prefix}.bias"), &[k2])?.clone(),
        })
    }
}

/// One low-pass predictor per fusion step; step `s` fuses into level `s + 1`.
#[derive(Debug, Clone)]
pub struct FspeParams {
    pub steps: Vec<LowpassParams>,
}

impl FspeParams {
    pub fn step_prefix(step: usize) -> String {
        format!("fspe.step{step}.lowpass")
    }

    pub fn geometry(levels: usize, channels: usize, kernel_size: usize) -> Vec<LayerSpec> {
        (0..levels.saturating_sub(1))
            .flat_map(|s| LowpassParams::geometry(&Self::step_prefix(s), channels, kernel_size))
            .collect()
    }

    pub fn from_weights(
        ws: &WeightSet,
        levels: usize,
        channels: usize,
        kernel_size: usize,
    ) -> Result<Self> {
        let steps = (0..levels.saturating_sub(1))
            .map(|s| LowpassParams::from_weights(ws, &Self::step_prefix(s), channels, kernel_size))
            .collect::<Result<_>>()?;
        Ok(Self { steps })
    }
}

pub fn predict_lowpass_filters(s_n: &FeatureMap, params: &LowpassParams) -> Result<FilterField> {
    let logits = conv2d_3x3(s_n, &params.weight, &params.bias)?;
    let w = softmax_over_axis(logits.tensor(), 0)?;
    FilterField::new(params.kernel_size, w)
}

/// Filters every channel of `s_n` with the per-pixel weights of `field`,
/// treating out-of-bounds neighbours as zero.
pub fn apply_lowpass(s_n: &FeatureMap, field: &FilterField) -> Result<FeatureMap> {
    let (c, h, w) = s_n.dims();
    if field.height() != h || field.width() != w {
        return shape_err(format!(
            "filter field is {}x{}, feature map is {h}x{w}",
            field.height(),
            field.width()
        ));
    }
    let k = field.kernel();
    let r = (k / 2) as isize;
    let fw = field.weights().data();
    let src = s_n.data();
    let hw = h * w;
    let mut out = vec![0.0f32; c * hw];
    par::for_each_chunk_mut(&mut out, w, |idx, row| {
        let (ch, y) = (idx / h, idx % h);
        let plane = &src[ch * hw..(ch + 1) * hw];
        for (x, slot) in row.iter_mut().enumerate() {
            let mut acc = 0.0f64;
            for dy in -r..=r {
                let sy = y as isize + dy;
                if sy < 0 || sy >= h as isize {
                    continue;
                }
                for dx in -r..=r {
                    let sx = x as isize + dx;
                    if sx < 0 || sx >= w as isize {
                        continue;
                    }
                    let tap = ((dy + r) * k as isize + dx + r) as usize;
                    acc += fw[tap * hw + y * w + x] as f64 * plane[sy as usize * w + sx as usize] as f64;
                }
            }
            *slot = acc as f32;
        }
    });
    FeatureMap::new(c, h, w, out)
}

/// Orthonormal single-level 2-D Haar transform. For each 2×2 block
/// `[a b; c d]`: `LL = (a+b+c+d)/2`, `LH = (a+b-c-d)/2`,
/// `HL = (a-b+c-d)/2`, `HH = (a-b-c+d)/2`.
pub fn dwt_haar(s: &FeatureMap) -> Result<WaveletQuad> {
    let (c, h, w) = s.dims();
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::OddExtent { height: h, width: w });
    }
    let (h2, w2) = (h / 2, w / 2);
    let n = c * h2 * w2;
    let (mut ll, mut lh, mut hl, mut hh) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    for ch in 0..c {
        for y in 0..h2 {
            for x in 0..w2 {
                let a = s.at(ch, 2 * y, 2 * x) as f64;
                let b = s.at(ch, 2 * y, 2 * x + 1) as f64;
                let cc = s.at(ch, 2 * y + 1, 2 * x) as f64;
                let d = s.at(ch, 2 * y + 1, 2 * x + 1) as f64;
                let i = (ch * h2 + y) * w2 + x;
                ll[i] = ((a + b + cc + d) * 0.5) as f32;
                lh[i] = ((a + b - cc - d) * 0.5) as f32;
                hl[i] = ((a - b + cc - d) * 0.5) as f32;
                hh[i] = ((a - b - cc + d) * 0.5) as f32;
            }
        }
    }
    WaveletQuad::new(
        FeatureMap::new(c, h2, w2, ll)?,
        FeatureMap::new(c, h2, w2, lh)?,
        FeatureMap::new(c, h2, w2, hl)?,
        FeatureMap::new(c, h2, w2, hh)?,
    )
}

/// Exact inverse of [`dwt_haar`].
pub fn idwt_haar(q: &WaveletQuad) -> Result<FeatureMap> {
    let (c, h2, w2) = q.ll.dims();
    if q.lh.dims() != q.ll.dims() || q.hl.dims() != q.ll.dims() || q.hh.dims() != q.ll.dims() {
        return shape_err("wavelet sub-bands disagree in shape");
    }
    let (h, w) = (2 * h2, 2 * w2);
    let mut out = vec![0.0f32; c * h * w];
    for ch in 0..c {
        for y in 0..h2 {
            for x in 0..w2 {
                let ll = q.ll.at(ch, y, x) as f64;
                let lh = q.lh.at(ch, y, x) as f64;
                let hl = q.hl.at(ch, y, x) as f64;
                let hh = q.hh.at(ch, y, x) as f64;
                let base = (ch * h + 2 * y) * w + 2 * x;
                out[base] = ((ll + lh + hl + hh) * 0.5) as f32;
                out[base + 1] = ((ll + lh - hl - hh) * 0.5) as f32;
                out[base + w] = ((ll - lh + hl - hh) * 0.5) as f32;
                out[base + w + 1] = ((ll - lh - hl + hh) * 0.5) as f32;
            }
        }
    }
    FeatureMap::new(c, h, w, out)
}

/// One top-down fusion step producing the refined finer map `S'_{n-1}`.
pub fn fuse_level(s_n: &FeatureMap, s_prev: &FeatureMap, params: &LowpassParams) -> Result<FeatureMap> {
    let (c, h, w) = s_n.dims();
    let (cp, hp, wp) = s_prev.dims();
    if cp != c {
        return shape_err(format!("fusion needs equal channels, got {c} and {cp}"));
    }
    if hp != 2 * h || wp != 2 * w {
        return shape_err(format!(
            "finer level must be exactly twice the coarse extent: {h}x{w} vs {hp}x{wp}"
        ));
    }
    let field = predict_lowpass_filters(s_n, params)?;
    let semantics = apply_lowpass(s_n, &field)?;
    let mut quad = dwt_haar(s_prev)?;
    quad.ll = quad.ll.add(&semantics)?;
    idwt_haar(&quad)?.add(s_prev)
}

/// Builds the fused pyramid from levels ordered coarse → fine. The coarsest
/// level passes through; each finer level is fused with the already fused
/// level above it. `finest_stride` is the downsampling factor of the last
/// level; strides double towards the coarse end.
pub fn build_pyramid(levels: &[FeatureMap], params: &FspeParams, finest_stride: f64) -> Result<Pyramid> {
    if levels.len() < 2 {
        return Err(Error::InvalidParam(format!(
            "a pyramid needs at least 2 levels, got {}",
            levels.len()
        )));
    }
    if params.steps.len() != levels.len() - 1 {
        return Err(Error::InvalidParam(format!(
            "{} levels need {} fusion steps, got {}",
            levels.len(),
            levels.len() - 1,
            params.steps.len()
        )));
    }
    for l in &levels[1..] {
        if l.height() % 2 != 0 || l.width() % 2 != 0 {
            return Err(Error::OddExtent { height: l.height(), width: l.width() });
        }
    }
    for pair in levels.windows(2) {
        let (c0, h0, w0) = pair[0].dims();
        let (c1, h1, w1) = pair[1].dims();
        if c0 != c1 || h1 != 2 * h0 || w1 != 2 * w0 {
            return shape_err(format!(
                "inconsistent level geometry: {c0}x{h0}x{w0} then {c1}x{h1}x{w1}"
            ));
        }
    }
    let mut fused = vec![levels[0].clone()];
    for (i, step) in params.steps.iter().enumerate() {
        let next = fuse_level(&fused[i], &levels[i + 1], step)?;
        fused.push(next);
    }
    let n = levels.len();
    let strides = (0..n).map(|i| finest_stride * f64::powi(2.0, (n - 1 - i) as i32)).collect();
    Ok(Pyramid { levels: fused, strides })
}
