//! Positional depth encoding: predicted depth is lifted to 3-D points,
//! sine-embedded and mixed into a C-channel field added to image features.

use serde::{Deserialize, Serialize};

use crate::depth::DepthMap;
use crate::error::{shape_err, Error, Result};
use crate::geometry::{unproject, CameraModel, Point3};
use crate::par;
use crate::tensor::{resize_bilinear, FeatureMap};
use crate::weights::{Activation, LayerSpec, Mlp, MlpSpec, WeightSet};

pub const DEFAULT_TEMPERATURE: f64 = 10000.0;

/// Axis-aligned box the LiDAR-frame coordinates are normalized by.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PositionRange {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Default for PositionRange {
    fn default() -> Self {
        Self { min: [-61.2, -61.2, -10.0], max: [61.2, 61.2, 10.0] }
    }
}

impl PositionRange {
    pub fn validate(&self) -> Result<()> {
        for a in 0..3 {
            if !(self.min[a].is_finite() && self.max[a].is_finite() && self.min[a] < self.max[a]) {
                return Err(Error::InvalidParam(format!(
                    "position range axis {a} needs min < max, got [{}, {}]",
                    self.min[a], self.max[a]
                )));
            }
        }
        Ok(())
    }

    /// Coordinate `axis` of `p` mapped to `[0, 1]`, clamped.
    pub fn normalize(&self, p: &Point3, axis: usize) -> f64 {
        ((p[axis] - self.min[axis]) / (self.max[axis] - self.min[axis])).clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PeConfig {
    pub channels: usize,
    pub temperature: f64,
    pub range: PositionRange,
}

impl Default for PeConfig {
    fn default() -> Self {
        Self { channels: 48, temperature: DEFAULT_TEMPERATURE, range: PositionRange::default() }
    }
}

impl PeConfig {
    pub fn validate(&self) -> Result<()> {
        check_channels(self.channels)?;
        if !(self.temperature > 1.0 && self.temperature.is_finite()) {
            return Err(Error::InvalidParam(format!("temperature must exceed 1, got {}", self.temperature)));
        }
        self.range.validate()
    }
}

fn check_channels(c: usize) -> Result<()> {
    if c == 0 || c % 6 != 0 {
        return Err(Error::InvalidParam(format!("embedding channels must be a positive multiple of 6, got {c}")));
    }
    Ok(())
}

/// Writes the embedding of one normalized coordinate into `out` (length `n`,
/// even): `out[2i] = sin(2π·u / T^(2i/n))`, `out[2i+1]` the cosine.
fn embed_scalar(u: f64, temperature: f64, out: &mut [f32]) {
    let n = out.len();
    let angle = std::f64::consts::TAU * u;
    for i in 0..n / 2 {
        let freq = temperature.powf(2.0 * i as f64 / n as f64);
        let (s, c) = (angle / freq).sin_cos();
        out[2 * i] = s as f32;
        out[2 * i + 1] = c as f32;
    }
}

/// Sine embedding of a LiDAR-frame point, `C/3` values per axis in x, y, z order.
pub fn sine_embed(p: &Point3, channels: usize, range: &PositionRange, temperature: f64) -> Result<Vec<f32>> {
    check_channels(channels)?;
    let n = channels / 3;
    let mut out = vec![0.0f32; channels];
    for axis in 0..3 {
        embed_scalar(range.normalize(p, axis), temperature, &mut out[axis * n..(axis + 1) * n]);
    }
    Ok(out)
}

/// A `C×H×W` embedding together with the range it was normalized by.
#[derive(Debug, Clone, PartialEq)]
pub struct PositionalEmbedding {
    pub field: FeatureMap,
    pub range: PositionRange,
}

/// The two-layer `C → C → C` mixing perceptron applied after the sine embedding.
#[derive(Debug, Clone)]
pub struct PeParams {
    pub mix: Mlp,
}

impl PeParams {
    pub const PREFIX: &'static str = "pde.mix";

    pub fn mlp_spec(channels: usize) -> MlpSpec {
        MlpSpec::new(Self::PREFIX, vec![channels, channels, channels], Activation::Identity)
    }

    pub fn geometry(channels: usize) -> Vec<LayerSpec> {
        Self::mlp_spec(channels).layers()
    }

    pub fn from_weights(ws: &WeightSet, channels: usize) -> Result<Self> {
        Ok(Self { mix: Mlp::from_weights(ws, &Self::mlp_spec(channels))? })
    }
}

/// Resizes every level to the largest grid and averages them.
pub fn merge_depth_levels(levels: &[DepthMap]) -> Result<DepthMap> {
    let Some(finest) = levels.iter().max_by_key(|d| d.height() * d.width()) else {
        return Err(Error::InvalidParam("positional encoding needs at least one depth level".into()));
    };
    merge_depth_levels_on(levels, finest.height(), finest.width())
}

/// Resizes every level to `h×w` and averages them.
pub fn merge_depth_levels_on(levels: &[DepthMap], h: usize, w: usize) -> Result<DepthMap> {
    if levels.is_empty() {
        return Err(Error::InvalidParam("positional encoding needs at least one depth level".into()));
    }
    let resized: Vec<Vec<f32>> = levels
        .iter()
        .map(|d| {
            if (d.height(), d.width()) == (h, w) {
                d.data().to_vec()
            } else {
                resize_bilinear(d.data(), d.height(), d.width(), h, w)
            }
        })
        .collect();
    if resized.len() == 1 {
        return DepthMap::new(h, w, resized.into_iter().next().unwrap());
    }
    let n = levels.len() as f64;
    let data = (0..h * w)
        .map(|i| (resized.iter().map(|r| r[i] as f64).sum::<f64>() / n) as f32)
        .collect();
    DepthMap::new(h, w, data)
}

/// Sine embedding of every cell of `depth`, unprojected at the cell center
/// in native-image pixels.
pub fn sine_field(depth: &DepthMap, cam: &CameraModel, cfg: &PeConfig) -> Result<FeatureMap> {
    cfg.validate()?;
    let (h, w, c) = (depth.height(), depth.width(), cfg.channels);
    let sx = cam.width() as f64 / w as f64;
    let sy = cam.height() as f64 / h as f64;
    let rows: Vec<Result<Vec<f32>>> = par::map_range(h, |y| {
        let mut row = Vec::with_capacity(w * c);
        for x in 0..w {
            let p = unproject((x as f64 + 0.5) * sx, (y as f64 + 0.5) * sy, depth.at(y, x) as f64, cam)?;
            row.extend(sine_embed(&p, c, &cfg.range, cfg.temperature)?);
        }
        Ok(row)
    });
    scatter_rows(rows, c, h, w)
}

fn scatter_rows(rows: Vec<Result<Vec<f32>>>, c: usize, h: usize, w: usize) -> Result<FeatureMap> {
    let mut out = vec![0.0f32; c * h * w];
    for (y, row) in rows.into_iter().enumerate() {
        let row = row?;
        for x in 0..w {
            for ch in 0..c {
                out[(ch * h + y) * w + x] = row[x * c + ch];
            }
        }
    }
    FeatureMap::new(c, h, w, out)
}

/// Merges the depth levels on the finest grid, embeds every cell, then
/// mixes channels.
pub fn depth_to_pe(
    levels: &[DepthMap],
    cam: &CameraModel,
    cfg: &PeConfig,
    params: &PeParams,
) -> Result<PositionalEmbedding> {
    let merged = merge_depth_levels(levels)?;
    embed_and_mix(&merged, cam, cfg, params)
}

/// Like [`depth_to_pe`] but on an explicit `h×w` grid.
pub fn depth_to_pe_on_grid(
    levels: &[DepthMap],
    h: usize,
    w: usize,
    cam: &CameraModel,
    cfg: &PeConfig,
    params: &PeParams,
) -> Result<PositionalEmbedding> {
    let merged = merge_depth_levels_on(levels, h, w)?;
    embed_and_mix(&merged, cam, cfg, params)
}

fn embed_and_mix(depth: &DepthMap, cam: &CameraModel, cfg: &PeConfig, params: &PeParams) -> Result<PositionalEmbedding> {
    if params.mix.input_len() != cfg.channels || params.mix.output_len() != cfg.channels {
        return shape_err(format!(
            "mixing perceptron is {}→{}, embedding has {} channels",
            params.mix.input_len(),
            params.mix.output_len(),
            cfg.channels
        ));
    }
    let raw = sine_field(depth, cam, cfg)?;
    let mixed = params.mix.apply_pointwise(&raw)?;
    Ok(PositionalEmbedding { field: FeatureMap::from_tensor(mixed)?, range: cfg.range })
}

/// `F + PE`.
pub fn fuse_features_pe(f: &FeatureMap, pe: &PositionalEmbedding) -> Result<FeatureMap> {
    if f.dims() != pe.field.dims() {
        return shape_err(format!("features {:?} and embedding {:?} differ in shape", f.dims(), pe.field.dims()));
    }
    f.add(&pe.field)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::weights::seeded_init;
    use std::f64::consts::{PI, TAU};

    fn cam() -> CameraModel {
        CameraModel::with_identity_pose(100.0, 100.0, 64.0, 32.0, 128, 64).unwrap()
    }

    fn unit_range() -> PositionRange {
        PositionRange { min: [0.0; 3], max: [1.0; 3] }
    }

    #[test]
    fn embedding_closed_form() {
        let v = sine_embed(&Point3::new(0.5, 0.0, 1.0), 12, &unit_range(), 1e4).unwrap();
        let expect = [
            PI.sin(),
            PI.cos(),
            (PI / 100.0).sin(),
            (PI / 100.0).cos(),
            0.0,
            1.0,
            0.0,
            1.0,
            TAU.sin(),
            TAU.cos(),
            (TAU / 100.0).sin(),
            (TAU / 100.0).cos(),
        ];
        for (a, e) in v.iter().zip(expect) {
            assert!((*a as f64 - e).abs() < 1e-6, "{a} vs {e}");
        }
    }

    #[test]
    fn embedding_bounds_and_channel_check() {
        let r = PositionRange::default();
        let v = sine_embed(&Point3::new(12.0, -40.0, 3.0), 48, &r, 1e4).unwrap();
        assert!(v.iter().all(|x| x.abs() <= 1.0));
        assert!(sine_embed(&Point3::origin(), 10, &r, 1e4).is_err());
        assert!(sine_embed(&Point3::origin(), 0, &r, 1e4).is_err());
    }

    #[test]
    fn nearby_points_embed_differently() {
        let r = PositionRange::default();
        let a = sine_embed(&Point3::new(3.0, 4.0, 1.0), 24, &r, 1e4).unwrap();
        for d in [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]] {
            let b = sine_embed(&Point3::new(3.0 + d[0], 4.0 + d[1], 1.0 + d[2]), 24, &r, 1e4).unwrap();
            assert_ne!(a, b);
        }
    }

    fn params(seed: Option<u64>, c: usize) -> PeParams {
        let g = PeParams::geometry(c);
        let ws = match seed {
            Some(s) => seeded_init(s, &g).unwrap(),
            None => WeightSet::zeros(&g).unwrap(),
        };
        PeParams::from_weights(&ws, c).unwrap()
    }

    fn cfg() -> PeConfig {
        PeConfig { channels: 12, ..Default::default() }
    }

    #[test]
    fn single_level_is_embed_then_mix() {
        let d = DepthMap::new(2, 4, vec![5.0, 6.0, 7.0, 8.0, 9.0, 10.0, 11.0, 12.0]).unwrap();
        let p = params(Some(1), 12);
        let pe = depth_to_pe(&[d.clone()], &cam(), &cfg(), &p).unwrap();
        for y in 0..2 {
            for x in 0..4 {
                let u = (x as f64 + 0.5) * 32.0;
                let v = (y as f64 + 0.5) * 32.0;
                let pt = unproject(u, v, d.at(y, x) as f64, &cam()).unwrap();
                let e = p.mix.forward(&sine_embed(&pt, 12, &cfg().range, 1e4).unwrap()).unwrap();
                for ch in 0..12 {
                    assert!((pe.field.at(ch, y, x) - e[ch]).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn identical_levels_match_one_level() {
        let d = DepthMap::new(2, 2, vec![3.0, 4.0, 5.0, 6.0]).unwrap();
        let p = params(Some(2), 12);
        let one = depth_to_pe(&[d.clone()], &cam(), &cfg(), &p).unwrap();
        let two = depth_to_pe(&[d.clone(), d], &cam(), &cfg(), &p).unwrap();
        assert!(one.field.tensor().max_abs_diff(two.field.tensor()) < 1e-6);
    }

    #[test]
    fn two_levels_match_resize_average_oracle() {
        let coarse = DepthMap::new(1, 2, vec![4.0, 8.0]).unwrap();
        let fine = DepthMap::new(2, 4, (0..8).map(|i| 3.0 + i as f32).collect()).unwrap();
        let p = params(Some(3), 12);
        let pe = depth_to_pe(&[coarse.clone(), fine.clone()], &cam(), &cfg(), &p).unwrap();
        // half-pixel bilinear of [4, 8] onto 4 columns: 4, 5, 7, 8
        let up = [4.0, 5.0, 7.0, 8.0];
        for y in 0..2 {
            for x in 0..4 {
                let d = 0.5 * (up[x] + fine.at(y, x) as f64);
                let pt = unproject((x as f64 + 0.5) * 32.0, (y as f64 + 0.5) * 32.0, d, &cam()).unwrap();
                let e = p.mix.forward(&sine_embed(&pt, 12, &cfg().range, 1e4).unwrap()).unwrap();
                for ch in 0..12 {
                    assert!((pe.field.at(ch, y, x) - e[ch]).abs() < 1e-5);
                }
            }
        }
        assert!(depth_to_pe(&[], &cam(), &cfg(), &p).is_err());
        let on_coarse = depth_to_pe_on_grid(&[coarse.clone(), fine], 1, 2, &cam(), &cfg(), &p).unwrap();
        assert_eq!(on_coarse.field.dims(), (12, 1, 2));
    }

    #[test]
    fn zero_mix_gives_bias_field() {
        let mut ws = WeightSet::zeros(&PeParams::geometry(6)).unwrap();
        ws.set("pde.mix.1.bias", crate::Tensor::new(vec![6], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap())
            .unwrap();
        let p = PeParams::from_weights(&ws, 6).unwrap();
        let c = PeConfig { channels: 6, ..Default::default() };
        let pe = depth_to_pe(&[DepthMap::full(2, 3, 10.0).unwrap()], &cam(), &c, &p).unwrap();
        for ch in 0..6 {
            assert!(pe.field.plane(ch).iter().all(|&v| v == (ch + 1) as f32));
        }
    }

    #[test]
    fn feature_fusion_is_elementwise_sum() {
        let pe = depth_to_pe(&[DepthMap::full(2, 2, 7.0).unwrap()], &cam(), &cfg(), &params(Some(4), 12)).unwrap();
        let zero = FeatureMap::zeros(12, 2, 2).unwrap();
        assert_eq!(fuse_features_pe(&zero, &pe).unwrap(), pe.field);
        let f = FeatureMap::from_fn(12, 2, 2, |c, y, x| (c + 2 * y + 5 * x) as f32 * 0.1).unwrap();
        let out = fuse_features_pe(&f, &pe).unwrap();
        for ch in 0..12 {
            for y in 0..2 {
                for x in 0..2 {
                    assert_eq!(out.at(ch, y, x), f.at(ch, y, x) + pe.field.at(ch, y, x));
                }
            }
        }
        let zero_pe = PositionalEmbedding { field: FeatureMap::zeros(12, 2, 2).unwrap(), range: cfg().range };
        assert_eq!(fuse_features_pe(&f, &zero_pe).unwrap(), f);
        assert!(fuse_features_pe(&FeatureMap::zeros(6, 2, 2).unwrap(), &pe).is_err());
    }
}
