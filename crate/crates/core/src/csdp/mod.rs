//! Multi-level, multi-view depth head.
//!
//! Per level (coarse → fine) and per camera: camera-aware channel gating,
//! then one cross-view width-attention block across the rig, then depth
//! bins (initialized at the coarsest level, attractor-refined below it),
//! categorical and regressed depth, and their ω-weighted fusion.

mod bins;
mod cwa;
mod eca;

pub use bins::{
    attractor_refine, attractor_shift, bin_probabilities, categorical_depth, fuse_depth, init_bins,
    regress_depth, BinField, ProbField,
};
pub use cwa::{band_width, cross_view_width_attention, participating_columns, CwaParams};
pub use eca::{eca_condition, eca_gates, eca_kernel_size, EcaParams};

use serde::{Deserialize, Serialize};

use crate::depth::{DepthMap, DepthRange};
use crate::error::{shape_err, Error, Result};
use crate::geometry::CameraModel;
use crate::par;
use crate::tensor::FeatureMap;
use crate::weights::{Activation, LayerSpec, Mlp, MlpSpec, WeightSet};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CsdpConfig {
    /// Attractor strength.
    pub alpha: f64,
    /// Attractor decay exponent.
    pub beta: f64,
    /// Weight of the categorical read-out in the fused depth.
    pub omega: f64,
    /// Width-attention mask ratio.
    pub mu: f64,
    pub num_attractors: usize,
    pub num_bins: usize,
    pub d_min: f64,
    pub d_max: f64,
}

impl Default for CsdpConfig {
    fn default() -> Self {
        Self {
            alpha: 300.0,
            beta: 2.0,
            omega: 0.5,
            mu: 0.2,
            num_attractors: 8,
            num_bins: 64,
            d_min: 1.0,
            d_max: 61.2,
        }
    }
}

impl CsdpConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParam(m));
        if !(0.0..=1.0).contains(&self.omega) {
            return bad(format!("omega must lie in [0, 1], got {}", self.omega));
        }
        if !(0.0..=0.5).contains(&self.mu) {
            return bad(format!("mu must lie in [0, 0.5], got {}", self.mu));
        }
        if !(self.alpha > 0.0) || !(self.beta > 0.0) {
            return bad(format!("alpha and beta must be positive, got {} and {}", self.alpha, self.beta));
        }
        if self.num_attractors == 0 || self.num_bins == 0 {
            return bad("num_attractors and num_bins must be at least 1".into());
        }
        DepthRange::new(self.d_min, self.d_max)?;
        Ok(())
    }

    pub fn range(&self) -> DepthRange {
        DepthRange { min: self.d_min, max: self.d_max }
    }
}

/// Features of the whole rig: `levels[level][camera]`, coarsest level
/// first, cameras in circular yaw order, plus each level's stride.
#[derive(Debug, Clone, PartialEq)]
pub struct RigFeatures {
    pub levels: Vec<Vec<FeatureMap>>,
    pub strides: Vec<f64>,
}

impl RigFeatures {
    pub fn new(levels: Vec<Vec<FeatureMap>>, strides: Vec<f64>) -> Result<Self> {
        if levels.is_empty() || levels.len() != strides.len() {
            return Err(Error::InvalidParam(format!(
                "{} levels with {} strides",
                levels.len(),
                strides.len()
            )));
        }
        let cams = levels[0].len();
        if cams < 2 {
            return Err(Error::InvalidParam(format!("a rig needs at least 2 cameras, got {cams}")));
        }
        for (i, level) in levels.iter().enumerate() {
            if level.len() != cams {
                return shape_err(format!("level {i} has {} cameras, expected {cams}", level.len()));
            }
            if level.iter().any(|f| f.dims() != level[0].dims()) {
                return shape_err(format!("cameras disagree in shape at level {i}"));
            }
        }
        for (i, pair) in levels.windows(2).enumerate() {
            let (c0, h0, w0) = pair[0][0].dims();
            let (c1, h1, w1) = pair[1][0].dims();
            if c0 != c1 || h1 != 2 * h0 || w1 != 2 * w0 {
                return shape_err(format!(
                    "level {} ({c1}x{h1}x{w1}) must double level {i} ({c0}x{h0}x{w0})",
                    i + 1
                ));
            }
        }
        Ok(Self { levels, strides })
    }

    pub fn num_cameras(&self) -> usize {
        self.levels[0].len()
    }

    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn channels(&self) -> usize {
        self.levels[0][0].channels()
    }

    /// The same rig with camera `j` moved to position `(j + shift) mod J`.
    pub fn rotated(&self, shift: usize) -> Self {
        let levels = self.levels.iter().map(|l| rotate(l, shift)).collect();
        Self { levels, strides: self.strides.clone() }
    }
}

pub(crate) fn rotate<T: Clone>(items: &[T], shift: usize) -> Vec<T> {
    let n = items.len();
    let mut out = items.to_vec();
    for (j, it) in items.iter().enumerate() {
        out[(j + shift) % n] = it.clone();
    }
    out
}

/// Parameters of one level of the depth head.
#[derive(Debug, Clone)]
pub struct CsdpLevelParams {
    pub eca: EcaParams,
    pub cwa: CwaParams,
    /// Present at the coarsest level only.
    pub init_bins: Option<Mlp>,
    /// Present below the coarsest level.
    pub attractors: Option<Mlp>,
    pub probabilities: Mlp,
    pub regression: Mlp,
}

#[derive(Debug, Clone)]
pub struct CsdpParams {
    pub levels: Vec<CsdpLevelParams>,
}

fn head(name: String, channels: usize, out: usize) -> MlpSpec {
    MlpSpec::new(name, vec![channels, channels, out], Activation::Identity)
}

impl CsdpParams {
    fn prefix(level: usize) -> String {
        format!("csdp.level{level}")
    }

    fn heads(level: usize, channels: usize, cfg: &CsdpConfig) -> Vec<(&'static str, MlpSpec)> {
        let p = Self::prefix(level);
        let mut v = vec![];
        if level == 0 {
            v.push(("init_bins", head(format!("{p}.init_bins"), channels, cfg.num_bins)));
        } else {
            v.push(("attractors", head(format!("{p}.attractors"), channels, cfg.num_attractors)));
        }
        v.push(("probabilities", head(format!("{p}.probabilities"), channels, cfg.num_bins)));
        v.push(("regression", head(format!("{p}.regression"), channels, 1)));
        v
    }

    pub fn geometry(levels: usize, channels: usize, cfg: &CsdpConfig) -> Vec<LayerSpec> {
        let mut g = Vec::new();
        for l in 0..levels {
            let p = Self::prefix(l);
            g.extend(EcaParams::geometry(&format!("{p}.eca"), channels));
            g.extend(CwaParams::geometry(&format!("{p}.cwa"), channels));
            for (_, spec) in Self::heads(l, channels, cfg) {
                g.extend(spec.layers());
            }
        }
        g
    }

    pub fn from_weights(ws: &WeightSet, levels: usize, channels: usize, cfg: &CsdpConfig) -> Result<Self> {
        let levels = (0..levels)
            .map(|l| {
                let p = Self::prefix(l);
                let mut init = None;
                let mut att = None;
                let mut prob = None;
                let mut reg = None;
                for (role, spec) in Self::heads(l, channels, cfg) {
                    let m = Some(Mlp::from_weights(ws, &spec)?);
                    match role {
                        "init_bins" => init = m,
                        "attractors" => att = m,
                        "probabilities" => prob = m,
                        _ => reg = m,
                    }
                }
                Ok(CsdpLevelParams {
                    eca: EcaParams::from_weights(ws, &format!("{p}.eca"), channels)?,
                    cwa: CwaParams::from_weights(ws, &format!("{p}.cwa"), channels)?,
                    init_bins: init,
                    attractors: att,
                    probabilities: prob.expect("probability head always present"),
                    regression: reg.expect("regression head always present"),
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self { levels })
    }
}

/// Everything one level of the head produced for one camera.
#[derive(Debug, Clone)]
pub struct CameraLevelOutput {
    pub bins: BinField,
    pub categorical: DepthMap,
    pub regressed: DepthMap,
    pub depth: DepthMap,
}

/// Runs the depth head; the result is indexed `[level][camera]`.
pub fn csdp_forward(
    rig: &RigFeatures,
    cams: &[CameraModel],
    cfg: &CsdpConfig,
    params: &CsdpParams,
) -> Result<Vec<Vec<DepthMap>>> {
    Ok(csdp_forward_detailed(rig, cams, cfg, params)?
        .into_iter()
        .map(|l| l.into_iter().map(|o| o.depth).collect())
        .collect())
}

/// Like [`csdp_forward`] but keeps bins and both read-outs.
pub fn csdp_forward_detailed(
    rig: &RigFeatures,
    cams: &[CameraModel],
    cfg: &CsdpConfig,
    params: &CsdpParams,
) -> Result<Vec<Vec<CameraLevelOutput>>> {
    cfg.validate()?;
    if cams.len() != rig.num_cameras() {
        return Err(Error::InvalidParam(format!(
            "{} calibrations for {} cameras",
            cams.len(),
            rig.num_cameras()
        )));
    }
    if params.levels.len() != rig.num_levels() {
        return Err(Error::InvalidParam(format!(
            "parameters for {} levels, rig has {}",
            params.levels.len(),
            rig.num_levels()
        )));
    }
    let range = cfg.range();
    let mut out: Vec<Vec<CameraLevelOutput>> = Vec::with_capacity(rig.num_levels());
    for (l, (level, lp)) in rig.levels.iter().zip(&params.levels).enumerate() {
        let stride = rig.strides[l];
        let gated: Vec<FeatureMap> = par::map_range(level.len(), |j| {
            eca_condition(&level[j], &cams[j], stride, &lp.eca)
        })
        .into_iter()
        .collect::<Result<_>>()?;
        let mixed = cross_view_width_attention(&gated, cfg.mu, &lp.cwa)?;
        let prev = out.last();
        let per_cam: Vec<CameraLevelOutput> = par::map_range(mixed.len(), |j| {
            let f = &mixed[j];
            let bins = match (prev, &lp.init_bins, &lp.attractors) {
                (None, Some(init), _) => init_bins(f, range, init)?,
                (Some(prev), _, Some(att)) => attractor_refine(&prev[j].bins, f, cfg.alpha, cfg.beta, att)?,
                _ => return Err(Error::InvalidParam(format!("level {l} is missing its bin head"))),
            };
            let probs = bin_probabilities(f, &lp.probabilities)?;
            let categorical = categorical_depth(&probs, &bins)?;
            let regressed = regress_depth(f, range, &lp.regression)?;
            let depth = fuse_depth(&categorical, &regressed, cfg.omega)?;
            Ok(CameraLevelOutput { bins, categorical, regressed, depth })
        })
        .into_iter()
        .collect::<Result<_>>()?;
        out.push(per_cam);
    }
    Ok(out)
}
