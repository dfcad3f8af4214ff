//! End-to-end forward pass on a synthetic rig: pyramid fusion, depth head,
//! positional embedding, and the depth losses against projected LiDAR and
//! pseudo relative depth.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::container;
use crate::csdp::{csdp_forward, CsdpConfig, RigFeatures};
use crate::depth::DepthMap;
use crate::error::{Error, Result};
use crate::fspe::{build_pyramid, Pyramid};
use crate::geometry::{lidar_to_sparse_depth, SparseDepthTarget};
use crate::model::{Model, ModelSpec};
use crate::par;
use crate::pde::{depth_to_pe, fuse_features_pe, PeConfig};
use crate::supervision::{loss_report, normalize_relative, LossReport, LossWeights, RelDepthMap};
use crate::synth::{pseudo_relative, scene_depth, synth_rig, SynthConfig, SynthRig};
use crate::tensor::FeatureMap;

/// Version tag written into every JSON document this crate emits.
pub const FORMAT_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub synth: SynthConfig,
    pub csdp: CsdpConfig,
    pub pe: PeConfig,
    pub loss: LossWeights,
    pub weight_seed: u64,
    pub zero_weights: bool,
    /// Average the per-level depth losses instead of summing them.
    pub mean_levels: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let synth = SynthConfig::default();
        Self {
            synth,
            csdp: CsdpConfig::default(),
            pe: PeConfig { channels: synth.channels, ..PeConfig::default() },
            loss: LossWeights::default(),
            weight_seed: 0,
            zero_weights: false,
            mean_levels: false,
        }
    }
}

impl PipelineConfig {
    pub fn model_spec(&self) -> ModelSpec {
        ModelSpec::new(self.synth.levels, self.synth.channels, self.csdp)
    }

    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.model_spec().validate()?;
        self.pe.validate()?;
        self.loss.validate()?;
        if self.pe.channels != self.synth.channels {
            return Err(Error::InvalidParam(format!(
                "embedding channels ({}) must equal feature channels ({})",
                self.pe.channels, self.synth.channels
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelLoss {
    pub level: usize,
    pub stride: f64,
    /// Per camera.
    pub cameras: Vec<LossReport>,
    /// Mean `L_depth` over cameras.
    pub l_depth: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub version: String,
    pub levels: Vec<LevelLoss>,
    pub l_depth: f64,
    pub l_total: f64,
    pub mean_levels: bool,
    pub depth_min: f32,
    pub depth_max: f32,
    pub target_points: usize,
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    /// Per camera.
    pub pyramids: Vec<Pyramid>,
    /// `[level][camera]`.
    pub depths: Vec<Vec<DepthMap>>,
    /// Per camera, on the finest grid.
    pub embeddings: Vec<FeatureMap>,
    pub features_3d: Vec<FeatureMap>,
    pub report: PipelineReport,
}

impl PipelineOutput {
    /// Every produced tensor in container encoding, in a fixed order, followed
    /// by the JSON report.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        for p in &self.pyramids {
            for l in &p.levels {
                out.extend(container::to_bytes(l.tensor()));
            }
        }
        for level in &self.depths {
            for d in level {
                out.extend(container::to_bytes(d.tensor()));
            }
        }
        for f in self.embeddings.iter().chain(&self.features_3d) {
            out.extend(container::to_bytes(f.tensor()));
        }
        out.extend(serde_json::to_vec(&self.report)?);
        Ok(out)
    }

    pub fn digest(&self) -> Result<String> {
        Ok(hex_digest(&self.to_bytes()?))
    }
}

pub fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Sparse LiDAR targets and normalized pseudo maps for every `[level][camera]`.
pub fn supervision_inputs(
    rig: &SynthRig,
    d_min: f64,
    d_max: f64,
) -> Result<Vec<Vec<(SparseDepthTarget, RelDepthMap)>>> {
    let cfg = &rig.config;
    let strides = cfg.strides();
    (0..cfg.levels)
        .map(|l| {
            let (h, w) = cfg.grid(l);
            par::map_range(rig.cameras.len(), |j| {
                let cam = &rig.cameras[j];
                let t = lidar_to_sparse_depth(&rig.cloud, cam, h, w, strides[l])?;
                let dense = scene_depth(cam, h, w, d_min, d_max);
                let seed = cfg.seed ^ ((l as u64) << 32 | j as u64);
                let q = normalize_relative(&pseudo_relative(&dense, h, w, seed)?)?;
                Ok((t, q))
            })
            .into_iter()
            .collect()
        })
        .collect()
}

/// Runs the forward pass of `model` on `rig` and scores it.
pub fn run_model(rig: &SynthRig, model: &Model, cfg: &PipelineConfig) -> Result<PipelineOutput> {
    cfg.validate()?;
    let finest = cfg.synth.finest_stride;
    let pyramids: Vec<Pyramid> = par::map_range(rig.features.len(), |j| {
        build_pyramid(&rig.features[j], &model.fspe, finest)
    })
    .into_iter()
    .collect::<Result<_>>()?;

    let levels = (0..cfg.synth.levels)
        .map(|l| pyramids.iter().map(|p| p.levels[l].clone()).collect())
        .collect();
    let features = RigFeatures::new(levels, pyramids[0].strides.clone())?;
    let depths = csdp_forward(&features, &rig.cameras, &cfg.csdp, &model.csdp)?;

    let pe_params = model.pe_params(&cfg.pe)?;
    let per_cam: Vec<(FeatureMap, FeatureMap)> = par::map_range(rig.cameras.len(), |j| {
        let maps: Vec<DepthMap> = depths.iter().map(|l| l[j].clone()).collect();
        let pe = depth_to_pe(&maps, &rig.cameras[j], &cfg.pe, pe_params)?;
        let f3d = fuse_features_pe(pyramids[j].levels.last().expect("non-empty pyramid"), &pe)?;
        Ok((pe.field, f3d))
    })
    .into_iter()
    .collect::<Result<_>>()?;
    let (embeddings, features_3d) = per_cam.into_iter().unzip();

    let sup = supervision_inputs(rig, cfg.csdp.d_min, cfg.csdp.d_max)?;
    let mut level_losses = Vec::with_capacity(cfg.synth.levels);
    let mut target_points = 0;
    for (l, (level, inputs)) in depths.iter().zip(&sup).enumerate() {
        let cameras: Vec<LossReport> = level
            .iter()
            .zip(inputs)
            .map(|(d, (t, q))| {
                target_points += t.len();
                loss_report(d, t, Some(q), None, None, cfg.loss)
            })
            .collect::<Result<_>>()?;
        let l_depth = cameras.iter().map(|r| r.l_depth).sum::<f64>() / cameras.len() as f64;
        level_losses.push(LevelLoss { level: l, stride: features.strides[l], cameras, l_depth });
    }
    let sum: f64 = level_losses.iter().map(|l| l.l_depth).sum();
    let l_depth = if cfg.mean_levels { sum / level_losses.len() as f64 } else { sum };
    let l_total = cfg.loss.lambda_1 * l_depth;
    let (depth_min, depth_max) = depths.iter().flatten().map(DepthMap::min_max).fold(
        (f32::INFINITY, f32::NEG_INFINITY),
        |(a, b), (lo, hi)| (a.min(lo), b.max(hi)),
    );

    Ok(PipelineOutput {
        pyramids,
        depths,
        embeddings,
        features_3d,
        report: PipelineReport {
            version: FORMAT_VERSION.to_string(),
            levels: level_losses,
            l_depth,
            l_total,
            mean_levels: cfg.mean_levels,
            depth_min,
            depth_max,
            target_points,
        },
    })
}

/// Generates the rig and weights from `cfg`, then runs [`run_model`].
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineOutput> {
    cfg.validate()?;
    let rig = synth_rig(&cfg.synth)?;
    let spec = cfg.model_spec();
    let ws = spec.init(cfg.weight_seed, cfg.zero_weights)?;
    let model = Model::from_weights(spec, &ws)?;
    run_model(&rig, &model, cfg)
}
