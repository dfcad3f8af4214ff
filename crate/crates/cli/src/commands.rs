use std::path::{Path, PathBuf};

use freqpde::csdp::{csdp_forward, CsdpParams, RigFeatures};
use freqpde::fspe::{build_pyramid, FspeParams};
use freqpde::geometry::{coverage_stats, grid_extent, lidar_to_sparse_depth, CameraModel, SparseDepthTarget};
use freqpde::io::{calibration_json, load_point_cloud, point_cloud_csv};
use freqpde::model::ModelSpec;
use freqpde::pde::{depth_to_pe_on_grid, fuse_features_pe, PeParams};
use freqpde::pipeline::{run_pipeline, PipelineConfig};
use freqpde::selftest::run_selftest;
use freqpde::supervision::{grad_check, loss_report, normalize_relative, total_loss, GradCheck, LossReport, LossWeights};
use freqpde::synth::{pseudo_relative, scene_depth, synth_rig};
use freqpde::weights::WeightSet;
use freqpde::{DepthMap, Error, FeatureMap, Result, Tensor};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::files::{
    at_path, ensure_dir, grid_file, load_cameras, load_grid, load_tensor, print_json, save_tensor, write_json,
};
use crate::{
    ConfigArgs, CoverageArgs, DepthArgs, FspeArgs, LevelChoice, LossArgs, PeArgs, PipelineArgs, ProjectArgs,
    SelftestArgs, SynthArgs, WeightsArgs,
};

fn weight_set(args: &ConfigArgs, cfg: &PipelineConfig, spec: &ModelSpec) -> Result<WeightSet> {
    match &args.weights {
        Some(p) => WeightSet::load(p).map_err(at_path(p)),
        None => spec.init(cfg.weight_seed, cfg.zero_weights),
    }
}

fn feature_grid(dir: &Path, prefix: &str) -> Result<Vec<Vec<FeatureMap>>> {
    load_grid(dir, prefix)?
        .into_iter()
        .map(|level| level.into_iter().map(FeatureMap::from_tensor).collect())
        .collect()
}

fn check_cameras(found: usize, cams: &[CameraModel]) -> Result<()> {
    if found != cams.len() {
        return Err(Error::InvalidParam(format!(
            "inputs have {found} cameras but the calibration has {}",
            cams.len()
        )));
    }
    Ok(())
}

fn shape_of(t: &Tensor) -> Vec<usize> {
    t.shape().to_vec()
}

pub fn synth(a: &SynthArgs) -> Result<()> {
    let mut cfg = a.cfg.resolve()?;
    let s = &mut cfg.synth;
    s.height = a.height.unwrap_or(s.height);
    s.width = a.width.unwrap_or(s.width);
    s.channels = a.channels.unwrap_or(s.channels);
    s.levels = a.levels.unwrap_or(s.levels);
    s.cameras = a.cameras.unwrap_or(s.cameras);
    s.seed = a.data_seed.unwrap_or(s.seed);
    cfg.pe.channels = cfg.synth.channels;
    let rig = synth_rig(&cfg.synth)?;

    ensure_dir(&a.out)?;
    for (j, levels) in rig.features.iter().enumerate() {
        for (l, f) in levels.iter().enumerate() {
            save_tensor(&grid_file(&a.out, "", j, l), f.tensor())?;
        }
    }
    for l in 0..cfg.synth.levels {
        let (h, w) = cfg.synth.grid(l);
        for (j, cam) in rig.cameras.iter().enumerate() {
            let dense = scene_depth(cam, h, w, cfg.csdp.d_min, cfg.csdp.d_max);
            let seed = cfg.synth.seed ^ ((l as u64) << 32 | j as u64);
            save_tensor(&grid_file(&a.out, "pseudo_", j, l), &pseudo_relative(&dense, h, w, seed)?)?;
        }
    }
    let calib = a.out.join("calibration.json");
    std::fs::write(&calib, calibration_json(&rig.cameras)?).map_err(|e| at_path(&calib)(e.into()))?;
    let cloud = a.out.join("cloud.csv");
    std::fs::write(&cloud, point_cloud_csv(&rig.cloud)).map_err(|e| at_path(&cloud)(e.into()))?;
    write_json(&a.out.join("config.json"), &cfg)?;
    write_json(
        &a.out.join("manifest.json"),
        &json!({
            "cameras": cfg.synth.cameras,
            "levels": (0..cfg.synth.levels).map(|l| {
                let (h, w) = cfg.synth.grid(l);
                json!({ "level": l, "shape": [cfg.synth.channels, h, w], "stride": cfg.synth.strides()[l] })
            }).collect::<Vec<_>>(),
            "points": rig.cloud.len(),
        }),
    )?;
    out!("wrote synthetic rig ({} cameras, {} levels) to {}", cfg.synth.cameras, cfg.synth.levels, a.out.display());
    Ok(())
}

pub fn weights(a: &WeightsArgs) -> Result<()> {
    let cfg = a.cfg.resolve()?;
    let spec = ModelSpec::new(a.levels, a.channels, cfg.csdp);
    let ws = spec.init(cfg.weight_seed, cfg.zero_weights)?;
    ws.save(&a.out).map_err(at_path(&a.out))?;
    out!("wrote {} tensors to {}", ws.len(), a.out.display());
    Ok(())
}

pub fn fspe(a: &FspeArgs) -> Result<()> {
    let cfg = a.cfg.resolve()?;
    // [camera][level]
    let cams: Vec<Vec<FeatureMap>> = match &a.rig {
        Some(dir) => {
            let grid = feature_grid(dir, "")?;
            (0..grid[0].len()).map(|j| grid.iter().map(|l| l[j].clone()).collect()).collect()
        }
        None if !a.level.is_empty() => vec![a
            .level
            .iter()
            .map(|p| load_tensor(p).and_then(FeatureMap::from_tensor))
            .collect::<Result<_>>()?],
        None => return Err(Error::InvalidParam("give --rig DIR or --level FILE...".into())),
    };
    let levels = cams[0].len();
    let channels = cams[0][0].channels();
    let finest_w = cams[0][levels - 1].width();
    let finest_stride = match (a.finest_stride, &a.calibration) {
        (Some(s), _) => s,
        (None, Some(p)) => {
            let cal = load_cameras(p)?;
            check_cameras(cams.len(), &cal)?;
            cal[0].width() as f64 / finest_w as f64
        }
        (None, None) => cfg.synth.finest_stride,
    };
    let spec = ModelSpec::new(levels, channels, cfg.csdp);
    let ws = weight_set(&a.cfg, &cfg, &spec)?;
    let params = FspeParams::from_weights(&ws, levels, channels, spec.kernel_size)?;

    ensure_dir(&a.out)?;
    let mut strides = Vec::new();
    let mut shapes = Vec::new();
    for (j, levels) in cams.iter().enumerate() {
        let p = build_pyramid(levels, &params, finest_stride)?;
        for (l, f) in p.levels.iter().enumerate() {
            save_tensor(&grid_file(&a.out, "", j, l), f.tensor())?;
        }
        strides = p.strides;
        shapes = p.levels.iter().map(|f| shape_of(f.tensor())).collect();
    }
    write_json(
        &a.out.join("manifest.json"),
        &json!({
            "cameras": cams.len(),
            "levels": shapes.iter().zip(&strides).enumerate()
                .map(|(l, (s, z))| json!({ "level": l, "shape": s, "stride": z }))
                .collect::<Vec<_>>(),
        }),
    )?;
    out!("fused {} camera(s) x {levels} levels into {}", cams.len(), a.out.display());
    Ok(())
}

pub fn depth(a: &DepthArgs) -> Result<()> {
    let cfg = a.cfg.resolve()?;
    let grid = feature_grid(&a.rig, "")?;
    let cams = load_cameras(&a.calibration)?;
    check_cameras(grid[0].len(), &cams)?;
    let strides: Vec<f64> = grid.iter().map(|l| cams[0].width() as f64 / l[0].width() as f64).collect();
    let (levels, channels) = (grid.len(), grid[0][0].channels());
    let features = RigFeatures::new(grid, strides.clone())?;
    let spec = ModelSpec::new(levels, channels, cfg.csdp);
    let ws = weight_set(&a.cfg, &cfg, &spec)?;
    let params = CsdpParams::from_weights(&ws, levels, channels, &cfg.csdp)?;
    let depths = csdp_forward(&features, &cams, &cfg.csdp, &params)?;

    ensure_dir(&a.out)?;
    let mut entries = Vec::new();
    for (l, level) in depths.iter().enumerate() {
        let (mut lo, mut hi) = (f32::INFINITY, f32::NEG_INFINITY);
        for (j, d) in level.iter().enumerate() {
            save_tensor(&grid_file(&a.out, "depth_", j, l), d.tensor())?;
            let (a, b) = d.min_max();
            lo = lo.min(a);
            hi = hi.max(b);
        }
        entries.push(json!({
            "level": l,
            "shape": [level[0].height(), level[0].width()],
            "stride": strides[l],
            "depth_min": lo,
            "depth_max": hi,
        }));
    }
    write_json(
        &a.out.join("manifest.json"),
        &json!({ "cameras": cams.len(), "d_min": cfg.csdp.d_min, "d_max": cfg.csdp.d_max, "levels": entries }),
    )?;
    out!("wrote {levels} levels x {} cameras of depth to {}", cams.len(), a.out.display());
    Ok(())
}

pub fn pe(a: &PeArgs) -> Result<()> {
    let cfg = a.cfg.resolve()?;
    cfg.pe.validate()?;
    let c = cfg.pe.channels;
    let depth: Vec<Vec<DepthMap>> = load_grid(&a.depth, "depth_")?
        .into_iter()
        .map(|l| l.into_iter().map(DepthMap::from_tensor).collect())
        .collect::<Result<_>>()?;
    let cams = load_cameras(&a.calibration)?;
    check_cameras(depth[0].len(), &cams)?;
    let features = a.rig.as_deref().map(|d| feature_grid(d, "")).transpose()?;
    if let Some(f) = &features {
        check_cameras(f[0].len(), &cams)?;
        if f[0][0].channels() != c {
            return Err(Error::InvalidParam(format!(
                "features have {} channels, embedding has {c}",
                f[0][0].channels()
            )));
        }
    }

    let ws = match &a.cfg.weights {
        Some(p) => WeightSet::load(p).map_err(at_path(p))?,
        None => ModelSpec::new(depth.len().max(2), c, cfg.csdp).init(cfg.weight_seed, cfg.zero_weights)?,
    };
    let params = PeParams::from_weights(&ws, c)?;

    let depth_levels: Vec<usize> = match a.depth_levels {
        LevelChoice::All => (0..depth.len()).collect(),
        LevelChoice::Finest => vec![depth.len() - 1],
    };
    // (level index, grid) of every embedding to produce
    let targets: Vec<(usize, usize, usize)> = match &features {
        Some(f) => {
            let ls: Vec<usize> = match a.feature_levels {
                LevelChoice::All => (0..f.len()).collect(),
                LevelChoice::Finest => vec![f.len() - 1],
            };
            ls.into_iter().map(|l| (l, f[l][0].height(), f[l][0].width())).collect()
        }
        None => {
            let ls: Vec<usize> = match a.feature_levels {
                LevelChoice::All => (0..depth.len()).collect(),
                LevelChoice::Finest => vec![depth.len() - 1],
            };
            ls.into_iter().map(|l| (l, depth[l][0].height(), depth[l][0].width())).collect()
        }
    };

    ensure_dir(&a.out)?;
    let mut written = Vec::new();
    for (j, cam) in cams.iter().enumerate() {
        let maps: Vec<DepthMap> = depth_levels.iter().map(|&l| depth[l][j].clone()).collect();
        for &(l, h, w) in &targets {
            let pe = depth_to_pe_on_grid(&maps, h, w, cam, &cfg.pe, &params)?;
            save_tensor(&grid_file(&a.out, "pe_", j, l), pe.field.tensor())?;
            if let Some(f) = &features {
                let f3d = fuse_features_pe(&f[l][j], &pe)?;
                save_tensor(&grid_file(&a.out, "f3d_", j, l), f3d.tensor())?;
            }
        }
    }
    for &(l, h, w) in &targets {
        written.push(json!({ "level": l, "shape": [c, h, w] }));
    }
    write_json(
        &a.out.join("manifest.json"),
        &json!({
            "cameras": cams.len(),
            "channels": c,
            "depth_levels": depth_levels,
            "features": features.is_some(),
            "outputs": written,
        }),
    )?;
    out!("wrote embeddings for {} cameras to {}", cams.len(), a.out.display());
    Ok(())
}

fn parse_resolutions(list: &[String], cams: &[CameraModel]) -> Result<Vec<(u32, u32)>> {
    if list.is_empty() {
        return Ok(vec![(cams[0].width(), cams[0].height())]);
    }
    list.iter()
        .map(|s| {
            let (w, h) = s
                .split_once(['x', 'X'])
                .ok_or_else(|| Error::InvalidParam(format!("resolution `{s}` is not WIDTHxHEIGHT")))?;
            let parse = |v: &str| {
                v.trim()
                    .parse::<u32>()
                    .ok()
                    .filter(|&n| n > 0)
                    .ok_or_else(|| Error::InvalidParam(format!("resolution `{s}` is not WIDTHxHEIGHT")))
            };
            Ok((parse(w)?, parse(h)?))
        })
        .collect()
}

/// A sparse target as stored on disk.
#[derive(Debug, Serialize, Deserialize)]
struct TargetFile {
    #[serde(default)]
    version: Option<String>,
    #[serde(flatten)]
    target: SparseDepthTarget,
}

fn load_target(path: &Path) -> Result<SparseDepthTarget> {
    let text = std::fs::read_to_string(path).map_err(|e| at_path(path)(e.into()))?;
    let file: TargetFile =
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let t = file.target;
    SparseDepthTarget::new(t.height, t.width, t.stride, t.entries)
}

pub fn project(a: &ProjectArgs) -> Result<()> {
    a.cfg.resolve()?;
    let cloud = load_point_cloud(&a.cloud).map_err(at_path(&a.cloud))?;
    let cams = load_cameras(&a.calibration)?;
    ensure_dir(&a.out)?;
    let mut counts = Vec::new();
    for (j, cam) in cams.iter().enumerate() {
        let (gh, gw) = (grid_extent(cam.height(), a.stride), grid_extent(cam.width(), a.stride));
        let target = lidar_to_sparse_depth(&cloud, cam, gh, gw, a.stride)?;
        counts.push(target.len());
        write_json(&a.out.join(format!("target_cam{j}.json")), &TargetFile { version: None, target })?;
    }
    let report = coverage_stats(&cloud, &cams, &parse_resolutions(&a.resolutions, &cams)?, &a.strides)?;
    write_json(&a.out.join("coverage.json"), &report)?;
    out!(
        "projected {} points into {} cameras: {:?} target cells",
        cloud.len(),
        cams.len(),
        counts
    );
    Ok(())
}

pub fn coverage(a: &CoverageArgs) -> Result<()> {
    a.cfg.resolve()?;
    let cloud = load_point_cloud(&a.cloud).map_err(at_path(&a.cloud))?;
    let cams = load_cameras(&a.calibration)?;
    let report = coverage_stats(&cloud, &cams, &parse_resolutions(&a.resolutions, &cams)?, &a.strides)?;
    match &a.out {
        Some(p) => write_json(p, &report),
        None => print_json(&report),
    }
}

#[derive(Debug, Serialize)]
struct LevelEntry {
    pred: PathBuf,
    report: LossReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    grad_check: Option<GradCheck>,
}

#[derive(Debug, Serialize)]
struct LossOutput {
    version: &'static str,
    levels: Vec<LevelEntry>,
    mean_levels: bool,
    l_depth: f64,
    l_samp: Option<f64>,
    l_reg: Option<f64>,
    l_total: f64,
    weights: LossWeights,
    #[serde(skip_serializing_if = "Option::is_none")]
    grad_check: Option<GradCheck>,
}

pub fn loss(a: &LossArgs) -> Result<()> {
    let cfg = a.cfg.resolve()?;
    let w = cfg.loss;
    let n = a.pred.len();
    for (what, files, weight) in [("target", &a.target, w.lambda_s), ("pseudo", &a.pseudo, w.lambda_m)] {
        if files.len() != n && !(files.is_empty() && weight == 0.0) {
            return Err(Error::InvalidParam(format!(
                "{n} prediction(s) need {n} {what} file(s), got {}",
                files.len()
            )));
        }
    }

    let mut levels = Vec::with_capacity(n);
    for i in 0..n {
        let pred = DepthMap::from_tensor(load_tensor(&a.pred[i])?)?;
        let target = match a.target.get(i) {
            Some(p) => load_target(p)?,
            None => SparseDepthTarget::new(pred.height(), pred.width(), 1.0, Vec::new())?,
        };
        let pseudo = a
            .pseudo
            .get(i)
            .map(|p| load_tensor(p).and_then(|t| normalize_relative(&t)).map_err(at_path(p)))
            .transpose()?;
        let report = loss_report(&pred, &target, pseudo.as_ref(), None, None, w)?;
        let gc = a
            .grad_check
            .then(|| grad_check(&pred, &target, pseudo.as_ref(), w.lambda_s, w.lambda_m))
            .transpose()?;
        levels.push(LevelEntry { pred: a.pred[i].clone(), report, grad_check: gc });
    }

    let mean_levels = a.mean_levels || cfg.mean_levels;
    let sum: f64 = levels.iter().map(|l| l.report.l_depth).sum();
    let l_depth = if mean_levels { sum / n as f64 } else { sum };
    let l_total = total_loss(
        l_depth,
        a.samp.unwrap_or(0.0),
        a.reg.unwrap_or(0.0),
        [w.lambda_1, w.lambda_2, w.lambda_3],
    )?;
    let grad_check = levels.iter().filter_map(|l| l.grad_check.clone()).reduce(|x, y| GradCheck {
        step: x.step,
        pixels: x.pixels + y.pixels,
        max_abs_error: x.max_abs_error.max(y.max_abs_error),
        max_rel_error: x.max_rel_error.max(y.max_rel_error),
    });
    let out = LossOutput {
        version: freqpde::pipeline::FORMAT_VERSION,
        levels,
        mean_levels,
        l_depth,
        l_samp: a.samp,
        l_reg: a.reg,
        l_total,
        weights: w,
        grad_check,
    };
    if let Some(p) = &a.out {
        write_json(p, &out)?;
    }
    print_json(&out)
}

pub fn selftest(a: &SelftestArgs) -> Result<()> {
    let report = run_selftest(a.test_seed);
    for p in &report.properties {
        let mark = if p.passed { "PASS" } else { "FAIL" };
        if p.detail.is_empty() {
            out!("{mark} {}", p.name);
        } else {
            out!("{mark} {}: {}", p.name, p.detail);
        }
    }
    let failed = report.properties.iter().filter(|p| !p.passed).count();
    out!("{} properties, {failed} failed (seed {})", report.properties.len(), report.seed);
    if let Some(p) = &a.out {
        write_json(p, &report)?;
    }
    if failed > 0 {
        return Err(Error::InvalidParam(format!("{failed} selftest properties failed")));
    }
    Ok(())
}

pub fn pipeline(a: &PipelineArgs) -> Result<()> {
    let mut cfg = a.cfg.resolve()?;
    let s = &mut cfg.synth;
    s.height = a.height.unwrap_or(s.height);
    s.width = a.width.unwrap_or(s.width);
    s.channels = a.channels.unwrap_or(s.channels);
    s.levels = a.levels.unwrap_or(s.levels);
    s.cameras = a.cameras.unwrap_or(s.cameras);
    s.seed = a.data_seed.unwrap_or(s.seed);
    if a.channels.is_some() {
        cfg.pe.channels = cfg.synth.channels;
    }
    let out = run_pipeline(&cfg)?;
    if let Some(p) = &a.out {
        write_json(p, &out.report)?;
    }
    out!("digest {}", out.digest()?);
    out!("l_depth {:.6} l_total {:.6}", out.report.l_depth, out.report.l_total);
    Ok(())
}
