//! Camera-aware efficient channel attention.

use crate::error::{shape_err, Result};
use crate::geometry::CameraModel;
use crate::tensor::{sigmoid, FeatureMap, Tensor};
use crate::weights::{Activation, LayerSpec, Mlp, MlpSpec, WeightSet};

/// ECA kernel size for `channels`: `t = ⌊(log2 C + 1) / 2⌋`, bumped to the
/// next odd number, never below 3.
pub fn eca_kernel_size(channels: usize) -> usize {
    let t = (((channels as f64).log2() + 1.0) / 2.0).floor() as usize;
    let k = if t % 2 == 1 { t } else { t + 1 };
    k.max(3)
}

#[derive(Debug, Clone)]
pub struct EcaParams {
    /// 9 → C, fed with the stride-scaled intrinsics.
    pub intrinsics: Mlp,
    /// Cross-channel 1-D kernel of odd length.
    pub conv: Tensor,
    /// Scalar bias of the 1-D conv.
    pub conv_bias: Tensor,
}

impl EcaParams {
    pub fn mlp_spec(prefix: &str, channels: usize) -> MlpSpec {
        MlpSpec::new(format!("{prefix}.intrinsics"), vec![9, channels], Activation::Identity)
    }

    pub fn geometry(prefix: &str, channels: usize) -> Vec<LayerSpec> {
        let k = eca_kernel_size(channels);
        let mut g = Self::mlp_spec(prefix, channels).layers();
        g.push(LayerSpec::new(format!("{prefix}.conv1d.weight"), vec![k], k, k));
        g.push(LayerSpec::new(format!("{prefix}.conv1d.bias"), vec![1], k, k));
        g
    }

    pub fn from_weights(ws: &WeightSet, prefix: &str, channels: usize) -> Result<Self> {
        let k = eca_kernel_size(channels);
        Ok(Self {
            intrinsics: Mlp::from_weights(ws, &Self::mlp_spec(prefix, channels))?,
            conv: ws.expect(&format!("{prefix}.conv1d.weight"), &[k])?.clone(),
            conv_bias: ws.expect(&format!("{prefix}.conv1d.bias"), &[1])?.clone(),
        })
    }
}

/// Per-channel gates in `[0, 1]`: global average pool, plus the intrinsics
/// embedding, through a zero-padded 1-D conv across channels and a sigmoid.
pub fn eca_gates(f: &FeatureMap, cam: &CameraModel, stride: f64, p: &EcaParams) -> Result<Vec<f64>> {
    let (c, h, w) = f.dims();
    if p.intrinsics.output_len() != c {
        return shape_err(format!(
            "intrinsics perceptron yields {} channels, feature map has {c}",
            p.intrinsics.output_len()
        ));
    }
    let k: Vec<f32> = cam.scaled_intrinsics(stride).iter().map(|&v| v as f32).collect();
    let cam_embed = p.intrinsics.forward(&k)?;
    let hw = (h * w) as f64;
    let descriptor: Vec<f64> = (0..c)
        .map(|ch| f.plane(ch).iter().map(|&v| v as f64).sum::<f64>() / hw + cam_embed[ch] as f64)
        .collect();
    let taps = p.conv.data();
    let r = (taps.len() / 2) as isize;
    let bias = p.conv_bias.data()[0] as f64;
    Ok((0..c as isize)
        .map(|ch| {
            let z = taps.iter().enumerate().fold(bias, |acc, (t, &wt)| {
                let src = ch + t as isize - r;
                if src < 0 || src >= c as isize {
                    acc
                } else {
                    acc + wt as f64 * descriptor[src as usize]
                }
            });
            sigmoid(z)
        })
        .collect())
}

/// Re-weights the channels of `f` by its camera-conditioned gates.
pub fn eca_condition(f: &FeatureMap, cam: &CameraModel, stride: f64, p: &EcaParams) -> Result<FeatureMap> {
    let gates = eca_gates(f, cam, stride, p)?;
    let (c, h, w) = f.dims();
    let hw = h * w;
    let mut out = f.data().to_vec();
    for ch in 0..c {
        for v in &mut out[ch * hw..(ch + 1) * hw] {
            *v = (*v as f64 * gates[ch]) as f32;
        }
    }
    FeatureMap::new(c, h, w, out)
}
