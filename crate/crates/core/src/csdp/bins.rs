//! Adaptive depth bins, attractor refinement and the two depth read-outs.

use crate::depth::{DepthMap, DepthRange};
use crate::error::{shape_err, Error, Result};
use crate::tensor::{resize_bilinear, sigmoid, softmax_over_axis, FeatureMap, Tensor};
use crate::weights::Mlp;

/// Per-pixel ordered bin centers, `N_B×H×W`, in meters.
#[derive(Debug, Clone, PartialEq)]
pub struct BinField {
    centers: Tensor,
    range: DepthRange,
}

impl BinField {
    /// Checks every center lies in `range` and is non-decreasing along the bin axis.
    pub fn new(centers: Tensor, range: DepthRange) -> Result<Self> {
        let s = centers.shape();
        if s.len() != 3 {
            return shape_err(format!("bin centers must be N_B×H×W, got {s:?}"));
        }
        let field = Self { centers, range };
        for y in 0..field.height() {
            for x in 0..field.width() {
                let c = field.pixel(y, x);
                if c.iter().any(|&v| !range.contains(v as f64)) {
                    return Err(Error::InvalidParam(format!("bin center outside depth range at ({y}, {x})")));
                }
                if c.windows(2).any(|p| p[1] < p[0]) {
                    return Err(Error::InvalidParam(format!("bin centers not sorted at ({y}, {x})")));
                }
            }
        }
        Ok(field)
    }

    pub fn num_bins(&self) -> usize {
        self.centers.shape()[0]
    }

    pub fn height(&self) -> usize {
        self.centers.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.centers.shape()[2]
    }

    pub fn range(&self) -> DepthRange {
        self.range
    }

    pub fn centers(&self) -> &Tensor {
        &self.centers
    }

    pub fn pixel(&self, y: usize, x: usize) -> Vec<f32> {
        let hw = self.height() * self.width();
        let p = y * self.width() + x;
        (0..self.num_bins()).map(|k| self.centers.data()[k * hw + p]).collect()
    }

    /// Bilinear upsampling of every bin plane; ordering is preserved because
    /// each output is a non-negative combination of ordered inputs.
    pub fn upsample(&self, height: usize, width: usize) -> Result<BinField> {
        let (nb, h, w) = (self.num_bins(), self.height(), self.width());
        let hw = h * w;
        let mut data = Vec::with_capacity(nb * height * width);
        for k in 0..nb {
            data.extend(resize_bilinear(&self.centers.data()[k * hw..(k + 1) * hw], h, w, height, width));
        }
        BinField::new(Tensor::new(vec![nb, height, width], data)?, self.range)
    }
}

/// Bin probabilities `N_B×H×W`, summing to one per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbField(Tensor);

impl ProbField {
    pub fn new(t: Tensor) -> Result<Self> {
        let s = t.shape();
        if s.len() != 3 {
            return shape_err(format!("probabilities must be N_B×H×W, got {s:?}"));
        }
        let (nb, hw) = (s[0], s[1] * s[2]);
        for p in 0..hw {
            let mut sum = 0.0f64;
            for k in 0..nb {
                let v = t.data()[k * hw + p];
                if v < 0.0 {
                    return Err(Error::InvalidParam("negative bin probability".into()));
                }
                sum += v as f64;
            }
            if (sum - 1.0).abs() > 1e-5 {
                return Err(Error::InvalidParam(format!("bin probabilities sum to {sum}")));
            }
        }
        Ok(Self(t))
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn num_bins(&self) -> usize {
        self.0.shape()[0]
    }
}

/// Initial bins from the coarsest feature: softmax widths, then centers at the
/// midpoints of the cumulative partition of `range`.
pub fn init_bins(f_top: &FeatureMap, range: DepthRange, mlp: &Mlp) -> Result<BinField> {
    let logits = mlp.apply_pointwise(f_top)?;
    let widths = softmax_over_axis(&logits, 0)?;
    let (nb, h, w) = (widths.shape()[0], widths.shape()[1], widths.shape()[2]);
    let hw = h * w;
    let wd = widths.data();
    let mut centers = vec![0.0f32; nb * hw];
    for p in 0..hw {
        let mut cum = 0.0f64;
        for k in 0..nb {
            let wk = wd[k * hw + p] as f64;
            cum += wk;
            let c = range.min + range.span() * (cum - 0.5 * wk);
            centers[k * hw + p] = c.clamp(range.min, range.max) as f32;
        }
    }
    BinField::new(Tensor::new(vec![nb, h, w], centers)?, range)
}

/// Total pull `Σ_n (p_n − c) / (1 + α·|p_n − c|^β)` exerted on one center.
pub fn attractor_shift(center: f64, attractors: &[f64], alpha: f64, beta: f64) -> f64 {
    attractors
        .iter()
        .map(|&p| {
            let gap = p - center;
            gap / (1.0 + alpha * gap.abs().powf(beta))
        })
        .sum()
}

/// Upsamples `coarse` to the grid of `f_i` (exactly twice as large), predicts
/// attractors per pixel, shifts every center by [`attractor_shift`], clamps
/// to the depth range and re-sorts.
pub fn attractor_refine(
    coarse: &BinField,
    f_i: &FeatureMap,
    alpha: f64,
    beta: f64,
    mlp: &Mlp,
) -> Result<BinField> {
    let (_, h, w) = f_i.dims();
    if h != 2 * coarse.height() || w != 2 * coarse.width() {
        return shape_err(format!(
            "refinement needs a grid twice the coarse bins: {}x{} vs {h}x{w}",
            coarse.height(),
            coarse.width()
        ));
    }
    let range = coarse.range();
    let up = coarse.upsample(h, w)?;
    let logits = mlp.apply_pointwise(f_i)?;
    let n = logits.shape()[0];
    let nb = up.num_bins();
    let hw = h * w;
    let mut centers = up.centers().data().to_vec();
    let mut attractors = vec![0.0f64; n];
    let mut buf = vec![0.0f32; nb];
    for p in 0..hw {
        for (a, slot) in attractors.iter_mut().enumerate() {
            *slot = range.min + range.span() * sigmoid(logits.data()[a * hw + p] as f64);
        }
        for (k, b) in buf.iter_mut().enumerate() {
            let c = centers[k * hw + p] as f64;
            *b = (c + attractor_shift(c, &attractors, alpha, beta)).clamp(range.min, range.max) as f32;
        }
        buf.sort_by(f32::total_cmp);
        for (k, &b) in buf.iter().enumerate() {
            centers[k * hw + p] = b;
        }
    }
    BinField::new(Tensor::new(vec![nb, h, w], centers)?, range)
}

pub fn bin_probabilities(f_i: &FeatureMap, mlp: &Mlp) -> Result<ProbField> {
    let logits = mlp.apply_pointwise(f_i)?;
    ProbField::new(softmax_over_axis(&logits, 0)?)
}

/// Expected bin center under `probs`, clamped to the pixel's center span.
pub fn categorical_depth(probs: &ProbField, bins: &BinField) -> Result<DepthMap> {
    let (ps, bs) = (probs.tensor().shape(), bins.centers().shape());
    if ps != bs {
        return shape_err(format!("probabilities {ps:?} vs bins {bs:?}"));
    }
    let (nb, h, w) = (bs[0], bs[1], bs[2]);
    let hw = h * w;
    let (pd, cd) = (probs.tensor().data(), bins.centers().data());
    let out = (0..hw)
        .map(|p| {
            let mut acc = 0.0f64;
            for k in 0..nb {
                acc += pd[k * hw + p] as f64 * cd[k * hw + p] as f64;
            }
            // centers are sorted, so the span is [first, last]
            acc.clamp(cd[p] as f64, cd[(nb - 1) * hw + p] as f64) as f32
        })
        .collect();
    DepthMap::new(h, w, out)
}

/// `d_min + (d_max − d_min)·σ(logit)` per pixel.
pub fn regress_depth(f_i: &FeatureMap, range: DepthRange, mlp: &Mlp) -> Result<DepthMap> {
    if mlp.output_len() != 1 {
        return shape_err(format!("regression head must output 1 value, got {}", mlp.output_len()));
    }
    let logits = mlp.apply_pointwise(f_i)?;
    let out = logits
        .data()
        .iter()
        .map(|&l| (range.min + range.span() * sigmoid(l as f64)).clamp(range.min, range.max) as f32)
        .collect();
    DepthMap::new(f_i.height(), f_i.width(), out)
}

/// `ω·D^C + (1 − ω)·D^R`.
pub fn fuse_depth(categorical: &DepthMap, regressed: &DepthMap, omega: f64) -> Result<DepthMap> {
    if !(0.0..=1.0).contains(&omega) {
        return Err(Error::InvalidParam(format!("fusion weight must lie in [0, 1], got {omega}")));
    }
    let t = categorical.tensor().zip_with(regressed.tensor(), |c, r| {
        (omega * c as f64 + (1.0 - omega) * r as f64) as f32
    })?;
    DepthMap::from_tensor(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::weights::{seeded_init, Activation, MlpSpec, WeightSet};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn mlp(seed: Option<u64>, c: usize, out: usize) -> Mlp {
        let spec = MlpSpec::new("m", vec![c, c, out], Activation::Identity);
        let ws = match seed {
            Some(s) => seeded_init(s, &spec.layers()).unwrap(),
            None => WeightSet::zeros(&spec.layers()).unwrap(),
        };
        Mlp::from_weights(&ws, &spec).unwrap()
    }

    fn features(seed: u64, c: usize, h: usize, w: usize) -> FeatureMap {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        FeatureMap::new(c, h, w, (0..c * h * w).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap()
    }

    #[test]
    fn uniform_init_bins() {
        let range = DepthRange::new(0.0, 8.0).unwrap();
        let b = init_bins(&features(1, 3, 2, 2), range, &mlp(None, 3, 4)).unwrap();
        assert_eq!(b.pixel(1, 0), vec![1.0, 3.0, 5.0, 7.0]);

        let range = DepthRange::default();
        let b = init_bins(&features(1, 3, 2, 3), range, &mlp(None, 3, 64)).unwrap();
        for k in 0..64 {
            let e = range.min + range.span() * (k as f64 + 0.5) / 64.0;
            assert!((b.pixel(0, 2)[k] as f64 - e).abs() < 1e-5);
        }
    }

    #[test]
    fn random_init_bins_inside_range() {
        let range = DepthRange::default();
        let b = init_bins(&features(2, 4, 3, 3), range, &mlp(Some(5), 4, 16)).unwrap();
        for y in 0..3 {
            for x in 0..3 {
                let c = b.pixel(y, x);
                assert!(c.iter().all(|&v| v as f64 > range.min && (v as f64) < range.max));
                assert!(c.windows(2).all(|p| p[0] < p[1]));
            }
        }
    }

    #[test]
    fn attractor_closed_forms() {
        assert_eq!(attractor_shift(10.0, &[10.0; 8], 300.0, 2.0), 0.0);
        let d = attractor_shift(5.0, &[5.1], 300.0, 2.0);
        assert!((d - 0.025).abs() < 1e-9);
        // odd symmetry
        let a = attractor_shift(3.0, &[2.0, 4.5], 2.0, 1.5);
        let b = attractor_shift(-3.0, &[-2.0, -4.5], 2.0, 1.5);
        assert!((a + b).abs() < 1e-12);
    }

    #[test]
    fn refine_matches_loop_oracle() {
        let range = DepthRange::default();
        let (c, nb, n) = (3, 6, 4);
        let coarse = init_bins(&features(3, c, 2, 3), range, &mlp(Some(6), c, nb)).unwrap();
        let f = features(4, c, 4, 6);
        let att = mlp(Some(7), c, n);
        let refined = attractor_refine(&coarse, &f, 300.0, 2.0, &att).unwrap();
        let up = coarse.upsample(4, 6).unwrap();
        for y in 0..4 {
            for x in 0..6 {
                let logits = att.forward(&f.pixel(y, x)).unwrap();
                let ps: Vec<f64> =
                    logits.iter().map(|&l| range.min + range.span() / (1.0 + (-(l as f64)).exp())).collect();
                let mut expect: Vec<f64> = up
                    .pixel(y, x)
                    .iter()
                    .map(|&c| {
                        let c = c as f64;
                        let mut d = 0.0;
                        for &p in &ps {
                            d += (p - c) / (1.0 + 300.0 * (p - c).abs().powi(2));
                        }
                        (c + d).clamp(range.min, range.max)
                    })
                    .collect();
                expect.sort_by(f64::total_cmp);
                for (g, e) in refined.pixel(y, x).iter().zip(&expect) {
                    assert!((*g as f64 - e).abs() < 1e-5);
                }
            }
        }
        assert!(attractor_refine(&coarse, &features(4, c, 4, 5), 300.0, 2.0, &att).is_err());
    }

    #[test]
    fn refine_fixed_point() {
        // every attractor sits on the (single) bin center → nothing moves
        let range = DepthRange::new(0.0, 10.0).unwrap();
        let coarse = BinField::new(Tensor::full(vec![1, 1, 1], 5.0).unwrap(), range).unwrap();
        let att = mlp(None, 2, 3); // σ(0) → attractors at 5.0
        let out = attractor_refine(&coarse, &features(5, 2, 2, 2), 300.0, 2.0, &att).unwrap();
        assert!(out.centers().data().iter().all(|&v| v == 5.0));
    }

    #[test]
    fn probabilities() {
        let p = bin_probabilities(&features(6, 3, 2, 2), &mlp(None, 3, 5)).unwrap();
        assert!(p.tensor().data().iter().all(|&v| (v - 0.2).abs() < 1e-7));

        let m = mlp(Some(8), 3, 5);
        let f = features(7, 3, 2, 2);
        let p = bin_probabilities(&f, &m).unwrap();
        let logits = m.forward(&f.pixel(1, 1)).unwrap();
        let z: f64 = logits.iter().map(|&l| (l as f64).exp()).sum();
        for k in 0..5 {
            let e = (logits[k] as f64).exp() / z;
            assert!((p.tensor().data()[k * 4 + 3] as f64 - e).abs() < 1e-6);
        }
    }

    #[test]
    fn categorical_cases() {
        let range = DepthRange::new(0.0, 8.0).unwrap();
        let centers: Vec<f32> = [1.0, 3.0, 5.0, 7.0].to_vec();
        let bins = BinField::new(Tensor::new(vec![4, 1, 1], centers).unwrap(), range).unwrap();
        let uni = ProbField::new(Tensor::full(vec![4, 1, 1], 0.25).unwrap()).unwrap();
        assert_eq!(categorical_depth(&uni, &bins).unwrap().data(), &[4.0]);
        for k in 0..4 {
            let mut one = vec![0.0; 4];
            one[k] = 1.0;
            let p = ProbField::new(Tensor::new(vec![4, 1, 1], one).unwrap()).unwrap();
            assert_eq!(categorical_depth(&p, &bins).unwrap().data()[0], [1.0, 3.0, 5.0, 7.0][k]);
        }
        let p5 = ProbField::new(Tensor::full(vec![5, 1, 1], 0.2).unwrap()).unwrap();
        assert!(categorical_depth(&p5, &bins).is_err());
    }

    #[test]
    fn regression_cases() {
        let range = DepthRange::new(1.0, 61.2).unwrap();
        let d = regress_depth(&features(9, 2, 2, 3), range, &mlp(None, 2, 1)).unwrap();
        assert!(d.data().iter().all(|&v| v == 31.1));

        // one affine layer whose bias is ln 3
        let spec = MlpSpec::new("r", vec![2, 1], Activation::Identity);
        let mut ws = WeightSet::zeros(&spec.layers()).unwrap();
        ws.set("r.0.bias", Tensor::new(vec![1], vec![3f32.ln()]).unwrap()).unwrap();
        let m = Mlp::from_weights(&ws, &spec).unwrap();
        let d = regress_depth(&features(9, 2, 1, 1), DepthRange::new(0.0, 4.0).unwrap(), &m).unwrap();
        assert!((d.data()[0] - 3.0).abs() < 1e-6);
    }

    #[test]
    fn fusion_cases() {
        let dc = DepthMap::full(2, 2, 10.0).unwrap();
        let dr = DepthMap::full(2, 2, 20.0).unwrap();
        assert!(fuse_depth(&dc, &dr, 0.5).unwrap().data().iter().all(|&v| v == 15.0));
        assert_eq!(fuse_depth(&dc, &dr, 1.0).unwrap(), dc);
        assert_eq!(fuse_depth(&dc, &dr, 0.0).unwrap(), dr);
        assert!(fuse_depth(&dc, &dr, 1.5).is_err());
        assert!(fuse_depth(&dc, &DepthMap::full(2, 3, 1.0).unwrap(), 0.5).is_err());
    }
}
