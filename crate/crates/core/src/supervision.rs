//! Hybrid depth supervision: smooth-L1 against sparse LiDAR targets plus MSE
//! between mean-variance normalized inverse depth and a normalized pseudo
//! relative-depth map, the weighted total loss, and the analytic gradient of
//! the depth term with respect to the predicted depth map.

use serde::{Deserialize, Serialize};

use crate::depth::DepthMap;
use crate::error::{shape_err, Error, Result};
use crate::geometry::SparseDepthTarget;
use crate::tensor::{pairwise_sum, Tensor};

/// Variances at or below this are treated as a constant field.
pub const MIN_VARIANCE: f64 = 1e-12;

/// Zero-mean, unit-variance relative depth, `H×W`.
#[derive(Debug, Clone, PartialEq)]
pub struct RelDepthMap(Tensor);

impl RelDepthMap {
    pub fn height(&self) -> usize {
        self.0.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.0.shape()[1]
    }

    pub fn data(&self) -> &[f32] {
        self.0.data()
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }
}

/// `(mean, population standard deviation)` of `x`.
fn moments(x: &[f64]) -> Result<(f64, f64)> {
    if x.len() < 2 {
        return Err(Error::Degenerate(format!("normalization needs at least 2 pixels, got {}", x.len())));
    }
    let n = x.len() as f64;
    let mean = pairwise_sum(x) / n;
    let sq: Vec<f64> = x.iter().map(|v| (v - mean) * (v - mean)).collect();
    let var = pairwise_sum(&sq) / n;
    if !(var > MIN_VARIANCE) {
        return Err(Error::Degenerate(format!("constant field: variance {var:e} is not above {MIN_VARIANCE:e}")));
    }
    Ok((mean, var.sqrt()))
}

fn standardize(x: &[f64]) -> Result<Vec<f64>> {
    let (m, s) = moments(x)?;
    Ok(x.iter().map(|v| (v - m) / s).collect())
}

fn rel_from(h: usize, w: usize, z: Vec<f64>) -> Result<RelDepthMap> {
    Tensor::new(vec![h, w], z.into_iter().map(|v| v as f32).collect()).map(RelDepthMap)
}

fn reciprocals(d: &DepthMap) -> Result<Vec<f64>> {
    d.data()
        .iter()
        .map(|&v| {
            if v > 0.0 && v.is_finite() {
                Ok(1.0 / v as f64)
            } else {
                Err(Error::InvalidParam(format!("depth must be positive and finite, got {v}")))
            }
        })
        .collect()
}

/// Mean-variance normalization of `1/D`.
pub fn normalize_inv_depth(d: &DepthMap) -> Result<RelDepthMap> {
    rel_from(d.height(), d.width(), standardize(&reciprocals(d)?)?)
}

/// Mean-variance normalization of a raw relative-depth map (already linear
/// in inverse depth, so no reciprocal is taken).
pub fn normalize_relative(raw: &Tensor) -> Result<RelDepthMap> {
    let (h, w) = match *raw.shape() {
        [h, w] | [1, h, w] => (h, w),
        _ => return shape_err(format!("relative depth must be H×W, got {:?}", raw.shape())),
    };
    raw.ensure_finite("relative depth map")?;
    let x: Vec<f64> = raw.data().iter().map(|&v| v as f64).collect();
    rel_from(h, w, standardize(&x)?)
}

fn smooth_l1(x: f64) -> f64 {
    if x.abs() < 1.0 {
        0.5 * x * x
    } else {
        x.abs() - 0.5
    }
}

fn smooth_l1_deriv(x: f64) -> f64 {
    if x.abs() < 1.0 {
        x
    } else {
        x.signum()
    }
}

fn check_target(h: usize, w: usize, target: &SparseDepthTarget) -> Result<()> {
    if (target.height, target.width) != (h, w) {
        return shape_err(format!(
            "target grid {}x{} does not match prediction {h}x{w}",
            target.height, target.width
        ));
    }
    Ok(())
}

/// Mean smooth-L1 over the target pixels.
pub fn smooth_l1_sparse(pred: &DepthMap, target: &SparseDepthTarget) -> Result<f64> {
    check_target(pred.height(), pred.width(), target)?;
    if target.is_empty() {
        return Err(Error::InvalidParam("sparse depth target has no entries".into()));
    }
    let terms: Vec<f64> = target
        .entries
        .iter()
        .map(|e| smooth_l1(pred.at(e.v as usize, e.u as usize) as f64 - e.depth as f64))
        .collect();
    Ok(pairwise_sum(&terms) / terms.len() as f64)
}

pub fn mse_rel(pred: &RelDepthMap, pseudo: &RelDepthMap) -> Result<f64> {
    if pred.tensor().shape() != pseudo.tensor().shape() {
        return shape_err(format!(
            "relative maps differ in shape: {:?} vs {:?}",
            pred.tensor().shape(),
            pseudo.tensor().shape()
        ));
    }
    let sq: Vec<f64> = pred
        .data()
        .iter()
        .zip(pseudo.data())
        .map(|(&a, &b)| {
            let d = a as f64 - b as f64;
            d * d
        })
        .collect();
    Ok(pairwise_sum(&sq) / sq.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_s: f64,
    pub lambda_m: f64,
    pub lambda_1: f64,
    pub lambda_2: f64,
    pub lambda_3: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { lambda_s: 1.0, lambda_m: 1.0, lambda_1: 1.0, lambda_2: 0.5, lambda_3: 1.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_s", self.lambda_s),
            ("lambda_m", self.lambda_m),
            ("lambda_1", self.lambda_1),
            ("lambda_2", self.lambda_2),
            ("lambda_3", self.lambda_3),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidParam(format!("{name} must be finite and non-negative, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub l_s: f64,
    pub l_m: f64,
    pub l_depth: f64,
    pub l_samp: Option<f64>,
    pub l_reg: Option<f64>,
    pub l_total: f64,
    pub weights: LossWeights,
}

/// The depth term with its two components. A zero weight skips its term,
/// so an empty target or a missing pseudo map is accepted there.
pub fn hybrid_depth_loss(
    pred: &DepthMap,
    target: &SparseDepthTarget,
    pseudo: Option<&RelDepthMap>,
    lambda_s: f64,
    lambda_m: f64,
) -> Result<(f64, f64, f64)> {
    let l_s = if lambda_s == 0.0 { 0.0 } else { smooth_l1_sparse(pred, target)? };
    let l_m = if lambda_m == 0.0 {
        0.0
    } else {
        let Some(pseudo) = pseudo else {
            return Err(Error::InvalidParam("a pseudo relative-depth map is required when lambda_m > 0".into()));
        };
        mse_rel(&normalize_inv_depth(pred)?, pseudo)?
    };
    Ok((l_s, l_m, lambda_s * l_s + lambda_m * l_m))
}

/// `λ₁·L_depth + λ₂·L_samp + λ₃·L_reg`.
pub fn total_loss(l_depth: f64, l_samp: f64, l_reg: f64, lambda: [f64; 3]) -> Result<f64> {
    for (name, v) in [("L_depth", l_depth), ("L_samp", l_samp), ("L_reg", l_reg)] {
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("{name} = {v}")));
        }
    }
    Ok(lambda[0] * l_depth + lambda[1] * l_samp + lambda[2] * l_reg)
}

/// Full report; absent external terms count as zero in the total.
pub fn loss_report(
    pred: &DepthMap,
    target: &SparseDepthTarget,
    pseudo: Option<&RelDepthMap>,
    l_samp: Option<f64>,
    l_reg: Option<f64>,
    weights: LossWeights,
) -> Result<LossReport> {
    weights.validate()?;
    let (l_s, l_m, l_depth) = hybrid_depth_loss(pred, target, pseudo, weights.lambda_s, weights.lambda_m)?;
    let l_total = total_loss(
        l_depth,
        l_samp.unwrap_or(0.0),
        l_reg.unwrap_or(0.0),
        [weights.lambda_1, weights.lambda_2, weights.lambda_3],
    )?;
    Ok(LossReport { l_s, l_m, l_depth, l_samp, l_reg, l_total, weights })
}

/// Problem data for the f64 loss/gradient pair.
struct DepthProblem<'a> {
    width: usize,
    target: &'a SparseDepthTarget,
    pseudo: Option<Vec<f64>>,
    lambda_s: f64,
    lambda_m: f64,
}

impl<'a> DepthProblem<'a> {
    fn new(
        pred: &DepthMap,
        target: &'a SparseDepthTarget,
        pseudo: Option<&RelDepthMap>,
        lambda_s: f64,
        lambda_m: f64,
    ) -> Result<Self> {
        check_target(pred.height(), pred.width(), target)?;
        if lambda_s != 0.0 && target.is_empty() {
            return Err(Error::InvalidParam("sparse depth target has no entries".into()));
        }
        let pseudo = if lambda_m == 0.0 {
            None
        } else {
            let p = pseudo.ok_or_else(|| {
                Error::InvalidParam("a pseudo relative-depth map is required when lambda_m > 0".into())
            })?;
            if (p.height(), p.width()) != (pred.height(), pred.width()) {
                return shape_err("pseudo map and prediction differ in shape");
            }
            Some(p.data().iter().map(|&v| v as f64).collect())
        };
        Ok(Self { width: pred.width(), target, pseudo, lambda_s, lambda_m })
    }

    fn index(&self, u: u32, v: u32) -> usize {
        v as usize * self.width + u as usize
    }

    fn loss(&self, d: &[f64]) -> Result<f64> {
        let mut total = 0.0;
        if self.lambda_s != 0.0 {
            let t: Vec<f64> =
                self.target.entries.iter().map(|e| smooth_l1(d[self.index(e.u, e.v)] - e.depth as f64)).collect();
            total += self.lambda_s * pairwise_sum(&t) / t.len() as f64;
        }
        if let Some(q) = &self.pseudo {
            let n = standardize(&d.iter().map(|v| 1.0 / v).collect::<Vec<_>>())?;
            let sq: Vec<f64> = n.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).collect();
            total += self.lambda_m * pairwise_sum(&sq) / sq.len() as f64;
        }
        Ok(total)
    }

    fn grad(&self, d: &[f64]) -> Result<Vec<f64>> {
        let mut g = vec![0.0; d.len()];
        if let Some(q) = &self.pseudo {
            let p = d.len() as f64;
            let r: Vec<f64> = d.iter().map(|v| 1.0 / v).collect();
            let (m, s) = moments(&r)?;
            let n: Vec<f64> = r.iter().map(|v| (v - m) / s).collect();
            // dL/dn, then back through the standardization and the reciprocal
            let gn: Vec<f64> = n.iter().zip(q).map(|(a, b)| self.lambda_m * 2.0 * (a - b) / p).collect();
            let g_mean = pairwise_sum(&gn) / p;
            let proj = pairwise_sum(&gn.iter().zip(&n).map(|(a, b)| a * b).collect::<Vec<_>>()) / p;
            for k in 0..d.len() {
                let dr = (gn[k] - g_mean - n[k] * proj) / s;
                g[k] = dr * (-1.0 / (d[k] * d[k]));
            }
        }
        if self.lambda_s != 0.0 {
            let t = self.target.len() as f64;
            for e in &self.target.entries {
                let i = self.index(e.u, e.v);
                g[i] += self.lambda_s * smooth_l1_deriv(d[i] - e.depth as f64) / t;
            }
        }
        Ok(g)
    }
}

/// Analytic `∂L_depth/∂D` for every pixel.
pub fn depth_loss_grad(
    pred: &DepthMap,
    target: &SparseDepthTarget,
    pseudo: Option<&RelDepthMap>,
    lambda_s: f64,
    lambda_m: f64,
) -> Result<Tensor> {
    reciprocals(pred)?;
    let prob = DepthProblem::new(pred, target, pseudo, lambda_s, lambda_m)?;
    let d: Vec<f64> = pred.data().iter().map(|&v| v as f64).collect();
    let g = prob.grad(&d)?;
    Tensor::new(vec![pred.height(), pred.width()], g.into_iter().map(|v| v as f32).collect())
}

/// Step used by [`grad_check`].
pub const GRAD_CHECK_STEP: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheck {
    pub step: f64,
    pub pixels: usize,
    pub max_abs_error: f64,
    pub max_rel_error: f64,
}

/// Compares the analytic gradient with central differences, both in f64.
/// The relative error of a pixel is `|a − n| / max(|a|, |n|, 1e-8)`.
pub fn grad_check(
    pred: &DepthMap,
    target: &SparseDepthTarget,
    pseudo: Option<&RelDepthMap>,
    lambda_s: f64,
    lambda_m: f64,
) -> Result<GradCheck> {
    reciprocals(pred)?;
    let prob = DepthProblem::new(pred, target, pseudo, lambda_s, lambda_m)?;
    let mut d: Vec<f64> = pred.data().iter().map(|&v| v as f64).collect();
    let analytic = prob.grad(&d)?;
    let h = GRAD_CHECK_STEP;
    let (mut max_abs, mut max_rel) = (0.0f64, 0.0f64);
    for k in 0..d.len() {
        let orig = d[k];
        d[k] = orig + h;
        let up = prob.loss(&d)?;
        d[k] = orig - h;
        let down = prob.loss(&d)?;
        d[k] = orig;
        let numeric = (up - down) / (2.0 * h);
        let err = (analytic[k] - numeric).abs();
        max_abs = max_abs.max(err);
        max_rel = max_rel.max(err / analytic[k].abs().max(numeric.abs()).max(1e-8));
    }
    Ok(GradCheck { step: h, pixels: d.len(), max_abs_error: max_abs, max_rel_error: max_rel })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::SparseDepth;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn target(h: usize, w: usize, e: &[(u32, u32, f32)]) -> SparseDepthTarget {
        SparseDepthTarget::new(h, w, 1.0, e.iter().map(|&(u, v, depth)| SparseDepth { u, v, depth }).collect())
            .unwrap()
    }

    #[test]
    fn two_pixel_normalization() {
        let r = normalize_inv_depth(&DepthMap::new(1, 2, vec![1.0, 1.0 / 3.0]).unwrap()).unwrap();
        assert!((r.data()[0] + 1.0).abs() < 1e-6 && (r.data()[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn normalization_moments_and_affine_equivalence() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d: Vec<f32> = (0..30).map(|_| rng.gen_range(1.0..60.0)).collect();
        let dm = DepthMap::new(5, 6, d.clone()).unwrap();
        let n = normalize_inv_depth(&dm).unwrap();
        let x: Vec<f64> = n.data().iter().map(|&v| v as f64).collect();
        let mean = x.iter().sum::<f64>() / 30.0;
        let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 30.0;
        assert!(mean.abs() < 1e-5 && (var - 1.0).abs() < 1e-4);

        let (s, t) = (3.7, 0.2);
        let d2: Vec<f32> = d.iter().map(|&v| (1.0 / (s * (1.0 / v as f64) + t)) as f32).collect();
        let n2 = normalize_inv_depth(&DepthMap::new(5, 6, d2).unwrap()).unwrap();
        assert!(n.tensor().max_abs_diff(n2.tensor()) < 1e-5);

        let raw = Tensor::new(vec![5, 6], d.iter().map(|&v| (s / v as f64 + t) as f32).collect()).unwrap();
        assert!(normalize_relative(&raw).unwrap().tensor().max_abs_diff(n.tensor()) < 1e-5);
    }

    #[test]
    fn degenerate_and_invalid_inputs() {
        assert!(matches!(normalize_inv_depth(&DepthMap::full(3, 3, 4.0).unwrap()), Err(Error::Degenerate(_))));
        assert!(matches!(normalize_inv_depth(&DepthMap::full(1, 1, 4.0).unwrap()), Err(Error::Degenerate(_))));
        assert!(normalize_inv_depth(&DepthMap::new(1, 2, vec![1.0, -1.0]).unwrap()).is_err());
        assert!(smooth_l1_sparse(&DepthMap::full(2, 2, 1.0).unwrap(), &target(2, 2, &[])).is_err());
        assert!(total_loss(f64::NAN, 0.0, 0.0, [1.0, 0.5, 1.0]).is_err());
    }

    #[test]
    fn smooth_l1_cases() {
        let d = DepthMap::new(1, 3, vec![5.0, 7.5, 12.0]).unwrap();
        assert_eq!(smooth_l1_sparse(&d, &target(1, 3, &[(0, 0, 5.0), (2, 0, 12.0)])).unwrap(), 0.0);
        assert_eq!(smooth_l1_sparse(&d, &target(1, 3, &[(1, 0, 7.0)])).unwrap(), 0.125);
        assert_eq!(smooth_l1_sparse(&d, &target(1, 3, &[(2, 0, 10.0)])).unwrap(), 1.5);
    }

    #[test]
    fn mse_cases() {
        let a = normalize_relative(&Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap()).unwrap();
        assert_eq!(mse_rel(&a, &a).unwrap(), 0.0);
        let shifted = RelDepthMap(a.tensor().map(|v| v + 1.0));
        assert!((mse_rel(&a, &shifted).unwrap() - 1.0).abs() < 1e-6);
    }

    fn random_case(seed: u64, h: usize, w: usize) -> (DepthMap, SparseDepthTarget, RelDepthMap) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = DepthMap::new(h, w, (0..h * w).map(|_| rng.gen_range(2.0..40.0)).collect()).unwrap();
        let mut cells: Vec<(u32, u32, f32)> = vec![];
        for v in 0..h as u32 {
            for u in 0..w as u32 {
                if rng.gen_bool(0.3) {
                    cells.push((u, v, rng.gen_range(2.0..40.0)));
                }
            }
        }
        if cells.is_empty() {
            cells.push((0, 0, 10.0));
        }
        let raw = Tensor::new(vec![h, w], (0..h * w).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap();
        (d, target(h, w, &cells), normalize_relative(&raw).unwrap())
    }

    #[test]
    fn hybrid_composition() {
        let (d, t, q) = random_case(2, 4, 5);
        let ls = smooth_l1_sparse(&d, &t).unwrap();
        let lm = mse_rel(&normalize_inv_depth(&d).unwrap(), &q).unwrap();
        assert_eq!(hybrid_depth_loss(&d, &t, Some(&q), 1.0, 0.0).unwrap().2, ls);
        assert_eq!(hybrid_depth_loss(&d, &t, Some(&q), 0.0, 1.0).unwrap().2, lm);
        assert!((hybrid_depth_loss(&d, &t, Some(&q), 1.0, 1.0).unwrap().2 - (ls + lm)).abs() < 1e-6);
        assert!(hybrid_depth_loss(&d, &t, None, 1.0, 1.0).is_err());
    }

    #[test]
    fn total_loss_defaults() {
        let w = LossWeights::default();
        let l = [w.lambda_1, w.lambda_2, w.lambda_3];
        assert_eq!(total_loss(2.0, 4.0, 1.0, l).unwrap(), 5.0);
        assert_eq!(total_loss(0.0, 0.0, 0.0, l).unwrap(), 0.0);
        assert_eq!(total_loss(3.0, 9.0, 9.0, [1.0, 0.0, 0.0]).unwrap(), 3.0);
    }

    #[test]
    fn gradient_zero_at_minimum() {
        let d = DepthMap::new(2, 2, vec![2.0, 4.0, 5.0, 8.0]).unwrap();
        let t = target(2, 2, &[(0, 0, 2.0), (1, 1, 8.0)]);
        let q = normalize_inv_depth(&d).unwrap();
        let g = depth_loss_grad(&d, &t, Some(&q), 1.0, 1.0).unwrap();
        assert!(g.max_abs() < 1e-6);
    }

    #[test]
    fn gradient_of_single_target() {
        let d = DepthMap::new(2, 2, vec![2.0, 4.5, 5.0, 8.0]).unwrap();
        let t = target(2, 2, &[(1, 0, 4.0)]);
        let g = depth_loss_grad(&d, &t, None, 1.0, 0.0).unwrap();
        assert_eq!(g.data(), &[0.0, 0.5, 0.0, 0.0]);
        let t2 = target(2, 2, &[(1, 0, 4.0), (0, 1, 5.0)]);
        let g2 = depth_loss_grad(&d, &t2, None, 1.0, 0.0).unwrap();
        assert_eq!(g2.data(), &[0.0, 0.25, 0.0, 0.0]);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for seed in 0..5 {
            let (d, t, q) = random_case(10 + seed, 4, 4);
            let gc = grad_check(&d, &t, Some(&q), 1.0, 1.0).unwrap();
            assert!(gc.max_rel_error < 1e-3, "{gc:?}");
        }
    }

    #[test]
    fn report_round_trips_as_json() {
        let (d, t, q) = random_case(3, 3, 3);
        let r = loss_report(&d, &t, Some(&q), Some(0.4), None, LossWeights::default()).unwrap();
        assert!((r.l_total - (r.l_depth + 0.5 * 0.4)).abs() < 1e-12);
        let back: LossReport = serde_json::from_str(&serde_json::to_string(&r).unwrap()).unwrap();
        assert_eq!(back, r);
    }
}
