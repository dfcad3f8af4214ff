//! Cross-view width attention.
//!
//! For every row, the tokens are the feature vectors at the `⌊μ·W⌋`
//! leftmost and `⌊μ·W⌋` rightmost columns of every view (the bands where
//! adjacent cameras overlap). Single-head scaled dot-product attention runs
//! over all tokens of that row and its output is added back to the same
//! columns. Other columns are copied through untouched.

use crate::error::{shape_err, Error, Result};
use crate::par;
use crate::tensor::{FeatureMap, Tensor};
use crate::weights::{LayerSpec, WeightSet};

#[derive(Debug, Clone)]
pub struct Projection {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Projection {
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let c = x.len();
        let w = self.weight.data();
        (0..c)
            .map(|o| {
                w[o * c..(o + 1) * c]
                    .iter()
                    .zip(x)
                    .fold(self.bias.data()[o] as f64, |a, (&wv, &xv)| a + wv as f64 * xv)
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct CwaParams {
    pub query: Projection,
    pub key: Projection,
    pub value: Projection,
    pub output: Projection,
}

const NAMES: [&str; 4] = ["query", "key", "value", "output"];

impl CwaParams {
    pub fn geometry(prefix: &str, channels: usize) -> Vec<LayerSpec> {
        NAMES
            .iter()
            .flat_map(|n| LayerSpec::linear(&format!("{prefix}.{n}"), channels, channels))
            .collect()
    }

    pub fn from_weights(ws: &WeightSet, prefix: &str, channels: usize) -> Result<Self> {
        let get = |n: &str| -> Result<Projection> {
            Ok(Projection {
                weight: ws.expect(&format!("{prefix}.{n}.weight"), &[channels, channels])?.clone(),
                bias: ws.expect(&format!("{prefix}.{n}.bias"), &[channels])?.clone(),
            })
        };
        Ok(Self { query: get("query")?, key: get("key")?, value: get("value")?, output: get("output")? })
    }

    fn channels(&self) -> usize {
        self.query.bias.len()
    }
}

/// Number of participating columns on each side of a view of width `width`.
pub fn band_width(mu: f64, width: usize) -> usize {
    (mu * width as f64).floor() as usize
}

/// Participating column indices of one view, left band then right band.
pub fn participating_columns(mu: f64, width: usize) -> Vec<usize> {
    let b = band_width(mu, width);
    (0..b).chain(width - b..width).collect()
}

pub fn cross_view_width_attention(views: &[FeatureMap], mu: f64, p: &CwaParams) -> Result<Vec<FeatureMap>> {
    if !(0.0..=0.5).contains(&mu) {
        return Err(Error::InvalidParam(format!("mask ratio must lie in [0, 0.5], got {mu}")));
    }
    let Some(first) = views.first() else {
        return Err(Error::InvalidParam("cross-view attention needs at least one view".into()));
    };
    let (c, h, w) = first.dims();
    if let Some(v) = views.iter().find(|v| v.dims() != (c, h, w)) {
        return shape_err(format!("views disagree in shape: {:?} vs {:?}", (c, h, w), v.dims()));
    }
    if p.channels() != c {
        return shape_err(format!("attention width {} but features have {c} channels", p.channels()));
    }
    let cols = participating_columns(mu, w);
    let mut out: Vec<FeatureMap> = views.to_vec();
    if cols.is_empty() {
        return Ok(out);
    }

    let scale = 1.0 / (c as f64).sqrt();
    // per row: updates for every (view, column) token, view-major
    let updates: Vec<Vec<Vec<f64>>> = par::map_range(h, |y| {
        let tokens: Vec<Vec<f64>> = views
            .iter()
            .flat_map(|v| cols.iter().map(move |&x| v.pixel(y, x).iter().map(|&f| f as f64).collect()))
            .collect();
        let q: Vec<Vec<f64>> = tokens.iter().map(|t| p.query.apply(t)).collect();
        let k: Vec<Vec<f64>> = tokens.iter().map(|t| p.key.apply(t)).collect();
        let v: Vec<Vec<f64>> = tokens.iter().map(|t| p.value.apply(t)).collect();
        q.iter()
            .map(|qi| {
                let scores: Vec<f64> = k.iter().map(|kj| dot(qi, kj) * scale).collect();
                let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
                let z: f64 = e.iter().sum();
                let mut mixed = vec![0.0; c];
                for (a, vj) in e.iter().zip(&v) {
                    for (m, &vv) in mixed.iter_mut().zip(vj) {
                        *m += a / z * vv;
                    }
                }
                p.output.apply(&mixed)
            })
            .collect()
    });

    let hw = h * w;
    for (y, row) in updates.iter().enumerate() {
        for (t, upd) in row.iter().enumerate() {
            let (view, x) = (t / cols.len(), cols[t % cols.len()]);
            let data = out[view].data_mut();
            for (ch, &u) in upd.iter().enumerate() {
                let i = ch * hw + y * w + x;
                data[i] = (data[i] as f64 + u) as f32;
            }
        }
    }
    Ok(out)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::weights::seeded_init;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn views(seed: u64, j: usize, c: usize, h: usize, w: usize) -> Vec<FeatureMap> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..j)
            .map(|_| FeatureMap::new(c, h, w, (0..c * h * w).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap())
            .collect()
    }

    fn params(seed: u64, c: usize) -> (WeightSet, CwaParams) {
        let ws = seeded_init(seed, &CwaParams::geometry("cwa", c)).unwrap();
        let p = CwaParams::from_weights(&ws, "cwa", c).unwrap();
        (ws, p)
    }

    #[test]
    fn empty_mask_is_identity() {
        let v = views(1, 3, 4, 3, 8);
        let (_, p) = params(2, 4);
        assert_eq!(cross_view_width_attention(&v, 0.0, &p).unwrap(), v);
        // band of zero columns even for positive μ
        assert_eq!(cross_view_width_attention(&v, 0.1, &p).unwrap(), v);
    }

    #[test]
    fn zero_value_and_output_is_identity() {
        let v = views(3, 2, 4, 2, 6);
        let (mut ws, _) = params(4, 4);
        for n in ["value", "output"] {
            ws.set(&format!("cwa.{n}.weight"), Tensor::zeros(vec![4, 4]).unwrap()).unwrap();
            ws.set(&format!("cwa.{n}.bias"), Tensor::zeros(vec![4]).unwrap()).unwrap();
        }
        let p = CwaParams::from_weights(&ws, "cwa", 4).unwrap();
        for mu in [0.0, 0.2, 0.5] {
            assert_eq!(cross_view_width_attention(&v, mu, &p).unwrap(), v);
        }
    }

    #[test]
    fn interior_columns_untouched() {
        let v = views(5, 3, 4, 3, 10);
        let (_, p) = params(6, 4);
        let out = cross_view_width_attention(&v, 0.2, &p).unwrap();
        for (a, b) in out.iter().zip(&v) {
            for ch in 0..4 {
                for y in 0..3 {
                    for x in 2..8 {
                        assert_eq!(a.at(ch, y, x).to_bits(), b.at(ch, y, x).to_bits());
                    }
                }
            }
        }
        assert_ne!(out, v);
    }

    #[test]
    fn brute_force_two_views() {
        let (c, h, w) = (3, 2, 4);
        let v = views(7, 2, c, h, w);
        let (ws, p) = params(8, c);
        let out = cross_view_width_attention(&v, 0.25, &p).unwrap();

        let lin = |name: &str, x: &[f64]| -> Vec<f64> {
            let wt = ws.get(&format!("cwa.{name}.weight")).unwrap().data();
            let b = ws.get(&format!("cwa.{name}.bias")).unwrap().data();
            (0..c).map(|o| b[o] as f64 + (0..c).map(|i| wt[o * c + i] as f64 * x[i]).sum::<f64>()).collect()
        };
        // tokens: view 0 col 0, view 0 col 3, view 1 col 0, view 1 col 3
        let slots = [(0usize, 0usize), (0, 3), (1, 0), (1, 3)];
        for y in 0..h {
            let tok: Vec<Vec<f64>> =
                slots.iter().map(|&(j, x)| (0..c).map(|ch| v[j].at(ch, y, x) as f64).collect()).collect();
            for (i, &(j, x)) in slots.iter().enumerate() {
                let q = lin("query", &tok[i]);
                let s: Vec<f64> = tok
                    .iter()
                    .map(|t| {
                        let k = lin("key", t);
                        (0..c).map(|d| q[d] * k[d]).sum::<f64>() / (c as f64).sqrt()
                    })
                    .collect();
                let z: f64 = s.iter().map(|x| x.exp()).sum();
                let mut mix = vec![0.0; c];
                for (t, sv) in tok.iter().zip(&s) {
                    let val = lin("value", t);
                    for d in 0..c {
                        mix[d] += sv.exp() / z * val[d];
                    }
                }
                let o = lin("output", &mix);
                for ch in 0..c {
                    let e = v[j].at(ch, y, x) as f64 + o[ch];
                    assert!((out[j].at(ch, y, x) as f64 - e).abs() < 1e-5);
                }
            }
            for j in 0..2 {
                for x in 1..3 {
                    for ch in 0..c {
                        assert_eq!(out[j].at(ch, y, x), v[j].at(ch, y, x));
                    }
                }
            }
        }
    }

    #[test]
    fn rejects_bad_ratio_and_shapes() {
        let v = views(9, 2, 4, 2, 4);
        let (_, p) = params(10, 4);
        assert!(cross_view_width_attention(&v, 0.6, &p).is_err());
        assert!(cross_view_width_attention(&v, -0.1, &p).is_err());
        let mut bad = v.clone();
        bad[1] = FeatureMap::zeros(4, 2, 6).unwrap();
        assert!(cross_view_width_attention(&bad, 0.25, &p).is_err());
    }

    #[test]
    fn band_geometry() {
        assert_eq!(participating_columns(0.25, 4), vec![0, 3]);
        assert_eq!(participating_columns(0.2, 176).len(), 70);
        assert_eq!(participating_columns(0.5, 6), vec![0, 1, 2, 3, 4, 5]);
    }
}
