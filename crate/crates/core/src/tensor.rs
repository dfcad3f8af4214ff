//! Dense row-major `f32` tensors and the handful of kernels the pipeline needs.
//!
//! Every reduction accumulates in `f64` in a fixed order per output element,
//! so results are bit-identical no matter how output rows are scheduled
//! across threads.

use crate::error::{shape_err, Error, Result};
use crate::par;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        if shape.is_empty() {
            return shape_err("tensor rank must be at least 1");
        }
        if let Some(pos) = shape.iter().position(|&e| e == 0) {
            return shape_err(format!("extent {pos} of {shape:?} is zero"));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return shape_err(format!(
                "shape {shape:?} needs {numel} values, got {}",
                data.len()
            ));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self> {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: Vec<usize>, value: f32) -> Result<Self> {
        let numel = shape.iter().product();
        Self::new(shape, vec![value; numel])
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Self> {
        Self::new(shape, self.data)
    }

    /// Rejects NaN and infinities; `what` names the tensor in the error.
    pub fn ensure_finite(&self, what: &str) -> Result<()> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite(what.to_string()))
        }
    }

    pub fn max_abs(&self) -> f32 {
        self.data.iter().fold(0.0f32, |m, v| m.max(v.abs()))
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f32 {
        assert_eq!(self.shape, other.shape, "max_abs_diff on different shapes");
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0f32, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_with(&self, other: &Tensor, f: impl Fn(f32, f32) -> f32) -> Result<Tensor> {
        if self.shape != other.shape {
            return shape_err(format!(
                "elementwise op on {:?} and {:?}",
                self.shape, other.shape
            ));
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, |a, b| a + b)
    }
}

/// One camera's `C×H×W` activation grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap(Tensor);

impl FeatureMap {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        Tensor::new(vec![channels, height, width], data).map(Self)
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Result<Self> {
        Self::new(channels, height, width, vec![0.0; channels * height * width])
    }

    pub fn from_fn(
        channels: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(channels * height * width);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        Self::new(channels, height, width, data)
    }

    pub fn from_tensor(t: Tensor) -> Result<Self> {
        if t.rank() != 3 {
            return shape_err(format!("feature map must be rank 3, got {:?}", t.shape()));
        }
        Ok(Self(t))
    }

    pub fn channels(&self) -> usize {
        self.0.shape[0]
    }

    pub fn height(&self) -> usize {
        self.0.shape[1]
    }

    pub fn width(&self) -> usize {
        self.0.shape[2]
    }

    /// `(channels, height, width)`
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.channels(), self.height(), self.width())
    }

    pub fn at(&self, c: usize, y: usize, x: usize) -> f32 {
        self.0.data[(c * self.height() + y) * self.width() + x]
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let hw = self.height() * self.width();
        &self.0.data[c * hw..(c + 1) * hw]
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }

    pub fn data(&self) -> &[f32] {
        &self.0.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.0.data
    }

    pub fn add(&self, other: &FeatureMap) -> Result<FeatureMap> {
        self.0.add(&other.0).map(Self)
    }

    /// Feature vector at one pixel, gathered across channels.
    pub fn pixel(&self, y: usize, x: usize) -> Vec<f32> {
        (0..self.channels()).map(|c| self.at(c, y, x)).collect()
    }
}

/// Same-size 3×3 convolution: stride 1, zero padding 1.
///
/// `kernel` is `C_out×C_in×3×3`, `bias` is `C_out`.
pub fn conv2d_3x3(input: &FeatureMap, kernel: &Tensor, bias: &Tensor) -> Result<FeatureMap> {
    let (c_in, h, w) = input.dims();
    let ks = kernel.shape();
    if ks.len() != 4 || ks[2] != 3 || ks[3] != 3 {
        return shape_err(format!("conv kernel must be C_out×C_in×3×3, got {ks:?}"));
    }
    if ks[1] != c_in {
        return shape_err(format!(
            "conv kernel expects {} input channels, feature map has {c_in}",
            ks[1]
        ));
    }
    let c_out = ks[0];
    if bias.shape() != [c_out] {
        return shape_err(format!("conv bias must be [{c_out}], got {:?}", bias.shape()));
    }
    let src = input.data();
    let kd = kernel.data();
    let bd = bias.data();
    let mut out = vec![0.0f32; c_out * h * w];
    // one chunk per (output channel, row)
    par::for_each_chunk_mut(&mut out, w, |idx, row| {
        let (co, y) = (idx / h, idx % h);
        for (x, slot) in row.iter_mut().enumerate() {
            let mut acc = bd[co] as f64;
            for ci in 0..c_in {
                let plane = &src[ci * h * w..(ci + 1) * h * w];
                let k = &kd[(co * c_in + ci) * 9..(co * c_in + ci + 1) * 9];
                for ky in 0..3 {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    for kx in 0..3 {
                        let sx = x as isize + kx as isize - 1;
                        if sx < 0 || sx >= w as isize {
                            continue;
                        }
                        acc += k[ky * 3 + kx] as f64 * plane[sy as usize * w + sx as usize] as f64;
                    }
                }
            }
            *slot = acc as f32;
        }
    });
    FeatureMap::new(c_out, h, w, out)
}

/// Numerically stable softmax along `axis`.
pub fn softmax_over_axis(x: &Tensor, axis: usize) -> Result<Tensor> {
    let shape = x.shape();
    if axis >= shape.len() {
        return Err(Error::InvalidParam(format!(
            "softmax axis {axis} out of range for rank {}",
            shape.len()
        )));
    }
    let n = shape[axis];
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    let src = x.data();
    let mut out = vec![0.0f32; src.len()];
    let mut buf = vec![0.0f64; n];
    for o in 0..outer {
        let base = o * n * inner;
        for i in 0..inner {
            let at = |k: usize| base + k * inner + i;
            let max = (0..n).fold(f64::NEG_INFINITY, |m, k| m.max(src[at(k)] as f64));
            let mut sum = 0.0;
            for (k, b) in buf.iter_mut().enumerate() {
                *b = (src[at(k)] as f64 - max).exp();
                sum += *b;
            }
            for (k, b) in buf.iter().enumerate() {
                out[at(k)] = (b / sum) as f32;
            }
        }
    }
    Tensor::new(shape.to_vec(), out)
}

/// Bilinear resize of one `h×w` plane with half-pixel centers and edge clamping.
pub fn resize_bilinear(plane: &[f32], h: usize, w: usize, out_h: usize, out_w: usize) -> Vec<f32> {
    debug_assert_eq!(plane.len(), h * w);
    if h == out_h && w == out_w {
        return plane.to_vec();
    }
    let taps = |out_i: usize, out_n: usize, in_n: usize| -> (usize, usize, f64) {
        let src = ((out_i as f64 + 0.5) * in_n as f64 / out_n as f64 - 0.5).max(0.0);
        let i0 = (src.floor() as usize).min(in_n - 1);
        let i1 = (i0 + 1).min(in_n - 1);
        (i0, i1, src - i0 as f64)
    };
    let mut out = Vec::with_capacity(out_h * out_w);
    for oy in 0..out_h {
        let (y0, y1, fy) = taps(oy, out_h, h);
        for ox in 0..out_w {
            let (x0, x1, fx) = taps(ox, out_w, w);
            let p = |y: usize, x: usize| plane[y * w + x] as f64;
            let top = p(y0, x0) * (1.0 - fx) + p(y0, x1) * fx;
            let bottom = p(y1, x0) * (1.0 - fx) + p(y1, x1) * fx;
            out.push((top * (1.0 - fy) + bottom * fy) as f32);
        }
    }
    out
}

/// Pairwise (cascade) summation with a fixed split order.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const LEAF: usize = 16;
    if values.len() <= LEAF {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    fn naive_conv(input: &FeatureMap, k: &Tensor, b: &Tensor) -> Vec<f64> {
        let (ci, h, w) = input.dims();
        let co = k.shape()[0];
        let mut out = vec![0.0; co * h * w];
        for o in 0..co {
            for y in 0..h {
                for x in 0..w {
                    let mut acc = b.data()[o] as f64;
                    for i in 0..ci {
                        for dy in -1i64..=1 {
                            for dx in -1i64..=1 {
                                let (sy, sx) = (y as i64 + dy, x as i64 + dx);
                                if sy >= 0 && sy < h as i64 && sx >= 0 && sx < w as i64 {
                                    let kv = k.data()[((o * ci + i) * 3 + (dy + 1) as usize) * 3
                                        + (dx + 1) as usize];
                                    acc += kv as f64 * input.at(i, sy as usize, sx as usize) as f64;
                                }
                            }
                        }
                    }
                    out[(o * h + y) * w + x] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::new(vec![2, 0], vec![]).is_err());
        assert!(Tensor::new(vec![], vec![]).is_err());
    }

    #[test]
    fn conv_zero_input_gives_bias() {
        let input = FeatureMap::zeros(1, 2, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let k = random_tensor(&mut rng, vec![1, 1, 3, 3]);
        let b = Tensor::new(vec![1], vec![0.75]).unwrap();
        let out = conv2d_3x3(&input, &k, &b).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.75));
    }

    #[test]
    fn conv_identity_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let input = FeatureMap::from_tensor(random_tensor(&mut rng, vec![1, 5, 4])).unwrap();
        let mut k = vec![0.0; 9];
        k[4] = 1.0;
        let k = Tensor::new(vec![1, 1, 3, 3], k).unwrap();
        let b = Tensor::zeros(vec![1]).unwrap();
        assert_eq!(conv2d_3x3(&input, &k, &b).unwrap(), input);
    }

    #[test]
    fn conv_matches_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let input = FeatureMap::from_tensor(random_tensor(&mut rng, vec![2, 4, 4])).unwrap();
        let k = random_tensor(&mut rng, vec![3, 2, 3, 3]);
        let b = random_tensor(&mut rng, vec![3]);
        let out = conv2d_3x3(&input, &k, &b).unwrap();
        for (a, e) in out.data().iter().zip(naive_conv(&input, &k, &b)) {
            assert!((*a as f64 - e).abs() < 1e-6);
        }
    }

    #[test]
    fn conv_channel_mismatch() {
        let input = FeatureMap::zeros(2, 4, 4).unwrap();
        let k = Tensor::zeros(vec![1, 3, 3, 3]).unwrap();
        let b = Tensor::zeros(vec![1]).unwrap();
        assert!(matches!(conv2d_3x3(&input, &k, &b), Err(Error::Shape(_))));
    }

    #[test]
    fn conv_is_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = FeatureMap::from_tensor(random_tensor(&mut rng, vec![2, 6, 5])).unwrap();
        let y = FeatureMap::from_tensor(random_tensor(&mut rng, vec![2, 6, 5])).unwrap();
        let k = random_tensor(&mut rng, vec![3, 2, 3, 3]);
        let zero = Tensor::zeros(vec![3]).unwrap();
        let (a, b) = (1.7f32, -0.4f32);
        let mix = FeatureMap::from_tensor(x.tensor().zip_with(y.tensor(), |p, q| a * p + b * q).unwrap())
            .unwrap();
        let lhs = conv2d_3x3(&mix, &k, &zero).unwrap();
        let cx = conv2d_3x3(&x, &k, &zero).unwrap();
        let cy = conv2d_3x3(&y, &k, &zero).unwrap();
        let rhs = cx.tensor().zip_with(cy.tensor(), |p, q| a * p + b * q).unwrap();
        assert!(lhs.tensor().max_abs_diff(&rhs) < 1e-5);
    }

    #[test]
    fn softmax_uniform_and_closed_form() {
        let t = Tensor::full(vec![9], 0.3).unwrap();
        let s = softmax_over_axis(&t, 0).unwrap();
        assert!(s.data().iter().all(|&v| (v - 1.0 / 9.0).abs() < 1e-7));

        let t = Tensor::new(vec![2], vec![0.0, 2f32.ln()]).unwrap();
        let s = softmax_over_axis(&t, 0).unwrap();
        assert!((s.data()[0] - 1.0 / 3.0).abs() < 1e-7);
        assert!((s.data()[1] - 2.0 / 3.0).abs() < 1e-7);
    }

    #[test]
    fn softmax_shift_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let t = random_tensor(&mut rng, vec![3, 7, 2]);
        let shifted = t.map(|v| v + 1000.0);
        for axis in 0..3 {
            let a = softmax_over_axis(&t, axis).unwrap();
            let b = softmax_over_axis(&shifted, axis).unwrap();
            assert!(a.max_abs_diff(&b) < 1e-4, "axis {axis}");
        }
        assert!(softmax_over_axis(&t, 3).is_err());
    }

    #[test]
    fn resize_identity_and_constant() {
        let plane: Vec<f32> = (0..12).map(|v| v as f32).collect();
        assert_eq!(resize_bilinear(&plane, 3, 4, 3, 4), plane);
        let c = vec![2.5f32; 6];
        assert!(resize_bilinear(&c, 2, 3, 4, 6).iter().all(|&v| v == 2.5));
    }

    #[test]
    fn pairwise_sum_matches_naive() {
        let v: Vec<f64> = (0..1000).map(|i| (i as f64).sin()).collect();
        let naive: f64 = v.iter().sum();
        assert!((pairwise_sum(&v) - naive).abs() < 1e-10);
    }
}
