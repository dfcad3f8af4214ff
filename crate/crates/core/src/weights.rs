//! Named parameter sets, seeded initialization and small perceptrons.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::container;
use crate::error::{shape_err, Error, Result};
use crate::par;
use crate::tensor::{sigmoid, FeatureMap, Tensor};

/// Geometry of one named parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl LayerSpec {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, fan_in: usize, fan_out: usize) -> Self {
        Self { name: name.into(), shape, fan_in, fan_out }
    }

    /// Xavier-uniform half-width `sqrt(6 / (fan_in + fan_out))`.
    pub fn xavier_bound(&self) -> f64 {
        (6.0 / (self.fan_in + self.fan_out) as f64).sqrt()
    }

    /// Weight and bias of a `C_out×C_in×3×3` convolution.
    pub fn conv3x3(prefix: &str, c_in: usize, c_out: usize) -> [LayerSpec; 2] {
        let (fi, fo) = (c_in * 9, c_out * 9);
        [
            LayerSpec::new(format!("{prefix}.weight"), vec![c_out, c_in, 3, 3], fi, fo),
            LayerSpec::new(format!("{prefix}.bias"), vec![c_out], fi, fo),
        ]
    }

    /// Weight (`out×in`) and bias of an affine layer.
    pub fn linear(prefix: &str, c_in: usize, c_out: usize) -> [LayerSpec; 2] {
        [
            LayerSpec::new(format!("{prefix}.weight"), vec![c_out, c_in], c_in, c_out),
            LayerSpec::new(format!("{prefix}.bias"), vec![c_out], c_in, c_out),
        ]
    }
}

pub const SCHEME_XAVIER: &str = "xavier_uniform";
pub const SCHEME_ZEROS: &str = "zeros";

#[derive(Debug, Clone, PartialEq)]
pub struct WeightSet {
    params: BTreeMap<String, Tensor>,
    seed: Option<u64>,
    scheme: String,
}

impl WeightSet {
    pub fn empty(scheme: impl Into<String>) -> Self {
        Self { params: BTreeMap::new(), seed: None, scheme: scheme.into() }
    }

    /// All-zero parameters for `geometry`.
    pub fn zeros(geometry: &[LayerSpec]) -> Result<Self> {
        let mut ws = Self::empty(SCHEME_ZEROS);
        for spec in geometry {
            ws.insert(spec.name.clone(), Tensor::zeros(spec.shape.clone())?)?;
        }
        Ok(ws)
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn scheme(&self) -> &str {
        &self.scheme
    }

    /// Adds a parameter; names must be unique.
    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) -> Result<()> {
        let name = name.into();
        if self.params.contains_key(&name) {
            return Err(Error::InvalidParam(format!("duplicate weight name `{name}`")));
        }
        self.params.insert(name, t);
        Ok(())
    }

    /// Replaces an existing parameter, keeping its shape.
    pub fn set(&mut self, name: &str, t: Tensor) -> Result<()> {
        let slot = self
            .params
            .get_mut(name)
            .ok_or_else(|| Error::MissingWeight(name.to_string()))?;
        if slot.shape() != t.shape() {
            return shape_err(format!(
                "weight `{name}` is {:?}, replacement is {:?}",
                slot.shape(),
                t.shape()
            ));
        }
        *slot = t;
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.params.get(name).ok_or_else(|| Error::MissingWeight(name.to_string()))
    }

    /// Looks up `name` and checks it has `shape`.
    pub fn expect(&self, name: &str, shape: &[usize]) -> Result<&Tensor> {
        let t = self.get(name)?;
        if t.shape() != shape {
            return shape_err(format!("weight `{name}` is {:?}, expected {shape:?}", t.shape()));
        }
        Ok(t)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Checks that every layer in `geometry` is present with the right shape.
    pub fn validate(&self, geometry: &[LayerSpec]) -> Result<()> {
        for spec in geometry {
            self.expect(&spec.name, &spec.shape)?;
        }
        Ok(())
    }

    /// Serializes as `FPDW`, version, seed, scheme, then named containers in name order.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(b"FPDW");
        out.extend_from_slice(&1u32.to_le_bytes());
        match self.seed {
            Some(s) => {
                out.push(1);
                out.extend_from_slice(&s.to_le_bytes());
            }
            None => {
                out.push(0);
                out.extend_from_slice(&0u64.to_le_bytes());
            }
        }
        put_str(&mut out, &self.scheme);
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for (name, t) in &self.params {
            put_str(&mut out, name);
            out.extend_from_slice(&container::to_bytes(t));
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = bytes;
        let mut magic = [0u8; 4];
        read(&mut r, &mut magic)?;
        if &magic != b"FPDW" {
            return Err(Error::Format("bad weight bundle magic".into()));
        }
        let version = read_u32(&mut r)?;
        if version != 1 {
            return Err(Error::Format(format!("unsupported weight bundle version {version}")));
        }
        let mut flag = [0u8; 1];
        read(&mut r, &mut flag)?;
        let mut seed = [0u8; 8];
        read(&mut r, &mut seed)?;
        let seed = (flag[0] == 1).then(|| u64::from_le_bytes(seed));
        let scheme = read_str(&mut r)?;
        let count = read_u32(&mut r)?;
        let mut ws = WeightSet { params: BTreeMap::new(), seed, scheme };
        for _ in 0..count {
            let name = read_str(&mut r)?;
            let t = container::read_tensor(&mut r)?;
            ws.insert(name, t)?;
        }
        if !r.is_empty() {
            return Err(Error::Format("trailing bytes in weight bundle".into()));
        }
        Ok(ws)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

fn read(r: &mut &[u8], buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| Error::Format("truncated weight bundle".into()))
}

fn read_u32(r: &mut &[u8]) -> Result<u32> {
    let mut b = [0u8; 4];
    read(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_str(r: &mut &[u8]) -> Result<String> {
    let n = read_u32(r)? as usize;
    if n > r.len() {
        return Err(Error::Format("truncated weight bundle".into()));
    }
    let mut buf = vec![0u8; n];
    read(r, &mut buf)?;
    String::from_utf8(buf).map_err(|_| Error::Format("weight name is not utf-8".into()))
}

/// Xavier-uniform initialization: every value (biases included) is drawn
/// from `U[-a, a]`, `a = sqrt(6 / (fan_in + fan_out))`, in `geometry` order
/// from a ChaCha8 stream seeded with `seed`.
pub fn seeded_init(seed: u64, geometry: &[LayerSpec]) -> Result<WeightSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ws = WeightSet::empty(SCHEME_XAVIER);
    ws.seed = Some(seed);
    for spec in geometry {
        let a = spec.xavier_bound() as f32;
        let n: usize = spec.shape.iter().product();
        let data = (0..n).map(|_| rng.gen_range(-a..=a)).collect();
        ws.insert(spec.name.clone(), Tensor::new(spec.shape.clone(), data)?)?;
    }
    Ok(ws)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
    Sigmoid,
    Softplus,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(0.0),
            Activation::Sigmoid => sigmoid(x),
            Activation::Softplus => {
                if x > 30.0 {
                    x
                } else {
                    x.exp().ln_1p()
                }
            }
        }
    }
}

/// A chain of affine layers `dims[0] → dims[1] → … → dims[n]` with ReLU
/// between layers and `output` after the last one. Layer `i` reads
/// `{name}.{i}.weight` and `{name}.{i}.bias`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpSpec {
    pub name: String,
    pub dims: Vec<usize>,
    pub output: Activation,
}

impl MlpSpec {
    pub fn new(name: impl Into<String>, dims: Vec<usize>, output: Activation) -> Self {
        assert!(dims.len() >= 2, "an MLP needs at least input and output dims");
        Self { name: name.into(), dims, output }
    }

    pub fn input_len(&self) -> usize {
        self.dims[0]
    }

    pub fn output_len(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn layers(&self) -> Vec<LayerSpec> {
        self.dims
            .windows(2)
            .enumerate()
            .flat_map(|(i, d)| LayerSpec::linear(&format!("{}.{i}", self.name), d[0], d[1]))
            .collect()
    }
}

/// An [`MlpSpec`] bound to concrete parameters.
#[derive(Debug, Clone)]
pub struct Mlp {
    layers: Vec<(Tensor, Tensor)>,
    output: Activation,
}

impl Mlp {
    pub fn from_weights(weights: &WeightSet, spec: &MlpSpec) -> Result<Self> {
        let layers = spec
            .dims
            .windows(2)
            .enumerate()
            .map(|(i, d)| {
                let w = weights.expect(&format!("{}.{i}.weight", spec.name), &[d[1], d[0]])?;
                let b = weights.expect(&format!("{}.{i}.bias", spec.name), &[d[1]])?;
                Ok((w.clone(), b.clone()))
            })
            .collect::<Result<_>>()?;
        Ok(Self { layers, output: spec.output })
    }

    pub fn input_len(&self) -> usize {
        self.layers[0].0.shape()[1]
    }

    pub fn output_len(&self) -> usize {
        self.layers.last().unwrap().0.shape()[0]
    }

    pub fn forward(&self, x: &[f32]) -> Result<Vec<f32>> {
        if x.len() != self.input_len() {
            return shape_err(format!(
                "perceptron expects input length {}, got {}",
                self.input_len(),
                x.len()
            ));
        }
        let mut cur = x.to_vec();
        let last = self.layers.len() - 1;
        for (li, (w, b)) in self.layers.iter().enumerate() {
            let (n_out, n_in) = (w.shape()[0], w.shape()[1]);
            let act = if li == last { self.output } else { Activation::Relu };
            cur = (0..n_out)
                .map(|o| {
                    let row = &w.data()[o * n_in..(o + 1) * n_in];
                    let acc = row
                        .iter()
                        .zip(&cur)
                        .fold(b.data()[o] as f64, |a, (&wv, &xv)| a + wv as f64 * xv as f64);
                    act.apply(acc) as f32
                })
                .collect();
        }
        Ok(cur)
    }

    /// Applies the perceptron to every pixel's channel vector: `C×H×W → out×H×W`.
    pub fn apply_pointwise(&self, fm: &FeatureMap) -> Result<Tensor> {
        let (c, h, w) = fm.dims();
        if c != self.input_len() {
            return shape_err(format!(
                "perceptron expects {} channels, feature map has {c}",
                self.input_len()
            ));
        }
        let n_out = self.output_len();
        let rows: Vec<Result<Vec<f32>>> = par::map_range(h, |y| {
            let mut row = Vec::with_capacity(w * n_out);
            for x in 0..w {
                row.extend(self.forward(&fm.pixel(y, x))?);
            }
            Ok(row)
        });
        let mut out = vec![0.0f32; n_out * h * w];
        for (y, row) in rows.into_iter().enumerate() {
            let row = row?;
            for x in 0..w {
                for o in 0..n_out {
                    out[(o * h + y) * w + x] = row[x * n_out + o];
                }
            }
        }
        Tensor::new(vec![n_out, h, w], out)
    }
}

/// Evaluates the perceptron described by `spec` with parameters from `weights`.
pub fn perceptron(x: &[f32], weights: &WeightSet, spec: &MlpSpec) -> Result<Vec<f32>> {
    Mlp::from_weights(weights, spec)?.forward(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(dims: Vec<usize>) -> MlpSpec {
        MlpSpec::new("mlp", dims, Activation::Identity)
    }

    #[test]
    fn zero_weights_give_bias() {
        let s = spec(vec![3, 2]);
        let mut ws = WeightSet::zeros(&s.layers()).unwrap();
        ws.set("mlp.0.bias", Tensor::new(vec![2], vec![0.5, -1.5]).unwrap()).unwrap();
        assert_eq!(perceptron(&[1.0, 2.0, 3.0], &ws, &s).unwrap(), vec![0.5, -1.5]);
    }

    #[test]
    fn identity_layer() {
        let s = spec(vec![3, 3]);
        let mut ws = WeightSet::zeros(&s.layers()).unwrap();
        let mut eye = vec![0.0; 9];
        for i in 0..3 {
            eye[i * 4] = 1.0;
        }
        ws.set("mlp.0.weight", Tensor::new(vec![3, 3], eye).unwrap()).unwrap();
        let x = [0.25, -4.0, 7.5];
        assert_eq!(perceptron(&x, &ws, &s).unwrap(), x.to_vec());
    }

    #[test]
    fn two_layer_matches_matvec_oracle() {
        let s = spec(vec![4, 8, 2]);
        let ws = seeded_init(11, &s.layers()).unwrap();
        let x = [0.3f32, -0.7, 1.1, 0.05];
        let w0 = ws.get("mlp.0.weight").unwrap().data();
        let b0 = ws.get("mlp.0.bias").unwrap().data();
        let w1 = ws.get("mlp.1.weight").unwrap().data();
        let b1 = ws.get("mlp.1.bias").unwrap().data();
        let hidden: Vec<f64> = (0..8)
            .map(|o| {
                let mut a = b0[o] as f64;
                for i in 0..4 {
                    a += w0[o * 4 + i] as f64 * x[i] as f64;
                }
                (a as f32).max(0.0) as f64
            })
            .collect();
        let expect: Vec<f64> = (0..2)
            .map(|o| {
                let mut a = b1[o] as f64;
                for i in 0..8 {
                    a += w1[o * 8 + i] as f64 * hidden[i];
                }
                a
            })
            .collect();
        let got = perceptron(&x, &ws, &s).unwrap();
        for (g, e) in got.iter().zip(expect) {
            assert!((*g as f64 - e).abs() < 1e-6);
        }
    }

    #[test]
    fn length_mismatch() {
        let s = spec(vec![3, 2]);
        let ws = WeightSet::zeros(&s.layers()).unwrap();
        assert!(matches!(perceptron(&[1.0], &ws, &s), Err(Error::Shape(_))));
    }

    #[test]
    fn seeded_init_is_reproducible() {
        let geom = [LayerSpec::conv3x3("c", 2, 4).to_vec(), spec(vec![5, 3]).layers()].concat();
        let a = seeded_init(42, &geom).unwrap();
        let b = seeded_init(42, &geom).unwrap();
        assert_eq!(a.to_bytes(), b.to_bytes());
        let c = seeded_init(43, &geom).unwrap();
        assert_ne!(a.to_bytes(), c.to_bytes());
        assert_eq!(WeightSet::from_bytes(&a.to_bytes()).unwrap(), a);
    }

    #[test]
    fn xavier_bound_for_equal_fans() {
        let geom = [LayerSpec::new("w", vec![3, 3], 3, 3)];
        let ws = seeded_init(7, &geom).unwrap();
        assert!(ws.get("w").unwrap().data().iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut ws = WeightSet::empty("x");
        ws.insert("a", Tensor::zeros(vec![1]).unwrap()).unwrap();
        assert!(ws.insert("a", Tensor::zeros(vec![1]).unwrap()).is_err());
    }

    #[test]
    fn pointwise_matches_per_pixel() {
        let s = MlpSpec::new("p", vec![3, 4, 2], Activation::Sigmoid);
        let ws = seeded_init(5, &s.layers()).unwrap();
        let mlp = Mlp::from_weights(&ws, &s).unwrap();
        let fm = FeatureMap::from_fn(3, 2, 5, |c, y, x| (c as f32 - y as f32 * 0.3 + x as f32 * 0.1).sin())
            .unwrap();
        let out = mlp.apply_pointwise(&fm).unwrap();
        assert_eq!(out.shape(), &[2, 2, 5]);
        for y in 0..2 {
            for x in 0..5 {
                let v = mlp.forward(&fm.pixel(y, x)).unwrap();
                for o in 0..2 {
                    assert_eq!(out.data()[(o * 2 + y) * 5 + x], v[o]);
                }
            }
        }
    }
}
