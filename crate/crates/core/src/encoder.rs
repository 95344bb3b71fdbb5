//! MLP embedding function with an L2-normalization head, SGD with momentum,
//! the step learning-rate schedule and the checkpoint file.
//!
//! Hidden layers are `tanh(W h + b)`; the last layer is linear and its output
//! is normalized to unit length.

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::rng::RngState;
use crate::synthdata::{expect_magic, get_f64, get_u32, put_f64, put_u32};
use crate::vecmath::{self, FeatureVec};
use crate::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"CTACLCKP";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimConfig {
    pub base_lr: f64,
    pub momentum: f64,
    pub decay_factor: f64,
    pub decay_every: u32,
    pub epochs: u32,
    pub batch_size: usize,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig { base_lr: 0.1, momentum: 0.9, decay_factor: 0.1, decay_every: 10, epochs: 50, batch_size: 256 }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return Err(Error::InvalidParam("base_lr must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidParam("momentum must be in [0, 1)".into()));
        }
        if self.decay_every == 0 || self.batch_size == 0 {
            return Err(Error::InvalidParam("decay_every and batch_size must be positive".into()));
        }
        Ok(())
    }
}

/// `base_lr * decay_factor ^ floor(epoch / decay_every)` for a 0-based epoch.
pub fn lr_at(epoch: u32, cfg: &OptimConfig) -> f64 {
    cfg.base_lr * cfg.decay_factor.powi((epoch / cfg.decay_every) as i32)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub in_dim: usize,
    pub out_dim: usize,
    /// Row-major `out_dim x in_dim`.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Layer { in_dim, out_dim, weight: vec![0.0; in_dim * out_dim], bias: vec![0.0; out_dim] }
    }

    fn affine(&self, x: &[f64]) -> Vec<f64> {
        self.weight
            .chunks_exact(self.in_dim)
            .zip(&self.bias)
            .map(|(row, b)| vecmath::dot_unchecked(row, x) + b)
            .collect()
    }

    fn params(&self) -> impl Iterator<Item = &f64> {
        self.weight.iter().chain(&self.bias)
    }
}

/// Parameter-shaped buffer used for gradients and momentum.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Layer>,
}

impl Gradients {
    pub fn add_assign(&mut self, other: &Gradients) -> Result<()> {
        if !same_shape(&self.layers, &other.layers) {
            return Err(Error::Integrity("gradient shapes differ".into()));
        }
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weight.iter_mut().zip(&b.weight).for_each(|(x, y)| *x += y);
            a.bias.iter_mut().zip(&b.bias).for_each(|(x, y)| *x += y);
        }
        Ok(())
    }

    pub fn flat(&self) -> Vec<f64> {
        self.layers.iter().flat_map(|l| l.params().copied()).collect()
    }
}

fn same_shape(a: &[Layer], b: &[Layer]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.in_dim == y.in_dim && x.out_dim == y.out_dim)
}

/// Activations kept by [`Encoder::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input of every layer; entry `l + 1` is the tanh output of layer `l`.
    inputs: Vec<Vec<f64>>,
    /// Output of the last layer before normalization.
    pre_norm: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    layers: Vec<Layer>,
    velocity: Gradients,
}

impl Encoder {
    /// `dims = [d_in, hidden.., d_out]`. Weights are `N(0, 1/fan_in)`, biases zero.
    pub fn init(dims: &[usize], rng: &mut ChaCha8Rng) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::InvalidParam("encoder needs at least an input and an output width".into()));
        }
        if let Some(pos) = dims.iter().position(|&d| d == 0) {
            return Err(Error::InvalidParam(format!("layer width {pos} is zero")));
        }
        let layers: Vec<Layer> = dims
            .windows(2)
            .map(|w| {
                let std = (1.0 / w[0] as f64).sqrt();
                let weight = (0..w[0] * w[1]).map(|_| rng.sample::<f64, _>(StandardNormal) * std).collect();
                Layer { in_dim: w[0], out_dim: w[1], weight, bias: vec![0.0; w[1]] }
            })
            .collect();
        Ok(Self::from_layers(layers))
    }

    pub fn from_layers(layers: Vec<Layer>) -> Self {
        let velocity = Gradients { layers: layers.iter().map(|l| Layer::zeros(l.in_dim, l.out_dim)).collect() };
        Encoder { layers, velocity }
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn velocity(&self) -> &Gradients {
        &self.velocity
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.layers[0].in_dim];
        d.extend(self.layers.iter().map(|l| l.out_dim));
        d
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map(|l| l.out_dim).unwrap_or(0)
    }

    pub fn zero_grads(&self) -> Gradients {
        Gradients { layers: self.layers.iter().map(|l| Layer::zeros(l.in_dim, l.out_dim)).collect() }
    }

    pub fn forward(&self, x: &[f64]) -> Result<(FeatureVec, ForwardCache)> {
        if x.len() != self.input_dim() {
            return Err(Error::Dimension { expected: self.input_dim(), got: x.len() });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("encoder input".into()));
        }
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut h = x.to_vec();
        for (l, layer) in self.layers.iter().enumerate() {
            let mut a = layer.affine(&h);
            if l < last {
                a.iter_mut().for_each(|v| *v = v.tanh());
            }
            if a.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteActivation { layer: l });
            }
            inputs.push(h);
            h = a;
        }
        let z = vecmath::l2_normalize(&h).map_err(|e| match e {
            Error::ZeroNorm => Error::NonFiniteActivation { layer: last },
            e => e,
        })?;
        Ok((z, ForwardCache { inputs, pre_norm: h }))
    }

    pub fn embed(&self, x: &[f64]) -> Result<FeatureVec> {
        self.forward(x).map(|(z, _)| z)
    }

    pub fn backward(&self, cache: &ForwardCache, grad_z: &[f64]) -> Result<Gradients> {
        let mut g = self.zero_grads();
        self.backward_into(cache, grad_z, 1.0, &mut g)?;
        Ok(g)
    }

    /// Adds `scale * d(loss)/d(params)` into `acc`, given `d(loss)/dz`.
    pub fn backward_into(&self, cache: &ForwardCache, grad_z: &[f64], scale: f64, acc: &mut Gradients) -> Result<()> {
        if cache.inputs.len() != self.layers.len()
            || cache.pre_norm.len() != self.output_dim()
            || cache.inputs.iter().zip(&self.layers).any(|(h, l)| h.len() != l.in_dim)
        {
            return Err(Error::Integrity("forward cache does not match the encoder".into()));
        }
        if !same_shape(&acc.layers, &self.layers) {
            return Err(Error::Integrity("gradient buffer does not match the encoder".into()));
        }
        let mut delta: Vec<f64> = vecmath::l2_normalize_jvp(&cache.pre_norm, grad_z)?;
        delta.iter_mut().for_each(|d| *d *= scale);
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let input = &cache.inputs[l];
            let out = &mut acc.layers[l];
            for (r, d) in delta.iter().enumerate() {
                out.bias[r] += d;
                let row = &mut out.weight[r * layer.in_dim..(r + 1) * layer.in_dim];
                row.iter_mut().zip(input).for_each(|(w, x)| *w += d * x);
            }
            if l == 0 {
                break;
            }
            // back through W, then through the tanh that produced `input`
            let mut prev = vec![0.0; layer.in_dim];
            for (r, d) in delta.iter().enumerate() {
                let row = &layer.weight[r * layer.in_dim..(r + 1) * layer.in_dim];
                prev.iter_mut().zip(row).for_each(|(p, w)| *p += d * w);
            }
            prev.iter_mut().zip(input).for_each(|(p, h)| *p *= 1.0 - h * h);
            delta = prev;
        }
        Ok(())
    }

    /// `velocity = momentum * velocity + grad; param -= lr * velocity`.
    pub fn sgd_step(&mut self, grads: &Gradients, lr: f64, momentum: f64) -> Result<()> {
        if !same_shape(&grads.layers, &self.layers) {
            return Err(Error::Integrity("gradient shapes do not match the encoder".into()));
        }
        for ((p, v), g) in self.layers.iter_mut().zip(&mut self.velocity.layers).zip(&grads.layers) {
            for ((w, vw), gw) in p.weight.iter_mut().zip(&mut v.weight).zip(&g.weight) {
                *vw = momentum * *vw + gw;
                *w -= lr * *vw;
            }
            for ((b, vb), gb) in p.bias.iter_mut().zip(&mut v.bias).zip(&g.bias) {
                *vb = momentum * *vb + gb;
                *b -= lr * *vb;
            }
        }
        if self.layers.iter().flat_map(|l| l.params()).any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("encoder parameters after sgd step".into()));
        }
        Ok(())
    }

    pub fn flat_params(&self) -> Vec<f64> {
        self.layers.iter().flat_map(|l| l.params().copied()).collect()
    }

    /// Overwrites parameters from a flat vector in [`flat_params`](Self::flat_params) order.
    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        let total: usize = self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum();
        if flat.len() != total {
            return Err(Error::Dimension { expected: total, got: flat.len() });
        }
        let mut it = flat.iter();
        for l in &mut self.layers {
            l.weight.iter_mut().chain(l.bias.iter_mut()).for_each(|p| *p = *it.next().unwrap());
        }
        Ok(())
    }
}

/// Encoder state written between epochs.
///
/// Layout (little-endian): `CTACLCKP`, version `u32`, layer count `u32`,
/// `count + 1` widths `u32`, epoch `u32`, RNG seed `[u8; 32]`, RNG stream
/// `u64`, RNG word position `u128`, then per layer weights and biases as `f64`,
/// then the momentum buffers in the same order.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub encoder: Encoder,
    pub epoch: u32,
    pub rng: RngState,
}

impl Checkpoint {
    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        put_u32(w, CHECKPOINT_VERSION)?;
        let dims = self.encoder.dims();
        put_u32(w, self.encoder.layers.len() as u32)?;
        for d in dims {
            put_u32(w, d as u32)?;
        }
        put_u32(w, self.epoch)?;
        w.write_all(&self.rng.seed)?;
        w.write_all(&self.rng.stream.to_le_bytes())?;
        w.write_all(&self.rng.word_pos.to_le_bytes())?;
        for l in self.encoder.layers.iter().chain(&self.encoder.velocity.layers) {
            for &x in l.params() {
                put_f64(w, x)?;
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        expect_magic(r, CHECKPOINT_MAGIC)?;
        let version = get_u32(r)?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let n_layers = get_u32(r)? as usize;
        if n_layers == 0 || n_layers > 64 {
            return Err(Error::Format(format!("implausible layer count {n_layers}")));
        }
        let dims: Vec<usize> = (0..=n_layers).map(|_| get_u32(r).map(|d| d as usize)).collect::<Result<_>>()?;
        if dims.contains(&0) {
            return Err(Error::Format("zero layer width".into()));
        }
        let epoch = get_u32(r)?;
        let mut seed = [0u8; 32];
        r.read_exact(&mut seed).map_err(|_| Error::Format("truncated rng state".into()))?;
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b8).map_err(|_| Error::Format("truncated rng state".into()))?;
        let mut b16 = [0u8; 16];
        r.read_exact(&mut b16).map_err(|_| Error::Format("truncated rng state".into()))?;
        let rng = RngState { seed, stream: u64::from_le_bytes(b8), word_pos: u128::from_le_bytes(b16) };

        let layers = read_layers(r, &dims)?;
        let velocity = read_layers(r, &dims)?;
        Ok(Checkpoint { encoder: Encoder { layers, velocity: Gradients { layers: velocity } }, epoch, rng })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        Ok(buf)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::read_from(&mut bytes.as_slice())
    }
}

fn read_layers(r: &mut impl Read, dims: &[usize]) -> Result<Vec<Layer>> {
    dims.windows(2)
        .map(|w| {
            let mut l = Layer::zeros(w[0], w[1]);
            for p in l.weight.iter_mut().chain(l.bias.iter_mut()) {
                *p = get_f64(r)?;
            }
            Ok(l)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::tests::{fd_grad, rel_err};
    use crate::rng::{stream, Stream};
    use rand::SeedableRng;

    fn rng(seed: u64) -> ChaCha8Rng {
        stream(seed, Stream::Init)
    }

    #[test]
    fn init_examples() {
        let a = Encoder::init(&[32, 128, 128, 64], &mut rng(1)).unwrap();
        let b = Encoder::init(&[32, 128, 128, 64], &mut rng(1)).unwrap();
        let c = Encoder::init(&[32, 128, 128, 64], &mut rng(2)).unwrap();
        assert_eq!(a.flat_params(), b.flat_params());
        assert_ne!(a.flat_params(), c.flat_params());
        let probe: Vec<f64> = (0..32).map(|i| (i as f64 * 0.37).sin()).collect();
        let z = a.embed(&probe).unwrap();
        assert!((vecmath::norm(z.as_slice()) - 1.0).abs() <= 1e-9);
        assert!(Encoder::init(&[32, 0, 64], &mut rng(1)).is_err());
        assert!(Encoder::init(&[32], &mut rng(1)).is_err());
    }

    #[test]
    fn identity_layer_passes_unit_input() {
        let mut weight = vec![0.0; 9];
        for i in 0..3 {
            weight[i * 4] = 1.0;
        }
        let enc = Encoder::from_layers(vec![Layer { in_dim: 3, out_dim: 3, weight, bias: vec![0.0; 3] }]);
        let z = enc.embed(&[0.6, 0.0, 0.8]).unwrap();
        assert_eq!(z.as_slice(), &[0.6, 0.0, 0.8]);
    }

    fn naive_forward(enc: &Encoder, x: &[f64]) -> Vec<f64> {
        let mut h = x.to_vec();
        let n = enc.layers().len();
        for (l, layer) in enc.layers().iter().enumerate() {
            let mut out = vec![0.0; layer.out_dim];
            for r in 0..layer.out_dim {
                let mut s = layer.bias[r];
                for c in 0..layer.in_dim {
                    s += layer.weight[r * layer.in_dim + c] * h[c];
                }
                out[r] = if l + 1 < n { s.tanh() } else { s };
            }
            h = out;
        }
        let norm = h.iter().map(|v| v * v).sum::<f64>().sqrt();
        h.iter().map(|v| v / norm).collect()
    }

    #[test]
    fn forward_matches_naive_oracle() {
        let mut r = rng(5);
        let enc = Encoder::init(&[8, 16, 12, 6], &mut r).unwrap();
        for _ in 0..20 {
            let x: Vec<f64> = (0..8).map(|_| r.gen_range(-2.0..2.0)).collect();
            let z = enc.embed(&x).unwrap();
            for (a, b) in z.as_slice().iter().zip(naive_forward(&enc, &x)) {
                assert!((a - b).abs() <= 1e-12);
            }
            assert!((vecmath::norm(z.as_slice()) - 1.0).abs() <= 1e-9);
        }
        assert!(matches!(enc.embed(&[0.0; 3]), Err(Error::Dimension { .. })));
        assert!(enc.embed(&[f64::NAN; 8]).is_err());
    }

    #[test]
    fn non_finite_activation_reports_layer() {
        let mut enc = Encoder::init(&[2, 3, 2], &mut rng(1)).unwrap();
        let mut flat = enc.flat_params();
        let first_layer = 2 * 3 + 3;
        for p in &mut flat[first_layer..] {
            *p = f64::MAX;
        }
        enc.set_flat_params(&flat).unwrap();
        assert!(matches!(enc.embed(&[1.0, 1.0]), Err(Error::NonFiniteActivation { layer: 1 })));
    }

    #[test]
    fn backward_zero_upstream() {
        let enc = Encoder::init(&[4, 5, 3], &mut rng(2)).unwrap();
        let (_, cache) = enc.forward(&[0.1, 0.2, -0.3, 0.4]).unwrap();
        let g = enc.backward(&cache, &[0.0; 3]).unwrap();
        assert!(g.flat().iter().all(|&v| v == 0.0));
        assert!(enc.backward(&cache, &[0.0; 4]).is_err());
        let other = Encoder::init(&[4, 6, 3], &mut rng(2)).unwrap();
        assert!(matches!(other.backward(&cache, &[0.0; 3]), Err(Error::Integrity(_))));
    }

    #[test]
    fn single_layer_closed_form() {
        // z = normalize(Wx + b); dL/dW = jvp outer x, dL/db = jvp
        let layer = Layer { in_dim: 2, out_dim: 2, weight: vec![1.0, 2.0, -1.0, 0.5], bias: vec![0.1, -0.2] };
        let enc = Encoder::from_layers(vec![layer]);
        let x = [0.3, -0.7];
        let (_, cache) = enc.forward(&x).unwrap();
        let u = [0.4, -1.1];
        let v: [f64; 2] = [1.0 * 0.3 + 2.0 * -0.7 + 0.1, -0.3 + 0.5 * -0.7 - 0.2];
        let n = (v[0] * v[0] + v[1] * v[1]).sqrt();
        let zh = [v[0] / n, v[1] / n];
        let radial = zh[0] * u[0] + zh[1] * u[1];
        let gv = [(u[0] - radial * zh[0]) / n, (u[1] - radial * zh[1]) / n];
        let g = enc.backward(&cache, &u).unwrap();
        let want = [gv[0] * x[0], gv[0] * x[1], gv[1] * x[0], gv[1] * x[1], gv[0], gv[1]];
        for (a, b) in g.flat().iter().zip(want) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut r = rng(9);
        for _ in 0..10 {
            let enc = Encoder::init(&[6, 10, 8, 5], &mut r).unwrap();
            let x: Vec<f64> = (0..6).map(|_| r.gen_range(-1.5..1.5)).collect();
            let u: Vec<f64> = (0..5).map(|_| r.gen_range(-1.0..1.0)).collect();
            let (_, cache) = enc.forward(&x).unwrap();
            let analytic = enc.backward(&cache, &u).unwrap().flat();
            let base = enc.flat_params();
            let f = |p: &[f64]| {
                let mut e = enc.clone();
                e.set_flat_params(p).unwrap();
                let z = e.embed(&x).unwrap();
                vecmath::dot_slices(z.as_slice(), &u).unwrap()
            };
            let fd = fd_grad(&f, &base, 1e-6);
            assert!(rel_err(&analytic, &fd) < 1e-4);
        }
    }

    fn grads_like(enc: &Encoder, value: f64) -> Gradients {
        let mut g = enc.zero_grads();
        for l in &mut g.layers {
            l.weight.iter_mut().chain(l.bias.iter_mut()).for_each(|p| *p = value);
        }
        g
    }

    #[test]
    fn sgd_examples() {
        let mut enc = Encoder::init(&[3, 2], &mut rng(3)).unwrap();
        let p0 = enc.flat_params();
        let g = grads_like(&enc, 0.5);
        enc.sgd_step(&g, 0.1, 0.0).unwrap();
        for (a, b) in enc.flat_params().iter().zip(&p0) {
            assert!((a - (b - 0.05)).abs() < 1e-15);
        }

        // zero gradient with a non-zero buffer: params move by -lr * momentum * buffer
        let p1 = enc.flat_params();
        let zero = grads_like(&enc, 0.0);
        enc.sgd_step(&zero, 0.1, 0.9).unwrap();
        for (a, b) in enc.flat_params().iter().zip(&p1) {
            assert!((a - (b - 0.1 * 0.9 * 0.5)).abs() < 1e-15);
        }

        let bad = Encoder::init(&[3, 4], &mut rng(3)).unwrap().zero_grads();
        assert!(enc.sgd_step(&bad, 0.1, 0.9).is_err());
    }

    #[test]
    fn sgd_two_steps_unrolled() {
        let mut enc = Encoder::init(&[2, 2], &mut rng(4)).unwrap();
        let p0 = enc.flat_params();
        let g1 = grads_like(&enc, 0.3);
        let g2 = grads_like(&enc, -0.7);
        enc.sgd_step(&g1, 0.1, 0.9).unwrap();
        enc.sgd_step(&g2, 0.01, 0.9).unwrap();
        let v1 = 0.3;
        let v2 = 0.9 * v1 + -0.7;
        for (a, b) in enc.flat_params().iter().zip(&p0) {
            assert_eq!(*a, b - 0.1 * v1 - 0.01 * v2);
        }
    }

    #[test]
    fn descent_on_linearized_loss() {
        let mut r = rng(21);
        for _ in 0..100 {
            let enc = Encoder::init(&[4, 6, 3], &mut r).unwrap();
            let x: Vec<f64> = (0..4).map(|_| r.gen_range(-1.0..1.0)).collect();
            let u: Vec<f64> = (0..3).map(|_| r.gen_range(-1.0..1.0)).collect();
            let (_, cache) = enc.forward(&x).unwrap();
            let g = enc.backward(&cache, &u).unwrap();
            let before = enc.flat_params();
            let mut stepped = enc.clone();
            stepped.sgd_step(&g, 0.1, 0.9).unwrap();
            // first-order change of the loss: g . (p' - p) = -lr |g|^2 < 0
            let gf = g.flat();
            let change: f64 = gf.iter().zip(stepped.flat_params().iter().zip(&before)).map(|(gi, (a, b))| gi * (a - b)).sum();
            assert!(change < 0.0 || gf.iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn lr_schedule() {
        let cfg = OptimConfig::default();
        assert_eq!(lr_at(0, &cfg), 0.1);
        assert!((lr_at(10, &cfg) / 0.01 - 1.0).abs() < 1e-14);
        assert!((lr_at(49, &cfg) / 1e-5 - 1.0).abs() < 1e-14);
        assert_eq!(lr_at(9, &cfg), 0.1);
    }

    #[test]
    fn checkpoint_roundtrip_is_bit_exact() {
        let mut enc = Encoder::init(&[5, 7, 3], &mut rng(6)).unwrap();
        let g = grads_like(&enc, 0.01);
        enc.sgd_step(&g, 0.1, 0.9).unwrap();
        let mut batch_rng = ChaCha8Rng::seed_from_u64(3);
        let _: u64 = batch_rng.gen();
        let ck = Checkpoint { encoder: enc, epoch: 12, rng: RngState::capture(&batch_rng) };
        let bytes = ck.to_bytes().unwrap();
        let back = Checkpoint::read_from(&mut bytes.as_slice()).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes().unwrap(), bytes);
        assert!(Checkpoint::read_from(&mut &bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[8] = 9;
        assert!(Checkpoint::read_from(&mut bad.as_slice()).is_err());
    }
}
