//! Dilated causal convolutional encoder `x ∈ R^{T×D} → z ∈ R^{T×P}`.
//!
//! Architecture: linear input projection D→H, optional timestamp mask
//! (training only), `L` residual blocks `h + conv(gelu(conv(gelu(h))))` with
//! dilation `2^l`, and a linear output projection H→P.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augment::timestamp_mask;
use crate::dataio::{Dataset, ReprSet};
use crate::error::{Error, Result};
use crate::tensor::{DiffTensor, Tape};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub input_dim: usize,
    pub hidden: usize,
    pub blocks: usize,
    pub kernel: usize,
    pub output_dim: usize,
    pub mask_p: f64,
}

impl EncoderConfig {
    /// Small configuration that trains in seconds on a laptop.
    pub fn desk(input_dim: usize) -> Self {
        Self {
            input_dim,
            hidden: 16,
            blocks: 4,
            kernel: 3,
            output_dim: 32,
            mask_p: 0.5,
        }
    }

    /// Full-size configuration (320-dimensional representations).
    pub fn full(input_dim: usize) -> Self {
        Self {
            input_dim,
            hidden: 64,
            blocks: 10,
            kernel: 3,
            output_dim: 320,
            mask_p: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden == 0 || self.kernel == 0 || self.output_dim == 0 {
            return Err(Error::config(format!("encoder sizes must be positive: {self:?}")));
        }
        if self.blocks > 30 {
            return Err(Error::config("more than 30 blocks overflows the dilation"));
        }
        if !(0.0..1.0).contains(&self.mask_p) {
            return Err(Error::config(format!("mask probability {} outside [0, 1)", self.mask_p)));
        }
        Ok(())
    }

    /// `(shape, fan_in)` of every parameter group in storage order.
    fn groups(&self) -> Vec<(Vec<usize>, usize)> {
        let (d, h, k, p) = (self.input_dim, self.hidden, self.kernel, self.output_dim);
        let mut g = vec![(vec![d, h], d), (vec![h], d)];
        for _ in 0..self.blocks {
            for _ in 0..2 {
                g.push((vec![k, h, h], k * h));
                g.push((vec![h], k * h));
            }
        }
        g.push((vec![h, p], h));
        g.push((vec![p], h));
        g
    }

    pub fn param_count(&self) -> usize {
        self.groups().iter().map(|(s, _)| s.iter().product::<usize>()).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    cfg: EncoderConfig,
    params: Vec<f64>,
}

impl Encoder {
    /// Uniform `±1/sqrt(fan_in)` initialisation from `seed`.
    pub fn new(cfg: EncoderConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(cfg.param_count());
        for (shape, fan_in) in cfg.groups() {
            let bound = 1.0 / (fan_in as f64).sqrt();
            let n: usize = shape.iter().product();
            params.extend((0..n).map(|_| rng.random_range(-bound..=bound)));
        }
        Ok(Self { cfg, params })
    }

    pub fn from_params(cfg: EncoderConfig, params: Vec<f64>) -> Result<Self> {
        cfg.validate()?;
        if params.len() != cfg.param_count() {
            return Err(Error::config(format!(
                "encoder needs {} parameters, got {}",
                cfg.param_count(),
                params.len()
            )));
        }
        Ok(Self { cfg, params })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.cfg
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Registers every parameter group as a leaf on `tape`.
    pub fn bind<'t>(&self, tape: &'t Tape) -> Result<Bound<'t>> {
        let mut tensors = Vec::new();
        let mut off = 0;
        for (shape, _) in self.cfg.groups() {
            let n: usize = shape.iter().product();
            tensors.push(tape.leaf(&shape, self.params[off..off + n].to_vec())?);
            off += n;
        }
        Ok(Bound {
            cfg: self.cfg.clone(),
            tensors,
        })
    }

    /// Eval-mode forward pass on plain values `[B, T, D]`, returning `[B, T, P]`.
    pub fn encode_values(&self, x: &[f64], b: usize, t: usize) -> Result<Vec<f64>> {
        let tape = Tape::new();
        let bound = self.bind(&tape)?;
        let xt = tape.constant(&[b, t, self.cfg.input_dim], x.to_vec())?;
        Ok(bound.forward(xt, Mode::Eval, &mut ChaCha8Rng::seed_from_u64(0))?.to_vec())
    }

    /// Encodes a whole dataset in eval mode.
    pub fn encode_dataset(&self, ds: &Dataset, provenance: &str) -> Result<ReprSet> {
        if ds.d != self.cfg.input_dim {
            return Err(Error::config(format!(
                "dataset has D={} but encoder expects {}",
                ds.d, self.cfg.input_dim
            )));
        }
        const CHUNK: usize = 32;
        let mut reps = Vec::with_capacity(ds.n * ds.t * self.cfg.output_dim);
        let row = ds.t * ds.d;
        for start in (0..ds.n).step_by(CHUNK) {
            let end = (start + CHUNK).min(ds.n);
            let x = &ds.data[start * row..end * row];
            reps.extend(self.encode_values(x, end - start, ds.t)?);
        }
        ReprSet::new(ds.n, ds.t, self.cfg.output_dim, reps, provenance.to_string())
    }
}

/// Encoder parameters registered on a tape.
pub struct Bound<'t> {
    cfg: EncoderConfig,
    tensors: Vec<DiffTensor<'t>>,
}

impl<'t> Bound<'t> {
    /// Forward pass on `[B, T, D]` (or `[T, D]`) input.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        x: DiffTensor<'t>,
        mode: Mode,
        rng: &mut R,
    ) -> Result<DiffTensor<'t>> {
        let shape = x.shape();
        let (x, squeeze) = match shape.len() {
            2 => (x.reshape(&[1, shape[0], shape[1]])?, true),
            3 => (x, false),
            _ => return Err(Error::config(format!("encoder input must be [B,T,D], got {shape:?}"))),
        };
        let s = x.shape();
        if s[2] != self.cfg.input_dim {
            return Err(Error::config(format!(
                "input has D={} but encoder expects {}",
                s[2], self.cfg.input_dim
            )));
        }
        let p = &self.tensors;
        let mut h = x.matmul(p[0])?.add(p[1])?;
        if mode == Mode::Train {
            h = timestamp_mask(h, self.cfg.mask_p, rng)?;
        }
        for l in 0..self.cfg.blocks {
            let base = 2 + 4 * l;
            let dilation = 1usize << l;
            let inner = h.gelu().conv1d_causal(p[base], dilation)?.add(p[base + 1])?;
            let inner = inner.gelu().conv1d_causal(p[base + 2], dilation)?.add(p[base + 3])?;
            h = h.add(inner)?;
        }
        let n = p.len();
        let z = h.matmul(p[n - 2])?.add(p[n - 1])?;
        if squeeze {
            z.reshape(&[s[1], self.cfg.output_dim])
        } else {
            Ok(z)
        }
    }

    /// Flat parameter gradient in storage order; groups without gradient give zeros.
    pub fn gradients(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.cfg.param_count());
        for t in &self.tensors {
            match t.grad() {
                Some(g) => out.extend(g),
                None => out.extend(std::iter::repeat_n(0.0, t.numel())),
            }
        }
        out
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        debug_assert_eq!(params.len(), grads.len());
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= self.lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::finite_diff_check;

    fn closed_form(d: usize, h: usize, l: usize, k: usize, p: usize) -> usize {
        d * h + h + l * 2 * (k * h * h + h) + h * p + p
    }

    #[test]
    fn parameter_count_formula() {
        for (d, h, l, k, p) in [(3, 16, 4, 3, 32), (1, 4, 0, 3, 2), (7, 64, 10, 3, 320), (2, 5, 2, 1, 3)] {
            let cfg = EncoderConfig {
                input_dim: d,
                hidden: h,
                blocks: l,
                kernel: k,
                output_dim: p,
                mask_p: 0.5,
            };
            assert_eq!(cfg.param_count(), closed_form(d, h, l, k, p));
            assert_eq!(Encoder::new(cfg, 0).unwrap().params().len(), closed_form(d, h, l, k, p));
        }
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let cfg = EncoderConfig::desk(2);
        let enc = Encoder::from_params(cfg.clone(), vec![0.0; cfg.param_count()]).unwrap();
        let x: Vec<f64> = (0..20).map(|i| (i as f64).sin() * 5.0).collect();
        assert!(enc.encode_values(&x, 1, 10).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn causal_for_every_timestamp() {
        let enc = Encoder::new(EncoderConfig::desk(2), 1).unwrap();
        let t = 20;
        let x: Vec<f64> = (0..2 * t).map(|i| (i as f64 * 0.37).cos()).collect();
        let base = enc.encode_values(&x, 1, t).unwrap();
        let p = enc.config().output_dim;
        for s in 0..t {
            let mut y = x.clone();
            y[2 * s] += 1.0;
            y[2 * s + 1] -= 2.0;
            let out = enc.encode_values(&y, 1, t).unwrap();
            assert_eq!(&out[..s * p], &base[..s * p], "perturbing t={s} leaked backwards");
            assert_ne!(&out[s * p..(s + 1) * p], &base[s * p..(s + 1) * p]);
        }
    }

    #[test]
    fn input_dimension_is_checked() {
        let enc = Encoder::new(EncoderConfig::desk(2), 1).unwrap();
        let tape = Tape::new();
        let b = enc.bind(&tape).unwrap();
        let x = tape.constant(&[1, 10, 3], vec![0.0; 30]).unwrap();
        let r = b.forward(x, Mode::Eval, &mut ChaCha8Rng::seed_from_u64(0));
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn eval_mode_is_deterministic_and_train_mode_masks() {
        let enc = Encoder::new(EncoderConfig::desk(1), 4).unwrap();
        let x: Vec<f64> = (0..50).map(|i| (i as f64 * 0.2).sin()).collect();
        assert_eq!(enc.encode_values(&x, 1, 50).unwrap(), enc.encode_values(&x, 1, 50).unwrap());
        let tape = Tape::new();
        let b = enc.bind(&tape).unwrap();
        let xt = tape.constant(&[1, 50, 1], x.clone()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let train = b.forward(xt, Mode::Train, &mut rng).unwrap().to_vec();
        assert_ne!(train, enc.encode_values(&x, 1, 50).unwrap());
    }

    #[test]
    fn desk_encoder_gradient_check() {
        let enc = Encoder::new(EncoderConfig::desk(3), 2).unwrap();
        let t = 50;
        let x: Vec<f64> = (0..3 * t).map(|i| (i as f64 * 0.13).sin()).collect();
        let out = enc.encode_values(&x, 1, t).unwrap();
        assert!(out.iter().all(|v| v.is_finite()));
        // Gradient with respect to the input, parameters held fixed.
        let err = finite_diff_check(
            |tape, xi| {
                let b = enc.bind(tape)?;
                let z = b.forward(xi, Mode::Eval, &mut ChaCha8Rng::seed_from_u64(0))?;
                Ok(z.square().mean())
            },
            &[1, t, 3],
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "input gradient error {err}");
    }

    #[test]
    fn parameter_gradients_match_finite_differences() {
        let cfg = EncoderConfig {
            input_dim: 2,
            hidden: 4,
            blocks: 2,
            kernel: 3,
            output_dim: 3,
            mask_p: 0.5,
        };
        let enc = Encoder::new(cfg.clone(), 3).unwrap();
        let x: Vec<f64> = (0..16).map(|i| (i as f64 * 0.7).cos()).collect();
        let loss = |params: &[f64]| -> f64 {
            let e = Encoder::from_params(cfg.clone(), params.to_vec()).unwrap();
            e.encode_values(&x, 1, 8).unwrap().iter().map(|v| v * v).sum()
        };
        let tape = Tape::new();
        let b = enc.bind(&tape).unwrap();
        let xt = tape.constant(&[1, 8, 2], x.clone()).unwrap();
        let z = b.forward(xt, Mode::Eval, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        z.square().sum().backward().unwrap();
        let g = b.gradients();
        let mut p = enc.params().to_vec();
        for i in 0..p.len() {
            let orig = p[i];
            p[i] = orig + 1e-5;
            let up = loss(&p);
            p[i] = orig - 1e-5;
            let down = loss(&p);
            p[i] = orig;
            let num = (up - down) / 2e-5;
            assert!((num - g[i]).abs() / g[i].abs().max(1.0) < 1e-5, "param {i}: {num} vs {}", g[i]);
        }
    }

    #[test]
    fn adam_minimises_a_quadratic() {
        let mut x = vec![3.0, -2.0];
        let mut opt = Adam::new(2, 0.1);
        for _ in 0..500 {
            let g: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
            opt.step(&mut x, &g);
        }
        assert!(x.iter().all(|v| v.abs() < 1e-2), "{x:?}");
    }
}
