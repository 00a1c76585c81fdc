//! Dense multilayer perceptrons with hand-written backpropagation and Adam.
//!
//! Parameters of a network live in one flat vector: for each layer a
//! row-major `fan_in × fan_out` weight block followed by its bias. Layers
//! compute `z = x·W + b` on row-major batches.

use std::fmt::{Debug, Display};
use std::ops::AddAssign;

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, ArrayView1, ArrayView2, ArrayViewMut2, Axis, LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive, ToPrimitive};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("shape mismatch in {what}: expected {expected}, got {got}")]
    ShapeMismatch { what: &'static str, expected: usize, got: usize },
    #[error("invalid topology: {0}")]
    InvalidTopology(String),
}

fn check(what: &'static str, expected: usize, got: usize) -> Result<(), NnError> {
    if expected == got {
        Ok(())
    } else {
        Err(NnError::ShapeMismatch { what, expected, got })
    }
}

/// Floating-point element type for networks.
pub trait Scalar:
    LinalgScalar + ScalarOperand + Float + AddAssign + FromPrimitive + ToPrimitive + Debug + Display + Send + Sync + 'static
{
    /// Name recorded in checkpoints.
    const DTYPE: &'static str;
    const BYTES: usize;

    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;

    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("f64 converts to every Scalar")
    }

    fn f64(self) -> f64 {
        self.to_f64().expect("Scalar converts to f64")
    }
}

impl Scalar for f32 {
    const DTYPE: &'static str = "f32";
    const BYTES: usize = 4;

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("4 bytes"))
    }
}

impl Scalar for f64 {
    const DTYPE: &'static str = "f64";
    const BYTES: usize = 8;

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("8 bytes"))
    }
}

/// Output nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Head {
    Tanh,
    Linear,
    /// Final layer emits `[mean | log_std]`; log-std is clamped into
    /// `[log_std_min, log_std_max]` and gets no gradient while clamped.
    Gaussian { log_std_min: f64, log_std_max: f64 },
}

impl Head {
    pub const GAUSSIAN_DEFAULT: Head = Head::Gaussian { log_std_min: -20.0, log_std_max: 2.0 };
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Init {
    /// Bound for the last layer's uniform init; `None` uses ±1/√fan_in.
    pub final_layer_bound: Option<f64>,
}

impl Init {
    pub const FAN_IN: Init = Init { final_layer_bound: None };
    pub const SMALL_OUTPUT: Init = Init { final_layer_bound: Some(3e-3) };
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<F> {
    widths: Vec<usize>,
    head: Head,
    leaky_slope: f64,
    params: Vec<F>,
}

/// Values saved by [`Mlp::forward_batch`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache<F> {
    /// Input to each layer.
    inputs: Vec<Array2<F>>,
    /// Pre-activation of each layer.
    pre: Vec<Array2<F>>,
}

impl<F> ForwardCache<F> {
    pub fn batch_size(&self) -> usize {
        self.inputs[0].nrows()
    }
}

fn param_count(widths: &[usize]) -> usize {
    widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl<F: Scalar> Mlp<F> {
    /// Network with all parameters zero.
    pub fn zeros(widths: &[usize], head: Head, leaky_slope: f64) -> Result<Self, NnError> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(NnError::InvalidTopology(format!("widths {widths:?}")));
        }
        if let Head::Gaussian { log_std_min, log_std_max } = head {
            if !widths[widths.len() - 1].is_multiple_of(2) {
                return Err(NnError::InvalidTopology("gaussian head needs an even output width".into()));
            }
            if !(log_std_min.is_finite() && log_std_max.is_finite() && log_std_min < log_std_max) {
                return Err(NnError::InvalidTopology("log-std clamp must be finite with min < max".into()));
            }
        }
        if !(leaky_slope.is_finite() && leaky_slope >= 0.0) {
            return Err(NnError::InvalidTopology(format!("leaky slope {leaky_slope}")));
        }
        Ok(Self {
            widths: widths.to_vec(),
            head,
            leaky_slope,
            params: vec![F::zero(); param_count(widths)],
        })
    }

    /// Uniform ±1/√fan_in init for weights and biases; see [`Init`] for the last layer.
    pub fn new<R: Rng + ?Sized>(
        widths: &[usize],
        head: Head,
        leaky_slope: f64,
        init: Init,
        rng: &mut R,
    ) -> Result<Self, NnError> {
        let mut net = Self::zeros(widths, head, leaky_slope)?;
        let layers = net.num_layers();
        let mut offset = 0;
        for l in 0..layers {
            let (fan_in, fan_out) = (widths[l], widths[l + 1]);
            let bound = match init.final_layer_bound {
                Some(b) if l + 1 == layers => b,
                _ => 1.0 / (fan_in as f64).sqrt(),
            };
            let n = fan_in * fan_out + fan_out;
            for p in &mut net.params[offset..offset + n] {
                *p = F::of(rng.random_range(-bound..bound));
            }
            offset += n;
        }
        Ok(net)
    }

    /// Rebuilds a network from a flat parameter vector.
    pub fn from_parts(widths: &[usize], head: Head, leaky_slope: f64, params: Vec<F>) -> Result<Self, NnError> {
        let mut net = Self::zeros(widths, head, leaky_slope)?;
        check("parameter vector", net.params.len(), params.len())?;
        net.params = params;
        Ok(net)
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn head(&self) -> Head {
        self.head
    }

    pub fn leaky_slope(&self) -> f64 {
        self.leaky_slope
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        self.widths[self.widths.len() - 1]
    }

    pub fn num_layers(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn params(&self) -> &[F] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [F] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    fn offset(&self, layer: usize) -> usize {
        param_count(&self.widths[..=layer])
    }

    /// Weight and bias views of `layer`.
    pub fn layer(&self, layer: usize) -> (ArrayView2<'_, F>, ArrayView1<'_, F>) {
        let (fan_in, fan_out) = (self.widths[layer], self.widths[layer + 1]);
        let o = self.offset(layer);
        let w = ArrayView2::from_shape((fan_in, fan_out), &self.params[o..o + fan_in * fan_out]).expect("layer shape");
        let b = ArrayView1::from(&self.params[o + fan_in * fan_out..o + fan_in * fan_out + fan_out]);
        (w, b)
    }

    fn same_shape(&self, other: &Mlp<F>) -> Result<(), NnError> {
        if self.widths != other.widths {
            return Err(NnError::InvalidTopology(format!("widths {:?} vs {:?}", self.widths, other.widths)));
        }
        Ok(())
    }

    fn leaky(&self, z: F) -> F {
        if z > F::zero() {
            z
        } else {
            z * F::of(self.leaky_slope)
        }
    }

    fn apply_head(&self, z: &Array2<F>) -> Array2<F> {
        match self.head {
            Head::Linear => z.clone(),
            Head::Tanh => z.mapv(|v| v.tanh()),
            Head::Gaussian { log_std_min, log_std_max } => {
                let half = z.ncols() / 2;
                let (lo, hi) = (F::of(log_std_min), F::of(log_std_max));
                let mut out = z.clone();
                out.slice_mut(s![.., half..]).mapv_inplace(|v| v.max(lo).min(hi));
                out
            }
        }
    }

    /// Batched forward pass; rows of `x` are samples.
    pub fn forward_batch(&self, x: ArrayView2<'_, F>) -> Result<(Array2<F>, ForwardCache<F>), NnError> {
        check("forward input width", self.input_dim(), x.ncols())?;
        let layers = self.num_layers();
        let mut cache = ForwardCache { inputs: Vec::with_capacity(layers), pre: Vec::with_capacity(layers) };
        let mut a = x.to_owned();
        for l in 0..layers {
            let (w, b) = self.layer(l);
            let mut z = a.dot(&w);
            z += &b;
            cache.inputs.push(a);
            a = if l + 1 < layers { z.mapv(|v| self.leaky(v)) } else { self.apply_head(&z) };
            cache.pre.push(z);
        }
        Ok((a, cache))
    }

    /// Forward pass without keeping a cache.
    pub fn predict(&self, x: ArrayView2<'_, F>) -> Result<Array2<F>, NnError> {
        check("forward input width", self.input_dim(), x.ncols())?;
        let layers = self.num_layers();
        let mut a = x.to_owned();
        for l in 0..layers {
            let (w, b) = self.layer(l);
            let mut z = a.dot(&w);
            z += &b;
            a = if l + 1 < layers { z.mapv(|v| self.leaky(v)) } else { self.apply_head(&z) };
        }
        Ok(a)
    }

    /// Single-sample forward pass.
    pub fn forward(&self, x: &[F]) -> Result<Vec<F>, NnError> {
        let x = ArrayView2::from_shape((1, x.len()), x).expect("row vector");
        Ok(self.predict(x)?.into_raw_vec_and_offset().0)
    }

    fn head_backward(&self, cache: &ForwardCache<F>, grad_out: ArrayView2<'_, F>) -> Array2<F> {
        let z = &cache.pre[cache.pre.len() - 1];
        match self.head {
            Head::Linear => grad_out.to_owned(),
            Head::Tanh => {
                let mut dz = grad_out.to_owned();
                dz.zip_mut_with(z, |g, &zv| {
                    let t = zv.tanh();
                    *g = *g * (F::one() - t * t);
                });
                dz
            }
            Head::Gaussian { log_std_min, log_std_max } => {
                let (lo, hi) = (F::of(log_std_min), F::of(log_std_max));
                let half = z.ncols() / 2;
                let mut dz = grad_out.to_owned();
                dz.slice_mut(s![.., half..]).zip_mut_with(&z.slice(s![.., half..]), |g, &zv| {
                    if zv < lo || zv > hi {
                        *g = F::zero();
                    }
                });
                dz
            }
        }
    }

    fn check_backward(&self, cache: &ForwardCache<F>, grad_out: &ArrayView2<'_, F>) -> Result<(), NnError> {
        check("cache depth", self.num_layers(), cache.pre.len())?;
        check("output gradient width", self.output_dim(), grad_out.ncols())?;
        check("output gradient rows", cache.batch_size(), grad_out.nrows())
    }

    /// Reverse pass: returns the flat parameter gradient (same layout as
    /// [`Mlp::params`]) and the gradient with respect to the input batch.
    pub fn backward(
        &self,
        cache: &ForwardCache<F>,
        grad_out: ArrayView2<'_, F>,
    ) -> Result<(Vec<F>, Array2<F>), NnError> {
        let mut grads = vec![F::zero(); self.num_params()];
        let dx = self.backward_into(cache, grad_out, Some(&mut grads))?;
        Ok((grads, dx))
    }

    /// Gradient with respect to the input only; skips weight gradients.
    pub fn input_gradient(&self, cache: &ForwardCache<F>, grad_out: ArrayView2<'_, F>) -> Result<Array2<F>, NnError> {
        self.backward_into(cache, grad_out, None)
    }

    fn backward_into(
        &self,
        cache: &ForwardCache<F>,
        grad_out: ArrayView2<'_, F>,
        mut grads: Option<&mut [F]>,
    ) -> Result<Array2<F>, NnError> {
        self.check_backward(cache, &grad_out)?;
        let slope = F::of(self.leaky_slope);
        let mut dz = self.head_backward(cache, grad_out);
        for l in (0..self.num_layers()).rev() {
            let (fan_in, fan_out) = (self.widths[l], self.widths[l + 1]);
            let (w, _) = self.layer(l);
            if let Some(g) = grads.as_deref_mut() {
                let o = self.offset(l);
                let (gw, gb) = g[o..o + fan_in * fan_out + fan_out].split_at_mut(fan_in * fan_out);
                let mut gw = ArrayViewMut2::from_shape((fan_in, fan_out), gw).expect("layer shape");
                general_mat_mul(F::one(), &cache.inputs[l].t(), &dz, F::zero(), &mut gw);
                for (dst, src) in gb.iter_mut().zip(dz.sum_axis(Axis(0))) {
                    *dst = src;
                }
            }
            let mut da = dz.dot(&w.t());
            if l > 0 {
                da.zip_mut_with(&cache.pre[l - 1], |g, &z| {
                    if z <= F::zero() {
                        *g = *g * slope;
                    }
                });
            }
            dz = da;
        }
        Ok(dz)
    }
}

/// θ′ ← τ·θ + (1 − τ)·θ′, elementwise.
pub fn soft_update<F: Scalar>(target: &mut Mlp<F>, online: &Mlp<F>, tau: f64) -> Result<(), NnError> {
    target.same_shape(online)?;
    if tau == 1.0 {
        target.params.copy_from_slice(&online.params);
        return Ok(());
    }
    // θ′ + τ(θ − θ′) leaves θ′ bit-identical when the two already agree.
    let t = F::of(tau);
    for (dst, &src) in target.params.iter_mut().zip(&online.params) {
        *dst = *dst + t * (src - *dst);
    }
    Ok(())
}

/// Bias-corrected Adam state for one parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { learning_rate: 7e-4, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam<F> {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<F>,
    pub v: Vec<F>,
}

impl<F: Scalar> Adam<F> {
    pub fn new(config: AdamConfig, num_params: usize) -> Self {
        Self { config, step: 0, m: vec![F::zero(); num_params], v: vec![F::zero(); num_params] }
    }

    pub fn step(&mut self, params: &mut [F], grads: &[F]) -> Result<(), NnError> {
        check("adam parameters", self.m.len(), params.len())?;
        check("adam gradients", self.m.len(), grads.len())?;
        self.step += 1;
        let c = &self.config;
        let t = self.step as i32;
        let bias1 = 1.0 - c.beta1.powi(t);
        let bias2 = 1.0 - c.beta2.powi(t);
        let (b1, b2) = (F::of(c.beta1), F::of(c.beta2));
        let (one_b1, one_b2) = (F::of(1.0 - c.beta1), F::of(1.0 - c.beta2));
        let step_size = F::of(c.learning_rate / bias1);
        let inv_sqrt_bias2 = F::of(1.0 / bias2.sqrt());
        let eps = F::of(c.epsilon);
        for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *m = b1 * *m + one_b1 * g;
            *v = b2 * *v + one_b2 * g * g;
            *p = *p - step_size * *m / (v.sqrt() * inv_sqrt_bias2 + eps);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_network_outputs_zero() {
        let net = Mlp::<f64>::zeros(&[12, 400, 300, 3], Head::Tanh, 0.01).unwrap();
        assert_eq!(net.forward(&[0.7; 12]).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn leaky_relu_negative_side() {
        // 1 → 1 → 1 identity weights, zero bias.
        let net = Mlp::<f64>::from_parts(&[1, 1, 1], Head::Linear, 0.01, vec![1.0, 0.0, 1.0, 0.0]).unwrap();
        let (_, cache) = net.forward_batch(array![[-1.0]].view()).unwrap();
        assert_eq!(cache.pre[0][[0, 0]], -1.0);
        assert_eq!(net.forward(&[-1.0]).unwrap(), vec![-0.01]);
    }

    #[test]
    fn linear_single_layer_gradient_is_outer_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = Mlp::<f64>::new(&[3, 2], Head::Linear, 0.01, Init::FAN_IN, &mut rng).unwrap();
        let x = array![[0.5, -1.0, 2.0]];
        let g = array![[0.3, -0.7]];
        let (_, cache) = net.forward_batch(x.view()).unwrap();
        let (grads, dx) = net.backward(&cache, g.view()).unwrap();
        for i in 0..3 {
            for j in 0..2 {
                assert_eq!(grads[i * 2 + j], x[[0, i]] * g[[0, j]]);
            }
        }
        assert_eq!(&grads[6..], &[0.3, -0.7]);
        let (w, _) = net.layer(0);
        assert_eq!(dx, g.dot(&w.t()));
    }

    #[test]
    fn zero_output_grad_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = Mlp::<f64>::new(&[5, 7, 6, 4], Head::GAUSSIAN_DEFAULT, 0.01, Init::FAN_IN, &mut rng).unwrap();
        let x = Array2::from_shape_fn((3, 5), |(i, j)| (i as f64) - 0.3 * j as f64);
        let (_, cache) = net.forward_batch(x.view()).unwrap();
        let (grads, dx) = net.backward(&cache, Array2::zeros((3, 4)).view()).unwrap();
        assert!(grads.iter().all(|&g| g == 0.0));
        assert!(dx.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn gaussian_head_clamps_log_std() {
        let mut net = Mlp::<f64>::zeros(&[1, 4], Head::Gaussian { log_std_min: -2.0, log_std_max: 1.0 }, 0.01).unwrap();
        // Biases: mean 0.5, -0.5; log-std 5 and -5.
        net.params_mut()[4..].copy_from_slice(&[0.5, -0.5, 5.0, -5.0]);
        assert_eq!(net.forward(&[0.0]).unwrap(), vec![0.5, -0.5, 1.0, -2.0]);
        let (_, cache) = net.forward_batch(array![[1.0]].view()).unwrap();
        let (grads, _) = net.backward(&cache, array![[1.0, 1.0, 1.0, 1.0]].view()).unwrap();
        assert_eq!(&grads[4..], &[1.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn shape_errors() {
        let net = Mlp::<f64>::zeros(&[2, 3, 1], Head::Linear, 0.01).unwrap();
        assert!(matches!(net.forward(&[1.0]), Err(NnError::ShapeMismatch { .. })));
        let (_, cache) = net.forward_batch(array![[1.0, 2.0]].view()).unwrap();
        assert!(net.backward(&cache, array![[1.0, 2.0]].view()).is_err());
        assert!(Mlp::<f64>::zeros(&[2, 3], Head::GAUSSIAN_DEFAULT, 0.01).is_err());
        let mut adam = Adam::<f64>::new(AdamConfig::default(), 3);
        assert!(adam.step(&mut [0.0; 2], &[0.0; 2]).is_err());
    }

    #[test]
    fn adam_zero_gradient_is_noop() {
        let mut adam = Adam::<f64>::new(AdamConfig::default(), 3);
        let mut p = [1.0, -2.0, 3.0];
        adam.step(&mut p, &[0.0; 3]).unwrap();
        assert_eq!(p, [1.0, -2.0, 3.0]);
        assert_eq!(adam.step, 1);
    }

    #[test]
    fn adam_first_step_matches_hand_computation() {
        let cfg = AdamConfig::default();
        let mut adam = Adam::<f64>::new(cfg.clone(), 3);
        let g = [0.5, -2.0, 1e-3];
        let mut p = [0.0; 3];
        adam.step(&mut p, &g).unwrap();
        for i in 0..3 {
            // m̂ = g, v̂ = g² on the first step.
            let expected = -cfg.learning_rate * g[i] / (g[i].abs() + cfg.epsilon);
            assert!((p[i] - expected).abs() < 1e-15, "{} vs {}", p[i], expected);
        }
    }

    #[test]
    fn adam_identical_histories_identical_updates() {
        let mut adam = Adam::<f64>::new(AdamConfig::default(), 2);
        let mut p = [0.3, 0.3];
        for k in 0..50 {
            let g = (k as f64 * 0.37).sin();
            adam.step(&mut p, &[g, g]).unwrap();
            assert_eq!(p[0], p[1]);
        }
    }

    #[test]
    fn soft_update_extremes() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let online = Mlp::<f64>::new(&[3, 4, 2], Head::Linear, 0.01, Init::FAN_IN, &mut rng).unwrap();
        let original = Mlp::<f64>::new(&[3, 4, 2], Head::Linear, 0.01, Init::FAN_IN, &mut rng).unwrap();
        let mut target = original.clone();
        soft_update(&mut target, &online, 0.0).unwrap();
        assert_eq!(target, original);
        soft_update(&mut target, &online, 1.0).unwrap();
        assert_eq!(target.params(), online.params());
        let other = Mlp::<f64>::zeros(&[3, 5, 2], Head::Linear, 0.01).unwrap();
        assert!(soft_update(&mut target, &other, 0.5).is_err());
    }

    #[test]
    fn soft_update_decays_geometrically() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let online = Mlp::<f64>::new(&[3, 4, 2], Head::Linear, 0.01, Init::FAN_IN, &mut rng).unwrap();
        let mut target = Mlp::<f64>::new(&[3, 4, 2], Head::Linear, 0.01, Init::FAN_IN, &mut rng).unwrap();
        let dist = |a: &Mlp<f64>, b: &Mlp<f64>| {
            a.params().iter().zip(b.params()).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
        };
        let tau = 0.005;
        let mut prev = dist(&target, &online);
        for _ in 0..100 {
            soft_update(&mut target, &online, tau).unwrap();
            let d = dist(&target, &online);
            assert!((d / prev - (1.0 - tau)).abs() < 1e-9);
            prev = d;
        }
    }
}
