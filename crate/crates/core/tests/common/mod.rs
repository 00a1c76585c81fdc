//! Oracles shared by the integration suites.
#![allow(dead_code)]

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use quadsac::nn::{Head, Init, Mlp};

/// Scalar evaluation of the distance reward, coded without the library.
pub fn reward_oracle(dx: f64, dy: f64, dz: f64) -> f64 {
    let a = 7.0_f64;
    let sigma = 0.5_f64;
    let mut d = (dx * dx + dy * dy + dz * dz).sqrt();
    if d < 1e-3 {
        d = 1e-3;
    }
    let norm = a / (2.0 * std::f64::consts::PI * sigma * sigma).sqrt();
    1.0 / (a * d) + norm * (-(d * d) / (2.0 * sigma * sigma)).exp()
}

/// Relative difference with magnitudes under `floor` compared absolutely.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-scale..scale))
}

/// `count` parameter indices, spread evenly over the network's layers.
pub fn stratified_indices(net: &Mlp<f64>, count: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let widths = net.widths();
    let mut offsets = vec![0];
    for w in widths.windows(2) {
        offsets.push(offsets.last().unwrap() + w[0] * w[1] + w[1]);
    }
    let layers = widths.len() - 1;
    (0..count)
        .map(|k| {
            let l = k % layers;
            rng.random_range(offsets[l]..offsets[l + 1])
        })
        .collect()
}

pub struct GradCheck {
    pub worst_param: f64,
    pub worst_input: f64,
    pub checked: usize,
}

/// Central finite differences of L = Σ c ⊙ net(x) against the analytic
/// parameter and input gradients.
pub fn gradient_check(widths: &[usize], head: Head, seed: u64, params_to_check: usize, h: f64) -> GradCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = Mlp::<f64>::new(widths, head, 0.01, Init::FAN_IN, &mut rng).unwrap();
    let batch = 3;
    let x = random_matrix(&mut rng, batch, net.input_dim(), 1.0);
    let c = random_matrix(&mut rng, batch, net.output_dim(), 1.0);
    let loss = |net: &Mlp<f64>, x: &Array2<f64>| (net.predict(x.view()).unwrap() * &c).sum();

    let (_, cache) = net.forward_batch(x.view()).unwrap();
    let (grads, dx) = net.backward(&cache, c.view()).unwrap();

    let mut worst_param: f64 = 0.0;
    let indices = stratified_indices(&net, params_to_check, &mut rng);
    for &i in &indices {
        let orig = net.params()[i];
        net.params_mut()[i] = orig + h;
        let up = loss(&net, &x);
        net.params_mut()[i] = orig - h;
        let down = loss(&net, &x);
        net.params_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * h);
        worst_param = worst_param.max(rel_err(grads[i], numeric, 1e-6));
    }

    let mut worst_input: f64 = 0.0;
    for r in 0..batch {
        for j in 0..net.input_dim() {
            let mut xp = x.clone();
            xp[[r, j]] += h;
            let mut xm = x.clone();
            xm[[r, j]] -= h;
            let numeric = (loss(&net, &xp) - loss(&net, &xm)) / (2.0 * h);
            worst_input = worst_input.max(rel_err(dx[[r, j]], numeric, 1e-6));
        }
    }
    GradCheck { worst_param, worst_input, checked: indices.len() }
}

/// Straight-line evaluator over explicit loops, independent of the
/// library's matrix code: weights are read as row-major `in × out` blocks
/// followed by the bias, per layer.
pub fn straight_line_forward(widths: &[usize], params: &[f64], slope: f64, head: Head, x: &[f64]) -> Vec<f64> {
    let mut a = x.to_vec();
    let mut off = 0;
    let layers = widths.len() - 1;
    for l in 0..layers {
        let (n_in, n_out) = (widths[l], widths[l + 1]);
        let w = &params[off..off + n_in * n_out];
        let b = &params[off + n_in * n_out..off + n_in * n_out + n_out];
        off += n_in * n_out + n_out;
        let mut z = vec![0.0; n_out];
        for o in 0..n_out {
            let mut acc = b[o];
            for i in 0..n_in {
                acc += a[i] * w[i * n_out + o];
            }
            z[o] = acc;
        }
        a = if l + 1 < layers {
            z.iter().map(|&v| if v >= 0.0 { v } else { slope * v }).collect()
        } else {
            match head {
                Head::Linear => z,
                Head::Tanh => z.iter().map(|v| v.tanh()).collect(),
                Head::Gaussian { log_std_min, log_std_max } => {
                    let half = n_out / 2;
                    z.iter()
                        .enumerate()
                        .map(|(k, &v)| if k < half { v } else { v.clamp(log_std_min, log_std_max) })
                        .collect()
                }
            }
        };
    }
    a
}
