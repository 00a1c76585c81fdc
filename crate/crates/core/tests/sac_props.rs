mod common;

use ndarray::{concatenate, Array1, Array2, Axis};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use common::{random_matrix, rel_err, stratified_indices};
use quadsac::env::OBS_DIM;
use quadsac::replay::{ReplayBuffer, Transition};
use quadsac::sac::{Batch, SacAgent, SacConfig};

fn config(hidden: Vec<usize>) -> SacConfig {
    SacConfig { buffer_capacity: 1000, learning_starts: 8, batch_size: 8, hidden, ..SacConfig::default() }
}

/// Agent whose actor ignores its input: mean and log-std come from the
/// final-layer bias alone.
fn constant_actor(mean: &[f64], log_std: &[f64]) -> SacAgent<f64> {
    let d = mean.len();
    let mut agent = SacAgent::<f64>::new(config(vec![4, 4]), OBS_DIM, d, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let p = agent.actor.params_mut();
    p.fill(0.0);
    let n = p.len();
    p[n - 2 * d..n - d].copy_from_slice(mean);
    p[n - d..].copy_from_slice(log_std);
    agent
}

/// Integrates the library's squashed density over the action box by
/// substituting a = tanh(u) on a uniform u grid.
fn squashed_mass(agent: &SacAgent<f64>, mean: &[f64], log_std: &[f64], points: usize) -> f64 {
    let d = mean.len();
    let lo: Vec<f64> = (0..d).map(|j| mean[j] - 12.0 * log_std[j].exp()).collect();
    let hi: Vec<f64> = (0..d).map(|j| mean[j] + 12.0 * log_std[j].exp()).collect();
    let steps: Vec<f64> = (0..d).map(|j| (hi[j] - lo[j]) / points as f64).collect();
    let total = points.pow(d as u32);
    let mut us = Array2::zeros((total, d));
    for k in 0..total {
        let mut rem = k;
        for j in 0..d {
            us[[k, j]] = lo[j] + (rem % points) as f64 * steps[j] + 0.5 * steps[j];
            rem /= points;
        }
    }
    let m = Array2::from_shape_fn((total, d), |(_, j)| mean[j]);
    let ls = Array2::from_shape_fn((total, d), |(_, j)| log_std[j]);
    let noise = Array2::from_shape_fn((total, d), |(k, j)| (us[[k, j]] - mean[j]) / log_std[j].exp());
    let sample = agent.squash(m, ls, noise);
    let cell: f64 = steps.iter().product();
    (0..total)
        .map(|k| {
            let jac: f64 = (0..d).map(|j| 1.0 - sample.actions[[k, j]].powi(2)).product();
            sample.log_probs[k].exp() * jac * cell
        })
        .sum()
}

#[test]
fn squashed_density_integrates_to_one_1d() {
    for (mean, log_std) in [(0.0, 0.0), (0.7, -0.5), (-1.2, 0.3)] {
        let agent = constant_actor(&[mean], &[log_std]);
        let mass = squashed_mass(&agent, &[mean], &[log_std], 20_000);
        assert!((mass - 1.0).abs() < 1e-3, "μ={mean} log σ={log_std}: mass {mass}");
    }
}

#[test]
fn squashed_density_integrates_to_one_2d() {
    let (mean, log_std) = ([0.4, -0.6], [-0.3, 0.2]);
    let agent = constant_actor(&mean, &log_std);
    let mass = squashed_mass(&agent, &mean, &log_std, 600);
    assert!((mass - 1.0).abs() < 1e-3, "mass {mass}");
}

#[test]
fn sample_mean_matches_deterministic_action() {
    // With a zero mean the squashed distribution is symmetric, so its mean
    // is exactly tanh(μ) = 0 whatever σ is.
    let agent = constant_actor(&[0.0, 0.0, 0.0], &[-1.0, 0.0, 0.5]);
    let obs = [0.3; OBS_DIM];
    let det = agent.deterministic_action(&obs).unwrap();
    assert_eq!(det, vec![0.0; 3]);
    assert_eq!(det, agent.deterministic_action(&obs).unwrap());
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let n = 100_000;
    let mut sum = [0.0; 3];
    let mut sq = [0.0; 3];
    for _ in 0..n {
        let (a, _) = agent.sample_action(&obs, &mut rng).unwrap();
        for j in 0..3 {
            sum[j] += a[j];
            sq[j] += a[j] * a[j];
        }
    }
    for j in 0..3 {
        let mean = sum[j] / n as f64;
        let se = ((sq[j] / n as f64 - mean * mean) / n as f64).sqrt();
        assert!((mean - det[j]).abs() < 3.0 * se, "axis {j}: {mean} vs {} (se {se})", det[j]);
    }
}

#[test]
fn sample_mean_matches_quadrature_for_offset_mean() {
    // Away from zero tanh bends the distribution, so the sample mean is
    // compared with E[tanh(u)] by quadrature rather than with tanh(μ).
    let (mu, log_std) = (0.6, -1.0);
    let agent = constant_actor(&[mu], &[log_std]);
    let sigma = f64::exp(log_std);
    let points = 20_000;
    let (lo, hi) = (mu - 12.0 * sigma, mu + 12.0 * sigma);
    let h = (hi - lo) / points as f64;
    let expected: f64 = (0..points)
        .map(|k| {
            let u = lo + (k as f64 + 0.5) * h;
            let z = (u - mu) / sigma;
            u.tanh() * (-0.5 * z * z).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt()) * h
        })
        .sum();
    let obs = [0.0; OBS_DIM];
    assert_eq!(agent.deterministic_action(&obs).unwrap()[0], mu.tanh());
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let n = 100_000;
    let draws: Vec<f64> = (0..n).map(|_| agent.sample_action(&obs, &mut rng).unwrap().0[0]).collect();
    let mean = draws.iter().sum::<f64>() / n as f64;
    let var = draws.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n as f64;
    assert!((mean - expected).abs() < 3.0 * (var / n as f64).sqrt());
}

#[test]
fn actor_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(43);
    let mut agent = SacAgent::<f64>::new(config(vec![400, 300]), OBS_DIM, 3, &mut rng).unwrap();
    agent.log_alpha = 0.3f64.ln();
    // Give the critics curvature in the action so the Q path matters.
    for q in [&mut agent.q1, &mut agent.q2] {
        let n = q.params().len();
        for v in &mut q.params_mut()[n - 301..] {
            *v *= 100.0;
        }
    }
    let states = random_matrix(&mut rng, 8, OBS_DIM, 1.0);
    let noise = random_matrix(&mut rng, 8, 3, 1.5);
    let (_, grads, _) = agent.actor_loss_and_grad(states.view(), noise.view()).unwrap();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for i in stratified_indices(&agent.actor, 64, &mut rng) {
        let orig = agent.actor.params()[i];
        agent.actor.params_mut()[i] = orig + h;
        let up = agent.actor_loss_and_grad(states.view(), noise.view()).unwrap().0;
        agent.actor.params_mut()[i] = orig - h;
        let down = agent.actor_loss_and_grad(states.view(), noise.view()).unwrap().0;
        agent.actor.params_mut()[i] = orig;
        worst = worst.max(rel_err(grads[i], (up - down) / (2.0 * h), 1e-6));
    }
    assert!(worst < 1e-4, "worst relative error {worst}");
}

fn synthetic_batch(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Batch<f64> {
    let items: Vec<Transition> = (0..n)
        .map(|_| Transition {
            state: [0; OBS_DIM].map(|_| rng.random_range(-1.0..1.0)),
            action: (0..d).map(|_| rng.random_range(-1.0..1.0)).collect(),
            reward: rng.random_range(0.0..5.0),
            next_state: [0; OBS_DIM].map(|_| rng.random_range(-1.0..1.0)),
            done: rng.random_bool(0.2),
        })
        .collect();
    Batch::from_transitions(&items.iter().collect::<Vec<_>>())
}

#[test]
fn temperature_rises_when_entropy_is_below_target() {
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    let batch = synthetic_batch(&mut rng, 16, 3);

    // Narrow policy: log π ≈ 3·(−log σ − ½ln 2π) ≫ −H* = 3, so entropy is below target.
    let mut narrow = constant_actor(&[0.1, -0.2, 0.0], &[-5.0, -5.0, -5.0]);
    let before = narrow.alpha();
    let report = narrow.update_with_batch(&batch, &mut rng).unwrap();
    assert!(narrow.alpha() > before, "α {before} -> {}", narrow.alpha());
    assert!(report.alpha_loss < 0.0);

    // Unit-σ policy: log π ≈ −0.6 per axis < −H*, so α falls.
    let mut wide = constant_actor(&[0.0, 0.0, 0.0], &[0.0, 0.0, 0.0]);
    let before = wide.alpha();
    wide.update_with_batch(&batch, &mut rng).unwrap();
    assert!(wide.alpha() < before);
}

#[test]
fn replay_sampling_is_uniform() {
    let mut buffer = ReplayBuffer::new(10);
    for k in 0..10 {
        buffer.push(Transition {
            state: [0.0; OBS_DIM],
            action: vec![0.0; 3],
            reward: k as f64,
            next_state: [0.0; OBS_DIM],
            done: false,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(45);
    let draws = 100_000;
    let mut counts = [0usize; 10];
    for _ in 0..draws / 10 {
        for t in buffer.sample(10, &mut rng).unwrap() {
            counts[t.reward as usize] += 1;
        }
    }
    let expected = draws as f64 / 10.0;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    let p = 1.0 - ChiSquared::new(9.0).unwrap().cdf(chi2);
    assert!(p > 0.01, "χ² = {chi2}, p = {p}");
}

#[test]
fn full_sample_returns_stored_items_only() {
    let mut buffer = ReplayBuffer::new(5);
    for k in 0..7 {
        buffer.push(Transition {
            state: [k as f64; OBS_DIM],
            action: vec![0.0; 4],
            reward: k as f64,
            next_state: [0.0; OBS_DIM],
            done: false,
        });
    }
    let stored: Vec<f64> = buffer.iter().map(|t| t.reward).collect();
    assert_eq!(stored, vec![2.0, 3.0, 4.0, 5.0, 6.0]);
    let mut rng = ChaCha8Rng::seed_from_u64(46);
    for t in buffer.sample(buffer.len(), &mut rng).unwrap() {
        assert!(stored.contains(&t.reward));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn targets_never_exceed_either_critic(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let agent = SacAgent::<f64>::new(config(vec![16, 16]), OBS_DIM, 4, &mut rng).unwrap();
        let batch = synthetic_batch(&mut rng, 12, 4);
        let noise = random_matrix(&mut rng, 12, 4, 2.0);
        let y = agent.critic_targets_with_noise(&batch, noise.view()).unwrap();

        let next = agent.policy_sample(batch.next_states.view(), noise.view()).unwrap();
        let input = concatenate(Axis(1), &[batch.next_states.view(), next.actions.view()]).unwrap();
        let alpha = agent.alpha();
        let gamma = agent.config.gamma;
        for q in [&agent.q1_target, &agent.q2_target] {
            let qv = q.predict(input.view()).unwrap();
            let bound: Array1<f64> = Array1::from_shape_fn(12, |i| {
                batch.rewards[i] + gamma * (1.0 - batch.dones[i]) * (qv[[i, 0]] - alpha * next.log_probs[i])
            });
            for i in 0..12 {
                prop_assert!(y[i] <= bound[i] + 1e-12);
            }
        }
    }

    #[test]
    fn temperature_stays_positive(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut agent = SacAgent::<f64>::new(SacConfig { learning_rate: 0.05, ..config(vec![8, 8]) }, OBS_DIM, 3, &mut rng).unwrap();
        for _ in 0..20 {
            let batch = synthetic_batch(&mut rng, 8, 3);
            let report = agent.update_with_batch(&batch, &mut rng).unwrap();
            prop_assert!(report.alpha > 0.0 && agent.alpha() > 0.0 && agent.alpha().is_finite());
        }
    }
}
