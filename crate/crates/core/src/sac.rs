//! Soft Actor-Critic with a tanh-squashed Gaussian actor, twin critics,
//! Polyak-averaged target critics and automatic entropy-temperature tuning.

use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::{soft_update, Adam, AdamConfig, Head, Init, Mlp, NnError, Scalar};
use crate::replay::{BufferTooSmall, ReplayBuffer, Transition};

/// Added inside the log of the tanh Jacobian to keep it finite at |a| → 1.
pub const SQUASH_EPS: f64 = 1e-6;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Error)]
pub enum SacError {
    #[error(transparent)]
    BufferTooSmall(#[from] BufferTooSmall),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("invalid SAC configuration: {0}")]
    InvalidConfig(String),
    #[error("non-finite {0} loss")]
    NonFiniteLoss(&'static str),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SacConfig {
    pub learning_rate: f64,
    pub buffer_capacity: usize,
    pub learning_starts: usize,
    pub batch_size: usize,
    pub tau: f64,
    pub gamma: f64,
    /// Defaults to −(action dimension) when unset.
    pub target_entropy: Option<f64>,
    pub updates_per_step: usize,
    pub hidden: Vec<usize>,
    pub leaky_slope: f64,
    pub log_std_min: f64,
    pub log_std_max: f64,
    pub initial_alpha: f64,
}

impl Default for SacConfig {
    fn default() -> Self {
        Self {
            learning_rate: 7e-4,
            buffer_capacity: 1_000_000,
            learning_starts: 10_000,
            batch_size: 256,
            tau: 0.005,
            gamma: 0.99,
            target_entropy: None,
            updates_per_step: 1,
            hidden: vec![400, 300],
            leaky_slope: 0.01,
            log_std_min: -20.0,
            log_std_max: 2.0,
            initial_alpha: 1.0,
        }
    }
}

impl SacConfig {
    pub fn validate(&self) -> Result<(), SacError> {
        let bad = |m: String| Err(SacError::InvalidConfig(m));
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad(format!("tau must be in (0, 1], got {}", self.tau));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad(format!("gamma must be in (0, 1), got {}", self.gamma));
        }
        if self.batch_size == 0 || self.batch_size > self.learning_starts || self.learning_starts > self.buffer_capacity {
            return bad(format!(
                "need 0 < batch_size ({}) <= learning_starts ({}) <= buffer_capacity ({})",
                self.batch_size, self.learning_starts, self.buffer_capacity
            ));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return bad("learning_rate must be finite and >= 0".into());
        }
        if self.updates_per_step == 0 {
            return bad("updates_per_step must be > 0".into());
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad(format!("hidden widths {:?}", self.hidden));
        }
        if !(self.log_std_min < self.log_std_max) || !(self.initial_alpha > 0.0) {
            return bad("need log_std_min < log_std_max and initial_alpha > 0".into());
        }
        Ok(())
    }

    pub fn target_entropy_for(&self, action_dim: usize) -> f64 {
        self.target_entropy.unwrap_or(-(action_dim as f64))
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig { learning_rate: self.learning_rate, ..AdamConfig::default() }
    }
}

/// Minibatch in matrix form.
#[derive(Debug, Clone)]
pub struct Batch<F> {
    pub states: Array2<F>,
    pub actions: Array2<F>,
    pub rewards: Array1<F>,
    pub next_states: Array2<F>,
    /// 1 where the transition ended in a physical failure.
    pub dones: Array1<F>,
}

impl<F: Scalar> Batch<F> {
    pub fn from_transitions(items: &[&Transition]) -> Self {
        let n = items.len();
        let obs = items.first().map_or(0, |t| t.state.len());
        let act = items.first().map_or(0, |t| t.action.len());
        Self {
            states: Array2::from_shape_fn((n, obs), |(i, j)| F::of(items[i].state[j])),
            actions: Array2::from_shape_fn((n, act), |(i, j)| F::of(items[i].action[j])),
            rewards: Array1::from_shape_fn(n, |i| F::of(items[i].reward)),
            next_states: Array2::from_shape_fn((n, obs), |(i, j)| F::of(items[i].next_state[j])),
            dones: Array1::from_shape_fn(n, |i| if items[i].done { F::one() } else { F::zero() }),
        }
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }
}

/// Reparameterized draw a = tanh(μ + σ·ε) with its log-density.
#[derive(Debug, Clone)]
pub struct PolicySample<F> {
    pub actions: Array2<F>,
    pub log_probs: Array1<F>,
    pub mean: Array2<F>,
    pub log_std: Array2<F>,
    pub noise: Array2<F>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub critic1: f64,
    pub critic2: f64,
    pub actor: f64,
    pub alpha_loss: f64,
    /// Temperature used during this update.
    pub alpha: f64,
}

#[derive(Debug, Clone)]
pub struct SacAgent<F> {
    pub config: SacConfig,
    pub obs_dim: usize,
    pub action_dim: usize,
    pub actor: Mlp<F>,
    pub q1: Mlp<F>,
    pub q2: Mlp<F>,
    pub q1_target: Mlp<F>,
    pub q2_target: Mlp<F>,
    pub log_alpha: f64,
    pub actor_opt: Adam<F>,
    pub q1_opt: Adam<F>,
    pub q2_opt: Adam<F>,
    pub alpha_opt: Adam<f64>,
}

fn standard_normal<F: Scalar, R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Array2<F> {
    Array2::from_shape_simple_fn((rows, cols), || F::of(rng.sample::<f64, _>(StandardNormal)))
}

fn mean_f64<F: Scalar>(v: &Array1<F>) -> f64 {
    v.iter().map(|x| x.f64()).sum::<f64>() / v.len() as f64
}

impl<F: Scalar> SacAgent<F> {
    pub fn new<R: Rng + ?Sized>(config: SacConfig, obs_dim: usize, action_dim: usize, rng: &mut R) -> Result<Self, SacError> {
        config.validate()?;
        let mut actor_w = vec![obs_dim];
        actor_w.extend(&config.hidden);
        actor_w.push(2 * action_dim);
        let mut critic_w = vec![obs_dim + action_dim];
        critic_w.extend(&config.hidden);
        critic_w.push(1);
        let head = Head::Gaussian { log_std_min: config.log_std_min, log_std_max: config.log_std_max };
        let actor = Mlp::new(&actor_w, head, config.leaky_slope, Init::SMALL_OUTPUT, rng)?;
        let q1 = Mlp::new(&critic_w, Head::Linear, config.leaky_slope, Init::SMALL_OUTPUT, rng)?;
        let q2 = Mlp::new(&critic_w, Head::Linear, config.leaky_slope, Init::SMALL_OUTPUT, rng)?;
        let adam = config.adam();
        Ok(Self {
            obs_dim,
            action_dim,
            actor_opt: Adam::new(adam.clone(), actor.num_params()),
            q1_opt: Adam::new(adam.clone(), q1.num_params()),
            q2_opt: Adam::new(adam.clone(), q2.num_params()),
            alpha_opt: Adam::new(adam, 1),
            q1_target: q1.clone(),
            q2_target: q2.clone(),
            actor,
            q1,
            q2,
            log_alpha: config.initial_alpha.ln(),
            config,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.log_alpha.exp()
    }

    pub fn target_entropy(&self) -> f64 {
        self.config.target_entropy_for(self.action_dim)
    }

    fn state_row(&self, obs: &[f64]) -> Array2<F> {
        Array2::from_shape_fn((1, obs.len()), |(_, j)| F::of(obs[j]))
    }

    /// Squashes `mean + exp(log_std)·noise` and evaluates its log-density.
    pub fn squash(&self, mean: Array2<F>, log_std: Array2<F>, noise: Array2<F>) -> PolicySample<F> {
        let eps = F::of(SQUASH_EPS);
        let half_ln_2pi = F::of(HALF_LN_2PI);
        let half = F::of(0.5);
        let n = mean.nrows();
        let mut actions = Array2::zeros(mean.raw_dim());
        let mut log_probs = Array1::zeros(n);
        for i in 0..n {
            let mut lp = F::zero();
            for j in 0..mean.ncols() {
                let e = noise[[i, j]];
                let a = (mean[[i, j]] + log_std[[i, j]].exp() * e).tanh();
                actions[[i, j]] = a;
                lp = lp - half * e * e - log_std[[i, j]] - half_ln_2pi - (F::one() - a * a + eps).ln();
            }
            log_probs[i] = lp;
        }
        PolicySample { actions, log_probs, mean, log_std, noise }
    }

    fn split_head(&self, out: &Array2<F>) -> (Array2<F>, Array2<F>) {
        let d = self.action_dim;
        (out.slice(s![.., ..d]).to_owned(), out.slice(s![.., d..]).to_owned())
    }

    /// Policy draw for a batch of states with explicit standard-normal noise.
    pub fn policy_sample(&self, states: ArrayView2<'_, F>, noise: ArrayView2<'_, F>) -> Result<PolicySample<F>, SacError> {
        let out = self.actor.predict(states)?;
        let (mean, log_std) = self.split_head(&out);
        Ok(self.squash(mean, log_std, noise.to_owned()))
    }

    /// Stochastic action for one observation, with its log-probability.
    pub fn sample_action<R: Rng + ?Sized>(&self, obs: &[f64], rng: &mut R) -> Result<(Vec<f64>, f64), SacError> {
        let noise = standard_normal::<F, _>(1, self.action_dim, rng);
        let sample = self.policy_sample(self.state_row(obs).view(), noise.view())?;
        Ok((sample.actions.iter().map(|a| a.f64()).collect(), sample.log_probs[0].f64()))
    }

    /// tanh of the policy mean.
    pub fn deterministic_action(&self, obs: &[f64]) -> Result<Vec<f64>, SacError> {
        let out = self.actor.predict(self.state_row(obs).view())?;
        Ok((0..self.action_dim).map(|j| out[[0, j]].tanh().f64()).collect())
    }

    fn critic_input(&self, states: ArrayView2<'_, F>, actions: ArrayView2<'_, F>) -> Array2<F> {
        concatenate(Axis(1), &[states, actions]).expect("batch rows agree")
    }

    /// y = r + γ(1 − done)(min(Q1′, Q2′)(s′, a′) − α·log π(a′|s′)) with
    /// a′ = tanh(μ(s′) + σ(s′)·noise).
    pub fn critic_targets_with_noise(&self, batch: &Batch<F>, noise: ArrayView2<'_, F>) -> Result<Array1<F>, SacError> {
        let next = self.policy_sample(batch.next_states.view(), noise)?;
        let input = self.critic_input(batch.next_states.view(), next.actions.view());
        let q1 = self.q1_target.predict(input.view())?;
        let q2 = self.q2_target.predict(input.view())?;
        let alpha = F::of(self.alpha());
        let gamma = F::of(self.config.gamma);
        Ok(Array1::from_shape_fn(batch.len(), |i| {
            let soft = q1[[i, 0]].min(q2[[i, 0]]) - alpha * next.log_probs[i];
            batch.rewards[i] + gamma * (F::one() - batch.dones[i]) * soft
        }))
    }

    pub fn critic_targets<R: Rng + ?Sized>(&self, batch: &Batch<F>, rng: &mut R) -> Result<Array1<F>, SacError> {
        let noise = standard_normal::<F, _>(batch.len(), self.action_dim, rng);
        self.critic_targets_with_noise(batch, noise.view())
    }

    /// Mean squared error of `critic` against `targets` and its parameter gradient.
    pub fn critic_loss_and_grad(critic: &Mlp<F>, batch: &Batch<F>, targets: &Array1<F>) -> Result<(f64, Vec<F>), SacError> {
        let input = concatenate(Axis(1), &[batch.states.view(), batch.actions.view()]).expect("batch rows agree");
        let (q, cache) = critic.forward_batch(input.view())?;
        let n = batch.len();
        let scale = F::of(2.0 / n as f64);
        let residual = Array2::from_shape_fn((n, 1), |(i, _)| q[[i, 0]] - targets[i]);
        let loss = residual.iter().map(|r| r.f64() * r.f64()).sum::<f64>() / n as f64;
        let (grads, _) = critic.backward(&cache, residual.mapv(|r| r * scale).view())?;
        Ok((loss, grads))
    }

    /// Actor objective E[α·log π(ã|s) − min(Q1, Q2)(s, ã)] through the
    /// reparameterized sample, with its gradient. Also returns the batch
    /// log-probabilities for the temperature update.
    pub fn actor_loss_and_grad(&self, states: ArrayView2<'_, F>, noise: ArrayView2<'_, F>) -> Result<(f64, Vec<F>, Array1<F>), SacError> {
        let n = states.nrows();
        let d = self.action_dim;
        let (out, cache) = self.actor.forward_batch(states)?;
        let (mean, log_std) = self.split_head(&out);
        let sample = self.squash(mean, log_std, noise.to_owned());

        let input = self.critic_input(states, sample.actions.view());
        let (q1, c1) = self.q1.forward_batch(input.view())?;
        let (q2, c2) = self.q2.forward_batch(input.view())?;
        let inv_n = F::of(1.0 / n as f64);
        let mut g1 = Array2::zeros((n, 1));
        let mut g2 = Array2::zeros((n, 1));
        let mut min_q = Array1::zeros(n);
        for i in 0..n {
            if q1[[i, 0]] <= q2[[i, 0]] {
                g1[[i, 0]] = -inv_n;
                min_q[i] = q1[[i, 0]];
            } else {
                g2[[i, 0]] = -inv_n;
                min_q[i] = q2[[i, 0]];
            }
        }
        let dq = self.q1.input_gradient(&c1, g1.view())? + self.q2.input_gradient(&c2, g2.view())?;

        let alpha = F::of(self.alpha());
        let eps = F::of(SQUASH_EPS);
        let two = F::of(2.0);
        let mut grad_out = Array2::zeros((n, 2 * d));
        for i in 0..n {
            for j in 0..d {
                let a = sample.actions[[i, j]];
                let jac = F::one() - a * a;
                // d/du of −ln(1 − tanh(u)² + ε)
                let d_squash = two * a * jac / (jac + eps);
                let du = dq[[i, self.obs_dim + j]] * jac + alpha * inv_n * d_squash;
                grad_out[[i, j]] = du;
                // u = μ + e^{log σ}·ε, and the Gaussian term contributes −log σ.
                grad_out[[i, d + j]] = du * sample.log_std[[i, j]].exp() * sample.noise[[i, j]] - alpha * inv_n;
            }
        }
        let (grads, _) = self.actor.backward(&cache, grad_out.view())?;
        let loss = (0..n).map(|i| (alpha * sample.log_probs[i] - min_q[i]).f64()).sum::<f64>() / n as f64;
        Ok((loss, grads, sample.log_probs))
    }

    /// One gradient step on critics, actor and temperature, then target tracking.
    pub fn update_with_batch<R: Rng + ?Sized>(&mut self, batch: &Batch<F>, rng: &mut R) -> Result<LossReport, SacError> {
        let alpha = self.alpha();
        let targets = self.critic_targets(batch, rng)?;

        let (critic1, g1) = Self::critic_loss_and_grad(&self.q1, batch, &targets)?;
        let (critic2, g2) = Self::critic_loss_and_grad(&self.q2, batch, &targets)?;
        if !critic1.is_finite() || !critic2.is_finite() {
            return Err(SacError::NonFiniteLoss("critic"));
        }
        self.q1_opt.step(self.q1.params_mut(), &g1)?;
        self.q2_opt.step(self.q2.params_mut(), &g2)?;

        let noise = standard_normal::<F, _>(batch.len(), self.action_dim, rng);
        let (actor, ga, log_probs) = self.actor_loss_and_grad(batch.states.view(), noise.view())?;
        if !actor.is_finite() {
            return Err(SacError::NonFiniteLoss("actor"));
        }
        self.actor_opt.step(self.actor.params_mut(), &ga)?;

        // L(log α) = E[−α·(log π + H*)], so dL/d(log α) = −α·E[log π + H*].
        let entropy_gap = mean_f64(&log_probs) + self.target_entropy();
        let alpha_loss = -alpha * entropy_gap;
        if !alpha_loss.is_finite() {
            return Err(SacError::NonFiniteLoss("alpha"));
        }
        let mut log_alpha = [self.log_alpha];
        self.alpha_opt.step(&mut log_alpha, &[-alpha * entropy_gap])?;
        self.log_alpha = log_alpha[0];

        soft_update(&mut self.q1_target, &self.q1, self.config.tau)?;
        soft_update(&mut self.q2_target, &self.q2, self.config.tau)?;

        Ok(LossReport { critic1, critic2, actor, alpha_loss, alpha })
    }

    /// Samples a minibatch and applies [`SacAgent::update_with_batch`].
    pub fn update<R: Rng + ?Sized>(&mut self, buffer: &ReplayBuffer, rng: &mut R) -> Result<LossReport, SacError> {
        if buffer.len() < self.config.learning_starts {
            return Err(BufferTooSmall { have: buffer.len(), need: self.config.learning_starts }.into());
        }
        let items = buffer.sample(self.config.batch_size, rng)?;
        let batch = Batch::from_transitions(&items);
        self.update_with_batch(&batch, rng)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_config() -> SacConfig {
        SacConfig {
            buffer_capacity: 100,
            learning_starts: 1,
            batch_size: 1,
            hidden: vec![8, 6],
            ..SacConfig::default()
        }
    }

    fn zero_agent(cfg: SacConfig) -> SacAgent<f64> {
        let mut agent = SacAgent::<f64>::new(cfg, 12, 3, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        for net in [&mut agent.actor, &mut agent.q1, &mut agent.q2, &mut agent.q1_target, &mut agent.q2_target] {
            net.params_mut().fill(0.0);
        }
        agent
    }

    fn transition(done: bool) -> Transition {
        Transition {
            state: [0.1; 12],
            action: vec![0.2, -0.3, 0.4],
            reward: 1.5,
            next_state: [0.2; 12],
            done,
        }
    }

    #[test]
    fn config_validation() {
        assert!(SacConfig::default().validate().is_ok());
        assert!(SacConfig { tau: 0.0, ..SacConfig::default() }.validate().is_err());
        assert!(SacConfig { gamma: 1.0, ..SacConfig::default() }.validate().is_err());
        assert!(SacConfig { batch_size: 20_000, ..SacConfig::default() }.validate().is_err());
        assert!(SacConfig { learning_starts: 2_000_000, ..SacConfig::default() }.validate().is_err());
    }

    #[test]
    fn zero_actor_is_neutral() {
        let agent = zero_agent(small_config());
        assert_eq!(agent.deterministic_action(&[0.3; 12]).unwrap(), vec![0.0; 3]);
        assert_eq!(agent.deterministic_action(&[0.3; 12]).unwrap(), agent.deterministic_action(&[0.3; 12]).unwrap());
    }

    #[test]
    fn sampled_actions_inside_open_interval() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let agent = SacAgent::<f64>::new(small_config(), 12, 3, &mut rng).unwrap();
        for _ in 0..1000 {
            let (a, lp) = agent.sample_action(&[0.5; 12], &mut rng).unwrap();
            assert!(a.iter().all(|v| v.abs() < 1.0));
            assert!(lp.is_finite());
        }
    }

    #[test]
    fn tiny_sigma_collapses_to_tanh_mean() {
        let agent = zero_agent(small_config());
        let mean = array![[0.4, -1.2, 2.0]];
        let sample = agent.squash(mean.clone(), Array2::from_elem((1, 3), -20.0), array![[1.0, -2.0, 0.5]]);
        for j in 0..3 {
            assert!((sample.actions[[0, j]] - mean[[0, j]].tanh()).abs() < 1e-8);
        }
    }

    #[test]
    fn done_transition_targets_reward() {
        let agent = zero_agent(small_config());
        let batch = Batch::<f64>::from_transitions(&[&transition(true)]);
        let y = agent.critic_targets(&batch, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert_eq!(y[0], 1.5);
    }

    #[test]
    fn zero_network_target_closed_form() {
        let agent = zero_agent(small_config());
        let batch = Batch::<f64>::from_transitions(&[&transition(false)]);
        let noise = array![[0.3, -1.1, 0.7]];
        let y = agent.critic_targets_with_noise(&batch, noise.view()).unwrap();
        // Zero actor: μ = 0, log σ = 0, so u = noise and a = tanh(noise).
        let mut lp = 0.0;
        for &e in noise.iter() {
            let a: f64 = f64::tanh(e);
            lp += -0.5 * e * e - 0.5 * (2.0 * std::f64::consts::PI).ln() - (1.0 - a * a + 1e-6).ln();
        }
        let expected = 1.5 - 0.99 * agent.alpha() * lp;
        assert!((y[0] - expected).abs() < 1e-9);
    }

    #[test]
    fn twin_minimum_ignores_larger_critic() {
        let mut agent = zero_agent(small_config());
        let batch = Batch::<f64>::from_transitions(&[&transition(false)]);
        let noise = array![[0.3, -1.1, 0.7]];
        let base = agent.critic_targets_with_noise(&batch, noise.view()).unwrap();
        let n = agent.q2_target.num_params();
        agent.q2_target.params_mut()[n - 1] += 10.0;
        let inflated = agent.critic_targets_with_noise(&batch, noise.view()).unwrap();
        assert_eq!(base, inflated);
    }

    #[test]
    fn zero_learning_rate_changes_nothing() {
        let cfg = SacConfig { learning_rate: 0.0, ..small_config() };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut agent = SacAgent::<f64>::new(cfg, 12, 3, &mut rng).unwrap();
        let before = agent.clone();
        let mut buffer = ReplayBuffer::new(10);
        buffer.push(transition(false));
        let report = agent.update(&buffer, &mut rng).unwrap();
        assert!(report.critic1.is_finite() && report.actor.is_finite() && report.alpha_loss.is_finite());
        assert_eq!(agent.actor, before.actor);
        assert_eq!(agent.q1, before.q1);
        assert_eq!(agent.q2_target, before.q2_target);
        assert_eq!(agent.log_alpha, before.log_alpha);
    }

    #[test]
    fn update_needs_learning_starts() {
        let cfg = SacConfig { learning_starts: 5, batch_size: 2, ..small_config() };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut agent = SacAgent::<f64>::new(cfg, 12, 3, &mut rng).unwrap();
        let mut buffer = ReplayBuffer::new(10);
        buffer.push(transition(false));
        assert!(matches!(agent.update(&buffer, &mut rng), Err(SacError::BufferTooSmall(_))));
    }

    #[test]
    fn critic_step_reduces_loss_on_fixed_target() {
        let mut agent = zero_agent(SacConfig { learning_rate: 1e-3, ..small_config() });
        // Give the critic something to differentiate through.
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        agent.q1 = Mlp::new(agent.q1.widths(), Head::Linear, 0.01, Init::FAN_IN, &mut rng).unwrap();
        let batch = Batch::<f64>::from_transitions(&[&transition(false)]);
        let y = agent.critic_targets_with_noise(&batch, array![[0.1, 0.2, 0.3]].view()).unwrap();
        let (before, g) = SacAgent::critic_loss_and_grad(&agent.q1, &batch, &y).unwrap();
        agent.q1_opt.step(agent.q1.params_mut(), &g).unwrap();
        let (after, _) = SacAgent::critic_loss_and_grad(&agent.q1, &batch, &y).unwrap();
        assert!(after < before, "{after} !< {before}");
    }
}
