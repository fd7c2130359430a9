//! Clipped-surrogate PPO with a diagonal Gaussian policy, streaming GAE,
//! and the AMP training loop built on top of it.

pub mod checkpoint;
pub mod train;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub use checkpoint::Checkpoint;
pub use train::{
    evaluate, read_metrics, train, EvalReport, EvalRow, MetricsRow, TrainSummary, Trainer, METRICS_HEADER,
};

use crate::model::Action;
use crate::netcore::{Activation, Adam, DenseNet, RunningNorm};
use crate::sim::{ActionSource, EnvRollout};
use crate::{Error, Result};

const LOG_SQRT_2PI: f64 = 0.918_938_533_204_672_7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoConfig {
    pub gamma: f64,
    pub lambda: f64,
    pub clip: f64,
    pub epochs: usize,
    pub minibatch_size: usize,
    pub learning_rate: f64,
    pub value_learning_rate: f64,
    pub entropy_coef: f64,
    /// Global gradient-norm cap applied separately to the policy and value
    /// gradients.
    pub max_grad_norm: f64,
    pub hidden: Vec<usize>,
    pub init_log_std: f64,
    pub log_std_bounds: [f64; 2],
    pub normalize_observations: bool,
    /// Clip for standardized observations.
    pub observation_clip: f64,
    /// Fit the value network to standardized returns.
    pub normalize_returns: bool,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            gamma: 0.99,
            lambda: 0.95,
            clip: 0.2,
            epochs: 4,
            minibatch_size: 512,
            learning_rate: 1e-3,
            value_learning_rate: 1e-3,
            entropy_coef: 1e-3,
            max_grad_norm: 1.0,
            hidden: vec![64, 64],
            init_log_std: -1.0,
            log_std_bounds: [-4.0, 1.0],
            normalize_observations: true,
            observation_clip: 5.0,
            normalize_returns: true,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.gamma) || !(0.0..=1.0).contains(&self.lambda) {
            return Err("ppo.gamma and ppo.lambda must lie in [0, 1]".into());
        }
        if !(self.clip > 0.0 && self.clip.is_finite()) {
            return Err("ppo.clip must be > 0".into());
        }
        if self.epochs == 0 || self.minibatch_size == 0 {
            return Err("ppo.epochs and ppo.minibatch_size must be > 0".into());
        }
        let positive = [
            self.learning_rate,
            self.value_learning_rate,
            self.max_grad_norm,
            self.observation_clip,
        ];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err("ppo learning rates, max_grad_norm and observation_clip must be > 0".into());
        }
        if !(self.entropy_coef.is_finite() && self.entropy_coef >= 0.0) {
            return Err("ppo.entropy_coef must be >= 0".into());
        }
        let [lo, hi] = self.log_std_bounds;
        if !(lo.is_finite() && hi.is_finite() && lo < hi && (lo..=hi).contains(&self.init_log_std)) {
            return Err("ppo.log_std_bounds must be ordered and contain init_log_std".into());
        }
        if self.hidden.contains(&0) {
            return Err("ppo.hidden sizes must be > 0".into());
        }
        Ok(())
    }
}

/// `log N(a; μ, diag(exp(log_std))²)`.
pub fn gaussian_log_prob(mean: &[f64], log_std: &[f64], action: &[f64]) -> f64 {
    mean.iter()
        .zip(log_std)
        .zip(action)
        .map(|((m, s), a)| {
            let z = (a - m) / s.exp();
            -0.5 * z * z - s - LOG_SQRT_2PI
        })
        .sum()
}

pub fn gaussian_entropy(log_std: &[f64]) -> f64 {
    log_std.iter().map(|s| s + 0.5 + LOG_SQRT_2PI).sum()
}

/// Policy mean network with a state-independent log standard deviation,
/// a value network, and the observation and return normalizers they share.
#[derive(Debug, Clone, PartialEq)]
pub struct Agent {
    pub policy: DenseNet,
    pub log_std: Vec<f64>,
    pub value: DenseNet,
    pub obs_norm: RunningNorm,
    pub return_norm: RunningNorm,
    pub normalize_observations: bool,
    pub normalize_returns: bool,
}

impl Agent {
    pub fn new<R: Rng + ?Sized>(obs_dim: usize, act_dim: usize, cfg: &PpoConfig, rng: &mut R) -> Result<Self> {
        let build = |out: usize, head_gain: f64, rng: &mut R| -> Result<DenseNet> {
            let mut sizes = vec![obs_dim];
            sizes.extend_from_slice(&cfg.hidden);
            sizes.push(out);
            let mut acts = vec![Activation::Tanh; cfg.hidden.len()];
            acts.push(Activation::Identity);
            let mut net = DenseNet::orthogonal(&sizes, &acts, rng)?;
            let last = net.layers() - 1;
            net.init_layer_orthogonal(last, head_gain, rng);
            Ok(net)
        };
        let policy = build(act_dim, 0.01, rng)?;
        let value = build(1, 1.0, rng)?;
        let mut obs_norm = RunningNorm::new(obs_dim);
        obs_norm.clip = Some(cfg.observation_clip);
        Ok(Agent {
            policy,
            log_std: vec![cfg.init_log_std; act_dim],
            value,
            obs_norm,
            return_norm: RunningNorm::new(1),
            normalize_observations: cfg.normalize_observations,
            normalize_returns: cfg.normalize_returns,
        })
    }

    pub fn obs_dim(&self) -> usize {
        self.policy.input_dim()
    }

    pub fn act_dim(&self) -> usize {
        self.policy.output_dim()
    }

    /// The network input for a raw observation.
    pub fn input(&self, obs: &[f64]) -> Result<Vec<f64>> {
        if obs.len() != self.obs_dim() {
            return Err(Error::dim("policy observation", self.obs_dim(), obs.len()));
        }
        Ok(if self.normalize_observations {
            self.obs_norm.normalize(obs)
        } else {
            obs.to_vec()
        })
    }

    pub fn mean_action(&self, obs: &[f64]) -> Result<Vec<f64>> {
        self.policy.forward(&self.input(obs)?)
    }

    /// Value network output mapped back to return units.
    pub fn denormalize_value(&self, v: f64) -> f64 {
        if self.normalize_returns {
            self.return_norm.mean[0] + self.return_norm.scale(0) * v
        } else {
            v
        }
    }

    pub fn normalize_return(&self, r: f64) -> f64 {
        if self.normalize_returns {
            (r - self.return_norm.mean[0]) / self.return_norm.scale(0)
        } else {
            r
        }
    }

    pub fn is_finite(&self) -> bool {
        self.policy.is_finite() && self.value.is_finite() && self.log_std.iter().all(|s| s.is_finite())
    }

    /// Sample from the policy given an already-prepared input.
    fn sample(&self, input: &[f64], rng: &mut ChaCha8Rng) -> Result<(Vec<f64>, f64)> {
        let mean = self.policy.forward(input)?;
        let action: Vec<f64> = mean
            .iter()
            .zip(&self.log_std)
            .map(|(m, s)| m + s.exp() * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let logp = gaussian_log_prob(&mean, &self.log_std, &action);
        Ok((action, logp))
    }
}

impl ActionSource for Agent {
    fn act(&self, obs: &[f64], rng: &mut ChaCha8Rng) -> Result<(Action, f64, f64)> {
        let x = self.input(obs)?;
        let (action, logp) = self.sample(&x, rng)?;
        let v = self.denormalize_value(self.value.forward(&x)?[0]);
        if !(logp.is_finite() && v.is_finite()) {
            return Err(Error::Numerical("policy produced a non-finite action or value".into()));
        }
        Ok((Action(action), logp, v))
    }

    fn value(&self, obs: &[f64]) -> Result<f64> {
        Ok(self.denormalize_value(self.value.forward(&self.input(obs)?)?[0]))
    }
}

/// Acts with the policy mean.
#[derive(Debug, Clone, Copy)]
pub struct Deterministic<'a>(pub &'a Agent);

impl ActionSource for Deterministic<'_> {
    fn act(&self, obs: &[f64], _rng: &mut ChaCha8Rng) -> Result<(Action, f64, f64)> {
        let mean = self.0.mean_action(obs)?;
        let logp = gaussian_log_prob(&mean, &self.0.log_std, &mean);
        Ok((Action(mean), logp, self.0.value(obs)?))
    }

    fn value(&self, obs: &[f64]) -> Result<f64> {
        self.0.value(obs)
    }
}

/// One step as seen by the advantage estimator.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GaeStep {
    pub reward: f64,
    pub value: f64,
    /// The episode ended in a failure state; nothing is bootstrapped.
    pub terminated: bool,
    /// The episode hit its time limit; `timeout_value` is bootstrapped.
    pub timeout: bool,
    pub timeout_value: f64,
}

impl GaeStep {
    pub fn done(&self) -> bool {
        self.terminated || self.timeout
    }
}

/// Advantages and returns of one environment's contiguous steps, in a single
/// backward sweep. `last_value` bootstraps the step after the final one.
pub fn compute_gae(steps: &[GaeStep], last_value: f64, gamma: f64, lambda: f64) -> (Vec<f64>, Vec<f64>) {
    let n = steps.len();
    let mut adv = vec![0.0; n];
    let mut acc = 0.0;
    for t in (0..n).rev() {
        let s = &steps[t];
        let next = if s.terminated {
            0.0
        } else if s.timeout {
            s.timeout_value
        } else if t + 1 < n {
            steps[t + 1].value
        } else {
            last_value
        };
        let delta = s.reward + gamma * next - s.value;
        acc = delta + if s.done() { 0.0 } else { gamma * lambda * acc };
        adv[t] = acc;
    }
    let returns = adv.iter().zip(steps).map(|(a, s)| a + s.value).collect();
    (adv, returns)
}

/// Zero mean, unit (population) standard deviation.
pub fn standardize(x: &[f64]) -> Vec<f64> {
    if x.is_empty() {
        return Vec::new();
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt() + 1e-8;
    x.iter().map(|v| (v - mean) / sd).collect()
}

/// One environment's share of an iteration, in the form the learner needs.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Segment {
    pub observations: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub log_probs: Vec<f64>,
    pub steps: Vec<GaeStep>,
    pub last_value: f64,
}

impl Segment {
    /// Uses each transition's total reward.
    pub fn from_rollout(r: &EnvRollout) -> Self {
        Segment {
            observations: r.steps.iter().map(|t| t.observation.clone()).collect(),
            actions: r.steps.iter().map(|t| t.action.clone()).collect(),
            log_probs: r.steps.iter().map(|t| t.log_prob).collect(),
            steps: r
                .steps
                .iter()
                .map(|t| GaeStep {
                    reward: t.report.total,
                    value: t.value,
                    terminated: t.terminated,
                    timeout: t.timeout,
                    timeout_value: t.timeout_value,
                })
                .collect(),
            last_value: r.last_value,
        }
    }
}

/// Flattened, environment-major training batch (index `env · T + t`).
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutBatch {
    /// Network inputs under the normalizer that produced the actions.
    pub inputs: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub log_probs: Vec<f64>,
    pub raw_advantages: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl RolloutBatch {
    pub fn new(agent: &Agent, segments: &[Segment], cfg: &PpoConfig) -> Result<Self> {
        let mut b = RolloutBatch {
            inputs: Vec::new(),
            actions: Vec::new(),
            log_probs: Vec::new(),
            raw_advantages: Vec::new(),
            advantages: Vec::new(),
            returns: Vec::new(),
        };
        for s in segments {
            let n = s.steps.len();
            if s.observations.len() != n || s.actions.len() != n || s.log_probs.len() != n {
                return Err(Error::dim("rollout segment", n, s.observations.len()));
            }
            let (adv, ret) = compute_gae(&s.steps, s.last_value, cfg.gamma, cfg.lambda);
            for (o, a) in s.observations.iter().zip(&s.actions) {
                if a.len() != agent.act_dim() {
                    return Err(Error::dim("rollout action", agent.act_dim(), a.len()));
                }
                b.inputs.push(agent.input(o)?);
                b.actions.push(a.clone());
            }
            b.log_probs.extend_from_slice(&s.log_probs);
            b.raw_advantages.extend(adv);
            b.returns.extend(ret);
        }
        if b.is_empty() {
            return Err(Error::Insufficient("rollout batch is empty".into()));
        }
        if b.raw_advantages.iter().chain(&b.returns).any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite advantage or return".into()));
        }
        b.advantages = standardize(&b.raw_advantages);
        Ok(b)
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

/// Surrogate statistics of one minibatch, plus the gradient of
/// `−mean(min(r·A, clip(r)·A)) − c_H · H` when requested.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SurrogateEval {
    pub loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
    pub policy_grad: Vec<f64>,
    pub log_std_grad: Vec<f64>,
}

pub fn surrogate(
    agent: &Agent,
    batch: &RolloutBatch,
    indices: &[usize],
    cfg: &PpoConfig,
    with_grad: bool,
) -> Result<SurrogateEval> {
    if indices.is_empty() {
        return Err(Error::Insufficient("empty minibatch".into()));
    }
    let n = indices.len() as f64;
    let act = agent.act_dim();
    let mut out = SurrogateEval {
        entropy: gaussian_entropy(&agent.log_std),
        ..Default::default()
    };
    if with_grad {
        out.policy_grad = vec![0.0; agent.policy.param_count()];
        out.log_std_grad = vec![-cfg.entropy_coef; act];
    }
    let inv_var: Vec<f64> = agent.log_std.iter().map(|s| (-2.0 * s).exp()).collect();
    for &i in indices {
        let rec = agent.policy.forward_record(&batch.inputs[i])?;
        let mean = rec.output();
        let a = &batch.actions[i];
        let logp = gaussian_log_prob(mean, &agent.log_std, a);
        let log_ratio = logp - batch.log_probs[i];
        let ratio = log_ratio.exp();
        let adv = batch.advantages[i];
        let clipped = ratio.clamp(1.0 - cfg.clip, 1.0 + cfg.clip);
        out.loss -= (ratio * adv).min(clipped * adv) / n;
        out.approx_kl += ((ratio - 1.0) - log_ratio) / n;
        if (ratio - 1.0).abs() > cfg.clip {
            out.clip_fraction += 1.0 / n;
        }
        // the clipped branch is active (and flat) when it is the smaller one
        let active = ratio * adv <= clipped * adv;
        if with_grad && active {
            let dlogp = -adv * ratio / n;
            let mean_grad: Vec<f64> = (0..act).map(|j| dlogp * (a[j] - mean[j]) * inv_var[j]).collect();
            agent
                .policy
                .accumulate_backward(&rec, &mean_grad, &mut out.policy_grad)?;
            for j in 0..act {
                let z2 = (a[j] - mean[j]).powi(2) * inv_var[j];
                out.log_std_grad[j] += dlogp * (z2 - 1.0);
            }
        }
    }
    out.loss -= cfg.entropy_coef * out.entropy;
    if !out.loss.is_finite() {
        return Err(Error::Numerical(format!("surrogate loss is {}", out.loss)));
    }
    Ok(out)
}

/// Mean squared error of the value network against `targets[i]` over the
/// minibatch, and its gradient when requested.
pub fn value_loss(
    net: &DenseNet,
    inputs: &[Vec<f64>],
    targets: &[f64],
    indices: &[usize],
    grad: Option<&mut [f64]>,
) -> Result<f64> {
    if indices.is_empty() {
        return Err(Error::Insufficient("empty minibatch".into()));
    }
    let n = indices.len() as f64;
    let mut loss = 0.0;
    match grad {
        Some(g) => {
            for &i in indices {
                let rec = net.forward_record(&inputs[i])?;
                let e = rec.output()[0] - targets[i];
                loss += e * e / n;
                net.accumulate_backward(&rec, &[2.0 * e / n], g)?;
            }
        }
        None => {
            for &i in indices {
                let e = net.forward(&inputs[i])?[0] - targets[i];
                loss += e * e / n;
            }
        }
    }
    Ok(loss)
}

fn clip_grad_norm(parts: &mut [&mut [f64]], max_norm: f64) -> f64 {
    let norm = parts.iter().flat_map(|p| p.iter()).map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let k = max_norm / norm;
        parts.iter_mut().for_each(|p| p.iter_mut().for_each(|g| *g *= k));
    }
    norm
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct UpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
    /// Policy gradient norm before clipping.
    pub grad_norm: f64,
}

/// Optimizer state for the policy mean, log-std and value network.
#[derive(Debug, Clone)]
pub struct PpoLearner {
    policy_opt: Adam,
    log_std_opt: Adam,
    value_opt: Adam,
}

impl PpoLearner {
    pub fn new(agent: &Agent, cfg: &PpoConfig) -> Self {
        PpoLearner {
            policy_opt: Adam::new(agent.policy.param_count(), cfg.learning_rate),
            log_std_opt: Adam::new(agent.act_dim(), cfg.learning_rate),
            value_opt: Adam::new(agent.value.param_count(), cfg.value_learning_rate),
        }
    }

    /// `epochs` passes over shuffled minibatches. Statistics are averaged
    /// over every minibatch step. The return normalizer absorbs the batch's
    /// returns before the value fit.
    pub fn update(
        &mut self,
        agent: &mut Agent,
        batch: &RolloutBatch,
        cfg: &PpoConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<UpdateStats> {
        if batch.is_empty() {
            return Err(Error::Insufficient("rollout batch is empty".into()));
        }
        if agent.normalize_returns {
            let rs: Vec<[f64; 1]> = batch.returns.iter().map(|r| [*r]).collect();
            agent.return_norm.update(&rs)?;
        }
        let targets: Vec<f64> = batch.returns.iter().map(|r| agent.normalize_return(*r)).collect();
        let mut order: Vec<usize> = (0..batch.len()).collect();
        let mut stats = UpdateStats::default();
        let mut count = 0.0;
        let [lo, hi] = cfg.log_std_bounds;
        for _ in 0..cfg.epochs {
            order.shuffle(rng);
            for mb in order.chunks(cfg.minibatch_size) {
                let mut s = surrogate(agent, batch, mb, cfg, true)?;
                let norm = clip_grad_norm(&mut [&mut s.policy_grad, &mut s.log_std_grad], cfg.max_grad_norm);
                self.policy_opt.step(agent.policy.params_mut(), &s.policy_grad)?;
                self.log_std_opt.step(&mut agent.log_std, &s.log_std_grad)?;
                agent.log_std.iter_mut().for_each(|v| *v = v.clamp(lo, hi));

                let mut vg = vec![0.0; agent.value.param_count()];
                let vl = value_loss(&agent.value, &batch.inputs, &targets, mb, Some(&mut vg))?;
                clip_grad_norm(&mut [&mut vg], cfg.max_grad_norm);
                self.value_opt.step(agent.value.params_mut(), &vg)?;

                stats.policy_loss += s.loss;
                stats.value_loss += vl;
                stats.entropy += s.entropy;
                stats.approx_kl += s.approx_kl;
                stats.clip_fraction += s.clip_fraction;
                stats.grad_norm += norm;
                count += 1.0;
            }
        }
        for v in [
            &mut stats.policy_loss,
            &mut stats.value_loss,
            &mut stats.entropy,
            &mut stats.approx_kl,
            &mut stats.clip_fraction,
            &mut stats.grad_norm,
        ] {
            *v /= count;
        }
        Ok(stats)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn agent(seed: u64) -> Agent {
        let cfg = PpoConfig {
            hidden: vec![5],
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut a = Agent::new(3, 2, &cfg, &mut rng).unwrap();
        // larger head so the mean actually depends on the input
        a.policy.init_layer_orthogonal(1, 1.0, &mut rng);
        a.log_std = vec![-0.3, 0.2];
        a
    }

    fn batch(agent: &Agent, n: usize, seed: u64, perturb: f64) -> RolloutBatch {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut seg = Segment::default();
        for _ in 0..n {
            let obs: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let (a, logp, v) = agent.act(&obs, &mut rng).unwrap();
            seg.observations.push(obs);
            seg.actions.push(a.0);
            seg.log_probs.push(logp + rng.gen_range(-perturb..=perturb));
            seg.steps.push(GaeStep {
                reward: rng.gen_range(-1.0..1.0),
                value: v,
                ..Default::default()
            });
        }
        RolloutBatch::new(agent, &[seg], &PpoConfig::default()).unwrap()
    }

    #[test]
    fn log_prob_matches_closed_form() {
        // standard normal density at 0 and 1 in one dimension
        let p0 = gaussian_log_prob(&[0.0], &[0.0], &[0.0]);
        assert!((p0 - (-(2.0 * std::f64::consts::PI).sqrt().ln())).abs() < 1e-15);
        let p1 = gaussian_log_prob(&[2.0], &[2f64.ln()], &[4.0]);
        let want = (1.0 / (2.0 * (2.0 * std::f64::consts::PI).sqrt()) * (-0.5f64).exp()).ln();
        assert!((p1 - want).abs() < 1e-12);
        assert!(
            (gaussian_entropy(&[0.0]) - 0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E).ln()).abs() < 1e-12
        );
    }

    #[test]
    fn fresh_batch_has_unit_ratio() {
        let a = agent(1);
        let b = batch(&a, 40, 2, 0.0);
        let idx: Vec<usize> = (0..b.len()).collect();
        let s = surrogate(&a, &b, &idx, &PpoConfig::default(), false).unwrap();
        assert!(s.approx_kl.abs() < 1e-12);
        assert_eq!(s.clip_fraction, 0.0);
        // mean advantage is zero after standardization
        assert!((s.loss + PpoConfig::default().entropy_coef * s.entropy).abs() < 1e-9);
    }

    #[test]
    fn zero_advantage_gives_entropy_only_gradient() {
        let a = agent(3);
        let mut b = batch(&a, 30, 4, 0.1);
        b.advantages.iter_mut().for_each(|v| *v = 0.0);
        let idx: Vec<usize> = (0..b.len()).collect();
        let cfg = PpoConfig::default();
        let s = surrogate(&a, &b, &idx, &cfg, true).unwrap();
        assert!(s.policy_grad.iter().all(|g| *g == 0.0));
        assert!(s.log_std_grad.iter().all(|g| *g == -cfg.entropy_coef));
    }

    #[test]
    fn surrogate_gradient_matches_differences() {
        let cfg = PpoConfig::default();
        for seed in 0..5 {
            let a = agent(10 + seed);
            let b = batch(&a, 25, 20 + seed, 0.1);
            let idx: Vec<usize> = (0..b.len()).collect();
            let s = surrogate(&a, &b, &idx, &cfg, true).unwrap();
            let h = 1e-6;
            for k in 0..a.policy.param_count() {
                let mut p = a.clone();
                p.policy.params_mut()[k] += h;
                let up = surrogate(&p, &b, &idx, &cfg, false).unwrap().loss;
                p.policy.params_mut()[k] -= 2.0 * h;
                let dn = surrogate(&p, &b, &idx, &cfg, false).unwrap().loss;
                let fd = (up - dn) / (2.0 * h);
                assert!(
                    (fd - s.policy_grad[k]).abs() < 1e-6 * (1.0 + fd.abs()),
                    "param {k}: {fd} vs {}",
                    s.policy_grad[k]
                );
            }
            for j in 0..2 {
                let mut p = a.clone();
                p.log_std[j] += h;
                let up = surrogate(&p, &b, &idx, &cfg, false).unwrap().loss;
                p.log_std[j] -= 2.0 * h;
                let dn = surrogate(&p, &b, &idx, &cfg, false).unwrap().loss;
                let fd = (up - dn) / (2.0 * h);
                assert!((fd - s.log_std_grad[j]).abs() < 1e-6 * (1.0 + fd.abs()));
            }
        }
    }

    #[test]
    fn value_gradient_matches_differences() {
        let a = agent(7);
        let b = batch(&a, 20, 8, 0.0);
        let targets: Vec<f64> = (0..b.len()).map(|i| (i as f64).sin()).collect();
        let idx: Vec<usize> = (0..b.len()).collect();
        let mut g = vec![0.0; a.value.param_count()];
        value_loss(&a.value, &b.inputs, &targets, &idx, Some(&mut g)).unwrap();
        let h = 1e-6;
        for k in 0..g.len() {
            let mut net = a.value.clone();
            net.params_mut()[k] += h;
            let up = value_loss(&net, &b.inputs, &targets, &idx, None).unwrap();
            net.params_mut()[k] -= 2.0 * h;
            let dn = value_loss(&net, &b.inputs, &targets, &idx, None).unwrap();
            assert!(((up - dn) / (2.0 * h) - g[k]).abs() < 1e-6);
        }
    }

    #[test]
    fn gae_single_steps() {
        let s = |reward, value, terminated, timeout, timeout_value| GaeStep {
            reward,
            value,
            terminated,
            timeout,
            timeout_value,
        };
        let (a, r) = compute_gae(&[s(1.0, 0.5, true, false, 0.0)], 9.0, 0.9, 0.8);
        assert_eq!((a[0], r[0]), (0.5, 1.0));
        let (a, _) = compute_gae(&[s(1.0, 0.5, false, true, 2.0)], 9.0, 0.9, 0.8);
        assert!((a[0] - (1.0 + 0.9 * 2.0 - 0.5)).abs() < 1e-15);
        let (a, _) = compute_gae(&[s(1.0, 0.5, false, false, 0.0)], 2.0, 0.9, 0.8);
        assert!((a[0] - (1.0 + 0.9 * 2.0 - 0.5)).abs() < 1e-15);
        // λ = 1, γ = 1 on a terminated segment is the Monte Carlo return
        let steps = [
            s(1.0, 0.0, false, false, 0.0),
            s(2.0, 0.0, false, false, 0.0),
            s(3.0, 0.0, true, false, 0.0),
        ];
        let (_, r) = compute_gae(&steps, 100.0, 1.0, 1.0);
        assert_eq!(r, vec![6.0, 5.0, 3.0]);
    }

    #[test]
    fn update_improves_surrogate_and_keeps_bounds() {
        let cfg = PpoConfig {
            minibatch_size: 16,
            ..Default::default()
        };
        let mut a = agent(5);
        let b = batch(&a, 64, 6, 0.0);
        let mut learner = PpoLearner::new(&a, &cfg);
        let idx: Vec<usize> = (0..b.len()).collect();
        let before = surrogate(&a, &b, &idx, &cfg, false).unwrap().loss;
        let stats = learner
            .update(&mut a, &b, &cfg, &mut ChaCha8Rng::seed_from_u64(0))
            .unwrap();
        let after = surrogate(&a, &b, &idx, &cfg, false).unwrap().loss;
        assert!(after < before, "{after} !< {before}");
        assert!(stats.approx_kl >= 0.0 && stats.clip_fraction <= 1.0);
        assert!(a.log_std.iter().all(|s| (-4.0..=1.0).contains(s)));
    }
}
