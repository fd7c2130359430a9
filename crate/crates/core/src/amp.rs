//! Adversarial motion prior: least-squares discriminator losses, gradient
//! penalty on reference samples, the discriminator update, and the
//! imitation reward handed to the policy.

use std::collections::VecDeque;
use std::io::{Read, Write};

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::mocap::ClipLibrary;
use crate::model::DiscriminatorObservation;
use crate::netcore::{Activation, Adam, DenseNet, RunningNorm};
use crate::{Error, Result};

/// Consecutive discriminator observations; the discriminator sees their
/// concatenation.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionPair {
    pub current: DiscriminatorObservation,
    pub next: DiscriminatorObservation,
}

impl TransitionPair {
    pub fn new(current: DiscriminatorObservation, next: DiscriminatorObservation) -> Result<Self> {
        if current.0.len() != next.0.len() {
            return Err(Error::dim("transition halves", current.0.len(), next.0.len()));
        }
        if current.0.iter().chain(&next.0).any(|v| !v.is_finite()) {
            return Err(Error::Numerical("transition holds a non-finite value".into()));
        }
        Ok(TransitionPair { current, next })
    }

    pub fn dim(&self) -> usize {
        self.current.0.len() + self.next.0.len()
    }

    pub fn concat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.dim());
        v.extend_from_slice(&self.current.0);
        v.extend_from_slice(&self.next.0);
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AmpConfig {
    pub lambda_gp: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub policy_capacity: usize,
    pub demo_capacity: usize,
    pub updates_per_iteration: usize,
    /// Standardize discriminator inputs with running statistics.
    pub normalize: bool,
    pub hidden: Vec<usize>,
}

impl Default for AmpConfig {
    fn default() -> Self {
        AmpConfig {
            lambda_gp: 10.0,
            learning_rate: 1e-4,
            batch_size: 256,
            policy_capacity: 100_000,
            demo_capacity: 100_000,
            updates_per_iteration: 4,
            normalize: true,
            hidden: vec![128, 128],
        }
    }
}

impl AmpConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.lambda_gp.is_finite() && self.lambda_gp >= 0.0) {
            return Err("amp.lambda_gp must be >= 0".into());
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err("amp.learning_rate must be > 0".into());
        }
        if self.batch_size == 0 || self.policy_capacity == 0 || self.demo_capacity == 0 {
            return Err("amp batch size and buffer capacities must be > 0".into());
        }
        if self.hidden.contains(&0) {
            return Err("amp.hidden sizes must be > 0".into());
        }
        Ok(())
    }
}

/// Scalar-output network on normalized concatenated transitions.
#[derive(Debug, Clone)]
pub struct Discriminator {
    pub net: DenseNet,
    pub norm: RunningNorm,
    pub normalize: bool,
    adam: Adam,
}

impl Discriminator {
    /// Rectifier hidden layers and an identity scalar head.
    pub fn new<R: Rng + ?Sized>(input_dim: usize, cfg: &AmpConfig, rng: &mut R) -> Result<Self> {
        let mut sizes = vec![input_dim];
        sizes.extend_from_slice(&cfg.hidden);
        sizes.push(1);
        let mut acts = vec![Activation::Relu; cfg.hidden.len()];
        acts.push(Activation::Identity);
        let net = DenseNet::orthogonal(&sizes, &acts, rng)?;
        Ok(Self::from_net(net, cfg))
    }

    pub fn from_net(net: DenseNet, cfg: &AmpConfig) -> Self {
        let n = net.param_count();
        Discriminator {
            norm: RunningNorm::new(net.input_dim()),
            normalize: cfg.normalize,
            adam: Adam::new(n, cfg.learning_rate),
            net,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.net.input_dim()
    }

    /// The vector actually fed to the network.
    pub fn prepare(&self, pair: &TransitionPair) -> Result<Vec<f64>> {
        if pair.dim() != self.input_dim() {
            return Err(Error::dim("discriminator input", self.input_dim(), pair.dim()));
        }
        let x = pair.concat();
        Ok(if self.normalize { self.norm.normalize(&x) } else { x })
    }

    pub fn score(&self, pair: &TransitionPair) -> Result<f64> {
        Ok(self.net.forward(&self.prepare(pair)?)?[0])
    }

    pub fn scores(&self, batch: &[TransitionPair]) -> Result<Vec<f64>> {
        batch.iter().map(|p| self.score(p)).collect()
    }

    /// Merges a batch into the input statistics.
    pub fn observe(&mut self, batch: &[TransitionPair]) -> Result<()> {
        let xs: Vec<Vec<f64>> = batch.iter().map(TransitionPair::concat).collect();
        self.norm.update(&xs)
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(&[self.normalize as u8])?;
        self.norm.write_to(w)?;
        self.net.write_to(w)
    }

    pub fn read_from<R: Read>(r: &mut R, cfg: &AmpConfig) -> Result<Self> {
        let mut flag = [0u8; 1];
        r.read_exact(&mut flag)
            .map_err(|e| Error::Checkpoint(format!("truncated discriminator: {e}")))?;
        let norm = RunningNorm::read_from(r)?;
        let net = DenseNet::read_from(r)?;
        if norm.dim() != net.input_dim() {
            return Err(Error::Checkpoint(
                "discriminator normalizer does not match network".into(),
            ));
        }
        let mut d = Discriminator::from_net(net, cfg);
        d.norm = norm;
        d.normalize = flag[0] != 0;
        Ok(d)
    }
}

fn non_empty(batch: &[TransitionPair], what: &str) -> Result<()> {
    if batch.is_empty() {
        Err(Error::Insufficient(format!("{what} batch is empty")))
    } else {
        Ok(())
    }
}

/// Mean of `(D − 1)²` over demonstration pairs.
pub fn expert_loss(d: &Discriminator, batch: &[TransitionPair]) -> Result<f64> {
    non_empty(batch, "expert")?;
    let s = d.scores(batch)?;
    Ok(s.iter().map(|v| (v - 1.0).powi(2)).sum::<f64>() / s.len() as f64)
}

/// Mean of `(D + 1)²` over policy pairs.
pub fn policy_loss(d: &Discriminator, batch: &[TransitionPair]) -> Result<f64> {
    non_empty(batch, "policy")?;
    let s = d.scores(batch)?;
    Ok(s.iter().map(|v| (v + 1.0).powi(2)).sum::<f64>() / s.len() as f64)
}

/// Mean squared norm of the input gradient of D at the given pairs (with
/// respect to the network input, i.e. after normalization).
pub fn gradient_penalty(d: &Discriminator, batch: &[TransitionPair]) -> Result<f64> {
    non_empty(batch, "gradient-penalty")?;
    let mut total = 0.0;
    for p in batch {
        let g = d.net.input_gradient(&d.prepare(p)?)?;
        total += g.iter().map(|v| v * v).sum::<f64>();
    }
    Ok(total / batch.len() as f64)
}

/// `max(0, 1 − ¼(s − 1)²)` for a raw discriminator score `s`.
pub fn imitation_reward_from_score(s: f64) -> f64 {
    (1.0 - 0.25 * (s - 1.0).powi(2)).max(0.0)
}

pub fn imitation_reward(d: &Discriminator, pair: &TransitionPair) -> Result<f64> {
    Ok(imitation_reward_from_score(d.score(pair)?))
}

/// Fresh per-dimension statistics of a buffer.
pub fn normalize_transitions(buffer: &[TransitionPair]) -> Result<RunningNorm> {
    non_empty(buffer, "normalizer")?;
    let mut n = RunningNorm::new(buffer[0].dim());
    n.update(&buffer.iter().map(TransitionPair::concat).collect::<Vec<_>>())?;
    Ok(n)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AmpLosses {
    pub expert: f64,
    pub policy: f64,
    pub gradient_penalty: f64,
    pub total: f64,
    pub demo_score: f64,
    pub policy_score: f64,
}

/// Where batches of transitions come from.
pub trait TransitionSource {
    fn available(&self) -> usize;
    fn draw<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Vec<TransitionPair>;
}

/// Demonstrations are drawn with replacement, so any non-empty library can
/// fill a batch of any size.
impl TransitionSource for ClipLibrary {
    fn available(&self) -> usize {
        if self.total_transitions() > 0 {
            usize::MAX
        } else {
            0
        }
    }
    fn draw<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Vec<TransitionPair> {
        self.sample_transitions(count, rng)
    }
}

impl TransitionSource for [TransitionPair] {
    fn available(&self) -> usize {
        self.len()
    }
    fn draw<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Vec<TransitionPair> {
        index::sample(rng, self.len(), count.min(self.len()))
            .into_iter()
            .map(|i| self[i].clone())
            .collect()
    }
}

/// FIFO buffer of policy transitions.
#[derive(Debug, Clone, Default)]
pub struct ReplayBuffer {
    items: VecDeque<TransitionPair>,
    capacity: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        ReplayBuffer {
            items: VecDeque::with_capacity(capacity.min(1 << 16)),
            capacity,
        }
    }

    pub fn push(&mut self, pair: TransitionPair) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(pair);
    }

    pub fn extend<I: IntoIterator<Item = TransitionPair>>(&mut self, pairs: I) {
        pairs.into_iter().for_each(|p| self.push(p));
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }
}

impl TransitionSource for ReplayBuffer {
    fn available(&self) -> usize {
        self.items.len()
    }
    fn draw<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Vec<TransitionPair> {
        index::sample(rng, self.items.len(), count.min(self.items.len()))
            .into_iter()
            .map(|i| self.items[i].clone())
            .collect()
    }
}

/// Losses of `d` on the given batches, and the gradient of
/// `½ expert + ½ policy + λ · penalty` into `grad` when supplied.
pub fn amp_loss(
    d: &Discriminator,
    demo: &[TransitionPair],
    policy: &[TransitionPair],
    lambda_gp: f64,
    mut grad: Option<&mut [f64]>,
) -> Result<AmpLosses> {
    non_empty(demo, "expert")?;
    non_empty(policy, "policy")?;
    let (nd, np) = (demo.len() as f64, policy.len() as f64);
    let mut out = AmpLosses::default();
    for p in demo {
        let x = d.prepare(p)?;
        let s = match grad.as_deref_mut() {
            Some(g) => {
                let rec = d.net.forward_record(&x)?;
                let s = rec.output()[0];
                d.net.accumulate_backward(&rec, &[(s - 1.0) / nd], g)?;
                if lambda_gp > 0.0 {
                    let (_, pen) = d.net.gradient_penalty_backward(&x, lambda_gp / nd, g)?;
                    out.gradient_penalty += pen / nd;
                }
                s
            }
            None => d.net.forward(&x)?[0],
        };
        if grad.is_none() || lambda_gp == 0.0 {
            let g = d.net.input_gradient(&x)?;
            out.gradient_penalty += g.iter().map(|v| v * v).sum::<f64>() / nd;
        }
        out.expert += (s - 1.0).powi(2) / nd;
        out.demo_score += s / nd;
    }
    for p in policy {
        let x = d.prepare(p)?;
        let rec = d.net.forward_record(&x)?;
        let s = rec.output()[0];
        if let Some(g) = grad.as_deref_mut() {
            d.net.accumulate_backward(&rec, &[(s + 1.0) / np], g)?;
        }
        out.policy += (s + 1.0).powi(2) / np;
        out.policy_score += s / np;
    }
    out.total = 0.5 * out.expert + 0.5 * out.policy + lambda_gp * out.gradient_penalty;
    if !out.total.is_finite() {
        return Err(Error::Numerical(format!("discriminator loss is {}", out.total)));
    }
    Ok(out)
}

/// One optimizer step on a fresh batch from each source. Reported losses are
/// those of the batch before the step.
pub fn amp_update<D, P, R>(
    d: &mut Discriminator,
    demo: &D,
    policy: &P,
    cfg: &AmpConfig,
    rng: &mut R,
) -> Result<AmpLosses>
where
    D: TransitionSource + ?Sized,
    P: TransitionSource + ?Sized,
    R: Rng + ?Sized,
{
    if demo.available() < cfg.batch_size || policy.available() < cfg.batch_size {
        return Err(Error::Insufficient(format!(
            "discriminator update needs {} transitions per buffer (demo {}, policy {})",
            cfg.batch_size,
            demo.available(),
            policy.available()
        )));
    }
    let demo_batch = demo.draw(cfg.batch_size, rng);
    let policy_batch = policy.draw(cfg.batch_size, rng);
    if d.normalize {
        d.observe(&demo_batch)?;
        d.observe(&policy_batch)?;
    }
    let mut grad = vec![0.0; d.net.param_count()];
    let losses = amp_loss(d, &demo_batch, &policy_batch, cfg.lambda_gp, Some(&mut grad))?;
    d.adam.lr = cfg.learning_rate;
    d.adam.step(d.net.params_mut(), &grad)?;
    Ok(losses)
}
