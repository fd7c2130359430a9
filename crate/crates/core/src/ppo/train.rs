//! The AMP training loop, its metrics table, and policy evaluation.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::amp::{amp_update, imitation_reward, AmpLosses, Discriminator, ReplayBuffer, TransitionPair};
use crate::config::TrainConfig;
use crate::mocap::ClipLibrary;
use crate::model::RobotModel;
use crate::rewards::{command_reward, total_reward};
use crate::sim::{run_parallel, ActionSource, EnvRollout, EnvSettings, Episode};
use crate::{Error, Result};

use super::{Agent, Checkpoint, Deterministic, PpoLearner, RolloutBatch, Segment, UpdateStats};

/// Stream of the learner's RNG; environment streams are `2·id` and `2·id + 1`.
const LEARNER_STREAM: u64 = 1 << 62;

pub const METRICS_HEADER: &str = "iteration,env_steps,episodes,mean_return,mean_episode_length,mean_reward,\
command_reward,imitation_reward,disc_expert_loss,disc_policy_loss,disc_gradient_penalty,demo_score,policy_score,\
policy_loss,value_loss,entropy,approx_kl,clip_fraction,mean_log_std";

/// One line of the metrics table. Episode statistics cover episodes that
/// finished during the iteration; when none did, the previous values are
/// repeated.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MetricsRow {
    pub iteration: u64,
    pub env_steps: u64,
    pub episodes: u64,
    pub mean_return: f64,
    pub mean_episode_length: f64,
    /// Per-step total reward over the iteration.
    pub mean_reward: f64,
    /// Per-step unweighted command reward.
    pub command_reward: f64,
    /// Per-step unweighted imitation reward.
    pub imitation_reward: f64,
    pub amp: AmpLosses,
    pub ppo: UpdateStats,
    pub mean_log_std: f64,
}

impl MetricsRow {
    fn values(&self) -> [f64; 19] {
        let (a, p) = (&self.amp, &self.ppo);
        [
            self.iteration as f64,
            self.env_steps as f64,
            self.episodes as f64,
            self.mean_return,
            self.mean_episode_length,
            self.mean_reward,
            self.command_reward,
            self.imitation_reward,
            a.expert,
            a.policy,
            a.gradient_penalty,
            a.demo_score,
            a.policy_score,
            p.policy_loss,
            p.value_loss,
            p.entropy,
            p.approx_kl,
            p.clip_fraction,
            self.mean_log_std,
        ]
    }

    pub fn to_csv_line(&self) -> String {
        self.values()
            .iter()
            .map(|v| format!("{v}"))
            .collect::<Vec<_>>()
            .join(",")
    }

    pub fn parse_csv_line(line: &str) -> Result<Self> {
        let v: Vec<f64> = line
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Config(format!("metrics row: {e}")))?;
        if v.len() != 19 {
            return Err(Error::Config(format!(
                "metrics row has {} fields, expected 19",
                v.len()
            )));
        }
        Ok(MetricsRow {
            iteration: v[0] as u64,
            env_steps: v[1] as u64,
            episodes: v[2] as u64,
            mean_return: v[3],
            mean_episode_length: v[4],
            mean_reward: v[5],
            command_reward: v[6],
            imitation_reward: v[7],
            amp: AmpLosses {
                expert: v[8],
                policy: v[9],
                gradient_penalty: v[10],
                demo_score: v[11],
                policy_score: v[12],
                total: 0.5 * v[8] + 0.5 * v[9],
            },
            ppo: UpdateStats {
                policy_loss: v[13],
                value_loss: v[14],
                entropy: v[15],
                approx_kl: v[16],
                clip_fraction: v[17],
                grad_norm: 0.0,
            },
            mean_log_std: v[18],
        })
    }
}

/// Reads a metrics table, checking the header.
pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let f = File::open(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut lines = BufReader::new(f).lines();
    match lines.next() {
        Some(Ok(h)) if h.trim() == METRICS_HEADER => {}
        _ => return Err(Error::Config(format!("{} lacks the metrics header", path.display()))),
    }
    let mut rows = Vec::new();
    for line in lines {
        let line = line?;
        if !line.trim().is_empty() {
            rows.push(MetricsRow::parse_csv_line(&line)?);
        }
    }
    Ok(rows)
}

/// Complete training state.
pub struct Trainer {
    pub config: TrainConfig,
    pub model: RobotModel,
    pub settings: Arc<EnvSettings>,
    pub library: ClipLibrary,
    pub agent: Agent,
    pub discriminator: Discriminator,
    learner: PpoLearner,
    replay: ReplayBuffer,
    envs: Vec<Episode>,
    rng: ChaCha8Rng,
    iteration: u64,
    env_steps: u64,
    running_return: Vec<f64>,
    running_length: Vec<u64>,
    last_episode: (f64, f64),
}

impl Trainer {
    pub fn new(config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        let model = config.model()?;
        let settings = Arc::new(config.env_settings(model.clone())?);
        let library = config.clip_library(&model)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(LEARNER_STREAM);
        let agent = Agent::new(settings.obs_dim(), settings.act_dim(), &config.ppo, &mut rng)?;
        let discriminator = Discriminator::new(2 * model.discriminator_dim(), &config.amp, &mut rng)?;
        let envs = (0..config.train.envs)
            .map(|id| Episode::new(settings.clone(), id, config.seed))
            .collect::<Result<Vec<_>>>()?;
        let n = envs.len();
        Ok(Trainer {
            learner: PpoLearner::new(&agent, &config.ppo),
            replay: ReplayBuffer::new(config.amp.policy_capacity),
            config: config.clone(),
            model,
            settings,
            library,
            agent,
            discriminator,
            envs,
            rng,
            iteration: 0,
            env_steps: 0,
            running_return: vec![0.0; n],
            running_length: vec![0; n],
            last_episode: (0.0, 0.0),
        })
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.config.clone(),
            model: self.model.clone(),
            iteration: self.iteration,
            agent: self.agent.clone(),
            discriminator: self.discriminator.clone(),
        }
    }

    /// Collect, train the discriminator, relabel the imitation reward, then
    /// one PPO update.
    pub fn step(&mut self) -> Result<MetricsRow> {
        let cfg = &self.config;
        let mut rollouts = run_parallel(&mut self.envs, &self.agent, cfg.train.steps_per_env)?;

        for r in &rollouts {
            for t in &r.steps {
                self.replay
                    .push(TransitionPair::new(t.disc.0.clone(), t.disc.1.clone())?);
            }
        }
        let mut amp = AmpLosses::default();
        let mut updates = 0.0;
        for _ in 0..cfg.amp.updates_per_iteration {
            if self.replay.len() < cfg.amp.batch_size {
                break;
            }
            let l = amp_update(
                &mut self.discriminator,
                &self.library,
                &self.replay,
                &cfg.amp,
                &mut self.rng,
            )?;
            amp.expert += l.expert;
            amp.policy += l.policy;
            amp.gradient_penalty += l.gradient_penalty;
            amp.total += l.total;
            amp.demo_score += l.demo_score;
            amp.policy_score += l.policy_score;
            updates += 1.0;
        }
        if updates > 0.0 {
            for v in [
                &mut amp.expert,
                &mut amp.policy,
                &mut amp.gradient_penalty,
                &mut amp.total,
                &mut amp.demo_score,
                &mut amp.policy_score,
            ] {
                *v /= updates;
            }
        }

        let (mut reward_sum, mut command_sum, mut imitation_sum, mut count) = (0.0, 0.0, 0.0, 0.0);
        let (mut finished_return, mut finished_length, mut finished) = (0.0, 0.0, 0u64);
        for (e, r) in rollouts.iter_mut().enumerate() {
            for t in &mut r.steps {
                let pair = TransitionPair::new(t.disc.0.clone(), t.disc.1.clone())?;
                let mut terms = t.report.terms;
                terms.imitation = imitation_reward(&self.discriminator, &pair)?;
                t.report = total_reward(terms, &cfg.rewards);
                if !t.report.total.is_finite() {
                    return Err(Error::Numerical(format!("reward is {}", t.report.total)));
                }
                reward_sum += t.report.total;
                command_sum += terms.command;
                imitation_sum += terms.imitation;
                count += 1.0;
                self.running_return[e] += t.report.total;
                self.running_length[e] += 1;
                if t.done() {
                    finished_return += self.running_return[e];
                    finished_length += self.running_length[e] as f64;
                    finished += 1;
                    self.running_return[e] = 0.0;
                    self.running_length[e] = 0;
                }
            }
        }
        if finished > 0 {
            self.last_episode = (finished_return / finished as f64, finished_length / finished as f64);
        }

        let segments: Vec<Segment> = rollouts.iter().map(Segment::from_rollout).collect();
        let batch = RolloutBatch::new(&self.agent, &segments, &cfg.ppo)?;
        let ppo = self.learner.update(&mut self.agent, &batch, &cfg.ppo, &mut self.rng)?;
        if self.agent.normalize_observations {
            let obs: Vec<&[f64]> = rollouts
                .iter()
                .flat_map(|r: &EnvRollout| r.steps.iter().map(|t| t.observation.as_slice()))
                .collect();
            self.agent.obs_norm.update(&obs)?;
        }
        if !self.agent.is_finite() {
            return Err(Error::Numerical("agent parameters became non-finite".into()));
        }

        self.iteration += 1;
        self.env_steps += count as u64;
        Ok(MetricsRow {
            iteration: self.iteration,
            env_steps: self.env_steps,
            episodes: finished,
            mean_return: self.last_episode.0,
            mean_episode_length: self.last_episode.1,
            mean_reward: reward_sum / count,
            command_reward: command_sum / count,
            imitation_reward: imitation_sum / count,
            amp,
            ppo,
            mean_log_std: self.agent.log_std.iter().sum::<f64>() / self.agent.log_std.len() as f64,
        })
    }
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub metrics: Vec<MetricsRow>,
    pub initial: Checkpoint,
    pub last: Checkpoint,
}

/// Runs `config.train.iterations` iterations. With `out`, writes
/// `metrics.csv`, `checkpoint_initial.bin`, periodic
/// `checkpoint_<iteration>.bin` and `checkpoint_final.bin` there.
pub fn train(config: &TrainConfig, out: Option<&Path>, mut on_row: impl FnMut(&MetricsRow)) -> Result<TrainSummary> {
    let mut trainer = Trainer::new(config)?;
    let initial = trainer.checkpoint();
    let mut csv = match out {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            initial.save(&dir.join("checkpoint_initial.bin"))?;
            let mut w = BufWriter::new(File::create(dir.join("metrics.csv"))?);
            writeln!(w, "{METRICS_HEADER}")?;
            Some(w)
        }
        None => None,
    };
    let mut metrics = Vec::with_capacity(config.train.iterations);
    for _ in 0..config.train.iterations {
        let row = trainer.step()?;
        if let Some(w) = csv.as_mut() {
            writeln!(w, "{}", row.to_csv_line())?;
            w.flush()?;
        }
        let every = config.train.checkpoint_every as u64;
        if let (Some(dir), true) = (out, every > 0 && row.iteration % every == 0) {
            trainer
                .checkpoint()
                .save(&dir.join(format!("checkpoint_{:06}.bin", row.iteration)))?;
        }
        on_row(&row);
        metrics.push(row);
    }
    let last = trainer.checkpoint();
    if let Some(dir) = out {
        last.save(&dir.join("checkpoint_final.bin"))?;
    }
    Ok(TrainSummary { metrics, initial, last })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub env: usize,
    pub step: usize,
    pub time: f64,
    pub root_x: f64,
    pub root_z: f64,
    pub root_pitch: f64,
    pub root_vx: f64,
    pub command_vx: f64,
    pub command_reward: f64,
    /// Total reward without the imitation term.
    pub total_reward: f64,
    pub joints: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    /// Sum of command reward over every environment and step, divided by
    /// `envs · steps`. Steps after a fall count as zero.
    pub mean_command_reward: f64,
    /// Fraction of the horizon survived, averaged over environments.
    pub survival: f64,
    pub falls: usize,
}

impl EvalReport {
    pub fn csv_header(joints: usize) -> String {
        let mut h =
            String::from("env,step,time,root_x,root_z,root_pitch,root_vx,command_vx,command_reward,total_reward");
        for j in 0..joints {
            h.push_str(&format!(",q{j}"));
        }
        h
    }

    pub fn to_csv(&self, joints: usize) -> String {
        let mut s = Self::csv_header(joints);
        s.push('\n');
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{}",
                r.env,
                r.step,
                r.time,
                r.root_x,
                r.root_z,
                r.root_pitch,
                r.root_vx,
                r.command_vx,
                r.command_reward,
                r.total_reward
            ));
            for q in &r.joints {
                s.push_str(&format!(",{q}"));
            }
            s.push('\n');
        }
        s
    }
}

/// Runs `envs` fresh episodes for up to `steps` control steps each, without
/// resets. Deterministic in `seed`.
pub fn evaluate(
    agent: &Agent,
    settings: Arc<EnvSettings>,
    envs: usize,
    steps: usize,
    seed: u64,
    deterministic: bool,
) -> Result<EvalReport> {
    if envs == 0 || steps == 0 {
        return Err(Error::Config(
            "evaluation needs at least one environment and one step".into(),
        ));
    }
    let det = Deterministic(agent);
    let policy: &dyn ActionSource = if deterministic { &det } else { agent };
    let mut rows = Vec::new();
    let (mut total, mut survived, mut falls) = (0.0, 0.0, 0);
    for e in 0..envs {
        let mut env = Episode::new(settings.clone(), e, seed)?;
        for _ in 0..steps {
            let obs = env.observation().0.clone();
            let (action, _, _) = policy.act(&obs, env.policy_rng())?;
            let o = env.step(&action)?;
            let cmd = command_reward(o.info.velocity, &env.command(), &settings.rewards);
            total += cmd;
            survived += 1.0;
            let s = env.state();
            rows.push(EvalRow {
                env: e,
                step: o.info.step,
                time: s.time,
                root_x: s.root_position[0],
                root_z: s.root_position[1],
                root_pitch: s.root_pitch,
                root_vx: s.root_velocity[0],
                command_vx: env.command().forward,
                command_reward: cmd,
                total_reward: o.report.total,
                joints: s.joint_positions.clone(),
            });
            if o.done() {
                falls += o.terminated as usize;
                break;
            }
        }
    }
    let denom = (envs * steps) as f64;
    Ok(EvalReport {
        rows,
        mean_command_reward: total / denom,
        survival: survived / denom,
        falls,
    })
}
