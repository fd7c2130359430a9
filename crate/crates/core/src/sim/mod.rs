//! Planar biped environment: PD actuation, contact, episode logic, domain
//! randomization and the parallel rollout collector.

pub mod crossval;
pub mod dynamics;
pub mod randomize;

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use dynamics::{ContactParams, Drive, Integrator, Kinematics};
pub use randomize::{randomize, DisturbanceSchedule, RandomizationRanges, RandomizedModel};

use crate::gait::{GaitClock, GaitParams};
use crate::model::{
    assemble_discriminator_observation, assemble_observation, Action, Command, DiscriminatorObservation, FootContact,
    ObservationLayout, ObservationNoise, PolicyObservation, RobotModel, SimState,
};
use crate::rewards::{
    command_reward, foot_speed_reward, height_difference_reward, periodic_reward, regularization_rewards,
    symmetry_reward, total_reward, FootKinematics, RewardReport, RewardTerms, RewardWeights, SymmetryMemory,
};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// Physics timestep, s.
    pub dt: f64,
    /// Physics steps per control step.
    pub decimation: usize,
    pub integrator: Integrator,
    pub contact: ContactParams,
    /// s
    pub episode_length: f64,
    /// Fall when root height drops below this fraction of the nominal height.
    pub min_height_fraction: f64,
    /// Fall when |pitch| exceeds this, rad.
    pub max_pitch: f64,
    /// Hold the floating base fixed (joints only).
    pub pinned_base: bool,
    /// Action components are clamped to ±this, rad.
    pub action_scale: f64,
    /// Forward command is drawn uniformly from this range at each reset, m/s.
    pub command_range: [f64; 2],
    /// Uniform half-width of the joint-angle perturbation at reset, rad.
    pub reset_joint_noise: f64,
    /// Apply domain randomization at each reset.
    pub randomize: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            dt: 1e-3,
            decimation: 10,
            integrator: Integrator::SemiImplicitEuler,
            contact: ContactParams::default(),
            episode_length: 20.0,
            min_height_fraction: 0.6,
            max_pitch: 1.0,
            pinned_base: false,
            action_scale: 0.5,
            command_range: [0.0, 1.0],
            reset_joint_noise: 0.05,
            randomize: true,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err("sim.dt must be > 0".into());
        }
        if self.decimation < 1 {
            return Err("sim.decimation must be >= 1".into());
        }
        let c = &self.contact;
        if [c.stiffness, c.damping, c.friction, c.tangential_damping]
            .iter()
            .any(|v| !(v.is_finite() && *v >= 0.0))
        {
            return Err("contact parameters must be finite and >= 0".into());
        }
        if !(self.episode_length > self.control_dt()) {
            return Err("sim.episode_length must exceed one control step".into());
        }
        if !(self.max_pitch > 0.0 && self.min_height_fraction >= 0.0 && self.action_scale > 0.0) {
            return Err("termination thresholds and action scale must be positive".into());
        }
        let [lo, hi] = self.command_range;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err("sim.command_range needs finite low <= high".into());
        }
        if !(self.reset_joint_noise >= 0.0) {
            return Err("sim.reset_joint_noise must be >= 0".into());
        }
        Ok(())
    }

    pub fn control_dt(&self) -> f64 {
        self.dt * self.decimation as f64
    }

    pub fn max_steps(&self) -> usize {
        (self.episode_length / self.control_dt()).round() as usize
    }
}

/// Everything an episode needs that is shared read-only between workers.
#[derive(Debug, Clone)]
pub struct EnvSettings {
    pub model: RobotModel,
    pub sim: SimConfig,
    pub ranges: RandomizationRanges,
    pub gait: GaitParams,
    pub rewards: RewardWeights,
    pub noise: ObservationNoise,
    noise_scale: Vec<f64>,
}

impl EnvSettings {
    pub fn new(
        model: RobotModel,
        sim: SimConfig,
        ranges: RandomizationRanges,
        gait: GaitParams,
        rewards: RewardWeights,
        noise: ObservationNoise,
    ) -> Result<Self> {
        sim.validate().map_err(Error::Config)?;
        ranges.validate().map_err(Error::Config)?;
        rewards.validate().map_err(Error::Config)?;
        GaitClock::new(0.0, gait.clone()).map_err(|e| Error::Config(e.to_string()))?;
        let noise_scale = noise.per_channel(&ObservationLayout::new(&model));
        Ok(EnvSettings {
            model,
            sim,
            ranges,
            gait,
            rewards,
            noise,
            noise_scale,
        })
    }

    pub fn obs_dim(&self) -> usize {
        ObservationLayout::new(&self.model).dim()
    }

    pub fn act_dim(&self) -> usize {
        self.model.joint_count()
    }
}

/// World velocity of each foot's sole point.
pub fn foot_velocities(model: &RobotModel, state: &SimState) -> [[f64; 2]; 2] {
    let q = state.generalized_positions();
    let v = state.generalized_velocities();
    let k = Kinematics::new(model, &q, &v);
    let mut out = [[0.0; 2]; 2];
    for (i, foot) in model.feet.iter().enumerate() {
        let link = model.foot_link(i);
        out[i] = k.point_velocity(link, k.point(link, foot.sole));
    }
    out
}

/// Per-foot ground reaction of `state`.
pub fn contact_forces(state: &SimState, model: &RobotModel, config: &SimConfig) -> [FootContact; 2] {
    let q = state.generalized_positions();
    let v = state.generalized_velocities();
    dynamics::foot_contacts(model, &Kinematics::new(model, &q, &v), &config.contact)
}

/// PD torque toward `targets`, scaled by motor strength and clamped to the
/// joint torque limits.
pub fn pd_torques(model: &RobotModel, targets: &[f64], q: &[f64], qd: &[f64], strength: &[f64]) -> Vec<f64> {
    model
        .joints
        .iter()
        .enumerate()
        .map(|(j, joint)| {
            let tau = joint.stiffness * (targets[j] - q[j]) - joint.damping * qd[j];
            (tau * strength[j]).clamp(-joint.torque_limit, joint.torque_limit)
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct StepInfo {
    /// Torques applied on the last physics substep.
    pub torques: Vec<f64>,
    /// (forward, lateral, yaw rate) actually achieved.
    pub velocity: [f64; 3],
    /// Step counter after this step.
    pub step: usize,
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub observation: PolicyObservation,
    pub report: RewardReport,
    /// Fell over.
    pub terminated: bool,
    /// Reached the episode length.
    pub timeout: bool,
    /// Discriminator features before and after the step.
    pub transition: (DiscriminatorObservation, DiscriminatorObservation),
    pub info: StepInfo,
}

impl StepOutcome {
    pub fn done(&self) -> bool {
        self.terminated || self.timeout
    }
}

/// One environment instance. Owns its RNG streams; never shares mutable
/// state with other episodes.
#[derive(Debug, Clone)]
pub struct Episode {
    settings: Arc<EnvSettings>,
    id: usize,
    rng: ChaCha8Rng,
    policy_rng: ChaCha8Rng,
    randomized: RandomizedModel,
    state: SimState,
    clock: GaitClock,
    command: Command,
    prev_action: Action,
    memory: SymmetryMemory,
    observation: PolicyObservation,
    nominal_height: f64,
    step: usize,
    resets: u64,
    done: bool,
}

impl Episode {
    /// Creates and resets environment `id` with RNG streams derived from
    /// `(seed, id)`.
    pub fn new(settings: Arc<EnvSettings>, id: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(2 * id as u64);
        let mut policy_rng = ChaCha8Rng::seed_from_u64(seed);
        policy_rng.set_stream(2 * id as u64 + 1);
        let model = settings.model.clone();
        let nominal_height = model.standing_height(&model.default_pose());
        let n = model.joint_count();
        let mut ep = Episode {
            randomized: randomize(&model, &RandomizationRanges::disabled(), settings.sim.episode_length, 0),
            state: SimState::standing(&model),
            clock: GaitClock::new(0.0, settings.gait.clone())?,
            command: Command::default(),
            prev_action: Action::zeros(n),
            memory: SymmetryMemory::default(),
            observation: PolicyObservation(Vec::new()),
            nominal_height,
            settings,
            id,
            rng,
            policy_rng,
            step: 0,
            resets: 0,
            done: false,
        };
        ep.reset()?;
        Ok(ep)
    }

    /// Fresh randomization, command, gait phase and standing state.
    pub fn reset(&mut self) -> Result<PolicyObservation> {
        let s = self.settings.clone();
        let draw_seed: u64 = self.rng.gen();
        let ranges = if s.sim.randomize {
            s.ranges.clone()
        } else {
            RandomizationRanges::disabled()
        };
        self.randomized = randomize(&s.model, &ranges, s.sim.episode_length, draw_seed);

        let [lo, hi] = s.sim.command_range;
        self.command = Command::forward(if lo == hi { lo } else { self.rng.gen_range(lo..=hi) });
        self.clock = GaitClock::new(self.rng.gen_range(0.0..1.0), s.gait.clone())?;

        let model = &self.randomized.model;
        let mut state = SimState::standing(model);
        let eps = s.sim.reset_joint_noise;
        if eps > 0.0 {
            for q in state.joint_positions.iter_mut() {
                *q += self.rng.gen_range(-eps..=eps);
            }
        }
        state.contacts = contact_forces(&state, model, &s.sim);
        self.state = state;
        self.prev_action = Action::zeros(model.joint_count());
        self.memory = SymmetryMemory::default();
        self.step = 0;
        self.done = false;
        self.resets += 1;
        self.observation = self.observe()?;
        Ok(self.observation.clone())
    }

    fn observe(&mut self) -> Result<PolicyObservation> {
        let s = &self.settings;
        assemble_observation(
            &self.randomized.model,
            &self.state,
            &self.command,
            &self.clock,
            &self.prev_action,
            &s.noise_scale,
            self.randomized.lin_vel_multiplier,
            &mut self.rng,
        )
    }

    /// Advances one control step.
    pub fn step(&mut self, action: &Action) -> Result<StepOutcome> {
        if self.done {
            return Err(Error::EpisodeDone);
        }
        let s = self.settings.clone();
        let cfg = &s.sim;
        let model = &self.randomized.model;
        let n = model.joint_count();
        if action.0.len() != n {
            return Err(Error::dim("action", n, action.0.len()));
        }
        let action = action.clamped(cfg.action_scale)?;
        let targets: Vec<f64> = model.joints.iter().zip(&action.0).map(|(j, a)| j.default + a).collect();

        let before = assemble_discriminator_observation(&self.state, model);
        let qd_before = self.state.joint_velocities.clone();
        let mut q = self.state.generalized_positions();
        let mut v = self.state.generalized_velocities();
        let mut t = self.state.time;
        let mut torques = vec![0.0; n];
        for _ in 0..cfg.decimation {
            if !cfg.pinned_base {
                v[0] += self.randomized.schedule.impulse_in(t, cfg.dt);
            }
            torques = pd_torques(model, &targets, &q[3..], &v[3..], &self.randomized.motor_strength);
            let drive = Drive {
                torques: &torques,
                external_force: if cfg.pinned_base {
                    0.0
                } else {
                    self.randomized.schedule.force_at(t)
                },
                pinned_base: cfg.pinned_base,
            };
            dynamics::integrate(model, &cfg.contact, &mut q, &mut v, &drive, cfg.dt, cfg.integrator)?;
            t += cfg.dt;
        }
        self.state.set_generalized(&q, &v);
        self.state.time = t;
        self.state.contacts = contact_forces(&self.state, model, cfg);
        let ctrl_dt = cfg.control_dt();
        let joint_acc: Vec<f64> = self
            .state
            .joint_velocities
            .iter()
            .zip(&qd_before)
            .map(|(a, b)| (a - b) / ctrl_dt)
            .collect();
        self.clock = self.clock.advance(ctrl_dt)?;
        self.step += 1;

        let velocity = [self.state.root_velocity[0], 0.0, 0.0];
        let feet = FootKinematics::from_state(model, &self.state);
        let w = &s.rewards;
        let (symmetry, memory) = symmetry_reward(&feet, &self.clock, &self.memory, w);
        self.memory = memory;
        let terms = RewardTerms {
            imitation: 0.0,
            command: command_reward(velocity, &self.command, w),
            periodic: periodic_reward(&feet, &self.clock, w),
            foot_speed: foot_speed_reward(&self.clock, feet.speed, w),
            height_difference: height_difference_reward(&self.clock, feet.height, w),
            symmetry,
            regularization: regularization_rewards(
                &self.state,
                &joint_acc,
                &action,
                &self.prev_action,
                &torques,
                model,
                w,
            ),
        };
        let report = total_reward(terms, w);

        let terminated = self.state.root_position[1] < cfg.min_height_fraction * self.nominal_height
            || self.state.root_pitch.abs() > cfg.max_pitch;
        let timeout = !terminated && self.step >= cfg.max_steps();
        self.done = terminated || timeout;
        self.prev_action = action;
        let after = assemble_discriminator_observation(&self.state, model);
        self.observation = self.observe()?;

        Ok(StepOutcome {
            observation: self.observation.clone(),
            report,
            terminated,
            timeout,
            transition: (before, after),
            info: StepInfo {
                torques,
                velocity,
                step: self.step,
            },
        })
    }

    pub fn id(&self) -> usize {
        self.id
    }
    pub fn settings(&self) -> &Arc<EnvSettings> {
        &self.settings
    }
    pub fn state(&self) -> &SimState {
        &self.state
    }
    /// Replaces the physics state; contacts are recomputed.
    pub fn set_state(&mut self, mut state: SimState) -> Result<()> {
        state.check(&self.randomized.model)?;
        state.contacts = contact_forces(&state, &self.randomized.model, &self.settings.sim);
        self.state = state;
        self.observation = self.observe()?;
        Ok(())
    }
    pub fn observation(&self) -> &PolicyObservation {
        &self.observation
    }
    pub fn clock(&self) -> &GaitClock {
        &self.clock
    }
    pub fn command(&self) -> Command {
        self.command
    }
    pub fn set_command(&mut self, command: Command) -> Result<()> {
        self.command = command;
        self.observation = self.observe()?;
        Ok(())
    }
    pub fn memory(&self) -> &SymmetryMemory {
        &self.memory
    }
    pub fn randomized(&self) -> &RandomizedModel {
        &self.randomized
    }
    pub fn step_count(&self) -> usize {
        self.step
    }
    pub fn resets(&self) -> u64 {
        self.resets
    }
    pub fn is_done(&self) -> bool {
        self.done
    }
    pub fn nominal_height(&self) -> f64 {
        self.nominal_height
    }
    pub fn policy_rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.policy_rng
    }
}

/// A frozen policy as seen by rollout workers.
pub trait ActionSource: Sync {
    /// Action, its log-probability and the value estimate of `obs`.
    fn act(&self, obs: &[f64], rng: &mut ChaCha8Rng) -> Result<(Action, f64, f64)>;
    fn value(&self, obs: &[f64]) -> Result<f64>;
}

#[derive(Debug, Clone)]
pub struct Transition {
    pub observation: Vec<f64>,
    pub action: Vec<f64>,
    pub log_prob: f64,
    pub value: f64,
    pub report: RewardReport,
    pub terminated: bool,
    pub timeout: bool,
    /// Value of the pre-reset observation on timeout, else 0.
    pub timeout_value: f64,
    pub command_velocity: [f64; 3],
    pub disc: (DiscriminatorObservation, DiscriminatorObservation),
}

impl Transition {
    pub fn done(&self) -> bool {
        self.terminated || self.timeout
    }
}

#[derive(Debug, Clone)]
pub struct EnvRollout {
    pub steps: Vec<Transition>,
    /// Value of the observation following the last step (0 if it ended the
    /// episode).
    pub last_value: f64,
}

/// Runs `steps` control steps of one environment under `policy`,
/// auto-resetting finished episodes.
pub fn rollout_env(env: &mut Episode, policy: &dyn ActionSource, steps: usize) -> Result<EnvRollout> {
    let mut out = Vec::with_capacity(steps);
    for _ in 0..steps {
        let obs = env.observation().0.clone();
        let (action, log_prob, value) = policy.act(&obs, env.policy_rng())?;
        let o = env.step(&action)?;
        let timeout_value = if o.timeout {
            policy.value(&o.observation.0)?
        } else {
            0.0
        };
        let done = o.done();
        out.push(Transition {
            observation: obs,
            action: action.0,
            log_prob,
            value,
            report: o.report,
            terminated: o.terminated,
            timeout: o.timeout,
            timeout_value,
            command_velocity: o.info.velocity,
            disc: o.transition,
        });
        if done {
            env.reset()?;
        }
    }
    let last_value = match out.last() {
        Some(t) if t.done() => 0.0,
        _ => policy.value(&env.observation().0)?,
    };
    Ok(EnvRollout { steps: out, last_value })
}

/// Steps every environment with the same frozen policy. Results are in
/// environment order regardless of scheduling.
pub fn run_parallel(envs: &mut [Episode], policy: &dyn ActionSource, steps: usize) -> Result<Vec<EnvRollout>> {
    if envs.is_empty() {
        return Err(Error::Config("at least one environment is required".into()));
    }
    envs.par_iter_mut().map(|env| rollout_env(env, policy, steps)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::build_default_model;

    fn settings(sim: SimConfig) -> Arc<EnvSettings> {
        Arc::new(
            EnvSettings::new(
                build_default_model(),
                sim,
                RandomizationRanges::default(),
                GaitParams::default(),
                RewardWeights::default(),
                ObservationNoise::default(),
            )
            .unwrap(),
        )
    }

    #[test]
    fn pinned_rest_pose_without_gravity_stays_put() {
        let mut model = build_default_model();
        model.gravity = 0.0;
        let sim = SimConfig {
            pinned_base: true,
            randomize: false,
            reset_joint_noise: 0.0,
            ..Default::default()
        };
        let s = Arc::new(
            EnvSettings::new(
                model,
                sim,
                RandomizationRanges::disabled(),
                GaitParams::default(),
                RewardWeights::default(),
                ObservationNoise::zero(),
            )
            .unwrap(),
        );
        let mut ep = Episode::new(s, 0, 1).unwrap();
        let mut st = ep.state().clone();
        st.root_position[1] = 2.0;
        ep.set_state(st.clone()).unwrap();
        for _ in 0..20 {
            ep.step(&Action::zeros(6)).unwrap();
        }
        assert_eq!(ep.state().joint_positions, st.joint_positions);
        assert_eq!(ep.state().root_position, st.root_position);
    }

    #[test]
    fn torques_respect_limits() {
        let model = build_default_model();
        let q = vec![3.0; 6];
        let qd = vec![-50.0; 6];
        let tau = pd_torques(&model, &model.default_pose(), &q, &qd, &[1.4; 6]);
        for (t, j) in tau.iter().zip(&model.joints) {
            assert!(t.abs() <= j.torque_limit);
        }
    }

    #[test]
    fn stepping_a_finished_episode_fails() {
        let sim = SimConfig {
            episode_length: 0.05,
            ..Default::default()
        };
        let mut ep = Episode::new(settings(sim), 0, 1).unwrap();
        let mut done = false;
        for _ in 0..5 {
            done = ep.step(&Action::zeros(6)).unwrap().done();
        }
        assert!(done);
        assert!(matches!(ep.step(&Action::zeros(6)), Err(Error::EpisodeDone)));
        ep.reset().unwrap();
        assert_eq!(ep.memory(), &SymmetryMemory::default());
        assert!(ep.step(&Action::zeros(6)).is_ok());
    }

    #[test]
    fn contact_force_zero_above_ground() {
        let model = build_default_model();
        let mut st = SimState::standing(&model);
        st.root_position[1] += 0.01;
        let f = contact_forces(&st, &model, &SimConfig::default());
        assert_eq!(f, [FootContact::default(); 2]);
    }

    #[test]
    fn action_dimension_checked() {
        let mut ep = Episode::new(settings(SimConfig::default()), 0, 1).unwrap();
        assert!(matches!(ep.step(&Action::zeros(3)), Err(Error::Dimension { .. })));
        assert!(ep.step(&Action(vec![f64::NAN; 6])).unwrap_err().is_numerical());
    }
}
