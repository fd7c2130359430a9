//! Reward terms: command tracking, periodic gait, swing shaping,
//! regularization, and their weighted combination.
//!
//! Every function here is pure except [`symmetry_reward`], which threads an
//! explicit [`SymmetryMemory`] value.

use serde::{Deserialize, Serialize};

use crate::gait::{swing_progress, GaitClock};
use crate::model::{Action, Command, JointGroup, RobotModel, SimState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardWeights {
    /// λ for (x, y, yaw)
    pub command_weight: [f64; 3],
    /// ω for (x, y, yaw)
    pub command_sharpness: [f64; 3],
    pub alpha_stance: f64,
    pub alpha_swing: f64,
    pub foot_speed_scale: f64,
    pub height_scale: f64,
    pub height_sharpness: f64,
    /// Target clearance of the swing foot over the stance foot, m.
    pub height_target: f64,
    pub symmetry_scale: f64,
    pub symmetry_sharpness: f64,
    pub imitation: f64,
    pub command: f64,
    pub periodic: f64,
    pub regularization: RegularizationScales,
    /// Use the literal forms of the DoF-limit row (signed min/max
    /// composition) and the arm row (exp(+‖b_arm‖₁)) instead of the
    /// penalty readings.
    pub literal_table2: bool,
}

impl Default for RewardWeights {
    fn default() -> Self {
        RewardWeights {
            command_weight: [1.0, 0.5, 0.5],
            command_sharpness: [4.0, 4.0, 4.0],
            alpha_stance: 0.5,
            alpha_swing: 0.5,
            foot_speed_scale: 16.0,
            height_scale: 2.0,
            height_sharpness: 25.0,
            height_target: 0.02,
            symmetry_scale: 3.3,
            symmetry_sharpness: 10.0,
            imitation: 0.5,
            command: 0.5,
            periodic: 0.5,
            regularization: RegularizationScales::default(),
            literal_table2: false,
        }
    }
}

/// Mixing scale of each regularization row in the total reward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegularizationScales {
    pub action_rate: f64,
    pub dof_limits: f64,
    pub dof_velocity: f64,
    pub dof_acceleration: f64,
    pub arm_dof: f64,
    pub orientation: f64,
    pub torso_yaw: f64,
    pub torques: f64,
}

impl Default for RegularizationScales {
    fn default() -> Self {
        RegularizationScales {
            action_rate: 0.05,
            dof_limits: 0.05,
            dof_velocity: 0.02,
            dof_acceleration: 0.02,
            arm_dof: 0.0,
            orientation: 0.1,
            // the row is a raw magnitude, so it enters with a negative scale
            torso_yaw: -0.1,
            torques: 0.05,
        }
    }
}

impl RewardWeights {
    pub fn validate(&self) -> Result<(), String> {
        let sharp = self
            .command_sharpness
            .iter()
            .chain([&self.height_sharpness, &self.symmetry_sharpness]);
        if sharp.clone().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err("reward sharpness parameters must be finite and >= 0".into());
        }
        let r = &self.regularization;
        let all = self.command_weight.iter().chain([
            &self.alpha_stance,
            &self.alpha_swing,
            &self.foot_speed_scale,
            &self.height_scale,
            &self.height_target,
            &self.symmetry_scale,
            &self.imitation,
            &self.command,
            &self.periodic,
            &r.action_rate,
            &r.dof_limits,
            &r.dof_velocity,
            &r.dof_acceleration,
            &r.arm_dof,
            &r.orientation,
            &r.torso_yaw,
            &r.torques,
        ]);
        if all.into_iter().any(|w| !w.is_finite()) {
            return Err("reward weights must be finite".into());
        }
        Ok(())
    }
}

/// `Σ λ_i exp(−ω_i |v_des_i − v_i|)` over forward, lateral and yaw.
pub fn command_reward(actual: [f64; 3], desired: &Command, w: &RewardWeights) -> f64 {
    desired
        .as_array()
        .iter()
        .zip(actual)
        .zip(w.command_weight.iter().zip(&w.command_sharpness))
        .map(|((des, act), (lambda, omega))| lambda * (-omega * (des - act).abs()).exp())
        .sum()
}

/// Per-foot quantities consumed by the gait rewards. Index 0 is the left leg.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FootKinematics {
    /// Contact-force norm, N.
    pub force: [f64; 2],
    /// Foot-frame speed, m/s.
    pub speed: [f64; 2],
    /// Foot-frame world height, m.
    pub height: [f64; 2],
    /// Foot-frame world position (x, z), m.
    pub position: [[f64; 2]; 2],
}

impl FootKinematics {
    pub fn from_state(model: &RobotModel, state: &SimState) -> Self {
        let frames = model.link_frames(state.root_position, state.root_pitch, &state.joint_positions);
        let v = crate::sim::foot_velocities(model, state);
        let mut k = FootKinematics::default();
        for (i, foot) in model.feet.iter().enumerate() {
            let p = model.point_on(&frames, model.foot_link(i), foot.sole);
            k.position[i] = p;
            k.height[i] = p[1];
            k.speed[i] = v[i][0].hypot(v[i][1]);
            k.force[i] = state.contacts[i].norm();
        }
        k
    }
}

/// Periodic stance/swing reward summed over both feet.
pub fn periodic_reward(feet: &FootKinematics, clock: &GaitClock, w: &RewardWeights) -> f64 {
    (0..2)
        .map(|i| {
            let q = clock.leg_expectation(i).stance;
            let stance = (-10.0 * feet.force[i].powi(2)).exp();
            let swing = (-200.0 * feet.speed[i].powi(2)).exp();
            w.alpha_stance * q * stance + w.alpha_swing * (1.0 - q) * swing
        })
        .sum()
}

pub fn foot_speed_reward(clock: &GaitClock, foot_speeds: [f64; 2], w: &RewardWeights) -> f64 {
    (0..2)
        .map(|i| {
            let progress = swing_progress(clock.phase(), clock.offset(i), clock.swing_ratio());
            let q = (progress - 0.5).clamp(0.0, 1.0);
            if q <= 0.6 {
                w.foot_speed_scale * (q * foot_speeds[i]).powi(2)
            } else {
                0.0
            }
        })
        .sum()
}

pub fn height_difference_reward(clock: &GaitClock, foot_heights: [f64; 2], w: &RewardWeights) -> f64 {
    (0..2)
        .map(|i| {
            let q = swing_progress(clock.phase(), clock.offset(i), clock.swing_ratio());
            if (0.0..=0.3).contains(&q) {
                let dh = foot_heights[i] - foot_heights[1 - i] - w.height_target;
                w.height_scale * (-w.height_sharpness * dh.abs()).exp()
            } else {
                0.0
            }
        })
        .sum()
}

/// Stored and lagged foot-separation vectors of the symmetry reward.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SymmetryMemory {
    pub stored: [f64; 2],
    pub lagged: [f64; 2],
}

/// Symmetry reward on the left–right foot separation `d`.
///
/// With `tf` true (both legs past half stance) the update sets the lagged
/// separation to `d` itself, so the reward sees `‖2d‖₁`.
pub fn symmetry_reward(
    feet: &FootKinematics,
    clock: &GaitClock,
    mem: &SymmetryMemory,
    w: &RewardWeights,
) -> (f64, SymmetryMemory) {
    let d = [
        feet.position[0][0] - feet.position[1][0],
        feet.position[0][1] - feet.position[1][1],
    ];
    let q1 = clock.leg_expectation(0).stance;
    let q2 = clock.leg_expectation(1).stance;
    let tf = if q1 > 0.5 && q2 > 0.5 { 1.0 } else { 0.0 };
    let mut next = SymmetryMemory::default();
    for k in 0..2 {
        next.stored[k] = tf * d[k] + (1.0 - tf) * mem.stored[k];
        next.lagged[k] = (1.0 - tf) * next.stored[k] + tf * d[k];
    }
    let l1: f64 = (0..2).map(|k| (d[k] + next.lagged[k]).abs()).sum();
    let r = w.symmetry_scale * tf * (-w.symmetry_sharpness * l1).exp();
    (r, next)
}

/// Unweighted regularization rows.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RegularizationTerms {
    pub action_rate: f64,
    pub dof_limits: f64,
    pub dof_velocity: f64,
    pub dof_acceleration: f64,
    pub arm_dof: f64,
    pub orientation: f64,
    pub torso_yaw: f64,
    pub torques: f64,
}

fn norm2(v: impl Iterator<Item = f64>) -> f64 {
    v.map(|x| x * x).sum::<f64>().sqrt()
}

/// Regularization rows. `joint_accelerations` are finite differences of
/// consecutive joint velocities over the control step.
pub fn regularization_rewards(
    state: &SimState,
    joint_accelerations: &[f64],
    action: &Action,
    prev_action: &Action,
    torques: &[f64],
    model: &RobotModel,
    w: &RewardWeights,
) -> RegularizationTerms {
    let q = &state.joint_positions;
    let action_rate = (-0.05 * norm2(action.0.iter().zip(&prev_action.0).map(|(a, b)| a - b))).exp();

    let limit_arg: f64 = if w.literal_table2 {
        q.iter()
            .zip(&model.joints)
            .map(|(b, j)| (b - j.upper).min(0.0) - (b - j.lower).max(0.0))
            .sum()
    } else {
        q.iter()
            .zip(&model.joints)
            .map(|(b, j)| (b - j.upper).max(0.0) + (j.lower - b).max(0.0))
            .sum()
    };
    let dof_limits = (-2.0 * limit_arg).exp();

    let dof_velocity = (-1e-4 * state.joint_velocities.iter().map(|v| v * v).sum::<f64>()).exp();
    let dof_acceleration = (-1e-7 * joint_accelerations.iter().map(|a| a * a).sum::<f64>()).exp();

    let group_l1 = |g: JointGroup| -> f64 {
        q.iter()
            .zip(&model.joints)
            .filter(|(_, j)| j.group == g)
            .map(|(b, _)| b.abs())
            .sum()
    };
    let arm = group_l1(JointGroup::Arm);
    let arm_dof = if w.literal_table2 { arm.exp() } else { (-arm).exp() };

    // planar: roll is identically zero
    let orientation = (-300.0 * state.root_pitch.powi(2)).exp();
    let torso_yaw = group_l1(JointGroup::TorsoYaw);
    let torques = (-5e-4 * norm2(torques.iter().copied())).exp();

    RegularizationTerms {
        action_rate,
        dof_limits,
        dof_velocity,
        dof_acceleration,
        arm_dof,
        orientation,
        torso_yaw,
        torques,
    }
}

/// All unweighted terms of one timestep.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RewardTerms {
    pub imitation: f64,
    pub command: f64,
    pub periodic: f64,
    pub foot_speed: f64,
    pub height_difference: f64,
    pub symmetry: f64,
    pub regularization: RegularizationTerms,
}

pub const TERM_NAMES: [&str; 14] = [
    "imitation",
    "command",
    "periodic",
    "foot_speed",
    "height_difference",
    "symmetry",
    "action_rate",
    "dof_limits",
    "dof_velocity",
    "dof_acceleration",
    "arm_dof",
    "orientation",
    "torso_yaw",
    "torques",
];

impl RewardTerms {
    pub fn to_array(&self) -> [f64; 14] {
        let r = &self.regularization;
        [
            self.imitation,
            self.command,
            self.periodic,
            self.foot_speed,
            self.height_difference,
            self.symmetry,
            r.action_rate,
            r.dof_limits,
            r.dof_velocity,
            r.dof_acceleration,
            r.arm_dof,
            r.orientation,
            r.torso_yaw,
            r.torques,
        ]
    }
}

impl RewardWeights {
    /// Mixing weight of each term, aligned with [`TERM_NAMES`].
    pub fn mixing(&self) -> [f64; 14] {
        let r = &self.regularization;
        [
            self.imitation,
            self.command,
            self.periodic,
            self.periodic,
            self.periodic,
            self.periodic,
            r.action_rate,
            r.dof_limits,
            r.dof_velocity,
            r.dof_acceleration,
            r.arm_dof,
            r.orientation,
            r.torso_yaw,
            r.torques,
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RewardReport {
    pub terms: RewardTerms,
    pub weighted: [f64; 14],
    pub total: f64,
}

pub fn total_reward(terms: RewardTerms, w: &RewardWeights) -> RewardReport {
    let mut weighted = [0.0; 14];
    for ((out, t), m) in weighted.iter_mut().zip(terms.to_array()).zip(w.mixing()) {
        *out = t * m;
    }
    RewardReport {
        terms,
        weighted,
        total: weighted.iter().sum(),
    }
}
