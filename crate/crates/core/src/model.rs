//! Robot description, physics state and the vector layouts shared by the
//! simulator, the reward functions, the discriminator and the policy.
//!
//! Everything is planar (sagittal x–z plane). Angles are counter-clockwise in
//! the x–z plane, so a positive pitch lifts the body's forward axis and a
//! positive hip angle swings the leg forward. Each link frame has its origin
//! at the joint connecting it to its parent; legs hang along the frame's −z.

use std::collections::HashMap;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::gait::GaitClock;
use crate::{Error, Result};

pub const MODEL_SCHEMA_VERSION: u32 = 1;

/// Version tag of the policy observation ordering documented on
/// [`ObservationLayout`].
pub const OBSERVATION_LAYOUT_VERSION: &str = "planar-v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Link {
    pub name: String,
    /// kg
    pub mass: f64,
    /// m
    pub length: f64,
    /// Center of mass in the link frame, m.
    pub com: [f64; 2],
    /// Rotational inertia about the center of mass, kg·m².
    pub inertia: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum JointGroup {
    #[default]
    Leg,
    Arm,
    TorsoYaw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Joint {
    pub name: String,
    pub parent: String,
    pub child: String,
    /// Joint location in the parent link frame, m.
    pub origin: [f64; 2],
    /// rad
    pub lower: f64,
    /// rad
    pub upper: f64,
    /// rad/s
    pub velocity_limit: f64,
    /// N·m
    pub torque_limit: f64,
    /// PD stiffness, N·m/rad
    pub stiffness: f64,
    /// PD damping, N·m·s/rad
    pub damping: f64,
    /// Reflected rotor inertia added to the joint's diagonal, kg·m².
    #[serde(default)]
    pub armature: f64,
    /// Passive viscous joint friction, N·m·s/rad.
    #[serde(default)]
    pub friction: f64,
    /// Nominal standing angle; PD targets are offsets from it.
    #[serde(default)]
    pub default: f64,
    #[serde(default)]
    pub group: JointGroup,
}

/// A foot attached to a link: the sole point is the foot frame position,
/// heel and toe are the two ground-contact points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FootFrame {
    pub name: String,
    pub link: String,
    pub sole: [f64; 2],
    pub heel: [f64; 2],
    pub toe: [f64; 2],
}

/// Extra end-effector tracked by the discriminator (hands on armed models).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndEffector {
    pub name: String,
    pub link: String,
    pub point: [f64; 2],
}

#[derive(Debug, Clone, Default, PartialEq)]
struct Topology {
    root: usize,
    /// Joint whose child is this link (None for the root).
    parent_joint: Vec<Option<usize>>,
    joint_parent: Vec<usize>,
    joint_child: Vec<usize>,
    /// Joints in parent-before-child order.
    order: Vec<usize>,
    /// Per link: ancestor joints from the root outwards.
    chains: Vec<Vec<usize>>,
    foot_links: Vec<usize>,
    hand_links: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotModel {
    pub schema_version: u32,
    pub name: String,
    /// Name of the floating-base link.
    pub root: String,
    /// m/s²
    pub gravity: f64,
    pub links: Vec<Link>,
    pub joints: Vec<Joint>,
    pub feet: Vec<FootFrame>,
    #[serde(default)]
    pub hands: Vec<EndEffector>,
    #[serde(skip)]
    topo: Topology,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkFrame {
    pub origin: [f64; 2],
    pub angle: f64,
}

#[inline]
pub fn rotate(angle: f64, v: [f64; 2]) -> [f64; 2] {
    let (s, c) = angle.sin_cos();
    [c * v[0] - s * v[1], s * v[0] + c * v[1]]
}

#[inline]
pub(crate) fn add(a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    [a[0] + b[0], a[1] + b[1]]
}

#[inline]
pub(crate) fn sub(a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    [a[0] - b[0], a[1] - b[1]]
}

/// 90° counter-clockwise rotation: the velocity direction of a point at `r`
/// on a body spinning with unit angular rate.
#[inline]
pub(crate) fn perp(r: [f64; 2]) -> [f64; 2] {
    [-r[1], r[0]]
}

impl RobotModel {
    /// Validates the description and resolves the joint tree.
    pub fn new(
        name: impl Into<String>,
        root: impl Into<String>,
        gravity: f64,
        links: Vec<Link>,
        joints: Vec<Joint>,
        feet: Vec<FootFrame>,
        hands: Vec<EndEffector>,
    ) -> Result<Self> {
        let mut model = RobotModel {
            schema_version: MODEL_SCHEMA_VERSION,
            name: name.into(),
            root: root.into(),
            gravity,
            links,
            joints,
            feet,
            hands,
            topo: Topology::default(),
        };
        model.resolve()?;
        Ok(model)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let mut model: RobotModel = toml::from_str(text).map_err(|e| Error::Config(format!("robot model: {e}")))?;
        if model.schema_version != MODEL_SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "robot model schema_version {} unsupported (expected {MODEL_SCHEMA_VERSION})",
                model.schema_version
            )));
        }
        model.resolve()?;
        Ok(model)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("robot model serializes")
    }

    fn resolve(&mut self) -> Result<()> {
        let bad = |msg: String| Err(Error::Model(msg));
        if self.links.is_empty() {
            return bad("no links".into());
        }
        if !(self.gravity.is_finite() && self.gravity >= 0.0) {
            return bad(format!("gravity {} must be finite and non-negative", self.gravity));
        }
        let mut index = HashMap::new();
        for (i, l) in self.links.iter().enumerate() {
            if index.insert(l.name.as_str(), i).is_some() {
                return bad(format!("duplicate link '{}'", l.name));
            }
            let positive = [l.mass, l.length, l.inertia];
            if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                return bad(format!("link '{}' needs positive mass, length and inertia", l.name));
            }
            if l.com.iter().any(|v| !v.is_finite()) {
                return bad(format!("link '{}' has a non-finite center of mass", l.name));
            }
        }
        let root = match index.get(self.root.as_str()) {
            Some(&r) => r,
            None => return bad(format!("root link '{}' not found", self.root)),
        };

        let n_links = self.links.len();
        let mut parent_joint = vec![None; n_links];
        let mut joint_parent = Vec::with_capacity(self.joints.len());
        let mut joint_child = Vec::with_capacity(self.joints.len());
        for (j, joint) in self.joints.iter().enumerate() {
            if !(joint.lower < joint.upper) {
                return bad(format!("joint '{}' lower limit must be below upper", joint.name));
            }
            let positive = [joint.velocity_limit, joint.torque_limit, joint.stiffness, joint.damping];
            if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                return bad(format!(
                    "joint '{}' needs positive velocity/torque limits and gains",
                    joint.name
                ));
            }
            if joint.armature < 0.0 || joint.friction < 0.0 {
                return bad(format!("joint '{}' armature and friction must be >= 0", joint.name));
            }
            let (Some(&p), Some(&c)) = (index.get(joint.parent.as_str()), index.get(joint.child.as_str())) else {
                return bad(format!("joint '{}' references an unknown link", joint.name));
            };
            if c == root {
                return bad(format!("joint '{}' has the floating base as its child", joint.name));
            }
            if parent_joint[c].is_some() {
                return bad(format!("link '{}' has two parent joints", joint.child));
            }
            parent_joint[c] = Some(j);
            joint_parent.push(p);
            joint_child.push(c);
        }

        // Every link must reach the root by walking parent joints; a walk
        // longer than the link count means a cycle.
        let mut chains = vec![Vec::new(); n_links];
        for (link, chain) in chains.iter_mut().enumerate() {
            let mut cur = link;
            let mut steps = 0;
            while cur != root {
                let Some(j) = parent_joint[cur] else {
                    return bad(format!("link '{}' is not connected to the root", self.links[link].name));
                };
                chain.push(j);
                cur = joint_parent[j];
                steps += 1;
                if steps > n_links {
                    return bad("joint graph contains a cycle".into());
                }
            }
            chain.reverse();
        }
        let mut order: Vec<usize> = (0..self.joints.len()).collect();
        order.sort_by_key(|&j| chains[joint_child[j]].len());

        if self.feet.len() != 2 {
            return bad(format!("expected exactly two foot frames, found {}", self.feet.len()));
        }
        let mut foot_links = Vec::new();
        for f in &self.feet {
            match index.get(f.link.as_str()) {
                Some(&l) => foot_links.push(l),
                None => return bad(format!("foot '{}' attached to unknown link '{}'", f.name, f.link)),
            }
        }
        let mut hand_links = Vec::new();
        for h in &self.hands {
            match index.get(h.link.as_str()) {
                Some(&l) => hand_links.push(l),
                None => return bad(format!("hand '{}' attached to unknown link '{}'", h.name, h.link)),
            }
        }

        self.topo = Topology {
            root,
            parent_joint,
            joint_parent,
            joint_child,
            order,
            chains,
            foot_links,
            hand_links,
        };
        Ok(())
    }

    pub fn joint_count(&self) -> usize {
        self.joints.len()
    }

    pub fn total_mass(&self) -> f64 {
        self.links.iter().map(|l| l.mass).sum()
    }

    pub fn root_index(&self) -> usize {
        self.topo.root
    }

    pub fn link_index(&self, name: &str) -> Option<usize> {
        self.links.iter().position(|l| l.name == name)
    }

    pub fn joint_child(&self, joint: usize) -> usize {
        self.topo.joint_child[joint]
    }

    pub fn joint_parent(&self, joint: usize) -> usize {
        self.topo.joint_parent[joint]
    }

    /// Ancestor joints of `link`, root first.
    pub fn chain(&self, link: usize) -> &[usize] {
        &self.topo.chains[link]
    }

    /// Joints in parent-before-child order.
    pub fn joint_order(&self) -> &[usize] {
        &self.topo.order
    }

    pub fn foot_link(&self, foot: usize) -> usize {
        self.topo.foot_links[foot]
    }

    pub fn default_pose(&self) -> Vec<f64> {
        self.joints.iter().map(|j| j.default).collect()
    }

    /// Depth of the joint tree below the root (longest chain).
    pub fn tree_depth(&self) -> usize {
        self.topo.chains.iter().map(Vec::len).max().unwrap_or(0)
    }

    pub fn dof(&self) -> usize {
        3 + self.joints.len()
    }

    /// World frames of every link for a root placement and joint vector.
    pub fn link_frames(&self, root: [f64; 2], pitch: f64, q: &[f64]) -> Vec<LinkFrame> {
        let mut frames = vec![
            LinkFrame {
                origin: root,
                angle: pitch
            };
            self.links.len()
        ];
        for &j in &self.topo.order {
            let parent = frames[self.topo.joint_parent[j]];
            let joint = &self.joints[j];
            frames[self.topo.joint_child[j]] = LinkFrame {
                origin: add(parent.origin, rotate(parent.angle, joint.origin)),
                angle: parent.angle + q[j],
            };
        }
        frames
    }

    pub fn point_on(&self, frames: &[LinkFrame], link: usize, local: [f64; 2]) -> [f64; 2] {
        let f = frames[link];
        add(f.origin, rotate(f.angle, local))
    }

    /// Sole point of each foot in the base frame.
    pub fn foot_positions_base(&self, q: &[f64]) -> [[f64; 2]; 2] {
        let frames = self.link_frames([0.0, 0.0], 0.0, q);
        let mut out = [[0.0; 2]; 2];
        for (i, foot) in self.feet.iter().enumerate() {
            out[i] = self.point_on(&frames, self.topo.foot_links[i], foot.sole);
        }
        out
    }

    /// Base height that puts the lowest contact point of `q` on the ground
    /// when the base is level.
    pub fn standing_height(&self, q: &[f64]) -> f64 {
        let frames = self.link_frames([0.0, 0.0], 0.0, q);
        let mut lowest = f64::INFINITY;
        for (i, foot) in self.feet.iter().enumerate() {
            for p in [foot.heel, foot.toe] {
                lowest = lowest.min(self.point_on(&frames, self.topo.foot_links[i], p)[1]);
            }
        }
        -lowest
    }

    pub fn discriminator_dim(&self) -> usize {
        2 * self.joints.len() + 2 * 2 * self.feet.len() + 2 * self.hands.len()
    }

    pub(crate) fn hand_link(&self, hand: usize) -> usize {
        self.topo.hand_links[hand]
    }
}

/// The built-in desk-scale biped: torso plus thigh, shank and foot per leg,
/// with hip, knee and ankle actuated on both sides.
pub fn build_default_model() -> RobotModel {
    let link = |name: &str, mass: f64, length: f64, com: [f64; 2], inertia: f64| Link {
        name: name.into(),
        mass,
        length,
        com,
        inertia,
    };
    let torso_inertia = 4.0 * 0.4 * 0.4 / 12.0;
    let thigh_inertia = 1.0 * 0.3 * 0.3 / 12.0;
    let shank_inertia = 0.6 * 0.3 * 0.3 / 12.0;
    let foot_inertia = 0.3 * 0.14 * 0.14 / 12.0;
    let mut links = vec![link("torso", 4.0, 0.4, [0.0, 0.15], torso_inertia)];
    for side in ["left", "right"] {
        links.push(link(&format!("{side}_thigh"), 1.0, 0.3, [0.0, -0.15], thigh_inertia));
        links.push(link(&format!("{side}_shank"), 0.6, 0.3, [0.0, -0.15], shank_inertia));
        links.push(link(&format!("{side}_foot"), 0.3, 0.14, [0.03, -0.035], foot_inertia));
    }

    let mut joints = Vec::new();
    for side in ["left", "right"] {
        let joint = |kind: &str,
                     parent: String,
                     child: String,
                     origin: [f64; 2],
                     (lower, upper): (f64, f64),
                     (kp, kd, limit): (f64, f64, f64),
                     default: f64| Joint {
            name: format!("{side}_{kind}"),
            parent,
            child,
            origin,
            lower,
            upper,
            velocity_limit: 20.0,
            torque_limit: limit,
            stiffness: kp,
            damping: kd,
            armature: 0.01,
            friction: 0.05,
            default,
            group: JointGroup::Leg,
        };
        joints.push(joint(
            "hip",
            "torso".into(),
            format!("{side}_thigh"),
            [0.0, 0.0],
            (-1.0, 1.6),
            (40.0, 1.0, 40.0),
            0.3,
        ));
        joints.push(joint(
            "knee",
            format!("{side}_thigh"),
            format!("{side}_shank"),
            [0.0, -0.3],
            (-2.2, 0.05),
            (40.0, 1.0, 40.0),
            -0.6,
        ));
        joints.push(joint(
            "ankle",
            format!("{side}_shank"),
            format!("{side}_foot"),
            [0.0, -0.3],
            (-0.8, 0.8),
            (20.0, 0.5, 20.0),
            0.3,
        ));
    }

    let feet = ["left", "right"]
        .iter()
        .map(|side| FootFrame {
            name: format!("{side}_sole"),
            link: format!("{side}_foot"),
            sole: [0.0, -0.05],
            heel: [-0.04, -0.05],
            toe: [0.10, -0.05],
        })
        .collect();

    RobotModel::new("planar-biped-7", "torso", 9.81, links, joints, feet, Vec::new()).expect("built-in model is valid")
}

/// Full physics state of the floating-base biped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimState {
    /// World (x, z) of the base origin, m.
    pub root_position: [f64; 2],
    /// rad
    pub root_pitch: f64,
    /// World-frame (ẋ, ż), m/s.
    pub root_velocity: [f64; 2],
    /// rad/s
    pub root_angular_velocity: f64,
    pub joint_positions: Vec<f64>,
    pub joint_velocities: Vec<f64>,
    pub contacts: [FootContact; 2],
    pub time: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FootContact {
    /// N, never negative.
    pub normal: f64,
    /// N, signed along world x.
    pub tangential: f64,
}

impl FootContact {
    pub fn norm(&self) -> f64 {
        self.normal.hypot(self.tangential)
    }
}

impl SimState {
    /// Model standing in its default pose with feet on the ground.
    pub fn standing(model: &RobotModel) -> Self {
        let q = model.default_pose();
        SimState {
            root_position: [0.0, model.standing_height(&q)],
            root_pitch: 0.0,
            root_velocity: [0.0; 2],
            root_angular_velocity: 0.0,
            joint_velocities: vec![0.0; q.len()],
            joint_positions: q,
            contacts: [FootContact::default(); 2],
            time: 0.0,
        }
    }

    pub fn check(&self, model: &RobotModel) -> Result<()> {
        let n = model.joint_count();
        if self.joint_positions.len() != n {
            return Err(Error::dim("joint positions", n, self.joint_positions.len()));
        }
        if self.joint_velocities.len() != n {
            return Err(Error::dim("joint velocities", n, self.joint_velocities.len()));
        }
        Ok(())
    }

    pub fn generalized_positions(&self) -> Vec<f64> {
        let mut q = vec![self.root_position[0], self.root_position[1], self.root_pitch];
        q.extend_from_slice(&self.joint_positions);
        q
    }

    pub fn generalized_velocities(&self) -> Vec<f64> {
        let mut v = vec![self.root_velocity[0], self.root_velocity[1], self.root_angular_velocity];
        v.extend_from_slice(&self.joint_velocities);
        v
    }

    pub fn set_generalized(&mut self, q: &[f64], v: &[f64]) {
        self.root_position = [q[0], q[1]];
        self.root_pitch = q[2];
        self.joint_positions.copy_from_slice(&q[3..]);
        self.root_velocity = [v[0], v[1]];
        self.root_angular_velocity = v[2];
        self.joint_velocities.copy_from_slice(&v[3..]);
    }

    pub fn is_finite(&self) -> bool {
        self.generalized_positions().iter().all(|v| v.is_finite())
            && self.generalized_velocities().iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Command {
    /// m/s
    pub forward: f64,
    /// m/s, always 0 in planar mode.
    pub lateral: f64,
    /// rad/s, always 0 in planar mode.
    pub yaw_rate: f64,
}

impl Command {
    pub fn forward(v: f64) -> Self {
        Command {
            forward: v,
            lateral: 0.0,
            yaw_rate: 0.0,
        }
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.forward, self.lateral, self.yaw_rate]
    }
}

/// Target joint-position offsets from the default pose, rad.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Action(pub Vec<f64>);

impl Action {
    pub fn zeros(n: usize) -> Self {
        Action(vec![0.0; n])
    }

    /// Clamps every component to ±`scale`; non-finite components are an error.
    pub fn clamped(&self, scale: f64) -> Result<Action> {
        if let Some(i) = self.0.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("action component {i} is not finite")));
        }
        Ok(Action(self.0.iter().map(|v| v.clamp(-scale, scale)).collect()))
    }
}

/// Channel ranges of the policy observation.
///
/// Order (version `planar-v1`):
/// 1. base-frame root linear velocity (x, z)
/// 2. root angular velocity
/// 3. projected gravity in the base frame (x, z)
/// 4. command (forward, lateral, yaw rate)
/// 5. joint positions relative to the default pose
/// 6. joint velocities
/// 7. gait clock (sin 2πφ, cos 2πφ, ρ)
/// 8. root height
/// 9. previous action
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ObservationLayout {
    pub joints: usize,
}

impl ObservationLayout {
    pub fn new(model: &RobotModel) -> Self {
        ObservationLayout {
            joints: model.joint_count(),
        }
    }

    pub const LIN_VEL: std::ops::Range<usize> = 0..2;
    pub const ANG_VEL: std::ops::Range<usize> = 2..3;
    pub const GRAVITY: std::ops::Range<usize> = 3..5;
    pub const COMMAND: std::ops::Range<usize> = 5..8;

    pub fn joint_pos(&self) -> std::ops::Range<usize> {
        8..8 + self.joints
    }
    pub fn joint_vel(&self) -> std::ops::Range<usize> {
        8 + self.joints..8 + 2 * self.joints
    }
    pub fn clock(&self) -> std::ops::Range<usize> {
        let s = 8 + 2 * self.joints;
        s..s + 3
    }
    pub fn height(&self) -> std::ops::Range<usize> {
        let s = 11 + 2 * self.joints;
        s..s + 1
    }
    pub fn prev_action(&self) -> std::ops::Range<usize> {
        let s = 12 + 2 * self.joints;
        s..s + self.joints
    }
    pub fn dim(&self) -> usize {
        12 + 3 * self.joints
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyObservation(pub Vec<f64>);

/// Additive uniform noise half-widths per observation group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObservationNoise {
    pub lin_vel: f64,
    pub ang_vel: f64,
    pub gravity: f64,
    pub joint_pos: f64,
    pub joint_vel: f64,
    pub height: f64,
}

impl Default for ObservationNoise {
    fn default() -> Self {
        ObservationNoise {
            lin_vel: 0.1,
            ang_vel: 0.0,
            gravity: 0.0,
            joint_pos: 0.0,
            joint_vel: 0.0,
            height: 0.0,
        }
    }
}

impl ObservationNoise {
    pub fn zero() -> Self {
        ObservationNoise {
            lin_vel: 0.0,
            ..Default::default()
        }
    }

    /// Per-channel scales; command, clock and previous-action channels are
    /// never noised.
    pub fn per_channel(&self, layout: &ObservationLayout) -> Vec<f64> {
        let mut s = vec![0.0; layout.dim()];
        s[ObservationLayout::LIN_VEL].fill(self.lin_vel);
        s[ObservationLayout::ANG_VEL].fill(self.ang_vel);
        s[ObservationLayout::GRAVITY].fill(self.gravity);
        s[layout.joint_pos()].fill(self.joint_pos);
        s[layout.joint_vel()].fill(self.joint_vel);
        s[layout.height()].fill(self.height);
        s
    }
}

/// Direction of world gravity expressed in the base frame.
pub fn projected_gravity(pitch: f64) -> [f64; 2] {
    let (s, c) = pitch.sin_cos();
    [-s, -c]
}

/// Builds the policy observation. `noise_scale` holds one half-width per
/// channel; `lin_vel_multiplier` is the per-episode velocity-estimate scale.
#[allow(clippy::too_many_arguments)]
pub fn assemble_observation<R: Rng + ?Sized>(
    model: &RobotModel,
    state: &SimState,
    command: &Command,
    clock: &GaitClock,
    prev_action: &Action,
    noise_scale: &[f64],
    lin_vel_multiplier: f64,
    rng: &mut R,
) -> Result<PolicyObservation> {
    state.check(model)?;
    let layout = ObservationLayout::new(model);
    if prev_action.0.len() != layout.joints {
        return Err(Error::dim("previous action", layout.joints, prev_action.0.len()));
    }
    if noise_scale.len() != layout.dim() {
        return Err(Error::dim("observation noise scales", layout.dim(), noise_scale.len()));
    }
    let mut o = Vec::with_capacity(layout.dim());
    let v_base = rotate(-state.root_pitch, state.root_velocity);
    o.push(v_base[0] * lin_vel_multiplier);
    o.push(v_base[1] * lin_vel_multiplier);
    o.push(state.root_angular_velocity);
    o.extend_from_slice(&projected_gravity(state.root_pitch));
    o.extend_from_slice(&command.as_array());
    o.extend(
        state
            .joint_positions
            .iter()
            .zip(&model.joints)
            .map(|(q, j)| q - j.default),
    );
    o.extend_from_slice(&state.joint_velocities);
    let angle = std::f64::consts::TAU * clock.phase();
    o.push(angle.sin());
    o.push(angle.cos());
    o.push(clock.swing_ratio());
    o.push(state.root_position[1]);
    o.extend_from_slice(&prev_action.0);

    for (v, &s) in o.iter_mut().zip(noise_scale) {
        if s > 0.0 {
            *v += rng.gen_range(-s..=s);
        }
    }
    Ok(PolicyObservation(o))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscriminatorObservation(pub Vec<f64>);

/// Discriminator features from joint data alone: joint positions, joint
/// velocities, heel and toe of each foot in the base frame, then hands.
///
/// Live states and reference clips both go through this function.
pub fn discriminator_features(model: &RobotModel, q: &[f64], qd: &[f64]) -> DiscriminatorObservation {
    let mut o = Vec::with_capacity(model.discriminator_dim());
    o.extend_from_slice(q);
    o.extend_from_slice(qd);
    let frames = model.link_frames([0.0, 0.0], 0.0, q);
    for (i, foot) in model.feet.iter().enumerate() {
        for p in [foot.heel, foot.toe] {
            o.extend_from_slice(&model.point_on(&frames, model.foot_link(i), p));
        }
    }
    for (i, hand) in model.hands.iter().enumerate() {
        o.extend_from_slice(&model.point_on(&frames, model.hand_link(i), hand.point));
    }
    DiscriminatorObservation(o)
}

pub fn assemble_discriminator_observation(state: &SimState, model: &RobotModel) -> DiscriminatorObservation {
    discriminator_features(model, &state.joint_positions, &state.joint_velocities)
}
