//! Per-episode domain randomization: body parameters, motor strength,
//! velocity-estimate scale, and a schedule of root impulses and a sustained
//! push.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::model::RobotModel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RandomizationRanges {
    /// Torso mass offset, kg.
    pub mass: [f64; 2],
    /// Torso center-of-mass x offset, m.
    pub com_x: [f64; 2],
    /// Torso center-of-mass z offset, m.
    pub com_z: [f64; 2],
    /// Multiplier on every joint's torque.
    pub motor_strength: [f64; 2],
    /// Magnitude of root velocity kicks, m/s.
    pub impulse: [f64; 2],
    /// Horizontal push on the torso before mass scaling, N.
    pub external_force: [f64; 2],
    /// Multiplier on the observed linear velocity.
    pub lin_vel_multiplier: [f64; 2],
    /// Seconds between root impulses.
    pub push_interval: f64,
    /// Length of the single push window, s.
    pub force_duration: f64,
    /// Push forces are scaled by `robot mass / force_reference_mass`.
    pub force_reference_mass: f64,
}

impl Default for RandomizationRanges {
    fn default() -> Self {
        RandomizationRanges {
            mass: [-0.05, 0.05],
            com_x: [-0.05, 0.05],
            com_z: [-0.05, 0.05],
            motor_strength: [0.7, 1.4],
            impulse: [0.0, 0.8],
            external_force: [-500.0, 500.0],
            lin_vel_multiplier: [0.8, 1.2],
            push_interval: 5.0,
            force_duration: 0.2,
            force_reference_mass: 60.0,
        }
    }
}

impl RandomizationRanges {
    /// Every range collapsed to its neutral value.
    pub fn disabled() -> Self {
        RandomizationRanges {
            mass: [0.0; 2],
            com_x: [0.0; 2],
            com_z: [0.0; 2],
            motor_strength: [1.0; 2],
            impulse: [0.0; 2],
            external_force: [0.0; 2],
            lin_vel_multiplier: [1.0; 2],
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let named = [
            ("mass", self.mass),
            ("com_x", self.com_x),
            ("com_z", self.com_z),
            ("motor_strength", self.motor_strength),
            ("impulse", self.impulse),
            ("external_force", self.external_force),
            ("lin_vel_multiplier", self.lin_vel_multiplier),
        ];
        for (name, [lo, hi]) in named {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(format!("randomization range {name} needs finite low <= high"));
            }
        }
        if self.motor_strength[0] < 0.0 || self.impulse[0] < 0.0 {
            return Err("motor strength and impulse ranges must be non-negative".into());
        }
        if !(self.push_interval > 0.0 && self.force_duration > 0.0 && self.force_reference_mass > 0.0) {
            return Err("push interval, force duration and reference mass must be > 0".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Impulse {
    pub time: f64,
    /// Root x-velocity change, m/s.
    pub delta_v: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForceWindow {
    pub start: f64,
    pub duration: f64,
    /// Horizontal force on the torso, N (already mass-scaled).
    pub force: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DisturbanceSchedule {
    pub impulses: Vec<Impulse>,
    pub force: Option<ForceWindow>,
}

impl DisturbanceSchedule {
    /// Push force active over `[t, t + dt)`.
    pub fn force_at(&self, t: f64) -> f64 {
        match self.force {
            Some(w) if t >= w.start && t < w.start + w.duration => w.force,
            _ => 0.0,
        }
    }

    /// Sum of impulses scheduled inside `[t, t + dt)`.
    pub fn impulse_in(&self, t: f64, dt: f64) -> f64 {
        self.impulses
            .iter()
            .filter(|i| i.time >= t && i.time < t + dt)
            .map(|i| i.delta_v)
            .sum()
    }
}

/// The raw draws behind one randomized episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomDraw {
    pub mass_offset: f64,
    pub com_x: f64,
    pub com_z: f64,
    pub motor_strength: Vec<f64>,
    pub lin_vel_multiplier: f64,
    /// Unscaled push force, N.
    pub external_force: f64,
    pub impulse_magnitudes: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RandomizedModel {
    pub model: RobotModel,
    pub motor_strength: Vec<f64>,
    pub lin_vel_multiplier: f64,
    pub schedule: DisturbanceSchedule,
    pub draw: RandomDraw,
}

fn uniform(rng: &mut ChaCha8Rng, [lo, hi]: [f64; 2]) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.gen_range(lo..=hi)
    }
}

/// Samples a randomized copy of `model` and its disturbance schedule for an
/// episode of `episode_length` seconds. Deterministic in `seed`.
pub fn randomize(model: &RobotModel, ranges: &RandomizationRanges, episode_length: f64, seed: u64) -> RandomizedModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mass_offset = uniform(&mut rng, ranges.mass);
    let com_x = uniform(&mut rng, ranges.com_x);
    let com_z = uniform(&mut rng, ranges.com_z);
    let motor_strength: Vec<f64> = (0..model.joint_count())
        .map(|_| uniform(&mut rng, ranges.motor_strength))
        .collect();
    let lin_vel_multiplier = uniform(&mut rng, ranges.lin_vel_multiplier);

    let mut out = model.clone();
    let root = out.root_index();
    out.links[root].mass += mass_offset;
    out.links[root].com[0] += com_x;
    out.links[root].com[1] += com_z;

    let mut impulses = Vec::new();
    let mut impulse_magnitudes = Vec::new();
    let mut t = ranges.push_interval;
    while t < episode_length {
        let magnitude = uniform(&mut rng, ranges.impulse);
        let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        impulse_magnitudes.push(magnitude);
        impulses.push(Impulse {
            time: t,
            delta_v: sign * magnitude,
        });
        t += ranges.push_interval;
    }

    let external_force = uniform(&mut rng, ranges.external_force);
    let latest = (episode_length - ranges.force_duration).max(0.0);
    let start = uniform(&mut rng, [0.0, latest]);
    let scale = out.total_mass() / ranges.force_reference_mass;
    let force = (external_force != 0.0).then_some(ForceWindow {
        start,
        duration: ranges.force_duration,
        force: external_force * scale,
    });

    RandomizedModel {
        model: out,
        motor_strength: motor_strength.clone(),
        lin_vel_multiplier,
        schedule: DisturbanceSchedule { impulses, force },
        draw: RandomDraw {
            mass_offset,
            com_x,
            com_z,
            motor_strength,
            lin_vel_multiplier,
            external_force,
            impulse_magnitudes,
        },
    }
}
