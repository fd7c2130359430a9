//! Reference motion clips: the text file format, validation, resampling,
//! demonstration sampling for the discriminator, and a synthetic walking
//! gait generator.
//!
//! Clip file layout:
//!
//! ```text
//! # comments and blank lines are ignored
//! schema_version 1
//! joint_schema planar-biped-7
//! name walk_a
//! frame_rate 100
//! loop true
//! velocities true
//! end_effectors 2
//! frames
//! <t> <q_1..q_n> [<qd_1..qd_n>] [<x_1 z_1 .. x_k z_k>]
//! ...
//! ```
//!
//! Joint velocities and end-effector columns are optional; missing
//! velocities are filled by central differences.

use std::f64::consts::TAU;
use std::fmt::Write as _;
use std::path::Path;

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::amp::TransitionPair;
use crate::model::{discriminator_features, DiscriminatorObservation, RobotModel};
use crate::{Error, Result};

pub const CLIP_SCHEMA_VERSION: u32 = 1;

/// Relative tolerance on frame timestamps.
const TIME_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ClipError {
    #[error("clip '{clip}': too few frames ({frames}; need at least 2)")]
    TooFewFrames { clip: String, frames: usize },

    #[error("clip '{clip}': non-uniform timestamps at frame {frame} (expected {expected}, found {found})")]
    NonUniformTimestamps {
        clip: String,
        frame: usize,
        expected: f64,
        found: f64,
    },

    #[error("clip '{clip}': schema mismatch: {detail}")]
    SchemaMismatch { clip: String, detail: String },

    #[error("malformed clip at line {line}: {detail}")]
    Malformed { line: usize, detail: String },

    #[error("clip '{clip}': loop discontinuity of {gap} on channel {channel} exceeds tolerance {tolerance}")]
    LoopDiscontinuity {
        clip: String,
        channel: usize,
        gap: f64,
        tolerance: f64,
    },

    #[error("clip '{clip}': {detail}")]
    Invalid { clip: String, detail: String },
}

/// Which joint layout a clip must match.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClipSchema {
    pub name: String,
    pub joints: usize,
}

impl ClipSchema {
    pub fn of(model: &RobotModel) -> Self {
        ClipSchema {
            name: model.name.clone(),
            joints: model.joint_count(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipFrame {
    /// rad
    pub q: Vec<f64>,
    /// rad/s
    pub qd: Vec<f64>,
    /// End-effector (x, z) pairs in the base frame, m. May be empty.
    pub ee: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionClip {
    pub name: String,
    pub joint_schema: String,
    /// Hz
    pub frame_rate: f64,
    pub looped: bool,
    pub frames: Vec<ClipFrame>,
}

impl MotionClip {
    /// Builds a clip from positions (and optional velocities / end effectors),
    /// filling missing velocities and validating invariants.
    pub fn new(
        name: &str,
        joint_schema: &str,
        frame_rate: f64,
        looped: bool,
        positions: Vec<Vec<f64>>,
        velocities: Option<Vec<Vec<f64>>>,
        end_effectors: Option<Vec<Vec<f64>>>,
    ) -> std::result::Result<Self, ClipError> {
        let invalid = |detail: String| ClipError::Invalid {
            clip: name.to_string(),
            detail,
        };
        if !(frame_rate.is_finite() && frame_rate > 0.0) {
            return Err(invalid(format!("frame rate {frame_rate} must be > 0")));
        }
        if positions.len() < 2 {
            return Err(ClipError::TooFewFrames {
                clip: name.into(),
                frames: positions.len(),
            });
        }
        let qd = match velocities {
            Some(v) => v,
            None => finite_difference(&positions, frame_rate, looped),
        };
        let ee = end_effectors.unwrap_or_else(|| vec![Vec::new(); positions.len()]);
        if qd.len() != positions.len() || ee.len() != positions.len() {
            return Err(invalid("channel frame counts differ".into()));
        }
        let frames = positions
            .into_iter()
            .zip(qd)
            .zip(ee)
            .map(|((q, qd), ee)| ClipFrame { q, qd, ee })
            .collect();
        let clip = MotionClip {
            name: name.into(),
            joint_schema: joint_schema.into(),
            frame_rate,
            looped,
            frames,
        };
        clip.check_shape()?;
        Ok(clip)
    }

    fn check_shape(&self) -> std::result::Result<(), ClipError> {
        let n = self.frames[0].q.len();
        let k = self.frames[0].ee.len();
        for (i, f) in self.frames.iter().enumerate() {
            if f.q.len() != n || f.qd.len() != n || f.ee.len() != k {
                return Err(ClipError::SchemaMismatch {
                    clip: self.name.clone(),
                    detail: format!("frame {i} has inconsistent channel lengths"),
                });
            }
            if f.q.iter().chain(&f.qd).chain(&f.ee).any(|v| !v.is_finite()) {
                return Err(ClipError::Invalid {
                    clip: self.name.clone(),
                    detail: format!("frame {i} holds a non-finite value"),
                });
            }
        }
        Ok(())
    }

    pub fn joint_count(&self) -> usize {
        self.frames[0].q.len()
    }

    pub fn has_end_effectors(&self) -> bool {
        !self.frames[0].ee.is_empty()
    }

    /// Seconds covered: (N−1)/rate, or N/rate when looped.
    pub fn duration(&self) -> f64 {
        let n = self.frames.len() as f64;
        if self.looped {
            n / self.frame_rate
        } else {
            (n - 1.0) / self.frame_rate
        }
    }

    /// Number of consecutive frame pairs: N−1, or N when looped.
    pub fn transition_count(&self) -> usize {
        if self.looped {
            self.frames.len()
        } else {
            self.frames.len() - 1
        }
    }

    /// Checks all invariants against `schema`; `loop_tolerance` bounds the
    /// per-channel position jump across the wrap of a looped clip.
    pub fn validate(&self, schema: &ClipSchema, loop_tolerance: f64) -> std::result::Result<(), ClipError> {
        if self.frames.len() < 2 {
            return Err(ClipError::TooFewFrames {
                clip: self.name.clone(),
                frames: self.frames.len(),
            });
        }
        if self.joint_schema != schema.name {
            return Err(ClipError::SchemaMismatch {
                clip: self.name.clone(),
                detail: format!("joint schema '{}' but expected '{}'", self.joint_schema, schema.name),
            });
        }
        if self.joint_count() != schema.joints {
            return Err(ClipError::SchemaMismatch {
                clip: self.name.clone(),
                detail: format!("{} joints but schema has {}", self.joint_count(), schema.joints),
            });
        }
        self.check_shape()?;
        if self.looped {
            let (first, last) = (&self.frames[0].q, &self.frames[self.frames.len() - 1].q);
            for (channel, (a, b)) in first.iter().zip(last).enumerate() {
                let gap = (a - b).abs();
                if gap >= loop_tolerance {
                    return Err(ClipError::LoopDiscontinuity {
                        clip: self.name.clone(),
                        channel,
                        gap,
                        tolerance: loop_tolerance,
                    });
                }
            }
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "schema_version {CLIP_SCHEMA_VERSION}");
        let _ = writeln!(s, "joint_schema {}", self.joint_schema);
        let _ = writeln!(s, "name {}", self.name);
        let _ = writeln!(s, "frame_rate {}", self.frame_rate);
        let _ = writeln!(s, "loop {}", self.looped);
        let _ = writeln!(s, "velocities true");
        let _ = writeln!(s, "end_effectors {}", self.frames[0].ee.len() / 2);
        s.push_str("frames\n");
        for (i, f) in self.frames.iter().enumerate() {
            let _ = write!(s, "{}", i as f64 / self.frame_rate);
            for v in f.q.iter().chain(&f.qd).chain(&f.ee) {
                let _ = write!(s, " {v}");
            }
            s.push('\n');
        }
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }
}

/// Central differences; one-sided at the ends of a non-looped clip.
fn finite_difference(positions: &[Vec<f64>], rate: f64, looped: bool) -> Vec<Vec<f64>> {
    let n = positions.len();
    let diff =
        |a: &[f64], b: &[f64], scale: f64| -> Vec<f64> { a.iter().zip(b).map(|(x, y)| (x - y) * scale).collect() };
    (0..n)
        .map(|i| {
            if looped {
                let next = &positions[(i + 1) % n];
                let prev = &positions[(i + n - 1) % n];
                diff(next, prev, 0.5 * rate)
            } else if i == 0 {
                diff(&positions[1], &positions[0], rate)
            } else if i == n - 1 {
                diff(&positions[n - 1], &positions[n - 2], rate)
            } else {
                diff(&positions[i + 1], &positions[i - 1], 0.5 * rate)
            }
        })
        .collect()
}

fn malformed(line: usize, detail: impl Into<String>) -> ClipError {
    ClipError::Malformed {
        line,
        detail: detail.into(),
    }
}

/// Parses clip text and checks the joint schema.
pub fn parse_clip(text: &str, schema: &ClipSchema) -> std::result::Result<MotionClip, ClipError> {
    let mut version = None;
    let mut joint_schema = None;
    let mut name = None;
    let mut rate = None;
    let mut looped = false;
    let mut velocities = false;
    let mut end_effectors = 0usize;
    let mut rows: Vec<(usize, Vec<f64>)> = Vec::new();
    let mut in_frames = false;

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if in_frames {
            let values: std::result::Result<Vec<f64>, _> = line.split_whitespace().map(str::parse::<f64>).collect();
            let values = values.map_err(|e| malformed(line_no, format!("bad number: {e}")))?;
            rows.push((line_no, values));
            continue;
        }
        if line == "frames" {
            in_frames = true;
            continue;
        }
        let (key, value) = line
            .split_once(char::is_whitespace)
            .map(|(k, v)| (k, v.trim()))
            .ok_or_else(|| malformed(line_no, format!("expected 'key value', found '{line}'")))?;
        let parse_bool = |v: &str| -> std::result::Result<bool, ClipError> {
            v.parse::<bool>()
                .map_err(|_| malformed(line_no, format!("'{key}' must be true or false")))
        };
        match key {
            "schema_version" => {
                version = Some(
                    value
                        .parse::<u32>()
                        .map_err(|_| malformed(line_no, "schema_version must be an integer"))?,
                )
            }
            "joint_schema" => joint_schema = Some(value.to_string()),
            "name" => name = Some(value.to_string()),
            "frame_rate" => {
                rate = Some(
                    value
                        .parse::<f64>()
                        .map_err(|_| malformed(line_no, "frame_rate must be a number"))?,
                )
            }
            "loop" => looped = parse_bool(value)?,
            "velocities" => velocities = parse_bool(value)?,
            "end_effectors" => {
                end_effectors = value
                    .parse()
                    .map_err(|_| malformed(line_no, "end_effectors must be a count"))?
            }
            other => return Err(malformed(line_no, format!("unknown header key '{other}'"))),
        }
    }

    let name = name.ok_or_else(|| malformed(0, "missing 'name'"))?;
    let version = version.ok_or_else(|| malformed(0, "missing 'schema_version'"))?;
    if version != CLIP_SCHEMA_VERSION {
        return Err(ClipError::SchemaMismatch {
            clip: name,
            detail: format!("file schema version {version}, supported {CLIP_SCHEMA_VERSION}"),
        });
    }
    let joint_schema = joint_schema.ok_or_else(|| malformed(0, "missing 'joint_schema'"))?;
    if joint_schema != schema.name {
        return Err(ClipError::SchemaMismatch {
            clip: name,
            detail: format!("joint schema '{joint_schema}' but expected '{}'", schema.name),
        });
    }
    let rate = rate.ok_or_else(|| malformed(0, "missing 'frame_rate'"))?;
    if !in_frames {
        return Err(malformed(0, "missing 'frames' section"));
    }
    if rows.len() < 2 {
        return Err(ClipError::TooFewFrames {
            clip: name,
            frames: rows.len(),
        });
    }

    let n = schema.joints;
    let width = 1 + n + if velocities { n } else { 0 } + 2 * end_effectors;
    let mut q = Vec::with_capacity(rows.len());
    let mut qd = Vec::with_capacity(rows.len());
    let mut ee = Vec::with_capacity(rows.len());
    let t0 = rows[0].1.first().copied().unwrap_or(0.0);
    for (i, (line_no, row)) in rows.iter().enumerate() {
        if row.len() != width {
            return Err(ClipError::SchemaMismatch {
                clip: name,
                detail: format!("line {line_no} has {} columns, expected {width}", row.len()),
            });
        }
        let expected = t0 + i as f64 / rate;
        if (row[0] - expected).abs() > TIME_TOLERANCE * (1.0 + expected.abs()) {
            return Err(ClipError::NonUniformTimestamps {
                clip: name,
                frame: i,
                expected,
                found: row[0],
            });
        }
        q.push(row[1..1 + n].to_vec());
        let mut at = 1 + n;
        if velocities {
            qd.push(row[at..at + n].to_vec());
            at += n;
        }
        ee.push(row[at..].to_vec());
    }
    MotionClip::new(
        &name,
        &joint_schema,
        rate,
        looped,
        q,
        velocities.then_some(qd),
        Some(ee),
    )
}

pub fn load_clip(path: &Path, schema: &ClipSchema) -> Result<MotionClip> {
    let text = std::fs::read_to_string(path)?;
    Ok(parse_clip(&text, schema)?)
}

/// Linear interpolation of positions (and end effectors) to `rate`;
/// velocities are recomputed.
pub fn resample(clip: &MotionClip, rate: f64) -> Result<MotionClip> {
    if !(rate.is_finite() && rate > 0.0) {
        return Err(Error::Domain(format!("target rate {rate} must be > 0")));
    }
    if rate == clip.frame_rate {
        return Ok(clip.clone());
    }
    let n = clip.frames.len();
    let count = if clip.looped {
        (clip.duration() * rate).round().max(2.0) as usize
    } else {
        ((clip.duration() * rate + 1e-9).floor() as usize + 1).max(2)
    };
    let lerp = |a: &[f64], b: &[f64], s: f64| -> Vec<f64> { a.iter().zip(b).map(|(x, y)| x + s * (y - x)).collect() };
    let mut q = Vec::with_capacity(count);
    let mut ee = Vec::with_capacity(count);
    for i in 0..count {
        let pos = i as f64 / rate * clip.frame_rate;
        let base = pos.floor();
        let s = pos - base;
        let a = base as usize;
        let (ia, ib) = if clip.looped {
            (a % n, (a + 1) % n)
        } else {
            let a = a.min(n - 1);
            (a, (a + 1).min(n - 1))
        };
        let (fa, fb) = (&clip.frames[ia], &clip.frames[ib]);
        q.push(lerp(&fa.q, &fb.q, s));
        ee.push(lerp(&fa.ee, &fb.ee, s));
    }
    Ok(MotionClip::new(
        &clip.name,
        &clip.joint_schema,
        rate,
        clip.looped,
        q,
        None,
        Some(ee),
    )?)
}

/// Demonstration clips resampled to the control rate, with discriminator
/// features cached per frame.
#[derive(Debug, Clone)]
pub struct ClipLibrary {
    clips: Vec<MotionClip>,
    weights: Vec<f64>,
    features: Vec<Vec<DiscriminatorObservation>>,
    chooser: WeightedIndex<f64>,
}

impl ClipLibrary {
    pub fn new(model: &RobotModel, clips: Vec<MotionClip>, weights: Vec<f64>, control_rate: f64) -> Result<Self> {
        if clips.is_empty() {
            return Err(Error::Config("clip library is empty".into()));
        }
        if weights.len() != clips.len() {
            return Err(Error::dim("clip weights", clips.len(), weights.len()));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) || !weights.iter().any(|w| *w > 0.0) {
            return Err(Error::Config(
                "clip weights must be >= 0 with at least one positive".into(),
            ));
        }
        let schema = ClipSchema::of(model);
        let mut resampled = Vec::with_capacity(clips.len());
        for clip in &clips {
            if clip.joint_schema != schema.name || clip.joint_count() != schema.joints {
                return Err(ClipError::SchemaMismatch {
                    clip: clip.name.clone(),
                    detail: format!("does not match model '{}'", schema.name),
                }
                .into());
            }
            resampled.push(resample(clip, control_rate)?);
        }
        let features = resampled
            .iter()
            .map(|c| {
                c.frames
                    .iter()
                    .map(|f| discriminator_features(model, &f.q, &f.qd))
                    .collect()
            })
            .collect();
        let chooser = WeightedIndex::new(&weights).map_err(|e| Error::Config(format!("clip weights: {e}")))?;
        Ok(ClipLibrary {
            clips: resampled,
            weights,
            features,
            chooser,
        })
    }

    pub fn clips(&self) -> &[MotionClip] {
        &self.clips
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn total_transitions(&self) -> usize {
        self.clips.iter().map(MotionClip::transition_count).sum()
    }

    /// Cached discriminator features of frame `frame` of clip `clip`.
    pub fn features(&self, clip: usize, frame: usize) -> &DiscriminatorObservation {
        &self.features[clip][frame]
    }

    /// Transition `index` (0-based over valid consecutive pairs) of clip `clip`.
    pub fn transition(&self, clip: usize, index: usize) -> TransitionPair {
        let n = self.clips[clip].frames.len();
        TransitionPair {
            current: self.features[clip][index].clone(),
            next: self.features[clip][(index + 1) % n].clone(),
        }
    }

    /// Clip drawn by weight, then a transition uniformly within it.
    pub fn sample_index<R: Rng + ?Sized>(&self, rng: &mut R) -> (usize, usize) {
        let c = self.chooser.sample(rng);
        (c, rng.gen_range(0..self.clips[c].transition_count()))
    }

    pub fn sample_transitions<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Vec<TransitionPair> {
        (0..count)
            .map(|_| {
                let (c, i) = self.sample_index(rng);
                self.transition(c, i)
            })
            .collect()
    }

    /// Every transition of every clip, in order.
    pub fn all_transitions(&self) -> Vec<TransitionPair> {
        (0..self.clips.len())
            .flat_map(|c| (0..self.clips[c].transition_count()).map(move |i| (c, i)))
            .map(|(c, i)| self.transition(c, i))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaitSpec {
    /// Stride period, s.
    pub period: f64,
    /// Foot travel per step relative to the hip, m.
    pub step_length: f64,
    /// Swing-foot apex height, m.
    pub clearance: f64,
    /// Fraction of the stride each foot is on the ground.
    pub duty_factor: f64,
}

impl GaitSpec {
    pub fn new(period: f64, step_length: f64, clearance: f64, duty_factor: f64) -> Self {
        GaitSpec {
            period,
            step_length,
            clearance,
            duty_factor,
        }
    }
}

/// The three walking gaits used as the default demonstration set.
pub fn default_gaits() -> [GaitSpec; 3] {
    [
        GaitSpec::new(1.0, 0.15, 0.04, 0.6),
        GaitSpec::new(0.8, 0.2, 0.05, 0.6),
        GaitSpec::new(0.7, 0.25, 0.06, 0.55),
    ]
}

/// Sole target relative to the ground point below the hip at stride phase
/// `phase` (cycloidal swing, linear stance).
pub fn foot_target(spec: &GaitSpec, phase: f64) -> [f64; 2] {
    let swing = 1.0 - spec.duty_factor;
    let l = spec.step_length;
    if phase < swing {
        let s = phase / swing;
        [
            -0.5 * l + l * (s - (TAU * s).sin() / TAU),
            0.5 * spec.clearance * (1.0 - (TAU * s).cos()),
        ]
    } else {
        let s = (phase - swing) / spec.duty_factor;
        [0.5 * l - l * s, 0.0]
    }
}

/// Hip, knee, ankle angles that put the ankle at `target` relative to the
/// hip, knee bent backward, foot level.
fn leg_ik(thigh: f64, shank: f64, target: [f64; 2]) -> Option<[f64; 3]> {
    let d2 = target[0] * target[0] + target[1] * target[1];
    let c = (d2 - thigh * thigh - shank * shank) / (2.0 * thigh * shank);
    if !(-1.0..=1.0).contains(&c) {
        return None;
    }
    let knee = -c.acos();
    let toward = target[0].atan2(-target[1]);
    let hip = toward - (shank * knee.sin()).atan2(thigh + shank * knee.cos());
    Some([hip, knee, -(hip + knee)])
}

/// Kinematically generated looping walk for a two-segment-leg biped with a
/// hip, knee, ankle per leg (joint order left hip..ankle, right hip..ankle).
pub fn synth_gait(spec: &GaitSpec, model: &RobotModel, frame_rate: f64) -> Result<MotionClip> {
    let valid = spec.period > 0.0
        && spec.step_length > 0.0
        && spec.clearance >= 0.0
        && spec.duty_factor > 0.0
        && spec.duty_factor < 1.0
        && frame_rate > 0.0;
    if !valid {
        return Err(Error::Domain(format!("invalid gait parameters {spec:?}")));
    }
    if model.joint_count() != 6 || model.feet.len() != 2 {
        return Err(Error::Model("gait synthesis needs two hip-knee-ankle legs".into()));
    }
    let thigh = model.joints[1].origin[1].abs();
    let shank = model.joints[2].origin[1].abs();
    let sole = model.feet[0].sole;
    let default = model.default_pose();
    let hip_height = model.standing_height(&default);

    let count = (spec.period * frame_rate).round() as usize;
    if count < 2 {
        return Err(Error::Domain("stride period shorter than two frames".into()));
    }
    let offsets = [0.0, 0.5];
    let mut positions = Vec::with_capacity(count);
    let mut ee = Vec::with_capacity(count);
    for i in 0..count {
        let phase = i as f64 / count as f64;
        let mut q = vec![0.0; 6];
        for (leg, off) in offsets.iter().enumerate() {
            let p = (phase + off).rem_euclid(1.0);
            let f = foot_target(spec, p);
            // ankle sits above the sole when the foot is level
            let ankle = [f[0] - sole[0], f[1] - hip_height - sole[1]];
            let angles = leg_ik(thigh, shank, ankle).ok_or_else(|| {
                Error::Domain(format!(
                    "foot target ({:.3}, {:.3}) unreachable with leg lengths {thigh} + {shank}",
                    ankle[0], ankle[1]
                ))
            })?;
            for (k, a) in angles.iter().enumerate() {
                let joint = &model.joints[3 * leg + k];
                if *a < joint.lower || *a > joint.upper {
                    return Err(Error::Domain(format!(
                        "gait needs {} = {a:.3} rad outside [{}, {}]",
                        joint.name, joint.lower, joint.upper
                    )));
                }
                q[3 * leg + k] = *a;
            }
        }
        let feet = model.foot_positions_base(&q);
        ee.push(vec![feet[0][0], feet[0][1], feet[1][0], feet[1][1]]);
        positions.push(q);
    }
    let name = format!(
        "synth_p{}_l{}_c{}_d{}",
        spec.period, spec.step_length, spec.clearance, spec.duty_factor
    );
    Ok(MotionClip::new(
        &name,
        &model.name,
        frame_rate,
        true,
        positions,
        None,
        Some(ee),
    )?)
}
