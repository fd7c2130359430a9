//! Training configuration: one TOML file with a `schema_version`, one table
//! per subsystem. Every table is optional and unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::amp::AmpConfig;
use crate::gait::GaitParams;
use crate::mocap::{default_gaits, load_clip, synth_gait, ClipLibrary, ClipSchema, MotionClip};
use crate::model::{build_default_model, ObservationNoise, RobotModel};
use crate::ppo::PpoConfig;
use crate::rewards::RewardWeights;
use crate::sim::{EnvSettings, RandomizationRanges, SimConfig};
use crate::{Error, Result};

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RobotSection {
    /// Robot description in TOML; the built-in planar biped when absent.
    pub file: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub iterations: usize,
    pub envs: usize,
    /// Control steps per environment per iteration.
    pub steps_per_env: usize,
    /// Write a checkpoint every this many iterations; 0 writes only the
    /// initial and final ones.
    pub checkpoint_every: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            iterations: 150,
            envs: 64,
            steps_per_env: 48,
            checkpoint_every: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub envs: usize,
    /// Control steps per evaluation episode.
    pub steps: usize,
    /// Use the policy mean instead of sampling.
    pub deterministic: bool,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            envs: 16,
            steps: 500,
            deterministic: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClipsSection {
    /// Clip files, relative to the config file.
    pub files: Vec<PathBuf>,
    /// Add the built-in synthetic gait library.
    pub synthetic: bool,
    /// Sampling weight per clip, files first then synthetic; empty means
    /// uniform.
    pub weights: Vec<f64>,
    /// Largest allowed joint gap between the last and first frame of a
    /// looping clip, rad.
    pub loop_tolerance: f64,
    /// Frame rate of the synthetic clips before resampling, Hz.
    pub synthetic_rate: f64,
}

impl Default for ClipsSection {
    fn default() -> Self {
        ClipsSection {
            files: Vec::new(),
            synthetic: true,
            weights: Vec::new(),
            loop_tolerance: 0.1,
            synthetic_rate: 200.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub robot: RobotSection,
    #[serde(default)]
    pub sim: SimConfig,
    #[serde(default)]
    pub randomization: RandomizationRanges,
    #[serde(default)]
    pub gait: GaitParams,
    #[serde(default)]
    pub rewards: RewardWeights,
    #[serde(default)]
    pub observation: ObservationNoise,
    #[serde(default)]
    pub amp: AmpConfig,
    #[serde(default)]
    pub ppo: PpoConfig,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub clips: ClipsSection,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            schema_version: CONFIG_SCHEMA_VERSION,
            seed: 0,
            robot: RobotSection::default(),
            sim: SimConfig::default(),
            randomization: RandomizationRanges::default(),
            gait: GaitParams::default(),
            rewards: RewardWeights::default(),
            observation: ObservationNoise::default(),
            amp: AmpConfig::default(),
            ppo: PpoConfig::default(),
            train: TrainSection::default(),
            eval: EvalSection::default(),
            clips: ClipsSection::default(),
        }
    }
}

impl TrainConfig {
    /// Parses and validates. Relative paths stay as written.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: TrainConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path`; relative robot and clip paths are resolved against its
    /// directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml_str(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        if let Some(f) = &cfg.robot.file {
            cfg.robot.file = Some(base.join(f));
        }
        cfg.clips.files = cfg.clips.files.iter().map(|f| base.join(f)).collect();
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return bad(format!(
                "schema_version {} unsupported (expected {CONFIG_SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        self.sim.validate().map_err(Error::Config)?;
        self.randomization.validate().map_err(Error::Config)?;
        self.rewards.validate().map_err(Error::Config)?;
        self.amp.validate().map_err(Error::Config)?;
        self.ppo.validate().map_err(Error::Config)?;
        let t = &self.train;
        if t.envs == 0 || t.steps_per_env == 0 {
            return bad("train.envs and train.steps_per_env must be > 0".into());
        }
        if self.eval.envs == 0 || self.eval.steps == 0 {
            return bad("eval.envs and eval.steps must be > 0".into());
        }
        let c = &self.clips;
        let count = c.files.len() + if c.synthetic { default_gaits().len() } else { 0 };
        if count == 0 {
            return bad("no motion clips: list clips.files or enable clips.synthetic".into());
        }
        if !c.weights.is_empty() {
            if c.weights.len() != count {
                return bad(format!(
                    "clips.weights has {} entries for {count} clips",
                    c.weights.len()
                ));
            }
            if c.weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) || c.weights.iter().sum::<f64>() <= 0.0 {
                return bad("clips.weights must be finite, >= 0, and not all zero".into());
            }
        }
        if !(c.loop_tolerance >= 0.0 && c.synthetic_rate > 0.0) {
            return bad("clips.loop_tolerance must be >= 0 and clips.synthetic_rate > 0".into());
        }
        Ok(())
    }

    pub fn model(&self) -> Result<RobotModel> {
        match &self.robot.file {
            Some(f) => RobotModel::load(f).map_err(|e| match e {
                Error::Io(io) => Error::Config(format!("cannot read robot file {}: {io}", f.display())),
                other => other,
            }),
            None => Ok(build_default_model()),
        }
    }

    pub fn env_settings(&self, model: RobotModel) -> Result<EnvSettings> {
        EnvSettings::new(
            model,
            self.sim.clone(),
            self.randomization.clone(),
            self.gait.clone(),
            self.rewards.clone(),
            self.observation.clone(),
        )
    }

    /// Loads and validates every clip, files first, then the synthetic set.
    pub fn clips(&self, model: &RobotModel) -> Result<Vec<MotionClip>> {
        let schema = ClipSchema::of(model);
        let mut clips = Vec::new();
        for f in &self.clips.files {
            let clip = load_clip(f, &schema)?;
            clip.validate(&schema, self.clips.loop_tolerance)?;
            clips.push(clip);
        }
        if self.clips.synthetic {
            for spec in default_gaits() {
                let clip = synth_gait(&spec, model, self.clips.synthetic_rate)?;
                clip.validate(&schema, self.clips.loop_tolerance)?;
                clips.push(clip);
            }
        }
        Ok(clips)
    }

    /// Clip library resampled to the control rate.
    pub fn clip_library(&self, model: &RobotModel) -> Result<ClipLibrary> {
        let clips = self.clips(model)?;
        let weights = if self.clips.weights.is_empty() {
            vec![1.0; clips.len()]
        } else {
            self.clips.weights.clone()
        };
        ClipLibrary::new(model, clips, weights, 1.0 / self.sim.control_dt())
    }
}
