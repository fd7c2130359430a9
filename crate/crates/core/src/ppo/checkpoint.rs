//! Binary checkpoints.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! b"AMPC"  u32 version
//! u32 obs_dim  u32 act_dim  u32 discriminator_input_dim  u64 iteration
//! str config_toml  str robot_toml          (u64 length + UTF-8)
//! u8 flags (bit 0: normalize observations, bit 1: normalize returns)
//! vec log_std  norm observations  norm returns
//! net policy  net value  discriminator
//! ```
//!
//! `vec` is a u64 length followed by f64 values; `norm` and `net` are the
//! serializations of [`RunningNorm`] and [`DenseNet`].

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::amp::Discriminator;
use crate::config::TrainConfig;
use crate::model::RobotModel;
use crate::netcore::{read_f64_vec, read_u32, read_u64, write_f64_vec, DenseNet, RunningNorm};
use crate::{Error, Result};

use super::Agent;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"AMPC";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub model: RobotModel,
    pub iteration: u64,
    pub agent: Agent,
    pub discriminator: Discriminator,
}

fn write_str<W: Write>(w: &mut W, s: &str) -> Result<()> {
    w.write_all(&(s.len() as u64).to_le_bytes())?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn read_str<R: Read>(r: &mut R) -> Result<String> {
    let n = read_u64(r)? as usize;
    if n > 1 << 24 {
        return Err(Error::Checkpoint(format!("implausible string length {n}")));
    }
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf)
        .map_err(|e| Error::Checkpoint(format!("truncated data: {e}")))?;
    String::from_utf8(buf).map_err(|_| Error::Checkpoint("embedded text is not UTF-8".into()))
}

impl Checkpoint {
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        let a = &self.agent;
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        for d in [a.obs_dim(), a.act_dim(), self.discriminator.input_dim()] {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        w.write_all(&self.iteration.to_le_bytes())?;
        write_str(w, &self.config.to_toml_string())?;
        write_str(w, &self.model.to_toml_string())?;
        let flags = a.normalize_observations as u8 | (a.normalize_returns as u8) << 1;
        w.write_all(&[flags])?;
        write_f64_vec(w, &a.log_std)?;
        a.obs_norm.write_to(w)?;
        a.return_norm.write_to(w)?;
        a.policy.write_to(w)?;
        a.value.write_to(w)?;
        self.discriminator.write_to(w)
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)
            .map_err(|e| Error::Checkpoint(format!("truncated header: {e}")))?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("not a checkpoint (bad magic)".into()));
        }
        let version = read_u32(r)?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
        }
        let obs_dim = read_u32(r)? as usize;
        let act_dim = read_u32(r)? as usize;
        let disc_dim = read_u32(r)? as usize;
        let iteration = read_u64(r)?;
        let config = TrainConfig::from_toml_str(&read_str(r)?)
            .map_err(|e| Error::Checkpoint(format!("embedded config: {e}")))?;
        let model =
            RobotModel::from_toml_str(&read_str(r)?).map_err(|e| Error::Checkpoint(format!("embedded robot: {e}")))?;
        let mut flags = [0u8; 1];
        r.read_exact(&mut flags)
            .map_err(|e| Error::Checkpoint(format!("truncated data: {e}")))?;
        let log_std = read_f64_vec(r)?;
        let obs_norm = RunningNorm::read_from(r)?;
        let return_norm = RunningNorm::read_from(r)?;
        let policy = DenseNet::read_from(r)?;
        let value = DenseNet::read_from(r)?;
        let discriminator = Discriminator::read_from(r, &config.amp)?;
        let consistent = policy.input_dim() == obs_dim
            && value.input_dim() == obs_dim
            && value.output_dim() == 1
            && policy.output_dim() == act_dim
            && log_std.len() == act_dim
            && obs_norm.dim() == obs_dim
            && return_norm.dim() == 1
            && discriminator.input_dim() == disc_dim
            && disc_dim == 2 * model.discriminator_dim()
            && act_dim == model.joint_count();
        if !consistent {
            return Err(Error::Checkpoint("stored dimensions are inconsistent".into()));
        }
        let agent = Agent {
            policy,
            log_std,
            value,
            obs_norm,
            return_norm,
            normalize_observations: flags[0] & 1 != 0,
            normalize_returns: flags[0] & 2 != 0,
        };
        if !agent.is_finite() || !discriminator.net.is_finite() {
            return Err(Error::Checkpoint("checkpoint holds non-finite parameters".into()));
        }
        Ok(Checkpoint {
            config,
            model,
            iteration,
            agent,
            discriminator,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        Self::read_from(&mut r)
    }
}
