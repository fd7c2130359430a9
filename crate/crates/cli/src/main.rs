//! `amploco`: train, evaluate and inspect AMP locomotion policies.
//!
//! Exit codes: 0 success, 1 other failure (I/O), 2 configuration or input
//! error, 3 numerical failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};

use amp_locomotion::config::TrainConfig;
use amp_locomotion::mocap::{default_gaits, load_clip, synth_gait, ClipSchema, MotionClip};
use amp_locomotion::ppo::{evaluate, read_metrics, train, Checkpoint, Deterministic, MetricsRow};
use amp_locomotion::sim::crossval::crossval;
use amp_locomotion::sim::{ActionSource, Integrator};
use amp_locomotion::Error;

#[derive(Debug, Parser)]
#[command(name = "amploco", version, about = "Adversarial motion prior locomotion training")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a policy and write metrics and checkpoints.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the seed in the config file.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "run")]
        out: PathBuf,
    },
    /// Roll out a checkpoint and report its command-tracking reward.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        steps: usize,
        #[arg(long)]
        integrator: Option<Integrator>,
        #[arg(long)]
        envs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Act with the policy mean.
        #[arg(long)]
        deterministic: bool,
        /// Trajectory CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a checkpoint under semi-implicit Euler and RK4 and report the
    /// per-step divergence.
    Crossval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 300)]
        steps: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        deterministic: bool,
        /// Divergence CSV; printed to stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Turn a metrics table into plot-ready tables.
    Plot {
        #[arg(long)]
        metrics: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Motion clip utilities.
    Clips {
        #[command(subcommand)]
        command: ClipsCommand,
    },
}

#[derive(Debug, Subcommand)]
enum ClipsCommand {
    /// Check clip invariants and print per-clip statistics.
    Validate {
        /// Supplies the robot, clip files and loop tolerance.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Clip files to check instead of the configured set.
        files: Vec<PathBuf>,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Numerical(_) => 3,
        Error::Io(_) => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train { config, seed, out } => cmd_train(&config, seed, &out),
        Command::Eval {
            checkpoint,
            steps,
            integrator,
            envs,
            seed,
            deterministic,
            out,
        } => cmd_eval(
            &checkpoint,
            steps,
            integrator,
            envs,
            seed,
            deterministic,
            out.as_deref(),
        ),
        Command::Crossval {
            checkpoint,
            steps,
            seed,
            deterministic,
            out,
        } => cmd_crossval(&checkpoint, steps, seed, deterministic, out.as_deref()),
        Command::Plot { metrics, out } => cmd_plot(&metrics, &out),
        Command::Clips {
            command: ClipsCommand::Validate { config, files },
        } => cmd_clips_validate(config.as_deref(), &files),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn cmd_train(config: &Path, seed: Option<u64>, out: &Path) -> Result<(), Error> {
    let mut cfg = TrainConfig::load(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let total = cfg.train.iterations;
    let summary = train(&cfg, Some(out), |r: &MetricsRow| {
        eprintln!(
            "iter {:>5}/{total}  return {:>9.2}  length {:>7.1}  reward/step {:.3}  command {:.3}  imitation {:.3}  kl {:.4}",
            r.iteration, r.mean_return, r.mean_episode_length, r.mean_reward, r.command_reward, r.imitation_reward, r.ppo.approx_kl
        );
    })?;
    println!(
        "trained {} iterations; metrics in {}, final checkpoint {}",
        summary.metrics.len(),
        out.join("metrics.csv").display(),
        out.join("checkpoint_final.bin").display()
    );
    Ok(())
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint, Error> {
    Checkpoint::load(path).map_err(|e| match e {
        Error::Io(io) => Error::Checkpoint(format!("cannot read {}: {io}", path.display())),
        other => other,
    })
}

fn cmd_eval(
    path: &Path,
    steps: usize,
    integrator: Option<Integrator>,
    envs: Option<usize>,
    seed: Option<u64>,
    deterministic: bool,
    out: Option<&Path>,
) -> Result<(), Error> {
    let ck = load_checkpoint(path)?;
    let mut settings = ck.config.env_settings(ck.model.clone())?;
    if let Some(i) = integrator {
        settings.sim.integrator = i;
    }
    let envs = envs.unwrap_or(ck.config.eval.envs);
    let seed = seed.unwrap_or(ck.config.seed);
    let deterministic = deterministic || ck.config.eval.deterministic;
    let report = evaluate(&ck.agent, Arc::new(settings.clone()), envs, steps, seed, deterministic)?;
    if let Some(p) = out {
        fs::write(p, report.to_csv(settings.act_dim()))?;
    }
    println!("checkpoint iteration: {}", ck.iteration);
    println!("integrator: {:?}", settings.sim.integrator);
    println!("envs: {envs}  steps: {steps}  seed: {seed}  deterministic: {deterministic}");
    println!("mean command reward: {:.6}", report.mean_command_reward);
    println!("survival fraction: {:.4}", report.survival);
    println!("falls: {}", report.falls);
    Ok(())
}

fn cmd_crossval(
    path: &Path,
    steps: usize,
    seed: Option<u64>,
    deterministic: bool,
    out: Option<&Path>,
) -> Result<(), Error> {
    let ck = load_checkpoint(path)?;
    let settings = ck.config.env_settings(ck.model.clone())?;
    let det = Deterministic(&ck.agent);
    let policy: &dyn ActionSource = if deterministic { &det } else { &ck.agent };
    let seed = seed.unwrap_or(ck.config.seed);
    let report = crossval(
        &settings,
        policy,
        seed,
        steps,
        Integrator::SemiImplicitEuler,
        Integrator::Rk4,
    )?;
    match out {
        Some(p) => fs::write(p, report.to_csv())?,
        None => print!("{}", report.to_csv()),
    }
    eprintln!(
        "euler vs rk4 over {} steps: max root divergence {:.3e} m, max joint divergence {:.3e} rad{}",
        report.rows.len() - 1,
        report.max_root_position,
        report.max_joint_angle,
        if report.ended_early {
            " (an episode ended early)"
        } else {
            ""
        }
    );
    Ok(())
}

/// Tables written by `plot`. Return is divided by the run's own maximum
/// mean return, recorded in `metadata.toml`.
fn cmd_plot(metrics: &Path, out: &Path) -> Result<(), Error> {
    let rows = read_metrics(metrics)?;
    if rows.is_empty() {
        return Err(Error::Config(format!("{} has no rows", metrics.display())));
    }
    fs::create_dir_all(out)?;
    let max_return = rows.iter().map(|r| r.mean_return).fold(f64::NEG_INFINITY, f64::max);
    let (denominator, normalization) = if max_return > 0.0 {
        (max_return, "mean_return divided by the largest mean_return of this run")
    } else {
        (1.0, "none: the run never had a positive mean_return")
    };
    let mut ret = String::from("iteration,env_steps,mean_return,normalized_return\n");
    let mut len = String::from("iteration,env_steps,mean_episode_length\n");
    let mut rew = String::from("iteration,mean_reward,command_reward,imitation_reward\n");
    let mut disc = String::from("iteration,expert_loss,policy_loss,gradient_penalty,demo_score,policy_score\n");
    let mut ppo = String::from("iteration,policy_loss,value_loss,entropy,approx_kl,clip_fraction,mean_log_std\n");
    for r in &rows {
        ret += &format!(
            "{},{},{},{}\n",
            r.iteration,
            r.env_steps,
            r.mean_return,
            r.mean_return / denominator
        );
        len += &format!("{},{},{}\n", r.iteration, r.env_steps, r.mean_episode_length);
        rew += &format!(
            "{},{},{},{}\n",
            r.iteration, r.mean_reward, r.command_reward, r.imitation_reward
        );
        let a = &r.amp;
        disc += &format!(
            "{},{},{},{},{},{}\n",
            r.iteration, a.expert, a.policy, a.gradient_penalty, a.demo_score, a.policy_score
        );
        let p = &r.ppo;
        ppo += &format!(
            "{},{},{},{},{},{},{}\n",
            r.iteration, p.policy_loss, p.value_loss, p.entropy, p.approx_kl, p.clip_fraction, r.mean_log_std
        );
    }
    fs::write(out.join("return.csv"), ret)?;
    fs::write(out.join("episode_length.csv"), len)?;
    fs::write(out.join("rewards.csv"), rew)?;
    fs::write(out.join("discriminator.csv"), disc)?;
    fs::write(out.join("ppo.csv"), ppo)?;
    let meta = format!(
        "source = {:?}\nrows = {}\nreturn_normalization = {:?}\nreturn_normalizer = {}\nmax_mean_return = {}\n",
        metrics.display().to_string(),
        rows.len(),
        normalization,
        denominator,
        max_return
    );
    fs::write(out.join("metadata.toml"), meta)?;
    println!("wrote 5 tables and metadata.toml to {}", out.display());
    Ok(())
}

fn clip_stats(clip: &MotionClip) -> String {
    let gap = if clip.looped {
        let (a, b) = (&clip.frames[0].q, &clip.frames[clip.frames.len() - 1].q);
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    } else {
        0.0
    };
    let max_speed = clip
        .frames
        .iter()
        .flat_map(|f| f.qd.iter())
        .fold(0.0f64, |m, v| m.max(v.abs()));
    format!(
        "frames {:>5}  rate {:>6.1} Hz  duration {:>6.3} s  loop {:<5}  transitions {:>5}  loop gap {:.4} rad  max |qd| {:.3} rad/s",
        clip.frames.len(),
        clip.frame_rate,
        clip.duration(),
        clip.looped,
        clip.transition_count(),
        gap,
        max_speed
    )
}

fn cmd_clips_validate(config: Option<&Path>, files: &[PathBuf]) -> Result<(), Error> {
    let cfg = match config {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::default(),
    };
    let model = cfg.model()?;
    let schema = ClipSchema::of(&model);
    let tol = cfg.clips.loop_tolerance;
    let mut candidates: Vec<(String, Result<MotionClip, Error>)> = Vec::new();
    let paths = if files.is_empty() {
        cfg.clips.files.clone()
    } else {
        files.to_vec()
    };
    for f in &paths {
        candidates.push((f.display().to_string(), load_clip(f, &schema)));
    }
    if files.is_empty() && cfg.clips.synthetic {
        for spec in default_gaits() {
            let name = format!("synthetic period {} s", spec.period);
            candidates.push((name, synth_gait(&spec, &model, cfg.clips.synthetic_rate)));
        }
    }
    let mut failures = 0;
    for (source, clip) in candidates {
        match clip.and_then(|c| c.validate(&schema, tol).map(|_| c).map_err(Error::from)) {
            Ok(c) => println!("ok    {:<28} {}  ({source})", c.name, clip_stats(&c)),
            Err(e) => {
                failures += 1;
                println!("FAIL  {source}: {e}");
            }
        }
    }
    if failures > 0 {
        return Err(Error::Config(format!("{failures} clip(s) failed validation")));
    }
    Ok(())
}
