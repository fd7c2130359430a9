//! Runs one policy under two integrators and reports how far the
//! trajectories drift apart.

use std::fmt::Write as _;
use std::sync::Arc;

use super::dynamics::{integrate, ContactParams, Drive, Integrator};
use super::{ActionSource, EnvSettings, Episode};
use crate::model::{build_default_model, RobotModel};
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DivergenceRow {
    pub step: usize,
    /// s
    pub time: f64,
    /// Euclidean distance between root positions, m.
    pub root_position: f64,
    /// |Δ pitch|, rad.
    pub root_pitch: f64,
    /// Largest |Δ q_j| over joints, rad.
    pub joint_angle: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DivergenceReport {
    pub integrators: (Integrator, Integrator),
    pub rows: Vec<DivergenceRow>,
    pub max_root_position: f64,
    pub max_joint_angle: f64,
    /// Set when either run ended its episode before the horizon.
    pub ended_early: bool,
}

impl DivergenceReport {
    fn from_rows(integrators: (Integrator, Integrator), rows: Vec<DivergenceRow>, ended_early: bool) -> Self {
        let max_root_position = rows.iter().map(|r| r.root_position).fold(0.0, f64::max);
        let max_joint_angle = rows.iter().map(|r| r.joint_angle).fold(0.0, f64::max);
        DivergenceReport {
            integrators,
            rows,
            max_root_position,
            max_joint_angle,
            ended_early,
        }
    }

    pub const CSV_HEADER: &'static str = "step,time,root_position,root_pitch,joint_angle";

    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::CSV_HEADER);
        s.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{:e},{:e},{:e}",
                r.step, r.time, r.root_position, r.root_pitch, r.joint_angle
            );
        }
        s
    }
}

fn divergence(step: usize, time: f64, a: &[f64], b: &[f64]) -> DivergenceRow {
    DivergenceRow {
        step,
        time,
        root_position: (a[0] - b[0]).hypot(a[1] - b[1]),
        root_pitch: (a[2] - b[2]).abs(),
        joint_angle: a[3..]
            .iter()
            .zip(&b[3..])
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max),
    }
}

/// Steps the same policy and seed under integrators `a` and `b` for up to
/// `steps` control steps (stops when either episode ends).
pub fn crossval(
    settings: &EnvSettings,
    policy: &dyn ActionSource,
    seed: u64,
    steps: usize,
    a: Integrator,
    b: Integrator,
) -> Result<DivergenceReport> {
    let make = |kind: Integrator| -> Result<Episode> {
        let mut s = settings.clone();
        s.sim.integrator = kind;
        Episode::new(Arc::new(s), 0, seed)
    };
    let (mut ea, mut eb) = (make(a)?, make(b)?);
    let ctrl_dt = settings.sim.control_dt();
    let mut rows = vec![divergence(
        0,
        0.0,
        &ea.state().generalized_positions(),
        &eb.state().generalized_positions(),
    )];
    let mut ended_early = false;
    for step in 1..=steps {
        let (act_a, _, _) = policy.act(&ea.observation().0.clone(), ea.policy_rng())?;
        let (act_b, _, _) = policy.act(&eb.observation().0.clone(), eb.policy_rng())?;
        let oa = ea.step(&act_a)?;
        let ob = eb.step(&act_b)?;
        rows.push(divergence(
            step,
            step as f64 * ctrl_dt,
            &ea.state().generalized_positions(),
            &eb.state().generalized_positions(),
        ));
        if oa.done() || ob.done() {
            ended_early = step < steps;
            break;
        }
    }
    Ok(DivergenceReport::from_rows((a, b), rows, ended_early))
}

/// Initial configuration of the passive calibration swing: base pinned high
/// above the ground, hips and knees displaced from rest.
pub fn pendulum_initial_state(model: &RobotModel) -> Vec<f64> {
    let mut q = vec![0.0, 2.0, 0.0];
    q.extend_from_slice(&model.default_pose());
    q[3] = 0.8;
    q[4] = -0.5;
    q[6] = -0.4;
    q[7] = -0.2;
    q
}

/// Passive (zero-torque) pinned-base trajectory sampled every `sample_every`
/// physics steps, including the initial configuration.
pub fn passive_trajectory(
    model: &RobotModel,
    q0: &[f64],
    dt: f64,
    steps: usize,
    sample_every: usize,
    kind: Integrator,
) -> Result<Vec<Vec<f64>>> {
    let mut q = q0.to_vec();
    let mut v = vec![0.0; q.len()];
    let zero = vec![0.0; model.joint_count()];
    let drive = Drive {
        torques: &zero,
        external_force: 0.0,
        pinned_base: true,
    };
    let contact = ContactParams::default();
    let mut out = vec![q.clone()];
    for i in 1..=steps {
        integrate(model, &contact, &mut q, &mut v, &drive, dt, kind)?;
        if i % sample_every == 0 {
            out.push(q.clone());
        }
    }
    Ok(out)
}

/// Euler versus RK4 on the passive pendulum swing of the default model over
/// `horizon` seconds at timestep `dt`.
pub fn pendulum_calibration(dt: f64, horizon: f64) -> Result<DivergenceReport> {
    let model = build_default_model();
    let q0 = pendulum_initial_state(&model);
    let steps = (horizon / dt).round() as usize;
    let ea = passive_trajectory(&model, &q0, dt, steps, 1, Integrator::SemiImplicitEuler)?;
    let rk = passive_trajectory(&model, &q0, dt, steps, 1, Integrator::Rk4)?;
    let rows = ea
        .iter()
        .zip(&rk)
        .enumerate()
        .map(|(i, (a, b))| divergence(i, i as f64 * dt, a, b))
        .collect();
    Ok(DivergenceReport::from_rows(
        (Integrator::SemiImplicitEuler, Integrator::Rk4),
        rows,
        false,
    ))
}
