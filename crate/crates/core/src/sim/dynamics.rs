//! Floating-base planar rigid-body dynamics in generalized coordinates
//! `[x, z, pitch, q_1..q_n]`.
//!
//! The mass matrix is assembled from per-link Jacobians; velocity-product
//! terms come from a forward recursion of the centripetal accelerations with
//! all generalized accelerations set to zero. Angular Jacobians of a planar
//! chain are constant, so only the linear part carries bias terms.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::model::{add, perp, rotate, sub, FootContact, LinkFrame, RobotModel};
use crate::{Error, Result};

/// Any generalized coordinate or velocity beyond this magnitude (m, rad, m/s,
/// rad/s) means the integration has blown up, even while still finite.
pub const DIVERGENCE_BOUND: f64 = 1e3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContactParams {
    /// N/m
    pub stiffness: f64,
    /// N·s/m
    pub damping: f64,
    /// Coulomb coefficient.
    pub friction: f64,
    /// Viscous tangential coefficient before the Coulomb cap, N·s/m.
    pub tangential_damping: f64,
}

impl Default for ContactParams {
    fn default() -> Self {
        ContactParams {
            stiffness: 2e4,
            damping: 2e2,
            friction: 0.8,
            tangential_damping: 1e3,
        }
    }
}

/// Positions, velocities and velocity-product accelerations of every link
/// frame origin.
#[derive(Debug, Clone)]
pub struct Kinematics {
    pub frames: Vec<LinkFrame>,
    pub omega: Vec<f64>,
    pub velocity: Vec<[f64; 2]>,
    pub bias: Vec<[f64; 2]>,
}

impl Kinematics {
    pub fn new(model: &RobotModel, q: &[f64], v: &[f64]) -> Self {
        let n = model.links.len();
        let root = model.root_index();
        let mut k = Kinematics {
            frames: vec![
                LinkFrame {
                    origin: [q[0], q[1]],
                    angle: q[2],
                };
                n
            ],
            omega: vec![v[2]; n],
            velocity: vec![[v[0], v[1]]; n],
            bias: vec![[0.0; 2]; n],
        };
        k.frames[root] = LinkFrame {
            origin: [q[0], q[1]],
            angle: q[2],
        };
        for &j in model.joint_order() {
            let p = model.joint_parent(j);
            let c = model.joint_child(j);
            let pf = k.frames[p];
            let r = rotate(pf.angle, model.joints[j].origin);
            let w = k.omega[p];
            k.frames[c] = LinkFrame {
                origin: add(pf.origin, r),
                angle: pf.angle + q[3 + j],
            };
            let pv = perp(r);
            k.velocity[c] = [k.velocity[p][0] + w * pv[0], k.velocity[p][1] + w * pv[1]];
            k.bias[c] = [k.bias[p][0] - w * w * r[0], k.bias[p][1] - w * w * r[1]];
            k.omega[c] = w + v[3 + j];
        }
        k
    }

    pub fn point(&self, link: usize, local: [f64; 2]) -> [f64; 2] {
        let f = self.frames[link];
        add(f.origin, rotate(f.angle, local))
    }

    pub fn point_velocity(&self, link: usize, world: [f64; 2]) -> [f64; 2] {
        let r = sub(world, self.frames[link].origin);
        let w = self.omega[link];
        let pv = perp(r);
        [self.velocity[link][0] + w * pv[0], self.velocity[link][1] + w * pv[1]]
    }

    fn point_bias(&self, link: usize, world: [f64; 2]) -> [f64; 2] {
        let r = sub(world, self.frames[link].origin);
        let w2 = self.omega[link] * self.omega[link];
        [self.bias[link][0] - w2 * r[0], self.bias[link][1] - w2 * r[1]]
    }
}

/// Adds the generalized force of a world force `f` applied at world point `p`
/// on `link`.
fn apply_point_force(model: &RobotModel, k: &Kinematics, link: usize, p: [f64; 2], f: [f64; 2], gen: &mut [f64]) {
    let root = k.frames[model.root_index()].origin;
    gen[0] += f[0];
    gen[1] += f[1];
    let pr = perp(sub(p, root));
    gen[2] += pr[0] * f[0] + pr[1] * f[1];
    for &j in model.chain(link) {
        let pj = perp(sub(p, k.frames[model.joint_child(j)].origin));
        gen[3 + j] += pj[0] * f[0] + pj[1] * f[1];
    }
}

/// Linear Jacobian columns of a world point on `link`, as (column, vector).
fn point_jacobian(model: &RobotModel, k: &Kinematics, link: usize, p: [f64; 2]) -> Vec<(usize, [f64; 2])> {
    let root = k.frames[model.root_index()].origin;
    let mut cols = vec![(0, [1.0, 0.0]), (1, [0.0, 1.0]), (2, perp(sub(p, root)))];
    for &j in model.chain(link) {
        cols.push((3 + j, perp(sub(p, k.frames[model.joint_child(j)].origin))));
    }
    cols
}

pub fn mass_matrix(model: &RobotModel, k: &Kinematics) -> DMatrix<f64> {
    let n = model.dof();
    let mut m = DMatrix::zeros(n, n);
    for (b, link) in model.links.iter().enumerate() {
        let c = k.point(b, link.com);
        let cols = point_jacobian(model, k, b, c);
        for &(i, ji) in &cols {
            let rot_i = if i >= 2 { 1.0 } else { 0.0 };
            for &(l, jl) in &cols {
                let rot_l = if l >= 2 { 1.0 } else { 0.0 };
                m[(i, l)] += link.mass * (ji[0] * jl[0] + ji[1] * jl[1]) + link.inertia * rot_i * rot_l;
            }
        }
    }
    for (j, joint) in model.joints.iter().enumerate() {
        m[(3 + j, 3 + j)] += joint.armature;
    }
    m
}

/// Contact-point forces: (foot index, link, world point, world force).
fn contact_point_forces(
    model: &RobotModel,
    k: &Kinematics,
    params: &ContactParams,
) -> Vec<(usize, usize, [f64; 2], [f64; 2])> {
    let mut out = Vec::with_capacity(4);
    for (i, foot) in model.feet.iter().enumerate() {
        let link = model.foot_link(i);
        for local in [foot.heel, foot.toe] {
            let p = k.point(link, local);
            if p[1] >= 0.0 {
                continue;
            }
            let v = k.point_velocity(link, p);
            let normal = (params.stiffness * -p[1] - params.damping * v[1]).max(0.0);
            let cap = params.friction * normal;
            let tangential = (-params.tangential_damping * v[0]).clamp(-cap, cap);
            out.push((i, link, p, [tangential, normal]));
        }
    }
    out
}

pub fn foot_contacts(model: &RobotModel, k: &Kinematics, params: &ContactParams) -> [FootContact; 2] {
    let mut feet = [FootContact::default(); 2];
    for (i, _, _, f) in contact_point_forces(model, k, params) {
        feet[i].normal += f[1];
        feet[i].tangential += f[0];
    }
    feet
}

/// Inputs held constant across one physics step.
#[derive(Debug, Clone, Copy)]
pub struct Drive<'a> {
    pub torques: &'a [f64],
    /// Horizontal force on the root link's center of mass, N.
    pub external_force: f64,
    pub pinned_base: bool,
}

/// Generalized accelerations for state (q, v).
pub fn accelerations(
    model: &RobotModel,
    contact: &ContactParams,
    q: &[f64],
    v: &[f64],
    drive: &Drive,
) -> Result<Vec<f64>> {
    let k = Kinematics::new(model, q, v);
    let n = model.dof();
    let mut gen = vec![0.0; n];
    let g = [0.0, -model.gravity];
    for (b, link) in model.links.iter().enumerate() {
        let c = k.point(b, link.com);
        let a = k.point_bias(b, c);
        let f = [link.mass * (g[0] - a[0]), link.mass * (g[1] - a[1])];
        apply_point_force(model, &k, b, c, f, &mut gen);
    }
    for (j, joint) in model.joints.iter().enumerate() {
        gen[3 + j] += drive.torques[j] - joint.friction * v[3 + j];
    }
    for (_, link, p, f) in contact_point_forces(model, &k, contact) {
        apply_point_force(model, &k, link, p, f, &mut gen);
    }
    if drive.external_force != 0.0 {
        let root = model.root_index();
        let c = k.point(root, model.links[root].com);
        apply_point_force(model, &k, root, c, [drive.external_force, 0.0], &mut gen);
    }

    let m = mass_matrix(model, &k);
    let start = if drive.pinned_base { 3 } else { 0 };
    let sub_m = m.view((start, start), (n - start, n - start)).into_owned();
    let rhs = DVector::from_column_slice(&gen[start..]);
    let chol = sub_m
        .cholesky()
        .ok_or_else(|| Error::Numerical("mass matrix is not positive definite".into()))?;
    let sol = chol.solve(&rhs);
    let mut acc = vec![0.0; n];
    acc[start..].copy_from_slice(sol.as_slice());
    if acc.iter().any(|a| !a.is_finite()) {
        return Err(Error::Numerical("non-finite generalized acceleration".into()));
    }
    Ok(acc)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Integrator {
    #[default]
    SemiImplicitEuler,
    Rk4,
}

impl std::str::FromStr for Integrator {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "euler" | "semi_implicit_euler" => Ok(Integrator::SemiImplicitEuler),
            "rk4" => Ok(Integrator::Rk4),
            other => Err(format!("unknown integrator '{other}' (expected euler or rk4)")),
        }
    }
}

/// Advances (q, v) in place by `dt`.
pub fn integrate(
    model: &RobotModel,
    contact: &ContactParams,
    q: &mut [f64],
    v: &mut [f64],
    drive: &Drive,
    dt: f64,
    kind: Integrator,
) -> Result<()> {
    match kind {
        Integrator::SemiImplicitEuler => {
            let a = accelerations(model, contact, q, v, drive)?;
            for i in 0..q.len() {
                v[i] += dt * a[i];
                q[i] += dt * v[i];
            }
        }
        Integrator::Rk4 => {
            let n = q.len();
            let stage = |dq: &[f64], dv: &[f64], h: f64| -> (Vec<f64>, Vec<f64>) {
                let qs: Vec<f64> = (0..n).map(|i| q[i] + h * dq[i]).collect();
                let vs: Vec<f64> = (0..n).map(|i| v[i] + h * dv[i]).collect();
                (qs, vs)
            };
            let k1v = v.to_vec();
            let k1a = accelerations(model, contact, q, v, drive)?;
            let (q2, v2) = stage(&k1v, &k1a, 0.5 * dt);
            let k2a = accelerations(model, contact, &q2, &v2, drive)?;
            let (q3, v3) = stage(&v2, &k2a, 0.5 * dt);
            let k3a = accelerations(model, contact, &q3, &v3, drive)?;
            let (q4, v4) = stage(&v3, &k3a, dt);
            let k4a = accelerations(model, contact, &q4, &v4, drive)?;
            for i in 0..n {
                q[i] += dt / 6.0 * (k1v[i] + 2.0 * v2[i] + 2.0 * v3[i] + v4[i]);
                v[i] += dt / 6.0 * (k1a[i] + 2.0 * k2a[i] + 2.0 * k3a[i] + k4a[i]);
            }
        }
    }
    if q.iter().chain(v.iter()).any(|x| !(x.abs() < DIVERGENCE_BOUND)) {
        return Err(Error::Numerical("simulation state diverged".into()));
    }
    Ok(())
}

/// Kinetic, gravitational and contact-spring energy.
pub fn mechanical_energy(model: &RobotModel, contact: &ContactParams, q: &[f64], v: &[f64]) -> f64 {
    let k = Kinematics::new(model, q, v);
    let m = mass_matrix(model, &k);
    let vv = DVector::from_column_slice(v);
    let kinetic = 0.5 * vv.dot(&(&m * &vv));
    let mut potential = 0.0;
    for (b, link) in model.links.iter().enumerate() {
        potential += link.mass * model.gravity * k.point(b, link.com)[1];
    }
    for (i, foot) in model.feet.iter().enumerate() {
        for local in [foot.heel, foot.toe] {
            let p = k.point(model.foot_link(i), local);
            if p[1] < 0.0 {
                potential += 0.5 * contact.stiffness * p[1] * p[1];
            }
        }
    }
    kinetic + potential
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::build_default_model;

    /// Link COM position as an explicit function of generalized coordinates,
    /// for finite-difference Jacobians.
    fn com_positions(model: &RobotModel, q: &[f64]) -> Vec<[f64; 2]> {
        let frames = model.link_frames([q[0], q[1]], q[2], &q[3..]);
        model
            .links
            .iter()
            .enumerate()
            .map(|(b, l)| model.point_on(&frames, b, l.com))
            .collect()
    }

    #[test]
    fn runaway_velocity_is_a_numerical_failure() {
        let model = build_default_model();
        let mut q = vec![0.0, 5.0, 0.0];
        q.extend(model.default_pose());
        let mut v = vec![0.0; q.len()];
        v[3] = 2.0 * DIVERGENCE_BOUND;
        let zero = vec![0.0; model.joint_count()];
        let drive = Drive {
            torques: &zero,
            external_force: 0.0,
            pinned_base: false,
        };
        let err = integrate(
            &model,
            &ContactParams::default(),
            &mut q,
            &mut v,
            &drive,
            1e-3,
            Integrator::Rk4,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Numerical(_)));
    }

    #[test]
    fn mass_matrix_matches_kinetic_energy_by_differences() {
        let model = build_default_model();
        let q: Vec<f64> = vec![0.1, 0.7, 0.2, 0.3, -0.5, 0.1, -0.2, -0.9, 0.3];
        let v: Vec<f64> = vec![0.4, -0.2, 0.5, 1.0, -2.0, 0.3, -0.7, 1.1, 0.9];
        let h = 1e-6;
        // kinetic energy from finite-difference link velocities
        let plus: Vec<f64> = q.iter().zip(&v).map(|(a, b)| a + h * b).collect();
        let minus: Vec<f64> = q.iter().zip(&v).map(|(a, b)| a - h * b).collect();
        let (cp, cm) = (com_positions(&model, &plus), com_positions(&model, &minus));
        let mut ke = 0.0;
        for (b, link) in model.links.iter().enumerate() {
            let vel = [(cp[b][0] - cm[b][0]) / (2.0 * h), (cp[b][1] - cm[b][1]) / (2.0 * h)];
            let frames_p = model.link_frames([plus[0], plus[1]], plus[2], &plus[3..]);
            let frames_m = model.link_frames([minus[0], minus[1]], minus[2], &minus[3..]);
            let w = (frames_p[b].angle - frames_m[b].angle) / (2.0 * h);
            ke += 0.5 * link.mass * (vel[0] * vel[0] + vel[1] * vel[1]) + 0.5 * link.inertia * w * w;
        }
        for (j, joint) in model.joints.iter().enumerate() {
            ke += 0.5 * joint.armature * v[3 + j] * v[3 + j];
        }
        let k = Kinematics::new(&model, &q, &v);
        let m = mass_matrix(&model, &k);
        let vv = DVector::from_column_slice(&v);
        let ke_m = 0.5 * vv.dot(&(&m * &vv));
        assert!((ke - ke_m).abs() < 1e-7 * ke.max(1.0), "{ke} vs {ke_m}");
        assert!((&m - m.transpose()).abs().max() < 1e-12);
    }

    #[test]
    fn bias_matches_com_acceleration_differences() {
        // with zero generalized acceleration, d²c/dt² along the trajectory
        // q(t) = q0 + v t equals the velocity-product bias
        let model = build_default_model();
        let q: Vec<f64> = vec![0.0, 0.7, -0.3, 0.4, -0.8, 0.2, -0.1, -0.4, 0.5];
        let v: Vec<f64> = vec![0.2, 0.1, 1.5, -2.0, 3.0, 1.0, 0.5, -1.5, 2.5];
        let h = 1e-4;
        let at = |t: f64| -> Vec<f64> { q.iter().zip(&v).map(|(a, b)| a + t * b).collect() };
        let (c0, cp, cm) = (
            com_positions(&model, &q),
            com_positions(&model, &at(h)),
            com_positions(&model, &at(-h)),
        );
        let k = Kinematics::new(&model, &q, &v);
        for (b, link) in model.links.iter().enumerate() {
            let fd = [
                (cp[b][0] - 2.0 * c0[b][0] + cm[b][0]) / (h * h),
                (cp[b][1] - 2.0 * c0[b][1] + cm[b][1]) / (h * h),
            ];
            let c = k.point(b, link.com);
            let a = k.point_bias(b, c);
            assert!(
                (fd[0] - a[0]).abs() < 1e-4 && (fd[1] - a[1]).abs() < 1e-4,
                "{b}: {fd:?} vs {a:?}"
            );
        }
    }

    #[test]
    fn contact_laws() {
        let model = build_default_model();
        let params = ContactParams::default();
        let mut q = vec![0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        // rest pose: soles 0.65 m below the base
        q[1] = 0.66;
        let k = Kinematics::new(&model, &q, &[0.0; 9]);
        assert_eq!(foot_contacts(&model, &k, &params), [FootContact::default(); 2]);

        let p = 0.002;
        q[1] = 0.65 - p;
        let k = Kinematics::new(&model, &q, &[0.0; 9]);
        let f = foot_contacts(&model, &k, &params);
        // heel and toe both penetrate
        assert!((f[0].normal - 2.0 * params.stiffness * p).abs() < 1e-9);
        assert_eq!(f[0].tangential, 0.0);

        // sliding fast: tangential saturates at μN
        let mut v = vec![0.0; 9];
        v[0] = 5.0;
        let k = Kinematics::new(&model, &q, &v);
        let f = foot_contacts(&model, &k, &params);
        assert!((f[0].tangential + params.friction * f[0].normal).abs() < 1e-9);
    }
}
