//! Geodesic shooting of control points under the Hamiltonian
//! `H(q, p) = 1/2 sum_ij <p_i, p_j> K_V(q_i, q_j)`, integrated with RK4 on
//! `[0, 1]`, and the registration objective `J(p0) = 2 lambda H(q0, p0) +
//! D(phi_1(S), T)` with its exact discrete gradient.
//!
//! The gradient differentiates the RK4 map itself (discretize, then
//! optimize), so it agrees with finite differences of [`Objective::value`]
//! up to rounding.

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::dissimilarity::DataTerm;
use crate::error::{Error, Result};
use crate::geometry::{DiscreteShape, Geometry, Vec3};
use crate::kernels::{dist2, dot, DeformationKernel};

pub const DEFAULT_TIME_STEPS: usize = 10;

/// Initial momenta, one vector per control point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Momenta(pub Vec<Vec3>);

impl Momenta {
    pub fn zeros(n: usize) -> Self {
        Momenta(vec![Vec3::zeros(); n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.0.iter().flat_map(|v| [v.x, v.y, v.z]).collect()
    }

    pub fn from_flat(flat: &[f64]) -> Self {
        Momenta(flat.chunks_exact(3).map(|c| Vec3::new(c[0], c[1], c[2])).collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShootingConfig {
    pub time_steps: usize,
    pub kernel: DeformationKernel,
}

impl ShootingConfig {
    pub fn new(time_steps: usize, kernel: DeformationKernel) -> Result<Self> {
        if time_steps == 0 {
            return Err(Error::InvalidConfig("time_steps must be at least 1".into()));
        }
        Ok(Self { time_steps, kernel })
    }

    fn dt(&self) -> f64 {
        1.0 / self.time_steps as f64
    }
}

/// Control points and momenta at `t = k / time_steps`, `k = 0..=time_steps`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub q: Vec<Vec<Vec3>>,
    pub p: Vec<Vec<Vec3>>,
}

impl Trajectory {
    pub fn final_points(&self) -> &[Vec3] {
        self.q.last().expect("trajectory has at least one state")
    }

    pub fn initial_points(&self) -> &[Vec3] {
        &self.q[0]
    }

    pub fn initial_momenta(&self) -> &[Vec3] {
        &self.p[0]
    }
}

fn check_sizes(q: &[Vec3], p: &[Vec3]) -> Result<()> {
    if q.len() != p.len() {
        return Err(Error::SizeMismatch {
            expected: q.len(),
            found: p.len(),
        });
    }
    Ok(())
}

/// `v(x) = sum_j K_V(x, q_j) p_j` at every query point.
pub fn velocity_at(points: &[Vec3], q: &[Vec3], p: &[Vec3], kernel: &DeformationKernel) -> Result<Vec<Vec3>> {
    check_sizes(q, p)?;
    Ok(velocity_unchecked(points, q, p, kernel))
}

fn velocity_unchecked(points: &[Vec3], q: &[Vec3], p: &[Vec3], kernel: &DeformationKernel) -> Vec<Vec3> {
    points
        .iter()
        .map(|x| {
            let mut v = Vec3::zeros();
            for (qj, pj) in q.iter().zip(p) {
                v += pj * kernel.value_r2(dist2(x, qj));
            }
            v
        })
        .collect()
}

pub fn hamiltonian(q: &[Vec3], p: &[Vec3], kernel: &DeformationKernel) -> Result<f64> {
    check_sizes(q, p)?;
    let mut h = 0.0;
    for (qi, pi) in q.iter().zip(p) {
        for (qj, pj) in q.iter().zip(p) {
            h += dot(pi, pj) * kernel.value_r2(dist2(qi, qj));
        }
    }
    Ok(0.5 * h)
}

/// `-dH/dq_i = 2 sum_j <p_i, p_j> A_ij (q_i - q_j)`.
fn momentum_rate(q: &[Vec3], p: &[Vec3], kernel: &DeformationKernel) -> Vec<Vec3> {
    q.iter()
        .zip(p)
        .map(|(qi, pi)| {
            let mut f = Vec3::zeros();
            for (qj, pj) in q.iter().zip(p) {
                let d = qi - qj;
                let a = kernel.radial_r2(dist2(qi, qj)).a;
                f += d * (2.0 * dot(pi, pj) * a);
            }
            f
        })
        .collect()
}

/// Hamiltonian vector field, optionally carrying passive points along.
fn field(q: &[Vec3], p: &[Vec3], x: &[Vec3], kernel: &DeformationKernel) -> (Vec<Vec3>, Vec<Vec3>, Vec<Vec3>) {
    let dq = velocity_unchecked(q, q, p, kernel);
    let dp = momentum_rate(q, p, kernel);
    let dx = velocity_unchecked(x, q, p, kernel);
    (dq, dp, dx)
}

fn axpy(base: &[Vec3], dir: &[Vec3], h: f64) -> Vec<Vec3> {
    base.iter().zip(dir).map(|(b, d)| b + d * h).collect()
}

fn rk4_combine(base: &[Vec3], k: [&[Vec3]; 4], h: f64) -> Vec<Vec3> {
    (0..base.len())
        .map(|i| base[i] + (k[0][i] + k[1][i] * 2.0 + k[2][i] * 2.0 + k[3][i]) * (h / 6.0))
        .collect()
}

struct State {
    q: Vec<Vec3>,
    p: Vec<Vec3>,
    x: Vec<Vec3>,
}

/// One RK4 step of size `h` (negative to integrate backwards).
fn rk4_step(s: &State, h: f64, kernel: &DeformationKernel) -> State {
    let (q1, p1, x1) = field(&s.q, &s.p, &s.x, kernel);
    let (q2, p2, x2) = field(
        &axpy(&s.q, &q1, h / 2.0),
        &axpy(&s.p, &p1, h / 2.0),
        &axpy(&s.x, &x1, h / 2.0),
        kernel,
    );
    let (q3, p3, x3) = field(
        &axpy(&s.q, &q2, h / 2.0),
        &axpy(&s.p, &p2, h / 2.0),
        &axpy(&s.x, &x2, h / 2.0),
        kernel,
    );
    let (q4, p4, x4) = field(&axpy(&s.q, &q3, h), &axpy(&s.p, &p3, h), &axpy(&s.x, &x3, h), kernel);
    State {
        q: rk4_combine(&s.q, [&q1, &q2, &q3, &q4], h),
        p: rk4_combine(&s.p, [&p1, &p2, &p3, &p4], h),
        x: rk4_combine(&s.x, [&x1, &x2, &x3, &x4], h),
    }
}

fn all_finite(vs: &[Vec3]) -> bool {
    vs.iter().all(|v| v.iter().all(|c| c.is_finite()))
}

fn integrate(start: State, h: f64, steps: usize, kernel: &DeformationKernel, mut visit: impl FnMut(&State)) -> Result<State> {
    let mut state = start;
    for step in 0..steps {
        state = rk4_step(&state, h, kernel);
        if !(all_finite(&state.q) && all_finite(&state.p) && all_finite(&state.x)) {
            return Err(Error::NonFinite { step: step + 1 });
        }
        visit(&state);
    }
    Ok(state)
}

/// Integrates the geodesic equations from `(q0, p0)` over `[0, 1]`.
pub fn shoot(q0: &[Vec3], p0: &[Vec3], cfg: &ShootingConfig) -> Result<Trajectory> {
    check_sizes(q0, p0)?;
    if !(all_finite(q0) && all_finite(p0)) {
        return Err(Error::NonFinite { step: 0 });
    }
    let mut traj = Trajectory {
        q: vec![q0.to_vec()],
        p: vec![p0.to_vec()],
    };
    let start = State {
        q: q0.to_vec(),
        p: p0.to_vec(),
        x: Vec::new(),
    };
    integrate(start, cfg.dt(), cfg.time_steps, &cfg.kernel, |s| {
        traj.q.push(s.q.clone());
        traj.p.push(s.p.clone());
    })?;
    Ok(traj)
}

/// Advects arbitrary points through the flow of a shot trajectory. The
/// control-point part is re-integrated alongside with the same operations,
/// so a point placed on a control point follows it bit for bit.
pub fn flow_points(extra: &[Vec3], traj: &Trajectory, cfg: &ShootingConfig) -> Result<Vec<Vec3>> {
    let start = State {
        q: traj.q[0].clone(),
        p: traj.p[0].clone(),
        x: extra.to_vec(),
    };
    Ok(integrate(start, cfg.dt(), cfg.time_steps, &cfg.kernel, |_| {})?.x)
}

/// `(q, p)` at the four RK4 stages of a step from `(q, p)` with size `h`.
fn stage_states(q: &[Vec3], p: &[Vec3], h: f64, kernel: &DeformationKernel) -> [(Vec<Vec3>, Vec<Vec3>); 4] {
    let (q1, p1, _) = field(q, p, &[], kernel);
    let s2 = (axpy(q, &q1, h / 2.0), axpy(p, &p1, h / 2.0));
    let (q2, p2, _) = field(&s2.0, &s2.1, &[], kernel);
    let s3 = (axpy(q, &q2, h / 2.0), axpy(p, &p2, h / 2.0));
    let (q3, p3, _) = field(&s3.0, &s3.1, &[], kernel);
    let s4 = (axpy(q, &q3, h), axpy(p, &p3, h));
    [(q.to_vec(), p.to_vec()), s2, s3, s4]
}

/// Velocity at `x` and its Jacobian.
fn velocity_jacobian(x: &Vec3, q: &[Vec3], p: &[Vec3], kernel: &DeformationKernel) -> (Vec3, Matrix3<f64>) {
    let mut v = Vec3::zeros();
    let mut jac = Matrix3::zeros();
    for (qj, pj) in q.iter().zip(p) {
        let d = x - qj;
        let t = kernel.radial_r2(d.norm_squared());
        v += pj * t.value;
        jac -= pj * d.transpose() * (2.0 * t.a);
    }
    (v, jac)
}

/// One RK4 step of a passive point through given stage states, with the
/// Jacobian of the step map.
fn point_step(x: &Vec3, stages: &[(Vec<Vec3>, Vec<Vec3>); 4], h: f64, kernel: &DeformationKernel) -> (Vec3, Matrix3<f64>) {
    let id = Matrix3::identity();
    let (k1, j1) = velocity_jacobian(x, &stages[0].0, &stages[0].1, kernel);
    let (k2, j2) = velocity_jacobian(&(x + k1 * (h / 2.0)), &stages[1].0, &stages[1].1, kernel);
    let j2 = j2 * (id + j1 * (h / 2.0));
    let (k3, j3) = velocity_jacobian(&(x + k2 * (h / 2.0)), &stages[2].0, &stages[2].1, kernel);
    let j3 = j3 * (id + j2 * (h / 2.0));
    let (k4, j4) = velocity_jacobian(&(x + k3 * h), &stages[3].0, &stages[3].1, kernel);
    let j4 = j4 * (id + j3 * h);
    let y = x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
    (y, id + (j1 + j2 * 2.0 + j3 * 2.0 + j4) * (h / 6.0))
}

const INVERSION_MAX_ITERS: usize = 50;

/// Inverse of [`flow_points`]: maps points at `t = 1` back to `t = 0`.
///
/// Each forward RK4 step is undone by solving `step(x) = y` with Newton's
/// method, started from an RK4 step with negated time. The result inverts
/// the discrete flow up to rounding rather than up to the integrator's
/// truncation error.
pub fn reverse_flow_points(points: &[Vec3], traj: &Trajectory, cfg: &ShootingConfig) -> Result<Vec<Vec3>> {
    let h = cfg.dt();
    let kernel = &cfg.kernel;
    let mut xs = points.to_vec();
    for step in (0..cfg.time_steps).rev() {
        let stages = stage_states(&traj.q[step], &traj.p[step], h, kernel);
        let back = rk4_step(
            &State {
                q: traj.q[step + 1].clone(),
                p: traj.p[step + 1].clone(),
                x: xs.clone(),
            },
            -h,
            kernel,
        );
        for (y, guess) in xs.iter_mut().zip(back.x) {
            let target = *y;
            let scale = target.amax().max(1.0);
            let mut x = guess;
            let mut converged = false;
            for _ in 0..INVERSION_MAX_ITERS {
                let (fx, jac) = point_step(&x, &stages, h, kernel);
                let residual = fx - target;
                if residual.amax() <= 4.0 * f64::EPSILON * scale {
                    converged = true;
                    break;
                }
                let Some(delta) = jac.lu().solve(&residual) else {
                    break;
                };
                x -= delta;
                if !all_finite(std::slice::from_ref(&x)) {
                    break;
                }
            }
            if !converged {
                let (fx, _) = point_step(&x, &stages, h, kernel);
                if !((fx - target).amax() <= 1e-12 * scale) {
                    return Err(Error::FlowInversion { step: step + 1 });
                }
            }
            *y = x;
        }
    }
    Ok(xs)
}

/// Transposed Jacobian of the Hamiltonian field applied to the cotangent
/// `(a, b)` of `(dq/dt, dp/dt)`. Returns the cotangent of `(q, p)`.
fn field_vjp(q: &[Vec3], p: &[Vec3], a: &[Vec3], b: &[Vec3], kernel: &DeformationKernel) -> (Vec<Vec3>, Vec<Vec3>) {
    let n = q.len();
    let mut gq = vec![Vec3::zeros(); n];
    let mut gp = vec![Vec3::zeros(); n];
    for k in 0..n {
        let mut gqk = Vec3::zeros();
        let mut gpk = Vec3::zeros();
        for j in 0..n {
            let d = q[k] - q[j];
            let t = kernel.radial_r2(dist2(&q[k], &q[j]));
            // velocity part: sum_ij K_ij <a_i, p_j>
            gpk += a[j] * t.value;
            gqk -= d * (2.0 * t.a * (dot(&a[k], &p[j]) + dot(&a[j], &p[k])));
            // momentum-rate part: sum_ij 2 <p_i, p_j> A_ij <b_i, q_i - q_j>
            let db = b[k] - b[j];
            let proj = dot(&db, &d);
            gpk += p[j] * (2.0 * t.a * proj);
            let pp = 2.0 * dot(&p[k], &p[j]);
            gqk += (db * t.a - d * (2.0 * t.c * proj)) * pp;
        }
        gq[k] = gqk;
        gp[k] = gpk;
    }
    (gq, gp)
}

/// Cotangent of `(q_n, p_n)` given the cotangent of the RK4 step output.
fn rk4_step_vjp(q: &[Vec3], p: &[Vec3], lq: &[Vec3], lp: &[Vec3], h: f64, kernel: &DeformationKernel) -> (Vec<Vec3>, Vec<Vec3>) {
    let none: [Vec3; 0] = [];
    let (kq1, kp1, _) = field(q, p, &none, kernel);
    let (q2, p2) = (axpy(q, &kq1, h / 2.0), axpy(p, &kp1, h / 2.0));
    let (kq2, kp2, _) = field(&q2, &p2, &none, kernel);
    let (q3, p3) = (axpy(q, &kq2, h / 2.0), axpy(p, &kp2, h / 2.0));
    let (kq3, kp3, _) = field(&q3, &p3, &none, kernel);
    let (q4, p4) = (axpy(q, &kq3, h), axpy(p, &kp3, h));

    let scale = |v: &[Vec3], s: f64| -> Vec<Vec3> { v.iter().map(|x| x * s).collect() };
    let add = |a: &[Vec3], b: &[Vec3], s: f64| -> Vec<Vec3> { a.iter().zip(b).map(|(x, y)| x + y * s).collect() };

    let mut gq = lq.to_vec();
    let mut gp = lp.to_vec();

    let (m4q, m4p) = field_vjp(&q4, &p4, &scale(lq, h / 6.0), &scale(lp, h / 6.0), kernel);
    let l3q = add(&scale(lq, h / 3.0), &m4q, h);
    let l3p = add(&scale(lp, h / 3.0), &m4p, h);
    let (m3q, m3p) = field_vjp(&q3, &p3, &l3q, &l3p, kernel);
    let l2q = add(&scale(lq, h / 3.0), &m3q, h / 2.0);
    let l2p = add(&scale(lp, h / 3.0), &m3p, h / 2.0);
    let (m2q, m2p) = field_vjp(&q2, &p2, &l2q, &l2p, kernel);
    let l1q = add(&scale(lq, h / 6.0), &m2q, h / 2.0);
    let l1p = add(&scale(lp, h / 6.0), &m2p, h / 2.0);
    let (m1q, m1p) = field_vjp(q, p, &l1q, &l1p, kernel);

    for m in [&m1q, &m2q, &m3q, &m4q] {
        for (g, v) in gq.iter_mut().zip(m.iter()) {
            *g += v;
        }
    }
    for m in [&m1p, &m2p, &m3p, &m4p] {
        for (g, v) in gp.iter_mut().zip(m.iter()) {
            *g += v;
        }
    }
    (gq, gp)
}

/// Value of the objective split into its two terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveParts {
    pub data: f64,
    pub regularization: f64,
}

impl ObjectiveParts {
    pub fn total(&self) -> f64 {
        self.data + self.regularization
    }
}

/// `J(p0) = 2 lambda H(q0, p0) + D(phi_1(S), T)` for a fixed source (control
/// points are its vertices) and target.
#[derive(Debug, Clone)]
pub struct Objective {
    geometry: Geometry,
    q0: Vec<Vec3>,
    data: DataTerm,
    shooting: ShootingConfig,
    lambda: f64,
}

impl Objective {
    pub fn new(source: &DiscreteShape, data: DataTerm, shooting: ShootingConfig, lambda: f64) -> Result<Self> {
        if source.is_empty() {
            return Err(Error::EmptyShape);
        }
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidConfig(format!("lambda must be non-negative, got {lambda}")));
        }
        Ok(Self {
            geometry: source.geometry().clone(),
            q0: source.vertices().to_vec(),
            data,
            shooting,
            lambda,
        })
    }

    pub fn control_points(&self) -> &[Vec3] {
        &self.q0
    }

    pub fn shooting(&self) -> &ShootingConfig {
        &self.shooting
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    fn check(&self, p0: &Momenta) -> Result<()> {
        if p0.len() != self.q0.len() {
            return Err(Error::SizeMismatch {
                expected: self.q0.len(),
                found: p0.len(),
            });
        }
        Ok(())
    }

    pub fn parts(&self, p0: &Momenta) -> Result<ObjectiveParts> {
        self.check(p0)?;
        let traj = shoot(&self.q0, &p0.0, &self.shooting)?;
        let atoms = self.geometry.atoms_at(traj.final_points());
        Ok(ObjectiveParts {
            data: self.data.value(&atoms),
            regularization: 2.0 * self.lambda * hamiltonian(&self.q0, &p0.0, &self.shooting.kernel)?,
        })
    }

    pub fn value(&self, p0: &Momenta) -> Result<f64> {
        Ok(self.parts(p0)?.total())
    }

    pub fn value_and_gradient(&self, p0: &Momenta) -> Result<(f64, Momenta)> {
        self.check(p0)?;
        let kernel = &self.shooting.kernel;
        let traj = shoot(&self.q0, &p0.0, &self.shooting)?;
        let q1 = traj.final_points();
        let atoms = self.geometry.atoms_at(q1);
        let (data, atom_grads) = self.data.value_and_gradient(&atoms);
        let mut lq = self.geometry.pullback(q1, &atom_grads);
        let mut lp = vec![Vec3::zeros(); q1.len()];
        let h = self.shooting.dt();
        for step in (0..self.shooting.time_steps).rev() {
            (lq, lp) = rk4_step_vjp(&traj.q[step], &traj.p[step], &lq, &lp, h, kernel);
        }
        let reg = 2.0 * self.lambda * hamiltonian(&self.q0, &p0.0, kernel)?;
        let dh = velocity_unchecked(&self.q0, &self.q0, &p0.0, kernel);
        let grad = lp.iter().zip(&dh).map(|(g, d)| g + d * (2.0 * self.lambda)).collect();
        Ok((data + reg, Momenta(grad)))
    }
}
