//! Ground-truth continuous dynamics `ẋ = f(x, u)` and the sample-and-hold
//! flow map used to generate data and to simulate closed loops.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// Continuous-time dynamics with a fixed state and input dimension.
pub trait Plant: Send + Sync {
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;
    /// `ẋ = f(x, u)`.
    fn f(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64>;
    /// State coordinates that are angles (wrapped when embedding for clustering).
    fn angle_dims(&self) -> Vec<usize> {
        Vec::new()
    }
    /// State coordinates the dynamics do not depend on.
    fn excluded_dims(&self) -> Vec<usize> {
        Vec::new()
    }
}

/// Reconstructs the flow-map rows of coordinates excluded from the learned model.
pub trait OutputMap: Send + Sync {
    /// State rows produced by this map.
    fn rows(&self) -> &[usize];
    /// Predicted displacement of each row over `dt` and its Jacobian with
    /// respect to the concatenated `(x, u)`.
    fn displacement(&self, x: &[f64], u: &[f64], dt: f64) -> (Vec<f64>, DMatrix<f64>);
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PendulumConfig {
    /// kg
    pub mass: f64,
    /// m
    pub length: f64,
    /// m/s²
    pub gravity: f64,
    /// 1/s, viscous
    pub damping: f64,
}

impl Default for PendulumConfig {
    fn default() -> Self {
        PendulumConfig {
            mass: 0.25,
            length: 0.5,
            gravity: 9.81,
            damping: 0.0,
        }
    }
}

impl PendulumConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.mass > 0.0 && self.length > 0.0 && self.gravity > 0.0 && self.damping >= 0.0) {
            return Err(Error::Input(format!("invalid pendulum parameters {self:?}")));
        }
        Ok(())
    }
}

/// Point-mass pendulum, `x = [θ, θ̇]`, `θ = 0` upright.
#[derive(Clone, Debug, Default)]
pub struct Pendulum {
    pub cfg: PendulumConfig,
}

impl Pendulum {
    pub fn new(cfg: PendulumConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Pendulum { cfg })
    }
}

pub fn pendulum_f(cfg: &PendulumConfig, x: [f64; 2], u: f64) -> [f64; 2] {
    let [theta, omega] = x;
    let ml2 = cfg.mass * cfg.length * cfg.length;
    let accel = cfg.gravity / cfg.length * theta.sin() + u / ml2 - cfg.damping * omega;
    [omega, accel]
}

impl Plant for Pendulum {
    fn state_dim(&self) -> usize {
        2
    }
    fn input_dim(&self) -> usize {
        1
    }
    fn f(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        let d = pendulum_f(&self.cfg, [x[0], x[1]], u[0]);
        DVector::from_column_slice(&d)
    }
    fn angle_dims(&self) -> Vec<usize> {
        vec![0]
    }
}

/// Planar two-wheeled balancing robot.
///
/// Defaults describe a ~12 kg robot whose upright equilibrium is open-loop
/// unstable and which can balance within the 6 N·m per-wheel torque limit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegwayConfig {
    /// Body (rod) mass, kg.
    pub body_mass: f64,
    /// Mass of each wheel, kg.
    pub wheel_mass: f64,
    /// m
    pub wheel_radius: f64,
    /// Distance from the body centre to each wheel, m.
    pub half_track: f64,
    /// Axle to body centre of mass, m.
    pub com_height: f64,
    /// Body inertia about the vertical axis, kg·m².
    pub yaw_inertia: f64,
    /// Body inertia about the axle-parallel axis through its COM, kg·m².
    pub pitch_inertia: f64,
    /// Spin inertia of each wheel, kg·m².
    pub wheel_inertia: f64,
    pub gravity: f64,
    /// Per-wheel torque bound, N·m.
    pub torque_limit: f64,
}

impl Default for SegwayConfig {
    fn default() -> Self {
        SegwayConfig {
            body_mass: 10.0,
            wheel_mass: 1.0,
            wheel_radius: 0.2,
            half_track: 0.25,
            com_height: 0.5,
            yaw_inertia: 0.5,
            pitch_inertia: 0.8,
            wheel_inertia: 0.02,
            gravity: 9.81,
            torque_limit: 6.0,
        }
    }
}

impl SegwayConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.body_mass,
            self.wheel_mass,
            self.wheel_radius,
            self.half_track,
            self.com_height,
            self.yaw_inertia,
            self.pitch_inertia,
            self.wheel_inertia,
            self.gravity,
            self.torque_limit,
        ];
        if positive.iter().all(|v| v.is_finite() && *v > 0.0) {
            Ok(())
        } else {
            Err(Error::Input(format!("invalid segway parameters {self:?}")))
        }
    }
}

/// State indices of the segway model.
pub mod segway_idx {
    pub const X: usize = 0;
    pub const Y: usize = 1;
    pub const HEADING: usize = 2;
    pub const V: usize = 3;
    pub const YAW_RATE: usize = 4;
    pub const PITCH: usize = 5;
    pub const PITCH_RATE: usize = 6;
}

/// `x = [X, Y, θ, v, θ̇, ψ, ψ̇]`, `u = [T_l, T_r]`.
#[derive(Clone, Debug, Default)]
pub struct Segway {
    pub cfg: SegwayConfig,
}

impl Segway {
    pub fn new(cfg: SegwayConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Segway { cfg })
    }
}

/// Equations of motion from the Lagrangian of a rigid body pivoting on a
/// rolling axle, with constant yaw inertia (no pitch/yaw coupling).
pub fn segway_f(cfg: &SegwayConfig, x: &[f64], u: &[f64]) -> [f64; 7] {
    let lim = cfg.torque_limit;
    let tl = u[0].clamp(-lim, lim);
    let tr = u[1].clamp(-lim, lim);
    let (theta, v, yaw_rate, psi, psi_rate) = (x[2], x[3], x[4], x[5], x[6]);

    let (mb, r, l) = (cfg.body_mass, cfg.wheel_radius, cfg.com_height);
    let (sp, cp) = psi.sin_cos();
    let torque = tl + tr;

    let m11 = mb + 2.0 * cfg.wheel_mass + 2.0 * cfg.wheel_inertia / (r * r);
    let m12 = mb * l * cp;
    let m22 = cfg.pitch_inertia + mb * l * l;
    let rhs1 = torque / r + mb * l * sp * psi_rate * psi_rate;
    let rhs2 = mb * cfg.gravity * l * sp - torque;
    let det = m11 * m22 - m12 * m12;
    let v_dot = (m22 * rhs1 - m12 * rhs2) / det;
    let psi_ddot = (m11 * rhs2 - m12 * rhs1) / det;

    let d = cfg.half_track;
    let yaw_inertia = cfg.yaw_inertia + 2.0 * d * d * (cfg.wheel_mass + cfg.wheel_inertia / (r * r));
    let yaw_accel = d / r * (tr - tl) / yaw_inertia;

    [
        v * theta.cos(),
        v * theta.sin(),
        yaw_rate,
        v_dot,
        yaw_accel,
        psi_rate,
        psi_ddot,
    ]
}

impl Plant for Segway {
    fn state_dim(&self) -> usize {
        7
    }
    fn input_dim(&self) -> usize {
        2
    }
    fn f(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        DVector::from_column_slice(&segway_f(&self.cfg, x.as_slice(), u.as_slice()))
    }
    fn angle_dims(&self) -> Vec<usize> {
        vec![segway_idx::HEADING]
    }
    fn excluded_dims(&self) -> Vec<usize> {
        vec![segway_idx::X, segway_idx::Y]
    }
}

/// Forward-Euler position update `ΔX = v cosθ dt`, `ΔY = v sinθ dt`.
#[derive(Clone, Debug, Default)]
pub struct SegwayKinematics;

impl OutputMap for SegwayKinematics {
    fn rows(&self) -> &[usize] {
        &[segway_idx::X, segway_idx::Y]
    }

    fn displacement(&self, x: &[f64], u: &[f64], dt: f64) -> (Vec<f64>, DMatrix<f64>) {
        use segway_idx::*;
        let (s, c) = x[HEADING].sin_cos();
        let v = x[V];
        let mut jac = DMatrix::zeros(2, x.len() + u.len());
        jac[(0, HEADING)] = -v * s * dt;
        jac[(0, V)] = c * dt;
        jac[(1, HEADING)] = v * c * dt;
        jac[(1, V)] = s * dt;
        (vec![v * c * dt, v * s * dt], jac)
    }
}

/// Velocity impulses applied to the state at scheduled times.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DisturbanceSpec {
    pub impulses: Vec<Impulse>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Impulse {
    pub t: f64,
    pub dv: Vec<f64>,
}

impl DisturbanceSpec {
    pub fn validate(&self, state_dim: usize) -> Result<()> {
        for w in self.impulses.windows(2) {
            if w[1].t <= w[0].t {
                return Err(Error::Input("disturbance times must be strictly increasing".into()));
            }
        }
        for imp in &self.impulses {
            check_dim(state_dim, imp.dv.len())?;
            if !imp.t.is_finite() || imp.dv.iter().any(|v| !v.is_finite()) {
                return Err(Error::Domain("non-finite disturbance".into()));
            }
        }
        Ok(())
    }

    /// Impulses scheduled in `[t0, t1)`.
    pub fn between(&self, t0: f64, t1: f64) -> impl Iterator<Item = &Impulse> {
        self.impulses.iter().filter(move |i| i.t >= t0 && i.t < t1)
    }
}

/// Classical RK4 over `[0, dt]` with `u` held constant, split into `substeps`.
pub fn step_hold(
    plant: &dyn Plant,
    x: &DVector<f64>,
    u: &DVector<f64>,
    dt: f64,
    substeps: usize,
) -> Result<DVector<f64>> {
    check_dim(plant.state_dim(), x.len())?;
    check_dim(plant.input_dim(), u.len())?;
    if !(dt > 0.0) || substeps == 0 {
        return Err(Error::Input(format!(
            "step_hold needs dt > 0 and substeps ≥ 1 (dt = {dt}, substeps = {substeps})"
        )));
    }
    let h = dt / substeps as f64;
    let mut state = x.clone();
    for i in 0..substeps {
        let k1 = plant.f(&state, u);
        let k2 = plant.f(&(&state + &k1 * (h / 2.0)), u);
        let k3 = plant.f(&(&state + &k2 * (h / 2.0)), u);
        let k4 = plant.f(&(&state + &k3 * h), u);
        state += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        if state.iter().any(|v| !v.is_finite()) {
            return Err(Error::IntegrationBlowup {
                time: (i + 1) as f64 * h,
            });
        }
    }
    Ok(state)
}

/// [`step_hold`] followed by additive `N(0, noise_scale²)` noise on every coordinate.
pub fn step_hold_noisy<R: Rng + ?Sized>(
    plant: &dyn Plant,
    x: &DVector<f64>,
    u: &DVector<f64>,
    dt: f64,
    substeps: usize,
    noise_scale: f64,
    rng: &mut R,
) -> Result<DVector<f64>> {
    let mut next = step_hold(plant, x, u, dt, substeps)?;
    if noise_scale > 0.0 {
        let normal = Normal::new(0.0, noise_scale).map_err(|e| Error::Input(format!("noise scale: {e}")))?;
        next.iter_mut().for_each(|v| *v += normal.sample(rng));
    }
    Ok(next)
}

/// Central finite-difference Jacobians `(∂f/∂x, ∂f/∂u)`.
pub fn jacobian_fd(plant: &dyn Plant, x: &DVector<f64>, u: &DVector<f64>, eps: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = plant.state_dim();
    let m = plant.input_dim();
    let mut a = DMatrix::zeros(n, n);
    let mut b = DMatrix::zeros(n, m);
    for j in 0..n {
        let mut hi = x.clone();
        let mut lo = x.clone();
        hi[j] += eps;
        lo[j] -= eps;
        a.set_column(j, &((plant.f(&hi, u) - plant.f(&lo, u)) / (2.0 * eps)));
    }
    for j in 0..m {
        let mut hi = u.clone();
        let mut lo = u.clone();
        hi[j] += eps;
        lo[j] -= eps;
        b.set_column(j, &((plant.f(x, &hi) - plant.f(x, &lo)) / (2.0 * eps)));
    }
    (a, b)
}
