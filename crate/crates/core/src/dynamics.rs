//! Reference vehicle plants and the fixed-step integrator used to produce
//! ground-truth trajectories and training pairs.
//!
//! State layouts:
//!
//! | plant               | state                               | control      |
//! |---------------------|-------------------------------------|--------------|
//! | unicycle            | `[x, y, psi]`                       | `[v, omega]` |
//! | slip-free bicycle   | `[x, y, v_x, psi]`                  | `[u, delta]` |
//! | slip-based bicycle  | `[x, y, v_x, psi, v_y, omega]`      | `[u, delta]` |
//! | experimental prior  | `[x, y, v_x, psi]`                  | `[u, delta]` |
//!
//! Heading angles are never wrapped.

use std::f64::consts::FRAC_PI_2;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One control sample. Unicycle: `[v, omega]`; bicycles: `[u, delta]`.
pub type ControlValue = [f64; 2];

/// Default number of RK4 substeps per sampling interval.
pub const DEFAULT_SUBSTEPS: usize = 10;

fn default_v_min() -> f64 {
    1e-6
}

fn default_dead_zone() -> f64 {
    0.13
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlipFreeParams {
    /// Throttle gain, m/s^2 per unit input.
    pub b_u: f64,
    /// Steering gain, rad per unit input.
    pub b_delta: f64,
    /// Wheelbase, m.
    pub wheelbase: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlipParams {
    pub b_u: f64,
    pub b_delta: f64,
    /// Centre of mass to front axle, m.
    pub l_f: f64,
    /// Centre of mass to rear axle, m.
    pub l_r: f64,
    /// Mass, kg.
    pub mass: f64,
    /// Yaw moment of inertia, kg m^2.
    pub inertia_z: f64,
    /// Front cornering stiffness, N/rad.
    pub c_f: f64,
    /// Rear cornering stiffness, N/rad.
    pub c_r: f64,
    /// Smallest forward speed accepted by the slip-angle formulas.
    #[serde(default = "default_v_min")]
    pub v_min: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentalPriorParams {
    pub b_u: f64,
    pub b_delta: f64,
    pub wheelbase: f64,
    /// Throttle below this value produces no acceleration (inclusive bound).
    #[serde(default = "default_dead_zone")]
    pub dead_zone: f64,
}

impl SlipParams {
    /// Parameter set used for the slip-based Case I experiments.
    pub fn reference() -> Self {
        SlipParams {
            b_u: 5.0,
            b_delta: 0.4,
            l_f: 0.082,
            l_r: 0.098,
            mass: 2.5,
            inertia_z: 0.015,
            c_f: 2.0,
            c_r: 2.0,
            v_min: default_v_min(),
        }
    }
}

/// Which plant a dataset or model belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Unicycle,
    SlipFree,
    Slip,
    ExperimentalPrior,
}

impl ModelKind {
    pub fn state_dim(self) -> usize {
        match self {
            ModelKind::Unicycle => 3,
            ModelKind::SlipFree | ModelKind::ExperimentalPrior => 4,
            ModelKind::Slip => 6,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Unicycle => "unicycle",
            ModelKind::SlipFree => "slip-free",
            ModelKind::Slip => "slip",
            ModelKind::ExperimentalPrior => "experimental-prior",
        }
    }

    /// Index of the heading angle in the state vector.
    pub fn heading_index(self) -> usize {
        match self {
            ModelKind::Unicycle => 2,
            _ => 3,
        }
    }

    /// Column names of the state vector, used in CSV headers.
    pub fn state_names(self) -> &'static [&'static str] {
        match self {
            ModelKind::Unicycle => &["x", "y", "psi"],
            ModelKind::SlipFree | ModelKind::ExperimentalPrior => &["x", "y", "vx", "psi"],
            ModelKind::Slip => &["x", "y", "vx", "psi", "vy", "omega"],
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unicycle" => Ok(ModelKind::Unicycle),
            "slip-free" => Ok(ModelKind::SlipFree),
            "slip" => Ok(ModelKind::Slip),
            "experimental-prior" => Ok(ModelKind::ExperimentalPrior),
            other => Err(Error::Format(format!("unknown model tag '{other}'"))),
        }
    }
}

/// A plant together with its physical parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "kebab-case")]
pub enum Plant {
    Unicycle,
    SlipFree(SlipFreeParams),
    Slip(SlipParams),
    ExperimentalPrior(ExperimentalPriorParams),
}

/// Right-hand side of a controlled ODE `ds/dt = f(s, c)`.
pub trait VectorField {
    fn state_dim(&self) -> usize;

    /// Writes `f(s, c)` into `out`.
    fn eval_into(&self, s: &[f64], c: ControlValue, out: &mut [f64]) -> Result<()>;

    fn eval(&self, s: &[f64], c: ControlValue) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.state_dim()];
        self.eval_into(s, c, &mut out)?;
        Ok(out)
    }
}

impl Plant {
    pub fn kind(&self) -> ModelKind {
        match self {
            Plant::Unicycle => ModelKind::Unicycle,
            Plant::SlipFree(_) => ModelKind::SlipFree,
            Plant::Slip(_) => ModelKind::Slip,
            Plant::ExperimentalPrior(_) => ModelKind::ExperimentalPrior,
        }
    }

    /// Checks the strict positivity of geometric and inertial parameters.
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be positive, got {v}")))
            }
        };
        let finite = |name: &str, v: f64| {
            if v.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be finite")))
            }
        };
        match self {
            Plant::Unicycle => Ok(()),
            Plant::SlipFree(p) => {
                finite("b_u", p.b_u)?;
                finite("b_delta", p.b_delta)?;
                positive("wheelbase", p.wheelbase)
            }
            Plant::ExperimentalPrior(p) => {
                finite("b_u", p.b_u)?;
                finite("b_delta", p.b_delta)?;
                finite("dead_zone", p.dead_zone)?;
                positive("wheelbase", p.wheelbase)
            }
            Plant::Slip(p) => {
                finite("b_u", p.b_u)?;
                finite("b_delta", p.b_delta)?;
                positive("l_f", p.l_f)?;
                positive("l_r", p.l_r)?;
                positive("mass", p.mass)?;
                positive("inertia_z", p.inertia_z)?;
                positive("c_f", p.c_f)?;
                positive("c_r", p.c_r)?;
                positive("v_min", p.v_min)
            }
        }
    }
}

impl VectorField for Plant {
    fn state_dim(&self) -> usize {
        self.kind().state_dim()
    }

    fn eval_into(&self, s: &[f64], c: ControlValue, out: &mut [f64]) -> Result<()> {
        check_inputs(s, c, self.state_dim())?;
        match self {
            Plant::Unicycle => unicycle_into(s, c, out),
            Plant::SlipFree(p) => {
                slipfree_into(s, c, p.b_u, p.b_delta, p.wheelbase, out)?;
            }
            Plant::Slip(p) => slip_into(s, c, p, out)?,
            Plant::ExperimentalPrior(p) => {
                slipfree_into(s, c, p.b_u, p.b_delta, p.wheelbase, out)?;
                if c[0] < p.dead_zone {
                    out[2] = 0.0;
                }
            }
        }
        Ok(())
    }
}

fn check_inputs(s: &[f64], c: ControlValue, n: usize) -> Result<()> {
    if s.len() != n {
        return Err(Error::Domain(format!(
            "state has length {}, expected {n}",
            s.len()
        )));
    }
    if s.iter().chain(c.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Domain("non-finite state or control".into()));
    }
    Ok(())
}

fn unicycle_into(s: &[f64], c: ControlValue, out: &mut [f64]) {
    let (sin, cos) = s[2].sin_cos();
    out[0] = c[0] * cos;
    out[1] = c[0] * sin;
    out[2] = c[1];
}

fn slipfree_into(
    s: &[f64],
    c: ControlValue,
    b_u: f64,
    b_delta: f64,
    wheelbase: f64,
    out: &mut [f64],
) -> Result<()> {
    let steer = b_delta * c[1];
    if steer.abs() >= FRAC_PI_2 {
        return Err(Error::Domain(format!(
            "steering angle {steer} rad at or beyond the tangent singularity"
        )));
    }
    let vx = s[2];
    let (sin, cos) = s[3].sin_cos();
    out[0] = vx * cos;
    out[1] = vx * sin;
    out[2] = b_u * c[0];
    out[3] = vx / wheelbase * steer.tan();
    Ok(())
}

/// Longitudinal and lateral tire forces `(F_x, F_yf, F_yr)` of the slip model.
pub fn tire_forces(s: &[f64], c: ControlValue, p: &SlipParams) -> Result<(f64, f64, f64)> {
    let (vx, vy, omega) = (s[2], s[4], s[5]);
    if vx.abs() < p.v_min {
        return Err(Error::Singularity(format!(
            "|v_x| = {} below {} in slip-angle formulas",
            vx.abs(),
            p.v_min
        )));
    }
    let fx = p.mass * p.b_u * c[0];
    let fyf = -p.c_f * (p.b_delta * c[1] - (vy + p.l_f * omega) / vx);
    let fyr = -p.c_r * ((vy + p.l_r * omega) / vx);
    Ok((fx, fyf, fyr))
}

fn slip_into(s: &[f64], c: ControlValue, p: &SlipParams, out: &mut [f64]) -> Result<()> {
    let (fx, fyf, fyr) = tire_forces(s, c, p)?;
    let (vx, psi, vy, omega) = (s[2], s[3], s[4], s[5]);
    let (sin_psi, cos_psi) = psi.sin_cos();
    let (sin_d, cos_d) = (p.b_delta * c[1]).sin_cos();
    out[0] = vx * cos_psi - vy * sin_psi;
    out[1] = vx * sin_psi + vy * cos_psi;
    out[2] = (fx * cos_d - fyf * sin_d) / p.mass - omega * vy;
    out[3] = omega;
    out[4] = (fyf * cos_d + fx * sin_d + fyr) / p.mass - omega * vx;
    out[5] = (p.l_f * (fyf * cos_d + fx * sin_d) - p.l_r * fyr) / p.inertia_z;
    Ok(())
}

/// Unicycle kinematics `[v cos psi, v sin psi, omega]`.
pub fn unicycle_rhs(s: &[f64], c: ControlValue) -> Result<Vec<f64>> {
    Plant::Unicycle.eval(s, c)
}

/// Kinematic bicycle without tire slip.
pub fn slipfree_rhs(s: &[f64], c: ControlValue, params: &SlipFreeParams) -> Result<Vec<f64>> {
    Plant::SlipFree(*params).eval(s, c)
}

/// Dynamic bicycle with linear tire forces.
pub fn slip_rhs(s: &[f64], c: ControlValue, params: &SlipParams) -> Result<Vec<f64>> {
    Plant::Slip(*params).eval(s, c)
}

/// Slip-free bicycle with a throttle dead zone.
pub fn experimental_prior_rhs(
    s: &[f64],
    c: ControlValue,
    params: &ExperimentalPriorParams,
) -> Result<Vec<f64>> {
    Plant::ExperimentalPrior(*params).eval(s, c)
}

/// Uniformly sampled state history.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn new(times: Vec<f64>, states: Vec<Vec<f64>>) -> Result<Self> {
        if times.len() != states.len() {
            return Err(Error::Shape(format!(
                "{} times but {} states",
                times.len(),
                states.len()
            )));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Domain("times must increase strictly".into()));
        }
        if let Some(first) = states.first() {
            if states.iter().any(|s| s.len() != first.len()) {
                return Err(Error::Shape("states of unequal length".into()));
            }
        }
        Ok(Trajectory { times, states })
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn state_dim(&self) -> usize {
        self.states.first().map_or(0, Vec::len)
    }

    /// Time series of one state component.
    pub fn component(&self, i: usize) -> Vec<f64> {
        self.states.iter().map(|s| s[i]).collect()
    }

    pub fn last(&self) -> Option<&[f64]> {
        self.states.last().map(Vec::as_slice)
    }
}

/// Classical fourth-order Runge-Kutta with a fixed number of substeps per
/// sampling interval.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Rk4 {
    pub substeps: usize,
}

impl Default for Rk4 {
    fn default() -> Self {
        Rk4 {
            substeps: DEFAULT_SUBSTEPS,
        }
    }
}

impl Rk4 {
    pub fn new(substeps: usize) -> Self {
        Rk4 {
            substeps: substeps.max(1),
        }
    }

    /// Advances `s` from `t` to `t + dt` under the control law `control`.
    pub fn step<V, F>(&self, field: &V, s: &[f64], control: F, t: f64, dt: f64) -> Result<Vec<f64>>
    where
        V: VectorField + ?Sized,
        F: Fn(f64) -> ControlValue,
    {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::Domain(format!("time step must be positive, got {dt}")));
        }
        let n = field.state_dim();
        if s.len() != n {
            return Err(Error::Domain(format!(
                "state has length {}, expected {n}",
                s.len()
            )));
        }
        let h = dt / self.substeps as f64;
        let mut y = s.to_vec();
        let mut k1 = vec![0.0; n];
        let mut k2 = vec![0.0; n];
        let mut k3 = vec![0.0; n];
        let mut k4 = vec![0.0; n];
        let mut tmp = vec![0.0; n];
        for i in 0..self.substeps {
            let ti = t + i as f64 * h;
            let c_mid = control(ti + 0.5 * h);
            field.eval_into(&y, control(ti), &mut k1)?;
            axpy_into(&y, 0.5 * h, &k1, &mut tmp);
            field.eval_into(&tmp, c_mid, &mut k2)?;
            axpy_into(&y, 0.5 * h, &k2, &mut tmp);
            field.eval_into(&tmp, c_mid, &mut k3)?;
            axpy_into(&y, h, &k3, &mut tmp);
            field.eval_into(&tmp, control(ti + h), &mut k4)?;
            for j in 0..n {
                y[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
            }
        }
        Ok(y)
    }

    /// Integrates over `[0, horizon]`, returning `N_T + 1` uniformly spaced
    /// states. `horizon` must be an integer multiple of `dt`.
    pub fn simulate<V, F>(
        &self,
        field: &V,
        s0: &[f64],
        control: F,
        horizon: f64,
        dt: f64,
    ) -> Result<Trajectory>
    where
        V: VectorField + ?Sized,
        F: Fn(f64) -> ControlValue,
    {
        let steps = step_count(horizon, dt)?;
        let mut times = Vec::with_capacity(steps + 1);
        let mut states = Vec::with_capacity(steps + 1);
        times.push(0.0);
        states.push(s0.to_vec());
        for k in 0..steps {
            let t = k as f64 * dt;
            let next = self.step(field, &states[k], &control, t, dt)?;
            times.push((k + 1) as f64 * dt);
            states.push(next);
        }
        Ok(Trajectory { times, states })
    }
}

/// Number of whole steps of size `dt` in `horizon`.
pub fn step_count(horizon: f64, dt: f64) -> Result<usize> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::Domain(format!("time step must be positive, got {dt}")));
    }
    if !(horizon >= 0.0) || !horizon.is_finite() {
        return Err(Error::Domain(format!("horizon must be non-negative, got {horizon}")));
    }
    let ratio = horizon / dt;
    let n = ratio.round();
    if (ratio - n).abs() > 1e-9 * ratio.max(1.0) {
        return Err(Error::Domain(format!(
            "horizon {horizon} is not a multiple of dt {dt}"
        )));
    }
    Ok(n as usize)
}

fn axpy_into(y: &[f64], a: f64, x: &[f64], out: &mut [f64]) {
    for ((o, yi), xi) in out.iter_mut().zip(y).zip(x) {
        *o = yi + a * xi;
    }
}

/// One RK4 step with the default substep count.
pub fn integrate_step<V, F>(field: &V, s: &[f64], control: F, t: f64, dt: f64) -> Result<Vec<f64>>
where
    V: VectorField + ?Sized,
    F: Fn(f64) -> ControlValue,
{
    Rk4::default().step(field, s, control, t, dt)
}

/// Trajectory over `[0, horizon]` with the default integrator.
pub fn simulate<V, F>(field: &V, s0: &[f64], control: F, horizon: f64, dt: f64) -> Result<Trajectory>
where
    V: VectorField + ?Sized,
    F: Fn(f64) -> ControlValue,
{
    Rk4::default().simulate(field, s0, control, horizon, dt)
}
