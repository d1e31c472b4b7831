//! Local parameterization of control signals.
//!
//! On each interval `[t_k, t_k + dt]` a control signal is replaced by a
//! low-degree polynomial `c~_k(tau; p_k)`, `tau in [0, dt]`. The coefficient
//! vector `p_k` turns the non-autonomous system into a family of autonomous
//! one-step maps indexed by `p`.
//!
//! Two families are supported:
//!
//! * `interpolating-nodes` — `p` holds the control *values* at `degree + 1`
//!   equally spaced nodes (the midpoint when `degree == 0`);
//! * `legendre` — `p` holds Legendre coefficients on `[0, dt]` mapped to
//!   `[-1, 1]`, obtained by Gauss quadrature.
//!
//! Coefficients are stored channel-major: all of channel 0, then channel 1.

use serde::{Deserialize, Serialize};

use crate::dynamics::ControlValue;
use crate::error::{Error, Result};

/// Relative slack on `tau` before `eval_local` reports a range error. RK4
/// substep times accumulate rounding of a few ulps past `dt`.
const TAU_SLACK: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BasisFamily {
    InterpolatingNodes,
    Legendre,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BasisSpec {
    pub family: BasisFamily,
    pub degree: usize,
    /// Number of parameterized control components (at most 2).
    pub channels: usize,
    /// Values of the trailing control components that are held constant
    /// instead of being parameterized, e.g. a fixed steering input.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub fixed: Vec<f64>,
}

impl BasisSpec {
    pub fn new(family: BasisFamily, degree: usize, channels: usize) -> Self {
        BasisSpec {
            family,
            degree,
            channels,
            fixed: Vec::new(),
        }
    }

    /// Quadratic node-value parameterization of both control channels.
    pub fn quadratic_nodes() -> Self {
        Self::new(BasisFamily::InterpolatingNodes, 2, 2)
    }

    pub fn with_fixed(mut self, fixed: Vec<f64>) -> Self {
        self.fixed = fixed;
        self
    }

    pub fn coeffs_per_channel(&self) -> usize {
        self.degree + 1
    }

    pub fn n_par(&self) -> usize {
        self.channels * self.coeffs_per_channel()
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.channels + self.fixed.len() > 2 {
            return Err(Error::Config(format!(
                "basis must parameterize 1 or 2 channels with at most 2 controls in total \
                 (channels = {}, fixed = {})",
                self.channels,
                self.fixed.len()
            )));
        }
        if self.fixed.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("fixed control values must be finite".into()));
        }
        Ok(())
    }

    /// Sample times in `[0, dt]` at which a signal is read when fitting.
    pub fn sample_nodes(&self, dt: f64) -> Vec<f64> {
        match self.family {
            BasisFamily::InterpolatingNodes => equispaced_nodes(self.degree)
                .into_iter()
                .map(|x| x * dt)
                .collect(),
            BasisFamily::Legendre => gauss_legendre(self.degree + 1)
                .0
                .into_iter()
                .map(|x| 0.5 * (x + 1.0) * dt)
                .collect(),
        }
    }

    fn eval_channel(&self, coeffs: &[f64], x: f64) -> f64 {
        match self.family {
            BasisFamily::InterpolatingNodes => lagrange_eval(coeffs, x),
            BasisFamily::Legendre => legendre_series(coeffs, 2.0 * x - 1.0),
        }
    }
}

/// Coefficients of one control segment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalParams {
    pub p: Vec<f64>,
    pub dt: f64,
}

impl LocalParams {
    pub fn new(p: Vec<f64>, dt: f64) -> Self {
        LocalParams { p, dt }
    }

    /// Reconstructed control as a function of local time, with `tau` clamped
    /// into `[0, dt]`. Suitable as an integrator control law.
    pub fn control<'a>(&'a self, basis: &'a BasisSpec) -> impl Fn(f64) -> ControlValue + 'a {
        move |tau| eval_clamped(&self.p, self.dt, tau, basis)
    }
}

/// Piecewise parameterization of a whole signal, one segment per interval.
#[derive(Clone, Debug, PartialEq)]
pub struct GlobalParams {
    pub basis: BasisSpec,
    pub dt: f64,
    pub segments: Vec<LocalParams>,
}

impl GlobalParams {
    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    /// Evaluates the piecewise reconstruction at global time `t`. Segment
    /// joins belong to the later segment; the final endpoint to the last.
    pub fn eval(&self, t: f64) -> Result<ControlValue> {
        let n = self.segments.len();
        let horizon = n as f64 * self.dt;
        if n == 0 || !(t >= -TAU_SLACK * self.dt && t <= horizon + TAU_SLACK * self.dt) {
            return Err(Error::Range {
                value: t,
                lo: 0.0,
                hi: horizon,
            });
        }
        let k = ((t / self.dt).floor().max(0.0) as usize).min(n - 1);
        let tau = t - k as f64 * self.dt;
        Ok(eval_clamped(&self.segments[k].p, self.dt, tau, &self.basis))
    }
}

/// Equally spaced nodes on `[0, 1]`; the midpoint for degree 0.
fn equispaced_nodes(degree: usize) -> Vec<f64> {
    if degree == 0 {
        vec![0.5]
    } else {
        (0..=degree).map(|j| j as f64 / degree as f64).collect()
    }
}

/// Lagrange interpolant through `values` at `equispaced_nodes(values.len()-1)`.
fn lagrange_eval(values: &[f64], x: f64) -> f64 {
    let n = values.len();
    if n == 1 {
        return values[0];
    }
    let deg = (n - 1) as f64;
    let mut sum = 0.0;
    for (j, v) in values.iter().enumerate() {
        let xj = j as f64 / deg;
        let mut l = 1.0;
        for m in 0..n {
            if m != j {
                let xm = m as f64 / deg;
                l *= (x - xm) / (xj - xm);
            }
        }
        sum += v * l;
    }
    sum
}

/// Values `P_0(x) .. P_{n-1}(x)` by the three-term recurrence.
fn legendre_values(n: usize, x: f64, out: &mut Vec<f64>) {
    out.clear();
    if n == 0 {
        return;
    }
    out.push(1.0);
    if n > 1 {
        out.push(x);
    }
    for k in 2..n {
        let kf = k as f64;
        let next = ((2.0 * kf - 1.0) * x * out[k - 1] - (kf - 1.0) * out[k - 2]) / kf;
        out.push(next);
    }
}

fn legendre_series(coeffs: &[f64], x: f64) -> f64 {
    // Clenshaw-free direct sum; degrees here are tiny.
    let mut p_prev = 1.0;
    let mut sum = coeffs.first().copied().unwrap_or(0.0);
    if coeffs.len() < 2 {
        return sum;
    }
    let mut p = x;
    sum += coeffs[1] * p;
    for (k, c) in coeffs.iter().enumerate().skip(2) {
        let kf = k as f64;
        let next = ((2.0 * kf - 1.0) * x * p - (kf - 1.0) * p_prev) / kf;
        p_prev = p;
        p = next;
        sum += c * p;
    }
    sum
}

/// Gauss-Legendre nodes and weights on `[-1, 1]`, nodes ascending.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let nf = n as f64;
    let mut vals = Vec::with_capacity(n + 1);
    for i in 0..n {
        let mut x = -(std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            legendre_values(n + 1, x, &mut vals);
            let (pn, pn1) = (vals[n], vals[n - 1]);
            dp = nf * (x * pn - pn1) / (x * x - 1.0);
            let dx = pn / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        legendre_values(n + 1, x, &mut vals);
        let (pn, pn1) = (vals[n], vals[n - 1]);
        if (x * x - 1.0).abs() > 0.0 {
            dp = nf * (x * pn - pn1) / (x * x - 1.0);
        }
        nodes[i] = x;
        weights[i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    (nodes, weights)
}

fn check_dt(dt: f64) -> Result<()> {
    if dt > 0.0 && dt.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("dt must be positive, got {dt}")))
    }
}

/// Parameterizes `control_fn` on `[t_k, t_k + dt]`.
pub fn fit_local<F>(control_fn: F, t_k: f64, dt: f64, basis: &BasisSpec) -> Result<LocalParams>
where
    F: Fn(f64) -> ControlValue,
{
    check_dt(dt)?;
    basis.validate()?;
    let q = basis.coeffs_per_channel();
    let mut p = vec![0.0; basis.n_par()];
    match basis.family {
        BasisFamily::InterpolatingNodes => {
            for (j, x) in equispaced_nodes(basis.degree).into_iter().enumerate() {
                let c = control_fn(t_k + x * dt);
                for ch in 0..basis.channels {
                    p[ch * q + j] = c[ch];
                }
            }
        }
        BasisFamily::Legendre => {
            let (nodes, weights) = gauss_legendre(q);
            let mut vals = Vec::with_capacity(q);
            for (xi, wi) in nodes.iter().zip(&weights) {
                let c = control_fn(t_k + 0.5 * (xi + 1.0) * dt);
                legendre_values(q, *xi, &mut vals);
                for ch in 0..basis.channels {
                    for (j, pj) in vals.iter().enumerate() {
                        p[ch * q + j] += (2.0 * j as f64 + 1.0) / 2.0 * wi * c[ch] * pj;
                    }
                }
            }
        }
    }
    Ok(LocalParams { p, dt })
}

fn eval_clamped(p: &[f64], dt: f64, tau: f64, basis: &BasisSpec) -> ControlValue {
    let x = (tau / dt).clamp(0.0, 1.0);
    let q = basis.coeffs_per_channel();
    let mut c = [0.0; 2];
    for ch in 0..basis.channels.min(2) {
        c[ch] = basis.eval_channel(&p[ch * q..(ch + 1) * q], x);
    }
    for (i, v) in basis.fixed.iter().enumerate() {
        if let Some(slot) = c.get_mut(basis.channels + i) {
            *slot = *v;
        }
    }
    c
}

/// Evaluates the local reconstruction at `tau in [0, dt]`.
pub fn eval_local(p: &LocalParams, tau: f64, basis: &BasisSpec) -> Result<ControlValue> {
    if p.p.len() != basis.n_par() {
        return Err(Error::Shape(format!(
            "parameter vector has length {}, basis expects {}",
            p.p.len(),
            basis.n_par()
        )));
    }
    let slack = TAU_SLACK * p.dt;
    if !(tau >= -slack && tau <= p.dt + slack) {
        return Err(Error::Range {
            value: tau,
            lo: 0.0,
            hi: p.dt,
        });
    }
    Ok(eval_clamped(&p.p, p.dt, tau, basis))
}

/// Parameterizes `control_fn` on each of `n_t` consecutive intervals.
pub fn fit_global<F>(control_fn: F, n_t: usize, dt: f64, basis: &BasisSpec) -> Result<GlobalParams>
where
    F: Fn(f64) -> ControlValue,
{
    let segments = (0..n_t)
        .map(|k| fit_local(&control_fn, k as f64 * dt, dt, basis))
        .collect::<Result<Vec<_>>>()?;
    Ok(GlobalParams {
        basis: basis.clone(),
        dt,
        segments,
    })
}
