//! Time integration of flow maps, centred flows and derivative flows.
//!
//! A window `[t0, t0 + tau]` is cut into steps of length `dt` (negative
//! for `tau < 0`), with one shortened final step when `|tau|` is not a
//! multiple of `dt`. Brownian increments are keyed by the global step
//! index `floor(t / dt)` of the step's start time, so two windows that
//! share a step grid see the same noise. Backward steps draw from a
//! separate counter range and are therefore fresh increments.

use serde::{Deserialize, Serialize};

use crate::domain::{Mat, Point};
use crate::dynamics::DynamicsSpec;
use crate::error::{Error, Result};
use crate::noise::PathKey;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Classical fourth-order Runge-Kutta; deterministic systems only.
    Rk4,
    EulerMaruyama,
    /// Predictor-corrector scheme converging to the Stratonovich solution.
    StratonovichHeun,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegratorConfig {
    pub scheme: Scheme,
    pub dt: f64,
}

impl IntegratorConfig {
    pub fn rk4(dt: f64) -> Self {
        Self { scheme: Scheme::Rk4, dt }
    }

    pub fn euler_maruyama(dt: f64) -> Self {
        Self {
            scheme: Scheme::EulerMaruyama,
            dt,
        }
    }

    pub fn heun(dt: f64) -> Self {
        Self {
            scheme: Scheme::StratonovichHeun,
            dt,
        }
    }

    pub fn validate(&self, spec: &DynamicsSpec) -> Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::InvalidConfig(format!("time step must be positive, got {}", self.dt)));
        }
        if self.scheme == Scheme::Rk4 && !spec.is_deterministic() {
            return Err(Error::Rk4WithNoise);
        }
        Ok(())
    }
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self::rk4(1e-2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Step {
    t: f64,
    h: f64,
    index: i64,
}

/// The step grid of one integration window.
#[derive(Debug, Clone, PartialEq)]
pub struct StepPlan {
    steps: Vec<Step>,
    backward: bool,
}

impl StepPlan {
    pub fn new(t0: f64, tau: f64, dt: f64) -> Result<Self> {
        if !(t0.is_finite() && tau.is_finite()) {
            return Err(Error::InvalidConfig("t0 and tau must be finite".into()));
        }
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::InvalidConfig(format!("time step must be positive, got {dt}")));
        }
        let backward = tau < 0.0;
        let sign = if backward { -1.0 } else { 1.0 };
        let span = tau.abs();
        let ratio = span / dt;
        let nearest = ratio.round();
        let (full, partial) = if (ratio - nearest).abs() <= 1e-9 * ratio.max(1.0) {
            (nearest as usize, 0.0)
        } else {
            let n = ratio.floor();
            (n as usize, span - n * dt)
        };
        let mut steps = Vec::with_capacity(full + 1);
        let grid_index = |t: f64| -> i64 {
            let g = t / dt;
            if backward {
                (g - 1e-9).ceil() as i64
            } else {
                (g + 1e-9).floor() as i64
            }
        };
        for k in 0..full {
            let t = t0 + sign * (k as f64) * dt;
            steps.push(Step {
                t,
                h: sign * dt,
                index: grid_index(t),
            });
        }
        if partial > 0.0 {
            let t = t0 + sign * (full as f64) * dt;
            let mut index = grid_index(t);
            if let Some(prev) = steps.last() {
                if prev.index == index {
                    index += sign as i64;
                }
            }
            steps.push(Step {
                t,
                h: sign * partial,
                index,
            });
        }
        Ok(Self { steps, backward })
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn is_backward(&self) -> bool {
        self.backward
    }
}

/// Brownian increments of one path over one [`StepPlan`].
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseRealization {
    components: usize,
    increments: Vec<f64>,
}

impl NoiseRealization {
    pub fn draw(spec: &DynamicsSpec, plan: &StepPlan, path: &PathKey) -> Self {
        if spec.is_deterministic() {
            return Self {
                components: 0,
                increments: Vec::new(),
            };
        }
        let components = spec.noise_components();
        let mut increments = vec![0.0; components * plan.len()];
        for (step, chunk) in plan.steps.iter().zip(increments.chunks_mut(components)) {
            path.normals(step.index, plan.backward, chunk);
            let scale = step.h.abs().sqrt();
            for v in chunk.iter_mut() {
                *v *= scale;
            }
        }
        Self { components, increments }
    }

    #[inline]
    fn step(&self, k: usize) -> Option<&[f64]> {
        if self.components == 0 {
            None
        } else {
            Some(&self.increments[k * self.components..(k + 1) * self.components])
        }
    }
}

/// Advances `x0` (and optionally a tangent matrix) through `plan`.
///
/// The tangent is integrated as part of the extended system with the same
/// scheme and increments as the base point, so it is the exact derivative
/// of the discrete flow map.
pub fn advance(
    spec: &DynamicsSpec,
    scheme: Scheme,
    plan: &StepPlan,
    noise: &NoiseRealization,
    x0: &Point,
    tangent: Option<Mat>,
) -> Result<(Point, Option<Mat>)> {
    if scheme == Scheme::Rk4 && !spec.is_deterministic() {
        return Err(Error::Rk4WithNoise);
    }
    let mut x = spec.domain.wrap(x0);
    let mut jac = tangent;
    for (k, step) in plan.steps.iter().enumerate() {
        let (t, h) = (step.t, step.h);
        let dw = noise.step(k);
        match scheme {
            Scheme::Rk4 => {
                let k1 = spec.drift(t, &x);
                let x2 = x + k1 * (0.5 * h);
                let k2 = spec.drift(t + 0.5 * h, &x2);
                let x3 = x + k2 * (0.5 * h);
                let k3 = spec.drift(t + 0.5 * h, &x3);
                let x4 = x + k3 * h;
                let k4 = spec.drift(t + h, &x4);
                if let Some(j) = jac.as_mut() {
                    let l1 = spec.drift_jacobian(t, &x) * *j;
                    let l2 = spec.drift_jacobian(t + 0.5 * h, &x2) * (*j + l1 * (0.5 * h));
                    let l3 = spec.drift_jacobian(t + 0.5 * h, &x3) * (*j + l2 * (0.5 * h));
                    let l4 = spec.drift_jacobian(t + h, &x4) * (*j + l3 * h);
                    *j += (l1 + l2 * 2.0 + l3 * 2.0 + l4) * (h / 6.0);
                }
                x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
            }
            Scheme::EulerMaruyama => {
                let b = spec.drift(t, &x);
                let mut dx = b * h;
                if let Some(j) = jac.as_mut() {
                    let mut dj = spec.drift_jacobian(t, &x) * *j * h;
                    if let Some(dw) = dw {
                        dj += spec.noise_tangent(j, dw);
                    }
                    *j += dj;
                }
                if let Some(dw) = dw {
                    dx += spec.noise_increment(&x, dw);
                }
                x += dx;
            }
            Scheme::StratonovichHeun => {
                let b0 = spec.drift(t, &x);
                let s0 = dw.map(|dw| spec.noise_increment(&x, dw)).unwrap_or_else(Point::zeros);
                let xp = x + b0 * h + s0;
                let b1 = spec.drift(t + h, &xp);
                let s1 = dw.map(|dw| spec.noise_increment(&xp, dw)).unwrap_or_else(Point::zeros);
                if let Some(j) = jac.as_mut() {
                    let a0 = spec.drift_jacobian(t, &x);
                    let g0 = dw.map(|dw| spec.noise_tangent(j, dw)).unwrap_or_else(Mat::zeros);
                    let jp = *j + a0 * *j * h + g0;
                    let a1 = spec.drift_jacobian(t + h, &xp);
                    let g1 = dw.map(|dw| spec.noise_tangent(&jp, dw)).unwrap_or_else(Mat::zeros);
                    *j += (a0 * *j + a1 * jp) * (0.5 * h) + (g0 + g1) * 0.5;
                }
                x += (b0 + b1) * (0.5 * h) + (s0 + s1) * 0.5;
            }
        }
        x = spec.domain.wrap(&x);
        let finite = x.iter().all(|v| v.is_finite()) && jac.map_or(true, |j| j.iter().all(|v| v.is_finite()));
        if !finite {
            return Err(Error::NonFinite { step: k, time: t + h });
        }
    }
    Ok((x, jac))
}

fn check_start(spec: &DynamicsSpec, cfg: &IntegratorConfig, x0: &Point) -> Result<()> {
    spec.validate()?;
    cfg.validate(spec)?;
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { step: 0, time: f64::NAN });
    }
    spec.domain.check_contains(x0)
}

/// `phi_{t0+tau, t0}(x0, omega)` for the Brownian path `path`.
pub fn flow_map(
    spec: &DynamicsSpec,
    t0: f64,
    tau: f64,
    x0: &Point,
    path: &PathKey,
    cfg: &IntegratorConfig,
) -> Result<Point> {
    check_start(spec, cfg, x0)?;
    let plan = StepPlan::new(t0, tau, cfg.dt)?;
    let noise = NoiseRealization::draw(spec, &plan, path);
    advance(spec, cfg.scheme, &plan, &noise, x0, None).map(|(x, _)| x)
}

/// Centred flow `phi(x + v, omega) - phi(x, omega)` for every offset `v`,
/// all driven by the same Brownian path. Each entry fails independently;
/// a failure of the centre fails every entry.
pub fn centred_flow_each(
    spec: &DynamicsSpec,
    plan: &StepPlan,
    scheme: Scheme,
    center: &Point,
    offsets: &[Point],
    noise: &NoiseRealization,
) -> Vec<Result<Point>> {
    let image_center = match advance(spec, scheme, plan, noise, center, None) {
        Ok((c, _)) => c,
        Err(e) => return vec![Err(e); offsets.len()],
    };
    offsets
        .iter()
        .map(|v| {
            let (img, _) = advance(spec, scheme, plan, noise, &(center + v), None)?;
            Ok(spec.domain.displacement(&img, &image_center))
        })
        .collect()
}

/// Displacements `Phi^x(v, omega_l)` for a batch of offsets sharing one
/// realization.
pub fn centred_flow_batch(
    spec: &DynamicsSpec,
    t0: f64,
    tau: f64,
    center: &Point,
    offsets: &[Point],
    path: &PathKey,
    cfg: &IntegratorConfig,
) -> Result<Vec<Point>> {
    check_start(spec, cfg, center)?;
    for v in offsets {
        spec.domain.check_contains(&(center + v))?;
    }
    let plan = StepPlan::new(t0, tau, cfg.dt)?;
    let noise = NoiseRealization::draw(spec, &plan, path);
    centred_flow_each(spec, &plan, cfg.scheme, center, offsets, &noise)
        .into_iter()
        .collect()
}
