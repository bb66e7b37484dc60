//! Derivative flow and Lyapunov-type functionals.
//!
//! Singular values come from the Cauchy-Green tensor `J^T J`: closed form
//! in one and two dimensions, a symmetric eigensolve in three.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{Mat, Point};
use crate::dynamics::DynamicsSpec;
use crate::error::{Error, Result};
use crate::integrate::{advance, IntegratorConfig, NoiseRealization, StepPlan};
use crate::noise::PathKey;
use crate::stats::{mean, pairwise_sum, Estimate};

/// Jacobian `D phi_{t0+tau,t0}(x, omega)` together with the image point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TangentState {
    pub base_point: Point,
    pub jacobian: Mat,
    pub dim: usize,
}

impl TangentState {
    pub fn det(&self) -> f64 {
        let j = &self.jacobian;
        match self.dim {
            1 => j[(0, 0)],
            2 => j[(0, 0)] * j[(1, 1)] - j[(0, 1)] * j[(1, 0)],
            _ => j.determinant(),
        }
    }

    /// Singular values in descending order.
    pub fn singular_values(&self) -> Vec<f64> {
        singular_values(&self.jacobian, self.dim)
    }

    /// `|J y| / |y|`.
    pub fn stretch(&self, y: &Point) -> Result<f64> {
        let n = y.norm();
        if n == 0.0 || !n.is_finite() {
            return Err(Error::ZeroDirection);
        }
        Ok((self.jacobian * y).norm() / n)
    }
}

/// Singular values of the leading `dim x dim` block, descending.
pub fn singular_values(j: &Mat, dim: usize) -> Vec<f64> {
    match dim {
        1 => vec![j[(0, 0)].abs()],
        2 => {
            let (a, b, c, d) = (j[(0, 0)], j[(0, 1)], j[(1, 0)], j[(1, 1)]);
            let frob2 = a * a + b * b + c * c + d * d;
            let det = (a * d - b * c).abs();
            // eigenvalues of J^T J are s^2 with s1^2 + s2^2 = frob2, s1 s2 = det
            let smax = 0.5 * ((frob2 + 2.0 * det).sqrt() + (frob2 - 2.0 * det).max(0.0).sqrt());
            let smin = if smax > 0.0 { det / smax } else { 0.0 };
            vec![smax, smin]
        }
        _ => {
            let cg = j.transpose() * j;
            let mut ev: Vec<f64> = cg.symmetric_eigenvalues().iter().map(|l| l.max(0.0).sqrt()).collect();
            ev.sort_by(|a, b| b.total_cmp(a));
            ev
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LyapunovSample {
    pub ftle_max: f64,
    pub ftle_min: f64,
    pub singular_values: Vec<f64>,
    pub realization: u64,
}

/// Monte Carlo layout: realization `l` uses `PathKey::shared(seed, box, l)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MonteCarlo {
    pub master_seed: u64,
    pub box_index: u64,
    pub realizations: usize,
}

impl MonteCarlo {
    pub fn new(master_seed: u64, realizations: usize) -> Self {
        Self {
            master_seed,
            box_index: 0,
            realizations,
        }
    }

    pub fn path(&self, realization: usize) -> PathKey {
        PathKey::shared(self.master_seed, self.box_index, realization as u64)
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if tau == 0.0 || !tau.is_finite() {
        return Err(Error::InvalidConfig(format!("tau must be finite and nonzero, got {tau}")));
    }
    Ok(())
}

fn derivative_flow_on(spec: &DynamicsSpec, cfg: &IntegratorConfig, plan: &StepPlan, x: &Point, path: &PathKey) -> Result<TangentState> {
    let noise = NoiseRealization::draw(spec, plan, path);
    let (base, jac) = advance(spec, cfg.scheme, plan, &noise, x, Some(Mat::identity()))?;
    let state = TangentState {
        base_point: base,
        jacobian: jac.expect("tangent requested"),
        dim: spec.dim,
    };
    let det = state.det();
    if !(det.abs() >= 1e-300) {
        return Err(Error::DegenerateJacobian { det });
    }
    Ok(state)
}

/// Co-integrates the base trajectory and the linearised equation.
pub fn derivative_flow(
    spec: &DynamicsSpec,
    t0: f64,
    tau: f64,
    x: &Point,
    path: &PathKey,
    cfg: &IntegratorConfig,
) -> Result<TangentState> {
    spec.validate()?;
    cfg.validate(spec)?;
    spec.domain.check_contains(x)?;
    let plan = StepPlan::new(t0, tau, cfg.dt)?;
    derivative_flow_on(spec, cfg, &plan, x, path)
}

pub fn lyapunov_sample(
    spec: &DynamicsSpec,
    t0: f64,
    tau: f64,
    x: &Point,
    path: &PathKey,
    cfg: &IntegratorConfig,
) -> Result<LyapunovSample> {
    check_tau(tau)?;
    let state = derivative_flow(spec, t0, tau, x, path, cfg)?;
    let sv = state.singular_values();
    Ok(LyapunovSample {
        ftle_max: sv[0].ln() / tau.abs(),
        ftle_min: sv[sv.len() - 1].ln() / tau.abs(),
        singular_values: sv,
        realization: path.realization_index,
    })
}

/// Largest FTLE, forward for `tau > 0` and backward for `tau < 0`.
pub fn ftle_max(spec: &DynamicsSpec, t0: f64, tau: f64, x: &Point, path: &PathKey, cfg: &IntegratorConfig) -> Result<f64> {
    lyapunov_sample(spec, t0, tau, x, path, cfg).map(|s| s.ftle_max)
}

/// Smallest FTLE `(1 / 2|tau|) log lambda_min(J^T J)`.
pub fn ftle_min(spec: &DynamicsSpec, t0: f64, tau: f64, x: &Point, path: &PathKey, cfg: &IntegratorConfig) -> Result<f64> {
    lyapunov_sample(spec, t0, tau, x, path, cfg).map(|s| s.ftle_min)
}

/// Jacobians of every realization, in realization order. Deterministic
/// systems are integrated once.
pub fn jacobian_samples(
    spec: &DynamicsSpec,
    t0: f64,
    tau: f64,
    x: &Point,
    mc: &MonteCarlo,
    cfg: &IntegratorConfig,
) -> Result<Vec<TangentState>> {
    check_tau(tau)?;
    if mc.realizations == 0 {
        return Err(Error::InvalidConfig("at least one realization is required".into()));
    }
    spec.validate()?;
    cfg.validate(spec)?;
    spec.domain.check_contains(x)?;
    let plan = StepPlan::new(t0, tau, cfg.dt)?;
    if spec.is_deterministic() {
        let one = derivative_flow_on(spec, cfg, &plan, x, &mc.path(0))?;
        return Ok(vec![one; mc.realizations]);
    }
    (0..mc.realizations)
        .into_par_iter()
        .map(|l| derivative_flow_on(spec, cfg, &plan, x, &mc.path(l)))
        .collect()
}

/// Initial perturbation directions.
#[derive(Debug, Clone, PartialEq)]
pub enum Directions {
    Given(Vec<Point>),
    /// `n` deterministic, evenly spread unit vectors.
    UniformSphere(usize),
}

impl Directions {
    pub fn vectors(&self, dim: usize) -> Result<Vec<Point>> {
        match self {
            Directions::Given(v) => {
                if v.is_empty() {
                    return Err(Error::InvalidConfig("no directions given".into()));
                }
                if v.iter().any(|y| y.norm() == 0.0) {
                    return Err(Error::ZeroDirection);
                }
                Ok(v.clone())
            }
            Directions::UniformSphere(n) => {
                if *n == 0 {
                    return Err(Error::InvalidConfig("need at least one direction".into()));
                }
                Ok(sphere_points(dim, *n))
            }
        }
    }
}

/// Evenly spread unit vectors: one for `dim = 1`, angles over a half
/// circle for `dim = 2` (the stretch is even in `y`), a Fibonacci lattice
/// for `dim = 3`.
pub fn sphere_points(dim: usize, n: usize) -> Vec<Point> {
    match dim {
        1 => vec![Point::new(1.0, 0.0, 0.0)],
        2 => (0..n)
            .map(|k| {
                let th = std::f64::consts::PI * (k as f64 + 0.5) / n as f64;
                Point::new(th.cos(), th.sin(), 0.0)
            })
            .collect(),
        _ => {
            let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
            (0..n)
                .map(|k| {
                    let z = 1.0 - 2.0 * (k as f64 + 0.5) / n as f64;
                    let r = (1.0 - z * z).sqrt();
                    let th = golden * k as f64;
                    Point::new(r * th.cos(), r * th.sin(), z)
                })
                .collect()
        }
    }
}

/// Mean of `(1/|tau|) log(|J y| / |y|)` over realizations and directions.
/// The standard error is taken over per-realization direction averages.
pub fn ftle_stoch_avg(
    spec: &DynamicsSpec,
    t0: f64,
    tau: f64,
    x: &Point,
    directions: &Directions,
    mc: &MonteCarlo,
    cfg: &IntegratorConfig,
) -> Result<Estimate> {
    let dirs = directions.vectors(spec.dim)?;
    let samples = jacobian_samples(spec, t0, tau, x, mc, cfg)?;
    let per_realization = samples
        .iter()
        .map(|s| {
            let logs = dirs.iter().map(|y| s.stretch(y).map(f64::ln)).collect::<Result<Vec<_>>>()?;
            Ok(mean(&logs) / tau.abs())
        })
        .collect::<Result<Vec<_>>>()?;
    if spec.is_deterministic() {
        return Ok(Estimate::exact(per_realization[0]));
    }
    Ok(Estimate::from_samples(&per_realization))
}

/// `(1/|tau|) log mean(exp(p * l_i))` with a delta-method standard error,
/// evaluated without overflow for large `|p|`.
pub(crate) fn log_moment(logs: &[f64], p: f64, tau: f64) -> Result<Estimate> {
    let scaled: Vec<f64> = logs.iter().map(|l| p * l).collect();
    let m = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return Err(Error::MomentOverflow { p });
    }
    let w: Vec<f64> = scaled.iter().map(|s| (s - m).exp()).collect();
    let est = Estimate::from_samples(&w);
    let value = (m + est.value.ln()) / tau.abs();
    if !value.is_finite() {
        return Err(Error::MomentOverflow { p });
    }
    Ok(Estimate {
        value,
        stderr: est.stderr / est.value / tau.abs(),
    })
}

/// Finite-time moment exponents `(1/|tau|) log E[(|J y|/|y|)^p]` for each
/// `p`, all computed from the same realizations.
pub fn moment_exponent_curve(
    spec: &DynamicsSpec,
    t0: f64,
    tau: f64,
    x: &Point,
    y: &Point,
    ps: &[f64],
    mc: &MonteCarlo,
    cfg: &IntegratorConfig,
) -> Result<Vec<Estimate>> {
    let samples = jacobian_samples(spec, t0, tau, x, mc, cfg)?;
    let logs = samples.iter().map(|s| s.stretch(y).map(f64::ln)).collect::<Result<Vec<_>>>()?;
    ps.iter().map(|p| log_moment(&logs, *p, tau)).collect()
}

pub fn moment_exponent(
    spec: &DynamicsSpec,
    t0: f64,
    tau: f64,
    x: &Point,
    y: &Point,
    p: f64,
    mc: &MonteCarlo,
    cfg: &IntegratorConfig,
) -> Result<Estimate> {
    moment_exponent_curve(spec, t0, tau, x, y, &[p], mc, cfg).map(|v| v[0])
}

/// `(1/|tau|) log E[|det J|^p]`.
pub fn sum_exponents_functional(
    spec: &DynamicsSpec,
    t0: f64,
    tau: f64,
    x: &Point,
    p: f64,
    mc: &MonteCarlo,
    cfg: &IntegratorConfig,
) -> Result<Estimate> {
    let samples = jacobian_samples(spec, t0, tau, x, mc, cfg)?;
    let logs: Vec<f64> = samples.iter().map(|s| s.det().abs().ln()).collect();
    log_moment(&logs, p, tau)
}

/// Sum over an orthonormal basis of the averaged direction exponents,
/// `sum_i E[Lambda(x, e_i)]`, with a standard error over realizations.
pub fn basis_exponent_sum(
    spec: &DynamicsSpec,
    t0: f64,
    tau: f64,
    x: &Point,
    mc: &MonteCarlo,
    cfg: &IntegratorConfig,
) -> Result<Estimate> {
    let samples = jacobian_samples(spec, t0, tau, x, mc, cfg)?;
    let per: Vec<f64> = samples
        .iter()
        .map(|s| {
            let terms: Vec<f64> = (0..spec.dim)
                .map(|i| {
                    let mut e = Point::zeros();
                    e[i] = 1.0;
                    (s.jacobian * e).norm().ln()
                })
                .collect();
            pairwise_sum(&terms) / tau.abs()
        })
        .collect();
    if spec.is_deterministic() {
        return Ok(Estimate::exact(per[0]));
    }
    Ok(Estimate::from_samples(&per))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn p0() -> PathKey {
        PathKey::shared(0, 0, 0)
    }

    fn saddle(l: f64) -> DynamicsSpec {
        DynamicsSpec::linear(&[vec![l, 0.0], vec![0.0, -l]], &[0.0, 0.0]).unwrap()
    }

    fn rotation() -> DynamicsSpec {
        DynamicsSpec::linear(&[vec![0.0, -1.0], vec![1.0, 0.0]], &[0.0, 0.0]).unwrap()
    }

    #[test]
    fn saddle_jacobian_closed_form() {
        let s = derivative_flow(&saddle(0.3), 0.0, 2.0, &Point::new(0.2, 0.1, 0.0), &p0(), &IntegratorConfig::rk4(1e-3)).unwrap();
        assert_abs_diff_eq!(s.jacobian[(0, 0)], 0.6f64.exp(), epsilon = 1e-8);
        assert_abs_diff_eq!(s.jacobian[(1, 1)], (-0.6f64).exp(), epsilon = 1e-8);
        assert_abs_diff_eq!(s.jacobian[(0, 1)], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn rotation_is_isometry() {
        let s = derivative_flow(&rotation(), 0.0, 3.0, &Point::new(1.0, 0.0, 0.0), &p0(), &IntegratorConfig::rk4(1e-3)).unwrap();
        let sv = s.singular_values();
        assert_abs_diff_eq!(sv[0], 1.0, epsilon = 1e-8);
        assert_abs_diff_eq!(sv[1], 1.0, epsilon = 1e-8);
        let f = ftle_max(&rotation(), 0.0, 3.0, &Point::new(1.0, 0.0, 0.0), &p0(), &IntegratorConfig::rk4(1e-3)).unwrap();
        assert_abs_diff_eq!(f, 0.0, epsilon = 1e-8);
    }

    #[test]
    fn saddle_exponents() {
        let cfg = IntegratorConfig::rk4(1e-3);
        let x = Point::new(0.0, 0.0, 0.0);
        assert_abs_diff_eq!(ftle_max(&saddle(0.3), 0.0, 2.0, &x, &p0(), &cfg).unwrap(), 0.3, epsilon = 1e-8);
        assert_abs_diff_eq!(ftle_min(&saddle(0.3), 0.0, 2.0, &x, &p0(), &cfg).unwrap(), -0.3, epsilon = 1e-8);
    }

    #[test]
    fn contraction_forward_and_backward() {
        let spec = DynamicsSpec::linear(&[vec![-1.0]], &[0.0]).unwrap();
        let cfg = IntegratorConfig::rk4(1e-3);
        let x = Point::new(0.5, 0.0, 0.0);
        assert_abs_diff_eq!(ftle_max(&spec, 0.0, 1.0, &x, &p0(), &cfg).unwrap(), -1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(ftle_max(&spec, 0.0, -1.0, &x, &p0(), &cfg).unwrap(), 1.0, epsilon = 1e-9);
    }

    #[test]
    fn identity_flow_has_zero_exponents() {
        let spec = DynamicsSpec::translation(&[0.0, 0.0]);
        let s = lyapunov_sample(&spec, 0.0, 1.0, &Point::zeros(), &p0(), &IntegratorConfig::rk4(0.1)).unwrap();
        assert_eq!(s.ftle_min, 0.0);
        assert_eq!(s.ftle_max, 0.0);
    }

    #[test]
    fn three_dimensional_singular_values() {
        let spec = DynamicsSpec::linear(
            &[vec![0.2, 0.0, 0.0], vec![0.0, -0.1, 0.0], vec![0.0, 0.0, 0.05]],
            &[0.0; 3],
        )
        .unwrap();
        let s = lyapunov_sample(&spec, 0.0, 2.0, &Point::zeros(), &p0(), &IntegratorConfig::rk4(1e-3)).unwrap();
        assert_abs_diff_eq!(s.ftle_max, 0.2, epsilon = 1e-8);
        assert_abs_diff_eq!(s.ftle_min, -0.1, epsilon = 1e-8);
        assert_eq!(s.singular_values.len(), 3);
    }

    #[test]
    fn zero_tau_rejected() {
        assert!(ftle_max(&saddle(0.3), 0.0, 0.0, &Point::zeros(), &p0(), &IntegratorConfig::rk4(0.1)).is_err());
    }

    #[test]
    fn zero_direction_rejected() {
        let err = ftle_stoch_avg(
            &saddle(0.3),
            0.0,
            1.0,
            &Point::zeros(),
            &Directions::Given(vec![Point::zeros()]),
            &MonteCarlo::new(0, 1),
            &IntegratorConfig::rk4(0.1),
        )
        .unwrap_err();
        assert_eq!(err, Error::ZeroDirection);
    }

    #[test]
    fn deterministic_average_has_no_spread() {
        let e = ftle_stoch_avg(
            &saddle(0.3),
            0.0,
            2.0,
            &Point::zeros(),
            &Directions::Given(vec![Point::new(1.0, 0.0, 0.0)]),
            &MonteCarlo::new(0, 5),
            &IntegratorConfig::rk4(1e-3),
        )
        .unwrap();
        assert_eq!(e.stderr, 0.0);
        assert_abs_diff_eq!(e.value, 0.3, epsilon = 1e-8);
    }

    #[test]
    fn deterministic_moment_is_linear_in_p() {
        let spec = saddle(0.3);
        let cfg = IntegratorConfig::rk4(1e-3);
        let y = Point::new(1.0, 1.0, 0.0);
        let lam = ftle_stoch_avg(&spec, 0.0, 2.0, &Point::zeros(), &Directions::Given(vec![y]), &MonteCarlo::new(0, 1), &cfg).unwrap();
        for p in [-2.0, 0.5, 3.0] {
            let e = moment_exponent(&spec, 0.0, 2.0, &Point::zeros(), &y, p, &MonteCarlo::new(0, 3), &cfg).unwrap();
            assert_abs_diff_eq!(e.value, p * lam.value, epsilon = 1e-12);
        }
    }

    #[test]
    fn determinant_functional() {
        let cfg = IntegratorConfig::rk4(1e-3);
        let one_d = DynamicsSpec::linear(&[vec![0.4]], &[0.0]).unwrap();
        let j = sum_exponents_functional(&one_d, 0.0, 2.0, &Point::zeros(), 3.0, &MonteCarlo::new(0, 1), &cfg).unwrap();
        assert_abs_diff_eq!(j.value, 1.2, epsilon = 1e-9);
        let j = sum_exponents_functional(&saddle(0.3), 0.0, 2.0, &Point::zeros(), 2.0, &MonteCarlo::new(0, 1), &cfg).unwrap();
        assert_abs_diff_eq!(j.value, 0.0, epsilon = 1e-9);
    }

    #[test]
    fn extreme_moment_stays_finite() {
        let spec = DynamicsSpec::linear(&[vec![5.0]], &[0.0]).unwrap();
        let e = moment_exponent(&spec, 0.0, 10.0, &Point::zeros(), &Point::new(1.0, 0.0, 0.0), 100.0, &MonteCarlo::new(0, 1), &IntegratorConfig::rk4(1e-3)).unwrap();
        assert!((e.value - 500.0).abs() < 1e-6);
    }
}
