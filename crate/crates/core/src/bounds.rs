//! Inequality checks on oracle systems whose laws are known in closed form.
//!
//! Each check produces a [`Report`] listing both sides of every inequality
//! and its margin. Failed inequalities are reported, never raised as errors.

use std::f64::consts::{E, PI};
use std::fmt::Write as _;

use serde::Serialize;
use statrs::function::gamma::{digamma, ln_gamma};

use crate::domain::{Mat, Point};
use crate::dynamics::{DynamicsSpec, System};
use crate::error::{Error, Result};
use crate::integrate::IntegratorConfig;
use crate::stats::Estimate;
use crate::tangent::{basis_exponent_sum, jacobian_samples, log_moment, sphere_points, sum_exponents_functional, MonteCarlo};

/// Equality checks on deterministic systems use this absolute tolerance.
pub const EQUALITY_TOL: f64 = 1e-6;

/// `lhs <= rhs` (or `lhs == rhs` for equalities) with its outcome.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Inequality {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    /// `rhs - lhs`; negative when a one-sided inequality fails.
    pub margin: f64,
    /// Allowance added to the right side before deciding.
    pub slack: f64,
    pub equality: bool,
    pub holds: bool,
}

impl Inequality {
    pub fn at_most(name: &str, lhs: f64, rhs: f64, slack: f64) -> Self {
        Self {
            name: name.into(),
            lhs,
            rhs,
            margin: rhs - lhs,
            slack,
            equality: false,
            holds: lhs <= rhs + slack,
        }
    }

    pub fn equal(name: &str, lhs: f64, rhs: f64, tol: f64) -> Self {
        Self {
            name: name.into(),
            lhs,
            rhs,
            margin: rhs - lhs,
            slack: tol,
            equality: true,
            holds: (lhs - rhs).abs() <= tol,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub check: String,
    pub system: String,
    pub tau: f64,
    pub quantities: Vec<(String, f64)>,
    pub inequalities: Vec<Inequality>,
}

impl Report {
    pub fn inequality(&self, name: &str) -> Option<&Inequality> {
        self.inequalities.iter().find(|i| i.name == name)
    }

    pub fn quantity(&self, name: &str) -> Option<f64> {
        self.quantities.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }

    pub fn all_hold(&self) -> bool {
        self.inequalities.iter().all(|i| i.holds)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("check {} on {} (tau = {})\n", self.check, self.system, self.tau);
        for (n, v) in &self.quantities {
            let _ = writeln!(s, "  {n} = {v:.10}");
        }
        for i in &self.inequalities {
            let op = if i.equality { "==" } else { "<=" };
            let _ = writeln!(
                s,
                "  [{}] {}: {:.10} {op} {:.10} (margin {:.3e}, slack {:.1e})",
                if i.holds { "holds" } else { "FAILS" },
                i.name,
                i.lhs,
                i.rhs,
                i.margin,
                i.slack
            );
        }
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports serialise")
    }
}

/// Law of the initial tangent vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitLaw {
    /// Isotropic `N(0, std^2 I)`.
    Gaussian { std: f64 },
    /// Uniform on the unit sphere.
    SphereUniform,
}

fn linear_matrix(spec: &DynamicsSpec) -> Result<Mat> {
    match &spec.system {
        System::Linear { matrix } => Ok(*matrix),
        _ => Err(Error::NotAnOracle(format!("`{}` is not a linear system", spec.name))),
    }
}

fn restrict(m: &Mat, dim: usize) -> nalgebra::DMatrix<f64> {
    nalgebra::DMatrix::from_fn(dim, dim, |i, j| m[(i, j)])
}

/// `E log |y|` for `y ~ N(0, s^2 I_d)`.
fn gaussian_mean_log_norm(d: usize, s: f64) -> f64 {
    s.ln() + 0.5 * (digamma(0.5 * d as f64) + 2f64.ln())
}

/// `log E |y|^a` for `y ~ N(0, s^2 I_d)`, `a > -d`.
fn gaussian_log_moment_norm(d: usize, s: f64, a: f64) -> f64 {
    let d = d as f64;
    a * s.ln() + 0.5 * a * 2f64.ln() + ln_gamma(0.5 * (d + a)) - ln_gamma(0.5 * d)
}

/// Compares the mean stretching exponent with the KL rate of the evolved
/// tangent law, and checks the Donsker-Varadhan lower bound obtained from
/// `f(y) = a log|y| - log E|y|^a`.
///
/// Oracles are deterministic linear systems in one or two dimensions, for
/// which `E[Lambda] = log|M| / tau` (1D) or `log((s1 + s2)/2) / tau` (2D,
/// isotropic law, singular values `s_i` of `M = exp(A tau)`).
pub fn check_dv_ftle(spec: &DynamicsSpec, tau: f64, law: InitLaw, dv_exponent: f64) -> Result<Report> {
    let a = linear_matrix(spec)?;
    if !spec.is_deterministic() || spec.dim > 2 {
        return Err(Error::NotAnOracle(format!(
            "`{}`: closed forms need a deterministic linear system of dimension 1 or 2",
            spec.name
        )));
    }
    if tau == 0.0 || !tau.is_finite() {
        return Err(Error::InvalidConfig(format!("tau must be finite and nonzero, got {tau}")));
    }
    let d = spec.dim;
    if !(dv_exponent > -(d as f64)) {
        return Err(Error::InvalidConfig(format!("DV exponent must exceed -{d}")));
    }
    let m = restrict(&(a * tau).exp(), d);
    let sv = m.clone().svd(false, false).singular_values;
    let mean_log_stretch = if d == 1 {
        sv[0].ln()
    } else {
        (0.5 * (sv[0] + sv[1])).ln()
    };
    let expected = mean_log_stretch / tau.abs();
    let mmt = &m * m.transpose();
    let kl = match law {
        InitLaw::Gaussian { std } => {
            if !(std > 0.0 && std.is_finite()) {
                return Err(Error::InvalidConfig(format!("Gaussian std must be positive, got {std}")));
            }
            0.5 * (mmt.trace() - d as f64 - mmt.determinant().ln())
        }
        InitLaw::SphereUniform => {
            let orthogonal = (&mmt - nalgebra::DMatrix::identity(d, d)).amax() < 1e-12;
            if orthogonal {
                0.0
            } else {
                f64::INFINITY
            }
        }
    };
    let kl_rate = kl / tau.abs();
    let dv = match law {
        InitLaw::Gaussian { std } => {
            let ex = dv_exponent;
            ex * (gaussian_mean_log_norm(d, std) + mean_log_stretch) - gaussian_log_moment_norm(d, std, ex)
        }
        InitLaw::SphereUniform => dv_exponent * mean_log_stretch,
    };
    let dv_rate = dv / tau.abs();
    Ok(Report {
        check: "dv_ftle".into(),
        system: spec.name.clone(),
        tau,
        quantities: vec![
            ("mean_ftle".into(), expected),
            ("kl_rate".into(), kl_rate),
            ("dv_lower_rate".into(), dv_rate),
            ("dv_exponent".into(), dv_exponent),
        ],
        inequalities: vec![
            Inequality::at_most("dv_lower_bound", dv_rate, kl_rate, 1e-12),
            Inequality::at_most("ftle_upper", expected, kl_rate, 0.0),
            Inequality::at_most("ftle_lower", -kl_rate, expected, 0.0),
        ],
    })
}

fn is_skew(m: &Mat, dim: usize) -> bool {
    let r = restrict(m, dim);
    (&r + r.transpose()).amax() < 1e-14
}

/// Averaged moment exponent plus `(2 - e)/|tau|` against the KL rate of the
/// angular law, on isometric linear oracles (skew drift and skew
/// multiplicative noise), where the angular law stays uniform and the KL
/// rate is zero. Directions are `n_dirs` evenly spread unit vectors.
#[allow(clippy::too_many_arguments)]
pub fn check_momexp_bound(
    spec: &DynamicsSpec,
    t0: f64,
    tau: f64,
    p: f64,
    n_dirs: usize,
    mc: &MonteCarlo,
    cfg: &IntegratorConfig,
) -> Result<Report> {
    let a = linear_matrix(spec)?;
    if !is_skew(&a, spec.dim) || !spec.multiplicative.iter().all(|b| is_skew(b, spec.dim)) {
        return Err(Error::NotAnOracle(format!(
            "`{}`: the angular law is only known to stay uniform for skew-symmetric coefficients",
            spec.name
        )));
    }
    let samples = jacobian_samples(spec, t0, tau, &Point::zeros(), mc, cfg)?;
    let dirs = sphere_points(spec.dim, n_dirs.max(1));
    let mut values = Vec::with_capacity(dirs.len());
    let mut stderr: f64 = 0.0;
    for y in &dirs {
        let logs = samples.iter().map(|s| s.stretch(y).map(f64::ln)).collect::<Result<Vec<_>>>()?;
        let e = log_moment(&logs, p, tau)?;
        values.push(e.value);
        stderr = stderr.max(e.stderr);
    }
    let avg = Estimate {
        value: crate::stats::mean(&values),
        stderr,
    };
    let lhs = avg.value + (2.0 - E) / tau.abs();
    Ok(Report {
        check: "momexp_bound".into(),
        system: spec.name.clone(),
        tau,
        quantities: vec![
            ("p".into(), p),
            ("mean_moment_exponent".into(), avg.value),
            ("moment_stderr".into(), avg.stderr),
            ("kl_rate".into(), 0.0),
        ],
        inequalities: vec![Inequality::at_most("momexp_kl", lhs, 0.0, 3.0 * avg.stderr)],
    })
}

/// `d * sum_i E[Lambda(x, e_i)]` against `J(x; d)` for the standard basis.
///
/// Deterministic systems are checked for equality within [`EQUALITY_TOL`],
/// stochastic ones for `<=` within three standard errors.
pub fn check_sum_exponents(
    spec: &DynamicsSpec,
    t0: f64,
    tau: f64,
    x: &Point,
    mc: &MonteCarlo,
    cfg: &IntegratorConfig,
) -> Result<Report> {
    let d = spec.dim as f64;
    let sum = basis_exponent_sum(spec, t0, tau, x, mc, cfg)?;
    let j = sum_exponents_functional(spec, t0, tau, x, d, mc, cfg)?;
    let lhs = d * sum.value;
    let check = if spec.is_deterministic() {
        Inequality::equal("sum_exponents", lhs, j.value, EQUALITY_TOL)
    } else {
        Inequality::at_most("sum_exponents", lhs, j.value, 3.0 * (d * sum.stderr + j.stderr))
    };
    Ok(Report {
        check: "sum_exponents".into(),
        system: spec.name.clone(),
        tau,
        quantities: vec![
            ("basis_exponent_sum".into(), sum.value),
            ("basis_exponent_stderr".into(), sum.stderr),
            ("determinant_functional".into(), j.value),
            ("determinant_stderr".into(), j.stderr),
        ],
        inequalities: vec![check],
    })
}

/// `E|y|^a` for `y ~ N(0, s^2)` in one dimension.
pub fn gaussian_abs_moment(s: f64, a: f64) -> f64 {
    s.powf(a) * 2f64.powf(0.5 * a) * ln_gamma(0.5 * (a + 1.0)).exp() / PI.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn gauss() -> InitLaw {
        InitLaw::Gaussian { std: 1.0 }
    }

    #[test]
    fn expansion_oracle() {
        let spec = DynamicsSpec::linear(&[vec![1.0]], &[0.0]).unwrap();
        let r = check_dv_ftle(&spec, 1.0, gauss(), 1.0).unwrap();
        assert_abs_diff_eq!(r.quantity("mean_ftle").unwrap(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.quantity("kl_rate").unwrap(), 0.5 * (E * E - 3.0), epsilon = 1e-12);
        assert!(r.inequality("ftle_upper").unwrap().holds);
        assert!(r.inequality("dv_lower_bound").unwrap().holds);
    }

    #[test]
    fn contraction_counterexample() {
        let spec = DynamicsSpec::linear(&[vec![-1.0]], &[0.0]).unwrap();
        let r = check_dv_ftle(&spec, 1.0, gauss(), 1.0).unwrap();
        assert_abs_diff_eq!(r.quantity("mean_ftle").unwrap(), -1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.quantity("kl_rate").unwrap(), 0.5 * ((-2f64).exp() + 1.0), epsilon = 1e-12);
        assert!(r.inequality("ftle_upper").unwrap().holds);
        assert!(!r.inequality("ftle_lower").unwrap().holds);
    }

    #[test]
    fn rotation_is_tight() {
        let spec = DynamicsSpec::linear(&[vec![0.0, -1.0], vec![1.0, 0.0]], &[0.0, 0.0]).unwrap();
        let r = check_dv_ftle(&spec, 2.0, gauss(), 1.0).unwrap();
        assert_abs_diff_eq!(r.quantity("mean_ftle").unwrap(), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.quantity("kl_rate").unwrap(), 0.0, epsilon = 1e-12);
        assert!(r.all_hold());
        let s = check_dv_ftle(&spec, 2.0, InitLaw::SphereUniform, 1.0).unwrap();
        assert_eq!(s.quantity("kl_rate").unwrap(), 0.0);
    }

    #[test]
    fn moment_closed_forms() {
        assert_abs_diff_eq!(gaussian_abs_moment(1.0, 1.0), (2.0 / PI).sqrt(), epsilon = 1e-14);
        assert_abs_diff_eq!(gaussian_abs_moment(2.0, 2.0), 4.0, epsilon = 1e-12);
        assert_abs_diff_eq!(gaussian_log_moment_norm(1, 2.0, 2.0), 4f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(gaussian_log_moment_norm(2, 1.0, 2.0), 2f64.ln(), epsilon = 1e-12);
        // E log|y| = -(gamma + log 2)/2 for a standard normal
        let euler = 0.577_215_664_901_532_9;
        assert_abs_diff_eq!(gaussian_mean_log_norm(1, 1.0), -0.5 * (euler + 2f64.ln()), epsilon = 1e-12);
    }

    #[test]
    fn rejects_non_oracles() {
        let gyre = DynamicsSpec::double_gyre(1.0, 0.25, 2.0, [0.0, 0.0]);
        assert!(matches!(check_dv_ftle(&gyre, 1.0, gauss(), 1.0), Err(Error::NotAnOracle(_))));
        let stretch = DynamicsSpec::linear(&[vec![1.0, 0.0], vec![0.0, 1.0]], &[0.0, 0.0]).unwrap();
        let mc = MonteCarlo::new(0, 1);
        assert!(check_momexp_bound(&stretch, 0.0, 1.0, 1.0, 8, &mc, &IntegratorConfig::rk4(0.01)).is_err());
    }

    #[test]
    fn rotation_and_identity_momexp() {
        let cfg = IntegratorConfig::rk4(0.01);
        let rot = DynamicsSpec::linear(&[vec![0.0, -1.0], vec![1.0, 0.0]], &[0.0, 0.0]).unwrap();
        let id = DynamicsSpec::linear(&[vec![0.0, 0.0], vec![0.0, 0.0]], &[0.0, 0.0]).unwrap();
        for spec in [rot, id] {
            for p in [-1.0, 0.5, 2.0] {
                let r = check_momexp_bound(&spec, 0.0, 1.5, p, 8, &MonteCarlo::new(1, 1), &cfg).unwrap();
                let ineq = r.inequality("momexp_kl").unwrap();
                assert!(ineq.holds);
                assert_abs_diff_eq!(ineq.lhs, (2.0 - E) / 1.5, epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn sum_exponents_cases() {
        let cfg = IntegratorConfig::rk4(1e-3);
        let one = DynamicsSpec::linear(&[vec![0.4]], &[0.0]).unwrap();
        let r = check_sum_exponents(&one, 0.0, 1.0, &Point::zeros(), &MonteCarlo::new(0, 1), &cfg).unwrap();
        assert_abs_diff_eq!(r.inequalities[0].lhs, 0.4, epsilon = 1e-9);
        assert!(r.all_hold());
        let saddle = DynamicsSpec::linear(&[vec![0.3, 0.0], vec![0.0, -0.3]], &[0.0, 0.0]).unwrap();
        let r = check_sum_exponents(&saddle, 0.0, 2.0, &Point::zeros(), &MonteCarlo::new(0, 1), &cfg).unwrap();
        assert!(r.all_hold());
        assert_abs_diff_eq!(r.inequalities[0].rhs, 0.0, epsilon = 1e-9);
    }

    #[test]
    fn report_serialises() {
        let spec = DynamicsSpec::linear(&[vec![1.0]], &[0.0]).unwrap();
        let r = check_dv_ftle(&spec, 1.0, gauss(), 1.0).unwrap();
        let json: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(json["check"], "dv_ftle");
        assert!(!r.to_text().contains("FAILS"));
    }
}
