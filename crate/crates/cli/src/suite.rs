//! The fixed set of bounds checks run by `validate`.
//!
//! Only the Donsker-Varadhan bound and the isometric and deterministic
//! identities are asserted. Both directions of the FTLE/KL comparison are
//! reported without being asserted: the lower one fails on the linear
//! contraction, the upper one on slow expansions such as `dy = 0.2 y dt`.

use ftdr_core::bounds::{check_dv_ftle, check_momexp_bound, check_sum_exponents, InitLaw, Report};
use ftdr_core::dynamics::System;
use ftdr_core::tangent::MonteCarlo;
use ftdr_core::{DynamicsSpec, IntegratorConfig, Point, Result};

use crate::config::Run;

pub struct Entry {
    pub label: String,
    pub report: Report,
    /// Inequalities whose failure fails the run.
    pub asserted: Vec<&'static str>,
}

fn entry(label: &str, report: Report, asserted: &[&'static str]) -> Entry {
    Entry {
        label: label.into(),
        report,
        asserted: asserted.to_vec(),
    }
}

const DV: &[&str] = &["dv_lower_bound"];

pub fn run_suite(run: Option<&Run>, tau: Option<f64>) -> Result<Vec<Entry>> {
    let tau = tau.or(run.map(|r| r.tau)).unwrap_or(1.0);
    let gauss = InitLaw::Gaussian { std: 1.0 };
    let rk4 = IntegratorConfig::rk4(1e-3);
    let one = MonteCarlo::new(0, 1);
    let origin = Point::zeros();
    let mut out = Vec::new();

    let expansion = DynamicsSpec::linear(&[vec![1.0]], &[0.0])?;
    let contraction = DynamicsSpec::linear(&[vec![-1.0]], &[0.0])?;
    let rotation = DynamicsSpec::linear(&[vec![0.0, -1.0], vec![1.0, 0.0]], &[0.0, 0.0])?;
    let saddle = DynamicsSpec::linear(&[vec![0.3, 0.0], vec![0.0, -0.3]], &[0.0, 0.0])?;
    let shear = DynamicsSpec::linear(&[vec![0.0, 1.0], vec![0.0, 0.0]], &[0.0, 0.0])?;
    for (label, spec) in [
        ("expansion", &expansion),
        ("contraction", &contraction),
        ("rotation", &rotation),
        ("saddle", &saddle),
        ("shear", &shear),
    ] {
        for a in [0.5, 1.0, 2.0] {
            out.push(entry(&format!("{label}_a{a}"), check_dv_ftle(spec, tau, gauss, a)?, DV));
        }
    }
    out.push(entry("rotation_sphere", check_dv_ftle(&rotation, tau, InitLaw::SphereUniform, 1.0)?, DV));

    let identity = DynamicsSpec::linear(&[vec![0.0, 0.0], vec![0.0, 0.0]], &[0.0, 0.0])?;
    let noisy_rotation = rotation
        .clone()
        .with_multiplicative(&[vec![0.0, -0.5], vec![0.5, 0.0]])?;
    for p in [-1.0, 1.0, 2.0] {
        out.push(entry(
            &format!("rotation_p{p}"),
            check_momexp_bound(&rotation, 0.0, tau, p, 16, &one, &rk4)?,
            &["momexp_kl"],
        ));
        out.push(entry(
            &format!("identity_p{p}"),
            check_momexp_bound(&identity, 0.0, tau, p, 16, &one, &rk4)?,
            &["momexp_kl"],
        ));
        out.push(entry(
            &format!("noisy_rotation_p{p}"),
            check_momexp_bound(&noisy_rotation, 0.0, tau, p, 16, &MonteCarlo::new(11, 2000), &IntegratorConfig::heun(1e-2))?,
            &["momexp_kl"],
        ));
    }

    let growth = DynamicsSpec::linear(&[vec![0.4]], &[0.0])?;
    out.push(entry("growth", check_sum_exponents(&growth, 0.0, tau, &origin, &one, &rk4)?, &["sum_exponents"]));
    out.push(entry("saddle", check_sum_exponents(&saddle, 0.0, tau, &origin, &one, &rk4)?, &["sum_exponents"]));
    let geometric = DynamicsSpec::linear(&[vec![0.0]], &[0.0])?.with_multiplicative(&[vec![1.0]])?;
    out.push(entry(
        "geometric",
        check_sum_exponents(&geometric, 0.0, tau, &origin, &MonteCarlo::new(5, 20_000), &IntegratorConfig::heun(1e-2))?,
        &["sum_exponents"],
    ));

    if let Some(run) = run {
        if let System::Linear { .. } = run.spec.system {
            if run.spec.is_deterministic() && run.spec.dim <= 2 {
                out.push(entry("config", check_dv_ftle(&run.spec, tau, gauss, 1.0)?, DV));
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn asserted_checks_hold_and_counterexample_is_reported() {
        let entries = run_suite(None, None).unwrap();
        for e in &entries {
            for ineq in &e.report.inequalities {
                if e.asserted.contains(&ineq.name.as_str()) {
                    assert!(ineq.holds, "{} {}: {}", e.label, ineq.name, e.report.to_text());
                }
            }
        }
        let c = entries.iter().find(|e| e.label == "contraction_a1").unwrap();
        assert!(!c.report.inequality("ftle_lower").unwrap().holds);
        assert!(c.report.inequality("ftle_upper").unwrap().holds);
    }
}
