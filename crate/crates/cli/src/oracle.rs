//! Reference values with closed forms, evaluated through the library.

use std::f64::consts::{LN_2, PI};

use ftdr_core::divergence::{divergence, donsker_varadhan_lb, DiscreteDistribution, DivergenceKind};
use ftdr_core::fields::{ftdr_box, ftdr_excess};
use ftdr_core::noise::PathKey;
use ftdr_core::tangent::{ftle_max, ftle_min, sum_exponents_functional, MonteCarlo};
use ftdr_core::ulam::affine_row;
use ftdr_core::{DynamicsSpec, IntegratorConfig, Mat, Point, Result, Sampling};

pub struct Case {
    pub name: String,
    pub computed: f64,
    pub expected: f64,
    pub tol: f64,
}

impl Case {
    fn new(name: &str, computed: f64, expected: f64, tol: f64) -> Self {
        Self {
            name: name.into(),
            computed,
            expected,
            tol,
        }
    }

    pub fn passes(&self) -> bool {
        (self.computed - self.expected).abs() <= self.tol
    }
}

fn point(xs: &[f64]) -> Point {
    let mut p = Point::zeros();
    for (i, v) in xs.iter().enumerate() {
        p[i] = *v;
    }
    p
}

pub fn table() -> Result<Vec<Case>> {
    let cfg = IntegratorConfig::rk4(1e-3);
    let path = PathKey::shared(0, 0, 0);
    let origin = Point::zeros();
    let mut cases = Vec::new();

    let saddle = DynamicsSpec::linear(&[vec![0.3, 0.0], vec![0.0, -0.3]], &[0.0, 0.0])?;
    cases.push(Case::new("ftle_max saddle(0.3), tau 2", ftle_max(&saddle, 0.0, 2.0, &origin, &path, &cfg)?, 0.3, 1e-8));
    cases.push(Case::new("ftle_min saddle(0.3), tau 2", ftle_min(&saddle, 0.0, 2.0, &origin, &path, &cfg)?, -0.3, 1e-8));

    let rotation = DynamicsSpec::linear(&[vec![0.0, -1.0], vec![1.0, 0.0]], &[0.0, 0.0])?;
    cases.push(Case::new("ftle_max rotation, tau 3", ftle_max(&rotation, 0.0, 3.0, &origin, &path, &cfg)?, 0.0, 1e-8));

    let contraction = DynamicsSpec::linear(&[vec![-1.0]], &[0.0])?;
    cases.push(Case::new("ftle_max 1D contraction, tau 1", ftle_max(&contraction, 0.0, 1.0, &origin, &path, &cfg)?, -1.0, 1e-8));
    cases.push(Case::new("ftle_max 1D contraction, tau -1", ftle_max(&contraction, 0.0, -1.0, &origin, &path, &cfg)?, 1.0, 1e-8));

    let growth = DynamicsSpec::linear(&[vec![0.4]], &[0.0])?;
    let j = sum_exponents_functional(&growth, 0.0, 2.0, &origin, 3.0, &MonteCarlo::new(0, 1), &cfg)?;
    cases.push(Case::new("det moment 1D growth(0.4), p 3, tau 2", j.value, 1.2, 1e-8));

    let gyre = DynamicsSpec::double_gyre(1.0, 0.25, 2.0, [0.0, 0.0]);
    let v = gyre.eval_drift(0.0, &point(&[0.25, 0.25]))?;
    cases.push(Case::new("double gyre u(0.25, 0.25), t 0", v[0], -PI / 2.0, 1e-12));
    cases.push(Case::new("double gyre v(0.25, 0.25), t 0", v[1], PI / 2.0, 1e-12));

    let p = DiscreteDistribution::from_dense(&[1.0, 0.0])?;
    let q = DiscreteDistribution::from_dense(&[0.5, 0.5])?;
    let kl = divergence(DivergenceKind::Kl, &p, &q);
    cases.push(Case::new("KL([1,0] || [1/2,1/2])", kl, LN_2, 1e-12));
    cases.push(Case::new(
        "Hellinger([1,0] || [1/2,1/2])",
        divergence(DivergenceKind::Hellinger, &p, &q),
        2.0 - 2f64.sqrt(),
        1e-12,
    ));
    cases.push(Case::new("KL(p || p)", divergence(DivergenceKind::Kl, &q, &q), 0.0, 1e-15));
    let r = DiscreteDistribution::from_dense(&[0.7, 0.2, 0.1])?;
    let s = DiscreteDistribution::from_dense(&[0.2, 0.3, 0.5])?;
    let log_ratio: Vec<f64> = [0.7f64 / 0.2, 0.2 / 0.3, 0.1 / 0.5].iter().map(|x| x.ln()).collect();
    cases.push(Case::new(
        "DV bound with f = log(p/q) equals KL",
        donsker_varadhan_lb(&r, &s, &log_ratio),
        divergence(DivergenceKind::Kl, &r, &s),
        1e-12,
    ));

    let sampling = Sampling::new(5, 1, 0);
    let widths = [0.1, 0.1];
    let row = affine_row(&Mat::identity(), 2, &widths, &sampling);
    cases.push(Case::new("identity FTDR, box 0.1 x 0.1, tau 2", ftdr_box(&row, row.bin_volume(), 2.0), -(0.01f64).ln() / 2.0, 1e-12));
    cases.push(Case::new("identity FTDR excess, tau 2", ftdr_excess(&row, 2.0), 0.0, 1e-12));
    Ok(cases)
}

#[cfg(test)]
mod tests {
    #[test]
    fn every_case_matches() {
        for c in super::table().unwrap() {
            assert!(c.passes(), "{}: {} vs {}", c.name, c.computed, c.expected);
        }
    }
}
