//! Per-box diagnostic fields and their comparison.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use log::warn;
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::divergence::{phi_eval, DivergenceKind};
use crate::domain::Domain;
use crate::dynamics::DynamicsSpec;
use crate::error::{Error, Result};
use crate::integrate::IntegratorConfig;
use crate::noise::PathKey;
use crate::tangent::{ftle_max, ftle_min, ftle_stoch_avg, Directions, MonteCarlo};
use crate::ulam::{estimate_operator, GridPartition, RowDistribution, Sampling};

/// A grid of per-box values with the provenance needed to reproduce it.
///
/// Values are stored row-major with `x` fastest. `NaN` marks boxes whose
/// computation failed or whose mass left the partition entirely.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    pub domain: Domain,
    pub counts: Vec<usize>,
    pub t0: f64,
    pub tau: f64,
    pub seed: u64,
    pub tag: String,
    pub values: Vec<f64>,
    pub metadata: BTreeMap<String, Value>,
}

impl ScalarField {
    pub fn dim(&self) -> usize {
        self.counts.len()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.counts.len() != self.domain.dim() {
            return Err(Error::GridMismatch(format!(
                "{} counts for a {}-dimensional domain",
                self.counts.len(),
                self.domain.dim()
            )));
        }
        let n: usize = self.counts.iter().product();
        if n != self.values.len() {
            return Err(Error::GridMismatch(format!("{} values for {n} boxes", self.values.len())));
        }
        Ok(())
    }

    /// Value-wise equality that treats `NaN` as equal to itself.
    pub fn same_values(&self, other: &ScalarField) -> bool {
        self.values.len() == other.values.len()
            && self
                .values
                .iter()
                .zip(&other.values)
                .all(|(a, b)| a.to_bits() == b.to_bits() || (a.is_nan() && b.is_nan()))
    }

    pub fn nan_count(&self) -> usize {
        self.values.iter().filter(|v| v.is_nan()).count()
    }
}

/// `(1/|tau|) sum_j P_j (log P_j - log m)`, skipping empty cells.
///
/// `NaN` when no mass stayed in the displacement lattice.
pub fn ftdr_box(row: &RowDistribution, m: f64, tau: f64) -> f64 {
    if row.all_outside() {
        return f64::NAN;
    }
    let log_m = m.ln();
    let s: f64 = row.probabilities().map(|(_, p)| p * (p.ln() - log_m)).sum();
    s / tau.abs()
}

/// `(1/|tau|) sum_j phi(P_j / m) m` over visited cells. KL delegates to
/// [`ftdr_box`], which is the same sum written with `u log u`.
pub fn ftdr_box_phi(kind: DivergenceKind, row: &RowDistribution, m: f64, tau: f64) -> Result<f64> {
    if matches!(kind, DivergenceKind::Kl) {
        return Ok(ftdr_box(row, m, tau));
    }
    if row.all_outside() {
        return Ok(f64::NAN);
    }
    let mut s = 0.0;
    for (_, p) in row.probabilities() {
        s += phi_eval(kind, p / m)? * m;
    }
    Ok(s / tau.abs())
}

/// Rate in excess of the identity flow's `-log m / |tau|`, i.e. `-H / |tau|`
/// for the row entropy `H`. This does not depend on the cell volume.
pub fn ftdr_excess(row: &RowDistribution, tau: f64) -> f64 {
    if row.all_outside() {
        return f64::NAN;
    }
    -row.entropy() / tau.abs()
}

#[derive(Debug, Clone, PartialEq)]
pub enum Diagnostic {
    Ftdr(DivergenceKind),
    FtleMax,
    FtleMin,
    FtleStoch(Directions),
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Diagnostic::Ftdr(k) => write!(f, "ftdr:{k}"),
            Diagnostic::FtleMax => write!(f, "ftle:max"),
            Diagnostic::FtleMin => write!(f, "ftle:min"),
            Diagnostic::FtleStoch(_) => write!(f, "ftle:stoch"),
        }
    }
}

impl FromStr for Diagnostic {
    type Err = Error;

    /// Parses field tags such as `ftdr:kl`, `ftdr:alpha:0.5`, `ftle:max`.
    /// `ftle:stoch` defaults to 16 evenly spread directions.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ftle:max" => Ok(Diagnostic::FtleMax),
            "ftle:min" => Ok(Diagnostic::FtleMin),
            "ftle:stoch" => Ok(Diagnostic::FtleStoch(Directions::UniformSphere(16))),
            _ => match s.strip_prefix("ftdr:") {
                Some(k) => Ok(Diagnostic::Ftdr(k.parse()?)),
                None => Err(Error::InvalidConfig(format!("unknown diagnostic `{s}`"))),
            },
        }
    }
}

/// Evaluates `diagnostic` on every active box of `partition`.
///
/// FTDR variants estimate one Ulam row per box and use the displacement
/// cell volume as reference measure. FTLE variants are evaluated at box
/// centres; per-realization variants use realization 0 of each box.
#[allow(clippy::too_many_arguments)]
pub fn compute_field(
    spec: &DynamicsSpec,
    partition: &GridPartition,
    t0: f64,
    tau: f64,
    diagnostic: &Diagnostic,
    sampling: &Sampling,
    cfg: &IntegratorConfig,
) -> Result<ScalarField> {
    if tau == 0.0 || !tau.is_finite() {
        return Err(Error::InvalidConfig(format!("tau must be finite and nonzero, got {tau}")));
    }
    partition.validate()?;
    partition.check_compatible(spec)?;
    sampling.validate()?;
    cfg.validate(spec)?;
    if let Diagnostic::Ftdr(k) = diagnostic {
        k.validate()?;
    }
    if let Diagnostic::FtleStoch(d) = diagnostic {
        d.vectors(spec.dim)?;
    }
    let active = partition.active_boxes();
    let values: Vec<Result<f64>> = match diagnostic {
        Diagnostic::Ftdr(kind) => estimate_operator(spec, partition, t0, tau, sampling, cfg)?
            .into_iter()
            .map(|(_, row)| row.and_then(|r| ftdr_box_phi(*kind, &r, r.bin_volume(), tau)))
            .collect(),
        _ => active
            .par_iter()
            .map(|&i| {
                let x = partition.box_center(i);
                let path = PathKey::shared(sampling.master_seed, i as u64, 0);
                match diagnostic {
                    Diagnostic::FtleMax => ftle_max(spec, t0, tau, &x, &path, cfg),
                    Diagnostic::FtleMin => ftle_min(spec, t0, tau, &x, &path, cfg),
                    Diagnostic::FtleStoch(dirs) => {
                        let mc = MonteCarlo {
                            master_seed: sampling.master_seed,
                            box_index: i as u64,
                            realizations: sampling.realizations,
                        };
                        ftle_stoch_avg(spec, t0, tau, &x, dirs, &mc, cfg).map(|e| e.value)
                    }
                    Diagnostic::Ftdr(_) => unreachable!(),
                }
            })
            .collect(),
    };
    let (domain, counts) = partition.field_geometry();
    let mut failed = Vec::new();
    let values: Vec<f64> = values
        .into_iter()
        .zip(&active)
        .map(|(v, &i)| match v {
            Ok(v) => v,
            Err(e) => {
                warn!("box {i}: {e}");
                failed.push(i);
                f64::NAN
            }
        })
        .collect();
    let mut metadata = BTreeMap::new();
    metadata.insert("system".into(), json!(spec.name));
    metadata.insert("scheme".into(), json!(cfg.scheme));
    metadata.insert("dt".into(), json!(cfg.dt));
    metadata.insert("direction".into(), json!(if tau > 0.0 { "forward" } else { "backward" }));
    metadata.insert("failed_boxes".into(), json!(failed));
    match diagnostic {
        Diagnostic::Ftdr(_) => {
            let n = sampling.samples_per_axis;
            metadata.insert("samples_per_axis".into(), json!(n));
            metadata.insert("samples_per_box".into(), json!(n.pow(spec.dim as u32)));
            metadata.insert("realizations".into(), json!(sampling.effective_realizations(spec)));
            metadata.insert("refinement".into(), json!(sampling.refinement));
            metadata.insert("noise_pairing".into(), json!(sampling.pairing));
            metadata.insert("reference_measure".into(), json!("lebesgue_per_cell"));
        }
        Diagnostic::FtleStoch(_) => {
            metadata.insert("sample_point".into(), json!("box_center"));
            metadata.insert("realizations".into(), json!(sampling.effective_realizations(spec)));
        }
        _ => {
            metadata.insert("sample_point".into(), json!("box_center"));
        }
    }
    if tau < 0.0 && !spec.is_deterministic() {
        metadata.insert("backward_stochastic".into(), json!(true));
    }
    let field = ScalarField {
        domain,
        counts,
        t0,
        tau,
        seed: sampling.master_seed,
        tag: diagnostic.to_string(),
        values,
        metadata,
    };
    field.validate()?;
    Ok(field)
}

fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let r = 0.5 * (i + j) as f64;
        for k in &idx[i..=j] {
            ranks[*k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation over boxes where both fields are finite.
/// Returns the coefficient and the number of boxes used.
pub fn rank_correlation(a: &ScalarField, b: &ScalarField) -> Result<(f64, usize)> {
    if a.counts != b.counts || a.values.len() != b.values.len() {
        return Err(Error::GridMismatch(format!("grids {:?} and {:?} differ", a.counts, b.counts)));
    }
    rank_correlation_values(&a.values, &b.values)
}

pub fn rank_correlation_values(a: &[f64], b: &[f64]) -> Result<(f64, usize)> {
    let (xa, xb): (Vec<f64>, Vec<f64>) = a
        .iter()
        .zip(b)
        .filter(|(x, y)| x.is_finite() && y.is_finite())
        .map(|(x, y)| (*x, *y))
        .unzip();
    if xa.len() < 8 {
        return Err(Error::TooFewBoxes(xa.len()));
    }
    let (ra, rb) = (average_ranks(&xa), average_ranks(&xb));
    let n = ra.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::InvalidConfig("a constant field has no rank correlation".into()));
    }
    Ok(((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0), xa.len()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Point;
    use approx::assert_abs_diff_eq;

    fn row_with(counts: &[u64]) -> RowDistribution {
        let mut row = RowDistribution::empty(0, 1, [1.0; 3]);
        for (k, c) in counts.iter().enumerate() {
            for _ in 0..*c {
                row.add(Some(&Point::new(k as f64, 0.0, 0.0)), 1);
            }
        }
        row
    }

    #[test]
    fn identity_row_rate() {
        let row = row_with(&[1]);
        assert_abs_diff_eq!(ftdr_box(&row, 1e-3, 1.0), -(1e-3f64).ln(), epsilon = 1e-12);
    }

    #[test]
    fn uniform_row_rate() {
        let row = row_with(&[1; 16]);
        let expected = 0.5 * (-(16f64).ln() - (1e-3f64).ln());
        assert_abs_diff_eq!(ftdr_box(&row, 1e-3, 2.0), expected, epsilon = 1e-12);
        assert_abs_diff_eq!(expected, 2.0675, epsilon = 1e-4);
    }

    #[test]
    fn phi_rates_on_identity_row() {
        let row = row_with(&[1]);
        let tau = 3.0;
        assert_eq!(ftdr_box_phi(DivergenceKind::Kl, &row, 0.5, tau).unwrap(), ftdr_box(&row, 0.5, tau));
        assert_abs_diff_eq!(ftdr_box_phi(DivergenceKind::ChiSquared, &row, 0.5, tau).unwrap(), 0.5 / tau, epsilon = 1e-15);
        assert_abs_diff_eq!(ftdr_box_phi(DivergenceKind::TotalVariation, &row, 0.5, tau).unwrap(), 0.25 / tau, epsilon = 1e-15);
    }

    #[test]
    fn all_outside_is_nan() {
        let mut row = RowDistribution::empty(0, 1, [1.0; 3]);
        row.add(None, 1);
        assert!(ftdr_box(&row, 1.0, 1.0).is_nan());
        assert!(ftdr_box_phi(DivergenceKind::Hellinger, &row, 1.0, 1.0).unwrap().is_nan());
    }

    #[test]
    fn excess_is_negative_entropy_rate() {
        let row = row_with(&[2, 1, 1]);
        let h = -(0.5f64 * 0.5f64.ln() + 0.5 * 0.25f64.ln());
        assert_abs_diff_eq!(ftdr_excess(&row, 2.0), -h / 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(ftdr_box(&row, 0.3, 2.0) + 0.3f64.ln() / 2.0, ftdr_excess(&row, 2.0), epsilon = 1e-14);
    }

    #[test]
    fn spearman_basics() {
        let a: Vec<f64> = (0..20).map(|i| (i as f64 * 0.37).sin()).collect();
        let neg: Vec<f64> = a.iter().map(|v| -v).collect();
        let cube: Vec<f64> = a.iter().map(|v| v * v * v).collect();
        assert_abs_diff_eq!(rank_correlation_values(&a, &a).unwrap().0, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(rank_correlation_values(&a, &neg).unwrap().0, -1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(rank_correlation_values(&a, &cube).unwrap().0, 1.0, epsilon = 1e-12);
        assert_eq!(rank_correlation_values(&a[..7], &a[..7]).unwrap_err(), Error::TooFewBoxes(7));
    }

    #[test]
    fn spearman_skips_nan_and_ties() {
        let mut a: Vec<f64> = (0..12).map(|i| i as f64).collect();
        let mut b = a.clone();
        a[3] = f64::NAN;
        b[5] = f64::NAN;
        let (rho, n) = rank_correlation_values(&a, &b).unwrap();
        assert_eq!(n, 10);
        assert_abs_diff_eq!(rho, 1.0, epsilon = 1e-12);
        assert_eq!(average_ranks(&[1.0, 2.0, 2.0, 3.0]), vec![0.0, 1.5, 1.5, 3.0]);
    }

    #[test]
    fn diagnostic_tags_round_trip() {
        for tag in ["ftdr:kl", "ftdr:alpha:0.5", "ftdr:tv", "ftle:max", "ftle:min", "ftle:stoch"] {
            assert_eq!(tag.parse::<Diagnostic>().unwrap().to_string(), tag);
        }
        assert!("ftle:avg".parse::<Diagnostic>().is_err());
    }
}
