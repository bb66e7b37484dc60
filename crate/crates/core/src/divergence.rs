//! phi-divergences between discrete distributions.
//!
//! | kind | generator `phi(u)` |
//! |------|--------------------|
//! | KL | `u log u - u + 1` |
//! | Hellinger | `(sqrt(u) - 1)^2` |
//! | total variation | `|u - 1| / 2` |
//! | chi-squared | `(u - 1)^2` |
//! | chi-alpha | `|u - 1|^alpha`, `alpha >= 1` |
//! | alpha | `4 / (1 - alpha^2) (1 - u^((1 + alpha) / 2))`; `u log u` at 1, `-log u` at -1 |
//!
//! Divergence sums use the normalised generator `phi(u) - phi'(1)(u - 1)`,
//! which gives the same divergence between probability vectors but keeps
//! every term nonnegative. Bins with `q = 0 < p` contribute
//! `p * lim phi(u)/u`, which is `+inf` for KL.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PROBABILITY_SUM_TOL: f64 = 1e-12;
pub const MONOTONICITY_SLACK: f64 = 1e-10;

/// Sparse probability vector over bin indices.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DiscreteDistribution {
    weights: BTreeMap<usize, f64>,
}

impl DiscreteDistribution {
    /// Validates nonnegativity and unit mass; zero weights are dropped.
    pub fn new(weights: BTreeMap<usize, f64>) -> Result<Self> {
        let mut total = 0.0;
        for (bin, w) in &weights {
            if !w.is_finite() || *w < 0.0 {
                return Err(Error::InvalidDistribution(format!("weight {w} at bin {bin}")));
            }
            total += w;
        }
        if (total - 1.0).abs() > PROBABILITY_SUM_TOL {
            return Err(Error::InvalidDistribution(format!("weights sum to {total}")));
        }
        Ok(Self {
            weights: weights.into_iter().filter(|(_, w)| *w > 0.0).collect(),
        })
    }

    pub fn from_dense(weights: &[f64]) -> Result<Self> {
        Self::new(weights.iter().copied().enumerate().collect())
    }

    /// Normalises nonnegative masses to a distribution.
    pub fn normalized(masses: &[f64]) -> Result<Self> {
        let total: f64 = masses.iter().sum();
        if !(total > 0.0) {
            return Err(Error::InvalidDistribution("total mass is not positive".into()));
        }
        let w: BTreeMap<usize, f64> = masses.iter().map(|m| m / total).enumerate().collect();
        // renormalisation can leave a rounding residue of a few ulps
        let residue = 1.0 - w.values().sum::<f64>();
        if residue.abs() > PROBABILITY_SUM_TOL {
            return Err(Error::InvalidDistribution(format!("normalisation residue {residue}")));
        }
        Self::new(w)
    }

    pub fn get(&self, bin: usize) -> f64 {
        self.weights.get(&bin).copied().unwrap_or(0.0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.weights.iter().map(|(b, w)| (*b, *w))
    }

    pub fn support_len(&self) -> usize {
        self.weights.len()
    }

    /// Shannon entropy in nats.
    pub fn entropy(&self) -> f64 {
        -self.weights.values().map(|w| w * w.ln()).sum::<f64>()
    }

    fn max_bin(&self) -> Option<usize> {
        self.weights.keys().next_back().copied()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DivergenceKind {
    Kl,
    Hellinger,
    TotalVariation,
    ChiSquared,
    ChiAlpha(f64),
    Alpha(f64),
}

impl fmt::Display for DivergenceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DivergenceKind::Kl => write!(f, "kl"),
            DivergenceKind::Hellinger => write!(f, "hellinger"),
            DivergenceKind::TotalVariation => write!(f, "tv"),
            DivergenceKind::ChiSquared => write!(f, "chi2"),
            DivergenceKind::ChiAlpha(a) => write!(f, "chi_alpha:{a}"),
            DivergenceKind::Alpha(a) => write!(f, "alpha:{a}"),
        }
    }
}

impl FromStr for DivergenceKind {
    type Err = Error;

    /// Parses `kl`, `hellinger`, `tv`, `chi2`, `chi_alpha:<a>`, `alpha:<a>`.
    fn from_str(s: &str) -> Result<Self> {
        let (name, arg) = match s.split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (s, None),
        };
        let alpha = || -> Result<f64> {
            arg.ok_or_else(|| Error::InvalidConfig(format!("divergence `{name}` needs a parameter")))?
                .parse::<f64>()
                .map_err(|e| Error::InvalidConfig(format!("bad divergence parameter: {e}")))
        };
        let kind = match (name, arg) {
            ("kl", None) => DivergenceKind::Kl,
            ("hellinger", None) => DivergenceKind::Hellinger,
            ("tv", None) | ("total_variation", None) => DivergenceKind::TotalVariation,
            ("chi2", None) | ("chi_squared", None) => DivergenceKind::ChiSquared,
            ("chi_alpha", Some(_)) => DivergenceKind::ChiAlpha(alpha()?),
            ("alpha", Some(_)) => DivergenceKind::Alpha(alpha()?),
            _ => return Err(Error::InvalidConfig(format!("unknown divergence `{s}`"))),
        };
        kind.validate()?;
        Ok(kind)
    }
}

impl DivergenceKind {
    pub const ALL_BASIC: [DivergenceKind; 4] = [
        DivergenceKind::Kl,
        DivergenceKind::Hellinger,
        DivergenceKind::TotalVariation,
        DivergenceKind::ChiSquared,
    ];

    /// Checks parameters, `phi(1) = 0`, and midpoint convexity on a grid.
    pub fn validate(&self) -> Result<()> {
        match self {
            DivergenceKind::ChiAlpha(a) if !(a.is_finite() && *a >= 1.0) => {
                return Err(Error::InvalidConfig(format!("chi-alpha needs alpha >= 1, got {a}")))
            }
            DivergenceKind::Alpha(a) if !a.is_finite() => {
                return Err(Error::InvalidConfig(format!("alpha must be finite, got {a}")))
            }
            _ => {}
        }
        if phi_eval(*self, 1.0)?.abs() > 1e-14 {
            return Err(Error::InvalidConfig(format!("{self}: phi(1) != 0")));
        }
        let grid: Vec<f64> = (1..200).map(|k| 0.05 * k as f64).collect();
        for w in grid.windows(3) {
            let (a, b, c) = (phi_eval(*self, w[0])?, phi_eval(*self, w[1])?, phi_eval(*self, w[2])?);
            if b > 0.5 * (a + c) + 1e-9 * (1.0 + a.abs() + c.abs()) {
                return Err(Error::InvalidConfig(format!("{self}: generator not convex near {}", w[1])));
            }
        }
        Ok(())
    }

    /// `phi'(1)`, used to normalise the generator.
    fn slope_at_one(&self) -> f64 {
        match *self {
            DivergenceKind::Alpha(a) if a == 1.0 => 1.0,
            DivergenceKind::Alpha(a) if a == -1.0 => -1.0,
            DivergenceKind::Alpha(a) => -2.0 / (1.0 - a),
            _ => 0.0,
        }
    }

    /// `lim_{u -> inf} phi(u) / u` of the normalised generator.
    fn slope_at_infinity(&self) -> f64 {
        match *self {
            DivergenceKind::Kl | DivergenceKind::ChiSquared => f64::INFINITY,
            DivergenceKind::Hellinger => 1.0,
            DivergenceKind::TotalVariation => 0.5,
            DivergenceKind::ChiAlpha(a) => {
                if a == 1.0 {
                    1.0
                } else {
                    f64::INFINITY
                }
            }
            DivergenceKind::Alpha(a) => {
                if a >= 1.0 {
                    f64::INFINITY
                } else {
                    -self.slope_at_one()
                }
            }
        }
    }

    /// `phi(u) - phi'(1)(u - 1) >= 0`.
    fn phi_normalized(&self, u: f64) -> f64 {
        match *self {
            DivergenceKind::Kl => kl_generator(u),
            DivergenceKind::Alpha(a) if a == 1.0 => kl_generator(u),
            DivergenceKind::Alpha(a) if a == -1.0 => {
                if u == 0.0 {
                    f64::INFINITY
                } else {
                    -u.ln() + u - 1.0
                }
            }
            _ => {
                let raw = phi_raw(*self, u);
                (raw - self.slope_at_one() * (u - 1.0)).max(0.0)
            }
        }
    }
}

fn kl_generator(u: f64) -> f64 {
    if u == 0.0 {
        1.0
    } else {
        u * u.ln() - u + 1.0
    }
}

fn phi_raw(kind: DivergenceKind, u: f64) -> f64 {
    match kind {
        DivergenceKind::Kl => kl_generator(u),
        DivergenceKind::Hellinger => {
            let s = u.sqrt() - 1.0;
            s * s
        }
        DivergenceKind::TotalVariation => 0.5 * (u - 1.0).abs(),
        DivergenceKind::ChiSquared => (u - 1.0) * (u - 1.0),
        DivergenceKind::ChiAlpha(a) => (u - 1.0).abs().powf(a),
        DivergenceKind::Alpha(a) => {
            if a == 1.0 {
                if u == 0.0 {
                    0.0
                } else {
                    u * u.ln()
                }
            } else if a == -1.0 {
                if u == 0.0 {
                    f64::INFINITY
                } else {
                    -u.ln()
                }
            } else {
                let beta = 0.5 * (1.0 + a);
                let pow = if u == 0.0 {
                    if beta > 0.0 {
                        0.0
                    } else if beta == 0.0 {
                        1.0
                    } else {
                        f64::INFINITY
                    }
                } else {
                    u.powf(beta)
                };
                let c = 4.0 / (1.0 - a * a);
                if pow.is_infinite() {
                    // c < 0 whenever beta < 0
                    f64::INFINITY
                } else {
                    c * (1.0 - pow)
                }
            }
        }
    }
}

/// The tabulated generator at `u >= 0`; `u = 0` gives the right limit.
pub fn phi_eval(kind: DivergenceKind, u: f64) -> Result<f64> {
    if u < 0.0 || u.is_nan() {
        return Err(Error::NegativeArgument(u));
    }
    Ok(phi_raw(kind, u))
}

fn term(kind: DivergenceKind, p: f64, q: f64) -> f64 {
    if q > 0.0 {
        if p == 0.0 {
            return kind.phi_normalized(0.0) * q;
        }
        if matches!(kind, DivergenceKind::Kl) {
            return p * (p / q).ln() - p + q;
        }
        kind.phi_normalized(p / q) * q
    } else if p > 0.0 {
        p * kind.slope_at_infinity()
    } else {
        0.0
    }
}

/// `D_phi(p || q)`; may be `+inf`, never NaN.
pub fn divergence(kind: DivergenceKind, p: &DiscreteDistribution, q: &DiscreteDistribution) -> f64 {
    let mut total = 0.0;
    let mut pi = p.weights.iter().peekable();
    let mut qi = q.weights.iter().peekable();
    loop {
        let (pw, qw) = match (pi.peek(), qi.peek()) {
            (None, None) => break,
            (Some((pb, pw)), Some((qb, qw))) => {
                if pb == qb {
                    let r = (**pw, **qw);
                    pi.next();
                    qi.next();
                    r
                } else if pb < qb {
                    let r = (**pw, 0.0);
                    pi.next();
                    r
                } else {
                    let r = (0.0, **qw);
                    qi.next();
                    r
                }
            }
            (Some((_, pw)), None) => {
                let r = (**pw, 0.0);
                pi.next();
                r
            }
            (None, Some((_, qw))) => {
                let r = (0.0, **qw);
                qi.next();
                r
            }
        };
        total += term(kind, pw, qw);
    }
    total
}

/// Pushes both distributions through the deterministic coarse-graining
/// `group(bin)`.
pub fn merge_bins(
    p: &DiscreteDistribution,
    q: &DiscreteDistribution,
    group: impl Fn(usize) -> usize,
) -> (DiscreteDistribution, DiscreteDistribution) {
    let coarse = |d: &DiscreteDistribution| {
        let mut w = BTreeMap::new();
        for (b, x) in d.iter() {
            *w.entry(group(b)).or_insert(0.0) += x;
        }
        DiscreteDistribution { weights: w }
    };
    (coarse(p), coarse(q))
}

/// Row-stochastic matrix acting on distributions from the right.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovKernel {
    rows: Vec<Vec<f64>>,
}

impl MarkovKernel {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let width = rows.first().map(|r| r.len()).unwrap_or(0);
        if rows.is_empty() || width == 0 {
            return Err(Error::InvalidKernel("empty kernel".into()));
        }
        for (i, r) in rows.iter().enumerate() {
            if r.len() != width {
                return Err(Error::InvalidKernel(format!("row {i} has {} columns, expected {width}", r.len())));
            }
            if r.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::InvalidKernel(format!("row {i} has a negative or non-finite entry")));
            }
            let s: f64 = r.iter().sum();
            if (s - 1.0).abs() > PROBABILITY_SUM_TOL * width as f64 {
                return Err(Error::InvalidKernel(format!("row {i} sums to {s}")));
            }
        }
        Ok(Self { rows })
    }

    pub fn identity(n: usize) -> Self {
        let rows = (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
        Self { rows }
    }

    pub fn push(&self, d: &DiscreteDistribution) -> Result<DiscreteDistribution> {
        if let Some(b) = d.max_bin() {
            if b >= self.rows.len() {
                return Err(Error::InvalidKernel(format!("bin {b} outside kernel with {} rows", self.rows.len())));
            }
        }
        let width = self.rows[0].len();
        let mut out = vec![0.0; width];
        for (b, w) in d.iter() {
            for (o, k) in out.iter_mut().zip(&self.rows[b]) {
                *o += w * k;
            }
        }
        Ok(DiscreteDistribution {
            weights: out.into_iter().enumerate().filter(|(_, w)| *w > 0.0).collect(),
        })
    }
}

/// True iff `D(p K || q K) <= D(p || q) + 1e-10`.
pub fn kernel_monotonicity_check(
    kind: DivergenceKind,
    p: &DiscreteDistribution,
    q: &DiscreteDistribution,
    kernel: &MarkovKernel,
) -> Result<bool> {
    let before = divergence(kind, p, q);
    let after = divergence(kind, &kernel.push(p)?, &kernel.push(q)?);
    Ok(after <= before + MONOTONICITY_SLACK)
}

/// Donsker-Varadhan lower bound `<f, p> - log <e^f, q>` on `D_KL(p || q)`;
/// `f[bin]` must cover every supported bin.
pub fn donsker_varadhan_lb(p: &DiscreteDistribution, q: &DiscreteDistribution, f: &[f64]) -> f64 {
    let lin: f64 = p.iter().map(|(b, w)| w * f[b]).sum();
    let m = q.iter().map(|(b, _)| f[b]).fold(f64::NEG_INFINITY, f64::max);
    let lse = m + q.iter().map(|(b, w)| w * (f[b] - m).exp()).sum::<f64>().ln();
    lin - lse
}
