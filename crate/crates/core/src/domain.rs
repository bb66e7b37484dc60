//! State-space domains and their boundary conventions.
//!
//! Points are stored as 3-vectors; components beyond the system dimension
//! stay zero.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point = Vector3<f64>;
pub type Mat = Matrix3<f64>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Domain {
    /// Flat torus `[0, lx) x [0, ly)`.
    Torus2D { lx: f64, ly: f64 },
    /// Axis-aligned box; one `(lo, hi)` pair per axis.
    Box { bounds: Vec<(f64, f64)> },
    Unbounded { dim: usize },
}

impl Domain {
    pub fn dim(&self) -> usize {
        match self {
            Domain::Torus2D { .. } => 2,
            Domain::Box { bounds } => bounds.len(),
            Domain::Unbounded { dim } => *dim,
        }
    }

    pub fn is_periodic(&self) -> bool {
        matches!(self, Domain::Torus2D { .. })
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Domain::Torus2D { lx, ly } => {
                if !(lx.is_finite() && ly.is_finite() && *lx > 0.0 && *ly > 0.0) {
                    return Err(Error::InvalidConfig(format!(
                        "torus lengths must be positive, got ({lx}, {ly})"
                    )));
                }
            }
            Domain::Box { bounds } => {
                if bounds.is_empty() || bounds.len() > 3 {
                    return Err(Error::InvalidConfig("box domain needs 1 to 3 axes".into()));
                }
                for (lo, hi) in bounds {
                    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                        return Err(Error::InvalidConfig(format!("bad box bounds ({lo}, {hi})")));
                    }
                }
            }
            Domain::Unbounded { dim } => {
                if *dim == 0 || *dim > 3 {
                    return Err(Error::InvalidConfig(format!("dimension {dim} not in 1..=3")));
                }
            }
        }
        Ok(())
    }

    /// Maps a point onto its canonical representative.
    pub fn wrap(&self, x: &Point) -> Point {
        match self {
            Domain::Torus2D { lx, ly } => Point::new(wrap_coord(x[0], *lx), wrap_coord(x[1], *ly), x[2]),
            _ => *x,
        }
    }

    /// Displacement `a - b`; minimal image on the torus.
    pub fn displacement(&self, a: &Point, b: &Point) -> Point {
        let d = a - b;
        match self {
            Domain::Torus2D { lx, ly } => Point::new(minimal_image(d[0], *lx), minimal_image(d[1], *ly), d[2]),
            _ => d,
        }
    }

    pub fn contains(&self, x: &Point) -> bool {
        match self {
            Domain::Box { bounds } => bounds
                .iter()
                .enumerate()
                .all(|(i, (lo, hi))| x[i] >= *lo && x[i] <= *hi),
            _ => true,
        }
    }

    pub fn check_contains(&self, x: &Point) -> Result<()> {
        if self.contains(x) {
            Ok(())
        } else {
            Err(Error::OutsideDomain {
                point: x.iter().take(self.dim()).copied().collect(),
            })
        }
    }
}

/// Wraps `v` into `[0, l)`.
pub fn wrap_coord(v: f64, l: f64) -> f64 {
    let r = v.rem_euclid(l);
    // rem_euclid can round up to exactly l for tiny negative inputs
    if r >= l {
        0.0
    } else {
        r
    }
}

/// Representative of `d` modulo `l` in `(-l/2, l/2]`.
pub fn minimal_image(d: f64, l: f64) -> f64 {
    let half = 0.5 * l;
    let mut r = d - l * (d / l).round();
    if r <= -half {
        r += l;
    }
    if r > half {
        r -= l;
    }
    r
}
