//! Dynamical systems `dX = b(t,X) dt + sigma(t,X) o dW` and their builtins.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::domain::{Domain, Mat, Point};
use crate::error::{Error, Result};

pub type DriftFn = Arc<dyn Fn(f64, &Point) -> Point + Send + Sync>;

/// The drift field of a system.
#[derive(Clone)]
pub enum System {
    /// Periodically driven double gyre on the `[0,2] x [0,1]` torus.
    DoubleGyre { amplitude: f64, epsilon: f64, omega: f64 },
    /// Hill's spherical vortex with a breathing radius
    /// `a(t) = radius + radius_amp * sin(radius_freq * t)`.
    HillsVortex {
        speed: f64,
        radius: f64,
        radius_amp: f64,
        radius_freq: f64,
    },
    /// `b(x) = A x`.
    Linear { matrix: Mat },
    /// `b(x) = c`.
    Translation { velocity: Point },
    /// User-supplied drift; Jacobians by central differences.
    Custom { drift: DriftFn },
}

impl fmt::Debug for System {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            System::DoubleGyre { amplitude, epsilon, omega } => f
                .debug_struct("DoubleGyre")
                .field("amplitude", amplitude)
                .field("epsilon", epsilon)
                .field("omega", omega)
                .finish(),
            System::HillsVortex {
                speed,
                radius,
                radius_amp,
                radius_freq,
            } => f
                .debug_struct("HillsVortex")
                .field("speed", speed)
                .field("radius", radius)
                .field("radius_amp", radius_amp)
                .field("radius_freq", radius_freq)
                .finish(),
            System::Linear { matrix } => f.debug_struct("Linear").field("matrix", matrix).finish(),
            System::Translation { velocity } => f.debug_struct("Translation").field("velocity", velocity).finish(),
            System::Custom { .. } => f.write_str("Custom"),
        }
    }
}

/// One flow: drift, diffusion and the domain it lives on.
///
/// Diffusion is the sum of a constant diagonal part (`sigma`, driven by
/// noise components `0..dim`) and optional linear multiplicative parts
/// `B_k x` (driven by components `3 + k`).
#[derive(Debug, Clone)]
pub struct DynamicsSpec {
    pub name: String,
    pub dim: usize,
    pub system: System,
    pub params: BTreeMap<String, f64>,
    pub sigma: Vec<f64>,
    pub multiplicative: Vec<Mat>,
    pub domain: Domain,
}

/// Description of a builtin system, e.g. parsed from a config file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SystemDescription {
    pub name: String,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    #[serde(default)]
    pub sigma: Vec<f64>,
    #[serde(default)]
    pub matrix: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub multiplicative: Vec<Vec<Vec<f64>>>,
}

pub const BUILTIN_SYSTEMS: [&str; 4] = ["double_gyre", "hills_vortex", "linear", "translation"];

fn param(params: &BTreeMap<String, f64>, key: &str, default: f64) -> f64 {
    params.get(key).copied().unwrap_or(default)
}

fn matrix_from_rows(rows: &[Vec<f64>], dim: usize, what: &str) -> Result<Mat> {
    if rows.len() != dim || rows.iter().any(|r| r.len() != dim) {
        return Err(Error::InvalidConfig(format!("{what} must be {dim}x{dim}")));
    }
    let mut m = Mat::zeros();
    for (i, row) in rows.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::InvalidConfig(format!("{what} has a non-finite entry")));
            }
            m[(i, j)] = *v;
        }
    }
    Ok(m)
}

impl DynamicsSpec {
    /// Builds a builtin system from its description.
    ///
    /// `linear` takes its dimension from `matrix`; `translation` from the
    /// number of velocity parameters `c0, c1, ...` (or from `domain`).
    pub fn from_description(desc: &SystemDescription, domain: Domain) -> Result<Self> {
        domain.validate()?;
        let p = &desc.params;
        let (dim, system) = match desc.name.as_str() {
            "double_gyre" => (
                2,
                System::DoubleGyre {
                    amplitude: param(p, "A", 1.0),
                    epsilon: param(p, "epsilon", 0.25),
                    omega: param(p, "omega", 2.0),
                },
            ),
            "hills_vortex" => (
                3,
                System::HillsVortex {
                    speed: param(p, "U", 2.0),
                    radius: param(p, "a0", 2.0),
                    radius_amp: param(p, "a_amp", 0.12),
                    radius_freq: param(p, "a_freq", 2.2),
                },
            ),
            "linear" => {
                let rows = desc.matrix.as_ref().ok_or_else(|| Error::MissingParameter {
                    system: "linear".into(),
                    param: "matrix".into(),
                })?;
                let dim = rows.len();
                (dim, System::Linear { matrix: matrix_from_rows(rows, dim, "matrix")? })
            }
            "translation" => {
                let dim = domain.dim();
                let mut velocity = Point::zeros();
                for i in 0..dim {
                    velocity[i] = param(p, &format!("c{i}"), 0.0);
                }
                (dim, System::Translation { velocity })
            }
            other => return Err(Error::UnknownSystem(other.to_string())),
        };
        let allowed: &[&str] = match desc.name.as_str() {
            "double_gyre" => &["A", "epsilon", "omega"],
            "hills_vortex" => &["U", "a0", "a_amp", "a_freq"],
            "translation" => &["c0", "c1", "c2"],
            _ => &[],
        };
        if let Some(k) = p.keys().find(|k| !allowed.contains(&k.as_str())) {
            return Err(Error::InvalidConfig(format!("unknown parameter `{k}` for `{}`", desc.name)));
        }
        let mut multiplicative = Vec::new();
        for rows in &desc.multiplicative {
            multiplicative.push(matrix_from_rows(rows, dim, "multiplicative noise matrix")?);
        }
        let spec = DynamicsSpec {
            name: desc.name.clone(),
            dim,
            system,
            params: p.clone(),
            sigma: if desc.sigma.is_empty() { vec![0.0; dim] } else { desc.sigma.clone() },
            multiplicative,
            domain,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn double_gyre(amplitude: f64, epsilon: f64, omega: f64, sigma: [f64; 2]) -> Self {
        let params = BTreeMap::from([
            ("A".to_string(), amplitude),
            ("epsilon".to_string(), epsilon),
            ("omega".to_string(), omega),
        ]);
        DynamicsSpec {
            name: "double_gyre".into(),
            dim: 2,
            system: System::DoubleGyre { amplitude, epsilon, omega },
            params,
            sigma: sigma.to_vec(),
            multiplicative: Vec::new(),
            domain: Domain::Torus2D { lx: 2.0, ly: 1.0 },
        }
    }

    /// Hill's vortex with `U = 2` and `a(t) = 2 + 0.12 sin(2.2 t)`.
    pub fn hills_vortex(sigma: [f64; 3]) -> Self {
        DynamicsSpec {
            name: "hills_vortex".into(),
            dim: 3,
            system: System::HillsVortex {
                speed: 2.0,
                radius: 2.0,
                radius_amp: 0.12,
                radius_freq: 2.2,
            },
            params: BTreeMap::new(),
            sigma: sigma.to_vec(),
            multiplicative: Vec::new(),
            domain: Domain::Unbounded { dim: 3 },
        }
    }

    /// `dx = A x dt + diag(sigma) dW` on `R^dim`, with `A` given row-major.
    pub fn linear(rows: &[Vec<f64>], sigma: &[f64]) -> Result<Self> {
        let desc = SystemDescription {
            name: "linear".into(),
            sigma: sigma.to_vec(),
            matrix: Some(rows.to_vec()),
            ..Default::default()
        };
        DynamicsSpec::from_description(&desc, Domain::Unbounded { dim: rows.len() })
    }

    pub fn translation(velocity: &[f64]) -> Self {
        let dim = velocity.len();
        let mut v = Point::zeros();
        for (i, c) in velocity.iter().enumerate() {
            v[i] = *c;
        }
        DynamicsSpec {
            name: "translation".into(),
            dim,
            system: System::Translation { velocity: v },
            params: BTreeMap::new(),
            sigma: vec![0.0; dim],
            multiplicative: Vec::new(),
            domain: Domain::Unbounded { dim },
        }
    }

    pub fn custom(name: &str, dim: usize, drift: DriftFn) -> Self {
        DynamicsSpec {
            name: name.into(),
            dim,
            system: System::Custom { drift },
            params: BTreeMap::new(),
            sigma: vec![0.0; dim],
            multiplicative: Vec::new(),
            domain: Domain::Unbounded { dim },
        }
    }

    pub fn with_sigma(mut self, sigma: &[f64]) -> Self {
        self.sigma = sigma.to_vec();
        self
    }

    pub fn with_domain(mut self, domain: Domain) -> Self {
        self.domain = domain;
        self
    }

    /// Adds a Stratonovich multiplicative noise term `B x o dW_k`.
    pub fn with_multiplicative(mut self, rows: &[Vec<f64>]) -> Result<Self> {
        let b = matrix_from_rows(rows, self.dim, "multiplicative noise matrix")?;
        self.multiplicative.push(b);
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        self.domain.validate()?;
        if self.dim == 0 || self.dim > 3 {
            return Err(Error::InvalidConfig(format!("dimension {} not in 1..=3", self.dim)));
        }
        if self.domain.dim() != self.dim {
            return Err(Error::InvalidConfig(format!(
                "system `{}` has dimension {} but its domain has dimension {}",
                self.name,
                self.dim,
                self.domain.dim()
            )));
        }
        if self.sigma.len() != self.dim {
            return Err(Error::InvalidConfig(format!(
                "sigma needs {} components, got {}",
                self.dim,
                self.sigma.len()
            )));
        }
        if self.sigma.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return Err(Error::InvalidConfig("sigma components must be finite and >= 0".into()));
        }
        Ok(())
    }

    pub fn is_deterministic(&self) -> bool {
        self.sigma.iter().all(|s| *s == 0.0) && self.multiplicative.is_empty()
    }

    /// True when the diffusion does not depend on the state.
    pub fn has_additive_noise_only(&self) -> bool {
        self.multiplicative.is_empty()
    }

    /// Number of noise components addressed by the integrators.
    pub fn noise_components(&self) -> usize {
        if self.multiplicative.is_empty() {
            self.dim
        } else {
            3 + self.multiplicative.len()
        }
    }

    /// Drift at `(t, x)`, with box-domain and system checks.
    pub fn eval_drift(&self, t: f64, x: &Point) -> Result<Point> {
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { step: 0, time: t });
        }
        self.domain.check_contains(x)?;
        Ok(self.drift(t, x))
    }

    /// Drift without domain checks; periodic domains are wrapped first.
    #[inline]
    pub fn drift(&self, t: f64, x: &Point) -> Point {
        let x = self.domain.wrap(x);
        match &self.system {
            System::DoubleGyre { amplitude, epsilon, omega } => double_gyre_velocity(*amplitude, *epsilon, *omega, t, &x),
            System::HillsVortex {
                speed,
                radius,
                radius_amp,
                radius_freq,
            } => {
                let a = radius + radius_amp * (radius_freq * t).sin();
                hills_velocity(*speed, a, &x)
            }
            System::Linear { matrix } => matrix * x,
            System::Translation { velocity } => *velocity,
            System::Custom { drift } => drift(t, &x),
        }
    }

    /// Jacobian of the drift with respect to the state.
    pub fn drift_jacobian(&self, t: f64, x: &Point) -> Mat {
        let x = self.domain.wrap(x);
        match &self.system {
            System::DoubleGyre { amplitude, epsilon, omega } => double_gyre_jacobian(*amplitude, *epsilon, *omega, t, &x),
            System::HillsVortex {
                speed,
                radius,
                radius_amp,
                radius_freq,
            } => {
                let a = radius + radius_amp * (radius_freq * t).sin();
                hills_jacobian(*speed, a, &x)
            }
            System::Linear { matrix } => *matrix,
            System::Translation { .. } => Mat::zeros(),
            System::Custom { drift } => central_difference_jacobian(self.dim, &|y| drift(t, y), &x),
        }
    }

    /// `sigma(x) dW` for the increments `dw` (indexed by noise component).
    #[inline]
    pub fn noise_increment(&self, x: &Point, dw: &[f64]) -> Point {
        let mut out = Point::zeros();
        for (i, s) in self.sigma.iter().enumerate() {
            out[i] = s * dw[i];
        }
        for (k, b) in self.multiplicative.iter().enumerate() {
            out += b * x * dw[3 + k];
        }
        out
    }

    /// Linearised noise term `sum_k B_k J dW_k` for the tangent equation.
    #[inline]
    pub fn noise_tangent(&self, jac: &Mat, dw: &[f64]) -> Mat {
        let mut out = Mat::zeros();
        for (k, b) in self.multiplicative.iter().enumerate() {
            out += b * jac * dw[3 + k];
        }
        out
    }
}

/// Central-difference Jacobian with step `1e-6 * max(1, |x|)`.
pub fn central_difference_jacobian(dim: usize, f: &dyn Fn(&Point) -> Point, x: &Point) -> Mat {
    let h = 1e-6 * x.norm().max(1.0);
    let mut jac = Mat::zeros();
    for j in 0..dim {
        let mut xp = *x;
        let mut xm = *x;
        xp[j] += h;
        xm[j] -= h;
        let col = (f(&xp) - f(&xm)) / (2.0 * h);
        for i in 0..dim {
            jac[(i, j)] = col[i];
        }
    }
    jac
}

fn double_gyre_velocity(amp: f64, eps: f64, omega: f64, t: f64, x: &Point) -> Point {
    let s = (omega * t).sin();
    let f = eps * s * x[0] * x[0] + (1.0 - 2.0 * eps * s) * x[0];
    let fx = 2.0 * eps * s * x[0] + 1.0 - 2.0 * eps * s;
    let (sin_f, cos_f) = (PI * f).sin_cos();
    let (sin_y, cos_y) = (PI * x[1]).sin_cos();
    Point::new(-PI * amp * sin_f * cos_y, PI * amp * cos_f * sin_y * fx, 0.0)
}

fn double_gyre_jacobian(amp: f64, eps: f64, omega: f64, t: f64, x: &Point) -> Mat {
    let s = (omega * t).sin();
    let f = eps * s * x[0] * x[0] + (1.0 - 2.0 * eps * s) * x[0];
    let fx = 2.0 * eps * s * x[0] + 1.0 - 2.0 * eps * s;
    let fxx = 2.0 * eps * s;
    let (sin_f, cos_f) = (PI * f).sin_cos();
    let (sin_y, cos_y) = (PI * x[1]).sin_cos();
    let pa = PI * amp;
    let mut j = Mat::zeros();
    j[(0, 0)] = -pa * PI * cos_f * fx * cos_y;
    j[(0, 1)] = pa * PI * sin_f * sin_y;
    j[(1, 0)] = pa * (-PI * sin_f * fx * fx * sin_y + cos_f * sin_y * fxx);
    j[(1, 1)] = pa * PI * cos_f * cos_y * fx;
    j
}

// Cartesian form of the axisymmetric spherical-coordinate velocity: the
// cylindrical radius cancels, so the symmetry axis needs no special case.
fn hills_velocity(u: f64, a: f64, x: &Point) -> Point {
    let (px, py, pz) = (x[0], x[1], x[2]);
    let r2 = px * px + py * py + pz * pz;
    let a2 = a * a;
    if r2 >= a2 {
        let r = r2.sqrt();
        let r5 = r2 * r2 * r;
        let a3 = a2 * a;
        let c = -1.5 * u * a3 / r5;
        Point::new(
            c * px * pz,
            c * py * pz,
            u * (1.0 + a3 * (px * px + py * py - 2.0 * pz * pz) / (2.0 * r5)),
        )
    } else {
        let k = -1.5 * u / a2;
        Point::new(
            k * px * pz,
            k * py * pz,
            -1.5 * u - k * (pz * pz + 2.0 * px * px + 2.0 * py * py),
        )
    }
}

fn hills_jacobian(u: f64, a: f64, x: &Point) -> Mat {
    let (px, py, pz) = (x[0], x[1], x[2]);
    let r2 = px * px + py * py + pz * pz;
    let a2 = a * a;
    let mut j = Mat::zeros();
    if r2 >= a2 {
        let r = r2.sqrt();
        let r5 = r2 * r2 * r;
        let r7 = r5 * r2;
        let a3 = a2 * a;
        let c = -1.5 * u * a3;
        let p = [px, py, pz];
        // d/dx_j (x_i z r^-5) for i in {x, y}
        for i in 0..2 {
            for jj in 0..3 {
                let mut d = -5.0 * p[i] * pz * p[jj] / r7;
                if jj == i {
                    d += pz / r5;
                }
                if jj == 2 {
                    d += p[i] / r5;
                }
                j[(i, jj)] = c * d;
            }
        }
        let g = px * px + py * py - 2.0 * pz * pz;
        let dg = [2.0 * px, 2.0 * py, -4.0 * pz];
        for jj in 0..3 {
            j[(2, jj)] = 0.5 * u * a3 * (dg[jj] / r5 - 5.0 * g * p[jj] / r7);
        }
    } else {
        let k = -1.5 * u / a2;
        j[(0, 0)] = k * pz;
        j[(0, 2)] = k * px;
        j[(1, 1)] = k * pz;
        j[(1, 2)] = k * py;
        j[(2, 0)] = -4.0 * k * px;
        j[(2, 1)] = -4.0 * k * py;
        j[(2, 2)] = -2.0 * k * pz;
    }
    j
}
