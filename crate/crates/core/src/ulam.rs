//! Monte Carlo rows of the centred transfer operator on a box partition.
//!
//! Each row seeds a `(2N+1)^d` lattice of points in one box, advances them
//! together with the box centre against a shared Brownian path, and bins
//! the displacements `phi(x) - phi(centre)` into a lattice of cells anchored
//! at zero displacement. Displacement cells have the box widths divided by
//! the refinement factor `r`. Samples that fail to integrate, land beyond
//! 32 box widths on any axis, or leave a bounded partition are counted in
//! an absorbing outside bin.

use std::collections::BTreeMap;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{Domain, Mat, Point};
use crate::dynamics::DynamicsSpec;
use crate::error::{Error, Result};
use crate::integrate::{advance, IntegratorConfig, NoiseRealization, StepPlan};
use crate::noise::PathKey;

/// Displacements beyond this many box widths on any axis go to the outside bin.
pub const FAR_BOX_WIDTHS: i32 = 32;

pub type BinIndex = [i32; 3];

/// Restricts a 3D partition to the layer of boxes cut by `x[axis] = value`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlicePlane {
    pub axis: usize,
    pub value: f64,
}

/// Equal-volume boxes tiling a torus or an axis-aligned box.
///
/// Boxes are numbered row-major with `x` fastest, then `y`, then `z`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPartition {
    pub domain: Domain,
    pub counts: Vec<usize>,
    pub slice: Option<SlicePlane>,
}

impl GridPartition {
    pub fn new(domain: Domain, counts: Vec<usize>, slice: Option<SlicePlane>) -> Result<Self> {
        let p = Self { domain, counts, slice };
        p.validate()?;
        Ok(p)
    }

    pub fn torus(lx: f64, ly: f64, nx: usize, ny: usize) -> Result<Self> {
        Self::new(Domain::Torus2D { lx, ly }, vec![nx, ny], None)
    }

    pub fn boxed(bounds: Vec<(f64, f64)>, counts: Vec<usize>) -> Result<Self> {
        Self::new(Domain::Box { bounds }, counts, None)
    }

    pub fn validate(&self) -> Result<()> {
        if matches!(self.domain, Domain::Unbounded { .. }) {
            return Err(Error::InvalidConfig("a partition needs a torus or bounded box".into()));
        }
        self.domain.validate()?;
        let dim = self.dim();
        if self.counts.len() != dim {
            return Err(Error::InvalidConfig(format!(
                "partition has {} box counts for a {dim}-dimensional domain",
                self.counts.len()
            )));
        }
        if self.counts.iter().any(|&c| c == 0) {
            return Err(Error::InvalidConfig("box counts must be positive".into()));
        }
        if let Some(s) = self.slice {
            if dim != 3 || s.axis >= 3 {
                return Err(Error::InvalidConfig("slice planes apply to 3D partitions only".into()));
            }
            let (lo, hi) = self.axis_bounds(s.axis);
            if !(s.value >= lo && s.value <= hi) {
                return Err(Error::InvalidConfig(format!("slice value {} outside [{lo}, {hi}]", s.value)));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    pub fn axis_bounds(&self, axis: usize) -> (f64, f64) {
        match &self.domain {
            Domain::Torus2D { lx, ly } => (0.0, if axis == 0 { *lx } else { *ly }),
            Domain::Box { bounds } => bounds[axis],
            Domain::Unbounded { .. } => unreachable!("validated"),
        }
    }

    pub fn widths(&self) -> Vec<f64> {
        (0..self.dim())
            .map(|a| {
                let (lo, hi) = self.axis_bounds(a);
                (hi - lo) / self.counts[a] as f64
            })
            .collect()
    }

    /// Lebesgue measure of one box.
    pub fn box_volume(&self) -> f64 {
        self.widths().iter().product()
    }

    pub fn n_boxes(&self) -> usize {
        self.counts.iter().product()
    }

    pub fn multi_index(&self, i: usize) -> [usize; 3] {
        let mut m = [0; 3];
        let mut rest = i;
        for (a, c) in self.counts.iter().enumerate() {
            m[a] = rest % c;
            rest /= c;
        }
        m
    }

    pub fn box_center(&self, i: usize) -> Point {
        let m = self.multi_index(i);
        let w = self.widths();
        let mut c = Point::zeros();
        for a in 0..self.dim() {
            c[a] = self.axis_bounds(a).0 + (m[a] as f64 + 0.5) * w[a];
        }
        c
    }

    fn slice_cell(&self, s: SlicePlane) -> usize {
        let (lo, _) = self.axis_bounds(s.axis);
        let w = self.widths()[s.axis];
        (((s.value - lo) / w).floor() as usize).min(self.counts[s.axis] - 1)
    }

    /// Boxes whose rows are estimated, in ascending index order.
    pub fn active_boxes(&self) -> Vec<usize> {
        match self.slice {
            None => (0..self.n_boxes()).collect(),
            Some(s) => {
                let cell = self.slice_cell(s);
                (0..self.n_boxes()).filter(|&i| self.multi_index(i)[s.axis] == cell).collect()
            }
        }
    }

    /// Domain and counts of the field assembled from the active boxes.
    pub fn field_geometry(&self) -> (Domain, Vec<usize>) {
        match (self.slice, &self.domain) {
            (Some(s), Domain::Box { bounds }) => {
                let cell = self.slice_cell(s);
                let w = self.widths()[s.axis];
                let mut b = bounds.clone();
                let lo = bounds[s.axis].0 + cell as f64 * w;
                b[s.axis] = (lo, lo + w);
                let mut counts = self.counts.clone();
                counts[s.axis] = 1;
                (Domain::Box { bounds: b }, counts)
            }
            _ => (self.domain.clone(), self.counts.clone()),
        }
    }

    /// Checks that `spec` can be advanced from every box of this partition.
    pub fn check_compatible(&self, spec: &DynamicsSpec) -> Result<()> {
        if spec.dim != self.dim() {
            return Err(Error::GridMismatch(format!(
                "system `{}` is {}-dimensional, partition is {}-dimensional",
                spec.name,
                spec.dim,
                self.dim()
            )));
        }
        match (&self.domain, &spec.domain) {
            (Domain::Torus2D { lx, ly }, Domain::Torus2D { lx: sx, ly: sy }) if lx == sx && ly == sy => Ok(()),
            (Domain::Torus2D { .. }, _) | (_, Domain::Torus2D { .. }) => Err(Error::GridMismatch(
                "a torus partition requires the same torus as the system domain".into(),
            )),
            (Domain::Box { bounds }, Domain::Box { bounds: sb }) => {
                let inside = bounds.iter().zip(sb).all(|((lo, hi), (slo, shi))| lo >= slo && hi <= shi);
                if inside {
                    Ok(())
                } else {
                    Err(Error::GridMismatch("partition extends beyond the system's box domain".into()))
                }
            }
            _ => Ok(()),
        }
    }
}

/// How sample points are paired with the centre's Brownian path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoisePairing {
    /// Every point of a realization sees the same path (the centred flow).
    #[default]
    Shared,
    /// Each sample gets its own path; a diagnostic for the pairing itself.
    Independent,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sampling {
    /// Lattice points per axis, `2N + 1`.
    pub samples_per_axis: usize,
    pub realizations: usize,
    pub master_seed: u64,
    /// Displacement cells per box width.
    pub refinement: u32,
    pub pairing: NoisePairing,
}

impl Sampling {
    pub fn new(samples_per_axis: usize, realizations: usize, master_seed: u64) -> Self {
        Self {
            samples_per_axis,
            realizations,
            master_seed,
            refinement: 1,
            pairing: NoisePairing::Shared,
        }
    }

    pub fn with_refinement(mut self, r: u32) -> Self {
        self.refinement = r;
        self
    }

    pub fn with_pairing(mut self, pairing: NoisePairing) -> Self {
        self.pairing = pairing;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples_per_axis < 3 || self.samples_per_axis % 2 == 0 {
            return Err(Error::InvalidConfig(format!(
                "samples_per_axis must be odd and at least 3, got {}",
                self.samples_per_axis
            )));
        }
        if self.realizations == 0 {
            return Err(Error::InvalidConfig("realizations must be at least 1".into()));
        }
        if self.refinement == 0 {
            return Err(Error::InvalidConfig("refinement must be at least 1".into()));
        }
        Ok(())
    }

    /// Realizations actually integrated: one suffices without noise.
    pub fn effective_realizations(&self, spec: &DynamicsSpec) -> usize {
        if spec.is_deterministic() {
            1
        } else {
            self.realizations
        }
    }
}

/// Cell-centred lattice offsets `k h / n`, `k = -N..=N`, `x` fastest.
pub fn lattice_offsets(widths: &[f64], n: usize) -> Vec<Point> {
    let half = (n / 2) as i64;
    let dim = widths.len();
    let total = n.pow(dim as u32);
    (0..total)
        .map(|flat| {
            let mut v = Point::zeros();
            let mut rest = flat;
            for a in 0..dim {
                let k = (rest % n) as i64 - half;
                rest /= n;
                v[a] = k as f64 * widths[a] / n as f64;
            }
            v
        })
        .collect()
}

/// One estimated row: counts per displacement cell plus the outside bin.
#[derive(Debug, Clone, PartialEq)]
pub struct RowDistribution {
    pub source_box: usize,
    pub dim: usize,
    pub bin_widths: [f64; 3],
    pub counts: BTreeMap<BinIndex, u64>,
    pub outside: u64,
    pub samples_total: u64,
    /// Samples whose integration failed (a subset of `outside`).
    pub failures: u64,
    /// Shift of the cell lattice in cell units; zero anchors a cell centre
    /// at zero displacement.
    pub anchor: [f64; 3],
}

/// Fate of one sample point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SampleImage {
    /// Displacement from the image of the centre.
    Displaced(Point),
    /// Left a bounded partition.
    Absorbed,
    Failed,
}

impl RowDistribution {
    pub fn empty(source_box: usize, dim: usize, bin_widths: [f64; 3]) -> Self {
        Self {
            source_box,
            dim,
            bin_widths,
            counts: BTreeMap::new(),
            outside: 0,
            samples_total: 0,
            failures: 0,
            anchor: [0.0; 3],
        }
    }

    pub fn with_anchor(mut self, anchor: [f64; 3]) -> Self {
        self.anchor = anchor;
        self
    }

    pub fn from_images(
        source_box: usize,
        dim: usize,
        bin_widths: [f64; 3],
        refinement: u32,
        anchor: [f64; 3],
        images: &[SampleImage],
    ) -> Self {
        let mut row = Self::empty(source_box, dim, bin_widths).with_anchor(anchor);
        for img in images {
            match img {
                SampleImage::Displaced(d) => row.add(Some(d), refinement),
                SampleImage::Absorbed => row.add(None, refinement),
                SampleImage::Failed => row.add_failure(),
            }
        }
        row
    }

    /// Bins a displacement; `None` means outside.
    pub fn add(&mut self, displacement: Option<&Point>, refinement: u32) {
        self.samples_total += 1;
        match displacement.and_then(|d| self.bin_of(d, refinement)) {
            Some(b) => *self.counts.entry(b).or_insert(0) += 1,
            None => self.outside += 1,
        }
    }

    fn add_failure(&mut self) {
        self.samples_total += 1;
        self.outside += 1;
        self.failures += 1;
    }

    fn bin_of(&self, d: &Point, refinement: u32) -> Option<BinIndex> {
        let far = FAR_BOX_WIDTHS as f64 * refinement as f64;
        let mut b = [0i32; 3];
        for a in 0..self.dim {
            let k = (d[a] / self.bin_widths[a] + 0.5 + self.anchor[a]).floor();
            if !(k.abs() <= far) {
                return None;
            }
            b[a] = k as i32;
        }
        Some(b)
    }

    pub fn bin_volume(&self) -> f64 {
        self.bin_widths[..self.dim].iter().product()
    }

    /// `sum(counts) + outside == samples_total` in integer arithmetic.
    pub fn is_consistent(&self) -> bool {
        self.counts.values().sum::<u64>() + self.outside == self.samples_total
    }

    pub fn probabilities(&self) -> impl Iterator<Item = (BinIndex, f64)> + '_ {
        let n = self.samples_total as f64;
        self.counts.iter().map(move |(b, c)| (*b, *c as f64 / n))
    }

    pub fn outside_mass(&self) -> f64 {
        self.outside as f64 / self.samples_total as f64
    }

    pub fn all_outside(&self) -> bool {
        self.outside == self.samples_total
    }

    /// `-sum P log P` over displacement cells (the outside bin excluded).
    pub fn entropy(&self) -> f64 {
        -self.probabilities().map(|(_, p)| p * p.ln()).sum::<f64>()
    }

    pub fn bin_center(&self, b: &BinIndex) -> Point {
        let mut c = Point::zeros();
        for a in 0..self.dim {
            c[a] = (b[a] as f64 - self.anchor[a]) * self.bin_widths[a];
        }
        c
    }

    /// Diameter of the union of visited cells.
    pub fn support_diameter(&self) -> f64 {
        let bins: Vec<Point> = self.counts.keys().map(|b| self.bin_center(b)).collect();
        let diag = self.bin_widths[..self.dim].iter().map(|w| w * w).sum::<f64>().sqrt();
        let mut best: f64 = 0.0;
        for (i, a) in bins.iter().enumerate() {
            for b in &bins[i + 1..] {
                best = best.max((a - b).norm());
            }
        }
        if bins.is_empty() {
            0.0
        } else {
            best + diag
        }
    }

    /// CSV with one line per visited cell and a final `outside` line.
    pub fn to_csv(&self) -> String {
        let axes = ["dx_bin", "dy_bin", "dz_bin"];
        let mut s = axes[..self.dim].join(",");
        s.push_str(",count,probability\n");
        for (b, c) in &self.counts {
            for k in &b[..self.dim] {
                s.push_str(&format!("{k},"));
            }
            s.push_str(&format!("{c},{:e}\n", *c as f64 / self.samples_total as f64));
        }
        let pad = vec!["outside"; self.dim].join(",");
        s.push_str(&format!("{pad},{},{:e}\n", self.outside, self.outside_mass()));
        s
    }
}

pub fn bin_widths(widths: &[f64], refinement: u32) -> [f64; 3] {
    let mut w = [1.0; 3];
    for (a, x) in widths.iter().enumerate() {
        w[a] = x / refinement as f64;
    }
    w
}

/// Bins the pushforward of the sample lattice under a linear map.
pub fn affine_row(jacobian: &Mat, dim: usize, widths: &[f64], sampling: &Sampling) -> RowDistribution {
    affine_row_offsets(jacobian, dim, widths, &lattice_offsets(widths, sampling.samples_per_axis), sampling.refinement)
}

pub fn affine_row_offsets(jacobian: &Mat, dim: usize, widths: &[f64], offsets: &[Point], refinement: u32) -> RowDistribution {
    let mut row = RowDistribution::empty(0, dim, bin_widths(widths, refinement));
    for v in offsets {
        row.add(Some(&(jacobian * v)), refinement);
    }
    row
}

/// Row for a box of the given widths centred at `center`, with noise
/// keyed by `box_index`.
#[allow(clippy::too_many_arguments)]
pub fn estimate_row_at(
    spec: &DynamicsSpec,
    center: &Point,
    widths: &[f64],
    box_index: usize,
    bounds: Option<&Domain>,
    t0: f64,
    tau: f64,
    sampling: &Sampling,
    cfg: &IntegratorConfig,
) -> Result<RowDistribution> {
    sampling.validate()?;
    let offsets = lattice_offsets(widths, sampling.samples_per_axis);
    estimate_row_offsets(spec, center, widths, &offsets, box_index, bounds, t0, tau, sampling, cfg)
}

/// As [`estimate_row_at`] with explicit sample offsets from `center`; the
/// lattice size in `sampling` is ignored.
#[allow(clippy::too_many_arguments)]
pub fn estimate_row_offsets(
    spec: &DynamicsSpec,
    center: &Point,
    widths: &[f64],
    offsets: &[Point],
    box_index: usize,
    bounds: Option<&Domain>,
    t0: f64,
    tau: f64,
    sampling: &Sampling,
    cfg: &IntegratorConfig,
) -> Result<RowDistribution> {
    let images = centred_images(spec, center, offsets, box_index, bounds, t0, tau, sampling, cfg)?;
    let failures = images.iter().filter(|i| matches!(i, SampleImage::Failed)).count();
    if failures > 0 {
        warn!("box {box_index}: {failures} samples failed to integrate and were counted outside");
    }
    Ok(RowDistribution::from_images(
        box_index,
        spec.dim,
        bin_widths(widths, sampling.refinement),
        sampling.refinement,
        [0.0; 3],
        &images,
    ))
}

/// Images of `center + offsets` relative to the image of `center`, for
/// every realization in turn. Noise is keyed by `box_index` and follows
/// `sampling.pairing`.
#[allow(clippy::too_many_arguments)]
pub fn centred_images(
    spec: &DynamicsSpec,
    center: &Point,
    offsets: &[Point],
    box_index: usize,
    bounds: Option<&Domain>,
    t0: f64,
    tau: f64,
    sampling: &Sampling,
    cfg: &IntegratorConfig,
) -> Result<Vec<SampleImage>> {
    spec.validate()?;
    cfg.validate(spec)?;
    if sampling.realizations == 0 || sampling.refinement == 0 {
        return Err(Error::InvalidConfig("realizations and refinement must be at least 1".into()));
    }
    let plan = StepPlan::new(t0, tau, cfg.dt)?;
    let realizations = sampling.effective_realizations(spec);
    let mut images = Vec::with_capacity(realizations * offsets.len());
    for l in 0..realizations {
        let shared = PathKey::shared(sampling.master_seed, box_index as u64, l as u64);
        let noise = NoiseRealization::draw(spec, &plan, &shared);
        let c_img = match advance(spec, cfg.scheme, &plan, &noise, center, None) {
            Ok((c, _)) => c,
            Err(e) => {
                warn!("box {box_index}, realization {l}: centre failed: {e}");
                images.extend(std::iter::repeat(SampleImage::Failed).take(offsets.len()));
                continue;
            }
        };
        for (s, v) in offsets.iter().enumerate() {
            let x = center + v;
            let result = match sampling.pairing {
                NoisePairing::Shared => advance(spec, cfg.scheme, &plan, &noise, &x, None),
                NoisePairing::Independent => {
                    let own = PathKey::new(sampling.master_seed, box_index as u64, s as u64 + 1, l as u64);
                    let own_noise = NoiseRealization::draw(spec, &plan, &own);
                    advance(spec, cfg.scheme, &plan, &own_noise, &x, None)
                }
            };
            images.push(match result {
                Ok((img, _)) if bounds.is_some_and(|d| !d.contains(&img)) => SampleImage::Absorbed,
                Ok((img, _)) => SampleImage::Displaced(spec.domain.displacement(&img, &c_img)),
                Err(_) => SampleImage::Failed,
            });
        }
    }
    Ok(images)
}

/// Row of box `box_i` of `partition`.
pub fn estimate_row(
    spec: &DynamicsSpec,
    partition: &GridPartition,
    box_i: usize,
    t0: f64,
    tau: f64,
    sampling: &Sampling,
    cfg: &IntegratorConfig,
) -> Result<RowDistribution> {
    partition.check_compatible(spec)?;
    if box_i >= partition.n_boxes() {
        return Err(Error::InvalidConfig(format!(
            "box {box_i} out of range for {} boxes",
            partition.n_boxes()
        )));
    }
    let bounds = match &partition.domain {
        d @ Domain::Box { .. } => Some(d),
        _ => None,
    };
    estimate_row_at(
        spec,
        &partition.box_center(box_i),
        &partition.widths(),
        box_i,
        bounds,
        t0,
        tau,
        sampling,
        cfg,
    )
}

/// Rows of every active box, in ascending box order. Each row succeeds or
/// fails on its own.
pub fn estimate_operator(
    spec: &DynamicsSpec,
    partition: &GridPartition,
    t0: f64,
    tau: f64,
    sampling: &Sampling,
    cfg: &IntegratorConfig,
) -> Result<Vec<(usize, Result<RowDistribution>)>> {
    partition.validate()?;
    partition.check_compatible(spec)?;
    sampling.validate()?;
    cfg.validate(spec)?;
    StepPlan::new(t0, tau, cfg.dt)?;
    Ok(partition
        .active_boxes()
        .into_par_iter()
        .map(|i| (i, estimate_row(spec, partition, i, t0, tau, sampling, cfg)))
        .collect())
}
