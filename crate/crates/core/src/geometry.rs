//! Obstacle sets `F` inside the closed half-cylinder, their images on the ball side, and the
//! classified grids both formulations are solved on.
//!
//! Node membership uses outer inflation: a node is a Dirichlet node exactly when its closed
//! dual cell meets `F`.

use std::f64::consts::PI;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{invalid, Error, Result};
use crate::mesh::{graded_axis, Axis, Feature, TensorGrid};
use crate::operator::sphere_area;
use crate::transform::{forward_map, inverse_map, BallPoint, CylPoint, TransformParams};

/// Width below which a clipped piece counts as a tangential contact and is dropped.
pub const CLIP_TOL: f64 = 1e-12;

const LATERAL_TOL: f64 = 1e-12;

/// Cross-section `E` of a slab.
#[derive(Debug, Clone, PartialEq)]
pub enum CrossSection {
    FullDisk,
    SubBall { center: Vec<f64>, radius: f64 },
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum CrossSectionRepr {
    Keyword(String),
    SubBall { center: Vec<f64>, radius: f64 },
}

impl Serialize for CrossSection {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            CrossSection::FullDisk => CrossSectionRepr::Keyword("full".into()).serialize(s),
            CrossSection::SubBall { center, radius } => {
                CrossSectionRepr::SubBall { center: center.clone(), radius: *radius }.serialize(s)
            }
        }
    }
}

impl<'de> Deserialize<'de> for CrossSection {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        match CrossSectionRepr::deserialize(d)? {
            CrossSectionRepr::Keyword(k) if k == "full" => Ok(CrossSection::FullDisk),
            CrossSectionRepr::Keyword(k) => Err(serde::de::Error::custom(format!("unknown cross-section `{k}`"))),
            CrossSectionRepr::SubBall { center, radius } => Ok(CrossSection::SubBall { center, radius }),
        }
    }
}

impl CrossSection {
    fn contains(&self, x_prime: &[f64]) -> bool {
        match self {
            CrossSection::FullDisk => norm(x_prime) <= 1.0 + LATERAL_TOL,
            CrossSection::SubBall { center, radius } => dist(x_prime, center) <= *radius,
        }
    }

    fn is_axisymmetric(&self) -> bool {
        match self {
            CrossSection::FullDisk => true,
            CrossSection::SubBall { center, .. } => center.iter().all(|c| *c == 0.0),
        }
    }
}

/// One closed piece of the obstacle, always understood as intersected with the closed
/// cylinder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Primitive {
    /// Closed ball; `center` lists `(x', x_n)`. `clip` restricts it to an axial band.
    Ball {
        center: Vec<f64>,
        radius: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        clip: Option<[f64; 2]>,
    },
    /// `E x [a, b]`.
    Slab { cross: CrossSection, interval: [f64; 2] },
    /// Piece `{|x'| = 1} x [a, b]` of the lateral boundary.
    Lateral { interval: [f64; 2] },
}

impl Primitive {
    pub fn ball(center: Vec<f64>, radius: f64) -> Self {
        Primitive::Ball { center, radius, clip: None }
    }

    /// Axial extent `[lo, hi]`.
    pub fn axial_range(&self) -> [f64; 2] {
        match self {
            Primitive::Ball { center, radius, clip } => {
                let c = *center.last().unwrap();
                let mut r = [c - radius, c + radius];
                if let Some([a, b]) = clip {
                    r = [r[0].max(*a), r[1].min(*b)];
                }
                r
            }
            Primitive::Slab { interval, .. } | Primitive::Lateral { interval } => *interval,
        }
    }

    pub fn contains(&self, x: &CylPoint) -> bool {
        let [lo, hi] = self.axial_range();
        if x.x_n < lo || x.x_n > hi {
            return false;
        }
        match self {
            Primitive::Ball { center, radius, .. } => dist(&x.to_vec(), center) <= *radius,
            Primitive::Slab { cross, .. } => cross.contains(&x.x_prime),
            Primitive::Lateral { .. } => (x.radial() - 1.0).abs() <= LATERAL_TOL,
        }
    }

    pub fn is_axisymmetric(&self) -> bool {
        match self {
            Primitive::Ball { center, .. } => center[..center.len() - 1].iter().all(|c| *c == 0.0),
            Primitive::Slab { cross, .. } => cross.is_axisymmetric(),
            Primitive::Lateral { .. } => true,
        }
    }

    /// Intersection with the band `a <= x_n <= b`; `None` when empty or only tangential.
    pub fn clip(&self, a: f64, b: f64) -> Option<Primitive> {
        let [lo, hi] = self.axial_range();
        let (nlo, nhi) = (lo.max(a), hi.min(b));
        if nhi - nlo <= CLIP_TOL {
            return None;
        }
        Some(match self {
            Primitive::Ball { center, radius, .. } => {
                let c = *center.last().unwrap();
                let clip = if nlo <= c - radius && nhi >= c + radius { None } else { Some([nlo, nhi]) };
                Primitive::Ball { center: center.clone(), radius: *radius, clip }
            }
            Primitive::Slab { cross, .. } => Primitive::Slab { cross: cross.clone(), interval: [nlo, nhi] },
            Primitive::Lateral { .. } => Primitive::Lateral { interval: [nlo, nhi] },
        })
    }

    fn validate(&self, n: usize) -> Result<()> {
        let check_interval = |iv: &[f64; 2]| {
            if !(iv[0] <= iv[1]) || iv[0] < 0.0 {
                Err(invalid(format!("axial interval {iv:?} must satisfy 0 <= a <= b")))
            } else {
                Ok(())
            }
        };
        match self {
            Primitive::Ball { center, radius, clip } => {
                if center.len() != n {
                    return Err(invalid(format!("ball center needs {n} coordinates, got {}", center.len())));
                }
                if !(*radius > 0.0) {
                    return Err(invalid("ball radius must be positive"));
                }
                if let Some(c) = clip {
                    check_interval(c)?;
                }
                Ok(())
            }
            Primitive::Slab { cross, interval } => {
                if let CrossSection::SubBall { center, radius } = cross {
                    if center.len() != n - 1 {
                        return Err(invalid(format!("cross-section center needs {} coordinates", n - 1)));
                    }
                    if !(*radius > 0.0) {
                        return Err(invalid("cross-section radius must be positive"));
                    }
                }
                check_interval(interval)
            }
            Primitive::Lateral { interval } => check_interval(interval),
        }
    }

    /// Does the primitive meet the closed box (Cartesian coordinates `(x', x_n)`, or
    /// `(rho, x_n)` for an axisymmetric chart)?
    fn meets(&self, cell: &CellBox) -> bool {
        let [lo, hi] = self.axial_range();
        let (zlo, zhi) = (cell.lo[cell.lo.len() - 1], cell.hi[cell.hi.len() - 1]);
        if zhi < lo || zlo > hi {
            return false;
        }
        let (zlo, zhi) = (zlo.max(lo), zhi.min(hi));
        let m = cell.lo.len() - 1;
        match self {
            Primitive::Ball { center, radius, .. } => {
                let cz = *center.last().unwrap();
                let mut d2 = axis_gap(cz, zlo, zhi).powi(2);
                if cell.axisymmetric {
                    let rho = norm(&center[..center.len() - 1]);
                    d2 += axis_gap(rho, cell.lo[0], cell.hi[0]).powi(2);
                } else {
                    for k in 0..m {
                        d2 += axis_gap(center[k], cell.lo[k], cell.hi[k]).powi(2);
                    }
                }
                d2 <= radius * radius
            }
            Primitive::Slab { cross, .. } => match cross {
                CrossSection::FullDisk => cell.min_radial() <= 1.0 + LATERAL_TOL,
                CrossSection::SubBall { center, radius } => {
                    if cell.axisymmetric {
                        axis_gap(norm(center), cell.lo[0], cell.hi[0]) <= *radius
                    } else {
                        let d2: f64 = (0..m).map(|k| axis_gap(center[k], cell.lo[k], cell.hi[k]).powi(2)).sum();
                        d2 <= radius * radius
                    }
                }
            },
            Primitive::Lateral { .. } => {
                cell.min_radial() <= 1.0 + LATERAL_TOL && cell.max_radial() >= 1.0 - LATERAL_TOL
            }
        }
    }

    /// Smallest length scale that must be resolved, per chart axis.
    fn feature_sizes(&self) -> (Option<f64>, f64) {
        let [lo, hi] = self.axial_range();
        match self {
            Primitive::Ball { radius, .. } => (Some(*radius), (hi - lo).min(*radius)),
            Primitive::Slab { cross: CrossSection::SubBall { radius, .. }, .. } => (Some(*radius), hi - lo),
            Primitive::Slab { .. } | Primitive::Lateral { .. } => (None, hi - lo),
        }
    }
}

fn axis_gap(x: f64, lo: f64, hi: f64) -> f64 {
    if x < lo {
        lo - x
    } else if x > hi {
        x - hi
    } else {
        0.0
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Closed dual cell of a node.
#[derive(Debug, Clone, PartialEq)]
pub struct CellBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub axisymmetric: bool,
}

impl CellBox {
    fn min_radial(&self) -> f64 {
        let m = self.lo.len() - 1;
        if self.axisymmetric {
            return self.lo[0].max(0.0);
        }
        (0..m).map(|k| axis_gap(0.0, self.lo[k], self.hi[k]).powi(2)).sum::<f64>().sqrt()
    }

    fn max_radial(&self) -> f64 {
        let m = self.lo.len() - 1;
        if self.axisymmetric {
            return self.hi[0];
        }
        (0..m).map(|k| self.lo[k].abs().max(self.hi[k].abs()).powi(2)).sum::<f64>().sqrt()
    }
}

/// The closed Dirichlet set `F`: the base plate (when present) plus a list of primitives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObstacleSet {
    #[serde(skip, default = "default_true")]
    pub base: bool,
    pub primitives: Vec<Primitive>,
}

fn default_true() -> bool {
    true
}

impl ObstacleSet {
    /// `F` = the base plate only.
    pub fn base_only() -> Self {
        Self { base: true, primitives: Vec::new() }
    }

    pub fn with_primitives(primitives: Vec<Primitive>) -> Self {
        Self { base: true, primitives }
    }

    pub fn empty() -> Self {
        Self { base: false, primitives: Vec::new() }
    }

    pub fn is_empty(&self) -> bool {
        !self.base && self.primitives.is_empty()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let mut set: ObstacleSet = serde_json::from_str(text)?;
        set.base = true;
        Ok(set)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("obstacle sets always serialize")
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if n < 2 {
            return Err(invalid("dimension must be >= 2"));
        }
        for p in &self.primitives {
            p.validate(n)?;
        }
        Ok(())
    }

    pub fn is_axisymmetric(&self) -> bool {
        self.primitives.iter().all(|p| p.is_axisymmetric())
    }

    pub fn contains(&self, x: &CylPoint) -> bool {
        if x.radial() > 1.0 + LATERAL_TOL || x.x_n < 0.0 {
            return false;
        }
        (self.base && x.x_n.abs() <= LATERAL_TOL) || self.primitives.iter().any(|p| p.contains(x))
    }

    /// Largest axial coordinate reached by `F` (0 for the base alone).
    pub fn axial_extent(&self) -> f64 {
        self.primitives.iter().map(|p| p.axial_range()[1]).fold(0.0, f64::max)
    }

    pub fn lowest_point(&self) -> Option<f64> {
        let mut lo: Option<f64> = if self.base { Some(0.0) } else { None };
        for p in &self.primitives {
            let a = p.axial_range()[0];
            lo = Some(lo.map_or(a, |v| v.min(a)));
        }
        lo
    }

    pub fn meets(&self, cell: &CellBox) -> bool {
        let zlo = cell.lo[cell.lo.len() - 1];
        (self.base && zlo <= 0.0) || self.primitives.iter().any(|p| p.meets(cell))
    }

    pub fn union(&self, other: &ObstacleSet) -> ObstacleSet {
        let mut primitives = self.primitives.clone();
        primitives.extend(other.primitives.iter().cloned());
        ObstacleSet { base: self.base || other.base, primitives }
    }

    /// `F` intersected with the band `a <= x_n <= b`.
    pub fn clip(&self, a: f64, b: f64) -> ObstacleSet {
        let primitives = self.primitives.iter().filter_map(|p| p.clip(a, b)).collect();
        ObstacleSet { base: self.base && a <= 0.0 && b >= 0.0, primitives }
    }
}

/// `F` intersected with the closed band `j <= x_n <= 2j`.
pub fn annular_piece(f: &ObstacleSet, j: usize) -> Result<ObstacleSet> {
    if j < 1 {
        return Err(invalid("annular index j must be >= 1"));
    }
    Ok(f.clip(j as f64, 2.0 * j as f64))
}

/// Local refinement around obstacle features.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Refinement {
    pub cells_per_radius: f64,
    pub growth: f64,
    /// Features needing a spacing below `base / 2^max_levels` are left unrefined.
    pub max_levels: u32,
}

impl Default for Refinement {
    fn default() -> Self {
        Self { cells_per_radius: 6.0, growth: 0.25, max_levels: 30 }
    }
}

impl Refinement {
    fn admits(&self, base: f64, radius: f64) -> bool {
        radius / self.cells_per_radius >= base / 2f64.powi(self.max_levels as i32)
    }

    fn filter(&self, base: f64, feats: &[Feature]) -> Vec<Feature> {
        feats.iter().copied().filter(|f| self.admits(base, f.radius)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CrossSectionMode {
    /// Tensor grid on the bounding box of `B'`, nodes outside the closed disk discarded.
    Cartesian,
    /// Meridian half-plane `(rho, x_n)`; valid for data and obstacles invariant under
    /// rotations of `x'`.
    Axisymmetric,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NodeClass {
    Interior,
    Dirichlet,
    Lateral,
    FarEnd,
    /// Tensor node outside the closed cross-section; not part of the grid.
    Discarded,
}

/// Layout of an axial grid `cross-section x [z0, z1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CylinderGridSpec {
    pub n: usize,
    pub mode: CrossSectionMode,
    pub z0: f64,
    pub z1: f64,
    /// Node count across the cross-section (per axis for Cartesian, radial for axisymmetric).
    pub cross_nodes: usize,
    /// Axial node count for a uniform axis.
    pub axial_nodes: usize,
    /// Local refinement around ball and sub-ball features (graded axes).
    pub refinement: Option<Refinement>,
    /// Cross-section half-width: 1 for the cylinder, larger for capacity boxes.
    pub half_width: f64,
    /// Discard nodes with `|x'| > half_width` (Cartesian only).
    pub round: bool,
}

impl CylinderGridSpec {
    pub fn cylinder(n: usize, z0: f64, z1: f64, cross_nodes: usize, axial_nodes: usize) -> Self {
        let mode = if n == 2 { CrossSectionMode::Cartesian } else { CrossSectionMode::Axisymmetric };
        Self { n, mode, z0, z1, cross_nodes, axial_nodes, refinement: None, half_width: 1.0, round: true }
    }

    pub fn with_mode(mut self, mode: CrossSectionMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_refinement(mut self, r: Refinement) -> Self {
        self.refinement = Some(r);
        self
    }
}

/// Classified grid on a (truncated) cylinder or axial box.
#[derive(Debug, Clone)]
pub struct CylinderGrid {
    pub spec: CylinderGridSpec,
    pub grid: TensorGrid,
    pub class: Vec<NodeClass>,
}

impl CylinderGrid {
    pub fn n(&self) -> usize {
        self.spec.n
    }

    pub fn mode(&self) -> CrossSectionMode {
        self.spec.mode
    }

    pub fn num_nodes(&self) -> usize {
        self.grid.num_nodes()
    }

    pub fn active(&self) -> Vec<bool> {
        self.class.iter().map(|c| *c != NodeClass::Discarded).collect()
    }

    pub fn axial_axis(&self) -> &Axis {
        self.grid.axes.last().unwrap()
    }

    /// Physical position of a node; axisymmetric nodes lie in the half-plane `x'=(rho,0,..)`.
    pub fn point(&self, idx: usize) -> CylPoint {
        let c = self.grid.coords(idx);
        let n = self.spec.n;
        match self.spec.mode {
            CrossSectionMode::Cartesian => CylPoint::from_slice(&c),
            CrossSectionMode::Axisymmetric => {
                let mut xp = vec![0.0; n - 1];
                xp[0] = c[0];
                CylPoint::new(xp, c[1])
            }
        }
    }

    pub fn dual_cell(&self, idx: usize) -> CellBox {
        let multi = self.grid.multi_index(idx);
        let mut lo = Vec::with_capacity(multi.len());
        let mut hi = Vec::with_capacity(multi.len());
        for (a, &i) in self.grid.axes.iter().zip(&multi) {
            let (l, h) = a.dual_cell(i);
            lo.push(l);
            hi.push(h);
        }
        CellBox { lo, hi, axisymmetric: self.spec.mode == CrossSectionMode::Axisymmetric }
    }

    /// Nodes whose dual cell meets `set`.
    pub fn mask_of(&self, set: &ObstacleSet) -> Vec<bool> {
        (0..self.num_nodes())
            .map(|i| self.class[i] != NodeClass::Discarded && set.meets(&self.dual_cell(i)))
            .collect()
    }

    /// Nodes at the bottom of the axial range.
    pub fn bottom_mask(&self) -> Vec<bool> {
        let z0 = self.axial_axis().coords[0];
        (0..self.num_nodes())
            .map(|i| self.class[i] != NodeClass::Discarded && self.grid.coords(i).last().copied() == Some(z0))
            .collect()
    }

    /// Interpolates a nodal field at a physical point, using the meridian coordinate in
    /// axisymmetric mode.
    pub fn interpolate(&self, values: &[f64], x: &CylPoint) -> Option<f64> {
        let active = self.active();
        let pt = match self.spec.mode {
            CrossSectionMode::Cartesian => x.to_vec(),
            CrossSectionMode::Axisymmetric => vec![x.radial(), x.x_n],
        };
        self.grid.interpolate(values, &active, &pt)
    }
}

fn feature_lists(set: &ObstacleSet, mode: CrossSectionMode, n: usize) -> (Vec<Vec<Feature>>, Vec<Feature>, Vec<f64>) {
    let cross_axes = match mode {
        CrossSectionMode::Cartesian => n - 1,
        CrossSectionMode::Axisymmetric => 1,
    };
    let mut cross = vec![Vec::new(); cross_axes];
    let mut axial = Vec::new();
    let mut breaks = Vec::new();
    for p in &set.primitives {
        let [lo, hi] = p.axial_range();
        breaks.push(lo);
        breaks.push(hi);
        match p {
            Primitive::Ball { center, radius, .. } => {
                let cz = *center.last().unwrap();
                let half = 0.5 * (hi - lo);
                axial.push(Feature { center: cz.clamp(lo, hi), radius: radius.min(half.max(1e-300)) });
                breaks.push(cz.clamp(lo, hi));
                match mode {
                    CrossSectionMode::Cartesian => {
                        for k in 0..n - 1 {
                            cross[k].push(Feature { center: center[k], radius: *radius });
                        }
                    }
                    CrossSectionMode::Axisymmetric => {
                        cross[0].push(Feature { center: norm(&center[..n - 1]), radius: *radius });
                    }
                }
            }
            Primitive::Slab { cross: CrossSection::SubBall { center, radius }, .. } => match mode {
                CrossSectionMode::Cartesian => {
                    for k in 0..n - 1 {
                        cross[k].push(Feature { center: center[k], radius: *radius });
                    }
                }
                CrossSectionMode::Axisymmetric => {
                    cross[0].push(Feature { center: norm(center), radius: *radius });
                }
            },
            _ => {}
        }
    }
    (cross, axial, breaks)
}

/// Builds and classifies an axial grid for `set`. Dirichlet wins over lateral, lateral over
/// far-end. With `check_resolution`, an under-resolved primitive is an error.
pub fn build_axial_grid(spec: &CylinderGridSpec, set: &ObstacleSet, check_resolution: bool) -> Result<CylinderGrid> {
    let n = spec.n;
    if n < 2 {
        return Err(invalid("dimension must be >= 2"));
    }
    if !(spec.z1 > spec.z0) {
        return Err(invalid(format!("axial range [{}, {}] is empty", spec.z0, spec.z1)));
    }
    if spec.cross_nodes < 3 || spec.axial_nodes < 3 {
        return Err(invalid("grids need at least 3 nodes per axis"));
    }
    if spec.mode == CrossSectionMode::Axisymmetric {
        if n < 3 {
            return Err(Error::Unsupported("axisymmetric cross-sections need n >= 3".into()));
        }
        if !set.is_axisymmetric() {
            return Err(Error::Unsupported("obstacle set is not rotationally symmetric about the axis".into()));
        }
    }
    if spec.mode == CrossSectionMode::Cartesian && n > 3 {
        return Err(Error::Unsupported("Cartesian cross-sections are supported for n <= 3".into()));
    }
    let a = spec.half_width;
    let (cross_feats, axial_feats, breaks) = feature_lists(set, spec.mode, n);
    let axial_base = (spec.z1 - spec.z0) / (spec.axial_nodes - 1) as f64;
    let z_axis = match spec.refinement {
        Some(r) => graded_axis(spec.z0, spec.z1, axial_base, &r.filter(axial_base, &axial_feats), r.cells_per_radius, r.growth, &breaks),
        None => Axis::uniform(spec.z0, spec.z1, spec.axial_nodes),
    };
    let mut axes = Vec::new();
    match spec.mode {
        CrossSectionMode::Cartesian => {
            let base = 2.0 * a / (spec.cross_nodes - 1) as f64;
            for feats in cross_feats.iter() {
                axes.push(match spec.refinement {
                    Some(r) => {
                        let feats = r.filter(base, feats);
                        let mut bp: Vec<f64> = feats.iter().map(|f| f.center).collect();
                        bp.push(0.0);
                        graded_axis(-a, a, base, &feats, r.cells_per_radius, r.growth, &bp)
                    }
                    None => Axis::uniform(-a, a, spec.cross_nodes),
                });
            }
        }
        CrossSectionMode::Axisymmetric => {
            let base = a / (spec.cross_nodes - 1) as f64;
            axes.push(match spec.refinement {
                Some(r) => {
                    let feats = r.filter(base, &cross_feats[0]);
                    let bp: Vec<f64> = feats.iter().flat_map(|f| [f.center + f.radius, f.center]).collect();
                    graded_axis(0.0, a, base, &feats, r.cells_per_radius, r.growth, &bp)
                }
                None => Axis::uniform(0.0, a, spec.cross_nodes),
            });
        }
    }
    axes.push(z_axis);
    let grid = TensorGrid::new(axes);
    let total = grid.num_nodes();
    let d = grid.dim();

    let mut class = vec![NodeClass::Interior; total];
    if spec.mode == CrossSectionMode::Cartesian && spec.round {
        for (i, c) in class.iter_mut().enumerate() {
            let x = grid.coords(i);
            if norm(&x[..d - 1]) > a * (1.0 + 1e-12) {
                *c = NodeClass::Discarded;
            }
        }
    }
    let mut out = CylinderGrid { spec: spec.clone(), grid, class };
    let z_last = out.axial_axis().len() - 1;
    for i in 0..total {
        if out.class[i] == NodeClass::Discarded {
            continue;
        }
        if set.meets(&out.dual_cell(i)) {
            out.class[i] = NodeClass::Dirichlet;
            continue;
        }
        let multi = out.grid.multi_index(i);
        let lateral = match spec.mode {
            CrossSectionMode::Axisymmetric => multi[0] == out.grid.axes[0].len() - 1,
            CrossSectionMode::Cartesian => (0..d - 1).any(|k| {
                let len = out.grid.axes[k].len();
                [-1i64, 1].iter().any(|s| {
                    let j = multi[k] as i64 + s;
                    if j < 0 || j >= len as i64 {
                        return true;
                    }
                    let mut m2 = multi.clone();
                    m2[k] = j as usize;
                    out.class[out.grid.index(&m2)] == NodeClass::Discarded
                })
            }),
        };
        if lateral {
            out.class[i] = NodeClass::Lateral;
        } else if multi[d - 1] == z_last {
            out.class[i] = NodeClass::FarEnd;
        }
    }

    if check_resolution {
        check_resolved(&out, set)?;
    }
    Ok(out)
}

fn check_resolved(grid: &CylinderGrid, set: &ObstacleSet) -> Result<()> {
    let d = grid.grid.dim();
    for p in &set.primitives {
        let [lo, hi] = p.axial_range();
        if hi < grid.spec.z0 || lo > grid.spec.z1 {
            continue;
        }
        let (cross_size, axial_size) = p.feature_sizes();
        let hz = grid.grid.axes[d - 1].local_spacing(lo, hi);
        if axial_size < hz {
            return Err(Error::ResolutionTooCoarse(format!(
                "primitive {p:?} has axial size {axial_size:e} below the grid spacing {hz:e}"
            )));
        }
        if let Some(size) = cross_size {
            let centers: Vec<f64> = match p {
                Primitive::Ball { center, .. } => center[..center.len() - 1].to_vec(),
                Primitive::Slab { cross: CrossSection::SubBall { center, .. }, .. } => center.clone(),
                _ => vec![],
            };
            for k in 0..d - 1 {
                let c = match grid.spec.mode {
                    CrossSectionMode::Axisymmetric => norm(&centers),
                    CrossSectionMode::Cartesian => centers[k],
                };
                let h = grid.grid.axes[k].local_spacing(c - size, c + size);
                if size < h {
                    return Err(Error::ResolutionTooCoarse(format!(
                        "primitive {p:?} has size {size:e} below the cross-section spacing {h:e}"
                    )));
                }
            }
        }
    }
    Ok(())
}

/// Classified grid on the truncated cylinder `B' x [0, L]` with `resolution` nodes across
/// the cross-section; axial nodes keep the cells near square.
pub fn build_cylinder_grid(n: usize, length: f64, resolution: usize, f: &ObstacleSet) -> Result<CylinderGrid> {
    if !(length > 0.0) {
        return Err(invalid("truncation length must be positive"));
    }
    let cross = if n == 2 { 2.0 } else { 1.0 };
    let axial = ((length / cross * (resolution - 1) as f64).round() as usize + 1).max(3);
    let spec = CylinderGridSpec::cylinder(n, 0.0, length, resolution, axial);
    build_axial_grid(&spec, f, true)
}

/// McShane extension `g(x) = min_y (f(y) + L |x - y|)` of Lipschitz data.
pub fn mcshane_extend(sources: &[(Vec<f64>, f64)], lipschitz: f64, targets: &[Vec<f64>]) -> Vec<f64> {
    targets
        .iter()
        .map(|x| {
            sources
                .iter()
                .map(|(y, fy)| fy + lipschitz * dist(x, y))
                .fold(f64::INFINITY, f64::min)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BallNodeClass {
    Interior,
    Dirichlet,
    /// Innermost ring around the excluded origin (free).
    OriginAdjacent,
}

/// Radially graded grid of the ball `B_R` in polar (`n = 2`) or meridian (`n >= 3`) form.
///
/// The computational axes are the radius (geometric spacing) and the angle from the
/// positive `xi_n` axis: `theta in [-pi, pi)` wrapped for `n = 2`, `theta in [0, pi]` for
/// `n >= 3`. The origin itself is not a node: the innermost ring bounds a small hole with
/// a natural condition.
#[derive(Debug, Clone)]
pub struct BallGrid {
    pub n: usize,
    pub grid: TensorGrid,
    pub class: Vec<BallNodeClass>,
    pub r_outer: f64,
}

impl BallGrid {
    /// `radial_nodes` between `r_inner` and `r_outer`, uniform in `log r` piecewise between
    /// radial breakpoints; `angular_nodes` cells in the angle (a multiple of 4).
    pub fn new(n: usize, r_inner: f64, r_outer: f64, radial_nodes: usize, angular_cells: usize, breaks: &[f64]) -> Result<Self> {
        if n < 2 {
            return Err(invalid("dimension must be >= 2"));
        }
        if !(r_inner > 0.0 && r_outer > r_inner) {
            return Err(invalid("ball grid needs 0 < r_inner < r_outer"));
        }
        if angular_cells < 4 || angular_cells % 4 != 0 {
            return Err(invalid("angular cell count must be a positive multiple of 4"));
        }
        if radial_nodes < 3 {
            return Err(invalid("ball grid needs at least 3 radial nodes"));
        }
        let radial = piecewise_geometric(r_inner, r_outer, radial_nodes, breaks);
        let angle = if n == 2 {
            Axis::periodic(-PI, 2.0 * PI, angular_cells)
        } else {
            Axis::uniform(0.0, PI, angular_cells + 1)
        };
        let grid = TensorGrid::new(vec![radial, angle]);
        let mut class = vec![BallNodeClass::Interior; grid.num_nodes()];
        let nr = grid.axes[0].len();
        for (i, c) in class.iter_mut().enumerate() {
            let m = grid.multi_index(i);
            if m[0] == nr - 1 {
                *c = BallNodeClass::Dirichlet;
            } else if m[0] == 0 {
                *c = BallNodeClass::OriginAdjacent;
            }
        }
        Ok(Self { n, grid, class, r_outer })
    }

    pub fn num_nodes(&self) -> usize {
        self.grid.num_nodes()
    }

    pub fn radial_axis(&self) -> &Axis {
        &self.grid.axes[0]
    }

    pub fn angular_axis(&self) -> &Axis {
        &self.grid.axes[1]
    }

    /// Meridian coordinates `(m1, xi_n)` of a node.
    pub fn meridian(&self, idx: usize) -> (f64, f64) {
        let c = self.grid.coords(idx);
        (c[0] * c[1].sin(), c[0] * c[1].cos())
    }

    pub fn point(&self, idx: usize) -> BallPoint {
        let (m1, m2) = self.meridian(idx);
        let mut xi = vec![0.0; self.n];
        xi[0] = m1;
        xi[self.n - 1] = m2;
        BallPoint::new(xi)
    }

    /// Node index of the reflected node `P xi`.
    pub fn reflected_index(&self, idx: usize) -> usize {
        let m = self.grid.multi_index(idx);
        let na = self.angular_axis().len();
        let k = if self.n == 2 { (3 * na / 2 + na - m[1]) % na } else { na - 1 - m[1] };
        self.grid.index(&[m[0], k])
    }

    /// Computational coordinates `(r, theta)` of a ball point (meridian reduction for
    /// `n >= 3`).
    pub fn chart_coords(&self, xi: &BallPoint) -> (f64, f64) {
        let r = xi.norm();
        let last = xi.last();
        if self.n == 2 {
            (r, xi.xi[0].atan2(last))
        } else {
            (r, xi.prime_norm().atan2(last))
        }
    }

    pub fn nearest_node(&self, xi: &BallPoint) -> Option<usize> {
        let (r, th) = self.chart_coords(xi);
        let ax = self.radial_axis();
        if r < ax.coords[0] || r > ax.coords[ax.len() - 1] {
            return None;
        }
        Some(self.grid.index(&[ax.nearest(r), self.angular_axis().nearest(th)]))
    }

    pub fn interpolate(&self, values: &[f64], xi: &BallPoint) -> Option<f64> {
        let (r, th) = self.chart_coords(xi);
        let active = vec![true; self.num_nodes()];
        self.grid.interpolate(values, &active, &[r, th])
    }

    /// Angular measure factor of the meridian chart at `(r, theta)`: `d xi = factor dr dtheta`.
    pub fn volume_factor(&self, r: f64, theta: f64) -> f64 {
        if self.n == 2 {
            r
        } else {
            sphere_area(self.n - 2) * (r * theta.sin()).abs().powi(self.n as i32 - 2) * r
        }
    }
}

fn piecewise_geometric(lo: f64, hi: f64, nodes: usize, breaks: &[f64]) -> Axis {
    let mut pts = vec![lo, hi];
    pts.extend(breaks.iter().cloned().filter(|b| *b > lo && *b < hi));
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    pts.dedup();
    let total = (hi / lo).ln();
    let cells = nodes - 1;
    let mut coords = vec![lo];
    let mut used = 0usize;
    for (k, w) in pts.windows(2).enumerate() {
        let frac = (w[1] / w[0]).ln() / total;
        let remaining_segments = pts.len() - 2 - k;
        let mut c = ((frac * cells as f64).round() as usize).max(1);
        if remaining_segments == 0 {
            c = cells.saturating_sub(used).max(1);
        }
        used += c;
        let seg = Axis::geometric(w[0], w[1], c + 1);
        coords.extend_from_slice(&seg.coords[1..]);
    }
    Axis::from_coords(coords)
}

/// Nodal indicator of `F~ = T(F) u P T(F) u {0}` on a ball grid.
#[derive(Debug, Clone)]
pub struct BallIndicator {
    pub marked: Vec<bool>,
    pub grid_r: Vec<f64>,
}

impl BallIndicator {
    pub fn is_marked(&self, idx: usize) -> bool {
        self.marked[idx]
    }

    pub fn count(&self) -> usize {
        self.marked.iter().filter(|m| **m).count()
    }
}

/// Indicator of `F~` on `grid`: nodes whose preimage lies in `F` and nodes whose dual cell
/// receives a forward-mapped sample of `F`, on both sides of the equator. `resolution` is
/// the sample density per unit length in cylinder coordinates.
pub fn transform_obstacle(
    params: &TransformParams,
    f: &ObstacleSet,
    grid: &BallGrid,
    resolution: usize,
) -> Result<BallIndicator> {
    let n = params.n;
    if grid.n != n {
        return Err(invalid("ball grid dimension differs from transform dimension"));
    }
    if n >= 3 && !f.is_axisymmetric() {
        return Err(Error::Unsupported("meridian ball grids need a rotationally symmetric obstacle".into()));
    }
    let total = grid.num_nodes();
    let mut marked = vec![false; total];
    for (i, m) in marked.iter_mut().enumerate() {
        let xi = grid.point(i);
        let upper = if xi.last() >= 0.0 { xi.clone() } else { crate::transform::reflect(&xi) };
        if let Ok(x) = inverse_map(params, &upper) {
            if f.contains(&x) {
                *m = true;
            }
        }
    }
    let nr = grid.radial_axis().len();
    if f.base && (grid.r_outer - 1.0).abs() < 1e-12 {
        for (i, m) in marked.iter_mut().enumerate() {
            if grid.grid.multi_index(i)[0] == nr - 1 {
                *m = true;
            }
        }
    }
    let delta = 1.0 / resolution.max(1) as f64;
    let mut mark_point = |x: &CylPoint| {
        let xi = forward_map(params, x);
        for img in [xi.clone(), crate::transform::reflect(&xi)] {
            if let Some(idx) = grid.nearest_node(&img) {
                marked[idx] = true;
            }
        }
    };
    let meridian = |s: f64, z: f64| {
        let mut xp = vec![0.0; n - 1];
        xp[0] = s;
        CylPoint::new(xp, z)
    };
    let s_lo = if n == 2 { -1.0 } else { 0.0 };
    let steps = |a: f64, b: f64, h: f64| -> Vec<f64> {
        let k = ((b - a) / h).ceil().max(1.0) as usize;
        (0..=k).map(|i| a + (b - a) * i as f64 / k as f64).collect()
    };
    if f.base {
        for s in steps(s_lo, 1.0, delta) {
            mark_point(&meridian(s, 0.0));
        }
    }
    for p in &f.primitives {
        let [lo, hi] = p.axial_range();
        match p {
            Primitive::Ball { center, radius, .. } => {
                let h = delta.min(radius / 4.0);
                let cz = *center.last().unwrap();
                let cs = if n == 2 { center[0] } else { 0.0 };
                for z in steps(lo, hi, h) {
                    let half = (radius * radius - (z - cz).powi(2)).max(0.0).sqrt();
                    let (a, b) = ((cs - half).max(s_lo), (cs + half).min(1.0));
                    if b < a {
                        continue;
                    }
                    for s in steps(a, b, h) {
                        mark_point(&meridian(s, z));
                    }
                }
            }
            Primitive::Slab { cross, .. } => {
                let (a, b, h) = match cross {
                    CrossSection::FullDisk => (s_lo, 1.0, delta),
                    CrossSection::SubBall { center, radius } => {
                        let c = if n == 2 { center[0] } else { 0.0 };
                        ((c - radius).max(s_lo), (c + radius).min(1.0), delta.min(radius / 4.0))
                    }
                };
                for z in steps(lo, hi, h.min(delta)) {
                    for s in steps(a, b, h) {
                        mark_point(&meridian(s, z));
                    }
                }
            }
            Primitive::Lateral { .. } => {
                for z in steps(lo, hi, delta) {
                    mark_point(&meridian(1.0, z));
                    if n == 2 {
                        mark_point(&meridian(-1.0, z));
                    }
                }
            }
        }
    }
    Ok(BallIndicator { marked, grid_r: grid.radial_axis().coords.clone() })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shrinking(n: usize, count: usize) -> ObstacleSet {
        let prims = (1..=count)
            .map(|i| {
                let mut c = vec![0.0; n];
                c[n - 1] = i as f64 + 0.5;
                Primitive::ball(c, 0.5f64.powi(i as i32))
            })
            .collect();
        ObstacleSet::with_primitives(prims)
    }

    #[test]
    fn json_round_trip_and_schema() {
        let text = r#"{"primitives":[
            {"type":"ball","center":[0.0,0.0,2.5],"radius":0.25},
            {"type":"slab","cross":"full","interval":[1.0,2.0]},
            {"type":"slab","cross":{"center":[0.0,0.0],"radius":0.5},"interval":[3.0,4.0]},
            {"type":"lateral","interval":[5.0,6.0]}]}"#;
        let f = ObstacleSet::from_json(text).unwrap();
        assert!(f.base);
        assert_eq!(f.primitives.len(), 4);
        f.validate(3).unwrap();
        let back = ObstacleSet::from_json(&f.to_json()).unwrap();
        assert_eq!(back, f);
        assert!(ObstacleSet::from_json(r#"{"primitives":[{"type":"slab","cross":"half","interval":[0,1]}]}"#).is_err());
        assert!(f.validate(2).is_err());
    }

    #[test]
    fn annular_pieces() {
        assert!(annular_piece(&ObstacleSet::base_only(), 1).unwrap().is_empty());
        let f = shrinking(3, 12);
        let piece = annular_piece(&f, 3).unwrap();
        let heights: Vec<f64> = piece.primitives.iter().map(|p| match p {
            Primitive::Ball { center, clip, .. } => {
                assert!(clip.is_none());
                center[2]
            }
            _ => unreachable!(),
        }).collect();
        assert_eq!(heights, vec![3.5, 4.5, 5.5]);
        assert!(!piece.base);

        let slabs = ObstacleSet::with_primitives(
            (1..=12).map(|j| Primitive::Slab { cross: CrossSection::FullDisk, interval: [j as f64, j as f64 + 1.0] }).collect(),
        );
        let piece = annular_piece(&slabs, 5).unwrap();
        let ivs: Vec<[f64; 2]> = piece.primitives.iter().map(|p| p.axial_range()).collect();
        assert_eq!(ivs, vec![[5.0, 6.0], [6.0, 7.0], [7.0, 8.0], [8.0, 9.0], [9.0, 10.0]]);
        assert!(annular_piece(&slabs, 0).is_err());
    }

    #[test]
    fn clipped_ball_keeps_only_the_band() {
        let b = Primitive::ball(vec![0.0, 0.0, 2.0], 0.5);
        let c = b.clip(2.2, 4.0).unwrap();
        assert_eq!(c.axial_range(), [2.2, 2.5]);
        assert!(!c.contains(&CylPoint::new(vec![0.0, 0.0], 2.1)));
        assert!(c.contains(&CylPoint::new(vec![0.0, 0.0], 2.3)));
        assert!(b.clip(2.5, 3.0).is_none());
    }

    #[test]
    fn base_grid_classes() {
        let g = build_cylinder_grid(2, 2.0, 9, &ObstacleSet::base_only()).unwrap();
        for i in 0..g.num_nodes() {
            let x = g.point(i);
            let c = g.class[i];
            if x.x_n == 0.0 {
                assert_eq!(c, NodeClass::Dirichlet);
            } else if x.x_prime[0].abs() == 1.0 {
                assert_eq!(c, NodeClass::Lateral);
            } else if x.x_n == 2.0 {
                assert_eq!(c, NodeClass::FarEnd);
            } else {
                assert_eq!(c, NodeClass::Interior);
            }
        }
    }

    #[test]
    fn lateral_patch_turns_lateral_nodes_dirichlet() {
        let f = ObstacleSet::with_primitives(vec![Primitive::Lateral { interval: [0.5, 1.0] }]);
        let g = build_cylinder_grid(2, 2.0, 9, &f).unwrap();
        for i in 0..g.num_nodes() {
            let x = g.point(i);
            if x.x_prime[0].abs() == 1.0 && x.x_n >= 0.5 && x.x_n <= 1.0 {
                assert_eq!(g.class[i], NodeClass::Dirichlet);
            }
            if x.x_prime[0].abs() < 0.5 && x.x_n > 0.2 {
                assert_ne!(g.class[i], NodeClass::Dirichlet);
            }
        }
    }

    #[test]
    fn tiny_ball_is_too_coarse() {
        let f = ObstacleSet::with_primitives(vec![Primitive::ball(vec![0.0, 1.0], 0.01)]);
        assert!(matches!(build_cylinder_grid(2, 2.0, 9, &f), Err(Error::ResolutionTooCoarse(_))));
        let spec = CylinderGridSpec::cylinder(2, 0.0, 2.0, 9, 9).with_refinement(Refinement::default());
        let g = build_axial_grid(&spec, &f, true).unwrap();
        let inside = (0..g.num_nodes()).filter(|&i| f.primitives[0].contains(&g.point(i))).count();
        assert!(inside > 10);
    }

    #[test]
    fn cartesian_three_d_grid_discards_outside_nodes() {
        let spec = CylinderGridSpec::cylinder(3, 0.0, 1.0, 9, 5).with_mode(CrossSectionMode::Cartesian);
        let g = build_axial_grid(&spec, &ObstacleSet::base_only(), true).unwrap();
        for i in 0..g.num_nodes() {
            let x = g.point(i);
            if x.radial() > 1.0 + 1e-9 {
                assert_eq!(g.class[i], NodeClass::Discarded);
            } else if x.x_n > 0.0 && x.radial() > 0.9 {
                assert_ne!(g.class[i], NodeClass::Interior, "{x:?}");
            }
        }
    }

    #[test]
    fn axisymmetric_mode_rejects_off_axis_balls() {
        let f = ObstacleSet::with_primitives(vec![Primitive::ball(vec![0.3, 0.0, 1.0], 0.2)]);
        let spec = CylinderGridSpec::cylinder(3, 0.0, 2.0, 9, 9);
        assert!(matches!(build_axial_grid(&spec, &f, true), Err(Error::Unsupported(_))));
    }

    #[test]
    fn nodes_inside_f_stay_dirichlet_under_refinement() {
        let f = shrinking(2, 2);
        for res in [17, 33, 65] {
            let g = build_cylinder_grid(2, 4.0, res, &f).unwrap();
            for i in 0..g.num_nodes() {
                if f.contains(&g.point(i)) {
                    assert_eq!(g.class[i], NodeClass::Dirichlet);
                }
            }
        }
    }

    #[test]
    fn mcshane_examples() {
        let src = vec![(vec![0.0, 0.0], 2.5), (vec![1.0, 0.0], 2.5)];
        let tg = vec![vec![0.3, 0.4], vec![5.0, 1.0]];
        assert_eq!(mcshane_extend(&src, 0.0, &tg), vec![2.5, 2.5]);
        assert_eq!(mcshane_extend(&src, 1.0, &tg)[0], 3.0);
        let g = mcshane_extend(&[(vec![0.0, 0.0], 0.0)], 1.0, &[vec![3.0, 4.0]]);
        assert_eq!(g, vec![5.0]);
    }

    #[test]
    fn ball_grid_reflection_and_indicator() {
        let params = TransformParams::new(2, 1.0).unwrap();
        let g = BallGrid::new(2, 1e-3, 1.0, 40, 32, &[]).unwrap();
        for i in 0..g.num_nodes() {
            let j = g.reflected_index(i);
            let (a, b) = g.meridian(i);
            let (c, d) = g.meridian(j);
            assert!((a - c).abs() < 1e-12 && (b + d).abs() < 1e-12);
        }
        let ind = transform_obstacle(&params, &ObstacleSet::base_only(), &g, 32).unwrap();
        for i in 0..g.num_nodes() {
            assert_eq!(ind.is_marked(i), ind.is_marked(g.reflected_index(i)));
            let on_sphere = g.grid.multi_index(i)[0] == g.radial_axis().len() - 1;
            assert_eq!(ind.is_marked(i), on_sphere);
        }
    }

    #[test]
    fn ball_indicator_reaches_small_radii_for_unbounded_sets() {
        let params = TransformParams::new(3, 1.0).unwrap();
        let slabs = ObstacleSet::with_primitives(
            (1..=8)
                .map(|j| Primitive::Slab {
                    cross: CrossSection::SubBall { center: vec![0.0, 0.0], radius: 0.5 },
                    interval: [j as f64, j as f64 + 1.0],
                })
                .collect(),
        );
        let g = BallGrid::new(3, (-9.5f64).exp(), 1.0, 120, 16, &[]).unwrap();
        let ind = transform_obstacle(&params, &slabs, &g, 16).unwrap();
        let rmin = (0..g.num_nodes())
            .filter(|&i| ind.is_marked(i))
            .map(|i| g.grid.coords(i)[0])
            .fold(f64::INFINITY, f64::min);
        assert!(rmin < (-8.5f64).exp(), "{rmin}");
        for i in 0..g.num_nodes() {
            assert_eq!(ind.is_marked(i), ind.is_marked(g.reflected_index(i)));
        }
    }
}
