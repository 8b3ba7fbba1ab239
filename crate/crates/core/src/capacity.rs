//! Variational capacities as constrained energy minimizations: the Neumann capacity of the
//! half-cylinder above height `t`, the weighted condenser capacity on ball grids, and a
//! bounded-box Sobolev capacity.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::{
    build_axial_grid, transform_obstacle, BallGrid, BallNodeClass, CrossSection, CrossSectionMode, CylinderGrid,
    CylinderGridSpec, NodeClass, ObstacleSet, Primitive, Refinement,
};
use crate::mesh::Split;
use crate::operator::{unit_ball_volume, OperatorContext};
use crate::solver::{axial_mesh, ball_weight_mesh, solve, DiscreteField, PEnergyProblem, SolveReport, SolverSettings};
use crate::transform::TransformParams;

/// Relative change above which a truncation or box-size check raises a flag.
pub const SENSITIVITY_LIMIT: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapacityResult {
    pub value: f64,
    pub minimizer: DiscreteField,
    pub report: Option<SolveReport>,
    pub grid_nodes: usize,
    /// Relative change of the value under the enlarged truncation or box.
    pub sensitivity: Option<f64>,
    pub flags: Vec<String>,
}

impl CapacityResult {
    fn empty(nodes: usize) -> Self {
        Self { value: 0.0, minimizer: DiscreteField::constant(nodes, 0.0), report: None, grid_nodes: nodes, sensitivity: None, flags: Vec::new() }
    }

    pub fn converged(&self) -> bool {
        self.report.as_ref().is_none_or(|r| r.converged)
    }
}

/// Node masks and mesh of one capacity minimization.
#[derive(Debug, Clone)]
pub struct CapacityProblem {
    pub p: f64,
    pub mesh: Arc<crate::mesh::SimplexMesh>,
    pub constraint: Vec<bool>,
    pub zero: Vec<bool>,
}

impl CapacityProblem {
    pub fn validate(&self) -> Result<()> {
        if self.constraint.iter().zip(&self.zero).any(|(a, b)| *a && *b) {
            return Err(invalid("constraint set and zero set overlap"));
        }
        Ok(())
    }

    /// Minimizes the energy with `v = 1` on the constraint set and `v = 0` on the zero set;
    /// the value is the unregularized energy of the minimizer.
    pub fn solve(&self, settings: SolverSettings) -> Result<CapacityResult> {
        self.validate()?;
        let n = self.mesh.num_nodes;
        if !self.constraint.iter().any(|c| *c) {
            return Ok(CapacityResult::empty(n));
        }
        let dirichlet: Vec<bool> = self.constraint.iter().zip(&self.zero).map(|(a, b)| *a || *b).collect();
        let values: Vec<f64> = self.constraint.iter().map(|c| if *c { 1.0 } else { 0.0 }).collect();
        let problem = PEnergyProblem::new(self.p, self.mesh.clone(), dirichlet, values, settings)?;
        let (field, report) = solve(&problem)?;
        let exact = PEnergyProblem { epsilon: 0.0, ..problem };
        let value = crate::solver::p_energy(&exact, &field);
        Ok(CapacityResult { value, minimizer: field, report: Some(report), grid_nodes: n, sensitivity: None, flags: Vec::new() })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CylinderCapacityOptions {
    /// Nodes per unit length.
    pub resolution: usize,
    /// Top of the truncated cylinder; `None` puts it 4 units above `E`.
    pub length: Option<f64>,
    pub refinement: Option<Refinement>,
    pub mode: Option<CrossSectionMode>,
    pub check_truncation: bool,
    pub settings: SolverSettings,
}

impl Default for CylinderCapacityOptions {
    fn default() -> Self {
        Self {
            resolution: 16,
            length: None,
            refinement: Some(Refinement::default()),
            mode: None,
            check_truncation: true,
            settings: SolverSettings::default(),
        }
    }
}

fn default_mode(n: usize, e: &ObstacleSet) -> CrossSectionMode {
    if n >= 3 && e.is_axisymmetric() {
        CrossSectionMode::Axisymmetric
    } else {
        CrossSectionMode::Cartesian
    }
}

/// Grid of `B' x [t, top]` with the capacity masks for `E`.
pub fn neumann_cylinder_problem(n: usize, e: &ObstacleSet, t: f64, p: f64, top: f64, opts: &CylinderCapacityOptions) -> Result<(CylinderGrid, CapacityProblem)> {
    let mode = opts.mode.unwrap_or_else(|| default_mode(n, e));
    let res = opts.resolution.max(2);
    let cross = match mode {
        CrossSectionMode::Axisymmetric => res + 1,
        CrossSectionMode::Cartesian => 2 * res + 1,
    };
    let axial = ((top - t) * res as f64).ceil() as usize + 1;
    let spec = CylinderGridSpec {
        n,
        mode,
        z0: t,
        z1: top,
        cross_nodes: cross,
        axial_nodes: axial.max(3),
        refinement: opts.refinement,
        half_width: 1.0,
        round: true,
    };
    let grid = build_axial_grid(&spec, e, true)?;
    let zero = grid.bottom_mask();
    let constraint: Vec<bool> = (0..grid.num_nodes()).map(|i| grid.class[i] == NodeClass::Dirichlet).collect();
    let mesh = Arc::new(axial_mesh(&grid, Split::Symmetric, false));
    Ok((grid, CapacityProblem { p, mesh, constraint, zero }))
}

/// `cap_{p,G_t}(E)`: `v = 0` for `x_n <= t`, `v = 1` on nodes meeting `E`, lateral and top
/// nodes free. The truncation check re-solves with the free part stretched by 1.5.
pub fn cap_neumann_cylinder(n: usize, e: &ObstacleSet, t: f64, p: f64, opts: &CylinderCapacityOptions) -> Result<CapacityResult> {
    if !(p > 1.0) {
        return Err(invalid("p must exceed 1"));
    }
    e.validate(n)?;
    if e.is_empty() {
        return Ok(CapacityResult::empty(0));
    }
    let lowest = e.lowest_point().unwrap_or(t);
    if lowest < t - 1e-12 {
        return Err(invalid(format!("E reaches x_n = {lowest} below t = {t}")));
    }
    let top_e = e.axial_extent().max(lowest);
    let top = match opts.length {
        Some(l) => {
            if l < top_e + 2.0 {
                return Err(invalid(format!("truncation length {l} must exceed the top of E by 2")));
            }
            l
        }
        None => top_e + 4.0,
    };
    let (grid, prob) = neumann_cylinder_problem(n, e, t, p, top, opts)?;
    if prob.constraint.iter().zip(&prob.zero).any(|(a, b)| *a && *b) {
        return Err(invalid("E touches the zero level x_n = t"));
    }
    let mut result = prob.solve(opts.settings)?;
    result.grid_nodes = grid.num_nodes();
    if opts.check_truncation {
        let longer = t + 1.5 * (top - t);
        let (_, prob2) = neumann_cylinder_problem(n, e, t, p, longer, opts)?;
        let r2 = prob2.solve(opts.settings)?;
        let rel = relative_change(result.value, r2.value);
        result.sensitivity = Some(rel);
        if rel > SENSITIVITY_LIMIT {
            result.flags.push("TruncationSensitive".into());
        }
    }
    if !result.converged() {
        result.flags.push("NotConverged".into());
    }
    Ok(result)
}

fn relative_change(a: f64, b: f64) -> f64 {
    let s = a.abs().max(b.abs());
    if s == 0.0 {
        0.0
    } else {
        (a - b).abs() / s
    }
}

/// `cap_{p,w~}(K, B_R)` on a ball grid whose outer ring is `|xi| = R`; `K` is a node mask.
pub fn cap_weighted_ball(ctx: &OperatorContext, grid: &BallGrid, k_mask: &[bool], settings: SolverSettings) -> Result<CapacityResult> {
    if k_mask.len() != grid.num_nodes() {
        return Err(invalid("mask does not match the ball grid"));
    }
    let zero: Vec<bool> = grid.class.iter().map(|c| *c == BallNodeClass::Dirichlet).collect();
    if k_mask.iter().zip(&zero).any(|(a, b)| *a && *b) {
        return Err(invalid("K must stay inside the open ball"));
    }
    let mesh = Arc::new(ball_weight_mesh(ctx, grid, Split::Symmetric));
    let prob = CapacityProblem { p: ctx.p, mesh, constraint: k_mask.to_vec(), zero };
    prob.solve(settings)
}

/// Grid of the annulus `r <= |xi| <= R` (nodes on both spheres) for condenser checks.
pub fn condenser_grid(n: usize, r: f64, big_r: f64, radial_nodes: usize, angular_cells: usize) -> Result<BallGrid> {
    if !(r > 0.0 && big_r > r) {
        return Err(invalid(format!("condenser needs 0 < r < R, got r = {r}, R = {big_r}")));
    }
    BallGrid::new(n, r, big_r, radial_nodes, angular_cells, &[])
}

/// Numerical `cap_{p,w~}(B_r, B_R)` with `v = 1` on the inner sphere.
pub fn cap_condenser(ctx: &OperatorContext, r: f64, big_r: f64, radial_nodes: usize, angular_cells: usize) -> Result<CapacityResult> {
    let grid = condenser_grid(ctx.n(), r, big_r, radial_nodes, angular_cells)?;
    let mask: Vec<bool> = (0..grid.num_nodes()).map(|i| grid.grid.multi_index(i)[0] == 0).collect();
    cap_weighted_ball(ctx, &grid, &mask, SolverSettings::default())
}

/// `n omega_n (log(R/r))^{1-p}`.
pub fn condenser_radial_exact(r: f64, big_r: f64, p: f64, n: usize) -> Result<f64> {
    if !(r > 0.0 && big_r > r) {
        return Err(invalid("condenser needs 0 < r < R"));
    }
    if !(p > 1.0) || n < 1 {
        return Err(invalid("condenser needs p > 1 and n >= 1"));
    }
    Ok(n as f64 * unit_ball_volume(n) * (big_r / r).ln().powf(1.0 - p))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SobolevOptions {
    /// Nodes per unit length relative to the diameter of `K`.
    pub resolution: usize,
    /// Half-width of the box; `None` means twice the diameter of `K`.
    pub bounding_radius: Option<f64>,
    pub refinement: Option<Refinement>,
    pub check_box: bool,
    pub settings: SolverSettings,
}

impl Default for SobolevOptions {
    fn default() -> Self {
        Self { resolution: 24, bounding_radius: None, refinement: Some(Refinement::default()), check_box: true, settings: SolverSettings::default() }
    }
}

/// Bounding box of `K` as lower and upper corners in `(x', x_n)`.
fn bounding_box(n: usize, k: &ObstacleSet) -> Option<(Vec<f64>, Vec<f64>)> {
    let mut lo = vec![f64::INFINITY; n];
    let mut hi = vec![f64::NEG_INFINITY; n];
    let mut any = false;
    let mut take = |l: &[f64], h: &[f64]| {
        for i in 0..n {
            lo[i] = lo[i].min(l[i]);
            hi[i] = hi[i].max(h[i]);
        }
    };
    for p in &k.primitives {
        any = true;
        let [a, b] = p.axial_range();
        let (mut l, mut h) = (vec![-1.0; n], vec![1.0; n]);
        match p {
            Primitive::Ball { center, radius, .. } => {
                for i in 0..n - 1 {
                    l[i] = (center[i] - radius).max(-1.0);
                    h[i] = (center[i] + radius).min(1.0);
                }
            }
            Primitive::Slab { cross: CrossSection::SubBall { center, radius }, .. } => {
                for i in 0..n - 1 {
                    l[i] = (center[i] - radius).max(-1.0);
                    h[i] = (center[i] + radius).min(1.0);
                }
            }
            _ => {}
        }
        l[n - 1] = a;
        h[n - 1] = b;
        take(&l, &h);
    }
    if k.base {
        any = true;
        let mut l = vec![-1.0; n];
        let mut h = vec![1.0; n];
        l[n - 1] = 0.0;
        h[n - 1] = 0.0;
        take(&l, &h);
    }
    any.then_some((lo, hi))
}

fn sobolev_solve(n: usize, k: &ObstacleSet, p: f64, half: f64, center: &[f64], diam: f64, opts: &SobolevOptions) -> Result<CapacityResult> {
    let mode = default_mode(n, k);
    let base = diam / opts.resolution.max(2) as f64;
    let cross_nodes = match mode {
        CrossSectionMode::Axisymmetric => (half / base).ceil() as usize + 1,
        CrossSectionMode::Cartesian => (2.0 * half / base).ceil() as usize + 1,
    };
    let axial_nodes = (2.0 * half / base).ceil() as usize + 1;
    if mode == CrossSectionMode::Cartesian && center[..n - 1].iter().any(|c| *c != 0.0) {
        return Err(Error::Unsupported("Sobolev boxes are centered on the axis".into()));
    }
    let zc = center[n - 1];
    let spec = CylinderGridSpec {
        n,
        mode,
        z0: zc - half,
        z1: zc + half,
        cross_nodes: cross_nodes.max(3),
        axial_nodes: axial_nodes.max(3),
        refinement: opts.refinement,
        half_width: half,
        round: false,
    };
    let grid = build_axial_grid(&spec, k, true)?;
    let d = grid.grid.dim();
    let zero: Vec<bool> = (0..grid.num_nodes())
        .map(|i| {
            let m = grid.grid.multi_index(i);
            (0..d).any(|a| {
                let len = grid.grid.axes[a].len();
                let lower_open = mode == CrossSectionMode::Axisymmetric && a == 0;
                (m[a] == 0 && !lower_open) || m[a] == len - 1
            })
        })
        .collect();
    let constraint: Vec<bool> = (0..grid.num_nodes()).map(|i| grid.class[i] == NodeClass::Dirichlet).collect();
    if constraint.iter().zip(&zero).any(|(a, b)| *a && *b) {
        return Err(invalid("box too small for K"));
    }
    let mesh = Arc::new(axial_mesh(&grid, Split::Symmetric, true));
    let prob = CapacityProblem { p, mesh, constraint, zero };
    let mut r = prob.solve(opts.settings)?;
    r.grid_nodes = grid.num_nodes();
    Ok(r)
}

/// Bounded-box surrogate of `C_p(K) = inf int |v|^p + |grad v|^p` with `v = 0` on the
/// box boundary; the box sensitivity compares against a box enlarged by 1.5.
pub fn sobolev_cp(n: usize, k: &ObstacleSet, p: f64, opts: &SobolevOptions) -> Result<CapacityResult> {
    if !(p > 1.0) {
        return Err(invalid("p must exceed 1"));
    }
    k.validate(n)?;
    let Some((lo, hi)) = bounding_box(n, k) else {
        return Ok(CapacityResult::empty(0));
    };
    let diam = lo.iter().zip(&hi).map(|(a, b)| (b - a).powi(2)).sum::<f64>().sqrt();
    if !(diam > 0.0) {
        return Err(Error::ResolutionTooCoarse("K has zero diameter".into()));
    }
    let mut center: Vec<f64> = lo.iter().zip(&hi).map(|(a, b)| 0.5 * (a + b)).collect();
    for c in center.iter_mut().take(n - 1) {
        if c.abs() < 1e-14 {
            *c = 0.0;
        }
    }
    let half = opts.bounding_radius.unwrap_or(2.0 * diam);
    if half <= 0.5 * diam {
        return Err(invalid("bounding radius must exceed half the diameter of K"));
    }
    let mut r = sobolev_solve(n, k, p, half, &center, diam, opts)?;
    if opts.check_box {
        let r2 = sobolev_solve(n, k, p, 1.5 * half, &center, diam, opts)?;
        let rel = relative_change(r.value, r2.value);
        r.sensitivity = Some(rel);
        if rel > SENSITIVITY_LIMIT {
            r.flags.push("BoxSensitive".into());
        }
    }
    Ok(r)
}

/// Capacities of one test set at one height.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioEntry {
    pub t: f64,
    pub cap_cylinder: f64,
    pub cap_cylinder_below: f64,
    pub cap_ball: f64,
    pub c_p: f64,
    /// `cap_{p,G_t}(E) / cap_{p,w~}(E~, B_r)` with `r = e^{-kappa t}`.
    pub cylinder_over_ball: Option<f64>,
    /// `C_p(E) / cap_{p,G_{t-1}}(E)`.
    pub cp_over_cylinder: Option<f64>,
    /// `cap_{p,G_{t-1}}(E) / min(1, C_p(E))`.
    pub cylinder_over_min_cp: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioReport {
    pub entries: Vec<RatioEntry>,
    /// `max / min` of each ratio across heights; `None` when skipped.
    pub spread_cylinder_over_ball: Option<f64>,
    pub spread_cp_over_cylinder: Option<f64>,
    pub spread_cylinder_over_min_cp: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompareOptions {
    pub cylinder: CylinderCapacityOptions,
    pub sobolev: SobolevOptions,
    pub radial_nodes_per_unit: usize,
    pub angular_cells: usize,
    pub indicator_resolution: usize,
}

impl Default for CompareOptions {
    fn default() -> Self {
        Self {
            cylinder: CylinderCapacityOptions { check_truncation: false, ..Default::default() },
            sobolev: SobolevOptions { check_box: false, ..Default::default() },
            radial_nodes_per_unit: 24,
            angular_cells: 128,
            indicator_resolution: 64,
        }
    }
}

fn shift(e: &ObstacleSet, dz: f64) -> ObstacleSet {
    let primitives = e
        .primitives
        .iter()
        .map(|p| match p {
            Primitive::Ball { center, radius, clip } => {
                let mut c = center.clone();
                *c.last_mut().unwrap() += dz;
                Primitive::Ball { center: c, radius: *radius, clip: clip.map(|[a, b]| [a + dz, b + dz]) }
            }
            Primitive::Slab { cross, interval } => Primitive::Slab { cross: cross.clone(), interval: [interval[0] + dz, interval[1] + dz] },
            Primitive::Lateral { interval } => Primitive::Lateral { interval: [interval[0] + dz, interval[1] + dz] },
        })
        .collect();
    ObstacleSet { base: false, primitives }
}

fn spread(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    if v.is_empty() {
        return None;
    }
    let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Some(hi / lo)
}

fn ratio(a: f64, b: f64) -> Option<f64> {
    (b > 0.0 && a > 0.0).then(|| a / b)
}

/// Evaluates the comparison ratios for `E` placed in the band `[t, t+1]` for every `t`
/// (`template` lies in `0 <= x_n <= 1`).
pub fn compare_caps(ctx: &OperatorContext, template: &ObstacleSet, ts: &[f64], opts: &CompareOptions) -> Result<RatioReport> {
    let n = ctx.n();
    let kappa = ctx.params.kappa;
    let mut entries = Vec::new();
    for &t in ts {
        if t < 1.0 {
            return Err(invalid("comparison heights must satisfy t >= 1"));
        }
        let e = shift(&ObstacleSet { base: false, ..template.clone() }, t);
        if e.primitives.is_empty() {
            entries.push(RatioEntry {
                t,
                cap_cylinder: 0.0,
                cap_cylinder_below: 0.0,
                cap_ball: 0.0,
                c_p: 0.0,
                cylinder_over_ball: None,
                cp_over_cylinder: None,
                cylinder_over_min_cp: None,
            });
            continue;
        }
        let cyl = cap_neumann_cylinder(n, &e, t, ctx.p, &opts.cylinder)?.value;
        let below = cap_neumann_cylinder(n, &e, t - 1.0, ctx.p, &opts.cylinder)?.value;
        let cp = sobolev_cp(n, &e, ctx.p, &opts.sobolev)?.value;
        let r_out = (-kappa * t).exp();
        let r_in = (-kappa * (t + 8.0)).exp();
        let nodes = (8.0 * kappa * opts.radial_nodes_per_unit as f64).ceil() as usize + 1;
        let breaks: Vec<f64> = (1..8).map(|k| (-kappa * (t + k as f64)).exp()).collect();
        let grid = BallGrid::new(n, r_in, r_out, nodes, opts.angular_cells, &breaks)?;
        let params = TransformParams::new(n, kappa)?;
        let ind = transform_obstacle(&params, &e, &grid, opts.indicator_resolution)?;
        let ball = cap_weighted_ball(ctx, &grid, &ind.marked, SolverSettings::default())?.value;
        entries.push(RatioEntry {
            t,
            cap_cylinder: cyl,
            cap_cylinder_below: below,
            cap_ball: ball,
            c_p: cp,
            cylinder_over_ball: ratio(cyl, ball),
            cp_over_cylinder: ratio(cp, below),
            cylinder_over_min_cp: ratio(below, cp.min(1.0)),
        });
    }
    Ok(RatioReport {
        spread_cylinder_over_ball: spread(entries.iter().map(|e| e.cylinder_over_ball)),
        spread_cp_over_cylinder: spread(entries.iter().map(|e| e.cp_over_cylinder)),
        spread_cylinder_over_min_cp: spread(entries.iter().map(|e| e.cylinder_over_min_cp)),
        entries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ctx(n: usize, p: f64) -> OperatorContext {
        OperatorContext::new(TransformParams::new(n, 1.0).unwrap(), p).unwrap()
    }

    #[test]
    fn closed_form_examples() {
        let v = condenser_radial_exact(1.0, std::f64::consts::E, 2.0, 3).unwrap();
        assert!((v - 4.0 * std::f64::consts::PI).abs() < 1e-12);
        assert!(condenser_radial_exact(1.0, 3.0, 2.0, 3).unwrap() > condenser_radial_exact(1.0, 4.0, 2.0, 3).unwrap());
        assert!(condenser_radial_exact(1.0, 4.0, 40.0, 3).unwrap() < 1e-4);
        assert!(condenser_radial_exact(0.5, 0.5, 2.0, 3).is_err());
    }

    #[test]
    fn radial_condenser_matches_closed_form() {
        for (n, p) in [(2, 1.5), (3, 2.0), (3, 3.0)] {
            let c = ctx(n, p);
            let num = cap_condenser(&c, 0.25, 0.5, 129, 16).unwrap();
            let exact = condenser_radial_exact(0.25, 0.5, p, n).unwrap();
            assert!((num.value / exact - 1.0).abs() < 0.01, "n={n} p={p}: {} vs {exact}", num.value);
        }
    }

    #[test]
    fn empty_sets_have_zero_capacity() {
        let r = cap_neumann_cylinder(3, &ObstacleSet::empty(), 1.0, 2.0, &Default::default()).unwrap();
        assert_eq!(r.value, 0.0);
        let r = sobolev_cp(3, &ObstacleSet::empty(), 2.0, &Default::default()).unwrap();
        assert_eq!(r.value, 0.0);
    }

    #[test]
    fn neumann_capacity_is_monotone_and_subadditive() {
        let opts = CylinderCapacityOptions { resolution: 8, check_truncation: false, ..Default::default() };
        let b1 = Primitive::ball(vec![0.0, 0.0, 1.5], 0.2);
        let b2 = Primitive::ball(vec![0.0, 0.0, 2.5], 0.3);
        let big = Primitive::ball(vec![0.0, 0.0, 1.5], 0.3);
        let cap = |prims: Vec<Primitive>| {
            cap_neumann_cylinder(3, &ObstacleSet { base: false, primitives: prims }, 1.0, 2.0, &opts).unwrap().value
        };
        let (c1, c2, c12, cbig) = (cap(vec![b1.clone()]), cap(vec![b2.clone()]), cap(vec![b1.clone(), b2]), cap(vec![b1, big]));
        assert!(c1 > 0.0 && c1 <= cbig + 1e-9, "{c1} {cbig}");
        assert!(c12 <= c1 + c2 + 1e-9 && c12 >= c1.max(c2) - 1e-9);
    }

    #[test]
    fn truncation_check_passes_for_default_length() {
        let e = ObstacleSet { base: false, primitives: vec![Primitive::ball(vec![0.0, 0.0, 2.5], 0.25)] };
        let opts = CylinderCapacityOptions { resolution: 8, ..Default::default() };
        let r = cap_neumann_cylinder(3, &e, 2.0, 2.0, &opts).unwrap();
        assert!(r.sensitivity.unwrap() < SENSITIVITY_LIMIT, "{:?}", r.sensitivity);
        assert!(r.flags.is_empty());
        assert!(cap_neumann_cylinder(3, &e, 2.5, 2.0, &opts).is_err());
    }

    #[test]
    fn sobolev_capacity_scales_like_a_power() {
        let ball = |r: f64| ObstacleSet { base: false, primitives: vec![Primitive::ball(vec![0.0, 0.0, 5.0], r)] };
        let opts = SobolevOptions { resolution: 16, check_box: false, ..Default::default() };
        let a = sobolev_cp(3, &ball(0.02), 2.0, &opts).unwrap().value;
        let b = sobolev_cp(3, &ball(0.01), 2.0, &opts).unwrap().value;
        assert!((a / b / 2.0 - 1.0).abs() < 0.1, "{}", a / b);
    }

    #[test]
    fn single_node_capacity_vanishes_under_refinement() {
        let c = ctx(2, 1.5);
        let mut last = f64::INFINITY;
        for (nr, na) in [(17, 16), (33, 32), (65, 64)] {
            let g = BallGrid::new(2, 0.05, 1.0, nr, na, &[]).unwrap();
            let target = g.grid.index(&[nr / 2, 0]);
            let mut mask = vec![false; g.num_nodes()];
            mask[target] = true;
            let v = cap_weighted_ball(&c, &g, &mask, SolverSettings::default()).unwrap().value;
            assert!(v < last, "{v} {last}");
            last = v;
        }
    }
}
