//! Discrete p-energy minimization for both formulations.
//!
//! The energy of a nodal field `u` on a [`SimplexMesh`] is
//! `sum_s w_s (|B_s u|^2 + eps^2)^{p/2} + m_s (mean_s(u)^2 + eps^2)^{p/2}`.
//! It is minimized over the free nodes by a damped Newton method whose linear systems are
//! solved with a sparse Cholesky factorization.

use std::io::Write;
use std::sync::Arc;
use std::time::Instant;

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::{Llt, SymbolicLlt};
use faer::sparse::{SparseColMatRef, SymbolicSparseColMatRef};
use faer::{Mat, Side};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::{BallGrid, BallIndicator, CrossSectionMode, CylinderGrid, NodeClass};
use crate::mesh::{build_mesh, CellMetric, SimplexMesh, Split};
use crate::operator::{operator_metric, sphere_area, OperatorContext};
use crate::transform::{forward_map, inverse_map, reflect, BallPoint, CylPoint, TransformParams};

const CHUNK: usize = 2048;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverSettings {
    /// Relative gradient norm at which the solve counts as converged.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Regularization; `None` means `1e-8` times the data scale.
    pub epsilon: Option<f64>,
    /// Start non-quadratic solves from the `p = 2` minimizer.
    pub warm_start: bool,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self { tolerance: 1e-8, max_iterations: 100_000, epsilon: None, warm_start: true }
    }
}

/// Nodal values on a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteField {
    pub values: Vec<f64>,
}

impl DiscreteField {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn constant(len: usize, c: f64) -> Self {
        Self { values: vec![c; len] }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn max_abs_diff(&self, other: &DiscreteField) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub energy: f64,
    pub iterations: usize,
    /// Relative gradient norm: the smaller of the Euclidean norm relative to the gradient of
    /// the data extended by zero, and the Hessian dual norm relative to the energy of that
    /// extension.
    pub grad_norm: f64,
    pub grad_norm_abs: f64,
    /// Last Newton decrement `g . H^{-1} g`.
    pub newton_decrement: f64,
    pub wall_time_s: f64,
    pub converged: bool,
    pub hit_max_iterations: bool,
    pub free_nodes: usize,
    pub energy_history: Vec<f64>,
}

impl SolveReport {
    pub fn ensure_converged(&self) -> Result<()> {
        if self.converged {
            Ok(())
        } else {
            Err(Error::NotConverged { iterations: self.iterations, grad_norm: self.grad_norm })
        }
    }
}

/// A constrained p-energy minimization.
#[derive(Debug, Clone)]
pub struct PEnergyProblem {
    pub p: f64,
    pub mesh: Arc<SimplexMesh>,
    pub dirichlet: Vec<bool>,
    /// Constraint values on Dirichlet nodes, initial guess elsewhere.
    pub values: Vec<f64>,
    pub epsilon: f64,
    pub settings: SolverSettings,
}

impl PEnergyProblem {
    pub fn new(p: f64, mesh: Arc<SimplexMesh>, dirichlet: Vec<bool>, values: Vec<f64>, settings: SolverSettings) -> Result<Self> {
        if !(p > 1.0 && p.is_finite()) {
            return Err(invalid(format!("p must satisfy 1 < p < inf, got {p}")));
        }
        let n = mesh.num_nodes;
        if dirichlet.len() != n || values.len() != n {
            return Err(invalid("mask and value lengths must match the node count"));
        }
        if values.iter().zip(&dirichlet).any(|(v, d)| *d && !v.is_finite()) {
            return Err(invalid("Dirichlet data must be finite"));
        }
        let scale = values
            .iter()
            .zip(&dirichlet)
            .filter(|(_, d)| **d)
            .map(|(v, _)| v.abs())
            .fold(0.0, f64::max);
        let epsilon = settings.epsilon.unwrap_or(1e-8 * if scale > 0.0 { scale } else { 1.0 });
        if !(epsilon >= 0.0) {
            return Err(invalid("epsilon must be nonnegative"));
        }
        Ok(Self { p, mesh, dirichlet, values, epsilon, settings })
    }

    /// Nodes solved for: not Dirichlet and touched by at least one simplex.
    pub fn free_mask(&self) -> Vec<bool> {
        let used = self.mesh.used_nodes();
        self.dirichlet.iter().zip(&used).map(|(d, u)| !d && *u).collect()
    }

    pub fn with_initial(&self, init: &[f64]) -> Self {
        let mut out = self.clone();
        for i in 0..init.len() {
            if !out.dirichlet[i] {
                out.values[i] = init[i];
            }
        }
        out
    }
}

struct Kernel<'a> {
    mesh: &'a SimplexMesh,
    p: f64,
    eps2: f64,
}

impl<'a> Kernel<'a> {
    fn new(problem: &'a PEnergyProblem, p: f64) -> Self {
        Self { mesh: &problem.mesh, p, eps2: problem.epsilon * problem.epsilon }
    }

    #[inline]
    fn cell_gradient(&self, s: usize, u: &[f64], g: &mut [f64]) -> f64 {
        let m = self.mesh;
        let nv = m.nverts();
        let verts = &m.verts[s * nv..(s + 1) * nv];
        let b = &m.bmat[s * m.rows * nv..(s + 1) * m.rows * nv];
        let mut sq = 0.0;
        for r in 0..m.rows {
            let mut acc = 0.0;
            for j in 0..nv {
                acc += b[r * nv + j] * u[verts[j] as usize];
            }
            g[r] = acc;
            sq += acc * acc;
        }
        sq
    }

    #[inline]
    fn cell_mean(&self, s: usize, u: &[f64]) -> f64 {
        let nv = self.mesh.nverts();
        self.mesh.verts[s * nv..(s + 1) * nv].iter().map(|&v| u[v as usize]).sum::<f64>() / nv as f64
    }

    fn energy(&self, u: &[f64]) -> f64 {
        let m = self.mesh;
        let half = 0.5 * self.p;
        let partial: Vec<f64> = (0..m.num_simplices())
            .collect::<Vec<_>>()
            .par_chunks(CHUNK)
            .map(|chunk| {
                let mut g = vec![0.0; m.rows];
                let mut acc = 0.0;
                for &s in chunk {
                    let sq = self.cell_gradient(s, u, &mut g);
                    acc += m.weight[s] * (sq + self.eps2).powf(half);
                    if m.has_mass() && m.mass[s] != 0.0 {
                        let mu = self.cell_mean(s, u);
                        acc += m.mass[s] * (mu * mu + self.eps2).powf(half);
                    }
                }
                acc
            })
            .collect();
        partial.iter().sum()
    }

    /// Local gradient contributions per incidence slot.
    fn local_gradients(&self, u: &[f64]) -> Vec<f64> {
        let m = self.mesh;
        let nv = m.nverts();
        let p = self.p;
        let mut out = vec![0.0; m.num_simplices() * nv];
        out.par_chunks_mut(CHUNK * nv).enumerate().for_each(|(c, chunk)| {
            let mut g = vec![0.0; m.rows];
            for (k, loc) in chunk.chunks_mut(nv).enumerate() {
                let s = c * CHUNK + k;
                let sq = self.cell_gradient(s, u, &mut g);
                let a = m.weight[s] * p * (sq + self.eps2).powf(0.5 * p - 1.0);
                let b = &m.bmat[s * m.rows * nv..(s + 1) * m.rows * nv];
                for j in 0..nv {
                    let mut acc = 0.0;
                    for r in 0..m.rows {
                        acc += b[r * nv + j] * g[r];
                    }
                    loc[j] = a * acc;
                }
                if m.has_mass() && m.mass[s] != 0.0 {
                    let mu = self.cell_mean(s, u);
                    let c0 = m.mass[s] * p * (mu * mu + self.eps2).powf(0.5 * p - 1.0) * mu / nv as f64;
                    for v in loc.iter_mut() {
                        *v += c0;
                    }
                }
            }
        });
        out
    }

    fn gradient(&self, u: &[f64], free: &[bool]) -> Vec<f64> {
        let m = self.mesh;
        let loc = self.local_gradients(u);
        let mut out = vec![0.0; m.num_nodes];
        out.par_iter_mut().enumerate().for_each(|(i, o)| {
            if free[i] {
                *o = m.inc_slot[m.inc_ptr[i]..m.inc_ptr[i + 1]].iter().map(|&sl| loc[sl]).sum();
            }
        });
        out
    }

    /// Local Hessian blocks, upper triangle of each `nv x nv` block in row order.
    fn local_hessians(&self, u: &[f64]) -> Vec<f64> {
        let m = self.mesh;
        let nv = m.nverts();
        let np = nv * (nv + 1) / 2;
        let p = self.p;
        let mut out = vec![0.0; m.num_simplices() * np];
        out.par_chunks_mut(CHUNK * np).enumerate().for_each(|(c, chunk)| {
            let mut g = vec![0.0; m.rows];
            let mut bg = vec![0.0; nv];
            for (k, loc) in chunk.chunks_mut(np).enumerate() {
                let s = c * CHUNK + k;
                let sq = self.cell_gradient(s, u, &mut g) + self.eps2;
                let a = m.weight[s] * p * sq.powf(0.5 * p - 1.0);
                let cc = m.weight[s] * p * (p - 2.0) * sq.powf(0.5 * p - 2.0);
                let b = &m.bmat[s * m.rows * nv..(s + 1) * m.rows * nv];
                for j in 0..nv {
                    bg[j] = (0..m.rows).map(|r| b[r * nv + j] * g[r]).sum();
                }
                let (mut mass_c, mut slot) = (0.0, 0);
                if m.has_mass() && m.mass[s] != 0.0 {
                    let mu = self.cell_mean(s, u);
                    let t = mu * mu + self.eps2;
                    mass_c = m.mass[s] * p * (t.powf(0.5 * p - 1.0) + (p - 2.0) * mu * mu * t.powf(0.5 * p - 2.0))
                        / (nv * nv) as f64;
                }
                for i in 0..nv {
                    for j in i..nv {
                        let btb: f64 = (0..m.rows).map(|r| b[r * nv + i] * b[r * nv + j]).sum();
                        loc[slot] = a * btb + cc * bg[i] * bg[j] + mass_c;
                        slot += 1;
                    }
                }
            }
        });
        out
    }
}

/// Lower-triangular CSC pattern of the Hessian restricted to free nodes.
struct HessianPattern {
    dof: Vec<u32>,
    num_free: usize,
    col_ptr: Vec<u32>,
    row_idx: Vec<u32>,
    /// Value slot for every local upper-triangle pair, `u32::MAX` when a node is fixed.
    slots: Vec<u32>,
}

impl HessianPattern {
    fn new(mesh: &SimplexMesh, free: &[bool]) -> Self {
        let nv = mesh.nverts();
        let mut dof = vec![u32::MAX; mesh.num_nodes];
        let mut num_free = 0usize;
        for (i, f) in free.iter().enumerate() {
            if *f {
                dof[i] = num_free as u32;
                num_free += 1;
            }
        }
        let mut cols: Vec<Vec<u32>> = vec![Vec::new(); num_free];
        for s in 0..mesh.num_simplices() {
            let vs = &mesh.verts[s * nv..(s + 1) * nv];
            for i in 0..nv {
                for j in i..nv {
                    let (a, b) = (dof[vs[i] as usize], dof[vs[j] as usize]);
                    if a == u32::MAX || b == u32::MAX {
                        continue;
                    }
                    cols[a.min(b) as usize].push(a.max(b));
                }
            }
        }
        let mut col_ptr = Vec::with_capacity(num_free + 1);
        let mut row_idx = Vec::new();
        col_ptr.push(0u32);
        for (c, rows) in cols.iter_mut().enumerate() {
            rows.push(c as u32);
            rows.sort_unstable();
            rows.dedup();
            row_idx.extend_from_slice(rows);
            col_ptr.push(row_idx.len() as u32);
        }
        let np = nv * (nv + 1) / 2;
        let mut slots = vec![u32::MAX; mesh.num_simplices() * np];
        for s in 0..mesh.num_simplices() {
            let vs = &mesh.verts[s * nv..(s + 1) * nv];
            let mut k = 0;
            for i in 0..nv {
                for j in i..nv {
                    let (a, b) = (dof[vs[i] as usize], dof[vs[j] as usize]);
                    if a != u32::MAX && b != u32::MAX {
                        let (c, r) = (a.min(b) as usize, a.max(b));
                        let lo = col_ptr[c] as usize;
                        let hi = col_ptr[c + 1] as usize;
                        let pos = row_idx[lo..hi].binary_search(&r).expect("pattern contains every pair");
                        slots[s * np + k] = (lo + pos) as u32;
                    }
                    k += 1;
                }
            }
        }
        Self { dof, num_free, col_ptr, row_idx, slots }
    }

    fn symbolic(&self) -> SymbolicSparseColMatRef<'_, u32> {
        SymbolicSparseColMatRef::new_checked(self.num_free, self.num_free, &self.col_ptr, None, &self.row_idx)
    }

    fn assemble(&self, local: &[f64], np: usize) -> Vec<f64> {
        let mut vals = vec![0.0; self.row_idx.len()];
        for (s, block) in local.chunks(np).enumerate() {
            let sl = &self.slots[s * np..(s + 1) * np];
            for (k, &v) in sl.iter().enumerate() {
                if v != u32::MAX {
                    vals[v as usize] += block[k];
                }
            }
        }
        vals
    }
}

struct Factorizer {
    pattern: HessianPattern,
    symbolic: SymbolicLlt<u32>,
}

impl Factorizer {
    fn new(mesh: &SimplexMesh, free: &[bool]) -> Result<Self> {
        let pattern = HessianPattern::new(mesh, free);
        let symbolic = SymbolicLlt::try_new(pattern.symbolic(), Side::Lower)
            .map_err(|e| Error::Unsupported(format!("symbolic factorization failed: {e:?}")))?;
        Ok(Self { pattern, symbolic })
    }

    /// Solves `H d = rhs` on the free dofs; retries with a growing diagonal shift when the
    /// factorization breaks down.
    fn solve(&self, vals: &mut [f64], rhs: &[f64]) -> Result<Vec<f64>> {
        let diag: Vec<usize> = (0..self.pattern.num_free).map(|c| self.pattern.col_ptr[c] as usize).collect();
        let base: Vec<f64> = diag.iter().map(|&k| vals[k]).collect();
        let mut shift = 0.0;
        for _ in 0..12 {
            for (k, &d) in diag.iter().enumerate() {
                vals[d] = base[k] * (1.0 + shift) + if shift > 0.0 { 1e-300 } else { 0.0 };
            }
            let mat = SparseColMatRef::new(self.pattern.symbolic(), vals);
            if let Ok(llt) = Llt::try_new_with_symbolic(self.symbolic.clone(), mat, Side::Lower) {
                let mut x = Mat::<f64>::from_fn(rhs.len(), 1, |i, _| rhs[i]);
                llt.solve_in_place(x.as_mut());
                let out: Vec<f64> = (0..rhs.len()).map(|i| x[(i, 0)]).collect();
                if out.iter().all(|v| v.is_finite()) {
                    return Ok(out);
                }
            }
            shift = if shift == 0.0 { 1e-12 } else { shift * 100.0 };
        }
        Err(Error::Unsupported("Hessian factorization failed".into()))
    }
}

pub fn p_energy(problem: &PEnergyProblem, field: &DiscreteField) -> f64 {
    Kernel::new(problem, problem.p).energy(&field.values)
}

/// First variation; zero on Dirichlet and unused nodes.
pub fn p_energy_gradient(problem: &PEnergyProblem, field: &DiscreteField) -> DiscreteField {
    let free = problem.free_mask();
    DiscreteField::new(Kernel::new(problem, problem.p).gradient(&field.values, &free))
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, Copy)]
struct Scales {
    grad: f64,
    energy: f64,
}

fn newton(
    problem: &PEnergyProblem,
    p: f64,
    fact: &Factorizer,
    free: &[bool],
    mut u: Vec<f64>,
    scale: Scales,
    max_iter: usize,
) -> Result<(Vec<f64>, SolveReport)> {
    let kernel = Kernel::new(problem, p);
    let mesh = &*problem.mesh;
    let nv = mesh.nverts();
    let np = nv * (nv + 1) / 2;
    let pat = &fact.pattern;
    let mut energy = kernel.energy(&u);
    let mut history = vec![energy];
    let mut grad = kernel.gradient(&u, free);
    let mut gnorm = l2(&grad);
    let tol = problem.settings.tolerance;
    let mut iterations = 0;
    let mut decrement = f64::INFINITY;
    let mut dual_ok = false;
    while gnorm > tol * scale.grad && iterations < max_iter {
        let local = kernel.local_hessians(&u);
        let mut vals = pat.assemble(&local, np);
        let mut rhs = vec![0.0; pat.num_free];
        for (i, &d) in pat.dof.iter().enumerate() {
            if d != u32::MAX {
                rhs[d as usize] = -grad[i];
            }
        }
        let dir = fact.solve(&mut vals, &rhs)?;
        let slope: f64 = rhs.iter().zip(&dir).map(|(r, d)| -r * d).sum();
        iterations += 1;
        if !(slope < 0.0) {
            break;
        }
        decrement = -slope;
        dual_ok = decrement <= tol * tol * scale.energy;
        let trial = |alpha: f64| {
            let mut v = u.clone();
            for (i, &d) in pat.dof.iter().enumerate() {
                if d != u32::MAX {
                    v[i] += alpha * dir[d as usize];
                }
            }
            v
        };
        let noise = 1e-13 * energy.abs().max(1e-300);
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let v = trial(alpha);
            let e = kernel.energy(&v);
            if e <= energy + 1e-4 * alpha * slope {
                accepted = Some((v, e, None));
                break;
            }
            if -slope * alpha < noise {
                // Decrease below rounding: accept the step if it still reduces the gradient.
                let g = kernel.gradient(&v, free);
                if l2(&g) < gnorm && e <= energy + noise {
                    accepted = Some((v, e, Some(g)));
                }
                break;
            }
            alpha *= 0.5;
        }
        let Some((v, e, g)) = accepted else { break };
        u = v;
        energy = e;
        history.push(energy);
        grad = g.unwrap_or_else(|| kernel.gradient(&u, free));
        gnorm = l2(&grad);
        if dual_ok {
            break;
        }
    }
    let euclid = gnorm / scale.grad;
    let dual = (decrement / scale.energy).sqrt();
    let grad_norm = if dual_ok { euclid.min(dual) } else { euclid };
    let converged = grad_norm <= tol;
    let report = SolveReport {
        energy,
        iterations,
        grad_norm,
        grad_norm_abs: gnorm,
        newton_decrement: if decrement.is_finite() { decrement } else { 0.0 },
        wall_time_s: 0.0,
        converged,
        hit_max_iterations: !converged && iterations >= max_iter,
        free_nodes: pat.num_free,
        energy_history: history,
    };
    Ok((u, report))
}

/// Minimizes the energy with Dirichlet values fixed. Non-convergence is reported through
/// `converged = false` together with the best iterate.
pub fn solve(problem: &PEnergyProblem) -> Result<(DiscreteField, SolveReport)> {
    let start = Instant::now();
    let free = problem.free_mask();
    let mut u = problem.values.clone();
    let num_free = free.iter().filter(|f| **f).count();
    if num_free == 0 {
        let energy = p_energy(problem, &DiscreteField::new(u.clone()));
        let report = SolveReport {
            energy,
            iterations: 0,
            grad_norm: 0.0,
            grad_norm_abs: 0.0,
            newton_decrement: 0.0,
            wall_time_s: start.elapsed().as_secs_f64(),
            converged: true,
            hit_max_iterations: false,
            free_nodes: 0,
            energy_history: vec![energy],
        };
        return Ok((DiscreteField::new(u), report));
    }
    let fact = Factorizer::new(&problem.mesh, &free)?;
    let kernel = Kernel::new(problem, problem.p);
    let mut zero_ext = u.clone();
    for (i, f) in free.iter().enumerate() {
        if *f {
            zero_ext[i] = 0.0;
        }
    }
    let mut grad = l2(&kernel.gradient(&zero_ext, &free));
    if grad == 0.0 {
        grad = l2(&kernel.gradient(&u, &free));
    }
    if grad == 0.0 {
        grad = 1.0;
    }
    let mut energy = kernel.energy(&zero_ext);
    if !(energy > 0.0) {
        energy = 1.0;
    }
    let scale = Scales { grad, energy };
    let max_iter = problem.settings.max_iterations;
    if problem.settings.warm_start && problem.p != 2.0 {
        let (w, _) = newton(problem, 2.0, &fact, &free, u.clone(), scale, 1)?;
        let ew = kernel.energy(&w);
        if ew < kernel.energy(&u) {
            u = w;
        }
    }
    let (u, mut report) = newton(problem, problem.p, &fact, &free, u, scale, max_iter)?;
    report.wall_time_s = start.elapsed().as_secs_f64();
    Ok((DiscreteField::new(u), report))
}

/// Nodes where `u1 > u2 + tolerance`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub tolerance: f64,
    pub violations: Vec<usize>,
    pub max_excess: f64,
}

impl ComparisonReport {
    pub fn ordered(&self) -> bool {
        self.violations.is_empty()
    }
}

pub fn comparison_check(u1: &DiscreteField, u2: &DiscreteField, tolerance: f64) -> Result<ComparisonReport> {
    if u1.len() != u2.len() {
        return Err(invalid("fields live on different grids"));
    }
    let mut violations = Vec::new();
    let mut max_excess = f64::NEG_INFINITY;
    for (i, (a, b)) in u1.values.iter().zip(&u2.values).enumerate() {
        let ex = a - b;
        max_excess = max_excess.max(ex);
        if ex > tolerance {
            violations.push(i);
        }
    }
    Ok(ComparisonReport { tolerance, violations, max_excess })
}

/// Cylinder mesh: Euclidean gradient in `(x', x_n)` or in the meridian `(rho, x_n)` with
/// the rotational density.
pub fn cylinder_mesh(grid: &CylinderGrid, split: Split) -> SimplexMesh {
    axial_mesh(grid, split, false)
}

/// As [`cylinder_mesh`], optionally with the zeroth-order `|u|^p` term of unit density.
pub fn axial_mesh(grid: &CylinderGrid, split: Split, with_mass: bool) -> SimplexMesh {
    let active = grid.active();
    let d = grid.grid.dim();
    let metric = |d: usize, density: f64| {
        let mut m = crate::mesh::flat_metric(d, density);
        if with_mass {
            m.mass = density;
        }
        m
    };
    match grid.mode() {
        CrossSectionMode::Cartesian => build_mesh(&grid.grid, &active, split, d, |_| metric(d, 1.0)),
        CrossSectionMode::Axisymmetric => {
            let n = grid.n();
            let s = sphere_area(n - 2);
            build_mesh(&grid.grid, &active, split, 2, move |c| metric(2, s * c[0].powi(n as i32 - 2)))
        }
    }
}

/// Inverse transpose of the chart differential `(r, theta) -> r (sin theta, cos theta)`.
fn polar_inverse_transpose(r: f64, th: f64) -> [f64; 4] {
    let (s, c) = th.sin_cos();
    [s, c / r, c, -s / r]
}

/// Ball mesh for the transformed operator: energy density `|dT* grad u|^p / |J|`.
pub fn ball_operator_mesh(ctx: &OperatorContext, grid: &BallGrid, split: Split) -> SimplexMesh {
    let n = grid.n;
    let active = vec![true; grid.num_nodes()];
    build_mesh(&grid.grid, &active, split, n, |c| {
        let (r, th) = (c[0], c[1]);
        let xi = meridian_point(n, r, th);
        let metric = match operator_metric(ctx, &xi) {
            Ok(Some(m)) => m,
            _ => return CellMetric { m: vec![0.0; 2 * n], density: 0.0, mass: 0.0 },
        };
        let dinv = polar_inverse_transpose(r, th);
        let mut m = vec![0.0; n * 2];
        for row in 0..n {
            let a0 = metric.adjoint[(row, 0)];
            let a1 = metric.adjoint[(row, n - 1)];
            m[row * 2] = a0 * dinv[0] + a1 * dinv[2];
            m[row * 2 + 1] = a0 * dinv[1] + a1 * dinv[3];
        }
        CellMetric { m, density: metric.inv_jacobian * grid.volume_factor(r, th), mass: 0.0 }
    })
}

/// Ball mesh for the weighted energy `|grad u|^p w~`.
pub fn ball_weight_mesh(ctx: &OperatorContext, grid: &BallGrid, split: Split) -> SimplexMesh {
    let active = vec![true; grid.num_nodes()];
    let expo = ctx.p - ctx.n() as f64;
    build_mesh(&grid.grid, &active, split, 2, |c| {
        let (r, th) = (c[0], c[1]);
        let d = polar_inverse_transpose(r, th);
        CellMetric { m: d.to_vec(), density: r.powf(expo) * grid.volume_factor(r, th), mass: 0.0 }
    })
}

fn meridian_point(n: usize, r: f64, th: f64) -> BallPoint {
    let mut xi = vec![0.0; n];
    xi[0] = r * th.sin();
    xi[n - 1] = r * th.cos();
    BallPoint::new(xi)
}

#[derive(Debug, Clone)]
pub struct CylinderSolution {
    pub grid: CylinderGrid,
    pub field: DiscreteField,
    pub report: SolveReport,
}

impl CylinderSolution {
    pub fn evaluate(&self, x: &CylPoint) -> Option<f64> {
        self.grid.interpolate(&self.field.values, x)
    }
}

#[derive(Debug, Clone)]
pub struct BallSolution {
    pub grid: BallGrid,
    pub field: DiscreteField,
    pub report: SolveReport,
}

impl BallSolution {
    pub fn evaluate(&self, xi: &BallPoint) -> Option<f64> {
        self.grid.interpolate(&self.field.values, xi)
    }
}

/// Mixed problem on a classified cylinder grid: `u = f` on Dirichlet nodes, lateral and
/// far-end nodes free.
pub fn solve_cylinder_mixed<D>(grid: CylinderGrid, data: D, p: f64, settings: SolverSettings) -> Result<CylinderSolution>
where
    D: Fn(&CylPoint) -> f64,
{
    let mesh = Arc::new(cylinder_mesh(&grid, Split::Symmetric));
    let n = grid.num_nodes();
    let dirichlet: Vec<bool> = grid.class.iter().map(|c| *c == NodeClass::Dirichlet).collect();
    let values: Vec<f64> = (0..n).map(|i| if dirichlet[i] { data(&grid.point(i)) } else { 0.0 }).collect();
    let problem = PEnergyProblem::new(p, mesh, dirichlet, values, settings)?;
    let (field, report) = solve(&problem)?;
    Ok(CylinderSolution { grid, field, report })
}

/// Weighted Dirichlet problem on the ball: `u = f~` on marked nodes; the innermost ring
/// and every other node are free.
pub fn solve_ball_dirichlet<D>(
    ctx: &OperatorContext,
    grid: BallGrid,
    indicator: &BallIndicator,
    data: D,
    settings: SolverSettings,
) -> Result<BallSolution>
where
    D: Fn(&BallPoint) -> f64,
{
    if indicator.marked.len() != grid.num_nodes() {
        return Err(invalid("indicator does not match the ball grid"));
    }
    let mesh = Arc::new(ball_operator_mesh(ctx, &grid, Split::Symmetric));
    let n = grid.num_nodes();
    let values: Vec<f64> = (0..n).map(|i| if indicator.marked[i] { data(&grid.point(i)) } else { 0.0 }).collect();
    let problem = PEnergyProblem::new(ctx.p, mesh, indicator.marked.clone(), values, settings)?;
    let (field, report) = solve(&problem)?;
    Ok(BallSolution { grid, field, report })
}

/// `f~(xi) = f(T^{-1}(xi))` in the upper half, extended evenly by the reflection.
pub fn transformed_data<'a, D>(params: &'a TransformParams, f: D) -> impl Fn(&BallPoint) -> f64 + 'a
where
    D: Fn(&CylPoint) -> f64 + 'a,
{
    move |xi: &BallPoint| {
        let up = if xi.last() >= 0.0 { xi.clone() } else { reflect(xi) };
        match inverse_map(params, &up) {
            Ok(x) => f(&x),
            Err(_) => f64::NAN,
        }
    }
}

/// Largest `|u~(T x) - u(x)|` over cylinder nodes with `x_n` in `[lo, hi]`.
pub fn transform_discrepancy(params: &TransformParams, cyl: &CylinderSolution, ball: &BallSolution, lo: f64, hi: f64) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..cyl.grid.num_nodes() {
        if cyl.grid.class[i] == NodeClass::Discarded {
            continue;
        }
        let x = cyl.grid.point(i);
        if x.x_n < lo || x.x_n > hi {
            continue;
        }
        if let Some(v) = ball.evaluate(&forward_map(params, &x)) {
            worst = worst.max((v - cyl.field.values[i]).abs());
        }
    }
    worst
}

/// Mean and oscillation of a ball solution over the nodes with `|xi| <= shell_radius`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LimitEstimate {
    pub mean: f64,
    pub oscillation: f64,
    pub nodes: usize,
}

pub fn limit_at_infinity(solution: &BallSolution, shell_radius: f64) -> Result<LimitEstimate> {
    if !(shell_radius > 0.0) {
        return Err(invalid("shell radius must be positive"));
    }
    let (mut lo, mut hi, mut sum, mut count) = (f64::INFINITY, f64::NEG_INFINITY, 0.0, 0usize);
    for i in 0..solution.grid.num_nodes() {
        if solution.grid.grid.coords(i)[0] <= shell_radius {
            let v = solution.field.values[i];
            lo = lo.min(v);
            hi = hi.max(v);
            sum += v;
            count += 1;
        }
    }
    if count == 0 {
        return Err(invalid(format!("no grid node within radius {shell_radius:e}")));
    }
    Ok(LimitEstimate { mean: sum / count as f64, oscillation: hi - lo, nodes: count })
}

/// CSV with physical node coordinates followed by the value.
pub fn write_csv<W: Write>(mut w: W, header: &[&str], points: &[Vec<f64>], values: &[f64]) -> Result<()> {
    writeln!(w, "{},value", header.join(","))?;
    for (pt, v) in points.iter().zip(values) {
        let coords: Vec<String> = pt.iter().map(|c| format!("{c:.12e}")).collect();
        writeln!(w, "{},{:.12e}", coords.join(","), v)?;
    }
    Ok(())
}

/// Legacy VTK structured grid; `points` in tensor order, padded to three coordinates.
pub fn write_vtk<W: Write>(mut w: W, shape: &[usize], points: &[Vec<f64>], values: &[f64], name: &str) -> Result<()> {
    let mut dims = shape.to_vec();
    dims.resize(3, 1);
    writeln!(w, "# vtk DataFile Version 3.0")?;
    writeln!(w, "{name}")?;
    writeln!(w, "ASCII")?;
    writeln!(w, "DATASET STRUCTURED_GRID")?;
    writeln!(w, "DIMENSIONS {} {} {}", dims[0], dims[1], dims[2])?;
    writeln!(w, "POINTS {} double", points.len())?;
    for pt in points {
        let mut c = pt.clone();
        c.resize(3, 0.0);
        writeln!(w, "{:.12e} {:.12e} {:.12e}", c[0], c[1], c[2])?;
    }
    writeln!(w, "POINT_DATA {}", values.len())?;
    writeln!(w, "SCALARS {name} double 1")?;
    writeln!(w, "LOOKUP_TABLE default")?;
    for v in values {
        writeln!(w, "{:.12e}", if v.is_finite() { *v } else { 0.0 })?;
    }
    Ok(())
}
