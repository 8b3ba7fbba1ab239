//! Tensor-product grids in computational coordinates and their splitting into simplices.
//!
//! Every discretization in the crate (cylinder in Cartesian or axisymmetric form, the ball in
//! polar or meridian form) is a tensor grid whose cells are split into simplices. Each
//! simplex stores the matrix `B` mapping its vertex values to the physical gradient row
//! vector used by the energy density, so the energy kernel never needs to know which chart
//! produced it.

use serde::{Deserialize, Serialize};

/// One coordinate axis of a tensor grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub coords: Vec<f64>,
    /// Period of a wrapped axis; `coords` then covers `[coords[0], coords[0] + period)`.
    pub period: Option<f64>,
}

impl Axis {
    pub fn from_coords(coords: Vec<f64>) -> Self {
        debug_assert!(coords.windows(2).all(|w| w[1] > w[0]));
        Self { coords, period: None }
    }

    pub fn uniform(lo: f64, hi: f64, nodes: usize) -> Self {
        assert!(nodes >= 2);
        let h = (hi - lo) / (nodes - 1) as f64;
        let mut coords: Vec<f64> = (0..nodes).map(|i| lo + h * i as f64).collect();
        coords[nodes - 1] = hi;
        Self { coords, period: None }
    }

    pub fn periodic(lo: f64, period: f64, nodes: usize) -> Self {
        let h = period / nodes as f64;
        Self { coords: (0..nodes).map(|i| lo + h * i as f64).collect(), period: Some(period) }
    }

    /// Nodes `lo * ratio^k` spaced uniformly in `log`, ending exactly at `hi`.
    pub fn geometric(lo: f64, hi: f64, nodes: usize) -> Self {
        assert!(lo > 0.0 && hi > lo && nodes >= 2);
        let (a, b) = (lo.ln(), hi.ln());
        let h = (b - a) / (nodes - 1) as f64;
        let mut coords: Vec<f64> = (0..nodes).map(|i| (a + h * i as f64).exp()).collect();
        coords[0] = lo;
        coords[nodes - 1] = hi;
        Self { coords, period: None }
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn num_cells(&self) -> usize {
        match self.period {
            Some(_) => self.coords.len(),
            None => self.coords.len().saturating_sub(1),
        }
    }

    /// Unwrapped `(lo, hi)` of cell `i`.
    pub fn cell(&self, i: usize) -> (f64, f64) {
        let lo = self.coords[i];
        let hi = if i + 1 < self.coords.len() {
            self.coords[i + 1]
        } else {
            self.coords[0] + self.period.expect("cell index past end of open axis")
        };
        (lo, hi)
    }

    pub fn next_index(&self, i: usize) -> usize {
        if i + 1 < self.coords.len() {
            i + 1
        } else {
            0
        }
    }

    /// Dual cell of node `i` (half a spacing on each side, clipped at open ends).
    pub fn dual_cell(&self, i: usize) -> (f64, f64) {
        let n = self.coords.len();
        let x = self.coords[i];
        let left = if i > 0 {
            0.5 * (self.coords[i - 1] + x)
        } else if let Some(per) = self.period {
            0.5 * (self.coords[n - 1] - per + x)
        } else {
            x
        };
        let right = if i + 1 < n {
            0.5 * (x + self.coords[i + 1])
        } else if let Some(per) = self.period {
            0.5 * (x + self.coords[0] + per)
        } else {
            x
        };
        (left, right)
    }

    /// Largest spacing among cells overlapping `[lo, hi]`.
    pub fn local_spacing(&self, lo: f64, hi: f64) -> f64 {
        let mut best: f64 = 0.0;
        for i in 0..self.num_cells() {
            let (a, b) = self.cell(i);
            if b >= lo && a <= hi {
                best = best.max(b - a);
            }
        }
        best
    }

    pub fn nearest(&self, x: f64) -> usize {
        let x = self.wrap(x);
        let idx = self.coords.partition_point(|c| *c < x);
        let mut best = idx.min(self.coords.len() - 1);
        if idx > 0 && (x - self.coords[idx - 1]).abs() <= (self.coords[best] - x).abs() {
            best = idx - 1;
        }
        if let Some(per) = self.period {
            let last = self.coords.len() - 1;
            if best == last && (self.coords[0] + per - x).abs() < (x - self.coords[last]).abs() {
                best = 0;
            }
        }
        best
    }

    fn wrap(&self, x: f64) -> f64 {
        match self.period {
            Some(per) => {
                let lo = self.coords[0];
                lo + (x - lo).rem_euclid(per)
            }
            None => x,
        }
    }

    /// Cell containing `x` and the local coordinate in `[0, 1]`.
    pub fn locate(&self, x: f64) -> Option<(usize, f64)> {
        let x = self.wrap(x);
        let n = self.coords.len();
        if self.period.is_none() && (x < self.coords[0] || x > self.coords[n - 1]) {
            return None;
        }
        let idx = self.coords.partition_point(|c| *c <= x);
        let cell = if idx == 0 { 0 } else { (idx - 1).min(self.num_cells() - 1) };
        let (a, b) = self.cell(cell);
        Some((cell, ((x - a) / (b - a)).clamp(0.0, 1.0)))
    }
}

/// Refinement request for [`graded_axis`]: spacing at most `radius / cells_per_radius`
/// inside `[center - radius, center + radius]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Feature {
    pub center: f64,
    pub radius: f64,
}

/// Nodes on `[lo, hi]` with spacing `base` away from features, locally refined near them
/// with adjacent-spacing growth bounded by `1 + growth`. Every breakpoint inside the
/// interval becomes a node.
pub fn graded_axis(
    lo: f64,
    hi: f64,
    base: f64,
    features: &[Feature],
    cells_per_radius: f64,
    growth: f64,
    breakpoints: &[f64],
) -> Axis {
    assert!(hi > lo && base > 0.0);
    let spacing = |x: f64| -> f64 {
        let mut s = base;
        for f in features {
            let dist = ((x - f.center).abs() - f.radius).max(0.0);
            s = s.min(f.radius / cells_per_radius + growth * dist);
        }
        s
    };
    let mut points = vec![lo, hi];
    points.extend(breakpoints.iter().cloned().filter(|b| *b > lo && *b < hi));
    points.sort_by(|a, b| a.partial_cmp(b).unwrap());
    points.dedup_by(|a, b| (*a - *b).abs() < 1e-14 * (1.0 + b.abs()));

    let mut coords = vec![lo];
    for w in points.windows(2) {
        let (a, b) = (w[0], w[1]);
        // Cumulative node-count function by fine marching.
        let mut xs = vec![a];
        let mut phi = vec![0.0];
        let mut x = a;
        while x < b {
            let s = spacing(x);
            let step = (0.1 * s).min(b - x);
            let mid = spacing(x + 0.5 * step);
            x += step;
            xs.push(x);
            phi.push(phi.last().unwrap() + step / mid);
        }
        let total = *phi.last().unwrap();
        let cells = total.ceil().max(1.0) as usize;
        let mut j = 0;
        for k in 1..cells {
            let target = total * k as f64 / cells as f64;
            while phi[j + 1] < target {
                j += 1;
            }
            let t = (target - phi[j]) / (phi[j + 1] - phi[j]);
            coords.push(xs[j] + t * (xs[j + 1] - xs[j]));
        }
        coords.push(b);
    }
    Axis::from_coords(coords)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorGrid {
    pub axes: Vec<Axis>,
}

impl TensorGrid {
    pub fn new(axes: Vec<Axis>) -> Self {
        Self { axes }
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn num_nodes(&self) -> usize {
        self.axes.iter().map(|a| a.len()).product()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.axes.iter().map(|a| a.len()).collect()
    }

    /// Linear index with the first axis varying fastest.
    pub fn index(&self, multi: &[usize]) -> usize {
        let mut idx = 0;
        let mut stride = 1;
        for (a, &i) in self.axes.iter().zip(multi) {
            idx += i * stride;
            stride *= a.len();
        }
        idx
    }

    pub fn multi_index(&self, mut idx: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.dim());
        for a in &self.axes {
            out.push(idx % a.len());
            idx /= a.len();
        }
        out
    }

    pub fn coords(&self, idx: usize) -> Vec<f64> {
        self.multi_index(idx).iter().zip(&self.axes).map(|(&i, a)| a.coords[i]).collect()
    }

    /// Multilinear interpolation; `None` outside the grid or when a corner is inactive.
    pub fn interpolate(&self, values: &[f64], active: &[bool], point: &[f64]) -> Option<f64> {
        let d = self.dim();
        let mut cells = Vec::with_capacity(d);
        for (a, &x) in self.axes.iter().zip(point) {
            cells.push(a.locate(x)?);
        }
        let mut total = 0.0;
        for corner in 0..(1usize << d) {
            let mut multi = Vec::with_capacity(d);
            let mut w = 1.0;
            for (k, &(c, t)) in cells.iter().enumerate() {
                if corner >> k & 1 == 1 {
                    multi.push(self.axes[k].next_index(c));
                    w *= t;
                } else {
                    multi.push(c);
                    w *= 1.0 - t;
                }
            }
            if w == 0.0 {
                continue;
            }
            let idx = self.index(&multi);
            if !active[idx] {
                return None;
            }
            total += w * values[idx];
        }
        Some(total)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Split {
    /// `d!` simplices per cell along monotone lattice paths.
    Kuhn,
    /// Average over all `2^{d-1}` reflected Kuhn splits; invariant under axis reflections.
    #[default]
    Symmetric,
}

/// Local data supplied per simplex by a chart: `m` (row-major `rows x d`) maps the
/// computational gradient to the vector whose norm enters the energy density.
#[derive(Debug, Clone, PartialEq)]
pub struct CellMetric {
    pub m: Vec<f64>,
    /// Energy weight per unit computational volume.
    pub density: f64,
    /// Weight of the zeroth-order `|u|^p` term per unit computational volume.
    pub mass: f64,
}

/// Simplicial mesh with precomputed gradient operators.
#[derive(Debug, Clone)]
pub struct SimplexMesh {
    pub dim: usize,
    pub rows: usize,
    pub num_nodes: usize,
    /// `dim + 1` vertex ids per simplex.
    pub verts: Vec<u32>,
    /// `rows * (dim + 1)` entries per simplex, row-major.
    pub bmat: Vec<f64>,
    pub weight: Vec<f64>,
    /// Empty when the energy has no zeroth-order term.
    pub mass: Vec<f64>,
    pub inc_ptr: Vec<usize>,
    /// Flattened slot `simplex * (dim + 1) + local` for each incidence.
    pub inc_slot: Vec<usize>,
}

impl SimplexMesh {
    pub fn num_simplices(&self) -> usize {
        self.weight.len()
    }

    pub fn nverts(&self) -> usize {
        self.dim + 1
    }

    pub fn has_mass(&self) -> bool {
        !self.mass.is_empty()
    }

    /// Nodes belonging to at least one simplex.
    pub fn used_nodes(&self) -> Vec<bool> {
        (0..self.num_nodes).map(|i| self.inc_ptr[i + 1] > self.inc_ptr[i]).collect()
    }

    fn finish(mut self) -> Self {
        let nv = self.nverts();
        let mut counts = vec![0usize; self.num_nodes + 1];
        for &v in &self.verts {
            counts[v as usize + 1] += 1;
        }
        for i in 0..self.num_nodes {
            counts[i + 1] += counts[i];
        }
        let mut fill = counts.clone();
        let mut slots = vec![0usize; self.verts.len()];
        for (slot, &v) in self.verts.iter().enumerate() {
            slots[fill[v as usize]] = slot;
            fill[v as usize] += 1;
        }
        debug_assert_eq!(slots.len(), self.num_simplices() * nv);
        self.inc_ptr = counts;
        self.inc_slot = slots;
        self
    }
}

fn permutations(d: usize) -> Vec<Vec<usize>> {
    if d == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(d - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, d - 1);
            out.push(q);
        }
    }
    out
}

/// Splits every cell whose corners are all active into simplices and evaluates the chart
/// at each simplex centroid. Simplices with zero density and zero mass are dropped.
pub fn build_mesh<F>(grid: &TensorGrid, active: &[bool], split: Split, rows: usize, metric: F) -> SimplexMesh
where
    F: Fn(&[f64]) -> CellMetric,
{
    let d = grid.dim();
    let nv = d + 1;
    let perms = permutations(d);
    let patterns: Vec<usize> = match split {
        Split::Kuhn => vec![0],
        Split::Symmetric => (0..(1usize << d)).filter(|s| s & 1 == 0).collect(),
    };
    let fact: f64 = (1..=d).map(|k| k as f64).product();
    let pattern_weight = 1.0 / patterns.len() as f64;

    let mut mesh = SimplexMesh {
        dim: d,
        rows,
        num_nodes: grid.num_nodes(),
        verts: Vec::new(),
        bmat: Vec::new(),
        weight: Vec::new(),
        mass: Vec::new(),
        inc_ptr: Vec::new(),
        inc_slot: Vec::new(),
    };
    let mut any_mass = false;
    let mut masses = Vec::new();

    let cell_counts: Vec<usize> = grid.axes.iter().map(|a| a.num_cells()).collect();
    let total_cells: usize = cell_counts.iter().product();
    let mut cell = vec![0usize; d];
    let mut corner_ids = vec![0usize; 1 << d];
    let mut corner_pos = vec![vec![0.0; d]; 1 << d];
    let mut g = vec![0.0; d * nv];
    for c in 0..total_cells {
        let mut rem = c;
        for k in 0..d {
            cell[k] = rem % cell_counts[k];
            rem /= cell_counts[k];
        }
        let mut ok = true;
        let mut widths = vec![0.0; d];
        let mut lows = vec![0.0; d];
        for k in 0..d {
            let (a, b) = grid.axes[k].cell(cell[k]);
            lows[k] = a;
            widths[k] = b - a;
        }
        for corner in 0..(1usize << d) {
            let multi: Vec<usize> = (0..d)
                .map(|k| if corner >> k & 1 == 1 { grid.axes[k].next_index(cell[k]) } else { cell[k] })
                .collect();
            let id = grid.index(&multi);
            if !active[id] {
                ok = false;
                break;
            }
            corner_ids[corner] = id;
            for k in 0..d {
                corner_pos[corner][k] = lows[k] + if corner >> k & 1 == 1 { widths[k] } else { 0.0 };
            }
        }
        if !ok {
            continue;
        }
        let vol = widths.iter().product::<f64>() / fact * pattern_weight;
        for &pat in &patterns {
            for perm in &perms {
                // Lattice path from the pattern's start corner, flipping reflected axes.
                let mut corner = pat;
                let mut path = Vec::with_capacity(nv);
                path.push(corner);
                for v in g.iter_mut() {
                    *v = 0.0;
                }
                for (step, &axis) in perm.iter().enumerate() {
                    let flipped = pat >> axis & 1 == 1;
                    corner ^= 1 << axis;
                    path.push(corner);
                    let h = if flipped { -widths[axis] } else { widths[axis] };
                    g[axis * nv + step + 1] += 1.0 / h;
                    g[axis * nv + step] -= 1.0 / h;
                }
                let mut centroid = vec![0.0; d];
                for &cn in &path {
                    for k in 0..d {
                        centroid[k] += corner_pos[cn][k] / nv as f64;
                    }
                }
                let cm = metric(&centroid);
                if cm.density == 0.0 && cm.mass == 0.0 {
                    continue;
                }
                for &cn in &path {
                    mesh.verts.push(corner_ids[cn] as u32);
                }
                for r in 0..rows {
                    for j in 0..nv {
                        let mut s = 0.0;
                        for k in 0..d {
                            s += cm.m[r * d + k] * g[k * nv + j];
                        }
                        mesh.bmat.push(s);
                    }
                }
                mesh.weight.push(cm.density * vol);
                masses.push(cm.mass * vol);
                any_mass |= cm.mass != 0.0;
            }
        }
    }
    if any_mass {
        mesh.mass = masses;
    }
    mesh.finish()
}

/// Identity metric with a scalar density.
pub fn flat_metric(d: usize, density: f64) -> CellMetric {
    let mut m = vec![0.0; d * d];
    for k in 0..d {
        m[k * d + k] = 1.0;
    }
    CellMetric { m, density, mass: 0.0 }
}
