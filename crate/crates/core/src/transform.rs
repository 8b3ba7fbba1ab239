//! The change of variables between the half-cylinder `G = B' x (0, inf)` and the
//! punctured unit ball.
//!
//! A cylinder point `x = (x', x_n)` is sent to
//!
//! ```text
//! xi'  = 2 e^{-k x_n} x' / (1 + |x'|^2)
//! xi_n = e^{-k x_n} (1 - |x'|^2) / (1 + |x'|^2)
//! ```
//!
//! so that `|xi| = e^{-k x_n}`: the base `x_n = 0` goes to the upper unit half-sphere,
//! the lateral surface `|x'| = 1` to the equator `xi_n = 0`, and the point at infinity to
//! the origin. The reflection `P(xi', xi_n) = (xi', -xi_n)` doubles the half-ball.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Tolerance on `|xi'|` below which a point counts as lying on the axis.
pub const AXIS_TOL: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransformParams {
    pub n: usize,
    pub kappa: f64,
}

impl TransformParams {
    pub fn new(n: usize, kappa: f64) -> Result<Self> {
        if n < 2 {
            return Err(invalid(format!("dimension n must be >= 2, got {n}")));
        }
        if !(kappa > 0.0) || !kappa.is_finite() {
            return Err(invalid(format!("kappa must be positive and finite, got {kappa}")));
        }
        Ok(Self { n, kappa })
    }

    /// Ball radius `e^{-k t}` corresponding to the height `t`.
    pub fn radius_of_height(&self, t: f64) -> f64 {
        (-self.kappa * t).exp()
    }

    pub fn height_of_radius(&self, r: f64) -> f64 {
        -r.ln() / self.kappa
    }
}

impl Default for TransformParams {
    fn default() -> Self {
        Self { n: 2, kappa: 1.0 }
    }
}

/// A point `(x', x_n)` in cylinder coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CylPoint {
    pub x_prime: Vec<f64>,
    pub x_n: f64,
}

impl CylPoint {
    pub fn new(x_prime: Vec<f64>, x_n: f64) -> Self {
        Self { x_prime, x_n }
    }

    /// Point on the axis at height `x_n`.
    pub fn on_axis(n: usize, x_n: f64) -> Self {
        Self { x_prime: vec![0.0; n - 1], x_n }
    }

    pub fn dim(&self) -> usize {
        self.x_prime.len() + 1
    }

    pub fn radial_sq(&self) -> f64 {
        self.x_prime.iter().map(|v| v * v).sum()
    }

    pub fn radial(&self) -> f64 {
        self.radial_sq().sqrt()
    }

    /// Full coordinate vector `(x_1, ..., x_n)`.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.x_prime.clone();
        v.push(self.x_n);
        v
    }

    pub fn from_slice(v: &[f64]) -> Self {
        let (last, head) = v.split_last().expect("non-empty coordinate vector");
        Self { x_prime: head.to_vec(), x_n: *last }
    }

    pub fn distance(&self, other: &CylPoint) -> f64 {
        let mut s = (self.x_n - other.x_n).powi(2);
        for (a, b) in self.x_prime.iter().zip(&other.x_prime) {
            s += (a - b).powi(2);
        }
        s.sqrt()
    }
}

/// A point `xi = (xi', xi_n)` in ball coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BallPoint {
    pub xi: Vec<f64>,
}

impl BallPoint {
    pub fn new(xi: Vec<f64>) -> Self {
        Self { xi }
    }

    pub fn dim(&self) -> usize {
        self.xi.len()
    }

    pub fn norm(&self) -> f64 {
        self.xi.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn last(&self) -> f64 {
        *self.xi.last().expect("non-empty point")
    }

    pub fn prime_norm(&self) -> f64 {
        let n = self.xi.len();
        self.xi[..n - 1].iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_origin(&self) -> bool {
        self.xi.iter().all(|v| *v == 0.0)
    }
}

/// Differential of `T` at a point.
#[derive(Debug, Clone, PartialEq)]
pub struct JacobianData {
    /// `dt[(k, j)] = d xi_k / d x_j`.
    pub dt: DMatrix<f64>,
    /// `|det dT|`.
    pub det_abs: f64,
}

pub fn forward_map(params: &TransformParams, x: &CylPoint) -> BallPoint {
    let s = x.radial_sq();
    let e = (-params.kappa * x.x_n).exp();
    let denom = 1.0 + s;
    let mut xi: Vec<f64> = x.x_prime.iter().map(|v| 2.0 * e * v / denom).collect();
    xi.push(e * (1.0 - s) / denom);
    BallPoint { xi }
}

pub fn inverse_map(params: &TransformParams, xi: &BallPoint) -> Result<CylPoint> {
    let n = xi.dim();
    let xi_n = xi.last();
    if xi.prime_norm() < AXIS_TOL && xi_n <= 0.0 {
        return Err(Error::ExcludedRay(xi.xi.clone()));
    }
    let r = xi.norm();
    let denom = r + xi_n;
    let x_prime = xi.xi[..n - 1].iter().map(|v| v / denom).collect();
    Ok(CylPoint { x_prime, x_n: -r.ln() / params.kappa })
}

/// Closed-form partial derivatives of the forward map.
pub fn differential(params: &TransformParams, x: &CylPoint) -> JacobianData {
    let n = x.dim();
    let k = params.kappa;
    let s = x.radial_sq();
    let e = (-k * x.x_n).exp();
    let d1 = 1.0 + s;
    let d2 = d1 * d1;
    let mut dt = DMatrix::zeros(n, n);
    for i in 0..n - 1 {
        let xi = x.x_prime[i];
        for j in 0..n - 1 {
            let delta = if i == j { 1.0 } else { 0.0 };
            dt[(i, j)] = 2.0 * e * (delta / d1 - 2.0 * xi * x.x_prime[j] / d2);
        }
        dt[(i, n - 1)] = -k * 2.0 * e * xi / d1;
        dt[(n - 1, i)] = -4.0 * e * xi / d2;
    }
    dt[(n - 1, n - 1)] = -k * e * (1.0 - s) / d1;
    let det_abs = dt.clone().determinant().abs();
    JacobianData { dt, det_abs }
}

pub fn reflect(xi: &BallPoint) -> BallPoint {
    let mut v = xi.xi.clone();
    if let Some(last) = v.last_mut() {
        *last = -*last;
    }
    BallPoint { xi: v }
}

/// Two-sided distortion statistics of `T` over a sample.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BoundsReport {
    pub pairs: usize,
    pub skipped: usize,
    /// `5 + 2 kappa`.
    pub upper_constant: f64,
    /// Max of `|T(x) - T(y)| / (e^{-k min(x_n, y_n)} |x - y|)`.
    pub max_upper_ratio: f64,
    pub upper_violations: usize,
    /// Min of `|T(x) - T(y)| D / (e^{-k max(x_n, y_n)} |x - y|)` with
    /// `D = (1 + |y'|^2)(1/2 + |x'|) + 1/k`; the lower bound holds when this is `>= 1`.
    pub min_lower_ratio: f64,
    pub lower_violations: usize,
    /// Observed constants `c1, c2` in `c1 e^{-k x_n}|q| <= |dT*(x) q| <= c2 e^{-k x_n}|q|`.
    pub adjoint_constants: (f64, f64),
    /// Observed constants in `c1 e^{-k n x_n} <= |J_T(x)| <= c2 e^{-k n x_n}`.
    pub jacobian_constants: (f64, f64),
}

impl BoundsReport {
    pub fn passed(&self) -> bool {
        self.upper_violations == 0 && self.lower_violations == 0
    }
}

pub fn geometric_bounds_check(params: &TransformParams, samples: &[(CylPoint, CylPoint)]) -> BoundsReport {
    let k = params.kappa;
    let upper_constant = 5.0 + 2.0 * k;
    let mut rep = BoundsReport {
        upper_constant,
        max_upper_ratio: 0.0,
        min_lower_ratio: f64::INFINITY,
        adjoint_constants: (f64::INFINITY, 0.0),
        jacobian_constants: (f64::INFINITY, 0.0),
        ..Default::default()
    };
    for (x, y) in samples {
        rep.pairs += 1;
        for p in [x, y] {
            let jac = differential(params, p);
            let scale = (k * p.x_n).exp();
            let sv = jac.dt.clone().singular_values();
            let smin = sv.iter().cloned().fold(f64::INFINITY, f64::min) * scale;
            let smax = sv.iter().cloned().fold(0.0, f64::max) * scale;
            rep.adjoint_constants.0 = rep.adjoint_constants.0.min(smin);
            rep.adjoint_constants.1 = rep.adjoint_constants.1.max(smax);
            let jr = jac.det_abs * (k * params.n as f64 * p.x_n).exp();
            rep.jacobian_constants.0 = rep.jacobian_constants.0.min(jr);
            rep.jacobian_constants.1 = rep.jacobian_constants.1.max(jr);
        }
        let dist = x.distance(y);
        if dist == 0.0 {
            rep.skipped += 1;
            continue;
        }
        let tx = forward_map(params, x);
        let ty = forward_map(params, y);
        let img: f64 = tx.xi.iter().zip(&ty.xi).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let upper = img / ((-k * x.x_n.min(y.x_n)).exp() * dist);
        let denom = (1.0 + y.radial_sq()) * (0.5 + x.radial()) + 1.0 / k;
        let lower = img * denom / ((-k * x.x_n.max(y.x_n)).exp() * dist);
        rep.max_upper_ratio = rep.max_upper_ratio.max(upper);
        rep.min_lower_ratio = rep.min_lower_ratio.min(lower);
        // Relative slack for round-off in nearly coincident pairs.
        if upper > upper_constant * (1.0 + 1e-12) {
            rep.upper_violations += 1;
        }
        if lower < 1.0 - 1e-12 {
            rep.lower_violations += 1;
        }
    }
    rep
}

/// Uniform random point of the closed cross-section ball `B'` times `[z0, z1]`.
pub fn random_cylinder_point<R: Rng + ?Sized>(rng: &mut R, n: usize, z0: f64, z1: f64) -> CylPoint {
    let m = n - 1;
    let x_prime = loop {
        let v: Vec<f64> = (0..m).map(|_| rng.gen_range(-1.0..=1.0)).collect();
        if v.iter().map(|a| a * a).sum::<f64>() <= 1.0 {
            break v;
        }
    };
    CylPoint { x_prime, x_n: rng.gen_range(z0..=z1) }
}
