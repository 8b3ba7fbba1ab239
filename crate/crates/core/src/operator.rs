//! The transformed operator `A(xi, q)` on the doubled unit ball and the weight
//! `w(xi) = |xi|^{p-n}` that controls its degeneracy at the origin.
//!
//! For `xi = T(x)` in the upper half-ball,
//!
//! ```text
//! A(xi, q) = |dT*(x) q|^{p-2} |J_T(x)|^{-1} dT(x) dT*(x) q
//! ```
//!
//! and the lower half is defined by reflection, `A(xi, q) = P A(P xi, P q)`. On the
//! equator `xi_n = 0` the operator is set to zero.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::transform::{differential, inverse_map, reflect, BallPoint, TransformParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatorContext {
    pub params: TransformParams,
    pub p: f64,
}

impl OperatorContext {
    pub fn new(params: TransformParams, p: f64) -> Result<Self> {
        if !(p > 1.0) || !p.is_finite() {
            return Err(invalid(format!("exponent p must satisfy 1 < p < inf, got {p}")));
        }
        Ok(Self { params, p })
    }

    pub fn n(&self) -> usize {
        self.params.n
    }
}

/// Value of the weight; the measure is `d mu = value * d xi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightValue {
    pub value: f64,
}

/// Lebesgue measure `omega_n` of the unit ball in `R^n`.
pub fn unit_ball_volume(n: usize) -> f64 {
    match n {
        0 => 1.0,
        1 => 2.0,
        _ => 2.0 * std::f64::consts::PI / n as f64 * unit_ball_volume(n - 2),
    }
}

/// Surface measure of the unit sphere `S^k` in `R^{k+1}`.
pub fn sphere_area(k: usize) -> f64 {
    (k + 1) as f64 * unit_ball_volume(k + 1)
}

/// `w(xi) = |xi|^{p-n}`, with `w(0) = 0`.
pub fn weight(ctx: &OperatorContext, xi: &BallPoint) -> WeightValue {
    let r = xi.norm();
    WeightValue { value: radial_weight(ctx, r) }
}

pub fn radial_weight(ctx: &OperatorContext, r: f64) -> f64 {
    if r == 0.0 {
        0.0
    } else {
        r.powf(ctx.p - ctx.n() as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum BallIntegral {
    Finite(f64),
    Divergent,
}

impl BallIntegral {
    pub fn value(&self) -> Option<f64> {
        match self {
            BallIntegral::Finite(v) => Some(*v),
            BallIntegral::Divergent => None,
        }
    }
}

/// Closed form of `int_{B_r} w^alpha d xi`.
pub fn weight_ball_integral(ctx: &OperatorContext, alpha: f64, r: f64) -> BallIntegral {
    let n = ctx.n() as f64;
    if alpha * (n - ctx.p) >= n {
        return BallIntegral::Divergent;
    }
    let expo = n + alpha * (ctx.p - n);
    let c = n * unit_ball_volume(ctx.n()) / expo;
    BallIntegral::Finite(c * r.powf(expo))
}

/// Metric representation of the operator at a point: the energy density is
/// `|adjoint q|^p * inv_jacobian`, and `A(xi, q)` is its gradient in `q` divided by `p`.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorMetric {
    /// `dT*(x)` in the upper half, `dT*(x^) P` in the lower half with `x^ = T^{-1}(P xi)`.
    pub adjoint: DMatrix<f64>,
    pub inv_jacobian: f64,
}

/// `None` on the equator, where the operator vanishes.
pub fn operator_metric(ctx: &OperatorContext, xi: &BallPoint) -> Result<Option<OperatorMetric>> {
    if xi.is_origin() {
        return Err(Error::UndefinedAtOrigin);
    }
    let last = xi.last();
    if last == 0.0 {
        return Ok(None);
    }
    let n = ctx.n();
    let (x, reflected) = if last > 0.0 {
        (inverse_map(&ctx.params, xi)?, false)
    } else {
        (inverse_map(&ctx.params, &reflect(xi))?, true)
    };
    let jac = differential(&ctx.params, &x);
    let mut adjoint = jac.dt.transpose();
    if reflected {
        for row in 0..n {
            adjoint[(row, n - 1)] = -adjoint[(row, n - 1)];
        }
    }
    Ok(Some(OperatorMetric { adjoint, inv_jacobian: 1.0 / jac.det_abs }))
}

fn upper_operator(ctx: &OperatorContext, xi: &BallPoint, q: &[f64]) -> Result<Vec<f64>> {
    let x = inverse_map(&ctx.params, xi)?;
    let jac = differential(&ctx.params, &x);
    let qv = DVector::from_column_slice(q);
    let v = jac.dt.transpose() * &qv;
    let norm = v.norm();
    if norm == 0.0 {
        return Ok(vec![0.0; q.len()]);
    }
    let scale = norm.powf(ctx.p - 2.0) / jac.det_abs;
    Ok((&jac.dt * v * scale).iter().cloned().collect())
}

pub fn a_operator(ctx: &OperatorContext, xi: &BallPoint, q: &[f64]) -> Result<Vec<f64>> {
    if q.len() != ctx.n() || xi.dim() != ctx.n() {
        return Err(invalid("dimension mismatch in a_operator"));
    }
    if xi.is_origin() {
        return Err(Error::UndefinedAtOrigin);
    }
    let last = xi.last();
    if last > 0.0 {
        upper_operator(ctx, xi, q)
    } else if last < 0.0 {
        let mut pq = q.to_vec();
        let n = pq.len();
        pq[n - 1] = -pq[n - 1];
        let mut out = upper_operator(ctx, &reflect(xi), &pq)?;
        out[n - 1] = -out[n - 1];
        Ok(out)
    } else {
        Ok(vec![0.0; q.len()])
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EllipticityReport {
    pub samples: usize,
    pub skipped: usize,
    /// Range of `A(xi, q) . q / (w |q|^p)`.
    pub coercivity: (f64, f64),
    /// Range of `|A(xi, q)| / (w |q|^{p-1})`.
    pub growth: (f64, f64),
}

impl EllipticityReport {
    /// Both ratios lie in `(0, inf)` over the sample.
    pub fn bounded(&self) -> bool {
        self.coercivity.0 > 0.0
            && self.coercivity.1.is_finite()
            && self.growth.0 > 0.0
            && self.growth.1.is_finite()
    }
}

pub fn ellipticity_check(ctx: &OperatorContext, samples: &[(BallPoint, Vec<f64>)]) -> Result<EllipticityReport> {
    let mut rep = EllipticityReport {
        coercivity: (f64::INFINITY, 0.0),
        growth: (f64::INFINITY, 0.0),
        ..Default::default()
    };
    for (xi, q) in samples {
        let qn = norm(q);
        if qn == 0.0 || xi.is_origin() || xi.last() == 0.0 {
            rep.skipped += 1;
            continue;
        }
        rep.samples += 1;
        let a = a_operator(ctx, xi, q)?;
        let w = weight(ctx, xi).value;
        let c = dot(&a, q) / (w * qn.powf(ctx.p));
        let g = norm(&a) / (w * qn.powf(ctx.p - 1.0));
        rep.coercivity = (rep.coercivity.0.min(c), rep.coercivity.1.max(c));
        rep.growth = (rep.growth.0.min(g), rep.growth.1.max(g));
    }
    Ok(rep)
}

/// `(A(xi, q1) - A(xi, q2)) . (q1 - q2)`.
pub fn monotonicity_check(ctx: &OperatorContext, xi: &BallPoint, q1: &[f64], q2: &[f64]) -> Result<f64> {
    let a1 = a_operator(ctx, xi, q1)?;
    let a2 = a_operator(ctx, xi, q2)?;
    Ok(a1.iter().zip(&a2).zip(q1.iter().zip(q2)).map(|((x, y), (u, v))| (x - y) * (u - v)).sum())
}

/// `int_0^x sin^m(t) dt`.
fn sin_power_integral(m: usize, x: f64) -> f64 {
    match m {
        0 => x,
        1 => 1.0 - x.cos(),
        _ => {
            let mf = m as f64;
            -x.sin().powi(m as i32 - 1) * x.cos() / mf + (mf - 1.0) / mf * sin_power_integral(m - 2, x)
        }
    }
}

/// Measure of `{omega in S^{n-1} : rho omega in B(c, R)}` with `d = |c|`.
fn sphere_fraction_measure(n: usize, rho: f64, d: f64, radius: f64) -> f64 {
    let full = sphere_area(n - 1);
    if d == 0.0 {
        return if rho <= radius { full } else { 0.0 };
    }
    let cos_max = (rho * rho + d * d - radius * radius) / (2.0 * rho * d);
    if cos_max <= -1.0 {
        return full;
    }
    if cos_max >= 1.0 {
        return 0.0;
    }
    let theta = cos_max.acos();
    sphere_area(n - 2) * sin_power_integral(n - 2, theta)
}

/// Quadrature of `int_{B(center, radius)} w^alpha d xi`: exact angular measure of each sphere
/// `|xi| = rho` inside the ball, midpoint rule in `rho` with geometric grading toward the origin.
pub fn weight_ball_quadrature(
    ctx: &OperatorContext,
    alpha: f64,
    center: &[f64],
    radius: f64,
    resolution: usize,
) -> f64 {
    let n = ctx.n();
    let d = norm(center);
    let beta = alpha * (ctx.p - n as f64);
    let integrand = |rho: f64| rho.powf(beta) * rho.powi(n as i32 - 1) * sphere_fraction_measure(n, rho, d, radius);
    let lo = (d - radius).max(0.0);
    let hi = d + radius;
    let mut breaks = vec![lo, hi];
    if d < radius && d > 0.0 {
        breaks.push(radius - d);
    }
    breaks.sort_by(|a, b| a.partial_cmp(b).unwrap());
    breaks.dedup();
    let cells = resolution.max(16);
    let mut total = 0.0;
    for w in breaks.windows(2) {
        let (a, b) = (w[0], w[1]);
        if b <= a {
            continue;
        }
        if a == 0.0 {
            // Uniform cells on [b/64, b], geometric cells down to b * 1e-12, and the
            // analytic tail at the origin.
            let split = b / 64.0;
            let h = (b - split) / cells as f64;
            for i in 0..cells {
                total += integrand(split + (i as f64 + 0.5) * h) * h;
            }
            let floor = b * 1e-12;
            let q = (floor / split).powf(1.0 / cells as f64);
            let mut outer = split;
            for _ in 0..cells {
                let inner = outer * q;
                total += integrand(0.5 * (inner + outer)) * (outer - inner);
                outer = inner;
            }
            let expo = beta + n as f64;
            let frac = sphere_fraction_measure(n, 0.5 * outer, d, radius);
            total += frac * outer.powf(expo) / expo;
        } else {
            let h = (b - a) / cells as f64;
            for i in 0..cells {
                total += integrand(a + (i as f64 + 0.5) * h) * h;
            }
        }
    }
    total
}

/// `(int_B w)(int_B w^{1/(1-p)})^{p-1} / |B|^p` by quadrature.
pub fn muckenhoupt_check(ctx: &OperatorContext, ball_center: &[f64], ball_radius: f64, quadrature_resolution: usize) -> f64 {
    let p = ctx.p;
    let w1 = weight_ball_quadrature(ctx, 1.0, ball_center, ball_radius, quadrature_resolution);
    let w2 = weight_ball_quadrature(ctx, 1.0 / (1.0 - p), ball_center, ball_radius, quadrature_resolution);
    let vol = unit_ball_volume(ctx.n()) * ball_radius.powi(ctx.n() as i32);
    w1 * w2.powf(p - 1.0) / vol.powf(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transform::{forward_map, CylPoint};
    use std::f64::consts::PI;

    fn ctx(n: usize, kappa: f64, p: f64) -> OperatorContext {
        OperatorContext::new(TransformParams::new(n, kappa).unwrap(), p).unwrap()
    }

    #[test]
    fn weight_examples() {
        let c = ctx(3, 1.0, 3.0);
        assert_eq!(weight(&c, &BallPoint::new(vec![0.3, 0.1, -0.2])).value, 1.0);
        let c = ctx(2, 1.0, 3.0);
        assert!((weight(&c, &BallPoint::new(vec![0.0, 0.5])).value - 0.5).abs() < 1e-15);
        assert_eq!(weight(&c, &BallPoint::new(vec![0.0, 0.0])).value, 0.0);
        let c = ctx(2, 1.0, 5.0);
        assert_eq!(weight(&c, &BallPoint::new(vec![0.0, 0.0])).value, 0.0);
    }

    #[test]
    fn ball_volumes() {
        assert!((unit_ball_volume(2) - PI).abs() < 1e-15);
        assert!((unit_ball_volume(3) - 4.0 * PI / 3.0).abs() < 1e-15);
        assert!((sphere_area(2) - 4.0 * PI).abs() < 1e-14);
        assert_eq!(sphere_area(0), 2.0);
    }

    #[test]
    fn closed_form_ball_integrals() {
        let c = ctx(2, 1.0, 3.0);
        let v = weight_ball_integral(&c, 1.0, 1.0).value().unwrap();
        assert!((v - 2.0 * PI / 3.0).abs() < 1e-14);
        let v = weight_ball_integral(&c, 0.0, 0.7).value().unwrap();
        assert!((v - PI * 0.49).abs() < 1e-14);
        let c = ctx(3, 1.0, 2.0);
        assert_eq!(weight_ball_integral(&c, 3.0, 1.0), BallIntegral::Divergent);
    }

    #[test]
    fn quadrature_matches_closed_form() {
        for (n, p, alpha) in [(2usize, 1.5, 1.0), (3, 2.0, 1.0), (3, 4.0, -0.5), (4, 2.5, 1.0)] {
            let c = ctx(n, 1.0, p);
            let exact = weight_ball_integral(&c, alpha, 0.8).value().unwrap();
            let q = weight_ball_quadrature(&c, alpha, &vec![0.0; n], 0.8, 2000);
            assert!(((q - exact) / exact).abs() < 1e-3, "n={n} p={p}: {q} vs {exact}");
        }
    }

    #[test]
    fn operator_at_axis_point() {
        let c = ctx(2, 1.0, 2.0);
        let xi = BallPoint::new(vec![0.0, 1.0]);
        let a = a_operator(&c, &xi, &[0.7, -1.3]).unwrap();
        assert!((a[0] - 1.4).abs() < 1e-14);
        assert!((a[1] + 0.65).abs() < 1e-14);
        assert_eq!(a_operator(&c, &xi, &[0.0, 0.0]).unwrap(), vec![0.0, 0.0]);
        assert_eq!(a_operator(&c, &BallPoint::new(vec![0.0, 0.0]), &[1.0, 0.0]), Err(Error::UndefinedAtOrigin));
        assert_eq!(a_operator(&c, &BallPoint::new(vec![0.5, 0.0]), &[1.0, 1.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn reflection_identity_is_exact() {
        let c = ctx(3, 1.3, 2.7);
        let xi = BallPoint::new(vec![0.2, -0.1, -0.4]);
        let q = [0.3, 0.9, -0.5];
        let a = a_operator(&c, &xi, &q).unwrap();
        let pxi = reflect(&xi);
        let pq = [q[0], q[1], -q[2]];
        let b = a_operator(&c, &pxi, &pq).unwrap();
        assert_eq!(a, vec![b[0], b[1], -b[2]]);
    }

    #[test]
    fn ellipticity_ratio_at_axis_and_scaling() {
        let c = ctx(2, 1.0, 2.0);
        let rep = ellipticity_check(&c, &[(BallPoint::new(vec![0.0, 1.0]), vec![1.0, 0.0])]).unwrap();
        assert!((rep.coercivity.0 - 2.0).abs() < 1e-14);
        let c = ctx(3, 1.0, 3.5);
        let xi = forward_map(&c.params, &CylPoint::new(vec![0.3, -0.4], 1.2));
        let q = vec![0.2, -0.7, 0.4];
        let r1 = ellipticity_check(&c, &[(xi.clone(), q.clone())]).unwrap();
        let q2: Vec<f64> = q.iter().map(|v| 3.7 * v).collect();
        let r2 = ellipticity_check(&c, &[(xi, q2)]).unwrap();
        assert!(((r1.coercivity.0 - r2.coercivity.0) / r1.coercivity.0).abs() < 1e-12);
    }

    #[test]
    fn monotonicity_linear_case() {
        let c = ctx(2, 1.0, 2.0);
        let xi = BallPoint::new(vec![0.0, 1.0]);
        let q1 = [0.4, 1.0];
        let q2 = [-0.3, 0.2];
        let v = monotonicity_check(&c, &xi, &q1, &q2).unwrap();
        let expect = 2.0 * 0.7f64.powi(2) + 0.8f64.powi(2) / 2.0;
        assert!((v - expect).abs() < 1e-13);
        assert_eq!(monotonicity_check(&c, &xi, &q1, &q1).unwrap(), 0.0);
    }

    #[test]
    fn metric_reproduces_energy_density() {
        let c = ctx(3, 0.8, 2.4);
        for xi in [BallPoint::new(vec![0.1, 0.2, 0.3]), BallPoint::new(vec![-0.2, 0.1, -0.35])] {
            let q = [0.5, -0.2, 0.9];
            let m = operator_metric(&c, &xi).unwrap().unwrap();
            let v = &m.adjoint * DVector::from_column_slice(&q);
            let density = v.norm().powf(c.p) * m.inv_jacobian;
            let a = a_operator(&c, &xi, &q).unwrap();
            assert!(((density - dot(&a, &q)) / density).abs() < 1e-12);
        }
    }

    #[test]
    fn muckenhoupt_quotients() {
        let c = ctx(3, 1.0, 3.0);
        let q = muckenhoupt_check(&c, &[0.0, 0.0, 0.0], 0.5, 400);
        assert!((q - 1.0).abs() < 1e-3);
        let c = ctx(2, 1.0, 1.5);
        let far = muckenhoupt_check(&c, &[0.0, 0.8], 0.05, 800);
        assert!((far - 1.0).abs() < 0.1, "{far}");
        let mut vals = vec![];
        for k in 0..=10 {
            vals.push(muckenhoupt_check(&c, &[0.0, 0.0], 0.5f64.powi(k), 800));
        }
        let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = vals.iter().cloned().fold(0.0, f64::max);
        assert!(lo > 0.0 && hi / lo < 1.0 + 1e-6, "{vals:?}");
    }
}
