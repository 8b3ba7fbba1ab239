//! The transformed operator reproduces the cylinder weak form, and the transformed norms are
//! comparable with the cylinder norms.

use std::f64::consts::PI;

use mixedcap::operator::{a_operator, weight, OperatorContext};
use mixedcap::transform::{inverse_map, BallPoint, CylPoint, TransformParams};

const LO: f64 = 0.5;
const HI: f64 = 2.5;

fn bump(t: f64) -> f64 {
    if t.abs() >= 1.0 {
        0.0
    } else {
        (1.0 - t * t).powi(4)
    }
}

/// Smooth field supported in `|x_1| < 0.8`, `LO < x_2 < HI`.
fn field(c: [f64; 3]) -> impl Fn(f64, f64) -> f64 {
    move |x1: f64, x2: f64| {
        let mid = 0.5 * (LO + HI);
        let half = 0.5 * (HI - LO);
        bump(x1 / 0.8) * bump((x2 - mid) / half) * (c[0] + c[1] * x1 + c[2] * (x2 - mid).sin())
    }
}

fn grad(f: &impl Fn(f64, f64) -> f64, a: f64, b: f64, h: f64) -> [f64; 2] {
    [(f(a + h, b) - f(a - h, b)) / (2.0 * h), (f(a, b + h) - f(a, b - h)) / (2.0 * h)]
}

fn power(g: [f64; 2], p: f64) -> f64 {
    (g[0] * g[0] + g[1] * g[1]).powf(p / 2.0)
}

/// Midpoint rules over `[-1, 1] x [LO, HI]` (cylinder) and over the upper annular sector
/// `e^{-HI} < r < e^{-LO}` (ball).
struct Quadrature {
    params: TransformParams,
    n: usize,
}

impl Quadrature {
    fn cylinder(&self, integrand: impl Fn(f64, f64) -> f64) -> f64 {
        let (nx, nz) = (self.n, self.n);
        let (hx, hz) = (2.0 / nx as f64, (HI - LO) / nz as f64);
        let mut s = 0.0;
        for i in 0..nx {
            for k in 0..nz {
                s += integrand(-1.0 + (i as f64 + 0.5) * hx, LO + (k as f64 + 0.5) * hz);
            }
        }
        s * hx * hz
    }

    fn ball(&self, integrand: impl Fn(&BallPoint) -> f64) -> f64 {
        let (r0, r1) = ((-HI * self.params.kappa).exp(), (-LO * self.params.kappa).exp());
        let (nr, nt) = (self.n, 2 * self.n);
        let (lr0, lr1) = (r0.ln(), r1.ln());
        let hl = (lr1 - lr0) / nr as f64;
        let ht = PI / nt as f64;
        let mut s = 0.0;
        for i in 0..nr {
            let r = (lr0 + (i as f64 + 0.5) * hl).exp();
            for k in 0..nt {
                let th = -0.5 * PI + (k as f64 + 0.5) * ht;
                // d xi = r dr dtheta = r^2 d(log r) dtheta
                s += integrand(&BallPoint::new(vec![r * th.sin(), r * th.cos()])) * r * r;
            }
        }
        s * hl * ht
    }
}

fn pulled(params: TransformParams, f: impl Fn(f64, f64) -> f64) -> impl Fn(f64, f64) -> f64 {
    move |a: f64, b: f64| {
        let x: CylPoint = inverse_map(&params, &BallPoint::new(vec![a, b])).unwrap();
        f(x.x_prime[0], x.x_n)
    }
}

fn weak_forms(p: f64, n: usize) -> (f64, f64) {
    let params = TransformParams::new(2, 1.0).unwrap();
    let ctx = OperatorContext::new(params, p).unwrap();
    let q = Quadrature { params, n };
    let u = field([1.0, 0.7, -0.4]);
    let phi = field([0.3, -1.0, 0.8]);
    let cyl = q.cylinder(|a, b| {
        let gu = grad(&u, a, b, 1e-6);
        let gp = grad(&phi, a, b, 1e-6);
        let dot = gu[0] * gp[0] + gu[1] * gp[1];
        if dot == 0.0 {
            0.0
        } else {
            power(gu, p - 2.0) * dot
        }
    });
    let ut = pulled(params, field([1.0, 0.7, -0.4]));
    let pt = pulled(params, field([0.3, -1.0, 0.8]));
    let ball = q.ball(|xi| {
        let h = 1e-7 * xi.norm();
        let gu = grad(&ut, xi.xi[0], xi.xi[1], h);
        let gp = grad(&pt, xi.xi[0], xi.xi[1], h);
        let a = a_operator(&ctx, xi, &gu).unwrap();
        a[0] * gp[0] + a[1] * gp[1]
    });
    (cyl, ball)
}

#[test]
fn weak_form_is_preserved_under_refinement() {
    for p in [1.6, 2.0, 3.0] {
        let (c1, b1) = weak_forms(p, 40);
        let (c2, b2) = weak_forms(p, 160);
        let e1 = (c1 - b1).abs() / c2.abs();
        let e2 = (c2 - b2).abs() / c2.abs();
        assert!(e2 < e1 && e2 < 1e-2, "p={p}: {e1:e} -> {e2:e} ({c2} vs {b2})");
    }
}

#[test]
fn norms_are_comparable_with_distortion_constants() {
    let params = TransformParams::new(2, 1.0).unwrap();
    let q = Quadrature { params, n: 120 };
    let coefficient_sets = [[1.0, 0.0, 0.0], [0.2, 1.0, -0.5], [0.0, -0.3, 1.0], [-1.0, 0.8, 0.8]];
    for p in [1.5, 2.0, 3.0] {
        let ctx = OperatorContext::new(params, p).unwrap();
        for c in coefficient_sets {
            let u = field(c);
            let cyl = q.cylinder(|a, b| u(a, b).abs().powf(p) * (-p * b).exp() + power(grad(&u, a, b, 1e-6), p));
            let ut = pulled(params, field(c));
            let ball = q.ball(|xi| {
                let h = 1e-7 * xi.norm();
                let w = weight(&ctx, xi).value;
                (ut(xi.xi[0], xi.xi[1]).abs().powf(p) + power(grad(&ut, xi.xi[0], xi.xi[1], h), p)) * w
            });
            let ratio = ball / cyl;
            // |J| e^{2 x_n} lies in [1, 2] and |dT^{-T} q| e^{-x_n} / |q| in [1/2, 1].
            assert!(ratio >= 2f64.powf(-p) * 0.99 && ratio <= 2.0 * 1.01, "p={p} c={c:?}: {ratio}");
        }
    }
}
