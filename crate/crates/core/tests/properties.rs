//! Property tests for the transformation, the obstacle geometry and the solver.

use std::sync::Arc;

use mixedcap::geometry::{
    annular_piece, build_axial_grid, transform_obstacle, BallGrid, CrossSection, CylinderGridSpec, NodeClass,
    ObstacleSet, Primitive,
};
use mixedcap::mesh::Split;
use mixedcap::operator::{a_operator, OperatorContext};
use mixedcap::solver::{
    comparison_check, cylinder_mesh, p_energy, solve, solve_ball_dirichlet, solve_cylinder_mixed, transformed_data,
    DiscreteField, PEnergyProblem, SolverSettings,
};
use mixedcap::transform::{differential, forward_map, inverse_map, reflect, BallPoint, CylPoint, TransformParams};
use proptest::prelude::*;

fn point_in_cylinder(n: usize, z: std::ops::Range<f64>) -> impl Strategy<Value = CylPoint> {
    (prop::collection::vec(-1.0f64..1.0, n - 1), 0.0f64..=1.0, z).prop_map(|(dir, rad, x_n)| {
        let norm = dir.iter().map(|a| a * a).sum::<f64>().sqrt();
        let x_prime = if norm < 1e-9 { vec![0.0; dir.len()] } else { dir.iter().map(|a| a * rad / norm).collect() };
        CylPoint::new(x_prime, x_n)
    })
}

fn dim_point(z: std::ops::Range<f64>) -> impl Strategy<Value = (usize, CylPoint)> {
    (2usize..=4).prop_flat_map(move |n| (Just(n), point_in_cylinder(n, z.clone())))
}

fn axisymmetric_primitive(n: usize) -> impl Strategy<Value = Primitive> {
    prop_oneof![
        (0.2f64..6.0, 0.05f64..0.8).prop_map(move |(c, r)| {
            let mut center = vec![0.0; n];
            center[n - 1] = c;
            Primitive::ball(center, r)
        }),
        (0.1f64..6.0, 0.05f64..1.0, prop::option::of(0.1f64..1.0)).prop_map(move |(a, w, rad)| Primitive::Slab {
            cross: match rad {
                Some(r) => CrossSection::SubBall { center: vec![0.0; n - 1], radius: r },
                None => CrossSection::FullDisk,
            },
            interval: [a, a + w],
        }),
        (0.1f64..6.0, 0.05f64..1.0).prop_map(|(a, w)| Primitive::Lateral { interval: [a, a + w] }),
    ]
}

fn obstacle_2d() -> impl Strategy<Value = ObstacleSet> {
    let ball = (-0.8f64..0.8, 0.3f64..4.0, 0.1f64..0.5).prop_map(|(x, z, r)| Primitive::ball(vec![x, z], r));
    prop::collection::vec(prop_oneof![ball, axisymmetric_primitive(2)], 0..4).prop_map(ObstacleSet::with_primitives)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn round_trip_and_modulus((n, x) in dim_point(0.0..20.0), kappa in 0.2f64..3.0) {
        let p = TransformParams::new(n, kappa).unwrap();
        let xi = forward_map(&p, &x);
        let expect = (-kappa * x.x_n).exp();
        prop_assert!((xi.norm() / expect - 1.0).abs() < 1e-12);
        let y = inverse_map(&p, &xi).unwrap();
        prop_assert!((y.x_n - x.x_n).abs() < 1e-9);
        for (a, b) in x.x_prime.iter().zip(&y.x_prime) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn boundary_pieces_land_on_sphere_and_equator(
        (n, x) in dim_point(0.0..8.0),
        kappa in 0.2f64..3.0,
    ) {
        let p = TransformParams::new(n, kappa).unwrap();
        let r = x.radial();
        prop_assume!(r > 1e-6);
        let lateral = CylPoint::new(x.x_prime.iter().map(|a| a / r).collect(), x.x_n);
        prop_assert!(forward_map(&p, &lateral).last().abs() < 1e-12);
        let base = CylPoint::new(x.x_prime.clone(), 0.0);
        prop_assert!((forward_map(&p, &base).norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn jacobian_scales_like_exponential((n, x) in dim_point(0.0..10.0), kappa in 0.2f64..3.0) {
        let p = TransformParams::new(n, kappa).unwrap();
        let d = differential(&p, &x).det_abs;
        let c = d / (-kappa * n as f64 * x.x_n).exp();
        // |J| e^{k n x_n} = k (2 / (1 + |x'|^2))^{n-1} lies between k and k 2^{n-1}.
        prop_assert!(c >= kappa * (1.0 - 1e-12) && c <= kappa * 2f64.powi(n as i32 - 1) * (1.0 + 1e-12));
    }

    #[test]
    fn reflection_is_an_involution_and_operator_commutes(
        (n, x) in dim_point(0.01..6.0),
        q in prop::collection::vec(-2.0f64..2.0, 4),
        p_exp in 1.2f64..4.0,
    ) {
        let params = TransformParams::new(n, 1.0).unwrap();
        let ctx = OperatorContext::new(params, p_exp).unwrap();
        let xi = forward_map(&params, &x);
        prop_assume!(xi.last() > 0.0);
        prop_assert_eq!(reflect(&reflect(&xi)), xi.clone());
        let q = q[..n].to_vec();
        let mut pq = q.clone();
        pq[n - 1] = -pq[n - 1];
        let a = a_operator(&ctx, &xi, &q).unwrap();
        let b = a_operator(&ctx, &reflect(&xi), &pq).unwrap();
        for k in 0..n - 1 {
            prop_assert_eq!(a[k].to_bits(), b[k].to_bits());
        }
        prop_assert_eq!(a[n - 1].to_bits(), (-b[n - 1]).to_bits());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn annular_pieces_stay_in_their_band(
        prims in prop::collection::vec(axisymmetric_primitive(3), 1..6),
        j in 1usize..4,
        samples in prop::collection::vec(point_in_cylinder(3, 0.0..8.0), 64),
    ) {
        let f = ObstacleSet::with_primitives(prims);
        let piece = annular_piece(&f, j).unwrap();
        let (lo, hi) = (j as f64, 2.0 * j as f64);
        for p in &piece.primitives {
            let [a, b] = p.axial_range();
            prop_assert!(a >= lo && b <= hi);
        }
        for x in &samples {
            if piece.contains(x) {
                prop_assert!(f.contains(x));
                prop_assert!(x.x_n >= lo && x.x_n <= hi);
            }
        }
    }

    #[test]
    fn ball_indicator_is_reflection_invariant(prims in prop::collection::vec(axisymmetric_primitive(2), 0..4)) {
        let f = ObstacleSet::with_primitives(prims);
        let params = TransformParams::new(2, 1.0).unwrap();
        let grid = BallGrid::new(2, (-8.0f64).exp(), 1.0, 60, 32, &[]).unwrap();
        let ind = transform_obstacle(&params, &f, &grid, 32).unwrap();
        for i in 0..grid.num_nodes() {
            prop_assert_eq!(ind.is_marked(i), ind.is_marked(grid.reflected_index(i)));
        }
    }

    #[test]
    fn nodes_inside_f_stay_dirichlet_under_refinement(f in obstacle_2d()) {
        for (cross, axial) in [(9usize, 25usize), (17, 49), (33, 97)] {
            let spec = CylinderGridSpec::cylinder(2, 0.0, 6.0, cross, axial);
            let grid = build_axial_grid(&spec, &f, false).unwrap();
            let mut counts = [0usize; 5];
            for i in 0..grid.num_nodes() {
                let class = grid.class[i];
                counts[match class {
                    NodeClass::Interior => 0,
                    NodeClass::Dirichlet => 1,
                    NodeClass::Lateral => 2,
                    NodeClass::FarEnd => 3,
                    NodeClass::Discarded => 4,
                }] += 1;
                if f.contains(&grid.point(i)) {
                    prop_assert_eq!(class, NodeClass::Dirichlet);
                }
            }
            prop_assert_eq!(counts.iter().sum::<usize>(), grid.num_nodes());
        }
    }
}

fn small_problem(f: &ObstacleSet) -> mixedcap::geometry::CylinderGrid {
    build_axial_grid(&CylinderGridSpec::cylinder(2, 0.0, 2.0, 13, 25), f, true).unwrap()
}

fn modes(a: &[f64], x: &CylPoint) -> f64 {
    a.iter()
        .enumerate()
        .map(|(k, c)| c * (k as f64 * std::f64::consts::PI * (x.x_prime[0] + 1.0) / 2.0 + x.x_n).cos())
        .sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn energy_decreases_along_the_iteration(
        a in prop::collection::vec(-1.0f64..1.0, 3),
        p in 1.3f64..4.0,
        f in obstacle_2d(),
    ) {
        let grid = small_problem(&f);
        let sol = solve_cylinder_mixed(grid, |x: &CylPoint| modes(&a, x), p, SolverSettings::default()).unwrap();
        prop_assert!(sol.report.converged);
        prop_assert!(sol.report.grad_norm <= 1e-8);
        for w in sol.report.energy_history.windows(2) {
            prop_assert!(w[1] <= w[0] * (1.0 + 1e-12) + 1e-300);
        }
    }

    #[test]
    fn two_initializations_reach_the_same_minimizer(
        a in prop::collection::vec(-1.0f64..1.0, 3),
        p in 1.3f64..4.0,
        seed in prop::collection::vec(-3.0f64..3.0, 13 * 25),
    ) {
        let grid = small_problem(&ObstacleSet::base_only());
        let mesh = Arc::new(cylinder_mesh(&grid, Split::Symmetric));
        let dirichlet: Vec<bool> = grid.class.iter().map(|c| *c == NodeClass::Dirichlet).collect();
        let values: Vec<f64> = (0..grid.num_nodes())
            .map(|i| if dirichlet[i] { modes(&a, &grid.point(i)) } else { 0.0 })
            .collect();
        let settings = SolverSettings { tolerance: 1e-10, ..Default::default() };
        let problem = PEnergyProblem::new(p, mesh, dirichlet, values, settings).unwrap();
        let (u1, _) = solve(&problem).unwrap();
        let (u2, r2) = solve(&problem.with_initial(&seed)).unwrap();
        prop_assert!(r2.converged);
        prop_assert!(u1.max_abs_diff(&u2) <= 1e-6, "{}", u1.max_abs_diff(&u2));
        prop_assert!((p_energy(&problem, &u1) - p_energy(&problem, &u2)).abs() <= 1e-9 * p_energy(&problem, &u1).max(1e-12));
    }

    #[test]
    fn ordered_data_give_ordered_solutions(
        a in prop::collection::vec(-1.0f64..1.0, 3),
        b in prop::collection::vec(0.0f64..1.0, 3),
        p in 1.3f64..4.0,
        f in obstacle_2d(),
    ) {
        let settings = SolverSettings { tolerance: 1e-11, ..Default::default() };
        let low = solve_cylinder_mixed(small_problem(&f), |x: &CylPoint| modes(&a, x), p, settings).unwrap();
        let high = solve_cylinder_mixed(
            small_problem(&f),
            |x: &CylPoint| modes(&a, x) + modes(&b, x).abs(),
            p,
            settings,
        )
        .unwrap();
        let rep = comparison_check(&low.field, &high.field, 1e-8).unwrap();
        prop_assert!(rep.ordered(), "{:?}", rep);
    }

    #[test]
    fn symmetric_data_give_symmetric_ball_solutions(
        f in prop::collection::vec(axisymmetric_primitive(2), 0..3),
        p in 1.5f64..3.5,
        slope in -1.0f64..1.0,
    ) {
        let f = ObstacleSet::with_primitives(f);
        let params = TransformParams::new(2, 1.0).unwrap();
        let ctx = OperatorContext::new(params, p).unwrap();
        let grid = BallGrid::new(2, (-7.0f64).exp(), 1.0, 50, 32, &[]).unwrap();
        let ind = transform_obstacle(&params, &f, &grid, 32).unwrap();
        let data = |x: &CylPoint| 1.0 + slope * x.x_prime[0] + 0.1 * x.x_n;
        let sol = solve_ball_dirichlet(&ctx, grid, &ind, transformed_data(&params, data), SolverSettings::default()).unwrap();
        for i in 0..sol.grid.num_nodes() {
            let j = sol.grid.reflected_index(i);
            prop_assert!((sol.field.values[i] - sol.field.values[j]).abs() <= 1e-6);
        }
    }
}

#[test]
fn constant_ball_data_reproduce_the_constant() {
    let params = TransformParams::new(3, 1.0).unwrap();
    let ctx = OperatorContext::new(params, 2.0).unwrap();
    let grid = BallGrid::new(3, (-6.0f64).exp(), 1.0, 40, 16, &[]).unwrap();
    let ind = transform_obstacle(&params, &ObstacleSet::base_only(), &grid, 32).unwrap();
    let sol = solve_ball_dirichlet(&ctx, grid, &ind, |_: &BallPoint| 0.75, SolverSettings::default()).unwrap();
    assert!(sol.field.max_abs_diff(&DiscreteField::constant(sol.field.len(), 0.75)) < 1e-9);
}

#[test]
fn cylinder_and_ball_solutions_converge_together() {
    let params = TransformParams::new(2, 1.0).unwrap();
    let ctx = OperatorContext::new(params, 2.0).unwrap();
    let f = |x: &CylPoint| (std::f64::consts::PI * (x.x_prime[0] + 1.0) / 2.0).cos();
    let mut gaps = Vec::new();
    for k in [1usize, 2, 4] {
        let spec = CylinderGridSpec::cylinder(2, 0.0, 6.0, 16 * k, 64 * k);
        let grid = build_axial_grid(&spec, &ObstacleSet::base_only(), true).unwrap();
        let cyl = solve_cylinder_mixed(grid, f, 2.0, SolverSettings::default()).unwrap();
        let bg = BallGrid::new(2, (-10.0f64).exp(), 1.0, 75 * k, 32 * k, &[]).unwrap();
        let ind = transform_obstacle(&params, &ObstacleSet::base_only(), &bg, 64).unwrap();
        let ball = solve_ball_dirichlet(&ctx, bg, &ind, transformed_data(&params, f), SolverSettings::default()).unwrap();
        gaps.push(mixedcap::solver::transform_discrepancy(&params, &cyl, &ball, 0.0, 4.0));
    }
    assert!(gaps[1] < gaps[0] && gaps[2] < gaps[1], "{gaps:?}");
}
