use std::f64::consts::PI;
use std::fs::File;
use std::io::BufWriter;
use std::path::Path;
use std::time::Instant;

use mixedcap::capacity::{
    cap_condenser, cap_neumann_cylinder, condenser_radial_exact, sobolev_cp, CapacityResult, CylinderCapacityOptions,
    SobolevOptions,
};
use mixedcap::geometry::{
    build_axial_grid, transform_obstacle, BallGrid, CrossSectionMode, CylinderGrid, CylinderGridSpec, NodeClass,
    ObstacleSet, Refinement,
};
use mixedcap::operator::{ellipticity_check, OperatorContext};
use mixedcap::solver::{
    limit_at_infinity, solve_ball_dirichlet, solve_cylinder_mixed, transform_discrepancy, transformed_data,
    write_csv, write_vtk, SolverSettings,
};
use mixedcap::transform::{forward_map, geometric_bounds_check, inverse_map, random_cylinder_point, BallPoint};
use mixedcap::wiener::{classify_infinity, wiener_series, wiener_term, WienerSeries};
use mixedcap::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use crate::config::{CapacitySpec, DataSpec, Resolved, EXAMPLES};

/// A finished command: the headline of its report and whether every numerical check succeeded.
pub struct Outcome {
    pub summary: Value,
    pub success: bool,
}

fn settings(r: &Resolved) -> SolverSettings {
    SolverSettings { tolerance: r.config.tolerance, max_iterations: r.config.max_iterations, ..Default::default() }
}

fn write_json(out: &Path, name: &str, value: &Value) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(out.join(name), text + "\n")?;
    Ok(())
}

fn coordinate_header(prefix: &str, n: usize) -> Vec<String> {
    (1..=n).map(|k| format!("{prefix}{k}")).collect()
}

fn random_ball_sample(rng: &mut ChaCha8Rng, n: usize) -> (BallPoint, Vec<f64>) {
    let dir = loop {
        let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let r = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if r > 1e-3 && r <= 1.0 {
            break v.into_iter().map(|a| a / r).collect::<Vec<_>>();
        }
    };
    let radius = 10f64.powf(rng.gen_range(-3.0..=0.0));
    let q = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    (BallPoint::new(dir.iter().map(|d| d * radius).collect()), q)
}

pub fn transform_check(r: &Resolved, out: &Path) -> Result<Outcome> {
    let start = Instant::now();
    let c = &r.config;
    let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
    let mut round_trip: f64 = 0.0;
    for _ in 0..c.samples {
        let x = random_cylinder_point(&mut rng, c.n, 0.0, 20.0);
        let y = inverse_map(&r.params, &forward_map(&r.params, &x))?;
        round_trip = round_trip.max(x.distance(&y));
    }
    let pairs: Vec<_> = (0..c.samples)
        .map(|_| (random_cylinder_point(&mut rng, c.n, 0.0, 10.0), random_cylinder_point(&mut rng, c.n, 0.0, 10.0)))
        .collect();
    let bounds = geometric_bounds_check(&r.params, &pairs);
    let ctx = OperatorContext::new(r.params, c.p)?;
    let samples: Vec<_> = (0..c.samples).map(|_| random_ball_sample(&mut rng, c.n)).collect();
    let ellipticity = ellipticity_check(&ctx, &samples)?;
    let passed = bounds.passed() && round_trip < 1e-9 && ellipticity.bounded();
    let report = json!({
        "command": "transform-check",
        "config": c,
        "round_trip_max_error": round_trip,
        "bounds": bounds,
        "ellipticity": ellipticity,
        "passed": passed,
        "wall_time_s": start.elapsed().as_secs_f64(),
    });
    write_json(out, "report.json", &report)?;
    let summary = json!({ "passed": passed, "round_trip_max_error": round_trip });
    Ok(Outcome { summary, success: passed })
}

fn cylinder_grid(r: &Resolved) -> Result<CylinderGrid> {
    let c = &r.config;
    let mut spec = CylinderGridSpec::cylinder(c.n, 0.0, r.length, c.cross_nodes, c.axial_nodes)
        .with_refinement(Refinement::default());
    if c.n >= 3 && !r.obstacle.is_axisymmetric() {
        spec = spec.with_mode(CrossSectionMode::Cartesian);
    }
    build_axial_grid(&spec, &r.obstacle, true)
}

fn ball_grid(r: &Resolved) -> Result<BallGrid> {
    let c = &r.config;
    let r_inner = r.params.radius_of_height(r.length + 4.0);
    BallGrid::new(c.n, r_inner, 1.0, c.radial_nodes, c.angular_cells, &[])
}

pub fn solve(r: &Resolved, out: &Path) -> Result<Outcome> {
    let start = Instant::now();
    let c = &r.config;
    let want_ball = c.formulations.iter().any(|f| f == "ball");
    let grid = cylinder_grid(r)?;
    let ball = if want_ball {
        let bg = ball_grid(r)?;
        let ind = transform_obstacle(&r.params, &r.obstacle, &bg, 64)?;
        Some((bg, ind))
    } else {
        None
    };
    let ctx = OperatorContext::new(r.params, c.p)?;
    let data = r.data();

    let cyl = solve_cylinder_mixed(grid, &data, c.p, settings(r))?;
    let keep: Vec<usize> = (0..cyl.grid.num_nodes()).filter(|i| cyl.grid.class[*i] != NodeClass::Discarded).collect();
    let points: Vec<Vec<f64>> = keep.iter().map(|i| cyl.grid.point(*i).to_vec()).collect();
    let values: Vec<f64> = keep.iter().map(|i| cyl.field.values[*i]).collect();
    let header = coordinate_header("x", c.n);
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    write_csv(BufWriter::new(File::create(out.join("u.csv"))?), &header, &points, &values)?;
    let all_points: Vec<Vec<f64>> = (0..cyl.grid.num_nodes()).map(|i| cyl.grid.point(i).to_vec()).collect();
    write_vtk(BufWriter::new(File::create(out.join("u.vtk"))?), &cyl.grid.grid.shape(), &all_points, &cyl.field.values, "u")?;

    let analytic = (matches!(c.data, DataSpec::AxisMode) && c.n == 2 && c.p == 2.0 && r.obstacle.primitives.is_empty())
        .then(|| {
            keep.iter()
                .map(|i| {
                    let x = cyl.grid.point(*i);
                    ((-PI * x.x_n / 2.0).exp() * data(&x) - cyl.field.values[*i]).abs()
                })
                .fold(0.0, f64::max)
        });
    let mut converged = cyl.report.converged;
    let mut report = json!({
        "command": "solve",
        "config": c,
        "cylinder": {
            "length": r.length,
            "nodes": cyl.grid.num_nodes(),
            "shape": cyl.grid.grid.shape(),
            "report": cyl.report,
            "analytic_error": analytic,
        },
    });

    if let Some((bg, ind)) = ball {
        let sol = solve_ball_dirichlet(&ctx, bg, &ind, transformed_data(&r.params, &data), settings(r))?;
        converged &= sol.report.converged;
        let pts: Vec<Vec<f64>> = (0..sol.grid.num_nodes()).map(|i| sol.grid.point(i).xi).collect();
        let hdr = coordinate_header("xi", c.n);
        let hdr: Vec<&str> = hdr.iter().map(String::as_str).collect();
        write_csv(BufWriter::new(File::create(out.join("u_tilde.csv"))?), &hdr, &pts, &sol.field.values)?;
        let hi = r.length.min(4.0);
        let discrepancy = transform_discrepancy(&r.params, &cyl, &sol, 0.0, hi);
        let symmetry = (0..sol.grid.num_nodes())
            .map(|i| (sol.field.values[i] - sol.field.values[sol.grid.reflected_index(i)]).abs())
            .fold(0.0, f64::max);
        let shell = sol.grid.radial_axis().coords[1];
        report["ball"] = json!({
            "nodes": sol.grid.num_nodes(),
            "shape": sol.grid.grid.shape(),
            "report": sol.report,
            "discrepancy": { "band": [0.0, hi], "max": discrepancy },
            "symmetry_error": symmetry,
            "limit_at_infinity": limit_at_infinity(&sol, shell)?,
        });
    }
    report["converged"] = json!(converged);
    report["wall_time_s"] = json!(start.elapsed().as_secs_f64());
    write_json(out, "report.json", &report)?;
    let summary = json!({
        "converged": converged,
        "energy": report["cylinder"]["report"]["energy"],
        "analytic_error": report["cylinder"]["analytic_error"],
        "discrepancy": report["ball"]["discrepancy"]["max"],
    });
    Ok(Outcome { summary, success: converged })
}

fn capacity_json(result: &CapacityResult) -> Value {
    json!({
        "value": result.value,
        "grid_nodes": result.grid_nodes,
        "sensitivity": result.sensitivity,
        "flags": result.flags,
        "converged": result.converged(),
        "report": result.report,
    })
}

fn without_base(f: &ObstacleSet) -> ObstacleSet {
    ObstacleSet { base: false, primitives: f.primitives.clone() }
}

pub fn capacity(r: &Resolved, out: &Path) -> Result<Outcome> {
    let start = Instant::now();
    let c = &r.config;
    let mut report = match c.capacity {
        CapacitySpec::Condenser { r: small, big_r } => {
            let ctx = OperatorContext::new(r.params, c.p)?;
            let res = cap_condenser(&ctx, small, big_r, c.radial_nodes, c.angular_cells)?;
            let exact = condenser_radial_exact(small, big_r, c.p, c.n)?;
            let mut v = capacity_json(&res);
            v["exact"] = json!(exact);
            v["relative_error"] = json!((res.value - exact).abs() / exact);
            v
        }
        CapacitySpec::Cylinder { t } => {
            let opts = CylinderCapacityOptions { resolution: c.resolution, settings: settings(r), ..Default::default() };
            capacity_json(&cap_neumann_cylinder(c.n, &without_base(&r.obstacle), t, c.p, &opts)?)
        }
        CapacitySpec::Sobolev => {
            let opts = SobolevOptions { settings: settings(r), ..Default::default() };
            capacity_json(&sobolev_cp(c.n, &without_base(&r.obstacle), c.p, &opts)?)
        }
    };
    let success = report["converged"].as_bool().unwrap_or(false);
    report["command"] = json!("capacity");
    report["config"] = json!(c);
    report["wall_time_s"] = json!(start.elapsed().as_secs_f64());
    write_json(out, "report.json", &report)?;
    let summary = json!({ "value": report["value"], "converged": success, "flags": report["flags"] });
    Ok(Outcome { summary, success })
}

pub fn wiener(r: &Resolved, out: &Path) -> Result<Outcome> {
    let start = Instant::now();
    let c = &r.config;
    let opts = CylinderCapacityOptions { resolution: c.resolution, settings: settings(r), ..Default::default() };
    let series = if c.jmax >= 4 {
        wiener_series(c.n, &r.obstacle, c.p, c.jmax, &opts)?
    } else {
        let terms = (1..=c.jmax).map(|j| wiener_term(c.n, &r.obstacle, j, c.p, &opts)).collect::<Result<Vec<_>>>()?;
        WienerSeries::from_terms(c.p, terms)
    };
    let verdict = classify_infinity(&series);
    let mut csv = String::from("j,term,powered_term,partial_sum\n");
    for k in 0..series.terms.len() {
        csv += &format!(
            "{},{:.12e},{:.12e},{:.12e}\n",
            k + 1,
            series.terms[k],
            series.powered_terms[k],
            series.partial_sums[k]
        );
    }
    std::fs::write(out.join("wiener.csv"), csv)?;
    let success = !series.flags.iter().any(|f| f.contains("NotConverged"));
    let report = json!({
        "command": "wiener",
        "config": c,
        "series": series,
        "verdict": verdict.verdict,
        "evidence": verdict.evidence,
        "classifier": verdict.settings,
        "wall_time_s": start.elapsed().as_secs_f64(),
    });
    write_json(out, "report.json", &report)?;
    let summary = json!({ "verdict": report["verdict"], "partial_sums": report["series"]["partial_sums"] });
    Ok(Outcome { summary, success })
}

pub fn examples_list() -> Value {
    Value::Array(EXAMPLES.iter().map(|(name, description)| json!({ "name": name, "description": description })).collect())
}
