use std::path::{Path, PathBuf};

use mixedcap::geometry::ObstacleSet;
use mixedcap::transform::{CylPoint, TransformParams};
use mixedcap::wiener::{example_shrinking_balls, example_slabs};
use mixedcap::{Error, Result};
use serde::{Deserialize, Serialize};

/// One run, read from a single JSON document. Every field has a default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub n: usize,
    pub p: f64,
    pub kappa: f64,
    /// Cross-section nodes of the cylinder grid used by `solve`.
    pub cross_nodes: usize,
    /// Axial nodes of the cylinder grid used by `solve`.
    pub axial_nodes: usize,
    /// Truncation height `L` of the cylinder used by `solve`; `None` means twice the axial
    /// extent of the obstacle plus `10 / kappa`.
    pub length: Option<f64>,
    pub radial_nodes: usize,
    pub angular_cells: usize,
    /// Nodes per unit length for capacity and Wiener computations.
    pub resolution: usize,
    /// Obstacle file, relative to the config file.
    pub obstacle: Option<PathBuf>,
    /// Builtin obstacle generator, see `examples list`.
    pub example: Option<String>,
    pub example_radius: f64,
    pub data: DataSpec,
    /// Any of `cylinder`, `ball`.
    pub formulations: Vec<String>,
    pub capacity: CapacitySpec,
    pub jmax: usize,
    pub seed: u64,
    pub samples: usize,
    pub threads: Option<usize>,
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            n: 2,
            p: 2.0,
            kappa: 1.0,
            cross_nodes: 64,
            axial_nodes: 256,
            length: None,
            radial_nodes: 300,
            angular_cells: 128,
            resolution: 16,
            obstacle: None,
            example: None,
            example_radius: 0.5,
            data: DataSpec::default(),
            formulations: vec!["cylinder".into()],
            capacity: CapacitySpec::default(),
            jmax: 12,
            seed: 0,
            samples: 10_000,
            threads: None,
            tolerance: 1e-8,
            max_iterations: 100_000,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DataSpec {
    Constant { value: f64 },
    /// `cos(pi (x_1 + 1) / 2)`.
    #[default]
    AxisMode,
    /// Two-column CSV `s,value`, interpolated linearly in `s = x_1` (n = 2) or `s = |x'|`.
    Table { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum CapacitySpec {
    /// Weighted condenser `cap_{p,w~}(B_r, B_R)`.
    Condenser {
        r: f64,
        #[serde(rename = "R")]
        big_r: f64,
    },
    /// Neumann cylinder capacity of the obstacle primitives above height `t`.
    Cylinder { t: f64 },
    /// Sobolev capacity of the obstacle primitives.
    Sobolev,
}

impl Default for CapacitySpec {
    fn default() -> Self {
        CapacitySpec::Condenser { r: 0.25, big_r: 0.5 }
    }
}

/// Builtin obstacle generators.
pub const EXAMPLES: [(&str, &str); 2] = [
    ("shrinking-balls", "balls of radius 2^-i centered at height i + 1/2 on the axis (needs 1 < p < n)"),
    ("slabs", "slabs B'(0, example_radius) x [j, j+1], j = 1..jmax"),
];

/// Data after validation: the config plus everything it refers to.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub config: RunConfig,
    pub params: TransformParams,
    pub obstacle: ObstacleSet,
    pub table: Option<Vec<(f64, f64)>>,
    /// Effective truncation height.
    pub length: f64,
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}

pub fn load(path: Option<&Path>) -> Result<(RunConfig, PathBuf)> {
    match path {
        None => Ok((RunConfig::default(), PathBuf::from("."))),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::Io(format!("{}: {e}", p.display())))?;
            let cfg: RunConfig = serde_json::from_str(&text)?;
            let base = p.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."));
            Ok((cfg, base))
        }
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(invalid(format!("{name} must be positive and finite, got {v}")))
    }
}

fn read_table(path: &Path) -> Result<Vec<(f64, f64)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    let mut rows = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split(',').map(str::trim).collect();
        let parsed = (cols.len() == 2).then(|| (cols[0].parse::<f64>(), cols[1].parse::<f64>()));
        match parsed {
            Some((Ok(s), Ok(v))) if s.is_finite() && v.is_finite() => rows.push((s, v)),
            _ if k == 0 => continue,
            _ => return Err(Error::Parse(format!("{}: bad row {}", path.display(), k + 1))),
        }
    }
    if rows.is_empty() {
        return Err(Error::Parse(format!("{}: no data rows", path.display())));
    }
    if rows.windows(2).any(|w| w[1].0 <= w[0].0) {
        return Err(invalid(format!("{}: abscissae must increase strictly", path.display())));
    }
    Ok(rows)
}

/// Checks every parameter and loads every referenced file; nothing is computed or written.
pub fn resolve(config: RunConfig, base: &Path) -> Result<Resolved> {
    let c = &config;
    if c.n < 2 {
        return Err(invalid(format!("dimension n must be >= 2, got {}", c.n)));
    }
    if !(c.p.is_finite() && c.p > 1.0) {
        return Err(invalid(format!("p must exceed 1, got {}", c.p)));
    }
    positive("kappa", c.kappa)?;
    if let Some(l) = c.length {
        positive("length", l)?;
    }
    positive("example_radius", c.example_radius)?;
    positive("tolerance", c.tolerance)?;
    if c.cross_nodes < 3 || c.axial_nodes < 3 || c.radial_nodes < 3 || c.resolution < 2 {
        return Err(invalid("grid sizes must be at least 3 nodes (resolution at least 2)"));
    }
    if c.angular_cells < 8 || c.angular_cells % 4 != 0 {
        return Err(invalid("angular_cells must be a multiple of 4, at least 8"));
    }
    if c.max_iterations == 0 || c.samples == 0 || c.jmax == 0 {
        return Err(invalid("max_iterations, samples and jmax must be positive"));
    }
    if c.threads == Some(0) {
        return Err(invalid("threads must be positive"));
    }
    for f in &c.formulations {
        if f != "cylinder" && f != "ball" {
            return Err(invalid(format!("unknown formulation {f:?}")));
        }
    }
    match c.capacity {
        CapacitySpec::Condenser { r, big_r } => {
            positive("r", r)?;
            positive("R", big_r)?;
            if r >= big_r {
                return Err(invalid(format!("condenser needs r < R, got r = {r}, R = {big_r}")));
            }
        }
        CapacitySpec::Cylinder { t } if !(t.is_finite() && t >= 0.0) => {
            return Err(invalid(format!("capacity height t must be >= 0, got {t}")));
        }
        _ => {}
    }
    let params = TransformParams::new(c.n, c.kappa)?;
    let obstacle = match (&c.obstacle, &c.example) {
        (Some(_), Some(_)) => return Err(invalid("give either obstacle or example, not both")),
        (Some(path), None) => {
            let full = base.join(path);
            let text = std::fs::read_to_string(&full).map_err(|e| Error::Io(format!("{}: {e}", full.display())))?;
            ObstacleSet::from_json(&text)?
        }
        (None, Some(name)) => match name.as_str() {
            "shrinking-balls" => example_shrinking_balls(c.n, c.p, c.jmax)?,
            "slabs" => example_slabs(c.n, c.example_radius, c.jmax)?,
            other => return Err(invalid(format!("unknown example {other:?}"))),
        },
        (None, None) => ObstacleSet::base_only(),
    };
    obstacle.validate(c.n)?;
    let table = match &c.data {
        DataSpec::Table { path } => Some(read_table(&base.join(path))?),
        DataSpec::Constant { value } if !value.is_finite() => return Err(invalid("constant data must be finite")),
        _ => None,
    };
    let length = c.length.unwrap_or(2.0 * obstacle.axial_extent() + 10.0 / c.kappa);
    Ok(Resolved { config, params, obstacle, table, length })
}

impl Resolved {
    /// Boundary data `f` as a function on the closed cylinder.
    pub fn data(&self) -> impl Fn(&CylPoint) -> f64 + '_ {
        move |x: &CylPoint| match &self.config.data {
            DataSpec::Constant { value } => *value,
            DataSpec::AxisMode => (std::f64::consts::PI * (x.x_prime[0] + 1.0) / 2.0).cos(),
            DataSpec::Table { .. } => {
                let s = if self.config.n == 2 { x.x_prime[0] } else { x.radial() };
                interpolate(self.table.as_deref().unwrap_or(&[]), s)
            }
        }
    }
}

fn interpolate(rows: &[(f64, f64)], s: f64) -> f64 {
    let k = rows.partition_point(|r| r.0 <= s);
    if k == 0 {
        return rows[0].1;
    }
    if k == rows.len() {
        return rows[k - 1].1;
    }
    let (a, b) = (rows[k - 1], rows[k]);
    a.1 + (b.1 - a.1) * (s - a.0) / (b.0 - a.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn check(json: &str) -> Result<Resolved> {
        let cfg: RunConfig = serde_json::from_str(json)?;
        resolve(cfg, Path::new("."))
    }

    #[test]
    fn defaults_resolve() {
        let r = check("{}").unwrap();
        assert_eq!(r.config.n, 2);
        assert!(r.obstacle.base && r.obstacle.primitives.is_empty());
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(check(r#"{"n": 1}"#).is_err());
        assert!(check(r#"{"kappa": 0.0}"#).is_err());
        assert!(check(r#"{"p": 1.0}"#).is_err());
        assert!(check(r#"{"capacity": {"kind": "condenser", "r": 0.5, "R": 0.5}}"#).is_err());
        assert!(check(r#"{"obstacle": "does/not/exist.json"}"#).is_err());
        assert!(check(r#"{"example": "nope"}"#).is_err());
        assert!(check(r#"{"unknown_field": 1}"#).is_err());
        assert!(check(r#"{"angular_cells": 30}"#).is_err());
    }

    #[test]
    fn table_interpolation() {
        let rows = [(0.0, 1.0), (1.0, 3.0)];
        assert_eq!(interpolate(&rows, -1.0), 1.0);
        assert_eq!(interpolate(&rows, 0.5), 2.0);
        assert_eq!(interpolate(&rows, 2.0), 3.0);
    }
}
