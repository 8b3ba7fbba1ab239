//! Wiener-type series at infinity: per-band capacities of `F`, the powered series and a
//! finite-range divergence heuristic.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::capacity::{cap_neumann_cylinder, CylinderCapacityOptions};
use crate::error::{invalid, Result};
use crate::geometry::{annular_piece, CrossSection, ObstacleSet, Primitive};

/// `cap_{p,G_{j-1}}(F ∩ (closed G_j \ G_{2j}))`.
pub fn wiener_term(n: usize, f: &ObstacleSet, j: usize, p: f64, opts: &CylinderCapacityOptions) -> Result<f64> {
    let piece = annular_piece(f, j)?;
    if piece.primitives.is_empty() {
        return Ok(0.0);
    }
    Ok(cap_neumann_cylinder(n, &piece, j as f64 - 1.0, p, opts)?.value)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WienerSeries {
    pub p: f64,
    pub j_range: [usize; 2],
    pub terms: Vec<f64>,
    pub powered_terms: Vec<f64>,
    pub partial_sums: Vec<f64>,
    /// Flags raised by individual capacity solves, tagged with `j`.
    pub flags: Vec<String>,
}

impl WienerSeries {
    pub fn from_terms(p: f64, terms: Vec<f64>) -> Self {
        let powered: Vec<f64> = terms.iter().map(|t| t.max(0.0).powf(1.0 / (p - 1.0))).collect();
        let mut acc = 0.0;
        let partial_sums = powered
            .iter()
            .map(|v| {
                acc += v;
                acc
            })
            .collect();
        Self { p, j_range: [1, terms.len()], terms, powered_terms: powered, partial_sums, flags: Vec::new() }
    }

    pub fn jmax(&self) -> usize {
        self.terms.len()
    }
}

/// Series for `j = 1..=jmax`, terms evaluated as parallel jobs.
pub fn wiener_series(n: usize, f: &ObstacleSet, p: f64, jmax: usize, opts: &CylinderCapacityOptions) -> Result<WienerSeries> {
    if jmax < 4 {
        return Err(invalid("the series needs Jmax >= 4"));
    }
    if !(p > 1.0) {
        return Err(invalid("p must exceed 1"));
    }
    f.validate(n)?;
    let results: Vec<Result<(f64, Vec<String>)>> = (1..=jmax)
        .into_par_iter()
        .map(|j| {
            let piece = annular_piece(f, j)?;
            if piece.primitives.is_empty() {
                return Ok((0.0, Vec::new()));
            }
            let r = cap_neumann_cylinder(n, &piece, j as f64 - 1.0, p, opts)?;
            Ok((r.value, r.flags.iter().map(|fl| format!("j={j}: {fl}")).collect()))
        })
        .collect();
    let mut terms = Vec::with_capacity(jmax);
    let mut flags = Vec::new();
    for r in results {
        let (v, fl) = r?;
        terms.push(v);
        flags.extend(fl);
    }
    let mut s = WienerSeries::from_terms(p, terms);
    s.flags = flags;
    Ok(s)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Regular,
    Irregular,
    Inconclusive,
}

/// Thresholds of the divergence heuristic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassifierSettings {
    pub min_terms: usize,
    /// Terms over the last half must stay above this fraction of the median.
    pub floor_fraction: f64,
    /// Partial-sum growth over the last half relative to linear growth.
    pub linear_growth: f64,
    /// Largest fitted per-step ratio accepted as geometric decay.
    pub decay_ratio: f64,
    pub min_r_squared: f64,
}

impl Default for ClassifierSettings {
    fn default() -> Self {
        Self { min_terms: 8, floor_fraction: 0.1, linear_growth: 0.5, decay_ratio: 0.9, min_r_squared: 0.95 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

fn fit(xs: &[f64], ys: &[f64]) -> Option<LinearFit> {
    let n = xs.len() as f64;
    if xs.len() < 2 {
        return None;
    }
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let r_squared = if syy == 0.0 { 1.0 } else { (sxy * sxy) / (sxx * syy) };
    Some(LinearFit { slope, intercept: my - slope * mx, r_squared })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evidence {
    pub jmax: usize,
    /// Fit of `log(powered_j)` against `j` over the positive terms.
    pub geometric_fit: Option<LinearFit>,
    /// `exp(slope)` of the geometric fit.
    pub decay_ratio: Option<f64>,
    /// `-slope` of the geometric fit: decay exponent per step.
    pub decay_exponent: Option<f64>,
    /// Fit of `log(powered_j)` against `log j`.
    pub power_fit: Option<LinearFit>,
    pub median: f64,
    pub tail_minimum: f64,
    /// Partial-sum increase over the last half relative to linear growth at the mean rate.
    pub tail_growth: f64,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegularityVerdict {
    pub verdict: Verdict,
    pub evidence: Evidence,
    pub settings: ClassifierSettings,
}

pub fn classify_infinity(series: &WienerSeries) -> RegularityVerdict {
    classify_with(series, ClassifierSettings::default())
}

pub fn classify_with(series: &WienerSeries, settings: ClassifierSettings) -> RegularityVerdict {
    let terms = &series.powered_terms;
    let jmax = terms.len();
    let mut evidence = Evidence {
        jmax,
        geometric_fit: None,
        decay_ratio: None,
        decay_exponent: None,
        power_fit: None,
        median: 0.0,
        tail_minimum: 0.0,
        tail_growth: 0.0,
        notes: Vec::new(),
    };
    let done = |verdict, evidence| RegularityVerdict { verdict, evidence, settings };
    if jmax > 0 && terms.iter().all(|t| *t == 0.0) {
        evidence.notes.push("all terms vanish: F is bounded beyond the computed range and the sum converges".into());
        return done(Verdict::Irregular, evidence);
    }
    if jmax < settings.min_terms {
        evidence.notes.push(format!("only {jmax} terms; at least {} are needed", settings.min_terms));
        return done(Verdict::Inconclusive, evidence);
    }
    let mut sorted = terms.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = if jmax % 2 == 1 { sorted[jmax / 2] } else { 0.5 * (sorted[jmax / 2 - 1] + sorted[jmax / 2]) };
    let h = jmax / 2;
    let tail = &terms[h..];
    let tail_min = tail.iter().cloned().fold(f64::INFINITY, f64::min);
    let s_j = series.partial_sums[jmax - 1];
    let s_h = if h == 0 { 0.0 } else { series.partial_sums[h - 1] };
    let tail_growth = if s_j > 0.0 { (s_j - s_h) / ((jmax - h) as f64 * s_j / jmax as f64) } else { 0.0 };
    evidence.median = median;
    evidence.tail_minimum = tail_min;
    evidence.tail_growth = tail_growth;

    let (xs, ys): (Vec<f64>, Vec<f64>) = terms
        .iter()
        .enumerate()
        .filter(|(_, t)| **t > 0.0)
        .map(|(i, t)| ((i + 1) as f64, t.ln()))
        .unzip();
    evidence.geometric_fit = fit(&xs, &ys);
    let logx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    evidence.power_fit = fit(&logx, &ys);
    if let Some(g) = evidence.geometric_fit {
        evidence.decay_ratio = Some(g.slope.exp());
        evidence.decay_exponent = Some(-g.slope);
    }

    if median > 0.0 && tail_min >= settings.floor_fraction * median && tail_growth >= settings.linear_growth {
        return done(Verdict::Regular, evidence);
    }
    if let Some(g) = evidence.geometric_fit {
        if g.slope.exp() <= settings.decay_ratio && g.r_squared >= settings.min_r_squared && xs.len() >= settings.min_terms {
            return done(Verdict::Irregular, evidence);
        }
    }
    evidence.notes.push("neither sustained growth nor confident geometric decay".into());
    done(Verdict::Inconclusive, evidence)
}

/// Base plate plus balls `B(z^i, 2^{-i})`, `z^i = (0, i + 1/2)`, for `i = 1..=2 jmax`.
pub fn example_shrinking_balls(n: usize, p: f64, jmax: usize) -> Result<ObstacleSet> {
    if n < 2 {
        return Err(invalid("dimension must be >= 2"));
    }
    if !(p > 1.0 && p < n as f64) {
        return Err(invalid(format!("shrinking balls need 1 < p < n, got p = {p}, n = {n}")));
    }
    let primitives = (1..=2 * jmax)
        .map(|i| {
            let mut c = vec![0.0; n];
            c[n - 1] = i as f64 + 0.5;
            Primitive::ball(c, 0.5f64.powi(i as i32))
        })
        .collect();
    Ok(ObstacleSet::with_primitives(primitives))
}

/// Base plate plus slabs `E x [j, j+1]`, `E` the centered sub-ball of the given radius,
/// for `j = 1..=jmax`.
pub fn example_slabs(n: usize, cross_section_radius: f64, jmax: usize) -> Result<ObstacleSet> {
    if n < 2 {
        return Err(invalid("dimension must be >= 2"));
    }
    if !(cross_section_radius > 0.0 && cross_section_radius <= 1.0) {
        return Err(invalid("cross-section radius must lie in (0, 1]"));
    }
    let cross = if cross_section_radius == 1.0 {
        CrossSection::FullDisk
    } else {
        CrossSection::SubBall { center: vec![0.0; n - 1], radius: cross_section_radius }
    };
    let primitives = (1..=jmax)
        .map(|j| Primitive::Slab { cross: cross.clone(), interval: [j as f64, j as f64 + 1.0] })
        .collect();
    Ok(ObstacleSet::with_primitives(primitives))
}
