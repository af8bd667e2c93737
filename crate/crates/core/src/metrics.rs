//! Evaluation quantities for a set of sampler runs: failure rate, prior log-likelihood of
//! the failures found, failures per second, and the grid coverage score C_disp.
//!
//! Coverage is measured in a per-scenario 2-D projection of each failure trajectory
//! ([`Scenario::project`]), normalized to the unit square, so every method run on a
//! scenario is scored on the same grid.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::samplers::{with_thread_pool, SampleBatch};
use crate::scenario::{rollout, Scenario};

/// Grid cells per axis of the default coverage grid.
pub const GRID_CELLS: usize = 50;

/// Summary of one method's pooled draws on one scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub n_samples: usize,
    pub n_failures: usize,
    pub failure_rate: f64,
    /// Mean, standard deviation and maximum of `log p(x)` over failures; `None` without
    /// failures.
    pub mean_ll: Option<f64>,
    pub std_ll: Option<f64>,
    pub max_ll: Option<f64>,
    /// Summed wall time of all batches, in seconds.
    pub total_time: f64,
    pub failures_per_second: f64,
    pub c_disp: f64,
}

impl MetricsReport {
    /// Seconds spent per failure found; `None` without failures.
    pub fn time_per_failure(&self) -> Option<f64> {
        (self.n_failures > 0).then(|| self.total_time / self.n_failures as f64)
    }
}

/// Points at which coverage is scored, with the saturation distance `g`.
#[derive(Debug, Clone, PartialEq)]
pub struct DispersionGrid {
    points: Vec<Vec<f64>>,
    spacing: f64,
}

impl DispersionGrid {
    pub fn new(points: Vec<Vec<f64>>, spacing: f64) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidConfig("dispersion grid has no points".into()));
        }
        if !(spacing > 0.0 && spacing.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "grid spacing must be positive, got {spacing}"
            )));
        }
        let dim = points[0].len();
        if points.iter().any(|p| p.len() != dim) {
            return Err(Error::Shape("grid points differ in dimension".into()));
        }
        Ok(Self { points, spacing })
    }

    /// `cells × cells` cell centres on the unit square, spacing `1 / cells`.
    pub fn unit_square(cells: usize) -> Self {
        assert!(cells > 0, "grid needs at least one cell per axis");
        let g = 1.0 / cells as f64;
        let points = (0..cells)
            .flat_map(|i| (0..cells).map(move |j| vec![(i as f64 + 0.5) * g, (j as f64 + 0.5) * g]))
            .collect();
        Self { points, spacing: g }
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }
}

impl Default for DispersionGrid {
    fn default() -> Self {
        Self::unit_square(GRID_CELLS)
    }
}

/// Mean dispersion `1 − (1/n) Σ_j min(d_j, g)/g`, where `d_j` is the distance from grid
/// point `j` to the nearest failure. Zero without failures.
pub fn mean_dispersion(failures: &[Vec<f64>], grid: &DispersionGrid) -> f64 {
    if failures.is_empty() {
        return 0.0;
    }
    let g = grid.spacing;
    let g2 = g * g;
    let total: f64 = grid
        .points
        .iter()
        .map(|p| {
            let d2 = failures
                .iter()
                .map(|f| p.iter().zip(f).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
                .fold(f64::INFINITY, f64::min);
            if d2 >= g2 {
                1.0
            } else {
                d2.sqrt() / g
            }
        })
        .sum();
    1.0 - total / grid.points.len() as f64
}

/// Projected coordinates of every failing draw, in batch order.
pub fn failure_projections<S: Scenario + ?Sized>(
    scenario: &S,
    batches: &[SampleBatch],
) -> Vec<[f64; 2]> {
    let failures: Vec<&Vec<f64>> = batches
        .iter()
        .flat_map(|b| {
            b.samples
                .iter()
                .zip(&b.failed)
                .filter(|(_, f)| **f)
                .map(|(x, _)| x)
        })
        .collect();
    with_thread_pool(|| {
        failures
            .par_iter()
            .map(|x| scenario.project(&rollout(scenario, x)))
            .collect()
    })
}

/// Pools all reported draws of `batches` and summarizes them.
pub fn failure_statistics<S: Scenario + ?Sized>(
    scenario: &S,
    batches: &[SampleBatch],
    grid: &DispersionGrid,
) -> Result<MetricsReport> {
    if batches.is_empty() {
        return Err(Error::InvalidConfig(
            "no sample batches to summarize".into(),
        ));
    }
    for b in batches {
        b.validate()?;
    }
    let n_samples: usize = batches.iter().map(SampleBatch::len).sum();
    let ll: Vec<f64> = batches
        .iter()
        .flat_map(|b| {
            b.log_prior
                .iter()
                .zip(&b.failed)
                .filter(|(_, f)| **f)
                .map(|(l, _)| *l)
        })
        .collect();
    let total_time: f64 = batches.iter().map(|b| b.wall_time).sum();
    let projected: Vec<Vec<f64>> = failure_projections(scenario, batches)
        .into_iter()
        .map(Vec::from)
        .collect();
    let (mean_ll, std_ll, max_ll) = ll_summary(&ll);
    Ok(MetricsReport {
        n_samples,
        n_failures: ll.len(),
        failure_rate: if n_samples == 0 {
            0.0
        } else {
            ll.len() as f64 / n_samples as f64
        },
        mean_ll,
        std_ll,
        max_ll,
        total_time,
        failures_per_second: if total_time > 0.0 {
            ll.len() as f64 / total_time
        } else {
            0.0
        },
        c_disp: mean_dispersion(&projected, grid),
    })
}

/// Mean, population standard deviation and maximum.
fn ll_summary(ll: &[f64]) -> (Option<f64>, Option<f64>, Option<f64>) {
    if ll.is_empty() {
        return (None, None, None);
    }
    let n = ll.len() as f64;
    let mean = ll.iter().sum::<f64>() / n;
    let var = ll.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let max = ll.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (Some(mean), Some(var.sqrt()), Some(max))
}

/// One row of a comparison table.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub method: String,
    pub report: MetricsReport,
    /// Failure rate relative to the smallest positive rate in the table.
    pub rate_ratio: Option<f64>,
}

/// Rows ordered by method name.
pub fn compare_report(reports: &BTreeMap<String, MetricsReport>) -> Vec<ComparisonRow> {
    let floor = reports
        .values()
        .map(|r| r.failure_rate)
        .filter(|&r| r > 0.0)
        .fold(f64::INFINITY, f64::min);
    reports
        .iter()
        .map(|(method, report)| ComparisonRow {
            method: method.clone(),
            report: report.clone(),
            rate_ratio: floor.is_finite().then(|| report.failure_rate / floor),
        })
        .collect()
}

/// Header of [`comparison_csv`].
pub const COMPARISON_HEADER: &str = "method,n_samples,n_failures,failure_rate,mean_ll,std_ll,max_ll,time_per_failure,c_disp,rate_ratio";

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |v| format!("{v}"))
}

fn opt_fixed(v: Option<f64>, prec: usize) -> String {
    v.map_or_else(|| "NA".to_string(), |v| format!("{v:.prec$}"))
}

/// The table as CSV, one row per method.
pub fn comparison_csv(rows: &[ComparisonRow]) -> String {
    let mut out = String::from(COMPARISON_HEADER);
    out.push('\n');
    for row in rows {
        let r = &row.report;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            row.method,
            r.n_samples,
            r.n_failures,
            r.failure_rate,
            opt(r.mean_ll),
            opt(r.std_ll),
            opt(r.max_ll),
            opt(r.time_per_failure()),
            r.c_disp,
            opt(row.rate_ratio)
        );
    }
    out
}

/// The table with aligned columns for terminals.
pub fn comparison_text(rows: &[ComparisonRow]) -> String {
    let header = [
        "method",
        "samples",
        "failures",
        "rate",
        "mean LL",
        "max LL",
        "s/failure",
        "C_disp",
        "ratio",
    ];
    let cells: Vec<[String; 9]> = rows
        .iter()
        .map(|row| {
            let r = &row.report;
            [
                row.method.clone(),
                r.n_samples.to_string(),
                r.n_failures.to_string(),
                format!("{:.3e}", r.failure_rate),
                opt_fixed(r.mean_ll, 2),
                opt_fixed(r.max_ll, 2),
                r.time_per_failure()
                    .map_or_else(|| "NA".into(), |t| format!("{t:.3e}")),
                format!("{:.3}", r.c_disp),
                opt_fixed(row.rate_ratio, 1),
            ]
        })
        .collect();
    let widths: Vec<usize> = (0..header.len())
        .map(|c| {
            cells
                .iter()
                .map(|r| r[c].len())
                .chain([header[c].len()])
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut out = String::new();
    let line = |out: &mut String, fields: &mut dyn Iterator<Item = &str>| {
        let parts: Vec<String> = fields
            .zip(&widths)
            .enumerate()
            .map(|(i, (f, w))| {
                if i == 0 {
                    format!("{f:<w$}")
                } else {
                    format!("{f:>w$}")
                }
            })
            .collect();
        out.push_str(parts.join("  ").trim_end());
        out.push('\n');
    };
    line(&mut out, &mut header.iter().copied());
    for r in &cells {
        line(&mut out, &mut r.iter().map(String::as_str));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::samplers::ChainStats;

    fn batch(failed: Vec<bool>, log_prior: Vec<f64>) -> SampleBatch {
        let n = failed.len();
        SampleBatch {
            chain_id: 0,
            samples: vec![vec![0.0]; n],
            log_posterior: vec![0.0; n],
            log_prior,
            failed,
            wall_time: 2.0,
            stats: ChainStats::default(),
        }
    }

    #[test]
    fn two_point_line() {
        let grid = DispersionGrid::new(vec![vec![0.0], vec![1.0]], 1.0).unwrap();
        assert_eq!(mean_dispersion(&[vec![0.0]], &grid), 0.5);
        assert_eq!(mean_dispersion(&[], &grid), 0.0);
    }

    #[test]
    fn full_coverage() {
        let grid = DispersionGrid::unit_square(4);
        assert_eq!(mean_dispersion(grid.points(), &grid), 1.0);
    }

    #[test]
    fn unit_square_layout() {
        let grid = DispersionGrid::unit_square(50);
        assert_eq!(grid.points().len(), 2500);
        assert_eq!(grid.spacing(), 0.02);
        assert!((grid.points()[0][0] - 0.01).abs() < 1e-15);
    }

    #[test]
    fn degenerate_grids_rejected() {
        assert!(DispersionGrid::new(vec![], 1.0).is_err());
        assert!(DispersionGrid::new(vec![vec![0.0]], 0.0).is_err());
        assert!(DispersionGrid::new(vec![vec![0.0], vec![0.0, 1.0]], 1.0).is_err());
    }

    #[test]
    fn ll_statistics() {
        let (m, s, x) = ll_summary(&[-1.0, -3.0]);
        assert_eq!((m, s, x), (Some(-2.0), Some(1.0), Some(-1.0)));
        assert_eq!(ll_summary(&[]), (None, None, None));
    }

    #[test]
    fn ratio_column() {
        let base = batch(vec![true], vec![0.0]);
        let toy = crate::environments::Toy::default();
        let r = failure_statistics(&toy, &[base], &DispersionGrid::default()).unwrap();
        let mut reports = BTreeMap::new();
        reports.insert(
            "hmc".to_string(),
            MetricsReport {
                failure_rate: 0.9,
                ..r.clone()
            },
        );
        reports.insert(
            "mc".to_string(),
            MetricsReport {
                failure_rate: 0.01,
                ..r
            },
        );
        let rows = compare_report(&reports);
        assert_eq!(rows[0].method, "hmc");
        assert!((rows[0].rate_ratio.unwrap() - 90.0).abs() < 1e-9);
        assert_eq!(rows[1].rate_ratio, Some(1.0));
        let csv = comparison_csv(&rows);
        assert_eq!(csv.lines().count(), 3);
        assert!(comparison_text(&rows)
            .lines()
            .next()
            .unwrap()
            .starts_with("method"));
    }

    #[test]
    fn all_zero_rates_have_no_ratio() {
        let toy = crate::environments::Toy::default();
        let r = failure_statistics(
            &toy,
            &[batch(vec![false], vec![0.0])],
            &DispersionGrid::default(),
        )
        .unwrap();
        assert_eq!(r.mean_ll, None);
        let rows = compare_report(&BTreeMap::from([("mc".to_string(), r)]));
        assert_eq!(rows[0].rate_ratio, None);
        assert!(comparison_csv(&rows).contains(",NA"));
    }
}
