//! Work counters across population sizes and their fits against `log2 n`.

use std::io::Write;

use serde::Serialize;

use crate::error::Result;
use crate::geometry::{subdivision_guarantee, Theta};
use crate::octree::Octree;
use crate::plasticity::{connectivity_update, resolve_proposals, AggregateStats, SearchConfig};
use crate::population::{Population, VacancyProfile};
use crate::rng::KeyedRng;

use super::Check;

/// Least-squares line `y = intercept + slope * x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Needs at least two distinct `x` values.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Option<LinearFit> {
    let n = xs.len();
    if n < 2 || n != ys.len() {
        return None;
    }
    let mx = xs.iter().sum::<f64>() / n as f64;
    let my = ys.iter().sum::<f64>() / n as f64;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    if sxx <= 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let r_squared = if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 };
    Some(LinearFit {
        slope,
        intercept: my - slope * mx,
        r_squared,
    })
}

/// One population size at one theta.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalingRow {
    pub n: usize,
    pub theta: f64,
    pub stats: AggregateStats,
    pub tree_height: u32,
    pub steps: u64,
}

impl ScalingRow {
    pub fn mean_first(&self) -> f64 {
        self.stats.mean_first()
    }

    pub fn mean_subsequent(&self) -> f64 {
        self.stats.mean_subsequent()
    }

    /// Search work per update step.
    pub fn total_work(&self) -> f64 {
        self.stats.search_work() as f64 / self.steps as f64
    }

    fn log_n(&self) -> f64 {
        (self.n as f64).log2()
    }

    pub fn work_per_nlogn(&self) -> f64 {
        self.total_work() / (self.n as f64 * self.log_n())
    }

    pub fn work_per_nlog2n(&self) -> f64 {
        self.total_work() / (self.n as f64 * self.log_n() * self.log_n())
    }
}

#[derive(Serialize)]
struct AggregateCsvRow {
    n: usize,
    theta: f64,
    mean_first: f64,
    mean_subsequent: f64,
    total_work: f64,
}

/// Fits for one theta over every measured size.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThetaFit {
    pub theta: f64,
    pub sizes: usize,
    /// `total_work / n` against `log2 n`.
    pub work_slope: f64,
    pub work_intercept: f64,
    pub work_r_squared: f64,
    /// Mean first-descent inspections against `log2 n`.
    pub first_slope: f64,
    pub first_r_squared: f64,
    /// Mean subsequent-descent inspections against `log2 n`.
    pub subsequent_slope: f64,
    /// max/min of `total_work / (n log2 n)`.
    pub nlogn_spread: f64,
    /// max/min of `total_work / (n log2^2 n)`.
    pub nlog2n_spread: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScalingReport {
    /// Sorted by theta, then n.
    pub rows: Vec<ScalingRow>,
    pub fits: Vec<ThetaFit>,
}

impl ScalingReport {
    pub fn new(mut rows: Vec<ScalingRow>) -> Self {
        rows.sort_by(|a, b| a.theta.total_cmp(&b.theta).then(a.n.cmp(&b.n)));
        let mut fits = Vec::new();
        for group in rows.chunk_by(|a, b| a.theta == b.theta) {
            if let Some(fit) = fit_group(group) {
                fits.push(fit);
            }
        }
        Self { rows, fits }
    }

    pub fn rows_for(&self, theta: f64) -> impl Iterator<Item = &ScalingRow> {
        self.rows.iter().filter(move |r| r.theta == theta)
    }

    pub fn fit_for(&self, theta: f64) -> Option<&ThetaFit> {
        self.fits.iter().find(|f| f.theta == theta)
    }

    /// Columns n, theta, mean_first, mean_subsequent, total_work.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for r in &self.rows {
            w.serialize(AggregateCsvRow {
                n: r.n,
                theta: r.theta,
                mean_first: r.mean_first(),
                mean_subsequent: r.mean_subsequent(),
                total_work: r.total_work(),
            })?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_fit_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for f in &self.fits {
            w.serialize(f)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Per-descent bounds, flat subsequent work, logarithmic first descent
    /// and the `n log n` work signature.
    pub fn checks(&self) -> Vec<Check> {
        let mut checks = Vec::new();
        for r in &self.rows {
            let Ok(theta) = Theta::new(r.theta) else { continue };
            let Ok(g) = subdivision_guarantee(theta) else { continue };
            let s = &r.stats;
            let row = format!("n={} theta={}", r.n, r.theta);
            checks.push(Check::new(
                format!("per-descent bound {row}"),
                s.max_subsequent_inspected <= g.node_bound && r.mean_subsequent() <= g.node_bound as f64,
                format!(
                    "max inspected {} mean {:.3} bound {}",
                    s.max_subsequent_inspected,
                    r.mean_subsequent(),
                    g.node_bound
                ),
            ));
            if g.depth == 1 {
                checks.push(Check::new(
                    format!("no pushes after first descent {row}"),
                    s.max_subsequent_pushes == 0,
                    format!("max pushes {}", s.max_subsequent_pushes),
                ));
            }
            checks.push(Check::new(
                format!("path length {row}"),
                s.max_path_length <= u64::from(r.tree_height) + 1,
                format!("longest path {} height {}", s.max_path_length, r.tree_height),
            ));
        }
        for f in &self.fits {
            if f.sizes < 4 {
                continue;
            }
            checks.push(Check::new(
                format!("flat subsequent work theta={}", f.theta),
                f.subsequent_slope.abs() <= 0.05,
                format!("slope {:.4} per doubling (limit 0.05)", f.subsequent_slope),
            ));
            checks.push(Check::new(
                format!("first descent grows with log n theta={}", f.theta),
                f.first_slope > 0.0 && f.first_r_squared >= 0.9,
                format!("slope {:.2} R^2 {:.4}", f.first_slope, f.first_r_squared),
            ));
            checks.push(Check::new(
                format!("n log n work theta={}", f.theta),
                f.nlogn_spread <= 1.25,
                format!("max/min of W/(n log n) = {:.4} (limit 1.25)", f.nlogn_spread),
            ));
        }
        checks
    }
}

fn spread(values: impl Iterator<Item = f64>) -> f64 {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    hi / lo
}

fn fit_group(group: &[ScalingRow]) -> Option<ThetaFit> {
    let xs: Vec<f64> = group.iter().map(ScalingRow::log_n).collect();
    let per_n: Vec<f64> = group.iter().map(|r| r.total_work() / r.n as f64).collect();
    let first: Vec<f64> = group.iter().map(ScalingRow::mean_first).collect();
    let sub: Vec<f64> = group.iter().map(ScalingRow::mean_subsequent).collect();
    let work = linear_fit(&xs, &per_n)?;
    let first = linear_fit(&xs, &first)?;
    let sub = linear_fit(&xs, &sub)?;
    Some(ThetaFit {
        theta: group[0].theta,
        sizes: group.len(),
        work_slope: work.slope,
        work_intercept: work.intercept,
        work_r_squared: work.r_squared,
        first_slope: first.slope,
        first_r_squared: first.r_squared,
        subsequent_slope: sub.slope,
        nlogn_spread: spread(group.iter().map(ScalingRow::work_per_nlogn)),
        nlog2n_spread: spread(group.iter().map(ScalingRow::work_per_nlog2n)),
    })
}

/// Runs `steps` update steps on `population` and sums the counters.
/// Between steps proposals are resolved and `profile` adds new elements.
pub fn measure(mut population: Population, theta: Theta, sigma: f64, seed: u64, steps: u64, profile: &VacancyProfile) -> Result<ScalingRow> {
    let config = SearchConfig::new(theta, sigma, seed)?;
    let mut tree = Octree::build(population.neurons(), population.bounds())?;
    let mut stats = AggregateStats::default();
    for step in 0..steps {
        let outcome = connectivity_update(&population, &mut tree, &config, step)?;
        stats.merge(&outcome.stats);
        if step + 1 < steps {
            let keys = KeyedRng::new(seed, step);
            resolve_proposals(&outcome.proposals, &mut population, &keys);
            population.replenish(profile, seed, step + 1);
        }
    }
    Ok(ScalingRow {
        n: population.len(),
        theta: theta.value(),
        stats,
        tree_height: tree.height(),
        steps,
    })
}
