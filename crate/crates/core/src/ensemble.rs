//! Monte Carlo sweeps over `(N, c)` scenarios and their summaries.
//!
//! Every run gets its own seed, derived from the sweep's base seed and the
//! run's `(N, c, run_index)` key, so results do not depend on scheduling.

use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{EpisodeConfig, Scenario};
use crate::{Error, Result};

fn default_runs() -> usize {
    1000
}

/// A grid of scenarios sharing one episode template.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSweep {
    pub agents: Vec<usize>,
    pub grid_dims: Vec<usize>,
    #[serde(default = "default_runs")]
    pub runs: usize,
    #[serde(default)]
    pub base_seed: u64,
    /// Episode parameters; `agents`, `grid_dim` and `seed` are overridden per run.
    #[serde(default)]
    pub template: EpisodeConfig,
}

impl ScenarioSweep {
    /// The full experiment grid: `N in 2..=14`, `c in {5, 8, 10, 12, 15, 20}`.
    pub fn full(runs: usize, base_seed: u64) -> Self {
        Self {
            agents: (2..=14).collect(),
            grid_dims: vec![5, 8, 10, 12, 15, 20],
            runs,
            base_seed,
            template: EpisodeConfig::default(),
        }
    }

    /// Validated scenarios in output order (`agents` outer, `grid_dims` inner).
    pub fn scenarios(&self) -> Result<Vec<Scenario>> {
        if self.agents.is_empty() {
            return Err(Error::config(
                "agents",
                "sweep needs at least one agent count",
            ));
        }
        if self.grid_dims.is_empty() {
            return Err(Error::config(
                "grid_dims",
                "sweep needs at least one grid size",
            ));
        }
        if self.runs == 0 {
            return Err(Error::config("runs", "must be at least 1"));
        }
        if self.runs as u64 > u64::from(u32::MAX) {
            return Err(Error::config("runs", "must fit in 32 bits"));
        }
        let mut out = Vec::with_capacity(self.agents.len() * self.grid_dims.len());
        for &n in &self.agents {
            if n > usize::from(u16::MAX) {
                return Err(Error::config("agents", format!("{n} exceeds 65535")));
            }
            for &c in &self.grid_dims {
                if c > usize::from(u16::MAX) {
                    return Err(Error::config("grid_dims", format!("{c} exceeds 65535")));
                }
                let cfg = EpisodeConfig {
                    agents: n,
                    grid_dim: c,
                    record_history: false,
                    ..self.template.clone()
                };
                out.push(cfg.prepare()?);
            }
        }
        Ok(out)
    }
}

/// SplitMix64 finalizer; a bijection on `u64`.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of run `run` in scenario `(agents, grid_dim)`.
///
/// The key `agents << 48 | grid_dim << 32 | run` is injective for values in
/// range, and mixing plus xor with the base seed are bijections, so seeds are
/// distinct within a sweep.
pub fn run_seed(base_seed: u64, agents: usize, grid_dim: usize, run: usize) -> u64 {
    let key = ((agents as u64) << 48) | ((grid_dim as u64) << 32) | run as u64;
    base_seed ^ mix64(key)
}

/// Descriptive statistics of a sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Summary {
    pub count: usize,
    pub mean: f64,
    /// Sample standard deviation (`n - 1` denominator); 0 for a single value.
    pub std: f64,
    pub min: f64,
    pub median: f64,
    pub max: f64,
}

pub fn summarize(values: &[f64]) -> Result<Summary> {
    if values.is_empty() {
        return Err(Error::Empty("sample"));
    }
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = if n > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let median = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    };
    Ok(Summary {
        count: n,
        mean,
        std,
        min: sorted[0],
        median,
        max: sorted[n - 1],
    })
}

/// One CSV row: consensus-time statistics for a scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleStats {
    #[serde(rename = "N")]
    pub agents: usize,
    #[serde(rename = "c")]
    pub grid_dim: usize,
    /// `N / c^2`.
    pub density: f64,
    pub runs: usize,
    #[serde(rename = "mean_tc_s")]
    pub mean: Option<f64>,
    #[serde(rename = "std_tc_s")]
    pub std: Option<f64>,
    #[serde(rename = "min_tc_s")]
    pub min: Option<f64>,
    #[serde(rename = "median_tc_s")]
    pub median: Option<f64>,
    #[serde(rename = "max_tc_s")]
    pub max: Option<f64>,
    pub unconverged: usize,
}

impl EnsembleStats {
    /// Row for a scenario given its per-run consensus times (`None` = not reached).
    pub fn from_times(agents: usize, grid_dim: usize, times: &[Option<f64>]) -> Self {
        let reached: Vec<f64> = times.iter().flatten().copied().collect();
        let summary = summarize(&reached).ok();
        Self {
            agents,
            grid_dim,
            density: agents as f64 / (grid_dim * grid_dim) as f64,
            runs: times.len(),
            mean: summary.map(|s| s.mean),
            std: summary.map(|s| s.std),
            min: summary.map(|s| s.min),
            median: summary.map(|s| s.median),
            max: summary.map(|s| s.max),
            unconverged: times.len() - reached.len(),
        }
    }
}

/// Consensus times (seconds) of every run, grouped by scenario in output order.
pub fn run_times(sweep: &ScenarioSweep) -> Result<Vec<Vec<Option<f64>>>> {
    let scenarios = sweep.scenarios()?;
    let runs = sweep.runs;
    let flat: Vec<Option<f64>> = (0..scenarios.len() * runs)
        .into_par_iter()
        .map(|job| {
            let scenario = &scenarios[job / runs];
            let cfg = scenario.config();
            let seed = run_seed(sweep.base_seed, cfg.agents, cfg.grid_dim, job % runs);
            scenario.run_with_seed(seed).consensus_time_s
        })
        .collect();
    Ok(flat.chunks(runs).map(<[_]>::to_vec).collect())
}

/// Runs every scenario of the sweep on the current rayon pool.
pub fn run_ensemble(sweep: &ScenarioSweep) -> Result<Vec<EnsembleStats>> {
    let times = run_times(sweep)?;
    let mut rows = Vec::with_capacity(times.len());
    let mut groups = times.iter();
    for &n in &sweep.agents {
        for &c in &sweep.grid_dims {
            let t = groups.next().expect("one group per scenario");
            rows.push(EnsembleStats::from_times(n, c, t));
        }
    }
    Ok(rows)
}

pub fn write_stats_csv<W: Write>(rows: &[EnsembleStats], out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    if rows.is_empty() {
        w.write_record(STATS_HEADER)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_stats_csv<R: Read>(input: R) -> Result<Vec<EnsembleStats>, csv::Error> {
    csv::Reader::from_reader(input).deserialize().collect()
}

/// Column names of the stats CSV.
pub const STATS_HEADER: [&str; 10] = [
    "N",
    "c",
    "density",
    "runs",
    "mean_tc_s",
    "std_tc_s",
    "min_tc_s",
    "median_tc_s",
    "max_tc_s",
    "unconverged",
];

/// `mu = a * exp(b * density)` fitted by least squares on `ln mu`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpFit {
    pub a: f64,
    pub b: f64,
    /// Coefficient of determination of the log-space fit.
    pub r2: f64,
}

#[derive(Serialize)]
struct FitJson {
    a: f64,
    b: f64,
    r2: f64,
    model: &'static str,
}

impl ExpFit {
    pub fn to_json(&self) -> String {
        serde_json::to_string(&FitJson {
            a: self.a,
            b: self.b,
            r2: self.r2,
            model: "mu = a*exp(b*density)",
        })
        .expect("fit serializes")
    }

    pub fn predict(&self, density: f64) -> f64 {
        self.a * (self.b * density).exp()
    }
}

/// Fits the rows with a positive mean; needs at least three of them and more
/// than one distinct density.
pub fn fit_exponential(rows: &[EnsembleStats]) -> Result<ExpFit> {
    let points: Vec<(f64, f64)> = rows
        .iter()
        .filter_map(|r| r.mean.filter(|&m| m > 0.0).map(|m| (r.density, m)))
        .collect();
    fit_exponential_points(&points)
}

/// Fit on raw `(density, mean)` points.
pub fn fit_exponential_points(points: &[(f64, f64)]) -> Result<ExpFit> {
    if points.len() < 3 {
        return Err(Error::Degenerate(format!(
            "need at least 3 usable rows, got {}",
            points.len()
        )));
    }
    if points
        .iter()
        .any(|&(x, y)| !(x.is_finite() && y.is_finite() && y > 0.0))
    {
        return Err(Error::Degenerate(
            "densities must be finite and means positive".into(),
        ));
    }
    let n = points.len() as f64;
    let xs: Vec<f64> = points.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let x_mean = xs.iter().sum::<f64>() / n;
    let y_mean = ys.iter().sum::<f64>() / n;
    if xs.iter().all(|&x| x == xs[0]) {
        return Err(Error::Degenerate("all densities are equal".into()));
    }
    let sxx: f64 = xs.iter().map(|x| (x - x_mean).powi(2)).sum();
    let sxy: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (x - x_mean) * (y - y_mean))
        .sum();
    let slope = sxy / sxx;
    let intercept = y_mean - slope * x_mean;
    let ss_tot: f64 = ys.iter().map(|y| (y - y_mean).powi(2)).sum();
    let ss_res: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    // A constant response is fitted exactly by a flat line.
    let r2 = if ss_tot == 0.0 {
        1.0
    } else {
        1.0 - ss_res / ss_tot
    };
    Ok(ExpFit {
        a: intercept.exp(),
        b: slope,
        r2,
    })
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::DimensionMismatch {
            expected: xs.len(),
            actual: ys.len(),
        });
    }
    if xs.len() < 2 {
        return Err(Error::Empty("need two or more pairs"));
    }
    let rx = ranks(xs);
    let ry = ranks(ys);
    let n = xs.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    if vx == 0.0 || vy == 0.0 {
        return Err(Error::Degenerate(
            "constant sample has no rank correlation".into(),
        ));
    }
    Ok(cov / (vx * vy).sqrt())
}

fn ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            out[k] = rank;
        }
        i = j + 1;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mobility::seeded_rng;
    use rand::Rng;
    use std::collections::HashSet;

    #[test]
    fn summary_by_hand() {
        let s = summarize(&[10.0, 20.0, 30.0]).unwrap();
        assert_eq!((s.mean, s.std, s.median), (20.0, 10.0, 20.0));
        let s = summarize(&[7.0]).unwrap();
        assert_eq!((s.mean, s.std, s.min, s.max), (7.0, 0.0, 7.0, 7.0));
        let s = summarize(&[4.0, 1.0, 3.0, 2.0]).unwrap();
        assert_eq!(s.median, 2.5);
        assert!(summarize(&[]).is_err());
    }

    #[test]
    fn summary_of_uniform_draws() {
        let mut rng = seeded_rng(8);
        let draws: Vec<f64> = (0..10_000).map(|_| rng.random::<f64>()).collect();
        let s = summarize(&draws).unwrap();
        assert!((s.mean - 0.5).abs() < 0.01);
        assert!(s.min <= s.median && s.median <= s.max);
    }

    #[test]
    fn exact_exponential_is_recovered() {
        let pts: Vec<(f64, f64)> = [0.02, 0.05, 0.1, 0.2]
            .iter()
            .map(|&x: &f64| (x, 100.0 * (-10.0 * x).exp()))
            .collect();
        let fit = fit_exponential_points(&pts).unwrap();
        assert!((fit.a - 100.0).abs() < 1e-9);
        assert!((fit.b + 10.0).abs() < 1e-9);
        assert!((fit.r2 - 1.0).abs() < 1e-9);
    }

    #[test]
    fn constant_means_give_flat_fit() {
        let fit = fit_exponential_points(&[(0.1, 50.0), (0.2, 50.0), (0.4, 50.0)]).unwrap();
        assert!(fit.b.abs() < 1e-12);
        assert!((fit.a - 50.0).abs() < 1e-9);
    }

    #[test]
    fn degenerate_fits_rejected() {
        assert!(fit_exponential_points(&[(0.1, 5.0), (0.2, 4.0)]).is_err());
        assert!(fit_exponential_points(&[(0.1, 5.0), (0.1, 4.0), (0.1, 3.0)]).is_err());
        assert!(fit_exponential_points(&[(0.1, 5.0), (0.2, -4.0), (0.3, 3.0)]).is_err());
    }

    #[test]
    fn fit_json_shape() {
        let fit = ExpFit {
            a: 2.0,
            b: -1.5,
            r2: 0.5,
        };
        assert_eq!(
            fit.to_json(),
            r#"{"a":2.0,"b":-1.5,"r2":0.5,"model":"mu = a*exp(b*density)"}"#
        );
    }

    #[test]
    fn seeds_distinct_within_sweep() {
        let mut seen = HashSet::new();
        for n in 2..=14 {
            for c in [5, 8, 10, 12, 15, 20] {
                for run in 0..200 {
                    assert!(seen.insert(run_seed(42, n, c, run)));
                }
            }
        }
    }

    #[test]
    fn spearman_examples() {
        assert_eq!(
            spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]).unwrap(),
            1.0
        );
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap(), -1.0);
        assert_eq!(ranks(&[5.0, 1.0, 5.0]), vec![2.5, 1.0, 2.5]);
        assert!(spearman(&[1.0, 1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn single_run_rows_have_zero_spread() {
        let sweep = ScenarioSweep {
            agents: vec![2, 3],
            grid_dims: vec![3, 4],
            runs: 1,
            base_seed: 5,
            template: EpisodeConfig::default(),
        };
        let rows = run_ensemble(&sweep).unwrap();
        assert_eq!(rows.len(), 4);
        let times = run_times(&sweep).unwrap();
        for (row, t) in rows.iter().zip(&times) {
            assert_eq!(row.std, Some(0.0));
            assert_eq!(row.mean, t[0]);
            assert_eq!(row.runs, 1);
        }
    }

    #[test]
    fn alpha_above_limit_rejected_up_front() {
        let sweep = ScenarioSweep {
            agents: vec![2, 20],
            grid_dims: vec![5],
            runs: 10,
            base_seed: 0,
            template: EpisodeConfig::default(),
        };
        assert!(matches!(
            run_ensemble(&sweep),
            Err(Error::Config { field: "alpha", .. })
        ));
        let empty = ScenarioSweep { runs: 0, ..sweep };
        assert!(run_ensemble(&empty).is_err());
    }

    #[test]
    fn stats_csv_header_and_round_trip() {
        let rows = vec![
            EnsembleStats::from_times(5, 5, &[Some(10.0), Some(20.0), None]),
            EnsembleStats::from_times(2, 8, &[None]),
        ];
        let mut buf = Vec::new();
        write_stats_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().next().unwrap(), STATS_HEADER.join(","));
        assert_eq!(
            text.lines().nth(1).unwrap(),
            "5,5,0.2,3,15.0,7.0710678118654755,10.0,15.0,20.0,1"
        );
        assert_eq!(text.lines().nth(2).unwrap(), "2,8,0.03125,1,,,,,,1");
        assert_eq!(read_stats_csv(&buf[..]).unwrap(), rows);
    }
}
