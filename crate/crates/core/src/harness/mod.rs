//! Monte Carlo experiments: every (sweep value, seed) cell generates one
//! scenario and runs each algorithm on it, so comparisons are paired. Cells
//! run on a rayon pool; results are merged in sorted key order, which makes
//! every output file independent of scheduling.

mod config;
pub mod stats;

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use config::{Algorithm, ExperimentConfig, Seeds, SweepConfig, SweepParam};

use crate::ao::{alternating_optimize, Solution};
use crate::baselines::run_baseline;
use crate::error::HarnessError;
use crate::scenario::{generate_scenario, Scenario};

/// Bumped whenever a CSV column is added, removed or renamed.
pub const SCHEMA_VERSION: u32 = 1;

pub const METRICS_FILE: &str = "metrics.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const CONVERGENCE_FILE: &str = "convergence.csv";
pub const IMPROVEMENT_FILE: &str = "improvement.csv";
pub const TIMING_FILE: &str = "timing.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub algorithm: Algorithm,
    pub sweep_param: SweepParam,
    pub sweep_value: f64,
    pub seed: u64,
    /// `ok`, or the error that stopped this cell.
    pub status: String,
    pub total_delay: f64,
    pub avg_delay: f64,
    pub total_power: f64,
    pub avg_power: f64,
    pub deadline_violations: usize,
    pub outer_iterations: usize,
    pub converged: bool,
}

impl MetricsRow {
    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub algorithm: Algorithm,
    pub sweep_value: f64,
    pub seed: u64,
    pub iteration: usize,
    pub total_delay: f64,
    pub total_interference: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub algorithm: Algorithm,
    pub sweep_value: f64,
    pub seed: u64,
    pub wall_time: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsTable {
    pub rows: Vec<MetricsRow>,
    pub convergence: Vec<ConvergenceRow>,
    pub timing: Vec<TimingRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub algorithm: Algorithm,
    pub sweep_value: f64,
    pub n_ok: usize,
    pub n_failed: usize,
    pub total_delay_mean: f64,
    pub total_delay_std: f64,
    pub total_delay_median: f64,
    pub avg_delay_mean: f64,
    pub avg_delay_std: f64,
    pub avg_delay_median: f64,
    pub total_power_mean: f64,
    pub total_power_std: f64,
    pub total_power_median: f64,
    pub avg_power_mean: f64,
    pub avg_power_std: f64,
    pub avg_power_median: f64,
    pub deadline_violations_mean: f64,
    pub deadline_violations_std: f64,
    pub deadline_violations_median: f64,
    pub outer_iterations_mean: f64,
    pub outer_iterations_std: f64,
    pub outer_iterations_median: f64,
}

/// `(baseline - proposed) / baseline` on the seed means at one sweep value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImprovementRow {
    pub sweep_value: f64,
    pub baseline: Algorithm,
    pub delay_improvement: f64,
    pub avg_power_improvement: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Worker threads; `None` uses rayon's default.
    pub workers: Option<usize>,
    /// Write one `solution_*.json` per cell.
    pub dump: bool,
}

struct CellOutput {
    row: MetricsRow,
    convergence: Vec<ConvergenceRow>,
    wall_time: f64,
    solution: Option<Solution>,
}

fn run_cell(cfg: &ExperimentConfig, scenario: &Result<Scenario, String>, algorithm: Algorithm, value: f64, seed: u64) -> CellOutput {
    let (param, _) = cfg.sweep_points();
    let start = Instant::now();
    let result = scenario.as_ref().map_err(Clone::clone).and_then(|s| {
        match algorithm.baseline() {
            None => alternating_optimize(s, &cfg.ao).map_err(|e| e.to_string()),
            Some(kind) => run_baseline(s, kind, &cfg.ao.power, cfg.ao.game.lambda).map_err(|e| e.to_string()),
        }
        .map(|sol| (sol, s.n_devices()))
    });
    let wall_time = start.elapsed().as_secs_f64();
    let blank = |status: String| MetricsRow {
        algorithm,
        sweep_param: param,
        sweep_value: value,
        seed,
        status,
        total_delay: f64::NAN,
        avg_delay: f64::NAN,
        total_power: f64::NAN,
        avg_power: f64::NAN,
        deadline_violations: 0,
        outer_iterations: 0,
        converged: false,
    };
    match result {
        Err(e) => {
            log::warn!("{algorithm} at {param}={value} seed {seed} failed: {e}");
            CellOutput { row: blank(format!("error: {e}")), convergence: Vec::new(), wall_time, solution: None }
        }
        Ok((sol, n)) => {
            let total_power = sol.powers.total();
            let row = MetricsRow {
                total_delay: sol.total_delay(),
                avg_delay: sol.total_delay() / n as f64,
                total_power,
                avg_power: total_power / n as f64,
                deadline_violations: sol.delay_report.deadline_violations(),
                outer_iterations: sol.outer_iterations,
                converged: sol.converged,
                ..blank("ok".into())
            };
            let convergence = sol
                .objective_trace
                .iter()
                .zip(&sol.interference_trace)
                .enumerate()
                .map(|(i, (&d, &nu))| ConvergenceRow {
                    algorithm,
                    sweep_value: value,
                    seed,
                    iteration: i + 1,
                    total_delay: d,
                    total_interference: nu,
                })
                .collect();
            CellOutput { row, convergence, wall_time, solution: Some(sol) }
        }
    }
}

fn probe_writable(dir: &Path) -> Result<(), HarnessError> {
    fs::create_dir_all(dir)?;
    let probe = dir.join(".write-probe");
    File::create(&probe)?;
    fs::remove_file(probe)?;
    Ok(())
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Header line of a CSV schema, for consumers that validate columns.
pub fn csv_header<T: Serialize>(example: &T) -> Result<String, HarnessError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.serialize(example)?;
    let bytes = w.into_inner().map_err(|e| HarnessError::Io(e.into_error()))?;
    let text = String::from_utf8(bytes).expect("csv writes utf-8");
    Ok(text.lines().next().unwrap_or_default().to_string())
}

fn value_label(v: f64) -> String {
    format!("{v}").replace('.', "p")
}

/// Run every cell of `cfg`. With `out_dir` set, the output directory is
/// checked before any compute and all files are written after it.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: Option<&Path>, opts: &RunOptions) -> Result<MetricsTable, HarnessError> {
    cfg.validate()?;
    if let Some(dir) = out_dir {
        probe_writable(dir)?;
    }
    let (param, values) = cfg.sweep_points();
    let seeds = cfg.seeds.expand();
    let keys: Vec<(usize, usize)> = (0..values.len()).flat_map(|v| (0..seeds.len()).map(move |s| (v, s))).collect();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.workers.unwrap_or(0))
        .build()
        .map_err(|e| HarnessError::Config(format!("worker pool: {e}")))?;
    let outputs: Vec<((usize, usize, usize), CellOutput)> = pool.install(|| {
        let scenarios: Vec<Result<Scenario, String>> = keys
            .par_iter()
            .map(|&(v, s)| cfg.params_at(values[v]).and_then(|p| Ok(generate_scenario(&p, seeds[s])?)).map_err(|e| e.to_string()))
            .collect();
        let jobs: Vec<(usize, usize)> = (0..keys.len()).flat_map(|k| (0..cfg.algorithms.len()).map(move |a| (k, a))).collect();
        let mut out: Vec<_> = jobs
            .par_iter()
            .map(|&(k, a)| {
                let (v, s) = keys[k];
                let cell = run_cell(cfg, &scenarios[k], cfg.algorithms[a], values[v], seeds[s]);
                ((v, s, a), cell)
            })
            .collect();
        out.sort_by_key(|(key, _)| *key);
        out
    });

    let mut table = MetricsTable::default();
    let mut solutions = Vec::new();
    for (_, cell) in outputs {
        table.timing.push(TimingRow {
            algorithm: cell.row.algorithm,
            sweep_value: cell.row.sweep_value,
            seed: cell.row.seed,
            wall_time: cell.wall_time,
        });
        table.convergence.extend(cell.convergence);
        if let Some(sol) = cell.solution {
            solutions.push((cell.row.algorithm, cell.row.sweep_value, cell.row.seed, sol));
        }
        table.rows.push(cell.row);
    }

    if let Some(dir) = out_dir {
        write_csv(&dir.join(METRICS_FILE), &table.rows)?;
        write_csv(&dir.join(CONVERGENCE_FILE), &table.convergence)?;
        write_csv(&dir.join(TIMING_FILE), &table.timing)?;
        let summary = aggregate(&table)?;
        write_csv(&dir.join(SUMMARY_FILE), &summary)?;
        write_csv(&dir.join(IMPROVEMENT_FILE), &improvement_ratios(&summary))?;
        let manifest = serde_json::json!({ "schema_version": SCHEMA_VERSION, "config": cfg });
        fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)? + "\n")?;
        if opts.dump {
            for (alg, value, seed, sol) in &solutions {
                let name = format!("solution_{alg}_{param}{}_seed{seed}.json", value_label(*value));
                fs::write(dir.join(name), serde_json::to_string_pretty(sol)? + "\n")?;
            }
        }
    }
    Ok(table)
}

/// Mean, standard deviation and median over the successful seeds of every
/// (algorithm, sweep value), in first-appearance order.
pub fn aggregate(table: &MetricsTable) -> Result<Vec<SummaryRow>, HarnessError> {
    if table.rows.is_empty() {
        return Err(HarnessError::Empty);
    }
    let mut keys: Vec<(Algorithm, f64)> = Vec::new();
    for r in &table.rows {
        if !keys.iter().any(|&(a, v)| a == r.algorithm && v == r.sweep_value) {
            keys.push((r.algorithm, r.sweep_value));
        }
    }
    keys.sort_by(|x, y| x.1.total_cmp(&y.1).then(x.0.cmp(&y.0)));
    Ok(keys
        .into_iter()
        .map(|(algorithm, sweep_value)| {
            let cell: Vec<&MetricsRow> = table.rows.iter().filter(|r| r.algorithm == algorithm && r.sweep_value == sweep_value).collect();
            let ok: Vec<&MetricsRow> = cell.iter().copied().filter(|r| r.is_ok()).collect();
            let col = |f: fn(&MetricsRow) -> f64| -> [f64; 3] {
                let xs: Vec<f64> = ok.iter().map(|r| f(r)).collect();
                [stats::mean(&xs), stats::std_dev(&xs), stats::median(&xs)]
            };
            let [tdm, tds, tdd] = col(|r| r.total_delay);
            let [adm, ads, add] = col(|r| r.avg_delay);
            let [tpm, tps, tpd] = col(|r| r.total_power);
            let [apm, aps, apd] = col(|r| r.avg_power);
            let [dvm, dvs, dvd] = col(|r| r.deadline_violations as f64);
            let [oim, ois, oid] = col(|r| r.outer_iterations as f64);
            SummaryRow {
                algorithm,
                sweep_value,
                n_ok: ok.len(),
                n_failed: cell.len() - ok.len(),
                total_delay_mean: tdm,
                total_delay_std: tds,
                total_delay_median: tdd,
                avg_delay_mean: adm,
                avg_delay_std: ads,
                avg_delay_median: add,
                total_power_mean: tpm,
                total_power_std: tps,
                total_power_median: tpd,
                avg_power_mean: apm,
                avg_power_std: aps,
                avg_power_median: apd,
                deadline_violations_mean: dvm,
                deadline_violations_std: dvs,
                deadline_violations_median: dvd,
                outer_iterations_mean: oim,
                outer_iterations_std: ois,
                outer_iterations_median: oid,
            }
        })
        .collect())
}

/// Improvement of the proposed scheme over each baseline present at the
/// same sweep value. Empty when the proposed scheme was not run.
pub fn improvement_ratios(summary: &[SummaryRow]) -> Vec<ImprovementRow> {
    let mut out = Vec::new();
    for p in summary.iter().filter(|r| r.algorithm == Algorithm::Proposed) {
        for b in summary.iter().filter(|r| r.algorithm != Algorithm::Proposed && r.sweep_value == p.sweep_value) {
            out.push(ImprovementRow {
                sweep_value: p.sweep_value,
                baseline: b.algorithm,
                delay_improvement: (b.total_delay_mean - p.total_delay_mean) / b.total_delay_mean,
                avg_power_improvement: (b.avg_power_mean - p.avg_power_mean) / b.avg_power_mean,
            });
        }
    }
    out
}

/// Files written by [`run_experiment`] into `dir` (solution dumps excluded).
pub fn output_files(dir: &Path) -> Vec<PathBuf> {
    [METRICS_FILE, SUMMARY_FILE, CONVERGENCE_FILE, IMPROVEMENT_FILE, TIMING_FILE, MANIFEST_FILE].iter().map(|f| dir.join(f)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(algorithm: Algorithm, value: f64, seed: u64, delay: f64, power: f64) -> MetricsRow {
        MetricsRow {
            algorithm,
            sweep_param: SweepParam::NDevices,
            sweep_value: value,
            seed,
            status: "ok".into(),
            total_delay: delay,
            avg_delay: delay / 10.0,
            total_power: power,
            avg_power: power / 10.0,
            deadline_violations: 1,
            outer_iterations: 2,
            converged: true,
        }
    }

    #[test]
    fn single_row_has_zero_spread() {
        let table = MetricsTable { rows: vec![row(Algorithm::Proposed, 10.0, 0, 4.0, 1.0)], ..Default::default() };
        let s = aggregate(&table).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].total_delay_mean, 4.0);
        assert_eq!(s[0].total_delay_std, 0.0);
        assert_eq!(s[0].total_delay_median, 4.0);
    }

    #[test]
    fn two_rows_average() {
        let table = MetricsTable {
            rows: vec![row(Algorithm::Nearby, 10.0, 0, 1.0, 1.0), row(Algorithm::Nearby, 10.0, 1, 3.0, 1.0)],
            ..Default::default()
        };
        assert_eq!(aggregate(&table).unwrap()[0].total_delay_mean, 2.0);
    }

    #[test]
    fn failed_rows_are_counted_not_averaged() {
        let mut bad = row(Algorithm::Nearby, 10.0, 1, f64::NAN, f64::NAN);
        bad.status = "error: boom".into();
        let table = MetricsTable { rows: vec![row(Algorithm::Nearby, 10.0, 0, 2.0, 1.0), bad], ..Default::default() };
        let s = aggregate(&table).unwrap();
        assert_eq!((s[0].n_ok, s[0].n_failed), (1, 1));
        assert_eq!(s[0].total_delay_mean, 2.0);
    }

    #[test]
    fn empty_table_is_an_error() {
        assert!(matches!(aggregate(&MetricsTable::default()), Err(HarnessError::Empty)));
    }

    #[test]
    fn improvement_is_relative_to_the_baseline() {
        let table = MetricsTable {
            rows: vec![row(Algorithm::Proposed, 10.0, 0, 8.0, 3.0), row(Algorithm::Computing, 10.0, 0, 10.0, 4.0)],
            ..Default::default()
        };
        let imp = improvement_ratios(&aggregate(&table).unwrap());
        assert_eq!(imp.len(), 1);
        assert_eq!(imp[0].baseline, Algorithm::Computing);
        assert!((imp[0].delay_improvement - 0.2).abs() < 1e-15);
        assert!((imp[0].avg_power_improvement - 0.25).abs() < 1e-15);
    }

    #[test]
    fn metrics_header_is_fixed() {
        let h = csv_header(&row(Algorithm::Proposed, 1.0, 0, 1.0, 1.0)).unwrap();
        assert_eq!(
            h,
            "algorithm,sweep_param,sweep_value,seed,status,total_delay,avg_delay,total_power,avg_power,deadline_violations,outer_iterations,converged"
        );
    }
}
