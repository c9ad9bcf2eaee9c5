use std::fs;

use nomamec_core::harness::{output_files, Algorithm, ExperimentConfig, RunOptions, Seeds, SweepConfig, SweepParam, METRICS_FILE};
use nomamec_core::{run_experiment, HarnessError};

fn small(algorithms: Vec<Algorithm>, values: Vec<f64>, seeds: usize) -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        algorithms,
        sweep: Some(SweepConfig { parameter: SweepParam::NDevices, values }),
        seeds: Seeds::Range { count: seeds, base_seed: 7 },
        ..ExperimentConfig::default()
    };
    cfg.ao.t_max = 3;
    cfg
}

#[test]
fn one_cell_gives_one_row() {
    let cfg = small(vec![Algorithm::Nearby], vec![6.0], 1);
    let table = run_experiment(&cfg, None, &RunOptions::default()).unwrap();
    assert_eq!(table.rows.len(), 1);
    assert!(table.rows[0].is_ok());
    assert_eq!(table.rows[0].sweep_value, 6.0);
}

#[test]
fn rows_cover_every_cell_in_sorted_order() {
    let cfg = small(Algorithm::ALL.to_vec(), vec![4.0, 6.0], 3);
    let table = run_experiment(&cfg, None, &RunOptions { workers: Some(2), dump: false }).unwrap();
    assert_eq!(table.rows.len(), 5 * 2 * 3);
    let keys: Vec<(f64, u64, usize)> =
        table.rows.iter().map(|r| (r.sweep_value, r.seed, Algorithm::ALL.iter().position(|&a| a == r.algorithm).unwrap())).collect();
    let mut sorted = keys.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    assert_eq!(keys, sorted);
    for r in &table.rows {
        assert!(r.is_ok(), "{r:?}");
        assert!((r.avg_delay * r.sweep_value - r.total_delay).abs() <= 1e-9 * r.total_delay);
        assert!((r.avg_power * r.sweep_value - r.total_power).abs() <= 1e-9 * r.total_power.max(1e-300));
    }
}

#[test]
fn identical_configs_write_identical_files() {
    let cfg = small(vec![Algorithm::Proposed, Algorithm::GaleShapley], vec![5.0, 8.0], 2);
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_experiment(&cfg, Some(a.path()), &RunOptions { workers: Some(1), dump: false }).unwrap();
    run_experiment(&cfg, Some(b.path()), &RunOptions { workers: Some(3), dump: false }).unwrap();
    for (fa, fb) in output_files(a.path()).iter().zip(output_files(b.path())) {
        if fa.ends_with("timing.csv") {
            continue;
        }
        assert_eq!(fs::read(fa).unwrap(), fs::read(&fb).unwrap(), "{}", fa.display());
    }
}

#[test]
fn dump_writes_one_solution_per_cell() {
    let cfg = small(vec![Algorithm::Proposed, Algorithm::MaxMin], vec![5.0], 2);
    let dir = tempfile::tempdir().unwrap();
    run_experiment(&cfg, Some(dir.path()), &RunOptions { workers: None, dump: true }).unwrap();
    let dumps: Vec<_> = fs::read_dir(dir.path())
        .unwrap()
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().into_string().unwrap())
        .filter(|n| n.starts_with("solution_"))
        .collect();
    assert_eq!(dumps.len(), 4);
    assert!(dumps.contains(&"solution_proposed_n_devices5_seed7.json".to_string()));
    let text = fs::read_to_string(dir.path().join("solution_max-min_n_devices5_seed8.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert!(v["assignment"].is_object() || v["assignment"].is_array());
    assert_eq!(v["objective_trace"].as_array().unwrap().len(), 1);
}

#[test]
fn metrics_file_has_the_fixed_header() {
    let cfg = small(vec![Algorithm::Computing], vec![4.0], 1);
    let dir = tempfile::tempdir().unwrap();
    run_experiment(&cfg, Some(dir.path()), &RunOptions::default()).unwrap();
    let text = fs::read_to_string(dir.path().join(METRICS_FILE)).unwrap();
    assert_eq!(
        text.lines().next().unwrap(),
        "algorithm,sweep_param,sweep_value,seed,status,total_delay,avg_delay,total_power,avg_power,deadline_violations,outer_iterations,converged"
    );
    assert!(text.lines().nth(1).unwrap().starts_with("computing,n_devices,4.0,7,ok,"));
}

#[test]
fn unwritable_output_is_reported_before_compute() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("not-a-dir");
    fs::write(&file, b"x").unwrap();
    // A huge sweep would take minutes; the error must come first.
    let cfg = small(Algorithm::ALL.to_vec(), vec![500.0], 50);
    let err = run_experiment(&cfg, Some(&file.join("out")), &RunOptions::default()).unwrap_err();
    assert!(matches!(err, HarnessError::Io(_)), "{err:?}");
}

#[test]
fn mec_rate_sweep_is_paired_on_the_same_devices() {
    let mut cfg = small(vec![Algorithm::Nearby], vec![], 2);
    cfg.sweep = Some(SweepConfig { parameter: SweepParam::MecRateScale, values: vec![0.5, 2.0] });
    cfg.scenario.n_devices = 6;
    let table = run_experiment(&cfg, None, &RunOptions::default()).unwrap();
    assert_eq!(table.rows.len(), 4);
    assert!(table.rows.iter().all(|r| r.sweep_param == SweepParam::MecRateScale));
}
