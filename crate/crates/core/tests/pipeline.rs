use std::fs;

use xql_core::harness::config::{DatasetSpec, XqlOfflineSpec};
use xql_core::harness::{generate_dataset, load_dataset, run_experiment, save_dataset, Experiment, ExperimentConfig};
use xql_core::mdp::{build_gridworld, PolicyTable, GRID_5X5};
use xql_core::xql::{xql_offline, XqlConfig};

#[test]
fn saved_dataset_trains_like_the_original() {
    let g = build_gridworld(GRID_5X5, -1.0, 10.0, 0.1, 0.9).unwrap();
    let ds = generate_dataset(&g.mdp, &PolicyTable::uniform(25, 4), 3000, 7, 100).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.csv");
    save_dataset(&ds, &path).unwrap();
    let loaded = load_dataset(&path).unwrap();
    assert_eq!(loaded, ds);

    let cfg = XqlConfig { total_steps: 500, eval_interval: 0, ..Default::default() };
    let a = xql_offline(&ds, &g.mdp, &cfg).unwrap();
    let b = xql_offline(&loaded, &g.mdp, &cfg).unwrap();
    assert_eq!(a, b);
}

#[test]
fn config_with_dataset_file_runs_end_to_end() {
    let g = build_gridworld(GRID_5X5, -1.0, 10.0, 0.1, 0.9).unwrap();
    let ds = generate_dataset(&g.mdp, &PolicyTable::uniform(25, 4), 2000, 1, 100).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_dataset(&ds, &dir.path().join("data.csv")).unwrap();
    let spec = XqlOfflineSpec {
        dataset: DatasetSpec::File { path: "data.csv".into() },
        xql: XqlConfig { total_steps: 300, eval_interval: 100, ..Default::default() },
        ..Default::default()
    };
    let text = serde_json::to_string(&ExperimentConfig::new(Experiment::XqlOffline(spec))).unwrap();
    let cfg_path = dir.path().join("cfg.json");
    fs::write(&cfg_path, text).unwrap();

    let cfg = ExperimentConfig::load(&cfg_path).unwrap();
    let out = run_experiment(&cfg, &dir.path().join("out")).unwrap();
    assert!(out.summary.starts_with("xql offline:"), "{}", out.summary);
    let trace = fs::read_to_string(dir.path().join("out/trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 4);
    assert!(dir.path().join("out/manifest.json").exists());
}
