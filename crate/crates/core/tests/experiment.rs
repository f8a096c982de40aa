use neass_core::experiment::{bundled_names, run, stage_metrics, ExperimentConfig, Metric, RunOptions, Stage, BUNDLED};
use neass_core::Error;

fn small() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::bundled("hofstadter_q3_n2").unwrap();
    cfg.model.l1 = 6;
    cfg.model.l2 = 6;
    cfg
}

fn opts(dir: &std::path::Path, stages: &[Stage], threads: usize) -> RunOptions {
    RunOptions { out_dir: Some(dir.to_path_buf()), threads, stages: Some(stages.to_vec()), ..Default::default() }
}

#[test]
fn bundled_configs_parse_and_validate() {
    assert!(!bundled_names().is_empty());
    for (name, text) in BUNDLED {
        let cfg = ExperimentConfig::from_toml(text).unwrap();
        assert_eq!(cfg.name, *name);
        cfg.validate().unwrap();
    }
    assert!(matches!(ExperimentConfig::bundled("missing"), Err(Error::Config(_))));
}

#[test]
fn bad_configs_are_rejected_before_computing() {
    let text = BUNDLED[0].1;
    let unknown = text.replace("[model]", "[model]\nbogus = 1");
    assert!(matches!(ExperimentConfig::from_toml(&unknown), Err(Error::Config(_))));

    let mut cfg = small();
    cfg.neass.eps_max = 0.5;
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(run(&cfg, &opts(dir.path(), &[Stage::Neass], 1)), Err(Error::Config(_))));
    // nothing was written for a rejected configuration
    assert!(!dir.path().join("neass_sweep.csv").exists());

    let mut cfg = small();
    cfg.neass.order = 0;
    assert!(matches!(cfg.validate(), Err(Error::Config(_))));

    let cfg = small();
    let bad = RunOptions { tol_scale: 0.0, ..opts(dir.path(), &[Stage::Spectrum], 1) };
    assert!(matches!(run(&cfg, &bad), Err(Error::Config(_))));
}

#[test]
fn skipped_stages_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let report = run(&small(), &opts(dir.path(), &[Stage::Spectrum], 1)).unwrap();
    for name in stage_metrics(Stage::Spectrum) {
        assert!(report.metric(name).is_some(), "{name}");
    }
    for name in stage_metrics(Stage::Response) {
        assert!(matches!(report.metrics.get(*name), Some(Metric::Skipped { .. })), "{name}");
    }
    assert!(report.passed());
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(json["name"], "hofstadter_q3_n2");
    assert!(dir.path().join("spectrum.csv").exists());
}

#[test]
fn neass_sweep_is_deterministic_and_thread_independent() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ra = run(&small(), &opts(a.path(), &[Stage::Neass], 1)).unwrap();
    let rb = run(&small(), &opts(b.path(), &[Stage::Neass], 2)).unwrap();
    let read = |d: &std::path::Path| std::fs::read_to_string(d.join("neass_sweep.csv")).unwrap();
    assert_eq!(read(a.path()), read(b.path()));
    let slope = ra.metric("slope_residual").unwrap();
    assert_eq!(Some(slope), rb.metric("slope_residual"));
    assert!((2.75..=3.25).contains(&slope), "{slope}");
}
