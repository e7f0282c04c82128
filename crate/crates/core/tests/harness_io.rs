use std::path::{Path, PathBuf};

use contactflux::harness::{
    emit_logs, parse_config, parse_config_str, run_experiment, ExperimentKind, ExperimentResult,
    Scenario, Summary,
};
use contactflux::Error;

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("configs")
        .join(name)
}

const FILES: [&str; 5] = [
    "state.csv",
    "controller.csv",
    "impact.csv",
    "beliefs.jsonl",
    "summary.json",
];

#[test]
fn shipped_configs_parse_and_build() {
    for (name, kind) in [
        ("e1_zigzag.toml", ExperimentKind::Anticipation),
        ("e2_sweep.toml", ExperimentKind::Sweep),
        ("e3_convergence.toml", ExperimentKind::Convergence),
        ("e4_three_contact.toml", ExperimentKind::FullTask),
    ] {
        let cfg = parse_config(&config(name)).unwrap();
        assert_eq!(cfg.experiment, kind, "{name}");
        Scenario::new(cfg).unwrap();
    }
}

#[test]
fn logs_have_expected_headers_and_rows() {
    let cfg = parse_config_str(
        r#"
        experiment = "anticipation"
        name = "short"
        seed = 5
        trials = 2
        [trajectory]
        generator = "straight_approach"
        [[contacts]]
        id = "table"
        segment = 0
        mu0 = [0.0, 0.0, 0.0]
        "#,
        &[],
    )
    .unwrap();
    let result = run_experiment(&Scenario::new(cfg).unwrap()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    emit_logs(&result, dir.path()).unwrap();
    for f in FILES {
        assert!(dir.path().join(f).is_file(), "{f} missing");
    }
    let state = std::fs::read_to_string(dir.path().join("state.csv")).unwrap();
    assert!(state.starts_with("t,x,y,z,vx,vy,vz,fx,fy,fz,phase\n"));
    let ticks: usize = result.runs.iter().map(|r| r.ticks.len()).sum();
    assert_eq!(state.lines().count(), ticks + 1);

    // One clock across trials.
    let times: Vec<f64> = state
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap().parse().unwrap())
        .collect();
    assert!(times.windows(2).all(|w| w[1] > w[0]));

    let ctrl = std::fs::read_to_string(dir.path().join("controller.csv")).unwrap();
    assert!(ctrl.starts_with("t,phase,alpha,kp_trace,hff_norm\n"));
    let impact = std::fs::read_to_string(dir.path().join("impact.csv")).unwrap();
    assert_eq!(impact.lines().count(), 1 + result.impacts.len());

    // Prior plus one posterior per trial for the single contact.
    let beliefs = std::fs::read_to_string(dir.path().join("beliefs.jsonl")).unwrap();
    assert_eq!(beliefs.lines().count(), 3);
    for line in beliefs.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(v["contact_id"], "table");
        assert_eq!(v["sigma"].as_array().unwrap().len(), 9);
    }
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap())
            .unwrap();
    assert_eq!(summary["trial_count"], 2);
    assert_eq!(summary["trials"].as_array().unwrap().len(), 2);
}

#[test]
fn empty_result_still_writes_every_file() {
    let result = ExperimentResult {
        summary: Summary {
            experiment: "anticipation".into(),
            name: "empty".into(),
            seed: 1,
            trial_count: 0,
            trials: Vec::new(),
            sweep: None,
        },
        runs: Vec::new(),
        impacts: Vec::new(),
        beliefs: Vec::new(),
    };
    let dir = tempfile::tempdir().unwrap();
    emit_logs(&result, dir.path()).unwrap();
    for f in FILES {
        assert!(dir.path().join(f).is_file(), "{f} missing");
    }
    let state = std::fs::read_to_string(dir.path().join("state.csv")).unwrap();
    assert_eq!(state.lines().count(), 1);
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap())
            .unwrap();
    assert_eq!(summary["trial_count"], 0);
}

#[test]
fn zero_trials_are_rejected() {
    let base = "experiment = \"anticipation\"\nname = \"z\"\nseed = 1\n[trajectory]\ngenerator = \"zigzag\"\n";
    let err = parse_config_str(base, &["trials=0".into()]).unwrap_err();
    assert!(
        matches!(&err, Error::Config { key, .. } if key == "trials"),
        "{err}"
    );
}

#[test]
fn relative_trajectory_file_resolves_against_config_dir() {
    let dir = tempfile::tempdir().unwrap();
    let built = contactflux::harness::scenario::straight_approach(1e-3).unwrap();
    contactflux::trajectory::write_csv_file(&built.trajectory, &dir.path().join("path.csv"))
        .unwrap();
    let cfg_path = dir.path().join("run.toml");
    std::fs::write(
        &cfg_path,
        r#"
        experiment = "anticipation"
        name = "from_file"
        seed = 2
        [trajectory]
        file = "path.csv"
        [[contacts]]
        id = "table"
        segment = 0
        mu0 = [0.0, 0.0, 0.0]
        "#,
    )
    .unwrap();
    let sc = Scenario::new(parse_config(&cfg_path).unwrap()).unwrap();
    assert_eq!(sc.trajectory.len(), built.trajectory.len());
}

#[test]
fn bad_configs_name_the_offending_key() {
    let base = r#"
        experiment = "anticipation"
        name = "bad"
        seed = 1
        [trajectory]
        generator = "zigzag"
    "#;
    let err = parse_config_str(
        &format!("{base}\n[belief]\nsigma0 = [1.0, 2.0, 3.0, 2.0, 1.0, 0.0, 3.0, 0.0, 1.0]\n"),
        &[],
    )
    .unwrap_err();
    assert!(
        matches!(&err, Error::Config { key, .. } if key.starts_with("belief.sigma0")),
        "{err}"
    );
    let err = parse_config_str(&format!("{base}\nbogus = 1\n"), &[]).unwrap_err();
    assert!(err.to_string().contains("bogus"), "{err}");
    let err = parse_config_str(base, &["sensor.sigma=-1".into()]).unwrap_err();
    assert!(err.to_string().contains("sensor"), "{err}");
}
