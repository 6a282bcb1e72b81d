use std::fs;
use std::path::Path;
use std::process::Command;

use instructmpc::experiment::{Manifest, Summary};
use instructmpc::trace::read_trace;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_instructmpc"))
}

fn write_config(dir: &Path, body: &str) -> std::path::PathBuf {
    let path = dir.join("run.toml");
    fs::write(&path, format!("out = \"{}\"\n{body}", dir.join("out").display())).unwrap();
    path
}

#[test]
fn config_errors_exit_with_code_two_and_name_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "preset = \"robot\"\nk = 0\n");
    let out = bin().args(["run", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("`k`"));

    let cfg = write_config(dir.path(), "preset = \"robot\"\n[learner]\ntuner = \"sgd\"\n");
    let out = bin().args(["run", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("learner.tuner"));
}

#[test]
fn summary_means_match_trace_finals_and_reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "preset = \"robot\"\nhorizon = 60\nseeds = 3\n");
    let mut outputs = Vec::new();
    for run in ["a", "b"] {
        let out_dir = dir.path().join(run);
        let out = bin().args(["run", "--config"]).arg(&cfg).arg("--out").arg(&out_dir).output().unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        outputs.push(out_dir);
    }
    let summary: Summary = serde_json::from_str(&fs::read_to_string(outputs[0].join("summary.json")).unwrap()).unwrap();
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(outputs[0].join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest.status, "complete");
    assert_eq!(manifest.traces.len(), 9);
    for (name, v) in &summary.variants {
        let finals: Vec<f64> = (0..3)
            .map(|s| {
                let file = outputs[0].join(format!("traces/{name}_seed{s}.csv"));
                let table = read_trace(fs::read(file).unwrap().as_slice()).unwrap();
                *table.values("cum_cost").unwrap().last().unwrap()
            })
            .collect();
        let mean = finals.iter().sum::<f64>() / 3.0;
        assert!((mean - v.mean).abs() <= 1e-12 * mean.abs().max(1.0), "{name}");
    }
    assert_eq!(summary.regret.len(), 3);
    for r in &summary.regret {
        assert!(r.regret <= r.theorem1_rhs);
        assert!(outputs[0].join(&r.report).is_file());
    }
    for entry in &manifest.traces {
        let a = fs::read(outputs[0].join(&entry.file)).unwrap();
        let b = fs::read(outputs[1].join(&entry.file)).unwrap();
        assert!(a == b, "{} differs between reruns", entry.file);
    }
}

#[test]
fn episode_failure_leaves_a_partial_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "preset = \"robot\"\nhorizon = 20\nseeds = 1\n[learner]\nmodel = \"external\"\ncommand = \"exit 3\"\ntuner = \"frozen\"\ntimeout_ms = 500\n",
    );
    let out = bin().args(["run", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest: Manifest =
        serde_json::from_str(&fs::read_to_string(dir.path().join("out/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest.status, "failed");
    assert!(!manifest.errors.is_empty());
    assert_eq!(manifest.traces.len(), 1, "classic still finishes");
}

#[test]
fn sweep_runs_one_experiment_per_value() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "preset = \"robot\"\nhorizon = 40\nvariants = [\"untuned\"]\n");
    let out = bin()
        .args(["sweep", "--config"])
        .arg(&cfg)
        .args(["--param", "k=2..4", "--seeds", "2", "--out"])
        .arg(dir.path().join("sweep"))
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for k in 2..=4 {
        let summary: Summary =
            serde_json::from_str(&fs::read_to_string(dir.path().join(format!("sweep/k={k}/summary.json"))).unwrap())
                .unwrap();
        assert_eq!(summary.k, k);
        assert_eq!(summary.seeds, vec![0, 1]);
    }
    let bad = bin().args(["sweep", "--config"]).arg(&cfg).args(["--param", "k=0,1"]).output().unwrap();
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn verify_filter_reports_and_fault_injection() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("report.json");
    let ok = bin().args(["verify", "--filter", "A1", "--report"]).arg(&report).output().unwrap();
    assert!(ok.status.success());
    assert!(String::from_utf8_lossy(&ok.stdout).starts_with("PASS A1"));
    let bad = bin().args(["verify", "--filter", "A1", "--dare-tol", "1e-3"]).output().unwrap();
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad.stdout).starts_with("FAIL A1"));
}

#[test]
fn shipped_configs_load() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            instructmpc::config::load_config(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            seen += 1;
        }
    }
    assert!(seen >= 4);
}
