use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ergolab::scenario::{self, RunRecord, Scenario};

fn ergolab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ergolab")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn text(o: &Output) -> String {
    format!("{}{}", String::from_utf8_lossy(&o.stdout), String::from_utf8_lossy(&o.stderr))
}

fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

/// Small cat-map run: one row, no bounds.
const QUICK: [&str; 8] = [
    "--override",
    "experiment.t_schedule=[0.0]",
    "--override",
    "experiment.orbits=8",
    "--override",
    "experiment.orbit_len=4000",
    "--override",
    "experiment.bounds=false",
];

#[test]
fn shipped_scenario_files_match_the_registry() {
    let builtin = scenario::builtin();
    let dir = repo_root().join("scenarios");
    let mut seen = 0;
    for entry in fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().and_then(|e| e.to_str()) != Some("toml") {
            continue;
        }
        let sc: Scenario = toml::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
        sc.validate().unwrap();
        let twin = builtin.iter().find(|b| b.name == sc.name).unwrap_or_else(|| panic!("{} not registered", sc.name));
        assert_eq!(&sc, twin, "{}", path.display());
        seen += 1;
    }
    assert_eq!(seen, builtin.len());
}

#[test]
fn list_and_describe() {
    let o = ergolab(&["list-scenarios"]);
    assert_eq!(code(&o), 0);
    for s in scenario::builtin() {
        assert!(text(&o).contains(&s.name));
    }
    let o = ergolab(&["describe", "cat_map_semicontinuity"]);
    assert_eq!(code(&o), 0);
    assert!(text(&o).contains("exercises:"));
    assert!(text(&o).contains("upper semicontinuity"));
    assert_eq!(code(&ergolab(&["describe", "no_such_scenario"])), 2);
}

#[test]
fn identity_run_has_zero_columns_and_replays() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = ergolab(&["run", "identity", "--out", out]);
    assert_eq!(code(&o), 0, "{}", text(&o));
    let mut rdr = csv::Reader::from_path(dir.path().join("identity.csv")).unwrap();
    let headers = rdr.headers().unwrap().clone();
    let rows: Vec<csv::StringRecord> = rdr.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 1);
    for col in ["lambda_sigma_plus", "lambda_plus", "lambda_minus", "entropy", "ruelle_residual"] {
        let i = headers.iter().position(|h| h == col).unwrap();
        assert_eq!(rows[0][i].parse::<f64>().unwrap(), 0.0, "{col}");
    }
    let gp = fs::read_to_string(dir.path().join("identity.gp")).unwrap();
    assert!(gp.contains("'identity.csv'"));

    let json = dir.path().join("identity.json");
    let o = ergolab(&["verify-replay", json.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", text(&o));

    let mut record: RunRecord = serde_json::from_str(&fs::read_to_string(&json).unwrap()).unwrap();
    record.verdicts[0].margin += 1.0;
    let tampered = dir.path().join("tampered.json");
    fs::write(&tampered, serde_json::to_string(&record).unwrap()).unwrap();
    let o = ergolab(&["verify-replay", tampered.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    assert!(text(&o).contains("entropy_semicontinuity"));
}

#[test]
fn single_thread_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let mut csvs = Vec::new();
    for sub in ["a", "b"] {
        let out = dir.path().join(sub);
        let mut args = vec!["--threads", "1", "run", "cat_map_constant", "--out", out.to_str().unwrap(), "--seed", "9"];
        args.extend(QUICK);
        let o = ergolab(&args);
        // a sample this small may fail a verdict; only the bytes matter here
        assert!(code(&o) <= 1, "{}", text(&o));
        csvs.push(fs::read(out.join("cat_map_constant.csv")).unwrap());
    }
    assert_eq!(csvs[0], csvs[1]);
}

#[test]
fn short_orbits_fail_under_strict() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let mut args = vec!["run", "cat_map_constant", "--out", out, "--strict"];
    args.extend(QUICK);
    args.extend(["--override", "experiment.orbit_len=10"]);
    let o = ergolab(&args);
    assert_ne!(code(&o), 0);
    assert!(text(&o).contains("undersampled"), "{}", text(&o));
}

#[test]
fn configuration_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = ergolab(&["run", "identity", "--override", "experiment.orbitz=3"]);
    assert_eq!(code(&o), 2);
    assert!(text(&o).contains("orbitz"));
    assert_eq!(code(&ergolab(&["run", "identity", "--override", "noequals"])), 2);
    assert_eq!(code(&ergolab(&["run", "no_such_scenario"])), 2);

    let broken = dir.path().join("broken.toml");
    fs::write(&broken, "name = \"x\"\n[map\n").unwrap();
    let o = ergolab(&["run", broken.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(text(&o).contains("line 2"), "{}", text(&o));

    let singular = dir.path().join("singular.toml");
    fs::write(&singular, "name = \"x\"\n[map]\nfamily = \"toral\"\nmatrix = [[2, 0], [0, 1]]\n").unwrap();
    let o = ergolab(&["run", singular.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(text(&o).contains("det"));
}

#[test]
fn cat_semicontinuity_scenario_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = ergolab(&["run", "cat_map_semicontinuity", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", text(&o));
    let rows = csv::Reader::from_path(dir.path().join("cat_map_semicontinuity.csv")).unwrap().records().count();
    assert_eq!(rows, 5);
    let o = ergolab(&["verify-replay", dir.path().join("cat_map_semicontinuity.json").to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", text(&o));
}
