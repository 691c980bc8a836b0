use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn volmix(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_volmix"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("run volmix")
}

fn text(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}

#[test]
fn help_lists_every_subcommand() {
    let dir = tempfile::tempdir().unwrap();
    let out = volmix(dir.path(), &["--help"]);
    assert_eq!(out.status.code(), Some(0));
    let help = text(&out.stdout);
    for cmd in ["ingest", "synth", "features", "train", "fit-garch", "forecast", "evaluate", "dm", "embed-viz", "robust"] {
        assert!(help.contains(cmd), "{cmd} missing from help");
    }
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(volmix(dir.path(), &["frobnicate"]).status.code(), Some(1));
    assert_eq!(volmix(dir.path(), &["train", "--model", "rnn"]).status.code(), Some(1));
    let out = volmix(dir.path(), &["--set", "train.max_epochs=0", "synth"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(text(&out.stderr).contains("max_epochs"));
    fs::write(dir.path().join("bad.toml"), "sede = 3\n").unwrap();
    assert_eq!(volmix(dir.path(), &["-c", "bad.toml", "synth"]).status.code(), Some(1));
}

#[test]
fn missing_artifact_names_the_producer() {
    let dir = tempfile::tempdir().unwrap();
    let out = volmix(dir.path(), &["--preset", "smoke", "evaluate"]);
    assert_eq!(out.status.code(), Some(2));
    let err = text(&out.stderr);
    assert!(err.contains("features"), "{err}");
}

#[test]
fn corrupt_rows_are_reported_with_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("daily.csv"),
        "date,code,open,high,low,close,volume,preclose\n\
         2020-01-02,A,10,11,9,10.5,1000,10\n\
         2020-01-03,A,10.5,10,11,10.2,1000,10.5\n\
         2020-01-06,A,10.2,10.4,10.0,abc,1000,10.2\n",
    )
    .unwrap();
    let out = volmix(dir.path(), &["ingest", "--daily", "daily.csv"]);
    assert_eq!(out.status.code(), Some(2));
    let err = text(&out.stderr);
    assert!(err.contains("line 3: high 10 < low 11"), "{err}");
    assert!(err.contains("line 4: bad close"), "{err}");
}

#[test]
fn synth_then_features_from_a_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let config = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/smoke.toml");
    let config = config.to_str().unwrap();
    let out = volmix(dir.path(), &["-c", config, "--output-dir", "run", "--threads", "1", "synth"]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    assert!(text(&out.stdout).contains("12 stocks"));
    let out = volmix(dir.path(), &["-c", config, "--output-dir", "run", "features"]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    assert!(dir.path().join("run/features/samples.bin").exists());
    assert!(dir.path().join("run/features/split.json").exists());
}
