use std::fs;
use std::path::Path;

use volmix::config::RunConfig;
use volmix::eval::{EvalReport, Metric};
use volmix::pipeline::{self, PanelManifest};
use volmix::Error;

fn quick(dir: &Path) -> RunConfig {
    let mut cfg = RunConfig::smoke();
    cfg.output_dir = dir.to_path_buf();
    cfg.train.max_epochs = 2;
    cfg.viz.tsne.iterations = 250;
    cfg
}

fn lines(path: &Path) -> Vec<String> {
    fs::read_to_string(path).unwrap().lines().map(str::to_string).collect()
}

#[test]
fn stages_name_their_missing_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick(dir.path());
    let cases: [(fn(&RunConfig) -> volmix::Result<pipeline::Outcome>, &str); 5] = [
        (pipeline::cmd_features, "ingest"),
        (|c| pipeline::cmd_train(c, None), "features"),
        (pipeline::cmd_fit_garch, "ingest"),
        (pipeline::cmd_dm, "evaluate"),
        (|c| pipeline::cmd_robust(c, None), "features"),
    ];
    for (step, expected) in cases {
        match step(&cfg) {
            Err(Error::MissingArtifact { producer, .. }) => assert_eq!(producer, expected),
            other => panic!("expected a missing artifact from {expected}, got {other:?}"),
        }
    }
    let err = pipeline::cmd_ingest(&cfg).unwrap_err();
    assert_eq!(err.exit_code(), 1, "{err}");
}

#[test]
fn full_run_produces_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick(dir.path());
    let root = dir.path();
    pipeline::cmd_synth(&cfg).unwrap();
    pipeline::cmd_features(&cfg).unwrap();

    // forecasting needs both networks
    pipeline::cmd_train(&cfg, Some("MDN")).unwrap();
    assert!(root.join("train/MDN/roll00/sidecar.json").exists());
    assert!(!root.join("train/MDNe").exists());
    let sidecar: serde_json::Value = serde_json::from_str(&fs::read_to_string(root.join("train/MDN/roll00/sidecar.json")).unwrap()).unwrap();
    assert_eq!(sidecar["use_code_embedding"], false);
    pipeline::cmd_fit_garch(&cfg).unwrap();
    assert!(matches!(pipeline::cmd_forecast(&cfg), Err(Error::MissingArtifact { producer: "train", .. })));

    pipeline::cmd_train(&cfg, Some("MDNe")).unwrap();
    let log = lines(&root.join("train/MDNe/roll00/log.csv"));
    assert_eq!(log[0], "epoch,train_nll,validation_nll");
    assert_eq!(log.len(), 3);
    pipeline::cmd_forecast(&cfg).unwrap();
    pipeline::cmd_evaluate(&cfg).unwrap();

    let report: EvalReport = serde_json::from_str(&fs::read_to_string(root.join("eval/report.json")).unwrap()).unwrap();
    assert_eq!(report.models, ["MDNe", "MDN", "GARCH", "GJR", "TARCH", "APARCH"]);
    let groups: Vec<&str> = report.groups.iter().map(|g| g.group.as_str()).collect();
    assert_eq!(groups, ["total", "10%", "20%", "50%", "80%", "90%"]);
    for g in &report.groups {
        assert_eq!(g.cells.len(), 6);
        assert!(g.cells.iter().all(|c| c.is_some()));
    }
    let total = report.value("total", "GARCH", Metric::Crps).unwrap();
    assert!(total > 0.0 && total.is_finite());
    let csv = lines(&root.join("eval/report.csv"));
    assert_eq!(csv[0], "group,metric,MDNe,MDN,GARCH,GJR,TARCH,APARCH");
    assert_eq!(csv.len(), 1 + 6 * 4);

    pipeline::cmd_dm(&cfg).unwrap();
    for loss in ["mse", "qlike"] {
        let dm = lines(&root.join(format!("dm/dm_{loss}.csv")));
        assert_eq!(dm[0], "loss,model,MDNe,MDN,GARCH,GJR,TARCH");
        assert_eq!(dm.len(), 6);
        for (i, row) in dm[1..].iter().enumerate() {
            let cells: Vec<&str> = row.split(',').collect();
            assert_eq!(cells.len(), 7);
            // lower triangle only
            assert!(cells[2..3 + i].iter().all(|c| !c.is_empty()));
            assert!(cells[3 + i..].iter().all(|c| c.is_empty()));
        }
    }

    pipeline::cmd_embed_viz(&cfg, Some("std60")).unwrap();
    let svg = fs::read_to_string(root.join("viz/tsne_std60.svg")).unwrap();
    assert_eq!(svg.matches("<circle").count(), 12);
    assert!(!root.join("viz/tsne_bias5.svg").exists());
    let emb = lines(&root.join("viz/embeddings.csv"));
    assert_eq!(emb.len(), 13);
}

#[test]
fn ingest_reproduces_the_synthetic_panel() {
    let dir = tempfile::tempdir().unwrap();
    let synth = quick(&dir.path().join("synth"));
    pipeline::cmd_synth(&synth).unwrap();
    let mut cfg = quick(&dir.path().join("ingested"));
    cfg.data.daily = Some(dir.path().join("synth/panel/daily.csv"));
    cfg.data.intraday = Some(dir.path().join("synth/panel/intraday.csv"));
    // 420 trading days is under the default two-year listing requirement
    let err = pipeline::cmd_ingest(&cfg).unwrap_err();
    assert_eq!(err.exit_code(), 2, "{err}");
    cfg.data.min_history_days = 0;
    pipeline::cmd_ingest(&cfg).unwrap();
    let read = |p: &Path| -> PanelManifest { serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap() };
    let a = read(&dir.path().join("synth/panel/manifest.json"));
    let b = read(&dir.path().join("ingested/panel/manifest.json"));
    assert_eq!(a, b);
    assert_eq!(a.stocks, 12);
    assert!(a.has_intraday);
}

#[test]
fn shipped_configs_parse() {
    let configs = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let smoke = RunConfig::load(&configs.join("smoke.toml"), &[]).unwrap();
    assert_eq!(smoke, RunConfig::smoke());
    let default = RunConfig::load(&configs.join("default.toml"), &[]).unwrap();
    assert_eq!(default, RunConfig::default());
}
