use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use graphgae::anomaly::{classify, evaluate, node_scores, select_threshold, ScoreMode, ThresholdPolicy};
use graphgae::data::Dataset;
use graphgae::persist::load_model;
use graphgae_cli::*;
use tempfile::TempDir;

fn small_config(dir: &Path) -> RunConfig {
    RunConfig {
        data: DataConfig {
            synthetic: Some(SyntheticConfig {
                num_nodes: 60,
                avg_degree: 5.0,
                feat_dim: 12,
                seed: 3,
            }),
            ..Default::default()
        },
        inject: Some(graphgae::data::InjectionConfig {
            num_cliques: 2,
            clique_size: 4,
            ..Default::default()
        }),
        train: TrainSection {
            epochs: 15,
            ..Default::default()
        },
        output: OutputConfig { dir: dir.to_path_buf() },
        ..Default::default()
    }
}

fn write_config(dir: &Path, json: &str) -> PathBuf {
    let p = dir.join("config.json");
    fs::write(&p, json).unwrap();
    p
}

fn graphgae(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_graphgae")).args(args).output().unwrap()
}

#[test]
fn minimal_config_writes_artifacts_and_resolved_defaults() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("run");
    let cfg = write_config(
        tmp.path(),
        r#"{"data": {"synthetic": {"num_nodes": 40, "feat_dim": 8}}, "train": {"epochs": 3}}"#,
    );
    let o = graphgae(&["train", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in [MODEL_FILE, TRAIN_LOG_FILE, MANIFEST_FILE] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join(MANIFEST_FILE)).unwrap()).unwrap();
    let c = &manifest["config"];
    assert_eq!(c["model"]["layer_dims"], serde_json::json!([8, 64, 32]));
    assert_eq!(c["model"]["lambda"], 1e-4);
    assert_eq!(c["model"]["encoder_kind"], "gat");
    assert_eq!(c["train"]["lr"], 0.01);
    assert_eq!(c["train"]["dense_limit"], 5000);
    assert_eq!(c["anomaly"]["threshold"]["contamination"], 0.05);
    assert_eq!(manifest["dataset"]["num_nodes"], 40);
    assert!(manifest["wall_time_secs"].as_f64().unwrap() >= 0.0);
    let log = fs::read_to_string(out.join(TRAIN_LOG_FILE)).unwrap();
    assert_eq!(log.lines().count(), 4);
    assert!(log.starts_with("epoch,recon,reg,total\n"));
}

#[test]
fn train_is_deterministic_and_manifest_replays() {
    let tmp = TempDir::new().unwrap();
    let a = small_config(&tmp.path().join("a"));
    let b = small_config(&tmp.path().join("b"));
    cmd_train(&a).unwrap();
    cmd_train(&b).unwrap();
    for f in [MODEL_FILE, TRAIN_LOG_FILE] {
        assert_eq!(fs::read(tmp.path().join("a").join(f)).unwrap(), fs::read(tmp.path().join("b").join(f)).unwrap());
    }
    let mut replay = RunConfig::load(&tmp.path().join("a").join(MANIFEST_FILE)).unwrap();
    replay.output.dir = tmp.path().join("c");
    cmd_train(&replay).unwrap();
    assert_eq!(fs::read(tmp.path().join("a/model.bin")).unwrap(), fs::read(tmp.path().join("c/model.bin")).unwrap());
}

#[test]
fn exit_codes() {
    let tmp = TempDir::new().unwrap();
    let missing = write_config(
        tmp.path(),
        r#"{"data": {"edges": "/nonexistent/edges.csv", "features": "/nonexistent/f.json"}}"#,
    );
    let o = graphgae(&["train", "--config", missing.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let line = String::from_utf8(o.stderr).unwrap();
    assert_eq!(line.lines().count(), 1);
    let err: serde_json::Value = serde_json::from_str(line.trim()).unwrap();
    assert_eq!(err["code"], 2);
    assert_eq!(err["kind"], "data");

    let unknown = write_config(tmp.path(), r#"{"data": {"synthetic": {}}, "extra": true}"#);
    let o = graphgae(&["train", "--config", unknown.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));

    let diverging = write_config(
        tmp.path(),
        r#"{"data": {"synthetic": {"num_nodes": 30, "feat_dim": 6}}, "train": {"epochs": 5, "lr": 1e300}}"#,
    );
    let o = graphgae(&["train", "--config", diverging.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn score_matches_library_path_and_is_reproducible() {
    let tmp = TempDir::new().unwrap();
    let cfg = small_config(tmp.path());
    cmd_train(&cfg).unwrap();
    let first = cmd_score(&cfg, None).unwrap();
    let csv1 = fs::read(tmp.path().join(SCORES_FILE)).unwrap();
    let second = cmd_score(&cfg, None).unwrap();
    assert_eq!(csv1, fs::read(tmp.path().join(SCORES_FILE)).unwrap());
    assert_eq!(first.scores, second.scores);

    let n = first.dataset.graph.num_nodes();
    assert_eq!(String::from_utf8(csv1).unwrap().lines().count(), n + 1);

    let model = load_model(&tmp.path().join(MODEL_FILE)).unwrap();
    let ds = &first.dataset;
    let z = model.embed(&ds.graph, &ds.features).unwrap();
    let direct = node_scores(&ds.graph, &z, ScoreMode::Dense, 0).unwrap().scores;
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&direct), bits(&first.scores));
    let t = select_threshold(&direct, ThresholdPolicy::Contamination(0.05)).unwrap();
    assert_eq!(first.manifest.threshold, t);
    assert_eq!(first.flags, classify(&direct, t));

    let table = read_scores_csv(&tmp.path().join(SCORES_FILE)).unwrap();
    assert_eq!(bits(&table.scores), bits(&first.scores));
}

#[test]
fn fixed_zero_threshold_flags_everything() {
    let tmp = TempDir::new().unwrap();
    let mut cfg = small_config(tmp.path());
    cmd_train(&cfg).unwrap();
    cfg.anomaly.threshold = ThresholdPolicy::Fixed(0.0);
    let s = cmd_score(&cfg, None).unwrap();
    assert!(s.scores.iter().all(|&v| v > 0.0));
    assert!(s.flags.iter().all(|&f| f));
}

#[test]
fn score_rejects_model_with_other_input_width() {
    let tmp = TempDir::new().unwrap();
    let cfg = small_config(tmp.path());
    cmd_train(&cfg).unwrap();
    let mut other = cfg.clone();
    other.data.synthetic.as_mut().unwrap().feat_dim = 20;
    let err = cmd_score(&other, None).err().unwrap();
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn eval_matches_unit_metrics() {
    let tmp = TempDir::new().unwrap();
    let cfg = small_config(tmp.path());
    cmd_train(&cfg).unwrap();
    let s = cmd_score(&cfg, None).unwrap();
    let report = cmd_eval(&cfg, None, None).unwrap();
    let labels = s.dataset.labels.as_ref().unwrap();
    assert_eq!(report, evaluate(&s.scores, &s.flags, labels).unwrap());
    let on_disk: graphgae::anomaly::MetricsReport =
        serde_json::from_str(&fs::read_to_string(tmp.path().join(METRICS_FILE)).unwrap()).unwrap();
    assert_eq!(on_disk, report);
    assert_eq!(report.tp + report.fp + report.tn + report.fn_, labels.len());
}

#[test]
fn eval_perfect_and_single_class() {
    let tmp = TempDir::new().unwrap();
    let scores = tmp.path().join("s.csv");
    fs::write(&scores, "node_id,score,flag\n10,0.9,1\n11,0.1,0\n12,0.8,1\n13,0.2,0\n").unwrap();
    let labels = tmp.path().join("l.csv");
    fs::write(&labels, "node_id,label\n13,0\n12,1\n11,0\n10,1\n").unwrap();
    let cfg = write_config(tmp.path(), r#"{"data": {"synthetic": {}}}"#);
    let args = |l: &Path| {
        graphgae(&[
            "eval",
            "--config",
            cfg.to_str().unwrap(),
            "--scores",
            scores.to_str().unwrap(),
            "--labels",
            l.to_str().unwrap(),
            "--out",
            tmp.path().join("o").to_str().unwrap(),
        ])
    };
    let o = args(&labels);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(tmp.path().join("o").join(METRICS_FILE)).unwrap()).unwrap();
    for k in ["auc", "f1", "precision", "recall"] {
        assert_eq!(m[k], 1.0, "{k}");
    }

    let one_class = tmp.path().join("one.csv");
    fs::write(&one_class, "node_id,label\n10,1\n11,1\n12,1\n13,1\n").unwrap();
    let o = args(&one_class);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("metric undefined"));
}

#[test]
fn inject_outputs_are_deterministic_and_reingest() {
    let tmp = TempDir::new().unwrap();
    let a = small_config(&tmp.path().join("a"));
    let b = small_config(&tmp.path().join("b"));
    let rec = cmd_inject(&a).unwrap();
    cmd_inject(&b).unwrap();
    for f in [EDGES_FILE, FEATURES_FILE, LABELS_FILE] {
        assert_eq!(fs::read(tmp.path().join("a").join(f)).unwrap(), fs::read(tmp.path().join("b").join(f)).unwrap());
    }
    assert_eq!(rec.anomalous_nodes, 8);
    let labels = fs::read_to_string(tmp.path().join("a").join(LABELS_FILE)).unwrap();
    assert_eq!(labels.lines().skip(1).filter(|l| l.ends_with(",1")).count(), 8);

    let dir = tmp.path().join("a");
    let back = Dataset::load(&dir.join(EDGES_FILE), &dir.join(FEATURES_FILE), Some(&dir.join(LABELS_FILE)), false).unwrap();
    let (orig, _) = build_dataset(&a).unwrap();
    assert_eq!(back.stats(), orig.stats());
    // ids may be renumbered on ingest; compare through original ids
    for i in 0..orig.graph.num_nodes() {
        let id = orig.id_map.original_id(i);
        let j = back.id_map.dense_id(id).unwrap();
        let mut n1: Vec<u64> = orig.graph.neighbors(i).iter().map(|&k| orig.id_map.original_id(k)).collect();
        let mut n2: Vec<u64> = back.graph.neighbors(j).iter().map(|&k| back.id_map.original_id(k)).collect();
        n1.sort_unstable();
        n2.sort_unstable();
        assert_eq!(n1, n2);
        assert_eq!(orig.features.row(i), back.features.row(j));
        assert_eq!(orig.labels.as_ref().unwrap()[i], back.labels.as_ref().unwrap()[j]);
    }
}

#[test]
fn seed_override_reaches_every_section() {
    let mut cfg = small_config(Path::new("x"));
    cfg.override_seed(42);
    assert_eq!(cfg.train.seed, 42);
    assert_eq!(cfg.anomaly.seed, 42);
    assert_eq!(cfg.data.synthetic.unwrap().seed, 42);
    assert_eq!(cfg.inject.unwrap().seed, 42);
}
