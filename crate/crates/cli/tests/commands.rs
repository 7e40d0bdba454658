use std::io::Cursor;
use std::path::PathBuf;

use kbdialog_cli::commands::*;

fn train_args(dir: &std::path::Path, out: PathBuf, no_copy: bool) -> TrainArgs {
    TrainArgs {
        train: dir.join("train.json"),
        dev: Some(dir.join("dev.json")),
        domain: "navigate".parse().unwrap(),
        out,
        log: Some(dir.join("metrics.jsonl")),
        preset: Preset::Synthetic,
        lr: None,
        lambda: None,
        dropout: None,
        weight_decay: None,
        dim: Some(8),
        rl_pretrain_epochs: Some(1),
        baseline: None,
        batch_size: None,
        epochs: Some(1),
        patience: None,
        seed: None,
        min_count: Some(1),
        no_copy,
        no_rl: false,
        augment: None,
        rl_sampling: false,
    }
}

#[test]
fn synth_prepare_train_eval_viz_chat() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    synth(&SynthArgs {
        out: data.clone(),
        dialogues: 30,
        rows: 4,
        seed: 2,
        dev: 5,
        test: 5,
    })
    .unwrap();

    let prepared = dir.path().join("prepared");
    prepare(&PrepareArgs {
        train: data.join("train.json"),
        dev: Some(data.join("dev.json")),
        test: Some(data.join("test.json")),
        domain: "navigate".parse().unwrap(),
        out: prepared.clone(),
        min_count: 1,
        augment: true,
    })
    .unwrap();
    for f in ["vocab.txt", "train.jsonl", "dev.jsonl", "test.jsonl"] {
        assert!(prepared.join(f).exists(), "{f}");
    }
    let instances = kbdialog::corpus::read_instances_jsonl(prepared.join("train.jsonl")).unwrap();
    assert!(instances.iter().any(|i| i.delexicalized));

    let ckpt = dir.path().join("model.ckpt");
    let args = train_args(&data, ckpt.clone(), false);
    assert_eq!(args.config().dim, 8);
    train_cmd(&args).unwrap();
    let metrics = std::fs::read_to_string(data.join("metrics.jsonl")).unwrap();
    assert_eq!(metrics.lines().count(), 2);

    let report = dir.path().join("report.json");
    let row = eval(&EvalArgs {
        checkpoint: ckpt.clone(),
        data: data.join("test.json"),
        global_lexicon: false,
        report: Some(report.clone()),
        label: "tiny".into(),
    })
    .unwrap();
    assert!(row.starts_with("tiny"), "{row}");
    let parsed: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(report).unwrap()).unwrap();
    assert!(parsed["instances"].as_array().unwrap().len() >= 5);

    let tsv = dir.path().join("viz.tsv");
    viz(&VizArgs {
        checkpoint: ckpt.clone(),
        data: data.join("test.json"),
        dialogue: "synthetic-2-0025".into(),
        turn: Some(1),
        format: VizFormat::Tsv,
        out: Some(tsv.clone()),
    })
    .unwrap();
    let text = std::fs::read_to_string(tsv).unwrap();
    let rows: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
    // Header plus one row per slot column.
    assert_eq!(rows.len(), 6);
    let width = rows[0].split('\t').count();
    assert!(rows.iter().all(|r| r.split('\t').count() == width));

    let kb = dir.path().join("kb.json");
    std::fs::write(
        &kb,
        r#"{"columns":["poi","distance","traffic_info","poi_type","address"],"rows":[["Shell","2 miles","no traffic","gas station","1 Main St"]]}"#,
    )
    .unwrap();
    let mut out = Vec::new();
    chat(
        &ChatArgs {
            checkpoint: ckpt,
            kb,
            trace: true,
        },
        Cursor::new("where is the gas station\nquit\nignored\n"),
        &mut out,
    )
    .unwrap();
    let out = String::from_utf8(out).unwrap();
    assert_eq!(out.matches("car> ").count(), 1);
    assert!(out.contains("1.000 shell"), "{out}");
}

#[test]
fn viz_rejects_unknown_dialogue() {
    let dir = tempfile::tempdir().unwrap();
    synth(&SynthArgs {
        out: dir.path().to_path_buf(),
        dialogues: 12,
        rows: 3,
        seed: 4,
        dev: 2,
        test: 2,
    })
    .unwrap();
    let ckpt = dir.path().join("m.ckpt");
    let mut args = train_args(dir.path(), ckpt.clone(), true);
    args.rl_pretrain_epochs = Some(0);
    train_cmd(&args).unwrap();
    let err = viz(&VizArgs {
        checkpoint: ckpt,
        data: dir.path().join("test.json"),
        dialogue: "missing".into(),
        turn: None,
        format: VizFormat::Json,
        out: None,
    })
    .unwrap_err();
    assert!(err.to_string().contains("missing"));
}

#[test]
fn synth_refuses_empty_train_split() {
    let dir = tempfile::tempdir().unwrap();
    let err = synth(&SynthArgs {
        out: dir.path().to_path_buf(),
        dialogues: 10,
        rows: 3,
        seed: 1,
        dev: 5,
        test: 5,
    })
    .unwrap_err();
    assert!(err.to_string().contains("training"));
}
