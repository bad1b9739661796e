use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::OnceLock;

use sentinel_core::cli::{cmd_fairness, cmd_taxonomy, main_with_args};

struct Workspace {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Workspace {
    fn data(&self) -> PathBuf {
        self.root.join("data")
    }

    fn config(&self) -> PathBuf {
        self.data().join("experiment.json")
    }

    fn bundle(&self) -> PathBuf {
        self.root.join("train/bundle")
    }

    fn fresh(&self, name: &str) -> PathBuf {
        let d = self.root.join(name);
        let _ = fs::remove_dir_all(&d);
        d
    }
}

fn run(args: &[&str]) -> i32 {
    main_with_args(std::iter::once("sentinel").chain(args.iter().copied()))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn workspace() -> &'static Workspace {
    static W: OnceLock<Workspace> = OnceLock::new();
    W.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        let data = root.join("data");
        assert_eq!(run(&["synth", "--out", s(&data), "--reports", "400", "--target-reports", "200", "--seed", "4"]), 0);
        let cfg = data.join("experiment.json");
        assert_eq!(run(&["train", "--config", s(&cfg), "--out", s(&root.join("train"))]), 0);
        Workspace { _dir: dir, root }
    })
}

fn read_json(p: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn synth_and_train_write_manifests() {
    let w = workspace();
    for f in ["corpus.jsonl", "target.jsonl", "fixtures.jsonl", "deployment.json", "target_deployment.json"] {
        assert!(w.data().join(f).exists(), "{f} missing");
    }
    let m = read_json(&w.root.join("train/manifest.json"));
    assert_eq!(m["command"], "train");
    assert!(m["config_hash"].as_str().is_some_and(|h| h.len() == 64));
    let outputs = m["outputs"].as_object().unwrap();
    assert!(outputs.keys().any(|k| k.ends_with("split.json")), "{outputs:?}");
    assert!(!w.root.join("train/.sentinel.lock").exists());
    for f in ["gate.json", "typer.json", "config.json", "manifest.json"] {
        assert!(w.bundle().join(f).exists(), "{f} missing from bundle");
    }
}

#[test]
fn eval_is_byte_reproducible() {
    let w = workspace();
    let a = w.fresh("eval-a");
    let b = w.fresh("eval-b");
    for out in [&a, &b] {
        assert_eq!(run(&["eval", "--config", s(&w.config()), "--out", s(out), "--bundle", s(&w.bundle())]), 0);
    }
    let ra = fs::read(a.join("report.json")).unwrap();
    assert_eq!(ra, fs::read(b.join("report.json")).unwrap());
    assert_eq!(fs::read(a.join("errors.jsonl")).unwrap(), fs::read(b.join("errors.jsonl")).unwrap());
    let report = read_json(&a.join("report.json"));
    for task in ["gate", "typer", "joint"] {
        let f1 = report[task]["macro_f1"].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&f1), "{task}: {f1}");
    }
    let table = cmd_fairness(&a.join("report.json"), None).unwrap();
    assert!(table.contains("# gate") && table.contains("en") && table.contains("sw"), "{table}");
}

#[test]
fn seed_override_changes_the_split() {
    let w = workspace();
    let out = w.fresh("train-seed");
    assert_eq!(run(&["train", "--config", s(&w.config()), "--out", s(&out), "--seed", "9"]), 0);
    let a = read_json(&w.root.join("train/split.json"));
    let b = read_json(&out.join("split.json"));
    assert_eq!(b["seed"], 9);
    assert_ne!(a["assignment"], b["assignment"]);
}

#[test]
fn predict_writes_one_decision_per_report() {
    let w = workspace();
    let out = w.fresh("predict");
    let input = w.data().join("target.jsonl");
    let code = run(&[
        "predict",
        "--config",
        s(&w.config()),
        "--out",
        s(&out),
        "--bundle",
        s(&w.bundle()),
        "--input",
        s(&input),
    ]);
    assert_eq!(code, 0);
    let n_in = fs::read_to_string(&input).unwrap().lines().count();
    let decisions = fs::read_to_string(out.join("decisions.jsonl")).unwrap();
    assert_eq!(decisions.lines().count(), n_in);
    for line in decisions.lines() {
        let d: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(d["id"].is_string());
    }
}

#[test]
fn zero_shot_respects_target_label_space() {
    let w = workspace();
    let out = w.fresh("zero");
    let code = run(&[
        "crossdomain",
        "--config",
        s(&w.config()),
        "--out",
        s(&out),
        "--bundle",
        s(&w.bundle()),
        "--target",
        s(&w.data().join("target.jsonl")),
        "--mode",
        "zero",
    ]);
    assert_eq!(code, 0);
    let preds = read_json(&out.join("predictions.json"));
    let preds = preds.as_object().unwrap();
    assert_eq!(preds.len(), 200);
    assert!(preds.values().all(|p| p != "PoliticalRallies"));
}

#[test]
fn few_shot_samples_ten_percent() {
    let w = workspace();
    for (name, strategy, extra) in [("few-warm", "warm-start", None), ("few-scratch", "scratch", Some("--no-stratify"))]
    {
        let out = w.fresh(name);
        let (config, bundle, target) = (w.config(), w.bundle(), w.data().join("target.jsonl"));
        let mut args = vec![
            "crossdomain",
            "--config",
            s(&config),
            "--out",
            s(&out),
            "--bundle",
            s(&bundle),
            "--target",
            s(&target),
            "--mode",
            "few",
            "--strategy",
            strategy,
            "--epochs",
            "20",
        ];
        args.extend(extra);
        assert_eq!(run(&args), 0, "{name}");
        let m = read_json(&out.join("sample_manifest.json"));
        assert_eq!(m["sampled"].as_array().unwrap().len(), 20);
        assert_eq!(m["holdout"].as_array().unwrap().len(), 180);
        assert_eq!(m["stratified"], extra.is_none());
        assert!(out.join("report.json").exists());
    }
}

#[test]
fn sparse_models_run_experiments() {
    let w = workspace();
    let mut cfg = read_json(&w.config());
    for model in ["lr_tfidf", "svm_tfidf", "nb_tfidf"] {
        cfg["model"] = model.into();
        cfg["hyper"]["epochs"] = 30.into();
        let path = w.data().join(format!("{model}.json"));
        fs::write(&path, serde_json::to_string(&cfg).unwrap()).unwrap();
        let out = w.fresh(model);
        assert_eq!(run(&["eval", "--config", s(&path), "--out", s(&out), "--runs", "2"]), 0, "{model}");
        let r = read_json(&out.join("report.json"));
        assert_eq!(r["runs"].as_array().unwrap().len(), 2);
        assert_eq!(r["averaged"]["typer"]["seeds"], serde_json::json!([4, 5]));
    }
}

#[test]
fn taxonomy_prints_distribution() {
    let fixture = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/error_taxonomy.jsonl");
    let text = cmd_taxonomy(&fixture).unwrap();
    assert!(text.contains("tagged\t100"));
    assert!(text.contains("annotator_error\t26.0%"));
    assert!(text.contains("clear_lexical\t31.0%"));
    assert_eq!(run(&["taxonomy", "--errors", s(&fixture)]), 0);
}

#[test]
fn exit_codes_follow_error_category() {
    let w = workspace();
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");

    assert_eq!(run(&["train", "--config", "/nonexistent.json", "--out", s(&out)]), 2);
    assert_eq!(run(&["frobnicate"]), 2);

    let bad_corpus = tmp.path().join("bad.json");
    let mut cfg = read_json(&w.config());
    let broken = tmp.path().join("broken.jsonl");
    fs::write(&broken, "{\"id\": 1}\nnot json\n").unwrap();
    cfg["corpus"] = serde_json::json!([s(&broken)]);
    cfg["deployments"] = serde_json::json!([s(&w.data().join("deployment.json"))]);
    cfg["provider"]["fixtures"] = s(&w.data().join("fixtures.jsonl")).into();
    fs::write(&bad_corpus, serde_json::to_string(&cfg).unwrap()).unwrap();
    assert_eq!(run(&["train", "--config", s(&bad_corpus), "--out", s(&out)]), 3);

    let code = run(&[
        "eval",
        "--config",
        s(&w.config()),
        "--out",
        s(&out),
        "--bundle",
        s(&w.bundle()),
        "--provider",
        "service",
        "--provider-url",
        "http://127.0.0.1:9",
    ]);
    assert_eq!(code, 4);

    let tampered = tmp.path().join("bundle");
    fs::create_dir_all(&tampered).unwrap();
    for entry in fs::read_dir(w.bundle()).unwrap() {
        let p = entry.unwrap().path();
        fs::copy(&p, tampered.join(p.file_name().unwrap())).unwrap();
    }
    let gate = tampered.join("gate.json");
    let text = fs::read_to_string(&gate).unwrap();
    fs::write(&gate, text.replacen("0", "1", 1)).unwrap();
    let code = run(&["eval", "--config", s(&w.config()), "--out", s(&out), "--bundle", s(&tampered)]);
    assert_eq!(code, 5);
}

#[test]
fn locked_output_directory_is_refused() {
    let w = workspace();
    let out = w.fresh("locked");
    fs::create_dir_all(&out).unwrap();
    fs::write(out.join(".sentinel.lock"), "").unwrap();
    assert_eq!(run(&["train", "--config", s(&w.config()), "--out", s(&out)]), 2);
    assert!(out.join(".sentinel.lock").exists());
    assert!(!out.join("bundle").exists());
}

#[test]
fn binary_reports_usage_errors() {
    let bin = env!("CARGO_BIN_EXE_sentinel");
    let help = Command::new(bin).arg("--help").output().unwrap();
    assert_eq!(help.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&help.stdout).contains("crossdomain"));
    let none = Command::new(bin).output().unwrap();
    assert_eq!(none.status.code(), Some(2));
    let missing = Command::new(bin).args(["taxonomy", "--errors", "/nonexistent.jsonl"]).output().unwrap();
    assert_eq!(missing.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&missing.stderr).starts_with("error[data]"));
}
