use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn leftseg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_leftseg"))
        .args(args)
        .env_remove("LEFTSEG_SEED")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const TINY: &[&str] = &[
    "--token-emb-dim", "6", "--char-emb-dim", "3", "--char-filters", "3", "--label-emb-dim", "3",
    "--encoder-hidden", "4", "--decoder-hidden", "6", "--max-epochs", "2", "--batch-size", "4",
];

/// Writes a small synthetic corpus into `dir` and returns its directory.
fn corpus(dir: &Path) -> PathBuf {
    let data = dir.join("data");
    let o = leftseg(&["synth", "--out", p(&data), "--sentences", "30", "--seed", "3"]);
    assert!(o.status.success(), "{}", stderr(&o));
    data
}

fn train(data: &Path, out: &Path, extra: &[&str]) -> Output {
    let train = data.join("train.txt");
    let dev = data.join("dev.txt");
    let mut args = vec!["train", "--train", p(&train), "--dev", p(&dev), "--out", p(out)];
    args.extend_from_slice(TINY);
    args.extend_from_slice(extra);
    leftseg(&args)
}

#[test]
fn missing_train_file_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("no-such-train.txt");
    let o = leftseg(&["train", "--train", p(&missing), "--dev", p(&missing), "--out", p(dir.path())]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("no-such-train.txt"), "{}", stderr(&o));
    assert!(stdout(&o).is_empty());
}

#[test]
fn contradictory_config_lists_keys() {
    let dir = tempfile::tempdir().unwrap();
    let data = corpus(dir.path());
    let o = train(&data, &dir.path().join("out"), &["--use-phrase", "false", "--use-label", "false", "--dropout", "1.5"]);
    assert!(!o.status.success());
    let err = stderr(&o);
    assert!(err.contains("use-phrase") && err.contains("dropout"), "{err}");
}

#[test]
fn smoke_train_writes_artifacts_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let data = corpus(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = train(&data, out, &["--seed", "7"]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    for name in ["model.ckpt", "vocab.json", "report.jsonl", "timing.jsonl", "config.toml"] {
        assert!(a.join(name).is_file(), "{name} missing");
    }
    let report = fs::read(a.join("report.jsonl")).unwrap();
    assert_eq!(report, fs::read(b.join("report.jsonl")).unwrap());
    assert_eq!(String::from_utf8(report).unwrap().lines().count(), 3);
    assert!(fs::read_to_string(a.join("config.toml")).unwrap().contains("seed = 7"));

    let o = leftseg(&["inspect", p(&a.join("model.ckpt"))]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("emb.token") && stdout(&o).contains("seed = 7"), "{}", stdout(&o));
}

#[test]
fn flag_beats_file_beats_environment() {
    let dir = tempfile::tempdir().unwrap();
    let data = corpus(dir.path());
    let cfg = dir.path().join("cfg.toml");
    fs::write(&cfg, "seed = 11\nlr = 0.002\n").unwrap();

    let resolved = |out: &Path| fs::read_to_string(out.join("config.toml")).unwrap();
    let out = dir.path().join("flag");
    let o = train(&data, &out, &["--config", p(&cfg), "--seed", "12"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(resolved(&out).contains("seed = 12") && resolved(&out).contains("lr = 0.002"));

    let out = dir.path().join("file");
    let (train_path, dev_path) = (data.join("train.txt"), data.join("dev.txt"));
    let mut args = vec!["train", "--train", p(&train_path), "--dev", p(&dev_path), "--out", p(&out), "--config", p(&cfg)];
    args.extend_from_slice(TINY);
    let o = Command::new(env!("CARGO_BIN_EXE_leftseg"))
        .args(&args)
        .env("LEFTSEG_SEED", "99")
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(resolved(&out).contains("seed = 11"));

    fs::write(&cfg, "lr = 0.002\n").unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_leftseg"))
        .args(&args)
        .env("LEFTSEG_SEED", "99")
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(resolved(&out).contains("seed = 99"));
}

#[test]
fn predict_preserves_lines_and_beam_never_scores_lower() {
    let dir = tempfile::tempdir().unwrap();
    let data = corpus(dir.path());
    let out = dir.path().join("model");
    let o = train(&data, &out, &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let ckpt = out.join("model.ckpt");
    let input = data.join("test.txt");
    let before = fs::read(&input).unwrap();

    let run = |name: &str, beam: Option<&str>| -> (String, Vec<f64>) {
        let pred = dir.path().join(format!("{name}.txt"));
        let segs = dir.path().join(format!("{name}.jsonl"));
        let mut args = vec!["predict", "--model", p(&ckpt), "--input", p(&input), "--output", p(&pred), "--segments", p(&segs)];
        if let Some(b) = beam {
            args.extend(["--beam", b]);
        }
        let o = leftseg(&args);
        assert!(o.status.success(), "{}", stderr(&o));
        // sentence score: span and label log-probabilities summed in decode order
        let mut scores: Vec<f64> = Vec::new();
        for line in fs::read_to_string(&segs).unwrap().lines() {
            let r: serde_json::Value = serde_json::from_str(line).unwrap();
            let k = r["sentence"].as_u64().unwrap() as usize;
            if scores.len() < k {
                scores.push(0.0);
            }
            scores[k - 1] = scores[k - 1] + r["span_logprob"].as_f64().unwrap() + r["label_logprob"].as_f64().unwrap();
        }
        (fs::read_to_string(&pred).unwrap(), scores)
    };
    let (default, greedy_scores) = run("default", None);
    let (one, _) = run("one", Some("1"));
    let (five, beam_scores) = run("five", Some("5"));
    assert_eq!(default, one);
    assert_eq!(fs::read(&input).unwrap(), before, "input was modified");

    let text = String::from_utf8(before).unwrap();
    assert_eq!(default.lines().count(), text.lines().count());
    for (a, b) in default.lines().zip(text.lines()) {
        assert_eq!(a.is_empty(), b.is_empty());
        assert_eq!(a.split_whitespace().count(), if b.is_empty() { 0 } else { 3 });
    }
    assert_eq!(five.lines().count(), text.lines().count());
    assert_eq!(greedy_scores.len(), beam_scores.len());
    for (k, (g, b)) in greedy_scores.iter().zip(&beam_scores).enumerate() {
        assert!(b >= g, "sentence {}: beam 5 scored {b}, greedy {g}", k + 1);
    }

    let o = leftseg(&["eval", p(&dir.path().join("five.txt"))]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("FB1:"));
}

fn eval_fixture(dir: &Path, name: &str, rows: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, rows).unwrap();
    path
}

#[test]
fn eval_prints_conlleval_figures() {
    let dir = tempfile::tempdir().unwrap();
    let perfect = eval_fixture(
        dir.path(),
        "perfect.txt",
        "Tangible B-NP B-NP\ncapital I-NP I-NP\nwill B-VP B-VP\nbe I-VP I-VP\n. O O\n",
    );
    let o = leftseg(&["eval", p(&perfect)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("FB1: 100.00"), "{}", stdout(&o));

    // one of two chunks right with the same chunk count on both sides
    let half = eval_fixture(dir.path(), "half.txt", "a B-NP B-NP\nb I-NP I-NP\nc B-VP B-NP\nd I-VP I-NP\n");
    let o = leftseg(&["eval", p(&half)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let first = stdout(&o).lines().nth(1).unwrap().to_string();
    assert!(first.contains("precision:  50.00%") && first.contains("recall:  50.00%"), "{first}");
    assert!(first.contains("FB1:  50.00"), "{first}");

    let o = leftseg(&["eval", p(&perfect), "--buckets", "22,44,66,88"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows: Vec<_> = stdout(&o).lines().filter(|l| l.trim_start().starts_with(char::is_numeric)).map(String::from).collect();
    assert_eq!(rows.len(), 4, "{rows:?}");
    assert!(rows[0].contains("1-22") && rows[3].contains("67-88"));

    let o = leftseg(&["eval", p(&perfect), "--json"]);
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["overall"]["f1"].as_f64(), Some(100.0));
}

#[test]
fn malformed_prediction_file_reports_line() {
    let dir = tempfile::tempdir().unwrap();
    let bad = eval_fixture(dir.path(), "bad.txt", "a B-NP B-NP\nb I-NP\n");
    let o = leftseg(&["eval", p(&bad)]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("line 2"), "{}", stderr(&o));
}
