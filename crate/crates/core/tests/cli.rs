//! Command-line contract: outputs, exit codes and byte-stable artifacts.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const CONTENT: &str = "\
p1\t1\t0\t0\t1\tA
p2\t0\t1\t0\t0\tA
p3\t1\t1\t0\t0\tA
p4\t0\t0\t1\t1\tB
p5\t0\t0\t1\t0\tB
p6\t0\t1\t1\t1\tB
p7\t1\t0\t0\t0\tC
p8\t0\t0\t0\t1\tC
p9\t1\t0\t1\t0\tC
";

const CITES: &str = "\
p1\tp2
p2\tp3
p3\tp1
p4\tp5
p5\tp6
p7\tp8
p8\tp9
p9\tp1
p4\tp1
p4\tp1
ghost\tp1
";

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_gat-infomax"))
}

fn run(args: &[&str], dir: &Path) -> Output {
    bin().args(args).current_dir(dir).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("toy.content"), CONTENT).unwrap();
    fs::write(dir.path().join("toy.cites"), CITES).unwrap();
    fs::write(
        dir.path().join("small.cfg"),
        "# tiny model\nembed_dim = 4\nheads = 2\nmax_epochs = 3\npatience = 3\nseed = 5\n",
    )
    .unwrap();
    let o = run(
        &[
            "ingest", "--content", "toy.content", "--cites", "toy.cites", "--out", "toy.json",
            "--train-per-class", "2", "--val-size", "1", "--test-size", "2",
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    dir
}

#[test]
fn ingest_reports_counts() {
    let dir = setup();
    let o = run(
        &[
            "ingest", "--content", "toy.content", "--cites", "toy.cites", "--out", "again.json",
            "--train-per-class", "2", "--val-size", "1", "--test-size", "2",
        ],
        dir.path(),
    );
    let text = stdout(&o);
    assert!(text.contains("nodes=9 features=4 classes=3"), "{text}");
    assert!(text.contains("edges=9"), "{text}");
    assert!(text.contains("skipped_citations=1"), "{text}");
    assert_eq!(
        fs::read(dir.path().join("toy.json")).unwrap(),
        fs::read(dir.path().join("again.json")).unwrap()
    );
}

#[test]
fn missing_file_exits_2_and_names_path() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(
        &["ingest", "--content", "nowhere.content", "--cites", "x.cites", "--out", "o.json"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nowhere.content"));
}

#[test]
fn malformed_content_reports_file_and_line() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.content"), "a\t1\t0\tX\nb\t1\tY\n").unwrap();
    fs::write(dir.path().join("bad.cites"), "").unwrap();
    let o = run(
        &["ingest", "--content", "bad.content", "--cites", "bad.cites", "--out", "o.json"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("bad.content:2"), "{}", stderr(&o));
}

#[test]
fn train_embed_eval_round_trip() {
    let dir = setup();
    let p = dir.path();
    let o = run(
        &["train", "--dataset", "toy.json", "--config", "small.cfg", "--checkpoint", "a.ckpt"],
        p,
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("best_epoch="));
    let log = fs::read_to_string(p.join("a.ckpt.log")).unwrap();
    assert_eq!(log.lines().count(), 3);
    assert!(log.lines().all(|l| l.split('\t').count() == 2));

    let o = run(
        &["train", "--dataset", "toy.json", "--config", "small.cfg", "--checkpoint", "b.ckpt"],
        p,
    );
    assert!(o.status.success());
    assert_eq!(fs::read(p.join("a.ckpt")).unwrap(), fs::read(p.join("b.ckpt")).unwrap());

    for out in ["e1.txt", "e2.txt"] {
        let o = run(&["embed", "--checkpoint", "a.ckpt", "--dataset", "toy.json", "--out", out], p);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let emb = fs::read_to_string(p.join("e1.txt")).unwrap();
    assert_eq!(emb, fs::read_to_string(p.join("e2.txt")).unwrap());
    let mut lines = emb.lines();
    assert_eq!(lines.next(), Some("9 4"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 9);
    assert!(rows.iter().all(|r| r.split(' ').count() == 4));

    let o = run(&["eval", "--checkpoint", "a.ckpt", "--dataset", "toy.json"], p);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2);
    let rec: serde_json::Value = serde_json::from_str(lines[0]).unwrap();
    assert_eq!(rec["dataset"], "toy");
    assert!(rec["accuracy"].as_f64().unwrap() >= 0.0);
}

#[test]
fn eval_mode_prints_one_line_per_seed_plus_summary() {
    let dir = setup();
    let o = run(
        &["eval", "--mode", "attention_only", "--dataset", "toy.json", "--config", "small.cfg", "--seeds", "3"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 4);
    let seeds: Vec<u64> = lines[..3]
        .iter()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["seed"].as_u64().unwrap())
        .collect();
    assert_eq!(seeds, [5, 6, 7]);
    let summary: serde_json::Value = serde_json::from_str(lines[3]).unwrap();
    assert_eq!(summary["summary"], true);
    assert_eq!(summary["runs"], 3);
}

#[test]
fn unknown_mode_is_usage_error() {
    let dir = setup();
    let o = run(&["eval", "--mode", "everything", "--dataset", "toy.json"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("Usage"));
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = setup();
    fs::write(dir.path().join("bad.cfg"), "embed_dim = 4\ndropout = 0.5\n").unwrap();
    let o = run(
        &["train", "--dataset", "toy.json", "--config", "bad.cfg", "--checkpoint", "x.ckpt"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("dropout"));
}

#[test]
fn feature_mismatch_exits_4_with_both_shapes() {
    let dir = setup();
    let p = dir.path();
    let o = run(
        &["train", "--dataset", "toy.json", "--config", "small.cfg", "--checkpoint", "a.ckpt"],
        p,
    );
    assert!(o.status.success());
    let wide: String = CONTENT
        .lines()
        .map(|l| {
            let mut parts: Vec<&str> = l.split('\t').collect();
            parts.insert(1, "0");
            parts.join("\t") + "\n"
        })
        .collect();
    fs::write(p.join("wide.content"), wide).unwrap();
    let o = run(
        &[
            "ingest", "--content", "wide.content", "--cites", "toy.cites", "--out", "wide.json",
            "--train-per-class", "2", "--val-size", "1", "--test-size", "2",
        ],
        p,
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let o = run(&["embed", "--checkpoint", "a.ckpt", "--dataset", "wide.json", "--out", "e.txt"], p);
    assert_eq!(o.status.code(), Some(4));
    let err = stderr(&o);
    assert!(err.contains("(4, 4)") && err.contains("(9, 5)"), "{err}");
}
