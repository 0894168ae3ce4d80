use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_natlog");

fn natlog(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("spawn natlog")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn tsv_rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| l.split('\t').map(str::to_owned).collect())
        .collect()
}

fn assert_pair_file(path: &Path) {
    let rows = tsv_rows(path);
    assert!(!rows.is_empty(), "{} is empty", path.display());
    for row in rows {
        assert_eq!(row.len(), 3, "bad row {row:?}");
        assert!(
            ["=", "<", ">", "^", "|", "v", "#"].contains(&row[0].as_str()),
            "bad label {:?}",
            row[0]
        );
    }
}

#[test]
fn derive_join_table_matches_reference() {
    let out = natlog(&["derive-join-table"]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.contains("49/49"), "{text}");
    assert!(text.lines().any(|l| l.trim() == "^  ^ ⌣ | ≡ ⊐ ⊏ #"));
}

#[test]
fn gen_sets_writes_split_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = natlog(&[
        "gen-sets",
        "--terms",
        "20",
        "--seed",
        "3",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let train = tsv_rows(&dir.path().join("train.tsv"));
    let test = tsv_rows(&dir.path().join("test.tsv"));
    let dropped = tsv_rows(&dir.path().join("dropped.tsv"));
    assert_eq!(train.len() + test.len() + dropped.len(), 400);
    assert_pair_file(&dir.path().join("train.tsv"));
    let meta: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("meta.json")).unwrap()).unwrap();
    assert!(meta.is_object());
}

#[test]
fn gen_prop_then_train_and_eval_by_size() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let out = natlog(&[
        "gen-prop",
        "--max-ops",
        "6",
        "--train-cutoff",
        "3",
        "--target-train",
        "200",
        "--target-test",
        "120",
        "--seed",
        "5",
        "--out",
        d,
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert_pair_file(&dir.path().join("train.tsv"));
    assert_pair_file(&dir.path().join("test.tsv"));

    let ckpt = dir.path().join("model.json");
    let out = natlog(&[
        "train",
        "--recipe",
        "recursion",
        "--model",
        "rnn",
        "--dim",
        "6",
        "--epochs",
        "2",
        "--data",
        d,
        "--out",
        ckpt.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(ckpt.exists());

    let test = dir.path().join("test.tsv");
    let out = natlog(&[
        "eval",
        "--ckpt",
        ckpt.to_str().unwrap(),
        "--data",
        test.to_str().unwrap(),
        "--by-size",
        "--train-cutoff",
        "3",
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = stdout(&out);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("bin,size,accuracy,macro_f1"));
    for line in lines {
        let fields: Vec<&str> = line.split(',').collect();
        assert_eq!(fields.len(), 4, "{line}");
        let acc: f64 = fields[2].parse().unwrap();
        assert!((0.0..=1.0).contains(&acc));
    }

    let out = natlog(&[
        "eval",
        "--ckpt",
        ckpt.to_str().unwrap(),
        "--data",
        test.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let metrics: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert!(metrics["accuracy"].is_number());
}

#[test]
fn gen_quant_writes_lexicon_and_pairs() {
    let dir = tempfile::tempdir().unwrap();
    let out = natlog(&[
        "gen-quant",
        "--target-train",
        "50",
        "--target-test",
        "20",
        "--seed",
        "2",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert_eq!(tsv_rows(&dir.path().join("train.tsv")).len(), 50);
    assert_eq!(tsv_rows(&dir.path().join("test.tsv")).len(), 20);
    assert!(dir.path().join("lexicon.json").exists());
}

#[test]
fn gen_quant_rejects_unstable_entity_bound() {
    let dir = tempfile::tempdir().unwrap();
    let out = natlog(&[
        "gen-quant",
        "--target-train",
        "5",
        "--target-test",
        "5",
        "--max-entities",
        "5",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("unstable"));
}

#[test]
fn gradcheck_passes_for_default_model() {
    let out = natlog(&["gradcheck", "--model", "rntn", "--dim", "3", "--transform"]);
    assert!(out.status.success(), "{}", stdout(&out));
    assert!(stdout(&out).contains("max relative error"));
}

#[test]
fn bad_arguments_exit_nonzero() {
    assert!(!natlog(&[]).status.success());
    assert!(!natlog(&["no-such-command"]).status.success());
    assert!(
        !natlog(&["train", "--recipe", "nonsense", "--model", "rnn"])
            .status
            .success()
    );
    let missing = natlog(&[
        "eval",
        "--ckpt",
        "/nonexistent/model.json",
        "--data",
        "/nonexistent/test.tsv",
    ]);
    assert!(!missing.status.success());
    assert!(String::from_utf8_lossy(&missing.stderr).starts_with("natlog:"));
}

#[test]
fn corrupt_checkpoint_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("bad.json");
    fs::write(&ckpt, "{\"version\": 1}").unwrap();
    let data = dir.path().join("d.tsv");
    fs::write(&data, "=\tp1\tp1\n").unwrap();
    let out = natlog(&[
        "eval",
        "--ckpt",
        ckpt.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
    ]);
    assert!(!out.status.success());
}
