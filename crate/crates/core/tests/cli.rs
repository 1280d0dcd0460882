use std::io::Write;
use std::path::Path;
use std::process::{Command, Output, Stdio};

const SMALL: &[&str] = &[
    "--set", "embedding_dim=16", "--set", "hidden_size=12", "--set", "relation_dim=12", "--set",
    "entity_dim=12", "--set", "neg_relations=32", "--set", "neg_entities=32", "--set", "transe_epochs=2",
];

fn kbqa(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kbqa")).args(args).output().expect("spawn kbqa")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn value<'a>(out: &'a str, key: &str) -> Option<&'a str> {
    out.lines().find_map(|l| l.strip_prefix(key)?.strip_prefix('='))
}

fn path(dir: &Path, name: &str) -> String {
    dir.join(name).to_string_lossy().into_owned()
}

fn kb_args(dir: &Path) -> Vec<String> {
    vec![
        "--kb-triples".into(),
        path(dir, "triples.tsv"),
        "--kb-aliases".into(),
        path(dir, "aliases.tsv"),
        "--kb-types".into(),
        path(dir, "types.tsv"),
    ]
}

fn gen_toy(dir: &Path) {
    let o = kbqa(&["gen-toy", "--out", &dir.to_string_lossy(), "--questions", "200"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

fn train(dir: &Path, ckpt: &str, extra: &[&str]) -> Output {
    let mut args: Vec<String> = vec!["train".into()];
    args.extend(kb_args(dir));
    args.extend(["--dataset".into(), path(dir, "train.tsv"), "--checkpoint-dir".into(), path(dir, ckpt)]);
    args.extend(["--config".into(), path(dir, "toy.conf"), "--epochs".into(), "1".into()]);
    args.extend(SMALL.iter().map(|s| s.to_string()));
    args.extend(extra.iter().map(|s| s.to_string()));
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    kbqa(&refs)
}

fn with_kb<'a>(cmd: &'a str, dir: &Path, rest: &[&'a str]) -> Vec<String> {
    let mut args = vec![cmd.to_string()];
    args.extend(kb_args(dir));
    args.extend(rest.iter().map(|s| s.to_string()));
    args
}

fn run(args: &[String]) -> Output {
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    kbqa(&refs)
}

#[test]
fn help_lists_every_flag() {
    let o = kbqa(&["--help"]);
    assert_eq!(o.status.code(), Some(0));
    for cmd in ["build-kb", "train", "eval", "answer", "gradcheck", "gen-toy"] {
        assert!(stdout(&o).contains(cmd), "{cmd}");
    }
    let o = kbqa(&["train", "--help"]);
    assert_eq!(o.status.code(), Some(0));
    for flag in [
        "--kb-triples", "--kb-aliases", "--kb-types", "--dataset", "--checkpoint-dir", "--entity-repr",
        "--encoder", "--pruning", "--combine", "--seed", "--epochs", "--set", "--config",
    ] {
        assert!(stdout(&o).contains(flag), "{flag}");
    }
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(kbqa(&[]).status.code(), Some(1));
    assert_eq!(kbqa(&["train", "--nope"]).status.code(), Some(1));
    assert_eq!(kbqa(&["eval", "--kb-triples", "x"]).status.code(), Some(1));
    assert_eq!(kbqa(&["train", "--kb-triples", "t", "--dataset", "d", "--checkpoint-dir", "c", "--encoder", "cnn"]).status.code(), Some(1));
}

#[test]
fn missing_file_exits_2() {
    let o = kbqa(&["build-kb", "--kb-triples", "/nonexistent/triples.tsv"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"));
}

#[test]
fn unknown_override_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    gen_toy(dir.path());
    let o = train(dir.path(), "ck", &["--set", "no_such_key=3"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn gradcheck_passes() {
    let o = kbqa(&["gradcheck"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(stdout(&o).lines().all(|l| l.contains(" ok ")));
    assert!(stdout(&o).contains("crf_nll"));
}

#[test]
fn build_kb_reports_toy_stats() {
    let dir = tempfile::tempdir().unwrap();
    gen_toy(dir.path());
    let o = run(&with_kb("build-kb", dir.path(), &[]));
    assert!(o.status.success());
    let out = stdout(&o);
    assert!(value(&out, "entities").unwrap().parse::<usize>().unwrap() >= 50);
    assert_eq!(value(&out, "relations"), Some("13"));
    assert!(value(&out, "facts").unwrap().parse::<usize>().unwrap() > 0);
}

#[test]
fn train_eval_answer_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    gen_toy(d);
    let o = train(d, "ck", &["--entity-repr", "typevec"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["labeler.ckpt", "relation.ckpt", "subject.ckpt", "vocab.txt", "model.conf"] {
        assert!(d.join("ck").join(f).exists(), "{f}");
    }
    let curve = std::fs::read_to_string(d.join("ck/loss_relation.csv")).unwrap();
    assert!(curve.starts_with("epoch,meanLoss\n1,"));

    let preds = path(d, "preds.tsv");
    let ds = path(d, "test.tsv");
    let ck = path(d, "ck");
    let o = run(&with_kb("eval", d, &["--dataset", &ds, "--checkpoint-dir", &ck, "--predictions", &preds]));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let out = stdout(&o);
    for key in ["accuracy", "recall", "single_subject_acc", "multi_subject_acc", "labeler_sentence_acc"] {
        let v: f64 = value(&out, key).unwrap_or_else(|| panic!("{key} missing")).parse().unwrap();
        assert!((0.0..=1.0).contains(&v));
    }
    assert!(Path::new(&preds).exists());

    let o = run(&with_kb("answer", d, &["--checkpoint-dir", &ck, "--question", "Who created the character Harry Potter"]));
    assert!(o.status.success());
    let out = stdout(&o);
    for key in ["subject", "relation", "objects"] {
        assert!(value(&out, key).is_some(), "{key} missing in {out}");
    }

    let mut child = Command::new(env!("CARGO_BIN_EXE_kbqa"))
        .args(with_kb("answer", d, &["--checkpoint-dir", &ck, "--pruning", "ngram"]))
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(b"who created the character harry potter\n\nwhere was jk rowling born\n").unwrap();
    let o = child.wait_with_output().unwrap();
    assert!(o.status.success());
    assert_eq!(stdout(&o).matches("candidates=").count(), 2);
}

#[test]
fn repeated_training_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    gen_toy(d);
    assert!(train(d, "a", &["--seed", "5"]).status.success());
    assert!(train(d, "b", &["--seed", "5", "--set", "parallel=false"]).status.success());
    for f in ["labeler.ckpt", "relation.ckpt", "subject.ckpt", "vocab.txt", "loss_labeler.csv", "loss_relation.csv", "loss_subject.csv"] {
        let a = std::fs::read(d.join("a").join(f)).unwrap();
        let b = std::fs::read(d.join("b").join(f)).unwrap();
        assert!(a == b, "{f} differs");
    }
}
