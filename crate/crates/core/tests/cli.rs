use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

const CORPUS: &str = "# ::snt It is possible that he is sentenced to 7 years in prison if convicted .
(p / possible-01
    :ARG1 (s / sentence-01
        :ARG1 (h / he)
        :ARG2 (t / temporal-quantity :quant 7 :unit (y / year))
        :location (p2 / prison)
        :condition (c / convict-01 :ARG1 h)))

# ::snt The girl wants to sleep .
(w / want-01
    :ARG0 (g / girl)
    :ARG1 (s / sleep-01 :ARG0 g))

# ::snt The boy sees the dog .
(s / see-01
    :ARG0 (b / boy)
    :ARG1 (d / dog))
";

const EXAMPLE: &str = "(p / possible
    :domain (s / sentence-01
        :ARG1 (h / he)
        :ARG2 (t / temporal-quantity :quant 7 :unit (y / year))
        :location (p2 / prison)
        :condition (c / convict-01 :ARG1 h)))
";

const TINY: &[&str] = &[
    "num_layers=1",
    "num_heads=2",
    "d_model=16",
    "d_ff=32",
    "d_w=8",
    "max_steps=4",
    "validate_every=2",
    "log_every=2",
    "warmup_steps=2",
    "max_gen_len=12",
];

fn amrsat(args: &[&str]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_amrsat"));
    for (k, _) in std::env::vars() {
        if k.starts_with("AMRSAT_") {
            cmd.env_remove(k);
        }
    }
    cmd.args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = amrsat(args);
    assert!(
        out.status.success(),
        "amrsat {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn tiny(mut args: Vec<String>) -> Vec<String> {
    for s in TINY {
        args.push("--set".into());
        args.push(s.to_string());
    }
    args
}

fn run_tiny(args: Vec<String>) -> String {
    let args = tiny(args);
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    ok(&refs)
}

fn preprocess(dir: &TempDir, name: &str) -> std::path::PathBuf {
    let input = dir.path().join("corpus.amr");
    fs::write(&input, CORPUS).unwrap();
    let out = dir.path().join(name);
    ok(&[
        "--bpe-merges",
        "20",
        "preprocess",
        "--input",
        p(&input),
        "--out-dir",
        p(&out),
    ]);
    out
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().into_string().unwrap(), fs::read(e.path()).unwrap())
        })
        .collect();
    out.sort();
    out
}

#[test]
fn empty_input_fails_without_writing() {
    let dir = TempDir::new().unwrap();
    let input = dir.path().join("empty.amr");
    fs::write(&input, "").unwrap();
    let out_dir = dir.path().join("out");
    let out = amrsat(&["preprocess", "--input", p(&input), "--out-dir", p(&out_dir)]);
    assert!(!out.status.success());
    assert!(!String::from_utf8_lossy(&out.stderr).is_empty());
    assert!(!out_dir.exists() || fs::read_dir(&out_dir).unwrap().next().is_none());
}

#[test]
fn preprocess_is_reproducible() {
    let dir = TempDir::new().unwrap();
    let a = preprocess(&dir, "a");
    let b = preprocess(&dir, "b");
    let fa = files(&a);
    assert!(fa.iter().any(|(n, _)| n == "structural.jsonl"));
    assert!(fa.iter().any(|(n, _)| n == "bpe.codes"));
    assert_eq!(fa, files(&b));
    let refs = fs::read_to_string(a.join("references.txt")).unwrap();
    assert_eq!(refs.lines().count(), 3);
}

#[test]
fn train_generate_evaluate() {
    let dir = TempDir::new().unwrap();
    let data = preprocess(&dir, "data");
    let run = |name: &str| {
        let out = dir.path().join(name);
        run_tiny(vec![
            "--seed".into(),
            "3".into(),
            "train".into(),
            "--data".into(),
            p(&data).into(),
            "--out-dir".into(),
            p(&out).into(),
        ]);
        out
    };
    let a = run("run_a");
    let b = run("run_b");
    let ckpt = fs::read(a.join("best.ckpt")).unwrap();
    assert_eq!(ckpt, fs::read(b.join("best.ckpt")).unwrap());
    assert!(a.join("last.ckpt").exists());
    assert!(fs::read_to_string(a.join("train.log.jsonl")).unwrap().lines().count() > 0);

    let hyp = dir.path().join("hyp.txt");
    for beam in ["1", "3"] {
        run_tiny(vec![
            "--beam".into(),
            beam.into(),
            "generate".into(),
            "--checkpoint".into(),
            p(&a.join("best.ckpt")).into(),
            "--data".into(),
            p(&data).into(),
            "--out".into(),
            p(&hyp).into(),
        ]);
        assert_eq!(fs::read_to_string(&hyp).unwrap().lines().count(), 3);
    }

    let refs = data.join("references.txt");
    let table = ok(&["evaluate", "--hyp", p(&refs), "--ref", p(&refs), "--format", "jsonl"]);
    assert!(table.contains("100"), "{table}");
}

#[test]
fn baseline_split_rejects_structure_aware_model() {
    let dir = TempDir::new().unwrap();
    let data = preprocess(&dir, "data");
    let out = amrsat(&[
        "--structure-aware",
        "true",
        "train",
        "--data",
        p(&data),
        "--split",
        "baseline",
        "--out-dir",
        p(&dir.path().join("run")),
    ]);
    assert!(!out.status.success());
}

#[test]
fn inspect_paths_prints_label_sequences() {
    let dir = TempDir::new().unwrap();
    let input = dir.path().join("example.amr");
    fs::write(&input, EXAMPLE).unwrap();
    let path = ok(&["inspect-paths", "--input", p(&input), "--from", "he", "--to", "7"]);
    assert_eq!(path.trim(), ":ARG1↑ :ARG2↓ :quant↓");
    let same = ok(&["inspect-paths", "--input", p(&input), "--from", "h", "--to", "h"]);
    assert_eq!(same.trim(), "None");
    let missing = amrsat(&["inspect-paths", "--input", p(&input), "--from", "zz", "--to", "h"]);
    assert!(!missing.status.success());
}

#[test]
fn unknown_setting_is_an_error() {
    let dir = TempDir::new().unwrap();
    let input = dir.path().join("example.amr");
    fs::write(&input, EXAMPLE).unwrap();
    let out = amrsat(&[
        "--set",
        "no_such_key=1",
        "inspect-paths",
        "--input",
        p(&input),
        "--from",
        "h",
        "--to",
        "h",
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("no_such_key"));
}
