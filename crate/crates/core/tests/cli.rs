use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SUBCOMMANDS: [&str; 8] = ["gen-corpus", "stats", "verify", "grad-check", "train", "translate", "eval", "params"];

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_polytrans")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Generates a tiny corpus and trains a micro model on it; returns the
/// data directory and the checkpoint path.
fn tiny_model(root: &Path) -> (std::path::PathBuf, std::path::PathBuf) {
    let data = root.join("data");
    ok(&["gen-corpus", "--out", p(&data), "--seed", "4", "--set", "samples=30", "--set", "test_samples=6"]);
    let run_dir = root.join("run");
    ok(&[
        "train",
        "--out",
        p(&run_dir),
        "--train",
        p(&data.join("train.tsv")),
        "--seed",
        "4",
        "--set",
        "dims=micro",
        "--set",
        "flag_len=2",
        "--set",
        "epochs=1",
        "--set",
        "steps=2",
        "--set",
        "batch_size=4",
    ]);
    let ck = run_dir.join("epoch-1.ptck");
    assert!(ck.exists(), "missing {}", ck.display());
    (data, ck)
}

#[test]
fn help_lists_a_default_for_every_optional_flag() {
    for cmd in SUBCOMMANDS {
        let out = ok(&[cmd, "--help"]);
        let text = String::from_utf8(out.stdout).unwrap();
        for line in text.lines().map(str::trim_start).filter(|l| l.starts_with("--") || l.starts_with("-h")) {
            if line.contains("--help") {
                continue;
            }
            assert!(line.contains("[default:") || line.contains("[required]"), "{cmd}: {line}");
        }
    }
}

#[test]
fn usage_errors_exit_2() {
    let out = run(&["verify", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["gen-corpus", "--out", p(dir.path()), "--set", "not_a_key=1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("kind=usage"));
}

#[test]
fn missing_input_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["stats", "--out", p(dir.path()), "--corpus", p(&dir.path().join("absent.tsv"))]);
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).contains("kind=io"));
}

#[test]
fn verify_writes_a_passing_table() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["verify", "--out", p(dir.path()), "--cases", "6"]);
    let table = fs::read_to_string(dir.path().join("verify.txt")).unwrap();
    assert!(table.contains("pass") && !table.contains("FAIL"));
}

#[test]
fn params_writes_csv_and_chart() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["params", "--out", p(dir.path()), "--N", "4", "--vocab", "60"]);
    let csv = fs::read_to_string(dir.path().join("params.csv")).unwrap();
    assert!(csv.starts_with("N,paradigm,total_params\n"));
    assert_eq!(csv.lines().count(), 1 + 3 * 2);
    assert!(fs::read_to_string(dir.path().join("params.svg")).unwrap().contains("<svg"));
}

#[test]
fn stats_reports_counts_and_pairs() {
    let dir = tempfile::tempdir().unwrap();
    ok(&[
        "gen-corpus",
        "--out",
        p(dir.path()),
        "--set",
        "samples=40",
        "--set",
        "test_samples=4",
        "--set",
        "missing_rates=0,0.5,0.5",
    ]);
    let out = dir.path().join("stats");
    ok(&["stats", "--out", p(&out), "--corpus", p(&dir.path().join("train.tsv"))]);
    let counts = fs::read_to_string(out.join("counts.csv")).unwrap();
    assert!(counts.starts_with("lang,count\n"));
    assert!(counts.contains("toyA,40"));
    assert!(fs::read_to_string(out.join("pairs.csv")).unwrap().starts_with("lang_i,lang_j,pairs\n"));
}

#[test]
fn echoed_config_reproduces_a_run() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&["gen-corpus", "--out", p(&a), "--seed", "17", "--set", "samples=25", "--set", "test_samples=5"]);
    ok(&["gen-corpus", "--out", p(&b), "--config", p(&a.join("config.txt"))]);
    for f in ["train.tsv", "test.tsv", "config.txt"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn deterministic_translation_is_repeatable() {
    let dir = tempfile::tempdir().unwrap();
    let (_, ck) = tiny_model(dir.path());
    let input = dir.path().join("in.txt");
    fs::write(&input, "set x = 1 ; show x ;\nset y = 2 ; show y ;\n").unwrap();
    let translate = |name: &str, extra: &[&str]| {
        let out = dir.path().join(name);
        let mut args = vec![
            "translate",
            "--out",
            p(&out),
            "--checkpoint",
            p(&ck),
            "--src",
            "toyA",
            "--tgt",
            "toyB",
            "--in",
            p(&input),
        ];
        args.extend_from_slice(extra);
        ok(&args);
        fs::read_to_string(out.join("translations.txt")).unwrap()
    };
    let first = translate("t1", &["--deterministic"]);
    assert_eq!(first.lines().count(), 2);
    assert_eq!(first, translate("t2", &["--deterministic"]));
    assert_eq!(first, translate("t3", &[]));
    assert_eq!(translate("s1", &["--sample-seed", "3"]), translate("s2", &["--sample-seed", "3"]));
}

#[test]
fn eval_writes_both_tables() {
    let dir = tempfile::tempdir().unwrap();
    let (data, ck) = tiny_model(dir.path());
    let out = dir.path().join("eval");
    ok(&["eval", "--out", p(&out), "--checkpoint", p(&ck), "--test", p(&data.join("test.tsv")), "--max-pairs", "3"]);
    let bleu = fs::read_to_string(out.join("bleu.csv")).unwrap();
    assert!(bleu.starts_with("src,toyA,toyB,toyC\n"));
    assert_eq!(bleu.lines().count(), 4);
    assert!(out.join("naive_copy.csv").exists());
}
