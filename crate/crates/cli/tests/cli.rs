use std::path::Path;
use std::process::{Command, Output};

use edgenas_cli::bankfile;
use edgenas_cli::trace::Trace;

fn edgenas(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut c = Command::new(env!("CARGO_BIN_EXE_edgenas"));
    c.args(args).env_remove("EDGENAS_SEED");
    for (k, v) in env {
        c.env(k, v);
    }
    c.output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn tiny_config(dir: &Path) -> std::path::PathBuf {
    let p = dir.join("tiny.toml");
    let text = format!(
        r#"schema_version = 1
seed = 5
output_dir = "{}"

[teacher]
depth = 4
steps = 3
batch = 4

[dataset]
heldout_samples = 8
heldout_grid = 2
calibration_samples = 16

[distill]
steps = 2
batch = 4

[search]
budget = 6
init_random = 3
n_restarts = 64

[finetune]
steps = 2
batch = 4

[eval]
steps = 5
num = 3
"#,
        dir.join("out").display()
    );
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn cost_prints_reference_counts() {
    let o = edgenas(&["cost", "--model", "dit-xl2", "--latent", "4x32x32"], &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let s = stdout(&o);
    assert!(s.contains("params 675.13M"), "{s}");
    assert!(s.contains("GMACs 118.6"), "{s}");
}

#[test]
fn latency_lists_ordering_anomaly() {
    let o = edgenas(&["latency", "--anomalies"], &[]);
    assert_eq!(code(&o), 0);
    let s = stdout(&o);
    assert!(
        s.lines()
            .any(|l| l.contains("EdgeDiT 1") && l.contains("slower than DiT L/2")),
        "{s}"
    );
    let o = edgenas(&["latency", "--mode", "table-exact", "--model", "EdgeDiT 1"], &[]);
    assert!(stdout(&o).contains("EdgeDiT 1: 86.13 ms"), "{}", stdout(&o));
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(code(&edgenas(&["no-such-command"], &[])), 2);
    assert_eq!(code(&edgenas(&["search", "--budget", "many"], &[])), 2);
}

#[test]
fn unknown_config_key_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.toml");
    std::fs::write(
        &p,
        "schema_version = 1\nseed = 1\noutput_dir = \"x\"\n[search]\nbudgett = 3\n",
    )
    .unwrap();
    let o = edgenas(&["--config", p.to_str().unwrap(), "report"], &[]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("budgett"), "{}", stderr(&o));
    let o = edgenas(
        &["--config", dir.path().join("missing.toml").to_str().unwrap(), "report"],
        &[],
    );
    assert_eq!(code(&o), 4);
}

#[test]
fn missing_prerequisite_names_the_producer() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = edgenas(&["--out", out, "distill"], &[]);
    assert_eq!(code(&o), 6);
    assert!(
        stderr(&o).contains("teacher.edtw") && stderr(&o).contains("edgenas pretrain-teacher"),
        "{}",
        stderr(&o)
    );
    let o = edgenas(&["--out", out, "report"], &[]);
    assert_eq!(code(&o), 6);
    assert!(stderr(&o).contains("edgenas search"), "{}", stderr(&o));
}

#[test]
fn toy_search_writes_one_record_per_evaluation() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = edgenas(&["--out", out, "search", "--budget", "50", "--space", "stage2", "--toy"], &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let t = Trace::read(&dir.path().join("trace.csv")).unwrap();
    assert_eq!(t.records.len(), 50);
    assert_eq!(t.header.depth, 4);
    let o = edgenas(&["--out", out, "report"], &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for f in ["front.csv", "progress.csv", "costs.csv", "summary.txt"] {
        assert!(dir.path().join("report").join(f).exists(), "{f}");
    }
}

#[test]
fn seed_override_changes_the_run() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for (d, seed) in [(&a, "1"), (&b, "2")] {
        let o = edgenas(
            &["--out", d.path().to_str().unwrap(), "search", "--budget", "12", "--toy"],
            &[("EDGENAS_SEED", seed)],
        );
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    let ta = Trace::read(&a.path().join("trace.csv")).unwrap();
    let tb = Trace::read(&b.path().join("trace.csv")).unwrap();
    assert_ne!(ta.header.config_hash, tb.header.config_hash);
    assert_ne!(ta.records[0].seed, tb.records[0].seed);
    let o = edgenas(&["search", "--toy"], &[("EDGENAS_SEED", "abc")]);
    assert_eq!(code(&o), 3);
}

#[test]
fn corrupted_trace_is_rejected_with_line_number() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    assert_eq!(code(&edgenas(&["--out", out, "search", "--budget", "10", "--toy"], &[])), 0);
    let path = dir.path().join("trace.csv");
    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    lines[4] = lines[4].replacen(',', ",R:zz|S:q,", 1);
    std::fs::write(&path, lines.join("\n") + "\n").unwrap();
    let o = edgenas(&["--out", out, "report"], &[]);
    assert_eq!(code(&o), 4);
    assert!(stderr(&o).contains("line 5"), "{}", stderr(&o));
}

#[test]
fn tiny_pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let c = cfg.to_str().unwrap();
    let run = |args: &[&str]| {
        let mut full = vec!["--config", c];
        full.extend_from_slice(args);
        let o = edgenas(&full, &[]);
        assert_eq!(code(&o), 0, "{args:?}: {}", stderr(&o));
        stdout(&o)
    };
    run(&["pretrain-teacher"]);
    run(&["assemble", "--arch", "R:00|S:0000"]);
    run(&["sample", "--model", "teacher"]);
    run(&["sample", "--model", "assembled"]);
    let out = dir.path().join("out");
    let teacher = bankfile::read(&out.join("samples_teacher.edtw")).unwrap();
    let assembled = bankfile::read(&out.join("samples_assembled.edtw")).unwrap();
    assert_eq!(teacher, assembled);

    // a surrogate config needs the bank
    let o = edgenas(&["--config", c, "assemble", "--arch", "R:10|S:0012"], &[]);
    assert_eq!(code(&o), 6, "{}", stderr(&o));

    run(&["distill"]);
    run(&["assemble", "--arch", "R:10|S:0012"]);
    run(&["search"]);
    assert_eq!(Trace::read(&out.join("trace.csv")).unwrap().records.len(), 6);
    run(&["report"]);
    run(&["finetune"]);
    run(&["sample", "--model", "finetuned"]);
    assert!(out.join("samples_finetuned.edtw").exists());

    // a depth mismatch is a config error
    let o = edgenas(&["--config", c, "assemble", "--arch", "R:0000|S:00000000"], &[]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
}
