//! End-to-end runs of the `gcl` binary: every subcommand, the
//! overwrite guard, error contracts, and rerun determinism.

use std::path::Path;
use std::process::{Command, Output};

fn gcl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gcl"))
        .args(args)
        .output()
        .expect("spawning gcl")
}

fn assert_ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn line_count(path: &Path) -> usize {
    std::fs::read_to_string(path).unwrap().lines().count()
}

#[test]
fn invalid_flags_fail_with_usage_text() {
    let out = gcl(&["--definitely-not-a-flag"]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("Usage"), "no usage text:\n{}", stderr(&out));

    let out = gcl(&["gen-stimuli"]); // missing --out
    assert!(!out.status.success());
    assert!(stderr(&out).contains("Usage"));
}

#[test]
fn gen_stimuli_writes_everything_and_guards_the_out_dir() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("stims");
    let out_s = out_dir.to_str().unwrap();

    let run = gcl(&["gen-stimuli", "--out", out_s, "--format", "raw", "--seed", "3"]);
    assert_ok(&run);
    assert!(out_dir.join("run_manifest.json").is_file());
    assert_eq!(line_count(&out_dir.join("triples.csv")), 769);
    assert_eq!(line_count(&out_dir.join("images").join("manifest.csv")), 993);
    let raw_files = std::fs::read_dir(out_dir.join("images"))
        .unwrap()
        .filter(|e| {
            e.as_ref().unwrap().path().extension().map(|x| x == "raw").unwrap_or(false)
        })
        .count();
    assert_eq!(raw_files, 992);

    // second run refuses the claimed directory, --force overrides
    let refused = gcl(&["gen-stimuli", "--out", out_s, "--format", "raw", "--seed", "3"]);
    assert!(!refused.status.success());
    assert!(stderr(&refused).contains("--force"), "stderr:\n{}", stderr(&refused));
    let forced =
        gcl(&["gen-stimuli", "--out", out_s, "--format", "raw", "--seed", "3", "--force"]);
    assert_ok(&forced);
}

#[test]
fn train_closure_report_chain_produces_working_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("tiny.toml");
    std::fs::write(
        &config,
        r#"
seed = 11

[net]
kind = "conv"
n_layers = 3
n_classes = 2
base_width = 4
width_step = 4
penultimate_width = 16
head = "single_sigmoid"

[data]
source = "stimuli"
task = "CD"

[train]
epochs = 1
"#,
    )
    .unwrap();

    let t_out = dir.path().join("train");
    let run = gcl(&["train", "--config", config.to_str().unwrap(), "--out", t_out.to_str().unwrap()]);
    assert_ok(&run);
    assert!(t_out.join("net.ckpt").is_file());
    assert_eq!(line_count(&t_out.join("train_report.csv")), 2);

    let ckpt = t_out.join("net.ckpt");
    let c_out = dir.path().join("closure");
    let run = gcl(&[
        "closure",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--layers",
        "fc_finale",
        "--out",
        c_out.to_str().unwrap(),
        "--seed",
        "1",
        "--bootstrap",
        "100",
    ]);
    assert_ok(&run);
    assert_eq!(line_count(&c_out.join("records.csv")), 769);
    assert_eq!(line_count(&c_out.join("curves.csv")), 7);

    // a bogus layer name must fail and name the valid layers
    let bad = gcl(&[
        "closure",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--layers",
        "conv2d_99",
        "--out",
        dir.path().join("closure_bad").to_str().unwrap(),
    ]);
    assert!(!bad.status.success());
    let msg = stderr(&bad);
    assert!(msg.contains("conv2d_99") && msg.contains("fc_finale"), "stderr:\n{msg}");

    let r_out = dir.path().join("plots");
    let run = gcl(&[
        "report",
        "--curves",
        c_out.join("curves.csv").to_str().unwrap(),
        "--out",
        r_out.to_str().unwrap(),
    ]);
    assert_ok(&run);
    let svg = std::fs::read_to_string(r_out.join("curves.svg")).unwrap();
    assert!(svg.starts_with("<svg"), "not an svg:\n{}", &svg[..svg.len().min(120)]);
    assert!(svg.contains("fc_finale"));
}

#[test]
fn experiment_rerun_reproduces_csv_outputs_byte_identically() {
    let dir = tempfile::tempdir().unwrap();
    let plan = dir.path().join("untrained.toml");
    std::fs::write(
        &plan,
        r#"
name = "untrained"
replications = 1
epochs = 1
bootstrap_b = 200

[data]
per_class = 40
"#,
    )
    .unwrap();

    let out = dir.path().join("exp");
    let out_s = out.to_str().unwrap();
    let first = gcl(&["experiment", "--plan", plan.to_str().unwrap(), "--out", out_s]);
    assert_ok(&first);

    let verdict: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("verdict.json")).unwrap()).unwrap();
    assert!(verdict.get("pass").and_then(|v| v.as_bool()).is_some());
    assert!(out.join("stats.json").is_file());
    assert!(out.join("reports").join("natural_r0.csv").is_file());
    assert!(out.join("reports").join("untrained_r0.csv").is_file());

    let records_a = std::fs::read(out.join("records.csv")).unwrap();
    let curves_a = std::fs::read(out.join("curves.csv")).unwrap();

    let second =
        gcl(&["experiment", "--plan", plan.to_str().unwrap(), "--out", out_s, "--force"]);
    assert_ok(&second);
    let records_b = std::fs::read(out.join("records.csv")).unwrap();
    let curves_b = std::fs::read(out.join("curves.csv")).unwrap();
    assert_eq!(records_a, records_b, "records.csv changed across identical reruns");
    assert_eq!(curves_a, curves_b, "curves.csv changed across identical reruns");
}
