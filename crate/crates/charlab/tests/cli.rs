//! End-to-end tests of the `charlab` binary: exit codes, file outputs, and
//! the train → analyze → plot pipeline on a miniature configuration.

use std::path::Path;
use std::process::Command;

fn charlab() -> Command {
    Command::new(env!("CARGO_BIN_EXE_charlab"))
}

#[test]
fn make_vocab_writes_refuses_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("v.json");
    let status = charlab()
        .args(["make-vocab", "--seed", "1", "--vocab-size", "64", "--k", "4"])
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let first = std::fs::read(&out).unwrap();
    let v = charlab::vocab::Vocabulary::load(&out).unwrap();
    assert_eq!(v.n_words(), 64);

    // refuse to overwrite without --force, exit code 1
    let output = charlab()
        .args(["make-vocab", "--seed", "1", "--vocab-size", "64", "--k", "4"])
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(1));
    assert_eq!(std::fs::read(&out).unwrap(), first);

    // --force overwrites with identical bytes (determinism)
    let status = charlab()
        .args(["make-vocab", "--seed", "1", "--vocab-size", "64", "--k", "4", "--force"])
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    assert_eq!(std::fs::read(&out).unwrap(), first);
}

#[test]
fn missing_required_argument_is_a_usage_error() {
    let output = charlab()
        .args(["make-vocab", "--seed", "1", "--vocab-size", "64"])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn gen_tasks_dumps_parseable_records() {
    let dir = tempfile::tempdir().unwrap();
    let vocab = dir.path().join("v.json");
    assert!(charlab()
        .args(["make-vocab", "--seed", "2", "--vocab-size", "32", "--k", "4"])
        .arg("--out")
        .arg(&vocab)
        .status()
        .unwrap()
        .success());
    let out = dir.path().join("tasks.jsonl");
    assert!(charlab()
        .args(["gen-tasks", "--count", "20", "--seed", "9", "--tasks", "W1,C6"])
        .arg("--vocab")
        .arg(&vocab)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap()
        .success());
    let text = std::fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 20);
    for line in lines {
        let rec: charlab::taskgen::TaskRecord = serde_json::from_str(line).unwrap();
        assert!(rec.code == "W1" || rec.code == "C6");
        assert!(!rec.prompt_ids.is_empty());
        assert!(!rec.text.is_empty());
    }
}

fn write_tiny_config(path: &Path, n_layers: usize, steps: u64) {
    let config = serde_json::json!({
        "vocab": {"seed": 1, "vocab_size": 8, "k": 2},
        "model": {
            "n_layers": n_layers, "d_tokens": 16, "n_heads": 2,
            "char_enabled": true, "d_chars": 8, "char_heads": 2,
            "max_tokens": 128, "max_chars": 320, "max_intra": 4
        },
        "schedule": {
            "total_steps": steps, "batch_size": 4, "base_lr": 0.001,
            "eval_every": steps, "eval_samples_per_task": 1,
            "task_filter": ["W1", "C2"], "seed": 4
        }
    });
    std::fs::write(path, serde_json::to_string_pretty(&config).unwrap()).unwrap();
}

#[test]
fn insertion_middle_is_recorded_in_the_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.json");
    write_tiny_config(&config, 8, 2);
    let runs = dir.path().join("runs");
    assert!(charlab()
        .args(["train", "--insertion", "middle"])
        .arg("--config")
        .arg(&config)
        .arg("--out")
        .arg(&runs)
        .status()
        .unwrap()
        .success());
    let run_dir = std::fs::read_dir(&runs).unwrap().next().unwrap().unwrap().path();
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run_dir.join("manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["insertion"], "middle");
    assert_eq!(manifest["insertion_layers"], serde_json::json!([4]));
}

#[test]
fn strict_determinism_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.json");
    write_tiny_config(&config, 1, 6);
    let mut metrics = Vec::new();
    for name in ["r1", "r2"] {
        let runs = dir.path().join(name);
        assert!(charlab()
            .args(["train", "--strict-determinism"])
            .arg("--config")
            .arg(&config)
            .arg("--out")
            .arg(&runs)
            .status()
            .unwrap()
            .success());
        let run_dir = std::fs::read_dir(&runs).unwrap().next().unwrap().unwrap().path();
        metrics.push(std::fs::read(run_dir.join("metrics.jsonl")).unwrap());
    }
    assert!(!metrics[0].is_empty());
    assert_eq!(metrics[0], metrics[1]);
}

#[test]
fn train_analyze_plot_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.json");
    write_tiny_config(&config, 1, 4);
    let runs = dir.path().join("runs");
    assert!(charlab()
        .arg("train")
        .arg("--config")
        .arg(&config)
        .arg("--out")
        .arg(&runs)
        .status()
        .unwrap()
        .success());
    let run_dir = std::fs::read_dir(&runs).unwrap().next().unwrap().unwrap().path();

    let report = dir.path().join("report.json");
    assert!(charlab()
        .args(["analyze", "--threshold", "0.005"])
        .arg("--runs")
        .arg(&run_dir)
        .arg("--out")
        .arg(&report)
        .status()
        .unwrap()
        .success());
    assert!(report.exists());
    assert!(report.with_extension("csv").exists());
    let parsed: charlab::evalx::EmergenceReport =
        serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert!(!parsed.entries.is_empty());
    assert!(!parsed.curves.is_empty());

    let plots = dir.path().join("plots");
    assert!(charlab()
        .arg("plot")
        .arg("--report")
        .arg(&report)
        .arg("--out")
        .arg(&plots)
        .status()
        .unwrap()
        .success());
    let svg = std::fs::read_to_string(plots.join("accuracy_vs_step_mean_char.svg")).unwrap();
    // one polyline for the single run's mean_char curve
    assert_eq!(svg.matches("<polyline").count(), 1);
    assert!(plots.join("emergence.csv").exists());
}

#[test]
fn percolate_writes_trials_and_fit_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("perc.csv");
    assert!(charlab()
        .args([
            "percolate",
            "--grid",
            "64,256,1024x2,4",
            "--trials",
            "6",
            "--seed",
            "5",
        ])
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap()
        .success());
    let text = std::fs::read_to_string(&out).unwrap();
    assert!(text.starts_with("vocab_size,k,mode,criterion,trial,t_c\n"));
    assert_eq!(text.lines().filter(|l| l.starts_with("64,2,")).count(), 6);
    assert!(text.lines().any(|l| l.starts_with("fit,exponent,")));
    assert!(text.lines().any(|l| l.starts_with("fit,band_")));
}

#[test]
fn coordcheck_single_width_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("cc.csv");
    assert!(charlab()
        .args(["coordcheck", "--widths", "1", "--steps", "2", "--batch-size", "2"])
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap()
        .success());
    let text = std::fs::read_to_string(&out).unwrap();
    assert!(text.starts_with("width_mult,step,layer,rms\n"));
    // 2 steps x (2 layers + embedding row)
    assert_eq!(text.lines().count(), 1 + 2 * 3);
}
