//! Long-running training sanity check, ignored by default:
//!     cargo test --release -p charlab --test train_sanity -- --ignored --nocapture

use charlab::model::ModelConfig;
use charlab::train::{train, RunSinks, TrainSchedule};
use charlab::vocab::build_vocab;

/// A 2-layer, 64-wide decoder overfits the copy task to exact-match 1.0
/// within 2000 steps (|V|=32, K=2).
#[test]
#[ignore = "roughly ten minutes in release mode"]
fn copy_task_overfits_to_perfect_accuracy() {
    let v = build_vocab(1, 32, 2).unwrap();
    let cfg = ModelConfig {
        n_layers: 2,
        d_tokens: 64,
        n_heads: 4,
        char_enabled: false,
        max_tokens: 128,
        max_chars: 320,
        max_intra: 8,
        ..ModelConfig::default()
    };
    let sched = TrainSchedule {
        total_steps: 2000,
        batch_size: 64,
        base_lr: 3e-4,
        eval_every: 500,
        eval_samples_per_task: 64,
        seed: 7,
        task_filter: Some(vec!["W1".to_string()]),
        ..TrainSchedule::default()
    };
    let dir = tempfile::tempdir().unwrap();
    let metrics = dir.path().join("metrics.jsonl");
    let sinks = RunSinks {
        run_id: "overfit-w1".to_string(),
        metrics_path: Some(metrics.clone()),
        checkpoint_dir: None,
        log_every: 200,
    };
    train(&cfg, &v, &sched, &sinks, false).unwrap();
    let text = std::fs::read_to_string(&metrics).unwrap();
    let last_w1: charlab::train::MetricsRecord = text
        .lines().rfind(|l| l.contains("\"W1\""))
        .map(|l| serde_json::from_str(l).unwrap())
        .unwrap();
    println!("final W1 accuracy: {}", last_w1.accuracy);
    assert_eq!(last_w1.accuracy, 1.0);
}
