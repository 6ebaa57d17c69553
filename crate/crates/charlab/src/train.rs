//! Deterministic training loop: Adam with cosine decay, on-the-fly data
//! generation, periodic exact-match evaluation, metrics and checkpoints.
//!
//! Every batch item and every evaluation instance owns an RNG stream keyed by
//! `(seed, step, index)`, so results do not depend on worker count or
//! evaluation cadence; two runs with the same seed produce byte-identical
//! metrics files.

use crate::model::{
    generate, loss_and_grads, save_checkpoint, LossMask, ModelConfig, ModelError, Parameters,
    TrainExample,
};
use crate::optim::{clip_global_norm, lr_at, Adam};
use crate::rng::{stream_seed, Rng};
use crate::scaling::mup_plan;
use crate::taskgen::{descriptor, descriptor_by_code, make_example, task_catalog, Level, TaskError};
use crate::vocab::Vocabulary;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("numeric failure at step {step}: {source}")]
    NumericFailureAt { step: u64, source: ModelError },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error("unknown task code {0:?} in task filter")]
    UnknownTaskCode(String),
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSchedule {
    pub total_steps: u64,
    pub batch_size: usize,
    pub base_lr: f64,
    pub warmup_steps: u64,
    pub eval_every: u64,
    pub eval_samples_per_task: u32,
    pub checkpoint_every: u64,
    pub seed: u64,
    /// Restrict training and evaluation to these task codes (e.g. ["W1"]).
    pub task_filter: Option<Vec<String>>,
    pub loss_mask: LossMask,
    pub grad_clip: Option<f64>,
    pub weight_decay: f64,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        TrainSchedule {
            total_steps: 30_000,
            batch_size: 64,
            base_lr: 1e-5,
            warmup_steps: 0,
            eval_every: 500,
            eval_samples_per_task: 256,
            checkpoint_every: 0,
            seed: 0,
            task_filter: None,
            loss_mask: LossMask::Full,
            grad_clip: None,
            weight_decay: 0.0,
        }
    }
}

impl TrainSchedule {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.total_steps == 0 || self.batch_size == 0 || self.base_lr <= 0.0 {
            return Err(TrainError::InvalidSchedule(
                "total_steps, batch_size, and base_lr must be positive".into(),
            ));
        }
        if self.eval_every > self.total_steps {
            return Err(TrainError::InvalidSchedule(format!(
                "eval_every={} exceeds total_steps={}",
                self.eval_every, self.total_steps
            )));
        }
        Ok(())
    }

    pub fn resolve_filter(&self) -> Result<Option<Vec<u8>>, TrainError> {
        match &self.task_filter {
            None => Ok(None),
            Some(codes) => {
                let mut ids = Vec::with_capacity(codes.len());
                for code in codes {
                    ids.push(
                        descriptor_by_code(code)
                            .map_err(|_| TrainError::UnknownTaskCode(code.clone()))?
                            .task_id,
                    );
                }
                Ok(Some(ids))
            }
        }
    }
}

/// One metrics line: a task code (or "mean_word"/"mean_char") with its
/// exact-match accuracy at a step. `loss` is the training loss of the batch
/// the step was entered with.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub run_id: String,
    pub step: u64,
    pub task: String,
    pub accuracy: f64,
    pub n_samples: u32,
    pub loss: f64,
}

/// Output destinations for a training run. Everything is optional so tests
/// can run without touching the filesystem.
#[derive(Clone, Debug, Default)]
pub struct RunSinks {
    pub run_id: String,
    pub metrics_path: Option<PathBuf>,
    pub checkpoint_dir: Option<PathBuf>,
    /// Progress lines to stderr every N steps (0 = quiet).
    pub log_every: u64,
}

/// Exact-match evaluation: `n_per_task` fresh instances per task, greedy
/// decoding, score 1 iff the generated ids equal the target exactly
/// (terminating EOS included). Instances are keyed by `(seed, step, task,
/// index)`; a truncated or overlong generation scores 0.
#[allow(clippy::too_many_arguments)]
pub fn evaluate(
    p: &Parameters,
    cfg: &ModelConfig,
    v: &Vocabulary,
    n_per_task: u32,
    eval_seed: u64,
    step: u64,
    filter: Option<&[u8]>,
    strict: bool,
) -> Result<Vec<(String, f64, u32)>, TrainError> {
    let tasks: Vec<u8> = match filter {
        Some(ids) => ids.to_vec(),
        None => (0..task_catalog().len() as u8).collect(),
    };
    let n = n_per_task as usize;
    let total = tasks.len() * n;
    let hits = crate::par::map_indexed(total, strict, |idx| {
        let task = tasks[idx / n];
        let i = (idx % n) as u64;
        let mut rng = Rng::from_path(eval_seed, &[0xEA, step, task as u64, i]);
        let inst = make_example(v, &mut rng, Some(&[task]))?;
        let target = &inst.target_ids;
        let max_new = target.len();
        let ok = match generate(p, cfg, v, &inst.prompt_ids, max_new) {
            Ok(out) => out.eos && out.ids == target[..target.len() - 1],
            // overflow counts as a mismatch, not a failure
            Err(ModelError::Overlong { .. })
            | Err(ModelError::TooManyChars { .. })
            | Err(ModelError::PromptTooLong) => false,
            Err(e) => return Err(TrainError::Model(e)),
        };
        Ok(ok)
    });
    let mut flat = Vec::with_capacity(total);
    for r in hits {
        flat.push(r?);
    }
    let per_task = tasks
        .iter()
        .enumerate()
        .map(|(ti, &task)| {
            let correct = flat[ti * n..(ti + 1) * n].iter().filter(|&&ok| ok).count();
            (
                descriptor(task).code.to_string(),
                correct as f64 / n_per_task as f64,
                n_per_task,
            )
        })
        .collect();
    Ok(per_task)
}

/// Builds the full metrics-record set for an evaluation: per-task records
/// plus the word-level and character-level means.
pub fn metrics_records(
    run_id: &str,
    step: u64,
    train_loss: f64,
    per_task: &[(String, f64, u32)],
) -> Vec<MetricsRecord> {
    let mut records: Vec<MetricsRecord> = per_task
        .iter()
        .map(|(task, acc, n)| MetricsRecord {
            run_id: run_id.to_string(),
            step,
            task: task.clone(),
            accuracy: *acc,
            n_samples: *n,
            loss: train_loss,
        })
        .collect();
    for (label, level) in [("mean_word", Level::Word), ("mean_char", Level::Character)] {
        let of_level: Vec<&(String, f64, u32)> = per_task
            .iter()
            .filter(|(code, _, _)| {
                descriptor_by_code(code).map(|d| d.level == level).unwrap_or(false)
            })
            .collect();
        if of_level.is_empty() {
            continue;
        }
        let accs: Vec<f64> = of_level.iter().map(|(_, acc, _)| *acc).collect();
        let n: u32 = of_level.iter().map(|(_, _, n)| *n).sum();
        records.push(MetricsRecord {
            run_id: run_id.to_string(),
            step,
            task: label.to_string(),
            accuracy: accs.iter().sum::<f64>() / accs.len() as f64,
            n_samples: n,
            loss: train_loss,
        });
    }
    records
}

fn write_records(
    writer: &mut Option<std::io::BufWriter<std::fs::File>>,
    records: &[MetricsRecord],
) -> Result<(), TrainError> {
    if let Some(w) = writer {
        for r in records {
            serde_json::to_writer(&mut *w, r)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
    }
    Ok(())
}

/// Runs the full training loop and returns the final parameters.
pub fn train(
    cfg: &ModelConfig,
    v: &Vocabulary,
    sched: &TrainSchedule,
    sinks: &RunSinks,
    strict: bool,
) -> Result<Parameters, TrainError> {
    cfg.validate()?;
    sched.validate()?;
    let filter = sched.resolve_filter()?;
    let plan = mup_plan(cfg, sched.base_lr);
    let init_seed = stream_seed(sched.seed, &[1]);
    let eval_seed = stream_seed(sched.seed, &[2]);
    let mut params = Parameters::init(cfg, v.len(), &plan, init_seed);
    let mut adam = Adam::new(&params, 0.9, 0.999, 1e-8, sched.weight_decay);

    let mut metrics_writer = match &sinks.metrics_path {
        Some(path) => {
            if let Some(dir) = path.parent() {
                std::fs::create_dir_all(dir)?;
            }
            Some(std::io::BufWriter::new(std::fs::File::create(path)?))
        }
        None => None,
    };
    if let Some(dir) = &sinks.checkpoint_dir {
        std::fs::create_dir_all(dir)?;
    }

    let mut last_loss = f64::NAN;
    for step in 0..sched.total_steps {
        let batch: Vec<TrainExample> = {
            let results = crate::par::map_indexed(sched.batch_size, strict, |j| {
                let mut rng = Rng::from_path(sched.seed, &[0x7E, step, j as u64]);
                make_example(v, &mut rng, filter.as_deref())
                    .map(|inst| TrainExample::from_instance(&inst))
            });
            results.into_iter().collect::<Result<_, _>>()?
        };
        let (loss, mut grads) =
            match loss_and_grads(&params, cfg, v, &batch, sched.loss_mask, strict) {
                Ok(x) => x,
                Err(e @ ModelError::NumericFailure(_)) => {
                    if let Some(dir) = &sinks.checkpoint_dir {
                        let path = dir.join(format!("step_{step:07}_failed.ckpt"));
                        save_checkpoint(&params, step, Rng::from_seed(sched.seed).state(), &path)?;
                    }
                    return Err(TrainError::NumericFailureAt { step, source: e });
                }
                Err(e) => return Err(e.into()),
            };
        last_loss = loss;
        if let Some(max_norm) = sched.grad_clip {
            clip_global_norm(&mut grads, max_norm);
        }

        if sched.eval_every > 0 && step % sched.eval_every == 0 {
            let per_task = evaluate(
                &params,
                cfg,
                v,
                sched.eval_samples_per_task,
                eval_seed,
                step,
                filter.as_deref(),
                strict,
            )?;
            let records = metrics_records(&sinks.run_id, step, loss, &per_task);
            write_records(&mut metrics_writer, &records)?;
        }
        if sinks.log_every > 0 && step % sinks.log_every == 0 {
            eprintln!(
                "[{}] step {step}/{} loss {loss:.4} lr {:.3e}",
                sinks.run_id,
                sched.total_steps,
                lr_at(sched.base_lr, step, sched.total_steps, sched.warmup_steps)
            );
        }

        let lr = lr_at(sched.base_lr, step, sched.total_steps, sched.warmup_steps);
        adam.step(&mut params, &grads, lr, &plan);

        if sched.checkpoint_every > 0 && (step + 1) % sched.checkpoint_every == 0 {
            if let Some(dir) = &sinks.checkpoint_dir {
                let path = dir.join(format!("step_{:07}.ckpt", step + 1));
                save_checkpoint(&params, step + 1, Rng::from_seed(sched.seed).state(), &path)?;
            }
        }
    }

    // final evaluation and checkpoint
    if sched.eval_every > 0 {
        let per_task = evaluate(
            &params,
            cfg,
            v,
            sched.eval_samples_per_task,
            eval_seed,
            sched.total_steps,
            filter.as_deref(),
            strict,
        )?;
        let records = metrics_records(&sinks.run_id, sched.total_steps, last_loss, &per_task);
        write_records(&mut metrics_writer, &records)?;
    }
    if let Some(dir) = &sinks.checkpoint_dir {
        let path = dir.join("final.ckpt");
        save_checkpoint(
            &params,
            sched.total_steps,
            Rng::from_seed(sched.seed).state(),
            &path,
        )?;
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vocab::build_vocab;

    fn tiny_cfg() -> ModelConfig {
        ModelConfig {
            n_layers: 1,
            d_tokens: 32,
            n_heads: 2,
            char_enabled: true,
            d_chars: 16,
            char_heads: 2,
            max_tokens: 128,
            max_chars: 320,
            max_intra: 8,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn initial_loss_is_near_uniform() {
        let v = build_vocab(1, 32, 2).unwrap();
        let cfg = tiny_cfg();
        let plan = mup_plan(&cfg, 1e-3);
        let params = Parameters::init(&cfg, v.len(), &plan, 0);
        let batch: Vec<TrainExample> = (0..8)
            .map(|j| {
                let mut rng = Rng::from_path(3, &[j]);
                TrainExample::from_instance(&make_example(&v, &mut rng, None).unwrap())
            })
            .collect();
        let (loss, _) = loss_and_grads(&params, &cfg, &v, &batch, LossMask::Full, true).unwrap();
        let uniform = (v.len() as f64).ln();
        assert!(
            (loss - uniform).abs() / uniform < 0.10,
            "loss={loss}, ln|V|={uniform}"
        );
    }

    #[test]
    fn strict_and_parallel_runs_match_bitwise() {
        let v = build_vocab(5, 16, 2).unwrap();
        let cfg = tiny_cfg();
        let sched = TrainSchedule {
            total_steps: 4,
            batch_size: 10,
            base_lr: 1e-3,
            eval_every: 2,
            eval_samples_per_task: 2,
            seed: 9,
            ..TrainSchedule::default()
        };
        let dir = tempfile::tempdir().unwrap();
        let run = |strict: bool, name: &str| {
            let sinks = RunSinks {
                run_id: "t".to_string(),
                metrics_path: Some(dir.path().join(name)),
                checkpoint_dir: None,
                log_every: 0,
            };
            train(&cfg, &v, &sched, &sinks, strict).unwrap();
            std::fs::read(dir.path().join(name)).unwrap()
        };
        let strict_bytes = run(true, "strict.jsonl");
        let strict_bytes2 = run(true, "strict2.jsonl");
        assert_eq!(strict_bytes, strict_bytes2);
        let par_bytes = run(false, "par.jsonl");
        assert_eq!(strict_bytes, par_bytes);
    }

    #[test]
    fn rigged_model_scores_perfectly_and_off_by_one_fails() {
        // a model stub is emulated by scoring the exact-match rule directly
        let v = build_vocab(1, 8, 2).unwrap();
        let target = [v.word_id_range().start, v.eos_id()];
        let perfect = crate::model::GenOutcome {
            ids: target[..1].to_vec(),
            eos: true,
        };
        assert!(perfect.eos && perfect.ids == target[..target.len() - 1]);
        let extra = crate::model::GenOutcome {
            ids: vec![target[0], target[0]],
            eos: true,
        };
        assert!(extra.ids != target[..target.len() - 1]);
        let no_eos = crate::model::GenOutcome {
            ids: target[..1].to_vec(),
            eos: false,
        };
        assert!(!(no_eos.eos && no_eos.ids == target[..target.len() - 1]));
    }

    #[test]
    fn numeric_failure_aborts_with_emergency_checkpoint() {
        let v = build_vocab(1, 8, 2).unwrap();
        let cfg = tiny_cfg();
        // an absurd learning rate drives weights to ~1e250 after one step,
        // overflowing attention scores on the next forward pass
        let sched = TrainSchedule {
            total_steps: 5,
            batch_size: 2,
            base_lr: 1e250,
            eval_every: 0,
            seed: 1,
            ..TrainSchedule::default()
        };
        let dir = tempfile::tempdir().unwrap();
        let ckpt_dir = dir.path().join("ckpt");
        let sinks = RunSinks {
            run_id: "blowup".to_string(),
            metrics_path: None,
            checkpoint_dir: Some(ckpt_dir.clone()),
            log_every: 0,
        };
        let err = train(&cfg, &v, &sched, &sinks, true).unwrap_err();
        let step = match err {
            TrainError::NumericFailureAt { step, .. } => step,
            other => panic!("expected numeric failure, got {other}"),
        };
        assert!(step >= 1);
        let failed_ckpt = std::fs::read_dir(&ckpt_dir)
            .unwrap()
            .filter_map(Result::ok)
            .any(|e| e.file_name().to_string_lossy().contains("failed"));
        assert!(failed_ckpt, "emergency checkpoint not written");
    }

    #[test]
    fn untrained_model_has_vanishing_char_accuracy() {
        // exact match at |V|=8192 is hopeless for a random model
        let v = build_vocab(2, 8192, 4).unwrap();
        let cfg = ModelConfig {
            n_layers: 1,
            d_tokens: 16,
            n_heads: 2,
            char_enabled: false,
            max_tokens: 256,
            max_chars: 1024,
            max_intra: 8,
            ..ModelConfig::default()
        };
        let plan = mup_plan(&cfg, 1e-3);
        let params = Parameters::init(&cfg, v.len(), &plan, 0);
        let char_tasks: Vec<u8> = task_catalog()
            .iter()
            .filter(|d| d.level == Level::Character)
            .map(|d| d.task_id)
            .collect();
        let per_task =
            evaluate(&params, &cfg, &v, 4, 9, 0, Some(&char_tasks), false).unwrap();
        let mean: f64 =
            per_task.iter().map(|(_, acc, _)| acc).sum::<f64>() / per_task.len() as f64;
        assert!(mean <= 0.01, "untrained char-task accuracy {mean}");
    }

    #[test]
    fn task_frequencies_are_uniform() {
        let v = build_vocab(1, 16, 2).unwrap();
        let mut counts = [0u32; 19];
        let n = 19_000u64;
        for i in 0..n {
            let mut rng = Rng::from_path(123, &[0x7E, i]);
            let inst = make_example(&v, &mut rng, None).unwrap();
            counts[inst.task_id as usize] += 1;
        }
        let expect = n as f64 / 19.0;
        let sigma = (expect * (1.0 - 1.0 / 19.0)).sqrt();
        for (t, &c) in counts.iter().enumerate() {
            assert!(
                (c as f64 - expect).abs() < 3.5 * sigma,
                "task {t}: {c} vs {expect}"
            );
        }
    }
}
