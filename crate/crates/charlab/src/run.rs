//! Run configuration, manifests, and run-directory orchestration.
//!
//! A run directory contains everything needed to reproduce its metrics
//! byte-for-byte in strict mode: `config.json` (the resolved run config),
//! `vocab.json`, `manifest.json`, `metrics.jsonl`, and `checkpoints/`.

use crate::model::{ModelConfig, ModelError};
use crate::train::{train, RunSinks, TrainError, TrainSchedule};
use crate::vocab::{build_vocab, KSpec, VocabError, Vocabulary};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("output {0} already exists (pass --force to overwrite)")]
    OutputExists(PathBuf),
    #[error(transparent)]
    Vocab(#[from] VocabError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

/// Vocabulary source: an existing file or generation parameters.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum VocabSpec {
    Path { path: String },
    Gen { seed: u64, vocab_size: u64, k: u32 },
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisOptions {
    pub emergence_threshold: f64,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        AnalysisOptions {
            emergence_threshold: 0.005,
        }
    }
}

/// Everything needed to reproduce a training run.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub run_id: Option<String>,
    pub vocab: VocabSpec,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub schedule: TrainSchedule,
    #[serde(default)]
    pub analysis: AnalysisOptions,
    #[serde(default)]
    pub out_dir: Option<String>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig, RunError> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn derived_run_id(&self, v: &Vocabulary) -> String {
        match &self.run_id {
            Some(id) => id.clone(),
            None => {
                let mode = if self.model.char_enabled { "char" } else { "base" };
                let mut id = format!(
                    "v{}-k{}-{}-s{}",
                    v.n_words(),
                    v.k,
                    mode,
                    self.schedule.seed
                );
                if self.model.char_enabled && self.model.insertion != crate::model::Insertion::Every
                {
                    id.push_str(&format!("-{:?}", self.model.insertion).to_lowercase());
                }
                if self.model.width_mult != 1.0 {
                    id.push_str(&format!("-m{}", self.model.width_mult));
                }
                id
            }
        }
    }
}

/// Reproducibility record written next to the metrics.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub run_id: String,
    /// Number of word tokens in the vocabulary.
    pub vocab_size: u64,
    pub k: KSpec,
    pub char_enabled: bool,
    pub insertion: crate::model::Insertion,
    /// Resolved decoder layers receiving cross-attention.
    pub insertion_layers: Vec<usize>,
    pub width_mult: f64,
    pub model: ModelConfig,
    pub schedule: TrainSchedule,
    pub vocab_path: String,
    pub git_describe: String,
    pub started_at: String,
}

fn git_describe() -> String {
    std::process::Command::new("git")
        .args(["describe", "--always", "--dirty"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .map(|o| String::from_utf8_lossy(&o.stdout).trim().to_string())
        .unwrap_or_else(|| "unknown".to_string())
}

fn unix_timestamp() -> String {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs().to_string())
        .unwrap_or_else(|_| "0".to_string())
}

pub struct RunOutputs {
    pub run_dir: PathBuf,
    pub metrics_path: PathBuf,
    pub manifest_path: PathBuf,
    pub params: crate::model::Parameters,
}

pub fn load_vocab_spec(spec: &VocabSpec) -> Result<Vocabulary, VocabError> {
    match spec {
        VocabSpec::Path { path } => Vocabulary::load(Path::new(path)),
        VocabSpec::Gen { seed, vocab_size, k } => build_vocab(*seed, *vocab_size, *k),
    }
}

/// Executes a training run into `out_root/<run_id>/`.
pub fn execute_run(
    rc: &RunConfig,
    out_root: &Path,
    strict: bool,
    force: bool,
) -> Result<RunOutputs, RunError> {
    rc.model.validate()?;
    let vocab = load_vocab_spec(&rc.vocab)?;
    let run_id = rc.derived_run_id(&vocab);
    let run_dir = out_root.join(&run_id);
    if run_dir.exists() {
        if !force {
            return Err(RunError::OutputExists(run_dir));
        }
        std::fs::remove_dir_all(&run_dir)?;
    }
    std::fs::create_dir_all(&run_dir)?;
    let vocab_path = run_dir.join("vocab.json");
    vocab.save(&vocab_path)?;

    let mut resolved = rc.clone();
    resolved.run_id = Some(run_id.clone());
    std::fs::write(
        run_dir.join("config.json"),
        serde_json::to_string_pretty(&resolved)? + "\n",
    )?;

    let manifest = Manifest {
        run_id: run_id.clone(),
        vocab_size: vocab.n_words() as u64,
        k: vocab.k,
        char_enabled: rc.model.char_enabled,
        insertion: rc.model.insertion,
        insertion_layers: rc.model.cross_layers(),
        width_mult: rc.model.width_mult,
        model: rc.model.clone(),
        schedule: rc.schedule.clone(),
        vocab_path: vocab_path.display().to_string(),
        git_describe: git_describe(),
        started_at: unix_timestamp(),
    };
    let manifest_path = run_dir.join("manifest.json");
    std::fs::write(
        &manifest_path,
        serde_json::to_string_pretty(&manifest)? + "\n",
    )?;

    let metrics_path = run_dir.join("metrics.jsonl");
    let sinks = RunSinks {
        run_id: run_id.clone(),
        metrics_path: Some(metrics_path.clone()),
        checkpoint_dir: Some(run_dir.join("checkpoints")),
        log_every: 50,
    };
    let params = train(&rc.model, &vocab, &rc.schedule, &sinks, strict)?;
    Ok(RunOutputs {
        run_dir,
        metrics_path,
        manifest_path,
        params,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn run_config_rejects_unknown_keys() {
        let text = r#"{"vocab":{"seed":1,"vocab_size":8,"k":2},"bogus":3}"#;
        assert!(serde_json::from_str::<RunConfig>(text).is_err());
    }

    #[test]
    fn vocab_spec_forms_parse() {
        let gen: VocabSpec = serde_json::from_str(r#"{"seed":1,"vocab_size":8,"k":2}"#).unwrap();
        assert!(matches!(gen, VocabSpec::Gen { vocab_size: 8, .. }));
        let path: VocabSpec = serde_json::from_str(r#"{"path":"v.json"}"#).unwrap();
        assert!(matches!(path, VocabSpec::Path { .. }));
    }

    #[test]
    fn executes_a_tiny_run_and_refuses_overwrite() {
        let dir = tempfile::tempdir().unwrap();
        let rc = RunConfig {
            run_id: None,
            vocab: VocabSpec::Gen { seed: 1, vocab_size: 8, k: 2 },
            model: ModelConfig {
                n_layers: 1,
                d_tokens: 16,
                n_heads: 2,
                char_enabled: true,
                d_chars: 8,
                char_heads: 2,
                max_tokens: 96,
                max_chars: 256,
                max_intra: 4,
                ..ModelConfig::default()
            },
            schedule: TrainSchedule {
                total_steps: 2,
                batch_size: 4,
                eval_every: 2,
                eval_samples_per_task: 1,
                task_filter: Some(vec!["W1".to_string(), "C6".to_string()]),
                seed: 5,
                ..TrainSchedule::default()
            },
            analysis: AnalysisOptions::default(),
            out_dir: None,
        };
        let out = execute_run(&rc, dir.path(), true, false).unwrap();
        assert!(out.metrics_path.exists());
        assert!(out.manifest_path.exists());
        assert!(out.run_dir.join("vocab.json").exists());
        assert!(out.run_dir.join("checkpoints/final.ckpt").exists());
        let manifest: Manifest =
            serde_json::from_str(&std::fs::read_to_string(&out.manifest_path).unwrap()).unwrap();
        assert_eq!(manifest.vocab_size, 8);
        assert_eq!(manifest.insertion_layers, vec![0]);
        // refuses to overwrite without force
        assert!(matches!(
            execute_run(&rc, dir.path(), true, false),
            Err(RunError::OutputExists(_))
        ));
        // force succeeds
        assert!(execute_run(&rc, dir.path(), true, true).is_ok());
    }
}
