//! Width scaling with maximal-update parametrization.
//!
//! Width is scaled by growing `d_tokens` and `n_heads` together (head size
//! stays fixed); the character encoder is never scaled. Under `mup`, hidden
//! weights are initialized at `std ~ 1/sqrt(fan_in)` and updated with a
//! `base_fan_in / fan_in` learning-rate multiplier (1/m for square tensors),
//! output logits are multiplied by `1/m`, and attention logits are scaled by
//! `1/d_head`. At `m = 1` every multiplier reduces to the standard value.

use crate::model::{
    loss_and_grads, residual_sumsq, LossMask, ModelConfig, ModelError, Parameters, Parametrization,
    TensorRole, TensorSpec, TrainExample,
};
use crate::optim::Adam;
use crate::rng::Rng;
use crate::taskgen::make_example;
use crate::vocab::Vocabulary;
use serde::Serialize;
use std::collections::HashMap;

const BASE_STD: f64 = 0.02;

#[derive(Debug, thiserror::Error)]
pub enum ScalingError {
    #[error("width multiplier {mult} does not give integer dimensions (d_tokens={d}, n_heads={h})")]
    NonIntegerWidth { mult: f64, d: f64, h: f64 },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Task(#[from] crate::taskgen::TaskError),
}

/// Scales the base model width by `m`: `d_tokens`, `n_heads`, and (derived)
/// `d_mlp` grow; head size, the character encoder, and everything else stay
/// fixed.
pub fn scale_config(base: &ModelConfig, m: f64) -> Result<ModelConfig, ScalingError> {
    let d = base.d_tokens as f64 * m;
    let h = base.n_heads as f64 * m;
    if d.fract() != 0.0 || h.fract() != 0.0 || d < 1.0 || h < 1.0 {
        return Err(ScalingError::NonIntegerWidth { mult: m, d, h });
    }
    let mut cfg = base.clone();
    cfg.d_tokens = d as usize;
    cfg.n_heads = h as usize;
    cfg.width_mult = base.width_mult * m;
    Ok(cfg)
}

/// Per-tensor serialized plan entry, for reports.
#[derive(Clone, Debug, Serialize)]
pub struct TensorPlan {
    pub name: String,
    pub init_std: f64,
    pub lr_mult: f64,
}

/// Initialization and learning-rate rules for one config.
#[derive(Clone, Debug)]
pub struct MupPlan {
    pub width_mult: f64,
    pub base_lr: f64,
    pub logit_mult: f64,
    pub parametrization: Parametrization,
    /// Fan-in each hidden tensor would have at width multiplier 1.
    base_fan_in: HashMap<String, usize>,
}

impl MupPlan {
    pub fn init_std(&self, spec: &TensorSpec) -> f64 {
        match (self.parametrization, spec.role) {
            (Parametrization::Standard, _) => BASE_STD,
            (Parametrization::Mup, TensorRole::Hidden | TensorRole::OutputProj) => {
                let base = self.base_fan(spec);
                BASE_STD * (base as f64 / spec.fan_in() as f64).sqrt()
            }
            (Parametrization::Mup, _) => BASE_STD,
        }
    }

    pub fn lr_mult(&self, spec: &TensorSpec) -> f64 {
        match (self.parametrization, spec.role) {
            (Parametrization::Standard, _) => 1.0,
            (Parametrization::Mup, TensorRole::Hidden | TensorRole::OutputProj) => {
                let base = self.base_fan(spec);
                base as f64 / spec.fan_in() as f64
            }
            (Parametrization::Mup, _) => 1.0,
        }
    }

    fn base_fan(&self, spec: &TensorSpec) -> usize {
        self.base_fan_in
            .get(&spec.name)
            .copied()
            .unwrap_or_else(|| spec.fan_in())
    }

    /// The full per-tensor table for a vocabulary size.
    pub fn table(&self, cfg: &ModelConfig, vocab_len: usize) -> Vec<TensorPlan> {
        crate::model::tensor_specs(cfg, vocab_len)
            .iter()
            .map(|s| TensorPlan {
                name: s.name.clone(),
                init_std: self.init_std(s),
                lr_mult: self.lr_mult(s),
            })
            .collect()
    }
}

/// Builds the scaling plan for a config. Fan-ins at multiplier 1 are derived
/// by unscaling the config; the vocabulary size does not matter for any
/// width-scaled tensor, so a placeholder is used.
pub fn mup_plan(cfg: &ModelConfig, base_lr: f64) -> MupPlan {
    let mut base_fan_in = HashMap::new();
    if cfg.parametrization == Parametrization::Mup && cfg.width_mult != 1.0 {
        if let Ok(base_cfg) = scale_config(cfg, 1.0 / cfg.width_mult) {
            for spec in crate::model::tensor_specs(&base_cfg, 1) {
                base_fan_in.insert(spec.name.clone(), spec.fan_in());
            }
        }
    }
    MupPlan {
        width_mult: cfg.width_mult,
        base_lr,
        logit_mult: cfg.logit_mult(),
        parametrization: cfg.parametrization,
        base_fan_in,
    }
}

/// One coordinate-check measurement.
#[derive(Clone, Debug, Serialize)]
pub struct CoordRow {
    pub width_mult: f64,
    pub step: u64,
    /// 0 = embedding output, l = after decoder layer l.
    pub layer: usize,
    pub rms: f64,
}

/// Trains each width for `steps` Adam steps on identical data and records the
/// RMS of every block's residual-stream output before each update.
pub fn coord_check(
    base: &ModelConfig,
    v: &Vocabulary,
    m_list: &[f64],
    steps: u64,
    batch_size: usize,
    lr: f64,
    seed: u64,
) -> Result<Vec<CoordRow>, ScalingError> {
    let mut rows = Vec::new();
    for &m in m_list {
        let cfg = scale_config(base, m)?;
        cfg.validate()?;
        let plan = mup_plan(&cfg, lr);
        let mut params = Parameters::init(&cfg, v.len(), &plan, seed);
        let mut adam = Adam::defaults(&params);
        for step in 1..=steps {
            // the same batch across widths: streams depend only on (seed, step, i)
            let batch: Vec<TrainExample> = (0..batch_size)
                .map(|i| {
                    let mut rng = Rng::from_path(seed, &[0xC0, step, i as u64]);
                    make_example(v, &mut rng, None).map(|inst| TrainExample::from_instance(&inst))
                })
                .collect::<Result<_, _>>()?;
            let n_layers = cfg.n_layers;
            let mut sumsq = vec![0.0; n_layers + 1];
            let mut count = 0usize;
            for ex in &batch {
                let (s, n) = residual_sumsq(&params, &cfg, v, &ex.ids)?;
                for (acc, x) in sumsq.iter_mut().zip(&s) {
                    *acc += x;
                }
                count += n;
            }
            for (layer, &sq) in sumsq.iter().enumerate() {
                rows.push(CoordRow {
                    width_mult: m,
                    step,
                    layer,
                    rms: (sq / count as f64).sqrt(),
                });
            }
            let (_, grads) = loss_and_grads(&params, &cfg, v, &batch, LossMask::Full, false)?;
            adam.step(&mut params, &grads, lr, &plan);
        }
    }
    Ok(rows)
}

/// Worst-case cross-width RMS ratio per (step, layer), maximized over the
/// table: the headline number of a coordinate check.
pub fn max_rms_ratio(rows: &[CoordRow]) -> f64 {
    let mut groups: HashMap<(u64, usize), (f64, f64)> = HashMap::new();
    for r in rows {
        let e = groups
            .entry((r.step, r.layer))
            .or_insert((f64::INFINITY, f64::NEG_INFINITY));
        e.0 = e.0.min(r.rms);
        e.1 = e.1.max(r.rms);
    }
    groups
        .values()
        .map(|(lo, hi)| if *lo > 0.0 { hi / lo } else { f64::INFINITY })
        .fold(0.0, f64::max)
}

pub fn coord_rows_to_csv(rows: &[CoordRow]) -> String {
    let mut out = String::from("width_mult,step,layer,rms\n");
    for r in rows {
        out.push_str(&format!("{},{},{},{}\n", r.width_mult, r.step, r.layer, r.rms));
    }
    out
}
