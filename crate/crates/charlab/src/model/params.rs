use super::{ModelConfig, ModelError};
use crate::rng::Rng;
use crate::scaling::MupPlan;
use crate::vocab::N_CHAR_IDS;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

/// Role of a tensor, used for initialization, learning-rate scaling, and
/// parameter accounting.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TensorRole {
    /// Vocabulary-indexed embedding table (token or character).
    Embedding,
    /// Position-indexed table (absolute, intra-token, inter-token).
    Position,
    /// Matrix-like weight inside the network.
    Hidden,
    /// The output projection producing logits.
    OutputProj,
    /// Layer-norm gain or bias.
    Gain,
}

#[derive(Clone, Debug)]
pub struct TensorSpec {
    pub name: String,
    pub dims: Vec<usize>,
    pub role: TensorRole,
}

impl TensorSpec {
    pub fn numel(&self) -> usize {
        self.dims.iter().product()
    }

    /// Fan-in for weight matrices `[in, out]`.
    pub fn fan_in(&self) -> usize {
        self.dims[0]
    }
}

#[derive(Clone, Debug)]
pub struct Tensor {
    pub spec: TensorSpec,
    pub data: Vec<f64>,
}

/// Enumerates every tensor of the model for a given config and vocabulary
/// size, in checkpoint order. This list is the single source of truth for
/// shapes: allocation, counting, and serialization all derive from it.
pub fn tensor_specs(cfg: &ModelConfig, vocab_len: usize) -> Vec<TensorSpec> {
    let d = cfg.d_tokens;
    let dc = cfg.d_chars;
    let mut specs = Vec::new();
    let mut push = |name: String, dims: Vec<usize>, role: TensorRole| {
        specs.push(TensorSpec { name, dims, role });
    };
    push("tok_emb".into(), vec![vocab_len, d], TensorRole::Embedding);
    push("pos_emb".into(), vec![cfg.max_tokens, d], TensorRole::Position);
    let cross_layers = cfg.cross_layers();
    for l in 0..cfg.n_layers {
        push(format!("l{l}.ln1.g"), vec![d], TensorRole::Gain);
        push(format!("l{l}.ln1.b"), vec![d], TensorRole::Gain);
        push(format!("l{l}.wq"), vec![d, d], TensorRole::Hidden);
        push(format!("l{l}.wk"), vec![d, d], TensorRole::Hidden);
        push(format!("l{l}.wv"), vec![d, d], TensorRole::Hidden);
        push(format!("l{l}.wo"), vec![d, d], TensorRole::Hidden);
        if cross_layers.contains(&l) {
            push(format!("l{l}.lnx.g"), vec![d], TensorRole::Gain);
            push(format!("l{l}.lnx.b"), vec![d], TensorRole::Gain);
            push(format!("l{l}.lnkv.g"), vec![dc], TensorRole::Gain);
            push(format!("l{l}.lnkv.b"), vec![dc], TensorRole::Gain);
            push(format!("l{l}.xq"), vec![d, d], TensorRole::Hidden);
            push(format!("l{l}.xk"), vec![dc, d], TensorRole::Hidden);
            push(format!("l{l}.xv"), vec![dc, d], TensorRole::Hidden);
            push(format!("l{l}.xo"), vec![d, d], TensorRole::Hidden);
        }
        push(format!("l{l}.ln2.g"), vec![d], TensorRole::Gain);
        push(format!("l{l}.ln2.b"), vec![d], TensorRole::Gain);
        push(format!("l{l}.w1"), vec![d, cfg.d_mlp()], TensorRole::Hidden);
        push(format!("l{l}.w2"), vec![cfg.d_mlp(), d], TensorRole::Hidden);
    }
    push("lnf.g".into(), vec![d], TensorRole::Gain);
    push("lnf.b".into(), vec![d], TensorRole::Gain);
    push("out_proj".into(), vec![d, vocab_len], TensorRole::OutputProj);
    if cfg.char_enabled {
        push("char_emb".into(), vec![N_CHAR_IDS, dc], TensorRole::Embedding);
        push("intra_pos".into(), vec![cfg.max_intra, dc], TensorRole::Position);
        push("inter_pos".into(), vec![cfg.max_tokens, dc], TensorRole::Position);
        for b in 0..cfg.char_layers {
            push(format!("c{b}.ln1.g"), vec![dc], TensorRole::Gain);
            push(format!("c{b}.ln1.b"), vec![dc], TensorRole::Gain);
            push(format!("c{b}.wq"), vec![dc, dc], TensorRole::Hidden);
            push(format!("c{b}.wk"), vec![dc, dc], TensorRole::Hidden);
            push(format!("c{b}.wv"), vec![dc, dc], TensorRole::Hidden);
            push(format!("c{b}.wo"), vec![dc, dc], TensorRole::Hidden);
            push(format!("c{b}.ln2.g"), vec![dc], TensorRole::Gain);
            push(format!("c{b}.ln2.b"), vec![dc], TensorRole::Gain);
            push(format!("c{b}.w1"), vec![dc, cfg.char_d_mlp()], TensorRole::Hidden);
            push(format!("c{b}.w2"), vec![cfg.char_d_mlp(), dc], TensorRole::Hidden);
        }
    }
    specs
}

/// Parameter-count breakdown by bucket.
///
/// `base_excl_embeddings` covers the decoder blocks plus the final norm;
/// embedding-like tables (token/position/character embeddings and the output
/// projection) are counted separately. `char_module` is everything the
/// character encoder owns: its block weights and the intra/inter position
/// tables. Cross-attention weights live in the decoder layers and are
/// reported in their own bucket.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct ParamCount {
    pub total: usize,
    pub base_excl_embeddings: usize,
    pub char_module: usize,
    pub cross_attention: usize,
    pub embeddings: usize,
}

pub fn param_count(cfg: &ModelConfig, vocab_len: usize) -> ParamCount {
    let mut count = ParamCount {
        total: 0,
        base_excl_embeddings: 0,
        char_module: 0,
        cross_attention: 0,
        embeddings: 0,
    };
    for spec in tensor_specs(cfg, vocab_len) {
        let n = spec.numel();
        count.total += n;
        let name = spec.name.as_str();
        let is_cross = [".lnx.", ".lnkv.", ".xq", ".xk", ".xv", ".xo"]
            .iter()
            .any(|tag| name.contains(tag));
        if name == "tok_emb" || name == "pos_emb" || name == "out_proj" || name == "char_emb" {
            count.embeddings += n;
        } else if name == "intra_pos" || name == "inter_pos" || name.starts_with("c") && name.contains('.') {
            count.char_module += n;
        } else if is_cross {
            count.cross_attention += n;
        } else {
            count.base_excl_embeddings += n;
        }
    }
    count
}

/// All learnable tensors plus the config they were built for.
#[derive(Clone, Debug)]
pub struct Parameters {
    pub config: ModelConfig,
    pub vocab_len: usize,
    pub tensors: Vec<Tensor>,
    index: HashMap<String, usize>,
}

fn name_stream(name: &str) -> u64 {
    // FNV-1a over the tensor name: the init stream follows the tensor, not
    // its index, so configs sharing tensor names share initial values
    let mut h = 0xCBF2_9CE4_8422_2325u64;
    for b in name.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

impl Parameters {
    /// Allocates and initializes parameters: weights are Gaussian with the
    /// plan's per-tensor std, gains are 1, biases 0. Streams are keyed by
    /// tensor name, so e.g. the decoder weights of a char-enabled model match
    /// those of the plain decoder initialized with the same seed.
    pub fn init(cfg: &ModelConfig, vocab_len: usize, plan: &MupPlan, seed: u64) -> Parameters {
        let specs = tensor_specs(cfg, vocab_len);
        let mut tensors = Vec::with_capacity(specs.len());
        for spec in specs.into_iter() {
            let mut rng = Rng::from_path(seed, &[0x1217, name_stream(&spec.name)]);
            let n = spec.numel();
            let data = match spec.role {
                TensorRole::Gain => {
                    if spec.name.ends_with(".g") {
                        vec![1.0; n]
                    } else {
                        vec![0.0; n]
                    }
                }
                _ => {
                    let std = plan.init_std(&spec);
                    (0..n).map(|_| rng.normal() * std).collect()
                }
            };
            tensors.push(Tensor { spec, data });
        }
        let index = tensors
            .iter()
            .enumerate()
            .map(|(i, t)| (t.spec.name.clone(), i))
            .collect();
        Parameters {
            config: cfg.clone(),
            vocab_len,
            tensors,
            index,
        }
    }

    pub fn idx(&self, name: &str) -> usize {
        *self
            .index
            .get(name)
            .unwrap_or_else(|| panic!("unknown tensor {name}"))
    }

    pub fn get(&self, name: &str) -> &[f64] {
        &self.tensors[self.idx(name)].data
    }

    pub fn n_tensors(&self) -> usize {
        self.tensors.len()
    }

    pub fn numel(&self) -> usize {
        self.tensors.iter().map(|t| t.spec.numel()).sum()
    }
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    config: ModelConfig,
    vocab_len: usize,
    step: u64,
    rng_state: [u64; 4],
    tensor_index: Vec<TensorIndexEntry>,
}

#[derive(Serialize, Deserialize)]
struct TensorIndexEntry {
    name: String,
    dims: Vec<usize>,
}

/// A model snapshot loaded from disk.
pub struct Checkpoint {
    pub params: Parameters,
    pub step: u64,
    pub rng_state: [u64; 4],
}

const MAGIC: &[u8; 8] = b"CHLM0001";

/// Writes a checkpoint: 8-byte magic, u64-LE length-prefixed JSON header,
/// then the tensors as little-endian f32 payloads in index order.
pub fn save_checkpoint(
    params: &Parameters,
    step: u64,
    rng_state: [u64; 4],
    path: &Path,
) -> Result<(), ModelError> {
    let header = CheckpointHeader {
        config: params.config.clone(),
        vocab_len: params.vocab_len,
        step,
        rng_state,
        tensor_index: params
            .tensors
            .iter()
            .map(|t| TensorIndexEntry {
                name: t.spec.name.clone(),
                dims: t.spec.dims.clone(),
            })
            .collect(),
    };
    let header_bytes = serde_json::to_vec(&header)?;
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    file.write_all(MAGIC)?;
    file.write_all(&(header_bytes.len() as u64).to_le_bytes())?;
    file.write_all(&header_bytes)?;
    for t in &params.tensors {
        let mut buf = Vec::with_capacity(t.data.len() * 4);
        for &x in &t.data {
            buf.extend_from_slice(&(x as f32).to_le_bytes());
        }
        file.write_all(&buf)?;
    }
    file.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, ModelError> {
    let mut file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 8];
    file.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(ModelError::CheckpointFormat(format!(
            "bad magic {:?}",
            String::from_utf8_lossy(&magic)
        )));
    }
    let mut len_bytes = [0u8; 8];
    file.read_exact(&mut len_bytes)?;
    let header_len = u64::from_le_bytes(len_bytes) as usize;
    let mut header_bytes = vec![0u8; header_len];
    file.read_exact(&mut header_bytes)?;
    let header: CheckpointHeader = serde_json::from_slice(&header_bytes)?;

    let specs = tensor_specs(&header.config, header.vocab_len);
    if specs.len() != header.tensor_index.len() {
        return Err(ModelError::CheckpointFormat(format!(
            "tensor index has {} entries, config implies {}",
            header.tensor_index.len(),
            specs.len()
        )));
    }
    let mut tensors = Vec::with_capacity(specs.len());
    for (spec, entry) in specs.into_iter().zip(&header.tensor_index) {
        if spec.name != entry.name || spec.dims != entry.dims {
            return Err(ModelError::CheckpointFormat(format!(
                "tensor {} has dims {:?}, config implies {} {:?}",
                entry.name, entry.dims, spec.name, spec.dims
            )));
        }
        let n = spec.numel();
        let mut buf = vec![0u8; n * 4];
        file.read_exact(&mut buf)?;
        let data = buf
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
            .collect();
        tensors.push(Tensor { spec, data });
    }
    let index = tensors
        .iter()
        .enumerate()
        .map(|(i, t)| (t.spec.name.clone(), i))
        .collect();
    Ok(Checkpoint {
        params: Parameters {
            config: header.config,
            vocab_len: header.vocab_len,
            tensors,
            index,
        },
        step: header.step,
        rng_state: header.rng_state,
    })
}
