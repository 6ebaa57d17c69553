use super::forward::{
    gelu, ln_forward, logits_finite, matmul_acc, mha_forward, LnCache,
};
use super::stream::CharStream;
use super::{ModelConfig, ModelError, Parameters};
use crate::vocab::Vocabulary;

/// Result of greedy decoding. `ids` excludes the prompt and the terminating
/// EOS token; `eos` records whether decoding stopped at EOS (as opposed to
/// exhausting `max_new` or the context).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GenOutcome {
    pub ids: Vec<u32>,
    pub eos: bool,
}

/// Incremental decoding state: per-layer key/value caches for the token
/// stream, plus character-side caches when the character path is enabled.
///
/// Each appended token runs exactly the same row-wise arithmetic as the batch
/// forward pass, so incremental logits are bit-identical to a full
/// re-forward.
pub struct IncrementalState {
    ids: Vec<u32>,
    cs: CharStream,
    tok_k: Vec<Vec<f64>>,
    tok_v: Vec<Vec<f64>>,
    char_k: Vec<Vec<f64>>,
    char_v: Vec<Vec<f64>>,
    reps: Vec<f64>,
    cross_k: Vec<Vec<f64>>,
    cross_v: Vec<Vec<f64>>,
    last_logits: Vec<f64>,
}

impl IncrementalState {
    pub fn new(cfg: &ModelConfig) -> Self {
        let n_cross = cfg.cross_layers().len();
        IncrementalState {
            ids: Vec::new(),
            cs: CharStream::default(),
            tok_k: vec![Vec::new(); cfg.n_layers],
            tok_v: vec![Vec::new(); cfg.n_layers],
            char_k: vec![Vec::new(); cfg.char_layers],
            char_v: vec![Vec::new(); cfg.char_layers],
            reps: Vec::new(),
            cross_k: vec![Vec::new(); n_cross],
            cross_v: vec![Vec::new(); n_cross],
            last_logits: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn n_chars(&self) -> usize {
        self.cs.len()
    }

    /// Logits of the most recently pushed position.
    pub fn last_logits(&self) -> &[f64] {
        &self.last_logits
    }

    /// Appends one token and computes the logits at its position.
    pub fn push_token(
        &mut self,
        p: &Parameters,
        cfg: &ModelConfig,
        v: &Vocabulary,
        id: u32,
    ) -> Result<(), ModelError> {
        let t_idx = self.ids.len();
        if t_idx >= cfg.max_tokens {
            return Err(ModelError::Overlong {
                len: t_idx + 1,
                max: cfg.max_tokens,
            });
        }
        let entry = v.entry(id)?;
        let d = cfg.d_tokens;

        if cfg.char_enabled {
            self.extend_chars(p, cfg, &entry.char_ids)?;
        }
        self.ids.push(id);

        let heads = cfg.n_heads;
        let dh = cfg.d_head();
        let scale = cfg.attn_scale(dh);
        let tok_emb = p.get("tok_emb");
        let pos_emb = p.get("pos_emb");
        let mut x = vec![0.0; d];
        for a in 0..d {
            x[a] = tok_emb[id as usize * d + a] + pos_emb[t_idx * d + a];
        }

        let cross_layers = cfg.cross_layers();
        let m = self.cs.len();
        for l in 0..cfg.n_layers {
            // self-attention over the cached prefix plus this row
            let mut cache = LnCache::default();
            let mut ln_out = Vec::new();
            ln_forward(
                &mut ln_out,
                &mut cache,
                &x,
                p.get(&format!("l{l}.ln1.g")),
                p.get(&format!("l{l}.ln1.b")),
                1,
                d,
            );
            let mut q = vec![0.0; d];
            let mut k = vec![0.0; d];
            let mut vv = vec![0.0; d];
            matmul_acc(&mut q, &ln_out, p.get(&format!("l{l}.wq")), 1, d, d);
            matmul_acc(&mut k, &ln_out, p.get(&format!("l{l}.wk")), 1, d, d);
            matmul_acc(&mut vv, &ln_out, p.get(&format!("l{l}.wv")), 1, d, d);
            self.tok_k[l].extend_from_slice(&k);
            self.tok_v[l].extend_from_slice(&vv);
            let n_keys = t_idx + 1;
            let mut att = vec![0.0; d];
            let mut probs = vec![0.0; heads * n_keys];
            mha_forward(
                &mut att,
                &mut probs,
                &q,
                &self.tok_k[l],
                &self.tok_v[l],
                1,
                n_keys,
                heads,
                dh,
                scale,
                &[n_keys],
            );
            matmul_acc(&mut x, &att, p.get(&format!("l{l}.wo")), 1, d, d);

            if let Some(ci) = cross_layers.iter().position(|&cl| cl == l) {
                let mut cache = LnCache::default();
                let mut xq_in = Vec::new();
                ln_forward(
                    &mut xq_in,
                    &mut cache,
                    &x,
                    p.get(&format!("l{l}.lnx.g")),
                    p.get(&format!("l{l}.lnx.b")),
                    1,
                    d,
                );
                let mut qc = vec![0.0; d];
                matmul_acc(&mut qc, &xq_in, p.get(&format!("l{l}.xq")), 1, d, d);
                let mut attc = vec![0.0; d];
                let mut probs = vec![0.0; heads * m];
                mha_forward(
                    &mut attc,
                    &mut probs,
                    &qc,
                    &self.cross_k[ci],
                    &self.cross_v[ci],
                    1,
                    m,
                    heads,
                    dh,
                    scale,
                    &[m],
                );
                matmul_acc(&mut x, &attc, p.get(&format!("l{l}.xo")), 1, d, d);
            }

            let mut cache = LnCache::default();
            let mut ln_out2 = Vec::new();
            ln_forward(
                &mut ln_out2,
                &mut cache,
                &x,
                p.get(&format!("l{l}.ln2.g")),
                p.get(&format!("l{l}.ln2.b")),
                1,
                d,
            );
            let d_mlp = cfg.d_mlp();
            let mut h = vec![0.0; d_mlp];
            matmul_acc(&mut h, &ln_out2, p.get(&format!("l{l}.w1")), 1, d, d_mlp);
            let act: Vec<f64> = h.iter().map(|&z| gelu(z)).collect();
            matmul_acc(&mut x, &act, p.get(&format!("l{l}.w2")), 1, d_mlp, d);
        }

        let mut cache = LnCache::default();
        let mut f = Vec::new();
        ln_forward(&mut f, &mut cache, &x, p.get("lnf.g"), p.get("lnf.b"), 1, d);
        let vocab_len = p.vocab_len;
        let mut logits = vec![0.0; vocab_len];
        matmul_acc(&mut logits, &f, p.get("out_proj"), 1, d, vocab_len);
        let lam = cfg.logit_mult();
        if lam != 1.0 {
            logits.iter_mut().for_each(|z| *z *= lam);
        }
        if !logits_finite(&logits) {
            return Err(ModelError::NumericFailure(
                "non-finite logits during generation".to_string(),
            ));
        }
        self.last_logits = logits;
        Ok(())
    }

    /// Runs the character encoder over a token's characters and extends all
    /// character-side caches. Earlier characters' representations are
    /// unaffected by construction of the block-causal mask.
    fn extend_chars(
        &mut self,
        p: &Parameters,
        cfg: &ModelConfig,
        char_ids: &[u32],
    ) -> Result<(), ModelError> {
        let m0 = self.cs.len();
        let n_new = char_ids.len();
        let m1 = m0 + n_new;
        if m1 > cfg.max_chars {
            return Err(ModelError::TooManyChars {
                len: m1,
                max: cfg.max_chars,
            });
        }
        if n_new > cfg.max_intra {
            return Err(ModelError::WordTooLong {
                len: n_new,
                max: cfg.max_intra,
            });
        }
        let owner = self.cs.n_tokens();
        self.cs.push_token(char_ids);
        let dc = cfg.d_chars;
        let char_emb = p.get("char_emb");
        let intra = p.get("intra_pos");
        let mut x = vec![0.0; n_new * dc];
        for (r, &cid) in char_ids.iter().enumerate() {
            let xrow = &mut x[r * dc..(r + 1) * dc];
            let erow = &char_emb[cid as usize * dc..(cid as usize + 1) * dc];
            let prow = &intra[r * dc..(r + 1) * dc];
            for a in 0..dc {
                xrow[a] = erow[a] + prow[a];
            }
        }
        let heads = cfg.char_heads;
        let dh = cfg.char_d_head();
        let scale = cfg.attn_scale(dh);
        // every new row sees the full current stream (its own token's block
        // ends the stream)
        let prefix = vec![m1; n_new];
        for b in 0..cfg.char_layers {
            let mut cache = LnCache::default();
            let mut ln_out = Vec::new();
            ln_forward(
                &mut ln_out,
                &mut cache,
                &x,
                p.get(&format!("c{b}.ln1.g")),
                p.get(&format!("c{b}.ln1.b")),
                n_new,
                dc,
            );
            let mut q = vec![0.0; n_new * dc];
            let mut k = vec![0.0; n_new * dc];
            let mut vv = vec![0.0; n_new * dc];
            matmul_acc(&mut q, &ln_out, p.get(&format!("c{b}.wq")), n_new, dc, dc);
            matmul_acc(&mut k, &ln_out, p.get(&format!("c{b}.wk")), n_new, dc, dc);
            matmul_acc(&mut vv, &ln_out, p.get(&format!("c{b}.wv")), n_new, dc, dc);
            self.char_k[b].extend_from_slice(&k);
            self.char_v[b].extend_from_slice(&vv);
            let mut att = vec![0.0; n_new * dc];
            let mut probs = vec![0.0; heads * n_new * m1];
            mha_forward(
                &mut att,
                &mut probs,
                &q,
                &self.char_k[b],
                &self.char_v[b],
                n_new,
                m1,
                heads,
                dh,
                scale,
                &prefix,
            );
            matmul_acc(&mut x, &att, p.get(&format!("c{b}.wo")), n_new, dc, dc);

            let mut cache = LnCache::default();
            let mut ln_out2 = Vec::new();
            ln_forward(
                &mut ln_out2,
                &mut cache,
                &x,
                p.get(&format!("c{b}.ln2.g")),
                p.get(&format!("c{b}.ln2.b")),
                n_new,
                dc,
            );
            let d_mlp = cfg.char_d_mlp();
            let mut h = vec![0.0; n_new * d_mlp];
            matmul_acc(&mut h, &ln_out2, p.get(&format!("c{b}.w1")), n_new, dc, d_mlp);
            let act: Vec<f64> = h.iter().map(|&z| gelu(z)).collect();
            matmul_acc(&mut x, &act, p.get(&format!("c{b}.w2")), n_new, d_mlp, dc);
        }
        let inter = p.get("inter_pos");
        for r in 0..n_new {
            let xrow = &mut x[r * dc..(r + 1) * dc];
            let irow = &inter[owner * dc..(owner + 1) * dc];
            for a in 0..dc {
                xrow[a] += irow[a];
            }
        }
        self.reps.extend_from_slice(&x);

        let d = cfg.d_tokens;
        for (ci, &l) in cfg.cross_layers().iter().enumerate() {
            let mut cache = LnCache::default();
            let mut kv_in = Vec::new();
            ln_forward(
                &mut kv_in,
                &mut cache,
                &x,
                p.get(&format!("l{l}.lnkv.g")),
                p.get(&format!("l{l}.lnkv.b")),
                n_new,
                dc,
            );
            let mut kc = vec![0.0; n_new * d];
            let mut vc = vec![0.0; n_new * d];
            matmul_acc(&mut kc, &kv_in, p.get(&format!("l{l}.xk")), n_new, dc, d);
            matmul_acc(&mut vc, &kv_in, p.get(&format!("l{l}.xv")), n_new, dc, d);
            self.cross_k[ci].extend_from_slice(&kc);
            self.cross_v[ci].extend_from_slice(&vc);
        }
        Ok(())
    }
}

fn argmax(row: &[f64]) -> u32 {
    let mut best = 0usize;
    let mut best_val = f64::NEG_INFINITY;
    for (i, &z) in row.iter().enumerate() {
        if z > best_val {
            best_val = z;
            best = i;
        }
    }
    best as u32
}

/// Greedy decoding from a prompt: argmax until EOS, `max_new` tokens, or the
/// context limit (the last case returns with `eos: false`).
pub fn generate(
    p: &Parameters,
    cfg: &ModelConfig,
    v: &Vocabulary,
    prompt: &[u32],
    max_new: usize,
) -> Result<GenOutcome, ModelError> {
    if prompt.is_empty() || prompt.len() > cfg.max_tokens {
        return Err(ModelError::PromptTooLong);
    }
    let mut st = IncrementalState::new(cfg);
    for &id in prompt {
        st.push_token(p, cfg, v, id)?;
    }
    let mut out = Vec::new();
    let mut eos = false;
    let eos_id = v.eos_id();
    for _ in 0..max_new {
        let next = argmax(st.last_logits());
        if next == eos_id {
            eos = true;
            break;
        }
        out.push(next);
        // stop on context exhaustion rather than erroring; the caller treats
        // a truncated generation as a mismatch
        if st.len() + 1 > cfg.max_tokens {
            break;
        }
        if cfg.char_enabled {
            let n_chars = v.entry(next)?.char_ids.len();
            if st.n_chars() + n_chars > cfg.max_chars {
                break;
            }
        }
        st.push_token(p, cfg, v, next)?;
    }
    Ok(GenOutcome { ids: out, eos })
}
