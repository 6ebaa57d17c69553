use super::stream::{build_char_stream, CharStream};
use super::{ModelConfig, ModelError, Parameters};
use crate::vocab::Vocabulary;

pub(super) const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

#[inline]
pub(super) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

#[inline]
pub(super) fn gelu_deriv(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

/// c[t x dout] += a[t x din] . w[din x dout]
pub(super) fn matmul_acc(c: &mut [f64], a: &[f64], w: &[f64], t: usize, din: usize, dout: usize) {
    for i in 0..t {
        let arow = &a[i * din..(i + 1) * din];
        let crow = &mut c[i * dout..(i + 1) * dout];
        for (j, &aj) in arow.iter().enumerate() {
            if aj == 0.0 {
                continue;
            }
            let wrow = &w[j * dout..(j + 1) * dout];
            for (cv, &wv) in crow.iter_mut().zip(wrow) {
                *cv += aj * wv;
            }
        }
    }
}

/// dw[din x dout] += a^T . dc
pub(super) fn matmul_at_dc(
    dw: &mut [f64],
    a: &[f64],
    dc: &[f64],
    t: usize,
    din: usize,
    dout: usize,
) {
    for i in 0..t {
        let arow = &a[i * din..(i + 1) * din];
        let drow = &dc[i * dout..(i + 1) * dout];
        for (j, &aj) in arow.iter().enumerate() {
            if aj == 0.0 {
                continue;
            }
            let wrow = &mut dw[j * dout..(j + 1) * dout];
            for (wv, &dv) in wrow.iter_mut().zip(drow) {
                *wv += aj * dv;
            }
        }
    }
}

/// da[t x din] += dc . w^T
pub(super) fn matmul_dc_wt(
    da: &mut [f64],
    dc: &[f64],
    w: &[f64],
    t: usize,
    din: usize,
    dout: usize,
) {
    for i in 0..t {
        let drow = &dc[i * dout..(i + 1) * dout];
        let arow = &mut da[i * din..(i + 1) * din];
        for (j, av) in arow.iter_mut().enumerate() {
            let wrow = &w[j * dout..(j + 1) * dout];
            let mut acc = 0.0;
            for (&dv, &wv) in drow.iter().zip(wrow) {
                acc += dv * wv;
            }
            *av += acc;
        }
    }
}

#[derive(Clone, Debug, Default)]
pub(super) struct LnCache {
    pub xhat: Vec<f64>,
    pub istd: Vec<f64>,
}

/// Row-wise layer norm: out = g * (x - mean) / sqrt(var + eps) + b.
pub(super) fn ln_forward(
    out: &mut Vec<f64>,
    cache: &mut LnCache,
    x: &[f64],
    g: &[f64],
    b: &[f64],
    t: usize,
    d: usize,
) {
    out.resize(t * d, 0.0);
    cache.xhat.resize(t * d, 0.0);
    cache.istd.resize(t, 0.0);
    for i in 0..t {
        let row = &x[i * d..(i + 1) * d];
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let istd = 1.0 / (var + LN_EPS).sqrt();
        cache.istd[i] = istd;
        let xh = &mut cache.xhat[i * d..(i + 1) * d];
        let orow = &mut out[i * d..(i + 1) * d];
        for j in 0..d {
            let h = (row[j] - mean) * istd;
            xh[j] = h;
            orow[j] = g[j] * h + b[j];
        }
    }
}

/// Accumulates LN gradients; `dx` gains the input gradient (residual carry).
#[allow(clippy::too_many_arguments)]
pub(super) fn ln_backward(
    dx: &mut [f64],
    dg: &mut [f64],
    db: &mut [f64],
    dy: &[f64],
    cache: &LnCache,
    g: &[f64],
    t: usize,
    d: usize,
) {
    for i in 0..t {
        let dyrow = &dy[i * d..(i + 1) * d];
        let xh = &cache.xhat[i * d..(i + 1) * d];
        let istd = cache.istd[i];
        let mut sum_dxh = 0.0;
        let mut sum_dxh_xh = 0.0;
        for j in 0..d {
            let dxh = dyrow[j] * g[j];
            sum_dxh += dxh;
            sum_dxh_xh += dxh * xh[j];
            dg[j] += dyrow[j] * xh[j];
            db[j] += dyrow[j];
        }
        let inv_d = 1.0 / d as f64;
        let dxrow = &mut dx[i * d..(i + 1) * d];
        for j in 0..d {
            let dxh = dyrow[j] * g[j];
            dxrow[j] += istd * (dxh - inv_d * sum_dxh - xh[j] * inv_d * sum_dxh_xh);
        }
    }
}

/// Recomputes the LN output from its cache (to feed matmul backward).
pub(super) fn ln_output(cache: &LnCache, g: &[f64], b: &[f64], t: usize, d: usize) -> Vec<f64> {
    let mut out = vec![0.0; t * d];
    for i in 0..t {
        let xh = &cache.xhat[i * d..(i + 1) * d];
        let orow = &mut out[i * d..(i + 1) * d];
        for j in 0..d {
            orow[j] = g[j] * xh[j] + b[j];
        }
    }
    out
}

/// Multi-head attention with contiguous prefix masks.
///
/// `prefix[i]` is the number of leading keys visible to query row `i`; a zero
/// prefix produces a zero output row. `probs` is filled head-major
/// (`heads x tq x tk`) with zeros outside the prefix.
#[allow(clippy::too_many_arguments)]
pub(super) fn mha_forward(
    out: &mut [f64],
    probs: &mut [f64],
    q: &[f64],
    k: &[f64],
    v: &[f64],
    tq: usize,
    tk: usize,
    heads: usize,
    dh: usize,
    scale: f64,
    prefix: &[usize],
) {
    let width = heads * dh;
    for h in 0..heads {
        let off = h * dh;
        for i in 0..tq {
            let n_keys = prefix[i];
            let prow = &mut probs[(h * tq + i) * tk..(h * tq + i) * tk + tk];
            let orow = &mut out[i * width + off..i * width + off + dh];
            if n_keys == 0 {
                orow.iter_mut().for_each(|o| *o = 0.0);
                continue;
            }
            let qrow = &q[i * width + off..i * width + off + dh];
            let mut max_s = f64::NEG_INFINITY;
            for j in 0..n_keys {
                let krow = &k[j * width + off..j * width + off + dh];
                let mut s = 0.0;
                for (qa, ka) in qrow.iter().zip(krow) {
                    s += qa * ka;
                }
                let s = s * scale;
                prow[j] = s;
                if s > max_s {
                    max_s = s;
                }
            }
            let mut z = 0.0;
            for p in prow[..n_keys].iter_mut() {
                *p = (*p - max_s).exp();
                z += *p;
            }
            let inv_z = 1.0 / z;
            orow.iter_mut().for_each(|o| *o = 0.0);
            for j in 0..n_keys {
                prow[j] *= inv_z;
                let p = prow[j];
                let vrow = &v[j * width + off..j * width + off + dh];
                for (o, &vb) in orow.iter_mut().zip(vrow) {
                    *o += p * vb;
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub(super) fn mha_backward(
    dq: &mut [f64],
    dk: &mut [f64],
    dv: &mut [f64],
    dout: &[f64],
    probs: &[f64],
    q: &[f64],
    k: &[f64],
    tq: usize,
    tk: usize,
    heads: usize,
    dh: usize,
    scale: f64,
    prefix: &[usize],
    v: &[f64],
) {
    let width = heads * dh;
    let mut ds = vec![0.0; tk];
    for h in 0..heads {
        let off = h * dh;
        for i in 0..tq {
            let n_keys = prefix[i];
            if n_keys == 0 {
                continue;
            }
            let prow = &probs[(h * tq + i) * tk..(h * tq + i) * tk + tk];
            let dorow = &dout[i * width + off..i * width + off + dh];
            // dp and the softmax reduction
            let mut dot = 0.0;
            for j in 0..n_keys {
                let vrow = &v[j * width + off..j * width + off + dh];
                let mut dp = 0.0;
                for (da, &vb) in dorow.iter().zip(vrow) {
                    dp += da * vb;
                }
                ds[j] = dp;
                dot += prow[j] * dp;
            }
            let qrow = &q[i * width + off..i * width + off + dh];
            let dqrow_start = i * width + off;
            for j in 0..n_keys {
                let p = prow[j];
                if p == 0.0 {
                    continue;
                }
                let dsv = p * (ds[j] - dot) * scale;
                // dv
                let dvrow = &mut dv[j * width + off..j * width + off + dh];
                for (dvb, &da) in dvrow.iter_mut().zip(dorow) {
                    *dvb += p * da;
                }
                // dq, dk
                let krow = &k[j * width + off..j * width + off + dh];
                let dqrow = &mut dq[dqrow_start..dqrow_start + dh];
                for a in 0..dh {
                    dqrow[a] += dsv * krow[a];
                }
                let dkrow = &mut dk[j * width + off..j * width + off + dh];
                for a in 0..dh {
                    dkrow[a] += dsv * qrow[a];
                }
            }
        }
    }
}

pub(super) struct AttnCache {
    pub ln: LnCache,
    pub q: Vec<f64>,
    pub k: Vec<f64>,
    pub v: Vec<f64>,
    pub probs: Vec<f64>,
    pub att: Vec<f64>,
}

pub(super) struct CrossCache {
    pub ln_x: LnCache,
    pub r_ln: LnCache,
    pub qc: Vec<f64>,
    pub kc: Vec<f64>,
    pub vc: Vec<f64>,
    pub probs: Vec<f64>,
    pub att: Vec<f64>,
}

pub(super) struct MlpCache {
    pub ln: LnCache,
    pub h: Vec<f64>,
}

pub(super) struct LayerCache {
    pub attn: AttnCache,
    pub cross: Option<CrossCache>,
    pub mlp: MlpCache,
}

pub(super) struct CharBlockCache {
    pub attn: AttnCache,
    pub mlp: MlpCache,
}

pub(super) struct CharFwd {
    pub blocks: Vec<CharBlockCache>,
    /// Final character representations (after inter-position addition), M x dc.
    pub reps: Vec<f64>,
}

pub(super) struct FwdCache {
    pub t: usize,
    pub cs: CharStream,
    pub char_fwd: Option<CharFwd>,
    pub layers: Vec<LayerCache>,
    pub lnf: LnCache,
    /// Residual stream entering the final norm.
    pub logits: Vec<f64>,
    /// Per-layer residual-stream RMS probes: entry 0 after embeddings,
    /// entry l+1 after decoder layer l.
    pub residual_sumsq: Vec<f64>,
}

fn sumsq(x: &[f64]) -> f64 {
    x.iter().map(|&v| v * v).sum()
}

/// Runs the character encoder over a stream, returning reps and caches.
fn char_forward(
    p: &Parameters,
    cfg: &ModelConfig,
    cs: &CharStream,
) -> Result<CharFwd, ModelError> {
    let m = cs.len();
    let dc = cfg.d_chars;
    if m > cfg.max_chars {
        return Err(ModelError::TooManyChars {
            len: m,
            max: cfg.max_chars,
        });
    }
    let char_emb = p.get("char_emb");
    let intra = p.get("intra_pos");
    let inter = p.get("inter_pos");
    let mut x = vec![0.0; m * dc];
    for j in 0..m {
        let cid = cs.char_ids[j] as usize;
        let pos = cs.intra_pos[j] as usize;
        if pos >= cfg.max_intra {
            return Err(ModelError::WordTooLong {
                len: pos + 1,
                max: cfg.max_intra,
            });
        }
        let xrow = &mut x[j * dc..(j + 1) * dc];
        let erow = &char_emb[cid * dc..(cid + 1) * dc];
        let prow = &intra[pos * dc..(pos + 1) * dc];
        for a in 0..dc {
            xrow[a] = erow[a] + prow[a];
        }
    }
    // prefix visibility per char row: everything up to the end of its token
    let prefix: Vec<usize> = (0..m)
        .map(|j| cs.visible_prefix(cs.owner[j] as usize))
        .collect();
    let heads = cfg.char_heads;
    let dh = cfg.char_d_head();
    let scale = cfg.attn_scale(dh);
    let mut blocks = Vec::with_capacity(cfg.char_layers);
    for b in 0..cfg.char_layers {
        let g1 = p.get(&format!("c{b}.ln1.g"));
        let b1 = p.get(&format!("c{b}.ln1.b"));
        let mut attn = AttnCache {
            ln: LnCache::default(),
            q: vec![0.0; m * dc],
            k: vec![0.0; m * dc],
            v: vec![0.0; m * dc],
            probs: vec![0.0; heads * m * m],
            att: vec![0.0; m * dc],
        };
        let mut ln_out = Vec::new();
        ln_forward(&mut ln_out, &mut attn.ln, &x, g1, b1, m, dc);
        matmul_acc(&mut attn.q, &ln_out, p.get(&format!("c{b}.wq")), m, dc, dc);
        matmul_acc(&mut attn.k, &ln_out, p.get(&format!("c{b}.wk")), m, dc, dc);
        matmul_acc(&mut attn.v, &ln_out, p.get(&format!("c{b}.wv")), m, dc, dc);
        mha_forward(
            &mut attn.att,
            &mut attn.probs,
            &attn.q,
            &attn.k,
            &attn.v,
            m,
            m,
            heads,
            dh,
            scale,
            &prefix,
        );
        matmul_acc(&mut x, &attn.att, p.get(&format!("c{b}.wo")), m, dc, dc);

        let g2 = p.get(&format!("c{b}.ln2.g"));
        let b2 = p.get(&format!("c{b}.ln2.b"));
        let mut mlp = MlpCache {
            ln: LnCache::default(),
            h: vec![0.0; m * cfg.char_d_mlp()],
        };
        let mut ln_out2 = Vec::new();
        ln_forward(&mut ln_out2, &mut mlp.ln, &x, g2, b2, m, dc);
        matmul_acc(
            &mut mlp.h,
            &ln_out2,
            p.get(&format!("c{b}.w1")),
            m,
            dc,
            cfg.char_d_mlp(),
        );
        let act: Vec<f64> = mlp.h.iter().map(|&h| gelu(h)).collect();
        matmul_acc(&mut x, &act, p.get(&format!("c{b}.w2")), m, cfg.char_d_mlp(), dc);
        blocks.push(CharBlockCache { attn, mlp });
    }
    // attach each character to its owner token's position
    for j in 0..m {
        let o = cs.owner[j] as usize;
        let xrow = &mut x[j * dc..(j + 1) * dc];
        let irow = &inter[o * dc..(o + 1) * dc];
        for a in 0..dc {
            xrow[a] += irow[a];
        }
    }
    Ok(CharFwd { blocks, reps: x })
}

/// Character representations for a stream (the cross-attention memory).
pub fn encode_chars(
    p: &Parameters,
    cfg: &ModelConfig,
    cs: &CharStream,
) -> Result<Vec<f64>, ModelError> {
    Ok(char_forward(p, cfg, cs)?.reps)
}

pub(super) fn forward_cached(
    p: &Parameters,
    cfg: &ModelConfig,
    v: &Vocabulary,
    ids: &[u32],
) -> Result<FwdCache, ModelError> {
    let t = ids.len();
    if t > cfg.max_tokens {
        return Err(ModelError::Overlong {
            len: t,
            max: cfg.max_tokens,
        });
    }
    let d = cfg.d_tokens;
    let cs = build_char_stream(v, ids)?;
    let char_fwd = if cfg.char_enabled {
        Some(char_forward(p, cfg, &cs)?)
    } else {
        None
    };
    let m = cs.len();

    let tok_emb = p.get("tok_emb");
    let pos_emb = p.get("pos_emb");
    let mut x = vec![0.0; t * d];
    for (i, &id) in ids.iter().enumerate() {
        let xrow = &mut x[i * d..(i + 1) * d];
        let erow = &tok_emb[id as usize * d..(id as usize + 1) * d];
        let prow = &pos_emb[i * d..(i + 1) * d];
        for a in 0..d {
            xrow[a] = erow[a] + prow[a];
        }
    }
    let mut residual_sumsq = vec![sumsq(&x)];

    let heads = cfg.n_heads;
    let dh = cfg.d_head();
    let scale = cfg.attn_scale(dh);
    let causal_prefix: Vec<usize> = (1..=t).collect();
    let cross_prefix: Vec<usize> = (0..t).map(|i| cs.visible_prefix(i)).collect();
    let cross_layers = cfg.cross_layers();

    let mut layers = Vec::with_capacity(cfg.n_layers);
    for l in 0..cfg.n_layers {
        let mut attn = AttnCache {
            ln: LnCache::default(),
            q: vec![0.0; t * d],
            k: vec![0.0; t * d],
            v: vec![0.0; t * d],
            probs: vec![0.0; heads * t * t],
            att: vec![0.0; t * d],
        };
        let mut ln_out = Vec::new();
        ln_forward(
            &mut ln_out,
            &mut attn.ln,
            &x,
            p.get(&format!("l{l}.ln1.g")),
            p.get(&format!("l{l}.ln1.b")),
            t,
            d,
        );
        matmul_acc(&mut attn.q, &ln_out, p.get(&format!("l{l}.wq")), t, d, d);
        matmul_acc(&mut attn.k, &ln_out, p.get(&format!("l{l}.wk")), t, d, d);
        matmul_acc(&mut attn.v, &ln_out, p.get(&format!("l{l}.wv")), t, d, d);
        mha_forward(
            &mut attn.att,
            &mut attn.probs,
            &attn.q,
            &attn.k,
            &attn.v,
            t,
            t,
            heads,
            dh,
            scale,
            &causal_prefix,
        );
        matmul_acc(&mut x, &attn.att, p.get(&format!("l{l}.wo")), t, d, d);

        let cross = if cross_layers.contains(&l) {
            let reps = &char_fwd.as_ref().unwrap().reps;
            let dc = cfg.d_chars;
            let mut cc = CrossCache {
                ln_x: LnCache::default(),
                r_ln: LnCache::default(),
                qc: vec![0.0; t * d],
                kc: vec![0.0; m * d],
                vc: vec![0.0; m * d],
                probs: vec![0.0; heads * t * m],
                att: vec![0.0; t * d],
            };
            let mut xq_in = Vec::new();
            ln_forward(
                &mut xq_in,
                &mut cc.ln_x,
                &x,
                p.get(&format!("l{l}.lnx.g")),
                p.get(&format!("l{l}.lnx.b")),
                t,
                d,
            );
            let mut kv_in = Vec::new();
            ln_forward(
                &mut kv_in,
                &mut cc.r_ln,
                reps,
                p.get(&format!("l{l}.lnkv.g")),
                p.get(&format!("l{l}.lnkv.b")),
                m,
                dc,
            );
            matmul_acc(&mut cc.qc, &xq_in, p.get(&format!("l{l}.xq")), t, d, d);
            matmul_acc(&mut cc.kc, &kv_in, p.get(&format!("l{l}.xk")), m, dc, d);
            matmul_acc(&mut cc.vc, &kv_in, p.get(&format!("l{l}.xv")), m, dc, d);
            mha_forward(
                &mut cc.att,
                &mut cc.probs,
                &cc.qc,
                &cc.kc,
                &cc.vc,
                t,
                m,
                heads,
                dh,
                scale,
                &cross_prefix,
            );
            matmul_acc(&mut x, &cc.att, p.get(&format!("l{l}.xo")), t, d, d);
            Some(cc)
        } else {
            None
        };

        let mut mlp = MlpCache {
            ln: LnCache::default(),
            h: vec![0.0; t * cfg.d_mlp()],
        };
        let mut ln_out2 = Vec::new();
        ln_forward(
            &mut ln_out2,
            &mut mlp.ln,
            &x,
            p.get(&format!("l{l}.ln2.g")),
            p.get(&format!("l{l}.ln2.b")),
            t,
            d,
        );
        matmul_acc(
            &mut mlp.h,
            &ln_out2,
            p.get(&format!("l{l}.w1")),
            t,
            d,
            cfg.d_mlp(),
        );
        let act: Vec<f64> = mlp.h.iter().map(|&h| gelu(h)).collect();
        matmul_acc(&mut x, &act, p.get(&format!("l{l}.w2")), t, cfg.d_mlp(), d);

        residual_sumsq.push(sumsq(&x));
        layers.push(LayerCache { attn, cross, mlp });
    }

    let mut lnf = LnCache::default();
    let mut f = Vec::new();
    ln_forward(&mut f, &mut lnf, &x, p.get("lnf.g"), p.get("lnf.b"), t, d);
    let vocab_len = p.vocab_len;
    let mut logits = vec![0.0; t * vocab_len];
    matmul_acc(&mut logits, &f, p.get("out_proj"), t, d, vocab_len);
    let lam = cfg.logit_mult();
    if lam != 1.0 {
        logits.iter_mut().for_each(|z| *z *= lam);
    }
    if !logits_finite(&logits) {
        return Err(ModelError::NumericFailure(
            "non-finite logits in forward pass".to_string(),
        ));
    }
    Ok(FwdCache {
        t,
        cs,
        char_fwd,
        layers,
        lnf,
        logits,
        residual_sumsq,
    })
}

/// Forward pass producing logits (`n_tokens x vocab_len`, row-major).
pub fn forward(
    p: &Parameters,
    cfg: &ModelConfig,
    v: &Vocabulary,
    ids: &[u32],
) -> Result<Vec<f64>, ModelError> {
    Ok(forward_cached(p, cfg, v, ids)?.logits)
}

/// Per-layer residual-stream sum of squares (entry 0 = embeddings) together
/// with the element count per layer, for coordinate checks.
pub fn residual_sumsq(
    p: &Parameters,
    cfg: &ModelConfig,
    v: &Vocabulary,
    ids: &[u32],
) -> Result<(Vec<f64>, usize), ModelError> {
    let cache = forward_cached(p, cfg, v, ids)?;
    Ok((cache.residual_sumsq, cache.t * cfg.d_tokens))
}

pub fn logits_finite(logits: &[f64]) -> bool {
    logits.iter().all(|x| x.is_finite())
}
