use super::forward::{
    forward_cached, gelu, gelu_deriv, ln_backward, ln_output, matmul_at_dc, matmul_dc_wt,
    mha_backward,
};
use super::{ModelConfig, ModelError, Parameters};
use crate::vocab::Vocabulary;
use serde::{Deserialize, Serialize};

/// Which positions contribute to the loss.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[derive(Default)]
pub enum LossMask {
    /// Every next-token prediction in the concatenated sequence.
    #[default]
    Full,
    /// Only predictions of target tokens.
    TargetOnly,
}


/// One training sequence: prompt and target concatenated, with the index of
/// the first target token.
#[derive(Clone, Debug)]
pub struct TrainExample {
    pub ids: Vec<u32>,
    pub target_start: usize,
}

impl TrainExample {
    pub fn from_instance(inst: &crate::taskgen::TaskInstance) -> Self {
        let mut ids = inst.prompt_ids.clone();
        let target_start = ids.len();
        ids.extend_from_slice(&inst.target_ids);
        TrainExample { ids, target_start }
    }
}

/// Gradient buffers parallel to `Parameters::tensors`.
pub struct GradSet {
    pub data: Vec<Vec<f64>>,
}

impl GradSet {
    pub fn zeros_like(p: &Parameters) -> GradSet {
        GradSet {
            data: p.tensors.iter().map(|t| vec![0.0; t.data.len()]).collect(),
        }
    }

    pub fn get<'a>(&'a self, p: &Parameters, name: &str) -> &'a [f64] {
        &self.data[p.idx(name)]
    }

    pub fn add_from(&mut self, other: &GradSet) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for t in &mut self.data {
            for x in t.iter_mut() {
                *x *= factor;
            }
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.data
            .iter()
            .map(|t| t.iter().map(|&x| x * x).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }
}

fn predicted_range(
    t: usize,
    target_start: usize,
    mask: LossMask,
) -> Result<std::ops::Range<usize>, ModelError> {
    let range = match mask {
        LossMask::Full => 0..t.saturating_sub(1),
        LossMask::TargetOnly => {
            if target_start == 0 || target_start > t {
                return Err(ModelError::ZeroPredictedPositions);
            }
            target_start - 1..t.saturating_sub(1)
        }
    };
    if range.is_empty() {
        return Err(ModelError::ZeroPredictedPositions);
    }
    Ok(range)
}

/// Cross-entropy of a single sequence without gradients. Returns the summed
/// loss and the number of predicted positions.
pub fn sequence_loss(
    p: &Parameters,
    cfg: &ModelConfig,
    v: &Vocabulary,
    ids: &[u32],
    target_start: usize,
    mask: LossMask,
) -> Result<(f64, usize), ModelError> {
    let cache = forward_cached(p, cfg, v, ids)?;
    let range = predicted_range(ids.len(), target_start, mask)?;
    let vocab_len = p.vocab_len;
    let mut ce = 0.0;
    for pos in range.clone() {
        let row = &cache.logits[pos * vocab_len..(pos + 1) * vocab_len];
        let next = ids[pos + 1] as usize;
        ce += log_sum_exp(row) - row[next];
    }
    Ok((ce, range.len()))
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|&z| (z - max).exp()).sum::<f64>().ln()
}

/// Backpropagates one example, accumulating parameter gradients of the
/// *summed* cross-entropy into `grads`. Returns (summed loss, n positions).
fn example_backward(
    p: &Parameters,
    cfg: &ModelConfig,
    v: &Vocabulary,
    ex: &TrainExample,
    mask: LossMask,
    grads: &mut GradSet,
) -> Result<(f64, usize), ModelError> {
    let cache = forward_cached(p, cfg, v, &ex.ids)?;
    let t = cache.t;
    let d = cfg.d_tokens;
    let vocab_len = p.vocab_len;
    let range = predicted_range(t, ex.target_start, mask)?;

    // CE and dlogits
    let mut ce = 0.0;
    let mut dlogits = vec![0.0; t * vocab_len];
    for pos in range.clone() {
        let row = &cache.logits[pos * vocab_len..(pos + 1) * vocab_len];
        let next = ex.ids[pos + 1] as usize;
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for &r in row {
            z += (r - max).exp();
        }
        ce += max + z.ln() - row[next];
        let drow = &mut dlogits[pos * vocab_len..(pos + 1) * vocab_len];
        let inv_z = 1.0 / z;
        for (dr, &r) in drow.iter_mut().zip(row) {
            *dr = (r - max).exp() * inv_z;
        }
        drow[next] -= 1.0;
    }

    // output head
    let lam = cfg.logit_mult();
    if lam != 1.0 {
        dlogits.iter_mut().for_each(|x| *x *= lam);
    }
    let f = ln_output(&cache.lnf, p.get("lnf.g"), p.get("lnf.b"), t, d);
    matmul_at_dc(
        &mut grads.data[p.idx("out_proj")],
        &f,
        &dlogits,
        t,
        d,
        vocab_len,
    );
    let mut df = vec![0.0; t * d];
    matmul_dc_wt(&mut df, &dlogits, p.get("out_proj"), t, d, vocab_len);
    drop(dlogits);

    let mut dx = vec![0.0; t * d];
    {
        let (dg, db) = (p.idx("lnf.g"), p.idx("lnf.b"));
        let [dg, db] = grads.data.get_disjoint_mut([dg, db]).unwrap();
        ln_backward(&mut dx, dg, db, &df, &cache.lnf, p.get("lnf.g"), t, d);
    }
    drop(df);

    let heads = cfg.n_heads;
    let dh = cfg.d_head();
    let scale = cfg.attn_scale(dh);
    let m = cache.cs.len();
    let dc = cfg.d_chars;
    let causal_prefix: Vec<usize> = (1..=t).collect();
    let cross_prefix: Vec<usize> = (0..t).map(|i| cache.cs.visible_prefix(i)).collect();
    let mut dreps = vec![0.0; m * dc];

    for l in (0..cfg.n_layers).rev() {
        let lc = &cache.layers[l];

        // MLP
        {
            let d_mlp = cfg.d_mlp();
            let act: Vec<f64> = lc.mlp.h.iter().map(|&h| gelu(h)).collect();
            matmul_at_dc(&mut grads.data[p.idx(&format!("l{l}.w2"))], &act, &dx, t, d_mlp, d);
            let mut dact = vec![0.0; t * d_mlp];
            matmul_dc_wt(&mut dact, &dx, p.get(&format!("l{l}.w2")), t, d_mlp, d);
            for (da, &h) in dact.iter_mut().zip(&lc.mlp.h) {
                *da *= gelu_deriv(h);
            }
            let g2 = p.get(&format!("l{l}.ln2.g"));
            let b2 = p.get(&format!("l{l}.ln2.b"));
            let ln2_out = ln_output(&lc.mlp.ln, g2, b2, t, d);
            matmul_at_dc(&mut grads.data[p.idx(&format!("l{l}.w1"))], &ln2_out, &dact, t, d, d_mlp);
            let mut dln2 = vec![0.0; t * d];
            matmul_dc_wt(&mut dln2, &dact, p.get(&format!("l{l}.w1")), t, d, d_mlp);
            let (gi, bi) = (p.idx(&format!("l{l}.ln2.g")), p.idx(&format!("l{l}.ln2.b")));
            let [dg, db] = grads.data.get_disjoint_mut([gi, bi]).unwrap();
            ln_backward(&mut dx, dg, db, &dln2, &lc.mlp.ln, g2, t, d);
        }

        // cross-attention
        if let Some(cc) = &lc.cross {
            matmul_at_dc(&mut grads.data[p.idx(&format!("l{l}.xo"))], &cc.att, &dx, t, d, d);
            let mut datt = vec![0.0; t * d];
            matmul_dc_wt(&mut datt, &dx, p.get(&format!("l{l}.xo")), t, d, d);
            let mut dqc = vec![0.0; t * d];
            let mut dkc = vec![0.0; m * d];
            let mut dvc = vec![0.0; m * d];
            mha_backward(
                &mut dqc, &mut dkc, &mut dvc, &datt, &cc.probs, &cc.qc, &cc.kc, t, m, heads, dh,
                scale, &cross_prefix, &cc.vc,
            );
            let gx = p.get(&format!("l{l}.lnx.g"));
            let bx = p.get(&format!("l{l}.lnx.b"));
            let xq_in = ln_output(&cc.ln_x, gx, bx, t, d);
            matmul_at_dc(&mut grads.data[p.idx(&format!("l{l}.xq"))], &xq_in, &dqc, t, d, d);
            let mut dxq_in = vec![0.0; t * d];
            matmul_dc_wt(&mut dxq_in, &dqc, p.get(&format!("l{l}.xq")), t, d, d);
            {
                let (gi, bi) = (p.idx(&format!("l{l}.lnx.g")), p.idx(&format!("l{l}.lnx.b")));
                let [dg, db] = grads.data.get_disjoint_mut([gi, bi]).unwrap();
                ln_backward(&mut dx, dg, db, &dxq_in, &cc.ln_x, gx, t, d);
            }
            let gkv = p.get(&format!("l{l}.lnkv.g"));
            let bkv = p.get(&format!("l{l}.lnkv.b"));
            let kv_in = ln_output(&cc.r_ln, gkv, bkv, m, dc);
            matmul_at_dc(&mut grads.data[p.idx(&format!("l{l}.xk"))], &kv_in, &dkc, m, dc, d);
            matmul_at_dc(&mut grads.data[p.idx(&format!("l{l}.xv"))], &kv_in, &dvc, m, dc, d);
            let mut dkv_in = vec![0.0; m * dc];
            matmul_dc_wt(&mut dkv_in, &dkc, p.get(&format!("l{l}.xk")), m, dc, d);
            matmul_dc_wt(&mut dkv_in, &dvc, p.get(&format!("l{l}.xv")), m, dc, d);
            let (gi, bi) = (p.idx(&format!("l{l}.lnkv.g")), p.idx(&format!("l{l}.lnkv.b")));
            let [dg, db] = grads.data.get_disjoint_mut([gi, bi]).unwrap();
            ln_backward(&mut dreps, dg, db, &dkv_in, &cc.r_ln, gkv, m, dc);
        }

        // self-attention
        {
            matmul_at_dc(&mut grads.data[p.idx(&format!("l{l}.wo"))], &lc.attn.att, &dx, t, d, d);
            let mut datt = vec![0.0; t * d];
            matmul_dc_wt(&mut datt, &dx, p.get(&format!("l{l}.wo")), t, d, d);
            let mut dq = vec![0.0; t * d];
            let mut dk = vec![0.0; t * d];
            let mut dv = vec![0.0; t * d];
            mha_backward(
                &mut dq, &mut dk, &mut dv, &datt, &lc.attn.probs, &lc.attn.q, &lc.attn.k, t, t,
                heads, dh, scale, &causal_prefix, &lc.attn.v,
            );
            let g1 = p.get(&format!("l{l}.ln1.g"));
            let b1 = p.get(&format!("l{l}.ln1.b"));
            let ln1_out = ln_output(&lc.attn.ln, g1, b1, t, d);
            matmul_at_dc(&mut grads.data[p.idx(&format!("l{l}.wq"))], &ln1_out, &dq, t, d, d);
            matmul_at_dc(&mut grads.data[p.idx(&format!("l{l}.wk"))], &ln1_out, &dk, t, d, d);
            matmul_at_dc(&mut grads.data[p.idx(&format!("l{l}.wv"))], &ln1_out, &dv, t, d, d);
            let mut dln1 = vec![0.0; t * d];
            matmul_dc_wt(&mut dln1, &dq, p.get(&format!("l{l}.wq")), t, d, d);
            matmul_dc_wt(&mut dln1, &dk, p.get(&format!("l{l}.wk")), t, d, d);
            matmul_dc_wt(&mut dln1, &dv, p.get(&format!("l{l}.wv")), t, d, d);
            let (gi, bi) = (p.idx(&format!("l{l}.ln1.g")), p.idx(&format!("l{l}.ln1.b")));
            let [dg, db] = grads.data.get_disjoint_mut([gi, bi]).unwrap();
            ln_backward(&mut dx, dg, db, &dln1, &lc.attn.ln, g1, t, d);
        }
    }

    // embeddings
    {
        let dtok = &mut grads.data[p.idx("tok_emb")];
        for (i, &id) in ex.ids.iter().enumerate() {
            let src = &dx[i * d..(i + 1) * d];
            let dst = &mut dtok[id as usize * d..(id as usize + 1) * d];
            for (a, &s) in dst.iter_mut().zip(src) {
                *a += s;
            }
        }
        let dpos = &mut grads.data[p.idx("pos_emb")];
        dpos[..t * d]
            .iter_mut()
            .zip(&dx)
            .for_each(|(a, &s)| *a += s);
    }

    // character encoder
    if let Some(cf) = &cache.char_fwd {
        let cs = &cache.cs;
        // inter-token positions: reps = block_out + inter[owner]
        {
            let dinter = &mut grads.data[p.idx("inter_pos")];
            for j in 0..m {
                let o = cs.owner[j] as usize;
                let src = &dreps[j * dc..(j + 1) * dc];
                let dst = &mut dinter[o * dc..(o + 1) * dc];
                for (a, &s) in dst.iter_mut().zip(src) {
                    *a += s;
                }
            }
        }
        let mut dcx = dreps;
        let c_heads = cfg.char_heads;
        let c_dh = cfg.char_d_head();
        let c_scale = cfg.attn_scale(c_dh);
        let char_prefix: Vec<usize> = (0..m)
            .map(|j| cs.visible_prefix(cs.owner[j] as usize))
            .collect();
        for b in (0..cfg.char_layers).rev() {
            let bc = &cf.blocks[b];
            let d_mlp = cfg.char_d_mlp();
            // char MLP
            {
                let act: Vec<f64> = bc.mlp.h.iter().map(|&h| gelu(h)).collect();
                matmul_at_dc(&mut grads.data[p.idx(&format!("c{b}.w2"))], &act, &dcx, m, d_mlp, dc);
                let mut dact = vec![0.0; m * d_mlp];
                matmul_dc_wt(&mut dact, &dcx, p.get(&format!("c{b}.w2")), m, d_mlp, dc);
                for (da, &h) in dact.iter_mut().zip(&bc.mlp.h) {
                    *da *= gelu_deriv(h);
                }
                let g2 = p.get(&format!("c{b}.ln2.g"));
                let b2 = p.get(&format!("c{b}.ln2.b"));
                let ln2_out = ln_output(&bc.mlp.ln, g2, b2, m, dc);
                matmul_at_dc(&mut grads.data[p.idx(&format!("c{b}.w1"))], &ln2_out, &dact, m, dc, d_mlp);
                let mut dln2 = vec![0.0; m * dc];
                matmul_dc_wt(&mut dln2, &dact, p.get(&format!("c{b}.w1")), m, dc, d_mlp);
                let (gi, bi) = (p.idx(&format!("c{b}.ln2.g")), p.idx(&format!("c{b}.ln2.b")));
                let [dg, db] = grads.data.get_disjoint_mut([gi, bi]).unwrap();
                ln_backward(&mut dcx, dg, db, &dln2, &bc.mlp.ln, g2, m, dc);
            }
            // char self-attention
            {
                matmul_at_dc(&mut grads.data[p.idx(&format!("c{b}.wo"))], &bc.attn.att, &dcx, m, dc, dc);
                let mut datt = vec![0.0; m * dc];
                matmul_dc_wt(&mut datt, &dcx, p.get(&format!("c{b}.wo")), m, dc, dc);
                let mut dq = vec![0.0; m * dc];
                let mut dk = vec![0.0; m * dc];
                let mut dv = vec![0.0; m * dc];
                mha_backward(
                    &mut dq, &mut dk, &mut dv, &datt, &bc.attn.probs, &bc.attn.q, &bc.attn.k, m,
                    m, c_heads, c_dh, c_scale, &char_prefix, &bc.attn.v,
                );
                let g1 = p.get(&format!("c{b}.ln1.g"));
                let b1 = p.get(&format!("c{b}.ln1.b"));
                let ln1_out = ln_output(&bc.attn.ln, g1, b1, m, dc);
                matmul_at_dc(&mut grads.data[p.idx(&format!("c{b}.wq"))], &ln1_out, &dq, m, dc, dc);
                matmul_at_dc(&mut grads.data[p.idx(&format!("c{b}.wk"))], &ln1_out, &dk, m, dc, dc);
                matmul_at_dc(&mut grads.data[p.idx(&format!("c{b}.wv"))], &ln1_out, &dv, m, dc, dc);
                let mut dln1 = vec![0.0; m * dc];
                matmul_dc_wt(&mut dln1, &dq, p.get(&format!("c{b}.wq")), m, dc, dc);
                matmul_dc_wt(&mut dln1, &dk, p.get(&format!("c{b}.wk")), m, dc, dc);
                matmul_dc_wt(&mut dln1, &dv, p.get(&format!("c{b}.wv")), m, dc, dc);
                let (gi, bi) = (p.idx(&format!("c{b}.ln1.g")), p.idx(&format!("c{b}.ln1.b")));
                let [dg, db] = grads.data.get_disjoint_mut([gi, bi]).unwrap();
                ln_backward(&mut dcx, dg, db, &dln1, &bc.attn.ln, g1, m, dc);
            }
        }
        // char and intra-position embeddings
        let dchar = &mut grads.data[p.idx("char_emb")];
        for j in 0..m {
            let cid = cs.char_ids[j] as usize;
            let src = &dcx[j * dc..(j + 1) * dc];
            let dst = &mut dchar[cid * dc..(cid + 1) * dc];
            for (a, &s) in dst.iter_mut().zip(src) {
                *a += s;
            }
        }
        let dintra = &mut grads.data[p.idx("intra_pos")];
        for j in 0..m {
            let pos = cs.intra_pos[j] as usize;
            let src = &dcx[j * dc..(j + 1) * dc];
            let dst = &mut dintra[pos * dc..(pos + 1) * dc];
            for (a, &s) in dst.iter_mut().zip(src) {
                *a += s;
            }
        }
    }

    Ok((ce, range.len()))
}

/// Chunk size for batch-parallel gradient accumulation. Fixed so that the
/// reduction order (and therefore every bit of the result) is independent of
/// the worker count.
const GRAD_CHUNK: usize = 8;

/// Mean cross-entropy over all predicted positions of the batch, plus
/// gradients for every parameter tensor.
pub fn loss_and_grads(
    p: &Parameters,
    cfg: &ModelConfig,
    v: &Vocabulary,
    batch: &[TrainExample],
    mask: LossMask,
    strict: bool,
) -> Result<(f64, GradSet), ModelError> {
    if batch.is_empty() {
        return Err(ModelError::ZeroPredictedPositions);
    }
    let ranges = crate::par::chunk_ranges(batch.len(), GRAD_CHUNK);
    let results = crate::par::map_indexed(ranges.len(), strict, |c| {
        let mut grads = GradSet::zeros_like(p);
        let mut ce = 0.0;
        let mut n = 0usize;
        for i in ranges[c].clone() {
            let (ce_i, n_i) = example_backward(p, cfg, v, &batch[i], mask, &mut grads)?;
            ce += ce_i;
            n += n_i;
        }
        Ok::<(GradSet, f64, usize), ModelError>((grads, ce, n))
    });
    let mut total_ce = 0.0;
    let mut total_n = 0usize;
    let mut merged: Option<GradSet> = None;
    for r in results {
        let (g, ce, n) = r?;
        total_ce += ce;
        total_n += n;
        match &mut merged {
            None => merged = Some(g),
            Some(acc) => acc.add_from(&g),
        }
    }
    let mut grads = merged.expect("non-empty batch");
    let inv = 1.0 / total_n as f64;
    grads.scale(inv);
    let loss = total_ce * inv;
    if !loss.is_finite() {
        return Err(ModelError::NumericFailure(format!(
            "non-finite loss {loss}"
        )));
    }
    Ok((loss, grads))
}
