use super::ModelError;
use crate::vocab::Vocabulary;

/// Flattened character view of a token sequence.
///
/// Characters appear in token order; `owner[j]` is the index of the token a
/// character belongs to (non-decreasing), `intra_pos[j]` its position inside
/// that token, and `token_char_spans[t]` the `[start, end)` range of token
/// `t`'s characters in the stream.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CharStream {
    pub char_ids: Vec<u32>,
    pub intra_pos: Vec<u32>,
    pub owner: Vec<u32>,
    pub token_char_spans: Vec<(u32, u32)>,
}

impl CharStream {
    pub fn len(&self) -> usize {
        self.char_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.char_ids.is_empty()
    }

    pub fn n_tokens(&self) -> usize {
        self.token_char_spans.len()
    }

    /// Appends one token's characters, extending the stream in place.
    pub fn push_token(&mut self, char_ids: &[u32]) {
        let start = self.char_ids.len() as u32;
        let owner = self.token_char_spans.len() as u32;
        for (p, &c) in char_ids.iter().enumerate() {
            self.char_ids.push(c);
            self.intra_pos.push(p as u32);
            self.owner.push(owner);
        }
        self.token_char_spans
            .push((start, start + char_ids.len() as u32));
    }

    /// Characters visible to queries of token `t` under the block-causal
    /// rule: the contiguous prefix up to the end of token `t`'s span.
    pub fn visible_prefix(&self, t: usize) -> usize {
        self.token_char_spans[t].1 as usize
    }
}

/// Builds the character stream for a token sequence.
pub fn build_char_stream(v: &Vocabulary, token_ids: &[u32]) -> Result<CharStream, ModelError> {
    let mut cs = CharStream::default();
    for &id in token_ids {
        let entry = v.entry(id)?;
        cs.push_token(&entry.char_ids);
    }
    Ok(cs)
}

/// Block-causal self-attention mask over the character stream, row-major
/// `M x M`: query `q` may attend key `k` iff `owner[k] <= owner[q]`.
pub fn self_attn_mask(cs: &CharStream) -> Vec<bool> {
    let m = cs.len();
    let mut mask = vec![false; m * m];
    for q in 0..m {
        for k in 0..m {
            mask[q * m + k] = cs.owner[k] <= cs.owner[q];
        }
    }
    mask
}

/// Block-causal cross-attention mask, row-major `n_tokens x M`: token `i`
/// may attend character `j` iff `owner[j] <= i`.
pub fn cross_attn_mask(n_tokens: usize, cs: &CharStream) -> Result<Vec<bool>, ModelError> {
    if cs.n_tokens() != n_tokens {
        return Err(ModelError::StreamMismatch {
            expect: n_tokens,
            got: cs.n_tokens(),
        });
    }
    let m = cs.len();
    let mut mask = vec![false; n_tokens * m];
    for i in 0..n_tokens {
        for j in 0..m {
            mask[i * m + j] = (cs.owner[j] as usize) <= i;
        }
    }
    Ok(mask)
}
