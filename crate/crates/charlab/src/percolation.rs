//! Training-free bipartite percolation: token nodes on the left, property
//! nodes (characters, or character-position pairs) on the right. Edges are
//! the incidence list of a freshly sampled vocabulary, revealed in uniform
//! random order; the critical step is the first at which the largest
//! component holds the criterion fraction of token nodes.

use crate::rng::Rng;
use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum PercolationError {
    #[error("criterion must be in (0, 1], got {0}")]
    BadCriterion(f64),
    #[error("vocab_size and k must be positive")]
    EmptySizes,
    #[error("cannot sample {vocab_size} unique words of length {k} over {alphabet} characters")]
    Infeasible { vocab_size: u64, k: u32, alphabet: u32 },
    #[error("need at least {need} samples spanning a decade of |V|*K, got {found} spanning {spread:.2}x")]
    InsufficientSpread { need: usize, found: usize, spread: f64 },
}

/// Union-find over `n` nodes with component sizes and per-component token
/// counts.
pub struct UnionFind {
    parent: Vec<u32>,
    size: Vec<u32>,
    tokens: Vec<u32>,
}

impl UnionFind {
    /// `n` nodes of which the first `n_tokens` are token (left) nodes.
    pub fn new(n: usize, n_tokens: usize) -> UnionFind {
        UnionFind {
            parent: (0..n as u32).collect(),
            size: vec![1; n],
            tokens: (0..n).map(|i| u32::from(i < n_tokens)).collect(),
        }
    }

    pub fn find(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            let grandparent = self.parent[self.parent[x as usize] as usize];
            self.parent[x as usize] = grandparent;
            x = grandparent;
        }
        x
    }

    /// Unions two nodes; returns the new root if a merge happened.
    pub fn union(&mut self, a: u32, b: u32) -> Option<u32> {
        let ra = self.find(a);
        let rb = self.find(b);
        if ra == rb {
            return None;
        }
        let (big, small) = if self.size[ra as usize] >= self.size[rb as usize] {
            (ra, rb)
        } else {
            (rb, ra)
        };
        self.parent[small as usize] = big;
        self.size[big as usize] += self.size[small as usize];
        self.tokens[big as usize] += self.tokens[small as usize];
        Some(big)
    }

    pub fn component(&mut self, x: u32) -> (u32, u32) {
        let r = self.find(x);
        (self.size[r as usize], self.tokens[r as usize])
    }
}

/// Right-node layout of the bipartite graph.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PropertyMode {
    /// One property node per character (the default reading).
    Chars,
    /// One property node per (character, intra-token position) pair.
    CharPositions,
}

impl std::str::FromStr for PropertyMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "chars" => Ok(PropertyMode::Chars),
            "char_positions" | "charpos" => Ok(PropertyMode::CharPositions),
            other => Err(format!("unknown property mode {other:?}")),
        }
    }
}

impl std::fmt::Display for PropertyMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PropertyMode::Chars => write!(f, "chars"),
            PropertyMode::CharPositions => write!(f, "char_positions"),
        }
    }
}

/// A token-property incidence graph with union-find state.
pub struct BipartiteGraph {
    pub n_tokens: usize,
    pub n_props: usize,
    pub edges: Vec<(u32, u32)>,
    uf: UnionFind,
    n_added: usize,
    best_size: u32,
    best_tokens: u32,
}

impl BipartiteGraph {
    pub fn new(n_tokens: usize, n_props: usize, edges: Vec<(u32, u32)>) -> BipartiteGraph {
        BipartiteGraph {
            n_tokens,
            n_props,
            edges,
            uf: UnionFind::new(n_tokens + n_props, n_tokens),
            n_added: 0,
            best_size: 1,
            best_tokens: 0,
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.n_tokens + self.n_props
    }

    /// Adds the next edge from the list; returns (largest component size,
    /// its token count).
    pub fn add_next_edge(&mut self) -> Option<(u32, u32)> {
        if self.n_added >= self.edges.len() {
            return None;
        }
        let (tok, prop) = self.edges[self.n_added];
        self.n_added += 1;
        let prop_node = self.n_tokens as u32 + prop;
        if let Some(root) = self.uf.union(tok, prop_node) {
            let (size, tokens) = (self.uf.size[root as usize], self.uf.tokens[root as usize]);
            if size > self.best_size || (size == self.best_size && tokens > self.best_tokens) {
                self.best_size = size;
                self.best_tokens = tokens;
            }
        }
        Some((self.best_size, self.best_tokens))
    }

    /// Largest component by node count (ties prefer more tokens): returns
    /// (size, token count inside).
    pub fn giant_component(&mut self) -> (u32, u32) {
        let n = self.n_nodes();
        let mut best = (1u32, 0u32);
        for x in 0..n as u32 {
            let r = self.uf.find(x);
            if r == x {
                let pair = (self.uf.size[r as usize], self.uf.tokens[r as usize]);
                if pair.0 > best.0 || (pair.0 == best.0 && pair.1 > best.1) {
                    best = pair;
                }
            }
        }
        best
    }
}

/// Samples a vocabulary of `vocab_size` unique `k`-character words over
/// `alphabet_size` characters; returns per-token character indices.
pub fn sample_words(
    vocab_size: u64,
    k: u32,
    alphabet_size: u32,
    rng: &mut Rng,
) -> Result<Vec<Vec<u8>>, PercolationError> {
    if vocab_size == 0 || k == 0 || alphabet_size == 0 {
        return Err(PercolationError::EmptySizes);
    }
    if let Some(space) = (alphabet_size as u64).checked_pow(k) {
        if vocab_size > space {
            return Err(PercolationError::Infeasible {
                vocab_size,
                k,
                alphabet: alphabet_size,
            });
        }
    }
    let mut words = Vec::with_capacity(vocab_size as usize);
    let mut seen = std::collections::HashSet::with_capacity(vocab_size as usize);
    while words.len() < vocab_size as usize {
        let w: Vec<u8> = (0..k).map(|_| rng.below(alphabet_size as u64) as u8).collect();
        if seen.insert(w.clone()) {
            words.push(w);
        }
    }
    Ok(words)
}

/// Expands words into the incidence list: each token contributes one
/// (token, property) incidence per character slot.
pub fn incidences(words: &[Vec<u8>], mode: PropertyMode, alphabet_size: u32) -> Vec<(u32, u32)> {
    let mut edges = Vec::with_capacity(words.iter().map(Vec::len).sum());
    for (t, w) in words.iter().enumerate() {
        for (slot, &c) in w.iter().enumerate() {
            let prop = match mode {
                PropertyMode::Chars => c as u32,
                PropertyMode::CharPositions => slot as u32 * alphabet_size + c as u32,
            };
            edges.push((t as u32, prop));
        }
    }
    edges
}

pub fn n_props(mode: PropertyMode, alphabet_size: u32, k: u32) -> usize {
    match mode {
        PropertyMode::Chars => alphabet_size as usize,
        PropertyMode::CharPositions => (alphabet_size * k) as usize,
    }
}

/// One percolation trial: sample a vocabulary, shuffle its incidence list,
/// add one edge per step, and return the first step at which the largest
/// component contains at least `criterion * vocab_size` token nodes (`None`
/// if that never happens).
pub fn simulate(
    vocab_size: u64,
    k: u32,
    alphabet_size: u32,
    mode: PropertyMode,
    criterion: f64,
    rng: &mut Rng,
) -> Result<Option<u64>, PercolationError> {
    if !(criterion > 0.0 && criterion <= 1.0) {
        return Err(PercolationError::BadCriterion(criterion));
    }
    let words = sample_words(vocab_size, k, alphabet_size, rng)?;
    let mut edges = incidences(&words, mode, alphabet_size);
    rng.shuffle(&mut edges);
    let need = criterion * vocab_size as f64;
    let mut graph = BipartiteGraph::new(vocab_size as usize, n_props(mode, alphabet_size, k), edges);
    let mut step = 0u64;
    while let Some((_, tokens)) = graph.add_next_edge() {
        step += 1;
        if tokens as f64 >= need {
            return Ok(Some(step));
        }
    }
    Ok(None)
}

/// Median critical step over `trials` independent trials (trial `i` uses the
/// stream `(seed, trial_i)`); trials that never reach the criterion are
/// dropped. Returns `None` if more than half the trials never reach it.
#[allow(clippy::too_many_arguments)]
pub fn median_tc(
    vocab_size: u64,
    k: u32,
    alphabet_size: u32,
    mode: PropertyMode,
    criterion: f64,
    trials: u32,
    seed: u64,
    strict: bool,
) -> Result<Option<f64>, PercolationError> {
    let results = crate::par::map_indexed(trials as usize, strict, |i| {
        let mut rng = Rng::from_path(seed, &[0x9C, i as u64]);
        simulate(vocab_size, k, alphabet_size, mode, criterion, &mut rng)
    });
    let mut values = Vec::with_capacity(trials as usize);
    for r in results {
        if let Some(t) = r? {
            values.push(t as f64);
        }
    }
    if values.len() * 2 < trials as usize {
        return Ok(None);
    }
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    Ok(Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }))
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct FitResult {
    /// Slope of log t_c against log(|V| * K).
    pub exponent: f64,
    pub intercept: f64,
    /// RMS of the log-space residuals.
    pub residual: f64,
}

/// Least-squares fit of `log t_c = exponent * log(|V|*K) + intercept`.
/// Requires at least 3 samples spanning at least one decade of `|V|*K`.
pub fn scaling_fit(samples: &[(u64, u32, f64)]) -> Result<FitResult, PercolationError> {
    let spread = {
        let vks: Vec<f64> = samples.iter().map(|&(v, k, _)| (v * k as u64) as f64).collect();
        let lo = vks.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = vks.iter().cloned().fold(0.0, f64::max);
        if lo > 0.0 {
            hi / lo
        } else {
            0.0
        }
    };
    if samples.len() < 3 || spread < 10.0 {
        return Err(PercolationError::InsufficientSpread {
            need: 3,
            found: samples.len(),
            spread,
        });
    }
    let xs: Vec<f64> = samples
        .iter()
        .map(|&(v, k, _)| ((v * k as u64) as f64).ln())
        .collect();
    let ys: Vec<f64> = samples.iter().map(|&(_, _, t)| t.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|&x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(&x, &y)| (x - mx) * (y - my)).sum();
    let exponent = sxy / sxx;
    let intercept = my - exponent * mx;
    let residual = (xs
        .iter()
        .zip(&ys)
        .map(|(&x, &y)| {
            let r = y - (exponent * x + intercept);
            r * r
        })
        .sum::<f64>()
        / n)
        .sqrt();
    Ok(FitResult {
        exponent,
        intercept,
        residual,
    })
}

/// Whether a fitted exponent is consistent with a hypothesis within a band.
pub fn within_band(fit: &FitResult, hypothesis: f64, band: f64) -> bool {
    (fit.exponent - hypothesis).abs() <= band
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_token_single_char() {
        let mut rng = Rng::from_seed(1);
        let t = simulate(1, 1, 52, PropertyMode::Chars, 0.5, &mut rng).unwrap();
        assert_eq!(t, Some(1));
    }

    #[test]
    fn full_connection_bound() {
        let mut rng = Rng::from_seed(2);
        let t = simulate(4096, 4, 52, PropertyMode::Chars, 1.0, &mut rng)
            .unwrap()
            .expect("criterion 1.0 should be reached for a dense graph");
        assert!(t <= 4096 * 4);
    }

    #[test]
    fn bad_criterion_is_rejected() {
        let mut rng = Rng::from_seed(3);
        assert!(matches!(
            simulate(8, 2, 52, PropertyMode::Chars, 0.0, &mut rng),
            Err(PercolationError::BadCriterion(_))
        ));
        assert!(matches!(
            simulate(8, 2, 52, PropertyMode::Chars, 1.5, &mut rng),
            Err(PercolationError::BadCriterion(_))
        ));
    }

    #[test]
    fn star_component() {
        let edges = vec![(0, 0), (0, 1), (0, 2), (0, 3)];
        let mut g = BipartiteGraph::new(1, 4, edges);
        while g.add_next_edge().is_some() {}
        assert_eq!(g.giant_component(), (5, 1));
    }

    #[test]
    fn empty_edges_giant_is_one() {
        let mut g = BipartiteGraph::new(3, 4, vec![]);
        let (size, _) = g.giant_component();
        assert_eq!(size, 1);
    }

    /// Breadth-first-search oracle for the giant component.
    fn bfs_giant(n_tokens: usize, n_props: usize, edges: &[(u32, u32)]) -> (u32, u32) {
        let n = n_tokens + n_props;
        let mut adj = vec![Vec::new(); n];
        for &(t, p) in edges {
            let p = n_tokens + p as usize;
            adj[t as usize].push(p);
            adj[p].push(t as usize);
        }
        let mut seen = vec![false; n];
        let mut best = (1u32, 0u32);
        for start in 0..n {
            if seen[start] {
                continue;
            }
            let mut queue = std::collections::VecDeque::from([start]);
            seen[start] = true;
            let mut size = 0u32;
            let mut tokens = 0u32;
            while let Some(x) = queue.pop_front() {
                size += 1;
                if x < n_tokens {
                    tokens += 1;
                }
                for &y in &adj[x] {
                    if !seen[y] {
                        seen[y] = true;
                        queue.push_back(y);
                    }
                }
            }
            if size > best.0 || (size == best.0 && tokens > best.1) {
                best = (size, tokens);
            }
        }
        best
    }

    #[test]
    fn union_find_matches_bfs_oracle() {
        let mut rng = Rng::from_seed(77);
        for _ in 0..300 {
            let n_tokens = rng.below(30) as usize + 1;
            let n_props = rng.below(20) as usize + 1;
            let n_edges = rng.below(80) as usize;
            let edges: Vec<(u32, u32)> = (0..n_edges)
                .map(|_| {
                    (
                        rng.below(n_tokens as u64) as u32,
                        rng.below(n_props as u64) as u32,
                    )
                })
                .collect();
            let mut g = BipartiteGraph::new(n_tokens, n_props, edges.clone());
            while g.add_next_edge().is_some() {}
            assert_eq!(g.giant_component(), bfs_giant(n_tokens, n_props, &edges));
        }
    }

    #[test]
    fn incremental_best_matches_full_recomputation() {
        let mut rng = Rng::from_seed(5);
        let n_tokens = 40;
        let n_props = 10;
        let edges: Vec<(u32, u32)> = (0..120)
            .map(|_| (rng.below(n_tokens) as u32, rng.below(n_props) as u32))
            .collect();
        let mut g = BipartiteGraph::new(n_tokens as usize, n_props as usize, edges.clone());
        let mut prefix = Vec::new();
        let mut step = 0;
        while let Some((size, tokens)) = g.add_next_edge() {
            step += 1;
            prefix.push((size, tokens));
            let mut h =
                BipartiteGraph::new(n_tokens as usize, n_props as usize, edges[..step].to_vec());
            while h.add_next_edge().is_some() {}
            let giant = h.giant_component();
            assert_eq!((size, tokens).0, giant.0, "step {step}");
        }
    }

    #[test]
    fn coarser_alphabet_never_delays_criterion() {
        // coupling: project property nodes c -> c mod 13 under the same
        // arrival order; every union in the fine graph implies one in the
        // coarse graph, so the criterion is met no later
        for trial in 0..20 {
            let mut rng = Rng::from_path(31, &[trial]);
            let words = sample_words(64, 4, 52, &mut rng).unwrap();
            let mut fine_edges = incidences(&words, PropertyMode::Chars, 52);
            rng.shuffle(&mut fine_edges);
            let coarse_edges: Vec<(u32, u32)> =
                fine_edges.iter().map(|&(t, p)| (t, p % 13)).collect();
            let run = |edges: Vec<(u32, u32)>, n_props: usize| -> u64 {
                let mut g = BipartiteGraph::new(64, n_props, edges);
                let mut step = 0;
                while let Some((_, tokens)) = g.add_next_edge() {
                    step += 1;
                    if tokens as f64 >= 0.5 * 64.0 {
                        return step;
                    }
                }
                u64::MAX
            };
            let t_fine = run(fine_edges, 52);
            let t_coarse = run(coarse_edges, 13);
            assert!(
                t_coarse <= t_fine,
                "trial {trial}: coarse {t_coarse} > fine {t_fine}"
            );
        }
    }

    #[test]
    fn median_is_deterministic() {
        let a = median_tc(256, 4, 52, PropertyMode::Chars, 0.5, 11, 42, true).unwrap();
        let b = median_tc(256, 4, 52, PropertyMode::Chars, 0.5, 11, 42, false).unwrap();
        assert_eq!(a, b);
        assert!(a.is_some());
    }

    #[test]
    fn fit_recovers_planted_slopes() {
        let mut samples = Vec::new();
        for vexp in 8..=14u32 {
            for k in [4u32, 6, 8] {
                let v = 1u64 << vexp;
                samples.push((v, k, 3.0 * ((v * k as u64) as f64).powf(0.5)));
            }
        }
        let fit = scaling_fit(&samples).unwrap();
        assert!((fit.exponent - 0.5).abs() < 1e-6, "{}", fit.exponent);
        assert!(fit.residual < 1e-9);

        let linear: Vec<(u64, u32, f64)> = samples
            .iter()
            .map(|&(v, k, _)| (v, k, 0.7 * (v * k as u64) as f64))
            .collect();
        let fit = scaling_fit(&linear).unwrap();
        assert!((fit.exponent - 1.0).abs() < 1e-6);
    }

    #[test]
    fn fit_requires_spread() {
        let narrow = vec![(256u64, 4u32, 100.0), (300, 4, 110.0), (350, 4, 120.0)];
        assert!(matches!(
            scaling_fit(&narrow),
            Err(PercolationError::InsufficientSpread { .. })
        ));
    }

    #[test]
    fn band_check() {
        let fit = FitResult { exponent: 0.62, intercept: 0.0, residual: 0.0 };
        assert!(within_band(&fit, 0.5, 0.15));
        let fit = FitResult { exponent: 0.9, intercept: 0.0, residual: 0.0 };
        assert!(!within_band(&fit, 0.5, 0.15));
    }
}
