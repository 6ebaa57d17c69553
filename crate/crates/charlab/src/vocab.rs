//! Synthetic tokenizer vocabulary: atomic characters, fixed-length word
//! tokens, and reserved special tokens, with whole-run/character-fallback
//! encoding.
//!
//! Layout of token ids:
//!   * `0..63`   — atomic tokens in fixed order: `a..z`, `A..Z`, `0..9`, space.
//!   * `63..63+n_words` — word tokens, sampled letters only, all unique.
//!   * last 21   — special tokens: 19 task tokens, then SEP, then EOS. Each
//!     special token owns one reserved punctuation character so that every
//!     token has at least one character.
//!
//! Character ids are independent of word count: ids `0..63` are the atomic
//! characters (same order as the atomic tokens) and ids `63..84` are the
//! reserved special characters, giving a fixed character alphabet of 84.
//!
//! File format (single JSON document, canonical field order, one trailing
//! newline): `{"version":1,"seed":...,"K":<int or "mixed">,
//! "dedup":"resample","entries":[{"id":..,"surface":..,"kind":..},..]}`.
//! `char_ids` are derived on load. Word sampling follows the documented RNG
//! contract (SplitMix64-seeded xoshiro256**, rejection sampling over 52
//! letters, whole-word resampling on duplicates), so the file bytes are a
//! pure function of `(seed, vocab_size, K)`.

use crate::rng::Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fmt;
use std::path::Path;

/// Atomic characters in token-id order.
pub const ATOMIC_CHARS: &str = "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789 ";
/// The 52 letters word tokens are sampled from, lowercase first.
pub const LETTERS: &str = "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ";
/// Reserved single-character surfaces for special tokens: 19 task tokens,
/// then SEP, then EOS.
pub const RESERVED_CHARS: [char; N_SPECIAL] = [
    '!', '"', '#', '$', '%', '&', '\'', '(', ')', '*', '+', ',', '-', '.', '/', ':', ';', '<',
    '=', '>', '?',
];

pub const N_ATOMIC: usize = 63;
pub const N_LETTERS: usize = 52;
pub const N_TASKS: usize = 19;
pub const N_SPECIAL: usize = N_TASKS + 2;
/// Size of the character-id alphabet (atomics plus reserved specials).
pub const N_CHAR_IDS: usize = N_ATOMIC + N_SPECIAL;

pub const FILE_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum VocabError {
    #[error("K must be at least 2, got {0}")]
    InvalidK(u32),
    #[error("vocab_size must be at least 1")]
    InvalidVocabSize,
    #[error("cannot sample {vocab_size} unique words of length {k} from 52 letters")]
    InfeasibleUniqueness { vocab_size: u64, k: u32 },
    #[error("character {0:?} is outside the vocabulary alphabet")]
    UnknownChar(char),
    #[error("token id {0} is out of range")]
    UnknownId(u32),
    #[error("unsupported vocab file version {0}")]
    VersionMismatch(u32),
    #[error("vocab invariant violated: {0}")]
    Invariant(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed vocab file: {0}")]
    Parse(#[from] serde_json::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TokenKind {
    Letter,
    Digit,
    Space,
    Word,
    Task,
    Sep,
    Eos,
}

/// Word length declaration: every word token has exactly length `K`, or the
/// file was authored externally with varying lengths.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KSpec {
    Fixed(u32),
    Mixed,
}

impl Serialize for KSpec {
    fn serialize<S: serde::Serializer>(&self, ser: S) -> Result<S::Ok, S::Error> {
        match self {
            KSpec::Fixed(k) => ser.serialize_u32(*k),
            KSpec::Mixed => ser.serialize_str("mixed"),
        }
    }
}

impl<'de> Deserialize<'de> for KSpec {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Int(u32),
            Str(String),
        }
        match Raw::deserialize(de)? {
            Raw::Int(k) => Ok(KSpec::Fixed(k)),
            Raw::Str(s) if s == "mixed" => Ok(KSpec::Mixed),
            Raw::Str(s) => Err(serde::de::Error::custom(format!(
                "K must be an integer or \"mixed\", got {s:?}"
            ))),
        }
    }
}

impl fmt::Display for KSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KSpec::Fixed(k) => write!(f, "{k}"),
            KSpec::Mixed => write!(f, "mixed"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct TokenEntry {
    pub id: u32,
    pub surface: String,
    pub kind: TokenKind,
    /// Character ids of the surface; length 1 for task/sep/eos.
    pub char_ids: Vec<u32>,
}

/// Derived token counts by class.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Counts {
    pub n_char_tokens: usize,
    pub n_word_tokens: usize,
    pub n_special_tokens: usize,
}

#[derive(Clone, Debug)]
pub struct Vocabulary {
    pub version: u32,
    pub seed: u64,
    pub k: KSpec,
    entries: Vec<TokenEntry>,
    surface_to_id: HashMap<String, u32>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VocabFile {
    version: u32,
    seed: u64,
    #[serde(rename = "K")]
    k: KSpec,
    dedup: String,
    entries: Vec<EntryFile>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EntryFile {
    id: u32,
    surface: String,
    kind: TokenKind,
}

/// Builds the synthetic vocabulary for `(seed, vocab_size, k)`.
///
/// Word surfaces are `k` uniform letters each; duplicate words are resampled
/// until all `vocab_size` surfaces are unique, so the word count is exact.
pub fn build_vocab(seed: u64, vocab_size: u64, k: u32) -> Result<Vocabulary, VocabError> {
    if k < 2 {
        return Err(VocabError::InvalidK(k));
    }
    if vocab_size < 1 {
        return Err(VocabError::InvalidVocabSize);
    }
    if let Some(space) = 52u64.checked_pow(k) {
        if vocab_size > space {
            return Err(VocabError::InfeasibleUniqueness { vocab_size, k });
        }
    }
    let letters: Vec<char> = LETTERS.chars().collect();
    let mut rng = Rng::from_seed(seed);
    let mut words: Vec<String> = Vec::with_capacity(vocab_size as usize);
    let mut seen: HashMap<String, ()> = HashMap::with_capacity(vocab_size as usize);
    while words.len() < vocab_size as usize {
        let word: String = (0..k).map(|_| letters[rng.below(52) as usize]).collect();
        if seen.insert(word.clone(), ()).is_none() {
            words.push(word);
        }
    }
    Ok(assemble(seed, KSpec::Fixed(k), words))
}

fn assemble(seed: u64, k: KSpec, words: Vec<String>) -> Vocabulary {
    let mut entries = Vec::with_capacity(N_ATOMIC + words.len() + N_SPECIAL);
    for (i, ch) in ATOMIC_CHARS.chars().enumerate() {
        let kind = if ch.is_ascii_lowercase() || ch.is_ascii_uppercase() {
            TokenKind::Letter
        } else if ch.is_ascii_digit() {
            TokenKind::Digit
        } else {
            TokenKind::Space
        };
        entries.push(TokenEntry {
            id: i as u32,
            surface: ch.to_string(),
            kind,
            char_ids: vec![i as u32],
        });
    }
    for word in words {
        let id = entries.len() as u32;
        let char_ids = word.chars().map(|c| atomic_char_id(c).unwrap()).collect();
        entries.push(TokenEntry {
            id,
            surface: word,
            kind: TokenKind::Word,
            char_ids,
        });
    }
    for (j, ch) in RESERVED_CHARS.iter().enumerate() {
        let id = entries.len() as u32;
        let kind = match j {
            _ if j < N_TASKS => TokenKind::Task,
            _ if j == N_TASKS => TokenKind::Sep,
            _ => TokenKind::Eos,
        };
        entries.push(TokenEntry {
            id,
            surface: ch.to_string(),
            kind,
            char_ids: vec![(N_ATOMIC + j) as u32],
        });
    }
    let surface_to_id = entries
        .iter()
        .map(|e| (e.surface.clone(), e.id))
        .collect();
    Vocabulary {
        version: FILE_VERSION,
        seed,
        k,
        entries,
        surface_to_id,
    }
}

/// Character id of an atomic character, if any.
pub fn atomic_char_id(c: char) -> Option<u32> {
    ATOMIC_CHARS.find(c).map(|byte_idx| byte_idx as u32)
}

/// Character id of a reserved special character, if any.
pub fn reserved_char_id(c: char) -> Option<u32> {
    RESERVED_CHARS
        .iter()
        .position(|&r| r == c)
        .map(|j| (N_ATOMIC + j) as u32)
}

impl Vocabulary {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn counts(&self) -> Counts {
        Counts {
            n_char_tokens: N_ATOMIC,
            n_word_tokens: self.entries.len() - N_ATOMIC - N_SPECIAL,
            n_special_tokens: N_SPECIAL,
        }
    }

    pub fn entries(&self) -> &[TokenEntry] {
        &self.entries
    }

    pub fn entry(&self, id: u32) -> Result<&TokenEntry, VocabError> {
        self.entries
            .get(id as usize)
            .ok_or(VocabError::UnknownId(id))
    }

    pub fn id_of(&self, surface: &str) -> Option<u32> {
        self.surface_to_id.get(surface).copied()
    }

    pub fn space_id(&self) -> u32 {
        (N_ATOMIC - 1) as u32
    }

    pub fn word_id_range(&self) -> std::ops::Range<u32> {
        N_ATOMIC as u32..(self.entries.len() - N_SPECIAL) as u32
    }

    pub fn n_words(&self) -> usize {
        self.counts().n_word_tokens
    }

    pub fn task_token_id(&self, task_index: usize) -> u32 {
        debug_assert!(task_index < N_TASKS);
        (self.entries.len() - N_SPECIAL + task_index) as u32
    }

    pub fn sep_id(&self) -> u32 {
        (self.entries.len() - 2) as u32
    }

    pub fn eos_id(&self) -> u32 {
        (self.entries.len() - 1) as u32
    }

    pub fn word_surface(&self, word_index: usize) -> &str {
        &self.entries[N_ATOMIC + word_index].surface
    }

    /// Longest word surface, in characters.
    pub fn max_word_len(&self) -> usize {
        self.entries[self.word_id_range().start as usize..self.word_id_range().end as usize]
            .iter()
            .map(|e| e.char_ids.len())
            .max()
            .unwrap_or(1)
    }

    /// Shortest word surface, in characters.
    pub fn min_word_len(&self) -> usize {
        self.entries[self.word_id_range().start as usize..self.word_id_range().end as usize]
            .iter()
            .map(|e| e.char_ids.len())
            .min()
            .unwrap_or(1)
    }

    /// Encodes text into token ids.
    ///
    /// The text is split on single spaces; each maximal non-space run that
    /// exactly matches a token surface becomes that token, any other run is
    /// emitted as its per-character ids, and never as intermediate subwords.
    pub fn encode(&self, text: &str) -> Result<Vec<u32>, VocabError> {
        let mut ids = Vec::new();
        let space = self.space_id();
        let chars: Vec<char> = text.chars().collect();
        let mut i = 0;
        while i < chars.len() {
            if chars[i] == ' ' {
                ids.push(space);
                i += 1;
                continue;
            }
            let start = i;
            while i < chars.len() && chars[i] != ' ' {
                i += 1;
            }
            let run: String = chars[start..i].iter().collect();
            if let Some(id) = self.surface_to_id.get(&run) {
                ids.push(*id);
            } else {
                for &c in &chars[start..i] {
                    let single = c.to_string();
                    match self.surface_to_id.get(&single) {
                        Some(id) => ids.push(*id),
                        None => return Err(VocabError::UnknownChar(c)),
                    }
                }
            }
        }
        Ok(ids)
    }

    /// Decodes ids back to text by concatenating surfaces.
    pub fn decode(&self, ids: &[u32]) -> Result<String, VocabError> {
        let mut out = String::new();
        for &id in ids {
            out.push_str(&self.entry(id)?.surface);
        }
        Ok(out)
    }

    /// Character ids and intra-token positions of a token's surface.
    pub fn chars_of(&self, id: u32) -> Result<(Vec<u32>, Vec<u32>), VocabError> {
        let entry = self.entry(id)?;
        let positions = (0..entry.char_ids.len() as u32).collect();
        Ok((entry.char_ids.clone(), positions))
    }

    /// Canonical JSON serialization (with trailing newline).
    pub fn to_json_string(&self) -> String {
        let file = VocabFile {
            version: self.version,
            seed: self.seed,
            k: self.k,
            dedup: "resample".to_string(),
            entries: self
                .entries
                .iter()
                .map(|e| EntryFile {
                    id: e.id,
                    surface: e.surface.clone(),
                    kind: e.kind,
                })
                .collect(),
        };
        let mut s = serde_json::to_string(&file).expect("vocab serialization");
        s.push('\n');
        s
    }

    pub fn from_json_str(text: &str) -> Result<Vocabulary, VocabError> {
        let file: VocabFile = serde_json::from_str(text)?;
        if file.version != FILE_VERSION {
            return Err(VocabError::VersionMismatch(file.version));
        }
        if file.dedup != "resample" {
            return Err(VocabError::Invariant(format!(
                "unsupported dedup policy {:?}",
                file.dedup
            )));
        }
        validate_entries(&file)?;
        let words = file
            .entries
            .iter()
            .filter(|e| e.kind == TokenKind::Word)
            .map(|e| e.surface.clone())
            .collect();
        Ok(assemble(file.seed, file.k, words))
    }

    pub fn save(&self, path: &Path) -> Result<(), VocabError> {
        std::fs::write(path, self.to_json_string())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Vocabulary, VocabError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json_str(&text)
    }
}

fn validate_entries(file: &VocabFile) -> Result<(), VocabError> {
    let entries = &file.entries;
    let n = entries.len();
    if n < N_ATOMIC + 1 + N_SPECIAL {
        return Err(VocabError::Invariant(format!(
            "expected at least {} entries, got {n}",
            N_ATOMIC + 1 + N_SPECIAL
        )));
    }
    for (i, e) in entries.iter().enumerate() {
        if e.id != i as u32 {
            return Err(VocabError::Invariant(format!(
                "ids must be dense and ordered: entry {i} has id {}",
                e.id
            )));
        }
    }
    let mut seen: HashMap<&str, ()> = HashMap::with_capacity(n);
    for e in entries {
        if seen.insert(e.surface.as_str(), ()).is_some() {
            return Err(VocabError::Invariant(format!(
                "duplicate surface {:?}",
                e.surface
            )));
        }
    }
    for (i, ch) in ATOMIC_CHARS.chars().enumerate() {
        let e = &entries[i];
        let expect_kind = if ch.is_ascii_alphabetic() {
            TokenKind::Letter
        } else if ch.is_ascii_digit() {
            TokenKind::Digit
        } else {
            TokenKind::Space
        };
        if e.surface != ch.to_string() || e.kind != expect_kind {
            return Err(VocabError::Invariant(format!(
                "entry {i} must be atomic {ch:?}, got {:?} ({:?})",
                e.surface, e.kind
            )));
        }
    }
    for (j, ch) in RESERVED_CHARS.iter().enumerate() {
        let e = &entries[n - N_SPECIAL + j];
        let expect_kind = match j {
            _ if j < N_TASKS => TokenKind::Task,
            _ if j == N_TASKS => TokenKind::Sep,
            _ => TokenKind::Eos,
        };
        if e.surface != ch.to_string() || e.kind != expect_kind {
            return Err(VocabError::Invariant(format!(
                "special entry {} must be {ch:?} ({expect_kind:?}), got {:?} ({:?})",
                n - N_SPECIAL + j,
                e.surface,
                e.kind
            )));
        }
    }
    for e in &entries[N_ATOMIC..n - N_SPECIAL] {
        if e.kind != TokenKind::Word {
            return Err(VocabError::Invariant(format!(
                "entry {} must be a word token, got {:?}",
                e.id, e.kind
            )));
        }
        if e.surface.len() < 2 {
            return Err(VocabError::Invariant(format!(
                "word surface {:?} is shorter than 2 characters",
                e.surface
            )));
        }
        if !e.surface.chars().all(|c| c.is_ascii_alphabetic()) {
            return Err(VocabError::Invariant(format!(
                "word surface {:?} contains non-letter characters",
                e.surface
            )));
        }
        if let KSpec::Fixed(k) = file.k {
            if e.surface.len() != k as usize {
                return Err(VocabError::Invariant(format!(
                    "word surface {:?} has length {}, expected K={k}",
                    e.surface,
                    e.surface.len()
                )));
            }
        }
    }
    Ok(())
}
