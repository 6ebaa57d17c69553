//! The 19-task suite: 7 word-level and 12 character-level tasks, with
//! on-the-fly example generation and token-sequence rendering.
//!
//! An example is rendered as
//!   prompt  = [TASK] p1 p2 [SEP] input [SEP]
//!   target  = output [EOS]
//! where letter parameters are atomic letter tokens and index parameters are
//! single digit tokens (1-based). Inputs use standard encoding except for the
//! dirty-input task (C5), whose input is pre-shattered into character ids.
//! Outputs always use standard encoding, so tasks that corrupt words
//! naturally hit the character fallback.

use crate::rng::Rng;
use crate::vocab::{VocabError, Vocabulary, N_TASKS};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum TaskError {
    #[error("vocabulary has no word tokens")]
    NoWordTokens,
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("unknown task code {0:?}")]
    UnknownTask(String),
    #[error("exhausted retries while sampling a valid example for task {0}")]
    RetriesExhausted(&'static str),
    #[error(transparent)]
    Vocab(#[from] VocabError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Word,
    Character,
}

/// How inputs and outputs tokenize relative to the word vocabulary.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IoClass {
    WordsToWords,
    CharsToWords,
    WordsToChars,
    Mixed,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamDomain {
    Letter,
    Index,
}

#[derive(Clone, Copy, Debug)]
pub struct TaskDescriptor {
    /// Dense id, 0..18; doubles as the task-token index.
    pub task_id: u8,
    /// Short code: W1..W7, C1..C12.
    pub code: &'static str,
    pub name: &'static str,
    pub level: Level,
    pub io_class: IoClass,
    pub params: &'static [ParamDomain],
}

const CATALOG: [TaskDescriptor; N_TASKS] = [
    TaskDescriptor { task_id: 0, code: "W1", name: "Copy", level: Level::Word, io_class: IoClass::WordsToWords, params: &[] },
    TaskDescriptor { task_id: 1, code: "W2", name: "Reverse words", level: Level::Word, io_class: IoClass::WordsToWords, params: &[] },
    TaskDescriptor { task_id: 2, code: "W3", name: "Duplicate each word", level: Level::Word, io_class: IoClass::WordsToWords, params: &[] },
    TaskDescriptor { task_id: 3, code: "W4", name: "Select word", level: Level::Word, io_class: IoClass::WordsToWords, params: &[ParamDomain::Index] },
    TaskDescriptor { task_id: 4, code: "W5", name: "Remove word", level: Level::Word, io_class: IoClass::WordsToWords, params: &[ParamDomain::Index] },
    TaskDescriptor { task_id: 5, code: "W6", name: "Swap words", level: Level::Word, io_class: IoClass::WordsToWords, params: &[ParamDomain::Index, ParamDomain::Index] },
    TaskDescriptor { task_id: 6, code: "W7", name: "Rotate words left", level: Level::Word, io_class: IoClass::WordsToWords, params: &[] },
    TaskDescriptor { task_id: 7, code: "C1", name: "Spell words", level: Level::Character, io_class: IoClass::WordsToChars, params: &[] },
    TaskDescriptor { task_id: 8, code: "C2", name: "First char of each word", level: Level::Character, io_class: IoClass::WordsToChars, params: &[] },
    TaskDescriptor { task_id: 9, code: "C3", name: "Last char of each word", level: Level::Character, io_class: IoClass::WordsToChars, params: &[] },
    TaskDescriptor { task_id: 10, code: "C4", name: "Reverse spell words", level: Level::Character, io_class: IoClass::WordsToChars, params: &[] },
    TaskDescriptor { task_id: 11, code: "C5", name: "Merge chars", level: Level::Character, io_class: IoClass::CharsToWords, params: &[] },
    TaskDescriptor { task_id: 12, code: "C6", name: "Remove letter", level: Level::Character, io_class: IoClass::Mixed, params: &[ParamDomain::Letter] },
    TaskDescriptor { task_id: 13, code: "C7", name: "Replace letters", level: Level::Character, io_class: IoClass::Mixed, params: &[ParamDomain::Letter, ParamDomain::Letter] },
    TaskDescriptor { task_id: 14, code: "C8", name: "Rewrite uppercase", level: Level::Character, io_class: IoClass::Mixed, params: &[] },
    TaskDescriptor { task_id: 15, code: "C9", name: "Rewrite lowercase", level: Level::Character, io_class: IoClass::Mixed, params: &[] },
    TaskDescriptor { task_id: 16, code: "C10", name: "Insert letter", level: Level::Character, io_class: IoClass::Mixed, params: &[ParamDomain::Letter, ParamDomain::Index] },
    TaskDescriptor { task_id: 17, code: "C11", name: "Swap first and last char", level: Level::Character, io_class: IoClass::Mixed, params: &[] },
    TaskDescriptor { task_id: 18, code: "C12", name: "Words containing letter", level: Level::Character, io_class: IoClass::Mixed, params: &[ParamDomain::Letter] },
];

/// The fixed 19-task catalog.
pub fn task_catalog() -> &'static [TaskDescriptor; N_TASKS] {
    &CATALOG
}

pub fn descriptor(task_id: u8) -> &'static TaskDescriptor {
    &CATALOG[task_id as usize]
}

pub fn descriptor_by_code(code: &str) -> Result<&'static TaskDescriptor, TaskError> {
    CATALOG
        .iter()
        .find(|d| d.code == code)
        .ok_or_else(|| TaskError::UnknownTask(code.to_string()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamValue {
    Letter(char),
    /// 1-based index, always a single digit.
    Index(u8),
}

impl std::fmt::Display for ParamValue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ParamValue::Letter(c) => write!(f, "{c}"),
            ParamValue::Index(i) => write!(f, "{i}"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct TaskInstance {
    pub task_id: u8,
    pub params: Vec<ParamValue>,
    pub sentence: Vec<String>,
    pub prompt_ids: Vec<u32>,
    pub target_ids: Vec<u32>,
}

/// Words per sentence: 16 by default, 8 for tasks with an index parameter so
/// positions stay single-digit.
pub fn sentence_len(d: &TaskDescriptor) -> usize {
    if d.params.contains(&ParamDomain::Index) {
        8
    } else {
        16
    }
}

/// Draws `n_words` word surfaces uniformly, with replacement.
pub fn sample_sentence(
    v: &Vocabulary,
    n_words: usize,
    rng: &mut Rng,
) -> Result<Vec<String>, TaskError> {
    let n = v.n_words();
    if n == 0 {
        return Err(TaskError::NoWordTokens);
    }
    Ok((0..n_words)
        .map(|_| v.word_surface(rng.below(n as u64) as usize).to_string())
        .collect())
}

/// Applies the task transformation to a sentence of word surfaces.
///
/// The output string uses single spaces as word boundaries; spelled-out
/// characters are themselves space-separated so that they tokenize as atomic
/// characters.
pub fn oracle(
    d: &TaskDescriptor,
    params: &[ParamValue],
    sentence: &[String],
) -> Result<String, TaskError> {
    if params.len() != d.params.len() {
        return Err(TaskError::InvalidParam(format!(
            "task {} expects {} params, got {}",
            d.code,
            d.params.len(),
            params.len()
        )));
    }
    let n = sentence.len();
    let index = |p: &ParamValue, bound: usize, what: &str| -> Result<usize, TaskError> {
        match p {
            ParamValue::Index(i) if *i >= 1 && (*i as usize) <= bound => Ok(*i as usize - 1),
            other => Err(TaskError::InvalidParam(format!(
                "{what} {other} out of range 1..={bound}"
            ))),
        }
    };
    let letter = |p: &ParamValue| -> Result<char, TaskError> {
        match p {
            ParamValue::Letter(c) if c.is_ascii_alphabetic() => Ok(*c),
            other => Err(TaskError::InvalidParam(format!("expected a letter, got {other}"))),
        }
    };
    let out = match d.code {
        "W1" => sentence.join(" "),
        "W2" => {
            let mut words: Vec<&str> = sentence.iter().map(String::as_str).collect();
            words.reverse();
            words.join(" ")
        }
        "W3" => sentence
            .iter()
            .flat_map(|w| [w.as_str(), w.as_str()])
            .collect::<Vec<_>>()
            .join(" "),
        "W4" => sentence[index(&params[0], n, "word index")?].clone(),
        "W5" => {
            let i = index(&params[0], n, "word index")?;
            sentence
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, w)| w.as_str())
                .collect::<Vec<_>>()
                .join(" ")
        }
        "W6" => {
            let i = index(&params[0], n, "word index")?;
            let j = index(&params[1], n, "word index")?;
            let mut words: Vec<&str> = sentence.iter().map(String::as_str).collect();
            words.swap(i, j);
            words.join(" ")
        }
        "W7" => {
            if sentence.is_empty() {
                String::new()
            } else {
                let mut words: Vec<&str> = sentence.iter().map(String::as_str).collect();
                words.rotate_left(1);
                words.join(" ")
            }
        }
        "C1" => spell(sentence.iter().flat_map(|w| w.chars())),
        "C2" => spell(sentence.iter().filter_map(|w| w.chars().next())),
        "C3" => spell(sentence.iter().filter_map(|w| w.chars().last())),
        "C4" => spell(sentence.iter().flat_map(|w| w.chars().rev())),
        "C5" => sentence.join(" "),
        "C6" => {
            let x = letter(&params[0])?;
            join_nonempty(sentence.iter().map(|w| w.chars().filter(|&c| c != x).collect()))
        }
        "C7" => {
            let x = letter(&params[0])?;
            let y = letter(&params[1])?;
            sentence
                .iter()
                .map(|w| w.chars().map(|c| if c == x { y } else { c }).collect::<String>())
                .collect::<Vec<_>>()
                .join(" ")
        }
        "C8" => sentence.join(" ").to_ascii_uppercase(),
        "C9" => sentence.join(" ").to_ascii_lowercase(),
        "C10" => {
            let x = letter(&params[0])?;
            let at = match &params[1] {
                ParamValue::Index(i) if *i >= 1 => *i as usize - 1,
                other => {
                    return Err(TaskError::InvalidParam(format!(
                        "insert position {other} must be >= 1"
                    )))
                }
            };
            let mut words = Vec::with_capacity(n);
            for w in sentence {
                let chars: Vec<char> = w.chars().collect();
                if at > chars.len() {
                    return Err(TaskError::InvalidParam(format!(
                        "insert position {} exceeds word length {}",
                        at + 1,
                        chars.len()
                    )));
                }
                let mut out: String = chars[..at].iter().collect();
                out.push(x);
                out.extend(&chars[at..]);
                words.push(out);
            }
            words.join(" ")
        }
        "C11" => sentence
            .iter()
            .map(|w| {
                let mut chars: Vec<char> = w.chars().collect();
                let last = chars.len() - 1;
                chars.swap(0, last);
                chars.into_iter().collect::<String>()
            })
            .collect::<Vec<_>>()
            .join(" "),
        "C12" => {
            let x = letter(&params[0])?;
            join_nonempty(
                sentence
                    .iter()
                    .filter(|w| w.contains(x))
                    .map(|w| w.to_string()),
            )
        }
        other => return Err(TaskError::UnknownTask(other.to_string())),
    };
    Ok(out)
}

fn spell(chars: impl Iterator<Item = char>) -> String {
    let mut out = String::new();
    for c in chars {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push(c);
    }
    out
}

fn join_nonempty(words: impl Iterator<Item = String>) -> String {
    words.filter(|w| !w.is_empty()).collect::<Vec<_>>().join(" ")
}

fn draw_params(
    d: &TaskDescriptor,
    v: &Vocabulary,
    n_words: usize,
    rng: &mut Rng,
) -> Vec<ParamValue> {
    let letters: Vec<char> = crate::vocab::LETTERS.chars().collect();
    d.params
        .iter()
        .map(|dom| match dom {
            ParamDomain::Letter => ParamValue::Letter(letters[rng.below(52) as usize]),
            ParamDomain::Index => {
                let bound = if d.code == "C10" {
                    // insertion position inside a word, capped to one digit
                    (v.min_word_len() + 1).min(9)
                } else {
                    n_words.min(9)
                };
                ParamValue::Index(rng.below(bound as u64) as u8 + 1)
            }
        })
        .collect()
}

/// Pre-shattered encoding: every non-space run becomes per-character ids even
/// when the whole run is in the vocabulary.
pub fn shatter_encode(v: &Vocabulary, text: &str) -> Result<Vec<u32>, TaskError> {
    let mut ids = Vec::new();
    for c in text.chars() {
        match v.id_of(&c.to_string()) {
            Some(id) => ids.push(id),
            None => return Err(TaskError::Vocab(VocabError::UnknownChar(c))),
        }
    }
    Ok(ids)
}

/// Renders prompt/target ids for a concrete (task, params, sentence, output).
pub fn render(
    v: &Vocabulary,
    d: &TaskDescriptor,
    params: &[ParamValue],
    sentence: &[String],
    output: &str,
) -> Result<(Vec<u32>, Vec<u32>), TaskError> {
    let input = sentence.join(" ");
    let mut prompt = vec![v.task_token_id(d.task_id as usize)];
    for p in params {
        let id = v
            .id_of(&p.to_string())
            .ok_or_else(|| TaskError::InvalidParam(format!("unencodable parameter {p}")))?;
        prompt.push(id);
    }
    prompt.push(v.sep_id());
    let input_ids = if d.io_class == IoClass::CharsToWords {
        shatter_encode(v, &input)?
    } else {
        v.encode(&input)?
    };
    prompt.extend(input_ids);
    prompt.push(v.sep_id());
    let mut target = v.encode(output)?;
    target.push(v.eos_id());
    Ok((prompt, target))
}

/// Generates one example: uniform task (within the filter), uniform params,
/// fresh sentence; params are resampled on degenerate draws, bounded at 100
/// attempts.
pub fn make_example(
    v: &Vocabulary,
    rng: &mut Rng,
    task_filter: Option<&[u8]>,
) -> Result<TaskInstance, TaskError> {
    let d = match task_filter {
        Some(ids) if !ids.is_empty() => descriptor(ids[rng.below(ids.len() as u64) as usize]),
        _ => &CATALOG[rng.below(N_TASKS as u64) as usize],
    };
    let n_words = sentence_len(d);
    for _ in 0..100 {
        let sentence = sample_sentence(v, n_words, rng)?;
        let params = draw_params(d, v, n_words, rng);
        let output = match oracle(d, &params, &sentence) {
            Ok(out) => out,
            Err(TaskError::InvalidParam(_)) => continue,
            Err(e) => return Err(e),
        };
        let (prompt_ids, target_ids) = render(v, d, &params, &sentence, &output)?;
        return Ok(TaskInstance {
            task_id: d.task_id,
            params,
            sentence,
            prompt_ids,
            target_ids,
        });
    }
    Err(TaskError::RetriesExhausted(d.code))
}

/// JSONL record for dumped task sets.
#[derive(Serialize, Deserialize)]
pub struct TaskRecord {
    pub task_id: u8,
    pub code: String,
    pub params: Vec<String>,
    pub prompt_ids: Vec<u32>,
    pub target_ids: Vec<u32>,
    pub text: String,
}

impl TaskRecord {
    pub fn from_instance(v: &Vocabulary, inst: &TaskInstance) -> Result<Self, VocabError> {
        let text = format!(
            "{}{}",
            v.decode(&inst.prompt_ids)?,
            v.decode(&inst.target_ids)?
        );
        Ok(TaskRecord {
            task_id: inst.task_id,
            code: descriptor(inst.task_id).code.to_string(),
            params: inst.params.iter().map(|p| p.to_string()).collect(),
            prompt_ids: inst.prompt_ids.clone(),
            target_ids: inst.target_ids.clone(),
            text,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vocab::build_vocab;

    fn s(words: &[&str]) -> Vec<String> {
        words.iter().map(|w| w.to_string()).collect()
    }

    #[test]
    fn catalog_shape() {
        let cat = task_catalog();
        assert_eq!(cat.len(), 19);
        let words = cat.iter().filter(|d| d.level == Level::Word).count();
        let chars = cat.iter().filter(|d| d.level == Level::Character).count();
        assert_eq!(words, 7);
        assert_eq!(chars, 12);
        for (i, d) in cat.iter().enumerate() {
            assert_eq!(d.task_id as usize, i);
        }
        assert_eq!(descriptor_by_code("C6").unwrap().name, "Remove letter");
        assert_eq!(descriptor_by_code("C8").unwrap().name, "Rewrite uppercase");
        assert_eq!(descriptor_by_code("C7").unwrap().name, "Replace letters");
        // all four tokenization combinations are populated
        for class in [
            IoClass::WordsToWords,
            IoClass::CharsToWords,
            IoClass::WordsToChars,
            IoClass::Mixed,
        ] {
            assert!(cat.iter().any(|d| d.io_class == class), "{class:?}");
        }
    }

    #[test]
    fn word_level_oracles() {
        let d = descriptor_by_code("W2").unwrap();
        assert_eq!(oracle(d, &[], &s(&["ab", "cd", "ef"])).unwrap(), "ef cd ab");
        let d = descriptor_by_code("W1").unwrap();
        assert_eq!(oracle(d, &[], &s(&["xy", "zq"])).unwrap(), "xy zq");
        let d = descriptor_by_code("W3").unwrap();
        assert_eq!(oracle(d, &[], &s(&["ab", "cd"])).unwrap(), "ab ab cd cd");
        let d = descriptor_by_code("W4").unwrap();
        assert_eq!(
            oracle(d, &[ParamValue::Index(2)], &s(&["ab", "cd", "ef"])).unwrap(),
            "cd"
        );
        let d = descriptor_by_code("W5").unwrap();
        assert_eq!(
            oracle(d, &[ParamValue::Index(1)], &s(&["ab", "cd", "ef"])).unwrap(),
            "cd ef"
        );
        let d = descriptor_by_code("W6").unwrap();
        assert_eq!(
            oracle(
                d,
                &[ParamValue::Index(1), ParamValue::Index(3)],
                &s(&["ab", "cd", "ef"])
            )
            .unwrap(),
            "ef cd ab"
        );
        let d = descriptor_by_code("W7").unwrap();
        assert_eq!(oracle(d, &[], &s(&["ab", "cd", "ef"])).unwrap(), "cd ef ab");
    }

    #[test]
    fn character_level_oracles() {
        assert_eq!(
            oracle(descriptor_by_code("C1").unwrap(), &[], &s(&["ab", "cd"])).unwrap(),
            "a b c d"
        );
        assert_eq!(
            oracle(descriptor_by_code("C2").unwrap(), &[], &s(&["ab", "cd"])).unwrap(),
            "a c"
        );
        assert_eq!(
            oracle(descriptor_by_code("C3").unwrap(), &[], &s(&["ab", "cd"])).unwrap(),
            "b d"
        );
        assert_eq!(
            oracle(descriptor_by_code("C4").unwrap(), &[], &s(&["ab", "cd"])).unwrap(),
            "b a d c"
        );
        assert_eq!(
            oracle(descriptor_by_code("C5").unwrap(), &[], &s(&["ab", "cd"])).unwrap(),
            "ab cd"
        );
        // independent character-by-character filter: drop 'a', collapse empties
        assert_eq!(
            oracle(
                descriptor_by_code("C6").unwrap(),
                &[ParamValue::Letter('a')],
                &s(&["aXba", "cdad"])
            )
            .unwrap(),
            "Xb cdd"
        );
        assert_eq!(
            oracle(
                descriptor_by_code("C7").unwrap(),
                &[ParamValue::Letter('a'), ParamValue::Letter('z')],
                &s(&["abca", "dd"])
            )
            .unwrap(),
            "zbcz dd"
        );
        assert_eq!(
            oracle(descriptor_by_code("C8").unwrap(), &[], &s(&["abCd"])).unwrap(),
            "ABCD"
        );
        assert_eq!(
            oracle(descriptor_by_code("C9").unwrap(), &[], &s(&["AbCD"])).unwrap(),
            "abcd"
        );
        assert_eq!(
            oracle(
                descriptor_by_code("C10").unwrap(),
                &[ParamValue::Letter('Z'), ParamValue::Index(2)],
                &s(&["abcd", "efgh"])
            )
            .unwrap(),
            "aZbcd eZfgh"
        );
        assert_eq!(
            oracle(descriptor_by_code("C11").unwrap(), &[], &s(&["abcd", "ef"])).unwrap(),
            "dbca fe"
        );
        assert_eq!(
            oracle(
                descriptor_by_code("C12").unwrap(),
                &[ParamValue::Letter('a')],
                &s(&["abcd", "efgh", "qa"])
            )
            .unwrap(),
            "abcd qa"
        );
        // absent letter: output equals input for C6, empty for C12
        assert_eq!(
            oracle(
                descriptor_by_code("C6").unwrap(),
                &[ParamValue::Letter('z')],
                &s(&["ab", "cd"])
            )
            .unwrap(),
            "ab cd"
        );
        assert_eq!(
            oracle(
                descriptor_by_code("C12").unwrap(),
                &[ParamValue::Letter('z')],
                &s(&["ab", "cd"])
            )
            .unwrap(),
            ""
        );
    }

    #[test]
    fn out_of_range_index_is_an_error() {
        let d = descriptor_by_code("W4").unwrap();
        assert!(matches!(
            oracle(d, &[ParamValue::Index(9)], &s(&["ab", "cd"])).unwrap_err(),
            TaskError::InvalidParam(_)
        ));
    }

    #[test]
    fn sample_sentence_lengths() {
        let v = build_vocab(1, 256, 4).unwrap();
        let mut rng = Rng::from_seed(5);
        let words = sample_sentence(&v, 16, &mut rng).unwrap();
        assert_eq!(words.len(), 16);
        assert!(words.iter().all(|w| w.len() == 4));
        assert!(sample_sentence(&v, 0, &mut rng).unwrap().is_empty());
    }

    #[test]
    fn sentence_sampling_is_uniform_by_chi_squared() {
        use statrs::distribution::{ChiSquared, ContinuousCDF};
        let v = build_vocab(1, 256, 4).unwrap();
        let mut rng = Rng::from_seed(0x5A);
        let mut counts = vec![0u64; 256];
        let draws = 100_000usize;
        for _ in 0..draws / 16 {
            for w in sample_sentence(&v, 16, &mut rng).unwrap() {
                let id = v.id_of(&w).unwrap() as usize - crate::vocab::N_ATOMIC;
                counts[id] += 1;
            }
        }
        let expected = draws as f64 / 256.0;
        let stat: f64 = counts
            .iter()
            .map(|&c| (c as f64 - expected) * (c as f64 - expected) / expected)
            .sum();
        let p = 1.0 - ChiSquared::new(255.0).unwrap().cdf(stat);
        assert!(p > 0.001, "chi2 stat {stat}, p {p}");
    }

    #[test]
    fn copy_task_layout() {
        let v = build_vocab(1, 4, 2).unwrap();
        let mut rng = Rng::from_seed(3);
        let inst = make_example(&v, &mut rng, Some(&[0])).unwrap();
        assert_eq!(inst.task_id, 0);
        // prompt: task token, sep, 16 words + 15 spaces, sep
        assert_eq!(inst.prompt_ids[0], v.task_token_id(0));
        assert_eq!(inst.prompt_ids[1], v.sep_id());
        assert_eq!(*inst.prompt_ids.last().unwrap(), v.sep_id());
        assert_eq!(inst.prompt_ids.len(), 3 + 31);
        // identity task: target is the input plus EOS
        assert_eq!(inst.target_ids.len(), 32);
        assert_eq!(*inst.target_ids.last().unwrap(), v.eos_id());
        let input = v.decode(&inst.prompt_ids[2..inst.prompt_ids.len() - 1]).unwrap();
        let output = v
            .decode(&inst.target_ids[..inst.target_ids.len() - 1])
            .unwrap();
        assert_eq!(input, output);
        assert_eq!(input, inst.sentence.join(" "));
    }

    #[test]
    fn uppercase_targets_fall_back_to_characters() {
        let v = build_vocab(1, 8, 4).unwrap();
        let mut rng = Rng::from_seed(1);
        // C8 = task_id 14
        let inst = make_example(&v, &mut rng, Some(&[14])).unwrap();
        let n_target = inst.target_ids.len();
        // 16 words of 4 chars -> 64 letter ids + 15 spaces + EOS, unless some
        // uppercase word happens to be in vocab (possible but not for seed 1
        // with 8 lowercase-ish words; verify via decoded length instead)
        let decoded = v.decode(&inst.target_ids[..n_target - 1]).unwrap();
        assert_eq!(decoded, inst.sentence.join(" ").to_ascii_uppercase());
        for &id in &inst.target_ids[..n_target - 1] {
            let e = v.entry(id).unwrap();
            assert!(
                e.surface.len() == 1 || e.surface.chars().all(|c| c.is_ascii_uppercase()),
                "unexpected target token {:?}",
                e.surface
            );
        }
    }

    #[test]
    fn dirty_input_is_shattered() {
        let v = build_vocab(1, 8, 4).unwrap();
        let mut rng = Rng::from_seed(2);
        // C5 = task_id 11
        let inst = make_example(&v, &mut rng, Some(&[11])).unwrap();
        let body = &inst.prompt_ids[2..inst.prompt_ids.len() - 1];
        // every input token is a single character
        for &id in body {
            assert_eq!(v.entry(id).unwrap().surface.len(), 1);
        }
        // while the target is whole word tokens
        let target_body = &inst.target_ids[..inst.target_ids.len() - 1];
        let word_range = v.word_id_range();
        for &id in target_body {
            assert!(word_range.contains(&id) || id == v.space_id());
        }
    }

    #[test]
    fn generated_instances_replay_through_oracle() {
        let v = build_vocab(42, 64, 4).unwrap();
        for i in 0..500 {
            let mut rng = Rng::from_path(77, &[i]);
            let inst = make_example(&v, &mut rng, None).unwrap();
            let d = descriptor(inst.task_id);
            let expect = oracle(d, &inst.params, &inst.sentence).unwrap();
            let got = v
                .decode(&inst.target_ids[..inst.target_ids.len() - 1])
                .unwrap();
            assert_eq!(got, expect, "task {}", d.code);
        }
    }

    #[test]
    fn generation_is_deterministic_per_stream() {
        let v = build_vocab(42, 64, 4).unwrap();
        let a = make_example(&v, &mut Rng::from_path(9, &[4]), None).unwrap();
        let b = make_example(&v, &mut Rng::from_path(9, &[4]), None).unwrap();
        assert_eq!(a.prompt_ids, b.prompt_ids);
        assert_eq!(a.target_ids, b.target_ids);
    }

    #[test]
    fn clean_input_targets_are_atomic() {
        let v = build_vocab(4, 32, 4).unwrap();
        for code in ["C1", "C2", "C3", "C4"] {
            let d = descriptor_by_code(code).unwrap();
            let mut rng = Rng::from_path(11, &[d.task_id as u64]);
            let inst = make_example(&v, &mut rng, Some(&[d.task_id])).unwrap();
            for &id in &inst.target_ids[..inst.target_ids.len() - 1] {
                assert!(
                    (id as usize) < crate::vocab::N_ATOMIC,
                    "{code}: target token {id} is not atomic"
                );
            }
        }
    }
}
