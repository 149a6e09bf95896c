//! Tokenization, dictionary entity matching and lexicon sentiment.
//!
//! Tokens are maximal runs of alphanumeric characters (Unicode
//! `is_alphanumeric`), lowercased with `str::to_lowercase`. Everything else
//! separates tokens.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use crate::encoding::{Canonical, DecodeError, Decoder, Encoder};

use super::EvalError;

pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Lowercase entity names; multi-word entries match as token sequences.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EntityDictionary {
    entries: BTreeSet<String>,
}

impl EntityDictionary {
    /// Normalizes each entry to its tokens joined by single spaces.
    pub fn new<I, S>(entries: I) -> Result<Self, EvalError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut out = BTreeSet::new();
        for e in entries {
            let e = e.as_ref();
            if e.contains('\n') {
                return Err(EvalError::BadParams(format!(
                    "entity `{}` contains a newline",
                    e.escape_debug()
                )));
            }
            let tokens = tokenize(e);
            if tokens.is_empty() {
                return Err(EvalError::BadParams(format!("entity `{e}` has no tokens")));
            }
            out.insert(tokens.join(" "));
        }
        if out.is_empty() {
            return Err(EvalError::BadParams("entity dictionary is empty".into()));
        }
        Ok(Self { entries: out })
    }

    pub fn entries(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl Canonical for EntityDictionary {
    fn encode_into(&self, enc: &mut Encoder) {
        enc.value(&self.entries);
    }
    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        let entries: BTreeSet<String> = dec.value()?;
        let dict = Self::new(&entries).map_err(|e| DecodeError::Invalid(e.to_string()))?;
        if dict.entries != entries {
            return Err(DecodeError::Invalid(
                "entity dictionary is not normalized".into(),
            ));
        }
        Ok(dict)
    }
}

/// Counts entity mentions across texts. Every token position where an
/// entry's token sequence starts counts once; entities never seen are
/// omitted.
pub fn ner_count<S: AsRef<str>>(texts: &[S], dict: &EntityDictionary) -> BTreeMap<String, u64> {
    let phrases: Vec<(&str, Vec<&str>)> = dict
        .entries
        .iter()
        .map(|e| (e.as_str(), e.split(' ').collect()))
        .collect();
    let mut by_first: HashMap<&str, Vec<usize>> = HashMap::new();
    for (i, (_, toks)) in phrases.iter().enumerate() {
        by_first.entry(toks[0]).or_default().push(i);
    }

    let mut counts: BTreeMap<String, u64> = BTreeMap::new();
    for text in texts {
        let tokens = tokenize(text.as_ref());
        for start in 0..tokens.len() {
            let Some(candidates) = by_first.get(tokens[start].as_str()) else {
                continue;
            };
            for &i in candidates {
                let (name, toks) = &phrases[i];
                let end = start + toks.len();
                if end <= tokens.len() && tokens[start..end].iter().zip(toks).all(|(a, b)| a == b) {
                    *counts.entry((*name).to_owned()).or_insert(0) += 1;
                }
            }
        }
    }
    counts
}

/// Token → score in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SentimentLexicon {
    scores: BTreeMap<String, f64>,
}

impl SentimentLexicon {
    pub fn new<I, S>(entries: I) -> Result<Self, EvalError>
    where
        I: IntoIterator<Item = (S, f64)>,
        S: AsRef<str>,
    {
        let mut scores = BTreeMap::new();
        for (tok, score) in entries {
            let tok = tok.as_ref();
            if !(-1.0..=1.0).contains(&score) {
                return Err(EvalError::BadParams(format!(
                    "score {score} for `{tok}` outside [-1, 1]"
                )));
            }
            let norm = tokenize(tok);
            if norm.len() != 1 {
                return Err(EvalError::BadParams(format!(
                    "lexicon key `{tok}` is not a single token"
                )));
            }
            scores.insert(norm.into_iter().next().expect("one token"), score);
        }
        Ok(Self { scores })
    }

    pub fn score(&self, token: &str) -> Option<f64> {
        self.scores.get(token).copied()
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

impl Canonical for SentimentLexicon {
    fn encode_into(&self, enc: &mut Encoder) {
        enc.value(&self.scores);
    }
    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        let scores: BTreeMap<String, f64> = dec.value()?;
        let lex = Self::new(scores.iter().map(|(k, v)| (k.as_str(), *v)))
            .map_err(|e| DecodeError::Invalid(e.to_string()))?;
        if lex.scores != scores {
            return Err(DecodeError::Invalid(
                "lexicon keys are not normalized".into(),
            ));
        }
        Ok(lex)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SentimentSummary {
    /// Mean score over matched tokens; 0.0 when nothing matched.
    pub mean: f64,
    pub matched_tokens: u64,
}

impl SentimentSummary {
    pub fn has_matches(&self) -> bool {
        self.matched_tokens > 0
    }
}

pub fn sentiment_avg<S: AsRef<str>>(texts: &[S], lex: &SentimentLexicon) -> SentimentSummary {
    let mut sum = 0.0;
    let mut matched = 0u64;
    for text in texts {
        for tok in tokenize(text.as_ref()) {
            if let Some(s) = lex.score(&tok) {
                sum += s;
                matched += 1;
            }
        }
    }
    SentimentSummary {
        mean: if matched == 0 {
            0.0
        } else {
            sum / matched as f64
        },
        matched_tokens: matched,
    }
}
