//! Tokenization, vocabulary construction and inverse document frequency.
//!
//! The tokenizer is deliberately simple: the input is case-folded and then
//! split into maximal runs of alphanumeric characters. Everything else
//! (whitespace, punctuation, symbols) separates tokens. There is no stemming
//! and no subword segmentation, so every token maps to one embedding row.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;

use crate::corpus::CaseCollection;
use crate::error::{Error, Result};

/// A normalized word: case-folded, non-empty, alphanumeric only.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Token(String);

impl Token {
    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn into_string(self) -> String {
        self.0
    }
}

impl AsRef<str> for Token {
    fn as_ref(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

pub fn tokenize(text: &str) -> Vec<Token> {
    let folded = text.to_lowercase();
    folded
        .split(|c: char| !c.is_alphanumeric())
        .filter(|s| !s.is_empty())
        .map(|s| Token(s.to_owned()))
        .collect()
}

/// Joins tokens with single spaces; `tokenize(join_tokens(t)) == t`.
pub fn join_tokens(tokens: &[Token]) -> String {
    let mut out = String::new();
    for (i, t) in tokens.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        out.push_str(t.as_str());
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
    min_count: usize,
}

impl Vocabulary {
    /// Builds a vocabulary from raw documents. Ids are assigned by descending
    /// frequency, then lexicographically.
    pub fn build<'a, I>(documents: I, min_count: usize) -> Result<Self>
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        let mut n_docs = 0usize;
        for doc in documents {
            n_docs += 1;
            for token in tokenize(doc) {
                *counts.entry(token.into_string()).or_default() += 1;
            }
        }
        if n_docs == 0 {
            return Err(Error::EmptyCorpus);
        }
        let threshold = min_count.max(1);
        let mut kept: Vec<(String, usize)> = counts.into_iter().filter(|(_, c)| *c >= threshold).collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let tokens = kept.into_iter().map(|(t, _)| t).collect();
        Self::from_tokens(tokens, min_count)
    }

    /// Rebuilds a vocabulary from an ordered token list (ids = positions).
    pub fn from_tokens(tokens: Vec<String>, min_count: usize) -> Result<Self> {
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() {
                return Err(Error::Config("empty token in vocabulary".into()));
            }
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(Error::Config(format!("duplicate vocabulary token {t:?}")));
            }
        }
        Ok(Self {
            tokens,
            index,
            min_count,
        })
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn min_count(&self) -> usize {
        self.min_count
    }

    pub fn ids<'a>(&'a self, tokens: &'a [Token]) -> impl Iterator<Item = Option<u32>> + 'a {
        tokens.iter().map(|t| self.id(t.as_str()))
    }
}

pub fn build_vocabulary(corpus: &CaseCollection, min_count: usize) -> Result<Vocabulary> {
    Vocabulary::build(corpus.iter().map(|c| c.description.as_str()), min_count)
}

/// Smoothed inverse document frequency: `ln((1 + n) / (1 + df)) + 1`.
pub fn smoothed_idf(n_docs: usize, df: usize) -> f64 {
    ((1.0 + n_docs as f64) / (1.0 + df as f64)).ln() + 1.0
}

#[derive(Debug, Clone, PartialEq)]
pub struct IdfTable {
    /// Indexed by vocabulary id.
    weights: Vec<f64>,
    n_docs: usize,
    oov_weight: f64,
}

impl IdfTable {
    pub fn from_documents<'a, I>(documents: I, vocab: &Vocabulary) -> Result<Self>
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut df = vec![0usize; vocab.len()];
        let mut n_docs = 0usize;
        for doc in documents {
            n_docs += 1;
            let seen: HashSet<u32> = tokenize(doc).iter().filter_map(|t| vocab.id(t.as_str())).collect();
            for id in seen {
                df[id as usize] += 1;
            }
        }
        if n_docs == 0 {
            return Err(Error::EmptyCorpus);
        }
        let weights: Vec<f64> = df.iter().map(|&d| smoothed_idf(n_docs, d)).collect();
        let oov_weight = weights
            .iter()
            .copied()
            .fold(None, |acc: Option<f64>, w| Some(acc.map_or(w, |a| a.max(w))))
            .unwrap_or_else(|| smoothed_idf(n_docs, 0));
        Ok(Self {
            weights,
            n_docs,
            oov_weight,
        })
    }

    pub fn from_parts(weights: Vec<f64>, n_docs: usize, oov_weight: f64) -> Result<Self> {
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) || oov_weight.is_nan() || oov_weight < 0.0 {
            return Err(Error::Config("idf weights must be finite and non-negative".into()));
        }
        Ok(Self {
            weights,
            n_docs,
            oov_weight,
        })
    }

    /// Weight for a vocabulary id; `None` (out of vocabulary) gets `oov_weight`.
    pub fn weight(&self, id: Option<u32>) -> f64 {
        id.and_then(|i| self.weights.get(i as usize).copied())
            .unwrap_or(self.oov_weight)
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn n_docs(&self) -> usize {
        self.n_docs
    }

    pub fn oov_weight(&self) -> f64 {
        self.oov_weight
    }
}

pub fn compute_idf(corpus: &CaseCollection, vocab: &Vocabulary) -> Result<IdfTable> {
    IdfTable::from_documents(corpus.iter().map(|c| c.description.as_str()), vocab)
}
