//! Evidence sentence retrieval.
//!
//! Every sentence of a candidate heading's manual is scored as
//! `s = s_text + lambda * s_expert`:
//!
//! * `s_text` sums, over description tokens, the token's IDF weight times its
//!   best cosine match among the sentence's tokens (token embeddings).
//! * `s_expert` sums the description-level cosine similarity of the `k_case`
//!   nearest knowledge-base cases that quoted the sentence as evidence.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::corpus::{HsCode, KnowledgeBase, KnowledgeBaseEntry, Manual, ManualSentence, SentenceId};
use crate::encoder::ModelArtifact;
use crate::error::{Error, Result};
use crate::text::{tokenize, Token};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrievalConfig {
    pub lambda: f64,
    pub k_case: usize,
    pub n_sentences: usize,
    /// Treat negative case similarities as zero in the expert score.
    pub clamp_negative_kb_sim: bool,
    /// Divide the text score by the summed IDF of the description tokens.
    pub normalize_text_score: bool,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            lambda: 0.3,
            k_case: 10,
            n_sentences: 7,
            clamp_negative_kb_sim: false,
            normalize_text_score: false,
        }
    }
}

impl RetrievalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config("lambda must be a finite non-negative number".into()));
        }
        if self.k_case == 0 {
            return Err(Error::Config("k_case must be at least 1".into()));
        }
        if self.n_sentences == 0 {
            return Err(Error::Config("n_sentences must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredSentence {
    pub sid: SentenceId,
    pub s_text: f64,
    pub s_expert: f64,
    pub s_total: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Neighbor<'a> {
    pub entry: &'a KnowledgeBaseEntry,
    pub similarity: f64,
}

/// The `k_case` knowledge-base cases most similar to a description, by
/// descending similarity (ties by case id).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct KbNeighborhood<'a> {
    pub neighbors: Vec<Neighbor<'a>>,
}

pub fn cos_sim(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch {
            left: u.len(),
            right: v.len(),
        });
    }
    Ok(cosine(u, v))
}

/// Cosine similarity of equal-length vectors, 0 if either is zero.
fn cosine(u: &[f64], v: &[f64]) -> f64 {
    let mut dot = 0.0;
    let mut uu = 0.0;
    let mut vv = 0.0;
    for (a, b) in u.iter().zip(v) {
        dot += a * b;
        uu += a * a;
        vv += b * b;
    }
    if uu == 0.0 || vv == 0.0 {
        return 0.0;
    }
    (dot / (uu * vv).sqrt()).clamp(-1.0, 1.0)
}

fn align_ids(model: &ModelArtifact, token: Option<u32>, sentence: &[Option<u32>]) -> f64 {
    let Some(token) = token else {
        return 0.0;
    };
    let emb = model.embedding(token);
    sentence
        .iter()
        .map(|m| m.map_or(0.0, |m| cosine(emb, model.embedding(m))))
        .fold(None, |best: Option<f64>, s| Some(best.map_or(s, |b| b.max(s))))
        .unwrap_or(0.0)
}

/// Best cosine match of `token` among the sentence's tokens. Out-of-vocabulary
/// tokens on either side count as similarity 0.
pub fn align(model: &ModelArtifact, token: &Token, sentence: &ManualSentence) -> f64 {
    let ids: Vec<_> = model.vocab().ids(&tokenize(&sentence.text)).collect();
    align_ids(model, model.vocab().id(token.as_str()), &ids)
}

fn text_similarity_ids(
    model: &ModelArtifact,
    description: &[Option<u32>],
    sentence: &[Option<u32>],
    normalize: bool,
) -> f64 {
    let idf = model.idf();
    let mut score = 0.0;
    let mut weight_sum = 0.0;
    for &d in description {
        let w = idf.weight(d);
        weight_sum += w;
        score += w * align_ids(model, d, sentence);
    }
    if normalize && weight_sum > 0.0 {
        score / weight_sum
    } else {
        score
    }
}

/// IDF-weighted alignment of the description tokens against one sentence.
pub fn text_similarity(
    model: &ModelArtifact,
    description: &[Token],
    sentence: &ManualSentence,
    normalize: bool,
) -> Result<f64> {
    if description.is_empty() {
        return Err(Error::EmptyDescription);
    }
    let d: Vec<_> = model.vocab().ids(description).collect();
    let m: Vec<_> = model.vocab().ids(&tokenize(&sentence.text)).collect();
    Ok(text_similarity_ids(model, &d, &m, normalize))
}

/// Knowledge-base case embeddings, computed once per model.
#[derive(Debug, Clone)]
pub struct KnowledgeIndex<'a> {
    kb: &'a KnowledgeBase,
    embeddings: Vec<Vec<f64>>,
}

impl<'a> KnowledgeIndex<'a> {
    pub fn build(model: &ModelArtifact, kb: &'a KnowledgeBase) -> Self {
        let embeddings = kb
            .entries()
            .iter()
            .map(|e| model.pool(&model.token_ids(&tokenize(&e.description))))
            .collect();
        Self { kb, embeddings }
    }

    pub fn kb(&self) -> &'a KnowledgeBase {
        self.kb
    }

    /// Top `k_case` cases by cosine similarity to `query`; empty when the
    /// knowledge base is empty.
    pub fn neighborhood(&self, query: &[f64], k_case: usize) -> KbNeighborhood<'a> {
        let mut neighbors: Vec<Neighbor<'a>> = self
            .kb
            .entries()
            .iter()
            .zip(&self.embeddings)
            .map(|(entry, emb)| Neighbor {
                entry,
                similarity: cosine(query, emb),
            })
            .collect();
        neighbors.sort_by(|a, b| {
            b.similarity
                .total_cmp(&a.similarity)
                .then_with(|| a.entry.case_id.cmp(&b.entry.case_id))
        });
        neighbors.truncate(k_case);
        KbNeighborhood { neighbors }
    }
}

pub fn kb_topk_cases<'a>(
    model: &ModelArtifact,
    description: &str,
    kb: &'a KnowledgeBase,
    k_case: usize,
) -> Result<KbNeighborhood<'a>> {
    if kb.is_empty() {
        return Err(Error::EmptyKnowledgeBase);
    }
    let tokens = tokenize(description);
    if tokens.is_empty() {
        return Err(Error::EmptyDescription);
    }
    let query = model.pool(&model.token_ids(&tokens));
    Ok(KnowledgeIndex::build(model, kb).neighborhood(&query, k_case))
}

/// Similarity-weighted count of neighbors that quoted `sid`.
pub fn expert_score(sid: &SentenceId, neighborhood: &KbNeighborhood<'_>, clamp_negative: bool) -> f64 {
    neighborhood
        .neighbors
        .iter()
        .filter(|n| n.entry.evidence.contains(sid))
        .map(|n| {
            if clamp_negative {
                n.similarity.max(0.0)
            } else {
                n.similarity
            }
        })
        .fold(0.0, |acc, s| acc + s)
}

fn combine(sid: SentenceId, s_text: f64, s_expert: f64, lambda: f64) -> ScoredSentence {
    ScoredSentence {
        sid,
        s_text,
        s_expert,
        s_total: s_text + lambda * s_expert,
    }
}

pub fn relevance_score(
    model: &ModelArtifact,
    description: &[Token],
    sentence: &ManualSentence,
    neighborhood: &KbNeighborhood<'_>,
    config: &RetrievalConfig,
) -> Result<ScoredSentence> {
    let s_text = text_similarity(model, description, sentence, config.normalize_text_score)?;
    let s_expert = expert_score(&sentence.sid, neighborhood, config.clamp_negative_kb_sim);
    Ok(combine(sentence.sid.clone(), s_text, s_expert, config.lambda))
}

/// Descending total score, ties by ascending sid.
pub fn rank_order(a: &ScoredSentence, b: &ScoredSentence) -> Ordering {
    b.s_total.total_cmp(&a.s_total).then_with(|| a.sid.cmp(&b.sid))
}

/// A description prepared once for scoring against any number of headings.
#[derive(Debug, Clone)]
pub struct Query<'a> {
    pub tokens: Vec<Token>,
    ids: Vec<Option<u32>>,
    pub embedding: Vec<f64>,
    pub neighborhood: KbNeighborhood<'a>,
}

/// Scores manual sentences for descriptions against one model, manual and
/// knowledge base.
#[derive(Debug, Clone)]
pub struct Retriever<'a> {
    model: &'a ModelArtifact,
    manual: &'a Manual,
    index: KnowledgeIndex<'a>,
}

impl<'a> Retriever<'a> {
    pub fn new(model: &'a ModelArtifact, manual: &'a Manual, kb: &'a KnowledgeBase) -> Self {
        Self {
            model,
            manual,
            index: KnowledgeIndex::build(model, kb),
        }
    }

    pub fn model(&self) -> &'a ModelArtifact {
        self.model
    }

    pub fn manual(&self) -> &'a Manual {
        self.manual
    }

    pub fn query(&self, description: &str, config: &RetrievalConfig) -> Result<Query<'a>> {
        let tokens = tokenize(description);
        if tokens.is_empty() {
            return Err(Error::EmptyDescription);
        }
        let ids: Vec<_> = self.model.vocab().ids(&tokens).collect();
        let in_vocab: Vec<u32> = ids.iter().flatten().copied().collect();
        let embedding = self.model.pool(&in_vocab);
        let neighborhood = self.index.neighborhood(&embedding, config.k_case);
        Ok(Query {
            tokens,
            ids,
            embedding,
            neighborhood,
        })
    }

    /// Every sentence of `heading`, scored and ranked.
    pub fn score_heading(
        &self,
        query: &Query<'_>,
        heading: &HsCode,
        config: &RetrievalConfig,
    ) -> Result<Vec<ScoredSentence>> {
        let manual = self
            .manual
            .get(heading)
            .ok_or_else(|| Error::UnknownHeading(heading.to_string()))?;
        let vocab = self.model.vocab();
        let mut scored: Vec<ScoredSentence> = manual
            .sentences()
            .iter()
            .map(|s| {
                let m: Vec<_> = vocab.ids(&tokenize(&s.text)).collect();
                let s_text = text_similarity_ids(self.model, &query.ids, &m, config.normalize_text_score);
                let s_expert = expert_score(&s.sid, &query.neighborhood, config.clamp_negative_kb_sim);
                combine(s.sid.clone(), s_text, s_expert, config.lambda)
            })
            .collect();
        scored.sort_by(rank_order);
        Ok(scored)
    }

    pub fn retrieve(
        &self,
        query: &Query<'_>,
        heading: &HsCode,
        config: &RetrievalConfig,
    ) -> Result<Vec<ScoredSentence>> {
        let mut scored = self.score_heading(query, heading, config)?;
        scored.truncate(config.n_sentences);
        Ok(scored)
    }
}

/// Top `n_sentences` evidence sentences of `heading` for `description`.
pub fn retrieve_evidence(
    model: &ModelArtifact,
    manual: &Manual,
    kb: &KnowledgeBase,
    description: &str,
    heading: &HsCode,
    config: &RetrievalConfig,
) -> Result<Vec<ScoredSentence>> {
    config.validate()?;
    if !manual.contains(heading) {
        return Err(Error::UnknownHeading(heading.to_string()));
    }
    let retriever = Retriever::new(model, manual, kb);
    let query = retriever.query(description, config)?;
    retriever.retrieve(&query, heading, config)
}
