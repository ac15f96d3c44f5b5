//! Evaluation harness: top-k accuracy at heading and subheading level,
//! accuracy by case origin, evidence recall/precision against expert-quoted
//! sentences, and the slope of per-heading accuracy against log frequency.

mod synthetic;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

pub use synthetic::{generate_synthetic_corpus, SyntheticCorpus, SyntheticSpec};

use crate::corpus::{CaseCollection, DecisionCase, HsCode, HsLevel, KnowledgeBase, Manual, Origin, SentenceId};
use crate::encoder::{rank_all, ModelArtifact};
use crate::error::{Error, Result};
use crate::retrieval::{RetrievalConfig, Retriever};

/// The k values reported in the accuracy grid.
pub const REPORTED_KS: [usize; 3] = [1, 3, 5];

/// Fraction of cases whose gold label is among the first `k` ranked codes.
/// At heading level the gold subheading is reduced to its heading.
pub fn topk_accuracy(predictions: &[Vec<HsCode>], gold: &[HsCode], k: usize, level: HsLevel) -> Result<f64> {
    if predictions.len() != gold.len() {
        return Err(Error::LengthMismatch {
            predictions: predictions.len(),
            gold: gold.len(),
        });
    }
    if gold.is_empty() {
        return Ok(0.0);
    }
    let hits = predictions
        .iter()
        .zip(gold)
        .filter(|(ranked, g)| {
            let g = g.truncate(level);
            ranked.iter().take(k).any(|c| c.truncate(level) == g)
        })
        .count();
    Ok(hits as f64 / gold.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecallPrecision {
    pub recall: f64,
    pub precision: f64,
    /// False when nothing was retrieved; precision is then reported as 0.
    pub precision_defined: bool,
}

pub fn retrieval_recall_precision(retrieved: &[SentenceId], expert: &BTreeSet<SentenceId>) -> Result<RecallPrecision> {
    if expert.is_empty() {
        return Err(Error::EmptyExpertSet);
    }
    let retrieved: BTreeSet<&SentenceId> = retrieved.iter().collect();
    let shared = retrieved.iter().filter(|s| expert.contains(**s)).count() as f64;
    Ok(RecallPrecision {
        recall: shared / expert.len() as f64,
        precision: if retrieved.is_empty() {
            0.0
        } else {
            shared / retrieved.len() as f64
        },
        precision_defined: !retrieved.is_empty(),
    })
}

/// Ordinary least-squares slope of accuracy against `log10(frequency)`.
/// Each point is `(frequency, accuracy)`.
pub fn frequency_accuracy_slope(points: &[(f64, f64)]) -> Result<f64> {
    if points.len() < 2 {
        return Err(Error::DegenerateInput("need at least two headings"));
    }
    if points.iter().any(|(f, _)| f.is_nan() || *f <= 0.0) {
        return Err(Error::DegenerateInput("frequencies must be positive"));
    }
    let xs: Vec<f64> = points.iter().map(|(f, _)| f.log10()).collect();
    let n = points.len() as f64;
    let mean_x = xs.iter().sum::<f64>() / n;
    let mean_y = points.iter().map(|(_, a)| a).sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    for (x, (_, y)) in xs.iter().zip(points) {
        sxy += (x - mean_x) * (y - mean_y);
        sxx += (x - mean_x) * (x - mean_x);
    }
    if sxx == 0.0 {
        return Err(Error::DegenerateInput("all frequencies are equal"));
    }
    Ok(sxy / sxx)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Group {
    All,
    /// General and international cases.
    General,
    /// Council and committee cases.
    Contentious,
}

impl Group {
    pub fn of(origin: Origin) -> Group {
        if origin.is_contentious() {
            Group::Contentious
        } else {
            Group::General
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Group::All => "all",
            Group::General => "general",
            Group::Contentious => "contentious",
        }
    }
}

/// Ranked heading and subheading codes for one test case.
#[derive(Debug, Clone, PartialEq)]
pub struct CaseRanking {
    pub case_id: String,
    pub origin: Origin,
    pub gold: HsCode,
    pub headings: Vec<HsCode>,
    pub subheadings: Vec<HsCode>,
}

fn rank_case(model: &ModelArtifact, case: &DecisionCase, depth: usize) -> Result<CaseRanking> {
    let codes = |level| -> Result<Vec<HsCode>> {
        match rank_all(model, &case.description, level) {
            Ok(p) => Ok(p.ranked.into_iter().take(depth).map(|r| r.code).collect()),
            // a description with no tokens at all can only miss
            Err(Error::EmptyDescription) => Ok(Vec::new()),
            Err(e) => Err(e),
        }
    };
    Ok(CaseRanking {
        case_id: case.id.clone(),
        origin: case.origin,
        gold: case.label.clone(),
        headings: codes(HsLevel::Heading)?,
        subheadings: codes(HsLevel::Subheading)?,
    })
}

/// Rankings for every case, keeping the first `depth` codes per level.
pub fn rank_cases(model: &ModelArtifact, cases: &CaseCollection, depth: usize) -> Result<Vec<CaseRanking>> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        cases
            .as_slice()
            .par_iter()
            .map(|c| rank_case(model, c, depth))
            .collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        cases.iter().map(|c| rank_case(model, c, depth)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopkCell {
    pub group: Group,
    pub level: HsLevel,
    pub k: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupAccuracy {
    pub cells: Vec<TopkCell>,
    pub counts: BTreeMap<Group, usize>,
    /// Groups with no cases; they have no cells.
    pub absent: Vec<Group>,
}

impl GroupAccuracy {
    pub fn get(&self, group: Group, level: HsLevel, k: usize) -> Option<f64> {
        self.cells
            .iter()
            .find(|c| c.group == group && c.level == level && c.k == k)
            .map(|c| c.accuracy)
    }
}

/// Top-k accuracy at both levels for all cases and separately for the
/// general and contentious groups.
pub fn accuracy_by_group(rankings: &[CaseRanking], ks: &[usize]) -> Result<GroupAccuracy> {
    let mut cells = Vec::new();
    let mut counts = BTreeMap::new();
    let mut absent = Vec::new();
    for group in [Group::All, Group::General, Group::Contentious] {
        let members: Vec<&CaseRanking> = rankings
            .iter()
            .filter(|r| group == Group::All || Group::of(r.origin) == group)
            .collect();
        counts.insert(group, members.len());
        if members.is_empty() {
            absent.push(group);
            continue;
        }
        let gold: Vec<HsCode> = members.iter().map(|r| r.gold.clone()).collect();
        for level in [HsLevel::Heading, HsLevel::Subheading] {
            let preds: Vec<Vec<HsCode>> = members
                .iter()
                .map(|r| match level {
                    HsLevel::Subheading => r.subheadings.clone(),
                    _ => r.headings.clone(),
                })
                .collect();
            for &k in ks {
                cells.push(TopkCell {
                    group,
                    level,
                    k,
                    accuracy: topk_accuracy(&preds, &gold, k, level)?,
                });
            }
        }
    }
    Ok(GroupAccuracy { cells, counts, absent })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadingStat {
    pub heading: HsCode,
    pub train_frequency: usize,
    pub test_cases: usize,
    /// Heading-level top-1 accuracy on this heading's test cases.
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseRetrieval {
    pub case_id: String,
    #[serde(flatten)]
    pub scores: RecallPrecision,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub topk: GroupAccuracy,
    pub retrieval: Vec<CaseRetrieval>,
    pub mean_recall: Option<f64>,
    pub mean_precision: Option<f64>,
    pub per_heading: Vec<HeadingStat>,
    pub freq_slope: Option<f64>,
}

impl EvalResult {
    /// Accuracy grid: one row per group, heading and subheading columns for
    /// each reported k, in percent.
    pub fn table(&self) -> String {
        let ks: Vec<usize> = {
            let mut ks: Vec<usize> = self.topk.cells.iter().map(|c| c.k).collect();
            ks.sort_unstable();
            ks.dedup();
            ks
        };
        let mut out = String::new();
        let _ = write!(out, "{:<12} {:>6} |", "group", "cases");
        for (name, _) in [("HS4", HsLevel::Heading), ("HS6", HsLevel::Subheading)] {
            for k in &ks {
                let _ = write!(out, " {name} k={k:<2}");
            }
            out.push_str(" |");
        }
        out.push('\n');
        for group in [Group::All, Group::General, Group::Contentious] {
            let n = self.topk.counts.get(&group).copied().unwrap_or(0);
            let _ = write!(out, "{:<12} {:>6} |", group.name(), n);
            for level in [HsLevel::Heading, HsLevel::Subheading] {
                for &k in &ks {
                    match self.topk.get(group, level, k) {
                        Some(a) => {
                            let _ = write!(out, " {:>8.2}", a * 100.0);
                        }
                        None => {
                            let _ = write!(out, " {:>8}", "-");
                        }
                    }
                }
                out.push_str(" |");
            }
            out.push('\n');
        }
        if let (Some(r), Some(p)) = (self.mean_recall, self.mean_precision) {
            let _ = writeln!(
                out,
                "evidence recall {:.4} precision {:.4} over {} cases",
                r,
                p,
                self.retrieval.len()
            );
        }
        if let Some(s) = self.freq_slope {
            let _ = writeln!(out, "accuracy vs log10(train frequency) slope {s:.4}");
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    pub ks: Vec<usize>,
    pub retrieval: RetrievalConfig,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            ks: REPORTED_KS.to_vec(),
            retrieval: RetrievalConfig::default(),
        }
    }
}

/// Full evaluation of `model` on `test`.
///
/// Evidence retrieval is scored on test cases that have a knowledge-base
/// entry; each such case is removed from the knowledge base while it is
/// scored so that it cannot vote for its own evidence.
pub fn evaluate(
    model: &ModelArtifact,
    test: &CaseCollection,
    train_frequency: &BTreeMap<HsCode, usize>,
    manual: &Manual,
    kb: &KnowledgeBase,
    options: &EvalOptions,
) -> Result<EvalResult> {
    options.retrieval.validate()?;
    let depth = options.ks.iter().copied().max().unwrap_or(1);
    let rankings = rank_cases(model, test, depth)?;
    let topk = accuracy_by_group(&rankings, &options.ks)?;

    let mut per_heading: BTreeMap<HsCode, (usize, usize)> = BTreeMap::new();
    for r in &rankings {
        let heading = r.gold.heading_of();
        let slot = per_heading.entry(heading.clone()).or_default();
        slot.0 += 1;
        if r.headings.first() == Some(&heading) {
            slot.1 += 1;
        }
    }
    let per_heading: Vec<HeadingStat> = per_heading
        .into_iter()
        .map(|(heading, (n, hits))| HeadingStat {
            train_frequency: train_frequency.get(&heading).copied().unwrap_or(0),
            heading,
            test_cases: n,
            accuracy: hits as f64 / n as f64,
        })
        .collect();
    let points: Vec<(f64, f64)> = per_heading
        .iter()
        .filter(|h| h.train_frequency > 0)
        .map(|h| (h.train_frequency as f64, h.accuracy))
        .collect();
    let freq_slope = frequency_accuracy_slope(&points).ok();

    let mut retrieval = Vec::new();
    for case in test {
        let Some(entry) = kb.get(&case.id) else {
            continue;
        };
        let heading = case.label.heading_of();
        if !manual.contains(&heading) {
            continue;
        }
        let held_out = kb.without_case(&case.id);
        let retriever = Retriever::new(model, manual, &held_out);
        let query = match retriever.query(&case.description, &options.retrieval) {
            Ok(q) => q,
            Err(Error::EmptyDescription) => continue,
            Err(e) => return Err(e),
        };
        let found = retriever.retrieve(&query, &heading, &options.retrieval)?;
        let sids: Vec<SentenceId> = found.into_iter().map(|s| s.sid).collect();
        retrieval.push(CaseRetrieval {
            case_id: case.id.clone(),
            scores: retrieval_recall_precision(&sids, &entry.evidence)?,
        });
    }
    let mean = |f: fn(&RecallPrecision) -> f64| {
        (!retrieval.is_empty()).then(|| retrieval.iter().map(|r| f(&r.scores)).sum::<f64>() / retrieval.len() as f64)
    };

    Ok(EvalResult {
        topk,
        mean_recall: mean(|s| s.recall),
        mean_precision: mean(|s| s.precision),
        retrieval,
        per_heading,
        freq_slope,
    })
}
