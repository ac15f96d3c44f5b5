//! Decision cases, the heading-level HS manual and the expert knowledge base.
//!
//! All three are read from JSON-lines files (one record per line, UTF-8,
//! unknown fields ignored) and are immutable once loaded.

mod code;
mod kb;
mod manual;

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

pub use code::{HsCode, HsLevel};
pub use kb::{
    load_knowledge_base, token_jaccard, EvidenceRef, KbRecord, KnowledgeBase, KnowledgeBaseEntry, QuoteWarning,
    QUOTE_MATCH_THRESHOLD,
};
pub use manual::{load_manual, HeadingManual, Manual, ManualRecord, ManualSentence, SentenceId};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    #[default]
    General,
    Council,
    Committee,
    International,
}

impl Origin {
    /// Council and committee cases are escalated disputes.
    pub fn is_contentious(self) -> bool {
        matches!(self, Origin::Council | Origin::Committee)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecisionCase {
    pub id: String,
    pub date: NaiveDate,
    pub description: String,
    pub label: HsCode,
    pub origin: Origin,
}

/// Line format of the cases file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CaseRecord {
    pub id: String,
    pub date: String,
    pub description: String,
    pub hs6: String,
    #[serde(default)]
    pub origin: Origin,
}

impl DecisionCase {
    pub fn new(
        id: impl Into<String>,
        date: NaiveDate,
        description: impl Into<String>,
        label: HsCode,
        origin: Origin,
    ) -> Result<Self> {
        let description = description.into();
        if description.trim().is_empty() {
            return Err(Error::validation(0, "empty description"));
        }
        if label.level() != HsLevel::Subheading {
            return Err(Error::validation(0, format!("label {label} is not a subheading")));
        }
        Ok(Self {
            id: id.into(),
            date,
            description,
            label,
            origin,
        })
    }

    fn from_record(record: CaseRecord, line: usize) -> Result<Self> {
        let date = NaiveDate::parse_from_str(&record.date, "%Y-%m-%d")
            .map_err(|e| Error::parse(line, format!("bad date {:?}: {e}", record.date)))?;
        let label = HsCode::parse_at(&record.hs6, HsLevel::Subheading).map_err(|e| Error::validation(line, e))?;
        Self::new(record.id, date, record.description, label, record.origin).map_err(|e| match e {
            Error::Validation { message, .. } => Error::validation(line, message),
            other => other,
        })
    }

    pub fn to_record(&self) -> CaseRecord {
        CaseRecord {
            id: self.id.clone(),
            date: self.date.format("%Y-%m-%d").to_string(),
            description: self.description.clone(),
            hs6: self.label.to_string(),
            origin: self.origin,
        }
    }
}

/// Cases ordered by `(date, id)`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CaseCollection {
    cases: Vec<DecisionCase>,
}

impl CaseCollection {
    pub fn new(mut cases: Vec<DecisionCase>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(cases.len());
        for c in &cases {
            if !seen.insert(c.id.as_str()) {
                return Err(Error::DuplicateId(c.id.clone()));
            }
        }
        cases.sort_by(|a, b| a.date.cmp(&b.date).then_with(|| a.id.cmp(&b.id)));
        Ok(Self { cases })
    }

    pub fn parse<R: Read>(reader: R) -> Result<Self> {
        let mut cases = Vec::new();
        for (line_no, record) in json_lines::<CaseRecord, _>(reader) {
            cases.push(DecisionCase::from_record(record?, line_no)?);
        }
        Self::new(cases)
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for case in &self.cases {
            serde_json::to_writer(&mut out, &case.to_record())?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn iter(&self) -> std::slice::Iter<'_, DecisionCase> {
        self.cases.iter()
    }

    pub fn as_slice(&self) -> &[DecisionCase] {
        &self.cases
    }

    pub fn len(&self) -> usize {
        self.cases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cases.is_empty()
    }

    pub fn concat(&self, other: &CaseCollection) -> Result<CaseCollection> {
        let mut all = self.cases.clone();
        all.extend(other.cases.iter().cloned());
        Self::new(all)
    }
}

impl<'a> IntoIterator for &'a CaseCollection {
    type Item = &'a DecisionCase;
    type IntoIter = std::slice::Iter<'a, DecisionCase>;

    fn into_iter(self) -> Self::IntoIter {
        self.cases.iter()
    }
}

pub fn load_cases(path: impl AsRef<Path>) -> Result<CaseCollection> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    CaseCollection::parse(file)
}

/// Splits by time: the newest `n_test` cases form the test set, the
/// `n_val` before them the validation set, and everything older trains.
pub fn temporal_split(
    cases: &CaseCollection,
    n_val: usize,
    n_test: usize,
) -> Result<(CaseCollection, CaseCollection, CaseCollection)> {
    let n = cases.len();
    let requested = n_val.saturating_add(n_test);
    if requested > n {
        return Err(Error::Split {
            requested,
            available: n,
        });
    }
    let train_end = n - requested;
    let val_end = n - n_test;
    let part = |range: std::ops::Range<usize>| CaseCollection {
        cases: cases.cases[range].to_vec(),
    };
    Ok((part(0..train_end), part(train_end..val_end), part(val_end..n)))
}

pub fn heading_frequency(cases: &CaseCollection) -> BTreeMap<HsCode, usize> {
    let mut counts = BTreeMap::new();
    for case in cases {
        *counts.entry(case.label.heading_of()).or_default() += 1;
    }
    counts
}

/// Iterates non-blank lines of a JSON-lines stream, yielding 1-based line
/// numbers with each decoded record.
pub(crate) fn json_lines<T, R>(reader: R) -> impl Iterator<Item = (usize, Result<T>)>
where
    T: serde::de::DeserializeOwned,
    R: Read,
{
    BufReader::new(reader).lines().enumerate().filter_map(|(i, line)| {
        let line_no = i + 1;
        match line {
            Err(e) => Some((line_no, Err(Error::parse(line_no, e)))),
            Ok(l) if l.trim().is_empty() => None,
            Ok(l) => Some((line_no, serde_json::from_str(&l).map_err(|e| Error::parse(line_no, e)))),
        }
    })
}
