use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{json_lines, HsCode, HsLevel, Manual, SentenceId};
use crate::error::{Error, Result};
use crate::text::tokenize;

/// Minimum token-set Jaccard overlap for a quote to be matched to a manual
/// sentence when no normalized exact match exists.
pub const QUOTE_MATCH_THRESHOLD: f64 = 0.9;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KnowledgeBaseEntry {
    pub case_id: String,
    pub description: String,
    pub label: HsCode,
    pub evidence: BTreeSet<SentenceId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EvidenceRef {
    Sid { sid: String },
    Quote { quote: String },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KbRecord {
    pub case_id: String,
    pub description: String,
    pub hs6: String,
    pub evidence: Vec<EvidenceRef>,
}

/// A quote that could not be matched to any manual sentence and was dropped.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuoteWarning {
    pub case_id: String,
    pub quote: String,
    pub best_overlap: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct KnowledgeBase {
    entries: Vec<KnowledgeBaseEntry>,
    warnings: Vec<QuoteWarning>,
}

impl KnowledgeBase {
    /// Builds a knowledge base from already-resolved entries, checking that
    /// case ids are unique and every evidence sid exists in `manual`.
    pub fn new(entries: Vec<KnowledgeBaseEntry>, manual: &Manual) -> Result<Self> {
        let mut ids = HashSet::new();
        for e in &entries {
            if !ids.insert(e.case_id.as_str()) {
                return Err(Error::DuplicateId(e.case_id.clone()));
            }
            if e.evidence.is_empty() {
                return Err(Error::EmptyEvidence {
                    case_id: e.case_id.clone(),
                });
            }
            if let Some(sid) = e.evidence.iter().find(|s| manual.sentence(s).is_none()) {
                return Err(Error::validation(
                    0,
                    format!("case {}: evidence {sid} is not in the manual", e.case_id),
                ));
            }
        }
        Ok(Self {
            entries,
            warnings: Vec::new(),
        })
    }

    pub fn parse<R: Read>(reader: R, manual: &Manual) -> Result<Self> {
        let resolver = QuoteResolver::new(manual);
        let mut entries = Vec::new();
        let mut warnings = Vec::new();
        let mut ids = HashSet::new();
        for (line, record) in json_lines::<KbRecord, _>(reader) {
            let record = record?;
            if !ids.insert(record.case_id.clone()) {
                return Err(Error::DuplicateId(record.case_id));
            }
            let label = HsCode::parse_at(&record.hs6, HsLevel::Subheading).map_err(|e| Error::validation(line, e))?;
            let mut evidence = BTreeSet::new();
            for item in record.evidence {
                match item {
                    EvidenceRef::Sid { sid } => {
                        let sid: SentenceId = sid.parse().map_err(|e| Error::validation(line, e))?;
                        if manual.sentence(&sid).is_none() {
                            return Err(Error::validation(line, format!("evidence {sid} is not in the manual")));
                        }
                        evidence.insert(sid);
                    }
                    EvidenceRef::Quote { quote } => match resolver.resolve(&quote, &label) {
                        Ok(sid) => {
                            evidence.insert(sid);
                        }
                        Err(best_overlap) => warnings.push(QuoteWarning {
                            case_id: record.case_id.clone(),
                            quote,
                            best_overlap,
                        }),
                    },
                }
            }
            if evidence.is_empty() {
                return Err(Error::EmptyEvidence {
                    case_id: record.case_id,
                });
            }
            entries.push(KnowledgeBaseEntry {
                case_id: record.case_id,
                description: record.description,
                label,
                evidence,
            });
        }
        Ok(Self { entries, warnings })
    }

    /// Writes entries with evidence as resolved sids.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for e in &self.entries {
            let record = KbRecord {
                case_id: e.case_id.clone(),
                description: e.description.clone(),
                hs6: e.label.to_string(),
                evidence: e
                    .evidence
                    .iter()
                    .map(|s| EvidenceRef::Sid { sid: s.to_string() })
                    .collect(),
            };
            serde_json::to_writer(&mut out, &record)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn entries(&self) -> &[KnowledgeBaseEntry] {
        &self.entries
    }

    pub fn get(&self, case_id: &str) -> Option<&KnowledgeBaseEntry> {
        self.entries.iter().find(|e| e.case_id == case_id)
    }

    pub fn warnings(&self) -> &[QuoteWarning] {
        &self.warnings
    }

    pub fn dropped_quotes(&self) -> usize {
        self.warnings.len()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// A copy without the given case, for leave-one-out evaluation.
    pub fn without_case(&self, case_id: &str) -> KnowledgeBase {
        KnowledgeBase {
            entries: self.entries.iter().filter(|e| e.case_id != case_id).cloned().collect(),
            warnings: Vec::new(),
        }
    }
}

pub fn load_knowledge_base(path: impl AsRef<Path>, manual: &Manual) -> Result<KnowledgeBase> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    KnowledgeBase::parse(file, manual)
}

/// Token-set Jaccard overlap of two texts; 0 when both are token-free.
pub fn token_jaccard(a: &str, b: &str) -> f64 {
    let a: HashSet<_> = tokenize(a).into_iter().collect();
    let b: HashSet<_> = tokenize(b).into_iter().collect();
    let union = a.union(&b).count();
    if union == 0 {
        return 0.0;
    }
    a.intersection(&b).count() as f64 / union as f64
}

fn normalize(text: &str) -> String {
    text.to_lowercase().split_whitespace().collect::<Vec<_>>().join(" ")
}

struct QuoteResolver<'a> {
    manual: &'a Manual,
    exact: HashMap<String, Vec<SentenceId>>,
}

impl<'a> QuoteResolver<'a> {
    fn new(manual: &'a Manual) -> Self {
        let mut exact: HashMap<String, Vec<SentenceId>> = HashMap::new();
        for s in manual.sentences() {
            exact.entry(normalize(&s.text)).or_default().push(s.sid.clone());
        }
        Self { manual, exact }
    }

    /// Resolves a quote to a sid, preferring sentences under the label's own
    /// heading when several match equally well. On failure returns the best
    /// overlap seen.
    fn resolve(&self, quote: &str, label: &HsCode) -> std::result::Result<SentenceId, f64> {
        let own_heading = label.heading_of();
        let rank = |sid: &SentenceId| (sid.heading() != &own_heading, sid.clone());
        if let Some(sids) = self.exact.get(&normalize(quote)) {
            return Ok(sids.iter().min_by_key(|s| rank(s)).expect("non-empty").clone());
        }
        let mut best: Option<(f64, &SentenceId)> = None;
        for s in self.manual.sentences() {
            let overlap = token_jaccard(quote, &s.text);
            let better = match best {
                None => true,
                Some((b, sid)) => overlap > b || (overlap == b && rank(&s.sid) < rank(sid)),
            };
            if better {
                best = Some((overlap, &s.sid));
            }
        }
        match best {
            Some((overlap, sid)) if overlap >= QUOTE_MATCH_THRESHOLD => Ok(sid.clone()),
            Some((overlap, _)) => Err(overlap),
            None => Err(0.0),
        }
    }
}
