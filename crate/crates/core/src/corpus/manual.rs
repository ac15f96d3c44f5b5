use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{json_lines, HsCode, HsLevel};
use crate::error::{Error, Result};

/// Identifies one manual sentence as `HHHH:n` (heading plus zero-based
/// position). Orders by heading, then numerically by position.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct SentenceId {
    heading: HsCode,
    index: u32,
}

impl SentenceId {
    pub fn new(heading: HsCode, index: u32) -> Result<Self> {
        if heading.level() != HsLevel::Heading {
            return Err(Error::InvalidSentenceId(format!("{heading}:{index}")));
        }
        Ok(Self { heading, index })
    }

    pub fn heading(&self) -> &HsCode {
        &self.heading
    }

    pub fn index(&self) -> u32 {
        self.index
    }
}

impl fmt::Display for SentenceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.heading, self.index)
    }
}

impl FromStr for SentenceId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidSentenceId(s.to_owned());
        let (heading, index) = s.split_once(':').ok_or_else(bad)?;
        let heading = HsCode::parse_at(heading, HsLevel::Heading).map_err(|_| bad())?;
        if index.is_empty() || !index.bytes().all(|b| b.is_ascii_digit()) {
            return Err(bad());
        }
        // reject "8471:01" so the textual form stays canonical
        if index.len() > 1 && index.starts_with('0') {
            return Err(bad());
        }
        let index = index.parse().map_err(|_| bad())?;
        Ok(Self { heading, index })
    }
}

impl TryFrom<String> for SentenceId {
    type Error = Error;

    fn try_from(value: String) -> Result<Self> {
        value.parse()
    }
}

impl From<SentenceId> for String {
    fn from(id: SentenceId) -> Self {
        id.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManualSentence {
    pub sid: SentenceId,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HeadingManual {
    heading: HsCode,
    title: String,
    sentences: Vec<ManualSentence>,
    subheading_oneliners: BTreeMap<HsCode, String>,
}

impl HeadingManual {
    pub fn new(
        heading: HsCode,
        title: impl Into<String>,
        sentences: Vec<String>,
        subheading_oneliners: BTreeMap<HsCode, String>,
    ) -> Result<Self> {
        if heading.level() != HsLevel::Heading {
            return Err(Error::validation(0, format!("{heading} is not a heading")));
        }
        if sentences.is_empty() {
            return Err(Error::validation(0, format!("heading {heading} has no sentences")));
        }
        if let Some(i) = sentences.iter().position(|s| s.trim().is_empty()) {
            return Err(Error::validation(0, format!("heading {heading} sentence {i} is empty")));
        }
        for sub in subheading_oneliners.keys() {
            if sub.level() != HsLevel::Subheading || !heading.is_prefix_of(sub) {
                return Err(Error::validation(0, format!("{sub} is not a subheading of {heading}")));
            }
        }
        let sentences = sentences
            .into_iter()
            .enumerate()
            .map(|(i, text)| ManualSentence {
                sid: SentenceId {
                    heading: heading.clone(),
                    index: i as u32,
                },
                text,
            })
            .collect();
        Ok(Self {
            heading,
            title: title.into(),
            sentences,
            subheading_oneliners,
        })
    }

    fn from_record(record: ManualRecord, line: usize) -> Result<Self> {
        let heading = HsCode::parse_at(&record.heading, HsLevel::Heading).map_err(|e| Error::validation(line, e))?;
        let mut oneliners = BTreeMap::new();
        for (code, text) in record.subheadings {
            let code = HsCode::parse(&code).map_err(|e| Error::validation(line, e))?;
            oneliners.insert(code, text);
        }
        Self::new(heading, record.title, record.sentences, oneliners).map_err(|e| match e {
            Error::Validation { message, .. } => Error::validation(line, message),
            other => other,
        })
    }

    pub fn to_record(&self) -> ManualRecord {
        ManualRecord {
            heading: self.heading.to_string(),
            title: self.title.clone(),
            sentences: self.sentences.iter().map(|s| s.text.clone()).collect(),
            subheadings: self
                .subheading_oneliners
                .iter()
                .map(|(k, v)| (k.to_string(), v.clone()))
                .collect(),
        }
    }

    pub fn heading(&self) -> &HsCode {
        &self.heading
    }

    pub fn title(&self) -> &str {
        &self.title
    }

    pub fn sentences(&self) -> &[ManualSentence] {
        &self.sentences
    }

    pub fn sentence(&self, index: u32) -> Option<&ManualSentence> {
        self.sentences.get(index as usize)
    }

    pub fn subheading_oneliners(&self) -> &BTreeMap<HsCode, String> {
        &self.subheading_oneliners
    }

    pub fn oneliner(&self, subheading: &HsCode) -> Option<&str> {
        self.subheading_oneliners.get(subheading).map(String::as_str)
    }
}

/// Line format of the manual file: one heading per line.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManualRecord {
    pub heading: String,
    #[serde(default)]
    pub title: String,
    pub sentences: Vec<String>,
    #[serde(default)]
    pub subheadings: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Manual {
    headings: BTreeMap<HsCode, HeadingManual>,
}

impl Manual {
    pub fn new(headings: impl IntoIterator<Item = HeadingManual>) -> Result<Self> {
        let mut manual = Manual::default();
        for h in headings {
            manual.insert(h)?;
        }
        Ok(manual)
    }

    fn insert(&mut self, heading: HeadingManual) -> Result<()> {
        if self.headings.contains_key(&heading.heading) {
            return Err(Error::DuplicateHeading(heading.heading.to_string()));
        }
        self.headings.insert(heading.heading.clone(), heading);
        Ok(())
    }

    pub fn parse<R: Read>(reader: R) -> Result<Self> {
        let mut manual = Manual::default();
        for (line_no, record) in json_lines::<ManualRecord, _>(reader) {
            manual.insert(HeadingManual::from_record(record?, line_no)?)?;
        }
        Ok(manual)
    }

    /// Union of two manuals; overlapping headings are rejected.
    pub fn merge(mut self, other: Manual) -> Result<Self> {
        for (_, h) in other.headings {
            self.insert(h)?;
        }
        Ok(self)
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for h in self.headings.values() {
            serde_json::to_writer(&mut out, &h.to_record())?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn get(&self, heading: &HsCode) -> Option<&HeadingManual> {
        self.headings.get(heading)
    }

    pub fn contains(&self, heading: &HsCode) -> bool {
        self.headings.contains_key(heading)
    }

    pub fn sentence(&self, sid: &SentenceId) -> Option<&ManualSentence> {
        self.headings.get(&sid.heading)?.sentence(sid.index)
    }

    pub fn headings(&self) -> impl Iterator<Item = &HeadingManual> {
        self.headings.values()
    }

    pub fn sentences(&self) -> impl Iterator<Item = &ManualSentence> {
        self.headings.values().flat_map(|h| h.sentences.iter())
    }

    pub fn len(&self) -> usize {
        self.headings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.headings.is_empty()
    }
}

pub fn load_manual(path: impl AsRef<Path>) -> Result<Manual> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Manual::parse(file)
}
