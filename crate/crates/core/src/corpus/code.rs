use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HsLevel {
    Chapter,
    Heading,
    Subheading,
}

impl HsLevel {
    pub fn digits(self) -> usize {
        match self {
            HsLevel::Chapter => 2,
            HsLevel::Heading => 4,
            HsLevel::Subheading => 6,
        }
    }

    fn from_len(len: usize) -> Option<Self> {
        match len {
            2 => Some(HsLevel::Chapter),
            4 => Some(HsLevel::Heading),
            6 => Some(HsLevel::Subheading),
            _ => None,
        }
    }
}

/// An HS code at chapter (2), heading (4) or subheading (6 digit) level.
///
/// Ordering is plain lexicographic order on the digit string, which keeps a
/// heading directly before its own subheadings.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct HsCode(String);

impl HsCode {
    pub fn parse(code: &str) -> Result<Self, Error> {
        if HsLevel::from_len(code.len()).is_none() {
            return Err(Error::InvalidCode {
                code: code.to_owned(),
                reason: "expected 2, 4 or 6 digits",
            });
        }
        if !code.bytes().all(|b| b.is_ascii_digit()) {
            return Err(Error::InvalidCode {
                code: code.to_owned(),
                reason: "only digits 0-9 are allowed",
            });
        }
        Ok(HsCode(code.to_owned()))
    }

    pub fn parse_at(code: &str, level: HsLevel) -> Result<Self, Error> {
        let parsed = Self::parse(code)?;
        if parsed.level() != level {
            return Err(Error::InvalidCode {
                code: code.to_owned(),
                reason: match level {
                    HsLevel::Chapter => "expected a 2-digit chapter",
                    HsLevel::Heading => "expected a 4-digit heading",
                    HsLevel::Subheading => "expected a 6-digit subheading",
                },
            });
        }
        Ok(parsed)
    }

    pub fn level(&self) -> HsLevel {
        HsLevel::from_len(self.0.len()).expect("validated at construction")
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Truncates to a coarser level; returns `self` unchanged if already at or
    /// above it.
    pub fn truncate(&self, level: HsLevel) -> HsCode {
        let n = level.digits().min(self.0.len());
        HsCode(self.0[..n].to_owned())
    }

    pub fn heading_of(&self) -> HsCode {
        self.truncate(HsLevel::Heading)
    }

    pub fn chapter_of(&self) -> HsCode {
        self.truncate(HsLevel::Chapter)
    }

    pub fn is_prefix_of(&self, other: &HsCode) -> bool {
        other.0.starts_with(&self.0)
    }
}

impl fmt::Display for HsCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl FromStr for HsCode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::parse(s)
    }
}

impl TryFrom<String> for HsCode {
    type Error = Error;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        Self::parse(&value)
    }
}

impl From<HsCode> for String {
    fn from(code: HsCode) -> Self {
        code.0
    }
}
