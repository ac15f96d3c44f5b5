//! Officer-facing suggestion document.
//!
//! A report has three parts: the entered description, the candidate headings
//! (each with the complete manual text and its evidence sentences marked),
//! and the candidate subheadings with calibrated confidence.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};

use crate::corpus::{HsCode, HsLevel, KnowledgeBase, Manual, SentenceId};
use crate::encoder::{rank_all, ModelArtifact};
use crate::error::{Error, Result};
use crate::retrieval::{RetrievalConfig, Retriever, ScoredSentence};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManualLine {
    pub sid: SentenceId,
    pub text: String,
    pub highlighted: bool,
    pub s_total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadingCandidate {
    pub heading: HsCode,
    /// Calibrated probability, summed over the heading's subheadings.
    pub probability: f64,
    pub raw_probability: f64,
    pub title: String,
    pub full_manual_sentences: Vec<ManualLine>,
    pub evidence: Vec<ScoredSentence>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubheadingCandidate {
    pub subheading: HsCode,
    pub one_liner: Option<String>,
    pub raw_prob: f64,
    pub calibrated_prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuggestionReport {
    pub description: String,
    pub generated_at: String,
    pub model_version: String,
    pub heading_candidates: Vec<HeadingCandidate>,
    pub subheading_candidates: Vec<SubheadingCandidate>,
    pub low_confidence_flag: bool,
    /// Predicted headings that were skipped for lack of a manual entry.
    pub skipped_headings: Vec<HsCode>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportOptions {
    pub k: usize,
    pub retrieval: RetrievalConfig,
    pub generated_at: DateTime<Utc>,
}

impl ReportOptions {
    pub fn new(k: usize, n_sentences: usize, generated_at: DateTime<Utc>) -> Self {
        Self {
            k,
            retrieval: RetrievalConfig {
                n_sentences,
                ..RetrievalConfig::default()
            },
            generated_at,
        }
    }
}

pub fn build_report(
    model: &ModelArtifact,
    manual: &Manual,
    kb: &KnowledgeBase,
    description: &str,
    options: &ReportOptions,
) -> Result<SuggestionReport> {
    build_report_with(&Retriever::new(model, manual, kb), description, options)
}

/// Builds a report with a prepared retriever (knowledge-base embeddings
/// computed once and shared across requests).
pub fn build_report_with(
    retriever: &Retriever<'_>,
    description: &str,
    options: &ReportOptions,
) -> Result<SuggestionReport> {
    options.retrieval.validate()?;
    if options.k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    let model = retriever.model();
    let manual = retriever.manual();
    let headings = rank_all(model, description, HsLevel::Heading)?;
    let subheadings = rank_all(model, description, HsLevel::Subheading)?;
    let query = retriever.query(description, &options.retrieval)?;

    let mut heading_candidates = Vec::with_capacity(options.k);
    let mut skipped_headings = Vec::new();
    for candidate in &headings.ranked {
        if heading_candidates.len() == options.k {
            break;
        }
        let Some(heading_manual) = manual.get(&candidate.code) else {
            skipped_headings.push(candidate.code.clone());
            continue;
        };
        let scored = retriever.score_heading(&query, &candidate.code, &options.retrieval)?;
        let evidence: Vec<ScoredSentence> = scored.iter().take(options.retrieval.n_sentences).cloned().collect();
        let highlighted: BTreeSet<&SentenceId> = evidence.iter().map(|s| &s.sid).collect();
        let totals: std::collections::HashMap<&SentenceId, f64> = scored.iter().map(|s| (&s.sid, s.s_total)).collect();
        let full_manual_sentences = heading_manual
            .sentences()
            .iter()
            .map(|s| ManualLine {
                sid: s.sid.clone(),
                text: s.text.clone(),
                highlighted: highlighted.contains(&s.sid),
                s_total: totals[&s.sid],
            })
            .collect();
        heading_candidates.push(HeadingCandidate {
            heading: candidate.code.clone(),
            probability: candidate.calibrated_prob,
            raw_probability: candidate.raw_prob,
            title: heading_manual.title().to_owned(),
            full_manual_sentences,
            evidence,
        });
    }

    let subheading_candidates = subheadings
        .ranked
        .iter()
        .take(options.k)
        .map(|r| SubheadingCandidate {
            subheading: r.code.clone(),
            one_liner: manual
                .get(&r.code.heading_of())
                .and_then(|h| h.oneliner(&r.code))
                .map(str::to_owned),
            raw_prob: r.raw_prob,
            calibrated_prob: r.calibrated_prob,
        })
        .collect();

    Ok(SuggestionReport {
        description: description.to_owned(),
        generated_at: options.generated_at.to_rfc3339_opts(SecondsFormat::Millis, true),
        model_version: model.version().to_owned(),
        heading_candidates,
        subheading_candidates,
        low_confidence_flag: headings.low_confidence,
        skipped_headings,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Json,
    Html,
}

impl std::str::FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(Format::Json),
            "html" => Ok(Format::Html),
            other => Err(Error::Config(format!("unknown format {other:?}"))),
        }
    }
}

pub fn render(report: &SuggestionReport, format: Format) -> Vec<u8> {
    match format {
        Format::Json => to_canonical_json(report),
        Format::Html => render_html(report).into_bytes(),
    }
}

/// Canonical JSON: fields in declaration order, compact, trailing newline.
pub fn to_canonical_json(report: &SuggestionReport) -> Vec<u8> {
    let mut out = serde_json::to_vec(report).expect("report serializes");
    out.push(b'\n');
    out
}

pub fn from_json(bytes: &[u8]) -> Result<SuggestionReport> {
    serde_json::from_slice(bytes).map_err(|e| Error::parse(e.line(), e))
}

fn escape(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&#39;"),
            c => out.push(c),
        }
    }
    out
}

fn percent(p: f64) -> String {
    format!("{:.2}%", p * 100.0)
}

fn render_html(report: &SuggestionReport) -> String {
    let mut h = String::new();
    h.push_str("<!DOCTYPE html>\n<html lang=\"en\">\n<head>\n<meta charset=\"utf-8\">\n");
    h.push_str("<title>HS classification suggestion</title>\n");
    h.push_str(
        "<style>\nbody{font-family:sans-serif;max-width:60em;margin:2em auto;line-height:1.4}\n\
         .evidence{color:#c00;font-weight:600}\n\
         .low-confidence{background:#fff3cd;border:1px solid #e0a800;padding:.5em 1em}\n\
         .confidence{color:#555}\n\
         table{border-collapse:collapse}td,th{padding:.2em .8em;text-align:left}\n</style>\n",
    );
    h.push_str("</head>\n<body>\n");
    if report.low_confidence_flag {
        h.push_str(
            "<div class=\"low-confidence\" role=\"alert\">Low confidence: no word of the \
             description is known to the model. Treat these suggestions with caution.</div>\n",
        );
    }
    let _ = write!(
        h,
        "<section class=\"description\">\n<h1>Item description</h1>\n<p>{}</p>\n\
         <p class=\"meta\">Model {} &middot; generated {}</p>\n</section>\n",
        escape(&report.description),
        escape(&report.model_version),
        escape(&report.generated_at),
    );

    h.push_str("<section class=\"headings\">\n<h1>Candidate headings</h1>\n");
    for c in &report.heading_candidates {
        let _ = write!(
            h,
            "<article class=\"heading\" id=\"heading-{code}\">\n<h2>{code} {title} \
             <span class=\"confidence\">({conf})</span></h2>\n<p>\n",
            code = c.heading,
            title = escape(&c.title),
            conf = percent(c.probability),
        );
        for line in &c.full_manual_sentences {
            if line.highlighted {
                let _ = writeln!(
                    h,
                    "<span class=\"evidence\" data-sid=\"{}\">{}</span>",
                    line.sid,
                    escape(&line.text)
                );
            } else {
                let _ = writeln!(
                    h,
                    "<span class=\"sentence\" data-sid=\"{}\">{}</span>",
                    line.sid,
                    escape(&line.text)
                );
            }
        }
        h.push_str("</p>\n</article>\n");
    }
    if !report.skipped_headings.is_empty() {
        let skipped: Vec<String> = report.skipped_headings.iter().map(|c| c.to_string()).collect();
        let _ = writeln!(
            h,
            "<p class=\"skipped\">No manual entry for predicted heading(s): {}</p>",
            skipped.join(", ")
        );
    }
    h.push_str("</section>\n");

    h.push_str(
        "<section class=\"subheadings\">\n<h1>Candidate subheadings</h1>\n<table>\n\
         <tr><th>Subheading</th><th>Description</th><th>Confidence</th></tr>\n",
    );
    for s in &report.subheading_candidates {
        let _ = writeln!(
            h,
            "<tr><td>{}</td><td>{}</td><td class=\"confidence\">{}</td></tr>",
            s.subheading,
            escape(s.one_liner.as_deref().unwrap_or("")),
            percent(s.calibrated_prob),
        );
    }
    h.push_str("</table>\n</section>\n</body>\n</html>\n");
    h
}
