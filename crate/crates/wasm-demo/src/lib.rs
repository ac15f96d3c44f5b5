//! Browser demo. A small model is trained on a synthetic corpus when the
//! page loads; the page then classifies descriptions, re-ranks evidence as
//! lambda moves, and offers sample descriptions from the held-out cases.

use chrono::DateTime;
use serde::Serialize;
use wasm_bindgen::prelude::*;

use hs_assist::corpus::{temporal_split, CaseCollection, HsCode, HsLevel, KnowledgeBase, Manual};
use hs_assist::encoder::{calibrate_temperature, train_with_history, EncoderConfig, ModelArtifact};
use hs_assist::eval::{generate_synthetic_corpus, SyntheticSpec};
use hs_assist::report::{build_report, render, Format, ReportOptions};
use hs_assist::retrieval::{RetrievalConfig, Retriever};

#[derive(Serialize)]
struct Sample<'a> {
    id: &'a str,
    description: &'a str,
    label: &'a str,
    origin: hs_assist::corpus::Origin,
}

#[derive(Serialize)]
struct EvidenceRow<'a> {
    sid: String,
    text: &'a str,
    s_text: f64,
    s_expert: f64,
    s_total: f64,
    rank: usize,
}

#[wasm_bindgen]
pub struct Demo {
    model: ModelArtifact,
    manual: Manual,
    kb: KnowledgeBase,
    test: CaseCollection,
    best_epoch: usize,
}

fn js_err(e: hs_assist::Error) -> JsValue {
    JsValue::from_str(&format!("{}: {e}", e.code()))
}

#[wasm_bindgen]
impl Demo {
    /// Generates the corpus for `seed` and trains a `dim`-wide model.
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32, dim: u32, epochs: u32) -> Result<Demo, JsValue> {
        Demo::build(seed as u64, dim as usize, epochs as usize).map_err(js_err)
    }

    /// Suggestion report for `description` as JSON or HTML.
    pub fn classify(
        &self,
        description: &str,
        k: u32,
        n_sentences: u32,
        lambda: f64,
        html: bool,
        now_ms: f64,
    ) -> Result<String, JsValue> {
        self.report(description, k as usize, n_sentences as usize, lambda, html, now_ms)
            .map_err(js_err)
    }

    /// Every sentence of `heading` scored for `description` at `lambda`, ranked.
    pub fn evidence(&self, description: &str, heading: &str, lambda: f64, k_case: u32) -> Result<String, JsValue> {
        self.evidence_table(description, heading, lambda, k_case as usize)
            .map_err(js_err)
    }

    /// Up to `count` held-out cases as JSON.
    pub fn samples(&self, count: u32) -> String {
        self.sample_list(count as usize)
    }

    pub fn info(&self) -> String {
        serde_json::json!({
            "model_version": self.model.version(),
            "labels": self.model.num_labels(),
            "vocabulary": self.model.vocab().len(),
            "dim": self.model.dim(),
            "temperature": self.model.temperature(),
            "best_epoch": self.best_epoch,
            "kb_entries": self.kb.len(),
        })
        .to_string()
    }
}

impl Demo {
    pub fn build(seed: u64, dim: usize, epochs: usize) -> hs_assist::Result<Demo> {
        let spec = SyntheticSpec {
            seed,
            ..SyntheticSpec::default()
        };
        let corpus = generate_synthetic_corpus(&spec)?;
        let (train, val, test) = temporal_split(&corpus.cases, spec.n_val, spec.n_test)?;
        let config = EncoderConfig {
            dim,
            epochs,
            seed,
            ..EncoderConfig::default()
        };
        let outcome = train_with_history(&train, &val, &config)?;
        let (model, _) = calibrate_temperature(&outcome.model, &val)?;
        Ok(Demo {
            model,
            manual: corpus.manual,
            kb: corpus.kb,
            test,
            best_epoch: outcome.best_epoch,
        })
    }

    pub fn report(
        &self,
        description: &str,
        k: usize,
        n: usize,
        lambda: f64,
        html: bool,
        now_ms: f64,
    ) -> hs_assist::Result<String> {
        let generated_at = DateTime::from_timestamp_millis(now_ms as i64).unwrap_or_default();
        let options = ReportOptions {
            k,
            retrieval: RetrievalConfig {
                lambda,
                n_sentences: n,
                ..RetrievalConfig::default()
            },
            generated_at,
        };
        let report = build_report(&self.model, &self.manual, &self.kb, description, &options)?;
        let format = if html { Format::Html } else { Format::Json };
        Ok(String::from_utf8(render(&report, format)).expect("reports are UTF-8"))
    }

    pub fn evidence_table(
        &self,
        description: &str,
        heading: &str,
        lambda: f64,
        k_case: usize,
    ) -> hs_assist::Result<String> {
        let heading = HsCode::parse_at(heading, HsLevel::Heading)?;
        let config = RetrievalConfig {
            lambda,
            k_case,
            ..RetrievalConfig::default()
        };
        config.validate()?;
        let retriever = Retriever::new(&self.model, &self.manual, &self.kb);
        let query = retriever.query(description, &config)?;
        let scored = retriever.score_heading(&query, &heading, &config)?;
        let rows: Vec<EvidenceRow> = scored
            .iter()
            .enumerate()
            .map(|(i, s)| EvidenceRow {
                sid: s.sid.to_string(),
                text: self.manual.sentence(&s.sid).map_or("", |m| m.text.as_str()),
                s_text: s.s_text,
                s_expert: s.s_expert,
                s_total: s.s_total,
                rank: i + 1,
            })
            .collect();
        Ok(serde_json::to_string(&rows).expect("rows serialize"))
    }

    pub fn sample_list(&self, count: usize) -> String {
        let rows: Vec<Sample> = self
            .test
            .iter()
            .take(count)
            .map(|c| Sample {
                id: &c.id,
                description: &c.description,
                label: c.label.as_str(),
                origin: c.origin,
            })
            .collect();
        serde_json::to_string(&rows).expect("samples serialize")
    }
}
