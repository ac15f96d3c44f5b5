//! Description encoder and classification head.
//!
//! The reference encoder is a trainable token-embedding table with mean
//! pooling, followed by a linear head over all subheading labels. Heading
//! scores are derived from subheading probabilities by prefix sums, so a
//! single model serves both levels.

mod artifact;
mod calibrate;
mod train;

use std::collections::BTreeMap;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use artifact::{load_artifact, read_artifact, save_artifact, write_artifact, Resources, ARTIFACT_MAGIC};
pub use calibrate::{
    calibrate_temperature, fit_temperature, mean_nll, CalibrationReport, TEMPERATURE_RANGE, TEMPERATURE_TOLERANCE,
};
pub use train::{
    loss_and_gradients, mean_loss, train, train_with_history, EpochStats, Gradients, TrainOutcome, TrainingExample,
};

use crate::corpus::{DecisionCase, HsCode, HsLevel};
use crate::error::{Error, Result};
use crate::text::{tokenize, IdfTable, Token, Vocabulary};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub dim: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub min_count: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            dim: 768,
            epochs: 100,
            learning_rate: 2.0,
            batch_size: 16,
            seed: 0,
            min_count: 1,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::Config("dim must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        Ok(())
    }
}

/// A trained model: vocabulary and IDF statistics, the token-embedding
/// table (`|V| x d`), the classification head (`d x C`), the sorted label
/// index and the calibration temperature.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelArtifact {
    vocab: Vocabulary,
    idf: IdfTable,
    token_embeddings: Array2<f64>,
    head: Array2<f64>,
    labels: Vec<HsCode>,
    label_index: BTreeMap<HsCode, usize>,
    temperature: f64,
    config: EncoderConfig,
    version: String,
}

impl ModelArtifact {
    /// Assembles a model from its parts and stamps a content-derived version.
    pub fn from_parts(
        vocab: Vocabulary,
        idf: IdfTable,
        token_embeddings: Array2<f64>,
        head: Array2<f64>,
        labels: Vec<HsCode>,
        temperature: f64,
        config: EncoderConfig,
    ) -> Result<Self> {
        let mut model = Self::unversioned(vocab, idf, token_embeddings, head, labels, temperature, config)?;
        model.refresh_version();
        Ok(model)
    }

    pub(crate) fn unversioned(
        vocab: Vocabulary,
        idf: IdfTable,
        token_embeddings: Array2<f64>,
        head: Array2<f64>,
        labels: Vec<HsCode>,
        temperature: f64,
        config: EncoderConfig,
    ) -> Result<Self> {
        let dim = token_embeddings.ncols();
        if token_embeddings.nrows() != vocab.len() {
            return Err(Error::DimensionMismatch {
                left: token_embeddings.nrows(),
                right: vocab.len(),
            });
        }
        if idf.weights().len() != vocab.len() {
            return Err(Error::DimensionMismatch {
                left: idf.weights().len(),
                right: vocab.len(),
            });
        }
        if head.nrows() != dim || head.ncols() != labels.len() {
            return Err(Error::DimensionMismatch {
                left: head.nrows() * head.ncols(),
                right: dim * labels.len(),
            });
        }
        if dim == 0 {
            return Err(Error::Config("embedding dimension must be at least 1".into()));
        }
        if labels.is_empty() {
            return Err(Error::Config("model needs at least one label".into()));
        }
        if labels.iter().any(|l| l.level() != HsLevel::Subheading) {
            return Err(Error::Config("labels must be subheadings".into()));
        }
        if labels.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("labels must be unique and sorted".into()));
        }
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(Error::Config("temperature must be positive".into()));
        }
        let label_index = labels.iter().cloned().enumerate().map(|(i, l)| (l, i)).collect();
        Ok(Self {
            vocab,
            idf,
            token_embeddings: token_embeddings.as_standard_layout().into_owned(),
            head: head.as_standard_layout().into_owned(),
            labels,
            label_index,
            temperature,
            config,
            version: String::new(),
        })
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn idf(&self) -> &IdfTable {
        &self.idf
    }

    pub fn token_embeddings(&self) -> &Array2<f64> {
        &self.token_embeddings
    }

    pub fn head(&self) -> &Array2<f64> {
        &self.head
    }

    pub fn labels(&self) -> &[HsCode] {
        &self.labels
    }

    pub fn label_position(&self, label: &HsCode) -> Option<usize> {
        self.label_index.get(label).copied()
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn version(&self) -> &str {
        &self.version
    }

    pub fn dim(&self) -> usize {
        self.token_embeddings.ncols()
    }

    pub fn num_labels(&self) -> usize {
        self.labels.len()
    }

    /// Embedding row of a vocabulary id.
    pub fn embedding(&self, id: u32) -> &[f64] {
        self.token_embeddings
            .row(id as usize)
            .to_slice()
            .expect("standard layout")
    }

    pub fn with_temperature(&self, temperature: f64) -> Result<Self> {
        let mut model = Self::unversioned(
            self.vocab.clone(),
            self.idf.clone(),
            self.token_embeddings.clone(),
            self.head.clone(),
            self.labels.clone(),
            temperature,
            self.config.clone(),
        )?;
        model.refresh_version();
        Ok(model)
    }

    pub fn with_head(&self, head: Array2<f64>) -> Result<Self> {
        let mut model = Self::unversioned(
            self.vocab.clone(),
            self.idf.clone(),
            self.token_embeddings.clone(),
            head,
            self.labels.clone(),
            self.temperature,
            self.config.clone(),
        )?;
        model.refresh_version();
        Ok(model)
    }

    pub(crate) fn set_version(&mut self, version: String) {
        self.version = version;
    }

    /// Version derived from a hash of every serialized field except the
    /// version itself.
    pub fn refresh_version(&mut self) {
        let mut hasher = Sha256::new();
        let mut body = Vec::new();
        artifact::write_body(self, &mut body).expect("writing to a Vec cannot fail");
        hasher.update(&body);
        let digest = hasher.finalize();
        let hex: String = digest[..6].iter().map(|b| format!("{b:02x}")).collect();
        self.version = format!("hsx1-{hex}");
    }

    /// In-vocabulary ids of a token list, OOV tokens skipped.
    pub fn token_ids(&self, tokens: &[Token]) -> Vec<u32> {
        tokens.iter().filter_map(|t| self.vocab.id(t.as_str())).collect()
    }

    /// Mean of the embedding rows of `ids`; the zero vector when empty.
    pub fn pool(&self, ids: &[u32]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        if ids.is_empty() {
            return out;
        }
        for &id in ids {
            for (o, v) in out.iter_mut().zip(self.embedding(id)) {
                *o += v;
            }
        }
        let n = ids.len() as f64;
        for o in &mut out {
            *o /= n;
        }
        out
    }

    /// `embedding · W`.
    pub fn logits_from_embedding(&self, embedding: &[f64]) -> Vec<f64> {
        let mut logits = vec![0.0; self.num_labels()];
        for (e, row) in embedding.iter().zip(self.head.rows()) {
            if *e == 0.0 {
                continue;
            }
            for (z, w) in logits.iter_mut().zip(row.iter()) {
                *z += e * w;
            }
        }
        logits
    }

    pub fn case_logits(&self, description: &str) -> Vec<f64> {
        let ids = self.token_ids(&tokenize(description));
        self.logits_from_embedding(&self.pool(&ids))
    }

    pub(crate) fn case_example(&self, case: &DecisionCase) -> Result<TrainingExample> {
        let label = self.label_position(&case.label).ok_or_else(|| Error::LabelCoverage {
            label: case.label.to_string(),
        })?;
        Ok(TrainingExample {
            token_ids: self.token_ids(&tokenize(&case.description)),
            label,
        })
    }
}

/// Output of [`encode`]: the pooled description vector and whether every
/// token was out of vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoded {
    pub vector: Vec<f64>,
    pub all_oov: bool,
}

pub fn encode(model: &ModelArtifact, tokens: &[Token]) -> Result<Encoded> {
    if tokens.is_empty() {
        return Err(Error::EmptyDescription);
    }
    let ids = model.token_ids(tokens);
    Ok(Encoded {
        all_oov: ids.is_empty(),
        vector: model.pool(&ids),
    })
}

pub fn forward(model: &ModelArtifact, tokens: &[Token]) -> Result<Vec<f64>> {
    let encoded = encode(model, tokens)?;
    Ok(softmax(&model.logits_from_embedding(&encoded.vector)))
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    softmax_scaled(logits, 1.0)
}

/// `softmax(logits / temperature)`, shifted by the maximum for stability.
pub fn softmax_scaled(logits: &[f64], temperature: f64) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| ((z - max) / temperature).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedCode {
    pub code: HsCode,
    pub raw_prob: f64,
    pub calibrated_prob: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub level: HsLevel,
    pub ranked: Vec<RankedCode>,
    pub description_embedding: Vec<f64>,
    pub low_confidence: bool,
}

/// Full ranking over every label at `level`, before truncation.
pub fn rank_all(model: &ModelArtifact, description: &str, level: HsLevel) -> Result<Prediction> {
    let tokens = tokenize(description);
    let encoded = encode(model, &tokens)?;
    let logits = model.logits_from_embedding(&encoded.vector);
    let raw = softmax(&logits);
    let calibrated = softmax_scaled(&logits, model.temperature());
    let mut ranked = match level {
        HsLevel::Subheading => model
            .labels()
            .iter()
            .zip(raw.iter().zip(&calibrated))
            .map(|(code, (&r, &c))| RankedCode {
                code: code.clone(),
                raw_prob: r,
                calibrated_prob: c,
            })
            .collect::<Vec<_>>(),
        HsLevel::Heading | HsLevel::Chapter => {
            let mut sums: BTreeMap<HsCode, (f64, f64)> = BTreeMap::new();
            for (code, (&r, &c)) in model.labels().iter().zip(raw.iter().zip(&calibrated)) {
                let slot = sums.entry(code.truncate(level)).or_insert((0.0, 0.0));
                slot.0 += r;
                slot.1 += c;
            }
            sums.into_iter()
                .map(|(code, (r, c))| RankedCode {
                    code,
                    raw_prob: r,
                    calibrated_prob: c,
                })
                .collect()
        }
    };
    sort_ranked(&mut ranked);
    Ok(Prediction {
        level,
        ranked,
        description_embedding: encoded.vector,
        low_confidence: encoded.all_oov,
    })
}

pub fn predict_topk(model: &ModelArtifact, description: &str, k: usize, level: HsLevel) -> Result<Prediction> {
    let mut prediction = rank_all(model, description, level)?;
    prediction.ranked.truncate(k.max(1));
    Ok(prediction)
}

fn sort_ranked(ranked: &mut [RankedCode]) {
    ranked.sort_by(|a, b| {
        b.calibrated_prob
            .total_cmp(&a.calibrated_prob)
            .then_with(|| a.code.cmp(&b.code))
    });
}
