use std::collections::{BTreeMap, BTreeSet};

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{softmax, EncoderConfig, ModelArtifact};
use crate::corpus::{CaseCollection, HsCode};
use crate::error::{Error, Result};
use crate::text::{build_vocabulary, compute_idf};

/// One training case as vocabulary ids (OOV tokens already dropped) and a
/// position in the label index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainingExample {
    pub token_ids: Vec<u32>,
    pub label: usize,
}

/// Gradient of the mean cross-entropy over a batch. Embedding gradients are
/// sparse: only rows touched by the batch appear.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub head: Array2<f64>,
    pub embeddings: BTreeMap<u32, Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_top1: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: ModelArtifact,
    /// Mean training loss of the initial parameters.
    pub initial_loss: f64,
    pub history: Vec<EpochStats>,
    /// Epoch (1-based) whose parameters were kept.
    pub best_epoch: usize,
}

fn example_loss(model: &ModelArtifact, ex: &TrainingExample) -> f64 {
    let p = softmax(&model.logits_from_embedding(&model.pool(&ex.token_ids)));
    -p[ex.label].ln()
}

/// Mean categorical cross-entropy `-(1/|D|) sum log p(y_i | x_i)`.
pub fn mean_loss(model: &ModelArtifact, examples: &[TrainingExample]) -> f64 {
    if examples.is_empty() {
        return 0.0;
    }
    examples.iter().map(|ex| example_loss(model, ex)).sum::<f64>() / examples.len() as f64
}

/// Mean loss over `examples` and its gradient with respect to the head and
/// every embedding row used.
pub fn loss_and_gradients(model: &ModelArtifact, examples: &[TrainingExample]) -> (f64, Gradients) {
    let dim = model.dim();
    let classes = model.num_labels();
    let mut head_grad = Array2::<f64>::zeros((dim, classes));
    let mut emb_grad: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
    if examples.is_empty() {
        return (
            0.0,
            Gradients {
                head: head_grad,
                embeddings: emb_grad,
            },
        );
    }
    let scale = 1.0 / examples.len() as f64;
    let mut loss = 0.0;
    for ex in examples {
        let pooled = model.pool(&ex.token_ids);
        let mut dz = softmax(&model.logits_from_embedding(&pooled));
        loss -= dz[ex.label].ln();
        dz[ex.label] -= 1.0;
        for g in &mut dz {
            *g *= scale;
        }
        // dL/dW = e ⊗ dz
        for (j, &e) in pooled.iter().enumerate() {
            if e == 0.0 {
                continue;
            }
            let mut row = head_grad.row_mut(j);
            for (h, g) in row.iter_mut().zip(&dz) {
                *h += e * g;
            }
        }
        if ex.token_ids.is_empty() {
            continue;
        }
        // dL/de = W dz, shared equally by every pooled token occurrence
        let share = 1.0 / ex.token_ids.len() as f64;
        let de: Vec<f64> = model
            .head()
            .rows()
            .into_iter()
            .map(|row| row.iter().zip(&dz).map(|(w, g)| w * g).sum::<f64>() * share)
            .collect();
        for &id in &ex.token_ids {
            let slot = emb_grad.entry(id).or_insert_with(|| vec![0.0; dim]);
            for (s, d) in slot.iter_mut().zip(&de) {
                *s += d;
            }
        }
    }
    (
        loss * scale,
        Gradients {
            head: head_grad,
            embeddings: emb_grad,
        },
    )
}

fn apply(model: &mut ModelArtifact, grads: &Gradients, lr: f64) {
    model.head.scaled_add(-lr, &grads.head);
    for (&id, g) in &grads.embeddings {
        let mut row = model.token_embeddings.row_mut(id as usize);
        for (w, d) in row.iter_mut().zip(g) {
            *w -= lr * d;
        }
    }
}

fn top1_accuracy(model: &ModelArtifact, examples: &[TrainingExample]) -> f64 {
    if examples.is_empty() {
        return 0.0;
    }
    let hits = examples
        .iter()
        .filter(|ex| {
            let logits = model.logits_from_embedding(&model.pool(&ex.token_ids));
            argmax(&logits) == ex.label
        })
        .count();
    hits as f64 / examples.len() as f64
}

/// First index of the maximum.
pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

pub fn train(
    train_cases: &CaseCollection,
    val_cases: &CaseCollection,
    config: &EncoderConfig,
) -> Result<ModelArtifact> {
    Ok(train_with_history(train_cases, val_cases, config)?.model)
}

/// Trains by plain mini-batch gradient descent and keeps the epoch with the
/// best validation top-1 accuracy (earliest on ties). Without validation
/// cases the last epoch is kept.
pub fn train_with_history(
    train_cases: &CaseCollection,
    val_cases: &CaseCollection,
    config: &EncoderConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train_cases.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let vocab = build_vocabulary(train_cases, config.min_count)?;
    let idf = compute_idf(train_cases, &vocab)?;
    let labels: Vec<HsCode> = train_cases
        .iter()
        .chain(val_cases.iter())
        .map(|c| c.label.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let dim = config.dim;
    let bound = 0.5 / dim as f64;
    let embeddings = Array2::from_shape_simple_fn((vocab.len(), dim), || rng.gen_range(-bound..bound));
    let head = Array2::zeros((dim, labels.len()));
    let mut model = ModelArtifact::unversioned(vocab, idf, embeddings, head, labels, 1.0, config.clone())?;

    let train_examples = train_cases
        .iter()
        .map(|c| model.case_example(c))
        .collect::<Result<Vec<_>>>()?;
    let val_examples = val_cases
        .iter()
        .map(|c| model.case_example(c))
        .collect::<Result<Vec<_>>>()?;

    let initial_loss = mean_loss(&model, &train_examples);
    let mut order: Vec<usize> = (0..train_examples.len()).collect();
    let mut batch = Vec::with_capacity(config.batch_size);
    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, ModelArtifact)> = None;

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| train_examples[i].clone()));
            let (_, grads) = loss_and_gradients(&model, &batch);
            apply(&mut model, &grads, config.learning_rate);
        }
        let train_loss = mean_loss(&model, &train_examples);
        let val_top1 = (!val_examples.is_empty()).then(|| top1_accuracy(&model, &val_examples));
        history.push(EpochStats {
            epoch,
            train_loss,
            val_top1,
        });
        let score = val_top1.unwrap_or(f64::NEG_INFINITY);
        let improved = match &best {
            None => true,
            Some((b, _, _)) => val_top1.is_none() || score > *b,
        };
        if improved {
            best = Some((score, epoch, model.clone()));
        }
    }

    let (best_epoch, mut model) = match best {
        Some((_, epoch, m)) => (epoch, m),
        None => (0, model),
    };
    model.refresh_version();
    Ok(TrainOutcome {
        model,
        initial_loss,
        history,
        best_epoch,
    })
}
