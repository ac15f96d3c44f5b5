//! Independent oracles and fixtures shared by integration tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use hs_assist::corpus::{HeadingManual, HsCode, KnowledgeBase, KnowledgeBaseEntry, Manual, SentenceId};
use hs_assist::encoder::{loss_and_gradients, mean_loss, EncoderConfig, ModelArtifact, TrainingExample};
use hs_assist::retrieval::RetrievalConfig;
use hs_assist::text::{IdfTable, Vocabulary};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const HEADING: &str = "8471";

pub fn code(s: &str) -> HsCode {
    HsCode::parse(s).unwrap()
}

/// Model over tokens `w0..w{vocab-1}` with parameters drawn from U[-1, 1]
/// and IDF weights from U[1, 3].
pub fn random_model(rng: &mut ChaCha8Rng, vocab: usize, dim: usize, labels: &[&str]) -> ModelArtifact {
    let tokens: Vec<String> = (0..vocab).map(|i| format!("w{i}")).collect();
    let vocab_table = Vocabulary::from_tokens(tokens, 1).unwrap();
    let weights: Vec<f64> = (0..vocab).map(|_| rng.gen_range(1.0..3.0)).collect();
    let oov = weights.iter().cloned().fold(f64::MIN, f64::max);
    let idf = IdfTable::from_parts(weights, 10, oov).unwrap();
    let emb = Array2::from_shape_simple_fn((vocab, dim), || rng.gen_range(-1.0..1.0));
    let head = Array2::from_shape_simple_fn((dim, labels.len()), || rng.gen_range(-1.0..1.0));
    ModelArtifact::from_parts(
        vocab_table,
        idf,
        emb,
        head,
        labels.iter().map(|l| code(l)).collect(),
        1.0,
        EncoderConfig {
            dim,
            ..Default::default()
        },
    )
    .unwrap()
}

fn with_params(model: &ModelArtifact, emb: Array2<f64>, head: Array2<f64>) -> ModelArtifact {
    ModelArtifact::from_parts(
        model.vocab().clone(),
        model.idf().clone(),
        emb,
        head,
        model.labels().to_vec(),
        model.temperature(),
        model.config().clone(),
    )
    .unwrap()
}

fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = na.max(nb);
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Largest relative error (vector 2-norm) between analytic and central
/// finite-difference gradients over the head and five embedding rows, on a
/// random 3-class, 10-case problem.
pub fn gradient_check(seed: u64) -> f64 {
    const STEP: f64 = 1e-5;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = random_model(&mut rng, 8, 4, &["847110", "847120", "847130"]);
    let examples: Vec<TrainingExample> = (0..10)
        .map(|i| {
            let len = rng.gen_range(1..=5);
            let mut ids: Vec<u32> = (0..len).map(|_| rng.gen_range(0..8)).collect();
            // rows 0..5 are checked, make sure each is used
            ids.push(i % 5);
            TrainingExample {
                token_ids: ids,
                label: rng.gen_range(0..3),
            }
        })
        .collect();
    let (_, grads) = loss_and_gradients(&model, &examples);
    let emb = model.token_embeddings().clone();
    let head = model.head().clone();

    type Perturb<'a> = &'a dyn Fn(&mut Array2<f64>, &mut Array2<f64>, f64);
    let numeric = |perturb: Perturb<'_>| {
        let (mut e1, mut h1) = (emb.clone(), head.clone());
        perturb(&mut e1, &mut h1, STEP);
        let (mut e2, mut h2) = (emb.clone(), head.clone());
        perturb(&mut e2, &mut h2, -STEP);
        (mean_loss(&with_params(&model, e1, h1), &examples) - mean_loss(&with_params(&model, e2, h2), &examples))
            / (2.0 * STEP)
    };

    let mut worst = 0.0f64;
    let mut num_head = Vec::new();
    for i in 0..head.nrows() {
        for j in 0..head.ncols() {
            num_head.push(numeric(&|_, h, d| h[[i, j]] += d));
        }
    }
    worst = worst.max(relative_error(grads.head.as_slice().unwrap(), &num_head));
    for row in 0..5u32 {
        let analytic = grads
            .embeddings
            .get(&row)
            .cloned()
            .unwrap_or_else(|| vec![0.0; emb.ncols()]);
        let num: Vec<f64> = (0..emb.ncols())
            .map(|c| numeric(&|e, _, d| e[[row as usize, c]] += d))
            .collect();
        worst = worst.max(relative_error(&analytic, &num));
    }
    worst
}

/// Softmax by max-shifted exponentials with a compensated (Neumaier) sum.
pub fn softmax_oracle(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - m).exp()).collect();
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for &x in &exps {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            comp += (sum - t) + x;
        } else {
            comp += (x - t) + sum;
        }
        sum = t;
    }
    let total = sum + comp;
    exps.iter().map(|x| x / total).collect()
}

// ---------------------------------------------------------------------------
// retrieval

pub struct RetrievalInstance {
    pub model: ModelArtifact,
    pub manual: Manual,
    pub kb: KnowledgeBase,
    pub description: String,
    pub heading: HsCode,
}

fn random_text(rng: &mut ChaCha8Rng, vocab: usize, max_len: usize) -> String {
    let len = rng.gen_range(1..=max_len);
    (0..len)
        .map(|_| {
            if rng.gen_bool(0.15) {
                format!("zz{}", rng.gen_range(0..5))
            } else {
                format!("W{}", rng.gen_range(0..vocab))
            }
        })
        .collect::<Vec<_>>()
        .join(if rng.gen_bool(0.5) { " " } else { ", " })
}

/// Random manual heading with up to 60 sentences (duplicates likely, to
/// exercise tie-breaking) and up to 20 knowledge-base entries quoting it.
pub fn random_instance(seed: u64) -> RetrievalInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vocab = rng.gen_range(4..16);
    let dim = rng.gen_range(2..6);
    let model = random_model(&mut rng, vocab, dim, &["847110", "847120"]);
    let n_sent = rng.gen_range(1..=60);
    let pool: Vec<String> = (0..rng.gen_range(1..=n_sent))
        .map(|_| random_text(&mut rng, vocab, 6))
        .collect();
    let sentences: Vec<String> = (0..n_sent)
        .map(|_| pool[rng.gen_range(0..pool.len())].clone())
        .collect();
    let heading = code(HEADING);
    let manual = Manual::new([
        HeadingManual::new(heading.clone(), "t", sentences, BTreeMap::new()).unwrap(),
        HeadingManual::new(code("8543"), "u", vec!["w0 w1".into()], BTreeMap::new()).unwrap(),
    ])
    .unwrap();
    let entries = (0..rng.gen_range(0..=20))
        .map(|i| {
            let evidence: BTreeSet<SentenceId> = (0..rng.gen_range(1..=4))
                .map(|_| {
                    if rng.gen_bool(0.1) {
                        "8543:0".parse().unwrap()
                    } else {
                        format!("{HEADING}:{}", rng.gen_range(0..n_sent)).parse().unwrap()
                    }
                })
                .collect();
            KnowledgeBaseEntry {
                case_id: format!("kb{:02}", rng.gen_range(0..100) * 100 + i),
                description: if rng.gen_bool(0.2) {
                    "zz9 zz8".into()
                } else {
                    random_text(&mut rng, vocab, 8)
                },
                label: code("847110"),
                evidence,
            }
        })
        .collect();
    let kb = KnowledgeBase::new(entries, &manual).unwrap();
    let description = random_text(&mut rng, vocab, 8);
    RetrievalInstance {
        model,
        manual,
        kb,
        description,
        heading,
    }
}

fn words(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for ch in text.to_lowercase().chars() {
        if ch.is_alphanumeric() {
            cur.push(ch);
        } else if !cur.is_empty() {
            out.push(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

fn row(model: &ModelArtifact, word: &str) -> Option<Vec<f64>> {
    model
        .vocab()
        .id(word)
        .map(|i| model.token_embeddings().row(i as usize).to_vec())
}

fn cosine(u: &[f64], v: &[f64]) -> f64 {
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let uu: f64 = u.iter().map(|a| a * a).sum();
    let vv: f64 = v.iter().map(|a| a * a).sum();
    if uu == 0.0 || vv == 0.0 {
        0.0
    } else {
        (dot / (uu * vv).sqrt()).clamp(-1.0, 1.0)
    }
}

fn mean_row(model: &ModelArtifact, text: &str) -> Vec<f64> {
    let rows: Vec<Vec<f64>> = words(text).iter().filter_map(|w| row(model, w)).collect();
    let mut out = vec![0.0; model.dim()];
    for r in &rows {
        for (o, v) in out.iter_mut().zip(r) {
            *o += v;
        }
    }
    if !rows.is_empty() {
        for o in &mut out {
            *o /= rows.len() as f64;
        }
    }
    out
}

/// Exhaustive scorer: every sentence of the heading scored from scratch,
/// returning all `(sid, s_text, s_expert, s_total)` ranked.
pub fn naive_scores(inst: &RetrievalInstance, config: &RetrievalConfig) -> Vec<(SentenceId, f64, f64, f64)> {
    let model = &inst.model;
    let desc = words(&inst.description);
    let q = mean_row(model, &inst.description);

    let mut sims: Vec<(f64, &KnowledgeBaseEntry)> = inst
        .kb
        .entries()
        .iter()
        .map(|e| (cosine(&q, &mean_row(model, &e.description)), e))
        .collect();
    sims.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.case_id.cmp(&b.1.case_id)));
    sims.truncate(config.k_case);

    let heading = inst.manual.get(&inst.heading).unwrap();
    let mut out: Vec<(SentenceId, f64, f64, f64)> = heading
        .sentences()
        .iter()
        .map(|s| {
            let sent = words(&s.text);
            let mut s_text = 0.0;
            let mut wsum = 0.0;
            for d in &desc {
                let w = inst.model.idf().weight(model.vocab().id(d));
                wsum += w;
                let a = match row(model, d) {
                    None => 0.0,
                    Some(dv) => sent
                        .iter()
                        .map(|m| row(model, m).map_or(0.0, |mv| cosine(&dv, &mv)))
                        .fold(f64::NEG_INFINITY, f64::max),
                };
                let a = if a == f64::NEG_INFINITY { 0.0 } else { a };
                s_text += w * a;
            }
            if config.normalize_text_score && wsum > 0.0 {
                s_text /= wsum;
            }
            let s_exp: f64 = sims
                .iter()
                .filter(|(_, e)| e.evidence.contains(&s.sid))
                .map(|(sim, _)| {
                    if config.clamp_negative_kb_sim {
                        sim.max(0.0)
                    } else {
                        *sim
                    }
                })
                .sum();
            (s.sid.clone(), s_text, s_exp, s_text + config.lambda * s_exp)
        })
        .collect();
    out.sort_by(|a, b| {
        b.3.partial_cmp(&a.3)
            .unwrap()
            .then((a.0.heading().as_str(), a.0.index()).cmp(&(b.0.heading().as_str(), b.0.index())))
    });
    out
}

pub fn naive_retrieve(inst: &RetrievalInstance, config: &RetrievalConfig) -> Vec<(SentenceId, f64)> {
    let mut all = naive_scores(inst, config);
    all.truncate(config.n_sentences);
    all.into_iter().map(|(sid, _, _, t)| (sid, t)).collect()
}
