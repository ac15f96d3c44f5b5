//! Acceptance suite: one PASS/FAIL line per criterion.

mod common;
#[path = "../../core/tests/support/mod.rs"]
mod support;

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use chrono::{TimeZone, Utc};
use hs_assist::corpus::{
    heading_frequency, temporal_split, CaseCollection, HsLevel, KnowledgeBaseEntry, ManualSentence, SentenceId,
};
use hs_assist::encoder::{
    calibrate_temperature, fit_temperature, mean_nll, rank_all, softmax, train_with_history, write_artifact,
    EncoderConfig, ModelArtifact, Resources,
};
use hs_assist::eval::{
    evaluate, generate_synthetic_corpus, retrieval_recall_precision, EvalOptions, EvalResult, Group, SyntheticSpec,
};
use hs_assist::report::{build_report, to_canonical_json, ReportOptions};
use hs_assist::retrieval::{
    expert_score, relevance_score, retrieve_evidence, KbNeighborhood, Neighbor, RetrievalConfig,
};
use hs_assist::text::{tokenize, IdfTable, Vocabulary};
use hs_assist_service::AppState;

type Outcome = Result<String, String>;

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

struct Trained {
    model: ModelArtifact,
    eval: EvalResult,
    test: CaseCollection,
    elapsed: Duration,
}

fn train_synthetic(spec: &SyntheticSpec, config: &EncoderConfig) -> Trained {
    let corpus = generate_synthetic_corpus(spec).unwrap();
    let started = Instant::now();
    let (train, val, test) = temporal_split(&corpus.cases, spec.n_val, spec.n_test).unwrap();
    let model = train_with_history(&train, &val, config).unwrap().model;
    let (model, _) = calibrate_temperature(&model, &val).unwrap();
    let eval = evaluate(
        &model,
        &test,
        &heading_frequency(&train),
        &corpus.manual,
        &corpus.kb,
        &EvalOptions::default(),
    )
    .unwrap();
    Trained {
        model,
        eval,
        test,
        elapsed: started.elapsed(),
    }
}

fn reference_config() -> EncoderConfig {
    EncoderConfig {
        dim: 64,
        epochs: 50,
        seed: 7,
        ..Default::default()
    }
}

fn c1_synthetic(run: &Trained) -> Outcome {
    let top1 = run.eval.topk.get(Group::All, HsLevel::Subheading, 1).unwrap();
    let top3 = run.eval.topk.get(Group::All, HsLevel::Subheading, 3).unwrap();
    let secs = run.elapsed.as_secs_f64();
    check(
        top1 >= 0.90 && top3 >= 0.97 && secs < 60.0,
        format!("HS6 top-1 {top1:.3} (>= 0.90), top-3 {top3:.3} (>= 0.97), {secs:.2}s (< 60s)"),
    )
}

fn c2_gradients() -> Outcome {
    let errs: Vec<f64> = (0..5).map(support::gradient_check).collect();
    let worst = errs.iter().cloned().fold(0.0, f64::max);
    check(
        worst < 1e-4,
        format!("max relative error {worst:.2e} over 5 seeds (< 1e-4)"),
    )
}

fn c3_retrieval_oracle() -> Outcome {
    let mut mismatches = Vec::new();
    let mut largest = (0, 0);
    for seed in 0..100 {
        let inst = support::random_instance(seed);
        let n_sent = inst.manual.get(&inst.heading).unwrap().sentences().len();
        largest = (largest.0.max(n_sent), largest.1.max(inst.kb.len()));
        for lambda in [0.0, 0.3, 1.0] {
            let config = RetrievalConfig {
                lambda,
                k_case: 1 + seed as usize % 12,
                n_sentences: 1 + seed as usize % 9,
                ..RetrievalConfig::default()
            };
            let got: Vec<SentenceId> = retrieve_evidence(
                &inst.model,
                &inst.manual,
                &inst.kb,
                &inst.description,
                &inst.heading,
                &config,
            )
            .unwrap()
            .into_iter()
            .map(|s| s.sid)
            .collect();
            let want: Vec<SentenceId> = support::naive_retrieve(&inst, &config)
                .into_iter()
                .map(|s| s.0)
                .collect();
            if got != want {
                mismatches.push((seed, lambda));
            }
        }
    }
    check(
        mismatches.is_empty(),
        format!(
            "300 runs (100 instances x 3 lambdas, up to {} sentences / {} KB entries), mismatches {:?}",
            largest.0, largest.1, mismatches
        ),
    )
}

fn c4_hand_fixtures() -> Outcome {
    let sid = |s: &str| -> SentenceId { s.parse().unwrap() };
    let entry = |id: &str, ev: &[&str]| KnowledgeBaseEntry {
        case_id: id.into(),
        description: "x".into(),
        label: support::code("847110"),
        evidence: ev.iter().map(|s| sid(s)).collect::<BTreeSet<_>>(),
    };
    let (e1, e2) = (entry("e1", &["8471:1", "8471:2"]), entry("e2", &["8471:2"]));
    let hood = KbNeighborhood {
        neighbors: vec![
            Neighbor {
                entry: &e1,
                similarity: 0.9,
            },
            Neighbor {
                entry: &e2,
                similarity: 0.5,
            },
        ],
    };
    let m2 = expert_score(&sid("8471:2"), &hood, false);
    let m1 = expert_score(&sid("8471:1"), &hood, false);
    let m3 = expert_score(&sid("8471:3"), &hood, false);

    // token "a": embedding [1, 0], IDF 2, so s_text("a" vs "a") = 2
    let model = ModelArtifact::from_parts(
        Vocabulary::from_tokens(vec!["a".into(), "b".into()], 1).unwrap(),
        IdfTable::from_parts(vec![2.0, 1.0], 3, 2.0).unwrap(),
        ndarray::Array2::from_shape_vec((2, 2), vec![1.0, 0.0, 0.0, 1.0]).unwrap(),
        ndarray::Array2::zeros((2, 1)),
        vec![support::code("847110")],
        1.0,
        EncoderConfig {
            dim: 2,
            ..Default::default()
        },
    )
    .unwrap();
    let sentence = ManualSentence {
        sid: sid("8471:2"),
        text: "a".into(),
    };
    let scored = relevance_score(&model, &tokenize("a"), &sentence, &hood, &RetrievalConfig::default()).unwrap();
    check(
        m2 == 1.4 && m1 == 0.9 && m3 == 0.0 && scored.s_text == 2.0 && scored.s_total == 2.42,
        format!(
            "s_e(M2)={m2:?} s_e(M1)={m1:?} s_e(M3)={m3:?} s_text={:?} s_total={:?} (want 1.4, 0.9, 0, 2, 2.42 exactly)",
            scored.s_text, scored.s_total
        ),
    )
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

fn grid_temperature(samples: &[(Vec<f64>, usize)]) -> f64 {
    let mut best = (f64::INFINITY, 1.0);
    for i in 0..=1995 {
        let t = 0.05 + 0.01 * i as f64;
        let nll = mean_nll(samples, t);
        if nll < best.0 {
            best = (nll, t);
        }
    }
    best.1
}

fn c5_calibration(run: &Trained) -> Outcome {
    let mut notes = Vec::new();
    let mut ok = true;

    // overconfident: logits (10 ln 3, 0) with labels split 3:1
    let over: Vec<(Vec<f64>, usize)> = (0..100)
        .map(|i| (vec![10.0 * 3f64.ln(), 0.0], usize::from(i % 4 == 3)))
        .collect();
    let mut fixtures = vec![over];
    for seed in 0..6u64 {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let scale = [0.3, 2.0, 9.0][seed as usize % 3];
        fixtures.push(
            (0..80)
                .map(|_| {
                    let z: Vec<f64> = (0..6).map(|_| rng.gen_range(-scale..scale)).collect();
                    let y = if rng.gen_bool(0.7) {
                        argmax(&z)
                    } else {
                        rng.gen_range(0..6)
                    };
                    (z, y)
                })
                .collect(),
        );
    }
    let mut worst_gap = 0.0f64;
    for (i, samples) in fixtures.iter().enumerate() {
        let r = fit_temperature(samples).unwrap();
        if r.nll_fitted > r.nll_at_one || (i == 0 && r.nll_fitted >= r.nll_at_one) {
            ok = false;
            notes.push(format!("fixture {i} nll {} vs {}", r.nll_fitted, r.nll_at_one));
        }
        worst_gap = worst_gap.max((r.temperature - grid_temperature(samples)).abs());
        let flips = samples
            .iter()
            .filter(|(z, _)| {
                let scaled: Vec<f64> = z.iter().map(|v| v / r.temperature).collect();
                argmax(&softmax(&scaled)) != argmax(z)
            })
            .count();
        if flips > 0 {
            ok = false;
            notes.push(format!("fixture {i}: {flips} argmax changes"));
        }
        if i == 0 {
            notes.push(format!(
                "overconfident T={:.4} nll {:.4} -> {:.4}",
                r.temperature, r.nll_at_one, r.nll_fitted
            ));
        }
    }
    ok &= worst_gap <= 1e-2;
    notes.push(format!("max |T - grid T| {worst_gap:.2e} (<= 1e-2)"));

    let uncalibrated = run.model.with_temperature(1.0).unwrap();
    let changed = run
        .test
        .iter()
        .filter(|c| {
            let a = rank_all(&run.model, &c.description, HsLevel::Subheading).unwrap();
            let b = rank_all(&uncalibrated, &c.description, HsLevel::Subheading).unwrap();
            a.ranked[0].code != b.ranked[0].code
        })
        .count();
    ok &= changed == 0;
    notes.push(format!(
        "synthetic top-1 changes after calibration: {changed}/{}",
        run.test.len()
    ));
    check(ok, notes.join("; "))
}

fn c6_recall_precision() -> Outcome {
    let s = |v: &[u32]| -> Vec<SentenceId> { v.iter().map(|i| format!("8472:{i}").parse().unwrap()).collect() };
    let expert: BTreeSet<SentenceId> = s(&[1, 2, 3, 4]).into_iter().collect();
    let r = retrieval_recall_precision(&s(&[2, 3, 4, 9]), &expert).unwrap();
    check(
        r.recall == 0.75 && r.precision == 0.75,
        format!("4 retrieved vs 4 expert, 3 shared -> ({}, {})", r.recall, r.precision),
    )
}

fn c7_hierarchy(runs: &[&Trained]) -> Outcome {
    let mut violations = Vec::new();
    let mut worst_sum = 0.0f64;
    let mut cells = 0;
    for (i, run) in runs.iter().enumerate() {
        for group in [Group::All, Group::General, Group::Contentious] {
            for k in [1, 3, 5] {
                if let (Some(h), Some(s)) = (
                    run.eval.topk.get(group, HsLevel::Heading, k),
                    run.eval.topk.get(group, HsLevel::Subheading, k),
                ) {
                    cells += 1;
                    if h < s {
                        violations.push(format!("run {i} {group:?} k={k}: {h} < {s}"));
                    }
                }
            }
        }
        for case in &run.test {
            let subs = rank_all(&run.model, &case.description, HsLevel::Subheading).unwrap();
            let heads = rank_all(&run.model, &case.description, HsLevel::Heading).unwrap();
            for h in &heads.ranked {
                let (raw, cal) = subs
                    .ranked
                    .iter()
                    .filter(|s| h.code.is_prefix_of(&s.code))
                    .fold((0.0, 0.0), |(r, c), s| (r + s.raw_prob, c + s.calibrated_prob));
                worst_sum = worst_sum
                    .max((h.raw_prob - raw).abs())
                    .max((h.calibrated_prob - cal).abs());
            }
        }
    }
    check(
        violations.is_empty() && worst_sum <= 1e-12,
        format!(
            "{} corpora, {cells} (group, k) cells with HS4 >= HS6, violations {:?}; max prefix-sum error {worst_sum:.1e} (<= 1e-12)",
            runs.len(),
            violations
        ),
    )
}

fn c8_determinism() -> Outcome {
    let run = || {
        let spec = SyntheticSpec::default();
        let corpus = generate_synthetic_corpus(&spec).unwrap();
        let (train, val, test) = temporal_split(&corpus.cases, spec.n_val, spec.n_test).unwrap();
        let model = train_with_history(&train, &val, &reference_config()).unwrap().model;
        let (model, _) = calibrate_temperature(&model, &val).unwrap();
        let eval = evaluate(
            &model,
            &test,
            &heading_frequency(&train),
            &corpus.manual,
            &corpus.kb,
            &EvalOptions::default(),
        )
        .unwrap();
        let mut artifact = Vec::new();
        let resources = Resources {
            manual: corpus.manual.clone(),
            kb: corpus.kb.clone(),
        };
        write_artifact(&model, Some(&resources), &mut artifact).unwrap();
        let when = Utc.with_ymd_and_hms(2024, 5, 1, 12, 0, 0).unwrap();
        let reports: Vec<u8> = test
            .iter()
            .take(10)
            .flat_map(|c| {
                to_canonical_json(
                    &build_report(
                        &model,
                        &corpus.manual,
                        &corpus.kb,
                        &c.description,
                        &ReportOptions::new(3, 7, when),
                    )
                    .unwrap(),
                )
            })
            .collect();
        (artifact, reports, serde_json::to_vec(&eval).unwrap())
    };
    let (a, b) = (run(), run());
    check(
        a == b,
        format!(
            "artifact {} bytes equal: {}; 10 reports {} bytes equal: {}; eval equal: {}",
            a.0.len(),
            a.0 == b.0,
            a.1.len(),
            a.1 == b.1,
            a.2 == b.2
        ),
    )
}

fn c9_service() -> Outcome {
    let rt = tokio::runtime::Builder::new_multi_thread()
        .worker_threads(4)
        .enable_all()
        .build()
        .unwrap();
    rt.block_on(async {
        let (snapshot, corpus) = common::small_snapshot();
        let heading = corpus.manual.headings().next().unwrap();
        let n_sentences = heading.sentences().len();
        let heading = heading.heading().to_string();
        let desc = corpus.cases.as_slice().last().unwrap().description.clone();
        let loaded = common::spawn(AppState::new(Some(snapshot), None, None)).await;
        let empty = common::spawn(AppState::new(None, None, None)).await;
        let classify = "/api/v1/classify";
        let valid = serde_json::json!({ "description": desc }).to_string();

        let mut rows: Vec<(String, u16, &str, common::Reply)> = Vec::new();
        rows.push(("classify valid".into(), 200, "", common::post(loaded, classify, &valid).await));
        rows.push(("classify empty".into(), 422, "EMPTY_DESCRIPTION", common::post(loaded, classify, r#"{"description":""}"#).await));
        rows.push(("classify k=100".into(), 422, "K_OUT_OF_RANGE", common::post(loaded, classify, r#"{"description":"a","k":100}"#).await));
        rows.push(("classify n=0".into(), 422, "N_OUT_OF_RANGE", common::post(loaded, classify, r#"{"description":"a","n_sentences":0}"#).await));
        rows.push(("classify malformed".into(), 400, "MALFORMED_REQUEST", common::post(loaded, classify, "{oops").await));
        rows.push(("classify no model".into(), 503, "MODEL_NOT_LOADED", common::post(empty, classify, &valid).await));
        rows.push((format!("manual {heading}"), 200, "", common::get(loaded, &format!("/api/v1/manual/{heading}")).await));
        rows.push(("manual 84".into(), 400, "MALFORMED_HEADING", common::get(loaded, "/api/v1/manual/84").await));
        rows.push(("manual 9999".into(), 404, "UNKNOWN_HEADING", common::get(loaded, "/api/v1/manual/9999").await));
        rows.push(("manual no model".into(), 503, "MODEL_NOT_LOADED", common::get(empty, "/api/v1/manual/8401").await));

        let mut bad = Vec::new();
        for (name, status, code, reply) in &rows {
            if reply.status != *status || (!code.is_empty() && reply.error_code() != *code) {
                bad.push(format!("{name}: {} {}", reply.status, reply.error_code()));
            }
        }
        let report = rows[0].3.json();
        let panels = report["report"]["heading_candidates"].as_array().cloned().unwrap_or_default();
        if panels.len() != 3 || panels.iter().any(|p| p["evidence"].as_array().is_none_or(|e| e.len() > 7)) {
            bad.push("default classify does not give 3 panels with <= 7 evidence sentences".into());
        }
        if rows[6].3.json()["sentences"].as_array().map_or(0, |s| s.len()) != n_sentences {
            bad.push("manual sentence count differs".into());
        }

        let handles: Vec<_> = (0..50)
            .map(|_| {
                let body = valid.clone();
                tokio::spawn(async move { common::post(loaded, classify, &body).await })
            })
            .collect();
        let mut bodies = BTreeSet::new();
        let mut statuses = BTreeSet::new();
        for h in handles {
            let reply = h.await.unwrap();
            statuses.insert(reply.status);
            bodies.insert(common::report_without_timestamp(&reply).to_string());
        }
        let detail = format!(
            "{}/{} status rows match{}; 50 concurrent requests: statuses {:?}, {} distinct report bodies (timestamp excluded)",
            rows.len() - bad.len().min(rows.len()),
            rows.len(),
            if bad.is_empty() { String::new() } else { format!(" (failures: {})", bad.join(", ")) },
            statuses,
            bodies.len()
        );
        check(bad.is_empty() && statuses == BTreeSet::from([200]) && bodies.len() == 1, detail)
    })
}

fn run(id: usize, name: &str, f: impl FnOnce() -> Outcome) -> bool {
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Err(format!("panicked: {msg}"))
    });
    let (tag, detail) = match &outcome {
        Ok(d) => ("PASS", d),
        Err(d) => ("FAIL", d),
    };
    println!("{tag} criterion {id} {name}: {detail}");
    outcome.is_ok()
}

fn main() {
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let reference = train_synthetic(&SyntheticSpec::default(), &reference_config());
    let converged: Vec<Trained> = [
        (
            SyntheticSpec {
                seed: 11,
                sibling_confusion_rate: 0.5,
                ..SyntheticSpec::default()
            },
            EncoderConfig {
                dim: 32,
                epochs: 20,
                ..Default::default()
            },
        ),
        (
            SyntheticSpec {
                seed: 3,
                n_headings: 8,
                n_subheadings_per_heading: 3,
                n_train: 300,
                ..SyntheticSpec::default()
            },
            reference_config(),
        ),
    ]
    .iter()
    .map(|(s, c)| train_synthetic(s, c))
    .collect();
    // near-uniform probabilities: the heading of the best subheading can be
    // outweighed by a sibling-rich heading, so the ordering is reported only
    let undertrained = train_synthetic(
        &SyntheticSpec {
            seed: 3,
            n_headings: 8,
            n_subheadings_per_heading: 3,
            n_train: 300,
            ..SyntheticSpec::default()
        },
        &EncoderConfig {
            dim: 8,
            epochs: 3,
            ..Default::default()
        },
    );

    let mut all = true;
    all &= run(1, "synthetic classification", || c1_synthetic(&reference));
    all &= run(2, "gradient check", c2_gradients);
    all &= run(3, "retrieval oracle equivalence", c3_retrieval_oracle);
    all &= run(4, "score hand fixtures", c4_hand_fixtures);
    all &= run(5, "temperature calibration", || c5_calibration(&reference));
    all &= run(6, "recall/precision fixture", c6_recall_precision);
    all &= run(7, "hierarchy consistency", || {
        let runs: Vec<&Trained> = std::iter::once(&reference).chain(&converged).collect();
        c7_hierarchy(&runs)
    });
    match c7_hierarchy(&[&undertrained]) {
        Ok(d) | Err(d) => println!("NOTE criterion 7 on an undertrained model (dim 8, 3 epochs): {d}"),
    }
    all &= run(8, "determinism", c8_determinism);
    all &= run(9, "service contract", c9_service);
    if !all {
        std::process::exit(1);
    }
}
