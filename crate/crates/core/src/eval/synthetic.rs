use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::path::Path;

use chrono::NaiveDate;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{
    CaseCollection, DecisionCase, HeadingManual, HsCode, KnowledgeBase, KnowledgeBaseEntry, Manual, Origin, SentenceId,
};
use crate::error::{Error, Result};

/// Parameters of a keyword-separable synthetic corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub seed: u64,
    pub n_headings: usize,
    pub n_subheadings_per_heading: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub keywords_per_class: usize,
    pub noise_tokens_per_case: usize,
    /// Size of the shared noise-word pool.
    pub noise_vocabulary: usize,
    /// Manual sentences carrying each subheading's keywords.
    pub sentences_per_subheading: usize,
    /// Generic sentences per heading with no class keywords.
    pub filler_sentences: usize,
    /// Probability that a case also mentions one keyword of a sibling
    /// subheading under the same heading.
    pub sibling_confusion_rate: f64,
    pub contentious_rate: f64,
    pub international_rate: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            seed: 7,
            n_headings: 6,
            n_subheadings_per_heading: 5,
            n_train: 600,
            n_val: 100,
            n_test: 100,
            keywords_per_class: 4,
            noise_tokens_per_case: 6,
            noise_vocabulary: 60,
            sentences_per_subheading: 2,
            filler_sentences: 4,
            sibling_confusion_rate: 0.2,
            contentious_rate: 0.1,
            international_rate: 0.3,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_headings", self.n_headings),
            ("n_subheadings_per_heading", self.n_subheadings_per_heading),
            ("n_train", self.n_train),
            ("n_val", self.n_val),
            ("n_test", self.n_test),
            ("keywords_per_class", self.keywords_per_class),
            ("noise_tokens_per_case", self.noise_tokens_per_case),
            ("noise_vocabulary", self.noise_vocabulary),
            ("sentences_per_subheading", self.sentences_per_subheading),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be at least 1")));
        }
        if self.n_headings > 1500 {
            return Err(Error::Config("n_headings must be at most 1500".into()));
        }
        if self.n_subheadings_per_heading > 99 {
            return Err(Error::Config("n_subheadings_per_heading must be at most 99".into()));
        }
        if self.keywords_per_class < 2 {
            return Err(Error::Config("keywords_per_class must be at least 2".into()));
        }
        for (name, p) in [
            ("sibling_confusion_rate", self.sibling_confusion_rate),
            ("contentious_rate", self.contentious_rate),
            ("international_rate", self.international_rate),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} must be in [0, 1]")));
            }
        }
        if self.contentious_rate + self.international_rate > 1.0 {
            return Err(Error::Config("origin rates must sum to at most 1".into()));
        }
        Ok(())
    }

    pub fn total_cases(&self) -> usize {
        self.n_train + self.n_val + self.n_test
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub cases: CaseCollection,
    pub manual: Manual,
    pub kb: KnowledgeBase,
    /// Keywords assigned to each subheading.
    pub keywords: BTreeMap<HsCode, Vec<String>>,
}

impl SyntheticCorpus {
    /// Writes `cases.jsonl`, `manual.jsonl` and `kb.jsonl` into `dir`.
    pub fn write_to_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let write = |name: &str, f: &dyn Fn(&mut Vec<u8>) -> std::io::Result<()>| {
            let path = dir.join(name);
            let mut buf = Vec::new();
            f(&mut buf).map_err(|e| Error::io(&path, e))?;
            fs::write(&path, buf).map_err(|e| Error::io(&path, e))
        };
        write("cases.jsonl", &|b| self.cases.write_jsonl(b))?;
        write("manual.jsonl", &|b| self.manual.write_jsonl(b))?;
        write("kb.jsonl", &|b| self.kb.write_jsonl(b))
    }
}

const GENERIC_WORDS: &[&str] = &[
    "articles",
    "apparatus",
    "parts",
    "goods",
    "devices",
    "components",
    "general",
    "use",
    "materials",
    "products",
    "machines",
    "equipment",
    "whether",
    "or",
    "not",
    "assembled",
];

const FILLER_TEMPLATES: &[&str] = &[
    "This heading does not cover parts of general use.",
    "Goods presented unassembled are classified as the complete article.",
    "Parts suitable for use solely with these machines remain in this heading.",
    "The heading excludes articles of other chapters specified elsewhere.",
    "Accessories presented with the apparatus are classified together with it.",
    "Materials in the form of plates or sheets are not covered here.",
    "Equipment for industrial use falls within the scope of the heading.",
    "Articles of this kind may be presented separately or assembled.",
];

fn pseudo_words(rng: &mut ChaCha8Rng, n: usize, taken: &mut HashSet<String>) -> Vec<String> {
    const CONSONANTS: &[u8] = b"bdfgklmnprstvz";
    const VOWELS: &[u8] = b"aeiou";
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let syllables = rng.gen_range(2..=3);
        let mut w = String::new();
        for _ in 0..syllables {
            w.push(CONSONANTS[rng.gen_range(0..CONSONANTS.len())] as char);
            w.push(VOWELS[rng.gen_range(0..VOWELS.len())] as char);
        }
        if rng.gen_bool(0.5) {
            w.push(CONSONANTS[rng.gen_range(0..CONSONANTS.len())] as char);
        }
        if taken.insert(w.clone()) {
            out.push(w);
        }
    }
    out
}

fn code(s: String) -> HsCode {
    HsCode::parse(&s).expect("generated codes are well-formed")
}

/// Generates cases, a manual and a knowledge base. Every subheading owns a
/// disjoint keyword set; each description contains all keywords of its label
/// plus noise words; manual sentences embed the keywords of their heading's
/// subheadings; knowledge-base entries (the council and committee cases)
/// quote the sentences carrying their label's keywords.
pub fn generate_synthetic_corpus(spec: &SyntheticSpec) -> Result<SyntheticCorpus> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut taken: HashSet<String> = GENERIC_WORDS.iter().map(|w| w.to_string()).collect();
    for t in FILLER_TEMPLATES {
        for w in crate::text::tokenize(t) {
            taken.insert(w.into_string());
        }
    }

    let headings: Vec<HsCode> = (0..spec.n_headings).map(|i| code(format!("{:04}", 8401 + i))).collect();
    let mut classes: Vec<HsCode> = Vec::new();
    let mut keywords: BTreeMap<HsCode, Vec<String>> = BTreeMap::new();
    for h in &headings {
        for j in 0..spec.n_subheadings_per_heading {
            let sub = code(format!("{h}{:02}", j + 1));
            keywords.insert(sub.clone(), pseudo_words(&mut rng, spec.keywords_per_class, &mut taken));
            classes.push(sub);
        }
    }
    let noise = pseudo_words(&mut rng, spec.noise_vocabulary, &mut taken);

    // manual
    let mut keyword_sentences: BTreeMap<HsCode, Vec<SentenceId>> = BTreeMap::new();
    let mut heading_manuals = Vec::with_capacity(headings.len());
    for h in &headings {
        let subs: Vec<&HsCode> = classes.iter().filter(|c| h.is_prefix_of(c)).collect();
        let lead: Vec<&str> = subs.iter().map(|s| keywords[*s][0].as_str()).collect();
        let mut texts: Vec<(Option<HsCode>, String)> = vec![(
            None,
            format!("This heading covers articles such as {}.", lead.join(", ")),
        )];
        for s in &subs {
            let kw = &keywords[*s];
            for n in 0..spec.sentences_per_subheading {
                let a = &kw[(2 * n) % kw.len()];
                let b = &kw[(2 * n + 1) % kw.len()];
                let text = if n % 2 == 0 {
                    format!("Goods described as {a} or {b} are classified in subheading {s}.")
                } else {
                    format!("The {a} type includes articles fitted with {b} components.")
                };
                texts.push((Some((*s).clone()), text));
            }
        }
        for _ in 0..spec.filler_sentences {
            let t = FILLER_TEMPLATES[rng.gen_range(0..FILLER_TEMPLATES.len())];
            texts.push((None, t.to_owned()));
        }
        texts[1..].shuffle(&mut rng);
        let oneliners = subs
            .iter()
            .map(|s| {
                let kw = &keywords[*s];
                ((*s).clone(), format!("{} and {} articles", kw[0], kw[1]))
            })
            .collect();
        let title = format!("{} apparatus", lead.first().copied().unwrap_or("other"));
        let manual = HeadingManual::new(
            h.clone(),
            title,
            texts.iter().map(|(_, t)| t.clone()).collect(),
            oneliners,
        )?;
        for ((owner, _), sentence) in texts.iter().zip(manual.sentences()) {
            if let Some(owner) = owner {
                keyword_sentences
                    .entry(owner.clone())
                    .or_default()
                    .push(sentence.sid.clone());
            }
        }
        heading_manuals.push(manual);
    }
    let manual = Manual::new(heading_manuals)?;

    // cases
    let start = NaiveDate::from_ymd_opt(2015, 1, 1).expect("valid date");
    let mut cases = Vec::with_capacity(spec.total_cases());
    let mut kb_entries = Vec::new();
    for i in 0..spec.total_cases() {
        let label = classes[rng.gen_range(0..classes.len())].clone();
        let mut words: Vec<String> = keywords[&label].clone();
        for _ in 0..spec.noise_tokens_per_case {
            words.push(noise[rng.gen_range(0..noise.len())].clone());
        }
        if rng.gen_bool(spec.sibling_confusion_rate) {
            let siblings: Vec<&HsCode> = classes
                .iter()
                .filter(|c| **c != label && c.heading_of() == label.heading_of())
                .collect();
            if let Some(sib) = siblings.choose(&mut rng) {
                let kw = &keywords[*sib];
                words.push(kw[rng.gen_range(0..kw.len())].clone());
            }
        }
        words.shuffle(&mut rng);
        let roll: f64 = rng.gen();
        let origin = if roll < spec.contentious_rate {
            if rng.gen_bool(0.5) {
                Origin::Council
            } else {
                Origin::Committee
            }
        } else if roll < spec.contentious_rate + spec.international_rate {
            Origin::International
        } else {
            Origin::General
        };
        let case = DecisionCase::new(
            format!("SYN-{:06}", i + 1),
            start + chrono::Days::new(i as u64),
            words.join(" "),
            label.clone(),
            origin,
        )?;
        if origin.is_contentious() {
            kb_entries.push(KnowledgeBaseEntry {
                case_id: case.id.clone(),
                description: case.description.clone(),
                label: label.clone(),
                evidence: keyword_sentences[&label].iter().cloned().collect::<BTreeSet<_>>(),
            });
        }
        cases.push(case);
    }

    Ok(SyntheticCorpus {
        cases: CaseCollection::new(cases)?,
        kb: KnowledgeBase::new(kb_entries, &manual)?,
        manual,
        keywords,
    })
}
