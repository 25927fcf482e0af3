//! Corpus ingestion, validation, statistics, stratified splitting, and
//! synthetic fixture generation.
//!
//! A corpus is an ordered collection of labeled forum posts. Label 1 means
//! the document describes at least one adverse drug reaction.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::OnceLock;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One forum post with its binary ADR label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub text: String,
    /// 1 = contains an adverse drug reaction, 0 = does not.
    pub label: u8,
    pub topic: String,
    /// ISO 639-1 code, e.g. "de" or "en".
    pub lang: String,
    /// Provenance, e.g. "lifeline", "cadec", "psytar", "synthetic".
    #[serde(default)]
    pub source: String,
}

impl Document {
    fn validate(&self, location: &str) -> Result<()> {
        if self.label > 1 {
            return Err(Error::value(
                location,
                format!("label must be 0 or 1, got {}", self.label),
            ));
        }
        if self.lang.is_empty() {
            return Err(Error::value(location, "lang must be non-empty"));
        }
        if self.id.is_empty() {
            return Err(Error::value(location, "id must be non-empty"));
        }
        if self.text.trim().is_empty() {
            return Err(Error::value(location, "text must be non-empty"));
        }
        Ok(())
    }
}

/// An ordered, id-unique collection of documents.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Corpus {
    name: String,
    documents: Vec<Document>,
}

impl Corpus {
    /// Build a corpus, enforcing id uniqueness and per-document invariants.
    pub fn new(name: impl Into<String>, documents: Vec<Document>) -> Result<Self> {
        let name = name.into();
        let mut seen: HashMap<&str, usize> = HashMap::new();
        for (i, doc) in documents.iter().enumerate() {
            doc.validate(&format!("document {i}"))?;
            if let Some(first) = seen.insert(doc.id.as_str(), i) {
                return Err(Error::DuplicateId {
                    id: doc.id.clone(),
                    first: format!("document {first}"),
                    second: format!("document {i}"),
                });
            }
        }
        Ok(Self { name, documents })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Document> {
        self.documents.iter()
    }

    /// (positives, negatives)
    pub fn label_counts(&self) -> (usize, usize) {
        let pos = self.documents.iter().filter(|d| d.label == 1).count();
        (pos, self.documents.len() - pos)
    }

    pub fn ids(&self) -> BTreeSet<&str> {
        self.documents.iter().map(|d| d.id.as_str()).collect()
    }

    /// Same documents under a different corpus name.
    pub fn renamed(&self, name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            documents: self.documents.clone(),
        }
    }

    /// Write one JSON object per line, UTF-8.
    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut file = File::create(path).map_err(|e| Error::io(path, e))?;
        for doc in &self.documents {
            let line = serde_json::to_string(doc)
                .map_err(|e| Error::Internal(format!("jsonl serialization: {e}")))?;
            writeln!(file, "{line}").map_err(|e| Error::io(path, e))?;
        }
        Ok(())
    }
}

/// Input file format for [`load_corpus`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusFormat {
    Jsonl,
    Csv,
}

impl CorpusFormat {
    /// Guess from the file extension; JSONL is the canonical format.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("csv") => CorpusFormat::Csv,
            _ => CorpusFormat::Jsonl,
        }
    }
}

/// A record that failed validation, with its 1-based line number.
#[derive(Debug, Clone)]
pub struct RecordIssue {
    pub line: usize,
    pub message: String,
}

impl fmt::Display for RecordIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

#[derive(Deserialize)]
struct RawRecord {
    id: Option<String>,
    text: Option<String>,
    label: Option<serde_json::Value>,
    topic: Option<String>,
    lang: Option<String>,
    #[serde(default)]
    source: Option<String>,
}

fn record_to_document(raw: RawRecord, location: &str) -> Result<Document> {
    let missing = |field: &str| Error::schema(location, format!("missing field '{field}'"));
    let label_value = raw.label.ok_or_else(|| missing("label"))?;
    let label = match &label_value {
        serde_json::Value::Number(n) if n.as_u64() == Some(0) => 0u8,
        serde_json::Value::Number(n) if n.as_u64() == Some(1) => 1u8,
        other => {
            return Err(Error::value(
                location,
                format!("label must be 0 or 1, got {other}"),
            ))
        }
    };
    let doc = Document {
        id: raw.id.ok_or_else(|| missing("id"))?,
        text: raw.text.ok_or_else(|| missing("text"))?,
        label,
        topic: raw.topic.ok_or_else(|| missing("topic"))?,
        lang: raw.lang.ok_or_else(|| missing("lang"))?,
        source: raw.source.unwrap_or_default(),
    };
    doc.validate(location)?;
    Ok(doc)
}

/// Load and validate a corpus, failing on the first bad record.
///
/// The error names the offending line. Use [`load_corpus_lenient`] to collect
/// every issue instead.
pub fn load_corpus(path: &Path, format: CorpusFormat) -> Result<Corpus> {
    let (corpus, issues) = load_corpus_lenient(path, format)?;
    if let Some(first) = issues.first() {
        return Err(Error::schema(
            format!("{}:{}", path.display(), first.line),
            first.message.clone(),
        ));
    }
    Ok(corpus)
}

/// Load a corpus keeping valid records, reporting invalid ones by line number.
pub fn load_corpus_lenient(
    path: &Path,
    format: CorpusFormat,
) -> Result<(Corpus, Vec<RecordIssue>)> {
    let name = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("corpus")
        .to_string();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut documents = Vec::new();
    let mut issues = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();

    let mut push = |doc: Result<Document>, line: usize| match doc {
        Ok(doc) => {
            if let Some(first) = seen.get(&doc.id) {
                issues.push(RecordIssue {
                    line,
                    message: format!("duplicate id '{}' (first seen at line {first})", doc.id),
                });
            } else {
                seen.insert(doc.id.clone(), line);
                documents.push(doc);
            }
        }
        Err(e) => issues.push(RecordIssue {
            line,
            message: e.to_string(),
        }),
    };

    match format {
        CorpusFormat::Jsonl => {
            for (idx, line) in BufReader::new(file).lines().enumerate() {
                let line_no = idx + 1;
                let line = line.map_err(|e| Error::io(path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                let location = format!("line {line_no}");
                let doc = serde_json::from_str::<RawRecord>(&line)
                    .map_err(|e| Error::schema(&location, format!("invalid json: {e}")))
                    .and_then(|raw| record_to_document(raw, &location));
                push(doc, line_no);
            }
        }
        CorpusFormat::Csv => {
            let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(file);
            let headers = reader
                .headers()
                .map_err(|e| Error::schema(path.display().to_string(), e.to_string()))?
                .clone();
            for (idx, row) in reader.into_records().enumerate() {
                // header occupies line 1
                let line_no = idx + 2;
                let location = format!("line {line_no}");
                let doc = row
                    .map_err(|e| Error::schema(&location, e.to_string()))
                    .and_then(|row| {
                        let get = |field: &str| -> Option<String> {
                            headers
                                .iter()
                                .position(|h| h == field)
                                .and_then(|i| row.get(i))
                                .map(|s| s.to_string())
                        };
                        let label = get("label").map(|s| match s.trim() {
                            "0" => serde_json::json!(0),
                            "1" => serde_json::json!(1),
                            other => serde_json::Value::String(other.to_string()),
                        });
                        record_to_document(
                            RawRecord {
                                id: get("id"),
                                text: get("text"),
                                label,
                                topic: get("topic"),
                                lang: get("lang"),
                                source: get("source"),
                            },
                            &location,
                        )
                    });
                push(doc, line_no);
            }
        }
    }

    Ok((Corpus { name, documents }, issues))
}

/// Union of several corpora under a new name.
///
/// Ids that collide across inputs are disambiguated by prefixing them with
/// their corpus name ("cadec/x", "psytar/x"); non-colliding ids are kept
/// verbatim so that combining a single corpus is a pure rename. Documents
/// with an empty `source` inherit their corpus name as provenance.
pub fn combine(corpora: &[Corpus], name: &str) -> Result<Corpus> {
    if corpora.is_empty() {
        return Err(Error::Argument("combine needs at least one corpus".into()));
    }
    let mut id_count: HashMap<&str, usize> = HashMap::new();
    for corpus in corpora {
        for doc in corpus.iter() {
            *id_count.entry(doc.id.as_str()).or_default() += 1;
        }
    }
    let mut documents = Vec::new();
    for corpus in corpora {
        for doc in corpus.iter() {
            let mut doc = doc.clone();
            if id_count[doc.id.as_str()] > 1 {
                doc.id = format!("{}/{}", corpus.name(), doc.id);
            }
            if doc.source.is_empty() {
                doc.source = corpus.name().to_string();
            }
            documents.push(doc);
        }
    }
    Corpus::new(name, documents)
}

/// Parameters of a label-stratified train/test split.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SplitSpec {
    /// Fraction of each label assigned to the test side, in (0, 1).
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            test_fraction: 0.2,
            seed: 0,
        }
    }
}

/// Deterministic label-stratified split into (train_dev, test).
///
/// Per label, the test side receives ceil(test_fraction * count) documents:
/// rounding up is what yields 21 test positives from 101 at 0.2. Document
/// order within each side follows the input corpus.
pub fn stratified_split(corpus: &Corpus, spec: &SplitSpec) -> Result<(Corpus, Corpus)> {
    if !(spec.test_fraction > 0.0 && spec.test_fraction < 1.0) {
        return Err(Error::Argument(format!(
            "test_fraction must be in (0, 1), got {}",
            spec.test_fraction
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut test_ids: HashSet<&str> = HashSet::new();
    for label in [0u8, 1u8] {
        let mut indices: Vec<usize> = corpus
            .iter()
            .enumerate()
            .filter(|(_, d)| d.label == label)
            .map(|(i, _)| i)
            .collect();
        if indices.is_empty() {
            return Err(Error::Stratification {
                label,
                corpus: corpus.name().to_string(),
            });
        }
        indices.shuffle(&mut rng);
        let n_test = (spec.test_fraction * indices.len() as f64).ceil() as usize;
        for &i in indices.iter().take(n_test) {
            test_ids.insert(corpus.documents()[i].id.as_str());
        }
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for doc in corpus.iter() {
        if test_ids.contains(doc.id.as_str()) {
            test.push(doc.clone());
        } else {
            train.push(doc.clone());
        }
    }
    Ok((
        Corpus {
            name: format!("{}/train_dev", corpus.name()),
            documents: train,
        },
        Corpus {
            name: format!("{}/test", corpus.name()),
            documents: test,
        },
    ))
}

/// Which side of the 80/20 split a document landed on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitSide {
    TrainDev,
    Test,
}

impl SplitSide {
    pub fn as_str(&self) -> &'static str {
        match self {
            SplitSide::TrainDev => "train_dev",
            SplitSide::Test => "test",
        }
    }
}

/// Token/sentence averages over one group of documents.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct GroupSummary {
    pub n_docs: usize,
    pub avg_tokens: f64,
    pub avg_sentences: f64,
}

/// Descriptive statistics of a corpus, optionally broken down by split side.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusStats {
    pub n_total: usize,
    pub n_pos: usize,
    pub n_neg: usize,
    /// Negatives per positive (the "1 : N" imbalance), None when n_pos is 0.
    pub pos_neg_ratio: Option<f64>,
    /// topic -> split name ("train_dev" / "test", or "all") -> count
    pub per_topic_counts: BTreeMap<String, BTreeMap<String, usize>>,
    pub avg_tokens: f64,
    pub avg_sentences: f64,
    /// Per split-side token/sentence averages, when a split map was given.
    pub per_split: BTreeMap<String, GroupSummary>,
    pub avg_tokens_per_label: BTreeMap<u8, f64>,
    /// label -> histogram of whitespace-token counts (bin lower bound -> count).
    pub token_length_histogram_per_label: BTreeMap<u8, BTreeMap<usize, usize>>,
}

/// Histogram bin width for token-length distributions.
pub const HISTOGRAM_BIN_WIDTH: usize = 10;

fn sentence_splitter() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"[.!?]+(\s+|$)").expect("sentence splitter regex"))
}

/// Whitespace token count.
pub fn count_tokens(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Sentence count heuristic: segments ending in `.`, `!` or `?` followed by
/// whitespace or end of text. Non-empty text counts as at least one sentence.
pub fn count_sentences(text: &str) -> usize {
    if text.trim().is_empty() {
        return 0;
    }
    let n = sentence_splitter()
        .split(text)
        .filter(|seg| !seg.trim().is_empty())
        .count();
    n.max(1)
}

/// Compute [`CorpusStats`], optionally attributing documents to split sides.
pub fn compute_stats(
    corpus: &Corpus,
    split_labels: Option<&BTreeMap<String, SplitSide>>,
) -> CorpusStats {
    let (n_pos, n_neg) = corpus.label_counts();
    let mut per_topic: BTreeMap<String, BTreeMap<String, usize>> = BTreeMap::new();
    let mut per_split_acc: BTreeMap<String, (usize, usize, usize)> = BTreeMap::new();
    let mut token_sum = 0usize;
    let mut sentence_sum = 0usize;
    let mut label_token_sum: BTreeMap<u8, (usize, usize)> = BTreeMap::new();
    let mut hist: BTreeMap<u8, BTreeMap<usize, usize>> = BTreeMap::new();

    for doc in corpus.iter() {
        let tokens = count_tokens(&doc.text);
        let sentences = count_sentences(&doc.text);
        token_sum += tokens;
        sentence_sum += sentences;
        let split_name = split_labels
            .and_then(|m| m.get(&doc.id))
            .map(|s| s.as_str())
            .unwrap_or("all")
            .to_string();
        *per_topic
            .entry(doc.topic.clone())
            .or_default()
            .entry(split_name.clone())
            .or_default() += 1;
        let acc = per_split_acc.entry(split_name).or_default();
        acc.0 += 1;
        acc.1 += tokens;
        acc.2 += sentences;
        let lt = label_token_sum.entry(doc.label).or_default();
        lt.0 += 1;
        lt.1 += tokens;
        let bin = (tokens / HISTOGRAM_BIN_WIDTH) * HISTOGRAM_BIN_WIDTH;
        *hist.entry(doc.label).or_default().entry(bin).or_default() += 1;
    }

    let n = corpus.len();
    let per_split = per_split_acc
        .into_iter()
        .map(|(name, (docs, tok, sent))| {
            (
                name,
                GroupSummary {
                    n_docs: docs,
                    avg_tokens: tok as f64 / docs.max(1) as f64,
                    avg_sentences: sent as f64 / docs.max(1) as f64,
                },
            )
        })
        .collect();
    CorpusStats {
        n_total: n,
        n_pos,
        n_neg,
        pos_neg_ratio: (n_pos > 0).then(|| n_neg as f64 / n_pos as f64),
        per_topic_counts: per_topic,
        avg_tokens: token_sum as f64 / n.max(1) as f64,
        avg_sentences: sentence_sum as f64 / n.max(1) as f64,
        per_split,
        avg_tokens_per_label: label_token_sum
            .into_iter()
            .map(|(l, (docs, tok))| (l, tok as f64 / docs.max(1) as f64))
            .collect(),
        token_length_histogram_per_label: hist,
    }
}

/// The bundled synthetic medication lexicon (invented names, for tests/demos).
pub fn builtin_drug_names() -> &'static [String] {
    static NAMES: OnceLock<Vec<String>> = OnceLock::new();
    NAMES.get_or_init(|| {
        include_str!("../assets/synthetic_medications.txt")
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(str::to_string)
            .collect()
    })
}

const FILLER_DE: &[&str] = &[
    "ich", "habe", "seit", "wochen", "immer", "wieder", "beschwerden", "und", "weiss", "nicht",
    "was", "das", "sein", "kann", "mein", "arzt", "meinte", "es", "waere", "alles", "in",
    "ordnung", "aber", "mir", "geht", "nicht", "gut", "hat", "jemand", "von", "euch",
    "erfahrung", "damit", "gemacht", "bin", "fuer", "jeden", "tipp", "dankbar", "liebe",
    "gruesse", "an", "alle", "hier", "im", "forum", "vielleicht", "hilft", "ja", "doch",
    "noch", "etwas", "anderes", "man", "sich", "dann", "auch", "erst", "einmal", "wirklich",
];

const FILLER_EN: &[&str] = &[
    "i", "have", "been", "having", "trouble", "for", "weeks", "now", "and", "my", "doctor",
    "says", "everything", "is", "fine", "but", "it", "does", "not", "feel", "that", "way",
    "has", "anyone", "here", "had", "a", "similar", "experience", "with", "this", "would",
    "really", "appreciate", "any", "advice", "thanks", "in", "advance", "to", "everyone",
    "on", "forum", "maybe", "something", "else", "going", "still", "hoping", "things",
    "get", "better", "soon", "just", "wanted", "share", "what", "happened", "me",
];

const EFFECTS_DE: &[&str] = &[
    "starke kopfschmerzen",
    "uebelkeit",
    "schwindel",
    "hautausschlag",
    "schlafstoerungen",
    "herzrasen",
    "magenkraempfe",
    "sehstoerungen",
];

const EFFECTS_EN: &[&str] = &[
    "a pounding headache",
    "constant nausea",
    "dizzy spells",
    "a skin rash",
    "severe insomnia",
    "heart palpitations",
    "stomach cramps",
    "blurred vision",
];

const WH_TERMS: &[&str] = &[
    "wechseljahre",
    "wj",
    "zyklus",
    "periode",
    "hitzewallungen",
    "eisprung",
];

/// Generate a deterministic synthetic corpus with the requested imbalance.
///
/// Positive documents always contain at least one medication name from the
/// bundled synthetic lexicon plus an effect phrase; token lengths are drawn
/// so that positives are longer on average than negatives. `topic_weights`
/// must sum to 1 within 1e-6.
pub fn generate_synthetic(
    n_pos: usize,
    n_neg: usize,
    topic_weights: &BTreeMap<String, f64>,
    lang: &str,
    seed: u64,
) -> Result<Corpus> {
    let weight_sum: f64 = topic_weights.values().sum();
    if (weight_sum - 1.0).abs() > 1e-6 {
        return Err(Error::Argument(format!(
            "topic weights must sum to 1 (got {weight_sum})"
        )));
    }
    if topic_weights.values().any(|&w| w < 0.0) {
        return Err(Error::Argument("topic weights must be non-negative".into()));
    }
    if lang.is_empty() {
        return Err(Error::Argument("lang must be non-empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let topics: Vec<(&str, f64)> = topic_weights
        .iter()
        .map(|(t, &w)| (t.as_str(), w))
        .collect();
    let mut documents = Vec::with_capacity(n_pos + n_neg);
    for i in 0..(n_pos + n_neg) {
        let label = if i < n_pos { 1 } else { 0 };
        let topic = pick_topic(&topics, &mut rng);
        let text = synth_text(label, topic, lang, &mut rng);
        documents.push(Document {
            id: format!("synth-{lang}{seed}-{i:05}"),
            text,
            label,
            topic: topic.to_string(),
            lang: lang.to_string(),
            source: "synthetic".to_string(),
        });
    }
    documents.shuffle(&mut rng);
    Corpus::new(format!("synthetic-{lang}-{seed}"), documents)
}

fn pick_topic<'a>(topics: &[(&'a str, f64)], rng: &mut ChaCha8Rng) -> &'a str {
    let roll: f64 = rng.gen();
    let mut acc = 0.0;
    for (topic, w) in topics {
        acc += w;
        if roll < acc {
            return topic;
        }
    }
    topics.last().map(|(t, _)| *t).unwrap_or("general")
}

fn synth_text(label: u8, topic: &str, lang: &str, rng: &mut ChaCha8Rng) -> String {
    let german = lang == "de";
    let filler = if german { FILLER_DE } else { FILLER_EN };
    let target = if label == 1 {
        rng.gen_range(40..=280)
    } else {
        rng.gen_range(8..=200)
    };
    let mut words: Vec<String> = Vec::with_capacity(target + 16);
    while words.len() < target {
        let len = rng.gen_range(5..=12usize);
        for _ in 0..len {
            words.push(filler[rng.gen_range(0..filler.len())].to_string());
        }
        // occasional maskable entities keep the normalizer honest
        match rng.gen_range(0..20) {
            0 => words.push(format!("http://forum.example/t/{}", rng.gen_range(100..9999))),
            1 => words.push(format!(
                "{:02}.{:02}.{}",
                rng.gen_range(1..=28),
                rng.gen_range(1..=12),
                rng.gen_range(2015..=2021)
            )),
            _ => {}
        }
        let last = words.pop().map(|w| w + " .").unwrap_or_else(|| ".".into());
        words.push(last);
    }
    if topic == "women's health" && rng.gen_bool(0.6) {
        let term = WH_TERMS[rng.gen_range(0..WH_TERMS.len())];
        let at = rng.gen_range(0..=words.len());
        words.insert(at, term.to_string());
    }
    let drugs = builtin_drug_names();
    if label == 1 {
        let drug = &drugs[rng.gen_range(0..drugs.len())];
        let effect = if german {
            EFFECTS_DE[rng.gen_range(0..EFFECTS_DE.len())]
        } else {
            EFFECTS_EN[rng.gen_range(0..EFFECTS_EN.len())]
        };
        let sentence = if german {
            format!("nach der einnahme von {drug} habe ich {effect} bekommen .")
        } else {
            format!("after taking {drug} i developed {effect} .")
        };
        let at = rng.gen_range(0..=words.len());
        words.insert(at, sentence);
    } else if rng.gen_bool(0.25) {
        // some negatives mention a drug in a positive light
        let drug = &drugs[rng.gen_range(0..drugs.len())];
        let sentence = if german {
            format!("{drug} hat mir bisher sehr gut geholfen .")
        } else {
            format!("{drug} has worked really well for me so far .")
        };
        let at = rng.gen_range(0..=words.len());
        words.insert(at, sentence);
    }
    words.join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(id: &str, label: u8) -> Document {
        Document {
            id: id.into(),
            text: format!("text of {id} with a few words ."),
            label,
            topic: "general".into(),
            lang: "de".into(),
            source: "test".into(),
        }
    }

    fn weights() -> BTreeMap<String, f64> {
        BTreeMap::from([
            ("women's health".to_string(), 0.76),
            ("skin".to_string(), 0.12),
            ("heart".to_string(), 0.12),
        ])
    }

    #[test]
    fn load_jsonl_happy_path() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, r#"{{"id":"a","text":"hallo welt heute","label":0,"topic":"skin","lang":"de","source":"t"}}"#).unwrap();
        writeln!(f, r#"{{"id":"b","text":"noch ein beitrag","label":1,"topic":"skin","lang":"de","source":"t"}}"#).unwrap();
        writeln!(f, r#"{{"id":"c","text":"und ein dritter","label":0,"topic":"heart","lang":"de","source":"t"}}"#).unwrap();
        let corpus = load_corpus(f.path(), CorpusFormat::Jsonl).unwrap();
        assert_eq!(corpus.len(), 3);
        assert_eq!(corpus.label_counts(), (1, 2));
    }

    #[test]
    fn load_rejects_bad_label_with_line() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, r#"{{"id":"a","text":"ok text","label":0,"topic":"t","lang":"de"}}"#).unwrap();
        writeln!(f, r#"{{"id":"b","text":"bad label","label":2,"topic":"t","lang":"de"}}"#).unwrap();
        let err = load_corpus(f.path(), CorpusFormat::Jsonl).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("2"), "error should cite line 2: {msg}");
        assert!(msg.contains("label"), "error should name the label: {msg}");
    }

    #[test]
    fn load_reports_missing_field_by_name() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, r#"{{"id":"a","label":0,"topic":"t","lang":"de"}}"#).unwrap();
        let err = load_corpus(f.path(), CorpusFormat::Jsonl).unwrap_err();
        assert!(err.to_string().contains("text"), "{err}");
    }

    #[test]
    fn load_reports_duplicate_ids() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, r#"{{"id":"a","text":"erste fassung hier","label":0,"topic":"t","lang":"de"}}"#).unwrap();
        writeln!(f, r#"{{"id":"a","text":"zweite fassung hier","label":1,"topic":"t","lang":"de"}}"#).unwrap();
        let (corpus, issues) = load_corpus_lenient(f.path(), CorpusFormat::Jsonl).unwrap();
        assert_eq!(corpus.len(), 1);
        assert_eq!(issues.len(), 1);
        assert!(issues[0].message.contains("duplicate id"));
    }

    #[test]
    fn load_csv_round_trip() {
        let mut f = tempfile::NamedTempFile::with_suffix(".csv").unwrap();
        writeln!(f, "id,text,label,topic,lang,source").unwrap();
        writeln!(f, "a,\"hallo, welt heute\",1,skin,de,t").unwrap();
        writeln!(f, "b,zweiter beitrag text,0,heart,de,t").unwrap();
        let corpus = load_corpus(f.path(), CorpusFormat::Csv).unwrap();
        assert_eq!(corpus.len(), 2);
        assert_eq!(corpus.documents()[0].text, "hallo, welt heute");
    }

    #[test]
    fn combine_counts_match_source_corpora() {
        let cadec = generate_synthetic(1000, 250, &weights(), "en", 11).unwrap();
        let cadec = cadec.renamed("cadec");
        let psytar = generate_synthetic(683, 204, &weights(), "en", 12).unwrap();
        let psytar = psytar.renamed("psytar");
        let combined = combine(&[cadec, psytar], "english").unwrap();
        assert_eq!(combined.len(), 2137);
        assert_eq!(combined.label_counts(), (1683, 454));
    }

    #[test]
    fn combine_single_corpus_is_rename() {
        let c = Corpus::new("orig", vec![doc("a", 0), doc("b", 1)]).unwrap();
        let combined = combine(std::slice::from_ref(&c), "renamed").unwrap();
        assert_eq!(combined.name(), "renamed");
        assert_eq!(combined.documents(), c.documents());
    }

    #[test]
    fn combine_prefixes_colliding_ids() {
        let a = Corpus::new("cadec", vec![doc("x", 0), doc("y", 1)]).unwrap();
        let b = Corpus::new("psytar", vec![doc("x", 1)]).unwrap();
        let combined = combine(&[a, b], "both").unwrap();
        let ids = combined.ids();
        assert!(ids.contains("cadec/x"));
        assert!(ids.contains("psytar/x"));
        assert!(ids.contains("y"));
        assert_eq!(combined.len(), 3);
    }

    #[test]
    fn combine_empty_list_is_an_error() {
        assert!(matches!(combine(&[], "x"), Err(Error::Argument(_))));
    }

    #[test]
    fn split_yields_21_test_positives_from_101() {
        let corpus = generate_synthetic(101, 4068, &weights(), "de", 7).unwrap();
        for seed in [0u64, 1, 42, 1234] {
            let (train, test) = stratified_split(
                &corpus,
                &SplitSpec {
                    test_fraction: 0.2,
                    seed,
                },
            )
            .unwrap();
            assert_eq!(test.label_counts().0, 21, "seed {seed}");
            assert_eq!(train.label_counts().0, 80, "seed {seed}");
            assert_eq!(test.len(), 835);
        }
    }

    #[test]
    fn split_exact_arithmetic_small_corpus() {
        let docs: Vec<Document> = (0..10).map(|i| doc(&format!("d{i}"), (i % 2) as u8)).collect();
        let corpus = Corpus::new("small", docs).unwrap();
        let (train, test) = stratified_split(&corpus, &SplitSpec::default()).unwrap();
        assert_eq!(test.label_counts(), (1, 1));
        assert_eq!(train.len(), 8);
    }

    #[test]
    fn split_is_a_partition() {
        let corpus = generate_synthetic(30, 300, &weights(), "de", 3).unwrap();
        let (train, test) = stratified_split(&corpus, &SplitSpec::default()).unwrap();
        let train_ids = train.ids();
        let test_ids = test.ids();
        assert!(train_ids.is_disjoint(&test_ids));
        let mut union: BTreeSet<&str> = train_ids;
        union.extend(test_ids);
        assert_eq!(union, corpus.ids());
    }

    #[test]
    fn split_deterministic_per_seed() {
        let corpus = generate_synthetic(20, 100, &weights(), "de", 5).unwrap();
        let spec = SplitSpec {
            test_fraction: 0.2,
            seed: 9,
        };
        let (a1, b1) = stratified_split(&corpus, &spec).unwrap();
        let (a2, b2) = stratified_split(&corpus, &spec).unwrap();
        assert_eq!(a1, a2);
        assert_eq!(b1, b2);
    }

    #[test]
    fn split_errors_on_single_class_corpus() {
        let corpus = Corpus::new("onesided", vec![doc("a", 0), doc("b", 0)]).unwrap();
        assert!(matches!(
            stratified_split(&corpus, &SplitSpec::default()),
            Err(Error::Stratification { label: 1, .. })
        ));
    }

    #[test]
    fn stats_single_document() {
        let corpus = Corpus::new(
            "one",
            vec![Document {
                id: "a".into(),
                text: "a b c".into(),
                label: 0,
                topic: "t".into(),
                lang: "de".into(),
                source: "s".into(),
            }],
        )
        .unwrap();
        let stats = compute_stats(&corpus, None);
        assert_eq!(stats.avg_tokens, 3.0);
        assert_eq!(stats.avg_sentences, 1.0);
        assert_eq!(stats.n_total, 1);
    }

    #[test]
    fn sentence_heuristic() {
        assert_eq!(count_sentences("Hallo. Wie geht es? Gut!"), 3);
        assert_eq!(count_sentences("Kein satzzeichen hier"), 1);
        assert_eq!(count_sentences("Am 12.03.2020 war es soweit."), 1);
        assert_eq!(count_sentences("Erster satz. Zweiter satz folgt"), 2);
        assert_eq!(count_sentences(""), 0);
    }

    #[test]
    fn stats_totals_and_topic_sums() {
        let corpus = generate_synthetic(40, 160, &weights(), "de", 2).unwrap();
        let (train, test) = stratified_split(&corpus, &SplitSpec::default()).unwrap();
        let mut split_map = BTreeMap::new();
        for d in train.iter() {
            split_map.insert(d.id.clone(), SplitSide::TrainDev);
        }
        for d in test.iter() {
            split_map.insert(d.id.clone(), SplitSide::Test);
        }
        let stats = compute_stats(&corpus, Some(&split_map));
        assert_eq!(stats.n_total, 200);
        assert_eq!(stats.n_pos + stats.n_neg, stats.n_total);
        let train_total: usize = stats
            .per_topic_counts
            .values()
            .filter_map(|m| m.get("train_dev"))
            .sum();
        let test_total: usize = stats
            .per_topic_counts
            .values()
            .filter_map(|m| m.get("test"))
            .sum();
        assert_eq!(train_total, train.len());
        assert_eq!(test_total, test.len());
        let hist_total: usize = stats
            .token_length_histogram_per_label
            .values()
            .flat_map(|h| h.values())
            .sum();
        assert_eq!(hist_total, 200);
    }

    #[test]
    fn synthetic_ratio_and_imbalance() {
        let corpus = generate_synthetic(101, 4068, &weights(), "de", 7).unwrap();
        assert_eq!(corpus.label_counts(), (101, 4068));
        let stats = compute_stats(&corpus, None);
        let ratio = stats.pos_neg_ratio.unwrap();
        assert!((ratio - 40.3).abs() < 0.05, "ratio {ratio}");
    }

    #[test]
    fn synthetic_positives_longer_on_average() {
        let corpus = generate_synthetic(300, 300, &weights(), "de", 1).unwrap();
        let stats = compute_stats(&corpus, None);
        let pos = stats.avg_tokens_per_label[&1];
        let neg = stats.avg_tokens_per_label[&0];
        assert!(pos > neg, "pos {pos} <= neg {neg}");
    }

    #[test]
    fn synthetic_positives_contain_a_drug_name() {
        let corpus = generate_synthetic(50, 10, &weights(), "en", 4).unwrap();
        let drugs = builtin_drug_names();
        for doc in corpus.iter().filter(|d| d.label == 1) {
            let found = doc
                .text
                .split_whitespace()
                .any(|tok| drugs.iter().any(|d| d == tok));
            assert!(found, "positive doc {} lacks a drug token", doc.id);
        }
    }

    #[test]
    fn synthetic_all_negative() {
        let corpus = generate_synthetic(0, 5, &weights(), "de", 4).unwrap();
        assert_eq!(corpus.label_counts(), (0, 5));
    }

    #[test]
    fn synthetic_is_deterministic() {
        let a = generate_synthetic(20, 50, &weights(), "de", 99).unwrap();
        let b = generate_synthetic(20, 50, &weights(), "de", 99).unwrap();
        assert_eq!(a, b);
        let json_a = serde_json::to_string(&a).unwrap();
        let json_b = serde_json::to_string(&b).unwrap();
        assert_eq!(json_a, json_b);
    }

    #[test]
    fn synthetic_rejects_bad_weights() {
        let mut bad = weights();
        bad.insert("extra".into(), 0.5);
        assert!(matches!(
            generate_synthetic(1, 1, &bad, "de", 0),
            Err(Error::Argument(_))
        ));
    }
}
