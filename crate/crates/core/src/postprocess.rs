//! Rule-based label correction with curated word lists.
//!
//! Two independent rules, both only ever flipping positive predictions to
//! negative: the medication rule flips positives that mention NO drug name,
//! the women's-health rule flips positives that DO mention a term from that
//! list. Matching is case-insensitive on whole tokens (edge punctuation
//! stripped), with contiguous multi-word phrase support; substrings inside
//! German compounds deliberately do not match.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Document;
use crate::error::{Error, Result};
use crate::metrics::{confusion, report, MetricsReport};

/// Which correction rule produced an outcome.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleKind {
    MedPresence,
    WomensHealth,
}

impl RuleKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            RuleKind::MedPresence => "med_presence",
            RuleKind::WomensHealth => "womens_health",
        }
    }
}

/// A normalized term list with whole-token matching.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lexicon {
    name: String,
    /// Each term as its normalized token sequence.
    terms: Vec<Vec<String>>,
    max_term_tokens: usize,
}

fn normalize_token(token: &str) -> String {
    token
        .trim_matches(|c: char| !c.is_alphanumeric())
        .to_lowercase()
}

fn normalize_term(term: &str) -> Vec<String> {
    term.split_whitespace()
        .map(normalize_token)
        .filter(|t| !t.is_empty())
        .collect()
}

impl Lexicon {
    /// Build from raw terms; lowercases, trims, and deduplicates.
    pub fn from_terms<I, S>(name: impl Into<String>, terms: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let name = name.into();
        let mut normalized: Vec<Vec<String>> = terms
            .into_iter()
            .map(|t| normalize_term(t.as_ref()))
            .filter(|t| !t.is_empty())
            .collect();
        normalized.sort();
        normalized.dedup();
        if normalized.is_empty() {
            return Err(Error::value(
                format!("lexicon '{name}'"),
                "no terms after normalization",
            ));
        }
        let max_term_tokens = normalized.iter().map(Vec::len).max().unwrap_or(1);
        Ok(Self {
            name,
            terms: normalized,
            max_term_tokens,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// True when any term occurs in the text as a whole-token (phrase) match.
    pub fn matches(&self, text: &str) -> bool {
        let tokens: Vec<String> = text.split_whitespace().map(normalize_token).collect();
        if tokens.is_empty() {
            return false;
        }
        for window_len in 1..=self.max_term_tokens.min(tokens.len()) {
            for window in tokens.windows(window_len) {
                if self
                    .terms
                    .binary_search_by(|t| t.as_slice().cmp(window))
                    .is_ok()
                {
                    return true;
                }
            }
        }
        false
    }
}

/// Load a lexicon: one term per line, `#` starts a comment line.
pub fn load_lexicon(path: &Path, name: &str) -> Result<Lexicon> {
    let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let terms = content
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'));
    Lexicon::from_terms(name, terms).map_err(|_| {
        Error::value(
            path.display().to_string(),
            format!("lexicon '{name}' has no usable terms"),
        )
    })
}

/// The bundled synthetic medication list (invented names for tests/demos).
pub fn builtin_medication_lexicon() -> Lexicon {
    Lexicon::from_terms(
        "synthetic_medications",
        include_str!("../assets/synthetic_medications.txt")
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#')),
    )
    .expect("bundled medication lexicon is non-empty")
}

/// The bundled German women's-health term list.
pub fn builtin_womens_health_lexicon() -> Lexicon {
    Lexicon::from_terms(
        "womens_health_de",
        include_str!("../assets/womens_health_de.txt")
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#')),
    )
    .expect("bundled women's-health lexicon is non-empty")
}

/// Result of applying one rule to one document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleOutcome {
    pub doc_id: String,
    pub original: u8,
    pub corrected: u8,
    pub rule: RuleKind,
    pub flipped: bool,
}

/// Flip a positive prediction to negative when NO medication term occurs.
pub fn apply_med_rule(doc: &Document, pred: u8, lex: &Lexicon) -> RuleOutcome {
    let flip = pred == 1 && !lex.matches(&doc.text);
    RuleOutcome {
        doc_id: doc.id.clone(),
        original: pred,
        corrected: if flip { 0 } else { pred },
        rule: RuleKind::MedPresence,
        flipped: flip,
    }
}

/// Flip a positive prediction to negative when ANY women's-health term occurs.
///
/// Note the condition direction is the opposite of the medication rule.
pub fn apply_wh_rule(doc: &Document, pred: u8, lex: &Lexicon) -> RuleOutcome {
    let flip = pred == 1 && lex.matches(&doc.text);
    RuleOutcome {
        doc_id: doc.id.clone(),
        original: pred,
        corrected: if flip { 0 } else { pred },
        rule: RuleKind::WomensHealth,
        flipped: flip,
    }
}

fn apply_rule(doc: &Document, pred: u8, rule: RuleKind, lex: &Lexicon) -> RuleOutcome {
    match rule {
        RuleKind::MedPresence => apply_med_rule(doc, pred, lex),
        RuleKind::WomensHealth => apply_wh_rule(doc, pred, lex),
    }
}

/// Per-rule corrected predictions and their metric reports.
#[derive(Debug, Clone)]
pub struct RuleEvaluation {
    pub report: MetricsReport,
    pub outcomes: Vec<RuleOutcome>,
    pub flips: usize,
}

/// Score each rule independently against the raw (post-voting) predictions.
///
/// `preds` maps doc id to the voted label; every id must refer to a document
/// in `gold`. Rules are never chained: each starts from the raw predictions.
pub fn evaluate_rules(
    preds: &[(String, u8)],
    gold: &[Document],
    lexicons: &BTreeMap<RuleKind, Lexicon>,
) -> Result<BTreeMap<RuleKind, RuleEvaluation>> {
    let by_id: BTreeMap<&str, &Document> =
        gold.iter().map(|d| (d.id.as_str(), d)).collect();
    let mut docs = Vec::with_capacity(preds.len());
    for (id, _) in preds {
        match by_id.get(id.as_str()) {
            Some(doc) => docs.push(*doc),
            None => {
                return Err(Error::Alignment(format!(
                    "prediction for unknown document id '{id}'"
                )))
            }
        }
    }
    let gold_labels: Vec<u8> = docs.iter().map(|d| d.label).collect();
    let mut result = BTreeMap::new();
    for (&rule, lex) in lexicons {
        let outcomes: Vec<RuleOutcome> = preds
            .iter()
            .zip(&docs)
            .map(|((_, pred), doc)| apply_rule(doc, *pred, rule, lex))
            .collect();
        let corrected: Vec<u8> = outcomes.iter().map(|o| o.corrected).collect();
        let cm = confusion(&corrected, &gold_labels)?;
        let flips = outcomes.iter().filter(|o| o.flipped).count();
        result.insert(
            rule,
            RuleEvaluation {
                report: report(&cm),
                outcomes,
                flips,
            },
        );
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::io::Write;

    fn doc(id: &str, text: &str, label: u8) -> Document {
        Document {
            id: id.into(),
            text: text.into(),
            label,
            topic: "t".into(),
            lang: "de".into(),
            source: "s".into(),
        }
    }

    #[test]
    fn load_dedupes_after_normalization() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "Aspirin").unwrap();
        writeln!(f, "aspirin").unwrap();
        let lex = load_lexicon(f.path(), "meds").unwrap();
        assert_eq!(lex.len(), 1);
    }

    #[test]
    fn load_skips_comment_lines() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "#comment").unwrap();
        writeln!(f, "ibuprofen").unwrap();
        let lex = load_lexicon(f.path(), "meds").unwrap();
        assert_eq!(lex.len(), 1);
        assert!(lex.matches("nehme ibuprofen taeglich"));
    }

    #[test]
    fn load_rejects_empty_lexicon() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "# only a comment").unwrap();
        assert!(load_lexicon(f.path(), "empty").is_err());
    }

    #[test]
    fn bundled_lexicons_load() {
        assert_eq!(builtin_medication_lexicon().len(), 500);
        assert!(builtin_womens_health_lexicon().len() > 10);
    }

    #[test]
    fn matching_is_whole_token_case_insensitive() {
        let lex = Lexicon::from_terms("meds", ["Ibuprofen"]).unwrap();
        assert!(lex.matches("Nehme IBUPROFEN, seit gestern"));
        assert!(lex.matches("ibuprofen hilft"));
        // no substring matches inside compounds
        assert!(!lex.matches("ibuprofentabletten sind teuer"));
    }

    #[test]
    fn multi_word_phrases_match_contiguously() {
        let lex = Lexicon::from_terms("wh", ["hormon ersatz therapie"]).unwrap();
        assert!(lex.matches("meine Hormon Ersatz Therapie beginnt"));
        assert!(!lex.matches("hormon therapie ersatz"));
    }

    #[test]
    fn med_rule_keeps_positives_with_drug_mention() {
        let lex = Lexicon::from_terms("meds", ["ibuprofen"]).unwrap();
        let d = doc("a", "nehme ibuprofen und mir ist schlecht", 1);
        let out = apply_med_rule(&d, 1, &lex);
        assert_eq!(out.corrected, 1);
        assert!(!out.flipped);
    }

    #[test]
    fn med_rule_flips_positives_without_drug_mention() {
        let lex = Lexicon::from_terms("meds", ["ibuprofen"]).unwrap();
        let d = doc("a", "mir ist einfach nur schlecht", 1);
        let out = apply_med_rule(&d, 1, &lex);
        assert_eq!(out.corrected, 0);
        assert!(out.flipped);
    }

    #[test]
    fn rules_never_touch_negative_predictions() {
        let med = Lexicon::from_terms("meds", ["ibuprofen"]).unwrap();
        let wh = Lexicon::from_terms("wh", ["wj"]).unwrap();
        let d = doc("a", "in den wj ohne ibuprofen", 0);
        assert_eq!(apply_med_rule(&d, 0, &med).corrected, 0);
        assert_eq!(apply_wh_rule(&d, 0, &wh).corrected, 0);
    }

    #[test]
    fn wh_rule_flips_on_list_term() {
        let lex = builtin_womens_health_lexicon();
        let d = doc("a", "Seit ich in den WJ bin, geht es mir schlecht", 1);
        let out = apply_wh_rule(&d, 1, &lex);
        assert_eq!(out.corrected, 0);
        assert!(out.flipped);
        let d2 = doc("b", "ganz anderes thema hier", 1);
        assert_eq!(apply_wh_rule(&d2, 1, &lex).corrected, 1);
    }

    #[test]
    fn rules_are_idempotent_and_monotone() {
        let med = Lexicon::from_terms("meds", ["alphadol", "betazin"]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let vocab = ["alphadol", "betazin", "kopfweh", "magen", "tee", "schlaf"];
        for i in 0..500 {
            let n = rng.gen_range(1..12);
            let text: Vec<&str> = (0..n).map(|_| vocab[rng.gen_range(0..vocab.len())]).collect();
            let d = doc(&format!("d{i}"), &text.join(" "), rng.gen_range(0..2));
            let pred: u8 = rng.gen_range(0..2);
            let once = apply_med_rule(&d, pred, &med);
            let twice = apply_med_rule(&d, once.corrected, &med);
            assert_eq!(once.corrected, twice.corrected);
            assert!(once.corrected <= pred, "rule flipped 0 -> 1");
            if once.flipped {
                assert_eq!((once.original, once.corrected), (1, 0));
            }
        }
    }

    #[test]
    fn evaluate_rules_equal_raw_report_when_nothing_flips() {
        let med = Lexicon::from_terms("meds", ["alphadol"]).unwrap();
        let docs = vec![
            doc("a", "alphadol macht muede", 1),
            doc("b", "alles bestens heute", 0),
        ];
        let preds = vec![("a".to_string(), 1u8), ("b".to_string(), 0u8)];
        let lexicons = BTreeMap::from([(RuleKind::MedPresence, med)]);
        let evals = evaluate_rules(&preds, &docs, &lexicons).unwrap();
        let eval = &evals[&RuleKind::MedPresence];
        assert_eq!(eval.flips, 0);
        let raw = report(&confusion(&[1, 0], &[1, 0]).unwrap());
        assert_eq!(eval.report.values(), raw.values());
    }

    #[test]
    fn med_rule_raises_precision_when_false_positives_lack_drugs() {
        let med = Lexicon::from_terms("meds", ["alphadol"]).unwrap();
        // 2 true positives that mention the drug, 3 false positives without it.
        let mut docs = vec![
            doc("tp1", "alphadol gab mir kopfschmerzen", 1),
            doc("tp2", "seit alphadol ist mir uebel", 1),
        ];
        let mut preds = vec![("tp1".to_string(), 1u8), ("tp2".to_string(), 1u8)];
        for i in 0..3 {
            let id = format!("fp{i}");
            docs.push(doc(&id, "mir geht es ohne grund schlecht", 0));
            preds.push((id, 1));
        }
        for i in 0..10 {
            let id = format!("tn{i}");
            docs.push(doc(&id, "alles in ordnung bei mir", 0));
            preds.push((id, 0));
        }
        let lexicons = BTreeMap::from([(RuleKind::MedPresence, med)]);
        let evals = evaluate_rules(&preds, &docs, &lexicons).unwrap();
        let eval = &evals[&RuleKind::MedPresence];
        let raw_labels: Vec<u8> = preds.iter().map(|(_, p)| *p).collect();
        let gold: Vec<u8> = docs.iter().map(|d| d.label).collect();
        let raw = report(&confusion(&raw_labels, &gold).unwrap());
        assert!(eval.report.p1 > raw.p1);
        assert_eq!(eval.report.r1, raw.r1);
        assert_eq!(eval.flips, 3);
    }

    #[test]
    fn evaluate_rules_rejects_unknown_ids() {
        let med = Lexicon::from_terms("meds", ["x"]).unwrap();
        let docs = vec![doc("a", "text hier", 0)];
        let preds = vec![("ghost".to_string(), 1u8)];
        let lexicons = BTreeMap::from([(RuleKind::MedPresence, med)]);
        assert!(matches!(
            evaluate_rules(&preds, &docs, &lexicons),
            Err(Error::Alignment(_))
        ));
    }
}
