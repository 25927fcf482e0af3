//! C ABI for the ADR classification toolkit.
//!
//! Opaque handles own their Rust values; every fallible call returns an
//! [`AdrStatus`] and stores a message retrievable via [`adr_last_error`].
//! The generated header lives at `include/adrclf.h`.
//!
//! Thread safety: handles are immutable after construction and may be shared
//! across threads; the last-error buffer is thread-local.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::ffi::{CStr, CString};
use std::os::raw::c_char;
use std::path::Path;

use adrclf::corpus::{generate_synthetic, load_corpus, Corpus, CorpusFormat, Document};
use adrclf::ensemble::{majority_vote, TieBreak};
use adrclf::error::Error;
use adrclf::metrics::{report, ConfusionMatrix, MetricsReport};
use adrclf::postprocess::{apply_med_rule, apply_wh_rule, load_lexicon, Lexicon};
use adrclf::preprocess::{mask_entities, NormalizerConfig};

/// Status codes returned by every fallible function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdrStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Io = 3,
    Schema = 4,
    Value = 5,
    Argument = 6,
    Capacity = 7,
    Alignment = 8,
    UndefinedMetric = 9,
    Internal = 10,
}

/// Metric selector for report accessors, in the report column order.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdrMetric {
    P0 = 0,
    R0 = 1,
    F10 = 2,
    P1 = 3,
    R1 = 4,
    F11 = 5,
    PMacro = 6,
    RMacro = 7,
    F1Macro = 8,
    Auc = 9,
}

/// Opaque corpus handle.
pub struct AdrCorpus {
    inner: Corpus,
}

/// Opaque lexicon handle.
pub struct AdrLexicon {
    inner: Lexicon,
}

/// Opaque metric-report handle.
pub struct AdrReport {
    inner: MetricsReport,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(message: &str) {
    let sanitized = message.replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn status_of(err: &Error) -> AdrStatus {
    match err {
        Error::Io { .. } => AdrStatus::Io,
        Error::Schema { .. } | Error::DuplicateId { .. } => AdrStatus::Schema,
        Error::Value { .. } => AdrStatus::Value,
        Error::Argument(_) | Error::Config(_) | Error::Stratification { .. } => {
            AdrStatus::Argument
        }
        Error::Capacity { .. } => AdrStatus::Capacity,
        Error::Alignment(_) => AdrStatus::Alignment,
        Error::UndefinedMetric(_) => AdrStatus::UndefinedMetric,
        _ => AdrStatus::Internal,
    }
}

fn fail(err: Error) -> AdrStatus {
    let status = status_of(&err);
    set_error(&err.to_string());
    status
}

unsafe fn as_str<'a>(ptr: *const c_char, name: &str) -> Result<&'a str, AdrStatus> {
    if ptr.is_null() {
        set_error(&format!("{name} is a null pointer"));
        return Err(AdrStatus::NullPointer);
    }
    CStr::from_ptr(ptr).to_str().map_err(|_| {
        set_error(&format!("{name} is not valid UTF-8"));
        AdrStatus::InvalidUtf8
    })
}

/// Message of the most recent error on this thread; valid until the next
/// failing call. Never null.
#[no_mangle]
pub extern "C" fn adr_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Library version as a static string; do not free.
#[no_mangle]
pub extern "C" fn adr_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Load a corpus from a JSONL or CSV file (format by extension).
///
/// # Safety
/// `path` must be a valid NUL-terminated string; on success `*out` owns the
/// corpus and must be released with [`adr_corpus_free`].
#[no_mangle]
pub unsafe extern "C" fn adr_corpus_load(
    path: *const c_char,
    out: *mut *mut AdrCorpus,
) -> AdrStatus {
    if out.is_null() {
        set_error("out is a null pointer");
        return AdrStatus::NullPointer;
    }
    let path = match as_str(path, "path") {
        Ok(s) => s,
        Err(status) => return status,
    };
    let path = Path::new(path);
    match load_corpus(path, CorpusFormat::from_path(path)) {
        Ok(corpus) => {
            *out = Box::into_raw(Box::new(AdrCorpus { inner: corpus }));
            AdrStatus::Ok
        }
        Err(e) => fail(e),
    }
}

/// Generate a deterministic synthetic corpus (bundled topic mix).
///
/// # Safety
/// `lang` must be a valid NUL-terminated string; `out` non-null. Release the
/// result with [`adr_corpus_free`].
#[no_mangle]
pub unsafe extern "C" fn adr_corpus_generate(
    n_pos: usize,
    n_neg: usize,
    lang: *const c_char,
    seed: u64,
    out: *mut *mut AdrCorpus,
) -> AdrStatus {
    if out.is_null() {
        set_error("out is a null pointer");
        return AdrStatus::NullPointer;
    }
    let lang = match as_str(lang, "lang") {
        Ok(s) => s,
        Err(status) => return status,
    };
    let weights = BTreeMap::from([
        ("women's health".to_string(), 0.76),
        ("skin".to_string(), 0.12),
        ("heart".to_string(), 0.12),
    ]);
    match generate_synthetic(n_pos, n_neg, &weights, lang, seed) {
        Ok(corpus) => {
            *out = Box::into_raw(Box::new(AdrCorpus { inner: corpus }));
            AdrStatus::Ok
        }
        Err(e) => fail(e),
    }
}

/// Number of documents; 0 for a null handle.
///
/// # Safety
/// `corpus` must be a live handle from this library or null.
#[no_mangle]
pub unsafe extern "C" fn adr_corpus_len(corpus: *const AdrCorpus) -> usize {
    if corpus.is_null() {
        return 0;
    }
    (*corpus).inner.len()
}

/// Positive/negative document counts.
///
/// # Safety
/// All pointers must be valid; `corpus` a live handle.
#[no_mangle]
pub unsafe extern "C" fn adr_corpus_label_counts(
    corpus: *const AdrCorpus,
    out_pos: *mut usize,
    out_neg: *mut usize,
) -> AdrStatus {
    if corpus.is_null() || out_pos.is_null() || out_neg.is_null() {
        set_error("null pointer argument");
        return AdrStatus::NullPointer;
    }
    let (pos, neg) = (*corpus).inner.label_counts();
    *out_pos = pos;
    *out_neg = neg;
    AdrStatus::Ok
}

/// Release a corpus handle (null is a no-op).
///
/// # Safety
/// `corpus` must have come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn adr_corpus_free(corpus: *mut AdrCorpus) {
    if !corpus.is_null() {
        drop(Box::from_raw(corpus));
    }
}

/// Build a metric report from confusion counts (tp, fp, fn, tn).
///
/// # Safety
/// `out` must be non-null; release the result with [`adr_report_free`].
#[no_mangle]
pub unsafe extern "C" fn adr_report_from_confusion(
    tp: usize,
    fp: usize,
    fn_: usize,
    tn: usize,
    out: *mut *mut AdrReport,
) -> AdrStatus {
    if out.is_null() {
        set_error("out is a null pointer");
        return AdrStatus::NullPointer;
    }
    let rep = report(&ConfusionMatrix::new(tp, fp, fn_, tn));
    *out = Box::into_raw(Box::new(AdrReport { inner: rep }));
    AdrStatus::Ok
}

/// Read one metric (percent convention, 0..100).
///
/// # Safety
/// `report` must be a live handle; `out` non-null.
#[no_mangle]
pub unsafe extern "C" fn adr_report_value(
    report: *const AdrReport,
    metric: AdrMetric,
    out: *mut f64,
) -> AdrStatus {
    if report.is_null() || out.is_null() {
        set_error("null pointer argument");
        return AdrStatus::NullPointer;
    }
    let values = (*report).inner.values();
    *out = values[metric as usize];
    AdrStatus::Ok
}

/// Release a report handle (null is a no-op).
///
/// # Safety
/// `report` must have come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn adr_report_free(report: *mut AdrReport) {
    if !report.is_null() {
        drop(Box::from_raw(report));
    }
}

/// Majority-vote `n_docs` documents over `n_models` voters.
///
/// `votes` is row-major `n_docs x n_models` with values 0/1. `out_finals`
/// receives the winning label per document; `out_ties` (optional, may be
/// null) receives 1 where the vote was tied.
///
/// # Safety
/// `votes` must point to `n_docs * n_models` bytes and `out_finals` to
/// `n_docs` writable bytes; `out_ties` must be null or `n_docs` bytes.
#[no_mangle]
pub unsafe extern "C" fn adr_majority_vote(
    votes: *const u8,
    n_docs: usize,
    n_models: usize,
    tie_positive: bool,
    out_finals: *mut u8,
    out_ties: *mut u8,
) -> AdrStatus {
    if votes.is_null() || out_finals.is_null() {
        set_error("null pointer argument");
        return AdrStatus::NullPointer;
    }
    let raw = std::slice::from_raw_parts(votes, n_docs * n_models);
    let per_doc: Vec<(String, Vec<u8>)> = (0..n_docs)
        .map(|i| {
            (
                i.to_string(),
                raw[i * n_models..(i + 1) * n_models].to_vec(),
            )
        })
        .collect();
    let tie_break = if tie_positive {
        TieBreak::Positive
    } else {
        TieBreak::Negative
    };
    match majority_vote(&per_doc, tie_break) {
        Ok(records) => {
            for (i, record) in records.iter().enumerate() {
                *out_finals.add(i) = record.final_label;
                if !out_ties.is_null() {
                    *out_ties.add(i) = u8::from(record.was_tie);
                }
            }
            AdrStatus::Ok
        }
        Err(e) => fail(e),
    }
}

/// Load a lexicon file (one term per line, `#` comments).
///
/// # Safety
/// `path` and `name` must be valid NUL-terminated strings; release the
/// result with [`adr_lexicon_free`].
#[no_mangle]
pub unsafe extern "C" fn adr_lexicon_load(
    path: *const c_char,
    name: *const c_char,
    out: *mut *mut AdrLexicon,
) -> AdrStatus {
    if out.is_null() {
        set_error("out is a null pointer");
        return AdrStatus::NullPointer;
    }
    let path = match as_str(path, "path") {
        Ok(s) => s,
        Err(status) => return status,
    };
    let name = match as_str(name, "name") {
        Ok(s) => s,
        Err(status) => return status,
    };
    match load_lexicon(Path::new(path), name) {
        Ok(lexicon) => {
            *out = Box::into_raw(Box::new(AdrLexicon { inner: lexicon }));
            AdrStatus::Ok
        }
        Err(e) => fail(e),
    }
}

/// Term count; 0 for a null handle.
///
/// # Safety
/// `lexicon` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn adr_lexicon_len(lexicon: *const AdrLexicon) -> usize {
    if lexicon.is_null() {
        return 0;
    }
    (*lexicon).inner.len()
}

/// Whole-token match test: 1 match, 0 no match, -1 error.
///
/// # Safety
/// `lexicon` must be a live handle; `text` a valid NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn adr_lexicon_matches(
    lexicon: *const AdrLexicon,
    text: *const c_char,
) -> i32 {
    if lexicon.is_null() {
        set_error("lexicon is a null pointer");
        return -1;
    }
    match as_str(text, "text") {
        Ok(text) => i32::from((*lexicon).inner.matches(text)),
        Err(_) => -1,
    }
}

/// Release a lexicon handle (null is a no-op).
///
/// # Safety
/// `lexicon` must have come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn adr_lexicon_free(lexicon: *mut AdrLexicon) {
    if !lexicon.is_null() {
        drop(Box::from_raw(lexicon));
    }
}

unsafe fn apply_rule_ffi(
    lexicon: *const AdrLexicon,
    text: *const c_char,
    prediction: u8,
    out: *mut u8,
    med: bool,
) -> AdrStatus {
    if lexicon.is_null() || out.is_null() {
        set_error("null pointer argument");
        return AdrStatus::NullPointer;
    }
    if prediction > 1 {
        set_error("prediction must be 0 or 1");
        return AdrStatus::Value;
    }
    let text = match as_str(text, "text") {
        Ok(s) => s,
        Err(status) => return status,
    };
    let doc = Document {
        id: String::new(),
        text: text.to_string(),
        label: 0,
        topic: String::new(),
        lang: "de".to_string(),
        source: String::new(),
    };
    let outcome = if med {
        apply_med_rule(&doc, prediction, &(*lexicon).inner)
    } else {
        apply_wh_rule(&doc, prediction, &(*lexicon).inner)
    };
    *out = outcome.corrected;
    AdrStatus::Ok
}

/// Medication rule: flip a positive prediction to negative when no lexicon
/// term occurs in the text.
///
/// # Safety
/// `lexicon` must be a live handle; `text` valid NUL-terminated; `out`
/// non-null.
#[no_mangle]
pub unsafe extern "C" fn adr_apply_med_rule(
    lexicon: *const AdrLexicon,
    text: *const c_char,
    prediction: u8,
    out: *mut u8,
) -> AdrStatus {
    apply_rule_ffi(lexicon, text, prediction, out, true)
}

/// Women's-health rule: flip a positive prediction to negative when any
/// lexicon term occurs in the text.
///
/// # Safety
/// Same contract as [`adr_apply_med_rule`].
#[no_mangle]
pub unsafe extern "C" fn adr_apply_wh_rule(
    lexicon: *const AdrLexicon,
    text: *const c_char,
    prediction: u8,
    out: *mut u8,
) -> AdrStatus {
    apply_rule_ffi(lexicon, text, prediction, out, false)
}

/// Mask URLs, emails, user handles, dates, and numbers in a text.
///
/// # Safety
/// `text` must be valid NUL-terminated; on success `*out` is a heap string
/// to release with [`adr_string_free`].
#[no_mangle]
pub unsafe extern "C" fn adr_mask_entities(
    text: *const c_char,
    out: *mut *mut c_char,
) -> AdrStatus {
    if out.is_null() {
        set_error("out is a null pointer");
        return AdrStatus::NullPointer;
    }
    let text = match as_str(text, "text") {
        Ok(s) => s,
        Err(status) => return status,
    };
    let masked = mask_entities(text, &NormalizerConfig::default());
    match CString::new(masked) {
        Ok(s) => {
            *out = s.into_raw();
            AdrStatus::Ok
        }
        Err(_) => {
            set_error("masked text contains interior NUL");
            AdrStatus::Internal
        }
    }
}

/// Release a string returned by this library (null is a no-op).
///
/// # Safety
/// `s` must have been returned by this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn adr_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::ffi::CString;
    use std::io::Write;
    use std::ptr;

    fn cstr(s: &str) -> CString {
        CString::new(s).unwrap()
    }

    #[test]
    fn version_is_non_empty() {
        let v = unsafe { CStr::from_ptr(adr_version()) };
        assert!(!v.to_bytes().is_empty());
    }

    #[test]
    fn corpus_round_trip_through_abi() {
        let mut handle: *mut AdrCorpus = ptr::null_mut();
        let lang = cstr("de");
        let status = unsafe { adr_corpus_generate(7, 35, lang.as_ptr(), 3, &mut handle) };
        assert_eq!(status, AdrStatus::Ok);
        assert_eq!(unsafe { adr_corpus_len(handle) }, 42);
        let (mut pos, mut neg) = (0usize, 0usize);
        let status = unsafe { adr_corpus_label_counts(handle, &mut pos, &mut neg) };
        assert_eq!(status, AdrStatus::Ok);
        assert_eq!((pos, neg), (7, 35));
        unsafe { adr_corpus_free(handle) };
    }

    #[test]
    fn corpus_load_missing_file_sets_error() {
        let mut handle: *mut AdrCorpus = ptr::null_mut();
        let path = cstr("/definitely/not/here.jsonl");
        let status = unsafe { adr_corpus_load(path.as_ptr(), &mut handle) };
        assert_eq!(status, AdrStatus::Io);
        let message = unsafe { CStr::from_ptr(adr_last_error()) };
        assert!(message.to_string_lossy().contains("not/here.jsonl"));
        assert!(handle.is_null());
    }

    #[test]
    fn report_values_via_abi() {
        let mut handle: *mut AdrReport = ptr::null_mut();
        let status = unsafe { adr_report_from_confusion(8, 7, 13, 796, &mut handle) };
        assert_eq!(status, AdrStatus::Ok);
        let mut value = 0.0f64;
        unsafe {
            assert_eq!(
                adr_report_value(handle, AdrMetric::P1, &mut value),
                AdrStatus::Ok
            );
            assert!((value - 53.33).abs() < 0.01);
            assert_eq!(
                adr_report_value(handle, AdrMetric::Auc, &mut value),
                AdrStatus::Ok
            );
            let mut r_macro = 0.0;
            adr_report_value(handle, AdrMetric::RMacro, &mut r_macro);
            assert_eq!(value, r_macro);
            adr_report_free(handle);
        }
    }

    #[test]
    fn majority_vote_via_abi() {
        // three documents, four voters
        let votes: [u8; 12] = [1, 1, 1, 1, 0, 0, 0, 1, 1, 1, 0, 0];
        let mut finals = [9u8; 3];
        let mut ties = [9u8; 3];
        let status = unsafe {
            adr_majority_vote(
                votes.as_ptr(),
                3,
                4,
                true,
                finals.as_mut_ptr(),
                ties.as_mut_ptr(),
            )
        };
        assert_eq!(status, AdrStatus::Ok);
        assert_eq!(finals, [1, 0, 1]);
        assert_eq!(ties, [0, 0, 1]);
    }

    #[test]
    fn lexicon_and_rules_via_abi() {
        let mut file = tempfile::NamedTempFile::new().unwrap();
        writeln!(file, "# meds\nibuprofen\naspirin").unwrap();
        let mut lex: *mut AdrLexicon = ptr::null_mut();
        let path = cstr(file.path().to_str().unwrap());
        let name = cstr("meds");
        let status = unsafe { adr_lexicon_load(path.as_ptr(), name.as_ptr(), &mut lex) };
        assert_eq!(status, AdrStatus::Ok);
        assert_eq!(unsafe { adr_lexicon_len(lex) }, 2);
        let with_drug = cstr("nehme Ibuprofen, seit gestern");
        let without = cstr("mir ist einfach schlecht");
        assert_eq!(unsafe { adr_lexicon_matches(lex, with_drug.as_ptr()) }, 1);
        assert_eq!(unsafe { adr_lexicon_matches(lex, without.as_ptr()) }, 0);
        let mut corrected = 9u8;
        unsafe {
            assert_eq!(
                adr_apply_med_rule(lex, with_drug.as_ptr(), 1, &mut corrected),
                AdrStatus::Ok
            );
            assert_eq!(corrected, 1);
            assert_eq!(
                adr_apply_med_rule(lex, without.as_ptr(), 1, &mut corrected),
                AdrStatus::Ok
            );
            assert_eq!(corrected, 0);
            adr_lexicon_free(lex);
        }
    }

    #[test]
    fn mask_entities_via_abi() {
        let text = cstr("see http://x.de please");
        let mut out: *mut c_char = ptr::null_mut();
        let status = unsafe { adr_mask_entities(text.as_ptr(), &mut out) };
        assert_eq!(status, AdrStatus::Ok);
        let masked = unsafe { CStr::from_ptr(out) }.to_string_lossy().into_owned();
        assert_eq!(masked, "see <URL> please");
        unsafe { adr_string_free(out) };
    }

    #[test]
    fn null_pointers_are_rejected_not_crashed() {
        let mut out = 0.0f64;
        assert_eq!(
            unsafe { adr_report_value(ptr::null(), AdrMetric::P0, &mut out) },
            AdrStatus::NullPointer
        );
        assert_eq!(unsafe { adr_corpus_len(ptr::null()) }, 0);
        assert_eq!(unsafe { adr_lexicon_len(ptr::null()) }, 0);
        unsafe { adr_corpus_free(ptr::null_mut()) };
        unsafe { adr_string_free(ptr::null_mut()) };
    }
}
