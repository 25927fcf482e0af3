/* C interface for the adrclf toolkit. Generated by cbindgen; do not edit. */

#ifndef ADRCLF_H
#define ADRCLF_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Metric selector for report accessors, in the report column order.
 */
typedef enum AdrMetric {
  ADR_METRIC_P0 = 0,
  ADR_METRIC_R0 = 1,
  ADR_METRIC_F10 = 2,
  ADR_METRIC_P1 = 3,
  ADR_METRIC_R1 = 4,
  ADR_METRIC_F11 = 5,
  ADR_METRIC_P_MACRO = 6,
  ADR_METRIC_R_MACRO = 7,
  ADR_METRIC_F1_MACRO = 8,
  ADR_METRIC_AUC = 9,
} AdrMetric;

/**
 * Status codes returned by every fallible function.
 */
typedef enum AdrStatus {
  ADR_STATUS_OK = 0,
  ADR_STATUS_NULL_POINTER = 1,
  ADR_STATUS_INVALID_UTF8 = 2,
  ADR_STATUS_IO = 3,
  ADR_STATUS_SCHEMA = 4,
  ADR_STATUS_VALUE = 5,
  ADR_STATUS_ARGUMENT = 6,
  ADR_STATUS_CAPACITY = 7,
  ADR_STATUS_ALIGNMENT = 8,
  ADR_STATUS_UNDEFINED_METRIC = 9,
  ADR_STATUS_INTERNAL = 10,
} AdrStatus;

/**
 * Opaque corpus handle.
 */
typedef struct AdrCorpus AdrCorpus;

/**
 * Opaque lexicon handle.
 */
typedef struct AdrLexicon AdrLexicon;

/**
 * Opaque metric-report handle.
 */
typedef struct AdrReport AdrReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the most recent error on this thread; valid until the next
 * failing call. Never null.
 */
const char *adr_last_error(void);

/**
 * Library version as a static string; do not free.
 */
const char *adr_version(void);

/**
 * Load a corpus from a JSONL or CSV file (format by extension).
 *
 * # Safety
 * `path` must be a valid NUL-terminated string; on success `*out` owns the
 * corpus and must be released with [`adr_corpus_free`].
 */
enum AdrStatus adr_corpus_load(const char *path, struct AdrCorpus **out);

/**
 * Generate a deterministic synthetic corpus (bundled topic mix).
 *
 * # Safety
 * `lang` must be a valid NUL-terminated string; `out` non-null. Release the
 * result with [`adr_corpus_free`].
 */
enum AdrStatus adr_corpus_generate(uintptr_t n_pos,
                                   uintptr_t n_neg,
                                   const char *lang,
                                   uint64_t seed,
                                   struct AdrCorpus **out);

/**
 * Number of documents; 0 for a null handle.
 *
 * # Safety
 * `corpus` must be a live handle from this library or null.
 */
uintptr_t adr_corpus_len(const struct AdrCorpus *corpus);

/**
 * Positive/negative document counts.
 *
 * # Safety
 * All pointers must be valid; `corpus` a live handle.
 */
enum AdrStatus adr_corpus_label_counts(const struct AdrCorpus *corpus,
                                       uintptr_t *out_pos,
                                       uintptr_t *out_neg);

/**
 * Release a corpus handle (null is a no-op).
 *
 * # Safety
 * `corpus` must have come from this library and not be freed twice.
 */
void adr_corpus_free(struct AdrCorpus *corpus);

/**
 * Build a metric report from confusion counts (tp, fp, fn, tn).
 *
 * # Safety
 * `out` must be non-null; release the result with [`adr_report_free`].
 */
enum AdrStatus adr_report_from_confusion(uintptr_t tp,
                                         uintptr_t fp,
                                         uintptr_t fn_,
                                         uintptr_t tn,
                                         struct AdrReport **out);

/**
 * Read one metric (percent convention, 0..100).
 *
 * # Safety
 * `report` must be a live handle; `out` non-null.
 */
enum AdrStatus adr_report_value(const struct AdrReport *report, enum AdrMetric metric, double *out);

/**
 * Release a report handle (null is a no-op).
 *
 * # Safety
 * `report` must have come from this library and not be freed twice.
 */
void adr_report_free(struct AdrReport *report);

/**
 * Majority-vote `n_docs` documents over `n_models` voters.
 *
 * `votes` is row-major `n_docs x n_models` with values 0/1. `out_finals`
 * receives the winning label per document; `out_ties` (optional, may be
 * null) receives 1 where the vote was tied.
 *
 * # Safety
 * `votes` must point to `n_docs * n_models` bytes and `out_finals` to
 * `n_docs` writable bytes; `out_ties` must be null or `n_docs` bytes.
 */
enum AdrStatus adr_majority_vote(const uint8_t *votes,
                                 uintptr_t n_docs,
                                 uintptr_t n_models,
                                 bool tie_positive,
                                 uint8_t *out_finals,
                                 uint8_t *out_ties);

/**
 * Load a lexicon file (one term per line, `#` comments).
 *
 * # Safety
 * `path` and `name` must be valid NUL-terminated strings; release the
 * result with [`adr_lexicon_free`].
 */
enum AdrStatus adr_lexicon_load(const char *path, const char *name, struct AdrLexicon **out);

/**
 * Term count; 0 for a null handle.
 *
 * # Safety
 * `lexicon` must be a live handle or null.
 */
uintptr_t adr_lexicon_len(const struct AdrLexicon *lexicon);

/**
 * Whole-token match test: 1 match, 0 no match, -1 error.
 *
 * # Safety
 * `lexicon` must be a live handle; `text` a valid NUL-terminated string.
 */
int32_t adr_lexicon_matches(const struct AdrLexicon *lexicon, const char *text);

/**
 * Release a lexicon handle (null is a no-op).
 *
 * # Safety
 * `lexicon` must have come from this library and not be freed twice.
 */
void adr_lexicon_free(struct AdrLexicon *lexicon);

/**
 * Medication rule: flip a positive prediction to negative when no lexicon
 * term occurs in the text.
 *
 * # Safety
 * `lexicon` must be a live handle; `text` valid NUL-terminated; `out`
 * non-null.
 */
enum AdrStatus adr_apply_med_rule(const struct AdrLexicon *lexicon,
                                  const char *text,
                                  uint8_t prediction,
                                  uint8_t *out);

/**
 * Women's-health rule: flip a positive prediction to negative when any
 * lexicon term occurs in the text.
 *
 * # Safety
 * Same contract as [`adr_apply_med_rule`].
 */
enum AdrStatus adr_apply_wh_rule(const struct AdrLexicon *lexicon,
                                 const char *text,
                                 uint8_t prediction,
                                 uint8_t *out);

/**
 * Mask URLs, emails, user handles, dates, and numbers in a text.
 *
 * # Safety
 * `text` must be valid NUL-terminated; on success `*out` is a heap string
 * to release with [`adr_string_free`].
 */
enum AdrStatus adr_mask_entities(const char *text, char **out);

/**
 * Release a string returned by this library (null is a no-op).
 *
 * # Safety
 * `s` must have been returned by this library and not be freed twice.
 */
void adr_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ADRCLF_H */
