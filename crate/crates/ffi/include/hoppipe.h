#ifndef HOPPIPE_H
#define HOPPIPE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum HpStatus {
  HP_STATUS_OK = 0,
  HP_STATUS_NULL_POINTER = 1,
  HP_STATUS_INVALID_UTF8 = 2,
  HP_STATUS_INVALID_ARGUMENT = 3,
  HP_STATUS_IO = 4,
  HP_STATUS_BUFFER_TOO_SMALL = 5,
  HP_STATUS_INFEASIBLE = 6,
  HP_STATUS_PIPELINE = 7,
  HP_STATUS_PANIC = 8,
} HpStatus;

/**
 * Opaque handle to a loaded, validated dataset.
 */
typedef struct HpDataset HpDataset;

/**
 * Opaque vocabulary handle.
 */
typedef struct HpVocab HpVocab;

typedef struct HpAnswerScores {
  double em;
  double f1;
  double precision;
  double recall;
} HpAnswerScores;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null. Valid until the
 * next call into this library from the same thread.
 */
const char *hp_last_error(void);

/**
 * # Safety
 * `s` must be null or a string returned by this library, freed once.
 */
void hp_string_free(char *s);

/**
 * # Safety
 * `path` must be a valid C string; `out` must be writable.
 */
enum HpStatus hp_vocab_load(const char *path, struct HpVocab **out);

/**
 * # Safety
 * `vocab` must be null or a handle from [`hp_vocab_load`], freed once.
 */
void hp_vocab_free(struct HpVocab *vocab);

/**
 * Word-piece ids of `text`. `*out_len` always receives the full length; if
 * it exceeds `capacity` nothing is written and `BufferTooSmall` is returned.
 *
 * # Safety
 * `ids` must hold `capacity` elements (may be null when `capacity` is 0).
 */
enum HpStatus hp_tokenize(const struct HpVocab *vocab,
                          const char *text,
                          uint32_t *ids,
                          size_t capacity,
                          size_t *out_len);

/**
 * # Safety
 * `path` and `setting` (`"distractor"` or `"fullwiki"`) must be valid C
 * strings; `out` must be writable.
 */
enum HpStatus hp_dataset_load(const char *path, const char *setting, struct HpDataset **out);

/**
 * Number of questions, or 0 for a null handle.
 *
 * # Safety
 * `dataset` must be null or a live handle.
 */
size_t hp_dataset_len(const struct HpDataset *dataset);

/**
 * # Safety
 * `dataset` must be null or a handle from [`hp_dataset_load`], freed once.
 */
void hp_dataset_free(struct HpDataset *dataset);

/**
 * Best support set over a flat table. `selected` (one byte per sentence) is
 * set to 1 for members and 0 otherwise.
 *
 * # Safety
 * `logits` holds the sum of `paragraph_lens` values; `selected` has the same
 * length; `total` is writable.
 */
enum HpStatus hp_select_support(const double *logits,
                                const size_t *paragraph_lens,
                                size_t n_paragraphs,
                                uint8_t *selected,
                                double *total);

/**
 * # Safety
 * `prediction` and `gold` must be valid C strings; `out` writable.
 */
enum HpStatus hp_answer_scores(const char *prediction,
                               const char *gold,
                               struct HpAnswerScores *out);

/**
 * # Safety
 * `text` must be a valid C string; `out` receives a string to release with
 * [`hp_string_free`].
 */
enum HpStatus hp_normalize_answer(const char *text, char **out);

/**
 * Coverage rank over a flat table; `gold` has one byte per sentence,
 * nonzero for gold support.
 *
 * # Safety
 * Buffers as for [`hp_select_support`]; `rank` writable.
 */
enum HpStatus hp_coverage_rank(const double *logits,
                               const size_t *paragraph_lens,
                               size_t n_paragraphs,
                               const uint8_t *gold,
                               size_t *rank);

/**
 * # Safety
 * `ranks` holds `n` values; `out` writable.
 */
enum HpStatus hp_top_n_at(const size_t *ranks, size_t n, double fraction, size_t *out);

/**
 * Evaluate a prediction file; `out_json` receives the report as JSON.
 *
 * # Safety
 * `dataset` is a live handle, `predictions_path` a valid C string, `out_json`
 * writable.
 */
enum HpStatus hp_evaluate(const struct HpDataset *dataset,
                          const char *predictions_path,
                          char **out_json);

/**
 * Run the full pipeline. `config_json` holds the pipeline settings
 * (`setting`, `tau`, `seed`, `budget`, `max_span_len`) plus optional
 * `scorer_endpoint` and `span_endpoint`; `seed` is required. `out_json`
 * receives `{"predictions":…,"failures":[…]}`.
 *
 * # Safety
 * Handles must be live; `config_json` a valid C string; `out_json` writable.
 */
enum HpStatus hp_run_pipeline(const struct HpDataset *dataset,
                              const struct HpVocab *vocab,
                              const char *config_json,
                              char **out_json);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HOPPIPE_H */
