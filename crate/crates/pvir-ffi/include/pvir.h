/* C ABI for the pvir incident-reasoning engine. */

#ifndef PVIR_H
#define PVIR_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible function.
 */
typedef enum PvirStatus {
  PVIR_STATUS_OK = 0,
  PVIR_STATUS_NULL_ARGUMENT = 1,
  PVIR_STATUS_INVALID_UTF8 = 2,
  PVIR_STATUS_SCHEMA_VIOLATION = 3,
  PVIR_STATUS_NO_CHOICE_FOUND = 4,
} PvirStatus;

/**
 * Opaque handle to a validated incident report.
 */
typedef struct PvirReport PvirReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Sentence BLEU-4 of `candidate` against `reference`.
 *
 * # Safety
 *
 * Pointer arguments must be valid: strings NUL-terminated, `out_score` writable.
 */
enum PvirStatus pvir_bleu(const char *candidate, const char *reference, double *out_score);

/**
 * ROUGE-L F-score (beta = 1).
 *
 * # Safety
 *
 * Pointer arguments must be valid: strings NUL-terminated, `out_score` writable.
 */
enum PvirStatus pvir_rouge_l(const char *candidate, const char *reference, double *out_score);

/**
 * METEOR (exact-match variant).
 *
 * # Safety
 *
 * Pointer arguments must be valid: strings NUL-terminated, `out_score` writable.
 */
enum PvirStatus pvir_meteor(const char *candidate, const char *reference, double *out_score);

/**
 * Intersection-over-union of two temporal intervals.
 *
 * # Safety
 *
 * `out_iou` must be writable.
 */
enum PvirStatus pvir_interval_iou(double pred_start_s,
                                  double pred_end_s,
                                  double gt_start_s,
                                  double gt_end_s,
                                  double *out_iou);

/**
 * Extracts the multiple-choice letter from a model's raw VQA response.
 * On success writes the lowercase letter ('a'..'d') to `out_choice`.
 *
 * # Safety
 *
 * `raw_text` must be NUL-terminated; `out_choice` writable.
 */
enum PvirStatus pvir_extract_answer_choice(const char *raw_text, char *out_choice);

/**
 * Parses and validates an incident report. On success, `out_report`
 * receives a handle that must be freed with `pvir_report_free`.
 *
 * # Safety
 *
 * `json_text` must be NUL-terminated; `out_report` writable.
 */
enum PvirStatus pvir_report_parse(const char *json_text, struct PvirReport **out_report);

/**
 * Validates a report without constructing a handle. On failure,
 * `out_violations` (if non-null) receives a newline-separated list that
 * must be freed with `pvir_string_free`.
 *
 * # Safety
 *
 * `json_text` must be NUL-terminated; `out_violations`, if non-null, writable.
 */
enum PvirStatus pvir_report_validate(const char *json_text, char **out_violations);

/**
 * The report's incident classification (e.g. "Collision") as a newly
 * allocated string; free with `pvir_string_free`.
 *
 * # Safety
 *
 * `report` must come from `pvir_report_parse`; `out_text` writable.
 */
enum PvirStatus pvir_report_classification(const struct PvirReport *report, char **out_text);

/**
 * Canonical JSON rendering (sorted keys, two-space indent) of a parsed
 * report; free with `pvir_string_free`.
 *
 * # Safety
 *
 * `report` must come from `pvir_report_parse`; `out_text` writable.
 */
enum PvirStatus pvir_report_to_json(const struct PvirReport *report, char **out_text);

/**
 * Number of links in the report's causal chain.
 *
 * # Safety
 *
 * `report` must come from `pvir_report_parse`; `out_len` writable.
 */
enum PvirStatus pvir_report_causal_chain_len(const struct PvirReport *report, uintptr_t *out_len);

/**
 * Frees a report handle returned by `pvir_report_parse`.
 *
 * # Safety
 *
 * `report` must come from `pvir_report_parse` and not be freed twice.
 */
void pvir_report_free(struct PvirReport *report);

/**
 * Frees a string allocated by this library.
 *
 * # Safety
 *
 * `text` must come from this library and not be freed twice.
 */
void pvir_string_free(char *text);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PVIR_H */
