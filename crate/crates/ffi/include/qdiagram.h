#ifndef QDIAGRAM_H
#define QDIAGRAM_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum QdStatus {
  QD_STATUS_OK = 0,
  QD_STATUS_NULL_ARGUMENT = 1,
  QD_STATUS_INVALID_UTF8 = 2,
  QD_STATUS_BROKEN_JSON = 3,
  QD_STATUS_SCHEMA_ERROR = 4,
  QD_STATUS_NON_DRAWABLE = 5,
  QD_STATUS_INVALID_ARGUMENT = 6,
  QD_STATUS_UNDEFINED = 7,
  QD_STATUS_INTERNAL = 99,
} QdStatus;

typedef enum QdFormat {
  QD_FORMAT_PLANTUML = 0,
  QD_FORMAT_MERMAID = 1,
} QdFormat;

typedef enum QdDetailLevel {
  QD_DETAIL_LEVEL_MINIMAL = 0,
  QD_DETAIL_LEVEL_MEDIUM = 1,
  QD_DETAIL_LEVEL_FULL = 2,
} QdDetailLevel;

typedef enum QdPrompt {
  /**
   * Query generation; `query` and `detail` are ignored.
   */
  QD_PROMPT_QUERIES = 0,
  /**
   * Three-version diagram prompt for base models; `detail` is ignored.
   */
  QD_PROMPT_BASE_DIAGRAM = 1,
  /**
   * Single-version diagram prompt for fine-tuned models.
   */
  QD_PROMPT_FINETUNED_DIAGRAM = 2,
} QdPrompt;

/**
 * Opaque parsed graph.
 */
typedef struct QdGraph QdGraph;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL. The pointer stays
 * valid until the next qd_* call on the same thread.
 */
const char *qd_last_error_message(void);

/**
 * Library version as a static string.
 */
const char *qd_version(void);

/**
 * Parses a JSON graph into a new handle stored in `*out`.
 *
 * # Safety
 * `json` must be NULL or a NUL-terminated string; `out` must be writable.
 */
enum QdStatus qd_graph_parse(const char *json, struct QdGraph **out);

/**
 * Releases a handle from `qd_graph_parse`. NULL is ignored.
 *
 * # Safety
 * `g` must come from `qd_graph_parse` and not be freed twice.
 */
void qd_graph_free(struct QdGraph *g);

/**
 * Number of nodes, or 0 for a NULL handle.
 *
 * # Safety
 * `g` must be NULL or a live handle.
 */
size_t qd_graph_node_count(const struct QdGraph *g);

/**
 * Compact JSON for the graph.
 *
 * # Safety
 * `g` must be a live handle; `out` must be writable.
 */
enum QdStatus qd_graph_serialize(const struct QdGraph *g, char **out);

/**
 * Defect report as JSON. `source` may be NULL to skip name checks.
 *
 * # Safety
 * `g` must be a live handle; `source` NULL or NUL-terminated; `out` writable.
 */
enum QdStatus qd_lint(const struct QdGraph *g, const char *source, char **out);

/**
 * PlantUML or Mermaid markup; `format` is a `QdFormat` value. Fails with
 * `QD_STATUS_NON_DRAWABLE` when the package structure cannot be laid out.
 *
 * # Safety
 * `g` must be a live handle; `out` must be writable.
 */
enum QdStatus qd_render(const struct QdGraph *g, uint32_t format, char **out);

/**
 * Cohen's kappa over two aligned label arrays of length `len`, with labels
 * 0 = sufficiency, 1 = completeness, 2 = hallucination, 3 = verbosity.
 *
 * # Safety
 * `a` and `b` must point to `len` readable bytes; `out` must be writable.
 */
enum QdStatus qd_cohens_kappa(const uint8_t *a, const uint8_t *b, size_t len, double *out);

/**
 * Relevance report (micro and macro metrics per model) as JSON, from a JSON
 * array of annotation documents.
 *
 * # Safety
 * `annotations_json` must be NUL-terminated; `out` must be writable.
 */
enum QdStatus qd_relevance_report(const char *annotations_json, char **out);

/**
 * Fills one of the prompt templates. `kind` is a `QdPrompt` value and
 * `detail` a `QdDetailLevel` value; `query` may be NULL for
 * `QD_PROMPT_QUERIES`.
 *
 * # Safety
 * `code` and `query` must be NULL or NUL-terminated; `out` must be writable.
 */
enum QdStatus qd_build_prompt(uint32_t kind,
                              const char *code,
                              const char *query,
                              uint32_t detail,
                              char **out);

/**
 * Releases a string returned by this library. NULL is ignored.
 *
 * # Safety
 * `s` must come from this library and not be freed twice.
 */
void qd_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* QDIAGRAM_H */
