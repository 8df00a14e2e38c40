#ifndef NARRATIVE_H
#define NARRATIVE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum NarrativeStatus {
  NARRATIVE_STATUS_OK = 0,
  NARRATIVE_STATUS_NULL_ARGUMENT = 1,
  NARRATIVE_STATUS_INVALID_UTF8 = 2,
  NARRATIVE_STATUS_INVALID_INPUT = 3,
  NARRATIVE_STATUS_IO = 4,
  NARRATIVE_STATUS_PARSE = 5,
  NARRATIVE_STATUS_UNKNOWN_TOPIC = 6,
  NARRATIVE_STATUS_OUT_OF_RANGE = 7,
  NARRATIVE_STATUS_BACKEND = 8,
  NARRATIVE_STATUS_BUFFER_TOO_SMALL = 9,
  NARRATIVE_STATUS_PANIC = 10,
} NarrativeStatus;

/**
 * An inference backend: the deterministic mock or an HTTP server.
 */
typedef struct NarrativeBackend NarrativeBackend;

/**
 * Classification heads loaded from a checkpoint, one per topic.
 */
typedef struct NarrativeHeads NarrativeHeads;

/**
 * A loaded narrative taxonomy.
 */
typedef struct NarrativeTaxonomy NarrativeTaxonomy;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null. Valid until the
 * next library call on the same thread.
 */
const char *narrative_last_error(void);

/**
 * Release a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` is null or a pointer returned by this library and not yet freed.
 */
void narrative_string_free(char *s);

/**
 * Clean a raw tweet into 7-bit text.
 *
 * # Safety
 * `raw` is a NUL-terminated string; `out` is writable.
 */
enum NarrativeStatus narrative_clean_text(const char *raw, char **out);

/**
 * ROUGE-L F1 in [0, 1].
 *
 * # Safety
 * String arguments are NUL-terminated; `out` is writable.
 */
enum NarrativeStatus narrative_rouge_l_f1(const char *cand, const char *reference, double *out);

/**
 * METEOR with exact and stem matching, in [0, 1].
 *
 * # Safety
 * String arguments are NUL-terminated; `out` is writable.
 */
enum NarrativeStatus narrative_meteor(const char *cand, const char *reference, double *out);

/**
 * chrF in [0, 100].
 *
 * # Safety
 * String arguments are NUL-terminated; `out` is writable.
 */
enum NarrativeStatus narrative_chrf(const char *cand, const char *reference, double *out);

/**
 * Corpus BLEU in [0, 1] over `n` aligned candidate/reference pairs.
 *
 * # Safety
 * `cands` and `refs` each point to `n` NUL-terminated strings; `out` is writable.
 */
enum NarrativeStatus narrative_bleu(const char *const *cands,
                                    const char *const *refs,
                                    size_t n,
                                    double *out);

/**
 * Cohen's kappa between two label vectors of length `n`.
 *
 * # Safety
 * `a` and `b` point to `n` values; `out` is writable.
 */
enum NarrativeStatus narrative_cohen_kappa(const int32_t *a,
                                           const int32_t *b,
                                           size_t n,
                                           double *out);

/**
 * Krippendorff's alpha (nominal) for two coders over `n` items.
 *
 * # Safety
 * `a` and `b` point to `n` values; `out` is writable.
 */
enum NarrativeStatus narrative_krippendorff_alpha(const int32_t *a,
                                                  const int32_t *b,
                                                  size_t n,
                                                  double *out);

/**
 * Micro F1 over B/I tags and token accuracy for space-separated tag
 * strings such as `"O B I O"`.
 *
 * # Safety
 * Tag strings are NUL-terminated; `f1` and `accuracy` are writable.
 */
enum NarrativeStatus narrative_bio_scores(const char *gold,
                                          const char *pred,
                                          double *f1,
                                          double *accuracy);

/**
 * Load a taxonomy file.
 *
 * # Safety
 * `path` is NUL-terminated; `out` is writable.
 */
enum NarrativeStatus narrative_taxonomy_load(const char *path, struct NarrativeTaxonomy **out);

/**
 * # Safety
 * `t` is null or a handle from [`narrative_taxonomy_load`] not yet freed.
 */
void narrative_taxonomy_free(struct NarrativeTaxonomy *t);

/**
 * Number of narratives listed for `topic`, sentinel included.
 *
 * # Safety
 * `t` is a live handle; `topic` is NUL-terminated; `out` is writable.
 */
enum NarrativeStatus narrative_taxonomy_len(const struct NarrativeTaxonomy *t,
                                            const char *topic,
                                            size_t *out);

/**
 * Narrative text for class `index` of `topic`.
 *
 * # Safety
 * `t` is a live handle; `topic` is NUL-terminated; `out` is writable.
 */
enum NarrativeStatus narrative_taxonomy_lookup(const struct NarrativeTaxonomy *t,
                                               const char *topic,
                                               size_t index,
                                               char **out);

/**
 * Deterministic mock backend. `dim` of 0 selects the default width.
 */
struct NarrativeBackend *narrative_backend_mock(uint64_t seed, size_t dim);

/**
 * Backend talking to an inference server at `url`.
 *
 * # Safety
 * `url` and `model` are NUL-terminated; `out` is writable.
 */
enum NarrativeStatus narrative_backend_http(const char *url,
                                            const char *model,
                                            struct NarrativeBackend **out);

/**
 * # Safety
 * `b` is null or a backend handle not yet freed.
 */
void narrative_backend_free(struct NarrativeBackend *b);

/**
 * Sequence embedding of `text`. Writes up to `cap` values to `out` and the
 * full dimension to `dim`; fails with `BufferTooSmall` when `cap < dim`.
 *
 * # Safety
 * `b` is a live handle; `text` is NUL-terminated; `out` has room for `cap`
 * values (may be null when `cap` is 0); `dim` is writable.
 */
enum NarrativeStatus narrative_backend_embed(const struct NarrativeBackend *b,
                                             const char *text,
                                             double *out,
                                             size_t cap,
                                             size_t *dim);

/**
 * Load every head in a checkpoint file.
 *
 * # Safety
 * `path` is NUL-terminated; `out` is writable.
 */
enum NarrativeStatus narrative_heads_load(const char *path, struct NarrativeHeads **out);

/**
 * # Safety
 * `h` is null or a handle from [`narrative_heads_load`] not yet freed.
 */
void narrative_heads_free(struct NarrativeHeads *h);

/**
 * Classify `text` under `topic` and return the class index and narrative.
 *
 * # Safety
 * Handles are live; strings are NUL-terminated; `class_out` and
 * `narrative_out` are writable.
 */
enum NarrativeStatus narrative_heads_predict(const struct NarrativeHeads *heads,
                                             const struct NarrativeBackend *backend,
                                             const struct NarrativeTaxonomy *taxonomy,
                                             const char *topic,
                                             const char *text,
                                             size_t *class_out,
                                             char **narrative_out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NARRATIVE_H */
