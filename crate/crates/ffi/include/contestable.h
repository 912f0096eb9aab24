#ifndef CONTESTABLE_H
#define CONTESTABLE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every call.
 */
typedef enum CfeStatus {
  CFE_STATUS_OK = 0,
  CFE_STATUS_NULL_ARGUMENT = 1,
  CFE_STATUS_INVALID_UTF8 = 2,
  CFE_STATUS_PARSE = 3,
  CFE_STATUS_SIZE_LIMIT = 4,
  CFE_STATUS_BACKEND = 5,
  CFE_STATUS_WRONG_STATE = 6,
  CFE_STATUS_INVALID_INPUT = 7,
  CFE_STATUS_IO = 8,
  CFE_STATUS_INTERNAL = 9,
} CfeStatus;

/**
 * A configured grading engine.
 */
typedef struct CfeEngine CfeEngine;

/**
 * A parsed argumentation framework.
 */
typedef struct CfeFramework CfeFramework;

/**
 * One grading session.
 */
typedef struct CfeSession CfeSession;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Description of the last failure on this thread, or null if the last
 * call succeeded. Free with `cfe_string_free`.
 */
char *cfe_last_error(void);

/**
 * # Safety
 * `s` must be null or a string returned by this library, freed once.
 */
void cfe_string_free(char *s);

/**
 * Parses a framework in the `p af <n>` / `<i> <j>` line format.
 *
 * # Safety
 * `text` must be a NUL-terminated string; `out` valid for writes.
 */
enum CfeStatus cfe_af_parse(const char *text, struct CfeFramework **out);

/**
 * # Safety
 * `af` must be null or a handle from `cfe_af_parse`, freed once.
 */
void cfe_af_free(struct CfeFramework *af);

/**
 * # Safety
 * `af` must be a live handle; `out` valid for writes.
 */
enum CfeStatus cfe_af_num_arguments(const struct CfeFramework *af, uint32_t *out);

/**
 * All complete extensions, one per line, members ascending and separated
 * by spaces; largest first, then lexicographic.
 *
 * # Safety
 * `af` must be a live handle; `out` valid for writes.
 */
enum CfeStatus cfe_af_complete(const struct CfeFramework *af, size_t max_arguments, char **out);

/**
 * The extension a grade is read from: the largest complete extension,
 * ties broken lexicographically. One line.
 *
 * # Safety
 * `af` must be a live handle; `out` valid for writes.
 */
enum CfeStatus cfe_af_select_final(const struct CfeFramework *af, size_t max_arguments, char **out);

/**
 * # Safety
 * `af` must be a live handle; `out` valid for writes.
 */
enum CfeStatus cfe_af_grounded(const struct CfeFramework *af, char **out);

/**
 * Whether the `len` 1-based argument ids at `members` form a complete
 * extension.
 *
 * # Safety
 * `members` must point to `len` readable values (or be null when `len`
 * is 0); `af` must be a live handle; `out` valid for writes.
 */
enum CfeStatus cfe_af_is_complete(const struct CfeFramework *af,
                                  const uint32_t *members,
                                  size_t len,
                                  bool *out);

/**
 * `sqrt(p (1 - p) / n)`.
 *
 * # Safety
 * `out` must be valid for writes.
 */
enum CfeStatus cfe_standard_error(double p, uint64_t n, double *out);

/**
 * Metrics summary (JSON) for evaluation records given as JSONL.
 *
 * # Safety
 * `records_jsonl` must be a NUL-terminated string; `out` valid for writes.
 */
enum CfeStatus cfe_metrics_from_records(const char *records_jsonl, char **out);

/**
 * Builds an engine from a backend configuration file and an optional
 * engine configuration (TOML text, null for defaults).
 *
 * # Safety
 * `backend_config_path` must be a NUL-terminated string, `engine_toml`
 * null or NUL-terminated; `out` valid for writes.
 */
enum CfeStatus cfe_engine_new(const char *backend_config_path,
                              const char *engine_toml,
                              struct CfeEngine **out);

/**
 * # Safety
 * `engine` must be null or a handle from `cfe_engine_new`, freed once.
 */
void cfe_engine_free(struct CfeEngine *engine);

/**
 * Starts a session. `session_id` null picks a random id; `rubric_toml`
 * null uses the built-in rubric.
 *
 * # Safety
 * `engine` must be a live handle; string arguments null or
 * NUL-terminated as documented; `out` valid for writes.
 */
enum CfeStatus cfe_session_start(const struct CfeEngine *engine,
                                 const char *session_id,
                                 const char *essay,
                                 const char *rubric_toml,
                                 struct CfeSession **out);

/**
 * # Safety
 * `session` must be null or a session handle, freed once.
 */
void cfe_session_free(struct CfeSession *session);

/**
 * Runs the initial evaluation; `out` receives the report as JSON.
 *
 * # Safety
 * `engine` and `session` must be live handles; `out` valid for writes.
 */
enum CfeStatus cfe_session_evaluate(const struct CfeEngine *engine,
                                    struct CfeSession *session,
                                    char **out);

/**
 * Challenges one dimension; `out` receives the revised report as JSON.
 *
 * # Safety
 * `engine` and `session` must be live handles; strings NUL-terminated;
 * `out` valid for writes.
 */
enum CfeStatus cfe_session_challenge(const struct CfeEngine *engine,
                                     struct CfeSession *session,
                                     const char *dimension,
                                     const char *text,
                                     char **out);

/**
 * Current state name, e.g. `feedback_ready`.
 *
 * # Safety
 * `session` must be a live handle; `out` valid for writes.
 */
enum CfeStatus cfe_session_state(const struct CfeSession *session, char **out);

/**
 * The session's event log as JSONL.
 *
 * # Safety
 * `session` must be a live handle; `out` valid for writes.
 */
enum CfeStatus cfe_session_log(const struct CfeSession *session, char **out);

/**
 * Rebuilds a session from a JSONL event log.
 *
 * # Safety
 * `log_jsonl` must be NUL-terminated; `out` valid for writes.
 */
enum CfeStatus cfe_session_replay(const char *log_jsonl, struct CfeSession **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CONTESTABLE_H */
