#ifndef UKG_H
#define UKG_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result of every exported call.
typedef enum UkgStatus {
  UKG_STATUS_OK = 0,
  // Null pointer, invalid UTF-8, or malformed JSON argument.
  UKG_STATUS_USAGE = 1,
  // Input rejected by validation.
  UKG_STATUS_DATA = 2,
  // Fixpoint iteration guard tripped.
  UKG_STATUS_GUARD = 3,
  UKG_STATUS_NOT_FOUND = 4,
  UKG_STATUS_CONFLICT = 5,
  UKG_STATUS_IO = 6,
  // A Rust panic was caught at the boundary.
  UKG_STATUS_PANIC = 7,
} UkgStatus;

// Opaque engine handle.
typedef struct UkgEngine UkgEngine;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. Valid until
// the next call on the same thread; do not free.
const char *ukg_last_error(void);

// Creates an empty engine. `config_json` may be null for defaults.
//
// # Safety
// `config_json` is null or a nul-terminated string; `out` is writable.
enum UkgStatus ukg_engine_new(const char *config_json, struct UkgEngine **out);

// Creates an engine from an archive written by [`ukg_engine_save`].
//
// # Safety
// `path` is a nul-terminated string, `config_json` is null or one, and
// `out` is writable.
enum UkgStatus ukg_engine_open(const char *path, const char *config_json, struct UkgEngine **out);

// Writes the engine's graph to `path` atomically.
//
// # Safety
// `engine` comes from this library; `path` is a nul-terminated string.
enum UkgStatus ukg_engine_save(struct UkgEngine *engine, const char *path);

// Releases an engine. Null is ignored.
//
// # Safety
// `engine` is null or was returned by this library and not yet freed.
void ukg_engine_free(struct UkgEngine *engine);

// Releases a string returned through an `out` parameter. Null is ignored.
//
// # Safety
// `s` is null or came from this library and was not yet freed.
void ukg_string_free(char *s);

// Adds taxonomies, predicates, entities, and sources from a schema
// document. All or nothing.
//
// # Safety
// `engine` comes from this library; `schema_json` is a nul-terminated string.
enum UkgStatus ukg_load_schema(struct UkgEngine *engine, const char *schema_json);

// Registers a source.
//
// # Safety
// `engine` comes from this library; `id` and `name` are nul-terminated
// strings (`name` may be null to reuse `id`).
enum UkgStatus ukg_add_source(struct UkgEngine *engine,
                              const char *id,
                              const char *name,
                              double reliability);

// Captures a JSON array of `{"s","p","o","credibility"}` statements for
// `source`. Writes the capture report to `out_json` when it is not null.
//
// # Safety
// `engine` comes from this library; string arguments are nul-terminated;
// `out_json` is null or writable.
enum UkgStatus ukg_capture(struct UkgEngine *engine,
                           const char *source,
                           const char *statements_json,
                           char **out_json);

// Runs entity resolution and forward chaining to a fixpoint.
//
// # Safety
// `engine` comes from this library; `out_json` is null or writable.
enum UkgStatus ukg_associate(struct UkgEngine *engine, char **out_json);

// Promotes and demotes facts against the configured threshold.
//
// # Safety
// `engine` comes from this library; `out_json` is null or writable.
enum UkgStatus ukg_establish(struct UkgEngine *engine, char **out_json);

// Registers a hypothesis (`{"id","threshold","patterns":[{"s","p","o"}]}`)
// and tests it. Writes the verdict to `out_json`.
//
// # Safety
// `engine` comes from this library; `hypothesis_json` is a nul-terminated
// string; `out_json` is null or writable.
enum UkgStatus ukg_test_hypothesis(struct UkgEngine *engine,
                                   const char *hypothesis_json,
                                   char **out_json);

// Feeds a verdict back into source reliabilities and re-fuses.
//
// # Safety
// `engine` comes from this library; `verdict_id` is a nul-terminated
// string; `out_json` is null or writable.
enum UkgStatus ukg_propagate(struct UkgEngine *engine, const char *verdict_id, char **out_json);

// Writes the archive text to `out`.
//
// # Safety
// `engine` comes from this library; `out` is writable.
enum UkgStatus ukg_export(struct UkgEngine *engine, char **out);

// Reads a source's current reliability.
//
// # Safety
// `engine` comes from this library; `source` is a nul-terminated string;
// `out` is writable.
enum UkgStatus ukg_source_reliability(struct UkgEngine *engine, const char *source, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* UKG_H */
