#ifndef MATLIFT_H
#define MATLIFT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

// Result of every fallible call.
typedef enum MlStatus {
  ML_STATUS_OK = 0,
  ML_STATUS_NULL_POINTER = 1,
  ML_STATUS_INVALID_ARGUMENT = 2,
  ML_STATUS_BACKGROUND_CLICK = 3,
  ML_STATUS_UNKNOWN_VIEW = 4,
  ML_STATUS_UNSELECTABLE = 5,
  ML_STATUS_IO = 6,
  ML_STATUS_PARSE = 7,
  ML_STATUS_BUFFER_TOO_SMALL = 8,
  ML_STATUS_INTERNAL = 99,
} MlStatus;

// Lifting views, geometry and a synthetic similarity oracle.
typedef struct MlScene MlScene;

// A selection: the lifted similarity cloud and its index.
typedef struct MlSession MlSession;

// Selection counters.
typedef struct MlStats {
  uint64_t oracle_calls;
  uint64_t index_builds;
  uint64_t points;
} MlStats;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread; empty if none. The
// pointer stays valid until the next failing call on the same thread.
const char *ml_last_error(void);

// Library version as a static NUL-terminated string.
const char *ml_version(void);

// Builds a scene from `asset` (`"demo"` or an OBJ path) with `views`
// Fibonacci lifting views of `resolution`² pixels. The synthetic oracle adds
// per-pixel noise of std-dev `pixel_sigma` seeded by `noise_seed`; 0 gives
// exact maps.
//
// # Safety
// `asset` must be a NUL-terminated string and `out` a valid pointer.
enum MlStatus ml_scene_new(const char *asset,
                           uint32_t views,
                           uint32_t resolution,
                           double pixel_sigma,
                           uint64_t noise_seed,
                           struct MlScene **out);

// Releases a scene; null is ignored. Sessions created from it stay valid.
//
// # Safety
// `scene` must come from [`ml_scene_new`] and not be used afterwards.
void ml_scene_free(struct MlScene *scene);

// Number of lifting views; 0 for null.
//
// # Safety
// `scene` must be null or a live scene handle.
uint32_t ml_scene_view_count(const struct MlScene *scene);

// Oracle queries made through this scene so far; 0 for null.
//
// # Safety
// `scene` must be null or a live scene handle.
uint64_t ml_scene_oracle_calls(const struct MlScene *scene);

// Selects from a positive click at pixel (`x`, `y`) of lifting view `view`.
//
// # Safety
// `scene` must be a live scene handle and `out` a valid pointer.
enum MlStatus ml_select(const struct MlScene *scene,
                        uint32_t view,
                        uint32_t x,
                        uint32_t y,
                        struct MlSession **out);

// Releases a session; null is ignored.
//
// # Safety
// `session` must come from [`ml_select`] and not be used afterwards.
void ml_session_free(struct MlSession *session);

// Changes the selection threshold in (0, 1); no oracle call or index rebuild.
//
// # Safety
// `session` must be a live session handle.
enum MlStatus ml_session_set_threshold(struct MlSession *session, float threshold);

// Changes the number of voting neighbors (odd, at least 1).
//
// # Safety
// `session` must be a live session handle.
enum MlStatus ml_session_set_k(struct MlSession *session, uint32_t k);

// Counters of the session.
//
// # Safety
// `session` must be a live session handle and `out` a valid pointer.
enum MlStatus ml_session_stats(const struct MlSession *session, struct MlStats *out);

// Renders the selection from an orbit camera about the asset (degrees) at
// `width` × `height`. Writes one byte per pixel to `mask` (1 selected, 0
// not) and, when `heat` is not null, the mean neighbor similarity per pixel.
// Both buffers must hold `len` ≥ `width` · `height` elements.
//
// # Safety
// `session` must be a live session handle; `mask` and non-null `heat` must
// point to at least `len` writable elements.
enum MlStatus ml_session_reconstruct(const struct MlSession *session,
                                     double yaw_deg,
                                     double pitch_deg,
                                     uint32_t width,
                                     uint32_t height,
                                     uint8_t *mask,
                                     float *heat,
                                     uintptr_t len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MATLIFT_H */
