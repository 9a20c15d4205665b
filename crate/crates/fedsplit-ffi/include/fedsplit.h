#ifndef FEDSPLIT_H
#define FEDSPLIT_H

/* Generated by cbindgen from crates/fedsplit-ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Status codes returned by every fallible function.
 */
typedef enum FsStatus {
  FS_OK = 0,
  /*
   A required pointer argument was null.
   */
  FS_ERR_NULL = 1,
  /*
   A string argument was not valid UTF-8.
   */
  FS_ERR_UTF8 = 2,
  /*
   A configuration or argument was rejected before running.
   */
  FS_ERR_INVALID = 3,
  /*
   A protocol invariant was violated while running.
   */
  FS_ERR_INVARIANT = 4,
  /*
   A caller-provided buffer is too small.
   */
  FS_ERR_BUFFER = 5,
  /*
   Malformed wire message.
   */
  FS_ERR_CODEC = 6,
  /*
   A Rust panic was caught at the boundary.
   */
  FS_ERR_PANIC = 7,
} FsStatus;

/*
 A fixed-interval stochastic quantizer.
 */
typedef struct FsQuantizer FsQuantizer;

/*
 The result of one training run.
 */
typedef struct FsRun FsRun;

/*
 A validated configuration.
 */
typedef struct FsSetup FsSetup;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Copies the last error message of this thread into `buf` as a
 NUL-terminated string, truncating to `len - 1` bytes. Returns the full
 message length in bytes, excluding the terminator.

 # Safety
 `buf` must be null or point to `len` writable bytes.
 */
size_t fs_last_error(char *buf, size_t len);

/*
 Parses and validates a JSON configuration.

 # Safety
 `json` must be a NUL-terminated string and `out` a valid pointer.
 */
enum FsStatus fs_setup_from_json(const char *json, struct FsSetup **out);

/*
 # Safety
 `setup` must be null or a handle from [`fs_setup_from_json`].
 */
void fs_setup_free(struct FsSetup *setup);

/*
 Model dimension `d`, or 0 for a null handle.

 # Safety
 `setup` must be null or a live handle.
 */
size_t fs_setup_dim(const struct FsSetup *setup);

/*
 Writes `w*` into `buf`, which must hold `len >= d` doubles.

 # Safety
 `setup` must be a live handle and `buf` point to `len` doubles.
 */
enum FsStatus fs_setup_optimum(const struct FsSetup *setup, double *buf, size_t len);

/*
 Trains with the configured mode under `seed`.

 # Safety
 `setup` must be a live handle and `out` a valid pointer.
 */
enum FsStatus fs_run(const struct FsSetup *setup, uint64_t seed, struct FsRun **out);

/*
 # Safety
 `run` must be null or a handle from [`fs_run`].
 */
void fs_run_free(struct FsRun *run);

/*
 Number of learning rounds recorded, or 0 for a null handle.

 # Safety
 `run` must be null or a live handle.
 */
size_t fs_run_rounds(const struct FsRun *run);

/*
 Total uploads across all rounds.

 # Safety
 `run` must be null or a live handle.
 */
uint64_t fs_run_uploads(const struct FsRun *run);

/*
 Optimality gap after learning round `t` (1-based).

 # Safety
 `run` must be a live handle and `gap` a valid pointer.
 */
enum FsStatus fs_run_gap(const struct FsRun *run, size_t t, double *gap);

/*
 Writes the final global model into `buf`.

 # Safety
 `run` must be a live handle and `buf` point to `len` doubles.
 */
enum FsStatus fs_run_final_model(const struct FsRun *run, double *buf, size_t len);

/*
 Quantizer with interval `[lo, hi]` on each of `dim` coordinates and
 `levels` knobs.

 # Safety
 `out` must be a valid pointer.
 */
enum FsStatus fs_quantizer_new(size_t dim,
                               double lo,
                               double hi,
                               size_t levels,
                               struct FsQuantizer **out);

/*
 # Safety
 `q` must be null or a handle from [`fs_quantizer_new`].
 */
void fs_quantizer_free(struct FsQuantizer *q);

/*
 Bytes needed by [`fs_quantize_encode`] for this quantizer.

 # Safety
 `q` must be null or a live handle.
 */
size_t fs_quantizer_message_len(const struct FsQuantizer *q);

/*
 Quantizes `w` with randomness from `seed` and writes the wire message.
 `written` receives the message length.

 # Safety
 `q` must be a live handle, `w` point to `dim` doubles, `buf` to `cap`
 writable bytes and `written` be a valid pointer.
 */
enum FsStatus fs_quantize_encode(const struct FsQuantizer *q,
                                 const double *w,
                                 size_t dim,
                                 uint64_t seed,
                                 uint8_t *buf,
                                 size_t cap,
                                 size_t *written);

/*
 Decodes a wire message into knob values.

 # Safety
 `q` must be a live handle, `msg` point to `len` bytes and `values` to
 `dim` writable doubles.
 */
enum FsStatus fs_decode(const struct FsQuantizer *q,
                        const uint8_t *msg,
                        size_t len,
                        double *values,
                        size_t dim);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FEDSPLIT_H */
