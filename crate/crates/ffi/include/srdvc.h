#ifndef SRDVC_H
#define SRDVC_H

#pragma once

/* Generated by cbindgen from crates/ffi/src. Do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call. `SRDVC_STATUS_OK` is zero; on any
 * other value `srdvc_last_error_message` describes the failure.
 */
typedef enum SrdvcStatus {
  SRDVC_STATUS_OK = 0,
  SRDVC_STATUS_NULL_POINTER = 1,
  SRDVC_STATUS_INVALID_ARGUMENT = 2,
  SRDVC_STATUS_SHAPE = 3,
  SRDVC_STATUS_AUDIO = 4,
  SRDVC_STATUS_IO = 5,
  SRDVC_STATUS_FORMAT = 6,
  SRDVC_STATUS_UNTRAINED = 7,
  SRDVC_STATUS_NON_FINITE = 8,
  /**
   * The metric has no value for these inputs (e.g. too few voiced frames).
   */
  SRDVC_STATUS_UNDEFINED = 9,
  SRDVC_STATUS_PANIC = 10,
  SRDVC_STATUS_OTHER = 11,
} SrdvcStatus;

/**
 * Log-mel spectrogram, frames x bands.
 */
typedef struct SrdvcMel SrdvcMel;

/**
 * A trained conversion model.
 */
typedef struct SrdvcModel SrdvcModel;

/**
 * Per-frame F0 in Hz with a voicing flag.
 */
typedef struct SrdvcPitch SrdvcPitch;

/**
 * Mono audio at the library sample rate.
 */
typedef struct SrdvcWaveform SrdvcWaveform;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *srdvc_version(void);

/**
 * Copies `len` samples into a new waveform.
 *
 * # Safety
 * `samples` must point to `len` readable doubles and `out` must be writable.
 */
enum SrdvcStatus srdvc_waveform_new(const double *samples,
                                    size_t len,
                                    uint32_t sample_rate,
                                    struct SrdvcWaveform **out);

/**
 * Reads a mono WAV file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` must be writable.
 */
enum SrdvcStatus srdvc_waveform_read_wav(const char *path, struct SrdvcWaveform **out);

/**
 * Writes a waveform as 16-bit PCM WAV.
 *
 * # Safety
 * `wave` must be a live handle and `path` a NUL-terminated string.
 */
enum SrdvcStatus srdvc_waveform_write_wav(const struct SrdvcWaveform *wave, const char *path);

/**
 * Number of samples, or 0 for NULL.
 *
 * # Safety
 * `wave` must be NULL or a live handle.
 */
size_t srdvc_waveform_len(const struct SrdvcWaveform *wave);

/**
 * Sample rate in Hz, or 0 for NULL.
 *
 * # Safety
 * `wave` must be NULL or a live handle.
 */
uint32_t srdvc_waveform_sample_rate(const struct SrdvcWaveform *wave);

/**
 * Copies the samples into `buf`, which must hold `srdvc_waveform_len` values.
 *
 * # Safety
 * `wave` must be a live handle and `buf` must have room for `capacity` doubles.
 */
enum SrdvcStatus srdvc_waveform_copy_samples(const struct SrdvcWaveform *wave,
                                             double *buf,
                                             size_t capacity);

/**
 * # Safety
 * `wave` must be NULL or a handle not yet freed.
 */
void srdvc_waveform_free(struct SrdvcWaveform *wave);

/**
 * Log-mel spectrogram of a waveform.
 *
 * # Safety
 * `wave` must be a live handle and `out` must be writable.
 */
enum SrdvcStatus srdvc_mel_compute(const struct SrdvcWaveform *wave, struct SrdvcMel **out);

/**
 * Number of frames, or 0 for NULL.
 *
 * # Safety
 * `mel` must be NULL or a live handle.
 */
size_t srdvc_mel_num_frames(const struct SrdvcMel *mel);

/**
 * Number of mel bands per frame, or 0 for NULL.
 *
 * # Safety
 * `mel` must be NULL or a live handle.
 */
size_t srdvc_mel_num_bands(const struct SrdvcMel *mel);

/**
 * Copies the frames row-major (frame by frame) into `buf`.
 *
 * # Safety
 * `mel` must be a live handle and `buf` must have room for `capacity` doubles.
 */
enum SrdvcStatus srdvc_mel_copy_frames(const struct SrdvcMel *mel, double *buf, size_t capacity);

/**
 * # Safety
 * `mel` must be NULL or a handle not yet freed.
 */
void srdvc_mel_free(struct SrdvcMel *mel);

/**
 * Frame-synchronous F0 track of a waveform.
 *
 * # Safety
 * `wave` must be a live handle and `out` must be writable.
 */
enum SrdvcStatus srdvc_pitch_extract(const struct SrdvcWaveform *wave, struct SrdvcPitch **out);

/**
 * Number of frames, or 0 for NULL.
 *
 * # Safety
 * `pitch` must be NULL or a live handle.
 */
size_t srdvc_pitch_len(const struct SrdvcPitch *pitch);

/**
 * Copies F0 in Hz into `buf`; unvoiced frames read 0.
 *
 * # Safety
 * `pitch` must be a live handle and `buf` must have room for `capacity` doubles.
 */
enum SrdvcStatus srdvc_pitch_copy_f0(const struct SrdvcPitch *pitch, double *buf, size_t capacity);

/**
 * # Safety
 * `pitch` must be NULL or a handle not yet freed.
 */
void srdvc_pitch_free(struct SrdvcPitch *pitch);

/**
 * Loads a trained checkpoint. A checkpoint written before the first
 * training step is refused with `SRDVC_STATUS_UNTRAINED`.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` must be writable.
 */
enum SrdvcStatus srdvc_model_load(const char *path, struct SrdvcModel **out);

/**
 * # Safety
 * `model` must be NULL or a handle not yet freed.
 */
void srdvc_model_free(struct SrdvcModel *model);

/**
 * Converts `source` toward `target` on the comma-separated `aspects`
 * (`timbre`, `pitch`, `rhythm`, or `all` / `none`). `target` may be NULL
 * only when no aspect is selected. The output has the frame count of the
 * rhythm provider.
 *
 * # Safety
 * `model` and `source` must be live handles, `target` NULL or live,
 * `aspects` a NUL-terminated string and `out` writable.
 */
enum SrdvcStatus srdvc_convert(const struct SrdvcModel *model,
                               const struct SrdvcWaveform *source,
                               const struct SrdvcWaveform *target,
                               const char *aspects,
                               struct SrdvcMel **out);

/**
 * Griffin-Lim resynthesis of a log-mel spectrogram.
 *
 * # Safety
 * `mel` must be a live handle and `out` must be writable.
 */
enum SrdvcStatus srdvc_synthesize(const struct SrdvcMel *mel,
                                  size_t iterations,
                                  struct SrdvcWaveform **out);

/**
 * Mel-cepstral distortion in dB after DTW alignment.
 *
 * # Safety
 * `reference` and `hypothesis` must be live handles and `out` writable.
 */
enum SrdvcStatus srdvc_mcd(const struct SrdvcMel *reference,
                           const struct SrdvcMel *hypothesis,
                           double *out);

/**
 * Pearson correlation of log-F0 on jointly voiced, DTW-aligned frames.
 * Returns `SRDVC_STATUS_UNDEFINED` (and leaves `out` untouched) when fewer
 * than two such frames exist or either side is constant.
 *
 * # Safety
 * `source` and `converted` must be live handles and `out` writable.
 */
enum SrdvcStatus srdvc_logf0_pcc(const struct SrdvcPitch *source,
                                 const struct SrdvcPitch *converted,
                                 double *out);

/**
 * Message for the most recent failure on the calling thread, or NULL if the
 * last call succeeded. The pointer stays valid until the next call into
 * this library on the same thread.
 */
const char *srdvc_last_error_message(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SRDVC_H */
