//! C ABI over `srdvc`: load a trained checkpoint, extract features, convert
//! an utterance and score the result.
//!
//! Every object crosses the boundary as an opaque handle created by a
//! `*_new`/`*_load`/`*_compute` call and released by the matching `*_free`.
//! Fallible calls return [`SrdvcStatus`] and write their result through an
//! out-pointer; `srdvc_last_error_message` explains a non-zero status.
//! Panics never unwind into the caller.

use std::ffi::{c_char, CStr};
use std::path::PathBuf;

use srdvc::convert::{synthesize_audio, AspectSet, ConversionRequest, Converter, UtteranceInput};
use srdvc::eval::{logf0_pcc, mel_mcd};
use srdvc::features::wav::{read_wav, write_wav};
use srdvc::features::{compute_mel, extract_features, extract_pitch, MelSpectrogram, PitchContour, Waveform};

mod status;

use status::{guard, Fail, FfiResult};
pub use status::{srdvc_last_error_message, SrdvcStatus};

/// Mono audio at the library sample rate.
pub struct SrdvcWaveform(Waveform);

/// Log-mel spectrogram, frames x bands.
pub struct SrdvcMel(MelSpectrogram);

/// Per-frame F0 in Hz with a voicing flag.
pub struct SrdvcPitch(PitchContour);

/// A trained conversion model.
pub struct SrdvcModel(Converter);

fn null(name: &str) -> Fail {
    Fail(SrdvcStatus::NullPointer, format!("{name} is NULL"))
}

unsafe fn borrow<'a, T>(p: *const T, name: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(name))
}

unsafe fn put<T>(out: *mut *mut T, value: T) {
    *out = Box::into_raw(Box::new(value));
}

unsafe fn path_arg(p: *const c_char, name: &str) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(null(name));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(SrdvcStatus::InvalidArgument, format!("{name} is not valid UTF-8")))?;
    Ok(PathBuf::from(s))
}

unsafe fn copy_out(values: &[f64], buf: *mut f64, capacity: usize) -> FfiResult {
    if buf.is_null() {
        return Err(null("buffer"));
    }
    if capacity < values.len() {
        return Err(Fail(
            SrdvcStatus::Shape,
            format!("buffer holds {capacity} values but {} are needed", values.len()),
        ));
    }
    std::ptr::copy_nonoverlapping(values.as_ptr(), buf, values.len());
    Ok(())
}

unsafe fn free<T>(p: *mut T) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn srdvc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

// ---------------------------------------------------------------- waveforms

/// Copies `len` samples into a new waveform.
///
/// # Safety
/// `samples` must point to `len` readable doubles and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn srdvc_waveform_new(
    samples: *const f64,
    len: usize,
    sample_rate: u32,
    out: *mut *mut SrdvcWaveform,
) -> SrdvcStatus {
    guard(|| {
        if samples.is_null() || out.is_null() {
            return Err(null("samples or out"));
        }
        let data = std::slice::from_raw_parts(samples, len).to_vec();
        put(out, SrdvcWaveform(Waveform::new(data, sample_rate)?));
        Ok(())
    })
}

/// Reads a mono WAV file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn srdvc_waveform_read_wav(path: *const c_char, out: *mut *mut SrdvcWaveform) -> SrdvcStatus {
    guard(|| {
        let path = path_arg(path, "path")?;
        if out.is_null() {
            return Err(null("out"));
        }
        put(out, SrdvcWaveform(read_wav(&path)?));
        Ok(())
    })
}

/// Writes a waveform as 16-bit PCM WAV.
///
/// # Safety
/// `wave` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn srdvc_waveform_write_wav(wave: *const SrdvcWaveform, path: *const c_char) -> SrdvcStatus {
    guard(|| {
        let wave = borrow(wave, "wave")?;
        write_wav(&path_arg(path, "path")?, &wave.0)?;
        Ok(())
    })
}

/// Number of samples, or 0 for NULL.
///
/// # Safety
/// `wave` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn srdvc_waveform_len(wave: *const SrdvcWaveform) -> usize {
    wave.as_ref().map_or(0, |w| w.0.len())
}

/// Sample rate in Hz, or 0 for NULL.
///
/// # Safety
/// `wave` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn srdvc_waveform_sample_rate(wave: *const SrdvcWaveform) -> u32 {
    wave.as_ref().map_or(0, |w| w.0.sample_rate())
}

/// Copies the samples into `buf`, which must hold `srdvc_waveform_len` values.
///
/// # Safety
/// `wave` must be a live handle and `buf` must have room for `capacity` doubles.
#[no_mangle]
pub unsafe extern "C" fn srdvc_waveform_copy_samples(wave: *const SrdvcWaveform, buf: *mut f64, capacity: usize) -> SrdvcStatus {
    guard(|| copy_out(borrow(wave, "wave")?.0.samples(), buf, capacity))
}

/// # Safety
/// `wave` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn srdvc_waveform_free(wave: *mut SrdvcWaveform) {
    free(wave)
}

// ---------------------------------------------------------------- features

/// Log-mel spectrogram of a waveform.
///
/// # Safety
/// `wave` must be a live handle and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn srdvc_mel_compute(wave: *const SrdvcWaveform, out: *mut *mut SrdvcMel) -> SrdvcStatus {
    guard(|| {
        let wave = borrow(wave, "wave")?;
        if out.is_null() {
            return Err(null("out"));
        }
        put(out, SrdvcMel(compute_mel(&wave.0)?));
        Ok(())
    })
}

/// Number of frames, or 0 for NULL.
///
/// # Safety
/// `mel` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn srdvc_mel_num_frames(mel: *const SrdvcMel) -> usize {
    mel.as_ref().map_or(0, |m| m.0.num_frames())
}

/// Number of mel bands per frame, or 0 for NULL.
///
/// # Safety
/// `mel` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn srdvc_mel_num_bands(mel: *const SrdvcMel) -> usize {
    mel.as_ref().map_or(0, |m| m.0.frames.ncols())
}

/// Copies the frames row-major (frame by frame) into `buf`.
///
/// # Safety
/// `mel` must be a live handle and `buf` must have room for `capacity` doubles.
#[no_mangle]
pub unsafe extern "C" fn srdvc_mel_copy_frames(mel: *const SrdvcMel, buf: *mut f64, capacity: usize) -> SrdvcStatus {
    guard(|| {
        let frames = &borrow(mel, "mel")?.0.frames;
        let values: Vec<f64> = frames.iter().copied().collect();
        copy_out(&values, buf, capacity)
    })
}

/// # Safety
/// `mel` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn srdvc_mel_free(mel: *mut SrdvcMel) {
    free(mel)
}

/// Frame-synchronous F0 track of a waveform.
///
/// # Safety
/// `wave` must be a live handle and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn srdvc_pitch_extract(wave: *const SrdvcWaveform, out: *mut *mut SrdvcPitch) -> SrdvcStatus {
    guard(|| {
        let wave = borrow(wave, "wave")?;
        if out.is_null() {
            return Err(null("out"));
        }
        put(out, SrdvcPitch(extract_pitch(&wave.0)?));
        Ok(())
    })
}

/// Number of frames, or 0 for NULL.
///
/// # Safety
/// `pitch` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn srdvc_pitch_len(pitch: *const SrdvcPitch) -> usize {
    pitch.as_ref().map_or(0, |p| p.0.len())
}

/// Copies F0 in Hz into `buf`; unvoiced frames read 0.
///
/// # Safety
/// `pitch` must be a live handle and `buf` must have room for `capacity` doubles.
#[no_mangle]
pub unsafe extern "C" fn srdvc_pitch_copy_f0(pitch: *const SrdvcPitch, buf: *mut f64, capacity: usize) -> SrdvcStatus {
    guard(|| {
        let p = &borrow(pitch, "pitch")?.0;
        let values: Vec<f64> = p.f0_hz.iter().zip(&p.voiced).map(|(&f, &v)| if v { f } else { 0.0 }).collect();
        copy_out(&values, buf, capacity)
    })
}

/// # Safety
/// `pitch` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn srdvc_pitch_free(pitch: *mut SrdvcPitch) {
    free(pitch)
}

// ---------------------------------------------------------------- conversion

/// Loads a trained checkpoint. A checkpoint written before the first
/// training step is refused with `SRDVC_STATUS_UNTRAINED`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn srdvc_model_load(path: *const c_char, out: *mut *mut SrdvcModel) -> SrdvcStatus {
    guard(|| {
        let path = path_arg(path, "path")?;
        if out.is_null() {
            return Err(null("out"));
        }
        put(out, SrdvcModel(Converter::from_checkpoint(&path)?));
        Ok(())
    })
}

/// # Safety
/// `model` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn srdvc_model_free(model: *mut SrdvcModel) {
    free(model)
}

/// Converts `source` toward `target` on the comma-separated `aspects`
/// (`timbre`, `pitch`, `rhythm`, or `all` / `none`). `target` may be NULL
/// only when no aspect is selected. The output has the frame count of the
/// rhythm provider.
///
/// # Safety
/// `model` and `source` must be live handles, `target` NULL or live,
/// `aspects` a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn srdvc_convert(
    model: *const SrdvcModel,
    source: *const SrdvcWaveform,
    target: *const SrdvcWaveform,
    aspects: *const c_char,
    out: *mut *mut SrdvcMel,
) -> SrdvcStatus {
    guard(|| {
        let model = borrow(model, "model")?;
        let source = borrow(source, "source")?;
        if aspects.is_null() || out.is_null() {
            return Err(null("aspects or out"));
        }
        let aspects: AspectSet = CStr::from_ptr(aspects)
            .to_str()
            .map_err(|_| Fail(SrdvcStatus::InvalidArgument, "aspects is not valid UTF-8".into()))?
            .parse()?;
        let src = extract_features(&source.0)?;
        let tgt = match target.as_ref() {
            Some(t) => Some(extract_features(&t.0)?),
            None => None,
        };
        let req = ConversionRequest {
            source: UtteranceInput::from_features(&src),
            target: tgt.as_ref().map(UtteranceInput::from_features),
            aspects,
        };
        put(out, SrdvcMel(model.0.convert(&req)?.mel));
        Ok(())
    })
}

/// Griffin-Lim resynthesis of a log-mel spectrogram.
///
/// # Safety
/// `mel` must be a live handle and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn srdvc_synthesize(mel: *const SrdvcMel, iterations: usize, out: *mut *mut SrdvcWaveform) -> SrdvcStatus {
    guard(|| {
        let mel = borrow(mel, "mel")?;
        if out.is_null() {
            return Err(null("out"));
        }
        put(out, SrdvcWaveform(synthesize_audio(&mel.0, iterations)));
        Ok(())
    })
}

// ---------------------------------------------------------------- metrics

/// Mel-cepstral distortion in dB after DTW alignment.
///
/// # Safety
/// `reference` and `hypothesis` must be live handles and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn srdvc_mcd(reference: *const SrdvcMel, hypothesis: *const SrdvcMel, out: *mut f64) -> SrdvcStatus {
    guard(|| {
        let (r, h) = (borrow(reference, "reference")?, borrow(hypothesis, "hypothesis")?);
        if out.is_null() {
            return Err(null("out"));
        }
        *out = mel_mcd(&r.0, &h.0)?;
        Ok(())
    })
}

/// Pearson correlation of log-F0 on jointly voiced, DTW-aligned frames.
/// Returns `SRDVC_STATUS_UNDEFINED` (and leaves `out` untouched) when fewer
/// than two such frames exist or either side is constant.
///
/// # Safety
/// `source` and `converted` must be live handles and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn srdvc_logf0_pcc(source: *const SrdvcPitch, converted: *const SrdvcPitch, out: *mut f64) -> SrdvcStatus {
    guard(|| {
        let (a, b) = (borrow(source, "source")?, borrow(converted, "converted")?);
        if out.is_null() {
            return Err(null("out"));
        }
        match logf0_pcc(&a.0, &b.0) {
            Some(r) => {
                *out = r;
                Ok(())
            }
            None => Err(Fail(SrdvcStatus::Undefined, "too few jointly voiced frames for a correlation".into())),
        }
    })
}
