use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use srdvc::Error;

/// Result code of every fallible call. `SRDVC_STATUS_OK` is zero; on any
/// other value `srdvc_last_error_message` describes the failure.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SrdvcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Shape = 3,
    Audio = 4,
    Io = 5,
    Format = 6,
    Untrained = 7,
    NonFinite = 8,
    /// The metric has no value for these inputs (e.g. too few voiced frames).
    Undefined = 9,
    Panic = 10,
    Other = 11,
}

impl From<&Error> for SrdvcStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::SampleRate { .. } | Error::TooShort { .. } | Error::Audio { .. } | Error::Wav(_) => Self::Audio,
            Error::Shape(_) => Self::Shape,
            Error::InvalidArgument(_) | Error::Config(_) => Self::InvalidArgument,
            Error::Untrained(_) => Self::Untrained,
            Error::NonFinite { .. } => Self::NonFinite,
            Error::Format { .. } | Error::Json(_) | Error::Csv(_) => Self::Format,
            Error::Io(_) => Self::Io,
            _ => Self::Other,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

pub(crate) fn set_last_error(msg: impl Into<String>) {
    let msg = CString::new(msg.into().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

fn clear_last_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

/// Failure raised inside an FFI body before it reaches the library.
pub(crate) struct Fail(pub SrdvcStatus, pub String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(SrdvcStatus::from(&e), e.to_string())
    }
}

pub(crate) type FfiResult = Result<(), Fail>;

/// Runs `body`, records any error or panic for `srdvc_last_error_message`
/// and converts the outcome to a status code.
pub(crate) fn guard(body: impl FnOnce() -> FfiResult) -> SrdvcStatus {
    clear_last_error();
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => SrdvcStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("internal panic: {msg}"));
            SrdvcStatus::Panic
        }
    }
}

/// Message for the most recent failure on the calling thread, or NULL if the
/// last call succeeded. The pointer stays valid until the next call into
/// this library on the same thread.
#[no_mangle]
pub extern "C" fn srdvc_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |s| s.as_ptr()))
}
