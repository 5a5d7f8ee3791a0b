//! C ABI for checkpoint loading and tiled inference.
//!
//! The surface is deliberately small: load a checkpoint into an opaque
//! handle, query its attribute layout, run inference into a caller-owned
//! buffer, free the handle. Every fallible call returns a [`PxfrStatus`]
//! and records a message retrievable with [`pxfr_last_error`]. The header
//! `include/pxfr.h` is generated by cbindgen at build time.
//!
//! Buffers are planar float32: a guidance image of height `h` and width
//! `w` is `3 * h * w` values in [0,1] ordered channel by channel, row
//! major within a channel. Predictions use the same layout with the
//! channel count from [`pxfr_checkpoint_attribute_dims`].

use libc::{c_char, size_t};
use pxfr_core::augment::AttributeKind;
use pxfr_core::eval::{infer, TilePlan};
use pxfr_core::tensor::{Shape, Tensor};
use pxfr_core::trainer::Checkpoint;
use pxfr_core::PxfrError;
use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

/// Result of every fallible API call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PxfrStatus {
    Ok = 0,
    /// A pointer was null or an argument out of range.
    InvalidArgument = 1,
    Io = 2,
    /// A file exists but cannot be decoded.
    Format = 3,
    /// Buffer sizes do not match the declared image dimensions.
    Shape = 4,
    /// Inference produced a non-finite value.
    Numeric = 5,
    /// An unexpected internal failure; the library state is unchanged.
    Internal = 6,
}

/// Attribute kind a checkpoint predicts.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PxfrAttributeKind {
    Normals = 0,
    Segmentation = 1,
    Color = 2,
    Scalar = 3,
}

/// Opaque trained-model handle.
pub struct PxfrCheckpoint {
    checkpoint: Checkpoint,
    plan: TilePlan,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: String) {
    let message = CString::new(message.replace('\0', " "))
        .unwrap_or_else(|_| CString::new("invalid error text").expect("static text"));
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(message));
}

fn status_of(error: &PxfrError) -> PxfrStatus {
    match error {
        PxfrError::InvalidInput(_) => PxfrStatus::InvalidArgument,
        PxfrError::Io { .. } => PxfrStatus::Io,
        PxfrError::Format(_) => PxfrStatus::Format,
        PxfrError::ShapeMismatch(_) => PxfrStatus::Shape,
        PxfrError::NonFinite(_) => PxfrStatus::Numeric,
    }
}

fn fail(error: PxfrError) -> PxfrStatus {
    let status = status_of(&error);
    set_error(error.to_string());
    status
}

/// Runs `body` with panics converted to [`PxfrStatus::Internal`].
fn guarded(body: impl FnOnce() -> PxfrStatus) -> PxfrStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(status) => status,
        Err(_) => {
            set_error("internal panic".into());
            PxfrStatus::Internal
        }
    }
}

/// Message for the most recent failure on this thread, or null if the
/// last call succeeded. The pointer stays valid until the next failing
/// call on the same thread; do not free it.
#[no_mangle]
pub extern "C" fn pxfr_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| {
        slot.borrow()
            .as_ref()
            .map_or(std::ptr::null(), |message| message.as_ptr())
    })
}

/// Loads a checkpoint file into a new handle stored in `*out`. On any
/// failure `*out` is left untouched.
///
/// # Safety
/// `path` must be a valid NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pxfr_checkpoint_load(
    path: *const c_char,
    out: *mut *mut PxfrCheckpoint,
) -> PxfrStatus {
    guarded(|| {
        if path.is_null() || out.is_null() {
            set_error("pxfr_checkpoint_load: null pointer".into());
            return PxfrStatus::InvalidArgument;
        }
        let path = match unsafe { CStr::from_ptr(path) }.to_str() {
            Ok(path) => path,
            Err(_) => {
                set_error("pxfr_checkpoint_load: path is not valid UTF-8".into());
                return PxfrStatus::InvalidArgument;
            }
        };
        let checkpoint = match Checkpoint::load(std::path::Path::new(path)) {
            Ok(checkpoint) => checkpoint,
            Err(e) => return fail(e),
        };
        let plan = TilePlan::for_model(&checkpoint.model);
        let handle = Box::new(PxfrCheckpoint { checkpoint, plan });
        unsafe { *out = Box::into_raw(handle) };
        PxfrStatus::Ok
    })
}

/// Frees a handle from [`pxfr_checkpoint_load`]; null is a no-op.
///
/// # Safety
/// `handle` must be a pointer returned by this library, freed only once.
#[no_mangle]
pub unsafe extern "C" fn pxfr_checkpoint_free(handle: *mut PxfrCheckpoint) {
    if !handle.is_null() {
        drop(unsafe { Box::from_raw(handle) });
    }
}

/// Attribute kind of the checkpoint; `Normals` if `handle` is null.
///
/// # Safety
/// `handle` must be a live pointer from [`pxfr_checkpoint_load`] or null.
#[no_mangle]
pub unsafe extern "C" fn pxfr_checkpoint_kind(handle: *const PxfrCheckpoint) -> PxfrAttributeKind {
    if handle.is_null() {
        return PxfrAttributeKind::Normals;
    }
    match unsafe { &*handle }.checkpoint.kind {
        AttributeKind::Normals => PxfrAttributeKind::Normals,
        AttributeKind::Segmentation => PxfrAttributeKind::Segmentation,
        AttributeKind::Color => PxfrAttributeKind::Color,
        AttributeKind::Scalar => PxfrAttributeKind::Scalar,
    }
}

/// Channels per pixel in prediction buffers; 0 if `handle` is null.
///
/// # Safety
/// `handle` must be a live pointer from [`pxfr_checkpoint_load`] or null.
#[no_mangle]
pub unsafe extern "C" fn pxfr_checkpoint_attribute_dims(handle: *const PxfrCheckpoint) -> u32 {
    if handle.is_null() {
        return 0;
    }
    unsafe { &*handle }.checkpoint.kind.dims() as u32
}

/// Predicts the attribute map for one guidance image.
///
/// `guidance` holds `3 * height * width` planar floats in [0,1]; `out`
/// receives `dims * height * width` floats where `dims` comes from
/// [`pxfr_checkpoint_attribute_dims`]. `guidance_len` and `out_len` are
/// element counts and must match exactly.
///
/// # Safety
/// `handle` must be live, and both buffers valid for their stated lengths.
#[no_mangle]
pub unsafe extern "C" fn pxfr_infer(
    handle: *const PxfrCheckpoint,
    guidance: *const f32,
    height: u32,
    width: u32,
    guidance_len: size_t,
    out: *mut f32,
    out_len: size_t,
) -> PxfrStatus {
    guarded(|| {
        if handle.is_null() || guidance.is_null() || out.is_null() {
            set_error("pxfr_infer: null pointer".into());
            return PxfrStatus::InvalidArgument;
        }
        let handle = unsafe { &*handle };
        let (h, w) = (height as usize, width as usize);
        if guidance_len != 3 * h * w {
            set_error(format!(
                "pxfr_infer: guidance_len {guidance_len} does not match 3*{h}*{w}"
            ));
            return PxfrStatus::Shape;
        }
        let dims = handle.checkpoint.kind.dims();
        if out_len != dims * h * w {
            set_error(format!(
                "pxfr_infer: out_len {out_len} does not match {dims}*{h}*{w}"
            ));
            return PxfrStatus::Shape;
        }
        let data = unsafe { std::slice::from_raw_parts(guidance, guidance_len) }.to_vec();
        let tensor = match Tensor::from_vec(Shape::new(1, 3, h, w), data) {
            Ok(tensor) => tensor,
            Err(e) => return fail(e),
        };
        let prediction = match infer(&handle.checkpoint, &tensor, &handle.plan) {
            Ok(prediction) => prediction,
            Err(e) => return fail(e),
        };
        let result = prediction.map.data();
        unsafe { std::slice::from_raw_parts_mut(out, out_len) }.copy_from_slice(&result);
        PxfrStatus::Ok
    })
}
